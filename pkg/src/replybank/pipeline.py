"""End-to-end pipeline: ingest, candidate pairs, scoring, clustering,
bank construction, example extraction, training, evaluation.

Each stage writes its artifact into the workdir and is skipped on rerun
when the config hash matches the recorded manifest and the artifact
checksums still agree, so interrupted runs resume where they stopped and
a rerun with an unchanged config is a no-op.  Every artifact is written
byte-deterministically, which makes the manifest itself a determinism
check: identical config and corpus give an identical manifest.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import bank as bank_mod
from . import classifier as clf
from . import clustering, corpus, encoders

logger = logging.getLogger(__name__)

STAGES = ("ingest", "candidates", "score", "cluster", "bank", "extract", "train", "eval")


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class PipelineConfig:
    encoders: list[str] = field(default_factory=lambda: ["tfidf"])
    knn_k: int = 10
    merge_threshold: float = 0.25
    max_turns: int = 6
    max_tokens: int = 304
    smoothing: float = 0.1
    epochs: int = 120
    learning_rate: float = 0.5
    batch_size: int = 64
    momentum: float = 0.0
    seed: int = 0
    val_fraction: float = 0.2
    opt_out: str | float = "mean"
    feature_mode: str = "tfidf"
    # optional external artifacts
    scores_file: str | None = None
    decision_log: str | None = None

    @classmethod
    def from_file(cls, path) -> "PipelineConfig":
        with open(path, encoding="utf-8") as fh:
            payload = json.load(fh)
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(payload) - known
        if unknown:
            raise corpus.ValidationError(f"unknown config keys: {sorted(unknown)}")
        return cls(**payload)

    def canonical_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode("utf-8")).hexdigest()


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _dump_json(payload, path: Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=1)
        fh.write("\n")


ARTIFACTS = {
    "ingest": ["responses.tsv", "corpus_meta.json"],
    "candidates": ["pairs.tsv"],
    "score": ["scores.tsv"],
    "cluster": ["clusters.json"],
    "bank": ["bank.json"],
    "extract": ["examples.bin", "train.bin", "val.bin", "extract_meta.json"],
    "train": ["model.ckpt", "model.ckpt.vocab.json"],
    "eval": ["eval.json", "curve.csv"],
}


@dataclass
class PipelineResult:
    workdir: Path
    manifest: dict
    stages_run: list[str]
    stages_cached: list[str]


def split_examples(examples, val_fraction: float, seed: int):
    """Deterministic shuffled train/validation split."""
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(examples))
    n_val = int(round(len(examples) * val_fraction))
    val_idx = set(int(i) for i in order[:n_val])
    train = [ex for i, ex in enumerate(examples) if i not in val_idx]
    val = [ex for i, ex in enumerate(examples) if i in val_idx]
    return train, val


def read_pairs_tsv(path) -> list[tuple[int, int]]:
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 2:
                raise corpus.ValidationError(f"{path}: line {line_no}: expected idA, idB")
            pairs.append((int(parts[0]), int(parts[1])))
    return pairs


def write_pairs_tsv(pairs, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for a, b in pairs:
            fh.write(f"{a}\t{b}\n")


def run_pipeline(corpus_path, config: PipelineConfig, workdir) -> PipelineResult:
    corpus_path = Path(corpus_path)
    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    manifest_path = workdir / "manifest.json"
    config_hash = config.config_hash()

    previous: dict = {}
    if manifest_path.exists():
        with open(manifest_path, encoding="utf-8") as fh:
            previous = json.load(fh)
    fresh = previous.get("configHash") == config_hash
    recorded = previous.get("artifacts", {}) if fresh else {}

    manifest = {"configHash": config_hash, "artifacts": {}}
    stages_run: list[str] = []
    stages_cached: list[str] = []

    def stage_fresh(stage: str) -> bool:
        for name in ARTIFACTS[stage]:
            path = workdir / name
            if not path.exists() or recorded.get(name) != _sha256(path):
                return False
        return True

    def run_stage(stage: str, fn) -> None:
        if stage_fresh(stage):
            stages_cached.append(stage)
            logger.info("stage %s: cached", stage)
        else:
            logger.info("stage %s: running", stage)
            try:
                fn()
            except StageError:
                raise
            except Exception as exc:
                raise StageError(stage, exc) from exc
            stages_run.append(stage)
        for name in ARTIFACTS[stage]:
            manifest["artifacts"][name] = _sha256(workdir / name)
        # Checkpoint the manifest after each stage so an interrupted run
        # resumes from the last completed stage.
        _dump_json(manifest, manifest_path)
        recorded.update({name: manifest["artifacts"][name] for name in ARTIFACTS[stage]})

    def ingest():
        conversations = corpus.load_conversations(corpus_path)
        records = corpus.build_frequent_set(conversations)
        corpus.write_responses_tsv(records, workdir / "responses.tsv")
        stats = corpus.corpus_stats(conversations)
        _dump_json(
            {
                "numConversations": len(conversations),
                "totalDoctorTurns": corpus.count_doctor_turns(conversations),
                "numFrequentResponses": len(records),
                "meanUtterances": stats.mean_utterances,
                "sdUtterances": stats.sd_utterances,
                "meanWordsPerUtterance": stats.mean_words_per_utterance,
                "sdWords": stats.sd_words,
            },
            workdir / "corpus_meta.json",
        )

    def candidates():
        records = corpus.read_responses_tsv(workdir / "responses.tsv")
        encs = encoders.parse_encoder_spec(",".join(config.encoders), records)
        pairs = encoders.generate_candidate_pairs(records, encs, config.knn_k)
        write_pairs_tsv(pairs, workdir / "pairs.tsv")

    def score():
        pairs = read_pairs_tsv(workdir / "pairs.tsv")
        if config.scores_file:
            rows = clustering.read_scores_tsv(config.scores_file)
            scores = clustering.load_scores(pairs, rows, source=str(config.scores_file))
            clustering.write_scores_tsv(scores, workdir / "scores.tsv")
        else:
            records = corpus.read_responses_tsv(workdir / "responses.tsv")
            scores = clustering.jaccard_scores(pairs, records)
            clustering.write_scores_tsv(scores, workdir / "scores.tsv")

    def cluster():
        records = corpus.read_responses_tsv(workdir / "responses.tsv")
        rows = clustering.read_scores_tsv(workdir / "scores.tsv")
        pairs = read_pairs_tsv(workdir / "pairs.tsv")
        scores = clustering.load_scores(pairs, rows, source="scores.tsv")
        matrix = clustering.build_distance_matrix(len(records), scores)
        clusters = clustering.agglomerate(matrix, config.merge_threshold, records)
        clustering.write_clusters_json(clusters, workdir / "clusters.json")

    def build_bank():
        records = corpus.read_responses_tsv(workdir / "responses.tsv")
        clusters = clustering.read_clusters_json(workdir / "clusters.json")
        if config.decision_log:
            decisions = bank_mod.read_decision_log(config.decision_log)
            result = bank_mod.replay_decisions(clusters, records, decisions)
        else:
            result = bank_mod.auto_bank(clusters, records)
        bank_mod.save_bank(result, workdir / "bank.json")

    def extract():
        conversations = corpus.load_conversations(corpus_path)
        records = corpus.read_responses_tsv(workdir / "responses.tsv")
        the_bank = bank_mod.load_bank(workdir / "bank.json")
        result = bank_mod.extract_labeled_examples(
            conversations, the_bank, records, config.max_turns, config.max_tokens
        )
        bank_mod.write_examples(result.examples, workdir / "examples.bin")
        train_ex, val_ex = split_examples(result.examples, config.val_fraction, config.seed)
        bank_mod.write_examples(train_ex, workdir / "train.bin")
        bank_mod.write_examples(val_ex, workdir / "val.bin")
        _dump_json(
            {
                "numExamples": len(result.examples),
                "numTrain": len(train_ex),
                "numVal": len(val_ex),
                "labeledFraction": result.labeled_fraction,
                "totalDoctorTurns": result.total_doctor_turns,
            },
            workdir / "extract_meta.json",
        )

    def train():
        examples = bank_mod.read_examples(workdir / "train.bin")
        the_bank = bank_mod.load_bank(workdir / "bank.json")
        train_config = clf.TrainConfig(
            batch_size=config.batch_size,
            learning_rate=config.learning_rate,
            epochs=config.epochs,
            seed=config.seed,
            smoothing=config.smoothing,
            momentum=config.momentum,
        )
        model, extractor, _ = clf.fit_and_train(
            examples,
            num_classes=len(the_bank.classes),
            config=train_config,
            bank_version=the_bank.version,
            mode=config.feature_mode,
        )
        val_ex = bank_mod.read_examples(workdir / "val.bin")
        if val_ex:
            features = extractor.transform_batch([ex.context_tokens for ex in val_ex])
            model.opt_out_threshold = clf.calibrate_opt_out(model, features, config.opt_out)
        clf.save_model(model, extractor, workdir / "model.ckpt")

    def evaluate():
        model, extractor = clf.load_model(workdir / "model.ckpt")
        val_ex = bank_mod.read_examples(workdir / "val.bin")
        the_bank = bank_mod.load_bank(workdir / "bank.json")
        if not val_ex:
            _dump_json({"numValExamples": 0}, workdir / "eval.json")
            (workdir / "curve.csv").write_text("threshold,coverage,retained_accuracy\n")
            return
        features = extractor.transform_batch([ex.context_tokens for ex in val_ex])
        class_ids = np.array([ex.class_id for ex in val_ex])
        _, tops, max_probs = clf.predict_batch(model, features)
        thresholds = [round(0.05 * i, 2) for i in range(21)]
        points = clf.opt_out_curve_points(max_probs, tops == class_ids, thresholds)
        with open(workdir / "curve.csv", "w", encoding="utf-8") as fh:
            fh.write("threshold,coverage,retained_accuracy\n")
            for p in points:
                acc = "" if p.retained_accuracy is None else repr(p.retained_accuracy)
                fh.write(f"{p.threshold!r},{p.coverage!r},{acc}\n")
        kept = max_probs >= model.opt_out_threshold
        exemplars = [the_bank.get_class(int(t)).exemplar_text for t in tops]
        payload = {
            "numValExamples": len(val_ex),
            "valAccuracy": float((tops == class_ids).mean()),
            "optOutThreshold": model.opt_out_threshold,
            "coverageAtThreshold": float(kept.mean()),
            "retainedAccuracyAtThreshold": (
                float((tops == class_ids)[kept].mean()) if kept.any() else None
            ),
            "uniquePer100": (
                clf.unique_per_100(exemplars, samples=200, seed=config.seed)
                if len(exemplars) >= 100
                else None
            ),
        }
        _dump_json(payload, workdir / "eval.json")

    for stage, fn in (
        ("ingest", ingest),
        ("candidates", candidates),
        ("score", score),
        ("cluster", cluster),
        ("bank", build_bank),
        ("extract", extract),
        ("train", train),
        ("eval", evaluate),
    ):
        run_stage(stage, fn)

    return PipelineResult(workdir, manifest, stages_run, stages_cached)
