"""Label-smoothed softmax classifier from featurized context to response
class, with confidence-based opt-out and evaluation metrics.

Targets are smoothed toward the uniform distribution, y' = (1 - t) *
onehot + t / K with t = 0.1 by default, which softens the impact of
mislabeled examples.  The feature extractor is a frozen bag-of-features
stand-in for a sequence encoder: anything that maps the speaker-tokenized
context to a fixed-dimension vector can be plugged in behind the same
interface.  Training is plain mini-batch gradient descent on the convex
objective, deterministic for a fixed seed.
"""

from __future__ import annotations

import hashlib
import json
import logging
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .corpus import (
    DOCTOR_NAME_TOKEN,
    DOCTOR_START_TOKEN,
    PATIENT_NAME_TOKEN,
    PATIENT_START_TOKEN,
    LabeledExample,
    ValidationError,
)

logger = logging.getLogger(__name__)

DEFAULT_SMOOTHING = 0.1

SPECIAL_TOKENS = (
    PATIENT_START_TOKEN,
    DOCTOR_START_TOKEN,
    PATIENT_NAME_TOKEN,
    DOCTOR_NAME_TOKEN,
)


class FeatureExtractor:
    """Token-level featurizer fitted once on training contexts and frozen
    afterwards.  ``tfidf`` mode produces an L2-normalized tf-idf vector
    over the fitted vocabulary; ``wordvec_mean`` averages per-token
    vectors.  Speaker and identity placeholder tokens are always in the
    vocabulary."""

    def __init__(
        self,
        mode: str,
        vocabulary: Sequence[str],
        idf: np.ndarray | None = None,
        vectors: np.ndarray | None = None,
    ):
        if mode not in ("tfidf", "wordvec_mean"):
            raise ValidationError(f"unknown feature mode {mode!r}")
        self.mode = mode
        self.vocabulary = list(vocabulary)
        self.index = {tok: i for i, tok in enumerate(self.vocabulary)}
        self.idf = idf
        self.vectors = vectors
        if mode == "tfidf":
            self.dimension = len(self.vocabulary)
        else:
            assert vectors is not None
            self.dimension = vectors.shape[1]

    @classmethod
    def fit(
        cls,
        contexts: Sequence[Sequence[str]],
        mode: str = "tfidf",
        word_vectors: dict[str, np.ndarray] | None = None,
    ) -> "FeatureExtractor":
        if not contexts:
            raise ValidationError("cannot fit a feature extractor on no contexts")
        if mode == "tfidf":
            vocab = sorted({tok for ctx in contexts for tok in ctx} | set(SPECIAL_TOKENS))
            index = {tok: i for i, tok in enumerate(vocab)}
            df = np.zeros(len(vocab))
            for ctx in contexts:
                for tok in set(ctx):
                    df[index[tok]] += 1
            # Forced-in special tokens may never occur; clamp df to 1.
            idf = np.log(len(contexts) / np.maximum(df, 1.0))
            return cls(mode, vocab, idf=idf)
        if mode == "wordvec_mean":
            if not word_vectors:
                raise ValidationError("wordvec_mean mode requires word vectors")
            vocab = sorted(word_vectors)
            matrix = np.stack([word_vectors[t] for t in vocab])
            return cls(mode, vocab, vectors=matrix)
        raise ValidationError(f"unknown feature mode {mode!r}")

    def transform(self, context: Sequence[str]) -> np.ndarray:
        if self.mode == "tfidf":
            vec = np.zeros(self.dimension)
            for tok, count in Counter(context).items():
                i = self.index.get(tok)
                if i is not None:
                    vec[i] = count * self.idf[i]
            norm = np.linalg.norm(vec)
            return vec / norm if norm > 0 else vec
        total = np.zeros(self.dimension)
        n = 0
        for tok in context:
            i = self.index.get(tok)
            if i is not None:
                total += self.vectors[i]
                n += 1
        return total / n if n else total

    def transform_batch(self, contexts: Sequence[Sequence[str]]) -> np.ndarray:
        if not contexts:
            return np.zeros((0, self.dimension))
        return np.stack([self.transform(c) for c in contexts])

    def to_dict(self) -> dict:
        payload: dict = {"mode": self.mode, "vocabulary": self.vocabulary}
        if self.mode == "tfidf":
            payload["idf"] = [float(x) for x in self.idf]
        else:
            payload["vectors"] = [[float(x) for x in row] for row in self.vectors]
        return payload

    @classmethod
    def from_dict(cls, payload: dict) -> "FeatureExtractor":
        if payload["mode"] == "tfidf":
            return cls("tfidf", payload["vocabulary"], idf=np.array(payload["idf"]))
        return cls(
            "wordvec_mean",
            payload["vocabulary"],
            vectors=np.array(payload["vectors"]),
        )


@dataclass
class ClassifierModel:
    weights: np.ndarray  # (num_classes, feature_dim)
    bias: np.ndarray  # (num_classes,)
    smoothing: float = DEFAULT_SMOOTHING
    opt_out_threshold: float = 0.0
    bank_version: int = 0

    @property
    def num_classes(self) -> int:
        return self.weights.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.weights.shape[1]


@dataclass(frozen=True)
class Prediction:
    probabilities: np.ndarray
    top_class_id: int
    max_prob: float
    abstained: bool


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 64
    learning_rate: float = 0.5
    epochs: int = 100
    seed: int = 0
    smoothing: float = DEFAULT_SMOOTHING
    momentum: float = 0.0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValidationError("batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ValidationError("learning_rate must be > 0")
        if not (0.0 <= self.smoothing < 1.0):
            raise ValidationError("smoothing must be in [0, 1)")


def smoothed_targets(class_id: int, num_classes: int, smoothing: float) -> np.ndarray:
    """y' = (1 - t) * onehot(class) + t / K per component."""
    if num_classes < 2:
        raise ValidationError("need at least 2 classes")
    if not (0.0 <= smoothing < 1.0):
        raise ValidationError("smoothing must be in [0, 1)")
    if not (0 <= class_id < num_classes):
        raise ValidationError(f"class id {class_id} out of range for K={num_classes}")
    target = np.full(num_classes, smoothing / num_classes)
    target[class_id] += 1.0 - smoothing
    return target


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    return np.exp(_log_softmax(logits))


def loss_and_grad(
    weights: np.ndarray,
    bias: np.ndarray,
    features: np.ndarray,
    class_ids: np.ndarray,
    smoothing: float,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Mean label-smoothed cross-entropy over the batch and its analytic
    gradients for the weights and bias."""
    if not np.all(np.isfinite(features)):
        raise ValidationError("non-finite feature values")
    batch = features.shape[0]
    num_classes = weights.shape[0]
    logits = features @ weights.T + bias
    log_probs = _log_softmax(logits)
    targets = np.full((batch, num_classes), smoothing / num_classes)
    targets[np.arange(batch), class_ids] += 1.0 - smoothing
    loss = float(-(targets * log_probs).sum(axis=1).mean())
    dlogits = (np.exp(log_probs) - targets) / batch
    return loss, dlogits.T @ features, dlogits.sum(axis=0)


def train(
    features: np.ndarray,
    class_ids: np.ndarray,
    num_classes: int,
    config: TrainConfig,
    bank_version: int = 0,
) -> tuple[ClassifierModel, list[float]]:
    """Mini-batch gradient descent from zero weights.  Deterministic for
    a fixed seed; returns the model and the full-dataset loss recorded
    after each epoch."""
    if features.shape[0] == 0:
        raise ValidationError("cannot train on an empty example list")
    if features.shape[0] != class_ids.shape[0]:
        raise ValidationError("features and class ids disagree on length")
    missing = sorted(set(range(num_classes)) - set(int(c) for c in class_ids))
    if missing:
        logger.warning("no training examples for %d classes (e.g. %s)", len(missing), missing[:5])
    rng = np.random.default_rng(config.seed)
    n, dim = features.shape
    weights = np.zeros((num_classes, dim))
    bias = np.zeros(num_classes)
    vel_w = np.zeros_like(weights)
    vel_b = np.zeros_like(bias)
    losses = []
    for _ in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            _, gw, gb = loss_and_grad(
                weights, bias, features[idx], class_ids[idx], config.smoothing
            )
            vel_w = config.momentum * vel_w - config.learning_rate * gw
            vel_b = config.momentum * vel_b - config.learning_rate * gb
            weights += vel_w
            bias += vel_b
        epoch_loss, _, _ = loss_and_grad(weights, bias, features, class_ids, config.smoothing)
        losses.append(epoch_loss)
    model = ClassifierModel(
        weights=weights,
        bias=bias,
        smoothing=config.smoothing,
        bank_version=bank_version,
    )
    return model, losses


def predict(model: ClassifierModel, feature_vector: np.ndarray) -> Prediction:
    if feature_vector.shape != (model.feature_dim,):
        raise ValidationError(
            f"feature dimension {feature_vector.shape} != ({model.feature_dim},)"
        )
    probs = softmax(feature_vector @ model.weights.T + model.bias)
    top = int(np.argmax(probs))  # argmax returns the smallest index on ties
    max_prob = float(probs[top])
    return Prediction(probs, top, max_prob, max_prob < model.opt_out_threshold)


def predict_batch(
    model: ClassifierModel, features: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(probabilities, top class ids, max probabilities) for a feature
    matrix."""
    probs = softmax(features @ model.weights.T + model.bias)
    tops = np.argmax(probs, axis=1)
    return probs, tops, probs[np.arange(len(tops)), tops]


def threshold_from_max_probs(max_probs: np.ndarray, target: str | float = "mean") -> float:
    """The opt-out threshold: the mean max-probability ("more confident
    than average") or, for a coverage target c, the (1 - c) quantile."""
    if len(max_probs) == 0:
        raise ValidationError("cannot calibrate on an empty validation set")
    if target == "mean":
        return float(np.mean(max_probs))
    coverage = float(target)
    if not (0.0 < coverage <= 1.0):
        raise ValidationError("coverage must be in (0, 1]")
    return float(np.quantile(max_probs, 1.0 - coverage))


def calibrate_opt_out(
    model: ClassifierModel, features: np.ndarray, target: str | float = "mean"
) -> float:
    _, _, max_probs = predict_batch(model, features)
    return threshold_from_max_probs(max_probs, target)


@dataclass(frozen=True)
class CurvePoint:
    threshold: float
    coverage: float
    retained_accuracy: float | None


def opt_out_curve_points(
    max_probs: np.ndarray,
    correct: np.ndarray,
    thresholds: Sequence[float],
) -> list[CurvePoint]:
    """Coverage and retained accuracy per threshold.  An empty retained
    set reports its accuracy as absent."""
    if len(max_probs) == 0:
        raise ValidationError("empty evaluation set")
    points = []
    for threshold in thresholds:
        kept = max_probs >= threshold
        coverage = float(kept.mean())
        retained = float(correct[kept].mean()) if kept.any() else None
        points.append(CurvePoint(float(threshold), coverage, retained))
    return points


def opt_out_curve(
    model: ClassifierModel,
    features: np.ndarray,
    class_ids: np.ndarray,
    thresholds: Sequence[float],
) -> list[CurvePoint]:
    _, tops, max_probs = predict_batch(model, features)
    return opt_out_curve_points(max_probs, tops == class_ids, thresholds)


def accuracy(
    model: ClassifierModel,
    features: np.ndarray,
    class_ids: np.ndarray,
    abstentions: str = "exclude",
) -> float:
    """Fraction of non-abstaining predictions matching the label.
    ``abstentions`` is "exclude" (retained-set accuracy, the default) or
    "wrong"."""
    if abstentions not in ("exclude", "wrong"):
        raise ValidationError(f"unknown abstention handling {abstentions!r}")
    if len(class_ids) == 0:
        raise ValidationError("empty evaluation set")
    _, tops, max_probs = predict_batch(model, features)
    kept = max_probs >= model.opt_out_threshold
    correct = (tops == class_ids) & kept
    if abstentions == "wrong":
        return float(correct.mean())
    if not kept.any():
        raise ValidationError("every example abstained; retained accuracy undefined")
    return float(correct[kept].mean())


def unique_per_100(
    suggestions: Sequence[str], samples: int = 1000, seed: int = 0
) -> float:
    """Average distinct-text count over seeded bootstrap draws of size
    100 (with replacement)."""
    if len(suggestions) < 100:
        raise ValidationError("unique-per-100 needs at least 100 suggestions")
    rng = np.random.default_rng(seed)
    total = 0
    for _ in range(samples):
        idx = rng.integers(0, len(suggestions), size=100)
        total += len({suggestions[i] for i in idx})
    return total / samples


_CKPT_MAGIC = "replybank-ckpt-v1"


def _canonical_json_bytes(payload: dict) -> bytes:
    return (json.dumps(payload, sort_keys=True) + "\n").encode("utf-8")


def save_model(model: ClassifierModel, extractor: FeatureExtractor, path) -> None:
    """Checkpoint: a JSON header line followed by the little-endian
    float64 weight and bias arrays.  The fitted extractor goes to a
    ``<path>.vocab.json`` sidecar whose hash is pinned in the header."""
    sidecar = _canonical_json_bytes(extractor.to_dict())
    vocab_hash = hashlib.sha256(sidecar).hexdigest()
    with open(f"{path}.vocab.json", "wb") as fh:
        fh.write(sidecar)
    header = {
        "format": _CKPT_MAGIC,
        "numClasses": model.num_classes,
        "featureDim": model.feature_dim,
        "t": model.smoothing,
        "threshold": model.opt_out_threshold,
        "bankVersion": model.bank_version,
        "vocabHash": vocab_hash,
    }
    with open(path, "wb") as fh:
        fh.write(_canonical_json_bytes(header))
        fh.write(model.weights.astype("<f8").tobytes(order="C"))
        fh.write(model.bias.astype("<f8").tobytes(order="C"))


def load_model(path) -> tuple[ClassifierModel, FeatureExtractor]:
    with open(path, "rb") as fh:
        header_line = fh.readline()
        try:
            header = json.loads(header_line)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: malformed checkpoint header") from exc
        if header.get("format") != _CKPT_MAGIC:
            raise ValidationError(f"{path}: not a classifier checkpoint")
        k, dim = int(header["numClasses"]), int(header["featureDim"])
        weights = np.frombuffer(fh.read(8 * k * dim), dtype="<f8").reshape(k, dim).copy()
        bias = np.frombuffer(fh.read(8 * k), dtype="<f8").copy()
    with open(f"{path}.vocab.json", "rb") as fh:
        sidecar = fh.read()
    if hashlib.sha256(sidecar).hexdigest() != header["vocabHash"]:
        raise ValidationError(f"{path}: vocabulary sidecar does not match vocabHash")
    extractor = FeatureExtractor.from_dict(json.loads(sidecar))
    model = ClassifierModel(
        weights=weights,
        bias=bias,
        smoothing=float(header["t"]),
        opt_out_threshold=float(header["threshold"]),
        bank_version=int(header["bankVersion"]),
    )
    if extractor.dimension != model.feature_dim:
        raise ValidationError(f"{path}: extractor dimension disagrees with checkpoint")
    return model, extractor


def fit_and_train(
    examples: Sequence[LabeledExample],
    num_classes: int,
    config: TrainConfig,
    bank_version: int = 0,
    mode: str = "tfidf",
    word_vectors: dict[str, np.ndarray] | None = None,
) -> tuple[ClassifierModel, FeatureExtractor, list[float]]:
    """Fit the extractor on the training contexts, then train."""
    if not examples:
        raise ValidationError("cannot train on an empty example list")
    extractor = FeatureExtractor.fit(
        [ex.context_tokens for ex in examples], mode=mode, word_vectors=word_vectors
    )
    features = extractor.transform_batch([ex.context_tokens for ex in examples])
    class_ids = np.array([ex.class_id for ex in examples], dtype=np.int64)
    model, losses = train(features, class_ids, num_classes, config, bank_version)
    return model, extractor, losses
