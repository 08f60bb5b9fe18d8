"""Acceptance gate: one test per deliverable guarantee, each printing a
single pass/fail line under ``pytest -v``.  Numeric bounds are stated in
the assertions; oracle comparisons are exact."""

import json
import shutil
import time

import numpy as np
import pytest
from fastapi.testclient import TestClient

from oracles import (
    brute_force_pairs,
    make_records,
    naive_complete_linkage,
    numeric_grads,
    random_matrix,
    relative_error,
    unit_distance_agrees_with_cosine,
)
from replybank import bank as bank_mod
from replybank import classifier as clf
from replybank import clustering, corpus, encoders, pipeline, service, synth


@pytest.fixture(scope="module")
def e2e_corpus(tmp_path_factory):
    """The bundled recovery benchmark: 20 intent families, 2000
    conversations, fixed seed."""
    conversations, sidecar = synth.generate_corpus(20, 2000, seed=7)
    path = tmp_path_factory.mktemp("e2e") / "corpus.jsonl"
    synth.write_corpus(conversations, sidecar, path)
    return path


@pytest.fixture(scope="module")
def e2e_run(e2e_corpus, tmp_path_factory):
    workdir = tmp_path_factory.mktemp("e2e-work")
    start = time.perf_counter()
    pipeline.run_pipeline(e2e_corpus, pipeline.PipelineConfig(), workdir)
    return workdir, time.perf_counter() - start


def test_clustering_matches_naive_oracle_on_200_random_matrices():
    rng = np.random.default_rng(2024)
    start = time.perf_counter()
    for _ in range(200):
        matrix = random_matrix(rng, int(rng.integers(2, 51)))
        clusters = clustering.agglomerate(matrix, 0.25)
        assert [c.member_ids for c in clusters] == naive_complete_linkage(matrix, 0.25)
        for cluster in clusters:
            for i in cluster.member_ids:
                for j in cluster.member_ids:
                    assert matrix.distance(i, j) <= 0.25
    assert time.perf_counter() - start < 30.0


def test_candidate_pairs_match_brute_force_on_100_random_corpora(tmp_path):
    rng = np.random.default_rng(99)
    for corpus_no in range(100):
        n = int(rng.integers(5, 201))
        vocab = [f"t{i}" for i in range(int(rng.integers(8, 60)))]
        texts = [
            " ".join(rng.choice(vocab, size=rng.integers(2, 8)))
            for _ in range(n)
        ]
        records = make_records(texts, counts=[int(c) for c in rng.integers(2, 10, n)])

        vector_files = []
        for variant in range(2):
            dim = int(rng.integers(3, 11))
            covered = [t for t in vocab if rng.random() < 0.8]
            path = tmp_path / f"vec-{corpus_no}-{variant}.txt"
            with open(path, "w", encoding="utf-8") as fh:
                for tok in covered:
                    values = rng.normal(size=dim)
                    if rng.random() < 0.05:
                        values = np.zeros(dim)
                    fh.write(tok + " " + " ".join(repr(float(v)) for v in values) + "\n")
            vector_files.append(path)

        pool = [
            encoders.tfidf_encoder(records),
            encoders.word_vector_encoder(vector_files[0]),
            encoders.word_vector_encoder(vector_files[0], "tfidf", records),
            encoders.word_vector_encoder(vector_files[1]),
        ]
        picked = [pool[i] for i in rng.permutation(4)[: rng.integers(1, 5)]]
        k = int(rng.integers(1, 13))
        assert encoders.generate_candidate_pairs(records, picked, k) == brute_force_pairs(
            records, picked, k
        )
        if corpus_no % 20 == 0:
            assert unit_distance_agrees_with_cosine(records, picked)


def test_distance_matrix_piecewise_formula_exhaustive():
    rng = np.random.default_rng(5)
    for _ in range(10):
        records = make_records([f"resp {i}" for i in range(10)])
        scored = {}
        for a in range(10):
            for b in range(a + 1, 10):
                if rng.random() < 0.4:
                    scored[(a, b)] = float(rng.random())
        scores = [
            clustering.SimilarityScore(pair, prob) for pair, prob in scored.items()
        ]
        matrix = clustering.build_distance_matrix(len(records), scores)
        for i in range(10):
            for j in range(10):
                if i == j:
                    expected = 0.0
                elif (min(i, j), max(i, j)) in scored:
                    expected = 1.0 - scored[(min(i, j), max(i, j))]
                else:
                    expected = 1.0
                assert matrix.distance(i, j) == expected


def test_gradients_match_finite_differences_on_100_instances():
    target = clf.smoothed_targets(0, 4, 0.1)
    assert np.max(np.abs(target - np.array([0.925, 0.025, 0.025, 0.025]))) <= 1e-12

    rng = np.random.default_rng(42)
    for _ in range(100):
        k = int(rng.integers(2, 11))
        dim = int(rng.integers(1, 17))
        batch = int(rng.integers(1, 9))
        smoothing = float(rng.choice([0.0, 0.05, 0.1, 0.3]))
        weights = rng.normal(size=(k, dim))
        bias = rng.normal(size=k)
        features = rng.normal(size=(batch, dim))
        class_ids = rng.integers(0, k, size=batch)

        for cid in class_ids:
            assert abs(clf.smoothed_targets(int(cid), k, smoothing).sum() - 1.0) <= 1e-12
        _, gw, gb = clf.loss_and_grad(weights, bias, features, class_ids, smoothing)
        nw, nb = numeric_grads(weights, bias, features, class_ids, smoothing)
        assert relative_error(gw, nw) <= 1e-4
        assert relative_error(gb, nb) <= 1e-4


def test_training_converges_on_separable_three_class_data():
    rng = np.random.default_rng(0)
    centers = np.eye(3) * 2.0
    features = np.vstack(
        [centers[c] + rng.normal(scale=0.1, size=(100, 3)) for c in range(3)]
    )
    labels = np.repeat(np.arange(3), 100)
    start = time.perf_counter()
    model, _ = train_with_defaults(features, labels)
    assert clf.accuracy(model, features, labels) == 1.0
    assert time.perf_counter() - start < 10.0


def train_with_defaults(features, labels):
    config = clf.TrainConfig(batch_size=32, learning_rate=0.5, epochs=200, seed=0)
    return clf.train(features, labels, int(labels.max()) + 1, config)


def test_opt_out_raises_retained_accuracy_on_calibrated_set():
    rng = np.random.default_rng(123)
    n = 10_000
    max_probs = rng.uniform(0.5, 1.0, size=n)
    correct = rng.random(n) < max_probs
    overall = correct.mean()

    mean_threshold = clf.threshold_from_max_probs(max_probs, "mean")
    retained_at_mean = correct[max_probs >= mean_threshold].mean()
    assert retained_at_mean > overall

    points = clf.opt_out_curve_points(max_probs, correct, np.linspace(0, 1, 21))
    coverages = [p.coverage for p in points]
    assert all(b <= a for a, b in zip(coverages, coverages[1:]))

    half_threshold = clf.threshold_from_max_probs(max_probs, 0.5)
    kept = max_probs >= half_threshold
    retained_error = 1.0 - correct[kept].mean()
    assert retained_error <= 0.6 * (1.0 - overall)


def test_unique_per_100_matches_analytic_expectation():
    rng = np.random.default_rng(7)
    texts = [f"response {i}" for i in range(10)]
    suggestions = [texts[i] for i in rng.integers(0, 10, size=1000)]
    value = clf.unique_per_100(suggestions, samples=1000, seed=0)
    expected = 10.0 * (1.0 - 0.9**100)
    assert abs(value - expected) <= 0.05

    assert clf.unique_per_100(["same reply"] * 1000, samples=1000, seed=0) == 1.0


def test_end_to_end_synthetic_recovery(e2e_corpus, e2e_run):
    workdir, elapsed = e2e_run
    assert elapsed < 300.0

    with open(f"{e2e_corpus}.truth.json", encoding="utf-8") as fh:
        sidecar = json.load(fh)
    truth = synth.truth_intent_by_text(sidecar)
    records = corpus.read_responses_tsv(workdir / "responses.tsv")
    clusters = clustering.read_clusters_json(workdir / "clusters.json")

    predicted = {
        mid: c.cluster_id for c in clusters for mid in c.member_ids
    }
    actual = {r.response_id: truth[r.normalized_text] for r in records}
    f1 = clustering.pairwise_f1(predicted, actual)
    assert f1 >= 0.9

    extract_meta = json.loads((workdir / "extract_meta.json").read_text())
    assert extract_meta["labeledFraction"] >= 0.6

    eval_payload = json.loads((workdir / "eval.json").read_text())
    assert eval_payload["numValExamples"] > 0
    assert eval_payload["valAccuracy"] >= 0.8


def test_pipeline_and_replay_determinism(e2e_corpus, e2e_run, tmp_path):
    workdir, _ = e2e_run
    other = tmp_path / "again"
    pipeline.run_pipeline(e2e_corpus, pipeline.PipelineConfig(), other)
    assert (workdir / "manifest.json").read_bytes() == (other / "manifest.json").read_bytes()

    clusters = clustering.read_clusters_json(workdir / "clusters.json")
    records = corpus.read_responses_tsv(workdir / "responses.tsv")
    log_path = tmp_path / "decisions.jsonl"
    session = bank_mod.start_session(clusters, records)
    while not session.done:
        cursor = session.cursor
        if cursor % 3 == 2:
            action = bank_mod.MergeDecision(session.queue[cursor], bank_mod.SKIP)
        elif cursor % 3 == 1 and session.bank.classes:
            action = bank_mod.MergeDecision(
                session.queue[cursor], bank_mod.ASSIGN, class_id=0
            )
        else:
            action = bank_mod.MergeDecision(session.queue[cursor], bank_mod.CREATE)
        bank_mod.append_decision(log_path, action)
        bank_mod.apply_decision(session, action)
    bank_mod.save_bank(session.bank, tmp_path / "live.json")

    decisions = bank_mod.read_decision_log(log_path)
    replayed = bank_mod.replay_decisions(clusters, records, decisions)
    bank_mod.save_bank(replayed, tmp_path / "replayed.json")
    assert (tmp_path / "live.json").read_bytes() == (tmp_path / "replayed.json").read_bytes()


def test_exemplar_edit_preserves_probabilities_bit_for_bit(
    built_workdir, synth_corpus_path, tmp_path
):
    bank_path = tmp_path / "bank.json"
    shutil.copy(built_workdir / "bank.json", bank_path)
    app = service.create_app(
        model_path=built_workdir / "model.ckpt",
        bank_path=bank_path,
        threshold_override=0.0,
    )
    client = TestClient(app)

    requests = []
    with open(synth_corpus_path, encoding="utf-8") as fh:
        for line in fh:
            record = json.loads(line)
            turns = []
            for msg in record["messages"]:
                if msg["speaker"] == "doctor":
                    break
                turns.append(
                    {"speaker": "patient", "text": msg["text"], "pii": msg.get("pii", [])}
                )
            requests.append({"turns": turns, "includeProbabilities": True})
            if len(requests) == 100:
                break
    assert len(requests) == 100

    model_bytes = (built_workdir / "model.ckpt").read_bytes()
    before = [client.post("/v1/suggest", json=req).json() for req in requests]
    edited_class = before[0]["suggestion"]["classId"]
    resp = client.put(
        f"/v1/bank/classes/{edited_class}/exemplar",
        json={"exemplarText": "freshly edited exemplar"},
    )
    assert resp.status_code == 200
    after = [client.post("/v1/suggest", json=req).json() for req in requests]

    for b, a in zip(before, after):
        assert a["probabilities"] == b["probabilities"]
        assert a["suggestion"]["classId"] == b["suggestion"]["classId"]
    assert after[0]["suggestion"]["exemplarText"] == "freshly edited exemplar"
    assert (built_workdir / "model.ckpt").read_bytes() == model_bytes
    edited = [
        (b["suggestion"]["exemplarText"], a["suggestion"]["exemplarText"])
        for b, a in zip(before, after)
        if a["suggestion"]["classId"] == edited_class
    ]
    assert all(a == "freshly edited exemplar" and b != a for b, a in edited)
    unedited = [
        (b["suggestion"]["exemplarText"], a["suggestion"]["exemplarText"])
        for b, a in zip(before, after)
        if a["suggestion"]["classId"] != edited_class
    ]
    assert all(b == a for b, a in unedited)
