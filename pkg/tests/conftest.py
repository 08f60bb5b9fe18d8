"""Shared fixtures: a small synthetic corpus and a fully built pipeline
workdir, reused by the service, CLI, and acceptance tests."""

import pytest

from replybank import pipeline, synth


@pytest.fixture(scope="session")
def synth_corpus_path(tmp_path_factory):
    conversations, sidecar = synth.generate_corpus(8, 300, seed=1)
    path = tmp_path_factory.mktemp("corpus") / "corpus.jsonl"
    synth.write_corpus(conversations, sidecar, path)
    return path


@pytest.fixture(scope="session")
def synth_truth(synth_corpus_path):
    import json

    with open(f"{synth_corpus_path}.truth.json", encoding="utf-8") as fh:
        return json.load(fh)


@pytest.fixture(scope="session")
def built_workdir(synth_corpus_path, tmp_path_factory):
    """Pipeline artifacts for the shared synthetic corpus."""
    workdir = tmp_path_factory.mktemp("work")
    config = pipeline.PipelineConfig(epochs=40)
    pipeline.run_pipeline(synth_corpus_path, config, workdir)
    return workdir
