#!/usr/bin/env python3
"""Boot a merge-review service on deterministic synthetic data.

Builds a pipeline workdir from a seeded synthetic corpus, then serves the
review stack (clusters + responses, empty live bank, decision log) on a
free port.  Prints one JSON line with the port and paths once the socket
is bound, so a test harness can spawn this script and wait for readiness.
"""

import argparse
import json
import socket
import sys
import tempfile
from pathlib import Path

import uvicorn

from replybank import pipeline, service, synth


def main() -> int:
    ap = argparse.ArgumentParser()
    ap.add_argument("--classes", type=int, default=8)
    ap.add_argument("--conversations", type=int, default=300)
    ap.add_argument("--seed", type=int, default=1)
    args = ap.parse_args()

    workdir = Path(tempfile.mkdtemp(prefix="replybank-ui-"))
    corpus_path = workdir / "corpus.jsonl"
    conversations, sidecar = synth.generate_corpus(
        args.classes, args.conversations, seed=args.seed
    )
    synth.write_corpus(conversations, sidecar, corpus_path)
    artifacts = workdir / "artifacts"
    pipeline.run_pipeline(corpus_path, pipeline.PipelineConfig(epochs=8), artifacts)

    bank_path = workdir / "live-bank.json"  # absent on boot: empty live bank
    log_path = workdir / "decisions.jsonl"
    app = service.create_app(
        bank_path=bank_path,
        clusters_path=artifacts / "clusters.json",
        responses_path=artifacts / "responses.tsv",
        decision_log_path=log_path,
    )

    sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    sock.bind(("127.0.0.1", 0))
    port = sock.getsockname()[1]
    print(
        json.dumps(
            {
                "port": port,
                "workdir": str(workdir),
                "artifacts": str(artifacts),
                "bankPath": str(bank_path),
                "decisionLog": str(log_path),
            }
        ),
        flush=True,
    )
    server = uvicorn.Server(uvicorn.Config(app, log_level="warning"))
    server.run(sockets=[sock])
    return 0


if __name__ == "__main__":
    sys.exit(main())
