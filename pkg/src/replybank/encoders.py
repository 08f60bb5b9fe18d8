"""Sentence encoders and exact k-nearest-neighbor candidate generation.

Responses are embedded by one or more pluggable encoders and each
response's k nearest neighbors under cosine distance (per encoder) become
candidate pairs for similarity scoring.  KNN is exact: a full scan per
query, which is cheap at desk scale and lets tests check against a
brute-force oracle.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .corpus import ResponseRecord, ValidationError

DEFAULT_KNN_K = 10


@dataclass(frozen=True)
class Encoder:
    name: str
    dimension: int
    encode: Callable[[str], np.ndarray]


def _fit_idf(docs: Sequence[str]) -> tuple[dict[str, int], np.ndarray]:
    """Document frequencies over whitespace tokens; idf = ln(N / df)."""
    vocab = sorted({tok for doc in docs for tok in doc.split()})
    index = {tok: i for i, tok in enumerate(vocab)}
    df = np.zeros(len(vocab))
    for doc in docs:
        for tok in set(doc.split()):
            df[index[tok]] += 1
    idf = np.log(len(docs) / df) if len(vocab) else df
    return index, idf


def tfidf_encoder(records: Sequence[ResponseRecord]) -> Encoder:
    """Built-in encoder: L2-normalized tf-idf over the frequent-set
    vocabulary.  Out-of-vocabulary tokens are ignored; an all-OOV text
    encodes to the zero vector."""
    if not records:
        raise ValidationError("tfidf_encoder requires a non-empty record set")
    index, idf = _fit_idf([r.normalized_text for r in records])

    def encode(text: str) -> np.ndarray:
        vec = np.zeros(len(index))
        for tok, count in Counter(text.split()).items():
            i = index.get(tok)
            if i is not None:
                vec[i] = count * idf[i]
        norm = np.linalg.norm(vec)
        return vec / norm if norm > 0 else vec

    return Encoder("tfidf", len(index), encode)


def load_word_vectors(path) -> dict[str, np.ndarray]:
    """Parse the plain-text vector format: ``token v1 v2 ... vD``."""
    vectors: dict[str, np.ndarray] = {}
    dim: int | None = None
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split(" ")
            if len(parts) < 2:
                raise ValidationError(f"{path}: line {line_no}: expected token and components")
            try:
                vec = np.array([float(x) for x in parts[1:]], dtype=np.float64)
            except ValueError as exc:
                raise ValidationError(
                    f"{path}: line {line_no}: non-numeric vector component"
                ) from exc
            if dim is None:
                dim = len(vec)
            elif len(vec) != dim:
                raise ValidationError(
                    f"{path}: line {line_no}: dimension {len(vec)} != {dim}"
                )
            vectors[parts[0]] = vec
    if not vectors:
        raise ValidationError(f"{path}: no vectors found")
    return vectors


def word_vector_encoder(
    vector_file,
    weighting: str = "uniform",
    records: Sequence[ResponseRecord] | None = None,
) -> Encoder:
    """Mean (or tf-idf weighted mean) of per-token vectors from a text
    vector file.  The tf-idf weighting fits document frequencies over
    ``records``; tokens never seen there fall back to df = 1."""
    if weighting not in ("uniform", "tfidf"):
        raise ValidationError(f"unknown weighting {weighting!r}")
    vectors = load_word_vectors(vector_file)
    dim = len(next(iter(vectors.values())))

    idf_index: dict[str, int] = {}
    idf = np.zeros(0)
    n_docs = 1
    if weighting == "tfidf":
        if not records:
            raise ValidationError("tfidf weighting requires the response records")
        idf_index, idf = _fit_idf([r.normalized_text for r in records])
        n_docs = len(records)

    def encode(text: str) -> np.ndarray:
        total = np.zeros(dim)
        weight_sum = 0.0
        for tok, count in Counter(text.split()).items():
            vec = vectors.get(tok)
            if vec is None:
                continue
            if weighting == "uniform":
                w = float(count)
            else:
                i = idf_index.get(tok)
                w = count * (idf[i] if i is not None else math.log(n_docs))
            total += w * vec
            weight_sum += w
        return total / weight_sum if weight_sum > 0 else total

    return Encoder(f"wordvec-{weighting}", dim, encode)


def cosine_distance(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ValidationError("cosine distance is undefined for zero vectors")
    return 1.0 - float(np.dot(a / na, b / nb))


def generate_candidate_pairs(
    records: Sequence[ResponseRecord],
    encoders: Sequence[Encoder],
    k: int = DEFAULT_KNN_K,
) -> list[tuple[int, int]]:
    """Union over encoders and responses of each response's k nearest
    other responses by cosine distance.

    Pairs come back canonicalized (a < b), sorted, and deduplicated.
    Responses that encode to the zero vector produce no neighbors and are
    never neighbors.  Cosine ties break toward the smaller response id.
    """
    if k < 1:
        raise ValidationError("k must be >= 1")
    if len(records) < 2:
        raise ValidationError("candidate generation requires at least 2 records")
    ids = [r.response_id for r in records]
    pairs: set[tuple[int, int]] = set()
    for enc in encoders:
        matrix = np.stack([enc.encode(r.normalized_text) for r in records])
        norms = np.linalg.norm(matrix, axis=1)
        alive = norms > 0
        unit = np.zeros_like(matrix)
        unit[alive] = matrix[alive] / norms[alive, None]
        for qi in range(len(records)):
            if not alive[qi]:
                continue
            dists = 1.0 - unit @ unit[qi]
            order = sorted(
                (j for j in range(len(records)) if j != qi and alive[j]),
                key=lambda j: (dists[j], ids[j]),
            )
            for j in order[:k]:
                a, b = ids[qi], ids[j]
                pairs.add((a, b) if a < b else (b, a))
    return sorted(pairs)


def parse_encoder_spec(
    spec: str, records: Sequence[ResponseRecord]
) -> list[Encoder]:
    """Build encoders from a comma-separated spec string, e.g.
    ``tfidf,wordvec:vectors.txt,wordvec+tfidf:vectors.txt``."""
    encoders = []
    for item in spec.split(","):
        item = item.strip()
        if not item:
            continue
        if item == "tfidf":
            encoders.append(tfidf_encoder(records))
        elif item.startswith("wordvec:"):
            encoders.append(word_vector_encoder(item.split(":", 1)[1], "uniform"))
        elif item.startswith("wordvec+tfidf:"):
            encoders.append(
                word_vector_encoder(item.split(":", 1)[1], "tfidf", records)
            )
        else:
            raise ValidationError(f"unknown encoder spec {item!r}")
    if not encoders:
        raise ValidationError("encoder spec produced no encoders")
    return encoders
