"""Conversation ingestion, response preprocessing, and context assembly.

The raw input is a newline-delimited log of two-party conversations.  A
"turn" is all messages sent consecutively by one participant, so ingestion
merges consecutive same-speaker messages into a single turn.  Agent
(doctor) utterances are normalized into a frequent-response set that feeds
the clustering stages, and classifier contexts are assembled from the
normalized turn history with speaker-change marker tokens.
"""

from __future__ import annotations

import json
import unicodedata
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

PATIENT = "patient"
DOCTOR = "doctor"
SPEAKERS = (PATIENT, DOCTOR)

PATIENT_NAME_TOKEN = "<patient_name>"
DOCTOR_NAME_TOKEN = "<doctor_name>"
PATIENT_START_TOKEN = "<p_start>"
DOCTOR_START_TOKEN = "<d_start>"

NAME_TOKENS = {PATIENT: PATIENT_NAME_TOKEN, DOCTOR: DOCTOR_NAME_TOKEN}
START_TOKENS = {PATIENT: PATIENT_START_TOKEN, DOCTOR: DOCTOR_START_TOKEN}

DEFAULT_MAX_TURNS = 6
DEFAULT_MAX_TOKENS = 304


class ValidationError(ValueError):
    """An input record violates a documented contract."""


Span = tuple[int, int, str]


@dataclass(frozen=True)
class Turn:
    speaker: str
    text: str
    index: int
    # identity spans into ``text``: (start, end, "patient"|"doctor")
    pii: tuple[Span, ...] = ()


@dataclass(frozen=True)
class Conversation:
    id: str
    turns: tuple[Turn, ...]


@dataclass(frozen=True)
class PreprocessedResponse:
    normalized_text: str
    source_texts: frozenset[str]
    count: int


@dataclass(frozen=True)
class ResponseRecord:
    response_id: int
    response: PreprocessedResponse

    @property
    def normalized_text(self) -> str:
        return self.response.normalized_text

    @property
    def count(self) -> int:
        return self.response.count


@dataclass(frozen=True)
class LabeledExample:
    context_tokens: tuple[str, ...]
    class_id: int


def _strip_punctuation(text: str) -> str:
    # Unicode general categories P* (connector, dash, open/close, quotes, other).
    return "".join(c for c in text if not unicodedata.category(c).startswith("P"))


def _validate_spans(raw: str, spans: Sequence[Span]) -> list[Span]:
    ordered = sorted(spans, key=lambda s: (s[0], s[1]))
    prev_end = 0
    for start, end, kind in ordered:
        if kind not in SPEAKERS:
            raise ValidationError(f"unknown identity span kind {kind!r}")
        if not (0 <= start < end <= len(raw)):
            raise ValidationError(
                f"identity span ({start}, {end}) out of bounds for text of length {len(raw)}"
            )
        if start < prev_end:
            raise ValidationError(f"overlapping identity spans at offset {start}")
        prev_end = end
    return ordered


def preprocess(raw: str, identity_spans: Sequence[Span] = ()) -> PreprocessedResponse:
    """Normalize one utterance: replace identity spans with placeholder
    tokens, lowercase, strip punctuation, and collapse whitespace."""
    spans = _validate_spans(raw, identity_spans)
    parts: list[str] = []
    prev = 0
    for start, end, kind in spans:
        parts.append(_strip_punctuation(raw[prev:start].lower()))
        parts.append(f" {NAME_TOKENS[kind]} ")
        prev = end
    parts.append(_strip_punctuation(raw[prev:].lower()))
    normalized = " ".join("".join(parts).split())
    return PreprocessedResponse(normalized, frozenset({raw}), 1)


def normalize_text(raw: str, identity_spans: Sequence[Span] = ()) -> str:
    return preprocess(raw, identity_spans).normalized_text


def merge_turns(messages: list[dict], where: str = "input") -> tuple[Turn, ...]:
    """Merge consecutive same-speaker messages into turns, shifting
    identity spans into the merged text.  ``where`` prefixes error
    messages (a corpus line number, or "request" for live traffic)."""
    turns: list[Turn] = []
    cur_speaker: str | None = None
    cur_parts: list[str] = []
    cur_spans: list[Span] = []

    def flush() -> None:
        if cur_speaker is None:
            return
        turns.append(
            Turn(cur_speaker, " ".join(cur_parts), len(turns), tuple(cur_spans))
        )

    for msg in messages:
        if not isinstance(msg, dict) or "speaker" not in msg or "text" not in msg:
            raise ValidationError(f"{where}: message missing speaker or text")
        speaker = msg["speaker"]
        if speaker not in SPEAKERS:
            raise ValidationError(f"{where}: unknown speaker {speaker!r}")
        text = msg["text"]
        if not isinstance(text, str):
            raise ValidationError(f"{where}: message text must be a string")
        if not text.strip():
            continue
        spans = []
        for item in msg.get("pii", []):
            if len(item) != 3:
                raise ValidationError(f"{where}: pii span must be [start, end, kind]")
            spans.append((int(item[0]), int(item[1]), item[2]))
        _validate_spans(text, spans)
        if speaker != cur_speaker:
            flush()
            cur_speaker = speaker
            cur_parts = []
            cur_spans = []
        offset = sum(len(p) + 1 for p in cur_parts)
        cur_parts.append(text)
        cur_spans.extend((s + offset, e + offset, kind) for s, e, kind in spans)
    flush()
    return tuple(turns)


def load_conversations(path) -> list[Conversation]:
    """Load the newline-delimited conversation corpus.

    One JSON object per line: {"id": str, "messages": [{"speaker", "text",
    "pii"?}]}.  Messages are in send order; turn merging happens here.
    """
    conversations = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"line {line_no}: invalid JSON ({exc.msg})") from exc
            if not isinstance(rec, dict) or "id" not in rec or "messages" not in rec:
                raise ValidationError(f"line {line_no}: record missing id or messages")
            turns = merge_turns(rec["messages"], f"line {line_no}")
            if not turns:
                raise ValidationError(f"line {line_no}: conversation has no non-empty messages")
            conversations.append(Conversation(str(rec["id"]), turns))
    return conversations


def build_frequent_set(conversations: Iterable[Conversation]) -> list[ResponseRecord]:
    """Count normalized doctor utterances and keep those appearing more
    than once.  Ids are dense, assigned in descending count order with
    lexicographic tie-breaks, so the result is order-insensitive."""
    counts: Counter[str] = Counter()
    sources: dict[str, set[str]] = {}
    for conv in conversations:
        for turn in conv.turns:
            if turn.speaker != DOCTOR:
                continue
            norm = normalize_text(turn.text, turn.pii)
            if not norm:
                continue
            counts[norm] += 1
            sources.setdefault(norm, set()).add(turn.text)
    ordered = sorted((t for t, c in counts.items() if c >= 2), key=lambda t: (-counts[t], t))
    return [
        ResponseRecord(i, PreprocessedResponse(t, frozenset(sources[t]), counts[t]))
        for i, t in enumerate(ordered)
    ]


def count_doctor_turns(conversations: Iterable[Conversation]) -> int:
    return sum(1 for conv in conversations for t in conv.turns if t.speaker == DOCTOR)


def assemble_context(
    conversation: Conversation,
    upto_turn: int,
    max_turns: int = DEFAULT_MAX_TURNS,
    max_tokens: int = DEFAULT_MAX_TOKENS,
) -> tuple[str, ...]:
    """Tokens of the last ``max_turns`` turns before ``upto_turn``, each
    turn prefixed with its speaker marker, truncated to the last
    ``max_tokens`` tokens.

    ``upto_turn == len(turns)`` is allowed so a live conversation can ask
    for the context of its next, not-yet-written turn.
    """
    if not (0 <= upto_turn <= len(conversation.turns)):
        raise ValidationError(f"upto_turn {upto_turn} out of range")
    if max_turns < 1 or max_tokens < 1:
        raise ValidationError("max_turns and max_tokens must be >= 1")
    tokens: list[str] = []
    for turn in conversation.turns[max(0, upto_turn - max_turns) : upto_turn]:
        tokens.append(START_TOKENS[turn.speaker])
        tokens.extend(normalize_text(turn.text, turn.pii).split())
    return tuple(tokens[-max_tokens:])


@dataclass(frozen=True)
class CorpusStats:
    mean_utterances: float
    sd_utterances: float
    mean_words_per_utterance: float
    sd_words: float


def corpus_stats(conversations: Sequence[Conversation]) -> CorpusStats:
    """Population statistics (divide by N) over turn counts and raw
    whitespace-token lengths."""
    if not conversations:
        raise ValidationError("corpus_stats requires a non-empty corpus")
    utterances = np.array([len(c.turns) for c in conversations], dtype=np.float64)
    words = np.array(
        [len(t.text.split()) for c in conversations for t in c.turns], dtype=np.float64
    )
    return CorpusStats(
        mean_utterances=float(utterances.mean()),
        sd_utterances=float(utterances.std()),
        mean_words_per_utterance=float(words.mean()),
        sd_words=float(words.std()),
    )


def write_responses_tsv(records: Sequence[ResponseRecord], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(f"{rec.response_id}\t{rec.count}\t{rec.normalized_text}\n")


def read_responses_tsv(path) -> list[ResponseRecord]:
    """Read the frequent set back.  Source texts are not carried by the
    TSV and come back empty."""
    records = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 3:
                raise ValidationError(f"line {line_no}: expected 3 tab-separated fields")
            try:
                rid, count = int(parts[0]), int(parts[1])
            except ValueError as exc:
                raise ValidationError(f"line {line_no}: non-integer id or count") from exc
            records.append(
                ResponseRecord(rid, PreprocessedResponse(parts[2], frozenset(), count))
            )
    return records
