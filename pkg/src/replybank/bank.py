"""Response classes, the manual merge-review workflow, and labeled-example
extraction.

A response class groups interchangeable responses under one label and one
editable exemplar (the text actually served).  Classes are built either
automatically (one per cluster) or through a merge session in which a
labeler walks the cluster queue, most frequent first, and assigns each
cluster to an existing class, creates a new one, or skips it.  Sessions
are event-sourced: replaying the decision log reconstructs the bank
exactly, and exemplar edits never touch memberships, so a trained
classifier stays valid across edits.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .clustering import Cluster, cluster_occurrences
from .corpus import (
    DOCTOR,
    Conversation,
    LabeledExample,
    ResponseRecord,
    ValidationError,
    assemble_context,
    normalize_text,
)

ASSIGN = "assign"
CREATE = "create"
SKIP = "skip"


@dataclass
class ResponseClass:
    class_id: int
    name: str
    member_response_ids: set[int]
    exemplar_text: str
    source_cluster_ids: set[int]


@dataclass
class ResponseBank:
    classes: list[ResponseClass] = field(default_factory=list)
    version: int = 0

    def get_class(self, class_id: int) -> ResponseClass:
        if not (0 <= class_id < len(self.classes)):
            raise ValidationError(f"unknown class id {class_id}")
        return self.classes[class_id]

    def edit_exemplar(self, class_id: int, new_text: str) -> None:
        """Replace the served text for a class.  Members never change, so
        training data and trained models stay valid.  The version bumps
        even for an identical text, keeping the audit trail complete."""
        cls = self.get_class(class_id)
        if not new_text.strip():
            raise ValidationError("exemplar text must be non-empty")
        cls.exemplar_text = new_text
        self.version += 1

    def member_class_map(self) -> dict[int, int]:
        mapping: dict[int, int] = {}
        for cls in self.classes:
            for mid in cls.member_response_ids:
                if mid in mapping:
                    raise ValidationError(
                        f"response {mid} belongs to classes {mapping[mid]} and {cls.class_id}"
                    )
                mapping[mid] = cls.class_id
        return mapping

    def to_dict(self) -> dict:
        return {
            "version": self.version,
            "classes": [
                {
                    "classId": c.class_id,
                    "name": c.name,
                    "exemplarText": c.exemplar_text,
                    "members": sorted(c.member_response_ids),
                    "sourceClusters": sorted(c.source_cluster_ids),
                }
                for c in self.classes
            ],
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "ResponseBank":
        classes = [
            ResponseClass(
                class_id=int(c["classId"]),
                name=c["name"],
                member_response_ids=set(int(m) for m in c["members"]),
                exemplar_text=c["exemplarText"],
                source_cluster_ids=set(int(s) for s in c["sourceClusters"]),
            )
            for c in payload["classes"]
        ]
        bank = cls(classes=classes, version=int(payload["version"]))
        bank.member_class_map()  # enforce disjointness on load
        return bank


def save_bank(bank: ResponseBank, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(bank.to_dict(), fh, sort_keys=True, indent=1)
        fh.write("\n")


def load_bank(path) -> ResponseBank:
    with open(path, encoding="utf-8") as fh:
        return ResponseBank.from_dict(json.load(fh))


@dataclass(frozen=True)
class MergeDecision:
    cluster_id: int
    action: str  # ASSIGN | CREATE | SKIP
    class_id: int | None = None  # target for ASSIGN
    name: str | None = None  # optional name for CREATE
    timestamp: str = ""
    annotator: str = ""

    def to_dict(self) -> dict:
        payload: dict = {"clusterId": self.cluster_id, "action": {"type": self.action}}
        if self.action == ASSIGN:
            payload["action"]["classId"] = self.class_id
        if self.action == CREATE and self.name is not None:
            payload["action"]["name"] = self.name
        payload["timestamp"] = self.timestamp
        payload["annotator"] = self.annotator
        return payload

    @classmethod
    def from_dict(cls, payload: dict) -> "MergeDecision":
        action = payload["action"]["type"]
        if action not in (ASSIGN, CREATE, SKIP):
            raise ValidationError(f"unknown decision action {action!r}")
        return cls(
            cluster_id=int(payload["clusterId"]),
            action=action,
            class_id=payload["action"].get("classId"),
            name=payload["action"].get("name"),
            timestamp=payload.get("timestamp", ""),
            annotator=payload.get("annotator", ""),
        )


@dataclass
class MergeSession:
    clusters: dict[int, Cluster]
    records: dict[int, ResponseRecord]
    queue: list[int]  # cluster ids, most occurrences first
    cursor: int = 0
    decisions: list[MergeDecision] = field(default_factory=list)
    bank: ResponseBank = field(default_factory=ResponseBank)

    @property
    def done(self) -> bool:
        return self.cursor >= len(self.queue)

    def current_cluster(self) -> Cluster:
        if self.done:
            raise ValidationError("merge session is complete")
        return self.clusters[self.queue[self.cursor]]

    def occurrence_count(self, cluster_id: int) -> int:
        return cluster_occurrences(self.clusters[cluster_id], self.records)


def start_session(
    clusters: Sequence[Cluster],
    records: Sequence[ResponseRecord],
    bank: ResponseBank | None = None,
) -> MergeSession:
    """Queue clusters by descending total occurrence count (ties by
    cluster id), cursor at the front."""
    by_id = {r.response_id: r for r in records}
    cluster_map = {c.cluster_id: c for c in clusters}
    queue = sorted(
        cluster_map,
        key=lambda cid: (-cluster_occurrences(cluster_map[cid], by_id), cid),
    )
    return MergeSession(
        clusters=cluster_map,
        records=by_id,
        queue=queue,
        bank=bank if bank is not None else ResponseBank(),
    )


def centroid_text(cluster: Cluster, records: dict[int, ResponseRecord]) -> str:
    return records[cluster.centroid_id].normalized_text


def apply_decision(session: MergeSession, decision: MergeDecision) -> MergeSession:
    """Apply a decision for the cluster at the cursor.  Any validation
    failure leaves the session untouched."""
    if session.done:
        raise ValidationError("merge session is complete")
    expected = session.queue[session.cursor]
    if decision.cluster_id != expected:
        raise ValidationError(
            f"decision targets cluster {decision.cluster_id}, cursor is at {expected}"
        )
    cluster = session.clusters[expected]
    if decision.action == ASSIGN:
        cls = session.bank.get_class(decision.class_id if decision.class_id is not None else -1)
        cls.member_response_ids.update(cluster.member_ids)
        cls.source_cluster_ids.add(cluster.cluster_id)
        session.bank.version += 1
    elif decision.action == CREATE:
        exemplar = centroid_text(cluster, session.records)
        session.bank.classes.append(
            ResponseClass(
                class_id=len(session.bank.classes),
                name=decision.name if decision.name else exemplar,
                member_response_ids=set(cluster.member_ids),
                exemplar_text=exemplar,
                source_cluster_ids={cluster.cluster_id},
            )
        )
        session.bank.version += 1
    elif decision.action != SKIP:
        raise ValidationError(f"unknown decision action {decision.action!r}")
    session.decisions.append(decision)
    session.cursor += 1
    return session


def replay_decisions(
    clusters: Sequence[Cluster],
    records: Sequence[ResponseRecord],
    decisions: Iterable[MergeDecision],
) -> ResponseBank:
    session = start_session(clusters, records)
    for decision in decisions:
        apply_decision(session, decision)
    return session.bank


def auto_bank(
    clusters: Sequence[Cluster], records: Sequence[ResponseRecord]
) -> ResponseBank:
    """The no-manual-labeling configuration: one response class per
    cluster, exemplar = centroid text."""
    by_id = {r.response_id: r for r in records}
    classes = [
        ResponseClass(
            class_id=i,
            name=centroid_text(c, by_id),
            member_response_ids=set(c.member_ids),
            exemplar_text=centroid_text(c, by_id),
            source_cluster_ids={c.cluster_id},
        )
        for i, c in enumerate(clusters)
    ]
    return ResponseBank(classes=classes, version=1 if classes else 0)


def append_decision(path, decision: MergeDecision) -> None:
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(json.dumps(decision.to_dict(), sort_keys=True) + "\n")
        fh.flush()


def read_decision_log(path) -> list[MergeDecision]:
    """Read the append-only decision log.  A truncated final line (a
    crashed append) is ignored; malformed lines elsewhere are errors."""
    lines = []
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    decisions = []
    for i, line in enumerate(lines):
        if not line.strip():
            continue
        try:
            decisions.append(MergeDecision.from_dict(json.loads(line)))
        except (json.JSONDecodeError, KeyError) as exc:
            if i == len(lines) - 1:
                break
            raise ValidationError(f"{path}: line {i + 1}: malformed decision") from exc
    return decisions


@dataclass(frozen=True)
class ExtractionResult:
    examples: tuple[LabeledExample, ...]
    labeled_fraction: float
    total_doctor_turns: int


def extract_labeled_examples(
    conversations: Sequence[Conversation],
    bank: ResponseBank,
    records: Sequence[ResponseRecord],
    max_turns: int,
    max_tokens: int,
) -> ExtractionResult:
    """(context, class) pairs for every doctor turn whose normalized text
    belongs to some response class.  Doctor turns that open a conversation
    have no context and are skipped."""
    if not bank.classes:
        raise ValidationError("cannot extract labeled examples from an empty bank")
    by_id = {r.response_id: r for r in records}
    text_to_class = {
        by_id[mid].normalized_text: cid
        for mid, cid in bank.member_class_map().items()
        if mid in by_id
    }
    examples: list[LabeledExample] = []
    total = 0
    for conv in conversations:
        for turn in conv.turns:
            if turn.speaker != DOCTOR:
                continue
            total += 1
            if turn.index == 0:
                continue
            class_id = text_to_class.get(normalize_text(turn.text, turn.pii))
            if class_id is None:
                continue
            tokens = assemble_context(conv, turn.index, max_turns, max_tokens)
            examples.append(LabeledExample(tokens, class_id))
    fraction = len(examples) / total if total else 0.0
    return ExtractionResult(tuple(examples), fraction, total)


_EXAMPLES_MAGIC = b"RBEX1\n"


def write_examples(examples: Sequence[LabeledExample], path) -> None:
    """Compact binary example file: magic, count, then per example the
    class id and the space-joined context (tokens never contain spaces)."""
    with open(path, "wb") as fh:
        fh.write(_EXAMPLES_MAGIC)
        fh.write(struct.pack("<I", len(examples)))
        for ex in examples:
            blob = " ".join(ex.context_tokens).encode("utf-8")
            fh.write(struct.pack("<II", ex.class_id, len(blob)))
            fh.write(blob)


def read_examples(path) -> list[LabeledExample]:
    with open(path, "rb") as fh:
        magic = fh.read(len(_EXAMPLES_MAGIC))
        if magic != _EXAMPLES_MAGIC:
            raise ValidationError(f"{path}: not an examples file")
        (count,) = struct.unpack("<I", fh.read(4))
        examples = []
        for _ in range(count):
            class_id, blob_len = struct.unpack("<II", fh.read(8))
            blob = fh.read(blob_len).decode("utf-8")
            examples.append(LabeledExample(tuple(blob.split()), class_id))
        return examples
