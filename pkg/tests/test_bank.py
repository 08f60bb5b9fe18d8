import json

import pytest

from replybank.bank import (
    ASSIGN,
    CREATE,
    SKIP,
    MergeDecision,
    ResponseBank,
    ResponseClass,
    append_decision,
    apply_decision,
    auto_bank,
    centroid_text,
    extract_labeled_examples,
    load_bank,
    read_decision_log,
    read_examples,
    replay_decisions,
    save_bank,
    start_session,
    write_examples,
)
from replybank.clustering import Cluster
from replybank.corpus import (
    Conversation,
    LabeledExample,
    PreprocessedResponse,
    ResponseRecord,
    Turn,
    ValidationError,
)


def make_records(texts, counts=None):
    counts = counts or [2] * len(texts)
    return [
        ResponseRecord(i, PreprocessedResponse(t, frozenset({t}), c))
        for i, (t, c) in enumerate(zip(texts, counts))
    ]


def conv(*texts, cid="c"):
    speakers = ["patient" if i % 2 == 0 else "doctor" for i in range(len(texts))]
    return Conversation(cid, tuple(Turn(s, t, i) for i, (s, t) in enumerate(zip(speakers, texts))))


@pytest.fixture
def toy():
    records = make_records(
        ["how long have you had the symptoms", "how long have you had these symptoms",
         "take care", "drink water", "get rest"],
        counts=[9, 5, 7, 3, 2],
    )
    clusters = [
        Cluster(0, (0, 1), 0),   # occurrences 14
        Cluster(1, (2,), 2),     # 7
        Cluster(2, (3, 4), 3),   # 5
    ]
    return records, clusters


class TestSession:
    def test_empty_clusters_session_done(self):
        session = start_session([], [])
        assert session.done
        with pytest.raises(ValidationError):
            session.current_cluster()

    def test_queue_by_descending_occurrences(self, toy):
        records, clusters = toy
        session = start_session(clusters, records)
        assert session.queue == [0, 1, 2]

    def test_queue_order_spec_example(self):
        records = make_records(["a", "b", "c"], counts=[5, 9, 2])
        clusters = [Cluster(0, (0,), 0), Cluster(1, (1,), 1), Cluster(2, (2,), 2)]
        session = start_session(clusters, records)
        assert [session.occurrence_count(c) for c in session.queue] == [9, 5, 2]

    def test_queue_ties_by_cluster_id(self):
        records = make_records(["a", "b"], counts=[4, 4])
        clusters = [Cluster(1, (1,), 1), Cluster(0, (0,), 0)]
        session = start_session(clusters, records)
        assert session.queue == [0, 1]

    def test_create_uses_centroid_exemplar(self, toy):
        records, clusters = toy
        session = start_session(clusters, records)
        apply_decision(session, MergeDecision(cluster_id=0, action=CREATE))
        (cls,) = session.bank.classes
        assert cls.exemplar_text == "how long have you had the symptoms"
        assert cls.member_response_ids == {0, 1}
        assert cls.source_cluster_ids == {0}
        assert session.bank.version == 1
        assert session.cursor == 1

    def test_create_with_name(self, toy):
        records, clusters = toy
        session = start_session(clusters, records)
        apply_decision(session, MergeDecision(cluster_id=0, action=CREATE, name="duration"))
        assert session.bank.classes[0].name == "duration"

    def test_assign_adds_members(self, toy):
        records, clusters = toy
        session = start_session(clusters, records)
        apply_decision(session, MergeDecision(cluster_id=0, action=CREATE))
        apply_decision(session, MergeDecision(cluster_id=1, action=ASSIGN, class_id=0))
        (cls,) = session.bank.classes
        assert cls.member_response_ids == {0, 1, 2}
        assert cls.source_cluster_ids == {0, 1}
        assert session.bank.version == 2

    def test_skip_changes_nothing_but_cursor(self, toy):
        records, clusters = toy
        session = start_session(clusters, records)
        apply_decision(session, MergeDecision(cluster_id=0, action=SKIP))
        assert session.bank.classes == []
        assert session.bank.version == 0
        assert session.cursor == 1

    def test_non_cursor_decision_rejected(self, toy):
        records, clusters = toy
        session = start_session(clusters, records)
        with pytest.raises(ValidationError, match="cursor"):
            apply_decision(session, MergeDecision(cluster_id=2, action=SKIP))
        assert session.cursor == 0
        assert session.decisions == []

    def test_assign_unknown_class_rejected(self, toy):
        records, clusters = toy
        session = start_session(clusters, records)
        with pytest.raises(ValidationError, match="unknown class"):
            apply_decision(session, MergeDecision(cluster_id=0, action=ASSIGN, class_id=3))
        assert session.cursor == 0
        assert session.bank.version == 0

    def test_decision_after_completion_rejected(self):
        session = start_session([], [])
        with pytest.raises(ValidationError, match="complete"):
            apply_decision(session, MergeDecision(cluster_id=0, action=SKIP))

    def test_member_disjointness_after_full_session(self, toy):
        records, clusters = toy
        session = start_session(clusters, records)
        apply_decision(session, MergeDecision(cluster_id=0, action=CREATE))
        apply_decision(session, MergeDecision(cluster_id=1, action=ASSIGN, class_id=0))
        apply_decision(session, MergeDecision(cluster_id=2, action=CREATE))
        mapping = session.bank.member_class_map()
        assert mapping == {0: 0, 1: 0, 2: 0, 3: 1, 4: 1}


class TestReplay:
    def test_replay_reproduces_bank_byte_identically(self, toy, tmp_path):
        records, clusters = toy
        log = tmp_path / "decisions.ndjson"
        session = start_session(clusters, records)
        decisions = [
            MergeDecision(cluster_id=0, action=CREATE, name="ask duration", annotator="a1"),
            MergeDecision(cluster_id=1, action=ASSIGN, class_id=0, annotator="a1"),
            MergeDecision(cluster_id=2, action=SKIP, annotator="a1"),
        ]
        for d in decisions:
            append_decision(log, d)
            apply_decision(session, d)
        live = tmp_path / "live.json"
        replayed = tmp_path / "replayed.json"
        save_bank(session.bank, live)
        save_bank(replay_decisions(clusters, records, read_decision_log(log)), replayed)
        assert live.read_bytes() == replayed.read_bytes()

    def test_replay_prefix_property(self, toy):
        records, clusters = toy
        decisions = [
            MergeDecision(cluster_id=0, action=CREATE),
            MergeDecision(cluster_id=1, action=CREATE),
            MergeDecision(cluster_id=2, action=ASSIGN, class_id=1),
        ]
        for cut in range(len(decisions) + 1):
            session = start_session(clusters, records)
            for d in decisions[:cut]:
                apply_decision(session, d)
            assert session.bank == replay_decisions(clusters, records, decisions[:cut])

    def test_truncated_final_log_line_ignored(self, toy, tmp_path):
        records, clusters = toy
        log = tmp_path / "decisions.ndjson"
        append_decision(log, MergeDecision(cluster_id=0, action=SKIP))
        with open(log, "a", encoding="utf-8") as fh:
            fh.write('{"clusterId": 1, "action"')  # crashed mid-append
        decisions = read_decision_log(log)
        assert len(decisions) == 1

    def test_malformed_middle_line_is_error(self, toy, tmp_path):
        log = tmp_path / "decisions.ndjson"
        with open(log, "w", encoding="utf-8") as fh:
            fh.write("garbage\n")
            fh.write(json.dumps(MergeDecision(cluster_id=0, action=SKIP).to_dict()) + "\n")
        with pytest.raises(ValidationError, match="line 1"):
            read_decision_log(log)

    def test_decision_round_trip_with_metadata(self):
        d = MergeDecision(
            cluster_id=4, action=ASSIGN, class_id=2, timestamp="2026-01-01T00:00:00Z",
            annotator="doc7",
        )
        assert MergeDecision.from_dict(d.to_dict()) == d


class TestExemplarEdit:
    def test_edit_changes_only_exemplar_and_version(self, toy):
        records, clusters = toy
        bank = auto_bank(clusters, records)
        before_members = [set(c.member_response_ids) for c in bank.classes]
        v = bank.version
        bank.edit_exemplar(0, "How long have you had these symptoms?")
        assert bank.classes[0].exemplar_text == "How long have you had these symptoms?"
        assert [set(c.member_response_ids) for c in bank.classes] == before_members
        assert bank.version == v + 1

    def test_edit_identical_text_still_bumps_version(self, toy):
        records, clusters = toy
        bank = auto_bank(clusters, records)
        v = bank.version
        bank.edit_exemplar(0, bank.classes[0].exemplar_text)
        assert bank.version == v + 1

    def test_edit_unknown_class(self, toy):
        records, clusters = toy
        bank = auto_bank(clusters, records)
        with pytest.raises(ValidationError, match="unknown class"):
            bank.edit_exemplar(99, "x")

    def test_edit_empty_text(self, toy):
        records, clusters = toy
        bank = auto_bank(clusters, records)
        with pytest.raises(ValidationError, match="non-empty"):
            bank.edit_exemplar(0, "   ")

    def test_edit_does_not_change_extraction(self, toy):
        records, clusters = toy
        bank = auto_bank(clusters, records)
        convs = [conv("q", "Take care!", cid=f"c{i}") for i in range(3)]
        before = extract_labeled_examples(convs, bank, records, 6, 304)
        bank.edit_exemplar(1, "different serving text")
        after = extract_labeled_examples(convs, bank, records, 6, 304)
        assert before.examples == after.examples


class TestAutoBank:
    def test_one_class_per_cluster(self, toy):
        records, clusters = toy
        bank = auto_bank(clusters, records)
        assert len(bank.classes) == len(clusters)
        assert bank.version == 1

    def test_singleton_exemplar_is_member_text(self, toy):
        records, clusters = toy
        bank = auto_bank(clusters, records)
        assert bank.classes[1].exemplar_text == "take care"

    def test_empty_clusters(self):
        bank = auto_bank([], [])
        assert bank.classes == []
        assert bank.version == 0

    def test_centroid_text_helper(self, toy):
        records, clusters = toy
        by_id = {r.response_id: r for r in records}
        assert centroid_text(clusters[1], by_id) == "take care"


class TestBankPersistence:
    def test_round_trip(self, toy, tmp_path):
        records, clusters = toy
        bank = auto_bank(clusters, records)
        bank.edit_exemplar(0, "edited")
        path = tmp_path / "bank.json"
        save_bank(bank, path)
        loaded = load_bank(path)
        assert loaded == bank

    def test_disjointness_enforced_on_load(self, tmp_path):
        payload = {
            "version": 1,
            "classes": [
                {"classId": 0, "name": "a", "exemplarText": "a", "members": [0, 1],
                 "sourceClusters": [0]},
                {"classId": 1, "name": "b", "exemplarText": "b", "members": [1],
                 "sourceClusters": [1]},
            ],
        }
        path = tmp_path / "bank.json"
        path.write_text(json.dumps(payload))
        with pytest.raises(ValidationError, match="belongs to classes"):
            load_bank(path)

    def test_save_is_byte_deterministic(self, toy, tmp_path):
        records, clusters = toy
        bank = auto_bank(clusters, records)
        p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
        save_bank(bank, p1)
        save_bank(bank, p2)
        assert p1.read_bytes() == p2.read_bytes()


class TestExtraction:
    def test_full_coverage_bank(self, toy):
        records, clusters = toy
        bank = auto_bank(clusters, records)
        convs = [
            conv("q1", "Take care!", "q2", "Drink water.", cid="c1"),
            conv("q3", "take care", cid="c2"),
        ]
        result = extract_labeled_examples(convs, bank, records, 6, 304)
        assert result.labeled_fraction == 1.0
        assert result.total_doctor_turns == 3
        assert [ex.class_id for ex in result.examples] == [1, 2, 1]

    def test_unknown_responses_skipped(self, toy):
        records, clusters = toy
        bank = auto_bank(clusters, records)
        convs = [conv("q", "something never clustered", cid="c1")]
        result = extract_labeled_examples(convs, bank, records, 6, 304)
        assert result.examples == ()
        assert result.labeled_fraction == 0.0

    def test_conversation_opening_doctor_turn_skipped(self, toy):
        records, clusters = toy
        bank = auto_bank(clusters, records)
        c = Conversation("c", (Turn("doctor", "take care", 0),))
        result = extract_labeled_examples([c], bank, records, 6, 304)
        assert result.examples == ()
        assert result.total_doctor_turns == 1

    def test_context_is_previous_turns(self, toy):
        records, clusters = toy
        bank = auto_bank(clusters, records)
        convs = [conv("I am unwell", "take care", cid="c1")]
        result = extract_labeled_examples(convs, bank, records, 6, 304)
        (ex,) = result.examples
        assert ex.context_tokens == ("<p_start>", "i", "am", "unwell")

    def test_empty_bank_rejected(self, toy):
        records, _ = toy
        with pytest.raises(ValidationError, match="empty bank"):
            extract_labeled_examples([], ResponseBank(), records, 6, 304)


class TestExamplesFile:
    def test_round_trip(self, tmp_path):
        examples = [
            LabeledExample(("<p_start>", "hi", "there"), 3),
            LabeledExample(("<d_start>", "ok"), 0),
            LabeledExample((), 1),
        ]
        path = tmp_path / "examples.bin"
        write_examples(examples, path)
        assert read_examples(path) == examples

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "examples.bin"
        path.write_bytes(b"NOTRIGHT")
        with pytest.raises(ValidationError, match="not an examples file"):
            read_examples(path)

    def test_unicode_tokens(self, tmp_path):
        examples = [LabeledExample(("café", "你好"), 2)]
        path = tmp_path / "ex.bin"
        write_examples(examples, path)
        assert read_examples(path) == examples


def test_response_class_dataclass_shape():
    cls = ResponseClass(0, "name", {1, 2}, "exemplar", {0})
    assert cls.class_id == 0 and cls.member_response_ids == {1, 2}
