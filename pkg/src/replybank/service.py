"""HTTP service: suggestion inference, bank browsing and editing, and
merge-session endpoints for the review UI.

The exemplar text is looked up against the live bank at request time,
not baked into the model, so editing an exemplar changes what is served
without retraining.  Bank mutations and session decisions go through a
single lock; decisions are appended to the durable log before they are
applied, so a crash between the two leaves no partially applied state.
"""

from __future__ import annotations

import hashlib
import logging
import os
import tempfile
import threading
import time
from pathlib import Path

from fastapi import FastAPI, HTTPException, Request
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel, Field

from . import bank as bank_mod
from . import classifier as clf
from . import clustering, corpus
from .corpus import ValidationError

logger = logging.getLogger(__name__)


class TurnIn(BaseModel):
    speaker: str
    text: str
    # optional identity spans: [start, end, "patient"|"doctor"]
    pii: list[tuple[int, int, str]] = Field(default_factory=list)


class SuggestRequest(BaseModel):
    turns: list[TurnIn]
    maxTurns: int = corpus.DEFAULT_MAX_TURNS
    includeProbabilities: bool = False


class ExemplarEdit(BaseModel):
    exemplarText: str


class DecisionAction(BaseModel):
    type: str
    classId: int | None = None
    name: str | None = None


class DecisionRequest(BaseModel):
    cursor: int
    action: DecisionAction
    annotator: str = ""


class ServiceState:
    """Everything the handlers touch.  Reads are lock-free snapshots;
    all mutation happens under ``lock``."""

    def __init__(
        self,
        model: clf.ClassifierModel | None = None,
        extractor: clf.FeatureExtractor | None = None,
        model_version: str | None = None,
        bank: bank_mod.ResponseBank | None = None,
        bank_path: Path | None = None,
        clusters: list | None = None,
        records: list | None = None,
        decision_log: Path | None = None,
    ):
        self.model = model
        self.extractor = extractor
        self.model_version = model_version
        self.bank = bank if bank is not None else bank_mod.ResponseBank()
        self.bank_path = bank_path
        self.clusters = clusters or []
        self.records = records or []
        self.decision_log = decision_log
        self.sessions: dict[str, bank_mod.MergeSession] = {}
        self.lock = threading.Lock()
        self._session_counter = 0

    def new_session_id(self) -> str:
        self._session_counter += 1
        return f"s{self._session_counter}"

    def persist_bank(self) -> None:
        """Write the bank to disk atomically (write-new, then rename)."""
        if self.bank_path is None:
            return
        path = Path(self.bank_path)
        fd, tmp = tempfile.mkstemp(dir=str(path.parent), prefix=path.name, suffix=".tmp")
        os.close(fd)
        try:
            bank_mod.save_bank(self.bank, tmp)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise


def _utc_now() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())


def create_app(
    model_path=None,
    bank_path=None,
    clusters_path=None,
    responses_path=None,
    decision_log_path=None,
    threshold_override: float | None = None,
    static_dir=None,
) -> FastAPI:
    model = extractor = model_version = None
    if model_path is not None:
        model, extractor = clf.load_model(model_path)
        model_version = hashlib.sha256(Path(model_path).read_bytes()).hexdigest()[:12]
        if threshold_override is not None:
            model.opt_out_threshold = float(threshold_override)

    bank = None
    if bank_path is not None and Path(bank_path).exists():
        bank = bank_mod.load_bank(bank_path)

    clusters = clustering.read_clusters_json(clusters_path) if clusters_path else []
    records = corpus.read_responses_tsv(responses_path) if responses_path else []

    state = ServiceState(
        model=model,
        extractor=extractor,
        model_version=model_version,
        bank=bank,
        bank_path=Path(bank_path) if bank_path else None,
        clusters=clusters,
        records=records,
        decision_log=Path(decision_log_path) if decision_log_path else None,
    )

    app = FastAPI(title="replybank", docs_url=None, redoc_url=None)
    app.state.service = state

    @app.middleware("http")
    async def log_requests(request: Request, call_next):
        start = time.perf_counter()
        response = await call_next(request)
        logger.info(
            "%s %s -> %d (%.1f ms)",
            request.method,
            request.url.path,
            response.status_code,
            (time.perf_counter() - start) * 1000.0,
        )
        return response

    @app.post("/v1/suggest")
    def suggest(req: SuggestRequest):
        start = time.perf_counter()
        if state.model is None:
            raise HTTPException(503, "no model loaded")
        if state.model.num_classes != len(state.bank.classes):
            raise HTTPException(
                409,
                f"model expects {state.model.num_classes} classes, "
                f"bank has {len(state.bank.classes)}",
            )
        if req.maxTurns < 1:
            raise HTTPException(422, "maxTurns must be >= 1")
        messages = [
            {"speaker": t.speaker, "text": t.text, "pii": [list(s) for s in t.pii]}
            for t in req.turns
        ]
        try:
            turns = corpus.merge_turns(messages, "request")
        except ValidationError as exc:
            raise HTTPException(422, str(exc)) from exc
        if not turns:
            raise HTTPException(422, "at least one non-empty turn required")
        if turns[-1].speaker != corpus.PATIENT:
            raise HTTPException(422, "last turn must be the patient's")
        conversation = corpus.Conversation("live", turns)
        tokens = corpus.assemble_context(conversation, len(turns), req.maxTurns)
        pred = clf.predict(state.model, state.extractor.transform(tokens))
        payload = {
            "abstained": pred.abstained,
            "maxProb": pred.max_prob,
            "bankVersion": state.bank.version,
            "modelVersion": state.model_version,
            "latencyMs": (time.perf_counter() - start) * 1000.0,
        }
        if not pred.abstained:
            cls = state.bank.get_class(pred.top_class_id)
            payload["suggestion"] = {"classId": cls.class_id, "exemplarText": cls.exemplar_text}
        if req.includeProbabilities:
            payload["probabilities"] = [float(p) for p in pred.probabilities]
        return payload

    @app.get("/v1/bank")
    def get_bank():
        return state.bank.to_dict()

    @app.put("/v1/bank/classes/{class_id}/exemplar")
    def put_exemplar(class_id: int, body: ExemplarEdit):
        with state.lock:
            try:
                state.bank.get_class(class_id)
            except ValidationError as exc:
                raise HTTPException(404, str(exc)) from exc
            if not body.exemplarText.strip():
                raise HTTPException(400, "exemplar text must be non-empty")
            state.bank.edit_exemplar(class_id, body.exemplarText)
            state.persist_bank()
            return {
                "classId": class_id,
                "exemplarText": body.exemplarText,
                "bankVersion": state.bank.version,
            }

    @app.get("/v1/bank/stats")
    def bank_stats():
        classes = state.bank.classes
        sizes = [len(c.member_response_ids) for c in classes]
        payload = {
            "version": state.bank.version,
            "numClasses": len(classes),
            "totalMembers": sum(sizes),
            "largestClassSize": max(sizes, default=0),
        }
        if state.records:
            by_id = {r.response_id: r for r in state.records}
            members = set()
            for c in classes:
                members.update(c.member_response_ids)
            covered = sum(by_id[m].count for m in members if m in by_id)
            total = sum(r.count for r in state.records)
            payload["memberOccurrences"] = covered
            payload["totalOccurrences"] = total
            payload["occurrenceCoverage"] = covered / total if total else 0.0
        return payload

    def _get_session(session_id: str) -> bank_mod.MergeSession:
        session = state.sessions.get(session_id)
        if session is None:
            raise HTTPException(404, f"unknown session {session_id!r}")
        return session

    @app.post("/v1/sessions", status_code=201)
    def create_session():
        if not state.clusters or not state.records:
            raise HTTPException(503, "no clusters loaded; start the service with --clusters/--responses")
        with state.lock:
            session_id = state.new_session_id()
            # The session shares the live bank, so decisions are visible
            # to /v1/suggest and /v1/bank immediately.
            state.sessions[session_id] = bank_mod.start_session(
                state.clusters, state.records, bank=state.bank
            )
            session = state.sessions[session_id]
        return {
            "sessionId": session_id,
            "queueLength": len(session.queue),
            "cursor": session.cursor,
            "bankVersion": session.bank.version,
        }

    @app.get("/v1/sessions/{session_id}/next")
    def session_next(session_id: str):
        session = _get_session(session_id)
        if session.done:
            return {"done": True, "cursor": session.cursor, "queueLength": len(session.queue)}
        cluster = session.current_cluster()
        sample = [
            session.records[mid].normalized_text for mid in sorted(cluster.member_ids)[:10]
        ]
        return {
            "done": False,
            "clusterId": cluster.cluster_id,
            "centroidText": bank_mod.centroid_text(cluster, session.records),
            "occurrenceCount": session.occurrence_count(cluster.cluster_id),
            "sampleMembers": sample,
            "existingClasses": [
                {
                    "classId": c.class_id,
                    "name": c.name,
                    "exemplarText": c.exemplar_text,
                    "memberCount": len(c.member_response_ids),
                }
                for c in session.bank.classes
            ],
            "cursor": session.cursor,
            "queueLength": len(session.queue),
        }

    @app.post("/v1/sessions/{session_id}/decisions")
    def post_decision(session_id: str, body: DecisionRequest):
        with state.lock:
            session = _get_session(session_id)
            if session.done:
                raise HTTPException(409, "session is complete")
            if body.cursor != session.cursor:
                raise HTTPException(
                    409, f"stale cursor {body.cursor}, server is at {session.cursor}"
                )
            if body.action.type not in (bank_mod.ASSIGN, bank_mod.CREATE, bank_mod.SKIP):
                raise HTTPException(422, f"unknown action {body.action.type!r}")
            if body.action.type == bank_mod.ASSIGN:
                if body.action.classId is None:
                    raise HTTPException(422, "assign requires classId")
                try:
                    session.bank.get_class(body.action.classId)
                except ValidationError as exc:
                    raise HTTPException(422, str(exc)) from exc
            decision = bank_mod.MergeDecision(
                cluster_id=session.queue[session.cursor],
                action=body.action.type,
                class_id=body.action.classId,
                name=body.action.name,
                timestamp=_utc_now(),
                annotator=body.annotator,
            )
            # Durable log first; apply cannot fail after the checks above,
            # so a crash never leaves a half-applied decision.
            if state.decision_log is not None:
                bank_mod.append_decision(state.decision_log, decision)
            bank_mod.apply_decision(session, decision)
            state.persist_bank()
            return {
                "applied": True,
                "cursor": session.cursor,
                "done": session.done,
                "bankVersion": session.bank.version,
            }

    @app.get("/v1/sessions/{session_id}/summary")
    def session_summary(session_id: str):
        session = _get_session(session_id)
        members: set[int] = set()
        for c in session.bank.classes:
            members.update(c.member_response_ids)
        total = sum(r.count for r in session.records.values())
        covered = sum(session.records[m].count for m in members if m in session.records)
        return {
            "classesCreated": sum(1 for d in session.decisions if d.action == bank_mod.CREATE),
            "clustersReviewed": session.cursor,
            "queueLength": len(session.queue),
            "labeledCoverage": covered / total if total else 0.0,
            "bankVersion": session.bank.version,
        }

    if static_dir is not None:
        app.mount("/", StaticFiles(directory=str(static_dir), html=True), name="ui")

    return app
