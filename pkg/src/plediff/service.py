"""HTTP labeling and adaptation service.

Backs the browser labeling tool: issues query pairs, collects pairwise
labels (write-ahead to disk before acknowledging), runs preference
inversion as a background job with polled progress, and serves aligned
samples with oracle annotations.  One directory per session keeps every
artifact human-inspectable; sessions survive restarts.
"""

import json
import os
import secrets
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import FileResponse, JSONResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from .envdata import (
    OracleSpec,
    PreferenceLabel,
    make_query_pairs,
    oracle_reward,
    pairs_from_refs,
    resolve_labels,
)
from .evaluation import derive_seed, sample_dual
from .ple import InversionConfig, invert_preferences
from .sampling import GuidanceWeights


class ApiError(Exception):
    def __init__(self, status, code, message, fld=None):
        self.status, self.code, self.message, self.field = status, code, message, fld


def _err(status, code, message, fld=None):
    body = {"error": {"code": code, "message": message}}
    if fld:
        body["error"]["field"] = fld
    return JSONResponse(status_code=status, content=body)


class LabelBody(BaseModel):
    pair_id: str
    winner: str
    criteria: str | None = None


class AdaptBody(BaseModel):
    n_adapt: int | None = None
    u: float | None = None
    v: float | None = None


class SessionBody(BaseModel):
    user: str | None = None
    n_query: int | None = None


@dataclass
class Session:
    session_id: str
    directory: Path
    pairs: list
    labels: dict = field(default_factory=dict)  # pair_id -> PreferenceLabel
    queue: list = field(default_factory=list)  # pair ids still to label
    criteria: str = ""
    lock: threading.Lock = field(default_factory=threading.Lock, repr=False)
    job: dict = field(default_factory=lambda: {"state": "idle", "step": 0, "loss": None, "n_adapt": 0})
    embeddings: tuple = None  # (z_w, z_l) arrays
    sample_cache: dict = field(default_factory=dict)

    def pair(self, pair_id):
        for p in self.pairs:
            if p.pair_id == pair_id:
                return p
        return None


def _traj_payload(matrix, state_dim=2):
    return {
        "points": [[float(v) for v in row[:state_dim]] for row in matrix],
        "actions": [[float(v) for v in row[state_dim:]] for row in matrix],
    }


class LabelService:
    """Session bookkeeping on top of a pretrained checkpoint."""

    def __init__(self, result, corpus, out_dir, oracle=None, default_n_query=100):
        self.result = result
        self.corpus = corpus
        self.root = Path(out_dir) / "sessions"
        self.root.mkdir(parents=True, exist_ok=True)
        self.oracle = oracle or OracleSpec("speed")
        self.default_n_query = default_n_query
        self.sessions = {}
        self._load_existing()

    # -- persistence --------------------------------------------------------

    def _load_existing(self):
        for meta_path in sorted(self.root.glob("*/meta.json")):
            meta = json.loads(meta_path.read_text())
            sdir = meta_path.parent
            refs = json.loads((sdir / "pairs.json").read_text())
            pairs = pairs_from_refs(self.corpus, refs, self.result.config.model.horizon)
            order = json.loads((sdir / "order.json").read_text())
            by_id = {p.pair_id: p for p in pairs}
            sess = Session(
                session_id=meta["session_id"],
                directory=sdir,
                pairs=[by_id[i] for i in order],
                criteria=meta.get("criteria", ""),
            )
            labels_path = sdir / "labels.jsonl"
            if labels_path.exists():
                with open(labels_path, encoding="utf-8") as fh:
                    for line in fh:
                        rec = json.loads(line)
                        sess.labels[rec["pair_id"]] = PreferenceLabel(
                            pair_id=rec["pair_id"], winner=rec["winner"], source=rec["source"]
                        )
            sess.queue = [p.pair_id for p in sess.pairs if p.pair_id not in sess.labels]
            emb = sdir / "embeddings.json"
            if emb.exists():
                rec = json.loads(emb.read_text())
                sess.embeddings = (np.array(rec["z_w"]), np.array(rec["z_l"]))
                sess.job = {"state": "done", "step": rec["n_adapt"], "loss": rec.get("final_loss"), "n_adapt": rec["n_adapt"]}
            self.sessions[sess.session_id] = sess

    def _persist_labels(self, sess):
        # write-ahead: labels reach disk before the request is acknowledged
        path = sess.directory / "labels.jsonl"
        recs = []
        for pid in [p.pair_id for p in sess.pairs]:
            if pid in sess.labels:
                lab = sess.labels[pid]
                recs.append({"pair_id": lab.pair_id, "winner": lab.winner, "source": lab.source, "timestamp": int(time.time())})
        tmp = path.with_suffix(".jsonl.tmp")
        with open(tmp, "w", encoding="utf-8") as fh:
            for rec in recs:
                fh.write(json.dumps(rec, sort_keys=True, separators=(",", ":")) + "\n")
            fh.flush()
            os.fsync(fh.fileno())
        tmp.replace(path)

    # -- operations ----------------------------------------------------------

    def create_session(self, user=None, n_query=None):
        sid = secrets.token_hex(4)
        sdir = self.root / sid
        sdir.mkdir()
        n_query = n_query or self.default_n_query
        pairs = make_query_pairs(self.corpus, n_query, self.result.config.model.horizon, derive_seed("session", sid))
        sess = Session(session_id=sid, directory=sdir, pairs=pairs)
        sess.queue = [p.pair_id for p in pairs]
        (sdir / "meta.json").write_text(
            json.dumps({"session_id": sid, "user": user or "", "criteria": "", "created": int(time.time())})
        )
        (sdir / "pairs.json").write_text(
            json.dumps({p.pair_id: {"a": list(p.a.source), "b": list(p.b.source)} for p in pairs})
        )
        (sdir / "order.json").write_text(json.dumps([p.pair_id for p in pairs]))
        self.sessions[sid] = sess
        return sess

    def get(self, sid):
        sess = self.sessions.get(sid)
        if sess is None:
            raise ApiError(404, "not_found", f"unknown session {sid!r}")
        return sess

    def next_pair(self, sess):
        with sess.lock:
            if not sess.queue:
                return None
            pid = sess.queue[0]
        pair = sess.pair(pid)
        return pair

    def add_label(self, sess, pair_id, winner, criteria=None):
        if winner not in ("a", "b", "skip"):
            raise ApiError(400, "bad_request", "winner must be 'a', 'b' or 'skip'", fld="winner")
        with sess.lock:
            pair = sess.pair(pair_id)
            if pair is None:
                raise ApiError(404, "not_found", f"pair {pair_id!r} was not issued by this session", fld="pair_id")
            if winner == "skip":
                if pair_id in sess.queue:
                    sess.queue.remove(pair_id)
                    sess.queue.append(pair_id)
                return len(sess.labels)
            already = sess.labels.get(pair_id)
            if already is not None and already.winner == winner:
                return len(sess.labels)  # idempotent retry
            sess.labels[pair_id] = PreferenceLabel(pair_id=pair_id, winner=winner, source="human")
            if pair_id in sess.queue:
                sess.queue.remove(pair_id)
            if criteria:
                sess.criteria = criteria
                meta = json.loads((sess.directory / "meta.json").read_text())
                meta["criteria"] = criteria
                (sess.directory / "meta.json").write_text(json.dumps(meta))
            self._persist_labels(sess)
            return len(sess.labels)

    def start_adaptation(self, sess, n_adapt=None, u=None, v=None):
        with sess.lock:
            if not sess.labels:
                raise ApiError(409, "conflict", "no labels collected yet; adaptation needs at least one")
            if sess.job["state"] == "running":
                raise ApiError(409, "conflict", "an adaptation job is already running for this session")
            inv_default = self.result.config.inversion
            n_adapt = int(n_adapt or inv_default.n_adapt)
            job_id = secrets.token_hex(4)
            sess.job = {"state": "running", "step": 0, "loss": None, "n_adapt": n_adapt, "job_id": job_id}
            sess.sample_cache.clear()
        weights = GuidanceWeights(
            v=self.result.config.guidance.v if v is None else float(v),
            u=self.result.config.guidance.u if u is None else float(u),
        )

        def run():
            try:
                pairs = sess.pairs
                labels = list(sess.labels.values())
                resolved = resolve_labels(pairs, labels, self.result.normalizer)
                cfg = InversionConfig(
                    n_adapt=n_adapt,
                    batch_size=min(inv_default.batch_size, len(resolved)),
                    learning_rate=inv_default.learning_rate,
                    prior=inv_default.prior,
                    seed=derive_seed("adapt", sess.session_id),
                )

                def progress(step, loss):
                    sess.job.update(step=step, loss=loss)

                z_w, z_l, history = invert_preferences(
                    self.result.params, self.result.schedule, resolved, cfg, progress=progress
                )
                sess.embeddings = (z_w.z, z_l.z)
                sess.weights = weights
                (sess.directory / "embeddings.json").write_text(
                    json.dumps(
                        {
                            "z_w": z_w.z.tolist(),
                            "z_l": z_l.z.tolist(),
                            "n_adapt": n_adapt,
                            "u": weights.u,
                            "v": weights.v,
                            "final_loss": float(history[-1]),
                            "n_labels": len(resolved),
                        },
                        sort_keys=True,
                    )
                )
                sess.job.update(state="done", step=n_adapt, loss=float(history[-1]))
            except Exception as exc:  # surfaced through the status endpoint
                sess.job.update(state="failed", error=str(exc))

        threading.Thread(target=run, daemon=True).start()
        return job_id

    def samples(self, sess, n, seed):
        if sess.embeddings is None:
            raise ApiError(409, "conflict", "session has no adapted embeddings yet; run adapt first")
        key = (n, seed)
        if key not in sess.sample_cache:
            z_w, z_l = sess.embeddings
            weights = getattr(sess, "weights", self.result.config.guidance)
            raw = sample_dual(self.result.params, self.result.schedule, z_w, z_l, weights, n, seed)
            out = []
            for s in raw:
                mat = self.result.normalizer.denormalize(s)
                rec = _traj_payload(mat, self.result.config.model.state_dim)
                rec["reward"] = oracle_reward(self.oracle, mat, self.result.config.model.state_dim)
                out.append(rec)
            sess.sample_cache[key] = out
        return sess.sample_cache[key]


def create_app(service: LabelService, static_dir=None):
    app = FastAPI(title="plediff labeling service")

    @app.exception_handler(ApiError)
    async def handle_api_error(request: Request, exc: ApiError):
        return _err(exc.status, exc.code, exc.message, exc.field)

    @app.exception_handler(RequestValidationError)
    async def handle_validation(request: Request, exc: RequestValidationError):
        first = exc.errors()[0] if exc.errors() else {}
        fld = ".".join(str(p) for p in first.get("loc", []) if p != "body") or None
        return _err(400, "bad_request", first.get("msg", "malformed request body"), fld)

    @app.get("/healthz")
    def healthz():
        return {"status": "ok"}

    @app.post("/sessions")
    def create_session(body: SessionBody = None):
        body = body or SessionBody()
        sess = service.create_session(user=body.user, n_query=body.n_query)
        return {"session_id": sess.session_id, "n_pairs": len(sess.pairs)}

    @app.get("/sessions/{sid}/next-pair")
    def next_pair(sid: str):
        sess = service.get(sid)
        pair = service.next_pair(sess)
        if pair is None:
            return {"pair_id": None, "done": True, "labeled": len(sess.labels), "total": len(sess.pairs)}
        return {
            "pair_id": pair.pair_id,
            "a": _traj_payload(pair.a.matrix),
            "b": _traj_payload(pair.b.matrix),
            "labeled": len(sess.labels),
            "total": len(sess.pairs),
        }

    @app.post("/sessions/{sid}/labels")
    def post_label(sid: str, body: LabelBody):
        sess = service.get(sid)
        count = service.add_label(sess, body.pair_id, body.winner, body.criteria)
        return {"labels": count}

    @app.post("/sessions/{sid}/adapt", status_code=202)
    def post_adapt(sid: str, body: AdaptBody = None):
        sess = service.get(sid)
        body = body or AdaptBody()
        job_id = service.start_adaptation(sess, body.n_adapt, body.u, body.v)
        return {"job_id": job_id}

    @app.get("/sessions/{sid}/adapt/status")
    def adapt_status(sid: str):
        sess = service.get(sid)
        job = dict(sess.job)
        return job

    @app.get("/sessions/{sid}/samples")
    def get_samples(sid: str, n: int = 16, seed: int = 0):
        sess = service.get(sid)
        return {"samples": service.samples(sess, n, seed)}

    if static_dir is not None and Path(static_dir).is_dir():
        index = Path(static_dir) / "index.html"

        @app.get("/")
        def root():
            return FileResponse(index)

        app.mount("/ui", StaticFiles(directory=static_dir), name="ui")

    return app
