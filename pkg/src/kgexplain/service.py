"""HTTP/JSON service for the human correction loop.

Serves pending explanations of suspect inferences, accepts per-hop
corrections through the 5-option interface, and retrains on demand.  All
state lives in flat files under one directory (dataset snapshots, corruption
plan, checkpoint, explanation store, an append-only correction log, and job
records), so restarting the process reconstructs the same service.
"""

from __future__ import annotations

import json
import threading
from dataclasses import asdict, replace
from pathlib import Path

from fastapi import FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from .data import DatasetSplits, KnowledgeGraph, load_dataset, save_dataset
from .embedding import TrainConfig, classify, link_prediction, load_model, save_model, train
from .explain import TemplateSet
from .feedback import (
    CorrectionRecord,
    apply_corrections,
    apply_corruption_plan,
    explain_misclassified,
    make_corruption_plan,
    plan_from_dict,
    plan_to_dict,
    propose_options,
    record_from_dict,
    record_to_dict,
)
from .surrogate import SurrogateConfig
from .synth import HouseholdSpec, generate_household, mini_spec

DEFAULT_SERVICE_TRAIN = TrainConfig(d_e=32, d_r=32, learning_rate=0.8, epochs=600,
                                    batch_size=512, negative_ratio=2, label_smoothing=0.0)


def _narrated_review_hops(explanation_doc: dict, plan_items: list[dict],
                          reviewable_queries: set | None = None) -> list[dict]:
    """Unique hops of the best grounding per relation path, in narration
    order; each tagged with the slot to vary when proposing options.  When
    the query itself is a suspect dataset fact it leads the list, so the
    reviewer can correct the belief directly."""
    slot_by_triple = {}
    for item in plan_items:
        c = item["corrupted"]
        slot_by_triple[(c["head"], c["relation"], c["tail"])] = item["slot"]
    hops: list[dict] = []
    seen_hops = set()

    def push(doc_triple: dict) -> None:
        ident = (doc_triple["head"], doc_triple["relation"], doc_triple["tail"])
        if ident in seen_hops:
            return
        seen_hops.add(ident)
        hops.append({"head": ident[0], "relation": ident[1], "tail": ident[2],
                     "slot": slot_by_triple.get(ident, "tail")})

    q = explanation_doc["query"]
    if reviewable_queries and (q["head"], q["relation"], q["tail"]) in reviewable_queries:
        push(q)
    seen_paths = set()
    for path in explanation_doc["paths"]:
        key = tuple((s["relation"], s["direction"]) for s in path["steps"])
        if key in seen_paths:
            continue
        seen_paths.add(key)
        for hop in path["hops"]:
            push(hop)
    return hops


def init_service_state(state_dir: Path, scale: str = "mini", seed: int = 0, rate: float = 0.3,
                       train_cfg: TrainConfig | None = None, max_explanations: int = 200) -> None:
    """Build a seeded corrupted fixture: clean dataset, corruption plan,
    embedding trained on the corrupted data, and a pending explanation store."""
    state_dir = Path(state_dir)
    state_dir.mkdir(parents=True, exist_ok=True)
    spec = mini_spec(seed=seed) if scale == "mini" else HouseholdSpec(seed=seed)
    splits, graph = generate_household(spec)
    # JSON carries the vocab order, keeping ids aligned with the checkpoint
    save_dataset(splits, graph, state_dir / "dataset_clean.json", format="json")

    plan = make_corruption_plan(splits, rate, seed, n_entities=graph.n_entities)
    corrupted = apply_corruption_plan(splits, plan)
    _save_corrupted_train(state_dir, corrupted, graph)
    with open(state_dir / "plan.json", "w", encoding="utf-8") as f:
        json.dump(plan_to_dict(plan, graph), f, indent=1)

    cfg = replace(train_cfg or DEFAULT_SERVICE_TRAIN, seed=seed)
    model = train(corrupted, cfg, n_entities=graph.n_entities, n_relations=graph.n_relations)
    save_model(model, state_dir / "model.npz")

    meta = {"scale": scale, "seed": seed, "rate": rate, "wrong_choice_mode": "retain",
            "max_explanations": max_explanations, "train": asdict(cfg)}
    with open(state_dir / "meta.json", "w", encoding="utf-8") as f:
        json.dump(meta, f, indent=1)

    _write_explanations(state_dir, corrupted, graph, model, plan, max_explanations)
    (state_dir / "corrections.jsonl").write_text("", encoding="utf-8")
    with open(state_dir / "jobs.json", "w", encoding="utf-8") as f:
        json.dump({}, f)
    with open(state_dir / "sessions.json", "w", encoding="utf-8") as f:
        json.dump({}, f)


def _save_corrupted_train(state_dir: Path, corrupted, graph: KnowledgeGraph) -> None:
    # only train gets corrupted; valid/test stay clean and live in dataset_clean
    train_only = DatasetSplits(train=list(corrupted.train), valid=[], test=[])
    save_dataset(train_only, graph, state_dir / "dataset_corrupted_train.json", format="json")


def _write_explanations(state_dir: Path, splits, graph: KnowledgeGraph, model, plan,
                        limit: int) -> None:
    templates = TemplateSet.household()
    corrupted_believed = [i.corrupted for i in plan.items if classify(model, i.corrupted)]
    surrogate_cfg = SurrogateConfig(k_substitution=1, eval_sample=None)
    # features and pools must reflect the graph the model was trained on
    graph_hat = KnowledgeGraph.from_triples(graph.entities, graph.relations,
                                            splits.positives("train"))
    found = explain_misclassified(splits, graph_hat, model, templates, surrogate_cfg,
                                  limit=limit, extra_queries=corrupted_believed)
    plan_doc = plan_to_dict(plan, graph)
    train_triples = {lt.triple for lt in splits.train}
    reviewable = set()
    for item in plan_doc["items"]:
        c = item["corrupted"]
        if graph.triple(c["head"], c["relation"], c["tail"]) in train_triples:
            reviewable.add((c["head"], c["relation"], c["tail"]))
    store = []
    for q, exp in found:
        doc = exp.to_dict(graph.entities, graph.relations)
        review_hops = _narrated_review_hops(doc, plan_doc["items"], reviewable)
        if not review_hops:
            continue  # nothing a reviewer could act on
        store.append({
            "id": f"exp-{len(store):03d}",
            "status": "pending",
            "query": doc["query"],
            "predicted": doc["predicted"],
            "text": doc["text"],
            "paths": doc["paths"],
            "template_version": doc["template_version"],
            "review_hops": review_hops,
        })
    with open(state_dir / "explanations.json", "w", encoding="utf-8") as f:
        json.dump(store, f, indent=1)


class ServiceState:
    REQUIRED = ("dataset_clean.json", "dataset_corrupted_train.json", "plan.json",
                "model.npz", "explanations.json", "meta.json")

    def __init__(self, state_dir: Path):
        self.dir = Path(state_dir)
        self.lock = threading.Lock()
        self.loaded = False

    def ready(self) -> bool:
        return all((self.dir / name).exists() for name in self.REQUIRED)

    def load(self) -> None:
        if self.loaded:
            return
        if not self.ready():
            raise HTTPException(status_code=503, detail="service state not initialized")
        self.clean_splits, self.graph = load_dataset(self.dir / "dataset_clean.json", format="json")
        corrupted_train, _ = load_dataset(self.dir / "dataset_corrupted_train.json", format="json")
        self.corrupted_splits = DatasetSplits(train=corrupted_train.train,
                                              valid=list(self.clean_splits.valid),
                                              test=list(self.clean_splits.test))
        with open(self.dir / "plan.json", encoding="utf-8") as f:
            self.plan = plan_from_dict(json.load(f), self.graph)
        with open(self.dir / "meta.json", encoding="utf-8") as f:
            self.meta = json.load(f)
        self.model = load_model(self.dir / "model.npz")
        with open(self.dir / "explanations.json", encoding="utf-8") as f:
            self.explanations = {doc["id"]: doc for doc in json.load(f)}
        self.records: list[dict] = []
        log = self.dir / "corrections.jsonl"
        if log.exists():
            for line in log.read_text(encoding="utf-8").splitlines():
                if line.strip():
                    self.records.append(json.loads(line))
        with open(self.dir / "jobs.json", encoding="utf-8") as f:
            self.jobs: dict[str, dict] = json.load(f)
        with open(self.dir / "sessions.json", encoding="utf-8") as f:
            self.sessions: dict[str, dict] = json.load(f)
        self.loaded = True

    def persist_jobs(self) -> None:
        with open(self.dir / "jobs.json", "w", encoding="utf-8") as f:
            json.dump(self.jobs, f, indent=1)

    def persist_sessions(self) -> None:
        with open(self.dir / "sessions.json", "w", encoding="utf-8") as f:
            json.dump(self.sessions, f, indent=1)

    def persist_explanations(self) -> None:
        with open(self.dir / "explanations.json", "w", encoding="utf-8") as f:
            json.dump(list(self.explanations.values()), f, indent=1)

    def append_record(self, doc: dict) -> None:
        self.records.append(doc)
        with open(self.dir / "corrections.jsonl", "a", encoding="utf-8") as f:
            f.write(json.dumps(doc, sort_keys=True) + "\n")

    def running_job(self) -> dict | None:
        for job in self.jobs.values():
            if job["status"] in ("queued", "running"):
                return job
        return None


class CorrectionIn(BaseModel):
    explanation_id: str
    hop_index: int
    chosen: int
    session_id: str | None = None


def create_app(state_dir: Path, static_dir: str | None = None) -> FastAPI:
    app = FastAPI(title="kgexplain review service")
    app.add_middleware(CORSMiddleware, allow_origins=["*"], allow_methods=["*"],
                       allow_headers=["*"])
    state = ServiceState(Path(state_dir))
    app.state.service = state

    def ready_state() -> ServiceState:
        state.load()
        return state

    @app.get("/inferences")
    def list_inferences(status: str = "pending"):
        st = ready_state()
        out = []
        for doc in sorted(st.explanations.values(), key=lambda d: d["id"]):
            if status != "all" and doc["status"] != status:
                continue
            out.append({"explanation_id": doc["id"], "query": doc["query"],
                        "predicted": doc["predicted"], "text": doc["text"]})
        return out

    @app.get("/explanations/{explanation_id}")
    def get_explanation(explanation_id: str):
        st = ready_state()
        doc = st.explanations.get(explanation_id)
        if doc is None:
            raise HTTPException(status_code=404, detail="unknown explanation")
        hops = []
        for hop in doc["review_hops"]:
            triple = st.graph.triple(hop["head"], hop["relation"], hop["tail"])
            options = propose_options(triple, st.model, hop["slot"])
            rendered = []
            for opt in options:
                if opt is None:
                    rendered.append(None)
                else:
                    h, r, t = st.graph.describe(opt)
                    rendered.append({"head": h, "relation": r, "tail": t})
            hops.append({**hop, "options": rendered})
        return {**doc, "review_hops": hops}

    @app.post("/corrections", status_code=201)
    def post_correction(body: CorrectionIn):
        st = ready_state()
        doc = st.explanations.get(body.explanation_id)
        if doc is None:
            raise HTTPException(status_code=404, detail="unknown explanation")
        if not 0 <= body.chosen < 5:
            raise HTTPException(status_code=422, detail="chosen must be in [0, 5)")
        if not 0 <= body.hop_index < len(doc["review_hops"]):
            raise HTTPException(status_code=422, detail="hop_index out of range")
        if body.session_id is not None:
            session = st.sessions.get(body.session_id)
            if session is None:
                raise HTTPException(status_code=404, detail="unknown session")
            if session["status"] == "submitted":
                raise HTTPException(status_code=409, detail="session already submitted")
        with st.lock:
            for rec in st.records:
                if (rec["explanation_id"] == body.explanation_id
                        and rec["hop_index"] == body.hop_index and rec["chosen"] == body.chosen):
                    return rec
            hop = doc["review_hops"][body.hop_index]
            triple = st.graph.triple(hop["head"], hop["relation"], hop["tail"])
            options = propose_options(triple, st.model, hop["slot"])
            record = CorrectionRecord(
                explanation_id=body.explanation_id, hop=triple, options=options,
                chosen=body.chosen, source="human",
            )
            payload = record_to_dict(record, st.graph)
            payload["record_id"] = f"corr-{len(st.records):04d}"
            payload["hop_index"] = body.hop_index
            payload["session_id"] = body.session_id
            st.append_record(payload)
            return payload

    @app.post("/sessions", status_code=201)
    def create_session():
        st = ready_state()
        with st.lock:
            pending = [d["id"] for d in sorted(st.explanations.values(), key=lambda d: d["id"])
                       if d["status"] == "pending"]
            session = {"session_id": f"session-{len(st.sessions):03d}", "status": "open",
                       "explanation_ids": pending, "cursor": 0}
            st.sessions[session["session_id"]] = session
            st.persist_sessions()
            return session

    @app.get("/sessions/{session_id}")
    def get_session(session_id: str):
        st = ready_state()
        session = st.sessions.get(session_id)
        if session is None:
            raise HTTPException(status_code=404, detail="unknown session")
        return session

    @app.post("/sessions/{session_id}/submit")
    def submit_session(session_id: str):
        st = ready_state()
        session = st.sessions.get(session_id)
        if session is None:
            raise HTTPException(status_code=404, detail="unknown session")
        with st.lock:
            if session["status"] == "submitted":
                raise HTTPException(status_code=409, detail="session already submitted")
            session["status"] = "submitted"
            for eid in session["explanation_ids"]:
                if eid in st.explanations:
                    st.explanations[eid]["status"] = "submitted"
            st.persist_sessions()
            st.persist_explanations()
            return session

    @app.post("/retrain", status_code=202)
    def retrain():
        st = ready_state()
        with st.lock:
            if st.running_job() is not None:
                raise HTTPException(status_code=409, detail="a retrain job is already running")
            job = {"job_id": f"job-{len(st.jobs):03d}", "status": "queued",
                   "before": None, "after": None, "error": None}
            st.jobs[job["job_id"]] = job
            st.persist_jobs()
        thread = threading.Thread(target=_run_retrain, args=(st, job["job_id"]), daemon=True)
        thread.start()
        return {"job_id": job["job_id"], "status": job["status"]}

    @app.get("/jobs/{job_id}")
    def get_job(job_id: str):
        st = ready_state()
        job = st.jobs.get(job_id)
        if job is None:
            raise HTTPException(status_code=404, detail="unknown job")
        return job

    if static_dir and Path(static_dir).exists():
        app.mount("/", StaticFiles(directory=static_dir, html=True), name="ui")
    return app


def _run_retrain(st: ServiceState, job_id: str) -> None:
    job = st.jobs[job_id]
    try:
        with st.lock:
            job["status"] = "running"
            st.persist_jobs()
            records = [record_from_dict(doc, st.graph) for doc in st.records]

        before = link_prediction(st.model, st.clean_splits).to_dict()
        corrected = apply_corrections(st.corrupted_splits, st.plan, records,
                                      st.meta.get("wrong_choice_mode", "retain"),
                                      ignore_unknown=True)
        cfg = TrainConfig(**st.meta["train"])
        model = train(corrected, cfg, n_entities=st.graph.n_entities,
                      n_relations=st.graph.n_relations)
        after = link_prediction(model, st.clean_splits).to_dict()

        with st.lock:
            save_model(model, st.dir / "model.npz")
            _save_corrupted_train(st.dir, corrected, st.graph)
            st.model = model
            st.corrupted_splits = corrected
            corrected_train = {lt.triple for lt in corrected.train}
            remaining = [i for i in st.plan.items if i.corrupted in corrected_train]
            _write_explanations(st.dir, corrected, st.graph, model,
                                replace(st.plan, items=remaining),
                                st.meta.get("max_explanations", 6))
            with open(st.dir / "explanations.json", encoding="utf-8") as f:
                st.explanations = {doc["id"]: doc for doc in json.load(f)}
            job["status"] = "done"
            job["before"] = before
            job["after"] = after
            st.persist_jobs()
    except Exception as e:  # the job must record its own failure
        with st.lock:
            job["status"] = "failed"
            job["error"] = str(e)
            st.persist_jobs()
