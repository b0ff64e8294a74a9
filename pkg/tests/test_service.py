import time

import pytest
from fastapi.testclient import TestClient

from kgexplain.feedback import correct_choice_index
from kgexplain.service import create_app, init_service_state


@pytest.fixture(scope="module")
def state_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("service") / "state"
    init_service_state(out, scale="mini", seed=0, rate=0.3)
    return out


@pytest.fixture(scope="module")
def client(state_dir):
    return TestClient(create_app(state_dir))


def test_uninitialized_state_returns_503(tmp_path):
    bare = TestClient(create_app(tmp_path / "empty"))
    assert bare.get("/inferences").status_code == 503


def test_pending_inferences_in_id_order(client):
    items = client.get("/inferences").json()
    assert len(items) > 0
    ids = [it["explanation_id"] for it in items]
    assert ids == sorted(ids)
    assert all(set(it) == {"explanation_id", "query", "predicted", "text"} for it in items)


def test_explanation_detail_has_five_options_per_hop(client):
    first = client.get("/inferences").json()[0]["explanation_id"]
    detail = client.get(f"/explanations/{first}").json()
    assert detail["id"] == first
    assert len(detail["review_hops"]) >= 1
    for hop in detail["review_hops"]:
        assert len(hop["options"]) == 5
        assert hop["options"][4] is None  # none-of-the-above
        assert hop["options"][0] == {"head": hop["head"], "relation": hop["relation"],
                                     "tail": hop["tail"]}


def test_unknown_explanation_404(client):
    assert client.get("/explanations/exp-zzz").status_code == 404


def test_repeated_get_identical(client):
    first = client.get("/inferences").json()[0]["explanation_id"]
    a = client.get(f"/explanations/{first}").json()
    b = client.get(f"/explanations/{first}").json()
    assert a == b


def test_correction_validation(client):
    first = client.get("/inferences").json()[0]["explanation_id"]
    assert client.post("/corrections", json={"explanation_id": "nope", "hop_index": 0,
                                             "chosen": 0}).status_code == 404
    assert client.post("/corrections", json={"explanation_id": first, "hop_index": 0,
                                             "chosen": 7}).status_code == 422
    assert client.post("/corrections", json={"explanation_id": first, "hop_index": 999,
                                             "chosen": 0}).status_code == 422


def test_correction_idempotent_on_duplicate(client):
    first = client.get("/inferences").json()[0]["explanation_id"]
    body = {"explanation_id": first, "hop_index": 0, "chosen": 1}
    r1 = client.post("/corrections", json=body)
    r2 = client.post("/corrections", json=body)
    assert r1.status_code == 201
    assert r1.json()["record_id"] == r2.json()["record_id"]


def test_full_review_cycle_improves_mrr(client, state_dir):
    session = client.post("/sessions").json()
    assert session["status"] == "open"
    assert session["explanation_ids"]

    # ground-truth selections on every hop of every queued explanation
    from kgexplain.service import ServiceState

    st = ServiceState(state_dir)
    st.load()
    by_corrupted = {st.graph.describe(i.corrupted): i for i in st.plan.items}
    for eid in session["explanation_ids"]:
        detail = client.get(f"/explanations/{eid}").json()
        for j, hop in enumerate(detail["review_hops"]):
            item = by_corrupted.get((hop["head"], hop["relation"], hop["tail"]))
            if item is None:
                chosen = 0  # the presented fact looks fine
            else:
                options = [None if o is None else st.graph.triple(o["head"], o["relation"], o["tail"])
                           for o in hop["options"]]
                chosen = correct_choice_index(options, item.original)
            r = client.post("/corrections", json={"explanation_id": eid, "hop_index": j,
                                                  "chosen": chosen,
                                                  "session_id": session["session_id"]})
            assert r.status_code == 201

    submitted = client.post(f"/sessions/{session['session_id']}/submit")
    assert submitted.status_code == 200
    # submitted explanations leave the pending queue
    pending_after = {it["explanation_id"] for it in client.get("/inferences").json()}
    assert not (pending_after & set(session["explanation_ids"]))
    # the submitted session rejects further corrections
    r = client.post("/corrections", json={"explanation_id": session["explanation_ids"][0],
                                          "hop_index": 0, "chosen": 2,
                                          "session_id": session["session_id"]})
    assert r.status_code == 409

    job = client.post("/retrain")
    assert job.status_code == 202
    job_id = job.json()["job_id"]
    # a second trigger while the first runs conflicts
    assert client.post("/retrain").status_code == 409

    deadline = time.time() + 180
    status = None
    while time.time() < deadline:
        status = client.get(f"/jobs/{job_id}").json()
        if status["status"] in ("done", "failed"):
            break
        time.sleep(1.0)
    assert status is not None and status["status"] == "done", status
    assert status["after"]["mrr"] > status["before"]["mrr"]


def test_restart_reconstructs_state(client, state_dir):
    # force the module fixture's mutations to disk, then rebuild from files
    n_records = len(client.app.state.service.records)
    fresh = TestClient(create_app(state_dir))
    items = fresh.get("/inferences?status=all").json()
    assert items == client.get("/inferences?status=all").json()
    assert len(fresh.app.state.service.records) == n_records


def test_job_listing_404(client):
    assert client.get("/jobs/job-zzz").status_code == 404
