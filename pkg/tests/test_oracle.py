import json
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import numpy as np
import pytest

from semnav.memory import CognitiveMemoryGraph, ObjectNode, VisualAnchor
from semnav.oracle import (AnchorDescriptor, CountingOracle, Instruction, InstructionDecomposition, MockOracle,
                           NoTarget, OracleError, OracleTables, ReasoningVerdict, RemoteOracle,
                           RetryableOracleError, label_embedding)
from semnav.world import Pose

ORACLE = MockOracle()


def obj(label, x, y):
    pts = np.array([[x - 0.2, y - 0.2, 0.0], [x + 0.2, y + 0.2, 0.8]])
    return ObjectNode(-1, label, pts, label_embedding(label))


# -- similarity ------------------------------------------------------------

def test_similarity_examples():
    find_table = Instruction("find the table")
    assert ORACLE.similarity("table", find_table) == 1.0
    assert ORACLE.similarity("chair", find_table) == 0.6
    assert ORACLE.similarity("toilet", find_table) == 0.0
    assert ORACLE.similarity("couch", Instruction("find the sofa")) == 1.0


def test_anchor_similarity_is_best_label():
    inst = Instruction("find the bed")
    assert ORACLE.similarity(AnchorDescriptor(0, ("nightstand", "toilet")), inst) == 0.6
    assert ORACLE.similarity(AnchorDescriptor(0, ("bed",)), inst) == 1.0
    assert ORACLE.similarity(AnchorDescriptor(0, ()), inst) == 0.0


def test_similarity_range_over_vocabulary():
    for label in sorted(ORACLE.tables.vocabulary):
        for target in ("bed", "chair", "sink"):
            s = ORACLE.similarity(label, Instruction(f"find the {target}"))
            assert 0.0 <= s <= 1.0


# -- decompose -------------------------------------------------------------

def test_decompose_examples():
    d = ORACLE.decompose(Instruction("find the bed"))
    assert d.targets == {"bed"} and d.related == {"nightstand", "pillow"}
    d = ORACLE.decompose(Instruction("go to the chair near the table"))
    assert d.targets == {"chair"} and {"table"} <= d.related
    with pytest.raises(NoTarget):
        ORACLE.decompose(Instruction("find the wombat"))


def test_decomposition_invariants():
    with pytest.raises(ValueError):
        InstructionDecomposition(frozenset())
    with pytest.raises(ValueError):
        InstructionDecomposition({"bed"}, {"bed"})
    with pytest.raises(ValueError):
        Instruction("  ")


def test_tables_validation():
    with pytest.raises(ValueError):
        OracleTables.from_dict({"format": "nope"})
    with pytest.raises(ValueError):
        OracleTables.from_dict({"format": "semnav-oracle-tables", "affinity": [["a", "b", 1.5]]})


# -- reasoning -------------------------------------------------------------

def test_reason_visible_and_invisible():
    g = CognitiveMemoryGraph()
    g.insert_anchor(VisualAnchor(0, Pose((0.0, 0.0))), [obj("toilet", 1, 0)])
    g.insert_anchor(VisualAnchor(1, Pose((5.0, 0.0))), [obj("bed", 6, 0), obj("lamp", 6, 1)])
    inst = Instruction("find the bed")
    v = ORACLE.reason_subgraph(g.subgraph_of_anchors([1]), inst)
    assert v.visible and v.anchor_id == 1
    assert v.bbox is not None and all(0.0 <= c <= 1.0 for c in v.bbox)
    assert not ORACLE.reason_subgraph(g.subgraph_of_anchors([0]), inst).visible
    with pytest.raises(ValueError):
        ORACLE.reason_subgraph(CognitiveMemoryGraph(), inst)


def test_reason_prefers_higher_degree_then_lower_id():
    bed = obj("bed", 3, 3)
    g = CognitiveMemoryGraph()
    g.insert_anchor(VisualAnchor(0, Pose((0.0, 0.0))), [bed])
    g.insert_anchor(VisualAnchor(1, Pose((1.0, 0.0))), [bed, obj("lamp", 5, 5)])
    g.insert_anchor(VisualAnchor(2, Pose((2.0, 0.0))), [bed])
    v = ORACLE.reason_subgraph(g, Instruction("find the bed"))
    assert v.anchor_id == 1
    h = CognitiveMemoryGraph()
    h.insert_anchor(VisualAnchor(4, Pose((0.0, 0.0))), [bed])
    h.insert_anchor(VisualAnchor(2, Pose((1.0, 0.0))), [bed])
    assert ORACLE.reason_subgraph(h, Instruction("find the bed")).anchor_id == 2


def test_verdict_invariant():
    with pytest.raises(ValueError):
        ReasoningVerdict(True, None)


def test_mock_is_deterministic():
    a, b = MockOracle(), MockOracle()
    inst = Instruction("find the sofa near the tv")
    assert a.decompose(inst) == b.decompose(inst)
    assert np.array_equal(a.embed("sofa"), b.embed("couch"))


def test_counting_wrapper():
    c = CountingOracle(MockOracle())
    inst = Instruction("find the bed")
    c.similarity("bed", inst)
    c.similarity(AnchorDescriptor(0, ("bed",)), inst)
    c.decompose(inst)
    c.embed("bed")
    assert c.counts == {"similarity:label": 1, "similarity:anchor": 1, "decompose": 1, "embed": 1}


# -- remote client against a local stand-in service ------------------------

class _Service(BaseHTTPRequestHandler):
    mock = MockOracle()
    mode = "ok"

    def log_message(self, *args):
        pass

    def do_POST(self):
        req = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        inst = Instruction(req["instruction"]["text"]) if "instruction" in req else None
        if self.mode == "garbage":
            body = {"score": 7}
        elif req["op"] == "similarity":
            subj = req["subject"]
            if "labels" in subj:
                s = self.mock.similarity(AnchorDescriptor(subj["anchor_id"], tuple(subj["labels"])), inst)
            else:
                s = self.mock.similarity(subj["label"], inst)
            body = {"score": s}
        elif req["op"] == "decompose":
            try:
                d = self.mock.decompose(inst)
                body = {"targets": sorted(d.targets), "related": sorted(d.related)}
            except NoTarget:
                body = {"error": "no_target"}
        elif req["op"] == "reason":
            hits = [o for o in req["objects"] if self.mock.similarity(o["label"], inst) >= 0.8]
            if hits:
                aid = next(a["id"] for a in req["anchors"] if hits[0]["id"] in a["objects"])
                body = {"visible": True, "anchor_id": aid, "object_id": hits[0]["id"],
                        "bbox": [0.1, 0.2, 0.3, 0.4], "evidence": "seen"}
            else:
                body = {"visible": False, "evidence": "nothing"}
        elif req["op"] == "embed":
            body = {"embedding": self.mock.embed(req["label"]).tolist()}
        else:
            body = {}
        data = json.dumps(body).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)


@pytest.fixture
def service():
    server = HTTPServer(("127.0.0.1", 0), _Service)
    t = threading.Thread(target=server.serve_forever, daemon=True)
    t.start()
    _Service.mode = "ok"
    yield f"http://127.0.0.1:{server.server_address[1]}/"
    server.shutdown()
    server.server_close()


def test_remote_round_trip(service):
    r = RemoteOracle(service, timeout=5.0)
    inst = Instruction("find the bed")
    assert r.similarity("nightstand", inst) == 0.6
    assert r.similarity(AnchorDescriptor(3, ("bed",)), inst) == 1.0
    assert r.decompose(inst) == ORACLE.decompose(inst)
    with pytest.raises(NoTarget):
        r.decompose(Instruction("find the wombat"))
    assert np.allclose(r.embed("bed"), ORACLE.embed("bed"))
    g = CognitiveMemoryGraph()
    g.insert_anchor(VisualAnchor(7, Pose((0.0, 0.0))), [obj("bed", 1, 1)])
    v = r.reason_subgraph(g, inst)
    assert v.visible and v.anchor_id == 7 and v.bbox == (0.1, 0.2, 0.3, 0.4)


def test_remote_invalid_response_is_retryable(service):
    _Service.mode = "garbage"
    r = RemoteOracle(service, timeout=5.0)
    with pytest.raises(RetryableOracleError):
        r.similarity("bed", Instruction("find the bed"))


def test_remote_transport_failure_is_retryable():
    r = RemoteOracle("http://127.0.0.1:9/", timeout=0.5)
    with pytest.raises(RetryableOracleError):
        r.decompose(Instruction("find the bed"))


def test_remote_from_env(monkeypatch):
    monkeypatch.delenv("ORACLE_URL", raising=False)
    with pytest.raises(OracleError):
        RemoteOracle.from_env()
    monkeypatch.setenv("ORACLE_URL", "http://example.invalid/")
    monkeypatch.setenv("ORACLE_TIMEOUT_MS", "250")
    r = RemoteOracle.from_env()
    assert r.url == "http://example.invalid/" and r.timeout == 0.25
