import pytest

from rplauth.adversary import AttackConfigError, AttackSpec
from rplauth.scenario import EXPECTED, ScenarioConfig, canonical_cells, run_scenario
from rplauth.simnet import log_digest
from rplauth.topology import from_spec

CELLS = canonical_cells()


def cell_id(d):
    c = ScenarioConfig.from_dict(d)
    return f"{c.label}-{c.attack_spec().label}"


@pytest.fixture(scope="module")
def runs():
    return {cell_id(d): (d, *run_scenario(d)) for d in CELLS}


@pytest.mark.parametrize("cell", [cell_id(d) for d in CELLS])
def test_matrix_cell(runs, cell):
    d, report, _ = runs[cell]
    c = ScenarioConfig.from_dict(d)
    assert report["outcome"] == EXPECTED[(c.label, c.attack_spec().label)]


def test_every_cell_is_deterministic(runs):
    for d, _, log in list(runs.values())[:8]:
        assert log_digest(run_scenario(d)[1]) == log_digest(log)


def test_every_send_uses_a_link(runs):
    for d, _, log in runs.values():
        topo = from_spec(d["topology"])
        for e in log:
            if e["ev"] == "send" and e["to"] is not None:
                assert topo.adjacent(e["from"], e["to"])
            if e["ev"] == "recv":
                assert topo.adjacent(e["from"], e["to"])


def test_spoof_sinkhole_against_rpl(runs):
    _, report, _ = runs["rpl-rank_spoof"]
    assert report["sinkhole"]
    assert report["final_state"]["3"]["parent"] == 7  # the former parent now routes via the attacker


def test_version_attack_rpl_rebuilds_topology(runs):
    _, report, _ = runs["rpl-version_attack"]
    assert report["global_repairs"] > 0 and report["bogus_version"]


def test_version_attack_vera_rejected_by_every_neighbour(runs):
    d, report, log = runs["vera-version_attack"]
    topo = from_spec(d["topology"])
    rejecters = {e["from"] for e in log if e["kind"] == "verdict" and e["info"].get("result") == "ChainMismatch"}
    assert set(topo.adj[3]) <= rejecters
    assert report["bogus_version"] == []


def test_replay_children_adopt_bogus_rank(runs):
    _, report, _ = runs["vera-rank_replay"]
    assert report["rejections"] == 0
    assert {7, 8} <= set(report["lowered_ranks"])


def test_replayed_announcement_reaches_the_parent(runs):
    _, _, log = runs["vera++[cr]-rank_replay"]
    anns = [e for e in log if e["ev"] == "send" and e["kind"] == "ANN" and e["from"] == 3]
    assert anns and all(e["info"]["rank"] == 1 for e in anns)


def test_forgery_differs_by_scheme(runs):
    assert runs["vera-chain_forgery"][1]["outcome"] == "succeeded"
    _, report, log = runs["vera++-chain_forgery"]
    assert "DecryptAnchor" in {e["info"].get("result") for e in log if e["kind"] == "verdict"}


def test_forgery_without_jamming_is_a_noop():
    d = next(d for d in CELLS if cell_id(d) == "vera-chain_forgery")
    d = {**d, "attack": {**d["attack"], "jam": False}}
    report, _ = run_scenario(d)
    assert report["outcome"] == "blocked" and not report["lowered_ranks"]


@pytest.mark.parametrize("delta", [1, 2, 3])
def test_spoof_any_delta_blocked_by_vera(delta):
    for scheme in ("vera", "vera++"):
        report, _ = run_scenario({"topology": {"kary": {"k": 2, "h": 4}}, "scheme": scheme, "seed": 7,
                                  "attack": {"kind": "rank_spoof", "nodes": [7], "delta": delta}})
        assert report["outcome"] == "blocked"
        assert report["rejections"] > 0


def trail_fails(log):
    out = {}
    for e in log:
        if e["kind"] == "verdict" and e["info"].get("check") == "trail":
            out[e["from"]] = [f[0] for f in e["info"]["fails"] if not f[1]]
    return out


def test_drop_children_fails_every_child(runs):
    fails = trail_fails(runs["trail-drop_children"][2])
    assert "NonceMissing" in fails[7] and "NonceMissing" in fails[8]


def test_withhold_own_has_no_honest_failures(runs):
    _, report, log = runs["trail-withhold_own"]
    assert report["detections"] == []
    fails = trail_fails(log)
    assert all(f == [] for v, f in fails.items() if v != 3)
    assert fails[3] == ["Timeout"]  # the attacker merely stays unverified


def test_delete_nonces_shrinks_a_forwarded_array(runs):
    fails = trail_fails(runs["trail-delete_nonces"][2])
    assert any("ArrayShrunk" in f for f in fails.values())


def test_merge_on_behalf_duplicates(runs):
    fails = trail_fails(runs["trail-merge_on_behalf"][2])
    assert any("NonceDuplicated" in f for f in fails.values())


def test_attack_spec_validation():
    with pytest.raises(AttackConfigError):
        AttackSpec.from_dict({"kind": "rank_replay", "nodes": [1], "power": 3})
    with pytest.raises(AttackConfigError):
        AttackSpec.from_dict({"kind": "teleport", "nodes": [1]})
    with pytest.raises(AttackConfigError):
        AttackSpec.from_dict({"kind": "trail_manipulation", "nodes": [1], "variant": "shuffle"})
    with pytest.raises(AttackConfigError):
        AttackSpec.from_dict({"kind": "k_chain_replay", "nodes": [1], "k": 2})
    s = AttackSpec.from_dict({"kind": "rank_replay", "nodes": [9], "at_version": 2})
    assert AttackSpec.from_dict(s.to_dict()) == s
