import numpy as np
import pytest

from rplauth.bloom import BloomFilter, MalformedElement, element_truly_contains
from rplauth.primitives import TEST
from rplauth.scenario import run_scenario
from rplauth.topology import kary_tree
from rplauth.trail import (
    SizeOverflow,
    TrailVerdict,
    array_bits,
    attestation_failures,
    decode_array,
    encode_array,
    hop_check,
    merge_arrays,
    predicted_sizes,
    sign_attestation,
    single_path_validate,
    verify_attestation,
)

from conftest import disk_corpus

SIGNER = TEST.make_signer(b"root")
VERIFIER = SIGNER.verifier()


# -- single path -------------------------------------------------------------------

def walk_oracle(path, checks_as, claims):
    """Independent transcription of the two hop rules and the downward rule."""
    j = claims[path[1]]
    prev = path[1]
    for u in path[2:]:
        own = checks_as[u]
        if not (j > own and own < claims[prev] <= j):
            return ("up", u)
        prev = u
    for u in path[2:-1]:
        if not j > checks_as[u]:
            return ("down", u)
    return None


def test_hop_check_cases():
    assert hop_check(own_rank=2, scribed=3, sender_rank=3)
    assert not hop_check(own_rank=3, scribed=3, sender_rank=4)
    assert not hop_check(own_rank=1, scribed=3, sender_rank=4)
    assert not hop_check(own_rank=2, scribed=3, sender_rank=2)


def test_honest_path_verifies():
    path = [4, 3, 2, 1, 0]
    ranks = {v: v for v in path}
    assert single_path_validate(path, ranks).verdict is TrailVerdict.VERIFIED


def test_spoofing_parent_caught_at_grandparent():
    path = [4, 3, 2, 1, 0]
    ranks = {v: v for v in path}
    claims = {**ranks, 3: 1}
    res = single_path_validate(path, ranks, claims)
    assert res.verdict is TrailVerdict.RANK_VIOLATION and res.node == 2


def test_two_colluders_replaying_once_go_unnoticed():
    # a=3 replays the rank of b=2; b does not check, so it behaves as if one level higher
    path = [4, 3, 2, 1, 0]
    claims = {0: 0, 1: 1, 2: 2, 3: 2, 4: 3}
    checks_as = {0: 0, 1: 1, 2: 1, 3: 3, 4: 4}
    assert single_path_validate(path, checks_as, claims).verdict is TrailVerdict.VERIFIED
    # without the colluding forwarder the replay is caught
    honest = {0: 0, 1: 1, 2: 2, 3: 3, 4: 4}
    assert not single_path_validate(path, honest, claims).verdict.ok


def test_single_path_against_oracle():
    rng = np.random.default_rng(0)
    for _ in range(2000):
        d = int(rng.integers(2, 8))
        path = list(range(d, -1, -1))
        ranks = {v: v for v in path}
        claims = {v: max(0, v - int(rng.integers(0, 3))) if rng.random() < 0.3 else v for v in path}
        claims[0] = 0
        got = single_path_validate(path, ranks, claims)
        want = walk_oracle(path, ranks, claims)
        assert got.verdict.ok == (want is None)
        if want is not None:
            assert got.node == want[1]


def test_single_path_needs_a_parent():
    with pytest.raises(ValueError):
        single_path_validate([0], {0: 0})


# -- arrays ------------------------------------------------------------------------

def slices(a):
    return [len(e) for e in a]


def test_merge_examples():
    m = 12
    leaf_parent = merge_arrays([11, 12], {5: [], 6: []}, m)
    assert slices(leaf_parent) == [1]
    child = lambda n: merge_arrays([n], {n: []}, m)
    grand = merge_arrays([1, 2], {1: child(100), 2: child(200)}, m)
    assert slices(grand) == [1, 2] and array_bits(grand) == 36
    assert merge_arrays([], {}, m) == []


def recursive_shape(k, h):
    """Slice counts at the root from the tree shape alone."""
    if h == 0:
        return []
    below = recursive_shape(k, h - 1)
    return [1] + [k * s for s in below]


@pytest.mark.parametrize("k,h", [(2, 3), (2, 4), (3, 3), (4, 2)])
def test_root_array_shape(k, h):
    t = kary_tree(k, h)
    rng = np.random.default_rng(k * 10 + h)
    nonce = {v: int(rng.integers(1, 2**62)) for v in t.nodes}
    depth = t.hop_distances()

    def build(v):
        kids = [w for w in t.adj[v] if depth[w] == depth[v] + 1]
        return merge_arrays([nonce[c] for c in kids], {c: build(c) for c in kids}, 6 * k)

    root = build(0)
    assert slices(root) == recursive_shape(k, h)
    if (k, h) == (2, 3):
        assert slices(root) == [1, 2, 4]
    # every nonce sits (truly) at the index equal to its depth
    for v in t.nodes:
        if v:
            assert element_truly_contains(root[depth[v] - 1], nonce[v])


def test_wire_roundtrip():
    arr = [(BloomFilter.of([1], 12),), (BloomFilter.of([2], 12), BloomFilter.of([3], 12))]
    data = encode_array(7, arr, 12)
    assert len(data) == 5 + (2 + 2) + (2 + 3)
    v, back = decode_array(data, 12)
    assert v == 7 and slices(back) == [1, 2]
    for e1, e2 in zip(arr, back):
        assert all(a.same_bits(b) for a, b in zip(e1, e2))
    with pytest.raises(MalformedElement):
        decode_array(data[:-1], 12)
    with pytest.raises(MalformedElement):
        decode_array(data + b"\x00", 12)
    with pytest.raises(MalformedElement):
        encode_array(1, [(BloomFilter(8),)], 12)
    with pytest.raises(SizeOverflow):
        encode_array(1, [(BloomFilter(12),)] * 256, 12)


def make_att(array, version=1):
    return sign_attestation(SIGNER, version, array, 12)


def test_verify_cases():
    m = 12
    mine, sib = 1001, 2002
    saved = merge_arrays([5], {5: []}, m)  # the node's own upward array
    root = merge_arrays([mine, sib], {1: saved, 2: []}, m)
    att = make_att(root)
    assert verify_attestation(1, mine, saved, att, 1, VERIFIER) is TrailVerdict.VERIFIED
    forged = make_att(root).__class__(1, att.array, m, signature=b"\x00" * 8)
    assert verify_attestation(1, mine, saved, forged, 1, VERIFIER) is TrailVerdict.SIGNATURE_INVALID
    assert verify_attestation(1, mine, saved, att, 2, VERIFIER) is TrailVerdict.VERSION_MISMATCH
    missing = make_att(merge_arrays([sib], {1: saved, 2: []}, m))
    assert verify_attestation(1, mine, saved, missing, 1, VERIFIER) is TrailVerdict.NONCE_MISSING
    dup = make_att([root[0], root[1] + (BloomFilter.of([mine], m),)])
    fails = attestation_failures(1, mine, saved, dup, 1, VERIFIER)
    assert fails[0].verdict is TrailVerdict.NONCE_DUPLICATED and not fails[0].false_alarm
    shrunk = make_att([root[0], (BloomFilter(m),)])
    assert verify_attestation(1, mine, saved, shrunk, 1, VERIFIER) is TrailVerdict.ARRAY_SHRUNK


# -- size predictions ---------------------------------------------------------------

@pytest.mark.parametrize("k,h,nodes,mx,avg", [
    (2, 3, 15, 10.5, 3.5), (2, 4, 31, 22.5, 7.5), (2, 5, 63, 46.5, 15.5),
    (4, 3, 85, 63, 12.6), (4, 4, 341, 255, 51), (4, 5, 1365, 1023, 204.6),
])
def test_predicted_sizes_rows(k, h, nodes, mx, avg):
    p = predicted_sizes(k, h)
    assert (p.nodes, p.max_bytes) == (nodes, mx)
    assert p.reference_avg == pytest.approx(avg)


def test_predicted_sizes_small_and_overflow():
    p = predicted_sizes(2, 1)
    assert p.nodes == 3 and p.max_bytes == 1.5
    assert predicted_sizes(2, 4).max_bytes == 15 * 1.5
    with pytest.raises(SizeOverflow):
        predicted_sizes(2, 60)
    with pytest.raises(ValueError):
        predicted_sizes(2, 0)


@pytest.mark.parametrize("k,h", [(2, 3), (2, 4), (2, 5), (4, 3), (4, 4)])
def test_simulated_sizes_and_message_counts(k, h):
    report, log = run_scenario({"topology": {"kary": {"k": k, "h": h}}, "scheme": "trail", "data_phase": False})
    pred = predicted_sizes(k, h)
    assert report["trail"]["max_bytes"] == pred.max_bytes
    assert report["detections"] == []  # false alarms aside, nothing fails
    depth = kary_tree(k, h).hop_distances()
    per_node = {}
    for e in log:
        if e["ev"] == "send" and e["kind"] in ("TRAIL_UP", "ATTEST"):
            per_node.setdefault(e["from"], []).append(e["kind"])
            if e["kind"] == "TRAIL_UP" and depth[e["from"]] < h:
                assert e["bytes"] == pred.per_depth_up_bytes(depth[e["from"]])
    assert max(len(v) for v in per_node.values()) <= 2
    for v, d in depth.items():
        if 0 < d < h:
            assert sorted(per_node[v]) == ["ATTEST", "TRAIL_UP"]


# -- completeness --------------------------------------------------------------------

def test_completeness_large_filters(corpus50):
    """With roomy filters no false alarm interferes: every honest node verifies."""
    for spec in corpus50:
        report, _ = run_scenario({"topology": spec, "scheme": "trail", "bloom": {"m": 256, "k_hash": 8},
                                  "versions": 2, "data_phase": False, "seed": 2})
        assert report["all_verified"], report["verdicts"]


def test_completeness_default_filters(corpus50):
    """At m = 6k the only failures are Bloom false alarms."""
    for spec in corpus50:
        report, _ = run_scenario({"topology": spec, "scheme": "trail", "data_phase": False, "seed": 2})
        assert report["detections"] == []


def test_honest_trail_single_over_corpus(corpus50):
    for spec in corpus50[:20]:
        report, _ = run_scenario({"topology": spec, "scheme": "trail-single", "data_phase": False, "seed": 2})
        assert report["all_verified"]


def test_nonce_placement_341():
    report, log = run_scenario({"topology": {"kary": {"k": 4, "h": 4}}, "scheme": "trail", "data_phase": False})
    verdicts = [e["info"] for e in log if e["kind"] == "verdict"]
    assert len(verdicts) == 340
    for info in verdicts:
        # nonce found at its rank; any other hit is a false alarm by ground truth
        assert not [f for f in info["fails"] if not f[1]]
