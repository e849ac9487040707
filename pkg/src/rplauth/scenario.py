"""Scenario configuration, batch execution and log-derived reports."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field, fields
from statistics import mean

from .adversary import AttackConfigError, AttackSpec, attacker_class
from .bloom import K_HASH, default_m
from .chains import DEFAULT_L, MAX_RANK_INDEX, ChainSet
from .dodag import NodeConfig, RplNode
from .primitives import get_suite
from .simnet import Network, log_to_jsonl
from .topology import TopologyError, from_spec
from .trail import TrailNode, predicted_sizes
from .vera import VeraAuthority
from .veraplus import VeraPPAuthority, make_config, node_class

SCHEMES = ("rpl", "vera", "vera++", "trail-single", "trail")
TRAIL_KINDS = ("TRAIL_UP", "ATTEST")


class ConfigInvalid(ValueError):
    pass


@dataclass
class ScenarioConfig:
    topology: dict
    scheme: str = "rpl"
    challenge_response: bool = False
    attack: dict | None = None
    seed: int = 0
    loss: float = 0.0
    versions: int = 1
    l: int = DEFAULT_L
    suite: str = "production"
    bloom: dict = field(default_factory=dict)  # {"m": int, "k_hash": int}
    data_phase: bool = True
    expect: str | None = None

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        if not isinstance(d, dict):
            raise ConfigInvalid("config must be a JSON object")
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ConfigInvalid(f"unknown config keys: {sorted(extra)}")
        if "topology" not in d:
            raise ConfigInvalid("config needs a topology")
        cfg = cls(**d)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if self.scheme not in SCHEMES:
            raise ConfigInvalid(f"scheme must be one of {SCHEMES}")
        if self.challenge_response and self.scheme not in ("vera", "vera++"):
            raise ConfigInvalid("challenge_response needs vera or vera++")
        if not isinstance(self.versions, int) or self.versions < 1:
            raise ConfigInvalid("versions must be a positive integer")
        if not 1 <= self.l <= MAX_RANK_INDEX:
            raise ConfigInvalid(f"l must lie in [1, {MAX_RANK_INDEX}]")
        if not 0.0 <= self.loss <= 1.0:
            raise ConfigInvalid("loss must lie in [0, 1]")
        extra = set(self.bloom) - {"m", "k_hash"}
        if extra:
            raise ConfigInvalid(f"unknown bloom keys: {sorted(extra)}")
        try:
            get_suite(self.suite)
            topo = from_spec(self.topology)
            spec = self.attack_spec()
        except (ValueError, TypeError, KeyError, TopologyError, AttackConfigError) as e:
            raise ConfigInvalid(str(e)) from None
        if spec is not None:
            for v in spec.nodes:
                if v not in topo.adj or v == topo.root:
                    raise ConfigInvalid(f"attacker {v} is not a non-root node")
            if spec.kind == "chain_forgery" and self.versions < spec.at_version + 1:
                raise ConfigInvalid("chain_forgery needs versions >= at_version + 1")
            if spec.kind == "trail_manipulation" and not self.scheme.startswith("trail"):
                raise ConfigInvalid("trail_manipulation needs a trail scheme")

    def attack_spec(self) -> AttackSpec | None:
        return None if self.attack is None else AttackSpec.from_dict(self.attack)

    @property
    def label(self) -> str:
        return self.scheme + ("[cr]" if self.challenge_response else "")

    def to_dict(self) -> dict:
        return asdict(self)


def _bloom_m(topo, cfg: ScenarioConfig) -> int:
    if cfg.bloom.get("m"):
        return int(cfg.bloom["m"])
    depth = topo.hop_distances()
    fanout = max((sum(1 for w in topo.adj[v] if depth.get(w) == depth[v] + 1) for v in depth), default=1)
    return default_m(fanout)


def build_nodes(net: Network, cfg: ScenarioConfig, depths: dict) -> dict:
    topo = net.topology
    spec = cfg.attack_spec()
    attackers = set(spec.nodes) if spec else set()
    suite = get_suite(cfg.suite)
    signer = suite.make_signer(bytes(net.rng.integers(0, 256, 32, dtype="uint8").tolist()))
    verifier = signer.verifier()

    if cfg.scheme in ("vera", "vera++"):
        chains = ChainSet.generate(suite, cfg.versions, cfg.l, rng=net.rng)
        auth_cls = VeraAuthority if cfg.scheme == "vera" else VeraPPAuthority
        authority = auth_cls(chains, signer)
        base = node_class(cfg.scheme, cfg.challenge_response)

        def make(cls, v, is_root):
            return cls(v, topo.adj[v], is_root, make_config(cfg.challenge_response, cfg.l),
                       suite=suite, l=cfg.l, verifier=verifier, authority=authority if is_root else None)
    elif cfg.scheme.startswith("trail"):
        m = _bloom_m(topo, cfg)
        k_hash = int(cfg.bloom.get("k_hash", K_HASH))
        base = TrailNode

        def make(cls, v, is_root):
            return cls(v, topo.adj[v], is_root, NodeConfig(max_rank=cfg.l), m=m, k_hash=k_hash,
                       signer=signer if is_root else None, verifier=verifier)
    else:
        base = RplNode

        def make(cls, v, is_root):
            return cls(v, topo.adj[v], is_root, NodeConfig(max_rank=cfg.l))

    nodes = {}
    for v in topo.nodes:
        cls = base
        if v in attackers:
            cls = attacker_class(base, spec, v)
        node = make(cls, v, v == topo.root)
        if v in attackers:
            node.depths = depths
        net.attach(v, node)
        nodes[v] = node
    return nodes


def run_scenario(cfg: ScenarioConfig | dict, max_events: int = 2_000_000):
    """Run one scenario; returns ``(report, log)``."""
    if isinstance(cfg, dict):
        cfg = ScenarioConfig.from_dict(cfg)
    else:
        cfg.validate()
    topo = from_spec(cfg.topology)
    net = Network(topo, seed=cfg.seed, loss=cfg.loss)
    depths = topo.hop_distances()
    spec = cfg.attack_spec()
    nodes = build_nodes(net, cfg, depths)
    root = nodes[topo.root]
    attackers = [nodes[v] for v in (spec.nodes if spec else ())]
    net.note(topo.root, "meta", scheme=cfg.scheme, label=cfg.label, config=cfg.to_dict(),
             topology=topo.to_json(), depths={str(k): v for k, v in depths.items()},
             attackers=list(spec.nodes) if spec else [], attack=spec.to_dict() if spec else None,
             m=getattr(root, "m", None))

    def settle():
        net.run_until_quiescent(max_events)

    if cfg.scheme in ("vera", "vera++"):
        root.bootstrap(net)
        settle()
    for v in range(1, cfg.versions + 1):
        for a in attackers:
            a.prepare(net, v)
        root.start_version(net, v)
        settle()
        for a in attackers:
            a.trigger(net, v)
        settle()
        if cfg.data_phase:
            for node in nodes.values():
                node.originate(net)
            settle()
        if cfg.scheme == "trail":
            for node in nodes.values():
                node.trail_start(net)
            settle()
            for node in nodes.values():
                node.trail_finalize(net)
        elif cfg.scheme == "trail-single":
            for node in nodes.values():
                node.single_start(net)
            settle()
            for node in nodes.values():
                node.single_finalize(net)
        for u, node in nodes.items():
            net.note(u, "state", round=v, **node.snapshot())
    report = report_from_log(net.log)
    return report, net.log


# -- reports --------------------------------------------------------------------------

EXPECTED = {
    ("rpl", "version_attack"): "succeeded",
    ("vera", "version_attack"): "blocked",
    ("vera++", "version_attack"): "blocked",
    ("rpl", "rank_spoof"): "succeeded",
    ("vera", "rank_spoof"): "blocked",
    ("vera++", "rank_spoof"): "blocked",
    ("rpl", "rank_replay"): "succeeded",
    ("vera", "rank_replay"): "succeeded",
    ("vera++", "rank_replay"): "succeeded",
    ("vera[cr]", "rank_replay"): "detected",
    ("vera++[cr]", "rank_replay"): "detected",
    ("vera", "chain_forgery"): "succeeded",
    ("vera++", "chain_forgery"): "blocked",
    ("trail", "rank_spoof"): "detected",
    ("trail", "rank_replay"): "detected",
    ("trail", "drop_children"): "detected",
    ("trail", "misplace"): "detected",
    ("trail", "rearrange"): "detected",
    ("trail", "delete_nonces"): "detected",
    ("trail", "merge_on_behalf"): "detected",
    ("trail", "withhold_own"): "self-excluded",
    ("trail", "k_chain_replay(k=2)"): "blind-spot",
    ("trail-single", "rank_spoof"): "detected",
    ("trail-single", "rank_replay"): "detected",
    ("trail-single", "k_chain_replay(k=2)"): "blind-spot",
}


def _true_failures(info: dict) -> list:
    return [f for f in info.get("fails", []) if not f[1]]


def report_from_log(log: list[dict]) -> dict:
    """Everything in the report is recomputed from the event log alone."""
    meta = next(e["info"] for e in log if e["ev"] == "note" and e["kind"] == "meta")
    attackers = set(meta["attackers"])
    depths = {int(k): v for k, v in meta["depths"].items()}
    topo_adj = {}
    for a, b in meta["topology"]["links"]:
        topo_adj.setdefault(a, set()).add(b)
        topo_adj.setdefault(b, set()).add(a)
    root = meta["topology"]["root"]

    counts, totals = {}, {}
    trail_sizes, trail_per_node = [], {}
    verdicts = {}
    rejections = 0
    true_detections = []
    false_alarms = 0
    adjudications = []
    states = {}
    global_repairs = 0
    for e in log:
        if e["ev"] == "send":
            k = e["kind"]
            counts[k] = counts.get(k, 0) + 1
            totals[k] = totals.get(k, 0) + e["bytes"]
            if k in TRAIL_KINDS:
                trail_sizes.append(e["bytes"])
                trail_per_node[e["from"]] = trail_per_node.get(e["from"], 0) + 1
            continue
        if e["ev"] != "note":
            continue
        node, kind, info = e["from"], e["kind"], e["info"]
        honest = node not in attackers
        if kind == "verdict" and honest:
            verdicts.setdefault(str(node), []).append(info["result"])
            check = info.get("check")
            if check == "dio":
                rejections += 1
            elif check == "trail":
                fa = [f for f in info.get("fails", []) if f[1]]
                false_alarms += len(fa)
                if _true_failures(info):
                    true_detections.append({"node": node, "check": check, "result": info["result"]})
            elif check == "trail-single" and info["result"] != "Verified":
                true_detections.append({"node": node, "check": check, "result": info["result"]})
        elif kind == "adjudication":
            adjudications.append(info)
            if info["outcome"] == "malicious" and info["accused"] in attackers:
                true_detections.append({"node": node, "check": "adjudication", "result": info["accused"]})
        elif kind == "state":
            states.setdefault(info["round"], {})[node] = info
        elif kind == "repair" and info.get("scope") == "global" and honest:
            global_repairs += 1

    # attack goal: some honest node believes it is closer to the root than it can be
    lowered = set()
    bogus_version = set()
    for rnd, st in states.items():
        root_v = st[root]["v"]
        for v, s in st.items():
            if v in attackers or v == root:
                continue
            if s["rank"] is not None and s["rank"] < depths.get(v, 0):
                lowered.add(v)
            if s["v"] > root_v:
                bogus_version.add(v)

    sinkhole = False
    spec = meta["attack"]
    if spec and spec["kind"] == "rank_spoof" and states:
        last = states[max(states)]
        for a in attackers:
            nb = topo_adj.get(a, set())
            sinkhole = sinkhole or (bool(nb) and all(last[w]["parent"] == a for w in nb if w != root))

    report = {
        "label": meta["label"],
        "scheme": meta["scheme"],
        "attack": spec,
        "message_counts": dict(sorted(counts.items())),
        "message_bytes": {k: totals[k] for k in sorted(totals)},
        "trail": {
            "max_bytes": max(trail_sizes, default=0),
            "mean_bytes": round(mean(trail_sizes), 6) if trail_sizes else 0,
            "messages": len(trail_sizes),
            "max_per_node": max(trail_per_node.values(), default=0),
            "false_alarms": false_alarms,
        },
        "verdicts": verdicts,
        "rejections": rejections,
        "detections": true_detections,
        "adjudications": adjudications,
        "lowered_ranks": sorted(lowered),
        "bogus_version": sorted(bogus_version),
        "global_repairs": global_repairs,
        "sinkhole": sinkhole,
        "final_state": {str(v): s for v, s in sorted(states[max(states)].items())} if states else {},
    }
    report["all_verified"] = _all_verified(meta, verdicts, attackers, depths, root)
    report["outcome"] = classify(report)
    return report


def _all_verified(meta, verdicts, attackers, depths, root) -> bool | None:
    if not meta["scheme"].startswith("trail"):
        return None
    honest = [v for v in depths if v not in attackers and v != root]
    return all(verdicts.get(str(v)) and all(r == "Verified" for r in verdicts[str(v)]) for v in honest)


def classify(report: dict) -> str:
    spec = report["attack"]
    if spec is None:
        return "none"
    detected = bool(report["detections"])
    success = bool(report["lowered_ranks"] or report["bogus_version"])
    if spec["kind"] == "trail_manipulation" and spec["variant"] == "withhold_own":
        return "detected" if detected else "self-excluded"
    if detected:
        return "detected"
    if success:
        return "blind-spot" if spec["kind"] == "k_chain_replay" else "succeeded"
    return "blocked"


def expected_outcome(cfg: ScenarioConfig) -> str | None:
    if cfg.expect:
        return cfg.expect
    spec = cfg.attack_spec()
    if spec is None:
        return None
    return EXPECTED.get((cfg.label, spec.label))


def report_json(report: dict) -> str:
    return json.dumps(report, sort_keys=True, indent=2)


# -- tables ------------------------------------------------------------------------------

def overhead_rows(ks, hs, seed: int = 0) -> list[dict]:
    rows = []
    for k in ks:
        for h in hs:
            pred = predicted_sizes(k, h)
            cfg = ScenarioConfig(topology={"kary": {"k": k, "h": h}}, scheme="trail", seed=seed, data_phase=False)
            report, _ = run_scenario(cfg)
            rows.append({
                "k": k,
                "h": h,
                "nodes": pred.nodes,
                "msgs_per_node_bound": 2,
                "sim_max_msgs_per_node": report["trail"]["max_per_node"],
                "sim_max_bytes": report["trail"]["max_bytes"],
                "pred_max_bytes": pred.max_bytes,
                "sim_mean_bytes": report["trail"]["mean_bytes"],
                "reference_avg": round(pred.reference_avg, 6),
            })
    return rows


def rows_to_csv(rows: list[dict]) -> str:
    if not rows:
        return ""
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue()


def overhead_table(ks, hs, seed: int = 0) -> str:
    return rows_to_csv(overhead_rows(ks, hs, seed))


CANON_TREE = {"kary": {"k": 2, "h": 4}}


def canonical_cells() -> list[tuple[str, dict]]:
    """(cell label, scenario dict) for every row of the attack matrix."""
    def cfg(scheme, attack, cr=False, versions=2):
        return {"topology": CANON_TREE, "scheme": scheme, "challenge_response": cr, "attack": attack,
                "versions": versions, "seed": 7}

    cells = []
    for scheme in ("rpl", "vera", "vera++"):
        cells.append(cfg(scheme, {"kind": "version_attack", "nodes": [3], "at_version": 1}))
        cells.append(cfg(scheme, {"kind": "rank_spoof", "nodes": [7], "at_version": 1}))
        cells.append(cfg(scheme, {"kind": "rank_replay", "nodes": [3], "at_version": 1}))
    for scheme in ("vera", "vera++"):
        cells.append(cfg(scheme, {"kind": "rank_replay", "nodes": [3], "at_version": 1}, cr=True))
        cells.append(cfg(scheme, {"kind": "chain_forgery", "nodes": [3], "at_version": 1}, versions=3))
    for scheme in ("trail", "trail-single"):
        cells.append(cfg(scheme, {"kind": "rank_spoof", "nodes": [7], "at_version": 1}, versions=1))
        cells.append(cfg(scheme, {"kind": "rank_replay", "nodes": [3], "at_version": 1}, versions=1))
        cells.append(cfg(scheme, {"kind": "k_chain_replay", "nodes": [3, 7], "k": 2, "at_version": 1}, versions=1))
    for variant in ("drop_children", "misplace", "rearrange", "delete_nonces", "withhold_own"):
        cells.append(cfg("trail", {"kind": "trail_manipulation", "variant": variant, "nodes": [3], "at_version": 1},
                         versions=1))
    cells.append(cfg("trail", {"kind": "trail_manipulation", "variant": "merge_on_behalf", "nodes": [1, 7],
                               "delta": 1, "at_version": 1}, versions=1))
    return cells


def attack_matrix_rows() -> list[dict]:
    rows = []
    for d in canonical_cells():
        c = ScenarioConfig.from_dict(d)
        report, _ = run_scenario(c)
        spec = c.attack_spec()
        want = EXPECTED.get((c.label, spec.label))
        rows.append({
            "scheme": c.label,
            "attack": spec.label,
            "outcome": report["outcome"],
            "expected": want,
            "match": report["outcome"] == want,
            "sinkhole": report["sinkhole"],
            "lowered_ranks": len(report["lowered_ranks"]),
            "rejections": report["rejections"],
            "detections": len(report["detections"]),
        })
    return rows


def attack_matrix() -> str:
    return rows_to_csv(attack_matrix_rows())


def write_log(log: list[dict], path: str) -> None:
    with open(path, "w") as fh:
        fh.write(log_to_jsonl(log))
