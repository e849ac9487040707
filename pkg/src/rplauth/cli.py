"""Command line: simulate, table, attack-matrix, chains selftest."""
from __future__ import annotations

import argparse
import json
import os
import sys

from .chains import selftest
from .primitives import SUITES
from .scenario import (
    ConfigInvalid,
    ScenarioConfig,
    attack_matrix_rows,
    expected_outcome,
    overhead_rows,
    report_json,
    rows_to_csv,
    run_scenario,
    write_log,
)
from .simnet import Nonquiescent

EXIT_OK = 0
EXIT_DIVERGED = 2
EXIT_CONFIG = 3


def _ints(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x.strip()]


def _emit(text: str, out: str | None) -> None:
    if out in (None, "-", "csv"):
        sys.stdout.write(text)
    else:
        with open(out, "w") as fh:
            fh.write(text)


def cmd_simulate(args) -> int:
    try:
        with open(args.config) as fh:
            raw = json.load(fh)
        if "SEED" in os.environ:
            raw["seed"] = int(os.environ["SEED"])
        cfg = ScenarioConfig.from_dict(raw)
    except (OSError, json.JSONDecodeError, ConfigInvalid, ValueError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        report, log = run_scenario(cfg)
    except Nonquiescent as e:
        print(f"simulation did not settle: {e}", file=sys.stderr)
        return EXIT_DIVERGED
    if args.log:
        write_log(log, args.log)
    want = expected_outcome(cfg)
    report["expected"] = want
    print(report_json(report))
    if want is not None and report["outcome"] != want:
        print(f"outcome {report['outcome']!r} differs from expected {want!r}", file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


def cmd_table(args) -> int:
    rows = overhead_rows(_ints(args.k), _ints(args.h), seed=int(os.environ.get("SEED", 0)))
    _emit(rows_to_csv(rows), args.out)
    bad = [r for r in rows if r["sim_max_bytes"] != r["pred_max_bytes"]]
    return EXIT_DIVERGED if bad else EXIT_OK


def cmd_attack_matrix(args) -> int:
    rows = attack_matrix_rows()
    _emit(rows_to_csv(rows), args.out)
    return EXIT_OK if all(r["match"] for r in rows) else EXIT_DIVERGED


def cmd_chains(args) -> int:
    ok = True
    for name, suite in SUITES.items():
        res = selftest(suite, n=args.n, l=args.l, seed=int(os.environ.get("SEED", 0)))
        for key, val in res.items():
            print(f"{name:<10} {key:<17} {'ok' if val else 'FAIL'}")
            ok = ok and val
    return EXIT_OK if ok else EXIT_DIVERGED


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rplauth", description="RPL topology authentication simulator")
    sub = p.add_subparsers(dest="cmd", required=True)

    s = sub.add_parser("simulate", help="run one scenario and print its JSON report")
    s.add_argument("--config", required=True)
    s.add_argument("--log", help="write the JSONL event log here")
    s.set_defaults(func=cmd_simulate)

    t = sub.add_parser("table", help="message overhead table for balanced trees")
    t.add_argument("--k", default="2,4")
    t.add_argument("--h", default="3,4,5")
    t.add_argument("--out", default="csv", help="file path, or 'csv' for stdout")
    t.set_defaults(func=cmd_table)

    a = sub.add_parser("attack-matrix", help="run every canonical attack scenario")
    a.add_argument("--out", default="csv")
    a.set_defaults(func=cmd_attack_matrix)

    c = sub.add_parser("chains", help="chain utilities")
    csub = c.add_subparsers(dest="what", required=True)
    st = csub.add_parser("selftest", help="build chains and check their invariants")
    st.add_argument("--n", type=int, default=8)
    st.add_argument("--l", type=int, default=64)
    st.set_defaults(func=cmd_chains)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
