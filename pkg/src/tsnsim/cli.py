"""Command-line entry point: ``tsnsim simulate | compare | baseline | case-study``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .harness import run_scenario
from .kernel import format_seconds
from .scenario import Mode, Scenario, ScenarioInvalid, build_case_study

BUILTIN = "case-study"


def _load(path: str) -> Scenario:
    if path == BUILTIN:
        return build_case_study()
    return Scenario.load(path)


def cmd_simulate(args) -> int:
    scenario = _load(args.scenario)
    if args.mode:
        scenario.mode = Mode(args.mode)
    if args.seed is not None:
        scenario.seed = args.seed
    sim = run_scenario(scenario, out_dir=args.out)
    summary = sim.summary()
    for flow_id, st in summary.flows.items():
        print(f"{flow_id}: n={st.count} min={st.min} max={st.max} baseline={st.baseline} "
              f"violations={st.violation_count}")
    for row in summary.transactions:
        print(f"{row['name']}: {row['outcome']}")
    bad = sim.unexpected_aborts()
    if bad:
        print(f"unexpected aborts: {', '.join(bad)}", file=sys.stderr)
        return 1
    return 0


def cmd_compare(args) -> int:
    a = json.loads((Path(args.a) / "summary.json").read_text())
    b = json.loads((Path(args.b) / "summary.json").read_text())
    print("flow_id,violations_a,violations_b,delta,max_a_ns,max_b_ns")
    for flow_id in sorted({*a["flows"], *b["flows"]}):
        fa = a["flows"].get(flow_id, {})
        fb = b["flows"].get(flow_id, {})
        va, vb = fa.get("violation_count", 0), fb.get("violation_count", 0)
        print(f"{flow_id},{va},{vb},{vb - va},{fa.get('max')},{fb.get('max')}")
    return 0


def cmd_baseline(args) -> int:
    scenario = _load(args.scenario)
    scenario.validate()
    for flow_id, ns in scenario.baselines().items():
        print(f"{flow_id},{ns},{format_seconds(ns)}")
    return 0


def cmd_case_study(args) -> int:
    scenario = build_case_study(args.mode or Mode.TRANSACTIONAL, args.seed if args.seed is not None else 1)
    text = scenario.dumps()
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def make_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tsnsim", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="run a scenario and write CSVs, logs and summary.json")
    s.add_argument("--scenario", required=True, help=f"scenario YAML file, or '{BUILTIN}'")
    s.add_argument("--mode", choices=[m.value for m in Mode])
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    c = sub.add_parser("compare", help="per-flow violation diff of two output directories")
    c.add_argument("--a", required=True)
    c.add_argument("--b", required=True)
    c.set_defaults(func=cmd_compare)

    b = sub.add_parser("baseline", help="print analytic per-flow latencies")
    b.add_argument("--scenario", required=True)
    b.set_defaults(func=cmd_baseline)

    k = sub.add_parser("case-study", help="write the built-in case-study scenario as YAML")
    k.add_argument("--mode", choices=[m.value for m in Mode])
    k.add_argument("--seed", type=int)
    k.add_argument("--out")
    k.set_defaults(func=cmd_case_study)
    return p


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ScenarioInvalid as exc:
        for problem in exc.problems:
            print(f"invalid scenario: {problem}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
