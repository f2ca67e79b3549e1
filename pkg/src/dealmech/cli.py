"""Command-line front end.

Commands::

    run-single             single-slot auction on a ``single_slot`` file
    run-general            general mechanism on a general/network/delay/principal-agent file
    verify-ic              grid IC/IR scan of a file, or of sampled single-slot instances
    demo-threshold         threshold-welfare witness and quality-guarantee sweep
    demo-negative          profitable misreports under a concave welfare function
    build-network          compile a network file, run it, report paths and payments
    build-principal-agent  compile a principal-agent file, run it, report effort obedience

Exit codes: 0 ok, 2 unreadable file or bad flags, 3 invalid instance,
4 IC violation under a convex welfare function, 5 size guard exceeded.
Reports go to ``--out`` or stdout; diagnostics go to stderr.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from pathlib import Path

import numpy as np

from . import applications as apps
from . import ic_lab
from .errors import GuardExceeded, InvalidInstance, NotConvexError
from .general import GeneralInstance, realize_states, run_general
from .io import ParseError, dump_instance, read_document, parse_instance
from .scoring import NON_CONVEX
from .single_slot import SingleSlotBid, realize_purchase, run_auction
from .welfare import binary_welfare

EXIT_OK = 0
EXIT_PARSE = 2
EXIT_INVALID = 3
EXIT_IC_VIOLATION = 4
EXIT_GUARD = 5

COMMANDS = (
    "run-single", "run-general", "verify-ic", "demo-threshold",
    "demo-negative", "build-network", "build-principal-agent",
)
VERIFY_CSV_COLUMNS = ("instance_id", "bidder", "truthful_utility", "best_gap", "verdict", "seed", "grid")


def _parse_params(pairs) -> dict[str, float]:
    out = {}
    for pair in pairs or ():
        key, sep, value = pair.partition("=")
        try:
            if not sep:
                raise ValueError
            out[key.strip()] = float(value)
        except ValueError:
            raise _Fail(EXIT_PARSE, f"--param expects key=number, got {pair!r}") from None
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dealmech", description="Truthful scoring-rule auctions.")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--instance", metavar="PATH", help="instance file (JSON)")
    parser.add_argument("--welfare", metavar="NAME", help="catalog welfare function: linear, square, threshold, concave_demo")
    parser.add_argument("--param", metavar="K=V", action="append", default=[], help="welfare parameter (repeatable)")
    parser.add_argument("--seed", type=int, default=None, help="seed for sampling and state realization")
    parser.add_argument("--grid", type=int, default=None, help="deviation grid resolution")
    parser.add_argument("--count", type=int, default=None, help="number of sampled instances")
    parser.add_argument("--out", metavar="PATH", help="write the report here instead of stdout")
    parser.add_argument("--format", choices=("json", "csv"), default="json")
    return parser


class _Fail(Exception):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


def _welfare_choice(args, doc=None, default="linear"):
    name, params = default, {}
    if doc and isinstance(doc.get("welfare"), dict) and "name" in doc["welfare"]:
        name = doc["welfare"]["name"]
        params = dict(doc["welfare"].get("params", {}))
    if args.welfare:
        name, params = args.welfare, {}
    params.update(_parse_params(args.param))
    try:
        g = binary_welfare(name, params)
    except (KeyError, TypeError, ValueError) as exc:
        raise _Fail(EXIT_INVALID, f"welfare: {exc}") from None
    return name, params, g


def _load(args):
    if not args.instance:
        raise _Fail(EXIT_PARSE, f"{args.command} needs --instance")
    doc = read_document(args.instance)
    return doc, parse_instance(doc)


def _to_general(obj) -> GeneralInstance:
    if isinstance(obj, GeneralInstance):
        return obj
    if isinstance(obj, apps.NetworkProcurementSpec):
        return apps.build_network_instance(obj)
    if isinstance(obj, apps.DelayNetworkSpec):
        return apps.build_delay_instance(obj)
    if isinstance(obj, apps.PrincipalAgentSpec):
        return apps.build_principal_agent_instance(obj)
    raise _Fail(EXIT_INVALID, "kind: expected a general, network, delay_network or principal_agent instance")


def _config(args, **extra) -> dict:
    cfg = {"command": args.command, "instance": args.instance, "seed": args.seed, "grid": args.grid}
    cfg.update(extra)
    return cfg


def _general_report(instance: GeneralInstance, seed) -> dict:
    result = run_general(instance)
    realized = None
    if seed is not None:
        realized = realize_states(instance, result.chosen_outcome, seed)
        result = run_general(instance, realized)
    transfers = {}
    for (i, state), amount in result.transfers.items():
        transfers.setdefault(str(i), {})[state] = amount
    return {
        "chosen_outcome": result.chosen_outcome,
        "objective_value": result.objective_value,
        "objectives": result.objectives,
        "counterfactuals": {str(i): v for i, v in result.counterfactuals.items()},
        "counterfactual_rule": {str(i): v for i, v in result.counterfactual_rule.items()},
        "transfers": transfers,
        "realized_states": None if realized is None else {str(i): s for i, s in realized.items()},
        "realized_payments": None if result.realized_payments is None
        else {str(i): v for i, v in result.realized_payments.items()},
        "expected_utilities": ic_lab.general_truthful_utilities(instance),
    }, result


def cmd_run_single(args):
    doc, bids = _load(args)
    if not isinstance(bids, list):
        raise _Fail(EXIT_INVALID, "kind: run-single needs a single_slot instance")
    name, params, g = _welfare_choice(args, doc)
    result = run_auction(bids, g)
    report = {
        "config": _config(args, welfare={"name": name, "params": params}),
        "winner_index": result.winner_index,
        "adjusted_values": list(result.adjusted_values),
        "second_adjusted": result.second_adjusted,
        "payment_if_purchase": result.payment_if_purchase,
        "payment_if_no_purchase": result.payment_if_no_purchase,
        "realized_purchase": None,
        "realized_payment": None,
    }
    if args.seed is not None:
        omega = realize_purchase(bids[result.winner_index].quality, args.seed)
        report["realized_purchase"] = omega
        report["realized_payment"] = result.payment(result.winner_index, omega)
    rows = [
        {"bidder": i, "adjusted_value": h, "winner": int(i == result.winner_index),
         "payment_if_purchase": result.payment(i, 1), "payment_if_no_purchase": result.payment(i, 0)}
        for i, h in enumerate(result.adjusted_values)
    ]
    return report, rows, EXIT_OK


def _transfer_rows(report):
    return [
        {"bidder": i, "state": s, "payment": amount}
        for i, per in report["transfers"].items() for s, amount in per.items()
    ]


def cmd_run_general(args):
    doc, obj = _load(args)
    instance = _to_general(obj)
    body, _ = _general_report(instance, args.seed)
    report = {"config": _config(args, kind=doc["kind"]), **body}
    return report, _transfer_rows(report), EXIT_OK


def cmd_build_network(args):
    doc, spec = _load(args)
    if not isinstance(spec, (apps.NetworkProcurementSpec, apps.DelayNetworkSpec)):
        raise _Fail(EXIT_INVALID, "kind: build-network needs a network or delay_network instance")
    instance = _to_general(spec)
    body, _ = _general_report(instance, args.seed)
    report = {"config": _config(args, kind=doc["kind"]), "instance": dump_instance(instance), **body}
    if isinstance(spec, apps.NetworkProcurementSpec):
        paths = apps.network_paths(spec)
        report["path_costs"] = {o: apps.path_cost(spec, p) for o, p in paths.items()}
    return report, _transfer_rows(report), EXIT_OK


def cmd_build_principal_agent(args):
    doc, spec = _load(args)
    if not isinstance(spec, apps.PrincipalAgentSpec):
        raise _Fail(EXIT_INVALID, "kind: build-principal-agent needs a principal_agent instance")
    instance = apps.build_principal_agent_instance(spec)
    body, result = _general_report(instance, args.seed)
    report = {
        "config": _config(args, kind=doc["kind"]),
        "instance": dump_instance(instance),
        **body,
        "assignment": {a.name: e for a, e in zip(spec.agents, apps.assignment_of(spec, result.chosen_outcome))},
        "obedience_margins": {spec.agents[i].name: m for i, m in apps.effort_obedience(spec, result).items()},
    }
    return report, _transfer_rows(report), EXIT_OK


def cmd_verify_ic(args):
    seed = 42 if args.seed is None else args.seed
    rows, records = [], []
    violated = False
    convex = True
    if args.instance:
        doc, obj = _load(args)
        if isinstance(obj, list):
            name, params, g = _welfare_choice(args, doc)
            convex = g.strictness != NON_CONVEX
            grid = args.grid or 101
            reports = ic_lab.check_ic_single_slot(obj, g, grid, allow_nonconvex=not convex)
            ir = ic_lab.check_ir(obj, g) if convex else None
            welfare = {"name": name, "params": params}
        else:
            instance = _to_general(obj)
            grid = args.grid or 5
            reports = ic_lab.check_ic_general(instance, grid)
            ir = ic_lab.check_ir(instance)
            welfare = {"name": "instance"}
        batches = [(0, reports, ir)]
    else:
        name, params, g = _welfare_choice(args)
        convex = g.strictness != NON_CONVEX
        grid = args.grid or 101
        count = 200 if args.count is None else args.count
        sampler = ic_lab.InstanceSampler(seed=seed)
        batches = []
        for k, bids in enumerate(ic_lab.sample_instances(sampler, count)):
            reports = ic_lab.check_ic_single_slot(bids, g, grid, allow_nonconvex=not convex)
            batches.append((k, reports, ic_lab.check_ir(bids, g) if convex else None))
        welfare = {"name": name, "params": params}

    for k, reports, ir in batches:
        for r in reports:
            violated |= r.verdict == ic_lab.IC_VIOLATED
            rows.append({"instance_id": k, "bidder": r.bidder, "truthful_utility": r.truthful_utility,
                         "best_gap": r.gap, "verdict": r.verdict, "seed": seed, "grid": grid})
        records.append({"instance_id": k, "reports": [r.to_dict() for r in reports], "ir": ir})
    max_gap = max((row["best_gap"] for row in rows), default=0.0)
    report = {
        "config": _config(args, seed=seed, grid=grid, welfare=welfare, count=len(batches)),
        "summary": {"max_gap": max_gap, "violations": sum(r["verdict"] == ic_lab.IC_VIOLATED for r in rows),
                    "ir_ok": all(all(ir) for _, _, ir in batches if ir is not None)},
        "instances": records,
    }
    code = EXIT_IC_VIOLATION if violated and convex else EXIT_OK
    if code:
        print(f"IC violation found under convex welfare (max gap {max_gap:.3g})", file=sys.stderr)
    return report, rows, code


def cmd_demo_threshold(args):
    params = {"alpha": 0.2, "beta": 0.6, "v_max": 10.0}
    params.update(_parse_params(args.param))
    a, b, vmax = params["alpha"], params["beta"], params["v_max"]
    try:
        witness = ic_lab.demo_no_approximation(a, b, vmax)
    except ValueError as exc:
        raise _Fail(EXIT_INVALID, str(exc)) from None
    seed = 42 if args.seed is None else args.seed
    count = 500 if args.count is None else args.count
    g = binary_welfare("threshold", params)
    rng = np.random.default_rng(seed)
    failures = 0
    for _ in range(count):
        m = int(rng.integers(2, 7))
        values = rng.uniform(0.0, vmax, size=m)
        qualities = rng.uniform(0.0, 1.0, size=m)
        qualities[int(rng.integers(m))] = rng.uniform(b, 1.0)
        bids = [SingleSlotBid(float(v), float(q)) for v, q in zip(values, qualities)]
        winner = bids[run_auction(bids, g).winner_index]
        failures += winner.quality < a
    report = {
        "config": _config(args, seed=seed, welfare={"name": "threshold", "params": params}, count=count),
        "witness": witness.to_dict(),
        "quality_guarantee": {"instances": count, "failures": failures},
    }
    rows = [{"bidder": i, "value": bid.value, "quality": bid.quality, "adjusted_value": h,
             "winner": int(i == witness.winner_index)}
            for i, (bid, h) in enumerate(zip(witness.bids, witness.adjusted_values))]
    return report, rows, EXIT_OK


def cmd_demo_negative(args):
    name = args.welfare or "concave_demo"
    _, params, g = _welfare_choice(args, default=name)
    seed = 42 if args.seed is None else args.seed
    grid = args.grid or 101
    count = 50 if args.count is None else args.count
    sampler = ic_lab.InstanceSampler(seed=seed)
    rows, best = [], None
    for k, bids in enumerate(ic_lab.sample_instances(sampler, count)):
        for r in ic_lab.check_ic_single_slot(bids, g, grid, allow_nonconvex=True):
            rows.append({"instance_id": k, "bidder": r.bidder, "truthful_utility": r.truthful_utility,
                         "best_gap": r.gap, "verdict": r.verdict, "seed": seed, "grid": grid})
            if best is None or r.gap > best[1].gap:
                best = (k, r, bids)
    report = {
        "config": _config(args, seed=seed, grid=grid, welfare={"name": name, "params": params}, count=count),
        "convexity_claim": g.strictness,
        "violations": sum(r["verdict"] == ic_lab.IC_VIOLATED for r in rows),
        "witness": None if best is None else {
            "instance_id": best[0],
            "instance": dump_instance(best[2]),
            "report": best[1].to_dict(),
        },
    }
    return report, rows, EXIT_OK


_HANDLERS = {
    "run-single": cmd_run_single,
    "run-general": cmd_run_general,
    "verify-ic": cmd_verify_ic,
    "demo-threshold": cmd_demo_threshold,
    "demo-negative": cmd_demo_negative,
    "build-network": cmd_build_network,
    "build-principal-agent": cmd_build_principal_agent,
}


def _render(report, rows, fmt, command) -> str:
    if fmt == "json":
        return json.dumps(report, indent=2) + "\n"
    buf = io.StringIO()
    columns = VERIFY_CSV_COLUMNS if command == "verify-ic" else (list(rows[0]) if rows else [])
    writer = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        report, rows, code = _HANDLERS[args.command](args)
    except _Fail as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except ParseError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except (InvalidInstance, NotConvexError) as exc:
        print(f"invalid instance: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except GuardExceeded as exc:
        print(f"guard exceeded: {exc}", file=sys.stderr)
        return EXIT_GUARD
    text = _render(report, rows, args.format, args.command)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return code


if __name__ == "__main__":
    sys.exit(main())
