"""Benchmark and analysis command line.

Subcommands:

    run      execute one scenario, write the trace + report
    sweep    run a scenario once per value of a swept parameter
    model    evaluate the closed-form throughput/message models
    compare  measured message counts against the model rows
    check    re-run the safety checkers over a saved trace

Exit codes: 0 success, 2 safety-invariant violation, 3 scenario error.
``BFTLAB_OUT_DIR`` overrides the output directory.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .checkers import run_checkers
from .metrics import agreement_message_count, build_report
from .model import (
    GBIT,
    KIB,
    MODEL_PROTOCOLS,
    concurrent_max_throughput,
    default_model_faults,
    message_count,
    model_throughput,
    primary_max_throughput,
)
from .runner import run_scenario
from .scenario import Scenario
from .simnet import ScenarioInvalid, Trace

EXIT_OK = 0
EXIT_VIOLATION = 2
EXIT_SCENARIO = 3


def _out_dir(args) -> Path:
    out = os.environ.get("BFTLAB_OUT_DIR", args.out_dir)
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _parse_set(pairs) -> dict:
    overrides = {}
    for pair in pairs or []:
        if "=" not in pair:
            raise ScenarioInvalid(f"--set expects key=value, got {pair!r}")
        key, raw = pair.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        overrides[key] = value
    return overrides


def _load_scenario(args) -> Scenario:
    if args.scenario:
        scenario = Scenario.from_toml(args.scenario)
    else:
        scenario = Scenario(label="adhoc")
    overrides = _parse_set(args.set)
    for flag, key in (
        ("protocol", "config.protocol"),
        ("n", "config.n_replicas"),
        ("f", "config.max_faults"),
        ("batch_size", "config.batch_size"),
        ("payload_bytes", "config.payload_bytes"),
    ):
        value = getattr(args, flag, None)
        if value is not None:
            overrides[key] = value
    if overrides:
        scenario = scenario.with_overrides(overrides)
    scenario.validate()
    return scenario


def _write_report(out: Path, stem: str, result) -> dict:
    report = build_report(result.trace, duration_ms=result.scenario.duration_ms)
    trace_path = out / f"{stem}.trace.jsonl"
    report_path = out / f"{stem}.report.json"
    result.trace.write(trace_path)
    with open(report_path, "w") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True, default=str)
    print(report.summary())
    print(f"  trace -> {trace_path}")
    print(f"  report -> {report_path}")
    return report.to_dict()


def cmd_run(args) -> int:
    scenario = _load_scenario(args)
    out = _out_dir(args)
    result = run_scenario(scenario, seed=args.seed)
    _write_report(out, f"run-{scenario.protocol}-s{args.seed}", result)
    if result.violations:
        for violation in result.violations:
            print(f"VIOLATION: {violation}", file=sys.stderr)
        return EXIT_VIOLATION
    return EXIT_OK


def cmd_sweep(args) -> int:
    scenario = _load_scenario(args)
    out = _out_dir(args)
    values = [json.loads(v) for v in args.values.split(",")]
    rows = []
    worst = EXIT_OK
    for value in values:
        swept = scenario.with_overrides({args.param: value})
        result = run_scenario(swept, seed=args.seed)
        report = build_report(result.trace, duration_ms=swept.duration_ms)
        rows.append(
            {
                args.param: value,
                "throughput_batches": report.throughput_batches,
                "throughput_commands": report.throughput_commands,
                "latency_p50": report.latency_p50,
                "latency_p95": report.latency_p95,
                "view_changes": report.view_changes,
                "violations": len(result.violations),
            }
        )
        if result.violations:
            worst = EXIT_VIOLATION
    data_path = out / "sweep.tsv"
    keys = list(rows[0].keys())
    with open(data_path, "w") as fh:
        fh.write("\t".join(keys) + "\n")
        for row in rows:
            fh.write("\t".join(str(row[k]) for k in keys) + "\n")
    for row in rows:
        print("  ".join(f"{k}={row[k]}" for k in keys))
    print(f"columnar data -> {data_path}")
    return worst


def cmd_model(args) -> int:
    ns = [int(v) for v in args.n_values.split(",")]
    bandwidth = args.gbit * GBIT
    pm = args.payload_kib * KIB
    sm = args.state_bytes
    out = _out_dir(args)
    protocols = MODEL_PROTOCOLS if args.protocol == "all" else (args.protocol,)
    rows = []
    for n in ns:
        tp = primary_max_throughput(bandwidth, n, pm)
        for protocol in protocols:
            f = args.f if args.f is not None else default_model_faults(protocol, n)
            tput = model_throughput(protocol, bandwidth, n, f, pm, sm)
            tcmax = concurrent_max_throughput(bandwidth, n, f, pm)
            rows.append(
                {
                    "n": n,
                    "protocol": protocol,
                    "f": f,
                    "throughput": tput,
                    "messages": message_count(protocol, n),
                    "t_primary": tp,
                    "t_cmax": tcmax,
                }
            )
    data_path = out / "model.tsv"
    keys = list(rows[0].keys())
    with open(data_path, "w") as fh:
        fh.write("\t".join(keys) + "\n")
        for row in rows:
            fh.write("\t".join(f"{row[k]:.6g}" if isinstance(row[k], float) else str(row[k]) for k in keys) + "\n")
    header = f"{'n':>5} {'protocol':>9} {'f':>4} {'batches/s':>12} {'messages':>9} {'T_p':>12} {'T_cmax':>12}"
    print(header)
    for row in rows:
        print(
            f"{row['n']:>5} {row['protocol']:>9} {row['f']:>4} "
            f"{row['throughput']:>12.1f} {row['messages']:>9} "
            f"{row['t_primary']:>12.1f} {row['t_cmax']:>12.1f}"
        )
    print(f"columnar data -> {data_path}")
    return EXIT_OK


def cmd_compare(args) -> int:
    trace = Trace.load(args.trace)
    meta = next(r for r in trace.records if r["type"] == "meta")
    protocol = meta["protocol"]
    n = meta["n_replicas"]
    execs = {
        (rec["owner"], rec["dseq"])
        for rec in trace.records
        if rec["type"] == "exec" and rec["replica"] == 0
    }
    batches = len(execs)
    if batches == 0:
        print("no committed batches in trace", file=sys.stderr)
        return EXIT_SCENARIO
    model_protocol = "hybster" if protocol == "linhybster" else protocol
    measured = agreement_message_count(trace, include_exec=protocol in ("linhybster", "destiny"))
    per_batch = measured / batches
    modeled = message_count(model_protocol, n)
    print(f"protocol={protocol} n={n} batches={batches}")
    print(f"measured messages/batch: {per_batch:.2f}")
    print(f"modeled messages/batch:  {modeled}")
    print(f"ratio measured/model:    {per_batch / modeled:.4f}")
    return EXIT_OK


def cmd_check(args) -> int:
    trace = Trace.load(args.trace)
    violations = run_checkers(trace)
    if violations:
        for violation in violations:
            print(f"VIOLATION: {violation}", file=sys.stderr)
        return EXIT_VIOLATION
    print(f"{args.trace}: all safety checkers passed")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bftlab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--scenario", help="TOML scenario file")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--protocol", choices=("pbft", "linhybster", "dqpbft", "destiny"))
        p.add_argument("--n", type=int, help="replica count")
        p.add_argument("--f", type=int, help="fault budget")
        p.add_argument("--batch-size", type=int, dest="batch_size")
        p.add_argument("--payload-bytes", type=int, dest="payload_bytes")
        p.add_argument("--out-dir", default="out")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="dotted scenario override, e.g. net.latency_ms=5")

    p_run = sub.add_parser("run", help="run one scenario")
    common(p_run)
    p_run.set_defaults(fn=cmd_run)

    p_sweep = sub.add_parser("sweep", help="run a scenario per swept value")
    common(p_sweep)
    p_sweep.add_argument("--param", required=True, help="dotted scenario key")
    p_sweep.add_argument("--values", required=True, help="comma-separated values")
    p_sweep.set_defaults(fn=cmd_sweep)

    p_model = sub.add_parser("model", help="closed-form throughput/messages")
    p_model.add_argument("--protocol", default="all",
                         choices=("all",) + MODEL_PROTOCOLS)
    p_model.add_argument("--n-values", default="4,7,10,16,31,61,97,193,301")
    p_model.add_argument("--f", type=int, default=None,
                         help="explicit fault budget (default per fault model)")
    p_model.add_argument("--gbit", type=float, default=1.0, help="bandwidth in Gbit/s")
    p_model.add_argument("--payload-kib", type=float, default=5.0)
    p_model.add_argument("--state-bytes", type=float, default=250.0)
    p_model.add_argument("--out-dir", default="out")
    p_model.set_defaults(fn=cmd_model)

    p_cmp = sub.add_parser("compare", help="measured vs modeled message counts")
    p_cmp.add_argument("--trace", required=True)
    p_cmp.set_defaults(fn=cmd_compare)

    p_chk = sub.add_parser("check", help="re-run safety checkers over a trace")
    p_chk.add_argument("--trace", required=True)
    p_chk.set_defaults(fn=cmd_check)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ScenarioInvalid as exc:
        print(f"scenario error: {exc}", file=sys.stderr)
        return EXIT_SCENARIO
    except FileNotFoundError as exc:
        print(f"scenario error: {exc}", file=sys.stderr)
        return EXIT_SCENARIO


if __name__ == "__main__":
    raise SystemExit(main())
