"""Post-run safety checkers, evaluated over every trace.

A violation string means a protocol bug (or a genuinely unsafe
schedule); the acceptance gate requires zero across thousands of
adversarial runs.  The checkers only trust the trace, so they can be
re-run offline over a saved trace file.
"""

from __future__ import annotations

from .simnet import Trace


def _meta(trace: Trace) -> dict:
    for rec in trace.records:
        if rec["type"] == "meta":
            return rec
    return {}


def _correct_replicas(trace: Trace) -> set:
    meta = _meta(trace)
    n = meta.get("n_replicas", 0)
    controlled = set(meta.get("controlled", []))
    return {r for r in range(n) if r not in controlled}


def check_prefix_consistency(trace: Trace) -> list:
    """Executed (client, ts) sequences of correct replicas are
    prefix-comparable."""
    correct = _correct_replicas(trace)
    seqs: dict[int, list] = {r: [] for r in correct}
    for rec in trace.records:
        if rec["type"] == "exec" and rec["replica"] in seqs:
            seqs[rec["replica"]].append((rec["client"], rec["ts"]))
    out = []
    replicas = sorted(seqs)
    for i, a in enumerate(replicas):
        for b in replicas[i + 1 :]:
            sa, sb = seqs[a], seqs[b]
            short = min(len(sa), len(sb))
            if sa[:short] != sb[:short]:
                idx = next(k for k in range(short) if sa[k] != sb[k])
                out.append(
                    f"prefix divergence between replicas {a} and {b} at position {idx}: "
                    f"{sa[idx]} vs {sb[idx]}"
                )
    return out


def check_mapping_uniqueness(trace: Trace) -> list:
    """Each committed OSeq maps to one (owner, dseq) and vice versa."""
    correct = _correct_replicas(trace)
    by_oseq: dict[int, tuple] = {}
    by_ref: dict[tuple, int] = {}
    out = []
    for rec in trace.records:
        if rec["type"] != "exec" or rec["replica"] not in correct or rec["owner"] < 0:
            continue
        oseq, ref = rec["oseq"], (rec["owner"], rec["dseq"])
        seen = by_oseq.setdefault(oseq, ref)
        if seen != ref:
            out.append(f"oseq {oseq} mapped to both {seen} and {ref}")
        prev = by_ref.setdefault(ref, oseq)
        if prev != oseq:
            out.append(f"reference {ref} committed at oseq {prev} and {oseq}")
    return out


def check_no_double_execution(trace: Trace) -> list:
    correct = _correct_replicas(trace)
    seen: dict[tuple, set] = {}
    out = []
    for rec in trace.records:
        if rec["type"] != "exec" or rec["replica"] not in correct:
            continue
        key = (rec["replica"], rec["client"], rec["ts"])
        if key[1:] in seen.setdefault(rec["replica"], set()):
            out.append(
                f"replica {rec['replica']} executed client {rec['client']} "
                f"ts {rec['ts']} twice"
            )
        seen[rec["replica"]].add(key[1:])
    return out


def check_result_agreement(trace: Trace) -> list:
    """Correct replicas agree on what every global slot contained and
    produced."""
    correct = _correct_replicas(trace)
    by_oseq: dict[int, tuple] = {}
    out = []
    for rec in trace.records:
        if rec["type"] != "exec" or rec["replica"] not in correct:
            continue
        key = (rec["owner"], rec["dseq"], rec["client"], rec["ts"], rec["result"])
        seen = by_oseq.setdefault(rec["oseq"], key)
        if seen != key:
            out.append(f"divergent execution at oseq {rec['oseq']}: {seen} vs {key}")
    return out


def check_counter_monotonicity(trace: Trace) -> list:
    """Counter values in issued shares never decrease; independent
    shares strictly increase."""
    last: dict[tuple, tuple] = {}
    out = []
    for rec in trace.records:
        if rec["type"] != "ctr":
            continue
        key = (rec["replica"], rec["instance"], rec["counter"])
        value, independent = rec["value"], rec["independent"]
        prev = last.get(key)
        if prev is not None:
            if value < prev[0]:
                out.append(f"counter {key} regressed from {prev[0]} to {value}")
            elif independent and value == prev[0]:
                out.append(f"counter {key} reissued independent value {value}")
        last[key] = (value, independent)
    return out


def check_linearizability(trace: Trace) -> list:
    """A batch submitted after another batch became ready anywhere must
    be ordered after it."""
    correct = _correct_replicas(trace)
    first_submit: dict[tuple, float] = {}
    ready: dict[tuple, float] = {}
    oseq_of: dict[tuple, int] = {}
    for rec in trace.records:
        if rec["type"] == "submit":
            first_submit.setdefault((rec["client"], rec["ts"]), rec["time"])
        elif rec["type"] == "exec" and rec["replica"] in correct:
            key = (rec["client"], rec["ts"])
            if key not in ready or rec["time"] < ready[key]:
                ready[key] = rec["time"]
            oseq_of.setdefault(key, rec["oseq"])
    ordered = sorted(
        (oseq_of[key], ready[key], first_submit.get(key)) for key in oseq_of
    )
    out = []
    # walking from the highest slot down, track the earliest ready time of
    # any later-ordered batch; an earlier slot submitted after that is a
    # real-time inversion
    min_ready_after = float("inf")
    for oseq, ready_t, submit_t in reversed(ordered):
        if submit_t is not None and submit_t > min_ready_after:
            out.append(
                f"linearizability violation: batch at oseq {oseq} submitted at "
                f"{submit_t:.3f} after a later-ordered batch was ready at {min_ready_after:.3f}"
            )
        min_ready_after = min(min_ready_after, ready_t)
    return out


ALL_CHECKERS = (
    check_prefix_consistency,
    check_mapping_uniqueness,
    check_no_double_execution,
    check_result_agreement,
    check_counter_monotonicity,
    check_linearizability,
)


def run_checkers(trace: Trace) -> list:
    violations = []
    for checker in ALL_CHECKERS:
        violations.extend(checker(trace))
    return violations
