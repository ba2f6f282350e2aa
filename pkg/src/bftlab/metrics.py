"""Trace post-processing: throughput, latency, traffic and timeline
metrics."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .simnet import Trace

PROTOCOL_PHASES = ("PrePrepare", "Prepare", "CommitSig", "Commit")
EXEC_PHASES = ("ExecSig", "ExecProof")


def _meta(trace: Trace) -> dict:
    for rec in trace.records:
        if rec["type"] == "meta":
            return rec
    return {}


def observer_replica(trace: Trace) -> int:
    """Lowest-indexed replica the adversary never touched."""
    meta = _meta(trace)
    controlled = set(meta.get("controlled", []))
    for rid in range(meta.get("n_replicas", 1)):
        if rid not in controlled:
            return rid
    return 0


def agreement_message_count(trace: Trace, include_exec: bool = True) -> int:
    """Protocol messages delivered (self-deliveries included), counting
    the agreement phases and, optionally, the execution proof round.
    Client, retransmission and view-change traffic is excluded."""
    total = 0
    for rec in trace.records:
        if rec["type"] != "msgstat":
            continue
        kind = rec["kind"]
        base = kind.split("-")[-1]
        if base in PROTOCOL_PHASES:
            total += rec["delivered"]
        elif include_exec and kind in EXEC_PHASES:
            total += rec["delivered"]
    return total


def message_counts_by_kind(trace: Trace) -> dict:
    return {
        rec["kind"]: rec["delivered"] for rec in trace.records if rec["type"] == "msgstat"
    }


def committed_batches(trace: Trace, replica: Optional[int] = None) -> list:
    """Exec records at the observer replica, in execution order."""
    rid = observer_replica(trace) if replica is None else replica
    return [
        rec
        for rec in trace.records
        if rec["type"] == "exec" and rec["replica"] == rid
    ]


@dataclass
class MetricsReport:
    label: str
    seed: int
    protocol: str
    n_replicas: int
    duration_ms: float
    batches: int
    commands: int
    throughput_batches: float  # per simulated second
    throughput_commands: float
    per_owner_batches: dict
    latency_p50: float
    latency_p95: float
    latency_p99: float
    latency_mean: float
    accepted: int
    clients: int
    littles_law_ratio: float  # throughput * mean latency / clients
    message_counts: dict
    sent_bytes: dict
    recv_bytes: dict
    view_changes: int
    trace_hash: str

    def to_dict(self) -> dict:
        return dict(self.__dict__)

    def summary(self) -> str:
        lines = [
            f"run {self.label} (protocol={self.protocol}, n={self.n_replicas}, seed={self.seed})",
            f"  committed: {self.batches} batches / {self.commands} commands "
            f"in {self.duration_ms:.0f} ms "
            f"({self.throughput_batches:.1f} batches/s, {self.throughput_commands:.1f} cmd/s)",
            f"  latency ms: p50={self.latency_p50:.1f} p95={self.latency_p95:.1f} "
            f"p99={self.latency_p99:.1f} mean={self.latency_mean:.1f}",
            f"  accepted {self.accepted} replies across {self.clients} clients "
            f"(Little's law ratio {self.littles_law_ratio:.2f})",
            f"  view changes: {self.view_changes}",
            f"  trace {self.trace_hash[:16]}",
        ]
        if self.sent_bytes:
            sent = [self.sent_bytes.get(r, 0) for r in sorted(self.sent_bytes)]
            lines.append(
                f"  sent bytes per replica: min={min(sent)} max={max(sent)} "
                f"cv={byte_cv(self.sent_bytes):.3f}"
            )
        return "\n".join(lines)


def byte_cv(sent_bytes: dict) -> float:
    values = np.array([v for _k, v in sorted(sent_bytes.items())], dtype=float)
    if len(values) == 0 or values.mean() == 0:
        return 0.0
    return float(values.std() / values.mean())


def build_report(trace: Trace, duration_ms: Optional[float] = None) -> MetricsReport:
    meta = _meta(trace)
    execs = committed_batches(trace)
    accepts = [rec for rec in trace.records if rec["type"] == "accept"]
    latencies = np.array([rec["time"] - rec["submit"] for rec in accepts], dtype=float)
    clients = {rec["client"] for rec in trace.records if rec["type"] == "submit"}
    if duration_ms is None:
        times = [rec["time"] for rec in trace.records if rec["type"] in ("exec", "accept")]
        duration_ms = max(times) if times else 0.0
    span_s = max(duration_ms / 1000.0, 1e-9)

    per_owner: dict[int, int] = {}
    commands = 0
    for rec in execs:
        per_owner[rec["owner"]] = per_owner.get(rec["owner"], 0) + 1
        commands += rec.get("nops", 1)

    sent = {}
    recv = {}
    for rec in trace.records:
        if rec["type"] == "bytes":
            sent[rec["replica"]] = rec["sent"]
            recv[rec["replica"]] = rec["recv"]
    vcs = {
        (rec["instance"], rec["view"])
        for rec in trace.records
        if rec["type"] == "vc"
    }
    tput_b = len(execs) / span_s
    mean_lat = float(latencies.mean()) if len(latencies) else 0.0
    ratio = (tput_b * (mean_lat / 1000.0) / len(clients)) if clients and mean_lat else 0.0
    return MetricsReport(
        label=meta.get("label", "run"),
        seed=meta.get("seed", 0),
        protocol=meta.get("protocol", "?"),
        n_replicas=meta.get("n_replicas", 0),
        duration_ms=duration_ms,
        batches=len(execs),
        commands=commands,
        throughput_batches=tput_b,
        throughput_commands=commands / span_s,
        per_owner_batches=per_owner,
        latency_p50=float(np.percentile(latencies, 50)) if len(latencies) else 0.0,
        latency_p95=float(np.percentile(latencies, 95)) if len(latencies) else 0.0,
        latency_p99=float(np.percentile(latencies, 99)) if len(latencies) else 0.0,
        latency_mean=mean_lat,
        accepted=len(accepts),
        clients=len(clients),
        littles_law_ratio=ratio,
        message_counts=message_counts_by_kind(trace),
        sent_bytes=sent,
        recv_bytes=recv,
        view_changes=len(vcs),
        trace_hash=trace.hash(),
    )


def throughput_timeline(trace: Trace, bucket_ms: float, replica: Optional[int] = None) -> list:
    """(bucket_start_ms, batches) pairs at the observer replica."""
    execs = committed_batches(trace, replica)
    if not execs:
        return []
    end = max(rec["time"] for rec in execs)
    buckets = [0] * (int(end // bucket_ms) + 1)
    for rec in execs:
        buckets[int(rec["time"] // bucket_ms)] += 1
    return [(i * bucket_ms, cnt) for i, cnt in enumerate(buckets)]
