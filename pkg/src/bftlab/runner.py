"""Assembles and runs one simulation from a scenario description."""

from __future__ import annotations

from dataclasses import dataclass

from .checkers import run_checkers
from .dqbft import DqReplica, LinHybsterReplica, PbftReplica, engine_kind
from .engine_common import Timing
from .scenario import Scenario
from .simnet import (
    LatencyModel,
    ScenarioInvalid,
    Simulator,
    Trace,
    derive_seed,
)
from .threshsign import TrustedDeployment
from .workload import CLIENT_BASE, ClientActor


@dataclass
class RunResult:
    scenario: Scenario
    seed: int
    trace: Trace
    sim: Simulator
    replicas: list
    clients: list
    violations: list

    @property
    def ok(self) -> bool:
        return not self.violations


def build(scenario: Scenario, seed: int):
    scenario.validate()
    config = scenario.system_config()
    n = config.n_replicas

    trace = Trace(
        meta={
            "scenario": scenario.content_hash(),
            "label": scenario.label,
            "seed": seed,
            "protocol": scenario.protocol,
            "n_replicas": n,
            "max_faults": config.max_faults,
            "controlled": sorted({a.replica for a in scenario.adversary}),
        }
    )
    latency = LatencyModel(
        kind=scenario.latency,
        value=scenario.latency_ms,
        low=scenario.latency_low,
        high=scenario.latency_high,
        seed=derive_seed(seed, "latency"),
    )
    bandwidth = None
    if scenario.bandwidth_mbps > 0:
        bandwidth = scenario.bandwidth_mbps * 1e6 / 8 / 1000.0  # bytes per sim-ms
    sim = Simulator(
        n_replicas=n,
        seed=seed,
        latency=latency,
        max_faults=config.max_faults,
        bandwidth_bytes_per_ms=bandwidth,
        partitions=scenario.build_partitions(),
        drop_probability=scenario.drop_probability,
        trace=trace,
    )
    timing = Timing(mean_delay=latency.mean_delay * scenario.timing_scale)

    deployment = None
    if engine_kind(scenario.protocol) == "lh":
        deployment = TrustedDeployment(
            derive_seed(seed, "deployment"), threshold=config.max_faults + 1
        )

    groups = [
        {
            "per_replica": scenario.clients_per_replica,
            "start_ms": 0.0,
            "requests": scenario.requests_per_client,
            "skip": [],
        }
    ]
    for group in scenario.client_groups:
        groups.append(
            {
                "per_replica": int(group.get("per_replica", 1)),
                "start_ms": float(group.get("start_ms", 0.0)),
                "requests": int(group.get("requests", scenario.requests_per_client)),
                "skip": list(group.get("skip", [])),
            }
        )
    assignments = []  # (client_id, home replica, start, requests)
    next_id = CLIENT_BASE
    for group in groups:
        for rid in range(n):
            if rid in group["skip"]:
                continue
            for _ in range(group["per_replica"]):
                assignments.append((next_id, rid, group["start_ms"], group["requests"]))
                next_id += 1
    static_assign = {cid: rid for cid, rid, _s, _r in assignments}

    replicas = []
    for rid in range(n):
        if scenario.protocol == "pbft":
            replica = PbftReplica(rid, config, timing)
        elif scenario.protocol == "linhybster":
            replica = LinHybsterReplica(rid, config, timing, deployment)
        else:
            replica = DqReplica(
                rid, config, timing, scenario.protocol,
                deployment=deployment, static_assign=static_assign,
            )
        ctx = sim.register(replica)
        replica.bind(ctx)
        replicas.append(replica)

    hybrid = engine_kind(scenario.protocol) == "lh"
    verifier = deployment.verifier() if deployment is not None else None
    clients = []
    for cid, home, start_ms, requests in assignments:
        client = ClientActor(
            cid, config,
            coordinator=home if scenario.protocol in ("dqpbft", "destiny") else 0,
            hybrid=hybrid,
            timing=timing,
            n_requests=requests,
            verifier=verifier,
            adapt_after=scenario.client_adapt_after,
        )
        ctx = sim.register(client, region=sim.regions[home])
        client.bind(ctx)
        clients.append(client)
        sim.call_at(start_ms, client.start)

    for idx, act in enumerate(sorted(scenario.adversary, key=lambda a: (a.at, a.kind, a.replica))):
        sim.call_at(act.at, _apply_action, sim, replicas, act)

    for part in sim.partitions:
        if part.end != float("inf"):
            sim.call_at(part.end, sim.notify_reconnect, part)

    return sim, replicas, clients


def _apply_action(sim: Simulator, replicas: list, act) -> None:
    sim.adversary.claim(act.replica)
    replica = replicas[act.replica]
    if act.kind == "crash":
        sim.crash(act.replica)
    elif act.kind == "restart":
        sim.restart(act.replica)
    elif act.kind == "mute":
        role = act.param("role", "all")
        sim.adversary.muted_roles.setdefault(act.replica, set()).add(role)
        until = act.param("until")
        if until is not None:
            sim.call_at(float(until), _unmute, sim, act.replica, role)
    elif act.kind == "unmute":
        sim.adversary.muted_roles.get(act.replica, set()).discard(act.param("role", "all"))
    elif act.kind == "selective_send":
        targets = act.param("targets", ())
        sim.adversary.selective[act.replica] = frozenset(targets)
        until = act.param("until")
        if until is not None:
            sim.call_at(float(until), _clear_selective, sim, act.replica)
    elif act.kind == "withhold_from":
        victims = act.param("victims", ())
        sim.adversary.withheld[act.replica] = frozenset(victims)
        until = act.param("until")
        if until is not None:
            sim.call_at(float(until), _clear_withheld, sim, act.replica)
    elif act.kind == "equivocate_attempt":
        replica.byz_equivocate(act.param("instance", act.replica))
    elif act.kind == "collude_order_without_disseminate":
        replica.byz_collude(act.param("recipients", ()))
    elif act.kind == "order_fake_mapping":
        replica.byz_order_fake(act.param("owner", act.replica), act.param("dseq", 0))


def _unmute(sim, replica, role):
    sim.adversary.muted_roles.get(replica, set()).discard(role)


def _clear_selective(sim, replica):
    sim.adversary.selective.pop(replica, None)


def _clear_withheld(sim, replica):
    sim.adversary.withheld.pop(replica, None)


def run_scenario(scenario: Scenario, seed: int, check: bool = True) -> RunResult:
    sim, replicas, clients = build(scenario, seed)
    sim.run_until(scenario.duration_ms)
    sim.finalize_stats()
    violations = run_checkers(sim.trace) if check else []
    for violation in violations:
        sim.trace.add("violation", what=violation)
    return RunResult(scenario, seed, sim.trace, sim, replicas, clients, violations)
