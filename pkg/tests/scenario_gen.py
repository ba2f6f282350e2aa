"""Seeded random adversarial scenario generator shared by the safety,
equivocation and determinism suites."""

from __future__ import annotations

import random

from bftlab.scenario import Scenario, default_faults
from bftlab.simnet import action

ADVERSARY_MENU = (
    "crash",
    "mute",
    "equivocate_attempt",
    "selective_send",
    "collusion",
    "withhold",
)


def adversarial_scenario(protocol: str, n: int, seed: int) -> Scenario:
    """One random adversarial run: a fault budget worth of scripted
    misbehavior over a short closed-loop workload."""
    rng = random.Random(seed)
    f = default_faults(protocol, n)
    dq = protocol in ("dqpbft", "destiny")
    controlled = rng.sample(range(n), rng.randint(1, f)) if f else []
    actions = []
    for idx, replica in enumerate(controlled):
        kind = rng.choice(ADVERSARY_MENU)
        at = rng.uniform(30.0, 250.0)
        others = [r for r in range(n) if r != replica]
        if kind == "crash":
            actions.append(action(at, "crash", replica))
            if rng.random() < 0.5:
                actions.append(action(at + rng.uniform(400, 1500), "restart", replica))
        elif kind == "mute":
            role = rng.choice(["all", "D", "O"]) if dq else "all"
            actions.append(action(at, "mute", replica, role=role))
            if rng.random() < 0.5:
                actions.append(action(at + rng.uniform(400, 1500), "unmute", replica, role=role))
        elif kind == "equivocate_attempt":
            actions.append(action(at, "equivocate_attempt", replica))
        elif kind == "selective_send":
            keep = rng.sample(others, max(1, len(others) - 1))
            actions.append(
                action(at, "selective_send", replica, targets=keep, until=at + rng.uniform(300, 1200))
            )
        elif kind == "collusion" and dq:
            quorum = rng.sample(others, max(1, (n - 1) // 2))
            actions.append(action(at, "collude_order_without_disseminate", replica, recipients=quorum))
        elif kind == "withhold" or (kind == "collusion" and not dq):
            victims = rng.sample(others, rng.randint(1, max(1, len(others) // 2)))
            actions.append(
                action(at, "withhold_from", replica, victims=victims, until=at + rng.uniform(300, 1200))
            )
    partitions = []
    if rng.random() < 0.3:
        cut = rng.randint(1, n - 1)
        ids = list(range(n))
        rng.shuffle(ids)
        start = rng.uniform(50, 300)
        partitions.append(
            {"a": ids[:cut], "b": ids[cut:], "at": start, "heal": start + rng.uniform(200, 900)}
        )
    return Scenario(
        protocol=protocol,
        n_replicas=n,
        batch_size=2,
        payload_bytes=16,
        requests_per_client=rng.randint(2, 4),
        clients_per_replica=1,
        duration_ms=30_000.0,
        flood=0 if rng.random() < 0.7 else None,
        adversary=actions,
        partitions=partitions,
        label=f"adv-{protocol}-n{n}-s{seed}",
    )


def equivocation_scenario(protocol: str, n: int, seed: int) -> Scenario:
    """Targeted equivocation against the hybrid engines."""
    rng = random.Random(seed)
    replica = rng.randrange(n)
    return Scenario(
        protocol=protocol,
        n_replicas=n,
        batch_size=2,
        payload_bytes=16,
        requests_per_client=2,
        duration_ms=20_000.0,
        adversary=[action(rng.uniform(20, 150), "equivocate_attempt", replica)],
        label=f"equiv-{protocol}-n{n}-s{seed}",
    )
