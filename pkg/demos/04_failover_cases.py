"""The three failure cases, plus reinstatement.

Case 1: a dissemination coordinator dies - its instance gets a view
change and unfilled committed slots become no-ops; everyone else keeps
going.  Case 2: the ordering primary dies - dissemination continues and
the backlog drains once the new ordering view installs.  Case 3: both
at once - each instance recovers independently.  A restarted replica is
reinstated as its own coordinator through an agreed view skip and faces
probation.

Run:  python demos/04_failover_cases.py
"""

from bftlab import Scenario, action, run_scenario


def report(title, result):
    accepts = [r for r in result.trace.records if r["type"] == "accept"]
    views = sorted({
        (r["instance"], r["view"]) for r in result.trace.records if r["type"] == "vc"
    })
    last = max((r["time"] for r in accepts), default=0.0)
    print(f"\n=== {title} ===")
    print(f"  view changes: {views}")
    print(f"  commands accepted: {len(accepts)} (last at {last:.0f} ms)")
    print(f"  safety violations: {len(result.violations)}")


base = dict(n_replicas=3, requests_per_client=4, batch_size=2,
            payload_bytes=32, duration_ms=120_000.0)

result = run_scenario(
    Scenario(protocol="destiny", adversary=[action(60.0, "crash", 1)], **base), seed=1
)
report("case 1: coordinator of instance D1 crashes", result)

result = run_scenario(
    Scenario(protocol="destiny", adversary=[action(60.0, "mute", 0, role="O")], **base),
    seed=2,
)
report("case 2: ordering primary goes mute", result)

result = run_scenario(
    Scenario(protocol="destiny", n_replicas=5, max_faults=2,
             requests_per_client=4, batch_size=2, payload_bytes=32,
             duration_ms=120_000.0,
             adversary=[action(60.0, "mute", 0, role="O"),
                        action(60.0, "crash", 1)]),
    seed=3,
)
report("case 3: both fail simultaneously (N=5, f=2)", result)

result = run_scenario(
    Scenario(protocol="destiny",
             adversary=[action(60.0, "crash", 1), action(2000.0, "restart", 1)],
             **base),
    seed=4,
)
report("reinstatement: crash, restart, agreed view skip", result)
probation = [r for r in result.trace.records if r["type"] == "probation"]
print(f"  probation after reinstatement: count={probation[-1]['count']}, "
      f"window=[{probation[-1]['start']}, {probation[-1]['until']})")
