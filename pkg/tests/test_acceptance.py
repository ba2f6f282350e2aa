"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Criteria (tolerances pinned here):
 1. safety:        >=1000 seeded adversarial runs per protocol, zero
                   prefix/mapping/double-execution violations
 2. equivocation:  200 targeted attempts against the hybrid engines, all
                   blocked at the trusted boundary, zero divergence
 3. liveness:      failure cases 1/2/3 + reinstatement, 100 seeds each,
                   all pre-fault commands executed everywhere within
                   50 RTT of healing, <= f+1 views per instance
 4. messages:      exact N+2N^2 (pbft) and 2N+4N^2 (dqpbft); linear
                   engines within 7N (+2N slack for the composed one),
                   quadratic fit coefficient < 0.05
 5. model:         published formulas verbatim, orderings at 1 Gbit/s,
                   sm=250B, pm in {5 KiB, 100 KiB}, 6-figure spot checks
 6. load balance:  DQ sent-bytes CV < 0.2; single-primary >= 5x median
 7. slow replica:  +25% aggregate when 9/10 double their load, slow
                   owner still commits; kill recovers >=90% in 100 RTT
 8. probation:     collusion -> view change + no-op fill + 64*2^k window;
                   clean window restores optimism; violating ordering
                   primary replaced
 9. determinism:   20 random (scenario, seed) pairs, identical hashes
"""

import statistics
from concurrent.futures import ProcessPoolExecutor

import numpy as np
import pytest

from scenario_gen import adversarial_scenario, equivocation_scenario

from bftlab.metrics import (
    agreement_message_count,
    build_report,
    byte_cv,
    throughput_timeline,
)
from bftlab.model import GBIT, KIB, default_model_faults, message_count, model_throughput
from bftlab.runner import run_scenario
from bftlab.scenario import Scenario
from bftlab.simnet import action

WORKERS = 2
RTT_MS = 20.0  # flat 10 ms one-way in every liveness scenario


def gate(number: int, name: str, passed: bool, detail: str = "") -> None:
    verdict = "PASS" if passed else "FAIL"
    print(f"\nACCEPTANCE {number} {name}: {verdict} {detail}")
    assert passed, f"criterion {number} ({name}) failed: {detail}"


# --- criterion 1: safety under adversarial schedules ------------------------

SAFETY_MATRIX = [
    ("pbft", 4), ("pbft", 7),
    ("dqpbft", 4), ("dqpbft", 7),
    ("linhybster", 3), ("linhybster", 5),
    ("destiny", 3), ("destiny", 5),
]
SAFETY_SEEDS = 500  # x2 sizes = 1000 runs per protocol


def _safety_chunk(args):
    protocol, n, seeds = args
    bad = []
    for seed in seeds:
        sc = adversarial_scenario(protocol, n, seed * 37 + n)
        try:
            res = run_scenario(sc, seed=seed)
        except Exception as exc:  # an engine crash is a failed run
            bad.append(f"{protocol} n={n} seed={seed}: exception {exc!r}")
            continue
        for violation in res.violations:
            bad.append(f"{protocol} n={n} seed={seed}: {violation}")
    return bad


def test_criterion_1_safety_suite():
    jobs = []
    chunk = 50
    for protocol, n in SAFETY_MATRIX:
        for base in range(0, SAFETY_SEEDS, chunk):
            jobs.append((protocol, n, list(range(base, base + chunk))))
    failures = []
    with ProcessPoolExecutor(max_workers=WORKERS) as pool:
        for bad in pool.map(_safety_chunk, jobs):
            failures.extend(bad)
    total = SAFETY_SEEDS * len(SAFETY_MATRIX)
    gate(1, "safety", not failures,
         f"({total} adversarial runs, {len(failures)} violations"
         + (f"; first: {failures[0]}" if failures else "") + ")")


# --- criterion 2: equivocation freedom ---------------------------------------

def _equivocation_chunk(args):
    protocol, n, seeds = args
    bad = []
    for seed in seeds:
        sc = equivocation_scenario(protocol, n, seed)
        res = run_scenario(sc, seed=seed)
        byz = sc.adversary[0].replica
        blocks = [r for r in res.trace.records
                  if r["type"] == "equiv_block" and r["replica"] == byz]
        if not blocks:
            bad.append(f"{protocol} n={n} seed={seed}: attempt not blocked")
        for violation in res.violations:
            bad.append(f"{protocol} n={n} seed={seed}: {violation}")
    return bad


def test_criterion_2_equivocation_freedom():
    jobs = []
    for protocol, n in (("linhybster", 3), ("destiny", 3), ("linhybster", 5), ("destiny", 5)):
        jobs.append((protocol, n, list(range(50))))
    failures = []
    with ProcessPoolExecutor(max_workers=WORKERS) as pool:
        for bad in pool.map(_equivocation_chunk, jobs):
            failures.extend(bad)
    gate(2, "equivocation-freedom", not failures,
         f"(200 scenarios, {len(failures)} escapes"
         + (f"; first: {failures[0]}" if failures else "") + ")")


# --- criterion 3: liveness after healing --------------------------------------

def _liveness_case(case: str, protocol: str, seed: int):
    """Returns (scenario, fault_time, heal_time, faulty_replicas)."""
    import random
    rng = random.Random(seed)
    n = 3 if protocol == "destiny" else 4
    fault_at = rng.uniform(60.0, 160.0)
    base = dict(protocol=protocol, n_replicas=n, batch_size=2, payload_bytes=16,
                requests_per_client=4, duration_ms=60_000.0,
                label=f"live-{case}-{protocol}-{seed}")
    if case == "case1":
        victim = rng.randrange(1, n)  # keep the ordering primary correct
        actions = [action(fault_at, "crash", victim)]
        heal = fault_at
        faulty = {victim}
    elif case == "case2":
        actions = [action(fault_at, "mute", 0, role="O")]
        heal = fault_at
        faulty = {0}
    elif case == "case3":
        victim = rng.randrange(1, n)
        actions = [action(fault_at, "mute", 0, role="O"),
                   action(fault_at, "crash", victim)]
        base["n_replicas"] = 5 if protocol == "destiny" else 7
        base["max_faults"] = 2
        heal = fault_at
        faulty = {0, victim}
    else:  # reinstatement
        victim = rng.randrange(1, n)
        restart_at = fault_at + rng.uniform(600.0, 1200.0)
        actions = [action(fault_at, "crash", victim),
                   action(restart_at, "restart", victim)]
        heal = restart_at
        faulty = set()  # after the restart everyone is correct again
    return Scenario(adversary=actions, **base), fault_at, heal, faulty


def _liveness_chunk(args):
    case, protocol, seeds = args
    bad = []
    for seed in seeds:
        sc, fault_at, heal, faulty = _liveness_case(case, protocol, seed)
        res = run_scenario(sc, seed=seed)
        if res.violations:
            bad.append(f"{case}/{protocol}/{seed}: {res.violations[0]}")
            continue
        correct = [r for r in range(sc.n_replicas) if r not in faulty]
        # commands submitted to correct coordinators before the fault
        must_execute = set()
        for rec in res.trace.records:
            if rec["type"] == "submit" and rec["time"] < fault_at:
                coordinator = (rec["client"] - 10_000) % sc.n_replicas
                if sc.protocol in ("pbft", "linhybster"):
                    coordinator = 0
                if coordinator not in {a.replica for a in sc.adversary}:
                    must_execute.add((rec["client"], rec["ts"]))
        deadline = heal + 50 * RTT_MS
        done = {rid: set() for rid in correct}
        for rec in res.trace.records:
            if rec["type"] == "exec" and rec["replica"] in done and rec["time"] <= deadline:
                done[rec["replica"]].add((rec["client"], rec["ts"]))
        for rid in correct:
            missing = must_execute - done[rid]
            if missing:
                bad.append(
                    f"{case}/{protocol}/{seed}: replica {rid} missing "
                    f"{sorted(missing)[:3]} by {deadline:.0f}ms"
                )
                break
        views: dict = {}
        for rec in res.trace.records:
            if rec["type"] == "vc":
                views.setdefault(rec["instance"], set()).add(rec["view"])
        budget = sc.max_faults + 1
        for instance, installed in views.items():
            if len(installed) > budget:
                bad.append(
                    f"{case}/{protocol}/{seed}: {instance} installed "
                    f"{sorted(installed)} views (> f+1 = {budget})"
                )
    return bad


def test_criterion_3_liveness_after_gst():
    jobs = []
    for case in ("case1", "case2", "case3", "reinstate"):
        for protocol in ("dqpbft", "destiny"):
            for base in range(0, 50, 25):
                jobs.append((case, protocol, list(range(base, base + 25))))
    failures = []
    with ProcessPoolExecutor(max_workers=WORKERS) as pool:
        for bad in pool.map(_liveness_chunk, jobs):
            failures.extend(bad)
    gate(3, "liveness-after-gst", not failures,
         f"(4 cases x 100 seeds, {len(failures)} stuck"
         + (f"; first: {failures[0]}" if failures else "") + ")")


# --- criterion 4: message-complexity reproduction -------------------------------

def _measured_per_batch(protocol: str, n: int, include_exec: bool):
    sc = Scenario(protocol=protocol, n_replicas=n, clients_per_replica=1,
                  requests_per_client=2, batch_size=2, payload_bytes=16,
                  checkpoint_interval=100_000, duration_ms=60_000.0)
    res = run_scenario(sc, seed=n)
    assert res.violations == []
    batches = len({(r["owner"], r["dseq"]) for r in res.trace.records
                   if r["type"] == "exec" and r["replica"] == 0})
    assert batches == 2 * n
    return agreement_message_count(res.trace, include_exec=include_exec) / batches


def test_criterion_4_message_complexity():
    problems = []
    for n in (4, 7, 10, 16):
        measured = _measured_per_batch("pbft", n, include_exec=False)
        expected = n + 2 * n * n
        if measured != expected:
            problems.append(f"pbft n={n}: {measured} != {expected}")
        measured = _measured_per_batch("dqpbft", n, include_exec=False)
        expected = 2 * n + 4 * n * n
        if measured != expected:
            problems.append(f"dqpbft n={n}: {measured} != {expected}")
    destiny_points = []
    for n in (3, 5, 9, 15):
        measured = _measured_per_batch("linhybster", n, include_exec=True)
        if measured > 7 * n:
            problems.append(f"linhybster n={n}: {measured} > 7N")
        measured = _measured_per_batch("destiny", n, include_exec=True)
        destiny_points.append((n, measured))
        if measured > 7 * n + 2 * n:
            problems.append(f"destiny n={n}: {measured} > 9N")
    ns = np.array([p[0] for p in destiny_points], dtype=float)
    counts = np.array([p[1] for p in destiny_points], dtype=float)
    quad = np.polyfit(ns, counts, 2)[0]
    if abs(quad) >= 0.05:
        problems.append(f"destiny quadratic coefficient {quad:.4f} >= 0.05")
    gate(4, "message-complexity", not problems,
         f"(destiny quadratic coeff {quad:.4f}"
         + (f"; {problems[0]}" if problems else "") + ")")


# --- criterion 5: analytical model -----------------------------------------------

def test_criterion_5_analytical_model():
    problems = []
    # exact symbolic rows at representative points
    checks = [
        ("pbft", 4, 1, 5 * KIB, 7098.239637),
        ("hybster", 3, 1, 5 * KIB, 11638.73371),
        ("dqpbft", 4, 1, 5 * KIB, 10176.39077),
        ("destiny", 4, 1, 5 * KIB, 11591.96291),
        ("destiny", 97, 48, 5 * KIB, 6507.096719),
        ("dqpbft", 97, 32, 100 * KIB, 357.9925978),
    ]
    for protocol, n, f, pm, expected in checks:
        got = model_throughput(protocol, GBIT, n, f, pm, 250.0)
        if abs(got - expected) / expected > 5e-7:
            problems.append(f"{protocol} n={n}: {got} != {expected}")
    for pm in (5 * KIB, 100 * KIB):
        for n in range(4, 302):
            fb = default_model_faults("pbft", n)
            fh = default_model_faults("hybster", n)
            if model_throughput("dqpbft", GBIT, n, fb, pm, 250.0) <= model_throughput(
                "pbft", GBIT, n, fb, pm, 250.0
            ):
                problems.append(f"dqpbft <= pbft at n={n} pm={pm}")
            if model_throughput("destiny", GBIT, n, fh, pm, 250.0) <= model_throughput(
                "hybster", GBIT, n, fh, pm, 250.0
            ):
                problems.append(f"destiny <= hybster at n={n} pm={pm}")
            if model_throughput("destiny", GBIT, n, fb, pm, 250.0) < model_throughput(
                "dqpbft", GBIT, n, fb, pm, 250.0
            ):
                problems.append(f"destiny < dqpbft at n={n} pm={pm}")
    if message_count("pbft", 4) != 36 or message_count("dqpbft", 4) != 72:
        problems.append("message rows broken")
    if message_count("destiny", 3) != 21 or message_count("hybster", 3) != 12:
        problems.append("message rows broken")
    gate(5, "analytical-model", not problems,
         f"({len(problems)} mismatches"
         + (f"; first: {problems[0]}" if problems else "") + ")")


# --- criterion 6: load balance ------------------------------------------------------

def test_criterion_6_load_balance():
    problems = []
    cvs = {}
    for protocol in ("destiny", "dqpbft"):
        sc = Scenario(protocol=protocol, n_replicas=10, clients_per_replica=2,
                      requests_per_client=8, batch_size=50, payload_bytes=512,
                      duration_ms=120_000.0, bandwidth_mbps=200.0, timing_scale=4.0)
        res = run_scenario(sc, seed=6)
        if res.violations:
            problems.append(f"{protocol}: {res.violations[0]}")
        report = build_report(res.trace, duration_ms=sc.duration_ms)
        if report.accepted != 160:
            problems.append(f"{protocol}: only {report.accepted}/160 accepted")
        cv = byte_cv(report.sent_bytes)
        cvs[protocol] = cv
        if cv >= 0.2:
            problems.append(f"{protocol}: sent-bytes CV {cv:.3f} >= 0.2")
    sc = Scenario(protocol="pbft", n_replicas=10, clients_per_replica=2,
                  requests_per_client=8, batch_size=50, payload_bytes=512,
                  duration_ms=240_000.0, bandwidth_mbps=200.0, timing_scale=8.0)
    res = run_scenario(sc, seed=6)
    report = build_report(res.trace, duration_ms=sc.duration_ms)
    median = statistics.median(report.sent_bytes.values())
    ratio = report.sent_bytes.get(0, 0) / median
    if ratio < 5.0:
        problems.append(f"pbft primary/median {ratio:.2f} < 5")
    gate(6, "load-balance", not problems,
         f"(DQ CVs {cvs.get('destiny', -1):.3f}/{cvs.get('dqpbft', -1):.3f}, "
         f"single-primary skew {ratio:.1f}x"
         + (f"; {problems[0]}" if problems else "") + ")")


# --- criterion 7: slow-replica independence --------------------------------------

def _timeline_mean(timeline, lo, hi):
    inside = [count for start, count in timeline if lo <= start < hi]
    return sum(inside) / len(inside) if inside else 0.0


@pytest.mark.parametrize("protocol", ["destiny", "dqpbft"])
def test_criterion_7_slow_replica_independence(protocol):
    double_at, kill_at = 3_000.0, 6_000.0
    sc = Scenario(protocol=protocol, n_replicas=10, clients_per_replica=1,
                  requests_per_client=600, batch_size=4, payload_bytes=64,
                  duration_ms=10_000.0,
                  client_groups=[{"per_replica": 1, "start_ms": double_at,
                                  "requests": 450, "skip": [9]}],
                  adversary=[action(kill_at, "crash", 5)])
    res = run_scenario(sc, seed=7)
    problems = list(res.violations)
    timeline = throughput_timeline(res.trace, 500.0)
    before = _timeline_mean(timeline, 1_000.0, double_at)
    after = _timeline_mean(timeline, double_at + 1_000.0, kill_at)
    if after < 1.25 * before:
        problems.append(f"doubling raised {before:.1f} only to {after:.1f} (<1.25x)")
    slow_own = [r for r in res.trace.records
                if r["type"] == "exec" and r["replica"] == 0 and r["owner"] == 9
                and double_at < r["time"] < kill_at]
    if not slow_own:
        problems.append("slow replica's own commands stopped committing")
    vc_done = [r["time"] for r in res.trace.records
               if r["type"] == "vc" and r["instance"] == "D5" and r["time"] > kill_at]
    # the hybrid engine's alternate collectors can absorb the death of a
    # coordinator without any view change; the recovery clock then starts
    # at the kill itself
    recovery_start = min(vc_done) if vc_done else kill_at
    recover_by = recovery_start + 100 * RTT_MS
    pre_kill = _timeline_mean(timeline, kill_at - 1_500.0, kill_at)
    window = [count for start, count in timeline
              if recovery_start <= start < recover_by]
    recovered = max(window, default=0.0)
    if recovered < 0.9 * pre_kill:
        problems.append(
            f"post-kill peak {recovered:.1f} < 90% of pre-kill {pre_kill:.1f}"
        )
    gate(7, f"slow-replica-independence[{protocol}]", not problems,
         f"(+{(after / before - 1) * 100 if before else 0:.0f}% under doubled load"
         + (f"; {problems[0]}" if problems else "") + ")")


# --- criterion 8: probation mechanics ------------------------------------------------

def test_criterion_8_probation_mechanics():
    problems = []
    # (a) collusion: ordering slot committed without dissemination ->
    #     view change, no-op fill, pessimistic window 64 * 2^k
    sc = Scenario(protocol="dqpbft", n_replicas=4, requests_per_client=2,
                  duration_ms=240_000.0, flood=0, probation_base=64,
                  partitions=[{"a": [1, 2], "b": [3], "at": 0.0, "heal": 4_000.0}],
                  adversary=[
                      action(100.0, "collude_order_without_disseminate", 0,
                             recipients=[1, 2]),
                      action(101.0, "mute", 0, role="D0"),
                  ])
    res = run_scenario(sc, seed=8)
    problems.extend(res.violations)
    noops = {r["replica"] for r in res.trace.records
             if r["type"] == "noop_exec" and r.get("owner") == 0}
    if noops != {0, 1, 2, 3}:
        problems.append(f"no-op fill seen only at {sorted(noops)}")
    probation = [r for r in res.trace.records
                 if r["type"] == "probation" and r["owner"] == 0]
    if not probation:
        problems.append("collusion did not start probation")
    else:
        first = probation[0]
        if first["until"] - first["start"] != 64 * 2 ** (first["count"] - 1):
            problems.append(f"window {first} is not 64*2^k")
    if not any(r["type"] == "vc" and r["instance"] == "D0" for r in res.trace.records):
        problems.append("collusion did not trigger the instance view change")

    # (b) a clean probation window restores optimistic mode
    sc = Scenario(protocol="destiny", n_replicas=3, requests_per_client=40,
                  duration_ms=240_000.0, probation_base=8, client_adapt_after=99,
                  adversary=[action(250.0, "crash", 0),
                             action(800.0, "restart", 0)])
    res = run_scenario(sc, seed=9)
    problems.extend(res.violations)
    cleared = [r for r in res.trace.records
               if r["type"] == "probation_clear" and r["owner"] == 0]
    if not cleared:
        problems.append("clean window did not restore optimistic mode")
    else:
        observer = res.replicas[1]
        record = observer.probation.get(0)
        if record is None or record.until != 0:
            problems.append("probation record still pessimistic after clean window")

    # (c) an ordering primary that keeps ordering a probationary instance
    #     optimistically past grace is replaced
    sc = Scenario(protocol="dqpbft", n_replicas=4, requests_per_client=3,
                  duration_ms=240_000.0, probation_base=64,
                  partitions=[{"a": [1], "b": [0, 2, 3], "at": 40.0, "heal": 1_200.0}],
                  adversary=[action(2_500.0, "order_fake_mapping", 0, owner=1, dseq=40)])
    res = run_scenario(sc, seed=10)
    problems.extend(res.violations)
    if not any(r["type"] == "probation" and r["owner"] == 1 for r in res.trace.records):
        problems.append("setup failed: instance 1 never went on probation")
    violations_seen = [r for r in res.trace.records if r["type"] == "probation_violation"]
    if not violations_seen:
        problems.append("optimistic ordering past grace went undetected")
    o_views = {r["view"] for r in res.trace.records
               if r["type"] == "vc" and r["instance"] == "O"}
    if not o_views:
        problems.append("violating ordering primary was not replaced")
    gate(8, "probation-mechanics", not problems,
         "(collusion, clean-window, violation scenarios)"
         + (f" first: {problems[0]}" if problems else ""))


# --- criterion 9: determinism ----------------------------------------------------------

def test_criterion_9_determinism():
    import random
    rng = random.Random(99)
    mismatches = []
    for trial in range(20):
        protocol, n = rng.choice(SAFETY_MATRIX)
        gen_seed = rng.randrange(10_000)
        run_seed = rng.randrange(10_000)
        hashes = set()
        for _ in range(2):
            sc = adversarial_scenario(protocol, n, gen_seed)
            hashes.add(run_scenario(sc, seed=run_seed).trace.hash())
        if len(hashes) != 1:
            mismatches.append(f"{protocol} n={n} gen={gen_seed} seed={run_seed}")
    gate(9, "determinism", not mismatches,
         f"(20 scenario/seed pairs{'; ' + mismatches[0] if mismatches else ''})")
