"""Deterministic, seeded discrete-event network simulator.

Single-threaded event loop over a (time, tiebreaker) heap: identical
seed and scenario produce identical event traces.  Randomness comes
from named streams derived by stable hashing from the root seed, so
adding a scenario element never perturbs unrelated streams.

The link model supports a synthetic 10-region latency table (fixed
per-pair values drawn uniformly from 10-120 ms at deployment time),
flat latency, per-message jitter, loss probability, timed partitions
and an optional per-replica outbound bandwidth cap.

The adversary controls at most f replicas and only acts through the
scripted action set: crash, restart, mute, equivocate_attempt,
selective_send, collude_order_without_disseminate, withhold_from.
"""

from __future__ import annotations

import hashlib
import heapq
import json
import random
from dataclasses import dataclass
from typing import Callable, Iterable, Optional

from .msgs import Message

_DELIVER = 0
_TIMER = 1
_CALL = 2


class ScenarioInvalid(ValueError):
    pass


class TooManyFaults(ScenarioInvalid):
    """Adversary would control more than f replicas."""


def derive_seed(root: int, *labels) -> int:
    h = hashlib.sha256(str(root).encode())
    for label in labels:
        h.update(b"/")
        h.update(str(label).encode())
    return int.from_bytes(h.digest()[:8], "big")


def derived_rng(root: int, *labels) -> random.Random:
    return random.Random(derive_seed(root, *labels))


# --- latency / link model ---------------------------------------------------

N_REGIONS = 10


class LatencyModel:
    """Per-ordered-pair one-way delays, in simulated milliseconds."""

    def __init__(
        self,
        kind: str = "synthetic",
        value: float = 10.0,
        low: float = 10.0,
        high: float = 120.0,
        seed: int = 0,
    ) -> None:
        if kind not in ("synthetic", "flat", "jitter"):
            raise ScenarioInvalid(f"unknown latency kind {kind!r}")
        self.kind = kind
        self.value = value
        self.low = low
        self.high = high
        self._streams: dict[tuple, random.Random] = {}
        self._seed = seed
        if kind == "synthetic":
            rng = derived_rng(seed, "latency-table")
            self.table = [
                [
                    2.0 if a == b else round(rng.uniform(low, high), 3)
                    for b in range(N_REGIONS)
                ]
                for a in range(N_REGIONS)
            ]
            # symmetric, like a real inter-region table
            for a in range(N_REGIONS):
                for b in range(a):
                    self.table[a][b] = self.table[b][a]

    @property
    def mean_delay(self) -> float:
        if self.kind == "flat":
            return self.value
        if self.kind == "jitter":
            return (self.low + self.high) / 2.0
        cells = [self.table[a][b] for a in range(N_REGIONS) for b in range(N_REGIONS) if a != b]
        return sum(cells) / len(cells)

    def sample(self, src_region: int, dst_region: int, link_key: tuple) -> float:
        if self.kind == "flat":
            return self.value
        if self.kind == "jitter":
            rng = self._streams.get(link_key)
            if rng is None:
                rng = derived_rng(self._seed, "jitter", *link_key)
                self._streams[link_key] = rng
            return rng.uniform(self.low, self.high)
        return self.table[src_region % N_REGIONS][dst_region % N_REGIONS]


@dataclass
class Partition:
    group_a: frozenset
    group_b: frozenset
    start: float
    end: float  # exclusive; inf = until healed

    def blocks(self, src: int, dst: int, now: float) -> bool:
        if not (self.start <= now < self.end):
            return False
        return (src in self.group_a and dst in self.group_b) or (
            src in self.group_b and dst in self.group_a
        )


# --- adversary ---------------------------------------------------------------

ADVERSARY_KINDS = (
    "crash",
    "restart",
    "mute",
    "unmute",
    "equivocate_attempt",
    "selective_send",
    "withhold_from",
    "collude_order_without_disseminate",
    "order_fake_mapping",
)


@dataclass(frozen=True)
class AdversaryAction:
    at: float
    kind: str
    replica: int
    params: tuple = ()  # sorted (key, value) pairs

    def param(self, key, default=None):
        for k, v in self.params:
            if k == key:
                return v
        return default


def action(at: float, kind: str, replica: int, **params) -> AdversaryAction:
    if kind not in ADVERSARY_KINDS:
        raise ScenarioInvalid(f"unknown adversary action {kind!r}")
    items = []
    for k in sorted(params):
        v = params[k]
        if isinstance(v, (list, set, frozenset)):
            v = tuple(sorted(v))
        items.append((k, v))
    return AdversaryAction(at, kind, replica, tuple(items))


class Adversary:
    """Holds the live fault state of the controlled replicas."""

    def __init__(self, max_faults: int) -> None:
        self.max_faults = max_faults
        self.controlled: set[int] = set()
        self.muted_roles: dict[int, set[str]] = {}
        self.selective: dict[int, frozenset] = {}
        self.withheld: dict[int, frozenset] = {}

    def claim(self, replica: int) -> None:
        if replica not in self.controlled and len(self.controlled) >= self.max_faults:
            raise TooManyFaults(
                f"cannot control replica {replica}: already at f={self.max_faults}"
            )
        self.controlled.add(replica)

    def allows(self, src: int, dst: int, msg: Message) -> bool:
        if src not in self.controlled:
            return True
        roles = self.muted_roles.get(src)
        if roles:
            kind = msg.kind
            tag = getattr(msg, "tag", "")
            inner = getattr(msg, "inner", None)
            if inner is not None:
                kind = inner.kind
                tag = getattr(inner, "tag", "")
            for role in roles:
                if role == "all":
                    return False
                if tag == role or kind.startswith(role + "-"):
                    return False
        allowed = self.selective.get(src)
        if allowed is not None and dst not in allowed and dst != src:
            return False
        blocked = self.withheld.get(src)
        if blocked is not None and dst in blocked:
            return False
        return True


# --- trace -------------------------------------------------------------------


class Trace:
    """Line-delimited structured records; the hash is a pure function of
    (scenario, seed)."""

    def __init__(self, meta: Optional[dict] = None) -> None:
        self.records: list[dict] = []
        if meta:
            self.add("meta", **meta)

    def add(self, rtype: str, **fields) -> None:
        rec = {"type": rtype}
        rec.update(fields)
        self.records.append(rec)

    def lines(self) -> Iterable[str]:
        for rec in self.records:
            yield json.dumps(rec, sort_keys=True, separators=(",", ":"))

    def hash(self) -> str:
        h = hashlib.sha256()
        for line in self.lines():
            h.update(line.encode())
            h.update(b"\n")
        return h.hexdigest()

    def write(self, path) -> None:
        with open(path, "w") as fh:
            for line in self.lines():
                fh.write(line)
                fh.write("\n")

    @classmethod
    def load(cls, path) -> "Trace":
        trace = cls()
        with open(path) as fh:
            for line in fh:
                line = line.strip()
                if line:
                    trace.records.append(json.loads(line))
        return trace

    def select(self, rtype: str) -> list[dict]:
        return [r for r in self.records if r["type"] == rtype]


# --- simulator ---------------------------------------------------------------


class NodeCtx:
    """Runtime services handed to an actor: transport, timers, derived
    randomness and trace access."""

    def __init__(self, sim: "Simulator", actor_id: int) -> None:
        self._sim = sim
        self.actor_id = actor_id

    @property
    def now(self) -> float:
        return self._sim.now

    @property
    def trace(self) -> Trace:
        return self._sim.trace

    def send(self, dst: int, msg: Message) -> None:
        self._sim.send(self.actor_id, dst, msg)

    def broadcast(self, msg: Message) -> None:
        for dst in range(self._sim.n_replicas):
            self._sim.send(self.actor_id, dst, msg)

    def set_timer(self, delay: float, tag, data=None) -> int:
        return self._sim.set_timer(self.actor_id, delay, tag, data)

    def cancel_timer(self, handle: int) -> None:
        self._sim.cancel_timer(handle)

    def rng(self, purpose: str) -> random.Random:
        return self._sim.actor_rng(self.actor_id, purpose)


class Simulator:
    def __init__(
        self,
        n_replicas: int,
        seed: int,
        latency: Optional[LatencyModel] = None,
        max_faults: int = 0,
        bandwidth_bytes_per_ms: Optional[float] = None,
        partitions: Iterable[Partition] = (),
        drop_probability: float = 0.0,
        trace: Optional[Trace] = None,
    ) -> None:
        self.n_replicas = n_replicas
        self.seed = seed
        self.latency = latency or LatencyModel(kind="flat", value=10.0, seed=seed)
        self.adversary = Adversary(max_faults)
        self.bandwidth = bandwidth_bytes_per_ms
        self.partitions = list(partitions)
        self.drop_probability = drop_probability
        self.trace = trace if trace is not None else Trace()

        self.now = 0.0
        self._heap: list = []
        self._tie = 0
        self.actors: dict[int, object] = {}
        self.regions: dict[int, int] = {}
        self.crashed: set[int] = set()
        self._crash_epoch: dict[int, int] = {}
        self._cancelled: set[int] = set()
        self._next_timer = 0
        self._busy_until: dict[int, float] = {}
        self._rngs: dict[tuple, random.Random] = {}

        self.delivered: dict[str, int] = {}
        self.wire: dict[str, int] = {}
        self.sent_bytes: dict[int, int] = {}
        self.recv_bytes: dict[int, int] = {}
        self.dropped = 0
        self.suppressed = 0

    # -- setup ---------------------------------------------------------

    def register(self, actor, region: Optional[int] = None) -> NodeCtx:
        aid = actor.actor_id
        self.actors[aid] = actor
        self.regions[aid] = region if region is not None else aid % N_REGIONS
        self._crash_epoch.setdefault(aid, 0)
        return NodeCtx(self, aid)

    def actor_rng(self, actor_id: int, purpose: str) -> random.Random:
        key = (actor_id, purpose)
        rng = self._rngs.get(key)
        if rng is None:
            rng = derived_rng(self.seed, "actor", actor_id, purpose)
            self._rngs[key] = rng
        return rng

    # -- transport ------------------------------------------------------

    def send(self, src: int, dst: int, msg: Message) -> None:
        if src in self.crashed:
            return
        if not self.adversary.allows(src, dst, msg):
            self.suppressed += 1
            return
        if dst == src:
            self._push(self.now, _DELIVER, (src, dst, msg))
            return
        size = msg.wire_size()
        self.sent_bytes[src] = self.sent_bytes.get(src, 0) + size
        for part in self.partitions:
            if part.blocks(src, dst, self.now):
                self.dropped += 1
                return
        if self.drop_probability > 0.0:
            rng = self._rngs.get(("link", src, dst))
            if rng is None:
                rng = derived_rng(self.seed, "link", src, dst)
                self._rngs[("link", src, dst)] = rng
            if rng.random() < self.drop_probability:
                self.dropped += 1
                return
        depart = self.now
        if self.bandwidth:
            depart = max(self.now, self._busy_until.get(src, 0.0))
            depart += size / self.bandwidth
            self._busy_until[src] = depart
        delay = self.latency.sample(self.regions.get(src, src), self.regions.get(dst, dst), (src, dst))
        self._push(depart + delay, _DELIVER, (src, dst, msg))

    # -- timers ----------------------------------------------------------

    def set_timer(self, actor_id: int, delay: float, tag, data=None) -> int:
        self._next_timer += 1
        handle = self._next_timer
        epoch = self._crash_epoch.get(actor_id, 0)
        self._push(self.now + delay, _TIMER, (actor_id, handle, epoch, tag, data))
        return handle

    def cancel_timer(self, handle: int) -> None:
        self._cancelled.add(handle)

    def call_at(self, when: float, fn: Callable, *args) -> None:
        self._push(when, _CALL, (fn, args))

    # -- faults -----------------------------------------------------------

    def crash(self, replica: int) -> None:
        self.adversary.claim(replica)
        self.crashed.add(replica)
        self._crash_epoch[replica] = self._crash_epoch.get(replica, 0) + 1

    def restart(self, replica: int) -> None:
        if replica in self.crashed:
            self.crashed.discard(replica)
            actor = self.actors.get(replica)
            if actor is not None and hasattr(actor, "on_restart"):
                actor.on_restart(self.now)

    def heal_partitions(self) -> None:
        for part in self.partitions:
            if part.end > self.now:
                part.end = self.now
                self.notify_reconnect(part)

    def notify_reconnect(self, part: Partition) -> None:
        """Transport-level reconnect callbacks once a partition ends."""
        for a in sorted(part.group_a):
            for b in sorted(part.group_b):
                for me, peer in ((a, b), (b, a)):
                    actor = self.actors.get(me)
                    if actor is not None and me not in self.crashed and hasattr(actor, "on_reconnect"):
                        actor.on_reconnect(peer, self.now)

    # -- loop --------------------------------------------------------------

    def _push(self, when: float, etype: int, payload) -> None:
        self._tie += 1
        heapq.heappush(self._heap, (when, self._tie, etype, payload))

    def run_until(self, t_end: float) -> None:
        while self._heap and self._heap[0][0] <= t_end:
            when, _tie, etype, payload = heapq.heappop(self._heap)
            self.now = when
            if etype == _DELIVER:
                src, dst, msg = payload
                if dst in self.crashed:
                    self.dropped += 1
                    continue
                kind = msg.kind
                self.delivered[kind] = self.delivered.get(kind, 0) + 1
                if src != dst:
                    self.wire[kind] = self.wire.get(kind, 0) + 1
                    self.recv_bytes[dst] = self.recv_bytes.get(dst, 0) + msg.wire_size()
                actor = self.actors.get(dst)
                if actor is not None:
                    actor.on_message(src, msg, self.now)
            elif etype == _TIMER:
                actor_id, handle, epoch, tag, data = payload
                if handle in self._cancelled:
                    self._cancelled.discard(handle)
                    continue
                if actor_id in self.crashed:
                    continue
                if epoch != self._crash_epoch.get(actor_id, 0):
                    continue
                actor = self.actors.get(actor_id)
                if actor is not None:
                    actor.on_timer(tag, data, self.now)
            else:
                fn, args = payload
                fn(*args)
        if self.now < t_end:
            self.now = t_end

    # -- reporting -----------------------------------------------------------

    def finalize_stats(self) -> None:
        for kind in sorted(self.delivered):
            self.trace.add(
                "msgstat",
                kind=kind,
                delivered=self.delivered[kind],
                wire=self.wire.get(kind, 0),
            )
        for rid in sorted(self.sent_bytes):
            if rid >= self.n_replicas:
                continue  # clients are not part of replica traffic accounting
            self.trace.add(
                "bytes",
                replica=rid,
                sent=self.sent_bytes[rid],
                recv=self.recv_bytes.get(rid, 0),
            )
        self.trace.add("netstat", dropped=self.dropped, suppressed=self.suppressed)
