"""Composition layer: replica actors for the four protocols.

``PbftReplica`` and ``LinHybsterReplica`` run one agreement instance as
a complete replicated service (the single-primary baselines).

``DqReplica`` runs one dissemination instance per replica plus a single
ordering instance over a pluggable engine (PBFT or Linear Hybster),
and implements everything the composition adds: optimistic/pessimistic
ordering, execution readiness, flooding, probation, no-op filling,
client assignment through ordered ASSIGN payloads, stall-driven state
transfer and the three failure cases (dissemination instance down,
ordering instance down, both).

Byzantine behaviors live here as ``byz_*`` methods invoked only by the
scripted adversary; they act below the protocol but above the trusted
boundary, which is exactly the power the fault model grants a
compromised replica.
"""

from __future__ import annotations

from collections import deque
from typing import Optional

from .core import (
    AssignRef,
    CommandBatch,
    NoOp,
    OrderRef,
    Payload,
    SystemConfig,
    compute_digest,
)
from .engine_common import EngineHooks, NotPrimary, Timing, WindowFull
from .linhybster import (
    ExecProof,
    ExecSig,
    LhInstance,
    LhPrepare,
    exec_digest,
    prepare_digest,
)
from .msgs import (
    AssignAck,
    AssignRequest,
    ClientRequest,
    Flood,
    InitialReq,
    Message,
    Rejoin,
    Reply,
    StateXferReq,
    StateXferResp,
    Status,
)
from .pbft import PbftInstance, PrePrepare
from .threshsign import NonMonotonicCounter, TrustedDeployment
from .workload import CLIENT_BASE, KvState

PROTOCOLS = ("pbft", "linhybster", "dqpbft", "destiny")

BYZ_CLIENT = 9_000_000  # synthetic client ids for adversarial payloads

# a slot committed by aggregate proof whose payload has not arrived yet;
# the cursor must not pass it until the payload is fetched and verified
UNKNOWN_PAYLOAD = object()


def engine_kind(protocol: str) -> str:
    return "lh" if protocol in ("linhybster", "destiny") else "pbft"


def _lh_equivocation_attempt(replica, eng) -> None:
    """Bind two different payloads to one counter slot.  The first share
    succeeds; the second one dies inside the trusted subsystem, which is
    the whole point: the attempt is observable only in the attacker's
    own log."""
    replica.byz_ts = getattr(replica, "byz_ts", 0) + 1
    b1 = CommandBatch(BYZ_CLIENT + replica.rid, replica.byz_ts, ((b"a" * 20, b"1"),))
    b2 = CommandBatch(BYZ_CLIENT + replica.rid, replica.byz_ts, ((b"b" * 20, b"2"),))
    counter = (eng.group, ("prep", eng.view))
    value = replica.trusted.counter_value(counter) + 1
    seq = eng.base() + value - 1
    first = replica.trusted.create_independent_share(
        prepare_digest(eng.tag, eng.view, seq, compute_digest(b1)), counter, value
    )
    replica.ctx.broadcast(LhPrepare(eng.tag, eng.view, seq, b1, first))
    try:
        replica.trusted.create_independent_share(
            prepare_digest(eng.tag, eng.view, seq, compute_digest(b2)), counter, value
        )
    except NonMonotonicCounter:
        replica.trace.add(
            "equiv_block", replica=replica.rid, instance=eng.tag, time=replica.ctx.now
        )
    # keep the engine's allocator aligned with the burned counter slot
    if eng.primary() == replica.rid and eng.next_seq <= seq:
        eng.next_seq = seq + 1


class ProbationRecord:
    """Pessimistic-ordering window for one dissemination instance."""

    def __init__(self) -> None:
        self.count = 0
        self.window_start = 0
        self.until = 0

    def start(self, resume_seq: int, base: int) -> None:
        self.count += 1
        self.window_start = resume_seq
        self.until = resume_seq + base * (2 ** (self.count - 1))

    def pessimistic_for(self, dseq: int) -> bool:
        return self.window_start <= dseq < self.until


class _ExecRound:
    """ExecSig/ExecProof aggregation for one scope ("P" standalone,
    "G" global order)."""

    def __init__(self, replica, scope: str) -> None:
        self.r = replica
        self.scope = scope
        self.buckets: dict[int, dict[int, object]] = {}
        self.proven: set[int] = set()
        self.pending: dict[int, ExecSig] = {}
        self.retry: dict[int, int] = {}

    def submit(self, seq: int, client_id: int, ts: int, result: bytes, collector: int) -> None:
        m = exec_digest(self.scope, seq, client_id, ts, result)
        share = self.r.exec_signer.create_share(m, ("pi", ("exec",)), seq + 1)
        msg = ExecSig(self.scope, seq, result, share, client_id, ts)
        self.pending[seq] = msg
        self.r.ctx.send(collector, msg)
        if seq not in self.retry:
            self.retry[seq] = self.r.ctx.set_timer(
                self.r.timing.collector_retry, ("execretry", self.scope, seq)
            )

    def on_execsig(self, src: int, msg: ExecSig) -> None:
        if msg.seq in self.proven:
            return
        share = msg.share
        m = exec_digest(self.scope, msg.seq, msg.client_id, msg.timestamp, msg.result_digest)
        if (
            share.signer != src
            or share.counter != ("pi", ("exec",))
            or share.new_value != msg.seq + 1
            or share.message_digest != m
            or not self.r.verifier.verify_share(share)
        ):
            return
        bucket = self.buckets.setdefault(msg.seq, {})
        bucket[src] = (m, share, msg)
        matching = [s for (mm, s, _x) in bucket.values() if mm == m]
        if len(matching) >= self.r.config.max_faults + 1:
            agg = self.r.verifier.aggregate_shares(matching[: self.r.config.max_faults + 1])
            self.proven.add(msg.seq)
            del self.buckets[msg.seq]
            proof = ExecProof(self.scope, msg.seq, msg.result_digest, agg, msg.client_id, msg.timestamp)
            self.r.ctx.broadcast(proof)
            if msg.client_id >= CLIENT_BASE:
                self.r.ctx.send(msg.client_id, proof)

    def on_execproof(self, src: int, msg: ExecProof) -> bool:
        m = exec_digest(self.scope, msg.seq, msg.client_id, msg.timestamp, msg.result_digest)
        if not self.r.verifier.verify_signature(m, msg.aggregate, ("pi", ("exec",)), msg.seq + 1):
            return False
        self.proven.add(msg.seq)
        self.pending.pop(msg.seq, None)
        handle = self.retry.pop(msg.seq, None)
        if handle is not None:
            self.r.ctx.cancel_timer(handle)
        return True

    def on_retry(self, seq: int, collector: int, alternates) -> None:
        self.retry.pop(seq, None)
        msg = self.pending.get(seq)
        if msg is None or seq in self.proven:
            return
        for alt in alternates:
            self.r.ctx.send(alt, msg)
        self.retry[seq] = self.r.ctx.set_timer(
            self.r.timing.collector_retry * 2, ("execretry", self.scope, seq)
        )


class _ReplicaBase:
    """Client table, state machine and reply plumbing common to all
    replica actors."""

    def __init__(self, rid: int, config: SystemConfig, timing: Timing) -> None:
        self.actor_id = rid
        self.rid = rid
        self.config = config
        self.timing = timing
        self.ctx = None
        self.kv = KvState()
        self.last_ts: dict[int, int] = {}
        self.cached_reply: dict[int, bytes] = {}

    def bind(self, ctx) -> None:
        self.ctx = ctx

    @property
    def trace(self):
        return self.ctx.trace

    def duplicate_reply(self, batch: CommandBatch) -> bool:
        """True (and reply resent) when the batch was already executed."""
        last = self.last_ts.get(batch.client_id, -1)
        if batch.timestamp <= last:
            cached = self.cached_reply.get(batch.client_id)
            if cached is not None and batch.timestamp == last:
                self.ctx.send(batch.client_id, Reply(batch.client_id, last, cached))
            return True
        return False

    def apply_batch(self, batch: CommandBatch, where: str, seq: int) -> Optional[bytes]:
        """Execute with exactly-once effect per (client, timestamp)."""
        client, ts = batch.client_id, batch.timestamp
        if ts <= self.last_ts.get(client, -1):
            self.trace.add("dup_skip", replica=self.rid, client=client, ts=ts, at=where, seq=seq)
            cached = self.cached_reply.get(client)
            if cached is not None and client >= CLIENT_BASE:
                self.ctx.send(client, Reply(client, self.last_ts[client], cached))
            return None
        result = self.kv.apply(batch)
        self.last_ts[client] = ts
        self.cached_reply[client] = result
        return result


class PbftReplica(_ReplicaBase):
    """Single-primary PBFT service: the classic baseline."""

    def __init__(self, rid: int, config: SystemConfig, timing: Timing) -> None:
        super().__init__(rid, config, timing)
        self.exec_cursor = -1
        self.submitted: set = set()
        self.awaited: set = set()
        self.batch_seen: set = set()
        self.forwarded: dict = {}
        self.queue: deque = deque()

    def bind(self, ctx) -> None:
        super().bind(ctx)
        hooks = EngineHooks(
            on_commit=self._on_commit,
            on_preprepare=self._on_preprepare,
            on_newview=self._on_newview,
            on_evidence=self._on_evidence,
        )
        self.engine = PbftInstance(self.config, "P", self.rid, ctx, self.timing, hooks)

    # -- hooks ----------------------------------------------------------

    def _on_preprepare(self, tag, seq, digest, payload, view, src) -> None:
        if isinstance(payload, CommandBatch):
            key = (payload.client_id, payload.timestamp)
            self.batch_seen.add(key)
            self.awaited.discard(key)
            self.engine.set_expectations(len(self.awaited))

    def _on_commit(self, tag, seq, digest, payload, view) -> None:
        while True:
            entry = self.engine.log.get(self.exec_cursor + 1)
            if entry is None or not entry.committed or entry.payload is None:
                break
            self.exec_cursor += 1
            self._execute(self.exec_cursor, entry.payload)
        self._drain_queue()

    def _on_newview(self, tag, view, resume) -> None:
        self.trace.add("vc", replica=self.rid, instance=tag, view=view, time=self.ctx.now)
        if self.engine.is_primary:
            for key, batch in sorted(self.forwarded.items()):
                if batch.timestamp > self.last_ts.get(batch.client_id, -1):
                    self._submit(batch)

    def _on_evidence(self, tag, desc, seq) -> None:
        self.trace.add("evidence", replica=self.rid, instance=tag, what=desc, seq=seq)

    # -- execution -------------------------------------------------------

    def _execute(self, seq: int, payload: Payload) -> None:
        if isinstance(payload, NoOp):
            self.trace.add("noop_exec", replica=self.rid, seq=seq, time=self.ctx.now)
            return
        result = self.apply_batch(payload, "P", seq)
        if result is None:
            return
        self.trace.add(
            "exec",
            replica=self.rid,
            oseq=seq,
            owner=-1,
            dseq=seq,
            client=payload.client_id,
            ts=payload.timestamp,
            nops=len(payload.operations),
            time=self.ctx.now,
            result=result[:8].hex(),
        )
        self.ctx.send(payload.client_id, Reply(payload.client_id, payload.timestamp, result))

    # -- client requests ----------------------------------------------------

    def _submit(self, batch: CommandBatch) -> None:
        key = (batch.client_id, batch.timestamp)
        if key in self.submitted:
            return
        try:
            self.engine.propose(batch)
            self.submitted.add(key)
        except WindowFull:
            self.queue.append(batch)
        except NotPrimary:
            pass

    def _drain_queue(self) -> None:
        while self.queue and self.engine.is_primary:
            batch = self.queue[0]
            try:
                self.engine.propose(batch)
                self.submitted.add((batch.client_id, batch.timestamp))
                self.queue.popleft()
            except (WindowFull, NotPrimary):
                break

    def _on_client_request(self, src: int, batch: CommandBatch) -> None:
        if self.duplicate_reply(batch):
            return
        key = (batch.client_id, batch.timestamp)
        if self.engine.is_primary:
            self._submit(batch)
        elif src >= CLIENT_BASE:
            self.forwarded[key] = batch
            if key not in self.submitted and key not in self.awaited:
                self.ctx.send(self.engine.primary(), ClientRequest(batch))
                if key not in self.batch_seen:
                    self.awaited.add(key)
                    self.engine.set_expectations(len(self.awaited))

    # -- actor interface -------------------------------------------------------

    def on_message(self, src: int, msg: Message, now: float) -> None:
        if isinstance(msg, ClientRequest):
            self._on_client_request(src, msg.batch)
        elif isinstance(msg, StateXferReq):
            entry = self.engine.committed_entry(msg.seq)
            if entry is not None:
                self.ctx.send(
                    src,
                    StateXferResp(msg.tag, msg.seq, entry.digest, entry.payload, entry.commit_cert),
                )
        elif isinstance(msg, StateXferResp):
            self.engine.install_committed(msg.seq, msg.digest, msg.payload, msg.cert)
        elif isinstance(msg, Status):
            self._on_status(src, msg)
        elif hasattr(msg, "tag"):
            self.engine.handle(src, msg, now)

    def on_timer(self, tag, data, now: float) -> None:
        if isinstance(tag, tuple) and len(tag) >= 2 and tag[1] == "P":
            self.engine.on_timer(tag[0])

    def on_restart(self, now: float) -> None:
        self.engine.revive()

    def on_reconnect(self, peer: int, now: float) -> None:
        self.ctx.send(peer, Status((("P", self.engine.cc),)))

    def _on_status(self, src: int, msg: Status) -> None:
        for tag, high in msg.highs:
            if tag == "P" and high > self.engine.cc:
                for seq in range(self.engine.cc + 1, min(high, self.engine.cc + 64) + 1):
                    self.ctx.send(src, StateXferReq("P", seq))

    def byz_equivocate(self, _instance=None, recipients_a=None, recipients_b=None) -> None:
        eng = self.engine
        everyone = [r for r in range(self.config.n_replicas) if r != self.rid]
        half = len(everyone) // 2
        group_a = recipients_a if recipients_a is not None else everyone[:half]
        group_b = recipients_b if recipients_b is not None else everyone[half:]
        seq = eng.next_seq
        eng.next_seq += 1
        b1 = CommandBatch(BYZ_CLIENT + self.rid, seq, ((b"a" * 20, b"1"),))
        b2 = CommandBatch(BYZ_CLIENT + self.rid, seq, ((b"b" * 20, b"2"),))
        for dst in group_a:
            self.ctx.send(dst, PrePrepare(eng.tag, eng.view, seq, b1))
        for dst in group_b:
            self.ctx.send(dst, PrePrepare(eng.tag, eng.view, seq, b2))


class LinHybsterReplica(_ReplicaBase):
    """Single-primary Linear Hybster service with the execution round."""

    def __init__(
        self, rid: int, config: SystemConfig, timing: Timing, deployment: TrustedDeployment
    ) -> None:
        super().__init__(rid, config, timing)
        self.deployment = deployment
        self.trusted = deployment.subsystem(rid)
        self.exec_signer = deployment.exec_signer(rid)
        self.verifier = deployment.verifier()
        self.exec_cursor = -1
        self.submitted: set = set()
        self.awaited: set = set()
        self.batch_seen: set = set()
        self.forwarded: dict = {}
        self.queue: deque = deque()

    def bind(self, ctx) -> None:
        super().bind(ctx)
        hooks = EngineHooks(
            on_commit=self._on_commit,
            on_preprepare=self._on_preprepare,
            on_newview=self._on_newview,
            on_evidence=self._on_evidence,
        )
        self.engine = LhInstance(
            self.config, "P", self.rid, ctx, self.timing,
            self.trusted, self.verifier, hooks, group="sigma:p",
        )
        self.exec_round = _ExecRound(self, "P")

    def _on_preprepare(self, tag, seq, digest, payload, view, src) -> None:
        if isinstance(payload, CommandBatch):
            key = (payload.client_id, payload.timestamp)
            self.batch_seen.add(key)
            self.awaited.discard(key)
            self.engine.set_expectations(len(self.awaited))

    def _on_commit(self, tag, seq, digest, payload, view) -> None:
        while True:
            entry = self.engine.log.get(self.exec_cursor + 1)
            if entry is None or not entry.committed or entry.payload is None:
                break
            self.exec_cursor += 1
            self._execute(self.exec_cursor, entry.payload)
        self._drain_queue()

    def _on_newview(self, tag, view, resume) -> None:
        self.trace.add("vc", replica=self.rid, instance=tag, view=view, time=self.ctx.now)
        if self.engine.is_primary:
            for key, batch in sorted(self.forwarded.items()):
                if batch.timestamp > self.last_ts.get(batch.client_id, -1):
                    self._submit(batch)

    def _on_evidence(self, tag, desc, seq) -> None:
        self.trace.add("evidence", replica=self.rid, instance=tag, what=desc, seq=seq)

    def _execute(self, seq: int, payload: Payload) -> None:
        if isinstance(payload, NoOp):
            self.trace.add("noop_exec", replica=self.rid, seq=seq, time=self.ctx.now)
            return
        result = self.apply_batch(payload, "P", seq)
        if result is None:
            return
        self.trace.add(
            "exec",
            replica=self.rid,
            oseq=seq,
            owner=-1,
            dseq=seq,
            client=payload.client_id,
            ts=payload.timestamp,
            nops=len(payload.operations),
            time=self.ctx.now,
            result=result[:8].hex(),
        )
        self.exec_round.submit(
            seq, payload.client_id, payload.timestamp, result, self.engine.collector()
        )

    def _submit(self, batch: CommandBatch) -> None:
        key = (batch.client_id, batch.timestamp)
        if key in self.submitted:
            return
        try:
            self.engine.propose(batch)
            self.submitted.add(key)
        except WindowFull:
            self.queue.append(batch)
        except NotPrimary:
            pass

    def _drain_queue(self) -> None:
        while self.queue and self.engine.is_primary:
            batch = self.queue[0]
            try:
                self.engine.propose(batch)
                self.submitted.add((batch.client_id, batch.timestamp))
                self.queue.popleft()
            except (WindowFull, NotPrimary):
                break

    def _on_client_request(self, src: int, batch: CommandBatch) -> None:
        if self.duplicate_reply(batch):
            return
        key = (batch.client_id, batch.timestamp)
        if self.engine.is_primary:
            self._submit(batch)
        elif src >= CLIENT_BASE:
            self.forwarded[key] = batch
            if key not in self.submitted and key not in self.awaited:
                self.ctx.send(self.engine.primary(), ClientRequest(batch))
                if key not in self.batch_seen:
                    self.awaited.add(key)
                    self.engine.set_expectations(len(self.awaited))

    def on_message(self, src: int, msg: Message, now: float) -> None:
        if isinstance(msg, ClientRequest):
            self._on_client_request(src, msg.batch)
        elif isinstance(msg, ExecSig):
            self.exec_round.on_execsig(src, msg)
        elif isinstance(msg, ExecProof):
            self.exec_round.on_execproof(src, msg)
        elif isinstance(msg, Flood):
            self.engine.accept_flooded(msg.origin, msg.inner)
        elif isinstance(msg, StateXferReq):
            entry = self.engine.committed_entry(msg.seq)
            if entry is not None:
                self.ctx.send(
                    src,
                    StateXferResp(msg.tag, msg.seq, entry.digest, entry.payload, entry.commit_cert),
                )
        elif isinstance(msg, StateXferResp):
            self.engine.install_committed(msg.seq, msg.digest, msg.payload, msg.cert)
        elif isinstance(msg, Status):
            self._on_status(src, msg)
        elif hasattr(msg, "tag"):
            self.engine.handle(src, msg, now)

    def on_timer(self, tag, data, now: float) -> None:
        if not isinstance(tag, tuple):
            return
        if tag[0] == "execretry":
            self.exec_round.on_retry(tag[2], self.engine.collector(), self.engine.alternates())
        elif len(tag) >= 2 and tag[1] == "P":
            extra = tag[2] if len(tag) > 2 else None
            self.engine.on_timer(tag[0], extra) if tag[0] in ("lhretry",) else self.engine.on_timer(tag[0])

    def on_restart(self, now: float) -> None:
        self.engine.revive()

    def on_reconnect(self, peer: int, now: float) -> None:
        self.ctx.send(peer, Status((("P", self.engine.cc),)))

    def _on_status(self, src: int, msg: Status) -> None:
        for tag, high in msg.highs:
            if tag == "P" and high > self.engine.cc:
                for seq in range(self.engine.cc + 1, min(high, self.engine.cc + 64) + 1):
                    self.ctx.send(src, StateXferReq("P", seq))

    def byz_equivocate(self, _instance=None, **_kw) -> None:
        _lh_equivocation_attempt(self, self.engine)


class DqReplica(_ReplicaBase):
    """Composed replica: N dissemination instances plus one ordering
    instance, with execution driven by the committed global order."""

    def __init__(
        self,
        rid: int,
        config: SystemConfig,
        timing: Timing,
        protocol: str,
        deployment: Optional[TrustedDeployment] = None,
        static_assign: Optional[dict] = None,
    ) -> None:
        super().__init__(rid, config, timing)
        self.protocol = protocol
        self.kind = engine_kind(protocol)
        self.deployment = deployment
        if self.kind == "lh":
            assert deployment is not None
            self.trusted = deployment.subsystem(rid)
            self.exec_signer = deployment.exec_signer(rid)
            self.verifier = deployment.verifier()
        self.static_assign = dict(static_assign or {})

        self.d: dict[int, object] = {}
        self.o = None

        self.mapping: dict[int, Payload] = {}
        self.o_digest: dict[int, bytes] = {}
        self.dissem_digest: dict[tuple, bytes] = {}
        self.mapped_refs: dict[tuple, int] = {}  # (owner, dseq) -> oseq
        self.o_ref_first: dict[tuple, int] = {}  # dedup of mapping proposals seen
        self.o_proposed: set = set()
        self.o_queue: deque = deque()
        self.initial_seen: dict[tuple, bytes] = {}  # (owner, dseq) -> digest
        self.disseminated: set = set()
        self.dissem_payload: dict[tuple, Payload] = {}
        self.dissem_cert: dict[tuple, object] = {}
        self.o_cert: dict[int, object] = {}
        self.cursor = -1
        self.max_mapped = -1
        self.assignments: dict[int, int] = {}
        self.assign_counts: dict[int, int] = {}
        self.pending_assign: set = set()
        self.probation: dict[int, ProbationRecord] = {}
        self.ordered_upto: dict[int, int] = {}

        self.submitted: set = set()
        self.queue: deque = deque()
        self.awaited: dict[int, set] = {}  # owner -> {(client, ts)}
        self.batch_seen: set = set()  # (client, ts) observed in any initial message
        self.flooded: set = set()

        self.order_timers: dict[tuple, int] = {}
        self.order_stage: dict[tuple, int] = {}
        self.initreq_timers: dict[tuple, int] = {}
        self.initreq_stage: dict[tuple, int] = {}
        self.viol_timers: dict[tuple, int] = {}
        self.stall_timer: Optional[int] = None
        self.stall_stage = 0
        self.byz_ts = 0

    # -- construction -----------------------------------------------------------

    def bind(self, ctx) -> None:
        super().bind(ctx)
        for owner in range(self.config.n_replicas):
            tag = f"D{owner}"
            hooks = EngineHooks(
                on_commit=self._d_commit,
                on_preprepare=self._d_preprepare,
                on_newview=self._d_newview,
                extra_fill=self._d_extra_fill,
                on_evidence=self._evidence,
            )
            self.d[owner] = self._make_engine(tag, owner, hooks, f"sigma:{owner}")
        o_hooks = EngineHooks(
            on_commit=self._o_commit,
            on_preprepare=self._o_preprepare,
            on_newview=self._o_newview,
            vote_gate=self._o_gate,
            on_evidence=self._evidence,
        )
        self.o = self._make_engine("O", None, o_hooks, "tau")
        if self.protocol == "destiny":
            self.exec_round = _ExecRound(self, "G")
        else:
            self.exec_round = None

    def _make_engine(self, tag, owner, hooks, group):
        if self.kind == "lh":
            return LhInstance(
                self.config, tag, self.rid, self.ctx, self.timing,
                self.trusted, self.verifier, hooks, owner=owner, group=group,
            )
        return PbftInstance(
            self.config, tag, self.rid, self.ctx, self.timing, hooks, owner=owner
        )

    def _engine_for(self, tag: str):
        if tag == "O":
            return self.o
        if tag.startswith("D"):
            return self.d.get(int(tag[1:]))
        return None

    # -- assignment ------------------------------------------------------------------

    def assignment(self, client: int) -> int:
        if client in self.assignments:
            return self.assignments[client]
        if client in self.static_assign:
            return self.static_assign[client]
        return client % self.config.n_replicas

    def _least_loaded(self, exclude: Optional[int] = None) -> int:
        best, best_count = None, None
        for rid in range(self.config.n_replicas):
            if rid == exclude:
                continue
            count = self.assign_counts.get(rid, 0)
            if best_count is None or count < best_count:
                best, best_count = rid, count
        return best if best is not None else 0

    def _on_assign_request(self, client: int) -> None:
        if not self.o.is_primary or client in self.pending_assign:
            return
        current = self.assignments.get(client, self.static_assign.get(client))
        target = self._least_loaded(exclude=current)
        if target == current:
            return
        try:
            self.o.propose(AssignRef(client, target))
            self.pending_assign.add(client)
        except (NotPrimary, WindowFull):
            pass

    # -- dissemination hooks ------------------------------------------------------------

    def _d_preprepare(self, tag, seq, digest, payload, view, src) -> None:
        owner = int(tag[1:])
        key = (owner, seq)
        self.initial_seen[key] = digest
        if key in self.disseminated:
            self._complete_d_payload(key, payload)
        if isinstance(payload, CommandBatch):
            bkey = (payload.client_id, payload.timestamp)
            self.batch_seen.add(bkey)
            waiting = self.awaited.get(owner)
            if waiting:
                waiting.discard(bkey)
                self.d[owner].set_expectations(len(waiting))
        self._maybe_flood(owner, seq, src)
        if self.o is not None and self.o.is_primary:
            self._maybe_order(owner, seq)
        self.o.recheck_gates()
        self._cancel_initreq(key)

    def _maybe_flood(self, owner: int, seq: int, src: int) -> None:
        if self.config.flood_subset is None or owner == self.rid:
            return
        key = (owner, seq)
        if key in self.flooded:
            return
        self.flooded.add(key)
        eng = self.d[owner]
        initial = eng.make_initial(seq)
        origin = eng.initial_origin(seq)
        if initial is None or origin is None:
            return
        others = [r for r in range(self.config.n_replicas) if r != self.rid and r != origin]
        if self.config.flood_subset > 0:
            rng = self.ctx.rng("flood")
            others = sorted(rng.sample(others, min(self.config.flood_subset, len(others))))
        wrapped = Flood(initial, origin)
        for dst in others:
            self.ctx.send(dst, wrapped)

    def _d_commit(self, tag, seq, digest, payload, view) -> None:
        owner = int(tag[1:])
        key = (owner, seq)
        self.disseminated.add(key)
        self.dissem_digest[key] = digest
        if payload is not None:
            self.dissem_payload[key] = payload
        entry = self.d[owner].log.get(seq)
        if entry is not None and entry.commit_cert is not None:
            self.dissem_cert[key] = entry.commit_cert
        if self.o is not None and self.o.is_primary:
            self._maybe_order(owner, seq)
        if key not in self.mapped_refs and key not in self.order_timers:
            self.order_stage[key] = 0
            self.order_timers[key] = self.ctx.set_timer(
                self.timing.order_grace, ("order", owner, seq)
            )
        self.o.recheck_gates()
        self._try_execute()
        if owner == self.rid:
            self._drain_queue()

    def _d_newview(self, tag, view, resume) -> None:
        owner = int(tag[1:])
        self.trace.add("vc", replica=self.rid, instance=tag, view=view, time=self.ctx.now)
        # pending forwards for this instance are now the client's problem:
        # only the owner may propose new commands, so retries go through
        # client timeout and reassignment rather than more view changes
        waiting = self.awaited.get(owner)
        if waiting:
            waiting.clear()
        self.d[owner].set_expectations(0)
        record = self.probation.setdefault(owner, ProbationRecord())
        record.start(resume, self.config.probation_base)
        self.trace.add(
            "probation",
            replica=self.rid,
            owner=owner,
            count=record.count,
            start=record.window_start,
            until=record.until,
            time=self.ctx.now,
        )
        eng = self.d[owner]
        if eng.primary() == self.rid:
            # fill slots already committed in the global order but lost here
            for (own, dseq), _oseq in sorted(self.mapped_refs.items()):
                if own == owner and not eng.committed_entry(dseq):
                    try:
                        eng.fill_to(dseq)
                    except (NotPrimary, WindowFull):
                        break
        if owner == self.rid and eng.primary() == self.rid:
            self._drain_queue()

    def _d_extra_fill(self, tag) -> list:
        owner = int(tag[1:])
        return [dseq for (own, dseq) in self.mapped_refs if own == owner]

    # -- ordering hooks -----------------------------------------------------------------

    def _maybe_order(self, owner: int, dseq: int) -> None:
        key = (owner, dseq)
        if key in self.o_proposed or key in self.mapped_refs:
            return
        record = self.probation.get(owner)
        if record and record.pessimistic_for(dseq) and key not in self.disseminated:
            return
        if key not in self.initial_seen and key not in self.disseminated:
            return
        ref = OrderRef(owner, dseq)
        try:
            self.o.propose(ref)
            self.o_proposed.add(key)
        except NotPrimary:
            pass
        except WindowFull:
            self.o_queue.append(ref)

    def _o_preprepare(self, tag, seq, digest, payload, view, src) -> None:
        self._complete_o_payload(seq, payload)
        if isinstance(payload, OrderRef):
            key = (payload.owner, payload.dseq)
            self.o_ref_first.setdefault(key, seq)
            record = self.probation.get(payload.owner)
            if (
                record
                and record.pessimistic_for(payload.dseq)
                and key not in self.disseminated
                and key not in self.viol_timers
            ):
                self.viol_timers[key] = self.ctx.set_timer(
                    self.timing.probation_grace, ("viol", payload.owner, payload.dseq)
                )

    def _o_gate(self, tag, seq, payload) -> bool:
        if not isinstance(payload, OrderRef):
            return True
        key = (payload.owner, payload.dseq)
        first = self.o_ref_first.get(key, seq)
        if first != seq or (key in self.mapped_refs and self.mapped_refs[key] != seq):
            return False  # duplicate mapping attempt never gets this vote
        if key not in self.initial_seen and key not in self.disseminated:
            self._arm_initreq(key)
            return False
        record = self.probation.get(payload.owner)
        if record and record.pessimistic_for(payload.dseq) and key not in self.disseminated:
            return False
        return True

    def _o_commit(self, tag, seq, digest, payload, view) -> None:
        self.o_digest[seq] = digest
        if seq > self.max_mapped:
            self.max_mapped = seq
        entry = self.o.log.get(seq)
        if entry is not None and entry.commit_cert is not None:
            self.o_cert[seq] = entry.commit_cert
        if payload is None:
            # committed through the aggregate alone; stall until fetched
            self.mapping.setdefault(seq, UNKNOWN_PAYLOAD)
            self._try_execute()
            return
        self._register_mapping(seq, payload)

    def _register_mapping(self, seq: int, payload: Payload) -> None:
        self.mapping[seq] = payload
        if seq > self.max_mapped:
            self.max_mapped = seq
        if isinstance(payload, OrderRef):
            key = (payload.owner, payload.dseq)
            self.mapped_refs.setdefault(key, seq)
            self.ordered_upto[payload.owner] = max(
                self.ordered_upto.get(payload.owner, 0), payload.dseq + 1
            )
            self._cancel_order_timer(key)
            record = self.probation.get(payload.owner)
            if record and record.until > 0 and self.ordered_upto[payload.owner] >= record.until:
                self.trace.add(
                    "probation_clear", replica=self.rid, owner=payload.owner, time=self.ctx.now
                )
                record.until = 0
            eng = self.d[payload.owner]
            if eng.primary() == self.rid and not eng.committed_entry(payload.dseq):
                try:
                    eng.fill_to(payload.dseq)
                except (NotPrimary, WindowFull):
                    pass
        self._drain_o_queue()
        self._try_execute()

    def _complete_o_payload(self, seq: int, payload: Payload) -> bool:
        """Fill in a digest-only committed slot once the payload shows up."""
        if self.mapping.get(seq) is not UNKNOWN_PAYLOAD or payload is None:
            return False
        want = self.o_digest.get(seq)
        if want is None or compute_digest(payload) != want:
            return False
        self._register_mapping(seq, payload)
        return True

    def _complete_d_payload(self, key: tuple, payload: Payload) -> bool:
        if payload is None or key in self.dissem_payload:
            return False
        want = self.dissem_digest.get(key)
        if want is None or compute_digest(payload) != want:
            return False
        self.dissem_payload[key] = payload
        self._try_execute()
        return True

    def _o_newview(self, tag, view, resume) -> None:
        self.trace.add("vc", replica=self.rid, instance="O", view=view, time=self.ctx.now)
        self.pending_assign = set()
        # the new ordering primary gets a fresh grace period for the backlog
        for key, handle in list(self.order_timers.items()):
            self.ctx.cancel_timer(handle)
            self.order_stage[key] = 0
            self.order_timers[key] = self.ctx.set_timer(
                self.timing.order_grace, ("order",) + key
            )
        if self.o.is_primary:
            # order the disseminated backlog and everything seen optimistically
            for owner, dseq in sorted(self.disseminated):
                self._maybe_order(owner, dseq)
            for owner, dseq in sorted(self.initial_seen):
                self._maybe_order(owner, dseq)
        else:
            for key in sorted(self.disseminated - set(self.mapped_refs)):
                self._resend_initial(key, self.o.primary())

    def _drain_o_queue(self) -> None:
        while self.o_queue and self.o.is_primary:
            ref = self.o_queue[0]
            key = (ref.owner, ref.dseq)
            if key in self.o_proposed or key in self.mapped_refs:
                self.o_queue.popleft()
                continue
            try:
                self.o.propose(ref)
                self.o_proposed.add(key)
                self.o_queue.popleft()
            except (NotPrimary, WindowFull):
                break

    # -- execution ------------------------------------------------------------------------

    def _try_execute(self) -> None:
        progressed = False
        while True:
            nxt = self.cursor + 1
            if nxt not in self.mapping:
                if self.max_mapped > nxt:
                    self._arm_stall()
                break
            ref = self.mapping[nxt]
            if ref is UNKNOWN_PAYLOAD:
                self._arm_stall()
                break
            if isinstance(ref, OrderRef):
                key = (ref.owner, ref.dseq)
                payload = self.dissem_payload.get(key)
                if key not in self.disseminated or payload is None:
                    self._arm_stall()
                    break
                self.cursor = nxt
                self._execute_ref(nxt, ref, payload)
            elif isinstance(ref, AssignRef):
                self.cursor = nxt
                self._apply_assignment(nxt, ref)
            else:
                self.cursor = nxt
                self.trace.add("noop_exec", replica=self.rid, oseq=nxt, time=self.ctx.now)
            progressed = True
        if progressed:
            self._clear_stall()

    def _execute_ref(self, oseq: int, ref: OrderRef, payload: Payload) -> None:
        if isinstance(payload, NoOp):
            self.trace.add(
                "noop_exec", replica=self.rid, oseq=oseq, owner=ref.owner,
                dseq=ref.dseq, time=self.ctx.now,
            )
            return
        key = (payload.client_id, payload.timestamp)
        for owner, waiting in self.awaited.items():
            if key in waiting:
                waiting.discard(key)
                self.d[owner].set_expectations(len(waiting))
        result = self.apply_batch(payload, "G", oseq)
        if result is None:
            return
        self.trace.add(
            "exec",
            replica=self.rid,
            oseq=oseq,
            owner=ref.owner,
            dseq=ref.dseq,
            client=payload.client_id,
            ts=payload.timestamp,
            nops=len(payload.operations),
            time=self.ctx.now,
            result=result[:8].hex(),
        )
        client, ts = payload.client_id, payload.timestamp
        if self.exec_round is not None:
            collector = self.d[ref.owner].primary()
            self.exec_round.submit(oseq, client, ts, result, collector)
        elif client >= CLIENT_BASE:
            self.ctx.send(client, Reply(client, ts, result))

    def _apply_assignment(self, oseq: int, ref: AssignRef) -> None:
        old = self.assignments.get(ref.client_id)
        if old is not None:
            self.assign_counts[old] = max(0, self.assign_counts.get(old, 0) - 1)
        self.assignments[ref.client_id] = ref.coordinator
        self.assign_counts[ref.coordinator] = self.assign_counts.get(ref.coordinator, 0) + 1
        self.pending_assign.discard(ref.client_id)
        self.trace.add(
            "assign", replica=self.rid, oseq=oseq, client=ref.client_id,
            coordinator=ref.coordinator, time=self.ctx.now,
        )
        if ref.client_id >= CLIENT_BASE:
            self.ctx.send(ref.client_id, AssignAck(ref.client_id, ref.coordinator))

    # -- stall / retransmission machinery ----------------------------------------------------

    def _arm_stall(self) -> None:
        if self.stall_timer is None:
            self.stall_timer = self.ctx.set_timer(self.timing.stall_transfer, ("stall",))

    def _clear_stall(self) -> None:
        if self.stall_timer is not None:
            self.ctx.cancel_timer(self.stall_timer)
            self.stall_timer = None
        self.stall_stage = 0

    def _missing_pieces(self, span: int = 64) -> list:
        """Requests needed to unblock the cursor, scanning one window ahead."""
        nxt = self.cursor + 1
        horizon = self.max_mapped
        reqs = []
        for oseq in range(nxt, min(nxt + span, horizon + 1)):
            ref = self.mapping.get(oseq)
            if ref is None or ref is UNKNOWN_PAYLOAD:
                reqs.append(StateXferReq("O", oseq))
            elif isinstance(ref, OrderRef):
                key = (ref.owner, ref.dseq)
                if key not in self.disseminated or key not in self.dissem_payload:
                    reqs.append(StateXferReq(f"D{ref.owner}", ref.dseq))
        return reqs

    def _on_stall_timeout(self) -> None:
        self.stall_timer = None
        self._try_execute()
        reqs = self._missing_pieces()
        if not reqs:
            return
        if self.stall_stage == 0:
            rng = self.ctx.rng("xfer")
            peers = [r for r in range(self.config.n_replicas) if r != self.rid]
            targets = sorted(rng.sample(peers, min(2, len(peers))))
            for req in reqs:
                for dst in targets:
                    self.ctx.send(dst, req)
        else:
            for req in reqs:
                self.ctx.broadcast(req)
            if self.stall_stage >= 2:
                eng = self._engine_for(reqs[0].tag)
                if eng is not None:
                    eng.complain()
        self.stall_stage += 1
        if self.stall_timer is not None:
            self.ctx.cancel_timer(self.stall_timer)
        self.stall_timer = self.ctx.set_timer(
            self.timing.stall_transfer * (2 ** min(self.stall_stage, 4)), ("stall",)
        )

    def _arm_initreq(self, key: tuple) -> None:
        if key not in self.initreq_timers:
            self.initreq_stage[key] = 0
            self.initreq_timers[key] = self.ctx.set_timer(
                self.timing.gap_request, ("initreq",) + key
            )

    def _cancel_initreq(self, key: tuple) -> None:
        handle = self.initreq_timers.pop(key, None)
        if handle is not None:
            self.ctx.cancel_timer(handle)
        self.initreq_stage.pop(key, None)

    def _on_initreq_timeout(self, owner: int, dseq: int) -> None:
        key = (owner, dseq)
        self.initreq_timers.pop(key, None)
        if key in self.initial_seen or key in self.disseminated:
            return
        stage = self.initreq_stage.get(key, 0)
        req = InitialReq(owner, dseq)
        if stage == 0:
            self.ctx.send(self.d[owner].primary(), req)
            rng = self.ctx.rng("initreq")
            peers = [r for r in range(self.config.n_replicas) if r != self.rid]
            for dst in sorted(rng.sample(peers, min(2, len(peers)))):
                self.ctx.send(dst, req)
        else:
            self.ctx.broadcast(req)
        self.initreq_stage[key] = stage + 1
        self.initreq_timers[key] = self.ctx.set_timer(
            self.timing.gap_request * (2 ** min(stage + 1, 4)), ("initreq",) + key
        )

    def _cancel_order_timer(self, key: tuple) -> None:
        handle = self.order_timers.pop(key, None)
        if handle is not None:
            self.ctx.cancel_timer(handle)
        self.order_stage.pop(key, None)

    def _on_order_timeout(self, owner: int, dseq: int) -> None:
        key = (owner, dseq)
        self.order_timers.pop(key, None)
        if key in self.mapped_refs:
            return
        stage = self.order_stage.get(key, 0)
        self._resend_initial(key, self.o.primary())
        if stage >= 1:
            # the ordering primary keeps ignoring a disseminated command
            self.o.complain()
        self.order_stage[key] = stage + 1
        self.order_timers[key] = self.ctx.set_timer(
            self.timing.order_grace * (2 ** min(stage + 1, 4)), ("order", owner, dseq)
        )

    def _resend_initial(self, key: tuple, dst: int) -> None:
        owner, dseq = key
        eng = self.d[owner]
        initial = eng.make_initial(dseq)
        origin = eng.initial_origin(dseq)
        if initial is not None and origin is not None:
            if origin == self.rid:
                self.ctx.send(dst, initial)
            else:
                self.ctx.send(dst, Flood(initial, origin))

    def _on_violation_timeout(self, owner: int, dseq: int) -> None:
        key = (owner, dseq)
        self.viol_timers.pop(key, None)
        record = self.probation.get(owner)
        if key in self.disseminated or record is None:
            return
        if not record.pessimistic_for(dseq):
            return
        self.trace.add(
            "probation_violation", replica=self.rid, owner=owner, dseq=dseq, time=self.ctx.now
        )
        self.o.complain()

    # -- client handling --------------------------------------------------------------------

    def _on_client_request(self, src: int, batch: CommandBatch) -> None:
        if self.duplicate_reply(batch):
            return
        client = batch.client_id
        key = (client, batch.timestamp)
        coordinator = self.assignment(client)
        if coordinator == self.rid:
            if key in self.submitted:
                return
            self._submit(batch)
        elif src >= CLIENT_BASE:
            self.ctx.send(coordinator, ClientRequest(batch))
            if key not in self.batch_seen:
                waiting = self.awaited.setdefault(coordinator, set())
                if key not in waiting:
                    waiting.add(key)
                    self.d[coordinator].set_expectations(len(waiting))

    def _submit(self, batch: CommandBatch) -> None:
        key = (batch.client_id, batch.timestamp)
        eng = self.d[self.rid]
        try:
            eng.propose(batch)
            self.submitted.add(key)
        except WindowFull:
            self.queue.append(batch)
        except NotPrimary:
            # own instance is coordinated by someone else until reinstated
            self.queue.append(batch)

    def _drain_queue(self) -> None:
        eng = self.d[self.rid]
        while self.queue and eng.primary() == self.rid and eng.status == "normal":
            batch = self.queue[0]
            key = (batch.client_id, batch.timestamp)
            if batch.timestamp <= self.last_ts.get(batch.client_id, -1) or key in self.submitted:
                self.queue.popleft()
                continue
            try:
                eng.propose(batch)
                self.submitted.add(key)
                self.queue.popleft()
            except (WindowFull, NotPrimary):
                break

    # -- rejoin / reinstatement -----------------------------------------------------------------

    def on_restart(self, now: float) -> None:
        for eng in self.d.values():
            eng.revive()
        self.o.revive()
        self.order_timers = {}
        self.order_stage = {}
        self.initreq_timers = {}
        self.initreq_stage = {}
        self.viol_timers = {}
        self.stall_timer = None
        self.stall_stage = 0
        if self.exec_round is not None:
            self.exec_round.retry = {}
        self.ctx.broadcast(Rejoin(self.rid))
        self._try_execute()

    def on_reconnect(self, peer: int, now: float) -> None:
        self.ctx.send(peer, Status((("O", self.max_mapped),)))

    def _on_status(self, src: int, msg: Status) -> None:
        for tag, high in msg.highs:
            if tag == "O" and high > self.max_mapped:
                # learn the newest slot; the stall machinery fetches the rest
                self.ctx.send(src, StateXferReq("O", high))

    def _on_rejoin(self, src: int, owner: int) -> None:
        if owner != src:
            return
        if self.mapping:
            # tell the rejoined replica how far the order has moved; the
            # stall machinery fetches the middle
            top = max(self.mapping)
            self._serve_xfer(src, StateXferReq("O", top))
        eng = self.d[owner]
        if eng.primary() == owner:
            return
        n = self.config.n_replicas
        target = ((eng.view // n) + 1) * n  # owner coordinates again at v % N == 0
        eng.complain(target)

    # -- adversary hooks (scripted Byzantine behavior) ---------------------------------------------

    def byz_equivocate(self, owner: int, recipients_a=None, recipients_b=None) -> None:
        """Attempt to propose two different batches at one slot."""
        eng = self.d.get(owner, self.d[self.rid])
        self.byz_ts += 1
        b1 = CommandBatch(BYZ_CLIENT + self.rid, self.byz_ts, ((b"a" * 20, b"1"),))
        b2 = CommandBatch(BYZ_CLIENT + self.rid, self.byz_ts, ((b"b" * 20, b"2"),))
        if self.kind == "lh":
            _lh_equivocation_attempt(self, self.d[self.rid])
            return
        seq = eng.next_seq
        eng.next_seq += 1
        everyone = [r for r in range(self.config.n_replicas) if r != self.rid]
        half = len(everyone) // 2
        group_a = recipients_a if recipients_a is not None else everyone[:half]
        group_b = recipients_b if recipients_b is not None else everyone[half:]
        m1 = PrePrepare(eng.tag, eng.view, seq, b1)
        m2 = PrePrepare(eng.tag, eng.view, seq, b2)
        for dst in group_a:
            self.ctx.send(dst, m1)
        for dst in group_b:
            self.ctx.send(dst, m2)

    def byz_collude(self, recipients) -> None:
        """Disseminate to a minimal subset, then (as ordering primary)
        commit the global slot without completing dissemination."""
        eng = self.d[self.rid]
        self.byz_ts += 1
        batch = CommandBatch(BYZ_CLIENT + self.rid, self.byz_ts, ((b"c" * 20, b"x"),))
        seq = eng.next_seq
        eng.next_seq += 1
        if self.kind == "lh":
            offset = seq - eng.base() + 1
            share = self.trusted.create_independent_share(
                prepare_digest(eng.tag, eng.view, seq, compute_digest(batch)),
                (eng.group, ("prep", eng.view)),
                offset,
            )
            initial = LhPrepare(eng.tag, eng.view, seq, batch, share)
        else:
            initial = PrePrepare(eng.tag, eng.view, seq, batch)
        for dst in recipients:
            self.ctx.send(dst, initial)
        if self.o.is_primary:
            try:
                self.o.propose(OrderRef(self.rid, seq))
                self.o_proposed.add((self.rid, seq))
            except (NotPrimary, WindowFull):
                pass

    def byz_order_fake(self, owner: int, dseq: int) -> None:
        """As ordering primary, assign a slot to a reference that was
        never (or not yet) disseminated."""
        key = (owner, dseq)
        try:
            self.o.propose(OrderRef(owner, dseq))
            self.o_proposed.add(key)
        except (NotPrimary, WindowFull):
            pass

    # -- actor interface ---------------------------------------------------------------------------

    def on_message(self, src: int, msg: Message, now: float) -> None:
        if isinstance(msg, ClientRequest):
            self._on_client_request(src, msg.batch)
        elif isinstance(msg, Flood):
            inner = msg.inner
            eng = self._engine_for(getattr(inner, "tag", ""))
            if eng is not None:
                eng.accept_flooded(msg.origin, inner)
        elif isinstance(msg, ExecSig):
            if self.exec_round is not None:
                self.exec_round.on_execsig(src, msg)
        elif isinstance(msg, ExecProof):
            if self.exec_round is not None:
                self.exec_round.on_execproof(src, msg)
        elif isinstance(msg, InitialReq):
            key = (msg.owner, msg.dseq)
            if key in self.initial_seen:
                self._resend_initial(key, src)
        elif isinstance(msg, StateXferReq):
            self._serve_xfer(src, msg)
        elif isinstance(msg, StateXferResp):
            if msg.tag == "O":
                self._complete_o_payload(msg.seq, msg.payload)
            elif msg.tag.startswith("D"):
                key = (int(msg.tag[1:]), msg.seq)
                if key in self.disseminated:
                    self._complete_d_payload(key, msg.payload)
            eng = self._engine_for(msg.tag)
            if eng is not None:
                eng.install_committed(msg.seq, msg.digest, msg.payload, msg.cert)
        elif isinstance(msg, AssignRequest):
            self._on_assign_request(msg.client_id)
        elif isinstance(msg, Rejoin):
            self._on_rejoin(src, msg.owner)
        elif isinstance(msg, Status):
            self._on_status(src, msg)
        elif hasattr(msg, "tag"):
            eng = self._engine_for(msg.tag)
            if eng is not None:
                eng.handle(src, msg, now)

    def _serve_xfer(self, src: int, msg: StateXferReq) -> None:
        eng = self._engine_for(msg.tag)
        entry = eng.committed_entry(msg.seq) if eng is not None else None
        if entry is not None and entry.payload is None:
            entry = None
        if entry is not None:
            self.ctx.send(
                src, StateXferResp(msg.tag, msg.seq, entry.digest, entry.payload, entry.commit_cert)
            )
            return
        # engines garbage-collect; serve from the composition cache
        if (
            msg.tag == "O"
            and msg.seq in self.mapping
            and msg.seq in self.o_cert
            and self.mapping[msg.seq] is not UNKNOWN_PAYLOAD
        ):
            payload = self.mapping[msg.seq]
            self.ctx.send(
                src,
                StateXferResp(msg.tag, msg.seq, compute_digest(payload), payload, self.o_cert[msg.seq]),
            )
        elif msg.tag.startswith("D"):
            key = (int(msg.tag[1:]), msg.seq)
            payload = self.dissem_payload.get(key)
            cert = self.dissem_cert.get(key)
            if payload is not None and cert is not None:
                self.ctx.send(
                    src, StateXferResp(msg.tag, msg.seq, compute_digest(payload), payload, cert)
                )

    def on_timer(self, tag, data, now: float) -> None:
        if not isinstance(tag, tuple):
            return
        kind = tag[0]
        if kind in ("prog", "vc", "lhgap"):
            eng = self._engine_for(tag[1])
            if eng is not None:
                eng.on_timer(kind)
        elif kind == "lhretry":
            eng = self._engine_for(tag[1])
            if eng is not None:
                eng.on_timer(kind, tag[2])
        elif kind == "stall":
            self._on_stall_timeout()
        elif kind == "order":
            self._on_order_timeout(tag[1], tag[2])
        elif kind == "initreq":
            self._on_initreq_timeout(tag[1], tag[2])
        elif kind == "viol":
            self._on_violation_timeout(tag[1], tag[2])
        elif kind == "execretry":
            if self.exec_round is not None:
                oseq = tag[2]
                ref = self.mapping.get(oseq)
                owner = ref.owner if isinstance(ref, OrderRef) else 0
                collector = self.d[owner].primary()
                alts = [
                    (collector + 1 + i) % self.config.n_replicas
                    for i in range(self.config.max_faults)
                ]
                self.exec_round.on_retry(oseq, collector, alts)

    def _evidence(self, tag, desc, seq) -> None:
        self.trace.add("evidence", replica=self.rid, instance=tag, what=desc, seq=seq)
