"""Replicated key-value state machine and closed-loop client actors.

The state machine applies 100%-put batches; its running version chain
makes execution order observable, so two replicas that apply the same
batches in different orders produce different result digests.  Clients
keep exactly one request outstanding, accept f+1 matching replies (or
one verified aggregate under the hybrid engines), time out by
rebroadcasting to every replica, and adapt to repeated timeouts by
sending future commands to f+1 replicas.
"""

from __future__ import annotations

import hashlib
from typing import Optional

from .core import CommandBatch, NoOp, SystemConfig, compute_digest
from .msgs import AssignAck, AssignRequest, ClientRequest, Reply
from .linhybster import ExecProof, exec_digest

CLIENT_BASE = 10_000


class KvState:
    """In-memory store with a version chain binding results to apply order."""

    def __init__(self) -> None:
        self.store: dict[bytes, bytes] = {}
        self.chain = b"\x00" * 32

    def apply(self, batch) -> bytes:
        if isinstance(batch, NoOp):
            return hashlib.sha256(self.chain + b"noop").digest()
        for key, value in batch.operations:
            self.store[key] = value
        self.chain = hashlib.sha256(self.chain + compute_digest(batch)).digest()
        return self.chain

    def state_digest(self) -> bytes:
        return self.chain


def make_batch(client_id: int, timestamp: int, rng, config: SystemConfig) -> CommandBatch:
    ops = tuple(
        (rng.randbytes(20), rng.randbytes(config.payload_bytes))
        for _ in range(config.batch_size)
    )
    return CommandBatch(client_id, timestamp, ops)


class ClientActor:
    """Closed-loop client: at most one in-flight batch, client-monotonic
    timestamps, engine-specific accept rule."""

    def __init__(
        self,
        client_id: int,
        config: SystemConfig,
        coordinator: int,
        hybrid: bool,
        timing,
        n_requests: int,
        verifier=None,
        adapt_after: int = 2,
    ) -> None:
        self.actor_id = client_id
        self.config = config
        self.coordinator = coordinator
        self.hybrid = hybrid
        self.timing = timing
        self.n_requests = n_requests
        self.verifier = verifier
        self.adapt_after = adapt_after

        self.ctx = None
        self.next_ts = 0
        self.outstanding: Optional[CommandBatch] = None
        self.submit_time = 0.0
        self.reply_votes: dict[bytes, set] = {}
        self.assign_votes: dict[int, set] = {}
        self.timeouts = 0
        self.total_timeouts = 0
        self.accepted = 0
        self._timer = None

    def bind(self, ctx) -> None:
        self.ctx = ctx

    def start(self) -> None:
        self._next_request()

    def _next_request(self) -> None:
        if self.next_ts >= self.n_requests:
            self.outstanding = None
            return
        rng = self.ctx.rng("workload")
        batch = make_batch(self.actor_id, self.next_ts, rng, self.config)
        self.next_ts += 1
        self.outstanding = batch
        self.reply_votes = {}
        self.timeouts = 0
        self.submit_time = self.ctx.now
        self.ctx.trace.add(
            "submit", client=self.actor_id, ts=batch.timestamp, time=self.ctx.now
        )
        self._send(batch)

    def _send(self, batch: CommandBatch) -> None:
        msg = ClientRequest(batch)
        if self.total_timeouts >= self.adapt_after:
            # repeated trouble: hedge across f+1 replicas
            n, f = self.config.n_replicas, self.config.max_faults
            for i in range(f + 1):
                self.ctx.send((self.coordinator + i) % n, msg)
        else:
            self.ctx.send(self.coordinator, msg)
        self._arm()

    def _arm(self) -> None:
        if self._timer is not None:
            self.ctx.cancel_timer(self._timer)
        self._timer = self.ctx.set_timer(
            self.timing.client_timeout * (2 ** min(self.timeouts, 4)), ("client",)
        )

    def on_timer(self, tag, data, now) -> None:
        if tag == ("client",):
            self._timer = None
            if self.outstanding is None:
                return
            self.timeouts += 1
            self.total_timeouts += 1
            # resend to everyone; replicas forward or answer from cache
            for rid in range(self.config.n_replicas):
                self.ctx.send(rid, ClientRequest(self.outstanding))
            if self.total_timeouts >= self.adapt_after:
                # the coordinator looks dead: ask for a reassignment
                self.assign_votes = {}
                for rid in range(self.config.n_replicas):
                    self.ctx.send(rid, AssignRequest(self.actor_id))
            self._arm()

    def on_message(self, src, msg, now) -> None:
        if isinstance(msg, AssignAck) and msg.client_id == self.actor_id:
            votes = self.assign_votes.setdefault(msg.coordinator, set())
            votes.add(src)
            if (
                len(votes) >= self.config.max_faults + 1
                and msg.coordinator != self.coordinator
            ):
                self.coordinator = msg.coordinator
                self.timeouts = 0
                if self.outstanding is not None:
                    self.ctx.send(self.coordinator, ClientRequest(self.outstanding))
                    self._arm()
            return
        if self.outstanding is None:
            return
        ts = self.outstanding.timestamp
        if isinstance(msg, Reply):
            if msg.client_id != self.actor_id or msg.timestamp != ts:
                return
            votes = self.reply_votes.setdefault(msg.result_digest, set())
            votes.add(src)
            if len(votes) >= self.config.max_faults + 1:
                self._accept(now)
        elif isinstance(msg, ExecProof):
            if msg.client_id != self.actor_id or msg.timestamp != ts:
                return
            if self.verifier is None:
                return
            m = exec_digest(msg.scope, msg.seq, msg.client_id, msg.timestamp, msg.result_digest)
            if self.verifier.verify_signature(
                m, msg.aggregate, ("pi", ("exec",)), msg.seq + 1
            ):
                self._accept(now)

    def _accept(self, now: float) -> None:
        self.ctx.trace.add(
            "accept",
            client=self.actor_id,
            ts=self.outstanding.timestamp,
            submit=self.submit_time,
            time=now,
        )
        self.accepted += 1
        self.outstanding = None
        if self._timer is not None:
            self.ctx.cancel_timer(self._timer)
            self._timer = None
        self._next_request()
