"""Linear Hybster: two-phase hybrid agreement with trusted-counter
signed proposals and collector-aggregated threshold commits.

The proposer attests each Prepare with an independent counter share
whose value is the in-view offset of the sequence number, so two
different payloads can never occupy one slot.  Receivers process
Prepares in counter order, send their commit shares to a collector
(the proposer; the next f replicas act as alternates on timeout), and
treat a valid f+1 aggregate as the commit proof.  View changes carry
the replica's whole in-view Prepare set under a continuing counter
certificate over its commit counter, which forces even a faulty
replica to disclose everything it helped commit; f+1 ViewChange
messages let the new leader rebuild and re-propose deterministically.

Execution acknowledgement (ExecSig aggregated into one ExecProof for
replicas and client) rides on an untrusted share group and is attached
by the replica layer where enabled.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from typing import Optional

from .core import (
    InstanceLog,
    NOOP,
    Payload,
    SystemConfig,
    compute_digest,
    expected_primary,
    instance_coordinator,
)
from .engine_common import Complaint, EngineHooks, NotPrimary, Timing, WindowFull
from .msgs import DIGEST_BYTES, Flood, HEADER_BYTES, Message
from .threshsign import (
    AggregateSignature,
    ContinuingCertificate,
    SHARE_LEN,
    SignatureShare,
    ThresholdVerifier,
    TrustedSubsystem,
)


def prepare_digest(tag: str, view: int, seq: int, payload_digest: bytes) -> bytes:
    return hashlib.sha256(
        b"P" + tag.encode() + struct.pack(">QQ", view, seq) + payload_digest
    ).digest()


def exec_digest(scope: str, seq: int, client_id: int, timestamp: int, result: bytes) -> bytes:
    return hashlib.sha256(
        b"E" + scope.encode() + struct.pack(">QQQ", seq, client_id, timestamp) + result
    ).digest()


def viewchange_digest(tag: str, target: int, view: int, signed: int, prepared: tuple) -> bytes:
    h = hashlib.sha256(b"V" + tag.encode() + struct.pack(">QQQ", target, view, signed))
    for pview, seq, digest, _payload, _share in prepared:
        h.update(struct.pack(">QQ", pview, seq))
        h.update(digest)
    return h.digest()


@dataclass(frozen=True)
class LhPrepare(Message):
    tag: str
    view: int
    seq: int
    payload: Payload
    share: SignatureShare

    @property
    def kind(self) -> str:
        return f"{self.tag[0]}-Prepare"

    def wire_size(self) -> int:
        return HEADER_BYTES + self.payload.payload_size + SHARE_LEN


@dataclass(frozen=True)
class LhCommitSig(Message):
    tag: str
    view: int
    seq: int
    digest: bytes
    share: SignatureShare

    @property
    def kind(self) -> str:
        return f"{self.tag[0]}-CommitSig"

    def wire_size(self) -> int:
        return HEADER_BYTES + DIGEST_BYTES + SHARE_LEN


@dataclass(frozen=True)
class LhCommit(Message):
    tag: str
    view: int
    seq: int
    digest: bytes
    aggregate: AggregateSignature

    @property
    def kind(self) -> str:
        return f"{self.tag[0]}-Commit"

    def wire_size(self) -> int:
        return HEADER_BYTES + DIGEST_BYTES + SHARE_LEN


@dataclass(frozen=True)
class LhCheckpoint(Message):
    tag: str
    seq: int
    digest: bytes

    @property
    def kind(self) -> str:
        return f"{self.tag[0]}-Checkpoint"

    def wire_size(self) -> int:
        return HEADER_BYTES + DIGEST_BYTES


@dataclass(frozen=True)
class GapRequest(Message):
    tag: str
    view: int
    seq: int

    @property
    def kind(self) -> str:
        return f"{self.tag[0]}-GapReq"


@dataclass(frozen=True)
class LhViewChange(Message):
    tag: str
    target: int
    view: int
    stable_seq: int
    stable_digest: Optional[bytes]
    stable_voters: tuple
    prepared: tuple  # ((view, seq, digest, payload, share), ...) sorted by seq
    signed_count: int
    cert: ContinuingCertificate

    @property
    def kind(self) -> str:
        return f"{self.tag[0]}-ViewChange"

    def wire_size(self) -> int:
        size = HEADER_BYTES + 64 + 32
        for _v, _s, _d, payload, _share in self.prepared:
            size += DIGEST_BYTES + payload.payload_size + SHARE_LEN
        return size


@dataclass(frozen=True)
class LhNewView(Message):
    tag: str
    target: int
    view_changes: tuple  # ((src, LhViewChange), ...)
    reproposals: tuple  # ((seq, payload, share), ...) sorted by seq
    resume_seq: int

    @property
    def kind(self) -> str:
        return f"{self.tag[0]}-NewView"

    def wire_size(self) -> int:
        size = HEADER_BYTES
        for _src, vc in self.view_changes:
            size += vc.wire_size()
        for _seq, payload, _share in self.reproposals:
            size += payload.payload_size + SHARE_LEN
        return size


@dataclass(frozen=True)
class ExecSig(Message):
    KIND = "ExecSig"
    scope: str
    seq: int
    result_digest: bytes
    share: SignatureShare
    client_id: int
    timestamp: int

    def wire_size(self) -> int:
        return HEADER_BYTES + DIGEST_BYTES + SHARE_LEN


@dataclass(frozen=True)
class ExecProof(Message):
    KIND = "ExecProof"
    scope: str
    seq: int
    result_digest: bytes
    aggregate: AggregateSignature
    client_id: int
    timestamp: int

    def wire_size(self) -> int:
        return HEADER_BYTES + DIGEST_BYTES + SHARE_LEN


class LhInstance:
    def __init__(
        self,
        config: SystemConfig,
        tag: str,
        rid: int,
        ctx,
        timing: Timing,
        trusted: TrustedSubsystem,
        verifier: ThresholdVerifier,
        hooks: Optional[EngineHooks] = None,
        owner: Optional[int] = None,
        group: Optional[str] = None,
    ) -> None:
        self.config = config
        self.tag = tag
        self.rid = rid
        self.ctx = ctx
        self.timing = timing
        self.trusted = trusted
        self.verifier = verifier
        self.hooks = hooks or EngineHooks()
        self.owner = owner
        self.group = group if group is not None else f"sigma:{tag}"

        self.view = 0
        self.status = "normal"
        self.log = InstanceLog()
        self.next_seq = 0
        self.view_base: dict[int, int] = {0: 0}
        self.accepted_upto = 0  # highest contiguous prepare offset accepted
        self.voted_upto = 0  # highest offset walked by the voting pipeline
        self.pending_prepares: dict[int, LhPrepare] = {}  # offset -> msg
        self._collect: dict[tuple, dict[int, SignatureShare]] = {}  # (view, seq) -> signer -> share
        self._aggregated: set[tuple] = set()
        self._own_commitsig: dict[int, LhCommitSig] = {}
        self.cc = -1
        self._chain = b"\x00" * 32
        self._chain_at: dict[int, bytes] = {}
        self.last_checkpoint = -1
        self.checkpoint_votes: dict[int, dict[int, bytes]] = {}
        self.evidence: list[str] = []

        self._pending_votes = 0
        self.expectations = 0
        self.complaints: dict[int, dict[int, int]] = {}
        self.vc_msgs: dict[int, dict[int, LhViewChange]] = {}
        self.vc_target = 0
        self.consecutive_vcs = 0
        self._timer: Optional[int] = None
        self._timer_stage = 0
        self._gap_timer: Optional[int] = None
        self._gap_stage = 0
        self._retry_timers: dict[int, int] = {}
        self._installed_targets: set[int] = set()
        self._last_newview: Optional[LhNewView] = None
        self._helped: set = set()

    # -- roles ------------------------------------------------------------

    def primary(self, view: Optional[int] = None) -> int:
        v = self.view if view is None else view
        if self.owner is not None:
            return instance_coordinator(self.owner, v, self.config)
        return expected_primary(v, self.config)

    @property
    def is_primary(self) -> bool:
        return self.primary() == self.rid

    def collector(self, view: Optional[int] = None) -> int:
        return self.primary(view)

    def alternates(self, view: Optional[int] = None) -> list:
        c = self.collector(view)
        return [(c + 1 + i) % self.config.n_replicas for i in range(self.config.max_faults)]

    def base(self, view: Optional[int] = None) -> int:
        return self.view_base[self.view if view is None else view]

    def _offset(self, seq: int, view: Optional[int] = None) -> int:
        return seq - self.base(view) + 1

    def _prep_counter(self, view: int) -> tuple:
        return (self.group, ("prep", view))

    def _cmt_counter(self, view: int) -> tuple:
        return (self.group, ("cmt", view))

    # -- proposing -----------------------------------------------------------

    def propose(self, payload: Payload) -> int:
        if self.status != "normal" or not self.is_primary:
            raise NotPrimary(f"{self.tag}: replica {self.rid} is not primary of view {self.view}")
        if self.next_seq > self.log.low_water_mark + self.config.window:
            raise WindowFull(f"{self.tag}: window exhausted at seq {self.next_seq}")
        seq = self.next_seq
        pdigest = compute_digest(payload)
        offset = self._offset(seq)
        share = self.trusted.create_independent_share(
            prepare_digest(self.tag, self.view, seq, pdigest),
            self._prep_counter(self.view),
            offset,
        )
        self._record_counter(self._prep_counter(self.view), offset, independent=True)
        self.next_seq += 1
        self.ctx.broadcast(LhPrepare(self.tag, self.view, seq, payload, share))
        return seq

    def fill_to(self, seq: int) -> None:
        while self.next_seq <= seq:
            self.propose(NOOP)

    def _record_counter(self, counter: tuple, value: int, independent: bool) -> None:
        trace = getattr(self.ctx, "trace", None)
        if trace is not None:
            trace.add(
                "ctr",
                replica=self.rid,
                instance=counter[0],
                counter=str(counter[1]),
                value=value,
                independent=independent,
            )

    # -- message handling -------------------------------------------------------

    def handle(self, src: int, msg: Message, now: float) -> None:
        if isinstance(msg, LhPrepare):
            self._on_prepare(src, msg)
        elif isinstance(msg, LhCommitSig):
            self._on_commitsig(src, msg)
        elif isinstance(msg, LhCommit):
            self._on_commit(src, msg)
        elif isinstance(msg, LhCheckpoint):
            self._on_checkpoint(src, msg)
        elif isinstance(msg, GapRequest):
            self._on_gap_request(src, msg)
        elif isinstance(msg, Complaint):
            self._on_complaint(src, msg)
        elif isinstance(msg, LhViewChange):
            self._on_viewchange(src, msg)
        elif isinstance(msg, LhNewView):
            self._on_newview(src, msg)

    def _help_straggler(self, src: int, view: int) -> None:
        if (
            self._last_newview is not None
            and view < self.view
            and src != self.rid
            and (src, view) not in self._helped
        ):
            self._helped.add((src, view))
            self.ctx.send(src, self._last_newview)

    def _valid_prepare(self, msg: LhPrepare, origin: int) -> Optional[int]:
        """Returns the offset if the prepare verifies, else None."""
        if msg.view != self.view:
            if msg.view < self.view:
                self._help_straggler(origin, msg.view)
            return None
        if origin != self.primary(msg.view):
            return None
        pdigest = compute_digest(msg.payload)
        share = msg.share
        offset = self._offset(msg.seq, msg.view)
        if offset < 1:
            return None
        if share.counter != self._prep_counter(msg.view) or share.new_value != offset:
            return None
        if share.message_digest != prepare_digest(self.tag, msg.view, msg.seq, pdigest):
            return None
        if not self.verifier.verify_share(share):
            self.evidence.append(f"invalid prepare share {self.tag} seq {msg.seq}")
            if self.hooks.on_evidence:
                self.hooks.on_evidence(self.tag, "invalid-share", msg.seq)
            return None
        return offset

    def _on_prepare(self, src: int, msg: LhPrepare, flood_origin: Optional[int] = None) -> None:
        if self.status != "normal":
            return
        origin = flood_origin if flood_origin is not None else src
        offset = self._valid_prepare(msg, origin)
        if offset is None:
            return
        if msg.seq <= self.log.low_water_mark:
            return
        if offset <= self.accepted_upto:
            return
        if msg.seq > self.log.low_water_mark + 2 * self.config.window:
            return
        self.pending_prepares[offset] = msg
        self._drain_prepares()

    def accept_flooded(self, origin: int, msg: LhPrepare) -> None:
        self._on_prepare(origin, msg, flood_origin=origin)

    def _drain_prepares(self) -> None:
        progressed = False
        while self.accepted_upto + 1 in self.pending_prepares:
            msg = self.pending_prepares.pop(self.accepted_upto + 1)
            self.accepted_upto += 1
            entry = self.log.entry(msg.seq)
            digest = compute_digest(msg.payload)
            if entry.committed and entry.digest != digest:
                # committed through a later-view certificate; keep it and
                # only advance the ordering pipeline past this slot
                if self.hooks.on_evidence:
                    self.hooks.on_evidence(self.tag, "stale-conflicting-prepare", msg.seq)
                continue
            was_counted = entry.preprepared and not entry.committed
            entry.preprepared = True
            entry.digest = digest
            entry.payload = msg.payload
            entry.view = msg.view
            entry.prepare_share = msg.share
            if not entry.committed and not was_counted:
                self._pending_votes += 1
            progressed = True
            if self.hooks.on_preprepare:
                self.hooks.on_preprepare(
                    self.tag, msg.seq, entry.digest, msg.payload, msg.view, self.primary(msg.view)
                )
        if progressed:
            self._drain_votes()
            self._sync_timer()
        self._sync_gap_timer()

    def _drain_votes(self) -> None:
        """Commit-sign accepted prepares in counter order; a gated entry
        stalls the voting pipeline (trusted signatures happen in order)."""
        while self.voted_upto < self.accepted_upto:
            offset = self.voted_upto + 1
            seq = self.base() + offset - 1
            entry = self.log.get(seq)
            if entry is None:
                return
            if entry.committed:
                self.voted_upto = offset
                continue
            if self.hooks.vote_gate and not self.hooks.vote_gate(self.tag, seq, entry.payload):
                return
            share = self.trusted.create_independent_share(
                entry.digest, self._cmt_counter(self.view), offset
            )
            self._record_counter(self._cmt_counter(self.view), offset, independent=True)
            self.voted_upto = offset
            sig = LhCommitSig(self.tag, self.view, seq, entry.digest, share)
            self._own_commitsig[seq] = sig
            self.ctx.send(self.collector(), sig)
            if seq not in self._retry_timers:
                self._retry_timers[seq] = self.ctx.set_timer(
                    self.timing.collector_retry, ("lhretry", self.tag, seq)
                )

    def recheck_gates(self) -> None:
        if self.status == "normal":
            self._drain_votes()

    def parked_seqs(self) -> list:
        if self.voted_upto >= self.accepted_upto:
            return []
        return [self.base() + self.voted_upto]

    def _on_commitsig(self, src: int, msg: LhCommitSig) -> None:
        if msg.view != self.view or self.status != "normal":
            return
        key = (msg.view, msg.seq)
        if key in self._aggregated or msg.seq <= self.log.low_water_mark:
            return
        share = msg.share
        offset = self._offset(msg.seq, msg.view)
        if share.counter != self._cmt_counter(msg.view) or share.new_value != offset:
            return
        if share.message_digest != msg.digest or share.signer != src:
            return
        if not self.verifier.verify_share(share):
            self.evidence.append(f"invalid commit share {self.tag} seq {msg.seq} from {src}")
            if self.hooks.on_evidence:
                self.hooks.on_evidence(self.tag, "invalid-share", msg.seq)
            return
        bucket = self._collect.setdefault(key, {})
        bucket[src] = share
        matching = [s for s in bucket.values() if s.message_digest == msg.digest]
        if len(matching) >= self.config.quorum:
            agg = self.verifier.aggregate_shares(matching[: self.config.quorum])
            self._aggregated.add(key)
            del self._collect[key]
            self.ctx.broadcast(LhCommit(self.tag, msg.view, msg.seq, msg.digest, agg))

    def _on_commit(self, src: int, msg: LhCommit) -> None:
        if msg.seq <= self.log.low_water_mark:
            return
        base = self.view_base.get(msg.view)
        if base is None:
            return
        offset = msg.seq - base + 1
        if offset < 1:
            return
        counter = self._cmt_counter(msg.view)
        if not self.verifier.verify_signature(msg.digest, msg.aggregate, counter, offset):
            return
        entry = self.log.entry(msg.seq)
        if entry.committed:
            return
        if entry.preprepared and entry.digest != msg.digest:
            raise AssertionError(
                f"commit aggregate conflicts with accepted prepare at {self.tag} seq {msg.seq}"
            )
        self._commit(msg.seq, entry, msg.digest, msg.aggregate)

    def _commit(self, seq: int, entry, digest: bytes, cert) -> None:
        if entry.preprepared and not entry.committed:
            self._pending_votes = max(0, self._pending_votes - 1)
        entry.digest = digest
        entry.prepared = True
        entry.committed = True
        entry.commit_cert = cert
        self.consecutive_vcs = 0
        self._timer_stage = 0
        self.complaints.pop(self.view, None)
        handle = self._retry_timers.pop(seq, None)
        if handle is not None:
            self.ctx.cancel_timer(handle)
        self._own_commitsig.pop(seq, None)
        if self.hooks.on_commit:
            self.hooks.on_commit(self.tag, seq, digest, entry.payload, entry.view)
        self._advance_cc()
        self._drain_votes()
        self._sync_timer()

    # -- retransmission ------------------------------------------------------------

    def _sync_gap_timer(self) -> None:
        waiting = bool(self.pending_prepares)
        if waiting and self._gap_timer is None:
            self._gap_timer = self.ctx.set_timer(self.timing.gap_request, ("lhgap", self.tag))
        elif not waiting and self._gap_timer is not None:
            self.ctx.cancel_timer(self._gap_timer)
            self._gap_timer = None
            self._gap_stage = 0

    def on_gap_timeout(self) -> None:
        self._gap_timer = None
        if not self.pending_prepares:
            self._gap_stage = 0
            return
        missing_seq = self.base() + self.accepted_upto  # first missing slot
        req = GapRequest(self.tag, self.view, missing_seq)
        if self._gap_stage == 0:
            self.ctx.send(self.primary(), req)
            self._gap_stage = 1
        else:
            self.ctx.broadcast(req)
            self.evidence.append(f"gap stall {self.tag} at seq {missing_seq}")
        self._sync_gap_timer()

    def _on_gap_request(self, src: int, msg: GapRequest) -> None:
        entry = self.log.get(msg.seq)
        if entry is None or entry.payload is None:
            return
        stored = self._stored_prepare(msg.seq, entry)
        if stored is not None:
            proposer = self.primary(entry.view)
            if proposer == self.rid:
                self.ctx.send(src, stored)
            else:
                self.ctx.send(src, Flood(stored, proposer))

    def _stored_prepare(self, seq: int, entry, offset: int = 0) -> Optional[LhPrepare]:
        share = entry.prepare_share
        if share is None:
            return None
        return LhPrepare(self.tag, entry.view, seq, entry.payload, share)

    def on_retry_timeout(self, seq: int) -> None:
        self._retry_timers.pop(seq, None)
        entry = self.log.get(seq)
        if entry is None or entry.committed:
            return
        sig = self._own_commitsig.get(seq)
        if sig is not None and sig.view == self.view:
            for alt in self.alternates():
                self.ctx.send(alt, sig)
            self._retry_timers[seq] = self.ctx.set_timer(
                self.timing.collector_retry * 2, ("lhretry", self.tag, seq)
            )

    # -- checkpoints -----------------------------------------------------------------

    def _advance_cc(self) -> None:
        while True:
            entry = self.log.get(self.cc + 1)
            if entry is None or not entry.committed:
                break
            self.cc += 1
            self._chain = hashlib.sha256(self._chain + (entry.digest or b"")).digest()
            if self.cc > 0 and self.cc % self.config.checkpoint_interval == 0:
                self._chain_at[self.cc] = self._chain
                if self.cc > self.last_checkpoint:
                    self.last_checkpoint = self.cc
                    self.ctx.broadcast(LhCheckpoint(self.tag, self.cc, self._chain))

    def _on_checkpoint(self, src: int, msg: LhCheckpoint) -> None:
        if msg.seq <= self.log.low_water_mark:
            return
        votes = self.checkpoint_votes.setdefault(msg.seq, {})
        votes[src] = msg.digest
        matching = sorted(s for s, d in votes.items() if d == msg.digest)
        if len(matching) >= self.config.quorum:
            proof = (msg.seq, msg.digest, tuple(matching))
            self.log.collect_garbage(msg.seq, proof)
            self.checkpoint_votes = {
                s: v for s, v in self.checkpoint_votes.items() if s > msg.seq
            }
            if self.next_seq <= msg.seq:
                self.next_seq = msg.seq + 1
            if self.cc < msg.seq:
                self.cc = msg.seq
                self._chain = msg.digest

    # -- state transfer -----------------------------------------------------------------

    def committed_entry(self, seq: int):
        entry = self.log.get(seq)
        if entry is not None and entry.committed:
            return entry
        return None

    def install_committed(self, seq: int, digest: bytes, payload, cert) -> bool:
        if seq <= self.log.low_water_mark:
            return False
        if not isinstance(cert, AggregateSignature):
            return False
        entry = self.log.entry(seq)
        if entry.committed:
            return False
        counter = cert.counter
        if counter[0] != self.group:
            return False
        if not self.verifier.verify_signature(digest, cert, counter, cert.value):
            return False
        if payload is not None and compute_digest(payload) != digest:
            return False
        if entry.preprepared:
            self._pending_votes = max(0, self._pending_votes - 1)
        entry.preprepared = True
        entry.digest = digest
        entry.payload = payload
        entry.prepared = True
        entry.committed = True
        entry.commit_cert = cert
        if self.hooks.on_commit:
            self.hooks.on_commit(self.tag, seq, digest, payload, entry.view)
        self._advance_cc()
        self._sync_timer()
        return True

    # -- progress timers -------------------------------------------------------------------

    def set_expectations(self, n: int) -> None:
        self.expectations = n
        self._sync_timer()

    def revive(self) -> None:
        self._timer = None
        self._timer_stage = 0
        self._gap_timer = None
        self._gap_stage = 0
        self._retry_timers = {}
        self._sync_timer()
        self._sync_gap_timer()

    def make_initial(self, seq: int) -> Optional[LhPrepare]:
        entry = self.log.get(seq)
        if entry is None or entry.payload is None:
            return None
        return self._stored_prepare(seq, entry)

    def initial_origin(self, seq: int) -> Optional[int]:
        entry = self.log.get(seq)
        if entry is None:
            return None
        return self.primary(entry.view)

    def _has_pending(self) -> bool:
        return self._pending_votes > 0 or self.expectations > 0

    def _sync_timer(self) -> None:
        if self.status == "viewchange":
            return
        if self._has_pending() and self._timer is None:
            scale = 2 ** min(self.consecutive_vcs, 6)
            self._timer = self.ctx.set_timer(self.timing.progress * scale, ("prog", self.tag))
        elif not self._has_pending() and self._timer is not None:
            self.ctx.cancel_timer(self._timer)
            self._timer = None

    def on_progress_timeout(self) -> None:
        self._timer = None
        if self.status != "normal" or not self._has_pending():
            self._sync_timer()
            return
        if self._timer_stage == 0:
            self._timer_stage = 1
            if self.is_primary:
                self._rebroadcast_prepares()
            self._sync_timer()
        else:
            self._send_complaint()
            self._sync_timer()

    def _rebroadcast_prepares(self) -> None:
        for seq in sorted(self.log.entries):
            entry = self.log.entries[seq]
            if entry.preprepared and not entry.committed and entry.view == self.view:
                msg = self._stored_prepare(seq, entry, self._offset(seq))
                if msg is not None:
                    self.ctx.broadcast(msg)

    # -- view change ----------------------------------------------------------------------

    def _send_complaint(self, target: Optional[int] = None) -> None:
        target = self.view + 1 if target is None else target
        self.ctx.broadcast(Complaint(self.tag, self.view, target))

    def complain(self, target: Optional[int] = None) -> None:
        self._send_complaint(target)

    def _on_complaint(self, src: int, msg: Complaint) -> None:
        if msg.view < self.view or msg.target <= self.view:
            self._help_straggler(src, msg.view)
            return
        per_view = self.complaints.setdefault(msg.view, {})
        per_view[src] = max(per_view.get(src, 0), msg.target)
        if msg.view == self.view and len(per_view) >= self.config.complaint_threshold:
            target = max(per_view.values())
            self._enter_viewchange(target)

    def _enter_viewchange(self, target: int) -> None:
        if target <= self.view or (self.status == "viewchange" and target <= self.vc_target):
            return
        was_normal = self.status == "normal"
        self.status = "viewchange"
        self.vc_target = target
        if self._timer is not None:
            self.ctx.cancel_timer(self._timer)
            self._timer = None
        prepared = []
        for seq in sorted(self.log.entries):
            entry = self.log.entries[seq]
            if entry.preprepared and seq > self.log.low_water_mark:
                share = getattr(entry, "prepare_share", None)
                if share is not None:
                    prepared.append((entry.view, seq, entry.digest, entry.payload, share))
        prepared = tuple(prepared)
        counter = self._cmt_counter(self.view)
        signed = self.trusted.counter_value(counter)
        vdigest = viewchange_digest(self.tag, target, self.view, signed, prepared)
        cert = self.trusted.create_continuing_certificate(vdigest, counter, signed, signed)
        self._record_counter(counter, signed, independent=False)
        stable = self.log.stable_checkpoint or (-1, None, ())
        vc = LhViewChange(
            self.tag, target, self.view, stable[0], stable[1], stable[2],
            prepared, signed, cert,
        )
        self.ctx.broadcast(vc)
        scale = 2 ** min(self.consecutive_vcs, 6)
        self._timer = self.ctx.set_timer(self.timing.viewchange * scale, ("vc", self.tag))

    def on_vc_timeout(self) -> None:
        self._timer = None
        if self.status != "viewchange":
            self._sync_timer()
            return
        self.consecutive_vcs += 1
        self._send_complaint(self.vc_target + 1)
        scale = 2 ** min(self.consecutive_vcs, 6)
        self._timer = self.ctx.set_timer(self.timing.viewchange * scale, ("vc", self.tag))

    def _validate_viewchange(self, src: int, vc: LhViewChange) -> bool:
        vdigest = viewchange_digest(vc.tag, vc.target, vc.view, vc.signed_count, vc.prepared)
        counter = (self.group, ("cmt", vc.view))
        if not self.verifier.verify_certificate(
            vdigest, vc.cert, counter, vc.signed_count, vc.signed_count
        ):
            return False
        offsets = set()
        bases: dict[int, int] = {}
        for pview, seq, digest, payload, share in vc.prepared:
            if share.counter != (self.group, ("prep", pview)):
                return False
            if share.message_digest != prepare_digest(self.tag, pview, seq, digest):
                return False
            if compute_digest(payload) != digest:
                return False
            if not self.verifier.verify_share(share):
                return False
            base = seq - share.new_value
            if bases.setdefault(pview, base) != base:
                return False
            if pview == vc.view:
                offsets.add(share.new_value)
        # the commit counter forces disclosure of everything the sender
        # helped commit in the failed view
        need = set(range(1, vc.signed_count + 1))
        return need.issubset(offsets)

    def _on_viewchange(self, src: int, msg: LhViewChange) -> None:
        if msg.target <= self.view or msg.target in self._installed_targets:
            return
        if not self._validate_viewchange(src, msg):
            self.evidence.append(f"invalid viewchange from {src} for {self.tag}")
            if self.hooks.on_evidence:
                self.hooks.on_evidence(self.tag, "invalid-viewchange", msg.target)
            return
        self.vc_msgs.setdefault(msg.target, {})[src] = msg
        joiners = set()
        best = msg.target
        for target, msgs in self.vc_msgs.items():
            if target > self.view:
                joiners.update(msgs)
                best = max(best, target)
        if self.status == "normal" and len(joiners) >= self.config.complaint_threshold:
            self._enter_viewchange(best)
        self._try_new_view(msg.target)

    @staticmethod
    def rebuild(vcs: dict) -> tuple:
        """Deterministic new-view state from a view-change quorum:
        (stable_seq, stable_digest, stable_voters, ((seq, payload), ...), resume)."""
        stable_seq, stable_digest, stable_voters = -1, None, ()
        for vc in vcs.values():
            if vc.stable_seq > stable_seq:
                stable_seq, stable_digest, stable_voters = (
                    vc.stable_seq, vc.stable_digest, vc.stable_voters,
                )
        best: dict[int, tuple] = {}
        for vc in vcs.values():
            for pview, seq, digest, payload, _share in vc.prepared:
                if seq <= stable_seq:
                    continue
                cur = best.get(seq)
                if cur is None or pview > cur[0]:
                    best[seq] = (pview, digest, payload)
                elif pview == cur[0] and digest != cur[1]:
                    raise AssertionError(f"conflicting prepares disclosed at seq {seq}")
        max_seq = max(best, default=stable_seq)
        reproposals = tuple(
            (seq, best[seq][2] if seq in best else NOOP)
            for seq in range(stable_seq + 1, max_seq + 1)
        )
        return stable_seq, stable_digest, stable_voters, reproposals, max_seq + 1

    def _try_new_view(self, target: int) -> None:
        if target <= self.view or target in self._installed_targets:
            return
        if self.primary(target) != self.rid:
            return
        vcs = self.vc_msgs.get(target, {})
        if len(vcs) < self.config.vc_quorum:
            return
        chosen = dict(sorted(vcs.items())[: self.config.vc_quorum])
        stable_seq, sd, sv, reproposals, resume = self.rebuild(chosen)
        if stable_seq > self.cc:
            # lagging leader: adopt the quorum's checkpoint before leading
            trace = getattr(self.ctx, "trace", None)
            if trace is not None:
                trace.add("state_transfer", replica=self.rid, tag=self.tag, upto=stable_seq)
        signed = []
        for idx, (seq, payload) in enumerate(reproposals):
            pdigest = compute_digest(payload)
            share = self.trusted.create_independent_share(
                prepare_digest(self.tag, target, seq, pdigest),
                self._prep_counter(target),
                idx + 1,
            )
            self._record_counter(self._prep_counter(target), idx + 1, independent=True)
            signed.append((seq, payload, share))
        nv = LhNewView(self.tag, target, tuple(sorted(chosen.items())), tuple(signed), resume)
        self._installed_targets.add(target)
        self.ctx.broadcast(nv)

    def _on_newview(self, src: int, msg: LhNewView) -> None:
        if msg.target <= self.view:
            return
        if src != self.primary(msg.target):
            return
        vcs = dict(msg.view_changes)
        if len(vcs) < self.config.vc_quorum:
            return
        if any(vc.target != msg.target for vc in vcs.values()):
            return
        for sender, vc in vcs.items():
            if not self._validate_viewchange(sender, vc):
                return
        stable_seq, sd, sv, reproposals, resume = self.rebuild(vcs)
        offered = {seq: payload for seq, payload, _ in msg.reproposals}
        expected = dict(reproposals)
        if set(expected) != set(offered):
            return
        for seq, payload in expected.items():
            if compute_digest(payload) != compute_digest(offered[seq]):
                return
        base = stable_seq + 1 if msg.reproposals else resume
        for idx, (seq, payload, share) in enumerate(sorted(msg.reproposals)):
            if share.counter != self._prep_counter(msg.target) or share.new_value != idx + 1:
                return
            if share.message_digest != prepare_digest(
                self.tag, msg.target, seq, compute_digest(payload)
            ):
                return
            if not self.verifier.verify_share(share):
                return
        # install
        self.view = msg.target
        self.status = "normal"
        self.vc_target = msg.target
        self._timer_stage = 0
        self.view_base[msg.target] = base
        self.accepted_upto = 0
        self.voted_upto = 0
        self.pending_prepares = {}
        self._collect = {}
        for handle in self._retry_timers.values():
            self.ctx.cancel_timer(handle)
        self._retry_timers = {}
        self._own_commitsig = {}
        self.complaints = {v: c for v, c in self.complaints.items() if v >= self.view}
        if self._timer is not None:
            self.ctx.cancel_timer(self._timer)
            self._timer = None
        if stable_seq > self.log.low_water_mark and sd is not None:
            self.log.collect_garbage(stable_seq, (stable_seq, sd, sv))
            if self.cc < stable_seq:
                self.cc = stable_seq
                self._chain = sd
        self.next_seq = msg.resume_seq
        for seq, payload, share in sorted(msg.reproposals):
            entry = self.log.get(seq)
            if entry is not None and entry.committed:
                if entry.digest != compute_digest(payload) and self.hooks.on_evidence:
                    self.hooks.on_evidence(self.tag, "stale-newview-reproposal", seq)
            elif entry is not None:
                if entry.preprepared:
                    self._pending_votes = max(0, self._pending_votes - 1)
                entry.preprepared = False
                entry.prepared = False
            self._on_prepare(src, LhPrepare(self.tag, msg.target, seq, payload, share))
        self._pending_votes = sum(
            1 for e in self.log.entries.values() if e.preprepared and not e.committed
        )
        self._last_newview = msg
        if self.hooks.on_newview:
            self.hooks.on_newview(self.tag, self.view, msg.resume_seq)
        self._sync_timer()

    # -- timer dispatch --------------------------------------------------------------

    def on_timer(self, tag_kind: str, extra=None) -> None:
        if tag_kind == "prog":
            self.on_progress_timeout()
        elif tag_kind == "vc":
            self.on_vc_timeout()
        elif tag_kind == "lhgap":
            self.on_gap_timeout()
        elif tag_kind == "lhretry":
            self.on_retry_timeout(extra)
