"""Self-contained PBFT consensus instance (agreement, checkpoint, view
change), parameterized by an instance tag.

One instance runs the classic three-phase protocol with 2f+1 quorums:
the primary broadcasts PrePrepare, every replica (primary included)
broadcasts Prepare on accepting it, prepared entries trigger a Commit
broadcast, and 2f+1 matching Commits commit the entry.  Normal-case
messages are MAC-authenticated per link (emulated by the simulator's
unforgeable sender identities); view-change bundles carry voter sets
standing in for signatures.

The same class serves the standalone baseline, the per-replica
dissemination instances and the global ordering instance; instance
tags ("P", "D3", "O") only change message naming and primary rotation.
"""

from __future__ import annotations

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
from .msgs import DIGEST_BYTES, HEADER_BYTES, Message
import hashlib


@dataclass(frozen=True)
class PrePrepare(Message):
    tag: str
    view: int
    seq: int
    payload: Payload

    @property
    def kind(self) -> str:
        return f"{self.tag[0]}-PrePrepare"

    def wire_size(self) -> int:
        return HEADER_BYTES + self.payload.payload_size


@dataclass(frozen=True)
class Prepare(Message):
    tag: str
    view: int
    seq: int
    digest: bytes

    @property
    def kind(self) -> str:
        return f"{self.tag[0]}-Prepare"

    def wire_size(self) -> int:
        return HEADER_BYTES + DIGEST_BYTES


@dataclass(frozen=True)
class Commit(Message):
    tag: str
    view: int
    seq: int
    digest: bytes

    @property
    def kind(self) -> str:
        return f"{self.tag[0]}-Commit"

    def wire_size(self) -> int:
        return HEADER_BYTES + DIGEST_BYTES


@dataclass(frozen=True)
class Checkpoint(Message):
    tag: str
    seq: int
    digest: bytes

    @property
    def kind(self) -> str:
        return f"{self.tag[0]}-Checkpoint"

    def wire_size(self) -> int:
        return HEADER_BYTES + DIGEST_BYTES


@dataclass(frozen=True)
class ViewChange(Message):
    tag: str
    target: int
    stable_seq: int
    stable_digest: Optional[bytes]
    stable_voters: tuple
    prepared: tuple  # ((seq, view, digest, payload, voters), ...) sorted by seq

    @property
    def kind(self) -> str:
        return f"{self.tag[0]}-ViewChange"

    def wire_size(self) -> int:
        size = HEADER_BYTES + 64
        for _seq, _view, _digest, payload, _voters in self.prepared:
            size += DIGEST_BYTES + payload.payload_size
        return size


@dataclass(frozen=True)
class NewView(Message):
    tag: str
    target: int
    view_changes: tuple  # ((src, ViewChange), ...) sorted by src
    reproposals: tuple  # ((seq, payload), ...) sorted by seq
    resume_seq: int

    @property
    def kind(self) -> str:
        return f"{self.tag[0]}-NewView"

    def wire_size(self) -> int:
        size = HEADER_BYTES
        for _src, vc in self.view_changes:
            size += vc.wire_size()
        for _seq, payload in self.reproposals:
            size += payload.payload_size
        return size


def build_new_view(tag: str, target: int, vcs: dict) -> tuple:
    """Deterministic new-view construction from a view-change quorum.

    Returns (stable_seq, stable_digest, stable_voters, reproposals,
    resume_seq).  Every replica recomputes this from the embedded
    view-change set, so a primary cannot smuggle in a different state.
    Prepared certificates win by highest view; two certificates for the
    same sequence number in the same view can never conflict, which is
    asserted as a safety net.
    """
    stable_seq, stable_digest, stable_voters = -1, None, ()
    for vc in vcs.values():
        if vc.stable_seq > stable_seq:
            stable_seq = vc.stable_seq
            stable_digest = vc.stable_digest
            stable_voters = vc.stable_voters
    best: dict[int, tuple] = {}
    for vc in vcs.values():
        for seq, view, digest, payload, voters in vc.prepared:
            if seq <= stable_seq:
                continue
            cur = best.get(seq)
            if cur is None or view > cur[0]:
                best[seq] = (view, digest, payload)
            elif view == cur[0] and digest != cur[1]:
                raise AssertionError(
                    f"conflicting prepared certificates at {tag} seq {seq} view {view}"
                )
    max_seq = max(best, default=stable_seq)
    reproposals = tuple(
        (seq, best[seq][2] if seq in best else NOOP)
        for seq in range(stable_seq + 1, max_seq + 1)
    )
    return stable_seq, stable_digest, stable_voters, reproposals, max_seq + 1


class PbftInstance:
    def __init__(
        self,
        config: SystemConfig,
        tag: str,
        rid: int,
        ctx,
        timing: Timing,
        hooks: Optional[EngineHooks] = None,
        owner: Optional[int] = None,
    ) -> None:
        self.config = config
        self.tag = tag
        self.rid = rid
        self.ctx = ctx
        self.timing = timing
        self.hooks = hooks or EngineHooks()
        self.owner = owner

        self.view = 0
        self.status = "normal"  # or "viewchange"
        self.log = InstanceLog()
        self.next_seq = 0
        self.cc = -1  # contiguous committed watermark
        self._chain = b"\x00" * 32
        self._chain_at: dict[int, bytes] = {}
        self.last_checkpoint = -1
        self.checkpoint_votes: dict[int, dict[int, bytes]] = {}
        self.evidence: list[str] = []

        self._pending_votes = 0
        self._parked: dict[int, bytes] = {}  # seq -> digest awaiting gate
        self._buffered: list = []
        self.expectations = 0

        self.complaints: dict[int, dict[int, int]] = {}  # view -> src -> target
        self.vc_msgs: dict[int, dict[int, ViewChange]] = {}  # target -> src -> msg
        self.vc_target = 0
        self.consecutive_vcs = 0
        self._timer: Optional[int] = None
        self._timer_stage = 0
        self._installed_targets: set[int] = set()
        self._last_newview: Optional[NewView] = None
        self._helped: set = set()

    # -- roles ---------------------------------------------------------------

    def primary(self, view: Optional[int] = None) -> int:
        v = self.view if view is None else view
        if self.owner is not None:
            return instance_coordinator(self.owner, v, self.config)
        return expected_primary(v, self.config)

    @property
    def is_primary(self) -> bool:
        return self.primary() == self.rid

    # -- proposing -------------------------------------------------------------

    def propose(self, payload: Payload) -> int:
        if self.status != "normal" or not self.is_primary:
            raise NotPrimary(f"{self.tag}: replica {self.rid} is not primary of view {self.view}")
        if self.next_seq > self.log.low_water_mark + self.config.window:
            raise WindowFull(f"{self.tag}: window exhausted at seq {self.next_seq}")
        seq = self.next_seq
        self.next_seq += 1
        self.ctx.broadcast(PrePrepare(self.tag, self.view, seq, payload))
        return seq

    def fill_to(self, seq: int) -> None:
        """Propose no-ops for every unassigned slot up to seq."""
        while self.next_seq <= seq:
            self.propose(NOOP)

    # -- message handling --------------------------------------------------------

    def handle(self, src: int, msg: Message, now: float) -> None:
        if isinstance(msg, PrePrepare):
            self._on_preprepare(src, msg)
        elif isinstance(msg, Prepare):
            self._on_vote(src, msg, "prepares")
        elif isinstance(msg, Commit):
            self._on_vote(src, msg, "commits")
        elif isinstance(msg, Checkpoint):
            self._on_checkpoint(src, msg)
        elif isinstance(msg, Complaint):
            self._on_complaint(src, msg)
        elif isinstance(msg, ViewChange):
            self._on_viewchange(src, msg)
        elif isinstance(msg, NewView):
            self._on_newview(src, msg)

    def _in_window(self, seq: int) -> bool:
        return self.log.low_water_mark < seq <= self.log.low_water_mark + self.config.window

    def _help_straggler(self, src: int, view: int) -> None:
        if (
            self._last_newview is not None
            and view < self.view
            and src != self.rid
            and (src, view) not in self._helped
        ):
            self._helped.add((src, view))
            self.ctx.send(src, self._last_newview)

    def _on_preprepare(self, src: int, msg: PrePrepare, flood_origin: Optional[int] = None) -> None:
        origin = flood_origin if flood_origin is not None else src
        if msg.view != self.view or self.status != "normal":
            if msg.view < self.view:
                self._help_straggler(src, msg.view)
            return
        if origin != self.primary(msg.view):
            return
        if msg.seq <= self.log.low_water_mark:
            return
        if not self._in_window(msg.seq):
            if msg.seq <= self.log.low_water_mark + 2 * self.config.window:
                self._buffered.append((origin, msg))
            return
        digest = compute_digest(msg.payload)
        entry = self.log.entry(msg.seq)
        if entry.preprepared and entry.view < msg.view and not entry.committed:
            # a proposal left over from a view this replica sat out
            self._pending_votes = max(0, self._pending_votes - 1)
            self._parked.pop(msg.seq, None)
            entry.preprepared = False
            entry.prepared = False
            entry.prepares = {}
            entry.commits = {}
        if entry.committed:
            # a slow proposal can still arrive after state transfer installed
            # this slot from a later view; the committed entry wins
            if entry.digest != digest and self.hooks.on_evidence:
                self.hooks.on_evidence(self.tag, "stale-conflicting-proposal", msg.seq)
            return
        if entry.preprepared:
            if entry.digest != digest and entry.view == msg.view:
                self.evidence.append(
                    f"equivocation {self.tag} view {msg.view} seq {msg.seq}"
                )
                if self.hooks.on_evidence:
                    self.hooks.on_evidence(self.tag, "equivocation", msg.seq)
                self._send_complaint()
            return
        entry.preprepared = True
        entry.digest = digest
        entry.payload = msg.payload
        entry.view = msg.view
        self._pending_votes += 1
        if self.hooks.on_preprepare:
            self.hooks.on_preprepare(self.tag, msg.seq, digest, msg.payload, msg.view, origin)
        self._maybe_vote(msg.seq)
        self._try_prepared(msg.seq)
        self._sync_timer()

    def accept_flooded(self, origin: int, msg: PrePrepare) -> None:
        """Initial message relayed by another replica; the origin is the
        embedded proposer, whose authenticator travels with it."""
        self._on_preprepare(origin, msg, flood_origin=origin)

    def _maybe_vote(self, seq: int) -> None:
        entry = self.log.get(seq)
        if entry is None or not entry.preprepared:
            return
        if seq in self._parked:
            return
        if self.hooks.vote_gate and not self.hooks.vote_gate(self.tag, seq, entry.payload):
            self._parked[seq] = entry.digest
            return
        self.ctx.broadcast(Prepare(self.tag, entry.view, seq, entry.digest))

    def recheck_gates(self) -> None:
        for seq in sorted(self._parked):
            entry = self.log.get(seq)
            if entry is None:
                del self._parked[seq]
                continue
            if self.hooks.vote_gate is None or self.hooks.vote_gate(self.tag, seq, entry.payload):
                del self._parked[seq]
                if self.status == "normal" and entry.view == self.view:
                    self.ctx.broadcast(Prepare(self.tag, entry.view, seq, entry.digest))
                    self._try_prepared(seq)

    def parked_seqs(self) -> list:
        return sorted(self._parked)

    def _on_vote(self, src: int, msg, field: str) -> None:
        if msg.view != self.view or self.status != "normal":
            return
        if msg.seq <= self.log.low_water_mark or not self._in_window(msg.seq):
            return
        entry = self.log.entry(msg.seq)
        getattr(entry, field)[src] = msg.digest
        if field == "prepares":
            self._try_prepared(msg.seq)
        else:
            self._try_committed(msg.seq)

    def _try_prepared(self, seq: int) -> None:
        entry = self.log.get(seq)
        if entry is None or entry.prepared or not entry.preprepared:
            return
        votes = sum(1 for d in entry.prepares.values() if d == entry.digest)
        if votes >= self.config.quorum:
            entry.prepared = True
            if seq not in self._parked:
                self.ctx.broadcast(Commit(self.tag, entry.view, seq, entry.digest))
            self._try_committed(seq)

    def _try_committed(self, seq: int) -> None:
        entry = self.log.get(seq)
        if entry is None or entry.committed or not entry.prepared:
            return
        voters = sorted(src for src, d in entry.commits.items() if d == entry.digest)
        if len(voters) >= self.config.quorum:
            self._commit(seq, entry, ("voters", tuple(voters)))

    def _commit(self, seq: int, entry, cert) -> None:
        entry.committed = True
        entry.commit_cert = cert
        if entry.preprepared:
            self._pending_votes = max(0, self._pending_votes - 1)
        self._parked.pop(seq, None)
        self.consecutive_vcs = 0
        self._timer_stage = 0
        # progress in this view invalidates accumulated complaints about it
        self.complaints.pop(self.view, None)
        if self.hooks.on_commit:
            self.hooks.on_commit(self.tag, seq, entry.digest, entry.payload, entry.view)
        self._advance_cc()
        self._sync_timer()

    # -- checkpointing ---------------------------------------------------------

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
                    self.ctx.broadcast(Checkpoint(self.tag, self.cc, self._chain))

    def _on_checkpoint(self, src: int, msg: Checkpoint) -> None:
        if msg.seq <= self.log.low_water_mark:
            return
        votes = self.checkpoint_votes.setdefault(msg.seq, {})
        votes[src] = msg.digest
        matching = sorted(s for s, d in votes.items() if d == msg.digest)
        if len(matching) >= self.config.quorum:
            if self.cc >= msg.seq:
                local = self._chain_at.get(msg.seq)
                if local is not None and local != msg.digest and self.hooks.on_evidence:
                    self.hooks.on_evidence(self.tag, "checkpoint-divergence", msg.seq)
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
            self._flush_buffered()

    def _flush_buffered(self) -> None:
        pending, self._buffered = self._buffered, []
        for origin, msg in pending:
            self._on_preprepare(origin, msg, flood_origin=origin)

    # -- state transfer ----------------------------------------------------------

    def committed_entry(self, seq: int):
        entry = self.log.get(seq)
        if entry is not None and entry.committed:
            return entry
        return None

    def make_initial(self, seq: int) -> Optional[PrePrepare]:
        """Rebuild the initial dissemination message for relaying."""
        entry = self.log.get(seq)
        if entry is None or not entry.preprepared or entry.payload is None:
            return None
        return PrePrepare(self.tag, entry.view, seq, entry.payload)

    def initial_origin(self, seq: int) -> Optional[int]:
        entry = self.log.get(seq)
        if entry is None:
            return None
        return self.primary(entry.view)

    def install_committed(self, seq: int, digest: bytes, payload, cert) -> bool:
        """Adopt a committed entry fetched from a peer; fires on_commit once."""
        if seq <= self.log.low_water_mark:
            return False
        if cert is None or cert[0] != "voters" or len(set(cert[1])) < self.config.quorum:
            return False
        if payload is not None and compute_digest(payload) != digest:
            return False
        entry = self.log.entry(seq)
        if entry.committed:
            return False
        if entry.preprepared:
            self._pending_votes = max(0, self._pending_votes - 1)
        entry.preprepared = True
        entry.digest = digest
        entry.payload = payload
        entry.prepared = True
        entry.committed = True
        entry.commit_cert = cert
        self._parked.pop(seq, None)
        if self.hooks.on_commit:
            self.hooks.on_commit(self.tag, seq, digest, payload, entry.view)
        self._advance_cc()
        self._sync_timer()
        return True

    # -- progress timers -----------------------------------------------------------

    def set_expectations(self, n: int) -> None:
        self.expectations = n
        self._sync_timer()

    def revive(self) -> None:
        """Re-arm timers after a restart (old handles died with the crash)."""
        self._timer = None
        self._timer_stage = 0
        self._sync_timer()

    def _has_pending(self) -> bool:
        return self._pending_votes > 0 or self.expectations > 0

    def _sync_timer(self) -> None:
        if self.status == "viewchange":
            return
        if self._has_pending() and self._timer is None:
            scale = 2 ** min(self.consecutive_vcs, 6)
            self._timer = self.ctx.set_timer(
                self.timing.progress * scale, ("prog", self.tag)
            )
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
            self._rebroadcast_votes()
            self._sync_timer()
        else:
            self._send_complaint()
            self._sync_timer()

    def _rebroadcast_votes(self) -> None:
        for seq in sorted(self.log.entries):
            entry = self.log.entries[seq]
            if entry.preprepared and not entry.committed:
                if self.is_primary and entry.payload is not None:
                    self.ctx.broadcast(PrePrepare(self.tag, entry.view, seq, entry.payload))
                if seq in self._parked:
                    continue
                self.ctx.broadcast(Prepare(self.tag, entry.view, seq, entry.digest))
                if entry.prepared:
                    self.ctx.broadcast(Commit(self.tag, entry.view, seq, entry.digest))

    # -- view change ------------------------------------------------------------------

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
            if src != self.rid and self.rid not in per_view:
                self._send_complaint(target)
            self._enter_viewchange(target)

    def _enter_viewchange(self, target: int) -> None:
        if target <= self.view or (self.status == "viewchange" and target <= self.vc_target):
            return
        self.status = "viewchange"
        self.vc_target = target
        if self._timer is not None:
            self.ctx.cancel_timer(self._timer)
            self._timer = None
        prepared = tuple(
            (
                seq,
                e.view,
                e.digest,
                e.payload,
                tuple(sorted(s for s, d in e.prepares.items() if d == e.digest)),
            )
            for seq, e in sorted(self.log.entries.items())
            if e.prepared and seq > self.log.low_water_mark
        )
        stable = self.log.stable_checkpoint or (-1, None, ())
        vc = ViewChange(self.tag, target, stable[0], stable[1], stable[2], prepared)
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

    def _on_viewchange(self, src: int, msg: ViewChange) -> None:
        if msg.target <= self.view or msg.target in self._installed_targets:
            return
        self.vc_msgs.setdefault(msg.target, {})[src] = msg
        # join: evidence from f+1 replicas that a higher view is needed
        joiners = set()
        best = msg.target
        for target, msgs in self.vc_msgs.items():
            if target > self.view:
                joiners.update(msgs)
                best = max(best, target)
        if (
            self.status == "normal"
            and len(joiners) >= self.config.complaint_threshold
        ):
            self._enter_viewchange(best)
        self._try_new_view(msg.target)

    def _try_new_view(self, target: int) -> None:
        if target <= self.view or target in self._installed_targets:
            return
        if self.primary(target) != self.rid:
            return
        vcs = self.vc_msgs.get(target, {})
        if len(vcs) < self.config.vc_quorum:
            return
        chosen = dict(sorted(vcs.items())[: self.config.vc_quorum])
        stable_seq, _sd, _sv, reproposals, resume = build_new_view(self.tag, target, chosen)
        if self.hooks.extra_fill:
            extra = [s for s in self.hooks.extra_fill(self.tag) if s > stable_seq]
            if extra:
                hi = max(extra)
                if hi >= resume:
                    have = dict(reproposals)
                    reproposals = tuple(
                        (seq, have.get(seq, NOOP))
                        for seq in range(stable_seq + 1, hi + 1)
                    )
                    resume = hi + 1
        nv = NewView(
            self.tag,
            target,
            tuple(sorted(chosen.items())),
            reproposals,
            resume,
        )
        self._installed_targets.add(target)
        self.ctx.broadcast(nv)

    def _on_newview(self, src: int, msg: NewView) -> None:
        if msg.target <= self.view:
            return
        if src != self.primary(msg.target):
            return
        vcs = dict(msg.view_changes)
        if len(vcs) < self.config.vc_quorum:
            return
        if any(vc.target != msg.target for vc in vcs.values()):
            return
        stable_seq, sd, sv, reproposals, resume = build_new_view(self.tag, msg.target, vcs)
        base = dict(reproposals)
        offered = dict(msg.reproposals)
        if any(seq not in offered for seq in base):
            return
        for seq, payload in msg.reproposals:
            if seq not in base:
                if not isinstance(payload, type(NOOP)):
                    return
            elif compute_digest(base[seq]) != compute_digest(payload):
                return
        if msg.resume_seq < resume:
            return
        # install
        self.view = msg.target
        self.status = "normal"
        self.vc_target = msg.target
        self._timer_stage = 0
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
        for seq, payload in msg.reproposals:
            entry = self.log.get(seq)
            if entry is not None and entry.committed:
                if entry.digest != compute_digest(payload) and self.hooks.on_evidence:
                    # committed via a later-view certificate; keep it
                    self.hooks.on_evidence(self.tag, "stale-newview-reproposal", seq)
                continue
            if entry is not None:
                if entry.preprepared and not entry.committed:
                    self._pending_votes = max(0, self._pending_votes - 1)
                self._parked.pop(seq, None)
                entry.preprepared = False
                entry.prepared = False
                entry.prepares = {}
                entry.commits = {}
            self._on_preprepare(src, PrePrepare(self.tag, msg.target, seq, payload))
        self._pending_votes = sum(
            1 for e in self.log.entries.values() if e.preprepared and not e.committed
        )
        self._last_newview = msg
        if self.hooks.on_newview:
            self.hooks.on_newview(self.tag, self.view, msg.resume_seq)
        self._sync_timer()

    # -- timer dispatch -----------------------------------------------------------

    def on_timer(self, tag_kind: str) -> None:
        if tag_kind == "prog":
            self.on_progress_timeout()
        elif tag_kind == "vc":
            self.on_vc_timeout()
