"""Pieces shared by the two agreement engines.

Both engines are event-driven state machines driven entirely through
``handle()`` and timer callbacks; they emit messages through the node
context and report commits through hook callbacks, so they can run
standalone or stacked by the composition layer.

Fault escalation is staged: a progress timeout first retransmits the
replica's own votes, a second timeout broadcasts a Complaint, and only
f+1 distinct complaints push replicas into the view change proper.
This keeps one stalled replica from deserting a healthy view while
still guaranteeing a view change whenever enough correct replicas see
no progress.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

from .msgs import Message


class NotPrimary(Exception):
    pass


class WindowFull(Exception):
    """Backpressure: the in-flight window has no free sequence number."""


@dataclass(frozen=True)
class Complaint(Message):
    """Signed statement that the leader of `view` makes no progress; the
    sender keeps participating until f+1 complaints accumulate."""

    tag: str
    view: int
    target: int

    @property
    def kind(self) -> str:
        return f"{self.tag[0]}-Complaint"


@dataclass
class Timing:
    """Timeout plan, derived from the link model's mean one-way delay."""

    mean_delay: float = 10.0

    @property
    def progress(self) -> float:
        return 8.0 * self.mean_delay

    @property
    def viewchange(self) -> float:
        return 16.0 * self.mean_delay

    @property
    def gap_request(self) -> float:
        return 2.0 * self.mean_delay

    @property
    def collector_retry(self) -> float:
        return 6.0 * self.mean_delay

    @property
    def order_grace(self) -> float:
        return 8.0 * self.mean_delay

    @property
    def stall_transfer(self) -> float:
        return 8.0 * self.mean_delay

    @property
    def probation_grace(self) -> float:
        return 8.0 * self.mean_delay

    @property
    def client_timeout(self) -> float:
        return 40.0 * self.mean_delay

    @property
    def flush(self) -> float:
        return 2.0 * self.mean_delay

    @property
    def resend_initial(self) -> float:
        return 8.0 * self.mean_delay


@dataclass
class EngineHooks:
    """Composition callbacks; every hook is optional.

    on_commit(tag, seq, digest, payload, view)
    on_preprepare(tag, seq, digest, payload, view, src) - valid initial
        message accepted (drives flooding and optimistic ordering)
    on_newview(tag, view, resume_seq) - new view installed locally
    vote_gate(tag, seq, payload) -> bool - False parks the replica's own
        vote until released (execution-readiness / probation rules)
    extra_fill(tag) -> iterable[int] - extra sequence numbers the new
        primary must fill when building a new view
    on_evidence(tag, description) - misbehavior observed
    """

    on_commit: Optional[Callable] = None
    on_preprepare: Optional[Callable] = None
    on_newview: Optional[Callable] = None
    vote_gate: Optional[Callable] = None
    extra_fill: Optional[Callable] = None
    on_evidence: Optional[Callable] = None
