"""Message envelopes shared across protocol engines.

Every message knows its ``kind`` (used for per-kind traffic statistics)
and its ``wire_size`` in bytes (used by the bandwidth model and the
load-balance metrics).  Sizes follow a fixed model: a 48-byte header
plus the payload or authenticator bytes the message carries; digests
count 32 bytes, signature shares 192.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from .core import Payload

HEADER_BYTES = 48
DIGEST_BYTES = 32


class Message:
    KIND = "?"

    @property
    def kind(self) -> str:
        return self.KIND

    def wire_size(self) -> int:
        return HEADER_BYTES


@dataclass(frozen=True)
class Flood(Message):
    """Rebroadcast wrapper around another replica's initial
    dissemination message; the inner message keeps its original sender."""

    KIND = "Flood"
    inner: Message
    origin: int

    def wire_size(self) -> int:
        return HEADER_BYTES + self.inner.wire_size()


@dataclass(frozen=True)
class StateXferReq(Message):
    KIND = "XferReq"
    tag: str
    seq: int


@dataclass(frozen=True)
class StateXferResp(Message):
    """Committed entry handed to a lagging replica: payload plus the
    commit certificate (voter set, or a threshold aggregate)."""

    KIND = "XferResp"
    tag: str
    seq: int
    digest: bytes
    payload: Optional[Payload]
    cert: object

    def wire_size(self) -> int:
        size = HEADER_BYTES + DIGEST_BYTES + 256
        if self.payload is not None:
            size += self.payload.payload_size
        return size


@dataclass(frozen=True)
class Status(Message):
    """Progress summary exchanged when a link comes back: lets a replica
    that sat out a partition discover how far the order moved."""

    KIND = "Status"
    highs: tuple  # ((tag, highest committed seq), ...)


@dataclass(frozen=True)
class InitialReq(Message):
    """Ask peers to relay a dissemination instance's initial message."""

    KIND = "InitialReq"
    owner: int
    dseq: int


@dataclass(frozen=True)
class Rejoin(Message):
    """Broadcast by a restarted replica; receipt is the health evidence
    that lets correct replicas agree to a reinstating view skip."""

    KIND = "Rejoin"
    owner: int


@dataclass(frozen=True)
class ClientRequest(Message):
    KIND = "ClientRequest"
    batch: object  # CommandBatch

    def wire_size(self) -> int:
        return HEADER_BYTES + self.batch.payload_size


@dataclass(frozen=True)
class Reply(Message):
    KIND = "Reply"
    client_id: int
    timestamp: int
    result_digest: bytes

    def wire_size(self) -> int:
        return HEADER_BYTES + DIGEST_BYTES


@dataclass(frozen=True)
class AssignRequest(Message):
    KIND = "AssignRequest"
    client_id: int


@dataclass(frozen=True)
class AssignAck(Message):
    KIND = "AssignAck"
    client_id: int
    coordinator: int
