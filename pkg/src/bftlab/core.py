"""Shared domain vocabulary for the consensus laboratory.

Identities, views, the two sequence-number spaces, command batches,
digests, quorum arithmetic and the per-instance log used by every
protocol engine live here.

Canonical serialization (byte-exact, used for digests and replayable
traces):

* integers are unsigned 64-bit big-endian (``u64``),
* byte strings are length-prefixed with an unsigned 32-bit big-endian
  length (``bstr``),
* a command batch is ``0x01 | u64 client_id | u64 timestamp |
  u32 op_count | ops`` where each put operation is
  ``bstr key | bstr value``,
* a no-op batch is the single byte ``0x00``,
* an order reference (the O-instance payload) is
  ``0x02 | u64 owner | u64 dseq``,
* a client assignment is ``0x03 | u64 client_id | u64 coordinator``.

Digests are SHA-256 over the canonical bytes (32 bytes).
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Union

# Identities and sequence numbers. ReplicaId orders replicas totally and is
# stable across views; DSeq/OSeq are two distinct spaces (a DSeq is always
# qualified by its owning replica). All spaces start at 0.
ReplicaId = int
ViewNumber = int
DSeq = int
OSeq = int

Digest = bytes

DIGEST_LEN = 32


class FaultModel(Enum):
    BFT = "bft"
    HYBRID = "hybrid"


class ConfigError(ValueError):
    """Raised when a SystemConfig violates its invariants."""


@dataclass(frozen=True)
class SystemConfig:
    """Deployment-wide parameters shared by every replica.

    ``flood_subset`` controls rebroadcast of initial dissemination
    messages: ``None`` disables flooding, ``0`` floods to all replicas,
    ``k > 0`` floods to a random subset of k replicas.
    """

    n_replicas: int
    max_faults: int
    fault_model: FaultModel
    batch_size: int = 200
    payload_bytes: int = 512
    checkpoint_interval: int = 64
    window: int = 256
    flood_subset: Optional[int] = None
    probation_base: int = 64

    def __post_init__(self) -> None:
        n, f = self.n_replicas, self.max_faults
        if f < 0 or n < 1:
            raise ConfigError(f"bad sizes n={n} f={f}")
        if self.fault_model is FaultModel.BFT and n < 3 * f + 1:
            raise ConfigError(f"BFT requires n >= 3f+1, got n={n} f={f}")
        if self.fault_model is FaultModel.HYBRID and n < 2 * f + 1:
            raise ConfigError(f"hybrid requires n >= 2f+1, got n={n} f={f}")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.checkpoint_interval < 1:
            raise ConfigError("checkpoint_interval must be >= 1")
        if self.window < 1:
            raise ConfigError("window must be >= 1")

    @property
    def quorum(self) -> int:
        return quorum_size(self)

    @property
    def vc_quorum(self) -> int:
        """View changes installed from this many ViewChange messages."""
        if self.fault_model is FaultModel.BFT:
            return 2 * self.max_faults + 1
        return self.max_faults + 1

    @property
    def complaint_threshold(self) -> int:
        """Complaints from f+1 distinct replicas prove a faulty leader."""
        return self.max_faults + 1


def quorum_size(config: SystemConfig, phase: str = "prepare") -> int:
    """Votes needed to pass an agreement phase: 2f+1 (BFT) or f+1 (hybrid)."""
    if phase not in ("prepare", "commit"):
        raise ValueError(f"unknown phase {phase!r}")
    if config.fault_model is FaultModel.BFT:
        return 2 * config.max_faults + 1
    return config.max_faults + 1


def expected_primary(view: ViewNumber, config: SystemConfig) -> ReplicaId:
    """Round-robin rotation: the primary of view v is replica v mod N."""
    return view % config.n_replicas


def instance_coordinator(owner: ReplicaId, view: ViewNumber, config: SystemConfig) -> ReplicaId:
    """Coordinator of a dissemination instance: the owner in view 0,
    rotating from the owner as views advance (owner again every N views)."""
    return (owner + view) % config.n_replicas


# --- payloads -------------------------------------------------------------

KvOp = tuple  # (key: bytes, value: bytes) put operation


@dataclass(frozen=True)
class CommandBatch:
    """One client's unit of work: up to batch_size put operations under a
    client-monotonic timestamp."""

    client_id: int
    timestamp: int
    operations: tuple = ()

    def to_bytes(self) -> bytes:
        parts = [b"\x01", struct.pack(">QQI", self.client_id, self.timestamp, len(self.operations))]
        for key, value in self.operations:
            parts.append(struct.pack(">I", len(key)))
            parts.append(key)
            parts.append(struct.pack(">I", len(value)))
            parts.append(value)
        return b"".join(parts)

    @property
    def payload_size(self) -> int:
        return sum(len(k) + len(v) + 8 for k, v in self.operations) + 21


@dataclass(frozen=True)
class NoOp:
    """Marker batch that advances the execution cursor without touching
    application state."""

    def to_bytes(self) -> bytes:
        return b"\x00"

    @property
    def payload_size(self) -> int:
        return 1


@dataclass(frozen=True)
class OrderRef:
    """O-instance payload: a constant-size reference to (owner, dseq)."""

    owner: ReplicaId
    dseq: DSeq

    def to_bytes(self) -> bytes:
        return b"\x02" + struct.pack(">QQ", self.owner, self.dseq)

    @property
    def payload_size(self) -> int:
        return 17


@dataclass(frozen=True)
class AssignRef:
    """O-instance payload binding a client to its coordinator."""

    client_id: int
    coordinator: ReplicaId

    def to_bytes(self) -> bytes:
        return b"\x03" + struct.pack(">QQ", self.client_id, self.coordinator)

    @property
    def payload_size(self) -> int:
        return 17


Payload = Union[CommandBatch, NoOp, OrderRef, AssignRef]

NOOP = NoOp()


def compute_digest(payload: Payload) -> Digest:
    """Deterministic 32-byte digest of a payload's canonical bytes."""
    return hashlib.sha256(payload.to_bytes()).digest()


NOOP_DIGEST = compute_digest(NOOP)


# --- per-instance log -----------------------------------------------------


@dataclass
class LogEntry:
    """State of one sequence number inside a consensus instance."""

    digest: Optional[Digest] = None
    payload: Optional[Payload] = None
    view: ViewNumber = 0
    preprepared: bool = False
    prepares: dict = field(default_factory=dict)   # voter -> digest
    commits: dict = field(default_factory=dict)    # voter -> digest
    prepared: bool = False
    committed: bool = False
    commit_cert: Optional[object] = None           # quorum certificate
    prepare_share: Optional[object] = None         # proposer attestation, hybrid engines
    executed: bool = False


class InstanceLog:
    """Single-writer log of one consensus instance.

    Committed entries are never overwritten within a view; entries below
    the low-water mark are garbage collected only once a stable
    checkpoint proof exists.
    """

    def __init__(self) -> None:
        self.entries: dict[int, LogEntry] = {}
        self.low_water_mark: int = -1
        self.stable_checkpoint: Optional[tuple] = None  # (seq, digest, voters)

    def entry(self, seq: int) -> LogEntry:
        e = self.entries.get(seq)
        if e is None:
            e = LogEntry()
            self.entries[seq] = e
        return e

    def get(self, seq: int) -> Optional[LogEntry]:
        return self.entries.get(seq)

    def collect_garbage(self, stable_seq: int, proof: tuple) -> None:
        """Drop entries below stable_seq; requires a checkpoint proof.

        The stable entry itself is kept as the anchor for state
        transfer until the next checkpoint supersedes it."""
        if proof is None:
            raise ValueError("garbage collection requires a stable checkpoint proof")
        self.stable_checkpoint = proof
        self.low_water_mark = stable_seq
        for seq in [s for s in self.entries if s < stable_seq]:
            del self.entries[seq]
