"""Emulated trusted subsystem: monotonic counters bound to threshold
signature shares.

Every replica hosts one :class:`TrustedSubsystem` holding its share keys
and counter state for any number of named signing groups (one group per
dissemination instance, one for the ordering instance, one untrusted
group for execution proofs).  The subsystem is the trusted boundary: the
only mutations it allows are the two certified-message operations, and
the secrets are private attributes never exposed by the public surface.

The default scheme is deterministic and runs without pairing crypto:

* a share is 192 bytes of keyed MACs over
  ``(instance, counter, new_value, prev_value, digest, signer)``,
* an aggregate is the canonical concatenation of at least ``t`` share
  bodies from distinct signers,
* verification recomputes every byte.

All key material derives from ``(deployment seed, replica index)``, so
two deployments with different seeds cannot validate each other's
output.  A pairing-based backend can replace :class:`ThresholdVerifier`
and the share constructors behind the same interface; the protocol
claims exercised here do not depend on which backend is active.
"""

from __future__ import annotations

import hashlib
import hmac
import struct
from dataclasses import dataclass
from typing import Iterable, Optional

from .core import Digest, ReplicaId

SHARE_LEN = 192
_BLOCKS = SHARE_LEN // 32


class ThreshSignError(Exception):
    pass


class NonMonotonicCounter(ThreshSignError):
    """Counter value would not advance: an equivocation or replay attempt."""


class StaleFromValue(ThreshSignError):
    """Continuing certificate requested from a value that is not current."""


class UnknownCounter(ThreshSignError):
    """Counter does not belong to this instance."""


class InsufficientShares(ThreshSignError):
    pass


class MismatchedTuple(ThreshSignError):
    """Shares disagree on (digest, counter, value)."""


class InvalidShare(ThreshSignError):
    pass


CounterId = tuple  # (instance_id: str, counter_key: tuple)


def _canon_counter(tc: CounterId) -> bytes:
    instance_id, key = tc
    parts = [instance_id.encode()]
    for item in key:
        parts.append(str(item).encode())
    return b"|".join(parts)


def _share_body(key: bytes, message: bytes) -> bytes:
    return b"".join(
        hmac.new(key, message + bytes([i]), hashlib.sha256).digest() for i in range(_BLOCKS)
    )


def _share_message(m: Digest, tc: CounterId, tv_new: int, tv_prev: int, signer: ReplicaId) -> bytes:
    return b"S" + _canon_counter(tc) + struct.pack(">QQQ", tv_new, tv_prev, signer) + m


@dataclass(frozen=True)
class SignatureShare:
    """One signer's counter-bound share over a message digest."""

    message_digest: Digest
    counter: CounterId
    new_value: int
    prev_value: int
    signer: ReplicaId
    share_bytes: bytes


@dataclass(frozen=True)
class AggregateSignature:
    message_digest: Digest
    counter: CounterId
    value: int
    combined_bytes: bytes
    contributor_count: int


@dataclass(frozen=True)
class ContinuingCertificate:
    """Attestation that a counter moved from ``from_value`` to
    ``to_value`` (``to_value >= from_value``) while bound to a message."""

    message_digest: Digest
    counter: CounterId
    from_value: int
    to_value: int
    mac_bytes: bytes


def _derive(secret: bytes, *labels) -> bytes:
    h = hashlib.sha256(secret)
    for label in labels:
        h.update(b"/")
        h.update(str(label).encode())
    return h.digest()


class TrustedSubsystem:
    """Per-replica trusted boundary.

    Public surface is exactly: :meth:`create_independent_share`,
    :meth:`create_continuing_certificate`, :meth:`counter_value`, plus
    the read-only identifiers ``replica`` and ``deployment_id``.  Counter
    state only moves through the two create operations, and only
    forward.
    """

    def __init__(self, deployment_secret: bytes, replica: ReplicaId) -> None:
        self.replica = replica
        self.deployment_id = _derive(deployment_secret, "id")[:8].hex()
        self.__secret = deployment_secret
        self.__counters: dict[CounterId, int] = {}

    def counter_value(self, tc: CounterId) -> int:
        """Current value of a counter (0 until first used)."""
        return self.__counters.get(tc, 0)

    def create_independent_share(self, m: Digest, tc: CounterId, tv_new: int) -> SignatureShare:
        """Advance counter tc to tv_new (strictly greater) and bind m to
        the transition with this replica's share."""
        self._check_counter(tc)
        current = self.__counters.get(tc, 0)
        if tv_new <= current:
            raise NonMonotonicCounter(
                f"counter {tc} at {current}, refused independent share for {tv_new}"
            )
        self.__counters[tc] = tv_new
        key = _derive(self.__secret, "share", tc[0], self.replica)
        body = _share_body(key, _share_message(m, tc, tv_new, current, self.replica))
        return SignatureShare(m, tc, tv_new, current, self.replica, body)

    def create_continuing_certificate(
        self, m: Digest, tc: CounterId, tv: int, tv_new: int
    ) -> ContinuingCertificate:
        """Certify the transition tv -> tv_new (tv must be current,
        tv_new >= tv; equality allowed) bound to m."""
        self._check_counter(tc)
        current = self.__counters.get(tc, 0)
        if tv_new < current:
            raise NonMonotonicCounter(
                f"counter {tc} at {current}, refused continuing certificate to {tv_new}"
            )
        if tv != current:
            raise StaleFromValue(f"counter {tc} at {current}, caller claimed {tv}")
        self.__counters[tc] = tv_new
        key = _derive(self.__secret, "cert", tc[0])
        mac = hmac.new(
            key,
            b"C" + _canon_counter(tc) + struct.pack(">QQ", tv, tv_new) + m,
            hashlib.sha256,
        ).digest()
        return ContinuingCertificate(m, tc, tv, tv_new, mac)

    def _check_counter(self, tc: CounterId) -> None:
        if not (isinstance(tc, tuple) and len(tc) == 2 and isinstance(tc[0], str)):
            raise UnknownCounter(f"malformed counter id {tc!r}")


class ExecSigner:
    """Untrusted share creator for execution proofs.

    Lives outside the trusted boundary: no counter is maintained and no
    monotonicity is enforced.  Restricted to instance ids with the
    ``pi`` prefix so it cannot mint agreement-phase shares.
    """

    def __init__(self, deployment_secret: bytes, replica: ReplicaId) -> None:
        self.replica = replica
        self.__secret = deployment_secret

    def create_share(self, m: Digest, tc: CounterId, tv: int) -> SignatureShare:
        if not tc[0].startswith("pi"):
            raise UnknownCounter(f"untrusted signer cannot sign instance {tc[0]!r}")
        key = _derive(self.__secret, "share", tc[0], self.replica)
        body = _share_body(key, _share_message(m, tc, tv, 0, self.replica))
        return SignatureShare(m, tc, tv, 0, self.replica, body)


class ThresholdVerifier:
    """Public-side operations: aggregation and verification.

    Holds the derived verification material (the emulated public key)
    and the threshold ``t``; never mutates counters.
    """

    def __init__(self, deployment_secret: bytes, threshold: int) -> None:
        self.threshold = threshold
        self.__secret = deployment_secret

    # -- shares -------------------------------------------------------

    def verify_share(self, share: SignatureShare) -> bool:
        try:
            key = _derive(self.__secret, "share", share.counter[0], share.signer)
            expected = _share_body(
                key,
                _share_message(
                    share.message_digest,
                    share.counter,
                    share.new_value,
                    share.prev_value,
                    share.signer,
                ),
            )
        except Exception:
            return False
        return hmac.compare_digest(expected, share.share_bytes)

    def aggregate_shares(self, shares: Iterable[SignatureShare]) -> AggregateSignature:
        """Combine valid shares over one (digest, counter, value) tuple.

        Invalid shares are rejected; duplicates from one signer count
        once.  Raises if fewer than t valid shares remain or the shares
        disagree on the tuple."""
        valid: dict[ReplicaId, SignatureShare] = {}
        tup = None
        for share in shares:
            if not self.verify_share(share):
                raise InvalidShare(f"share from {share.signer} fails verification")
            key = (share.message_digest, share.counter, share.new_value)
            if tup is None:
                tup = key
            elif key != tup:
                raise MismatchedTuple(f"share from {share.signer} disagrees on tuple")
            valid[share.signer] = share
        if tup is None or len(valid) < self.threshold:
            raise InsufficientShares(f"{len(valid)} valid shares, need {self.threshold}")
        parts = [struct.pack(">H", len(valid))]
        for signer in sorted(valid):
            s = valid[signer]
            parts.append(struct.pack(">HQ", signer, s.prev_value))
            parts.append(s.share_bytes)
        digest, counter, value = tup
        return AggregateSignature(digest, counter, value, b"".join(parts), len(valid))

    def verify_signature(self, m: Digest, sig: AggregateSignature, tc: CounterId, tv: int) -> bool:
        """True iff sig combines >= t valid shares for exactly (m, tc, tv)."""
        try:
            blob = sig.combined_bytes
            (count,) = struct.unpack_from(">H", blob, 0)
            if count < self.threshold:
                return False
            offset = 2
            seen: set[ReplicaId] = set()
            for _ in range(count):
                signer, prev = struct.unpack_from(">HQ", blob, offset)
                offset += 10
                body = blob[offset : offset + SHARE_LEN]
                offset += SHARE_LEN
                if len(body) != SHARE_LEN or signer in seen:
                    return False
                seen.add(signer)
                key = _derive(self.__secret, "share", tc[0], signer)
                expected = _share_body(key, _share_message(m, tc, tv, prev, signer))
                if not hmac.compare_digest(expected, body):
                    return False
            return offset == len(blob)
        except Exception:
            return False

    # -- continuing certificates ---------------------------------------

    def verify_certificate(
        self, m: Digest, cert: ContinuingCertificate, tc: CounterId, tv: int, tv_new: int
    ) -> bool:
        """True iff cert certifies exactly the transition tv -> tv_new
        for m under this deployment's shared secret."""
        try:
            key = _derive(self.__secret, "cert", tc[0])
            expected = hmac.new(
                key,
                b"C" + _canon_counter(tc) + struct.pack(">QQ", tv, tv_new) + m,
                hashlib.sha256,
            ).digest()
        except Exception:
            return False
        return hmac.compare_digest(expected, cert.mac_bytes)


class TrustedDeployment:
    """Factory wiring one seed to every replica's subsystem plus the
    shared public-side verifier."""

    def __init__(self, seed: int, threshold: int) -> None:
        self.seed = seed
        self.threshold = threshold
        self._secret = _derive(struct.pack(">Q", seed & (2**64 - 1)), "deployment")

    def subsystem(self, replica: ReplicaId) -> TrustedSubsystem:
        return TrustedSubsystem(self._secret, replica)

    def exec_signer(self, replica: ReplicaId) -> ExecSigner:
        return ExecSigner(self._secret, replica)

    def verifier(self) -> ThresholdVerifier:
        return ThresholdVerifier(self._secret, self.threshold)


def demo_rollback_attack(subsystem: TrustedSubsystem, tc: CounterId, value: int) -> None:
    """Reset a counter below its current value, bypassing the API seam.

    This models the physical rollback attack the fault model assumes
    away: nothing in the protocol can detect it, which is why counter
    state must survive replica restarts.  Only demonstration code calls
    this; the scripted adversary has no such action.
    """
    counters = getattr(subsystem, "_TrustedSubsystem__counters")
    counters[tc] = value
