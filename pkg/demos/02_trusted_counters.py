"""The trusted counter subsystem, show-and-tell.

A share binds a message digest to a strictly increasing counter value,
so one slot can never carry two different payloads.  Aggregation of
f+1 shares produces a constant-size proof anyone can verify; flipping
a single bit anywhere in it breaks verification.  The one attack the
model assumes away - physically rolling the counter back - is also
demonstrated: nothing detects it, which is why counter state must
survive restarts.

Run:  python demos/02_trusted_counters.py
"""

from bftlab import CommandBatch, TrustedDeployment, compute_digest
from bftlab.threshsign import NonMonotonicCounter, demo_rollback_attack

deployment = TrustedDeployment(seed=2024, threshold=2)
verifier = deployment.verifier()
counter = ("sigma:0", ("prep", 0))

alpha = compute_digest(CommandBatch(1, 0, ((b"transfer", b"100"),)))
beta = compute_digest(CommandBatch(1, 0, ((b"transfer", b"999"),)))

print("== monotonic counters forbid equivocation ==")
signer0 = deployment.subsystem(0)
share = signer0.create_independent_share(alpha, counter, 1)
print(f"slot 1 bound to alpha: share of {len(share.share_bytes)} bytes")
try:
    signer0.create_independent_share(beta, counter, 1)
except NonMonotonicCounter as exc:
    print(f"binding beta to the same slot: REFUSED ({exc})")

print("\n== f+1 shares aggregate into one constant-size proof ==")
shares = [share, deployment.subsystem(1).create_independent_share(alpha, counter, 1)]
aggregate = verifier.aggregate_shares(shares)
print(f"aggregate from {aggregate.contributor_count} signers "
      f"verifies: {verifier.verify_signature(alpha, aggregate, counter, 1)}")
print(f"same proof against value 2:  {verifier.verify_signature(alpha, aggregate, counter, 2)}")

mutated = bytearray(aggregate.combined_bytes)
mutated[37] ^= 0x01
forged = type(aggregate)(alpha, counter, 1, bytes(mutated), 2)
print(f"after flipping one bit:      {verifier.verify_signature(alpha, forged, counter, 1)}")

print("\n== the assumed-away attack: physical counter rollback ==")
demo_rollback_attack(signer0, counter, 0)
reused = signer0.create_independent_share(beta, counter, 1)
print(f"after rollback, slot 1 re-signed for beta and the share still "
      f"verifies: {verifier.verify_share(reused)}")
print("nothing in the protocol can notice this, so the simulator never")
print("resets counter state when a replica restarts")
