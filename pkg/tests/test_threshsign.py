import pytest
from hypothesis import given, settings, strategies as st

from bftlab.core import compute_digest, CommandBatch
from bftlab.threshsign import (
    SHARE_LEN,
    InsufficientShares,
    InvalidShare,
    MismatchedTuple,
    NonMonotonicCounter,
    StaleFromValue,
    TrustedDeployment,
    UnknownCounter,
    demo_rollback_attack,
)

D1 = compute_digest(CommandBatch(1, 1, ((b"a", b"x"),)))
D2 = compute_digest(CommandBatch(2, 1, ((b"b", b"y"),)))
CTR = ("sigma:0", ("prep", 0))


@pytest.fixture
def dep():
    return TrustedDeployment(seed=42, threshold=2)


def make_shares(dep, digest, value, signers=(0, 1, 2)):
    return [dep.subsystem(i).create_independent_share(digest, CTR, value) for i in signers]


class TestIndependentShares:
    def test_strictly_greater_advances_counter(self, dep):
        ts = dep.subsystem(0)
        ts.create_independent_share(D1, CTR, 3)
        share = ts.create_independent_share(D2, CTR, 5)
        assert ts.counter_value(CTR) == 5
        assert share.prev_value == 3
        assert len(share.share_bytes) == SHARE_LEN

    def test_equal_value_rejected(self, dep):
        ts = dep.subsystem(0)
        ts.create_independent_share(D1, CTR, 3)
        with pytest.raises(NonMonotonicCounter):
            ts.create_independent_share(D1, CTR, 3)
        assert ts.counter_value(CTR) == 3

    def test_same_value_two_digests_second_rejected(self, dep):
        ts = dep.subsystem(0)
        ts.create_independent_share(D1, CTR, 7)
        with pytest.raises(NonMonotonicCounter):
            ts.create_independent_share(D2, CTR, 7)

    def test_malformed_counter_rejected(self, dep):
        with pytest.raises(UnknownCounter):
            dep.subsystem(0).create_independent_share(D1, "nope", 1)

    @given(st.lists(st.integers(min_value=1, max_value=40), min_size=1, max_size=25))
    @settings(max_examples=60, deadline=None)
    def test_counter_values_strictly_increase(self, requests):
        ts = TrustedDeployment(seed=7, threshold=2).subsystem(0)
        issued = []
        for tv in requests:
            try:
                share = ts.create_independent_share(D1, CTR, tv)
            except NonMonotonicCounter:
                assert tv <= ts.counter_value(CTR)
            else:
                issued.append(share.new_value)
        assert issued == sorted(set(issued))
        # uniqueness: a counter value is bound to at most one share
        assert len(issued) == len(set(issued))


class TestAggregation:
    def test_threshold_of_matching_shares_verifies(self, dep):
        shares = make_shares(dep, D1, 1, signers=(0, 1))
        agg = dep.verifier().aggregate_shares(shares)
        assert agg.contributor_count == 2
        assert dep.verifier().verify_signature(D1, agg, CTR, 1)

    def test_insufficient_shares(self, dep):
        shares = make_shares(dep, D1, 1, signers=(0,))
        with pytest.raises(InsufficientShares):
            dep.verifier().aggregate_shares(shares)

    def test_duplicate_signers_do_not_reach_threshold(self, dep):
        share = dep.subsystem(0).create_independent_share(D1, CTR, 1)
        with pytest.raises(InsufficientShares):
            dep.verifier().aggregate_shares([share, share])

    def test_mismatched_digests(self, dep):
        s1 = dep.subsystem(0).create_independent_share(D1, CTR, 1)
        s2 = dep.subsystem(1).create_independent_share(D2, CTR, 1)
        with pytest.raises(MismatchedTuple):
            dep.verifier().aggregate_shares([s1, s2])

    def test_invalid_share_detected(self, dep):
        s1 = dep.subsystem(0).create_independent_share(D1, CTR, 1)
        forged = type(s1)(D1, CTR, 1, 0, 1, b"\x00" * SHARE_LEN)
        with pytest.raises(InvalidShare):
            dep.verifier().aggregate_shares([s1, forged])

    @pytest.mark.parametrize("t", [1, 2, 3])
    def test_threshold_exactness(self, t):
        dep = TrustedDeployment(seed=5, threshold=t)
        shares = make_shares(dep, D1, 1, signers=tuple(range(3)))
        if t > 1:
            with pytest.raises(InsufficientShares):
                dep.verifier().aggregate_shares(shares[: t - 1])
        agg = dep.verifier().aggregate_shares(shares[:t])
        assert dep.verifier().verify_signature(D1, agg, CTR, 1)


class TestVerifySignature:
    def test_binding_to_counter_value(self, dep):
        agg = dep.verifier().aggregate_shares(make_shares(dep, D1, 4, signers=(0, 1)))
        v = dep.verifier()
        assert v.verify_signature(D1, agg, CTR, 4)
        assert not v.verify_signature(D1, agg, CTR, 3)
        assert not v.verify_signature(D1, agg, CTR, 5)
        assert not v.verify_signature(D2, agg, CTR, 4)
        assert not v.verify_signature(D1, agg, ("sigma:1", CTR[1]), 4)

    def test_every_bit_flip_fails_verification(self, dep):
        # exhaustive mutation oracle over the whole aggregate body
        agg = dep.verifier().aggregate_shares(make_shares(dep, D1, 1, signers=(0, 1)))
        v = dep.verifier()
        blob = bytearray(agg.combined_bytes)
        for i in range(len(blob)):
            for bit in range(8):
                blob[i] ^= 1 << bit
                mutated = type(agg)(D1, CTR, 1, bytes(blob), agg.contributor_count)
                assert not v.verify_signature(D1, mutated, CTR, 1), f"byte {i} bit {bit}"
                blob[i] ^= 1 << bit

    def test_cross_deployment_rejected(self, dep):
        other = TrustedDeployment(seed=43, threshold=2)
        agg = dep.verifier().aggregate_shares(make_shares(dep, D1, 1, signers=(0, 1)))
        assert not other.verifier().verify_signature(D1, agg, CTR, 1)

    def test_truncated_and_padded_blobs_rejected(self, dep):
        agg = dep.verifier().aggregate_shares(make_shares(dep, D1, 1, signers=(0, 1)))
        v = dep.verifier()
        short = type(agg)(D1, CTR, 1, agg.combined_bytes[:-1], 2)
        long = type(agg)(D1, CTR, 1, agg.combined_bytes + b"\x00", 2)
        assert not v.verify_signature(D1, short, CTR, 1)
        assert not v.verify_signature(D1, long, CTR, 1)


def reference_continuing_rule(current, tv, tv_new):
    """Independent restatement of the continuing-certificate rule."""
    if tv_new < current:
        return "non_monotonic"
    if tv != current:
        return "stale"
    return "issued"


class TestContinuingCertificates:
    def test_equality_allowed(self, dep):
        ts = dep.subsystem(0)
        ts.create_independent_share(D1, CTR, 3)
        cert = ts.create_continuing_certificate(D1, CTR, 3, 3)
        assert cert.from_value == 3 and cert.to_value == 3
        assert ts.counter_value(CTR) == 3

    def test_decrease_rejected(self, dep):
        ts = dep.subsystem(0)
        ts.create_independent_share(D1, CTR, 3)
        with pytest.raises(NonMonotonicCounter):
            ts.create_continuing_certificate(D1, CTR, 3, 2)

    def test_stale_from_value(self, dep):
        ts = dep.subsystem(0)
        ts.create_independent_share(D1, CTR, 3)
        with pytest.raises(StaleFromValue):
            ts.create_continuing_certificate(D1, CTR, 2, 5)

    def test_enumerated_against_reference_model(self):
        # every (tv, tv_new) in [0,5]^2 against the reference rule, current=3
        for tv in range(6):
            for tv_new in range(6):
                dep = TrustedDeployment(seed=9, threshold=2)
                ts = dep.subsystem(0)
                ts.create_independent_share(D1, CTR, 3)
                expected = reference_continuing_rule(3, tv, tv_new)
                try:
                    cert = ts.create_continuing_certificate(D1, CTR, tv, tv_new)
                except NonMonotonicCounter:
                    assert expected == "non_monotonic", (tv, tv_new)
                except StaleFromValue:
                    assert expected == "stale", (tv, tv_new)
                else:
                    assert expected == "issued", (tv, tv_new)
                    assert ts.counter_value(CTR) == tv_new
                    assert dep.verifier().verify_certificate(D1, cert, CTR, tv, tv_new)

    def test_verify_roundtrip_and_swaps(self, dep):
        ts = dep.subsystem(0)
        ts.create_independent_share(D1, CTR, 2)
        cert = ts.create_continuing_certificate(D1, CTR, 2, 4)
        v = dep.verifier()
        assert v.verify_certificate(D1, cert, CTR, 2, 4)
        assert not v.verify_certificate(D1, cert, CTR, 4, 2)
        assert not v.verify_certificate(D2, cert, CTR, 2, 4)

    def test_other_deployment_cannot_verify(self, dep):
        ts = dep.subsystem(0)
        cert = ts.create_continuing_certificate(D1, CTR, 0, 0)
        other = TrustedDeployment(seed=999, threshold=2)
        assert not other.verifier().verify_certificate(D1, cert, CTR, 0, 0)


class TestTrustedBoundary:
    def test_public_surface_is_exactly_the_certified_api(self, dep):
        ts = dep.subsystem(0)
        public = {name for name in dir(ts) if not name.startswith("_")}
        assert public == {
            "create_independent_share",
            "create_continuing_certificate",
            "counter_value",
            "replica",
            "deployment_id",
        }

    def test_counters_not_reachable_by_name(self, dep):
        ts = dep.subsystem(0)
        assert not hasattr(ts, "counters")
        assert not hasattr(ts, "secret")

    def test_exec_signer_cannot_mint_agreement_shares(self, dep):
        signer = dep.exec_signer(0)
        with pytest.raises(UnknownCounter):
            signer.create_share(D1, CTR, 1)

    def test_exec_shares_skip_monotonicity(self, dep):
        signer = dep.exec_signer(0)
        pi = ("pi", ("exec",))
        s5 = signer.create_share(D1, pi, 5)
        s3 = signer.create_share(D1, pi, 3)  # no counter: no rejection
        assert s5.new_value == 5 and s3.new_value == 3

    def test_rollback_attack_is_undetectable(self, dep):
        # the assumed-away attack: state rewinds below the API seam and a
        # previously used value becomes reusable with a different digest
        ts = dep.subsystem(0)
        ts.create_independent_share(D1, CTR, 5)
        demo_rollback_attack(ts, CTR, 0)
        share = ts.create_independent_share(D2, CTR, 5)
        assert dep.verifier().verify_share(share)
