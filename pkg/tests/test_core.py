import struct

import pytest
from hypothesis import given, strategies as st

from bftlab.core import (
    AssignRef,
    CommandBatch,
    ConfigError,
    FaultModel,
    InstanceLog,
    NoOp,
    OrderRef,
    SystemConfig,
    compute_digest,
    expected_primary,
    instance_coordinator,
    quorum_size,
)


def cfg(n, f, model=FaultModel.BFT, **kw):
    return SystemConfig(n_replicas=n, max_faults=f, fault_model=model, **kw)


class TestQuorumSize:
    def test_bft_n4(self):
        assert quorum_size(cfg(4, 1)) == 3

    def test_hybrid_n3(self):
        assert quorum_size(cfg(3, 1, FaultModel.HYBRID)) == 2

    def test_hybrid_degenerate_single_replica(self):
        assert quorum_size(cfg(1, 0, FaultModel.HYBRID)) == 1

    def test_unknown_phase_rejected(self):
        with pytest.raises(ValueError):
            quorum_size(cfg(4, 1), "decide")

    @given(st.integers(min_value=0, max_value=20))
    def test_bft_quorums_intersect_in_correct_replica(self, f):
        n = 3 * f + 1
        q = quorum_size(cfg(n, f))
        # any two quorums share at least f+1 replicas, hence one correct
        assert q + q - n >= f + 1

    @given(st.integers(min_value=0, max_value=20))
    def test_hybrid_majority_quorums_intersect(self, f):
        n = 2 * f + 1
        q = quorum_size(cfg(n, f, FaultModel.HYBRID))
        assert 2 * q - n >= 1


class TestConfig:
    def test_bft_needs_3f_plus_1(self):
        with pytest.raises(ConfigError):
            cfg(3, 1)

    def test_hybrid_needs_2f_plus_1(self):
        with pytest.raises(ConfigError):
            cfg(2, 1, FaultModel.HYBRID)

    def test_batch_size_positive(self):
        with pytest.raises(ConfigError):
            cfg(4, 1, batch_size=0)

    def test_checkpoint_interval_positive(self):
        with pytest.raises(ConfigError):
            cfg(4, 1, checkpoint_interval=0)

    def test_extra_replicas_allowed(self):
        assert cfg(10, 4, FaultModel.HYBRID).quorum == 5


class TestExpectedPrimary:
    @pytest.mark.parametrize("view,n,primary", [(0, 4, 0), (5, 4, 1), (4, 4, 0)])
    def test_rotation(self, view, n, primary):
        assert expected_primary(view, cfg(n, 1)) == primary

    def test_instance_coordinator_starts_at_owner(self):
        c = cfg(4, 1)
        assert instance_coordinator(2, 0, c) == 2
        assert instance_coordinator(2, 1, c) == 3
        assert instance_coordinator(2, 4, c) == 2  # owner regains every N views


class TestDigest:
    def test_identical_batches_identical_digests(self):
        a = CommandBatch(7, 3, ((b"key", b"val"),))
        b = CommandBatch(7, 3, ((b"key", b"val"),))
        assert compute_digest(a) == compute_digest(b)

    def test_one_byte_difference_changes_digest(self):
        a = CommandBatch(7, 3, ((b"key", b"val"),))
        b = CommandBatch(7, 3, ((b"key", b"vam"),))
        assert compute_digest(a) != compute_digest(b)

    def test_empty_operations_digest_defined(self):
        d = compute_digest(CommandBatch(0, 0, ()))
        assert len(d) == 32

    def test_payload_kinds_never_collide(self):
        batch = CommandBatch(1, 1, ())
        digests = {
            compute_digest(batch),
            compute_digest(NoOp()),
            compute_digest(OrderRef(1, 1)),
            compute_digest(AssignRef(1, 1)),
        }
        assert len(digests) == 4

    def test_canonical_batch_bytes(self):
        # independent encoding straight from the documented layout
        batch = CommandBatch(1, 2, ((b"k", b"v"),))
        expected = (
            b"\x01"
            + struct.pack(">QQI", 1, 2, 1)
            + struct.pack(">I", 1)
            + b"k"
            + struct.pack(">I", 1)
            + b"v"
        )
        assert batch.to_bytes() == expected

    def test_canonical_ref_bytes(self):
        assert OrderRef(3, 9).to_bytes() == b"\x02" + struct.pack(">QQ", 3, 9)
        assert NoOp().to_bytes() == b"\x00"

    @given(
        st.integers(0, 2**32),
        st.integers(0, 2**32),
        st.lists(st.tuples(st.binary(max_size=8), st.binary(max_size=8)), max_size=4),
    )
    def test_serialization_roundtrip_stable(self, client, ts, ops):
        batch = CommandBatch(client, ts, tuple(ops))
        assert batch.to_bytes() == batch.to_bytes()
        assert compute_digest(batch) == compute_digest(CommandBatch(client, ts, tuple(ops)))


class TestInstanceLog:
    def test_gc_requires_proof(self):
        log = InstanceLog()
        log.entry(0).committed = True
        with pytest.raises(ValueError):
            log.collect_garbage(0, None)

    def test_gc_drops_entries_below_mark(self):
        log = InstanceLog()
        for s in range(5):
            log.entry(s)
        log.collect_garbage(2, (2, b"d", (0, 1, 2)))
        assert sorted(log.entries) == [2, 3, 4]
        assert log.low_water_mark == 2
        assert log.stable_checkpoint == (2, b"d", (0, 1, 2))
