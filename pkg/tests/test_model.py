"""Closed-form model tests.

Expected throughput values were computed independently by direct
evaluation of the published formulas with exact rational arithmetic
(B = 1e9/8 bytes/s, pm in KiB, sm = 250 B) and frozen here to six
significant figures.
"""

import pytest

from bftlab.model import (
    GBIT,
    KIB,
    concurrent_max_throughput,
    default_model_faults,
    message_count,
    model_table,
    model_throughput,
    primary_max_throughput,
)
from bftlab.simnet import ScenarioInvalid

PM5 = 5 * KIB
PM100 = 100 * KIB
SM = 250.0

SIX_FIGURES = dict(rel=5e-7)


class TestMessageCounts:
    @pytest.mark.parametrize(
        "protocol,n,expected",
        [
            ("destiny", 3, 21),
            ("dqpbft", 4, 72),
            ("pbft", 4, 36),
            ("hybster", 3, 12),
            ("pbft", 7, 105),
            ("hybster", 7, 56),
        ],
    )
    def test_published_rows(self, protocol, n, expected):
        assert message_count(protocol, n) == expected

    def test_destiny_per_replica_cost_constant(self):
        values = {message_count("destiny", n) / n for n in (3, 5, 9, 15, 301)}
        assert values == {7.0}

    def test_dqpbft_quadratic_coefficient_tends_to_four(self):
        for n in (10, 100, 1000):
            assert message_count("dqpbft", n) / n**2 == pytest.approx(4.0, abs=2.1 / n)

    def test_unknown_protocol(self):
        with pytest.raises(ScenarioInvalid):
            message_count("hotstuff", 4)


class TestThroughputSpotChecks:
    def test_pbft_n4(self):
        assert model_throughput("pbft", GBIT, 4, 1, PM5, SM) == pytest.approx(
            7098.239637, **SIX_FIGURES
        )

    def test_hybster_n3(self):
        assert model_throughput("hybster", GBIT, 3, 1, PM5, SM) == pytest.approx(
            11638.73371, **SIX_FIGURES
        )

    def test_dqpbft_n4(self):
        assert model_throughput("dqpbft", GBIT, 4, 1, PM5, SM) == pytest.approx(
            10176.39077, **SIX_FIGURES
        )

    def test_destiny_n4(self):
        assert model_throughput("destiny", GBIT, 4, 1, PM5, SM) == pytest.approx(
            11591.96291, **SIX_FIGURES
        )

    def test_destiny_n97(self):
        assert model_throughput("destiny", GBIT, 97, 48, PM5, SM) == pytest.approx(
            6507.096719, **SIX_FIGURES
        )

    def test_dqpbft_n97_large_payload(self):
        assert model_throughput("dqpbft", GBIT, 97, 32, PM100, SM) == pytest.approx(
            357.9925978, **SIX_FIGURES
        )

    def test_reference_bounds(self):
        assert primary_max_throughput(GBIT, 4, PM5) == pytest.approx(
            8138.020833, **SIX_FIGURES
        )
        assert concurrent_max_throughput(GBIT, 4, 1, PM5) == pytest.approx(
            14648.4375, **SIX_FIGURES
        )

    def test_large_payload_ratio_approaches_symbolic_limit(self):
        # destiny over pbft tends to NF(N-1)/((N-1)+(NF-1)) as pm grows
        n, f = 97, 48
        nf = n - f
        limit = nf * (n - 1) / ((n - 1) + (nf - 1))
        ratio = model_throughput("destiny", GBIT, n, f, PM100, SM) / model_throughput(
            "pbft", GBIT, n, f, PM100, SM
        )
        assert ratio == pytest.approx(32.45689517, **SIX_FIGURES)
        assert abs(ratio - limit) / limit < 0.01
        huge = 10_000 * KIB
        ratio_huge = model_throughput("destiny", GBIT, n, f, huge, SM) / model_throughput(
            "pbft", GBIT, n, f, huge, SM
        )
        assert abs(ratio_huge - limit) / limit < 1e-4


class TestOrdering:
    @pytest.mark.parametrize("pm", [PM5, PM100])
    def test_dq_rows_beat_their_single_primary_counterparts(self, pm):
        for n in range(4, 302):
            f_bft = default_model_faults("pbft", n)
            f_hy = default_model_faults("hybster", n)
            assert model_throughput("dqpbft", GBIT, n, f_bft, pm, SM) > model_throughput(
                "pbft", GBIT, n, f_bft, pm, SM
            )
            assert model_throughput("destiny", GBIT, n, f_hy, pm, SM) > model_throughput(
                "hybster", GBIT, n, f_hy, pm, SM
            )

    @pytest.mark.parametrize("pm", [PM5, PM100])
    def test_destiny_at_least_dqpbft_at_common_inputs(self, pm):
        for n in range(2, 302):
            f = default_model_faults("pbft", n)
            assert model_throughput("destiny", GBIT, n, f, pm, SM) >= model_throughput(
                "dqpbft", GBIT, n, f, pm, SM
            )

    @pytest.mark.parametrize("protocol", ["pbft", "hybster"])
    def test_single_primary_throughput_monotone_decreasing_in_n(self, protocol):
        previous = None
        for n in range(2, 302):
            value = model_throughput(protocol, GBIT, n, 0, PM5, SM)
            if previous is not None:
                assert value < previous
            previous = value

    def test_table_rows_cover_all_protocols(self):
        rows = model_table([4, 7])
        assert len(rows) == 8
        assert {row["protocol"] for row in rows} == {"pbft", "hybster", "dqpbft", "destiny"}


class TestValidation:
    def test_rejects_nonpositive_inputs(self):
        with pytest.raises(ScenarioInvalid):
            model_throughput("pbft", 0, 4, 1, PM5, SM)
        with pytest.raises(ScenarioInvalid):
            model_throughput("pbft", GBIT, 1, 0, PM5, SM)
        with pytest.raises(ScenarioInvalid):
            model_throughput("pbft", GBIT, 4, -1, PM5, SM)
