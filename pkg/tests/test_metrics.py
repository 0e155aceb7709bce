import math

import numpy as np
import pytest

from mmdcsim.metrics import (AccountingError, KpiSummary, aggregate_campaign,
                             packet_loss_ratio, throughput_series,
                             variance_ratio)


class TestPacketLossRatio:
    def test_all_delivered_is_zero(self):
        assert packet_loss_ratio(1_000_000, 20e-6, 20.0) == pytest.approx(0.0)

    def test_nothing_delivered_is_one(self):
        assert packet_loss_ratio(0, 20e-6, 20.0) == 1.0

    def test_reference_point(self):
        assert packet_loss_ratio(900_000, 20e-6, 20.0) == pytest.approx(0.1)

    def test_receiving_more_than_sent_is_an_error(self):
        with pytest.raises(AccountingError):
            packet_loss_ratio(1_000_001, 20e-6, 20.0)


class TestThroughputSeries:
    def test_no_deliveries_all_zero(self):
        series = throughput_series(np.array([]), 1024, 20.0)
        assert series.shape == (4000,)
        assert (series == 0).all()

    def test_single_pdu_sample_value(self):
        series = throughput_series(np.array([0.0125]), 1024, 20.0)
        assert series[2] == pytest.approx(1024 * 8 / 5e-3)
        assert series[2] == pytest.approx(1.6384e6)
        assert np.count_nonzero(series) == 1

    def test_steady_stream_mean_matches_offered(self):
        deliveries = np.arange(0, 20.0, 20e-6)
        series = throughput_series(deliveries, 1024, 20.0)
        assert series.mean() == pytest.approx(409.6e6, rel=1e-6)


class TestVarianceRatio:
    def test_identical_means_zero(self):
        assert variance_ratio([5.0, 5.0, 5.0]) == 0.0

    def test_population_statistics(self):
        # mean 1, population sigma 1
        assert variance_ratio([0.0, 2.0]) == pytest.approx(1.0)

    def test_scale_invariance(self):
        base = [3.0, 7.0, 5.5, 4.1]
        scaled = [v * 17.3 for v in base]
        assert variance_ratio(scaled) == pytest.approx(variance_ratio(base))

    def test_zero_mean_not_available(self):
        assert math.isnan(variance_ratio([0.0, 0.0]))


def summary(**overrides):
    base = dict(
        scenario="default", architecture="dc", ttt_mode="fixed",
        receiver_parallelism=16, crt_period_ms=1.6, t_udp_us=20.0,
        run_index=0, seed=1, handover_count=10, fast_switch_count=4,
        sch_count=6, hard_handover_count=0, sent=1000, delivered=990,
        dropped_overflow=8, dropped_segmentation=2, pending=0, r_loss=0.01,
        r_loss_audit=0.01, mean_latency_s=0.005, mean_throughput_bps=4e8,
        throughput_std_within_bps=1e7, rrc_bits_per_s=100.0, rrc_messages=12,
        x2_bits_per_s=4e8, x2_pdcp_ratio=1.0, lte_serving_fraction=0.05,
        no_service_fraction=0.0, wall_time_s=1.0)
    base.update(overrides)
    return KpiSummary(**base)


class TestAggregateCampaign:
    def test_single_run_mean_is_the_run(self):
        agg = aggregate_campaign([summary()])
        assert len(agg) == 1
        assert agg[0].n_runs == 1
        assert agg[0].means["r_loss"] == 0.01
        assert agg[0].stds["r_loss"] == 0.0

    def test_duplicated_runs_same_mean(self):
        one = aggregate_campaign([summary()])
        two = aggregate_campaign([summary(), summary(run_index=1)])
        assert one[0].means == two[0].means

    def test_groups_by_cell(self):
        runs = [summary(), summary(architecture="hh"),
                summary(ttt_mode="dynamic"), summary(t_udp_us=80.0)]
        agg = aggregate_campaign(runs)
        assert len(agg) == 4

    def test_r_var_over_run_means(self):
        runs = [summary(mean_throughput_bps=0.0),
                summary(run_index=1, mean_throughput_bps=2.0)]
        agg = aggregate_campaign(runs)
        assert agg[0].r_var == pytest.approx(1.0)

    def test_empty_campaign_rejected(self):
        with pytest.raises(AccountingError):
            aggregate_campaign([])
