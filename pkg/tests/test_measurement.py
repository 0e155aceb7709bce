import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mmdcsim.channel import FrozenLink, frozen_channel_from_config
from mmdcsim.engine import RngStreams, SimConfig
from mmdcsim.measurement import (BELOW_THRESHOLD, CompleteReportTable,
                                 DomainError, FilterState, ReportTable, RtRow,
                                 assemble_crt, build_sweep_series, crt_delay,
                                 crt_from_series, estimate_noise,
                                 estimate_noise_sigma, filter_series,
                                 filter_step, sweep_link)
from mmdcsim.simrun import prepare_run


class TestCrtDelay:
    @pytest.mark.parametrize("l,expected_ms", [(1, 25.6), (2, 12.8), (16, 1.6)])
    def test_reference_rows_to_machine_precision(self, l, expected_ms):
        got = crt_delay(16, 8, 200e-6, l)
        exact = Fraction(16 * 8) * Fraction(200, 10**6) / l
        assert got == pytest.approx(float(exact), rel=1e-15)
        assert got == pytest.approx(expected_ms * 1e-3, rel=1e-12)

    def test_zero_parallelism_rejected(self):
        with pytest.raises(DomainError):
            crt_delay(16, 8, 200e-6, 0)

    def test_parallelism_beyond_directions_rejected(self):
        with pytest.raises(DomainError):
            crt_delay(16, 8, 200e-6, 17)

    def test_nonpositive_counts_rejected(self):
        with pytest.raises(DomainError):
            crt_delay(0, 8, 200e-6, 1)


class TestEstimateNoise:
    def test_degenerate_noise_is_identity(self):
        config = SimConfig(est_noise_sigma_lo_db=0.0, est_noise_sigma_hi_db=0.0)
        stream = RngStreams(1).substream("estimation")
        assert estimate_noise(7.3, stream, config) == 7.3

    def test_sigma_clamps_above_high_anchor(self, config):
        assert estimate_noise_sigma(30.0, config) == config.est_noise_sigma_hi_db
        assert estimate_noise_sigma(-10.0, config) == config.est_noise_sigma_lo_db

    def test_sigma_interpolates(self, config):
        mid = estimate_noise_sigma(10.0, config)
        assert mid == pytest.approx(0.5 * (3.0 + 0.5))

    def test_empirical_sigma_matches_configuration(self, config):
        stream = RngStreams(42).substream("estimation")
        draws = np.array([estimate_noise(0.0, stream, config)
                          for _ in range(100_000)])
        assert draws.std() == pytest.approx(config.est_noise_sigma_lo_db, rel=0.05)


class TestFilter:
    def test_eta_one_is_identity(self):
        state = FilterState(eta=1.0, value_db=3.0)
        assert filter_step(state, 10.0) == 10.0

    def test_half_blend(self):
        state = FilterState(eta=0.5, value_db=0.0)
        assert filter_step(state, 10.0) == 5.0

    def test_initialization_from_first_sample(self):
        state = FilterState(eta=0.25)
        assert filter_step(state, -7.0) == -7.0

    def test_constant_input_converges_geometrically(self):
        eta = 0.3
        state = FilterState(eta=eta, value_db=0.0)
        errors = []
        for _ in range(12):
            filter_step(state, 10.0)
            errors.append(abs(state.value_db - 10.0))
        for before, after in zip(errors, errors[1:]):
            assert after == pytest.approx(before * (1 - eta), rel=1e-9)

    @given(st.lists(st.floats(-60, 60), min_size=1, max_size=50),
           st.floats(0.05, 1.0))
    @settings(max_examples=200, deadline=None)
    def test_output_stays_in_input_hull(self, raws, eta):
        state = FilterState(eta=eta)
        outputs = [filter_step(state, raw) for raw in raws]
        lo, hi = min(raws), max(raws)
        for out in outputs:
            assert lo - 1e-9 <= out <= hi + 1e-9

    def test_vectorized_filter_matches_stepwise(self):
        raws = np.array([3.0, -2.0, 7.5, 7.5, -20.0, 4.0])
        state = FilterState(eta=0.25)
        stepped = [filter_step(state, r) for r in raws]
        assert np.allclose(filter_series(raws, 0.25), stepped)


class TestSweepLink:
    def frozen(self, config, distance=100.0, state="los", delta=0.0,
               opt=(3, 11), extra=()):
        links = (FrozenLink(2, distance, state, 0.0, delta),) + tuple(extra)
        pairs = {link.link_id: (0, 0) for link in links}
        pairs[2] = opt
        return frozen_channel_from_config(config, links, pairs)

    def test_noise_free_sweep_finds_aligned_pair(self, config):
        frozen = self.frozen(config)
        result = sweep_link(frozen, 2, 8, 16, FilterState(0.25), None, config)
        assert result is not BELOW_THRESHOLD
        pair, raw, filtered = result
        assert pair == (3, 11)
        assert raw == filtered  # first sample initializes the filter

    def test_all_pairs_below_threshold(self, config):
        frozen = self.frozen(config, distance=200.0, state="nlos", delta=-40.0)
        result = sweep_link(frozen, 2, 8, 16, FilterState(0.25), None, config)
        assert result is BELOW_THRESHOLD

    def test_sweep_equals_exhaustive_oracle(self, config):
        rng = RngStreams(77).substream("fading")
        for _ in range(20):
            opt = (int(rng.integers(0, 8)), int(rng.integers(0, 16)))
            frozen = self.frozen(config, distance=float(rng.uniform(40, 200)),
                                 opt=opt,
                                 extra=(FrozenLink(3, float(rng.uniform(40, 200))),))
            # independent argmax over the full direction product
            best, best_pair = -math.inf, None
            for u in range(8):
                for e in range(16):
                    v = frozen.pair_sinr_db(2, u, e)
                    if v > best:
                        best, best_pair = v, (u, e)
            result = sweep_link(frozen, 2, 8, 16, FilterState(0.25), None, config)
            pair, raw, _ = result
            assert pair == best_pair
            assert raw == pytest.approx(best)

    def test_constant_offset_keeps_argmax(self, config):
        base = self.frozen(config)
        shifted = self.frozen(config.replace(), distance=100.0)
        shifted = frozen_channel_from_config(
            config, (FrozenLink(2, 100.0, "los", fading_db=12.5),), {2: (3, 11)})
        a = sweep_link(base, 2, 8, 16, FilterState(0.25), None, config)
        b = sweep_link(shifted, 2, 8, 16, FilterState(0.25), None, config)
        assert a[0] == b[0]


class TestAssembleCrt:
    def rt(self, enb_id, sinr, stale=False):
        return ReportTable(enb_id, (RtRow(0, sinr, (1, 2), stale),))

    def test_row_shape_matches_cell_count(self, config):
        crt = assemble_crt([self.rt(2, 10.0), self.rt(3, 5.0), self.rt(4, -2.0)],
                           1.6e-3, 1.6e-3, config)
        assert crt.enb_ids == (2, 3, 4)
        assert set(crt.rows[0]) == {2, 3, 4}

    def test_all_below_threshold_gives_all_outage_row(self, config):
        crt = assemble_crt([self.rt(2, -10.0), self.rt(3, -6.0)],
                           0.0, 1.6e-3, config)
        assert all(entry.outage for entry in crt.rows[0].values())

    def test_values_pass_through_unfiltered(self, config):
        crt = assemble_crt([self.rt(2, 12.34)], 0.0, 1.6e-3, config)
        assert crt.rows[0][2].sinr_db == 12.34
        assert crt.rows[0][2].best_pair == (1, 2)

    def test_stale_rows_marked_outage(self, config):
        crt = assemble_crt([self.rt(2, 10.0, stale=True)], 0.0, 1.6e-3, config)
        assert crt.rows[0][2].outage


class TestSweepSeries:
    def test_crt_cadence_count(self):
        config = SimConfig(sim_duration_s=2.0, receiver_parallelism=16)
        _, traces, series = prepare_run(config)
        assert series.n_crts == int(2.0 / 1.6e-3)
        np.testing.assert_array_equal(
            series.times_ns,
            np.arange(series.n_crts + 1) * 1_600_000)

    def test_cadence_for_analog_receiver(self):
        config = SimConfig(sim_duration_s=2.0, receiver_parallelism=1)
        _, _, series = prepare_run(config)
        assert series.n_crts == int(2.0 / 25.6e-3)

    def test_outage_flag_tracks_filtered_value(self):
        config = SimConfig(sim_duration_s=1.0, seed=3)
        _, _, series = prepare_run(config)
        np.testing.assert_array_equal(
            series.outage, series.filtered_db < config.outage_threshold_db)

    def test_series_independent_of_architecture(self):
        a = prepare_run(SimConfig(sim_duration_s=1.0, seed=4, architecture="dc"))[2]
        b = prepare_run(SimConfig(sim_duration_s=1.0, seed=4, architecture="hh"))[2]
        assert np.array_equal(a.filtered_db, b.filtered_db)
        assert np.array_equal(a.raw_db, b.raw_db)

    def test_crt_materialization(self):
        config = SimConfig(sim_duration_s=1.0, seed=4)
        _, _, series = prepare_run(config)
        crt = crt_from_series(series, 5, config.crt_period_s, config)
        assert isinstance(crt, CompleteReportTable)
        assert crt.generation_time_s == pytest.approx(5 * 1.6e-3)
        for i, enb_id in enumerate(series.link_ids):
            assert crt.rows[0][enb_id].sinr_db == series.filtered_db[i, 5]

    def test_overhead_fraction_by_construction(self, config):
        assert config.overhead == config.srs_duration_s / config.srs_period_s
        assert config.overhead == 0.05
