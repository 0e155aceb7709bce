import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mmdcsim.channel import (BeamCodebook, BlockageTrace, DomainError,
                             FrozenChannel, FrozenLink, PathlossParams,
                             TraceParseError, beam_gain, build_channel_traces,
                             codebooks_from_config, dump_blockage_trace,
                             frozen_channel_from_config, import_blockage_trace,
                             lte_rate_bps, lte_snr_db, mmwave_rate_bps,
                             pathloss_db, synth_blockage_trace)
from mmdcsim.engine import RngStreams, SimConfig
from mmdcsim.scenario import build_scenario

PARAMS = PathlossParams()


class TestPathloss:
    def test_one_meter_is_alpha(self):
        assert pathloss_db(1.0, "los", PARAMS) == pytest.approx(61.4)
        assert pathloss_db(1.0, "nlos", PARAMS) == pytest.approx(72.0)

    def test_los_at_100m(self):
        # alpha + beta*10*log10(d) = 61.4 + 2.0*10*2
        assert pathloss_db(100.0, "los", PARAMS) == pytest.approx(
            61.4 + 2.0 * 10 * math.log10(100.0))
        assert pathloss_db(100.0, "los", PARAMS) == pytest.approx(101.4)

    def test_nlos_at_100m(self):
        assert pathloss_db(100.0, "nlos", PARAMS) == pytest.approx(
            72.0 + 2.92 * 10 * math.log10(100.0))
        assert pathloss_db(100.0, "nlos", PARAMS) == pytest.approx(130.4)

    def test_nonpositive_distance_rejected(self):
        with pytest.raises(DomainError):
            pathloss_db(0.0, "los", PARAMS)
        with pytest.raises(DomainError):
            pathloss_db(-3.0, "nlos", PARAMS)

    def test_unknown_state_rejected(self):
        with pytest.raises(DomainError):
            pathloss_db(10.0, "foggy", PARAMS)


class TestBeamGain:
    def books(self, config):
        enb, ue = codebooks_from_config(config)
        return enb, ue

    def test_codebook_peak_gains(self, config):
        enb, ue = self.books(config)
        assert enb.max_gain_dbi == pytest.approx(10 * math.log10(64))
        assert ue.max_gain_dbi == pytest.approx(10 * math.log10(16))

    def test_both_aligned(self, config):
        enb, ue = self.books(config)
        gain = beam_gain(3, 7, (3, 7), (enb, ue))
        assert gain == pytest.approx(10 * math.log10(64) + 10 * math.log10(16))
        assert gain == pytest.approx(30.103, abs=1e-3)

    def test_both_misaligned(self, config):
        enb, ue = self.books(config)
        assert beam_gain(2, 6, (3, 7), (enb, ue)) == pytest.approx(-20.0)

    def test_one_side_aligned(self, config):
        enb, ue = self.books(config)
        # eNB side aligned at peak 18.06 dBi, UE side at the -10 dBi sidelobe
        gain = beam_gain(3, 6, (3, 7), (enb, ue))
        assert gain == pytest.approx(10 * math.log10(64) - 10.0)
        assert gain == pytest.approx(8.062, abs=1e-3)

    def test_out_of_range_rejected(self, config):
        enb, ue = self.books(config)
        with pytest.raises(DomainError):
            beam_gain(16, 0, (0, 0), (enb, ue))
        with pytest.raises(DomainError):
            beam_gain(0, -1, (0, 0), (enb, ue))


def single_link_channel(config, distance=100.0, state="los", fading=0.0,
                        delta=0.0, extra=()):
    links = (FrozenLink(2, distance, state, fading, delta),) + tuple(extra)
    pairs = {link.link_id: (0, 0) for link in links}
    return frozen_channel_from_config(config, links, pairs)


class TestTrueSinr:
    def test_single_cell_link_budget(self, config):
        # P_TX - PL + G - N = 30 - 101.4 + 30.103 - (-79)
        frozen = single_link_channel(config)
        expected = (30.0 - 101.4 + 10 * math.log10(64) + 10 * math.log10(16)
                    + 79.0)
        assert frozen.true_sinr_db(2) == pytest.approx(expected, abs=1e-6)
        assert frozen.true_sinr_db(2) == pytest.approx(37.7, abs=0.01)

    def test_los_has_no_blockage_term(self, config):
        frozen = single_link_channel(config, state="los", delta=-35.0)
        baseline = single_link_channel(config, state="los", delta=0.0)
        assert frozen.true_sinr_db(2) == baseline.true_sinr_db(2)

    def test_nlos_adds_delta(self, config):
        with_block = single_link_channel(config, state="nlos", delta=-35.0)
        without = single_link_channel(config, state="nlos", delta=0.0)
        assert (with_block.true_sinr_db(2) - without.true_sinr_db(2)
                == pytest.approx(-35.0))

    def test_interference_monotonicity(self, config):
        alone = single_link_channel(config)
        crowded = single_link_channel(
            config, extra=(FrozenLink(3, 80.0), FrozenLink(4, 150.0)))
        assert crowded.true_sinr_db(2) < alone.true_sinr_db(2)

    @given(st.floats(10, 300), st.floats(10, 300))
    @settings(max_examples=50, deadline=None)
    def test_more_interferers_never_increase_sinr(self, d1, d2):
        config = SimConfig()
        one = single_link_channel(config, extra=(FrozenLink(3, d1),))
        two = single_link_channel(config, extra=(FrozenLink(3, d1),
                                                 FrozenLink(4, d2)))
        assert two.true_sinr_db(2) <= one.true_sinr_db(2) + 1e-12

    def test_aligned_pair_is_brute_force_maximum(self, config):
        rng = RngStreams(21).substream("fading")
        for _ in range(20):
            opt = (int(rng.integers(0, 8)), int(rng.integers(0, 16)))
            links = (FrozenLink(2, float(rng.uniform(30, 250)),
                                "los", float(rng.normal(0, 6))),
                     FrozenLink(3, float(rng.uniform(30, 250))))
            frozen = frozen_channel_from_config(config, links, {2: opt, 3: (0, 0)})
            values = {(u, e): frozen.pair_sinr_db(2, u, e)
                      for u in range(8) for e in range(16)}
            assert max(values, key=values.get) == opt

    def test_noise_floor_dominates_at_extreme_range(self, config):
        far = single_link_channel(config, distance=1e9)
        assert far.true_sinr_db(2) < -100.0


class TestBlockageTrace:
    def test_depth_bounds(self, config):
        stream = RngStreams(3).substream("blockage")
        trace = synth_blockage_trace(stream, 60.0, config)
        assert trace.values_db.min() >= -45.0
        assert trace.values_db.min() <= -25.0
        assert trace.values_db.max() <= 0.0

    def test_single_slot_duration(self, config):
        stream = RngStreams(3).substream("blockage")
        trace = synth_blockage_trace(stream, 0.125e-3, config)
        assert trace.values_db.size == 1

    def test_deterministic(self, config):
        a = synth_blockage_trace(RngStreams(5).substream("blockage"), 2.0, config)
        b = synth_blockage_trace(RngStreams(5).substream("blockage"), 2.0, config)
        assert (a.values_db == b.values_db).all()

    def test_invalid_duration(self, config):
        with pytest.raises(DomainError):
            synth_blockage_trace(RngStreams(1).substream("blockage"), 0.0, config)

    def test_values_outside_range_rejected(self):
        with pytest.raises(Exception):
            BlockageTrace(125e-6, np.array([-50.0]))
        with pytest.raises(Exception):
            BlockageTrace(125e-6, np.array([1.0]))


class TestBlockageImport:
    def test_constant_trace(self, tmp_path, config):
        path = tmp_path / "trace.txt"
        path.write_text("blockage-trace v1, dt=0.000125\n" + "-30.0\n" * 8)
        trace = import_blockage_trace(path)
        assert (trace.values_db == -30.0).all()
        assert trace.values_db.size == 8

    def test_zero_order_hold_doubles_coarser_input(self, tmp_path):
        path = tmp_path / "trace.txt"
        path.write_text("blockage-trace v1, dt=0.00025\n-10.0\n-20.0\n")
        trace = import_blockage_trace(path, slot_s=125e-6)
        assert list(trace.values_db) == [-10.0, -10.0, -20.0, -20.0]

    def test_empty_file_is_parse_error(self, tmp_path):
        path = tmp_path / "trace.txt"
        path.write_text("")
        with pytest.raises(TraceParseError):
            import_blockage_trace(path)

    def test_malformed_value_reports_line(self, tmp_path):
        path = tmp_path / "trace.txt"
        path.write_text("blockage-trace v1, dt=0.000125\n-10.0\nabc\n")
        with pytest.raises(TraceParseError, match="line 3"):
            import_blockage_trace(path)

    def test_round_trip(self, tmp_path, config):
        stream = RngStreams(2).substream("blockage")
        trace = synth_blockage_trace(stream, 0.01, config)
        path = tmp_path / "trace.txt"
        path.write_text(dump_blockage_trace(trace))
        again = import_blockage_trace(path, slot_s=trace.dt_s)
        assert np.allclose(again.values_db, trace.values_db)


class TestRateMaps:
    def test_lte_rate_caps_at_se_max(self, config):
        # 20 MHz x 4.8 b/s/Hz
        assert lte_rate_bps(40.0, config) == pytest.approx(96e6)

    def test_lte_rate_at_zero_db(self, config):
        assert lte_rate_bps(0.0, config) == pytest.approx(20e6)

    def test_lte_below_any_aligned_los_mmwave_rate(self, config):
        frozen = single_link_channel(config, distance=100.0)
        mm = mmwave_rate_bps(frozen.true_sinr_db(2), config)
        lte = lte_rate_bps(lte_snr_db(100.0, config), config)
        assert lte < mm

    def test_mmwave_rate_cap(self, config):
        # (1 - overhead) * W * SE_max at high SINR
        assert mmwave_rate_bps(60.0, config) == pytest.approx(0.95 * 4.8e9)

    def test_mmwave_outage_gives_zero(self, config):
        assert mmwave_rate_bps(config.outage_threshold_db - 0.01, config) == 0.0

    def test_gapless_map_is_capped_shannon(self):
        config = SimConfig(mmwave_rate_gap_db=0.0)
        expected = 0.95 * min(1e9 * math.log2(1 + 10.0), 4.8e9)
        assert mmwave_rate_bps(10.0, config) == pytest.approx(expected)

    def test_gap_shifts_low_end_only(self, config):
        gapless = SimConfig(mmwave_rate_gap_db=0.0)
        assert mmwave_rate_bps(0.0, config) < mmwave_rate_bps(0.0, gapless)
        assert mmwave_rate_bps(60.0, config) == mmwave_rate_bps(60.0, gapless)


class TestChannelTraces:
    def build(self, seed=6):
        config = SimConfig(seed=seed, sim_duration_s=2.0)
        geometry = build_scenario(config, config.streams().substream("building"))
        return config, build_channel_traces(config, geometry)

    def test_blockage_case_split(self):
        _, traces = self.build()
        # LOS: no overlay; NLOS: overlay equals the (non-positive) trace value
        assert (traces.delta_db[traces.los] == 0.0).all()
        assert (traces.delta_db <= 0.0).all()
        assert np.array_equal(traces.gamma_db[traces.los],
                              traces.gamma_stat_db[traces.los])
        split = traces.gamma_db - traces.gamma_stat_db
        assert np.allclose(split, traces.delta_db, atol=1e-9)

    def test_identical_seed_identical_traces(self):
        _, a = self.build(seed=9)
        _, b = self.build(seed=9)
        assert np.array_equal(a.gamma_db, b.gamma_db)

    def test_rate_consistent_with_map(self):
        config, traces = self.build()
        expected = mmwave_rate_bps(traces.gamma_db, config)
        assert np.array_equal(traces.mmwave_rate_bps, expected)

    def test_lte_never_in_outage(self):
        _, traces = self.build()
        assert (traces.lte_rate_bps > 0).all()
