"""Semi-statistical mmWave channel and the LTE fallback link.

Per (UE, mmWave eNB) pair the wideband SINR is composed from a log-distance
pathloss (separate LOS/NLOS fits), lognormal shadowing redrawn every 100 ms,
a per-slot Doppler fading term, a beam-codebook gain, and - while the link
is geometrically blocked - a synthetic attenuation trace standing in for
measured blockage dynamics.  Everything is precomputed on the 125 us slot
grid once per run, so the event loop only indexes arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .engine import ConfigError, SimConfig
from .scenario import ScenarioGeometry, Site, los_mask

SPEED_OF_LIGHT = 299_792_458.0


class DomainError(ValueError):
    """Argument outside the physical domain of an operation."""


class TraceParseError(ValueError):
    """Malformed blockage-trace file."""


# -- pathloss -------------------------------------------------------------

@dataclass(frozen=True)
class PathlossParams:
    """Log-distance fit PL(d) = alpha + beta * 10 log10(d) per link state."""

    alpha_los_db: float = 61.4
    beta_los: float = 2.0
    alpha_nlos_db: float = 72.0
    beta_nlos: float = 2.92

    def __post_init__(self) -> None:
        if not (self.beta_nlos >= self.beta_los > 0):
            raise ConfigError("need beta_nlos >= beta_los > 0")
        if self.alpha_los_db <= 0 or self.alpha_nlos_db <= 0:
            raise ConfigError("alpha values must be positive")

    @classmethod
    def from_config(cls, config: SimConfig) -> "PathlossParams":
        return cls(config.pl_alpha_los_db, config.pl_beta_los,
                   config.pl_alpha_nlos_db, config.pl_beta_nlos)


def pathloss_db(distance_m, state: str, params: PathlossParams):
    """Pathloss in dB at the given distance for 'los' or 'nlos' conditions."""
    d = np.asarray(distance_m, dtype=float)
    if np.any(d <= 0):
        raise DomainError("pathloss distance must be > 0")
    if state == "los":
        alpha, beta = params.alpha_los_db, params.beta_los
    elif state == "nlos":
        alpha, beta = params.alpha_nlos_db, params.beta_nlos
    else:
        raise DomainError(f"unknown link state {state!r}")
    out = alpha + beta * 10.0 * np.log10(d)
    return float(out) if np.isscalar(distance_m) else out


# -- beam codebooks --------------------------------------------------------

@dataclass(frozen=True)
class BeamCodebook:
    """Steered-beam codebook: peak gain when aligned, sidelobe otherwise."""

    directions: int
    max_gain_dbi: float
    sidelobe_gain_dbi: float

    def __post_init__(self) -> None:
        if self.sidelobe_gain_dbi >= self.max_gain_dbi:
            raise ConfigError("sidelobe gain must be below the peak gain")

    @classmethod
    def from_elements(cls, elements: int, directions: int,
                      sidelobe_gain_dbi: float) -> "BeamCodebook":
        return cls(directions, 10.0 * math.log10(elements), sidelobe_gain_dbi)


def codebooks_from_config(config: SimConfig) -> tuple[BeamCodebook, BeamCodebook]:
    """(eNB codebook, UE codebook) for the configured array sizes."""
    enb = BeamCodebook.from_elements(config.enb_array_elements,
                                     config.enb_directions,
                                     config.sidelobe_gain_db)
    ue = BeamCodebook.from_elements(config.ue_array_elements,
                                    config.ue_directions,
                                    config.sidelobe_gain_db)
    return enb, ue


def beam_gain(tx_dir: int, rx_dir: int, optimal_pair: tuple[int, int],
              books: tuple[BeamCodebook, BeamCodebook]) -> float:
    """Combined TX+RX gain in dB; each side is peak iff it points optimally."""
    tx_book, rx_book = books
    if not (0 <= tx_dir < tx_book.directions):
        raise DomainError(f"tx direction {tx_dir} outside codebook")
    if not (0 <= rx_dir < rx_book.directions):
        raise DomainError(f"rx direction {rx_dir} outside codebook")
    g_tx = tx_book.max_gain_dbi if tx_dir == optimal_pair[0] else tx_book.sidelobe_gain_dbi
    g_rx = rx_book.max_gain_dbi if rx_dir == optimal_pair[1] else rx_book.sidelobe_gain_dbi
    return g_tx + g_rx


def direction_index(from_x, from_y, to_x, to_y, n_directions: int):
    """Quantize the azimuth from->to into one of n equal sectors."""
    angle = np.arctan2(np.asarray(to_y) - np.asarray(from_y),
                       np.asarray(to_x) - np.asarray(from_x))
    frac = np.mod(angle, 2.0 * np.pi) / (2.0 * np.pi)
    idx = np.floor(frac * n_directions).astype(np.int64) % n_directions
    return int(idx) if idx.ndim == 0 else idx


# -- blockage traces -------------------------------------------------------

@dataclass(frozen=True)
class BlockageTrace:
    """Attenuation-vs-time trace on the slot grid; non-positive dB values."""

    dt_s: float
    values_db: np.ndarray
    source: str = "synthetic"

    def __post_init__(self) -> None:
        v = self.values_db
        if v.size and (v.max() > 0.0 or v.min() < -45.0):
            raise ConfigError("blockage attenuation must lie in [-45, 0] dB")

    def sample(self, index: int) -> float:
        return float(self.values_db[index])


def synth_blockage_trace(stream: np.random.Generator, duration_s: float,
                         config: SimConfig) -> BlockageTrace:
    """Piecewise-linear attenuation events with exponential inter-event gaps.

    Each event ramps down at the configured dB/ms rate to a uniform random
    depth, dwells there, and ramps back up.  Between events the overlay is
    0 dB, so the pathloss-state switch alone carries the persistent part of
    an obstruction.
    """
    if duration_s <= 0:
        raise DomainError("trace duration must be > 0")
    dt = config.slot_s
    decay_db_per_s = config.blockage_decay_db_per_ms * 1000.0
    t_pts = [0.0]
    v_pts = [0.0]
    t = float(stream.exponential(config.blockage_gap_mean_s))
    while t < duration_s:
        depth = stream.uniform(config.blockage_depth_min_db,
                               config.blockage_depth_max_db)
        dwell = stream.uniform(config.blockage_dwell_min_s,
                               config.blockage_dwell_max_s)
        ramp = abs(depth) / decay_db_per_s
        for dt_ev, v in ((0.0, 0.0), (ramp, depth), (ramp + dwell, depth),
                         (2 * ramp + dwell, 0.0)):
            t_pts.append(t + dt_ev)
            v_pts.append(v)
        t += 2 * ramp + dwell + float(stream.exponential(config.blockage_gap_mean_s))
    n = max(1, math.ceil(duration_s / dt - 1e-9))
    grid = np.arange(n) * dt
    values = np.interp(grid, t_pts, v_pts)
    return BlockageTrace(dt, np.minimum(values, 0.0), "synthetic")


BLOCKAGE_HEADER = "blockage-trace v1"


def dump_blockage_trace(trace: BlockageTrace) -> str:
    lines = [f"{BLOCKAGE_HEADER}, dt={trace.dt_s!r}"]
    lines.extend(repr(float(v)) for v in trace.values_db)
    return "\n".join(lines) + "\n"


def import_blockage_trace(path: str | Path, slot_s: float = 125e-6) -> BlockageTrace:
    """Load a trace file and resample it to the slot grid by zero-order hold."""
    text = Path(path).read_text()
    lines = text.splitlines()
    if not lines:
        raise TraceParseError(f"{path}: line 1: empty trace file")
    header = lines[0].strip()
    if not header.startswith(BLOCKAGE_HEADER):
        raise TraceParseError(f"{path}: line 1: expected '{BLOCKAGE_HEADER}, dt=<s>'")
    try:
        dt_in = float(header.split("dt=", 1)[1])
    except (IndexError, ValueError) as exc:
        raise TraceParseError(f"{path}: line 1: bad dt field: {exc}") from exc
    if dt_in <= 0:
        raise TraceParseError(f"{path}: line 1: dt must be > 0")
    values = []
    for lineno, raw in enumerate(lines[1:], start=2):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        try:
            values.append(float(line))
        except ValueError as exc:
            raise TraceParseError(f"{path}: line {lineno}: {exc}") from exc
    if not values:
        raise TraceParseError(f"{path}: no attenuation samples")
    source = np.asarray(values, dtype=float)
    duration = dt_in * source.size
    n_out = max(1, int(round(duration / slot_s)))
    idx = np.minimum((np.arange(n_out) * slot_s / dt_in).astype(np.int64),
                     source.size - 1)
    return BlockageTrace(slot_s, source[idx], "imported")


# -- link budget -----------------------------------------------------------

def dbm_to_mw(x):
    return np.power(10.0, np.asarray(x, dtype=float) / 10.0)


@dataclass(frozen=True)
class FrozenLink:
    """One UE-eNB link with the channel frozen at an instant."""

    link_id: int
    distance_m: float
    state: str = "los"                 # los | nlos
    fading_db: float = 0.0             # shadowing + small-scale composite
    delta_db: float = 0.0              # blockage overlay, applies when nlos


@dataclass(frozen=True)
class FrozenChannel:
    """Frozen multi-link snapshot used for sweeps and link-budget tests."""

    links: tuple[FrozenLink, ...]
    params: PathlossParams
    books: tuple[BeamCodebook, BeamCodebook]   # (eNB, UE)
    tx_power_dbm: float
    noise_power_dbm: float
    optimal_pairs: dict[int, tuple[int, int]] = field(default_factory=dict)

    def _link(self, link_id: int) -> FrozenLink:
        for link in self.links:
            if link.link_id == link_id:
                return link
        raise DomainError(f"unknown link id {link_id}")

    def optimal_pair(self, link_id: int) -> tuple[int, int]:
        return self.optimal_pairs.get(link_id, (0, 0))

    def _rx_power_mw(self, link: FrozenLink, gain_db: float) -> float:
        pl = pathloss_db(link.distance_m, link.state, self.params)
        return float(dbm_to_mw(self.tx_power_dbm + gain_db - pl + link.fading_db))

    def pair_sinr_db(self, link_id: int, ue_dir: int, enb_dir: int) -> float:
        """Wideband SINR for one steering pair, interferers at sidelobes."""
        enb_book, ue_book = self.books
        target = self._link(link_id)
        opt = self.optimal_pair(link_id)
        gain = beam_gain(ue_dir, enb_dir, (opt[0], opt[1]), (ue_book, enb_book))
        signal = self._rx_power_mw(target, gain)
        sidelobe = enb_book.sidelobe_gain_dbi + ue_book.sidelobe_gain_dbi
        interference = sum(
            self._rx_power_mw(link, sidelobe)
            for link in self.links if link.link_id != link_id
        )
        noise = float(dbm_to_mw(self.noise_power_dbm))
        sinr = 10.0 * math.log10(signal / (interference + noise))
        if target.state == "nlos":
            sinr += target.delta_db
        return sinr

    def true_sinr_db(self, link_id: int,
                     dirs: tuple[int, int] | None = None) -> float:
        """SINR at the (by default optimal) steering pair."""
        ue_dir, enb_dir = dirs if dirs is not None else self.optimal_pair(link_id)
        return self.pair_sinr_db(link_id, ue_dir, enb_dir)


def frozen_channel_from_config(config: SimConfig, links: tuple[FrozenLink, ...],
                               optimal_pairs: dict[int, tuple[int, int]] | None = None,
                               ) -> FrozenChannel:
    enb_book, ue_book = codebooks_from_config(config)
    return FrozenChannel(links, PathlossParams.from_config(config),
                         (enb_book, ue_book), config.mmwave_tx_power_dbm,
                         config.noise_power_dbm, optimal_pairs or {})


# -- rate maps -------------------------------------------------------------

def mmwave_rate_bps(sinr_db, config: SimConfig):
    """Downlink rate map: gapped Shannon with a spectral-efficiency cap.

    Zero below the outage threshold.  The gap accounts for practical
    modulation/coding falling short of capacity at low SINR.
    """
    sinr = np.asarray(sinr_db, dtype=float)
    w = config.mmwave_bandwidth_hz
    eff = np.power(10.0, (sinr - config.mmwave_rate_gap_db) / 10.0)
    rate = (1.0 - config.overhead) * np.minimum(
        w * np.log2(1.0 + eff), w * config.se_max_bps_hz)
    rate = np.where(sinr < config.outage_threshold_db, 0.0, rate)
    return float(rate) if np.isscalar(sinr_db) else rate


def lte_rate_bps(snr_db, config: SimConfig):
    """LTE fallback rate: Shannon capped at the maximum spectral efficiency."""
    snr = np.power(10.0, np.asarray(snr_db, dtype=float) / 10.0)
    w = config.lte_bandwidth_hz
    rate = np.minimum(w * np.log2(1.0 + snr), w * config.se_max_bps_hz)
    return float(rate) if np.isscalar(snr_db) else rate


def lte_snr_db(distance_m, config: SimConfig):
    pl = config.lte_pl_alpha_db + config.lte_pl_beta * 10.0 * np.log10(distance_m)
    return config.lte_dl_tx_power_dbm - pl - config.lte_noise_power_dbm


# -- per-run slot-grid traces ----------------------------------------------

@dataclass
class ChannelTraces:
    """Exogenous channel state of one run, sampled per 125 us slot.

    The arrays depend only on (config, master seed), never on control-plane
    decisions, so every architecture/policy cell of a campaign sees the same
    channel for a given run index.
    """

    link_ids: tuple[int, ...]
    slot_ns: int
    n_slots: int
    distance_m: np.ndarray         # (J, K)
    los: np.ndarray                # (J, K) bool
    fading_db: np.ndarray          # (J, K)
    delta_db: np.ndarray           # (J, K), 0 where LOS
    gamma_stat_db: np.ndarray      # (J, K) aligned-beam SINR, no blockage
    gamma_db: np.ndarray           # (J, K) with blockage overlay
    opt_ue_dir: np.ndarray         # (J, K) int8
    opt_enb_dir: np.ndarray        # (J, K) int8
    mmwave_rate_bps: np.ndarray    # (J, K) aligned-beam rate
    lte_rate_bps: np.ndarray       # (K,)
    gain_penalty_ue_db: float
    gain_penalty_enb_db: float

    def link_index(self, link_id: int) -> int:
        return self.link_ids.index(link_id)

    def slot_of_ns(self, t_ns: int) -> int:
        return min(int(t_ns) // self.slot_ns, self.n_slots - 1)


def _smallscale_db(stream: np.random.Generator, t_s: np.ndarray,
                   los: np.ndarray, config: SimConfig) -> np.ndarray:
    """Doppler fading in dB: Ricean in LOS, Rayleigh-like in NLOS."""
    m = config.doppler_paths
    f_doppler = config.ue_speed_mps * config.mmwave_carrier_hz / SPEED_OF_LIGHT
    theta = stream.uniform(0.0, 2.0 * np.pi, size=m)
    phi = stream.uniform(0.0, 2.0 * np.pi, size=m)
    freqs = f_doppler * np.cos(theta)
    phase = 2.0 * np.pi * np.outer(t_s, freqs) + phi
    diffuse = np.exp(1j * phase).sum(axis=1) / math.sqrt(m)
    k_db = np.where(los, config.ricean_k_los_db, config.ricean_k_nlos_db)
    k_lin = np.power(10.0, k_db / 10.0)
    h = np.sqrt(k_lin / (k_lin + 1.0)) + np.sqrt(1.0 / (k_lin + 1.0)) * diffuse
    gain = 20.0 * np.log10(np.maximum(np.abs(h), 1e-12))
    clip = config.smallscale_clip_db
    return np.clip(gain, -clip, clip)


def _shadowing_db(stream: np.random.Generator, n_slots: int,
                  los: np.ndarray, config: SimConfig) -> np.ndarray:
    """Lognormal shadowing, redrawn every shadow period, state-scaled sigma."""
    slots_per_epoch = max(1, int(round(config.shadow_period_s / config.slot_s)))
    n_epochs = (n_slots + slots_per_epoch - 1) // slots_per_epoch
    z = stream.standard_normal(n_epochs)
    per_slot = np.repeat(z, slots_per_epoch)[:n_slots]
    sigma = np.where(los, config.shadow_sigma_los_db, config.shadow_sigma_nlos_db)
    return per_slot * sigma


def build_channel_traces(config: SimConfig, geometry: ScenarioGeometry) -> ChannelTraces:
    """Precompute distances, LOS, fading, blockage, SINR, and rates per slot."""
    streams = config.streams()
    slot_ns = config.slot_ns
    n_slots = config.n_slots
    t_s = np.arange(n_slots) * config.slot_s
    ue_x, ue_y = geometry.trajectory.positions(t_s)

    sites = geometry.sites.mmwave_sites
    link_ids = tuple(s.site_id for s in sites)
    j = len(sites)
    ue_z = geometry.ue_height_m

    distance = np.empty((j, n_slots))
    los = np.empty((j, n_slots), dtype=bool)
    fading = np.empty((j, n_slots))
    delta = np.zeros((j, n_slots))
    opt_ue = np.empty((j, n_slots), dtype=np.int8)
    opt_enb = np.empty((j, n_slots), dtype=np.int8)

    for i, site in enumerate(sites):
        dx = site.x - ue_x
        dy = site.y - ue_y
        distance[i] = np.sqrt(dx * dx + dy * dy + (site.z - ue_z) ** 2)
        los[i] = los_mask(geometry, site, ue_x, ue_y)
        fading_stream = streams.substream("fading", site.site_id)
        fading[i] = (_shadowing_db(fading_stream, n_slots, los[i], config)
                     + _smallscale_db(fading_stream, t_s, los[i], config))
        blockage_stream = streams.substream("blockage", site.site_id)
        trace = synth_blockage_trace(blockage_stream, config.sim_duration_s, config)
        overlay = trace.values_db[:n_slots]
        delta[i, ~los[i]] = overlay[~los[i]]
        opt_ue[i] = direction_index(ue_x, ue_y, site.x, site.y, config.ue_directions)
        opt_enb[i] = direction_index(site.x, site.y, ue_x, ue_y, config.enb_directions)

    params = PathlossParams.from_config(config)
    enb_book, ue_book = codebooks_from_config(config)
    aligned_gain = enb_book.max_gain_dbi + ue_book.max_gain_dbi
    sidelobe_gain = enb_book.sidelobe_gain_dbi + ue_book.sidelobe_gain_dbi

    pl = np.where(
        los,
        params.alpha_los_db + params.beta_los * 10.0 * np.log10(distance),
        params.alpha_nlos_db + params.beta_nlos * 10.0 * np.log10(distance),
    )
    rx_base_dbm = config.mmwave_tx_power_dbm - pl + fading
    signal_mw = dbm_to_mw(rx_base_dbm + aligned_gain)
    interf_mw = dbm_to_mw(rx_base_dbm + sidelobe_gain)
    noise_mw = float(dbm_to_mw(config.noise_power_dbm))
    total_interf = interf_mw.sum(axis=0)
    gamma_stat = 10.0 * np.log10(
        signal_mw / (total_interf - interf_mw + noise_mw))
    gamma = gamma_stat + delta

    lte = geometry.sites.lte_site
    lte_dist = np.sqrt((lte.x - ue_x) ** 2 + (lte.y - ue_y) ** 2
                       + (lte.z - ue_z) ** 2)
    lte_rates = lte_rate_bps(lte_snr_db(lte_dist, config), config)

    return ChannelTraces(
        link_ids=link_ids,
        slot_ns=slot_ns,
        n_slots=n_slots,
        distance_m=distance,
        los=los,
        fading_db=fading,
        delta_db=delta,
        gamma_stat_db=gamma_stat,
        gamma_db=gamma,
        opt_ue_dir=opt_ue,
        opt_enb_dir=opt_enb,
        mmwave_rate_bps=mmwave_rate_bps(gamma, config),
        lte_rate_bps=np.asarray(lte_rates, dtype=float),
        gain_penalty_ue_db=ue_book.max_gain_dbi - ue_book.sidelobe_gain_dbi,
        gain_penalty_enb_db=enb_book.max_gain_dbi - enb_book.sidelobe_gain_dbi,
    )
