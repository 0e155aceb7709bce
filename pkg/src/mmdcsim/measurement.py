"""Uplink measurement chain: directional SRS sweeps, per-cell report tables,
the coordinator's complete report table, and first-order SINR filtering.

A full sweep of all UE x eNB directions costs N_eNB*N_UE*T_per/L seconds,
which is also the CRT intergeneration period.  The whole sweep is modeled as
an atomic measurement at the window end with the channel frozen there; the
report tables then ride an X2 link to the coordinator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import lfilter

from .channel import ChannelTraces, FrozenChannel
from .engine import ConfigError, SimConfig

BELOW_THRESHOLD = "below-threshold"


class DomainError(ValueError):
    pass


def crt_delay(n_enb: int, n_ue: int, t_per: float, l: int) -> float:
    """Seconds to fill one report table: n_enb*n_ue*t_per/l.

    l is the number of directions the receiver can observe at once
    (1 analog, n_enb fully digital).
    """
    if l <= 0:
        raise DomainError("receiver parallelism l must be >= 1")
    if n_enb <= 0 or n_ue <= 0 or t_per <= 0:
        raise DomainError("direction counts and period must be positive")
    if l > n_enb:
        raise DomainError("receiver parallelism cannot exceed n_enb")
    return n_enb * n_ue * t_per / l


def estimate_noise_sigma(true_sinr_db: float, config: SimConfig) -> float:
    """Estimation-noise sigma, interpolating from sigma_lo to sigma_hi."""
    lo_at, hi_at = config.est_noise_lo_at_db, config.est_noise_hi_at_db
    frac = np.clip((true_sinr_db - lo_at) / (hi_at - lo_at), 0.0, 1.0)
    return float(config.est_noise_sigma_lo_db
                 + frac * (config.est_noise_sigma_hi_db - config.est_noise_sigma_lo_db))


def estimate_noise(true_sinr_db: float, stream: np.random.Generator,
                   config: SimConfig) -> float:
    """Raw estimate: the true value plus SINR-dependent Gaussian dB noise."""
    sigma = estimate_noise_sigma(true_sinr_db, config)
    return true_sinr_db + sigma * float(stream.standard_normal())


@dataclass
class FilterState:
    """First-order recursive filter state for one (UE, eNB) pair."""

    eta: float
    value_db: float | None = None

    def __post_init__(self) -> None:
        if not (0.0 < self.eta <= 1.0):
            raise ConfigError(f"filter eta must be in (0, 1], got {self.eta}")


def filter_step(state: FilterState, raw_db: float) -> float:
    """Blend the new raw sample into the running estimate and return it."""
    if state.value_db is None:
        state.value_db = raw_db
    else:
        state.value_db = (1.0 - state.eta) * state.value_db + state.eta * raw_db
    return state.value_db


def filter_series(raw_db: np.ndarray, eta: float) -> np.ndarray:
    """Vectorized first-order filter over a raw sample sequence.

    Initialized at the first raw sample to avoid cold-start bias.
    """
    if raw_db.size == 0:
        return raw_db.copy()
    zi = np.array([(1.0 - eta) * raw_db[0]])
    out, _ = lfilter([eta], [1.0, -(1.0 - eta)], raw_db, zi=zi)
    return out


# -- report tables ----------------------------------------------------------

@dataclass(frozen=True)
class RtRow:
    ue_id: int
    best_sinr_db: float
    best_pair: tuple[int, int]      # (UE direction, eNB direction)
    stale: bool = False


@dataclass(frozen=True)
class ReportTable:
    enb_id: int
    rows: tuple[RtRow, ...]

    def row(self, ue_id: int) -> RtRow | None:
        for r in self.rows:
            if r.ue_id == ue_id:
                return r
        return None


@dataclass(frozen=True)
class CrtEntry:
    sinr_db: float
    best_pair: tuple[int, int]
    outage: bool


@dataclass(frozen=True)
class CompleteReportTable:
    generation_time_s: float
    period_s: float
    enb_ids: tuple[int, ...]
    rows: dict[int, dict[int, CrtEntry]]    # ue_id -> enb_id -> entry

    def entry(self, ue_id: int, enb_id: int) -> CrtEntry:
        return self.rows[ue_id][enb_id]


def sweep_link(frozen: FrozenChannel, link_id: int, n_ue: int, n_enb: int,
               filt: FilterState, stream: np.random.Generator | None,
               config: SimConfig):
    """One full directional sweep of a link with the channel frozen.

    Evaluates a noisy estimate for every (UE, eNB) steering pair, feeds the
    maximum through the link's first-order filter, and returns
    ``(best_pair, raw_db, filtered_db)`` or BELOW_THRESHOLD when the
    filtered estimate sits under the outage threshold.
    """
    best_pair = (0, 0)
    best_raw = -math.inf
    for ue_dir in range(n_ue):
        for enb_dir in range(n_enb):
            sinr = frozen.pair_sinr_db(link_id, ue_dir, enb_dir)
            raw = sinr if stream is None else estimate_noise(sinr, stream, config)
            if raw > best_raw:
                best_raw = raw
                best_pair = (ue_dir, enb_dir)
    filtered = filter_step(filt, best_raw)
    if filtered < config.outage_threshold_db:
        return BELOW_THRESHOLD
    return best_pair, best_raw, filtered


def assemble_crt(rts: list[ReportTable], generation_time_s: float,
                 period_s: float, config: SimConfig) -> CompleteReportTable:
    """Coordinator-side merge of per-cell report tables.

    Values pass through unchanged (filtering happened at the cells); rows
    missing or stale become outage entries.
    """
    enb_ids = tuple(rt.enb_id for rt in rts)
    ue_ids = sorted({row.ue_id for rt in rts for row in rt.rows})
    rows: dict[int, dict[int, CrtEntry]] = {}
    for ue_id in ue_ids or [0]:
        row: dict[int, CrtEntry] = {}
        for rt in rts:
            r = rt.row(ue_id)
            if r is None or r.stale or r.best_sinr_db < config.outage_threshold_db:
                sinr = r.best_sinr_db if r is not None else -math.inf
                pair = r.best_pair if r is not None else (0, 0)
                row[rt.enb_id] = CrtEntry(sinr, pair, outage=True)
            else:
                row[rt.enb_id] = CrtEntry(r.best_sinr_db, r.best_pair, outage=False)
        rows[ue_id] = row
    return CompleteReportTable(generation_time_s, period_s, enb_ids, rows)


# -- per-run sweep series ----------------------------------------------------

@dataclass
class SweepSeries:
    """All sweep results of a run, precomputed on the CRT cadence.

    Index 0 is the bootstrap sweep at t=0 used for initial attachment; CRTs
    proper are generated at {D, 2D, ...}.  The channel is exogenous, so this
    depends only on (config, seed) - identical across architecture cells.
    """

    times_ns: np.ndarray           # (N+1,) sweep completion times
    link_ids: tuple[int, ...]
    raw_db: np.ndarray             # (J, N+1) noisy best-pair estimates
    filtered_db: np.ndarray        # (J, N+1)
    outage: np.ndarray             # (J, N+1) bool, filtered below threshold
    pair_ue: np.ndarray            # (J, N+1) int8
    pair_enb: np.ndarray           # (J, N+1) int8
    true_db: np.ndarray            # (J, N+1) frozen true SINR at sweep time

    @property
    def n_crts(self) -> int:
        return self.times_ns.size - 1


def build_sweep_series(config: SimConfig, traces: ChannelTraces) -> SweepSeries:
    """Sample, perturb, and filter the per-link SINR on the CRT cadence.

    The estimation noise is drawn once per (link, sweep) and applied to the
    winning pair: every losing pair sits at least one beam-gain step (tens
    of dB) below the winner, so pair-level draws cannot change the argmax.
    """
    from .engine import s_to_ns

    d_ns = s_to_ns(config.crt_period_s)
    n_crts = config.sim_duration_ns // d_ns
    times = np.arange(n_crts + 1, dtype=np.int64) * d_ns
    slots = np.minimum(times // traces.slot_ns, traces.n_slots - 1).astype(np.int64)
    j = len(traces.link_ids)

    true_db = traces.gamma_db[:, slots]
    streams = config.streams()
    raw = np.empty_like(true_db)
    for i, link_id in enumerate(traces.link_ids):
        stream = streams.substream("estimation", link_id)
        lo, hi = config.est_noise_sigma_lo_db, config.est_noise_sigma_hi_db
        frac = np.clip((true_db[i] - config.est_noise_lo_at_db)
                       / (config.est_noise_hi_at_db - config.est_noise_lo_at_db),
                       0.0, 1.0)
        sigma = lo + frac * (hi - lo)
        raw[i] = true_db[i] + sigma * stream.standard_normal(times.size)

    filtered = np.vstack([filter_series(raw[i], config.filter_eta)
                          for i in range(j)])
    outage = filtered < config.outage_threshold_db
    return SweepSeries(
        times_ns=times,
        link_ids=traces.link_ids,
        raw_db=raw,
        filtered_db=filtered,
        outage=outage,
        pair_ue=traces.opt_ue_dir[:, slots],
        pair_enb=traces.opt_enb_dir[:, slots],
        true_db=true_db,
    )


def crt_from_series(series: SweepSeries, index: int, period_s: float,
                    config: SimConfig, ue_id: int = 0) -> CompleteReportTable:
    """Materialize the coordinator's CRT for one sweep index."""
    rts = []
    for i, enb_id in enumerate(series.link_ids):
        row = RtRow(
            ue_id=ue_id,
            best_sinr_db=float(series.filtered_db[i, index]),
            best_pair=(int(series.pair_ue[i, index]), int(series.pair_enb[i, index])),
            stale=bool(series.outage[i, index]),
        )
        rts.append(ReportTable(enb_id, (row,)))
    generation_time_s = series.times_ns[index] / 1e9
    return assemble_crt(rts, generation_time_s, period_s, config)
