"""Run-level KPI computation and Monte Carlo campaign aggregation.

Per run: handover count, packet loss ratio, mean delivery latency, PDCP
throughput sampled on a 5 ms grid, RRC control traffic, and X2 load.
Across runs: per-cell means, population standard deviations, and the
throughput variance-to-mean ratio.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from typing import Iterable

import numpy as np

THROUGHPUT_SAMPLE_S = 5e-3


class AccountingError(RuntimeError):
    """A KPI input contradicts the data-plane bookkeeping."""


def packet_loss_ratio(received: int, t_udp_s: float, t_sim_s: float) -> float:
    """Loss ratio from the received count and the offered-load grid."""
    sent = t_sim_s / t_udp_s
    if received > sent + 1e-9:
        raise AccountingError(
            f"received {received} exceeds offered count {sent}")
    return 1.0 - received * t_udp_s / t_sim_s


def throughput_series(delivered_s: np.ndarray, payload_bytes: int,
                      t_sim_s: float,
                      t_s: float = THROUGHPUT_SAMPLE_S) -> np.ndarray:
    """PDCP throughput in bit/s per t_s window over [0, t_sim)."""
    n_bins = int(round(t_sim_s / t_s))
    edges = np.arange(n_bins + 1) * t_s
    counts, _ = np.histogram(delivered_s, bins=edges)
    return counts * payload_bytes * 8.0 / t_s


def variance_ratio(run_means: Iterable[float]) -> float:
    """Population std over mean of per-run throughput means; NaN if the
    mean is zero."""
    values = np.asarray(list(run_means), dtype=float)
    mean = values.mean()
    if mean <= 0.0:
        return float("nan")
    return float(values.std() / mean)


@dataclass
class KpiSummary:
    """All KPIs of one run plus its campaign-cell coordinates."""

    scenario: str
    architecture: str
    ttt_mode: str
    receiver_parallelism: int
    crt_period_ms: float
    t_udp_us: float
    run_index: int
    seed: int
    handover_count: int
    fast_switch_count: int
    sch_count: int
    hard_handover_count: int
    sent: int
    delivered: int
    dropped_overflow: int
    dropped_segmentation: int
    pending: int
    r_loss: float
    r_loss_audit: float
    mean_latency_s: float
    mean_throughput_bps: float
    throughput_std_within_bps: float
    rrc_bits_per_s: float
    rrc_messages: int
    x2_bits_per_s: float
    x2_pdcp_ratio: float
    lte_serving_fraction: float
    no_service_fraction: float
    wall_time_s: float = 0.0

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def row(self) -> list:
        return [getattr(self, name) for name in self.field_names()]


CELL_KEYS = ("scenario", "architecture", "ttt_mode", "crt_period_ms", "t_udp_us")

AGGREGATED_METRICS = (
    "handover_count", "r_loss", "mean_latency_s", "mean_throughput_bps",
    "rrc_bits_per_s", "x2_bits_per_s", "x2_pdcp_ratio",
)


@dataclass(frozen=True)
class CellAggregate:
    key: tuple
    n_runs: int
    means: dict[str, float]
    stds: dict[str, float]
    r_var: float
    x2_ratio_of_means: float


def aggregate_campaign(runs: list[KpiSummary]) -> list[CellAggregate]:
    """Group runs by campaign cell; report mean/std per metric plus the
    throughput variance ratio and the ratio of X2 to PDCP mean loads."""
    if not runs:
        raise AccountingError("cannot aggregate an empty campaign")
    groups: dict[tuple, list[KpiSummary]] = {}
    for run in runs:
        key = tuple(getattr(run, k) for k in CELL_KEYS)
        groups.setdefault(key, []).append(run)
    out = []
    for key in sorted(groups):
        cell = groups[key]
        means = {}
        stds = {}
        for metric in AGGREGATED_METRICS:
            values = np.asarray([getattr(r, metric) for r in cell], dtype=float)
            means[metric] = float(values.mean())
            stds[metric] = float(values.std())
        r_var = variance_ratio([r.mean_throughput_bps for r in cell])
        x2_mean = means["x2_bits_per_s"]
        pdcp_mean = means["mean_throughput_bps"]
        ratio = x2_mean / pdcp_mean if pdcp_mean > 0 else float("nan")
        out.append(CellAggregate(key, len(cell), means, stds, r_var, ratio))
    return out


# -- CSV output ---------------------------------------------------------------

def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def runs_csv(runs: list[KpiSummary]) -> str:
    lines = [",".join(KpiSummary.field_names())]
    for run in runs:
        lines.append(",".join(_fmt(v) for v in run.row()))
    return "\n".join(lines) + "\n"


def campaign_csv(aggregates: list[CellAggregate]) -> str:
    header = list(CELL_KEYS) + ["n_runs"]
    for metric in AGGREGATED_METRICS:
        header += [f"{metric}_mean", f"{metric}_std"]
    header += ["r_var", "x2_ratio_of_means"]
    lines = [",".join(header)]
    for agg in aggregates:
        row = [_fmt(v) for v in agg.key] + [str(agg.n_runs)]
        for metric in AGGREGATED_METRICS:
            row += [_fmt(agg.means[metric]), _fmt(agg.stds[metric])]
        row += [_fmt(agg.r_var), _fmt(agg.x2_ratio_of_means)]
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def throughput_series_csv(series_by_run: dict[tuple, np.ndarray],
                          t_s: float = THROUGHPUT_SAMPLE_S) -> str:
    lines = ["scenario,architecture,ttt_mode,crt_period_ms,t_udp_us,run_index,t_s,throughput_bps"]
    for key in sorted(series_by_run):
        series = series_by_run[key]
        for i, value in enumerate(series):
            stamp = repr(i * t_s)
            lines.append(",".join(list(map(_fmt, key)) + [stamp, repr(float(value))]))
    return "\n".join(lines) + "\n"
