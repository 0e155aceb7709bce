"""Glue that executes one seeded simulation run end to end.

A run is: build the scenario from the seed, precompute the exogenous
channel and sweep series on the slot/CRT grids, then interleave the
control-plane event loop with batched data-plane advances.  The channel is
independent of control decisions, so every campaign cell sharing a run
index sees an identical channel realization (paired comparisons).
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .channel import ChannelTraces, build_channel_traces
from .control import Coordinator
from .dataplane import Dataplane
from .engine import EventQueue, SimConfig
from .measurement import SweepSeries, build_sweep_series
from .metrics import (KpiSummary, packet_loss_ratio, throughput_series)
from .scenario import ScenarioGeometry, build_scenario


@dataclass
class RunResult:
    summary: KpiSummary
    throughput_bps: np.ndarray
    event_log: list | None = None
    dataplane: Dataplane | None = None
    coordinator: Coordinator | None = None


def prepare_run(config: SimConfig) -> tuple[ScenarioGeometry, ChannelTraces, SweepSeries]:
    geometry = build_scenario(config, config.streams().substream("building"))
    traces = build_channel_traces(config, geometry)
    series = build_sweep_series(config, traces)
    return geometry, traces, series


def simulate_run(config: SimConfig, run_index: int = 0,
                 keep_state: bool = False,
                 collect_log: bool = False) -> RunResult:
    """Execute one run and reduce it to a KPI summary."""
    t_start = time.perf_counter()
    geometry, traces, series = prepare_run(config)
    queue = EventQueue()
    dp = Dataplane(config, traces)
    event_log: list | None = [] if collect_log else None
    coord = Coordinator(config, queue, dp, series, event_log)
    coord.initial_attach()
    coord.schedule_crts()

    t_end_ns = config.sim_duration_ns
    queue.run_until_ns(t_end_ns,
                       before_fire=lambda ev: dp.advance(ev.fire_time_ns))
    dp.finalize(t_end_ns)

    counts = dp.fate_counts()
    if counts["pending"] != dp.structural_pending():
        raise RuntimeError(
            f"conservation audit failed: fate pending {counts['pending']} != "
            f"structural {dp.structural_pending()}")

    delivered_mask = dp.fate == 1
    delivered_s = dp.delivered_ns[delivered_mask] / 1e9
    created_s = (np.nonzero(delivered_mask)[0] * config.udp_interarrival_ns) / 1e9
    latencies = dp.delivered_ns[delivered_mask] / 1e9 - created_s
    mean_latency = float(latencies.mean()) if latencies.size else float("nan")

    series_bps = throughput_series(delivered_s, config.udp_payload_bytes,
                                   config.sim_duration_s)
    mean_throughput = (counts["delivered"] * config.udp_payload_bytes * 8.0
                       / config.sim_duration_s)
    within_std = float(series_bps.std())

    r_loss = packet_loss_ratio(counts["delivered"], config.udp_interarrival_s,
                               config.sim_duration_s)
    r_loss_audit = 1.0 - counts["delivered"] / counts["sent"]

    x2_total_bits = float(dp.x2_bytes.sum()) * 8.0
    x2_bps = x2_total_bits / config.sim_duration_s
    rrc_bps = coord.rrc_bytes * 8.0 / config.sim_duration_s

    t_sim_ns = config.sim_duration_ns
    lte_frac = dp.serving_time_ns.get("lte", 0) / t_sim_ns
    none_frac = dp.serving_time_ns.get(None, 0) / t_sim_ns

    summary = KpiSummary(
        scenario=config.scenario,
        architecture=config.architecture,
        ttt_mode=config.ttt_mode,
        receiver_parallelism=config.receiver_parallelism,
        crt_period_ms=config.crt_period_s * 1e3,
        t_udp_us=config.udp_interarrival_s * 1e6,
        run_index=run_index,
        seed=config.seed,
        handover_count=coord.handover_count,
        fast_switch_count=(coord.counts["fast-switch-lte"]
                           + coord.counts["fast-switch-mmwave"]),
        sch_count=coord.counts["sch"],
        hard_handover_count=(coord.counts["hard-handover"]
                             + coord.counts["initial-access-lte"]),
        sent=counts["sent"],
        delivered=counts["delivered"],
        dropped_overflow=counts["dropped_overflow"],
        dropped_segmentation=counts["dropped_segmentation"],
        pending=counts["pending"],
        r_loss=r_loss,
        r_loss_audit=r_loss_audit,
        mean_latency_s=mean_latency,
        mean_throughput_bps=mean_throughput,
        throughput_std_within_bps=within_std,
        rrc_bits_per_s=rrc_bps,
        rrc_messages=coord.rrc_messages,
        x2_bits_per_s=x2_bps,
        x2_pdcp_ratio=(x2_bps / mean_throughput if mean_throughput > 0
                       else float("nan")),
        lte_serving_fraction=lte_frac,
        no_service_fraction=none_frac,
        wall_time_s=time.perf_counter() - t_start,
    )
    return RunResult(summary, series_bps, event_log,
                     dp if keep_state else None,
                     coord if keep_state else None)
