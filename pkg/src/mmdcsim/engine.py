"""Deterministic discrete-event core.

Virtual time is integer nanoseconds internally so long runs cannot drift;
seconds appear only at the API surface.  Events with equal fire times fire
in insertion order, which together with named random substreams makes a run
bit-reproducible from its master seed.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field, fields, replace
from typing import Any, Callable, Optional

import numpy as np

NS_PER_S = 1_000_000_000
SLOT_S = 125e-6
SLOT_NS = 125_000

EVENT_KINDS = frozenset({
    "slot-tick",
    "srs-sweep-step",
    "crt-ready",
    "ttt-expiry",
    "packet-arrival",
    "link-service",
    "x2-delivery",
    "mme-delivery",
    "procedure-step",
})

STREAM_NAMES = ("building", "fading", "blockage", "estimation")


class ConfigError(ValueError):
    """Invalid configuration value or contract misuse."""


def s_to_ns(t: float) -> int:
    return int(round(t * NS_PER_S))


def ns_to_s(t: int) -> float:
    return t / NS_PER_S


@dataclass
class SimEvent:
    fire_time_ns: int
    sequence: int
    kind: str
    payload: Any = None
    callback: Optional[Callable[["SimEvent"], None]] = None
    cancelled: bool = False

    def __lt__(self, other: "SimEvent") -> bool:
        return (self.fire_time_ns, self.sequence) < (other.fire_time_ns, other.sequence)

    @property
    def fire_time_s(self) -> float:
        return ns_to_s(self.fire_time_ns)


class EventHandle:
    """Cancellation token for a scheduled event."""

    __slots__ = ("event",)

    def __init__(self, event: SimEvent):
        self.event = event

    def cancel(self) -> None:
        self.event.cancelled = True

    @property
    def cancelled(self) -> bool:
        return self.event.cancelled


class EventQueue:
    """Virtual-clock event queue with FIFO tie-breaking at equal times."""

    def __init__(self) -> None:
        self.clock_ns: int = 0
        self._heap: list[SimEvent] = []
        self._next_sequence: int = 0
        self.fired_count: int = 0

    @property
    def clock_s(self) -> float:
        return ns_to_s(self.clock_ns)

    def schedule_ns(self, fire_time_ns: int, kind: str, payload: Any = None,
                    callback: Optional[Callable[[SimEvent], None]] = None) -> EventHandle:
        if kind not in EVENT_KINDS:
            raise ConfigError(f"unknown event kind {kind!r}")
        if fire_time_ns < self.clock_ns:
            raise ConfigError(
                f"cannot schedule event at {fire_time_ns} ns: clock is {self.clock_ns} ns"
            )
        event = SimEvent(fire_time_ns, self._next_sequence, kind, payload, callback)
        self._next_sequence += 1
        heapq.heappush(self._heap, event)
        return EventHandle(event)

    def schedule(self, fire_time_s: float, kind: str, payload: Any = None,
                 callback: Optional[Callable[[SimEvent], None]] = None) -> EventHandle:
        return self.schedule_ns(s_to_ns(fire_time_s), kind, payload, callback)

    def _drop_cancelled(self) -> None:
        while self._heap and self._heap[0].cancelled:
            heapq.heappop(self._heap)

    def peek_ns(self) -> Optional[int]:
        self._drop_cancelled()
        return self._heap[0].fire_time_ns if self._heap else None

    def pending(self) -> int:
        return sum(1 for ev in self._heap if not ev.cancelled)

    def run_until(self, t_end_s: float,
                  before_fire: Optional[Callable[[SimEvent], None]] = None) -> int:
        return self.run_until_ns(s_to_ns(t_end_s), before_fire)

    def run_until_ns(self, t_end_ns: int,
                     before_fire: Optional[Callable[[SimEvent], None]] = None) -> int:
        """Fire all events with fire_time <= t_end; leave the clock at t_end."""
        if t_end_ns < self.clock_ns:
            raise ConfigError("run_until target is in the past")
        fired = 0
        while True:
            self._drop_cancelled()
            if not self._heap or self._heap[0].fire_time_ns > t_end_ns:
                break
            event = heapq.heappop(self._heap)
            self.clock_ns = event.fire_time_ns
            if before_fire is not None:
                before_fire(event)
            if event.callback is not None:
                event.callback(event)
            fired += 1
        self.clock_ns = t_end_ns
        self.fired_count += fired
        return fired


@dataclass(frozen=True)
class RngStreams:
    """Named independent random substreams derived from one master seed."""

    master_seed: int

    def substream(self, name: str, *keys: int) -> np.random.Generator:
        if name not in STREAM_NAMES:
            raise ConfigError(f"unknown random substream {name!r}")
        index = STREAM_NAMES.index(name)
        seq = np.random.SeedSequence(self.master_seed, spawn_key=(index, *keys))
        return np.random.Generator(np.random.PCG64(seq))


@dataclass
class SimConfig:
    """One simulation run's parameters.

    Defaults reproduce the reference urban-grid campaign setup; every field
    can be overridden from a config file or CLI flag.
    """

    # mmWave radio
    mmwave_bandwidth_hz: float = 1e9
    mmwave_carrier_hz: float = 28e9
    mmwave_tx_power_dbm: float = 30.0
    # LTE radio
    lte_bandwidth_hz: float = 20e6
    lte_carrier_hz: float = 2.1e9
    lte_dl_tx_power_dbm: float = 30.0
    lte_ul_tx_power_dbm: float = 25.0
    # receiver / thresholds
    noise_figure_db: float = 5.0
    outage_threshold_db: float = -5.0
    # beam codebooks (uniform planar arrays)
    enb_array_elements: int = 64       # 8x8
    ue_array_elements: int = 16        # 4x4
    enb_directions: int = 16
    ue_directions: int = 8
    sidelobe_gain_db: float = -10.0
    # uplink sounding
    srs_duration_s: float = 10e-6
    srs_period_s: float = 200e-6
    overhead: float = 0.05
    # mobility / scenario
    ue_speed_mps: float = 5.0
    ue_height_m: float = 1.5
    enb_height_m: float = 10.0
    scenario: str = "default"          # default | corner
    n_buildings: int = 4
    building_side_min_m: float = 20.0
    building_side_max_m: float = 60.0
    building_height_min_m: float = 5.0
    building_height_max_m: float = 40.0
    # buffering / transport
    rlc_buffer_bytes: int = 10 * 1024 * 1024
    x2_delay_s: float = 1e-3
    mme_delay_s: float = 10e-3
    s1_delay_s: float = 1e-3
    udp_interarrival_s: float = 20e-6
    udp_payload_bytes: int = 1024
    # architecture / control cadence
    architecture: str = "dc"           # dc | hh
    ttt_mode: str = "dynamic"          # fixed | dynamic
    receiver_parallelism: int = 16     # L; the CRT period follows from it
    slot_s: float = SLOT_S
    sim_duration_s: float = 20.0
    seed: int = 1
    # pathloss (28 GHz urban measurement fits, configurable)
    pl_alpha_los_db: float = 61.4
    pl_beta_los: float = 2.0
    pl_alpha_nlos_db: float = 72.0
    pl_beta_nlos: float = 2.92
    lte_pl_alpha_db: float = 38.9
    lte_pl_beta: float = 3.0
    # fading
    shadow_sigma_los_db: float = 4.0
    shadow_sigma_nlos_db: float = 7.0
    shadow_period_s: float = 0.1
    smallscale_clip_db: float = 15.0
    ricean_k_los_db: float = 9.0
    ricean_k_nlos_db: float = 0.0
    doppler_paths: int = 8
    # blockage trace synthesis
    blockage_decay_db_per_ms: float = 0.2
    blockage_depth_min_db: float = -40.0
    blockage_depth_max_db: float = -25.0
    blockage_dwell_min_s: float = 0.25
    blockage_dwell_max_s: float = 0.55
    blockage_gap_mean_s: float = 2.00
    # link-rate maps
    se_max_bps_hz: float = 4.8
    mmwave_rate_gap_db: float = 8.0    # coding/implementation gap to capacity
    # measurement chain
    filter_eta: float = 0.25
    est_noise_sigma_lo_db: float = 3.0
    est_noise_sigma_hi_db: float = 0.5
    est_noise_lo_at_db: float = 0.0
    est_noise_hi_at_db: float = 20.0
    # time-to-trigger policy
    ttt_fixed_s: float = 0.150
    ttt_max_s: float = 0.150
    ttt_min_s: float = 0.025
    ttt_delta_min_db: float = 3.0
    ttt_delta_max_db: float = 8.0
    retarget_margin_db: float = 3.0
    # procedure durations
    lte_air_delay_s: float = 1e-3
    t_ra_s: float = 5e-3
    t_ia_s: float = 30e-3
    # RRC message sizes
    n_bearers: int = 1
    rrc_switch_bytes_per_bearer: int = 1
    rrc_reconf_bytes: int = 59
    rrc_reconf_hh_bytes: int = 130
    rrc_complete_bytes: int = 13
    x2_control_bytes: int = 8
    rt_report_bytes: int = 10

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        if self.architecture not in ("dc", "hh"):
            raise ConfigError(
                f"architecture must be 'dc' or 'hh', got {self.architecture!r}")
        if self.ttt_mode not in ("fixed", "dynamic"):
            raise ConfigError(
                f"ttt_mode must be 'fixed' or 'dynamic', got {self.ttt_mode!r}")
        if self.scenario not in ("default", "corner"):
            raise ConfigError(
                f"scenario must be 'default' or 'corner', got {self.scenario!r}")
        positive = (
            "mmwave_bandwidth_hz", "mmwave_carrier_hz", "lte_bandwidth_hz",
            "srs_duration_s", "srs_period_s", "ue_speed_mps", "slot_s",
            "sim_duration_s", "udp_interarrival_s", "udp_payload_bytes",
            "rlc_buffer_bytes", "x2_delay_s", "mme_delay_s",
            "enb_directions", "ue_directions", "filter_eta", "n_bearers",
        )
        for name in positive:
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be > 0, got {getattr(self, name)}")
        if not (0 < self.filter_eta <= 1.0):
            raise ConfigError(f"filter_eta must be in (0, 1], got {self.filter_eta}")
        if not (1 <= self.receiver_parallelism <= self.enb_directions):
            raise ConfigError(
                "receiver_parallelism must be in [1, enb_directions]="
                f"[1, {self.enb_directions}], got {self.receiver_parallelism}")
        expected = self.srs_duration_s / self.srs_period_s
        if abs(self.overhead - expected) > 1e-9 * max(abs(expected), 1e-30):
            raise ConfigError(
                f"overhead must equal srs_duration_s/srs_period_s={expected!r} "
                f"within 1e-9 relative, got {self.overhead!r}")
        if not (self.ttt_min_s <= self.ttt_max_s):
            raise ConfigError("ttt_min_s must not exceed ttt_max_s")
        if not (self.ttt_delta_min_db < self.ttt_delta_max_db):
            raise ConfigError("ttt_delta_min_db must be below ttt_delta_max_db")

    # -- derived quantities -------------------------------------------------

    @property
    def crt_period_s(self) -> float:
        """CRT intergeneration delay for the configured receiver parallelism."""
        return (self.enb_directions * self.ue_directions * self.srs_period_s
                / self.receiver_parallelism)

    @property
    def slot_ns(self) -> int:
        return s_to_ns(self.slot_s)

    @property
    def sim_duration_ns(self) -> int:
        return s_to_ns(self.sim_duration_s)

    @property
    def n_slots(self) -> int:
        return self.sim_duration_ns // self.slot_ns

    @property
    def udp_interarrival_ns(self) -> int:
        return s_to_ns(self.udp_interarrival_s)

    @property
    def packets_sent(self) -> int:
        return self.sim_duration_ns // self.udp_interarrival_ns

    @property
    def noise_power_dbm(self) -> float:
        return -174.0 + 10.0 * np.log10(self.mmwave_bandwidth_hz) + self.noise_figure_db

    @property
    def lte_noise_power_dbm(self) -> float:
        return -174.0 + 10.0 * np.log10(self.lte_bandwidth_hz) + self.noise_figure_db

    def streams(self) -> RngStreams:
        return RngStreams(self.seed)

    def replace(self, **changes: Any) -> "SimConfig":
        return replace(self, **changes)

    @classmethod
    def field_names(cls) -> tuple[str, ...]:
        return tuple(f.name for f in fields(cls))
