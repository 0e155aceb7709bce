"""Coordinator logic: cell selection from the CRT, fixed/dynamic
time-to-trigger secondary-cell handover, fast RAT switching, the
hard-handover baseline, and RRC message-size accounting.

Decision rules, in priority order, evaluated at every CRT delivery:
  (a) every mmWave cell in outage        -> fall back to LTE
  (b) serving mmWave in outage, some
      other cell usable                  -> immediate handover, no TTT
  (c) serving LTE, some mmWave usable    -> return to mmWave
  (d) a better non-serving mmWave cell   -> arm a TTT, with the 3 dB
      third-cell retarget rule while pending
  (e) TTT expiry with the condition
      still holding                      -> SCH (DC) or hard handover (HH)
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

from .dataplane import Dataplane
from .engine import ConfigError, EventHandle, EventQueue, SimConfig, s_to_ns
from .measurement import CompleteReportTable, SweepSeries, crt_from_series

LTE = "lte"


@dataclass(frozen=True)
class TttPolicy:
    mode: str = "dynamic"            # fixed | dynamic
    fixed_s: float = 0.150
    ttt_max_s: float = 0.150
    ttt_min_s: float = 0.025
    delta_min_db: float = 3.0
    delta_max_db: float = 8.0

    @classmethod
    def from_config(cls, config: SimConfig) -> "TttPolicy":
        return cls(config.ttt_mode, config.ttt_fixed_s, config.ttt_max_s,
                   config.ttt_min_s, config.ttt_delta_min_db,
                   config.ttt_delta_max_db)


def ttt_duration(delta_db: float, policy: TttPolicy) -> float:
    """Dwell time before a pending handover executes.

    Fixed mode always waits the full window; dynamic mode shrinks the wait
    linearly as the candidate's SINR advantage grows, clamped to
    [ttt_min, ttt_max].
    """
    if policy.mode == "fixed":
        return policy.fixed_s
    span = policy.ttt_max_s - policy.ttt_min_s
    frac = (delta_db - policy.delta_min_db) / (policy.delta_max_db - policy.delta_min_db)
    value = policy.ttt_max_s - frac * span
    return min(policy.ttt_max_s, max(policy.ttt_min_s, value))


@dataclass
class RrcMessage:
    kind: str                      # connection-switch | connection-reconfiguration
    size_bytes: int                # | reconfiguration-completed | other-control
    carried_over: str = "lte-air"  # lte-air | mmwave-air


def rrc_traffic_bytes(msg: RrcMessage) -> int:
    """On-air size of one control message, for traffic accounting."""
    return msg.size_bytes


def make_switch_message(config: SimConfig) -> RrcMessage:
    return RrcMessage("connection-switch",
                      config.n_bearers * config.rrc_switch_bytes_per_bearer)


def make_reconfiguration_message(config: SimConfig, hard: bool) -> RrcMessage:
    size = config.rrc_reconf_hh_bytes if hard else config.rrc_reconf_bytes
    return RrcMessage("connection-reconfiguration", size)


def make_completed_message(config: SimConfig) -> RrcMessage:
    return RrcMessage("reconfiguration-completed", config.rrc_complete_bytes,
                      "mmwave-air")


@dataclass
class PendingTtt:
    target: int
    armed_at_s: float
    duration_s: float
    delta_db: float
    handle: Optional[EventHandle] = None


@dataclass
class InProcedure:
    kind: str
    completion_s: float


@dataclass
class ConnectionState:
    architecture: str = "dc"                       # dc | hh
    serving: object = LTE                          # LTE or mmWave cell id
    pending_ttt: Optional[PendingTtt] = None
    in_procedure: Optional[InProcedure] = None


@dataclass(frozen=True)
class Decision:
    action: str          # no-op | arm-ttt | cancel-ttt | retarget-ttt |
    #                      fast-switch-lte | fast-switch-mmwave | sch |
    #                      hard-handover | initial-access-lte
    target: object = None
    delta_db: float = 0.0
    reason: str = ""


def coordinator_decide(crt: CompleteReportTable, state: ConnectionState,
                       policy: TttPolicy, config: SimConfig, now_s: float,
                       ue_id: int = 0) -> Decision:
    """Pick the next control action from a fresh CRT row."""
    if state.in_procedure is not None:
        return Decision("no-op", reason="procedure in flight")
    if now_s - crt.generation_time_s >= crt.period_s:
        return Decision("no-op", reason="stale crt")
    row = crt.rows[ue_id]
    usable = {j: e for j, e in row.items() if not e.outage}

    if state.serving == LTE:
        if not usable:
            return Decision("no-op", reason="no mmWave cell usable")
        best = max(usable, key=lambda j: usable[j].sinr_db)
        if state.architecture == "dc":
            return Decision("fast-switch-mmwave", best, reason="mmWave available")
        return Decision("hard-handover", best, reason="mmWave available")

    serving = state.serving
    if not usable:
        if state.architecture == "dc":
            return Decision("fast-switch-lte", LTE, reason="all cells in outage")
        return Decision("initial-access-lte", LTE, reason="all cells in outage")
    if serving not in usable:
        best = max(usable, key=lambda j: usable[j].sinr_db)
        if state.architecture == "dc":
            return Decision("sch", best, reason="serving cell in outage")
        return Decision("hard-handover", best, reason="serving cell in outage")

    best = max(usable, key=lambda j: usable[j].sinr_db)
    serving_db = usable[serving].sinr_db
    pending = state.pending_ttt
    if pending is not None and (pending.target not in usable):
        return Decision("cancel-ttt", reason="pending target went to outage")
    if best != serving and usable[best].sinr_db > serving_db:
        delta = usable[best].sinr_db - serving_db
        if pending is None:
            return Decision("arm-ttt", best, delta, "candidate above serving")
        if best == pending.target:
            return Decision("tighten-ttt", best, delta,
                            "re-evaluate dwell for the pending target")
        gain_over_target = usable[best].sinr_db - usable[pending.target].sinr_db
        if gain_over_target >= config.retarget_margin_db:
            return Decision("retarget-ttt", best, delta,
                            "third cell clearly better than target")
        return Decision("no-op", reason="third cell within retarget margin")
    if pending is not None:
        return Decision("cancel-ttt", reason="serving regained the maximum")
    return Decision("no-op", reason="serving cell already best")


class Coordinator:
    """Applies decisions to the data plane and runs procedure timelines."""

    def __init__(self, config: SimConfig, queue: EventQueue, dp: Dataplane,
                 series: SweepSeries, event_log: Optional[list] = None):
        self.config = config
        self.queue = queue
        self.dp = dp
        self.series = series
        self.policy = TttPolicy.from_config(config)
        self.state = ConnectionState(architecture=config.architecture)
        self.latest_crt: Optional[CompleteReportTable] = None
        self.rrc_bytes = 0
        self.rrc_messages = 0
        self.counts = {"fast-switch-lte": 0, "fast-switch-mmwave": 0,
                       "sch": 0, "hard-handover": 0, "initial-access-lte": 0}
        self.event_log = event_log
        # precomputed delays in ns
        self.d_x2 = s_to_ns(config.x2_delay_s)
        self.d_air = s_to_ns(config.lte_air_delay_s)
        self.d_mme = s_to_ns(config.mme_delay_s)
        self.t_ra = s_to_ns(config.t_ra_s)
        self.t_ia = s_to_ns(config.t_ia_s)
        self.s1 = s_to_ns(config.s1_delay_s)
        self.beam_search = s_to_ns(config.crt_period_s)

    # -- logging / accounting -------------------------------------------------

    def _log(self, t_ns: int, kind: str, source, target, detail: str = "") -> None:
        if self.event_log is not None:
            self.event_log.append((t_ns / 1e9, kind, str(source), str(target), detail))

    def _rrc(self, msg: RrcMessage) -> None:
        self.rrc_bytes += rrc_traffic_bytes(msg)
        self.rrc_messages += 1

    @property
    def handover_count(self) -> int:
        return sum(self.counts.values())

    # -- run wiring -------------------------------------------------------------

    def initial_attach(self) -> None:
        """Bootstrap attachment from the sweep at t=0 (no procedure cost)."""
        crt = crt_from_series(self.series, 0, self.config.crt_period_s, self.config)
        self.latest_crt = crt
        row = crt.rows[0]
        usable = {j: e for j, e in row.items() if not e.outage}
        if usable:
            best = max(usable, key=lambda j: usable[j].sinr_db)
            self.state.serving = best
            self.dp.set_beam_pair(best, row[best].best_pair)
            self.dp.set_serving(best, 0)
            if self.config.architecture == "dc":
                self.dp.set_route(best, self.d_x2, (1, best))
            else:
                self.dp.set_route(best, self.s1, None)
        else:
            self.state.serving = LTE
            self.dp.set_serving(LTE, 0)
            self.dp.set_route(LTE, 0 if self.config.architecture == "dc" else self.s1,
                              None)
        self._log(0, "initial-attach", "-", self.state.serving)

    def schedule_crts(self) -> None:
        """One srs-sweep completion per CRT period; delivery rides X2."""
        for n in range(1, self.series.n_crts + 1):
            t_sweep = int(self.series.times_ns[n])
            if t_sweep > self.config.sim_duration_ns:
                break
            self.queue.schedule_ns(t_sweep, "srs-sweep-step", payload=n,
                                   callback=self._on_sweep)

    def _on_sweep(self, event) -> None:
        n = event.payload
        # per-cell report tables ride the X2 links to the coordinator
        for link_id in self.series.link_ids:
            self.dp.count_x2(1, link_id, self.config.rt_report_bytes)
        t_ready = event.fire_time_ns + self.d_x2
        self.queue.schedule_ns(t_ready, "crt-ready", payload=n,
                               callback=self._on_crt)

    def _on_crt(self, event) -> None:
        n = event.payload
        crt = crt_from_series(self.series, n, self.config.crt_period_s, self.config)
        self.latest_crt = crt
        now_s = event.fire_time_ns / 1e9
        # beam tracking: refresh the serving cell's steering pair
        if self.state.serving != LTE and self.state.in_procedure is None:
            entry = crt.rows[0][self.state.serving]
            if not entry.outage:
                self.dp.set_beam_pair(self.state.serving, entry.best_pair)
        decision = coordinator_decide(crt, self.state, self.policy,
                                      self.config, now_s)
        self.apply(decision, event.fire_time_ns)

    # -- decision application ---------------------------------------------------

    def apply(self, decision: Decision, t_ns: int) -> None:
        action = decision.action
        if action == "no-op":
            return
        self._log(t_ns, action, self.state.serving, decision.target,
                  decision.reason)
        if action == "cancel-ttt":
            self._cancel_ttt()
            return
        if action == "arm-ttt":
            self._arm_ttt(decision, t_ns)
            return
        if action == "tighten-ttt":
            self._tighten_ttt(decision, t_ns)
            return
        if action == "retarget-ttt":
            self._cancel_ttt()
            self._arm_ttt(decision, t_ns)
            return
        # any executed procedure clears a pending TTT
        self._cancel_ttt()
        if action == "fast-switch-lte":
            self.execute_fast_switch("to-lte", t_ns)
        elif action == "fast-switch-mmwave":
            self.execute_fast_switch("to-mmwave", t_ns, decision.target)
        elif action == "sch":
            self.execute_sch(self.state.serving, decision.target, t_ns)
        elif action in ("hard-handover", "initial-access-lte"):
            self.execute_hard_handover(decision.target, t_ns)
        else:
            raise ConfigError(f"unknown decision action {action!r}")

    def _cancel_ttt(self) -> None:
        if self.state.pending_ttt is not None:
            if self.state.pending_ttt.handle is not None:
                self.state.pending_ttt.handle.cancel()
            self.state.pending_ttt = None

    def _arm_ttt(self, decision: Decision, t_ns: int) -> None:
        duration = ttt_duration(decision.delta_db, self.policy)
        expiry = t_ns + s_to_ns(duration)
        pending = PendingTtt(decision.target, t_ns / 1e9, duration,
                             decision.delta_db)
        pending.handle = self.queue.schedule_ns(expiry, "ttt-expiry",
                                                payload=decision.target,
                                                callback=self._on_ttt_expiry)
        self.state.pending_ttt = pending

    def _tighten_ttt(self, decision: Decision, t_ns: int) -> None:
        """Re-evaluate the dwell of a pending TTT as the SINR gap widens.

        The window only ever shrinks (measured from the original arming
        instant), so a fading gap cannot stretch a scheduled handover.
        """
        pending = self.state.pending_ttt
        if pending is None or pending.target != decision.target:
            return
        duration = ttt_duration(decision.delta_db, self.policy)
        if duration >= pending.duration_s:
            return
        pending.duration_s = duration
        expiry = s_to_ns(pending.armed_at_s) + s_to_ns(duration)
        if pending.handle is not None:
            pending.handle.cancel()
        if expiry <= t_ns:
            pending.handle = None
            self.state.pending_ttt = None
            restored = PendingTtt(pending.target, pending.armed_at_s,
                                  duration, decision.delta_db)
            self.state.pending_ttt = restored
            self._on_ttt_expiry_now(restored, t_ns)
            return
        pending.handle = self.queue.schedule_ns(expiry, "ttt-expiry",
                                                payload=pending.target,
                                                callback=self._on_ttt_expiry)

    def _on_ttt_expiry_now(self, pending: PendingTtt, t_ns: int) -> None:
        """Shrunk window already elapsed: execute at the current instant."""
        class _Ev:
            fire_time_ns = t_ns
            payload = pending.target
        self._on_ttt_expiry(_Ev)

    def _on_ttt_expiry(self, event) -> None:
        pending = self.state.pending_ttt
        if pending is None or pending.target != event.payload:
            return
        self.state.pending_ttt = None
        if self.state.in_procedure is not None or self.latest_crt is None:
            return
        row = self.latest_crt.rows[0]
        target = pending.target
        serving = self.state.serving
        if serving == LTE or serving not in row:
            return
        if row[target].outage or row[serving].outage:
            return
        if row[target].sinr_db <= row[serving].sinr_db:
            return
        self._log(event.fire_time_ns, "ttt-fired", serving, target)
        if self.state.architecture == "dc":
            self.execute_sch(serving, target, event.fire_time_ns)
        else:
            self.execute_hard_handover(target, event.fire_time_ns)

    # -- procedures -------------------------------------------------------------

    def _begin(self, kind: str, t_ns: int, completion_ns: int) -> None:
        if self.state.in_procedure is not None:
            raise ConfigError("a procedure is already in flight")
        self.state.in_procedure = InProcedure(kind, completion_ns / 1e9)
        self.counts[kind] += 1
        self.queue.schedule_ns(completion_ns, "procedure-step",
                               payload=(kind, "complete"),
                               callback=self._on_complete)

    def _on_complete(self, event) -> None:
        self.state.in_procedure = None
        self._log(event.fire_time_ns, f"{event.payload[0]}-complete", "-",
                  self.state.serving)

    def execute_fast_switch(self, direction: str, t_ns: int,
                            target: object = None) -> None:
        """Single-RRC-message RAT change; DC only, no random access."""
        if self.config.architecture != "dc":
            raise ConfigError("fast switching requires the DC architecture")
        self._rrc(make_switch_message(self.config))
        self.dp.begin_hold()
        if direction == "to-lte":
            source = self.state.serving
            kind = "fast-switch-lte"
            t_release = t_ns + 2 * self.d_x2
            self._begin(kind, t_ns, max(t_release, t_ns + self.d_air))
            self.state.serving = LTE
            self.queue.schedule_ns(
                t_ns + self.d_air, "procedure-step", (kind, "ue-switch"),
                callback=lambda ev: self.dp.set_serving(LTE, ev.fire_time_ns))

            def _notify(ev, src=source):
                batch = self.dp.forward_depart(src)
                self.queue.schedule_ns(
                    ev.fire_time_ns + self.d_x2, "x2-delivery",
                    (kind, "rlc-arrival"),
                    callback=lambda e2: self.dp.release(
                        batch, LTE, e2.fire_time_ns, x2_bulk=(src, 1),
                        include_held=True, x2_held=None,
                        new_route=(LTE, 0, None)))

            self.queue.schedule_ns(t_ns + self.d_x2, "x2-delivery",
                                   (kind, "notify-source"), callback=_notify)
        elif direction == "to-mmwave":
            if target is None:
                raise ConfigError("fast switch to mmWave needs a target")
            kind = "fast-switch-mmwave"
            t_release = t_ns + self.d_x2
            self._begin(kind, t_ns, max(t_release, t_ns + self.d_air))
            self.state.serving = target
            entry = self.latest_crt.rows[0][target] if self.latest_crt else None
            if entry is not None:
                self.dp.set_beam_pair(target, entry.best_pair)
            batch = self.dp.forward_depart(LTE)
            self.queue.schedule_ns(
                t_ns + self.d_air, "procedure-step", (kind, "ue-switch"),
                callback=lambda ev, tgt=target: self.dp.set_serving(
                    tgt, ev.fire_time_ns))
            self.queue.schedule_ns(
                t_release, "x2-delivery", (kind, "rlc-arrival"),
                callback=lambda ev, tgt=target: self.dp.release(
                    batch, tgt, ev.fire_time_ns, x2_bulk=(1, tgt),
                    include_held=True, x2_held=(1, tgt),
                    new_route=(tgt, self.d_x2, (1, tgt))))
        else:
            raise ConfigError(f"unknown fast-switch direction {direction!r}")

    def execute_sch(self, source: int, target: int, t_ns: int) -> None:
        """Secondary-cell handover between mmWave cells; no core involvement.

        Timeline: coordinator request (X2), handover request + ack (X2),
        RRC reconfiguration to the UE over LTE, buffer forwarding (X2),
        LTE-aided non-contention random access at the target, completion
        back to the coordinator (X2).
        """
        if self.config.architecture != "dc":
            raise ConfigError("SCH requires the DC architecture")
        if source == target or source == LTE:
            raise ConfigError("SCH needs distinct mmWave source and target")
        crt_row = self.latest_crt.rows[0] if self.latest_crt else None
        if crt_row is not None and crt_row[target].outage:
            self._log(t_ns, "sch-abort", source, target, "target in outage")
            return
        kind = "sch"
        t_stop = t_ns + 3 * self.d_x2
        t_bulk = t_stop + self.d_x2
        t_ra_end = t_stop + self.d_air + self.t_ra
        completion = t_ra_end + self.d_x2
        self._begin(kind, t_ns, completion)
        self.dp.begin_hold()
        self.state.serving = target
        ctrl = self.config.x2_control_bytes
        self.dp.count_x2(1, source, ctrl)          # SCH request
        self.dp.count_x2(source, target, ctrl)     # handover request
        self.dp.count_x2(target, source, ctrl)     # handover request ack
        self._rrc(make_reconfiguration_message(self.config, hard=False))
        pair = crt_row[target].best_pair if crt_row is not None else None

        def _stop_and_forward(ev, src=source, tgt=target, p=pair):
            batch = self.dp.forward_depart(src)
            if p is not None:
                self.dp.set_beam_pair(tgt, p)
            self.dp.set_serving(tgt, t_ra_end)
            self.queue.schedule_ns(
                t_bulk, "x2-delivery", (kind, "rlc-arrival"),
                callback=lambda e2: self.dp.release(
                    batch, tgt, e2.fire_time_ns, x2_bulk=(src, tgt),
                    include_held=True, x2_held=(1, tgt),
                    new_route=(tgt, self.d_x2, (1, tgt))))

        self.queue.schedule_ns(t_stop, "procedure-step", (kind, "stop-source"),
                               callback=_stop_and_forward)

        def _ra_done(ev, src=source, tgt=target):
            self._rrc(make_completed_message(self.config))
            self.dp.count_x2(tgt, 1, ctrl)         # SCH completed
            self.dp.count_x2(1, src, ctrl)         # remove UE context

        self.queue.schedule_ns(t_ra_end, "procedure-step", (kind, "ra-done"),
                               callback=_ra_done)

    def execute_hard_handover(self, target: object, t_ns: int) -> None:
        """Standalone handover through the core network.

        The user plane is interrupted from the decision until target-side
        access and the MME path switch complete; fresh PDUs keep landing in
        the source buffer and are forwarded only at completion.
        """
        if self.config.architecture != "hh":
            raise ConfigError("hard handover applies to the HH architecture")
        source = self.state.serving
        crt_row = self.latest_crt.rows[0] if self.latest_crt else None
        serving_lost = (
            source != LTE and crt_row is not None
            and (source not in crt_row or crt_row[source].outage))
        if target == LTE:
            access = self.t_ia if serving_lost else self.t_ra
            kind = "initial-access-lte" if serving_lost else "hard-handover"
        else:
            access = self.beam_search + self.t_ra
            kind = "hard-handover"
        if serving_lost:
            completion = t_ns + access + 2 * self.d_mme
        else:
            completion = t_ns + self.d_air + 2 * self.d_x2 + access + 2 * self.d_mme
        self._begin(kind, t_ns, completion)
        self._rrc(make_reconfiguration_message(self.config, hard=True))
        ctrl = self.config.x2_control_bytes
        src_entity = 1 if source == LTE else source
        tgt_entity = 1 if target == LTE else target
        if src_entity != tgt_entity:
            self.dp.count_x2(src_entity, tgt_entity, ctrl)   # handover request
            self.dp.count_x2(tgt_entity, src_entity, ctrl)   # ack
        self.dp.set_serving(None, t_ns)
        self.state.serving = target
        pair = None
        if target != LTE and crt_row is not None and target in crt_row:
            pair = crt_row[target].best_pair
        self.queue.schedule_ns(completion - self.d_mme, "mme-delivery",
                               (kind, "path-switch-request"))

        def _complete(ev, src=source, tgt=target, p=pair):
            self._rrc(make_completed_message(self.config))
            batch = self.dp.forward_depart(src)
            if p is not None:
                self.dp.set_beam_pair(tgt, p)
            self.dp.set_serving(tgt, ev.fire_time_ns)
            t_bulk = ev.fire_time_ns + self.d_x2
            # fresh traffic reroutes at the path switch; floored past the
            # forwarded bulk so UE-side delivery stays in sequence order
            self.dp.set_route(tgt, self.s1, None, floor_ns=t_bulk + 1)
            self.queue.schedule_ns(
                t_bulk, "x2-delivery", (kind, "rlc-arrival"),
                callback=lambda e2: self.dp.release(
                    batch, tgt, e2.fire_time_ns,
                    x2_bulk=(src_entity, tgt_entity)
                    if src_entity != tgt_entity else None,
                    include_held=False, x2_held=None,
                    new_route=(tgt, self.s1, None)))

        self.queue.schedule_ns(completion, "mme-delivery",
                               (kind, "path-switch-done"), callback=_complete)
