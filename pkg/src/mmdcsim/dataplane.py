"""User-plane pipeline: UDP source, PDCP anchor routing, per-cell RLC
buffers, X2/S1 transfer delays, and per-slot air-link service.

Packets are identified by their sequence number; creation times follow a
fixed interarrival grid, so the whole lifecycle lives in flat arrays.  The
per-slot FIFO service loop with drop-tail admission is the run's hot spot
and is numba-compiled (see _accel).  Between control-plane events the
kernel advances fluidly: within a slot the serving rate is constant and a
PDU is delivered at the exact instant its last byte leaves the buffer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._accel import njit
from .channel import ChannelTraces, mmwave_rate_bps
from .engine import ConfigError, SimConfig

LTE_BUF = 0
N_BUFFERS = 4
QCAP = 32768          # ring capacity, PDUs (10 MiB buffer holds 10240)
PCAP = 65536          # ingress pipe capacity, PDUs

FATE_PENDING = 0
FATE_DELIVERED = 1
FATE_OVERFLOW = 2
FATE_SEGMENTED = 3

# int-state vector indices shared with the kernel
I_NEXT_SEQ = 0
I_ROUTE_DEST = 1      # buffer index; -1 while PDCP holds fresh traffic
I_ROUTE_DELAY = 2
I_ROUTE_FLOOR = 3
I_ROUTE_X2 = 4        # X2 link index fresh bytes are counted on; -1 none
I_SERVING = 5         # buffer index; -1 none
I_GATE = 6
I_DELIVERED = 7
I_OVERFLOW = 8
IST_SIZE = 9

FAR_FUTURE = 2**62


@njit(cache=True)
def _try_enqueue(b, seq, payload, capacity, q_seq, q_head, q_cnt, q_bytes,
                 fate, ist):
    if q_bytes[b] + payload > capacity:
        fate[seq] = FATE_OVERFLOW
        ist[I_OVERFLOW] += 1
    else:
        q_seq[b, (q_head[b] + q_cnt[b]) % QCAP] = seq
        q_cnt[b] += 1
        q_bytes[b] += payload


@njit(cache=True)
def _serve(a, b_end, slot_ns, k0, rates, payload,
           q_seq, q_head, q_cnt, q_bytes, head_sent,
           delivered_ns, fate, ist):
    sb = ist[I_SERVING]
    if sb < 0:
        return
    start = a if a > ist[I_GATE] else ist[I_GATE]
    if start >= b_end:
        return
    k = start // slot_ns
    k_last = (b_end - 1) // slot_ns
    while k <= k_last:
        if q_cnt[sb] == 0:
            return
        s0 = start if start > k * slot_ns else k * slot_ns
        s1 = b_end if b_end < (k + 1) * slot_ns else (k + 1) * slot_ns
        r = rates[k - k0]
        if r > 0.0:
            bytes_per_ns = r / 8.0e9
            cursor = float(s0)
            seg_end = float(s1)
            while q_cnt[sb] > 0:
                rem = payload - head_sent[sb]
                need_ns = rem / bytes_per_ns
                if cursor + need_ns <= seg_end:
                    cursor += need_ns
                    seq = q_seq[sb, q_head[sb] % QCAP]
                    delivered_ns[seq] = cursor
                    fate[seq] = FATE_DELIVERED
                    ist[I_DELIVERED] += 1
                    q_head[sb] += 1
                    q_cnt[sb] -= 1
                    q_bytes[sb] -= rem
                    head_sent[sb] = 0.0
                else:
                    served = (seg_end - cursor) * bytes_per_ns
                    head_sent[sb] += served
                    q_bytes[sb] -= served
                    break
        k += 1


@njit(cache=True)
def _advance(t0, t1, slot_ns, k0, rates, t_udp_ns, payload, n_pdu, capacity,
             ist, q_seq, q_head, q_cnt, q_bytes, head_sent,
             pipe_t, pipe_seq, pipe_head, pipe_cnt,
             delivered_ns, fate, x2_bytes):
    """Advance the data plane from t0 to t1 (integer ns, t1 inclusive for
    arrivals, exclusive for service)."""
    t = t0
    while True:
        # next fresh-stream arrival
        if ist[I_ROUTE_DEST] >= 0 and ist[I_NEXT_SEQ] < n_pdu:
            fa = ist[I_NEXT_SEQ] * t_udp_ns + ist[I_ROUTE_DELAY]
            if fa < ist[I_ROUTE_FLOOR]:
                fa = ist[I_ROUTE_FLOOR]
        else:
            fa = FAR_FUTURE
        # next pipe arrival
        pa = FAR_FUTURE
        for b in range(N_BUFFERS):
            if pipe_cnt[b] > 0:
                tt = pipe_t[b, pipe_head[b] % PCAP]
                if tt < pa:
                    pa = tt
        na = fa if fa < pa else pa
        target = t1 if t1 < na else na
        if target > t:
            _serve(t, target, slot_ns, k0, rates, payload,
                   q_seq, q_head, q_cnt, q_bytes, head_sent,
                   delivered_ns, fate, ist)
            t = target
        if na > t1:
            break
        # pop everything due at exactly this instant
        progressed = False
        for b in range(N_BUFFERS):
            while pipe_cnt[b] > 0 and pipe_t[b, pipe_head[b] % PCAP] <= t:
                seq = pipe_seq[b, pipe_head[b] % PCAP]
                pipe_head[b] += 1
                pipe_cnt[b] -= 1
                _try_enqueue(b, seq, payload, capacity, q_seq, q_head, q_cnt,
                             q_bytes, fate, ist)
                progressed = True
        while ist[I_ROUTE_DEST] >= 0 and ist[I_NEXT_SEQ] < n_pdu:
            fa = ist[I_NEXT_SEQ] * t_udp_ns + ist[I_ROUTE_DELAY]
            if fa < ist[I_ROUTE_FLOOR]:
                fa = ist[I_ROUTE_FLOOR]
            if fa > t:
                break
            seq = ist[I_NEXT_SEQ]
            ist[I_NEXT_SEQ] += 1
            _try_enqueue(ist[I_ROUTE_DEST], seq, payload, capacity, q_seq,
                         q_head, q_cnt, q_bytes, fate, ist)
            if ist[I_ROUTE_X2] >= 0:
                x2_bytes[ist[I_ROUTE_X2]] += payload
            progressed = True
        if t >= t1 and not progressed:
            break


@dataclass
class ForwardBatch:
    """Whole PDUs captured from a source buffer at a switch."""

    seqs: np.ndarray
    nbytes: int


class Dataplane:
    """Run-scoped user-plane state and the kernel's python face."""

    def __init__(self, config: SimConfig, traces: ChannelTraces):
        self.config = config
        self.traces = traces
        self.payload = config.udp_payload_bytes
        self.capacity = float(config.rlc_buffer_bytes)
        self.t_udp_ns = config.udp_interarrival_ns
        self.n_pdu = config.packets_sent
        self.slot_ns = config.slot_ns

        # buffer index map: 0 = LTE, then mmWave cells in trace order
        self.buf_of_id = {"lte": LTE_BUF}
        self.id_of_buf: dict[int, object] = {LTE_BUF: "lte"}
        for i, link_id in enumerate(traces.link_ids):
            self.buf_of_id[link_id] = i + 1
            self.id_of_buf[i + 1] = link_id

        # X2 links between all eNB pairs (LTE coordinator id 1)
        entity_ids = [1] + list(traces.link_ids)
        self.x2_links: dict[frozenset, int] = {}
        for a in range(len(entity_ids)):
            for b in range(a + 1, len(entity_ids)):
                self.x2_links[frozenset((entity_ids[a], entity_ids[b]))] = \
                    len(self.x2_links)

        self.ist = np.zeros(IST_SIZE, dtype=np.int64)
        self.ist[I_ROUTE_DEST] = -1
        self.ist[I_ROUTE_X2] = -1
        self.ist[I_SERVING] = -1
        self.q_seq = np.zeros((N_BUFFERS, QCAP), dtype=np.int64)
        self.q_head = np.zeros(N_BUFFERS, dtype=np.int64)
        self.q_cnt = np.zeros(N_BUFFERS, dtype=np.int64)
        self.q_bytes = np.zeros(N_BUFFERS, dtype=np.float64)
        self.head_sent = np.zeros(N_BUFFERS, dtype=np.float64)
        self.pipe_t = np.zeros((N_BUFFERS, PCAP), dtype=np.int64)
        self.pipe_seq = np.zeros((N_BUFFERS, PCAP), dtype=np.int64)
        self.pipe_head = np.zeros(N_BUFFERS, dtype=np.int64)
        self.pipe_cnt = np.zeros(N_BUFFERS, dtype=np.int64)
        self.delivered_ns = np.full(self.n_pdu, -1.0, dtype=np.float64)
        self.fate = np.zeros(self.n_pdu, dtype=np.int8)
        self.x2_bytes = np.zeros(len(self.x2_links), dtype=np.int64)
        self.segmentation_drops = 0
        self.clock_ns = 0
        # serving-time bookkeeping (diagnostics)
        self._serving_since_ns = 0
        self._serving_id: object | None = None
        self.serving_time_ns: dict[object, int] = {"lte": 0, None: 0}
        for link_id in traces.link_ids:
            self.serving_time_ns[link_id] = 0
        # beam pair currently assigned per mmWave link
        self.assigned_pair = {
            link_id: (int(traces.opt_ue_dir[i, 0]), int(traces.opt_enb_dir[i, 0]))
            for i, link_id in enumerate(traces.link_ids)
        }

    # -- helpers -----------------------------------------------------------

    def x2_link_index(self, a: int, b: int) -> int:
        return self.x2_links[frozenset((a, b))]

    def count_x2(self, a: int, b: int, nbytes: int) -> None:
        self.x2_bytes[self.x2_link_index(a, b)] += nbytes

    def _serving_rates(self, k0: int, k1: int) -> np.ndarray:
        sb = self.ist[I_SERVING]
        if sb < 0:
            return np.zeros(k1 - k0 + 1)
        if sb == LTE_BUF:
            return self.traces.lte_rate_bps[k0:k1 + 1]
        link_id = self.id_of_buf[int(sb)]
        i = self.traces.link_index(link_id)
        pair = self.assigned_pair[link_id]
        mis_ue = self.traces.opt_ue_dir[i, k0:k1 + 1] != pair[0]
        mis_enb = self.traces.opt_enb_dir[i, k0:k1 + 1] != pair[1]
        if not (mis_ue.any() or mis_enb.any()):
            return self.traces.mmwave_rate_bps[i, k0:k1 + 1]
        penalty = (mis_ue * self.traces.gain_penalty_ue_db
                   + mis_enb * self.traces.gain_penalty_enb_db)
        return mmwave_rate_bps(self.traces.gamma_db[i, k0:k1 + 1] - penalty,
                               self.config)

    # -- kernel driver -----------------------------------------------------

    def advance(self, t_ns: int) -> None:
        """Process arrivals up to and including t_ns; serve up to t_ns."""
        if t_ns < self.clock_ns:
            raise ConfigError("dataplane cannot advance backwards")
        k0 = self.clock_ns // self.slot_ns
        k1 = max(k0, (t_ns - 1) // self.slot_ns)
        k1 = min(k1, self.traces.n_slots - 1)
        k0 = min(k0, k1)
        rates = np.ascontiguousarray(self._serving_rates(k0, k1), dtype=np.float64)
        _advance(self.clock_ns, t_ns, self.slot_ns, k0, rates,
                 self.t_udp_ns, self.payload, self.n_pdu, self.capacity,
                 self.ist, self.q_seq, self.q_head, self.q_cnt, self.q_bytes,
                 self.head_sent, self.pipe_t, self.pipe_seq, self.pipe_head,
                 self.pipe_cnt, self.delivered_ns, self.fate, self.x2_bytes)
        self.clock_ns = t_ns

    # -- control-plane facing operations ------------------------------------

    def set_serving(self, serving_id: object | None, gate_ns: int) -> None:
        """Select which cell transmits to the UE; service resumes at gate."""
        if self._serving_id != serving_id:
            self.serving_time_ns[self._serving_id] = (
                self.serving_time_ns.get(self._serving_id, 0)
                + self.clock_ns - self._serving_since_ns)
            self._serving_since_ns = self.clock_ns
            self._serving_id = serving_id
        self.ist[I_SERVING] = -1 if serving_id is None else self.buf_of_id[serving_id]
        self.ist[I_GATE] = gate_ns

    def set_route(self, dest_id: object, delay_ns: int, x2_pair: tuple | None,
                  floor_ns: int = 0) -> None:
        """Point the PDCP anchor's fresh traffic at a cell's RLC buffer."""
        self.ist[I_ROUTE_DEST] = self.buf_of_id[dest_id]
        self.ist[I_ROUTE_DELAY] = delay_ns
        self.ist[I_ROUTE_FLOOR] = max(int(self.ist[I_ROUTE_FLOOR]), floor_ns)
        self.ist[I_ROUTE_X2] = (-1 if x2_pair is None
                                else self.x2_link_index(*x2_pair))

    def begin_hold(self) -> None:
        """Pause fresh traffic at the PDCP anchor during a switch."""
        self.ist[I_ROUTE_DEST] = -1

    @property
    def holding(self) -> bool:
        return self.ist[I_ROUTE_DEST] < 0

    def held_range_until(self, t_ns: int) -> np.ndarray:
        """Sequence numbers created before t_ns but not yet routed."""
        first = int(self.ist[I_NEXT_SEQ])
        last = min(self.n_pdu, math.ceil(t_ns / self.t_udp_ns))
        return np.arange(first, max(first, last), dtype=np.int64)

    def forward_depart(self, src_id: object) -> ForwardBatch:
        """Strip a source buffer for forwarding.

        A partially transmitted head PDU cannot be reassembled downstream
        and is dropped as a segmentation loss; whole PDUs are returned.
        """
        b = self.buf_of_id[src_id]
        if self.head_sent[b] > 0.0 and self.q_cnt[b] > 0:
            seq = int(self.q_seq[b, self.q_head[b] % QCAP])
            self.fate[seq] = FATE_SEGMENTED
            self.segmentation_drops += 1
            self.q_bytes[b] -= self.payload - self.head_sent[b]
            self.q_head[b] += 1
            self.q_cnt[b] -= 1
            self.head_sent[b] = 0.0
        n = int(self.q_cnt[b])
        idx = (self.q_head[b] + np.arange(n)) % QCAP
        seqs = self.q_seq[b, idx].copy()
        self.q_head[b] += n
        self.q_cnt[b] = 0
        self.q_bytes[b] = 0.0
        return ForwardBatch(seqs, n * self.payload)

    def _pipe_insert(self, dst_buf: int, t_ns: int, seqs: np.ndarray) -> None:
        n = seqs.size
        if n == 0:
            return
        if self.pipe_cnt[dst_buf] + n > PCAP:
            raise ConfigError("ingress pipe overflow; raise PCAP")
        pos = (self.pipe_head[dst_buf] + self.pipe_cnt[dst_buf]
               + np.arange(n)) % PCAP
        self.pipe_t[dst_buf, pos] = t_ns
        self.pipe_seq[dst_buf, pos] = seqs
        self.pipe_cnt[dst_buf] += n

    def release(self, batch: ForwardBatch | None, dst_id: object, t_ns: int,
                x2_bulk: tuple | None, include_held: bool,
                x2_held: tuple | None, new_route: tuple) -> None:
        """Deliver a forwarded batch (and any held fresh PDUs) to the target
        and re-point the PDCP route.

        Arrival order is bulk first, held second, future fresh floored after
        - which keeps UE-side PDCP delivery in sequence order.
        """
        dst = self.buf_of_id[dst_id]
        if batch is not None and batch.seqs.size:
            self._pipe_insert(dst, t_ns, batch.seqs)
            if x2_bulk is not None:
                self.count_x2(*x2_bulk, batch.nbytes)
        if include_held:
            held = self.held_range_until(t_ns)
            if held.size:
                self._pipe_insert(dst, t_ns, held)
                if x2_held is not None:
                    self.count_x2(*x2_held, held.size * self.payload)
                self.ist[I_NEXT_SEQ] = int(held[-1]) + 1
        dest_id, delay_ns, x2_pair = new_route
        self.ist[I_ROUTE_FLOOR] = 0
        self.set_route(dest_id, delay_ns, x2_pair, floor_ns=t_ns)
        self.advance(self.clock_ns)   # absorb same-instant arrivals

    def set_beam_pair(self, link_id: int, pair: tuple[int, int]) -> None:
        self.assigned_pair[link_id] = (int(pair[0]), int(pair[1]))

    # -- accounting ---------------------------------------------------------

    def finalize(self, t_end_ns: int) -> None:
        self.advance(t_end_ns)
        self.set_serving(self._serving_id, self.ist[I_GATE])  # flush timer

    def fate_counts(self) -> dict[str, int]:
        counts = np.bincount(self.fate, minlength=4)
        return {
            "sent": self.n_pdu,
            "delivered": int(counts[FATE_DELIVERED]),
            "dropped_overflow": int(counts[FATE_OVERFLOW]),
            "dropped_segmentation": int(counts[FATE_SEGMENTED]),
            "pending": int(counts[FATE_PENDING]),
        }

    def structural_pending(self) -> int:
        """PDUs queued, piped, held, or not yet emitted; must equal the
        fate-level pending count (conservation audit)."""
        in_buffers = int(self.q_cnt.sum())
        in_pipes = int(self.pipe_cnt.sum())
        not_emitted = self.n_pdu - int(self.ist[I_NEXT_SEQ])
        return in_buffers + in_pipes + not_emitted
