"""Discrete-event simulation of a homogeneous STTRAM IoT network.

Time is an integer count of nanoseconds.  Events sit in a min-heap keyed by
``(time, lane, node, seq)``: environment events (lane 0) precede node events
(lane 1) at equal times, then lower node ids, then insertion order.

Integrity polls are not scheduled every period.  Sensor contents only change
through attack events, so the engine places a poll at the first grid tick
after a sensor flip and, while a node is halted, at the first tick after the
field subsides.  The observable trace is the same as with a free-running
poller.
"""

from __future__ import annotations

import csv
import dataclasses
import functools
import heapq
import io
import json
import logging
import math
import os
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from .magnetics import FieldProfile, onset_time
from .memory import (DATA, SENSOR, EpromLayout, FirmwareImage, ProgramMemory, new_array,
                     synthetic_identity)
from .network import NS_PER_S, Link, LinkDown, Message, MessageKind
from .node import (DonorCorrupted, Interrupt, McuState, Node, NodeConfig, OutOfOrderChunk,
                   Reboot, Send, StartTimer)
from .scenario import AttackEvent, Scenario, scenario_to_dict

log = logging.getLogger(__name__)

ENV = "env"
_ENV_LANE, _NODE_LANE = 0, 1
_SETTLED = (McuState.S0_PoweredOff, McuState.S3_Executing, McuState.S4_BusAccess)


class SchedulePast(ValueError):
    pass


class Deadlock(RuntimeError):
    def __init__(self, message: str, dump: Dict[str, Any]):
        super().__init__(message)
        self.dump = dump


def to_ns(seconds: float) -> int:
    return round(seconds * NS_PER_S)


@dataclass
class NodeMetrics:
    attacks_detected: int = 0
    detection_lead_time: Optional[float] = None
    halt_duration: float = 0.0
    recovery_bytes: int = 0
    recovery_latency: float = 0.0
    recovery_energy: float = 0.0
    current_model_energy: float = 0.0
    recoveries: int = 0
    downtime: float = 0.0
    final_digest_match: bool = False
    final_state: str = "S0"
    halt_pc: Optional[int] = None
    resume_pc: Optional[int] = None


@dataclass
class LinkMetrics:
    nodes: Tuple[int, int]
    kind: str
    messages: int
    bytes: int
    bits: int
    energy: float
    busy_time: float


@dataclass
class MetricsReport:
    nodes: Dict[int, NodeMetrics]
    links: List[LinkMetrics]
    end_time: float
    reference_digest: str
    quiescent: bool

    def to_dict(self) -> Dict[str, Any]:
        return {
            "end_time": self.end_time,
            "quiescent": self.quiescent,
            "reference_digest": self.reference_digest,
            "nodes": {str(k): dataclasses.asdict(v) for k, v in sorted(self.nodes.items())},
            "links": [dict(dataclasses.asdict(l), nodes=list(l.nodes)) for l in self.links],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_csv(self) -> str:
        names = [f.name for f in dataclasses.fields(NodeMetrics)]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["node"] + names)
        for nid, m in sorted(self.nodes.items()):
            w.writerow([nid] + ["" if getattr(m, n) is None else getattr(m, n) for n in names])
        return buf.getvalue()


def _fmt(v) -> str:
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, float):
        return repr(v)
    return str(v)


@dataclass
class _Recovery:
    """Bookkeeping for the transfer a requester is currently receiving."""

    first_send_ns: Optional[int] = None
    last_arrival_ns: Optional[int] = None
    payload_bytes: int = 0
    energy: float = 0.0
    link: Optional[Link] = None


@dataclass
class _AttackLog:
    first_sensor_ns: Optional[int] = None
    first_data_ns: Optional[int] = None



@functools.lru_cache(maxsize=1024)
def _onset_s(bit: int, params, profile: FieldProfile, duration: float) -> Optional[float]:
    return onset_time(bit, params, profile, duration)


class Simulator:
    """Owns every node and link of one scenario run."""

    def __init__(self, scenario: Scenario, firmware_root: Optional[str] = None):
        self.scenario = scenario
        self.clock = 0
        self.trace: List[str] = []
        self._heap: list = []
        self._seq = 0
        self._foreground = 0
        self.limit_ns = to_ns(scenario.duration_limit_s)
        self.specs = {n.id: n for n in scenario.nodes}
        self.attacks = list(scenario.attacks)
        self._windows = [(a.target, to_ns(a.start), to_ns(a.end)) for a in self.attacks]

        self.links: Dict[Tuple[int, int], Link] = {}
        self.adjacency: Dict[int, List[Link]] = {n.id: [] for n in scenario.nodes}
        for spec in scenario.links:
            a, b = spec.nodes
            link = Link(a, b, spec.params, [(to_ns(s), to_ns(e)) for s, e in spec.outages])
            self.links[link.key] = link
            self.adjacency[a].append(link)
            self.adjacency[b].append(link)

        self.nodes: Dict[int, Node] = {}
        self._build_nodes(firmware_root)
        digests = {n.memory.digest() for n in self.nodes.values()}
        if len(digests) != 1:
            raise RuntimeError("nodes do not share one firmware digest at t=0")
        self.reference_digest = digests.pop()

        self.metrics = {nid: NodeMetrics() for nid in self.nodes}
        self._recovery: Dict[int, _Recovery] = {}
        self._attack_log = [_AttackLog() for _ in self.attacks]
        self._poll_anchor = {nid: 0 for nid in self.nodes}
        self._poll_pending: Dict[int, Optional[int]] = {nid: None for nid in self.nodes}
        self._last_t = {nid: 0 for nid in self.nodes}
        self._last_running = {nid: False for nid in self.nodes}
        self._last_halted = {nid: False for nid in self.nodes}
        header = json.dumps(scenario_to_dict(scenario), sort_keys=True, separators=(",", ":"))
        self.trace.append(f"# scenario\t{header}")

    def _build_nodes(self, firmware_root: Optional[str]) -> None:
        s = self.scenario
        fw = s.nodes[0].firmware
        image = None
        if fw.kind == "random":
            blob = np.random.default_rng(s.seed).integers(0, 256, fw.size, dtype=np.uint8)
            image = FirmwareImage.from_bytes(blob.tobytes(), fw.bootloader_size)
        elif fw.kind == "file":
            path = fw.path if firmware_root is None else os.path.join(firmware_root, fw.path)
            image = FirmwareImage.from_file(path, fw.bootloader_size)
        for spec in s.nodes:
            array = new_array(s.array.rows, s.array.cols, s.array.sensor_interval,
                              spec.data_params, spec.sensor_params, spec.passive_sensor_params)
            if image is None:
                # the array still holds a stand-in data region for attack bookkeeping
                filler = np.random.default_rng(s.seed).integers(0, 2, array.bits.shape)
                data_rows = array.class_mask(DATA)
                array.bits[data_rows] = filler[data_rows].astype(np.uint8)
                mem = ProgramMemory(array, virtual_size=fw.size,
                                    virtual_identity=synthetic_identity(fw.size, s.seed))
            else:
                mem = ProgramMemory(array, image)
            period = to_ns(spec.integrity_poll_period)
            cfg = NodeConfig(chunk_size=s.chunk_size, integrity_poll_period_ns=max(period, 1),
                             cycle_ns=max(to_ns(spec.cycle_time), 1),
                             backoff_base_ns=self._watchdog_base(spec.id))
            self.nodes[spec.id] = Node(spec.id, mem, EpromLayout(), cfg)

    def _watchdog_base(self, nid: int) -> int:
        # a slow link must not trip the request watchdog between two chunks
        base = NodeConfig.backoff_base_ns
        for link in self.adjacency[nid]:
            frame_ns = 8 * (self.scenario.chunk_size + 64) * NS_PER_S / link.params.data_rate
            base = max(base, math.ceil(4 * frame_ns))
        return base

    # -- event queue ----------------------------------------------------------

    def schedule(self, kind: str, time_ns: int, node: Optional[int] = None, data=None,
                 background: bool = False) -> None:
        if time_ns < self.clock:
            raise SchedulePast(f"{kind} at {time_ns} ns is before the clock ({self.clock} ns)")
        lane, key = (_ENV_LANE, -1) if node is None else (_NODE_LANE, node)
        heapq.heappush(self._heap, (time_ns, lane, key, self._seq, kind, data, background))
        self._seq += 1
        if not background:
            self._foreground += 1

    def dispatch_next(self) -> Tuple[int, str, Optional[int]]:
        time_ns, lane, key, _, kind, data, background = heapq.heappop(self._heap)
        self.clock = time_ns
        if not background:
            self._foreground -= 1
        node = None if key < 0 else key
        getattr(self, "_on_" + kind)(node, data)
        if node is not None:
            self._settle(node)
        return time_ns, kind, node

    @property
    def pending(self) -> int:
        return len(self._heap)

    # -- tracing and accounting -------------------------------------------------

    def emit(self, time_ns: int, who, event: str, **detail) -> None:
        if who in self.nodes:
            self._flush_notes(who)
        body = ",".join(f"{k}={_fmt(v)}" for k, v in detail.items())
        self.trace.append(f"{time_ns}\t{who}\t{event}\t{body}")

    def _flush_notes(self, nid: int) -> None:
        node = self.nodes[nid]
        if not node.notes:
            return
        notes, node.notes = node.notes, []
        for t, event, detail in notes:
            body = ",".join(f"{k}={_fmt(v)}" for k, v in detail.items())
            self.trace.append(f"{t}\t{nid}\t{event}\t{body}")

    def _settle(self, nid: int) -> None:
        node = self.nodes[nid]
        self._flush_notes(nid)
        now = self.clock
        m = self.metrics[nid]
        span = (now - self._last_t[nid]) / NS_PER_S
        if not self._last_running[nid]:
            m.downtime += span
        if self._last_halted[nid]:
            m.halt_duration += span
        self._last_t[nid] = now
        self._last_running[nid] = node.running
        self._last_halted[nid] = node.halted

    # -- attack environment ------------------------------------------------------

    def attack_environment(self, t: float) -> Dict[int, FieldProfile]:
        """Field profile acting on each node at ``t`` seconds (half-open windows)."""
        return self._environment_ns(to_ns(t))

    def _environment_ns(self, t_ns: int) -> Dict[int, FieldProfile]:
        env: Dict[int, FieldProfile] = {}
        for a, (target, start, end) in zip(self.attacks, self._windows):
            if start <= t_ns < end:
                env[target] = a.profile
        return env

    def _clear_time(self, nid: int, t_ns: int) -> int:
        while True:
            ends = [end for target, start, end in self._windows
                    if target == nid and start <= t_ns < end]
            if not ends:
                return t_ns
            t_ns = max(ends)

    def _next_tick(self, nid: int, t_ns: int) -> int:
        anchor = self._poll_anchor[nid]
        period = self.nodes[nid].config.integrity_poll_period_ns
        return anchor + -(-(t_ns - anchor) // period) * period

    def _schedule_poll(self, nid: int, t_ns: int) -> None:
        pending = self._poll_pending[nid]
        if pending is not None and pending <= t_ns:
            return
        self._poll_pending[nid] = t_ns
        self.schedule("poll", t_ns, nid)

    # -- handlers ------------------------------------------------------------------

    def _on_noop(self, node, data) -> None:
        pass

    def _on_power_on(self, nid, data) -> None:
        node = self.nodes[nid]
        if node.powered:
            return
        self._poll_anchor[nid] = self.clock
        self._poll_pending[nid] = None
        actions = node.power_on(self.clock)
        if node.state is McuState.S6_SupportRequest:
            self.metrics[nid].attacks_detected += 1
        self._process(nid, actions)

    def _on_power_off(self, nid, data) -> None:
        node = self.nodes[nid]
        if node.powered:
            node.power_off(self.clock)
            self._recovery.pop(nid, None)

    def _on_attack_start(self, _, idx) -> None:
        a: AttackEvent = self.attacks[idx]
        start = self.clock
        self.emit(start, ENV, "attack_start", attack=idx, target=a.target, mode=a.mode,
                  kind=a.profile.kind.value, amplitude=a.profile.amplitude, duration=a.duration)
        array = self.nodes[a.target].memory.array
        for cls in (SENSOR, DATA):
            params = array.params_for(cls, powered=a.mode == "active")
            cells = array.class_mask(cls)
            for bit in (0, 1):
                onset = _onset_s(bit, params, a.profile, a.duration)
                if onset is None:
                    continue
                mask = cells & (array.bits == bit)
                if mask.any():
                    self.schedule("cell_upset", start + to_ns(onset), None, (idx, cls, bit, mask))

    def _on_attack_end(self, _, idx) -> None:
        a = self.attacks[idx]
        self.emit(self.clock, ENV, "attack_end", attack=idx, target=a.target)

    def _on_cell_upset(self, _, data) -> None:
        idx, cls, bit, mask = data
        nid = self.attacks[idx].target
        node = self.nodes[nid]
        n = node.memory.corrupt(mask)
        log_ = self._attack_log[idx]
        if cls == SENSOR:
            self.emit(self.clock, nid, "sensor_flip", attack=idx, bit=bit, cells=n)
            if log_.first_sensor_ns is None:
                log_.first_sensor_ns = self.clock
            if node.running:
                self._schedule_poll(nid, self._next_tick(nid, self.clock))
        else:
            self.emit(self.clock, nid, "data_flip", attack=idx, bit=bit, cells=n)
            if log_.first_data_ns is None:
                log_.first_data_ns = self.clock
        m = self.metrics[nid]
        if (m.detection_lead_time is None and log_.first_sensor_ns is not None
                and log_.first_data_ns is not None):
            m.detection_lead_time = (log_.first_data_ns - log_.first_sensor_ns) / NS_PER_S

    def _on_poll(self, nid, data) -> None:
        if self._poll_pending[nid] == self.clock:
            self._poll_pending[nid] = None
        node = self.nodes[nid]
        if node.state not in (McuState.S3_Executing, McuState.S4_BusAccess):
            return
        now = self.clock
        field_active = nid in self._environment_ns(now)
        irq = node.poll_sensors(field_active, now)
        if irq is Interrupt.HALT:
            node.on_interrupt(Interrupt.HALT, now)
            m = self.metrics[nid]
            m.attacks_detected += 1
            if m.halt_pc is None:
                m.halt_pc = node.program_counter
        elif irq is Interrupt.HALT_CLEARED:
            node.on_interrupt(Interrupt.HALT_CLEARED, now)
            # the sensors still show the attack: fetch a clean image from a peer
            self._process(nid, node.on_interrupt(Interrupt.P_REQUEST, now, source=nid))
            return
        if node.halted:
            clear = self._clear_time(nid, now)
            self._schedule_poll(nid, max(self._next_tick(nid, now + 1),
                                         self._next_tick(nid, clear)))

    def _on_timer(self, nid, token) -> None:
        node = self.nodes[nid]
        if node.powered:
            self._process(nid, node.on_timer(token, self.clock))

    def _on_assist_step(self, nid, data) -> None:
        node = self.nodes[nid]
        if node.state is not McuState.S7_SupportAssist:
            return
        try:
            actions = node.run_support_assist_step(self.clock)
        except DonorCorrupted as exc:
            self.emit(self.clock, nid, "donor_corrupted", reason=str(exc))
            self._reboot(nid)
            return
        self._process(nid, actions)

    def _on_msg_arrival(self, nid, msg: Message) -> None:
        node = self.nodes[nid]
        now = self.clock
        kind = msg.kind.name.lower()
        if not node.powered:
            self.emit(now, nid, "msg_dropped", kind=kind, src=msg.src, reason="powered_off")
            return
        if msg.kind is MessageKind.RECOVERY_REQUEST:
            self.emit(now, nid, "msg_rx", kind=kind, src=msg.src)
            if node.state is McuState.S7_SupportAssist:
                self.emit(now, nid, "assist_busy", requester=msg.src)
                return
            if node.state not in (McuState.S3_Executing, McuState.S4_BusAccess):
                self.emit(now, nid, "assist_refused", requester=msg.src, reason=node.state.short)
                return
            actions = node.on_interrupt(Interrupt.P_ASSIST, now, source=msg.src)
            if node.state is McuState.S7_SupportAssist:
                self.schedule("assist_step", now, nid)
            self._process(nid, actions)
            return
        if node.state is not McuState.S6_SupportRequest:
            self.emit(now, nid, "msg_dropped", kind=kind, src=msg.src, reason=node.state.short)
            return
        if msg.kind is MessageKind.RECOVERY_COMPLETE:
            self.emit(now, nid, "msg_rx", kind=kind, src=msg.src)
        try:
            actions = node.run_support_request_step(msg, now)
        except OutOfOrderChunk as exc:
            if node.pending_transfer.next_seq == 0:
                # tail of a stream abandoned by an earlier restart
                self.emit(now, nid, "chunk_dropped", src=msg.src, seq=msg.seq)
                return
            self.emit(now, nid, "out_of_order", src=msg.src, reason=str(exc))
            actions = node.restart_support_request(now)
        self._process(nid, actions)

    def _on_bus_access(self, nid, data) -> None:
        spec = self.specs[nid]
        node = self.nodes[nid]
        if node.powered and node.bus_access(self.clock):
            # foreground, so a run never ends in the middle of a bus access
            self.schedule("bus_done", self.clock + to_ns(spec.bus_access_time), nid)
        self.schedule("bus_access", self.clock + to_ns(spec.bus_access_period), nid,
                      background=True)

    def _on_bus_done(self, nid, data) -> None:
        node = self.nodes[nid]
        if node.powered:
            node.bus_done(self.clock)

    # -- node actions ----------------------------------------------------------------

    def _process(self, nid: int, actions) -> None:
        for act in actions:
            if isinstance(act, Send):
                self._send(nid, act)
            elif isinstance(act, StartTimer):
                self.schedule("timer", self.clock + act.delay_ns, nid, act.token)
            elif isinstance(act, Reboot):
                self._reboot(nid)
            else:
                raise TypeError(f"unknown node action {act!r}")

    def _reboot(self, nid: int) -> None:
        node = self.nodes[nid]
        was_requesting = node.state is McuState.S6_SupportRequest
        if was_requesting:
            self._finish_recovery(nid)
        actions = node.reboot(self.clock)
        if was_requesting and node.state is McuState.S3_Executing:
            self.metrics[nid].resume_pc = node.program_counter
        self._process(nid, actions)

    def _finish_recovery(self, nid: int) -> None:
        rec = self._recovery.pop(nid, None)
        if rec is None or rec.first_send_ns is None:
            return
        latency = (rec.last_arrival_ns - rec.first_send_ns) / NS_PER_S
        p = rec.link.params
        m = self.metrics[nid]
        m.recoveries += 1
        m.recovery_bytes += rec.payload_bytes
        m.recovery_latency += latency
        m.recovery_energy += rec.energy
        m.current_model_energy += p.extra_current * p.supply_voltage * latency
        self.emit(self.clock, nid, "recovery_done", bytes=rec.payload_bytes,
                  latency_ns=rec.last_arrival_ns - rec.first_send_ns, energy=rec.energy)

    def _pick_donor(self, nid: int) -> Optional[int]:
        live = sorted(link.peer(nid) for link in self.adjacency[nid] if link.is_up(self.clock))
        return live[0] if live else None

    def _send(self, nid: int, act: Send) -> None:
        msg = act.msg
        now = self.clock
        kind = msg.kind.name.lower()
        if msg.kind is MessageKind.RECOVERY_REQUEST:
            donor = self._pick_donor(nid)
            if donor is None:
                self.emit(now, nid, "no_route", kind=kind)
                return
            msg = dataclasses.replace(msg, dst=donor)
        link = self.links.get((min(nid, msg.dst), max(nid, msg.dst)))
        busy_before = 0 if link is None else link.busy_until
        try:
            if link is None:
                raise LinkDown(f"no link between {nid} and {msg.dst}")
            arrival, energy = link.deliver(msg, now)
        except LinkDown as exc:
            self.emit(now, nid, "link_down", kind=kind, dst=msg.dst, reason=str(exc))
            if act.continue_assist:
                self.emit(now, nid, "assist_abort", requester=msg.dst)
                self._reboot(nid)
            return
        if msg.kind is MessageKind.FIRMWARE_CHUNK:
            rec = self._recovery.setdefault(msg.dst, _Recovery())
            if msg.seq == 0:
                rec.first_send_ns = max(now, busy_before)
                rec.payload_bytes = 0
                rec.energy = 0.0
                rec.link = link
                self.emit(now, nid, "chunk_tx", dst=msg.dst, seq=0, bytes=msg.frame_length,
                          arrival=arrival)
            rec.payload_bytes += len(msg.payload)
            rec.energy += energy
            rec.last_arrival_ns = arrival
        else:
            self.emit(now, nid, "msg_tx", kind=kind, dst=msg.dst, bytes=msg.frame_length,
                      arrival=arrival)
        self.schedule("msg_arrival", arrival, msg.dst, msg)
        if act.continue_assist:
            self.schedule("assist_step", link.busy_until, nid)

    # -- run -------------------------------------------------------------------------

    def _start(self) -> None:
        for spec in self.scenario.nodes:
            if spec.powered_at(0.0):
                self.schedule("power_on", 0, spec.id)
            for w in spec.power_schedule:
                if w.off > 0:
                    self.schedule("power_off", to_ns(w.off), spec.id)
                if w.on is not None:
                    self.schedule("power_on", to_ns(w.on), spec.id)
            if spec.bus_access_period is not None:
                self.schedule("bus_access", to_ns(spec.bus_access_period), spec.id,
                              background=True)
        for idx, (_, start, end) in enumerate(self._windows):
            self.schedule("attack_start", start, None, idx)
            self.schedule("attack_end", end, None, idx)

    def run(self) -> MetricsReport:
        self._start()
        while self._heap and self._foreground > 0 and self._heap[0][0] <= self.limit_ns:
            self.dispatch_next()
        quiescent = self._foreground == 0
        log.debug("run stopped at %d ns (quiescent=%s, %d events left)",
                  self.clock, quiescent, len(self._heap))
        end = self.clock if quiescent else self.limit_ns
        self.clock = end
        for nid in self.nodes:
            self._settle(nid)
        stuck = {nid: n for nid, n in self.nodes.items()
                 if n.state not in _SETTLED or n.halted}
        if quiescent and stuck:
            dump = {str(nid): {"state": n.state.short, "halted": n.halted, "mode": n.mode.value,
                               "written": n.memory.written} for nid, n in stuck.items()}
            raise Deadlock(f"no events pending but node(s) {sorted(stuck)} are not settled",
                           dump)
        for nid, node in self.nodes.items():
            m = self.metrics[nid]
            m.final_state = node.state.short
            m.final_digest_match = node.memory.digest() == self.reference_digest
        links = [LinkMetrics(l.key, l.params.kind.value, l.total.messages, l.total.bytes_sent,
                             l.total.bits, l.total.energy(l.params), l.total.latency)
                 for _, l in sorted(self.links.items())]
        return MetricsReport(dict(self.metrics), links, end / NS_PER_S,
                             f"{self.reference_digest:016x}", quiescent)

    def trace_text(self) -> str:
        return "\n".join(self.trace) + "\n"


def run(scenario: Scenario, firmware_root: Optional[str] = None) -> Tuple[MetricsReport, List[str]]:
    sim = Simulator(scenario, firmware_root)
    report = sim.run()
    return report, sim.trace
