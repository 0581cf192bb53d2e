"""MCU state machine of one IoT node and its EPROM recovery routines.

States follow the modified boot flow: S0 powered off, S1 power-on boot and
integrity test, S2 bootloader, S3 executing, S4 bus access, S5 saving the
execution state, S6 Support Request, S7 Support Assist.

Node methods never touch the clock or the network.  They mutate the node
and return a list of actions which the engine interprets (send a message,
arm a timer, reboot).  Everything worth tracing is appended to
``Node.notes`` as ``(time_ns, event, detail)``.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

from .memory import (EpromLayout, ExecutionState, Op, ProgramMemory, check_integrity,
                     reset_sensors)
from .network import Message, MessageKind, completion_payload, parse_completion


class McuState(enum.Enum):
    S0_PoweredOff = 0
    S1_PowerOnBoot = 1
    S2_Bootloader = 2
    S3_Executing = 3
    S4_BusAccess = 4
    S5_SavingState = 5
    S6_SupportRequest = 6
    S7_SupportAssist = 7

    @property
    def short(self) -> str:
        return _SHORT[self]


S = McuState
_SHORT = {st: f"S{st.value}" for st in McuState}


class Event(enum.Enum):
    POWER_ON = "power_on"
    POWER_OFF = "power_off"
    INTEGRITY_PASS = "integrity_pass"
    INTEGRITY_FAIL = "integrity_fail"
    BOOTLOADER_DONE = "bootloader_done"
    BUS_ACCESS = "bus_access"
    BUS_DONE = "bus_done"
    HALT = "halt"
    HALT_CLEARED = "halt_cleared"
    P_REQUEST = "p_request"
    P_ASSIST = "p_assist"
    REBOOT_REQUEST = "reboot_request"
    REBOOT_ASSIST = "reboot_assist"
    REBOOT = "reboot"


class Interrupt(enum.Enum):
    HALT = "HALT"
    HALT_CLEARED = "HALT_CLEARED"
    P_REQUEST = "P_REQUEST"
    P_ASSIST = "P_ASSIST"


class Mode(enum.Enum):
    NORMAL = "normal"
    SUPPORT_REQUEST = "support_request"
    SUPPORT_ASSIST = "support_assist"


def _edges() -> Dict[Tuple[McuState, Event], McuState]:
    t = {
        (S.S0_PoweredOff, Event.POWER_ON): S.S1_PowerOnBoot,
        (S.S1_PowerOnBoot, Event.INTEGRITY_PASS): S.S2_Bootloader,
        (S.S1_PowerOnBoot, Event.INTEGRITY_FAIL): S.S6_SupportRequest,
        (S.S2_Bootloader, Event.BOOTLOADER_DONE): S.S3_Executing,
        (S.S3_Executing, Event.BUS_ACCESS): S.S4_BusAccess,
        (S.S4_BusAccess, Event.BUS_DONE): S.S3_Executing,
        (S.S5_SavingState, Event.REBOOT_REQUEST): S.S6_SupportRequest,
        (S.S5_SavingState, Event.REBOOT_ASSIST): S.S7_SupportAssist,
        (S.S6_SupportRequest, Event.REBOOT): S.S1_PowerOnBoot,
        (S.S7_SupportAssist, Event.REBOOT): S.S1_PowerOnBoot,
    }
    for st in (S.S3_Executing, S.S4_BusAccess):
        t[(st, Event.HALT)] = st
        t[(st, Event.HALT_CLEARED)] = st
        t[(st, Event.P_REQUEST)] = S.S5_SavingState
        t[(st, Event.P_ASSIST)] = S.S5_SavingState
    for st in McuState:
        if st is not S.S0_PoweredOff:
            t[(st, Event.POWER_OFF)] = S.S0_PoweredOff
    return t


TRANSITIONS = _edges()


class IllegalTransition(RuntimeError):
    pass


class OutOfOrderChunk(RuntimeError):
    pass


class DonorCorrupted(RuntimeError):
    pass


def next_state(state: McuState, event: Event) -> McuState:
    try:
        return TRANSITIONS[(state, event)]
    except KeyError:
        raise IllegalTransition(f"{event.value} is not accepted in {state.name}") from None


@dataclass
class Send:
    msg: Message
    continue_assist: bool = False


@dataclass
class StartTimer:
    delay_ns: int
    token: int


@dataclass
class Reboot:
    pass


Action = object


@dataclass
class TransferProgress:
    next_index: int = 0
    next_seq: int = 0
    total: Optional[int] = None
    peer: Optional[int] = None


@dataclass
class NodeConfig:
    chunk_size: int = 1024
    integrity_poll_period_ns: int = 10_000
    cycle_ns: int = 1_000
    backoff_base_ns: int = 100_000_000
    backoff_cap_ns: int = 10_000_000_000
    auth_token: bytes = b""


class Node:
    def __init__(self, node_id: int, memory: ProgramMemory,
                 eprom: Optional[EpromLayout] = None, config: Optional[NodeConfig] = None):
        self.id = node_id
        self.memory = memory
        self.eprom = eprom or EpromLayout()
        self.config = config or NodeConfig()
        self.state = S.S0_PoweredOff
        self.mode = Mode.NORMAL
        self.halted = False
        self.pending_transfer: Optional[TransferProgress] = None
        self.program_counter = 0
        self.notes: List[tuple] = []
        self.transitions: List[tuple] = []
        self._run_since: Optional[int] = None
        self._alarm = False
        self._ip = 0
        self._timer_token = 0
        self._timer_mark = 0
        self._backoff_ns = self.config.backoff_base_ns
        self._assist_checked = False

    @property
    def integrity_poll_period(self) -> float:
        return self.config.integrity_poll_period_ns / 1e9

    @property
    def powered(self) -> bool:
        return self.state is not S.S0_PoweredOff

    @property
    def running(self) -> bool:
        return self.state in (S.S3_Executing, S.S4_BusAccess) and not self.halted

    def _note(self, now: int, event: str, **detail) -> None:
        self.notes.append((now, event, detail))

    def _go(self, event: Event, now: int) -> None:
        new = next_state(self.state, event)
        self.transitions.append((now, self.state, event, new))
        self._note(now, "state", frm=self.state.short, to=new.short, on=event.value)
        self.state = new

    # application abstraction: the program counter advances one step per cycle
    def _settle_pc(self, now: int) -> None:
        if self._run_since is None:
            return
        steps = (now - self._run_since) // self.config.cycle_ns
        self.program_counter += steps
        self._run_since += steps * self.config.cycle_ns

    def _stop_running(self, now: int) -> None:
        self._settle_pc(now)
        self._run_since = None

    def _snapshot(self) -> ExecutionState:
        regs = struct.pack("<QQ", self.program_counter, self.id)
        return ExecutionState(self.program_counter, regs)

    # power and boot

    def power_on(self, now: int = 0) -> List[Action]:
        if self.state is not S.S0_PoweredOff:
            raise IllegalTransition(f"power_on in {self.state.name}")
        self._go(Event.POWER_ON, now)
        return self._boot(now)

    def power_off(self, now: int = 0) -> None:
        self._stop_running(now)
        self._go(Event.POWER_OFF, now)
        self.halted = False
        self._alarm = False
        self.mode = Mode.NORMAL
        self.pending_transfer = None
        self._timer_token += 1

    def reboot(self, now: int = 0) -> List[Action]:
        self._go(Event.REBOOT, now)
        return self._boot(now)

    def _boot(self, now: int) -> List[Action]:
        report = check_integrity(self.memory.array)
        self._note(now, "integrity", passed=int(report.passed),
                   bad_bits=report.corrupted_sensor_bits)
        self._alarm = False
        self.halted = False
        self.pending_transfer = None
        if not report.passed:
            self.mode = Mode.SUPPORT_REQUEST
            self._go(Event.INTEGRITY_FAIL, now)
            return self._enter_support_request(now)
        self.mode = Mode.NORMAL
        self._go(Event.INTEGRITY_PASS, now)
        self._go(Event.BOOTLOADER_DONE, now)
        saved = self.eprom.load_state()
        if saved is not None:
            self.program_counter = saved.program_counter
            self.eprom.erase_state()
            self._note(now, "resume", pc=self.program_counter)
        else:
            self.program_counter = 0
            self._note(now, "clean_start")
        self._run_since = now
        return []

    # application bus activity

    def bus_access(self, now: int) -> bool:
        if not self.running or self.state is not S.S3_Executing:
            return False
        self._settle_pc(now)
        self._go(Event.BUS_ACCESS, now)
        return True

    def bus_done(self, now: int) -> bool:
        if self.halted or self.state is not S.S4_BusAccess:
            return False
        self._settle_pc(now)
        self._go(Event.BUS_DONE, now)
        return True

    # interrupts

    def on_interrupt(self, irq: Interrupt, now: int = 0,
                     source: Optional[int] = None) -> List[Action]:
        if not self.powered:
            raise IllegalTransition(f"{irq.value} while powered off")
        if irq is Interrupt.HALT:
            next_state(self.state, Event.HALT)
            if not self.halted:
                self._go(Event.HALT, now)
                self._stop_running(now)
                self.eprom.save_state(self._snapshot())
                self.halted = True
                self._note(now, "halt", pc=self.program_counter)
            return []
        if irq is Interrupt.HALT_CLEARED:
            if not self.halted:
                raise IllegalTransition("HALT_CLEARED while not halted")
            self._go(Event.HALT_CLEARED, now)
            self.halted = False
            self._note(now, "halt_cleared")
            return []
        if irq is Interrupt.P_ASSIST and self.halted:
            self._note(now, "assist_refused", requester=source, reason="halted")
            return []
        event = Event.P_REQUEST if irq is Interrupt.P_REQUEST else Event.P_ASSIST
        next_state(self.state, event)
        self._note(now, irq.value.lower(), source=source)
        self._stop_running(now)
        self._go(event, now)
        self.eprom.save_state(self._snapshot())
        self._note(now, "state_saved", pc=self.program_counter)
        if irq is Interrupt.P_REQUEST:
            self.mode = Mode.SUPPORT_REQUEST
            self._go(Event.REBOOT_REQUEST, now)
            return self._enter_support_request(now)
        self.mode = Mode.SUPPORT_ASSIST
        self._go(Event.REBOOT_ASSIST, now)
        self.pending_transfer = TransferProgress(total=self.memory.size, peer=source)
        self._ip = 0
        self._assist_checked = False
        return []

    def poll_sensors(self, field_active: bool, now: int = 0) -> Optional[Interrupt]:
        """One Integrity Checker cycle while the application runs."""
        if not self.powered:
            raise IllegalTransition("poll_sensors while powered off")
        if self.state not in (S.S3_Executing, S.S4_BusAccess):
            return None
        if self.halted:
            return None if field_active else Interrupt.HALT_CLEARED
        if self._alarm:
            return None
        if not check_integrity(self.memory.array).passed:
            self._alarm = True
            return Interrupt.HALT
        return None

    # Support Request routine

    def _routine_op(self, routine: bytes) -> Op:
        return Op(routine[self._ip])

    def _enter_support_request(self, now: int) -> List[Action]:
        self.memory.begin_rewrite()
        self.pending_transfer = TransferProgress()
        self._ip = 0
        self._backoff_ns = self.config.backoff_base_ns
        return self.run_support_request_step(None, now)

    def _arm_timer(self) -> StartTimer:
        self._timer_token += 1
        self._timer_mark = self.memory.written
        return StartTimer(self._backoff_ns, self._timer_token)

    def run_support_request_step(self, incoming: Optional[Message] = None,
                                 now: int = 0) -> List[Action]:
        """Advance the Support Request routine with an optional received frame."""
        if self.state is not S.S6_SupportRequest:
            raise IllegalTransition(f"Support Request step in {self.state.name}")
        routine = self.eprom.support_request
        tp = self.pending_transfer
        actions: List[Action] = []
        while True:
            op = self._routine_op(routine)
            if op is Op.SEND_REQUEST:
                msg = Message(MessageKind.RECOVERY_REQUEST, self.id, 0,
                              auth_token=self.config.auth_token)
                actions += [Send(msg), self._arm_timer()]
                self._note(now, "recovery_request")
                self._ip += 1
            elif op is Op.RECEIVE_BYTE:
                if incoming is None:
                    return actions
                if incoming.kind is MessageKind.RECOVERY_COMPLETE:
                    total, digest = parse_completion(incoming.payload)
                    if not self.memory.commit(total, digest):
                        self._note(now, "recovery_incomplete", got=self.memory.written,
                                   expected=total)
                        return actions + self.restart_support_request(now)
                    tp.total = total
                    self._ip = routine.index(Op.REBOOT)
                    incoming = None
                    continue
                if incoming.kind is not MessageKind.FIRMWARE_CHUNK:
                    return actions
                if incoming.seq != tp.next_seq:
                    raise OutOfOrderChunk(f"chunk {incoming.seq}, expected {tp.next_seq}")
                if tp.peer is None:
                    tp.peer = incoming.src
                self._ip += 1
            elif op is Op.WRITE_BYTE:
                self.memory.write(tp.next_index, incoming.payload)
                if tp.next_seq == 0:
                    self._note(now, "sttram_write_start", src=incoming.src)
                self._ip += 1
            elif op is Op.INCREMENT_INDEX:
                tp.next_index += len(incoming.payload)
                tp.next_seq += 1
                self._ip = routine.index(Op.RECEIVE_BYTE)
                return actions
            elif op is Op.REBOOT:
                reset_sensors(self.memory.array)
                self._note(now, "recovery_written", bytes=tp.next_index)
                self._note(now, "reset_sensors")
                self.pending_transfer = None
                self._timer_token += 1
                return actions + [Reboot()]
            else:
                raise ValueError(f"opcode {op!r} not valid in Support Request")

    def restart_support_request(self, now: int = 0) -> List[Action]:
        if self.state is not S.S6_SupportRequest:
            return []
        self._note(now, "recovery_restart")
        self.memory.begin_rewrite()
        self.pending_transfer = TransferProgress()
        self._ip = 0
        return self.run_support_request_step(None, now)

    def on_timer(self, token: int, now: int = 0) -> List[Action]:
        """Request watchdog: resend with exponential backoff if nothing arrived."""
        if token != self._timer_token or self.state is not S.S6_SupportRequest:
            return []
        if self.memory.written != self._timer_mark:
            self._backoff_ns = self.config.backoff_base_ns
            return [self._arm_timer()]
        self._backoff_ns = min(2 * self._backoff_ns, self.config.backoff_cap_ns)
        return self.restart_support_request(now)

    # Support Assist routine

    def run_support_assist_step(self, now: int = 0) -> List[Action]:
        """Emit the next firmware chunk, or finish and reboot."""
        if self.state is not S.S7_SupportAssist:
            raise IllegalTransition(f"Support Assist step in {self.state.name}")
        if not self._assist_checked:
            if not check_integrity(self.memory.array).passed:
                raise DonorCorrupted(f"node {self.id} fails its own integrity check")
            self._assist_checked = True
        routine = self.eprom.support_assist
        tp = self.pending_transfer
        payload = b""
        while True:
            op = self._routine_op(routine)
            if op is Op.READ_BYTE:
                if tp.next_index >= tp.total:
                    self._ip = routine.index(Op.REBOOT)
                    continue
                payload = self.memory.read(tp.next_index, self.config.chunk_size)
                self._ip += 1
            elif op is Op.SEND_BYTE:
                chunk = Message(MessageKind.FIRMWARE_CHUNK, self.id, tp.peer, tp.next_seq, payload)
                self._ip += 1
                sent = Send(chunk, continue_assist=True)
            elif op is Op.INCREMENT_INDEX:
                tp.next_index += len(payload)
                tp.next_seq += 1
                self._ip = routine.index(Op.READ_BYTE)
                return [sent]
            elif op is Op.REBOOT:
                done = Message(MessageKind.RECOVERY_COMPLETE, self.id, tp.peer,
                               payload=completion_payload(tp.total, self.memory.digest()))
                self._note(now, "assist_complete", bytes=tp.next_index, chunks=tp.next_seq)
                self.pending_transfer = None
                return [Send(done), Reboot()]
            else:
                raise ValueError(f"opcode {op!r} not valid in Support Assist")
