"""Links, the recovery wire format and transfer accounting.

Frame layout (all multi-byte integers little-endian)::

    u16 magic 0x5354 | u8 kind | u64 src | u64 dst | u32 seq | u32 length
    | payload[length] | u32 crc32

The CRC is the standard reflected CRC-32 (zlib) over every preceding byte.
A RecoveryRequest carries its authentication token in the payload slot;
other kinds carry data there and must have an empty token.
"""

from __future__ import annotations

import enum
import struct
import zlib
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

MAGIC = 0x5354
_HEADER = struct.Struct("<HBQQII")
_CRC = struct.Struct("<I")
FRAME_OVERHEAD = _HEADER.size + _CRC.size

NS_PER_S = 1_000_000_000


class MalformedFrame(ValueError):
    pass


class LinkDown(RuntimeError):
    pass


class LinkKind(enum.Enum):
    ETHERNET = "ethernet"
    WIFI = "wifi"
    UART = "uart"


@dataclass(frozen=True)
class LinkParams:
    kind: LinkKind
    data_rate: float
    energy_per_bit: float
    supply_voltage: float = 5.0
    extra_current: float = 0.0
    propagation_delay: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "kind", LinkKind(self.kind))
        if not self.data_rate > 0 or self.energy_per_bit < 0 or self.propagation_delay < 0:
            raise ValueError("need data_rate > 0, energy_per_bit >= 0, propagation_delay >= 0")


# measured on the evaluation boards: average rate, energy per bit, extra current
DEFAULT_LINKS = {
    LinkKind.ETHERNET: LinkParams(LinkKind.ETHERNET, 89e6, 8.44e-9, 5.0, 0.37),
    LinkKind.WIFI: LinkParams(LinkKind.WIFI, 782e3, 190e-9, 5.0, 0.35),
    LinkKind.UART: LinkParams(LinkKind.UART, 115200.0, 0.0, 5.0, 0.0),
}


class MessageKind(enum.IntEnum):
    RECOVERY_REQUEST = 1
    FIRMWARE_CHUNK = 2
    RECOVERY_COMPLETE = 3


@dataclass(frozen=True)
class Message:
    kind: MessageKind
    src: int
    dst: int
    seq: int = 0
    payload: bytes = b""
    auth_token: bytes = b""

    def __post_init__(self):
        object.__setattr__(self, "kind", MessageKind(self.kind))
        if self.kind is MessageKind.RECOVERY_REQUEST:
            if self.payload:
                raise ValueError("a RecoveryRequest carries only its auth token")
        elif self.auth_token:
            raise ValueError("only a RecoveryRequest carries an auth token")
        if self.kind is not MessageKind.FIRMWARE_CHUNK and self.seq:
            raise ValueError("seq is only meaningful on firmware chunks")

    @property
    def wire_payload(self) -> bytes:
        return self.auth_token if self.kind is MessageKind.RECOVERY_REQUEST else self.payload

    @property
    def frame_length(self) -> int:
        return FRAME_OVERHEAD + len(self.wire_payload)


_COMPLETE = struct.Struct("<QQ")


def completion_payload(total_bytes: int, digest: int) -> bytes:
    return _COMPLETE.pack(total_bytes, digest)


def parse_completion(payload: bytes) -> Tuple[int, int]:
    return _COMPLETE.unpack(payload)


def frame(msg: Message) -> bytes:
    body = _HEADER.pack(MAGIC, int(msg.kind), msg.src, msg.dst, msg.seq,
                        len(msg.wire_payload)) + msg.wire_payload
    return body + _CRC.pack(zlib.crc32(body))


def parse(raw: bytes) -> Message:
    if len(raw) < FRAME_OVERHEAD:
        raise MalformedFrame(f"frame of {len(raw)} bytes is shorter than the header")
    magic, kind, src, dst, seq, length = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise MalformedFrame(f"bad magic 0x{magic:04x}")
    if len(raw) != FRAME_OVERHEAD + length:
        raise MalformedFrame(f"length field {length} disagrees with frame size {len(raw)}")
    body, (crc,) = raw[:-_CRC.size], _CRC.unpack_from(raw, len(raw) - _CRC.size)
    if zlib.crc32(body) != crc:
        raise MalformedFrame("checksum mismatch")
    try:
        kind = MessageKind(kind)
    except ValueError:
        raise MalformedFrame(f"unknown message kind {kind}") from None
    payload = bytes(raw[_HEADER.size:_HEADER.size + length])
    if kind is MessageKind.RECOVERY_REQUEST:
        return Message(kind, src, dst, seq, b"", payload)
    try:
        return Message(kind, src, dst, seq, payload)
    except ValueError as exc:
        raise MalformedFrame(str(exc)) from None


def transfer_cost(n_bytes: int, link: LinkParams, framing: int = 0) -> Tuple[float, float]:
    """Latency (s) and energy (J) to move ``n_bytes`` plus ``framing`` bytes."""
    if n_bytes < 0:
        raise ValueError("byte count must be non-negative")
    bits = 8 * (n_bytes + framing)
    return bits / link.data_rate + link.propagation_delay, bits * link.energy_per_bit


def frame_time_ns(n_bytes: int, link: LinkParams) -> int:
    return round(8 * n_bytes * NS_PER_S / link.data_rate)


@dataclass
class TransferAccounting:
    messages: int = 0
    bytes_sent: int = 0
    latency: float = 0.0

    @property
    def bits(self) -> int:
        return 8 * self.bytes_sent

    def energy(self, link: LinkParams) -> float:
        return self.bits * link.energy_per_bit


@dataclass
class Link:
    """A point-to-point link with FIFO serialization and declared outages."""

    a: int
    b: int
    params: LinkParams
    outages: List[Tuple[int, int]] = field(default_factory=list)  # [start_ns, end_ns)
    busy_until: int = 0
    total: TransferAccounting = field(default_factory=TransferAccounting)
    per_sender: Dict[int, TransferAccounting] = field(default_factory=dict)

    @property
    def key(self) -> Tuple[int, int]:
        return (min(self.a, self.b), max(self.a, self.b))

    def peer(self, node_id: int) -> int:
        return self.b if node_id == self.a else self.a

    def is_up(self, start_ns: int, end_ns: Optional[int] = None) -> bool:
        end_ns = start_ns + 1 if end_ns is None else max(end_ns, start_ns + 1)
        return not any(s < end_ns and start_ns < e for s, e in self.outages)

    def deliver(self, msg: Message, send_ns: int) -> Tuple[int, float]:
        """Serialize ``msg`` onto the link; returns (arrival_ns, energy_J).

        A frame waits for the previous one to leave the wire, so arrivals
        keep send order.
        """
        n = msg.frame_length
        start = max(send_ns, self.busy_until)
        done = start + frame_time_ns(n, self.params)
        arrival = done + round(self.params.propagation_delay * NS_PER_S)
        if not self.is_up(send_ns, arrival):
            raise LinkDown(f"link {self.key} is down during [{send_ns}, {arrival}) ns")
        self.busy_until = done
        energy = 8 * n * self.params.energy_per_bit
        for acc in (self.total, self.per_sender.setdefault(msg.src, TransferAccounting())):
            acc.messages += 1
            acc.bytes_sent += n
            acc.latency += (arrival - send_ns) / NS_PER_S
        return arrival, energy
