"""STTRAM program memory, attack sensors and the EPROM.

The array is a bit matrix.  Every ``sensor_interval``-th row (starting at
row 0) is a sensor row preloaded with ``1, 0, 1, 0, ...``; all other rows
hold program data, laid out row-major with the most significant bit of
each byte in the lowest column.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field
from typing import List, Optional, Union

import numpy as np

from .magnetics import FieldProfile, MtjParams, simulate_exposure

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1

DATA = "data"
SENSOR = "sensor"

DEFAULT_ACTIVE_SUSCEPTIBILITY = 2.0
DEFAULT_PASSIVE_SUSCEPTIBILITY = 1.5


class InvalidGeometry(ValueError):
    pass


class CapacityExceeded(ValueError):
    pass


def fnv1a64(data: bytes, h: int = FNV_OFFSET) -> int:
    for b in data:
        h = ((h ^ b) * FNV_PRIME) & _MASK64
    return h


def format_digest(d: int) -> str:
    return f"{d:016x}"


def synthetic_identity(size: int, seed: int) -> int:
    """Digest stand-in for a firmware image that is never materialized."""
    return fnv1a64(b"synthetic:" + struct.pack("<QQ", size, seed & _MASK64))


@dataclass
class FirmwareImage:
    bootloader: bytes = b""
    program: bytes = b""
    digest: int = -1

    def __post_init__(self):
        self.bootloader = bytes(self.bootloader)
        self.program = bytes(self.program)
        if self.digest < 0:
            self.digest = fnv1a64(self.content)
        elif self.digest != fnv1a64(self.content):
            raise ValueError("firmware digest does not match its content")

    @property
    def content(self) -> bytes:
        return self.bootloader + self.program

    def __len__(self) -> int:
        return len(self.bootloader) + len(self.program)

    @classmethod
    def from_bytes(cls, blob: bytes, bootloader_size: int = 0) -> "FirmwareImage":
        return cls(blob[:bootloader_size], blob[bootloader_size:])

    @classmethod
    def from_file(cls, path, bootloader_size: int = 0) -> "FirmwareImage":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read(), bootloader_size)


def sensor_pattern(cols: int) -> np.ndarray:
    return (1 - (np.arange(cols) % 2)).astype(np.uint8)


@dataclass
class SttramArray:
    rows: int
    cols: int
    sensor_interval: int
    data_params: MtjParams
    sensor_params: MtjParams
    passive_sensor_params: MtjParams
    bits: np.ndarray = field(repr=False)
    firmware_length: int = 0

    @property
    def sensor_rows(self) -> np.ndarray:
        return np.arange(0, self.rows, self.sensor_interval)

    @property
    def data_rows(self) -> np.ndarray:
        return np.nonzero(np.arange(self.rows) % self.sensor_interval != 0)[0]

    @property
    def bytes_per_row(self) -> int:
        return self.cols // 8

    @property
    def data_capacity(self) -> int:
        return len(self.data_rows) * self.bytes_per_row

    def class_mask(self, cell_class: str) -> np.ndarray:
        sensor = (np.arange(self.rows) % self.sensor_interval == 0)
        rows = sensor if cell_class == SENSOR else ~sensor
        return np.repeat(rows[:, None], self.cols, axis=1)

    def params_for(self, cell_class: str, powered: bool = True) -> MtjParams:
        if cell_class == DATA:
            return self.data_params
        return self.sensor_params if powered else self.passive_sensor_params


def new_array(rows: int, cols: int, sensor_interval: int = 1024,
              data_params: Optional[MtjParams] = None,
              sensor_params: Optional[MtjParams] = None,
              passive_sensor_params: Optional[MtjParams] = None) -> SttramArray:
    data_params = data_params or MtjParams()
    if sensor_params is None:
        sensor_params = data_params.with_susceptibility(DEFAULT_ACTIVE_SUSCEPTIBILITY)
    if passive_sensor_params is None:
        passive_sensor_params = sensor_params.with_susceptibility(
            max(DEFAULT_PASSIVE_SUSCEPTIBILITY, data_params.susceptibility_factor))
    if sensor_interval < 1 or rows < sensor_interval:
        raise InvalidGeometry(f"need rows >= sensor_interval >= 1, got {rows}, {sensor_interval}")
    if cols < 8 or cols % 8:
        raise InvalidGeometry(f"cols must be a positive multiple of 8, got {cols}")
    for sp in (sensor_params, passive_sensor_params):
        if not sp.susceptibility_factor > data_params.susceptibility_factor:
            raise InvalidGeometry("sensor cells must be more susceptible than data cells")
    bits = np.zeros((rows, cols), dtype=np.uint8)
    a = SttramArray(rows, cols, sensor_interval, data_params, sensor_params,
                    passive_sensor_params, bits)
    reset_sensors(a)
    return a


def _check_span(a: SttramArray, offset: int, n: int) -> None:
    if offset < 0 or n < 0 or offset + n > a.data_capacity:
        raise CapacityExceeded(
            f"bytes [{offset}, {offset + n}) outside data capacity {a.data_capacity}")


def read_data(a: SttramArray, offset: int, n: int) -> bytes:
    _check_span(a, offset, n)
    if n == 0:
        return b""
    bpr = a.bytes_per_row
    first, last = offset // bpr, (offset + n - 1) // bpr
    rows = a.data_rows[first:last + 1]
    raw = np.packbits(a.bits[rows], axis=1).reshape(-1)
    start = offset - first * bpr
    return raw[start:start + n].tobytes()


def write_data(a: SttramArray, offset: int, data: bytes) -> None:
    n = len(data)
    _check_span(a, offset, n)
    if n == 0:
        return
    bpr = a.bytes_per_row
    first, last = offset // bpr, (offset + n - 1) // bpr
    rows = a.data_rows[first:last + 1]
    raw = np.packbits(a.bits[rows], axis=1).reshape(-1)
    start = offset - first * bpr
    raw[start:start + n] = np.frombuffer(data, dtype=np.uint8)
    a.bits[rows] = np.unpackbits(raw.reshape(len(rows), bpr), axis=1)


def program_firmware(a: SttramArray, img: FirmwareImage) -> None:
    if len(img) > a.data_capacity:
        raise CapacityExceeded(f"image of {len(img)} bytes exceeds capacity {a.data_capacity}")
    write_data(a, 0, img.content)
    a.firmware_length = len(img)


def firmware_bytes(a: SttramArray) -> bytes:
    return read_data(a, 0, a.firmware_length)


def firmware_digest(a: SttramArray) -> int:
    return fnv1a64(firmware_bytes(a))


@dataclass
class IntegrityReport:
    passed: bool
    corrupted_sensor_rows: List[int]
    corrupted_sensor_bits: int


def check_integrity(a: SttramArray) -> IntegrityReport:
    rows = a.sensor_rows
    bad = a.bits[rows] != sensor_pattern(a.cols)[None, :]
    per_row = bad.sum(axis=1)
    total = int(per_row.sum())
    return IntegrityReport(total == 0, [int(r) for r in rows[per_row > 0]], total)


def reset_sensors(a: SttramArray) -> None:
    a.bits[a.sensor_rows] = sensor_pattern(a.cols)


def flip_cells(a: SttramArray, mask: np.ndarray) -> int:
    a.bits ^= mask.astype(np.uint8)
    return int(mask.sum())


@dataclass(frozen=True)
class Exhaustive:
    pass


@dataclass(frozen=True)
class Statistical:
    sample_size: int = 16
    seed: int = 0


Sampling = Union[Exhaustive, Statistical]


@dataclass
class AttackEffect:
    data_bits_flipped: int
    sensor_bits_flipped: int
    sample: List[tuple] = field(default_factory=list)


def apply_attack(a: SttramArray, profile: FieldProfile, duration: float,
                 sampling: Sampling = Statistical(), powered: bool = True,
                 dt: Optional[float] = None) -> AttackEffect:
    """Expose every cell to ``profile`` and invert the cells that were upset.

    Statistical sampling evaluates each data polarity once and applies the
    decision to every data bit of that polarity, which is exact because all
    data cells share one parameter set.  Sensor bits are always evaluated
    one by one.  The seed only chooses which flipped cells are listed in
    ``AttackEffect.sample``.
    """
    if duration <= 0:
        raise ValueError("attack duration must be positive")
    flips = np.zeros_like(a.bits, dtype=bool)
    data_mask = a.class_mask(DATA)
    sensor_mask = ~data_mask

    def upset(bit, params):
        return simulate_exposure(int(bit), params, profile, duration, dt).flipped

    sp = a.params_for(SENSOR, powered)
    for r, c in zip(*np.nonzero(sensor_mask)):
        flips[r, c] = upset(a.bits[r, c], sp)

    if isinstance(sampling, Exhaustive):
        for r, c in zip(*np.nonzero(data_mask)):
            flips[r, c] = upset(a.bits[r, c], a.data_params)
    else:
        for bit in (0, 1):
            if upset(bit, a.data_params):
                flips |= data_mask & (a.bits == bit)

    effect = AttackEffect(int((flips & data_mask).sum()), int((flips & sensor_mask).sum()))
    flip_cells(a, flips)
    if isinstance(sampling, Statistical) and sampling.sample_size > 0:
        cells = np.argwhere(flips)
        if len(cells):
            rng = np.random.default_rng(sampling.seed)
            pick = rng.choice(len(cells), size=min(sampling.sample_size, len(cells)), replace=False)
            effect.sample = [tuple(int(v) for v in cells[i]) for i in sorted(pick)]
    return effect


class ProgramMemory:
    """A node's program store: the STTRAM array plus optional virtual image.

    Large images (e.g. the 100 MB recovery experiment) are tracked by size
    and identity only; the array then still provides the sensor rows and a
    small data region for attack bookkeeping.
    """

    def __init__(self, array: SttramArray, image: Optional[FirmwareImage] = None,
                 virtual_size: Optional[int] = None, virtual_identity: Optional[int] = None):
        self.array = array
        self.virtual = virtual_size is not None
        self.size = 0
        self.identity = 0
        self.intact = True
        self._written = 0
        if self.virtual:
            self.size = int(virtual_size)
            self.identity = int(virtual_identity)
        elif image is not None:
            program_firmware(array, image)
            self.size = len(image)

    def digest(self) -> int:
        if not self.virtual:
            return firmware_digest(self.array)
        if self.intact:
            return self.identity
        return fnv1a64(b"corrupted", self.identity)

    def read(self, offset: int, n: int) -> bytes:
        n = max(0, min(n, self.size - offset))
        if self.virtual:
            return bytes(n)
        return read_data(self.array, offset, n)

    def begin_rewrite(self) -> None:
        self._written = 0

    def write(self, offset: int, payload: bytes) -> None:
        if not self.virtual:
            write_data(self.array, offset, payload)
        self._written = offset + len(payload)

    @property
    def written(self) -> int:
        return self._written

    def commit(self, total: int, identity: int) -> bool:
        """Finish a rewrite of ``total`` bytes; returns whether it is complete."""
        complete = self._written == total
        if complete:
            self.size = total
            if self.virtual:
                self.identity = identity
                self.intact = True
            else:
                self.array.firmware_length = total
        return complete

    def corrupt(self, mask: np.ndarray) -> int:
        n = flip_cells(self.array, mask)
        if self.virtual and (mask & self.array.class_mask(DATA)).any():
            self.intact = False
        return n


class Op(enum.IntEnum):
    SEND_REQUEST = 0x10
    RECEIVE_BYTE = 0x11
    WRITE_BYTE = 0x12
    INCREMENT_INDEX = 0x13
    READ_BYTE = 0x20
    SEND_BYTE = 0x21
    REBOOT = 0x3F


SUPPORT_REQUEST_ROUTINE = bytes([Op.SEND_REQUEST, Op.RECEIVE_BYTE, Op.WRITE_BYTE,
                                 Op.INCREMENT_INDEX, Op.REBOOT])
SUPPORT_ASSIST_ROUTINE = bytes([Op.READ_BYTE, Op.SEND_BYTE, Op.INCREMENT_INDEX, Op.REBOOT])
DEFAULT_BOOTROM = b"BOOTROM:itest;ldbl;jmp"


@dataclass(frozen=True)
class ExecutionState:
    program_counter: int
    register_snapshot: bytes = b""
    valid: bool = True

    _HEAD = struct.Struct("<BQH")

    def encode(self) -> bytes:
        return self._HEAD.pack(1, self.program_counter, len(self.register_snapshot)) \
            + self.register_snapshot

    @classmethod
    def decode(cls, raw: bytes) -> Optional["ExecutionState"]:
        marker, pc, n = cls._HEAD.unpack_from(raw)
        if marker != 1:
            return None
        start = cls._HEAD.size
        return cls(pc, bytes(raw[start:start + n]))


class EpromLayout:
    """Bootrom, Support Assist, Support Request and persistent segments."""

    def __init__(self, bootrom: bytes = DEFAULT_BOOTROM,
                 support_assist: bytes = SUPPORT_ASSIST_ROUTINE,
                 support_request: bytes = SUPPORT_REQUEST_ROUTINE,
                 persistent_size: int = 128):
        if len(support_request) != 5 or len(support_assist) != 4:
            raise ValueError("Support Request must be 5 bytes and Support Assist 4 bytes")
        self._bootrom = bytes(bootrom)
        self.support_assist = bytes(support_assist)
        self.support_request = bytes(support_request)
        self.persistent = bytearray(persistent_size)

    @property
    def bootrom(self) -> bytes:
        return self._bootrom

    @property
    def routine_overhead(self) -> int:
        return len(self.support_assist) + len(self.support_request)

    def save_state(self, state: ExecutionState) -> None:
        if not state.valid:
            raise ValueError("refusing to save an invalid execution state")
        raw = state.encode()
        if len(raw) > len(self.persistent):
            raise CapacityExceeded("execution state does not fit the persistent segment")
        self.persistent[:] = bytes(len(self.persistent))
        self.persistent[:len(raw)] = raw

    def load_state(self) -> Optional[ExecutionState]:
        return ExecutionState.decode(self.persistent)

    def erase_state(self) -> None:
        self.persistent[:] = bytes(len(self.persistent))
