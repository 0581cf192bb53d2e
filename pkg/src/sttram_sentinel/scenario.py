"""Scenario documents: strict JSON loading, validation and serialization."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, fields
from typing import Any, Dict, List, Optional, Tuple

from .magnetics import FieldKind, FieldProfile, InvalidParams, MtjParams
from .memory import DEFAULT_ACTIVE_SUSCEPTIBILITY, DEFAULT_PASSIVE_SUSCEPTIBILITY
from .network import DEFAULT_LINKS, LinkKind, LinkParams


class ScenarioError(ValueError):
    pass


class SchemaError(ScenarioError):
    pass


class SemanticError(ScenarioError):
    pass


@dataclass(frozen=True)
class ArrayGeometry:
    rows: int = 4096
    cols: int = 64
    sensor_interval: int = 1024


@dataclass(frozen=True)
class FirmwareSpec:
    """``synthetic`` images are bookkept by size; ``random`` and ``file`` are materialized."""

    kind: str = "random"
    size: int = 4096
    path: Optional[str] = None
    bootloader_size: int = 0


@dataclass(frozen=True)
class PowerWindow:
    off: float
    on: Optional[float] = None


@dataclass(frozen=True)
class NodeSpec:
    id: int
    firmware: FirmwareSpec = FirmwareSpec()
    integrity_poll_period: float = 10e-6
    data_params: MtjParams = MtjParams()
    sensor_params: Optional[MtjParams] = None
    passive_sensor_params: Optional[MtjParams] = None
    power_schedule: Tuple[PowerWindow, ...] = ()
    cycle_time: float = 1e-6
    bus_access_period: Optional[float] = None
    bus_access_time: float = 1e-6

    def powered_at(self, t: float) -> bool:
        return not any(w.off <= t and (w.on is None or t < w.on) for w in self.power_schedule)


@dataclass(frozen=True)
class LinkSpec:
    nodes: Tuple[int, int]
    params: LinkParams
    outages: Tuple[Tuple[float, float], ...] = ()


@dataclass(frozen=True)
class AttackEvent:
    target: int
    start: float
    duration: float
    profile: FieldProfile
    mode: str = "active"

    @property
    def end(self) -> float:
        return self.start + self.duration


@dataclass(frozen=True)
class Scenario:
    seed: int
    nodes: Tuple[NodeSpec, ...]
    links: Tuple[LinkSpec, ...]
    attacks: Tuple[AttackEvent, ...] = ()
    duration_limit_s: float = 3600.0
    chunk_size: int = 1024
    array: ArrayGeometry = ArrayGeometry()

    def node(self, node_id: int) -> NodeSpec:
        for n in self.nodes:
            if n.id == node_id:
                return n
        raise KeyError(node_id)


# -- parsing helpers -------------------------------------------------------

def _obj(doc, where: str, required=(), optional=()) -> Dict[str, Any]:
    if not isinstance(doc, dict):
        raise SchemaError(f"{where}: expected an object")
    unknown = set(doc) - set(required) - set(optional)
    if unknown:
        raise SchemaError(f"{where}: unknown field(s) {sorted(unknown)}")
    missing = [k for k in required if k not in doc]
    if missing:
        raise SchemaError(f"{where}: missing required field(s) {missing}")
    return doc


def _num(v, where: str, integer=False, minimum=None, positive=False):
    ok = isinstance(v, int) if integer else isinstance(v, (int, float))
    if isinstance(v, bool) or not ok or (not integer and not math.isfinite(v)):
        raise SchemaError(f"{where}: expected {'an integer' if integer else 'a number'}, got {v!r}")
    if positive and not v > 0:
        raise SchemaError(f"{where}: must be positive")
    if minimum is not None and v < minimum:
        raise SchemaError(f"{where}: must be >= {minimum}")
    return v if integer else float(v)


def _vec(v, where: str) -> Tuple[float, float, float]:
    if not isinstance(v, list) or len(v) != 3:
        raise SchemaError(f"{where}: expected a list of three numbers")
    return tuple(_num(c, where) for c in v)


_VECTOR_FIELDS = {"easy_axis", "h_demag", "h_exchange", "e_p"}


def _params(doc, where: str, base: MtjParams) -> MtjParams:
    names = [f.name for f in fields(MtjParams)]
    _obj(doc, where, optional=names)
    kw = {}
    for k, v in doc.items():
        kw[k] = _vec(v, f"{where}.{k}") if k in _VECTOR_FIELDS else _num(v, f"{where}.{k}")
    try:
        return MtjParams(**{**_params_dict(base), **kw})
    except InvalidParams as exc:
        raise SchemaError(f"{where}: {exc}") from None


def _params_dict(p: MtjParams) -> Dict[str, Any]:
    return {f.name: (list(getattr(p, f.name)) if f.name in _VECTOR_FIELDS else getattr(p, f.name))
            for f in fields(MtjParams)}


def _firmware(doc, where) -> FirmwareSpec:
    _obj(doc, where, required=["kind"], optional=["size", "path", "bootloader_size"])
    kind = doc["kind"]
    if kind not in ("synthetic", "random", "file"):
        raise SchemaError(f"{where}.kind: expected synthetic, random or file")
    if kind == "file":
        if not isinstance(doc.get("path"), str):
            raise SchemaError(f"{where}.path: required string for file firmware")
        size = 0
    else:
        if "size" not in doc:
            raise SchemaError(f"{where}.size: required for {kind} firmware")
        size = _num(doc["size"], f"{where}.size", integer=True, minimum=0)
    boot = _num(doc.get("bootloader_size", 0), f"{where}.bootloader_size", integer=True, minimum=0)
    return FirmwareSpec(kind, size, doc.get("path"), boot)


def _node(doc, i) -> NodeSpec:
    where = f"nodes[{i}]"
    _obj(doc, where, required=["id"], optional=[
        "firmware", "integrity_poll_period", "data_params", "sensor_params",
        "passive_sensor_params", "power_schedule", "cycle_time", "bus_access_period",
        "bus_access_time"])
    nid = _num(doc["id"], f"{where}.id", integer=True, minimum=0)
    data = _params(doc.get("data_params", {}), f"{where}.data_params", MtjParams())
    sensor = _params(doc.get("sensor_params", {}), f"{where}.sensor_params",
                     data.with_susceptibility(DEFAULT_ACTIVE_SUSCEPTIBILITY))
    passive = _params(doc.get("passive_sensor_params", {}), f"{where}.passive_sensor_params",
                      sensor.with_susceptibility(DEFAULT_PASSIVE_SUSCEPTIBILITY))
    sched = doc.get("power_schedule", [])
    if not isinstance(sched, list):
        raise SchemaError(f"{where}.power_schedule: expected a list")
    windows = []
    for j, w in enumerate(sched):
        ww = f"{where}.power_schedule[{j}]"
        _obj(w, ww, required=["off"], optional=["on"])
        off = _num(w["off"], f"{ww}.off", minimum=0)
        on = w.get("on")
        on = None if on is None else _num(on, f"{ww}.on")
        if on is not None and on <= off:
            raise SchemaError(f"{ww}: on must be later than off")
        windows.append(PowerWindow(off, on))
    bap = doc.get("bus_access_period")
    return NodeSpec(
        id=nid,
        firmware=_firmware(doc.get("firmware", {"kind": "random", "size": 4096}), f"{where}.firmware"),
        integrity_poll_period=_num(doc.get("integrity_poll_period", 10e-6),
                                   f"{where}.integrity_poll_period", positive=True),
        data_params=data, sensor_params=sensor, passive_sensor_params=passive,
        power_schedule=tuple(sorted(windows, key=lambda w: w.off)),
        cycle_time=_num(doc.get("cycle_time", 1e-6), f"{where}.cycle_time", positive=True),
        bus_access_period=None if bap is None else _num(bap, f"{where}.bus_access_period",
                                                        positive=True),
        bus_access_time=_num(doc.get("bus_access_time", 1e-6), f"{where}.bus_access_time",
                             positive=True),
    )


_LINK_FIELDS = ["kind", "data_rate", "energy_per_bit", "supply_voltage", "extra_current",
                "propagation_delay"]


def _link(doc, i) -> LinkSpec:
    where = f"links[{i}]"
    _obj(doc, where, required=["nodes", "params"], optional=["outages"])
    ends = doc["nodes"]
    if not isinstance(ends, list) or len(ends) != 2:
        raise SchemaError(f"{where}.nodes: expected two node ids")
    a, b = (_num(e, f"{where}.nodes", integer=True, minimum=0) for e in ends)
    p = _obj(doc["params"], f"{where}.params", required=["kind"], optional=_LINK_FIELDS[1:])
    try:
        kind = LinkKind(p["kind"])
    except ValueError:
        raise SchemaError(f"{where}.params.kind: unknown link kind {p['kind']!r}") from None
    base = DEFAULT_LINKS[kind]
    kw = {k: _num(p[k], f"{where}.params.{k}") if k in p else getattr(base, k)
          for k in _LINK_FIELDS[1:]}
    try:
        params = LinkParams(kind, **kw)
    except ValueError as exc:
        raise SchemaError(f"{where}.params: {exc}") from None
    outages = []
    for j, o in enumerate(doc.get("outages", [])):
        if not isinstance(o, list) or len(o) != 2:
            raise SchemaError(f"{where}.outages[{j}]: expected [start, end]")
        s, e = (_num(v, f"{where}.outages[{j}]", minimum=0) for v in o)
        if e <= s:
            raise SchemaError(f"{where}.outages[{j}]: end must follow start")
        outages.append((s, e))
    return LinkSpec((a, b), params, tuple(outages))


def _profile(doc, where) -> FieldProfile:
    _obj(doc, where, required=["kind"],
         optional=["amplitude", "direction", "frequency", "ramp_time"])
    try:
        kind = FieldKind(doc["kind"])
    except ValueError:
        raise SchemaError(f"{where}.kind: expected one of NONE, DC, AC, RAMP_AC") from None
    try:
        return FieldProfile(
            kind,
            _num(doc.get("amplitude", 0.0), f"{where}.amplitude", minimum=0),
            _vec(doc.get("direction", [1.0, 0.0, 0.0]), f"{where}.direction"),
            _num(doc.get("frequency", 0.0), f"{where}.frequency", minimum=0),
            _num(doc.get("ramp_time", 0.0), f"{where}.ramp_time", minimum=0),
        )
    except InvalidParams as exc:
        raise SchemaError(f"{where}: {exc}") from None


def _attack(doc, i) -> AttackEvent:
    where = f"attacks[{i}]"
    _obj(doc, where, required=["target", "start", "duration", "profile"], optional=["mode"])
    mode = doc.get("mode", "active")
    if mode not in ("active", "passive"):
        raise SchemaError(f"{where}.mode: expected active or passive")
    return AttackEvent(
        target=_num(doc["target"], f"{where}.target", integer=True, minimum=0),
        start=_num(doc["start"], f"{where}.start", minimum=0),
        duration=_num(doc["duration"], f"{where}.duration", positive=True),
        profile=_profile(doc["profile"], f"{where}.profile"),
        mode=mode,
    )


def _list(doc, key, where="scenario"):
    v = doc.get(key, [])
    if not isinstance(v, list):
        raise SchemaError(f"{where}.{key}: expected a list")
    return v


def scenario_from_dict(doc: Dict[str, Any]) -> Scenario:
    _obj(doc, "scenario", required=["nodes", "links"],
         optional=["seed", "attacks", "duration_limit_s", "chunk_size", "array"])
    geom = _obj(doc.get("array", {}), "array", optional=["rows", "cols", "sensor_interval"])
    array = ArrayGeometry(**{k: _num(v, f"array.{k}", integer=True, positive=True)
                             for k, v in geom.items()})
    s = Scenario(
        seed=_num(doc.get("seed", 0), "seed", integer=True, minimum=0),
        nodes=tuple(_node(n, i) for i, n in enumerate(_list(doc, "nodes"))),
        links=tuple(_link(l, i) for i, l in enumerate(_list(doc, "links"))),
        attacks=tuple(_attack(a, i) for i, a in enumerate(_list(doc, "attacks"))),
        duration_limit_s=_num(doc.get("duration_limit_s", 3600.0), "duration_limit_s",
                              positive=True),
        chunk_size=_num(doc.get("chunk_size", 1024), "chunk_size", integer=True, positive=True),
        array=array,
    )
    validate(s)
    return s


def validate(s: Scenario) -> None:
    ids = [n.id for n in s.nodes]
    if not ids:
        raise SemanticError("scenario declares no nodes")
    if len(set(ids)) != len(ids):
        raise SemanticError(f"duplicate node ids in {ids}")
    known = set(ids)
    seen = set()
    for i, l in enumerate(s.links):
        a, b = l.nodes
        for e in (a, b):
            if e not in known:
                raise SemanticError(f"links[{i}] references undeclared node {e}")
        if a == b:
            raise SemanticError(f"links[{i}] connects node {a} to itself")
        key = (min(a, b), max(a, b))
        if key in seen:
            raise SemanticError(f"links[{i}] duplicates the link {key}")
        seen.add(key)
    firmwares = {n.firmware for n in s.nodes}
    if len(firmwares) != 1:
        raise SemanticError("network is not homogeneous: nodes declare different firmware")
    for i, a in enumerate(s.attacks):
        if a.target not in known:
            raise SemanticError(f"attacks[{i}] targets undeclared node {a.target}")
        node = s.node(a.target)
        off_throughout = any(w.off <= a.start and (w.on is None or a.end <= w.on)
                             for w in node.power_schedule)
        overlaps_off = any(w.off < a.end and (w.on is None or a.start < w.on)
                           for w in node.power_schedule)
        if a.mode == "passive" and not off_throughout:
            raise SemanticError(f"attacks[{i}] is passive but node {a.target} is powered "
                                f"during [{a.start}, {a.end})")
        if a.mode == "active" and overlaps_off:
            raise SemanticError(f"attacks[{i}] is active but node {a.target} is off "
                                f"during part of [{a.start}, {a.end})")


def load_scenario(document) -> Scenario:
    """Parse a UTF-8 JSON scenario document (bytes or str)."""
    if isinstance(document, (bytes, bytearray)):
        try:
            document = document.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise SchemaError(f"scenario is not UTF-8: {exc}") from None
    try:
        doc = json.loads(document)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"invalid JSON: {exc}") from None
    return scenario_from_dict(doc)


def _profile_dict(p: FieldProfile) -> Dict[str, Any]:
    return {"kind": p.kind.value, "amplitude": p.amplitude, "direction": list(p.direction),
            "frequency": p.frequency, "ramp_time": p.ramp_time}


def scenario_to_dict(s: Scenario) -> Dict[str, Any]:
    """Fully-defaulted document; loading it yields an equal Scenario."""
    nodes = []
    for n in s.nodes:
        fw = {"kind": n.firmware.kind, "bootloader_size": n.firmware.bootloader_size}
        if n.firmware.kind == "file":
            fw["path"] = n.firmware.path
        else:
            fw["size"] = n.firmware.size
        nodes.append({
            "id": n.id,
            "firmware": fw,
            "integrity_poll_period": n.integrity_poll_period,
            "data_params": _params_dict(n.data_params),
            "sensor_params": _params_dict(n.sensor_params),
            "passive_sensor_params": _params_dict(n.passive_sensor_params),
            "power_schedule": [{"off": w.off, "on": w.on} for w in n.power_schedule],
            "cycle_time": n.cycle_time,
            "bus_access_period": n.bus_access_period,
            "bus_access_time": n.bus_access_time,
        })
    links = [{
        "nodes": list(l.nodes),
        "params": {"kind": l.params.kind.value,
                   **{k: getattr(l.params, k) for k in _LINK_FIELDS[1:]}},
        "outages": [list(o) for o in l.outages],
    } for l in s.links]
    attacks = [{"target": a.target, "start": a.start, "duration": a.duration,
                "profile": _profile_dict(a.profile), "mode": a.mode} for a in s.attacks]
    return {
        "seed": s.seed,
        "nodes": nodes,
        "links": links,
        "attacks": attacks,
        "duration_limit_s": s.duration_limit_s,
        "chunk_size": s.chunk_size,
        "array": {"rows": s.array.rows, "cols": s.array.cols,
                  "sensor_interval": s.array.sensor_interval},
    }


def dump_scenario(s: Scenario, indent: Optional[int] = 2) -> str:
    return json.dumps(scenario_to_dict(s), indent=indent, sort_keys=True)
