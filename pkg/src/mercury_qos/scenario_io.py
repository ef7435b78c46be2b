"""Scenario JSON <-> ScenarioSpec, with line-numbered parse errors."""

from __future__ import annotations

import json
from dataclasses import asdict, fields
from importlib import resources
from pathlib import Path
from typing import Any, Optional

from .core import (
    AppClass,
    AppSpec,
    Event,
    EventKind,
    MachineSpec,
    ScenarioSpec,
    SloKind,
    SloTarget,
    WorkloadPhase,
    validate_scenario,
)

TOP_KEYS = ("machine", "apps", "events", "horizon_s", "tick_s", "seed")
BUNDLED = ("fig03_sweep", "fig05_sweep", "fig07_adaptation", "fig10_mixed",
           "fig12_dynamic_bw", "fig13_longrun")


class ParseError(ValueError):
    def __init__(self, message: str, line: Optional[int] = None, path: str = ""):
        self.line = line
        self.path = path
        where = f"{path}:{line}: " if line else (f"{path}: " if path else "")
        super().__init__(f"{where}{message}")


def _line_of(text: str, needle: str) -> int:
    idx = text.find(f'"{needle}"')
    return text.count("\n", 0, idx) + 1 if idx >= 0 else 1


def _phase(d: dict) -> WorkloadPhase:
    return WorkloadPhase(float(d["start_s"]), float(d["demand_bw"]), float(d["wss_gb"]),
                         float(d["access_rate"]))


def _app(d: dict) -> AppSpec:
    slo = d["slo"]
    return AppSpec(
        id=str(d["id"]),
        app_class=AppClass(d["class"]),
        priority=d["priority"],
        wss_gb=float(d["wss_gb"]),
        demand_bw=float(d.get("demand_bw", 0.0)),
        access_rate=float(d.get("access_rate", 0.0)),
        slo=SloTarget(SloKind(slo["kind"]), float(slo["value"])),
        phases=tuple(_phase(p) for p in d.get("phases", ())),
        arrival_s=float(d.get("arrival_s", 0.0)),
    )


def _event(d: dict) -> Event:
    ph = d.get("phase")
    return Event(float(d["at_s"]), EventKind(d["kind"]), str(d["app"]),
                 _phase(ph) if ph is not None else None)


def _machine(d: dict) -> MachineSpec:
    known = {f.name for f in fields(MachineSpec)}
    unknown = sorted(set(d) - known)
    if unknown:
        raise KeyError(f"unknown machine field(s) {unknown}")
    kw = dict(d)
    if "interleave_ratio" in kw:
        kw["interleave_ratio"] = tuple(kw["interleave_ratio"])
    return MachineSpec(**kw)


def parse_scenario(text: str, name: str = "", path: str = "") -> ScenarioSpec:
    """Parse and validate scenario JSON text."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, exc.lineno, path) from None
    if not isinstance(raw, dict):
        raise ParseError("top level must be an object", 1, path)
    missing = [k for k in TOP_KEYS if k not in raw]
    if missing:
        raise ParseError(f"missing key(s) {missing}", 1, path)
    extra = sorted(set(raw) - set(TOP_KEYS))
    if extra:
        raise ParseError(f"unexpected key(s) {extra}", _line_of(text, extra[0]), path)
    section = "machine"
    try:
        machine = _machine(raw["machine"])
        section = "apps"
        apps = tuple(_app(a) for a in raw["apps"])
        section = "events"
        events = tuple(_event(e) for e in raw["events"])
    except (KeyError, TypeError, ValueError, AttributeError) as exc:
        raise ParseError(f"bad {section}: {exc}", _line_of(text, section), path) from None
    seed = raw["seed"]
    spec = ScenarioSpec(machine, apps, events, float(raw["horizon_s"]), float(raw["tick_s"]),
                        seed, name)
    return validate_scenario(spec)


def load_scenario(path) -> ScenarioSpec:
    """Load a scenario from a file path, or by bundled name (e.g. ``fig10_mixed``)."""
    p = Path(path)
    if not p.exists() and str(path) in BUNDLED:
        text = resources.files("mercury_qos.scenarios").joinpath(f"{path}.json").read_text()
        return parse_scenario(text, str(path), str(path))
    try:
        text = p.read_text()
    except OSError as exc:
        raise ParseError(f"cannot read: {exc.strerror}", None, str(path)) from None
    return parse_scenario(text, p.stem, str(path))


def _num(v: float) -> Any:
    return int(v) if isinstance(v, float) and v.is_integer() and abs(v) < 1e15 else v


def scenario_to_dict(spec: ScenarioSpec) -> dict:
    def phase(p: WorkloadPhase) -> dict:
        return {k: _num(v) for k, v in asdict(p).items()}

    apps = []
    for a in spec.apps:
        d = {
            "id": a.id,
            "class": a.app_class.value,
            "priority": a.priority,
            "wss_gb": _num(a.wss_gb),
            "demand_bw": _num(a.demand_bw),
            "access_rate": _num(a.access_rate),
            "slo": {"kind": a.slo.kind.value, "value": _num(a.slo.value)},
            "arrival_s": _num(a.arrival_s),
        }
        if a.phases:
            d["phases"] = [phase(p) for p in a.phases]
        apps.append(d)
    events = []
    for e in spec.events:
        d = {"at_s": _num(e.at_s), "kind": e.kind.value, "app": e.app_id}
        if e.phase is not None:
            d["phase"] = phase(e.phase)
        events.append(d)
    machine = {k: _num(v) for k, v in asdict(spec.machine).items()}
    machine["interleave_ratio"] = list(spec.machine.interleave_ratio)
    return {
        "machine": machine,
        "apps": apps,
        "events": events,
        "horizon_s": _num(spec.horizon_s),
        "tick_s": spec.tick_s,
        "seed": spec.seed,
    }


def dump_scenario(spec: ScenarioSpec) -> str:
    return json.dumps(scenario_to_dict(spec), indent=2) + "\n"
