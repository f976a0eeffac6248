"""Problem data for the RIS-assisted UAV MEC system.

A :class:`Scenario` bundles geometry, task demands, radio constants, energy
constants, the time grid and solver controls.  Every field is stored in
linear SI units; the YAML file format accepts dB/dBm for the reference path
loss and the noise power and converts them on load.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

SCHEMA_VERSION = 1


class ScenarioError(ValueError):
    """Raised when a scenario file cannot be parsed or fails validation."""


class InfeasibleScenarioError(ScenarioError):
    """Raised when the UAV cannot reach the final point within the mission."""


def db_to_linear(db: float) -> float:
    return 10.0 ** (db / 10.0)


def dbm_to_watt(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


Point = tuple[float, float]


@dataclass(frozen=True)
class Geometry:
    uav_start: Point
    uav_end: Point
    uav_altitude: float
    ris_position: Point
    ris_height: float
    device_positions: tuple[Point, ...]

    @property
    def device_count(self) -> int:
        return len(self.device_positions)

    def devices_array(self) -> np.ndarray:
        return np.asarray(self.device_positions, dtype=float).reshape(-1, 2)


@dataclass(frozen=True)
class TaskSpec:
    bits_required: tuple[float, ...]
    cycles_per_bit: tuple[float, ...]
    device_cpu: tuple[float, ...]
    uav_cpu: float


@dataclass(frozen=True)
class RadioParams:
    bandwidth: float
    noise_power: float
    ref_path_loss: float
    direct_exponent: float
    ris_exponent: float
    rician_factor: float
    element_spacing_ratio: float
    num_elements: int


@dataclass(frozen=True)
class EnergyParams:
    kappa_iot: float
    kappa_uav: float
    tau1: float
    tau2: float

    @property
    def optimal_speed(self) -> float:
        """Speed minimising ``tau1 v^3 + tau2 / v``."""
        return (self.tau2 / (3.0 * self.tau1)) ** 0.25


@dataclass(frozen=True)
class TimeBudget:
    mission_period: float
    num_slots: int
    max_speed: float

    @property
    def slot_length(self) -> float:
        return self.mission_period / self.num_slots


@dataclass(frozen=True)
class SolverSettings:
    tolerance: float = 1e-3
    max_outer_iters: int = 20
    max_inner_iters: int = 15
    dc_max_iters: int = 20
    sca_max_iters: int = 30
    randomization_count: int = 50
    rng_seed: int = 0
    min_speed_floor: float = 0.1
    # optional per-device transmit power guard (W); None matches the paper
    p_max: Optional[float] = None
    # |g_iU| = 1 and pure LoS device->RIS links, for reproducible tests
    deterministic_channel: bool = False


@dataclass(frozen=True)
class Scenario:
    geometry: Geometry
    tasks: TaskSpec
    radio: RadioParams
    energy: EnergyParams
    time: TimeBudget
    solver: SolverSettings = field(default_factory=SolverSettings)
    name: str = "custom"

    # convenience accessors used throughout the package
    @property
    def device_count(self) -> int:
        return self.geometry.device_count

    @property
    def num_slots(self) -> int:
        return self.time.num_slots

    @property
    def num_elements(self) -> int:
        return self.radio.num_elements

    @property
    def slot_length(self) -> float:
        return self.time.slot_length

    @property
    def tau1(self) -> float:
        return self.energy.tau1

    @property
    def tau2(self) -> float:
        return self.energy.tau2

    def with_updates(self, **sections) -> "Scenario":
        """Return a copy with fields replaced section-wise.

        ``s.with_updates(radio={"num_elements": 16}, time={"mission_period": 12})``
        """
        kwargs = {}
        for section, updates in sections.items():
            if section == "name":
                kwargs["name"] = updates
                continue
            current = getattr(self, section)
            kwargs[section] = replace(current, **updates)
        return replace(self, **kwargs)

    def digest(self) -> str:
        payload = json.dumps(scenario_to_dict(self), sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()[:16]


def _repeat(value: float, n: int) -> tuple[float, ...]:
    return tuple(float(value) for _ in range(n))


# Device placements are not listed in the source; devices sit in a cluster
# around the RIS on the east side of the nominal straight flight path.
_PAPER_DEVICES = ((42.0, 42.0), (46.0, 10.0), (56.0, 36.0),
                  (60.0, 14.0), (52.0, 46.0), (64.0, 26.0))
_DESK_DEVICES = ((44.0, 40.0), (56.0, 14.0), (60.0, 30.0))


def paper_default() -> Scenario:
    """Simulation setup of the reference study (6 devices, 20 slots)."""
    n_dev = len(_PAPER_DEVICES)
    return Scenario(
        geometry=Geometry(
            uav_start=(30.0, 50.0),
            uav_end=(30.0, 0.0),
            uav_altitude=40.0,
            ris_position=(50.0, 25.0),
            ris_height=20.0,
            device_positions=_PAPER_DEVICES,
        ),
        tasks=TaskSpec(
            bits_required=_repeat(30e6, n_dev),  # 180 Mbit in total
            cycles_per_bit=_repeat(500.0, n_dev),
            device_cpu=_repeat(3e9, n_dev),
            uav_cpu=12e9,
        ),
        radio=RadioParams(
            bandwidth=30e6,
            noise_power=dbm_to_watt(-50.0),
            ref_path_loss=db_to_linear(-30.0),
            direct_exponent=3.5,
            ris_exponent=2.8,
            rician_factor=3.0,
            element_spacing_ratio=0.5,
            num_elements=10,
        ),
        energy=EnergyParams(kappa_iot=1e-28, kappa_uav=1e-28, tau1=0.00614, tau2=15.976),
        time=TimeBudget(mission_period=10.0, num_slots=20, max_speed=10.0),
        solver=SolverSettings(),
        name="paper",
    )


def desk_default() -> Scenario:
    """Reduced instance (3 devices, 8 slots, 8 elements) for quick sweeps."""
    base = paper_default()
    n_dev = len(_DESK_DEVICES)
    return replace(
        base,
        geometry=replace(base.geometry, device_positions=_DESK_DEVICES),
        tasks=TaskSpec(
            bits_required=_repeat(30e6, n_dev),
            cycles_per_bit=_repeat(500.0, n_dev),
            device_cpu=_repeat(3e9, n_dev),
            uav_cpu=12e9,
        ),
        radio=replace(base.radio, num_elements=8),
        time=replace(base.time, num_slots=8),
        solver=replace(base.solver, max_outer_iters=12, max_inner_iters=10,
                       dc_max_iters=10, sca_max_iters=15),
        name="desk",
    )


PROFILES = {"desk": desk_default, "paper": paper_default}


def validate(s: Scenario) -> list[str]:
    """Return the names of all violated invariants (empty when valid)."""
    v: list[str] = []
    g, tk, r, e, tb, so = s.geometry, s.tasks, s.radio, s.energy, s.time, s.solver

    coords = [*g.uav_start, *g.uav_end, *g.ris_position, g.uav_altitude, g.ris_height]
    coords += [c for p in g.device_positions for c in p]
    if not all(math.isfinite(c) for c in coords):
        v.append("finite coordinates")
    if not (g.uav_altitude > g.ris_height > 0):
        v.append("altitude ordering")
    if g.device_count < 1:
        v.append("device count")

    n_dev = g.device_count
    for name in ("bits_required", "cycles_per_bit", "device_cpu"):
        vals = getattr(tk, name)
        if len(vals) != n_dev:
            v.append(f"{name} length")
        elif not all(x > 0 for x in vals):
            v.append(name)
    if not tk.uav_cpu > 0:
        v.append("uav_cpu")

    for name in ("bandwidth", "noise_power", "ref_path_loss"):
        if not getattr(r, name) > 0:
            v.append(name)
    for name in ("direct_exponent", "ris_exponent"):
        if not getattr(r, name) >= 2:
            v.append(name)
    if not r.rician_factor >= 0:
        v.append("rician_factor")
    if not r.element_spacing_ratio > 0:
        v.append("element_spacing_ratio")
    if not r.num_elements >= 1:
        v.append("num_elements")

    for name in ("kappa_iot", "kappa_uav", "tau1", "tau2"):
        if not getattr(e, name) > 0:
            v.append(name)

    if not tb.num_slots >= 2:
        v.append("num_slots")
    if not tb.mission_period > 0:
        v.append("mission_period")
    if not tb.max_speed > 0:
        v.append("max_speed")

    if not so.tolerance > 0:
        v.append("tolerance")
    for name in ("max_outer_iters", "max_inner_iters", "dc_max_iters",
                 "sca_max_iters", "randomization_count"):
        if not getattr(so, name) >= 1:
            v.append(name)
    if not so.min_speed_floor > 0:
        v.append("min_speed_floor")
    if so.p_max is not None and not so.p_max > 0:
        v.append("p_max")
    return v


def check_reachable(s: Scenario) -> None:
    """Raise :class:`InfeasibleScenarioError` if q_F is out of reach."""
    dist = math.dist(s.geometry.uav_start, s.geometry.uav_end)
    reach = s.time.max_speed * s.time.mission_period
    if dist > reach:
        raise InfeasibleScenarioError(
            f"endpoint unreachable: distance {dist:.3f} m exceeds "
            f"V_max*T = {reach:.3f} m")


# --------------------------------------------------------------------------
# file format

def scenario_to_dict(s: Scenario) -> dict:
    g = s.geometry
    return {
        "schema_version": SCHEMA_VERSION,
        "name": s.name,
        "geometry": {
            "uav_start": list(g.uav_start),
            "uav_end": list(g.uav_end),
            "uav_altitude": g.uav_altitude,
            "ris_position": list(g.ris_position),
            "ris_height": g.ris_height,
            "device_positions": [list(p) for p in g.device_positions],
        },
        "tasks": {
            "bits_required": list(s.tasks.bits_required),
            "cycles_per_bit": list(s.tasks.cycles_per_bit),
            "device_cpu": list(s.tasks.device_cpu),
            "uav_cpu": s.tasks.uav_cpu,
        },
        # linear values are written so that load(write(s)) is exact
        "radio": dataclasses.asdict(s.radio),
        "energy": dataclasses.asdict(s.energy),
        "time": dataclasses.asdict(s.time),
        "solver": dataclasses.asdict(s.solver),
    }


def _per_device(value, n: int, key: str) -> tuple[float, ...]:
    if isinstance(value, (int, float)):
        return _repeat(value, n)
    if not isinstance(value, (list, tuple)):
        raise ScenarioError(f"tasks.{key}: expected number or list")
    return tuple(float(x) for x in value)


def _point(value, key: str) -> Point:
    if not isinstance(value, (list, tuple)) or len(value) != 2:
        raise ScenarioError(f"{key}: expected a 2D point")
    return (float(value[0]), float(value[1]))


def scenario_from_dict(data: dict) -> Scenario:
    if not isinstance(data, dict):
        raise ScenarioError("scenario file must contain a mapping")
    version = data.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ScenarioError(f"unsupported schema_version {version}")
    base = scenario_to_dict(paper_default())
    try:
        gd = {**base["geometry"], **data.get("geometry", {})}
        devices = tuple(_point(p, "geometry.device_positions") for p in gd["device_positions"])
        geometry = Geometry(
            uav_start=_point(gd["uav_start"], "geometry.uav_start"),
            uav_end=_point(gd["uav_end"], "geometry.uav_end"),
            uav_altitude=float(gd["uav_altitude"]),
            ris_position=_point(gd["ris_position"], "geometry.ris_position"),
            ris_height=float(gd["ris_height"]),
            device_positions=devices,
        )
        n = len(devices)
        td = data.get("tasks", {})
        if "total_bits" in td:
            bits = _repeat(float(td["total_bits"]) / n, n)
        else:
            bits = _per_device(td.get("bits_required", 30e6), n, "bits_required")
        tasks = TaskSpec(
            bits_required=bits,
            cycles_per_bit=_per_device(td.get("cycles_per_bit", 500.0), n, "cycles_per_bit"),
            device_cpu=_per_device(td.get("device_cpu", 3e9), n, "device_cpu"),
            uav_cpu=float(td.get("uav_cpu", 12e9)),
        )

        rd = dict(data.get("radio", {}))
        if "ref_path_loss_db" in rd:
            rd["ref_path_loss"] = db_to_linear(float(rd.pop("ref_path_loss_db")))
        if "noise_power_dbm" in rd:
            rd["noise_power"] = dbm_to_watt(float(rd.pop("noise_power_dbm")))
        rd = {**base["radio"], **rd}
        radio = RadioParams(**{k: (int(v) if k == "num_elements" else float(v))
                               for k, v in rd.items()})
        energy = EnergyParams(**{k: float(v) for k, v in
                                 {**base["energy"], **data.get("energy", {})}.items()})
        tdict = {**base["time"], **data.get("time", {})}
        time = TimeBudget(mission_period=float(tdict["mission_period"]),
                          num_slots=int(tdict["num_slots"]),
                          max_speed=float(tdict["max_speed"]))
        sd = {**base["solver"], **data.get("solver", {})}
        solver = SolverSettings(**sd)
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ScenarioError):
            raise
        raise ScenarioError(f"malformed scenario: {exc}") from exc
    return Scenario(geometry, tasks, radio, energy, time, solver,
                    name=str(data.get("name", "custom")))


def load_scenario(path) -> Scenario:
    """Parse, validate and return the scenario stored at ``path``."""
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ScenarioError(f"cannot parse {path}: {exc}") from exc
    s = scenario_from_dict(data)
    problems = validate(s)
    if problems:
        raise ScenarioError("invalid scenario: " + ", ".join(problems))
    check_reachable(s)
    return s


def write_scenario(s: Scenario, path) -> None:
    Path(path).write_text(yaml.safe_dump(scenario_to_dict(s), sort_keys=False))
