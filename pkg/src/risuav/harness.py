"""Experiment sweeps, result tables, CSV/SVG emission and run manifests."""

from __future__ import annotations

import csv
import io
import json
import platform
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

import numpy as np
import yaml

from .energy import DecisionVariables, vars_efficiency
from .optimizer import SCHEMES, RunRecord, dinkelbach
from .scenario import Scenario, scenario_to_dict

SWEEP_SCHEMA = 1
PARAMETERS = ("total_bits", "num_elements", "mission_period", "cycles_per_bit")
COLUMNS = ("scheme", "parameter", "value", "seed", "status", "ee", "offloaded_bits",
           "mean_ris_distance", "outer_iterations", "error")
_NUMERIC = {"value", "ee", "offloaded_bits", "mean_ris_distance"}
_INTEGER = {"seed", "outer_iterations"}


class SweepSpecError(ValueError):
    pass


@dataclass(frozen=True)
class SweepSpec:
    parameter: str
    values: tuple
    schemes: tuple = ("proposed",)
    seeds: tuple = (0, 1, 2)

    def __post_init__(self):
        if self.parameter not in PARAMETERS:
            raise SweepSpecError(f"unknown sweep parameter {self.parameter!r}")
        if not self.values:
            raise SweepSpecError("empty value list")
        if not self.schemes or any(sc not in SCHEMES for sc in self.schemes):
            raise SweepSpecError(f"schemes must be a nonempty subset of {sorted(SCHEMES)}")
        if not self.seeds:
            raise SweepSpecError("empty seed list")

    @classmethod
    def from_dict(cls, d: dict) -> "SweepSpec":
        if not isinstance(d, dict):
            raise SweepSpecError("sweep spec must be a mapping")
        if d.get("schema_version", SWEEP_SCHEMA) != SWEEP_SCHEMA:
            raise SweepSpecError(f"unsupported schema_version {d.get('schema_version')}")
        try:
            return cls(str(d["parameter"]), tuple(float(v) for v in d["values"]),
                       tuple(d.get("schemes", ("proposed",))),
                       tuple(int(x) for x in d.get("seeds", (0, 1, 2))))
        except (KeyError, TypeError) as exc:
            raise SweepSpecError(f"malformed sweep spec: {exc}") from exc

    def to_dict(self) -> dict:
        return {"schema_version": SWEEP_SCHEMA, "parameter": self.parameter,
                "values": list(self.values), "schemes": list(self.schemes),
                "seeds": list(self.seeds)}


def load_sweep(path) -> SweepSpec:
    try:
        data = yaml.safe_load(Path(path).read_text())
    except yaml.YAMLError as exc:
        raise SweepSpecError(f"cannot parse {path}: {exc}") from exc
    return SweepSpec.from_dict(data)


# Desk-scale presets mirroring the four experiment axes.
PRESETS = {
    "elements": SweepSpec("num_elements", (2, 4, 8, 12), ("proposed", "random-phase")),
    "period": SweepSpec("mission_period", (8, 10, 12, 14), ("proposed",)),
    "cycles": SweepSpec("cycles_per_bit", (250, 500, 1000, 2000), ("proposed", "no-ris")),
    "bits": SweepSpec("total_bits", (60e6, 90e6, 120e6), ("proposed", "no-ris")),
}


def apply_value(base: Scenario, parameter: str, value) -> Scenario:
    n = base.device_count
    if parameter == "total_bits":
        return base.with_updates(tasks={"bits_required": (float(value) / n,) * n})
    if parameter == "num_elements":
        return base.with_updates(radio={"num_elements": int(round(value))})
    if parameter == "mission_period":
        return base.with_updates(time={"mission_period": float(value)})
    if parameter == "cycles_per_bit":
        return base.with_updates(tasks={"cycles_per_bit": (float(value),) * n})
    raise SweepSpecError(f"unknown sweep parameter {parameter!r}")


# --------------------------------------------------------------------------
# tables

@dataclass
class ResultTable:
    rows: list = field(default_factory=list)

    def sorted(self) -> "ResultTable":
        order = {sc: k for k, sc in enumerate(SCHEMES)}
        return ResultTable(sorted(self.rows, key=lambda r: (order.get(r["scheme"], 99),
                                                             r["parameter"], r["value"], r["seed"])))

    def column(self, name: str, scheme: Optional[str] = None) -> list:
        return [r[name] for r in self.rows if scheme is None or r["scheme"] == scheme]

    def schemes(self) -> list:
        seen = []
        for r in self.rows:
            if r["scheme"] not in seen:
                seen.append(r["scheme"])
        return seen

    def mean_by_value(self, column: str, scheme: str):
        """(values, seed-averaged column) for rows that completed."""
        groups: dict = {}
        for r in self.rows:
            if r["scheme"] == scheme and r["status"] != "error":
                groups.setdefault(r["value"], []).append(r[column])
        xs = sorted(groups)
        return xs, [float(np.mean(groups[x])) for x in xs]


def _fmt(name: str, v) -> str:
    if name in _NUMERIC:
        return "" if v is None or (isinstance(v, float) and np.isnan(v)) else format(float(v), ".9g")
    if name in _INTEGER:
        return str(int(v))
    return "" if v is None else str(v)


def emit_csv(table: ResultTable, path) -> Path:
    if not table.rows:
        raise ValueError("refusing to write an empty result table")
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(COLUMNS)
    for r in table.sorted().rows:
        wr.writerow([_fmt(c, r.get(c)) for c in COLUMNS])
    path = Path(path)
    path.write_text(buf.getvalue())
    return path


def read_csv(path) -> ResultTable:
    rows = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            row = {}
            for c in COLUMNS:
                v = rec[c]
                if c in _NUMERIC:
                    row[c] = float(v) if v != "" else float("nan")
                elif c in _INTEGER:
                    row[c] = int(v)
                else:
                    row[c] = v
            rows.append(row)
    return ResultTable(rows)


# --------------------------------------------------------------------------
# running

def mean_ris_distance(q, s: Scenario) -> float:
    return float(np.mean(np.linalg.norm(np.asarray(q) - np.asarray(s.geometry.ris_position), axis=1)))


def run_cell(scheme: str, s: Scenario, seed: int, parameter: str = "", value=float("nan")):
    """Run one (scheme, scenario, seed) cell; returns (row, manifest dict)."""
    t0 = time.perf_counter()
    row = {"scheme": scheme, "parameter": parameter, "value": float(value), "seed": int(seed)}
    try:
        z, rec = dinkelbach(s, seed, scheme)
    except Exception as exc:  # recorded as an error row, the sweep goes on
        row.update(status="error", ee=float("nan"), offloaded_bits=float("nan"),
                   mean_ris_distance=float("nan"), outer_iterations=0,
                   error=f"{type(exc).__name__}: {exc}".replace("\n", " "))
        return row, {"row": row, "scenario": scenario_to_dict(s),
                     "wall_time": time.perf_counter() - t0}
    row.update(status=rec.status, ee=rec.final_ee, offloaded_bits=rec.offloaded_bits,
               mean_ris_distance=mean_ris_distance(z.trajectory, s),
               outer_iterations=rec.outer_iterations, error="")
    manifest = {
        "row": row,
        "scenario": scenario_to_dict(s),
        "record": rec.to_dict(),
        "solution": z.to_dict(),
        "wall_time": time.perf_counter() - t0,
        "environment": environment(),
    }
    return row, manifest


def environment() -> dict:
    import cvxpy
    import scipy
    return {"python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "cvxpy": cvxpy.__version__}


def manifest_name(row: dict) -> str:
    value = "" if np.isnan(row["value"]) else f"_{row['parameter']}-{row['value']:.6g}"
    return f"{row['scheme']}{value}_seed{row['seed']}.json"


def write_manifest(manifest: dict, directory) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    path = d / manifest_name(manifest["row"])
    path.write_text(json.dumps(manifest, indent=1, sort_keys=True, default=float))
    return path


def load_manifest(path) -> dict:
    return json.loads(Path(path).read_text())


def recomputed_ee(manifest: dict) -> float:
    """Efficiency recomputed from the serialised solution and scenario."""
    from .scenario import scenario_from_dict
    s = scenario_from_dict(manifest["scenario"])
    return vars_efficiency(DecisionVariables.from_dict(manifest["solution"]), s)


def _cell(args):
    scheme, s, seed, parameter, value = args
    return run_cell(scheme, s, seed, parameter, value)


def run_sweep(spec: SweepSpec, base: Scenario, jobs: int = 1,
              manifest_dir=None) -> ResultTable:
    cells = [(sc, apply_value(base, spec.parameter, v), seed, spec.parameter, v)
             for sc in spec.schemes for v in spec.values for seed in spec.seeds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_cell, cells))
    else:
        results = [_cell(c) for c in cells]
    table = ResultTable([row for row, _ in results]).sorted()
    if manifest_dir is not None:
        for _, man in results:
            write_manifest(man, manifest_dir)
    return table


def run_compare(base: Scenario, seeds: Iterable[int], schemes: Iterable[str] = tuple(SCHEMES),
                jobs: int = 1, manifest_dir=None):
    cells = [(sc, base, seed, "", float("nan")) for sc in schemes for seed in seeds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_cell, cells))
    else:
        results = [_cell(c) for c in cells]
    if manifest_dir is not None:
        for _, man in results:
            write_manifest(man, manifest_dir)
    return ResultTable([row for row, _ in results]).sorted(), [man for _, man in results]


# --------------------------------------------------------------------------
# plots

def _pyplot():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    matplotlib.rcParams["svg.hashsalt"] = "risuav"
    matplotlib.rcParams["svg.fonttype"] = "none"
    return plt


def _save(fig, path) -> Path:
    path = Path(path)
    fig.savefig(path, format="svg", metadata={"Date": None})
    import matplotlib.pyplot as plt
    plt.close(fig)
    return path


def emit_plot(table: ResultTable, x: str, y: str, path, title: str = "",
              xlabel: Optional[str] = None, ylabel: Optional[str] = None) -> Path:
    """One seed-averaged line per scheme; ``x`` and ``y`` are column names."""
    for c in (x, y):
        if c not in COLUMNS:
            raise KeyError(f"unknown column {c!r}")
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5, 3.6))
    for sc in table.schemes():
        groups: dict = {}
        for r in table.rows:
            if r["scheme"] == sc and r["status"] != "error":
                groups.setdefault(r[x], []).append(r[y])
        xs = sorted(groups)
        ax.plot(xs, [np.mean(groups[v]) for v in xs], marker="o", label=sc)
    ax.set_xlabel(xlabel or x)
    ax.set_ylabel(ylabel or y)
    if title:
        ax.set_title(title)
    ax.grid(alpha=0.3)
    ax.legend()
    fig.tight_layout()
    return _save(fig, path)


def emit_convergence_plot(record: RunRecord, path) -> Path:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5, 3.6))
    k = np.arange(1, len(record.alpha_trace) + 1)
    ax.plot(k, np.asarray(record.alpha_trace) / 1e6, marker="o", label="alpha (Mbit/J)")
    ax.plot(k, np.asarray(record.F_trace) / 1e6, marker="s", label="F(alpha) (Mbit)")
    ax.set_xlabel("outer iteration")
    ax.grid(alpha=0.3)
    ax.legend()
    fig.tight_layout()
    return _save(fig, path)


def emit_trajectory_plot(paths: dict, s: Scenario, path) -> Path:
    """Overlay of trajectories (label -> (N, 2) array) with RIS and devices."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(4.6, 4.6))
    start = np.asarray(s.geometry.uav_start, float)
    for label, q in paths.items():
        pts = np.vstack([start, np.asarray(q, float)])
        ax.plot(pts[:, 0], pts[:, 1], marker=".", label=label)
    dev = s.geometry.devices_array()
    ax.scatter(dev[:, 0], dev[:, 1], marker="^", color="k", label="devices")
    ris = s.geometry.ris_position
    ax.scatter([ris[0]], [ris[1]], marker="s", color="r", label="RIS")
    ax.set_xlabel("x (m)")
    ax.set_ylabel("y (m)")
    ax.set_aspect("equal")
    ax.legend(fontsize=7)
    fig.tight_layout()
    return _save(fig, path)


SWEEP_AXES = {
    "total_bits": "total task bits",
    "num_elements": "RIS elements M",
    "mission_period": "mission period T (s)",
    "cycles_per_bit": "CPU cycles per bit",
}


def write_sweep_outputs(table: ResultTable, spec: SweepSpec, out_dir) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = f"sweep_{spec.parameter}"
    files = {"csv": emit_csv(table, out / f"{stem}.csv"),
             "ee": emit_plot(table, "value", "ee", out / f"{stem}_ee.svg",
                             xlabel=SWEEP_AXES[spec.parameter], ylabel="EE (bit/J)")}
    files["offloaded"] = emit_plot(table, "value", "offloaded_bits", out / f"{stem}_offloaded.svg",
                                   xlabel=SWEEP_AXES[spec.parameter], ylabel="offloaded bits")
    return files
