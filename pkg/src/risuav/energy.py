"""Computation constraints, energy bookkeeping and the EE objective."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .scenario import Scenario

FEASIBILITY_TOL = 1e-6


class UndefinedEfficiencyError(ArithmeticError):
    pass


class SpeedFloorError(ValueError):
    pass


@dataclass(frozen=True)
class BitAllocation:
    local_bits: np.ndarray  # (N, I)
    uav_bits: np.ndarray    # (N, I)


@dataclass(frozen=True)
class DecisionVariables:
    """Every optimisation variable of the EE problem, slot-major arrays.

    ``order[n]`` is the SIC decoding permutation used in slot n and ``rates``
    are the SIC rates those powers achieve under it.
    """
    local_bits: np.ndarray   # (N, I) bits
    uav_bits: np.ndarray     # (N, I) bits
    powers: np.ndarray       # (N, I) W
    rates: np.ndarray        # (N, I) bits/s
    theta: np.ndarray        # (N, M) rad
    trajectory: np.ndarray   # (N, 2) m, last point pinned to q_F
    order: np.ndarray        # (N, I)

    @property
    def allocation(self) -> BitAllocation:
        return BitAllocation(self.local_bits, self.uav_bits)

    def replace(self, **kw) -> "DecisionVariables":
        return replace(self, **kw)

    def to_dict(self) -> dict:
        return {k: np.asarray(getattr(self, k)).tolist() for k in
                ("local_bits", "uav_bits", "powers", "rates", "theta", "trajectory", "order")}

    @classmethod
    def from_dict(cls, d: dict) -> "DecisionVariables":
        kw = {k: np.asarray(d[k], float) for k in
              ("local_bits", "uav_bits", "powers", "rates", "theta", "trajectory")}
        return cls(order=np.asarray(d["order"], int), **kw)


@dataclass(frozen=True)
class EnergyBreakdown:
    iot_offload: np.ndarray
    iot_compute: np.ndarray
    uav_compute: np.ndarray
    uav_fly: np.ndarray

    @property
    def iot(self) -> np.ndarray:
        return self.iot_offload + self.iot_compute

    @property
    def uav(self) -> np.ndarray:
        return self.uav_compute + self.uav_fly

    @property
    def per_slot(self) -> np.ndarray:
        return self.iot + self.uav

    @property
    def total(self) -> float:
        return float(np.sum(self.per_slot))


def local_compute_energy(bits, s: Scenario):
    t = s.slot_length
    return s.energy.kappa_iot * np.asarray(bits, float) ** 3 / t ** 2


def uav_compute_energy(uav_bits, s: Scenario):
    """Sum over the last axis (devices)."""
    t = s.slot_length
    return np.sum(s.energy.kappa_uav * np.asarray(uav_bits, float) ** 3, axis=-1) / t ** 2


def fly_energy(speed, s: Scenario):
    v = np.asarray(speed, float)
    if np.any(v < s.solver.min_speed_floor):
        raise SpeedFloorError(f"speed {np.min(v):.3g} m/s below floor "
                              f"{s.solver.min_speed_floor} m/s")
    return s.slot_length * (s.tau1 * v ** 3 + s.tau2 / v)


def speeds(trajectory, s: Scenario) -> np.ndarray:
    """v[1] is measured from q0; v[n] from q[n-1] afterwards."""
    traj = np.asarray(trajectory, float)
    pts = np.vstack([np.asarray(s.geometry.uav_start, float)[None, :], traj])
    return np.linalg.norm(np.diff(pts, axis=0), axis=1) / s.slot_length


def completed_bits(alloc: BitAllocation, rates, s: Optional[Scenario] = None,
                   slot_length: Optional[float] = None) -> float:
    t = slot_length if slot_length is not None else s.slot_length
    return float(np.sum(alloc.local_bits) + np.sum(np.asarray(rates) * t))


def completed_bits_per_slot(alloc: BitAllocation, rates, s: Scenario) -> np.ndarray:
    return np.sum(alloc.local_bits + np.asarray(rates) * s.slot_length, axis=1)


def energy_breakdown(alloc: BitAllocation, powers, trajectory, s: Scenario) -> EnergyBreakdown:
    t = s.slot_length
    return EnergyBreakdown(
        iot_offload=np.sum(np.asarray(powers, float) * t, axis=1),
        iot_compute=np.sum(local_compute_energy(alloc.local_bits, s), axis=1),
        uav_compute=uav_compute_energy(alloc.uav_bits, s),
        uav_fly=fly_energy(speeds(trajectory, s), s),
    )


def energy_efficiency(alloc: BitAllocation, powers, rates, trajectory, s: Scenario) -> float:
    bits = completed_bits(alloc, rates, s)
    energy = energy_breakdown(alloc, powers, trajectory, s).total
    if not energy > 0:
        raise UndefinedEfficiencyError("total energy is zero")
    return bits / energy


def vars_efficiency(z: DecisionVariables, s: Scenario) -> float:
    return energy_efficiency(z.allocation, z.powers, z.rates, z.trajectory, s)


@dataclass(frozen=True)
class FeasibilityReport:
    """Signed worst-case residual per constraint; <= 0 means satisfied."""
    residuals: dict = field(default_factory=dict)
    detail: dict = field(default_factory=dict)

    def max_violation(self) -> float:
        return max(self.residuals.values())

    def ok(self, tol: float = FEASIBILITY_TOL) -> bool:
        return self.max_violation() <= tol

    def violated(self, tol: float = FEASIBILITY_TOL) -> list[str]:
        return [k for k, v in self.residuals.items() if v > tol]


def check_feasibility(z: DecisionVariables, s: Scenario) -> FeasibilityReport:
    t = s.slot_length
    tk = s.tasks
    cyc = np.asarray(tk.cycles_per_bit)
    detail = {
        "demand": np.asarray(tk.bits_required) - np.sum(z.local_bits + z.uav_bits, axis=0),
        "uav_cpu": np.sum(z.uav_bits * cyc, axis=1) / t - tk.uav_cpu,
        "device_cpu": z.local_bits * cyc / t - np.asarray(tk.device_cpu),
        "offload": z.uav_bits - z.rates * t,
        "unit_modulus": np.abs(np.abs(np.exp(1j * np.asarray(z.theta))) - 1.0),
        "endpoints": np.atleast_1d(np.linalg.norm(z.trajectory[-1] - np.asarray(s.geometry.uav_end))),
        "speed": speeds(z.trajectory, s) - s.time.max_speed,
        "nonnegativity": -np.concatenate([np.ravel(z.local_bits), np.ravel(z.uav_bits),
                                          np.ravel(z.powers)]),
    }
    residuals = {k: float(np.max(v)) if np.size(v) else 0.0 for k, v in detail.items()}
    return FeasibilityReport(residuals, detail)


@dataclass(frozen=True)
class SubproblemSolution:
    """One block's optimised variables with the achieved objective.

    ``values`` maps variable names (``local_bits``, ``theta``, ...) to arrays;
    ``objective`` is the parametric objective in bits.
    """
    values: dict
    objective: float
    status: str = "optimal"
    diagnostics: dict = field(default_factory=dict)

    def __getitem__(self, key):
        return self.values[key]
