"""Dinkelbach outer loop over the block-coordinate inner loop, and baselines.

The ratio ``bits / energy`` is maximised through the parametric problem
``max  bits - alpha * energy``.  For a fixed alpha the inner loop cycles the
three blocks (bit/power, phases, trajectory); each block result is kept only
if it does not lower the parametric objective, so every inner trace is
nondecreasing.  The outer loop sets ``alpha`` to the efficiency reached and
stops once the parametric optimum is within the tolerance of zero.
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from . import bitpower, phase, trajectory
from .channel import ChannelDraws, channel_state, draw_channels
from .energy import (DecisionVariables, UndefinedEfficiencyError, check_feasibility,
                     completed_bits, energy_breakdown, vars_efficiency)
from .scenario import InfeasibleScenarioError, Scenario

__all__ = ["DecisionVariables", "RunRecord", "SchemeFlags", "SCHEMES", "parametric_objective",
           "warm_start", "bcd_inner", "dinkelbach", "run_baseline", "run_scheme"]

RECORD_SCHEMA = 1
MBIT = 1e6

# callables invoked with every finished RunRecord (the test suite audits traces here)
RECORD_OBSERVERS: list = []


@dataclass(frozen=True)
class SchemeFlags:
    optimize_phase: bool = True
    ris_enabled: bool = True
    optimize_trajectory: bool = True
    full_offload: bool = False


SCHEMES = {
    "proposed": SchemeFlags(),
    "random-phase": SchemeFlags(optimize_phase=False),
    "no-ris": SchemeFlags(optimize_phase=False, ris_enabled=False),
    "straight-line": SchemeFlags(optimize_trajectory=False),
    "full-offload": SchemeFlags(full_offload=True),
}


class BlockInfeasibleError(RuntimeError):
    pass


@dataclass
class RunRecord:
    """Everything needed to audit one optimisation run."""
    scheme: str
    seed: int
    scenario_digest: str
    alpha_trace: list = field(default_factory=list)       # alpha^(k), bits/J
    F_trace: list = field(default_factory=list)           # F(alpha^(k)), bits
    inner_traces: list = field(default_factory=list)      # per outer iteration, bits
    block_traces: list = field(default_factory=list)      # per outer iteration, per block
    dc_traces: list = field(default_factory=list)         # Mbit/s, per phase call and slot
    sca_traces: list = field(default_factory=list)        # bits, per trajectory call
    wall_times: list = field(default_factory=list)        # s per outer iteration
    final_ee: float = float("nan")
    status: str = "optimal"
    outer_iterations: int = 0
    offloaded_bits: float = float("nan")
    total_energy: float = float("nan")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["schema_version"] = RECORD_SCHEMA
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunRecord":
        d = dict(d)
        d.pop("schema_version", None)
        return cls(**d)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    @classmethod
    def loads(cls, text: str) -> "RunRecord":
        return cls.from_dict(json.loads(text))


def parametric_objective(z: DecisionVariables, alpha: float, s: Scenario) -> float:
    """Completed bits minus alpha times total energy (bits)."""
    bits = completed_bits(z.allocation, z.rates, s)
    energy = energy_breakdown(z.allocation, z.powers, z.trajectory, s).total
    return float(bits - alpha * energy)


def _gains(z: DecisionVariables, draws: ChannelDraws, s: Scenario, flags: SchemeFlags):
    return channel_state(z.trajectory, z.theta, draws, s, flags.ris_enabled).power_gains


def warm_start(s: Scenario, draws: ChannelDraws, seed: int,
               flags: SchemeFlags = SchemeFlags()) -> DecisionVariables:
    """Straight line, uniformly random phases, proportional bit split.

    Each slot computes ``min(cap, L_i/N)`` locally and the rest of the task
    is offloaded evenly over the slots at exactly the rate it needs.
    """
    N, I, M = s.num_slots, s.device_count, s.num_elements
    t = s.slot_length
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x5EED]))
    theta = rng.uniform(0.0, 2 * np.pi, (N, M))
    q = trajectory.straight_line(s)
    L = np.asarray(s.tasks.bits_required, float)
    cap = np.asarray(s.tasks.device_cpu) * t / np.asarray(s.tasks.cycles_per_bit)
    local = np.tile(np.minimum(cap, L / N), (N, 1))
    if flags.full_offload:
        local = np.zeros((N, I))
    uav = np.tile((L - local.sum(axis=0)) / N, (N, 1))
    uav = np.maximum(uav, 0.0)
    load = uav @ np.asarray(s.tasks.cycles_per_bit) / t
    if np.any(load > s.tasks.uav_cpu * (1 + 1e-12)):
        raise InfeasibleScenarioError("proportional split exceeds the UAV CPU budget")
    gains = channel_state(q, theta, draws, s, flags.ris_enabled).power_gains
    order = bitpower.sorted_order(gains)
    rates = uav / t * (1 + 1e-12)
    powers = bitpower.recover_powers(rates, gains, order, s)
    rates = bitpower.rates_from_powers(powers, gains, order, s)
    uav = np.minimum(uav, rates * t)
    return DecisionVariables(local, uav, powers, rates, theta, q, order)


def _held_rates(z: DecisionVariables, theta, q, draws, s, flags) -> np.ndarray:
    return trajectory.true_rates(q, theta, z.order, z.powers, draws, s, flags.ris_enabled)


def _bitpower_block(z, alpha, draws, s, flags):
    gains = _gains(z, draws, s, flags)
    sol = bitpower.solve_direct(bitpower.BitPowerFixed(gains, 0.0, flags.full_offload), alpha, s)
    if sol.status != "optimal":
        return None
    v = sol.values
    return z.replace(local_bits=v["local_bits"], uav_bits=v["uav_bits"], powers=v["powers"],
                     rates=v["rates"], order=np.asarray(v["order"], int))


def _phase_block(z, alpha, draws, s, flags, seed, first_pass, rec):
    st = channel_state(z.trajectory, z.theta, draws, s, flags.ris_enabled)
    sol = phase.optimize_phase(z, st, s, seed=seed, first_pass=first_pass)
    rec.dc_traces.append(sol.diagnostics["dc_trace"])
    theta = sol["theta"]
    rates = _held_rates(z, theta, z.trajectory, draws, s, flags)
    return z.replace(theta=theta, rates=rates)


def _trajectory_block(z, alpha, draws, s, flags, rec):
    res = trajectory.optimize_trajectory(z, draws, alpha, s, flags.ris_enabled)
    rec.sca_traces.append(res.trace)
    theta = res.theta if flags.optimize_phase else z.theta
    rates = _held_rates(z, theta, res.vars.q, draws, s, flags)
    return z.replace(trajectory=res.vars.q, theta=theta, rates=rates)


def bcd_inner(alpha: float, z0: DecisionVariables, draws: ChannelDraws, s: Scenario,
              flags: SchemeFlags = SchemeFlags(), seed: int = 0, first_pass: bool = False,
              record: Optional[RunRecord] = None):
    """Cycle bit/power -> phase -> trajectory until the objective settles.

    Returns (z, trace, block_trace); ``trace`` holds F after every full pass
    (starting with F(z0)) and ``block_trace`` after every block.
    """
    rec = record if record is not None else RunRecord("scratch", seed, s.digest())
    delta = s.solver.tolerance * MBIT
    z = z0
    f = parametric_objective(z, alpha, s)
    trace, blocks = [f], [f]

    def accept(candidate):
        nonlocal z, f
        if candidate is None:
            blocks.append(f)
            return
        if not check_feasibility(candidate, s).ok():
            blocks.append(f)
            return
        fc = parametric_objective(candidate, alpha, s)
        if fc >= f:
            z, f = candidate, fc
        blocks.append(f)

    for it in range(s.solver.max_inner_iters):
        accept(_bitpower_block(z, alpha, draws, s, flags))
        if flags.optimize_phase and flags.ris_enabled:
            accept(_phase_block(z, alpha, draws, s, flags, _inner_seed(seed, 1000 + len(rec.dc_traces)),
                                first_pass and it == 0, rec))
        if flags.optimize_trajectory:
            try:
                accept(_trajectory_block(z, alpha, draws, s, flags, rec))
            except trajectory.InfeasibleStartError as exc:
                raise BlockInfeasibleError(str(exc)) from exc
        trace.append(f)
        if abs(trace[-1] - trace[-2]) <= delta:
            break
    return z, trace, blocks


def dinkelbach(s: Scenario, seed: int = 0, scheme: str = "proposed",
               draws: Optional[ChannelDraws] = None, z0: Optional[DecisionVariables] = None):
    """Full optimisation for one scheme; returns (DecisionVariables, RunRecord)."""
    flags = SCHEMES[scheme]
    draws = draw_channels(s, seed) if draws is None else draws
    rec = RunRecord(scheme, int(seed), s.digest())
    z = warm_start(s, draws, seed, flags) if z0 is None else z0
    delta = s.solver.tolerance * MBIT
    try:
        alpha = vars_efficiency(z, s)
    except UndefinedEfficiencyError:
        alpha = 0.0
    best = z
    rec.status = "iteration-limit"
    for k in range(s.solver.max_outer_iters):
        t0 = time.perf_counter()
        z, trace, blocks = bcd_inner(alpha, z, draws, s, flags, _inner_seed(seed, k),
                                     first_pass=(k == 0), record=rec)
        F = parametric_objective(z, alpha, s)
        rec.alpha_trace.append(float(alpha))
        rec.F_trace.append(float(F))
        rec.inner_traces.append([float(v) for v in trace])
        rec.block_traces.append([float(v) for v in blocks])
        rec.wall_times.append(time.perf_counter() - t0)
        best = z
        if F <= delta:
            rec.status = "optimal"
            break
        alpha = vars_efficiency(z, s)
    rec.outer_iterations = len(rec.alpha_trace)
    rec.final_ee = float(vars_efficiency(best, s))
    rec.offloaded_bits = float(np.sum(best.rates) * s.slot_length)
    rec.total_energy = float(energy_breakdown(best.allocation, best.powers, best.trajectory, s).total)
    rec.dc_traces = [[list(map(float, tr)) for tr in call] for call in rec.dc_traces]
    rec.sca_traces = [list(map(float, tr)) for tr in rec.sca_traces]
    for observe in RECORD_OBSERVERS:
        observe(rec)
    return best, rec


def _inner_seed(seed: int, k: int) -> int:
    return int(np.random.SeedSequence([int(seed), int(k)]).generate_state(1)[0])


def run_baseline(kind: str, s: Scenario, seed: int = 0, draws: Optional[ChannelDraws] = None):
    if kind not in SCHEMES or kind == "proposed":
        raise ValueError(f"unknown baseline {kind!r}")
    return dinkelbach(s, seed, kind, draws)


def run_scheme(kind: str, s: Scenario, seed: int = 0, draws: Optional[ChannelDraws] = None):
    return dinkelbach(s, seed, kind, draws)
