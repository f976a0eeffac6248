"""Bit allocation and transmit power with phases and trajectory held fixed.

Powers are replaced by offloading rates: with the SIC order fixed, the
received-power prefix sums ``S_k = sigma^2 2^{C_k/B}`` (``C_k`` the cumulative
rate of the first k decoded devices) determine every power, and the total
offload energy of a slot telescopes to

    t sigma^2 [ sum_k (1/g_k - 1/g_{k+1}) 2^{C_k/B} - 1/g_1 ],   1/g_{I+1} := 0

which is convex in the rates.  Two solution routes exist:

* :func:`solve_direct` hands the convex program to :mod:`convex_core`;
* :func:`dual_search` works on the Lagrangian dual.  For fixed multipliers the
  inner maximisation separates: local and UAV bits have square-root closed
  forms, and per slot the rate part is a separable concave problem over the
  nondecreasing chain ``0 <= C_1 <= ... <= C_I`` solved exactly by pooling
  adjacent violators.  Multipliers are updated one coordinate at a time by a
  bracketed root search on the (monotone) partial derivative of the dual.

Internally bits are measured in Mbit so every quantity is O(1); multipliers
are invariant under that rescaling.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import cvxpy as cp
import numpy as np
from scipy.optimize import brentq, minimize

from . import convex_core
from .channel import DecodingOrder, decoding_order, sic_rates
from .energy import SubproblemSolution
from .scenario import Scenario

MBIT = 1e6
LN2 = np.log(2.0)


@dataclass(frozen=True)
class RateVariables:
    offload_rates: np.ndarray  # (N, I) bits/s, indexed by device
    s_values: np.ndarray       # (N, I) prefix received power, indexed by position


@dataclass(frozen=True)
class DualVariables:
    omega: np.ndarray     # (I,)   demand
    psi: np.ndarray       # (N, I) device CPU, by device
    varsigma: np.ndarray  # (N,)   UAV CPU
    xi: np.ndarray        # (N, I) offload coupling, by decoding position


@dataclass(frozen=True)
class BitPowerFixed:
    """Everything the block needs from the other two blocks."""
    gains: np.ndarray            # (N, I) |h|^2
    fly_energy: float = 0.0      # J, constant here, only used for reporting
    full_offload: bool = False


# --------------------------------------------------------------------------
# rate/power algebra

def _as_order(order, gains) -> np.ndarray:
    gains = np.atleast_2d(gains)
    if order is None:
        return np.stack([decoding_order(g).pi for g in gains])
    return np.atleast_2d(np.asarray(order, int))


def sorted_order(gains) -> np.ndarray:
    return _as_order(None, gains)


def s_values(rates, order, s: Scenario) -> np.ndarray:
    rates = np.atleast_2d(np.asarray(rates, float))
    pi = _as_order(order, rates)
    ordered = np.take_along_axis(rates, pi, axis=1)
    cum = np.cumsum(ordered, axis=1)
    return s.radio.noise_power * np.exp2(cum / s.radio.bandwidth)


def rate_variables(rates, order, s: Scenario) -> RateVariables:
    return RateVariables(np.atleast_2d(np.asarray(rates, float)), s_values(rates, order, s))


def recover_powers(rates, gains, order, s: Scenario) -> np.ndarray:
    """Powers reproducing ``rates`` under SIC order ``order`` (per device)."""
    rates = np.atleast_2d(np.asarray(rates, float))
    gains = np.atleast_2d(np.asarray(gains, float))
    pi = _as_order(order, gains)
    S = s_values(rates, pi, s)
    prev = np.concatenate([np.full((S.shape[0], 1), s.radio.noise_power), S[:, :-1]], axis=1)
    g_pos = np.take_along_axis(gains, pi, axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        p_pos = np.where(S > prev, (S - prev) / g_pos, 0.0)
    out = np.empty_like(p_pos)
    np.put_along_axis(out, pi, p_pos, axis=1)
    return out


def energy_coefficients(gains, order) -> np.ndarray:
    """c_k = 1/g_k - 1/g_{k+1} by decoding position, with 1/g_{I+1} = 0."""
    gains = np.atleast_2d(np.asarray(gains, float))
    pi = _as_order(order, gains)
    inv = 1.0 / np.take_along_axis(gains, pi, axis=1)
    nxt = np.concatenate([inv[:, 1:], np.zeros((inv.shape[0], 1))], axis=1)
    return inv - nxt


def offload_energy_closed_form(rates, gains, order, s: Scenario) -> float:
    """Total offload energy (J) of all slots from the telescoped S-recursion."""
    gains = np.atleast_2d(np.asarray(gains, float))
    pi = _as_order(order, gains)
    c = energy_coefficients(gains, pi)
    rates = np.atleast_2d(np.asarray(rates, float))
    cum = np.cumsum(np.take_along_axis(rates, pi, axis=1), axis=1)
    # sum_k c_k = 1/g_1, so the boundary term folds into S_k - sigma^2 (expm1 avoids cancellation)
    excess = s.radio.noise_power * np.expm1(cum * LN2 / s.radio.bandwidth)
    return float(s.slot_length * np.sum(c * excess))


def rates_from_powers(powers, gains, order, s: Scenario) -> np.ndarray:
    powers = np.atleast_2d(powers)
    gains = np.atleast_2d(gains)
    pi = _as_order(order, gains)
    out = np.empty_like(powers, dtype=float)
    for n in range(powers.shape[0]):
        inv = np.empty_like(pi[n])
        inv[pi[n]] = np.arange(pi.shape[1])
        out[n] = sic_rates(powers[n], gains[n], DecodingOrder(pi[n], inv),
                           s.radio.bandwidth, s.radio.noise_power)
    return out


# --------------------------------------------------------------------------
# objective and repair

def block_objective(local, uav, rates, powers, alpha: float, s: Scenario,
                    fly_energy: float = 0.0) -> float:
    """Sum L - alpha Sum E in bits for the given block variables."""
    t = s.slot_length
    e = s.energy
    bits = np.sum(local) + t * np.sum(rates)
    energy = (np.sum(e.kappa_iot * local ** 3) / t ** 2 + t * np.sum(powers)
              + np.sum(e.kappa_uav * uav ** 3) / t ** 2 + fly_energy)
    return float(bits - alpha * energy)


def _caps(s: Scenario, n_slots: int, full_offload: bool):
    t = s.slot_length
    cyc = np.asarray(s.tasks.cycles_per_bit, float)
    loc = np.broadcast_to(np.asarray(s.tasks.device_cpu) * t / cyc, (n_slots, cyc.size))
    if full_offload:
        loc = np.zeros_like(loc)
    uav = np.broadcast_to(s.tasks.uav_cpu * t / cyc, (n_slots, cyc.size))
    return np.array(loc, float), np.array(uav, float)


def repair(local, uav, rates, gains, order, s: Scenario, full_offload: bool = False,
           margin: float = 1e-12):
    """Project solver output onto the feasible set in natural units.

    Clips to the CPU boxes, caps served bits by received bits, restores the
    UAV CPU budget and fills any remaining demand gap, first with local slack
    and then with UAV slack (raising rates only if needed).
    Returns (local, uav, rates, powers).
    """
    t = s.slot_length
    cyc = np.asarray(s.tasks.cycles_per_bit, float)
    demand = np.asarray(s.tasks.bits_required, float)
    loc_cap, _ = _caps(s, local.shape[0], full_offload)
    local = np.clip(np.asarray(local, float), 0.0, loc_cap * (1 - margin))
    rates = np.maximum(np.asarray(rates, float), 0.0)
    powers = recover_powers(rates, gains, order, s)
    rates = rates_from_powers(powers, gains, order, s)
    uav = np.clip(np.asarray(uav, float), 0.0, None)
    uav = np.minimum(uav, rates * t * (1 - margin))
    budget = s.tasks.uav_cpu * t * (1 - margin)
    load = uav @ cyc
    over = load > budget
    if np.any(over):
        uav[over] *= (budget / load[over])[:, None]

    deficit = demand * (1 + margin) - np.sum(local + uav, axis=0)
    raise_rates = False
    for i in np.flatnonzero(deficit > 0):
        need = deficit[i]
        room = loc_cap[:, i] * (1 - margin) - local[:, i]
        take = _spread(need, room)
        local[:, i] += take
        need -= take.sum()
        if need <= 0:
            continue
        head = (budget - uav @ cyc) / cyc[i]
        take = _spread(need, np.maximum(head, 0.0))
        uav[:, i] += take
        raise_rates = True
    if raise_rates:
        need_rate = uav / (t * (1 - margin))
        if np.any(need_rate > rates):
            rates = np.maximum(rates, need_rate * (1 + 1e-12))
            powers = recover_powers(rates, gains, order, s)
            rates = rates_from_powers(powers, gains, order, s)
            uav = np.minimum(uav, rates * t)
    return local, uav, rates, powers


def _spread(need: float, room: np.ndarray) -> np.ndarray:
    """Take ``need`` from ``room`` proportionally (as much as is available)."""
    total = room.sum()
    if total <= 0:
        return np.zeros_like(room)
    frac = min(1.0, need / total)
    return room * frac


# --------------------------------------------------------------------------
# direct route

class _DirectModel:
    """Parameterised (DPP) program for one (N, I) shape, compiled once."""

    def __init__(self, n_slots: int, n_dev: int, with_pmax: bool):
        N, I = n_slots, n_dev
        self.shape = (N, I)
        self.l = cp.Variable((N, I), nonneg=True)
        self.u = cp.Variable((N, I), nonneg=True)
        self.r = cp.Variable(N * I, nonneg=True)  # Mbit/s, slot-major by device
        self.T = cp.Parameter((N * I, N * I))      # cumulative-sum map scaled by ln2/B
        self.W = cp.Parameter(N * I, nonneg=True)  # alpha t sigma^2 c_k
        self.a_loc = cp.Parameter(nonneg=True)
        self.a_uav = cp.Parameter(nonneg=True)
        self.t = cp.Parameter(nonneg=True)
        self.demand = cp.Parameter(I, nonneg=True)
        self.loc_cap = cp.Parameter((N, I), nonneg=True)
        self.cyc_over_t = cp.Parameter(I, nonneg=True)
        self.uav_budget = cp.Parameter(nonneg=True)
        r2 = cp.reshape(self.r, (N, I), order="C")
        cum = self.T @ self.r
        obj = (cp.sum(self.l) + self.t * cp.sum(self.r)
               - self.a_loc * cp.sum(cp.power(self.l, 3))
               - self.a_uav * cp.sum(cp.power(self.u, 3))
               - self.W @ cp.exp(cum))
        self.c_demand = cp.sum(self.l + self.u, axis=0) >= self.demand
        self.c_uav = self.u @ self.cyc_over_t <= self.uav_budget
        self.c_loc = self.l <= self.loc_cap
        self.c_off = self.u <= self.t * r2
        cons = [self.c_demand, self.c_uav, self.c_loc, self.c_off]
        self.cmax = None
        if with_pmax:
            self.cmax = cp.Parameter(N, nonneg=True)
            last = np.arange(N) * I + (I - 1)
            cons.append(cum[last] <= self.cmax)
        self.problem = cp.Problem(cp.Maximize(obj), cons)
        self.program = convex_core.ConvexProgram(self.problem, "nlp")


_MODELS: dict = {}


def _model(n_slots, n_dev, with_pmax) -> _DirectModel:
    key = (n_slots, n_dev, with_pmax)
    if key not in _MODELS:
        _MODELS[key] = _DirectModel(*key)
    return _MODELS[key]


def _cumsum_matrix(order: np.ndarray, scale: float) -> np.ndarray:
    N, I = order.shape
    T = np.zeros((N * I, N * I))
    for n in range(N):
        for k in range(I):
            T[n * I + k, n * I + order[n, :k + 1]] = scale
    return T


def solve_direct(fixed: BitPowerFixed, alpha: float, s: Scenario,
                 certify: bool = False, tol: Optional[float] = None) -> SubproblemSolution:
    """Solve the rate-form block problem with the conic engine."""
    gains = np.atleast_2d(np.asarray(fixed.gains, float))
    N, I = gains.shape
    pi = sorted_order(gains)
    t = s.slot_length
    e, r = s.energy, s.radio
    a = alpha / MBIT
    pmax = s.solver.p_max
    m = _model(N, I, pmax is not None)

    c = energy_coefficients(gains, pi)
    m.T.value = _cumsum_matrix(pi, LN2 / (r.bandwidth / MBIT))
    m.W.value = np.ravel(a * t * r.noise_power * c)
    m.a_loc.value = a * e.kappa_iot * MBIT ** 3 / t ** 2
    m.a_uav.value = a * e.kappa_uav * MBIT ** 3 / t ** 2
    m.t.value = t
    m.demand.value = np.asarray(s.tasks.bits_required, float) / MBIT
    loc_cap, _ = _caps(s, N, fixed.full_offload)
    m.loc_cap.value = loc_cap / MBIT
    cyc = np.asarray(s.tasks.cycles_per_bit, float)
    m.cyc_over_t.value = cyc / t
    m.uav_budget.value = s.tasks.uav_cpu / MBIT
    if m.cmax is not None:
        gmin = gains.min(axis=1)
        m.cmax.value = np.log1p(pmax * gmin / r.noise_power)

    rep = convex_core.solve(m.program, tol=tol, certify=certify)
    diag = {"solver_status": rep.status, "kkt_residual": rep.kkt_residual,
            "iterations": rep.iterations, "wall_time": rep.wall_time}
    if rep.status != convex_core.OPTIMAL:
        return SubproblemSolution({}, float("nan"), rep.status, diag)

    local = np.asarray(m.l.value) * MBIT
    uav = np.asarray(m.u.value) * MBIT
    rates = np.asarray(m.r.value).reshape(N, I) * MBIT
    local, uav, rates, powers = repair(local, uav, rates, gains, pi, s, fixed.full_offload)
    obj = block_objective(local, uav, rates, powers, alpha, s, fixed.fly_energy)
    duals = DualVariables(
        omega=np.maximum(np.asarray(m.c_demand.dual_value, float), 0.0),
        psi=np.maximum(np.asarray(m.c_loc.dual_value, float), 0.0),
        varsigma=np.maximum(np.atleast_1d(np.asarray(m.c_uav.dual_value, float)), 0.0),
        xi=np.take_along_axis(np.maximum(np.asarray(m.c_off.dual_value, float), 0.0), pi, axis=1),
    )
    diag["duals"] = duals
    values = {"local_bits": local, "uav_bits": uav, "rates": rates, "powers": powers, "order": pi}
    return SubproblemSolution(values, obj, convex_core.OPTIMAL, diag)


# --------------------------------------------------------------------------
# KKT route

class _KKT:
    """Inner maximiser of the partial Lagrangian, everything in Mbit."""

    def __init__(self, gains, alpha, s: Scenario, full_offload=False):
        self.gains = np.atleast_2d(np.asarray(gains, float))
        N, I = self.gains.shape
        self.N, self.I = N, I
        self.pi = sorted_order(self.gains)
        self.t = s.slot_length
        self.a = alpha / MBIT
        self.k_loc = s.energy.kappa_iot * MBIT ** 3
        self.k_uav = s.energy.kappa_uav * MBIT ** 3
        self.B = s.radio.bandwidth / MBIT
        cyc = np.asarray(s.tasks.cycles_per_bit, float)
        self.cyc_t = cyc / self.t
        loc_cap, uav_cap = _caps(s, N, full_offload)
        self.loc_cap = loc_cap / MBIT
        self.uav_cap = uav_cap / MBIT
        self.demand = np.asarray(s.tasks.bits_required, float) / MBIT
        self.budget = s.tasks.uav_cpu / MBIT
        self.f = self.a * self.t * s.radio.noise_power * energy_coefficients(self.gains, self.pi)
        inv = np.empty_like(self.pi)
        np.put_along_axis(inv, self.pi, np.arange(I)[None, :].repeat(N, 0), axis=1)
        self.psi_pos = inv

    # closed forms -------------------------------------------------------
    def local(self, omega):
        x = (1.0 + omega)[None, :] * self.t ** 2 / (3 * self.a * self.k_loc)
        return np.minimum(np.sqrt(np.broadcast_to(x, self.loc_cap.shape)), self.loc_cap)

    def uav(self, omega, varsigma, xi_dev):
        coef = omega[None, :] - varsigma[:, None] * self.cyc_t[None, :] - xi_dev
        x = np.maximum(coef, 0.0) * self.t ** 2 / (3 * self.a * self.k_uav)
        return np.minimum(np.sqrt(x), self.uav_cap)

    def chain(self, n, xi_pos_row):
        """Cumulative rates by position for slot n (exact, pooled)."""
        a = self.t * (1.0 + xi_pos_row)
        e = a - np.append(a[1:], 0.0)
        return pool_chain(e, self.f[n], self.B)

    def rates(self, xi_pos):
        out = np.empty((self.N, self.I))
        for n in range(self.N):
            C = self.chain(n, xi_pos[n])
            r_pos = np.diff(np.concatenate([[0.0], C]))
            out[n, self.pi[n]] = r_pos
        return out

    def xi_dev(self, xi_pos):
        return np.take_along_axis(xi_pos, self.psi_pos, axis=1)


def _block_argmax(e: float, f: float, B: float) -> float:
    if f <= 0:
        return np.inf if e > 0 else -np.inf
    if e <= 0:
        return -np.inf
    return B * np.log2(B * e / (LN2 * f))


def pool_chain(e, f, B: float) -> np.ndarray:
    """argmax sum_k e_k C_k - f_k 2^{C_k/B} over 0 <= C_1 <= ... <= C_I."""
    blocks: list[list] = []  # [sum_e, sum_f, count, value]
    for ek, fk in zip(e, f):
        blocks.append([ek, fk, 1, _block_argmax(ek, fk, B)])
        while len(blocks) > 1 and blocks[-2][3] > blocks[-1][3]:
            e2, f2, n2, _ = blocks.pop()
            b = blocks[-1]
            b[0] += e2
            b[1] += f2
            b[2] += n2
            b[3] = _block_argmax(b[0], b[1], B)
    out = np.concatenate([[max(b[3], 0.0)] * b[2] for b in blocks])
    if np.any(np.isinf(out)):
        raise ArithmeticError("rate chain unbounded (zero energy weight)")
    return out


def closed_form_primal(duals: DualVariables, gains, alpha: float, s: Scenario,
                       full_offload: bool = False):
    """Inner maximiser for given multipliers; returns (local, uav, powers) in natural units.

    Local and UAV bits use the square-root stationarity solutions clamped to
    their boxes; rates come from the pooled chain and powers from the prefix
    recursion.
    """
    if not alpha > 0:
        raise ValueError("closed form requires alpha > 0")
    k = _KKT(gains, alpha, s, full_offload)
    local = k.local(np.asarray(duals.omega, float))
    uav = k.uav(np.asarray(duals.omega, float), np.asarray(duals.varsigma, float),
                k.xi_dev(np.asarray(duals.xi, float)))
    rates = k.rates(np.asarray(duals.xi, float)) * MBIT
    powers = recover_powers(rates, k.gains, k.pi, s)
    return local * MBIT, uav * MBIT, powers


def _root(fun, lo=0.0, hi=1.0):
    """Smallest lam >= lo with fun(lam) >= 0 for nondecreasing ``fun``."""
    if fun(lo) >= 0:
        return lo
    hi = max(hi, lo + 1e-12)
    while fun(hi) < 0:
        hi *= 4.0
        if hi > 1e12:
            return np.inf
    return brentq(fun, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)


class _SlotSolver:
    """Exact inner maximisation of one slot for given demand/CPU prices.

    With ``w_i = omega_i - varsigma C_i / t`` the offload multiplier of device i
    must equal max(0, w_i - 3 a k_U (t r_i)^2 / t^2) while t r_i is below the
    UAV-bit ceiling, and 0 beyond it.  Device by device this is a monotone
    scalar equation: either its continuous branch has a root below the
    ceiling, or the answer sits exactly where t r_i crosses the ceiling.
    """

    def __init__(self, k: _KKT, n: int):
        self.k, self.n = k, n
        self.pi = k.pi[n]
        self.psi = k.psi_pos[n]
        self.c = 3 * k.a * k.k_uav / k.t ** 2

    def _rates(self, xi_dev):
        C = self.k.chain(self.n, xi_dev[self.pi])
        r_pos = np.diff(np.concatenate([[0.0], C]))
        return r_pos[self.psi]

    def _ubar(self, w):
        k = self.k
        return np.minimum(np.sqrt(np.maximum(w, 0.0) / self.c), k.uav_cap[self.n])

    def _device(self, xi, i, w_i, ubar_i):
        t = self.k.t

        def tr(x):
            z = xi.copy()
            z[i] = x
            return t * self._rates(z)[i]

        def phi(x):
            return x - max(0.0, w_i - self.c * tr(x) ** 2)

        x = w_i if phi(w_i) <= 0 else brentq(phi, 0.0, w_i, xtol=1e-16, rtol=1e-15)
        if tr(x) < ubar_i:
            return x
        if tr(0.0) >= ubar_i:
            return 0.0
        # fixed point sits on the ceiling
        return brentq(lambda y: tr(y) - ubar_i, 0.0, x, xtol=1e-16, rtol=1e-15)

    def solve(self, w):
        k = self.k
        active = np.flatnonzero(w > 0)
        xi = np.zeros_like(w)
        ubar = self._ubar(w)
        if active.size:
            xi[active] = w[active]
            for _ in range(100):
                prev = xi.copy()
                for i in active:
                    xi[i] = self._device(xi, i, w[i], ubar[i])
                if np.max(np.abs(xi - prev)) <= 1e-14 * (1.0 + np.max(np.abs(xi))):
                    break
        r = self._rates(xi)
        u = np.minimum(k.t * r, ubar)
        return xi, r, u

    def value(self, w, r, u):
        """Slot part of the Lagrangian at its maximiser (xi terms vanish)."""
        k = self.k
        C = np.cumsum(r[self.pi])
        return float(np.sum(k.t * r + w * u - k.a * k.k_uav * u ** 3 / k.t ** 2)
                     - np.sum(k.f[self.n] * np.exp2(C / k.B)))


@dataclass
class DualSearchResult:
    duals: DualVariables
    solution: SubproblemSolution
    converged: bool
    sweeps: int
    residual: float
    fell_back: bool = False
    history: list = field(default_factory=list)


def dual_search(fixed: BitPowerFixed, alpha: float, s: Scenario, tol: float = 1e-7,
                max_sweeps: int = 5, fallback: bool = True) -> DualSearchResult:
    """Minimise the Lagrangian dual over the demand and UAV-CPU multipliers.

    For given (omega, varsigma) every slot is solved exactly, including its
    offload multipliers xi.  The reduced dual is convex with the constraint
    values as gradient; it is minimised with L-BFGS-B and then polished by
    exact coordinate roots.  The primal is read off the inner maximiser and
    projected onto the feasible set; convergence is certified by the relative
    duality gap between the dual bound and that feasible primal.
    """
    if not alpha > 0:
        raise ValueError("dual search requires alpha > 0")
    k = _KKT(fixed.gains, alpha, s, fixed.full_offload)
    N, I = k.N, k.I
    slots = [_SlotSolver(k, n) for n in range(N)]
    sig2 = s.radio.noise_power
    g1 = np.take_along_axis(k.gains, k.pi[:, :1], axis=1)[:, 0]
    # objective terms the Lagrangian drops (Mbit)
    const = k.a * k.t * sig2 * np.sum(1.0 / g1) - k.a * fixed.fly_energy

    def inner(om, v):
        xi, r, u = np.zeros((N, I)), np.zeros((N, I)), np.zeros((N, I))
        val = 0.0
        for n in range(N):
            w = om - v[n] * k.cyc_t
            xi[n], r[n], u[n] = slots[n].solve(w)
            val += slots[n].value(w, r[n], u[n])
        return xi, r, u, val

    def dual_value(x):
        om, v = x[:I], x[I:]
        l = k.local(om)
        _, _, u, val = inner(om, v)
        val += float(np.sum((1 + om)[None, :] * l - k.a * k.k_loc * l ** 3 / k.t ** 2))
        val += -om @ k.demand + v.sum() * k.budget
        grad = np.concatenate([np.sum(l + u, axis=0) - k.demand, k.budget - u @ k.cyc_t])
        return val, grad

    def primal(om, v):
        xi, r, u, _ = inner(om, v)
        loc = k.local(om)
        out = repair(loc * MBIT, u * MBIT, r * MBIT, k.gains, k.pi, s, fixed.full_offload)
        obj = block_objective(*out, alpha, s, fixed.fly_energy)
        return xi, out, obj

    def gap_of(x):
        d = dual_value(x)[0] + const
        _, out, obj = primal(x[:I], x[I:])
        return (d - obj / MBIT) / max(1.0, abs(obj / MBIT)), out, obj

    x = np.zeros(I + N)
    gap, out, obj = gap_of(x)
    history = [gap]
    sweeps = 0
    if gap > tol:
        opt = minimize(dual_value, x, jac=True, method="L-BFGS-B",
                       bounds=[(0.0, None)] * (I + N),
                       options={"maxiter": 500, "ftol": 1e-15, "gtol": 1e-12})
        x = opt.x.copy()
        gap, out, obj = gap_of(x)
        history.append(gap)
    while gap > tol and sweeps < max_sweeps:
        sweeps += 1
        for j in range(I + N):
            def g(y, j=j):
                z = x.copy()
                z[j] = y
                return dual_value(z)[1][j]
            x[j] = _root(g, hi=max(1.0, 2 * x[j]))
            if not np.isfinite(x[j]):
                break
        if not np.all(np.isfinite(x)):
            break
        gap, out, obj = gap_of(x)
        history.append(gap)

    finite = bool(np.all(np.isfinite(x)))
    converged = finite and gap <= tol
    omega, vs = x[:I].copy(), x[I:].copy()
    xi, out, obj = primal(omega, vs) if finite else (np.zeros((N, I)), out, obj)
    local = k.local(omega)
    stat = (1 + omega)[None, :] - 3 * k.a * k.k_loc * local ** 2 / k.t ** 2
    psi = np.where(local >= k.loc_cap * (1 - 1e-12), np.maximum(stat, 0.0) / k.cyc_t[None, :], 0.0)
    duals = DualVariables(omega, psi, vs, np.take_along_axis(xi, k.pi, axis=1))
    loc_n, uav_n, rates_n, powers = out
    sol = SubproblemSolution(
        {"local_bits": loc_n, "uav_bits": uav_n, "rates": rates_n, "powers": powers, "order": k.pi},
        obj, convex_core.OPTIMAL if converged else convex_core.ITERATION_LIMIT,
        {"sweeps": sweeps, "duality_gap": gap})
    fell_back = False
    if not converged and fallback:
        sol = solve_direct(fixed, alpha, s)
        fell_back = True
    return DualSearchResult(duals, sol, converged, sweeps, gap, fell_back, history)
