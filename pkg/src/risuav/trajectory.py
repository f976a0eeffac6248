"""UAV trajectory block: successive convex approximation with auxiliaries.

Allocation, powers and decoding order are held fixed.  The convex step works
on the coherent channel magnitude

    Xi_i(u, w) = a_i u^(-eps/2) + b_i / w,   a_i = sqrt(rho)|g_i|,
                                             b_i = sqrt(rho) sum_m |h_iR[m]|,

with upper auxiliaries ``u >= d_iU``, ``w >= d_RU`` for the signal-plus-
interference log (linearised, it is convex in (u, w)) and lower auxiliaries,
in log variables, for the interference-only log so each device's rate floor
stays conservative.  Accepted steps are judged on the true channel with the
current phases, re-steered for the new departure angle.

Rates inside the convex step are Mbit/s and the objective is in Mbit.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional

import cvxpy as cp
import numpy as np

from . import convex_core
from .channel import (ChannelDraws, DecodingOrder, aod_cosine, channel_state,
                      device_ris_gains, uav_device_distance, uav_ris_distance)
from .energy import DecisionVariables, SubproblemSolution, fly_energy, speeds
from .scenario import Scenario

MBIT = 1e6
LN2 = np.log(2.0)
BACKTRACK_STEPS = 8


class InfeasibleStartError(ValueError):
    pass


@dataclass(frozen=True)
class TrajectoryVars:
    q: np.ndarray      # (N, 2)
    u: np.ndarray      # (N, I) by device
    w: np.ndarray      # (N,)
    vbar: np.ndarray   # (N,)

    @classmethod
    def tight(cls, q, s: Scenario) -> "TrajectoryVars":
        q = np.asarray(q, float)
        return cls(q, uav_device_distance(q, s), uav_ris_distance(q, s), speeds(q, s))


@dataclass(frozen=True)
class Magnitudes:
    a: np.ndarray   # (N, I) sqrt(rho)|g| of the direct link
    b: np.ndarray   # (I,) sqrt(rho) sum_m |h_iR[m]|


@dataclass(frozen=True)
class SurrogateCoefficients:
    """Linearisation data at an expansion point (natural units).

    A[n, k] is the received power plus noise of the first k+1 decoded devices,
    B[n, k, j] = dA_k/du of the device in position j (zero for j > k) and
    C[n, k] = dA_k/dw.
    """
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    Xi: np.ndarray   # (N, I) by device


def magnitudes(draws: ChannelDraws, s: Scenario, ris_enabled: bool = True) -> Magnitudes:
    rho = s.radio.ref_path_loss
    a = np.sqrt(rho) * np.abs(draws.direct_scatter)
    b = np.sqrt(rho) * np.sum(np.abs(device_ris_gains(draws, s)), axis=1)
    if not ris_enabled:
        b = np.zeros_like(b)
    return Magnitudes(a, b)


def xi_values(u, w, mags: Magnitudes, s: Scenario) -> np.ndarray:
    eps = s.radio.direct_exponent
    return mags.a * np.asarray(u, float) ** (-eps / 2) + mags.b / np.asarray(w, float)[:, None]


def _pi(order, n_slots: int, n_dev: int) -> np.ndarray:
    pi = np.asarray(order, int)
    if pi.ndim == 1:
        pi = np.tile(pi, (n_slots, 1))
    return pi.reshape(n_slots, n_dev)


def _prefix_power(xi, powers, pi):
    rx = np.asarray(powers, float) * xi ** 2
    return np.cumsum(np.take_along_axis(rx, pi, axis=1), axis=1)


def surrogate_rates(vars: TrajectoryVars, mags: Magnitudes, powers, order, s: Scenario):
    """(M1, M2) in bit/s, indexed by device, from the coherent magnitude.

    M1 of a device is B log2 of the received power of everything decoded up
    to and including it (plus noise); M2 stops one position earlier.
    """
    N, I = np.shape(vars.u)
    pi = _pi(order, N, I)
    sig2 = s.radio.noise_power
    B = s.radio.bandwidth
    pre = _prefix_power(xi_values(vars.u, vars.w, mags, s), powers, pi) + sig2
    before = np.concatenate([np.full((N, 1), sig2), pre[:, :-1]], axis=1)
    m1 = np.empty_like(pre)
    m2 = np.empty_like(pre)
    np.put_along_axis(m1, pi, B * np.log2(pre), axis=1)
    np.put_along_axis(m2, pi, B * np.log2(before), axis=1)
    return m1, m2


def surrogate_coefficients(vars: TrajectoryVars, mags: Magnitudes, powers, order,
                           s: Scenario) -> SurrogateCoefficients:
    N, I = np.shape(vars.u)
    pi = _pi(order, N, I)
    eps = s.radio.direct_exponent
    p = np.asarray(powers, float)
    xi = xi_values(vars.u, vars.w, mags, s)
    A = _prefix_power(xi, p, pi) + s.radio.noise_power
    # d(p Xi^2)/du and /dw per device
    du = -eps * p * xi * mags.a * vars.u ** (-eps / 2 - 1)
    dw = -2.0 * p * xi * mags.b / vars.w[:, None] ** 2
    du_pos = np.take_along_axis(du, pi, axis=1)
    tri = np.tril(np.ones((I, I)))
    Bc = tri[None, :, :] * du_pos[:, None, :]
    C = np.cumsum(np.take_along_axis(dw, pi, axis=1), axis=1)
    return SurrogateCoefficients(A, Bc, C, xi)


def taylor_lower_bound(vars_prev: TrajectoryVars, vars: TrajectoryVars, mags: Magnitudes,
                       powers, order, s: Scenario) -> np.ndarray:
    """First-order expansion of M1 at vars_prev, evaluated at vars (bit/s, by device)."""
    N, I = np.shape(vars.u)
    pi = _pi(order, N, I)
    co = surrogate_coefficients(vars_prev, mags, powers, order, s)
    B = s.radio.bandwidth
    du_pos = np.take_along_axis(np.asarray(vars.u) - vars_prev.u, pi, axis=1)
    dw = np.asarray(vars.w) - vars_prev.w
    lin = np.einsum("nkj,nj->nk", co.B, du_pos) + co.C * dw[:, None]
    hat = B * (np.log2(co.A) + lin / (co.A * LN2))
    out = np.empty_like(hat)
    np.put_along_axis(out, pi, hat, axis=1)
    return out


@dataclass(frozen=True)
class ConvexifiedConstraints:
    """Inner approximations of d <= u, d_RU <= w and vbar <= v at an expansion point.

    ``residuals`` returns the left-hand sides (<= 0 means satisfied).
    """
    u_prev: np.ndarray
    w_prev: np.ndarray
    hop_prev: np.ndarray   # (N, 2) q[n] - q[n-1] at the expansion point
    scenario: Scenario

    def residuals(self, vars: TrajectoryVars) -> dict:
        s = self.scenario
        q = np.asarray(vars.q, float)
        d2 = uav_device_distance(q, s) ** 2
        r2 = uav_ris_distance(q, s) ** 2
        hop = _hops(q, s)
        t = s.slot_length
        return {
            "device": d2 + self.u_prev ** 2 - 2 * self.u_prev * vars.u,
            "ris": r2 + self.w_prev ** 2 - 2 * self.w_prev * vars.w,
            "speed": (vars.vbar * t) ** 2 + np.sum(self.hop_prev ** 2, axis=1)
                     - 2 * np.sum(self.hop_prev * hop, axis=1),
        }


def convexify_constraints(vars_prev: TrajectoryVars, s: Scenario) -> ConvexifiedConstraints:
    return ConvexifiedConstraints(np.asarray(vars_prev.u, float), np.asarray(vars_prev.w, float),
                                  _hops(vars_prev.q, s), s)


def _hops(q, s: Scenario) -> np.ndarray:
    pts = np.vstack([np.asarray(s.geometry.uav_start, float)[None, :], np.asarray(q, float)])
    return np.diff(pts, axis=0)


def straight_line(s: Scenario) -> np.ndarray:
    g = s.geometry
    frac = np.arange(1, s.num_slots + 1) / s.num_slots
    q0, qf = np.asarray(g.uav_start, float), np.asarray(g.uav_end, float)
    return q0 + frac[:, None] * (qf - q0)


# --------------------------------------------------------------------------
# true objective on the actual channel

def resteer_phases(theta, q_old, q_new, s: Scenario) -> np.ndarray:
    """Shift phases so the reflected sum keeps its value as the departure angle changes."""
    m = np.arange(s.num_elements)
    dc = aod_cosine(np.asarray(q_new, float), s) - aod_cosine(np.asarray(q_old, float), s)
    shift = 2 * np.pi * s.radio.element_spacing_ratio * dc[:, None] * m
    return np.mod(np.asarray(theta, float) + shift, 2 * np.pi)


def true_rates(q, theta, order, powers, draws: ChannelDraws, s: Scenario,
               ris_enabled: bool = True) -> np.ndarray:
    """SIC rates (bit/s) per slot and device for a fixed decoding order."""
    from .channel import sic_rates
    st = channel_state(q, theta, draws, s, ris_enabled)
    g = st.power_gains
    out = np.empty_like(g)
    for n in range(g.shape[0]):
        pi = np.asarray(order[n], int)
        psi = np.empty_like(pi)
        psi[pi] = np.arange(pi.size)
        out[n] = sic_rates(powers[n], g[n], DecodingOrder(pi, psi),
                           s.radio.bandwidth, s.radio.noise_power)
    return out


def trajectory_objective(q, rates, alpha: float, s: Scenario) -> float:
    """Offloaded bits minus alpha times flying energy (bits)."""
    return float(s.slot_length * np.sum(rates) - alpha * np.sum(fly_energy(speeds(q, s), s)))


def _rate_ok(rates, uav_bits, s: Scenario) -> bool:
    need = np.asarray(uav_bits, float)
    return bool(np.all(rates * s.slot_length >= need * (1 - 1e-12) - 1e-9))


def _motion_ok(q, s: Scenario) -> bool:
    v = speeds(q, s)
    return bool(np.all(v <= s.time.max_speed * (1 + 1e-9))
                and np.all(v >= s.solver.min_speed_floor)
                and np.allclose(q[-1], s.geometry.uav_end, atol=1e-9))


# --------------------------------------------------------------------------
# convex step

@dataclass
class StepFixed:
    powers: np.ndarray     # (N, I) W
    order: np.ndarray      # (N, I)
    uav_bits: np.ndarray   # (N, I) bits
    mags: Magnitudes
    calibration: np.ndarray = None   # (N, I) bit/s, true minus surrogate rate


LOG_FLOOR = -100.0   # stands in for log(0) of absent interference terms


class _SCAModel:
    """The convex step around one expansion point, built from numeric data.

    ``c`` carries the expansion-point constants (see ``solve_sca_step``).
    Devices enter the rate expressions in decoding position order through a
    per-slot permutation matrix.  A parametrised (DPP) build was dropped: its
    parameter-times-variable products blow up compilation memory at N=20, I=6.
    """

    def __init__(self, N: int, I: int, s: Scenario, c):
        t = s.slot_length
        eps = s.radio.direct_exponent
        g = s.geometry
        W = g.devices_array()
        ris = np.asarray(g.ris_position, float)
        H2 = g.uav_altitude ** 2
        HR2 = (g.uav_altitude - g.ris_height) ** 2
        q0 = np.asarray(g.uav_start, float)
        qF = np.asarray(g.uav_end, float)

        self.qv = cp.Variable((N - 1, 2)) if N > 1 else None
        self.u = cp.Variable((N, I), pos=True)
        self.w = cp.Variable(N, pos=True)
        self.vbar = cp.Variable(N)
        self.x = cp.Variable((N, I))   # log of lower device-distance auxiliaries
        self.y = cp.Variable(N)        # log of lower RIS-distance auxiliary

        if N > 1:
            Q = cp.vstack([self.qv, qF[None, :]])
            hop = Q - cp.vstack([q0[None, :], self.qv])
        else:
            Q = cp.Constant(qF[None, :])
            hop = cp.Constant((qF - q0)[None, :])
        Bm = s.radio.bandwidth / MBIT
        ones = np.ones((1, I))

        def spread(col):
            # (N,) column repeated across I devices
            return cp.reshape(col, (N, 1), order="C") @ ones

        hop_len = cp.norm(hop, 2, axis=1)
        cons = [self.vbar >= s.solver.min_speed_floor,
                hop_len <= s.time.max_speed * t,
                cp.square(self.vbar * t) + c.hop0sq - 2 * cp.sum(cp.multiply(c.hop0, hop), axis=1) <= 0]
        fly = s.tau1 * cp.sum(cp.power(hop_len, 3)) / t ** 3 + s.tau2 * cp.sum(cp.inv_pos(self.vbar))
        # squared distances are convex, their tangents bound them from below
        dist = cp.hstack([cp.reshape(cp.sum(cp.square(Q - W[i][None, :]), axis=1), (N, 1), order="C")
                          for i in range(I)])
        qx, qy = spread(Q[:, 0]), spread(Q[:, 1])
        cons += [
            dist + H2 + c.u0sq - 2 * cp.multiply(c.u0, self.u) <= 0,
            2 * self.x <= cp.log(c.dev_c + cp.multiply(c.dev_g[:, :, 0], qx) + cp.multiply(c.dev_g[:, :, 1], qy)),
            cp.sum(cp.square(Q - ris[None, :]), axis=1) + HR2 + c.w0sq - 2 * cp.multiply(c.w0, self.w) <= 0,
            2 * self.y <= cp.log(c.ris_c + cp.multiply(c.ris_g[:, 0], Q[:, 0]) + cp.multiply(c.ris_g[:, 1], Q[:, 1])),
        ]
        # [slot, position] views through the per-slot decoding permutation
        xp = sum(cp.multiply(c.perm[:, :, d], spread(self.x[:, d])) for d in range(I))
        m1 = (c.m1_c + cp.multiply(c.m1_w, spread(self.w))
              + sum(cp.multiply(c.m1_u[:, :, d], spread(self.u[:, d])) for d in range(I)))
        rates = [m1[:, 0]]
        for k in range(1, I):
            yk = cp.reshape(self.y, (N, 1), order="C") @ np.ones((1, k))
            args = cp.hstack([np.zeros((N, 1)),
                              c.l1[:, :k] - eps * xp[:, :k],
                              c.l2[:, :k] - 0.5 * eps * xp[:, :k] - yk,
                              c.l3[:, :k] - 2 * yk])
            rates.append(m1[:, k] - Bm / LN2 * cp.log_sum_exp(args, axis=1))
        for k in range(I):
            active = np.flatnonzero(c.floor[:, k] > -1e3)
            if active.size:
                cons.append(rates[k][active] >= c.floor[active, k])
        obj = t * sum(cp.sum(r) for r in rates) - c.alpha * (t * fly)
        self.problem = cp.Problem(cp.Maximize(obj), cons)
        self.program = convex_core.ConvexProgram(self.problem, "nlp")


class _StepData:
    """Plain holder for the expansion-point constants of one convex step."""


def _safe_log(v):
    v = np.asarray(v, float)
    return np.where(v > 0, np.log(np.where(v > 0, v, 1.0)), LOG_FLOOR)


def solve_sca_step(vars_prev: TrajectoryVars, fixed: StepFixed, alpha: float, s: Scenario,
                   certify: bool = False):
    """One convex step around vars_prev.

    Returns (TrajectoryVars, model objective in bits, SolveReport); on a
    solver failure vars_prev is returned with a NaN objective.
    """
    N, I = np.shape(vars_prev.u)
    t = s.slot_length
    sig2 = s.radio.noise_power
    Bm = s.radio.bandwidth / MBIT
    g = s.geometry
    W = g.devices_array()
    ris = np.asarray(g.ris_position, float)
    m = _StepData()
    pi = _pi(fixed.order, N, I)
    Pn = np.asarray(fixed.powers, float) / sig2
    co = surrogate_coefficients(vars_prev, fixed.mags, fixed.powers, fixed.order, s)
    A0 = co.A / sig2
    qp = np.asarray(vars_prev.q, float)
    dev2_0 = uav_device_distance(qp, s) ** 2
    ris2_0 = uav_ris_distance(qp, s) ** 2
    hop0 = _hops(qp, s)
    cal = np.zeros((N, I)) if fixed.calibration is None else np.asarray(fixed.calibration) / MBIT
    floors = np.asarray(fixed.uav_bits, float) / t / MBIT

    m.u0 = np.asarray(vars_prev.u, float)
    m.u0sq = m.u0 ** 2
    m.w0 = np.asarray(vars_prev.w, float)
    m.w0sq = m.w0 ** 2
    m.hop0 = hop0
    m.hop0sq = np.sum(hop0 ** 2, axis=1)
    gd = 2 * (qp[:, None, :] - W[None, :, :])                 # (N, I, 2)
    m.dev_c = dev2_0 - np.einsum("nid,nd->ni", gd, qp)
    gr = 2 * (qp - ris)
    m.ris_g = gr
    m.ris_c = ris2_0 - np.sum(gr * qp, axis=1)
    m1_c = Bm * (np.log2(A0) - (np.einsum("nkj,nj->nk", co.B / sig2,
                                          np.take_along_axis(vars_prev.u, pi, axis=1))
                                + co.C / sig2 * vars_prev.w[:, None]) / (A0 * LN2))
    m.m1_c = m1_c
    m.m1_w = Bm * co.C / sig2 / (A0 * LN2)
    a_pos = np.take_along_axis(fixed.mags.a, pi, axis=1)
    b_pos = fixed.mags.b[pi]
    p_pos = np.take_along_axis(Pn, pi, axis=1)
    m.l1 = _safe_log(p_pos * a_pos ** 2)
    m.l2 = _safe_log(2 * p_pos * a_pos * b_pos)
    m.l3 = _safe_log(p_pos * b_pos ** 2)
    fl = np.take_along_axis(floors - cal, pi, axis=1)
    m.floor = np.where(np.take_along_axis(floors, pi, axis=1) > 0, fl, -1e3)
    m.alpha = alpha / MBIT
    m.dev_g = gd
    m.perm = np.zeros((N, I, I))
    m.m1_u = np.zeros((N, I, I))      # [slot, position, device]
    for n in range(N):
        m.perm[n, np.arange(I), pi[n]] = 1.0
        # position-by-device coefficients of the linearised signal log
        m.m1_u[n][:, pi[n]] = Bm * co.B[n] / sig2 / (A0[n][:, None] * LN2)
    m = _SCAModel(N, I, s, m)

    rep = convex_core.solve(m.program, certify=certify)
    if rep.status != convex_core.OPTIMAL or (m.qv is not None and m.qv.value is None):
        return vars_prev, float("nan"), rep
    qF = np.asarray(g.uav_end, float)[None, :]
    q_new = np.vstack([m.qv.value, qF]) if N > 1 else qF.copy()
    out = TrajectoryVars(q_new, np.asarray(m.u.value, float), np.asarray(m.w.value, float),
                         np.asarray(m.vbar.value, float))
    return out, float(m.problem.value) * MBIT, rep


def surrogate_objective(vars: TrajectoryVars, fixed: StepFixed, alpha: float, s: Scenario) -> float:
    """Coherent-model objective with tight auxiliaries (bits)."""
    m1, m2 = surrogate_rates(vars, fixed.mags, fixed.powers, fixed.order, s)
    return float(s.slot_length * np.sum(m1 - m2)
                 - alpha * np.sum(fly_energy(speeds(vars.q, s), s)))


# --------------------------------------------------------------------------
# Algorithm loop

@dataclass(frozen=True)
class TrajectoryResult:
    vars: TrajectoryVars
    theta: np.ndarray
    rates: np.ndarray
    trace: list
    surrogate_trace: list = field(default_factory=list)
    accepted: list = field(default_factory=list)


def optimize_trajectory(z: DecisionVariables, draws: ChannelDraws, alpha: float, s: Scenario,
                        ris_enabled: bool = True, max_iters: Optional[int] = None,
                        tol: Optional[float] = None) -> TrajectoryResult:
    """SCA over the trajectory with safeguarded acceptance.

    ``trace`` holds the true block objective (bits) after every iteration and
    is nondecreasing by construction: a step (or a shortened version of it)
    is accepted only if it keeps every rate floor and does not lower the
    objective.  ``tol`` is in bits.
    """
    max_iters = s.solver.sca_max_iters if max_iters is None else max_iters
    tol = s.solver.tolerance * MBIT if tol is None else tol
    q = np.asarray(z.trajectory, float)
    theta = np.asarray(z.theta, float)
    if not _motion_ok(q, s):
        raise InfeasibleStartError("initial trajectory violates speed limits or endpoint")
    mags = magnitudes(draws, s, ris_enabled)
    rates = true_rates(q, theta, z.order, z.powers, draws, s, ris_enabled)
    if not _rate_ok(rates, z.uav_bits, s):
        raise InfeasibleStartError("initial trajectory misses a rate floor")
    value = trajectory_objective(q, rates, alpha, s)
    trace, strace, accepted = [value], [], []
    for _ in range(max_iters):
        vp = TrajectoryVars.tight(q, s)
        m1, m2 = surrogate_rates(vp, mags, z.powers, z.order, s)
        fixed = StepFixed(np.asarray(z.powers, float), np.asarray(z.order, int),
                          np.asarray(z.uav_bits, float), mags, rates - (m1 - m2))
        vn, sval, rep = solve_sca_step(vp, fixed, alpha, s)
        strace.append(sval)
        if rep.status != convex_core.OPTIMAL:
            accepted.append(False)
            break
        step = vn.q - q
        ok = False
        frac = 1.0
        for _ in range(BACKTRACK_STEPS):
            qc = q + frac * step
            qc[-1] = np.asarray(s.geometry.uav_end, float)
            if _motion_ok(qc, s):
                th_c = resteer_phases(theta, q, qc, s)
                r_c = true_rates(qc, th_c, z.order, z.powers, draws, s, ris_enabled)
                v_c = trajectory_objective(qc, r_c, alpha, s)
                if _rate_ok(r_c, z.uav_bits, s) and v_c >= value:
                    ok = True
                    break
            frac *= 0.5
        accepted.append(ok)
        if not ok:
            trace.append(value)
            break
        gain = v_c - value
        q, theta, rates, value = qc, th_c, r_c, v_c
        trace.append(value)
        if gain < tol:
            break
    return TrajectoryResult(TrajectoryVars.tight(q, s), theta, rates, trace, strace, accepted)


def trajectory_block(z: DecisionVariables, draws: ChannelDraws, alpha: float, s: Scenario,
                     ris_enabled: bool = True) -> SubproblemSolution:
    res = optimize_trajectory(z, draws, alpha, s, ris_enabled)
    return SubproblemSolution({"trajectory": res.vars.q, "theta": res.theta, "rates": res.rates},
                              res.trace[-1], convex_core.OPTIMAL,
                              {"sca_trace": res.trace, "accepted": res.accepted,
                               "surrogate_trace": res.surrogate_trace})


def write_trajectory_csv(q, s: Scenario, path) -> None:
    """Columns slot, x, y, speed; slot 0 is the start point."""
    q = np.asarray(q, float)
    v = speeds(q, s)
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["slot", "x", "y", "speed"])
        x0, y0 = s.geometry.uav_start
        wr.writerow([0, f"{x0:.9g}", f"{y0:.9g}", ""])
        for n in range(q.shape[0]):
            wr.writerow([n + 1, f"{q[n, 0]:.9g}", f"{q[n, 1]:.9g}", f"{v[n]:.9g}"])
