"""RIS phase shifts with allocation, powers and trajectory held fixed.

Per slot the phase vector is lifted to ``Theta = v v^H`` with
``v = [exp(j theta); x]``, ``|x| = 1``.  For device i with cascade ``c_i`` and
direct link ``h_i`` set ``a_i = [c_i; h_i]``; then

    |h_i(theta)|^2 = Tr(H_i Theta) + |h_i|^2,   H_i = conj(a_i) a_i^T with the
                                                 bottom-right entry zeroed.

The SIC rate of the device in position k is a difference of two concave
log terms.  The subtracted one is replaced by its tangent (an upper bound),
which makes each slot a concave SDP over ``{Theta >= 0, diag(Theta) = 1}``.
Repeating the linearisation is a minorise-maximise loop; Gaussian
randomisation maps each relaxed Theta back to unit-modulus phases.
Rates inside this module are in Mbit/s.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import cvxpy as cp
import numpy as np

from . import convex_core
from .channel import ChannelState, alignment_phases
from .energy import DecisionVariables, SubproblemSolution
from .scenario import Scenario

MBIT = 1e6
LN2 = np.log(2.0)
DC_TOL = 1e-3 / MBIT   # 1e-3 bit/s on the slot objective, kept in Mbit/s


@dataclass(frozen=True)
class LiftedChannel:
    H: np.ndarray             # (I, K, K) by device, K = M + 1
    direct_power: np.ndarray  # (I,) |h^U|^2
    order: np.ndarray         # (I,) decoding permutation for the slot

    @property
    def size(self) -> int:
        return self.H.shape[-1]


@dataclass(frozen=True)
class PhaseSolution:
    theta_opt: np.ndarray           # (N, M)
    Theta_matrix: list              # per slot (K, K)
    achieved_rate_sum: float        # bits over the mission
    dc_trace: list                  # per slot list of objective values (Mbit/s)
    diagnostics: dict = field(default_factory=dict)


def lift_channel(state: ChannelState, order, slot: int) -> LiftedChannel:
    casc = state.cascade[slot]                  # (I, M)
    direct = state.direct[slot]                 # (I,)
    a = np.concatenate([casc, direct[:, None]], axis=1)
    H = np.conj(a)[:, :, None] * a[:, None, :]
    H[:, -1, -1] = 0.0
    return LiftedChannel(H, np.abs(direct) ** 2, np.asarray(order, int))


def lift_vector(theta, x: complex = 1.0) -> np.ndarray:
    return np.append(np.exp(1j * np.asarray(theta, float)), x)


def lift_phases(theta, x: complex = 1.0) -> np.ndarray:
    v = lift_vector(theta, x)
    return np.outer(v, np.conj(v))


def lifted_gains(lifted: LiftedChannel, Theta) -> np.ndarray:
    """|h_i|^2 for every device from the lifted form."""
    return np.real(np.einsum("iab,ba->i", lifted.H, Theta)) + lifted.direct_power


class _SlotTerms:
    """SNR-normalised prefix terms of one slot, in decoding order."""

    def __init__(self, lifted: LiftedChannel, powers, s: Scenario):
        sig2 = s.radio.noise_power
        pi = lifted.order
        p = np.asarray(powers, float)[pi]
        self.B = s.radio.bandwidth / MBIT
        self.Ht = p[:, None, None] * lifted.H[pi] / sig2          # (I, K, K)
        self.d = p * lifted.direct_power[pi] / sig2
        self.G = np.cumsum(self.Ht, axis=0)                        # prefix sums
        self.D = np.cumsum(self.d)
        self.I = len(pi)
        self.pi = pi

    def prefix(self, Theta):
        """1 + sum_{j<=k} snr_j for k = 0..I-1."""
        return 1.0 + np.real(np.einsum("kab,ba->k", self.G, Theta)) + self.D

    def w1(self, Theta):
        return self.B * np.log2(self.prefix(Theta))

    def w2(self, Theta):
        pre = self.prefix(Theta)
        return self.B * np.log2(np.concatenate([[1.0], pre[:-1]]))

    def rates(self, Theta):
        """Per-position SIC rates (Mbit/s)."""
        return self.w1(Theta) - self.w2(Theta)

    def w2_gradients(self, Theta0):
        """Gradient matrices of the subtracted terms at Theta0 (zero for k=0)."""
        pre = self.prefix(Theta0)
        grads = np.zeros_like(self.G)
        grads[1:] = self.B * self.G[:-1] / (LN2 * pre[:-1, None, None])
        return grads


def dc_upper_bound(lifted: LiftedChannel, powers, Theta_prev, position: int, s: Scenario):
    """Affine majorant of the subtracted log term of ``position`` at Theta_prev.

    Returns ``(value, gradient)`` with bound(Theta) = value + Re Tr(grad (Theta - Theta_prev)).
    """
    terms = _SlotTerms(lifted, powers, s)
    return float(terms.w2(Theta_prev)[position]), terms.w2_gradients(Theta_prev)[position]


def surrogate_objective(terms: _SlotTerms, Theta, Theta0) -> float:
    """Slot objective with every subtracted term linearised at Theta0."""
    return float(np.sum(_surrogate_rates(terms, Theta, Theta0)))


def _surrogate_rates(terms: _SlotTerms, Theta, Theta0):
    grads = terms.w2_gradients(Theta0)
    lin = terms.w2(Theta0) + np.real(np.einsum("kab,ba->k", grads, Theta - Theta0))
    return terms.w1(Theta) - lin


# --------------------------------------------------------------------------
# per-slot SDP (compiled once per (I, K))

class _SDPModel:
    def __init__(self, n_dev: int, size: int, weight: float = 1.0):
        K = size
        self.Theta = cp.Variable((K, K), hermitian=True)
        self.G = [cp.Parameter((K, K), complex=True) for _ in range(n_dev)]
        self.D = cp.Parameter(n_dev)
        self.Lin = cp.Parameter((K, K), complex=True)
        self.Q = [cp.Parameter((K, K), complex=True) for _ in range(n_dev)]
        self.need = cp.Parameter(n_dev)
        # G, D arrive rescaled per log (see _log_scaling); constant shifts
        # of each log do not move the maximiser
        logs = [cp.log(self.D[k] + cp.real(cp.trace(self.G[k] @ self.Theta)))
                for k in range(n_dev)]
        obj = weight * (cp.sum(cp.hstack(logs)) - cp.real(cp.trace(self.Lin @ self.Theta)))
        cons = [self.Theta >> 0, cp.real(cp.diag(self.Theta)) == 1]
        # per-device rate floors, subtracted term linearised (in nats)
        cons += [logs[k] >= cp.real(cp.trace(self.Q[k] @ self.Theta)) + self.need[k]
                 for k in range(n_dev)]
        self.problem = cp.Problem(cp.Maximize(obj), cons)
        self.program = convex_core.ConvexProgram(self.problem, "sdp", self.Theta)


_SDP: dict = {}


def _sdp(n_dev: int, size: int, exponent: int = 0) -> _SDPModel:
    # low-SNR slots have objective slopes far below one; a decade-quantised
    # weight keeps the conic solver's stopping rule meaningful
    key = (n_dev, size, exponent)
    if key not in _SDP:
        _SDP[key] = _SDPModel(n_dev, size, 10.0 ** exponent)
    return _SDP[key]


def _log_scaling(terms: "_SlotTerms", Theta0):
    """Per-log argument scales and the decade of the objective weight.

    Exponential-cone solves of nearly linear logs (low SNR) are unreliable
    unless the argument's Theta-coefficients are small against its constant
    part and the objective slope is O(10); both are set here.
    """
    pre = terms.prefix(Theta0)
    slope = np.array([np.linalg.norm(terms.G[k]) / pre[k] for k in range(terms.I)])
    scale = np.where(slope > 0, 1e-3 / np.where(slope > 0, slope, 1.0), 1.0)
    top = float(np.max(slope))
    exponent = 0 if not top > 0 else int(np.clip(np.round(np.log10(10.0 / top)), -2, 12))
    return pre, scale, exponent


def solve_sdr_slot(lifted: LiftedChannel, powers, Theta_prev, s: Scenario,
                   min_rates=None, certify: bool = False):
    """One minorise-maximise step: the concave SDP linearised at Theta_prev.

    ``min_rates`` (Mbit/s, per device) adds rate floors whose subtracted term
    is linearised the same way, so Theta_prev stays feasible.
    Returns (Theta, SolveReport); Theta_prev is returned on solver failure.
    """
    terms = _SlotTerms(lifted, powers, s)
    I, K = terms.I, lifted.size
    pre, scale, exponent = _log_scaling(terms, Theta_prev)
    m = _sdp(I, K, exponent)
    grads = terms.w2_gradients(Theta_prev) / terms.B * LN2    # nats per unit
    w2_nats = terms.w2(Theta_prev) / terms.B * LN2
    for k in range(I):
        m.G[k].value = terms.G[k] * (scale[k] / pre[k])
        m.Q[k].value = grads[k]
    m.D.value = (1.0 + terms.D) * (scale / pre)
    m.Lin.value = np.sum(grads, axis=0)
    shift = np.log(scale / pre)   # model log = true log + shift
    need = shift - 1.0            # log(1 + snr) >= 0 > -1: inactive
    if min_rates is not None:
        mr = np.asarray(min_rates, float)[terms.pi]
        for k in range(I):
            if mr[k] > 0:
                const = w2_nats[k] - np.real(np.trace(grads[k] @ Theta_prev))
                need[k] = mr[k] / terms.B * LN2 + const + shift[k]
    m.need.value = need
    rep = convex_core.solve(m.program, certify=certify)
    if rep.status != convex_core.OPTIMAL:
        return np.array(Theta_prev), rep
    Th = np.asarray(m.Theta.value)
    return 0.5 * (Th + Th.conj().T), rep


def _phases_from_vector(v) -> np.ndarray:
    return np.mod(np.angle(v[:-1]) - np.angle(v[-1]), 2 * np.pi)


def gaussian_randomize(Theta, lifted: LiftedChannel, powers, count: int,
                       rng: np.random.Generator, s: Scenario, Theta_ref=None,
                       min_rates=None, incumbent=None, rank_tol: float = 1e-6):
    """Recover unit-modulus phases from a relaxed Theta.

    Candidates are scored by the linearised slot objective at ``Theta_ref``
    (default: Theta itself); candidates violating ``min_rates`` under the
    exact rates are discarded.  ``incumbent`` phases, if given, compete too.
    Samples come from one (count, K, 2) draw so smaller pools are prefixes.
    """
    terms = _SlotTerms(lifted, powers, s)
    ref = Theta if Theta_ref is None else Theta_ref
    w, U = np.linalg.eigh(0.5 * (Theta + Theta.conj().T))
    w = np.clip(w, 0.0, None)
    cands = [_phases_from_vector(U[:, -1])]
    if not (len(w) == 1 or w[-2] < rank_tol * w[-1]):
        z = rng.standard_normal((count, len(w), 2))
        zc = (z[..., 0] + 1j * z[..., 1]) / np.sqrt(2)
        V = (U * np.sqrt(w)) @ zc.T                      # (K, count)
        cands.extend(_phases_from_vector(V[:, c]) for c in range(count))
    if incumbent is not None:
        cands.append(np.mod(np.asarray(incumbent, float), 2 * np.pi))

    best, best_val = None, -np.inf
    floor = None if min_rates is None else np.asarray(min_rates, float)[terms.pi]
    for th in cands:
        Th = lift_phases(th)
        if floor is not None and np.any(terms.rates(Th) < floor * (1 - 1e-12) - 1e-12):
            continue
        val = surrogate_objective(terms, Th, ref)
        if val > best_val:
            best, best_val = th, val
    if best is None:
        best = cands[-1] if incumbent is not None else cands[0]
    return best


def slot_rate_sum(lifted: LiftedChannel, powers, theta, s: Scenario) -> float:
    return float(np.sum(_SlotTerms(lifted, powers, s).rates(lift_phases(theta))))


def _slot_rates_by_device(terms: _SlotTerms, Theta) -> np.ndarray:
    r = np.empty(terms.I)
    r[terms.pi] = terms.rates(Theta)
    return r


def _optimize_slot(lifted, powers, theta0, min_rates, s: Scenario, rng, init_candidates=()):
    """DC loop for one slot; returns (theta, Theta, trace)."""
    terms = _SlotTerms(lifted, powers, s)
    so = s.solver

    def feasible(th):
        if min_rates is None:
            return True
        r = _slot_rates_by_device(terms, lift_phases(th))
        return bool(np.all(r >= np.asarray(min_rates) * (1 - 1e-12) - 1e-12))

    def value(th):
        return float(np.sum(terms.rates(lift_phases(th))))

    theta = np.mod(np.asarray(theta0, float), 2 * np.pi)
    for cand in init_candidates:
        if feasible(cand) and value(cand) > value(theta):
            theta = np.mod(cand, 2 * np.pi)
    trace = [value(theta)]
    Theta = lift_phases(theta)
    if not np.any(np.asarray(powers) > 0):
        return theta, Theta, trace
    for _ in range(so.dc_max_iters):
        Theta_prev = lift_phases(theta)
        Theta, rep = solve_sdr_slot(lifted, powers, Theta_prev, s, min_rates)
        if rep.status != convex_core.OPTIMAL:
            break
        cand = gaussian_randomize(Theta, lifted, powers, so.randomization_count, rng, s,
                                  Theta_ref=Theta_prev, min_rates=min_rates, incumbent=theta)
        new_val = value(cand)
        if new_val >= trace[-1] and feasible(cand):
            theta = cand
            trace.append(new_val)
        else:
            trace.append(trace[-1])
            break
        if abs(trace[-1] - trace[-2]) < DC_TOL:
            break
    return theta, Theta, trace


def optimize_phase(z: DecisionVariables, state: ChannelState, s: Scenario,
                   seed: int = 0, first_pass: bool = False,
                   ris_enabled: bool = True) -> SubproblemSolution:
    """Optimise theta slot by slot with powers, order and trajectory fixed.

    ``state`` must be evaluated on ``z.trajectory``.  Rate floors keep every
    device's received bits at least ``z.uav_bits``.  With ``first_pass`` the
    single-device alignment toward the device with the largest task also
    competes as a starting point.
    """
    N = s.num_slots
    t = s.slot_length
    theta = np.array(z.theta, float)
    Thetas, traces = [], []
    if not ris_enabled:
        return SubproblemSolution({"theta": theta}, float(t * np.sum(z.rates)),
                                  convex_core.OPTIMAL, {"dc_trace": [], "skipped": True})
    ss = np.random.SeedSequence([int(seed), 0x7A5E])
    rngs = [np.random.default_rng(c) for c in ss.spawn(N)]
    big = int(np.argmax(s.tasks.bits_required))
    for n in range(N):
        lifted = lift_channel(state, z.order[n], n)
        min_rates = np.asarray(z.uav_bits[n], float) / t / MBIT
        min_rates = np.where(min_rates > 0, min_rates, 0.0)
        cands = []
        if first_pass:
            cands.append(alignment_phases(state.direct[n, big], state.cascade[n, big]))
        th, Th, tr = _optimize_slot(lifted, z.powers[n], theta[n],
                                    min_rates if np.any(min_rates > 0) else None,
                                    s, rngs[n], cands)
        theta[n] = th
        Thetas.append(Th)
        traces.append(tr)
    total = float(t * MBIT * sum(tr[-1] for tr in traces))
    sol = PhaseSolution(theta, Thetas, total, traces)
    return SubproblemSolution({"theta": theta}, total, convex_core.OPTIMAL,
                              {"dc_trace": traces, "phase_solution": sol})
