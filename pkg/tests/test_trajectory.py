import csv

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import small_scenario
from risuav import trajectory as tj
from risuav.channel import coherent_magnitude_gain, draw_channels, uav_device_distance, uav_ris_distance
from risuav.energy import fly_energy, speeds
from risuav.optimizer import warm_start
from risuav.scenario import desk_default


def setup(s, seed, powers=0.2):
    d = draw_channels(s, seed)
    rng = np.random.default_rng(seed)
    q = tj.straight_line(s) + np.vstack([rng.uniform(-3, 3, (s.num_slots - 1, 2)), [[0, 0]]])
    p = np.full((s.num_slots, s.device_count), powers)
    order = np.tile(rng.permutation(s.device_count), (s.num_slots, 1))
    return d, tj.magnitudes(d, s), tj.TrajectoryVars.tight(q, s), p, order


def coherent_rates(q, d, p, order, s):
    N, I = p.shape
    g = np.array([[coherent_magnitude_gain(q[n], i, d, s, n) ** 2 for i in range(I)] for n in range(N)])
    out = np.empty_like(g)
    for n in range(N):
        pre = np.cumsum(p[n][order[n]] * g[n][order[n]]) + s.radio.noise_power
        before = np.concatenate([[s.radio.noise_power], pre[:-1]])
        out[n, order[n]] = s.radio.bandwidth * np.log2(pre / before)
    return out


def test_surrogate_tight_equals_coherent_rate(desk):
    d, mags, v, p, order = setup(desk, 0)
    m1, m2 = tj.surrogate_rates(v, mags, p, order, desk)
    assert np.allclose(m1 - m2, coherent_rates(v.q, d, p, order, desk), rtol=1e-10, atol=0)


def test_surrogate_vanishing_channel(desk):
    _, mags, v, p, order = setup(desk, 1)
    far = tj.TrajectoryVars(v.q, v.u * 1e12, v.w * 1e12, v.vbar)
    m1, m2 = tj.surrogate_rates(far, mags, p, order, desk)
    assert np.allclose(m1 - m2, 0.0, atol=1e-6)
    first = order[:, 0]
    assert np.allclose(m2[np.arange(desk.num_slots), first],
                       desk.radio.bandwidth * np.log2(desk.radio.noise_power))


def test_coefficient_signs(desk):
    _, mags, v, p, order = setup(desk, 2)
    co = tj.surrogate_coefficients(v, mags, p, order, desk)
    assert np.all(co.A >= desk.radio.noise_power)
    assert np.all(co.B <= 0) and np.all(co.C <= 0)


@pytest.mark.parametrize("seed", range(3))
def test_taylor_tangent_and_global_bound(desk, seed):
    _, mags, v, p, order = setup(desk, seed)
    m1, _ = tj.surrogate_rates(v, mags, p, order, desk)
    hat = tj.taylor_lower_bound(v, v, mags, p, order, desk)
    assert np.max(np.abs(hat - m1) / np.abs(m1)) <= 1e-9
    rng = np.random.default_rng(seed)
    for _ in range(1000):
        u = v.u * rng.uniform(0.3, 3.0, v.u.shape)
        w = v.w * rng.uniform(0.3, 3.0, v.w.shape)
        other = tj.TrajectoryVars(v.q, u, w, v.vbar)
        m1o, _ = tj.surrogate_rates(other, mags, p, order, desk)
        lo = tj.taylor_lower_bound(v, other, mags, p, order, desk)
        assert np.all(lo <= m1o + 1e-9 * np.abs(m1o))


def _m1_at(v, mags, p, order, s, n, k, du=None, dw=0.0):
    u = v.u.copy()
    w = v.w.copy()
    if du is not None:
        u[n] += du
    w[n] += dw
    m1, _ = tj.surrogate_rates(tj.TrajectoryVars(v.q, u, w, v.vbar), mags, p, order, s)
    return m1[n, order[n, k]]


@pytest.mark.parametrize("seed", range(3))
def test_finite_difference_coefficients(desk, seed):
    _, mags, v, p, order = setup(desk, seed)
    co = tj.surrogate_coefficients(v, mags, p, order, desk)
    B, ln2 = desk.radio.bandwidth, np.log(2)
    I = desk.device_count
    for n in (0, 3, 7):
        for k in range(I):
            for j in range(I):
                h = 1e-4 * v.u[n, order[n, j]]
                e = np.zeros(I)
                e[order[n, j]] = h
                fd = (_m1_at(v, mags, p, order, desk, n, k, e)
                      - _m1_at(v, mags, p, order, desk, n, k, -e)) / (2 * h)
                an = B * co.B[n, k, j] / (co.A[n, k] * ln2)
                assert fd == pytest.approx(an, rel=1e-6, abs=1e-12 * B)
            h = 1e-4 * v.w[n]
            fd = (_m1_at(v, mags, p, order, desk, n, k, dw=h)
                  - _m1_at(v, mags, p, order, desk, n, k, dw=-h)) / (2 * h)
            assert fd == pytest.approx(B * co.C[n, k] / (co.A[n, k] * ln2), rel=1e-6)


def test_hessian_psd(desk):
    d = draw_channels(desk, 0)
    mags = tj.magnitudes(d, desk)
    rng = np.random.default_rng(0)
    I = desk.device_count
    order = np.tile(np.arange(I), (desk.num_slots, 1))
    p = np.full((desk.num_slots, I), 0.3)

    def f(x):
        u = np.tile(x[:I], (desk.num_slots, 1))
        w = np.full(desk.num_slots, x[I])
        m1, _ = tj.surrogate_rates(tj.TrajectoryVars(None, u, w, None), mags, p, order, desk)
        return m1[0, order[0, -1]] / desk.radio.bandwidth

    for _ in range(100):
        x = np.concatenate([rng.uniform(20, 80, I), [rng.uniform(20, 80)]])
        h = 1e-3 * x
        H = np.empty((I + 1, I + 1))
        for a in range(I + 1):
            for b in range(I + 1):
                ea, eb = np.eye(I + 1)[a] * h[a], np.eye(I + 1)[b] * h[b]
                H[a, b] = (f(x + ea + eb) - f(x + ea - eb) - f(x - ea + eb) + f(x - ea - eb)) / (4 * h[a] * h[b])
        H = 0.5 * (H + H.T)
        assert np.linalg.eigvalsh(H).min() >= -1e-6 * np.abs(H).max()


def test_convexified_tangent_at_tight_point(desk):
    _, _, v, _, _ = setup(desk, 3)
    res = tj.convexify_constraints(v, desk).residuals(v)
    for key in ("device", "ris", "speed"):
        assert np.allclose(res[key], 0.0, atol=1e-8)


@given(seed=st.integers(0, 10 ** 6), scale=st.floats(0.5, 2.0))
def test_convexified_constraints_imply_originals(seed, scale):
    s = desk_default()
    rng = np.random.default_rng(seed)
    q0 = tj.straight_line(s)
    vp = tj.TrajectoryVars.tight(q0, s)
    cons = tj.convexify_constraints(vp, s)
    q = q0 + rng.normal(0, 3, q0.shape)
    cand = tj.TrajectoryVars(q, vp.u * scale, vp.w * scale, speeds(q, s) * rng.uniform(0, 1.2, s.num_slots))
    r = cons.residuals(cand)
    ok = r["device"] <= 0
    assert np.all(uav_device_distance(q, s)[ok] <= cand.u[ok] + 1e-9)
    ok = r["ris"] <= 0
    assert np.all(uav_ris_distance(q, s)[ok] <= cand.w[ok] + 1e-9)
    ok = r["speed"] <= 0
    assert np.all(cand.vbar[ok] <= speeds(q, s)[ok] + 1e-9)


def _zero_offload(z):
    return z.replace(powers=np.zeros_like(z.powers), rates=np.zeros_like(z.rates),
                     uav_bits=np.zeros_like(z.uav_bits))


def test_huge_alpha_flies_at_energy_optimal_speed(desk):
    d = draw_channels(desk, 0)
    z = warm_start(desk, d, 0)
    zig = tj.straight_line(desk)
    zig[:-1:2, 0] += 7.0
    res = tj.optimize_trajectory(_zero_offload(z.replace(trajectory=zig)), d, 1e12, desk)
    v = speeds(res.vars.q, desk)
    assert np.allclose(v, desk.energy.optimal_speed, rtol=1e-3)
    assert np.all(np.diff(res.trace) >= 0)


@pytest.mark.parametrize("T", [8.0, 10.0])
def test_no_offload_gives_straight_near_optimal_path(desk, T):
    s = desk.with_updates(time={"mission_period": T})
    d = draw_channels(s, 0)
    res = tj.optimize_trajectory(_zero_offload(warm_start(s, d, 0)), d, 1e6, s)
    assert np.allclose(res.vars.q, tj.straight_line(s), atol=1e-6)
    best = s.num_slots * float(fly_energy(max(s.energy.optimal_speed, 50.0 / T), s))
    assert np.sum(fly_energy(speeds(res.vars.q, s), s)) <= 1.01 * best


def test_infeasible_start_reported(desk):
    d = draw_channels(desk, 0)
    z = warm_start(desk, d, 0)
    bad = tj.straight_line(desk)
    bad[0] += 40.0
    with pytest.raises(tj.InfeasibleStartError):
        tj.optimize_trajectory(z.replace(trajectory=bad), d, 1e6, desk)


def _offloading_start(s, seed, p=0.2):
    d = draw_channels(s, seed)
    z = warm_start(s, d, seed)
    powers = np.full_like(z.powers, p)
    rates = tj.true_rates(z.trajectory, z.theta, z.order, powers, d, s)
    return z.replace(powers=powers, rates=rates, uav_bits=0.5 * rates * s.slot_length), d


@pytest.mark.parametrize("seed", range(20))
def test_sca_trace_monotone_and_feasible(seed):
    s = small_scenario(n_slots=4, m=4)
    z, d = _offloading_start(s, seed)
    res = tj.optimize_trajectory(z, d, 1e6, s)
    assert np.all(np.diff(res.trace) >= -1e-6 * max(1.0, np.max(np.abs(res.trace))))
    q = res.vars.q
    assert np.allclose(q[-1], s.geometry.uav_end)
    assert np.all(speeds(q, s) <= s.time.max_speed * (1 + 1e-9))
    assert np.all(res.rates * s.slot_length >= z.uav_bits * (1 - 1e-9) - 1e-6)


def test_offloading_pulls_toward_ris(desk):
    z, d = _offloading_start(desk, 0, p=0.5)
    res = tj.optimize_trajectory(z, d, 1e5, desk)
    line = tj.straight_line(desk)
    assert np.mean(uav_ris_distance(res.vars.q, desk)) < np.mean(uav_ris_distance(line, desk))
    assert res.trace[-1] > res.trace[0]


def test_resteer_keeps_reflected_sum():
    s = small_scenario(n_dev=1, n_slots=2, m=6)
    from risuav.channel import channel_state
    d = draw_channels(s, 0)
    q0 = tj.straight_line(s)
    q1 = q0 + np.array([[4.0, -2.0], [0.0, 0.0]])
    theta = np.random.default_rng(1).uniform(0, 2 * np.pi, (2, 6))
    a = channel_state(q0, theta, d, s)
    b = channel_state(q1, tj.resteer_phases(theta, q0, q1, s), d, s)
    ra = np.abs(np.sum(a.cascade[0, 0] * np.exp(1j * theta[0]))) * uav_ris_distance(q0, s)[0]
    rb = np.abs(np.sum(b.cascade[0, 0] * np.exp(1j * tj.resteer_phases(theta, q0, q1, s)[0]))) \
        * uav_ris_distance(q1, s)[0]
    assert rb == pytest.approx(ra, rel=1e-10)


def test_trajectory_csv(tmp_path, desk):
    q = tj.straight_line(desk)
    path = tmp_path / "traj.csv"
    tj.write_trajectory_csv(q, desk, path)
    rows = list(csv.reader(path.open()))
    assert rows[0] == ["slot", "x", "y", "speed"]
    assert rows[1] == ["0", "30", "50", ""]
    assert len(rows) == desk.num_slots + 2
    assert float(rows[-1][1]) == 30.0 and float(rows[-1][2]) == 0.0
    assert all(float(r[3]) == pytest.approx(50.0 / desk.time.mission_period) for r in rows[2:])
