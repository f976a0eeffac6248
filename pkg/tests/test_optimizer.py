import json
from types import SimpleNamespace

import numpy as np
import pytest

from conftest import small_scenario
from risuav import optimizer as opt
from risuav.channel import draw_channels
from risuav.energy import check_feasibility, completed_bits, vars_efficiency


@pytest.fixture(scope="module")
def small_run():
    s = small_scenario()
    z, rec = opt.dinkelbach(s, 0, "proposed")
    return s, z, rec


def test_parametric_hand_example(monkeypatch, small):
    z = opt.warm_start(small, draw_channels(small, 0), 0)
    monkeypatch.setattr(opt, "completed_bits", lambda *a: 20.0)
    monkeypatch.setattr(opt, "energy_breakdown", lambda *a: SimpleNamespace(total=10.0))
    assert opt.parametric_objective(z, 2.0, small) == 0.0
    assert opt.parametric_objective(z, 0.0, small) == 20.0


def test_parametric_fixed_point(small):
    z = opt.warm_start(small, draw_channels(small, 1), 1)
    bits = completed_bits(z.allocation, z.rates, small)
    assert opt.parametric_objective(z, 0.0, small) == pytest.approx(bits, rel=1e-12)
    assert abs(opt.parametric_objective(z, vars_efficiency(z, small), small)) <= 1e-9 * bits


@pytest.mark.parametrize("seed", range(20))
def test_one_pass_never_decreases(seed):
    s = small_scenario(max_inner_iters=1)
    d = draw_channels(s, seed)
    z0 = opt.warm_start(s, d, seed)
    alpha = vars_efficiency(z0, s)
    z, trace, blocks = opt.bcd_inner(alpha, z0, d, s, seed=seed, first_pass=True)
    assert len(trace) == 2
    assert trace[1] >= trace[0]
    assert np.all(np.diff(blocks) >= 0)
    assert opt.parametric_objective(z, alpha, s) == pytest.approx(trace[-1])


def test_zero_demand_high_alpha_stops_offloading():
    s = small_scenario().with_updates(tasks={"bits_required": (0.0, 0.0)})
    d = draw_channels(s, 0)
    z, trace, _ = opt.bcd_inner(5e7, opt.warm_start(s, d, 0), d, s)
    assert len(trace) - 1 <= 2
    assert z.uav_bits.sum() <= 1e3
    # local computing costs almost nothing, so it stays at the CPU cap
    cap = np.asarray(s.tasks.device_cpu) * s.slot_length / np.asarray(s.tasks.cycles_per_bit)
    assert np.allclose(z.local_bits, cap, rtol=1e-4)


def test_blocks_idempotent_at_convergence(small_run):
    s, z, rec = small_run
    d = draw_channels(s, 0)
    alpha = rec.alpha_trace[-1]
    f = opt.parametric_objective(z, alpha, s)
    tol = s.solver.tolerance * opt.MBIT
    again = opt._bitpower_block(z, alpha, d, s, opt.SCHEMES["proposed"])
    assert opt.parametric_objective(again, alpha, s) <= f + max(tol, 1e-6 * abs(f))
    scratch = opt.RunRecord("scratch", 0, s.digest())
    traj = opt._trajectory_block(z, alpha, d, s, opt.SCHEMES["proposed"], scratch)
    assert opt.parametric_objective(traj, alpha, s) == pytest.approx(f, rel=1e-6, abs=tol)


def test_stubbed_inner_converges_in_one_step(monkeypatch, small):
    monkeypatch.setattr(opt, "bcd_inner", lambda alpha, z, *a, **k: (z, [0.0], [0.0]))
    z, rec = opt.dinkelbach(small, 0)
    assert rec.outer_iterations == 1 and rec.status == "optimal"
    assert abs(rec.F_trace[0]) <= 1e-6 * completed_bits(z.allocation, z.rates, small)


def test_dinkelbach_traces(small_run):
    s, _, rec = small_run
    assert rec.status == "optimal"
    assert abs(rec.F_trace[-1]) <= s.solver.tolerance * opt.MBIT
    assert np.all(np.diff(rec.alpha_trace) >= 0)
    assert np.all(np.diff(rec.F_trace) < 0)
    assert rec.final_ee >= rec.alpha_trace[-1]
    for tr in rec.inner_traces:
        assert np.all(np.diff(tr) >= 0)


def test_returned_solution_feasible(small_run):
    s, z, rec = small_run
    assert check_feasibility(z, s).ok()
    assert vars_efficiency(z, s) == pytest.approx(rec.final_ee, rel=1e-12)


def test_deterministic(small_run):
    s, z, rec = small_run
    z2, rec2 = opt.dinkelbach(s, 0, "proposed")
    a, b = rec.to_dict(), rec2.to_dict()
    a.pop("wall_times"), b.pop("wall_times")
    assert a == b
    assert np.array_equal(z.trajectory, z2.trajectory)


def test_no_ris_ignores_element_count():
    ee = [opt.dinkelbach(small_scenario(m=m), 3, "no-ris")[1].final_ee for m in (2, 6)]
    assert ee[0] == pytest.approx(ee[1], rel=1e-9)


def test_full_offload_keeps_local_zero():
    s = small_scenario()
    z, rec = opt.dinkelbach(s, 0, "full-offload")
    assert np.all(z.local_bits == 0)
    assert np.all(z.uav_bits.sum(axis=0) >= np.asarray(s.tasks.bits_required) * (1 - 1e-9))


def test_straight_line_keeps_path(small):
    from risuav.trajectory import straight_line
    z, _ = opt.dinkelbach(small, 0, "straight-line")
    assert np.allclose(z.trajectory, straight_line(small))


def test_random_phase_keeps_phases(small):
    d = draw_channels(small, 0)
    z, _ = opt.dinkelbach(small, 0, "random-phase")
    assert np.array_equal(z.theta, opt.warm_start(small, d, 0).theta)


def test_record_json_roundtrip(small_run):
    _, _, rec = small_run
    text = rec.dumps()
    assert json.loads(text)["schema_version"] == opt.RECORD_SCHEMA
    assert opt.RunRecord.loads(text) == rec


def test_unknown_baseline(small):
    with pytest.raises(ValueError):
        opt.run_baseline("proposed", small)
    with pytest.raises(KeyError):
        opt.run_scheme("nope", small)
