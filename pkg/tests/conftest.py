import numpy as np
import pytest
from hypothesis import settings

from risuav import optimizer
from risuav.scenario import desk_default, paper_default

settings.register_profile("suite", deadline=None, max_examples=40, derandomize=True)
settings.load_profile("suite")

MONO_TOL = 1e-6

# Every RunRecord produced anywhere in the session is audited for monotone traces.
AUDIT = {"records": 0, "traces": 0, "violations": []}
# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE = []


def report(criterion, ok, detail):
    ACCEPTANCE.append(f"[criterion {criterion}] {'PASS' if ok else 'FAIL'}: {detail}")
    return ok


def _rel_drop(trace):
    """Largest drop between consecutive entries, relative to the trace scale."""
    tr = np.asarray(trace, float)
    if tr.size < 2:
        return 0.0
    scale = max(1.0, float(np.max(np.abs(tr))))
    return float(np.max(tr[:-1] - tr[1:]) / scale)


def audit_traces(traces, label):
    worst = 0.0
    for tr in traces:
        AUDIT["traces"] += 1
        drop = _rel_drop(tr)
        worst = max(worst, drop)
        if drop > MONO_TOL:
            AUDIT["violations"].append((label, drop))
    return worst


def _observe(rec):
    AUDIT["records"] += 1
    label = f"{rec.scheme}/seed{rec.seed}"
    audit_traces(rec.inner_traces, label + "/bcd")
    audit_traces(rec.block_traces, label + "/blocks")
    audit_traces([tr for call in rec.dc_traces for tr in call], label + "/dc")
    audit_traces(rec.sca_traces, label + "/sca")


optimizer.RECORD_OBSERVERS.append(_observe)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    for line in ACCEPTANCE:
        terminalreporter.write_line(line)
    v = AUDIT["violations"]
    line = (f"[criterion 6 suite-wide] {'PASS' if not v else 'FAIL'}: "
            f"{AUDIT['traces']} traces from {AUDIT['records']} runs, {len(v)} violations")
    terminalreporter.write_line(line)
    for label, drop in v[:10]:
        terminalreporter.write_line(f"    {label}: relative drop {drop:.3g}")


def pytest_sessionfinish(session, exitstatus):
    if AUDIT["violations"] and exitstatus == 0:
        session.exitstatus = 1


@pytest.fixture(scope="session")
def desk():
    return desk_default()


@pytest.fixture(scope="session")
def paper():
    return paper_default()


def small_scenario(n_dev=2, n_slots=3, m=3, **solver):
    """A tiny instance for fast block-level tests."""
    s = desk_default()
    devs = s.geometry.device_positions[:n_dev]
    return s.with_updates(
        geometry={"device_positions": devs},
        tasks={"bits_required": (8e6,) * n_dev, "cycles_per_bit": (500.0,) * n_dev,
               "device_cpu": (3e9,) * n_dev},
        radio={"num_elements": m},
        time={"num_slots": n_slots},
        solver=solver,
    )


@pytest.fixture
def small():
    return small_scenario()


def bitpower_instance(s, seed):
    """Gains along the warm-start path and alpha = its efficiency."""
    from risuav.bitpower import BitPowerFixed
    from risuav.channel import channel_state, draw_channels
    from risuav.energy import vars_efficiency
    from risuav.optimizer import warm_start
    d = draw_channels(s, seed)
    z = warm_start(s, d, seed)
    gains = channel_state(z.trajectory, z.theta, d, s).power_gains
    return BitPowerFixed(gains), vars_efficiency(z, s)
