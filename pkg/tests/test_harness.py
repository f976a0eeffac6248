import numpy as np
import pytest

from conftest import small_scenario
from risuav import harness as hs


def test_sweep_spec_validation():
    with pytest.raises(hs.SweepSpecError):
        hs.SweepSpec("altitude", (1,))
    with pytest.raises(hs.SweepSpecError):
        hs.SweepSpec("num_elements", ())
    with pytest.raises(hs.SweepSpecError):
        hs.SweepSpec("num_elements", (2,), ("teleport",))
    with pytest.raises(hs.SweepSpecError):
        hs.SweepSpec.from_dict({"schema_version": 7, "parameter": "num_elements", "values": [2]})
    with pytest.raises(hs.SweepSpecError):
        hs.SweepSpec.from_dict({"values": [2]})
    spec = hs.SweepSpec("cycles_per_bit", (250.0, 500.0), ("proposed", "no-ris"), (0, 1))
    assert hs.SweepSpec.from_dict(spec.to_dict()) == spec


def test_load_sweep_file(tmp_path):
    p = tmp_path / "sw.yaml"
    p.write_text("schema_version: 1\nparameter: num_elements\nvalues: [2, 4]\nseeds: [5]\n")
    spec = hs.load_sweep(p)
    assert spec.values == (2.0, 4.0) and spec.seeds == (5,)
    p.write_text("parameter: [unclosed\n")
    with pytest.raises(hs.SweepSpecError):
        hs.load_sweep(p)


def test_apply_value(desk):
    assert hs.apply_value(desk, "num_elements", 4.0).num_elements == 4
    assert hs.apply_value(desk, "total_bits", 90e6).tasks.bits_required == (30e6,) * 3
    assert hs.apply_value(desk, "mission_period", 12).time.mission_period == 12.0
    assert hs.apply_value(desk, "cycles_per_bit", 250).tasks.cycles_per_bit == (250.0,) * 3


def _rows():
    return [
        {"scheme": "no-ris", "parameter": "num_elements", "value": 4.0, "seed": 1, "status": "optimal",
         "ee": 1.0 / 3.0 * 1e7, "offloaded_bits": 12345.678912345, "mean_ris_distance": 20.0,
         "outer_iterations": 3, "error": ""},
        {"scheme": "proposed", "parameter": "num_elements", "value": 2.0, "seed": 0, "status": "optimal",
         "ee": 2e6, "offloaded_bits": 1e7, "mean_ris_distance": float("nan"),
         "outer_iterations": 5, "error": ""},
    ]


def test_emit_csv_roundtrip(tmp_path):
    with pytest.raises(ValueError):
        hs.emit_csv(hs.ResultTable([]), tmp_path / "e.csv")
    p = hs.emit_csv(hs.ResultTable(_rows()), tmp_path / "t.csv")
    lines = p.read_text().splitlines()
    assert lines[0].split(",") == list(hs.COLUMNS)
    assert lines[1].startswith("proposed,")            # sorted by scheme order
    assert "3333333.33" in lines[2] and "3333333.333" not in lines[2]   # 9 significant digits
    back = hs.read_csv(p)
    assert back.rows[1]["ee"] == pytest.approx(1e7 / 3, rel=1e-8)
    assert np.isnan(back.rows[0]["mean_ris_distance"])
    assert hs.emit_csv(back, tmp_path / "u.csv").read_text() == p.read_text()


def test_mean_by_value():
    t = hs.ResultTable(_rows() + [dict(_rows()[1], seed=1, ee=4e6)])
    xs, ys = t.mean_by_value("ee", "proposed")
    assert xs == [2.0] and ys == [3e6]


def test_plots_deterministic_and_checked(tmp_path):
    t = hs.ResultTable(_rows())
    a = hs.emit_plot(t, "value", "ee", tmp_path / "a.svg").read_bytes()
    b = hs.emit_plot(t, "value", "ee", tmp_path / "b.svg").read_bytes()
    assert a == b
    assert a.count(b"<g id=\"line2d_") >= 2
    with pytest.raises(KeyError):
        hs.emit_plot(t, "value", "speed", tmp_path / "c.svg")


def test_one_series_per_scheme(tmp_path):
    text = hs.emit_plot(hs.ResultTable(_rows()), "value", "ee", tmp_path / "a.svg").read_text()
    assert text.count("proposed") == 1 and text.count("no-ris") == 1


@pytest.fixture(scope="module")
def cell():
    return hs.run_cell("proposed", small_scenario(), 0, "num_elements", 3)


def test_manifest_recomputes_ee(cell, tmp_path):
    row, man = cell
    p = hs.write_manifest(man, tmp_path)
    assert p.name == "proposed_num_elements-3_seed0.json"
    again = hs.load_manifest(p)
    assert hs.recomputed_ee(again) == pytest.approx(row["ee"], rel=1e-9)
    assert again["record"]["schema_version"] == 1
    assert set(again["environment"]) >= {"python", "numpy", "cvxpy"}


def test_error_row_keeps_sweep_alive():
    s = small_scenario().with_updates(time={"max_speed": 1.0})
    row, man = hs.run_cell("proposed", s, 0)
    assert row["status"] == "error" and row["error"]
    assert "record" not in man


def test_sweep_table_shape(tmp_path):
    spec = hs.SweepSpec("num_elements", (2, 3), ("no-ris",), (0,))
    t = hs.run_sweep(spec, small_scenario(), manifest_dir=tmp_path)
    assert [(r["scheme"], r["value"]) for r in t.rows] == [("no-ris", 2.0), ("no-ris", 3.0)]
    assert len(list(tmp_path.glob("*.json"))) == 2
    files = hs.write_sweep_outputs(t, spec, tmp_path / "out")
    assert all(p.exists() for p in files.values())


def test_mean_ris_distance(desk):
    q = np.array([[50.0, 25.0], [53.0, 29.0]])
    assert hs.mean_ris_distance(q, desk) == pytest.approx(2.5)
