import json
import xml.etree.ElementTree as ET

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cage_homog.harness import ConfigError, StudyKind, from_dict, load_config
from cage_homog.harness.checks import run_check_ops
from cage_homog.harness.cli import main
from cage_homog.harness.reports import ConvergenceTable, fit_loglog, is_monotone, svg_loglog
from cage_homog.harness.studies import converge_delta, regularize_theta, shielding

FAST = {"deltas": [0.25, 0.125, 0.0625], "resolution": {"cells_per_period": 8, "limit_refine": 2}}


def cfg(tmp_path, kind, **over):
    data = {**FAST, "output": {"dir": str(tmp_path / "out")}, **over}
    return from_dict(data, kind, env={})


# -- config ---------------------------------------------------------------------------

def test_empty_config_rejected(tmp_path):
    (tmp_path / "e.yaml").write_text("")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "e.yaml", "CONVERGE_DELTA")
    with pytest.raises(ConfigError):
        from_dict({}, "CONVERGE_DELTA")


@pytest.mark.parametrize("over", [
    {"deltas": [0.125, 0.25]},
    {"deltas": [0.3]},
    {"physics": {"source": {"lo": 0.8, "hi": 0.5}}},
])
def test_invalid_delta_config(tmp_path, over):
    with pytest.raises(ConfigError):
        cfg(tmp_path, "CONVERGE_DELTA", **over)


def test_theta_must_stay_below_contrast(tmp_path):
    with pytest.raises(ConfigError):
        cfg(tmp_path, "REGULARIZE_THETA", delta=0.25, thetas=[20.0, 1.0])
    with pytest.raises(ConfigError):
        cfg(tmp_path, "REGULARIZE_THETA", delta=0.25, thetas=[0.1, 1.0])


def test_environment_overrides(tmp_path):
    c = from_dict({"workers": 1}, "SHIELDING",
                  env={"CAGE_HOMOG_WORKERS": "3", "CAGE_HOMOG_OUTPUT": str(tmp_path / "x")})
    assert c.workers == 3 and c.output_dir == tmp_path / "x"


def test_study_key_selects_kind():
    assert from_dict({"study": "cell"}, env={}).kind is StudyKind.CELL
    with pytest.raises(ConfigError):
        from_dict({"deltas": [0.25]}, env={})


# -- reports --------------------------------------------------------------------------

@settings(max_examples=50, deadline=None)
@given(st.floats(-3, 3), st.floats(0.1, 10))
def test_fit_recovers_power_law(p, C):
    x = np.array([0.25, 0.125, 0.0625, 0.03125])
    f = fit_loglog(x, C * x**p)
    assert f["slope"] == pytest.approx(p, abs=1e-9)
    assert f["residual"] < 1e-9


def test_fit_needs_three_positive_points():
    assert fit_loglog([1, 2], [1, 2])["slope"] is None
    assert fit_loglog([1, 2, 3], [1, 0, 2])["slope"] is None


def test_low_confidence_flag():
    t = ConvergenceTable()
    for d, v in zip([0.5, 0.25, 0.125], [1.0, 2.0, 0.5]):
        t.add(d, "e", v)
    assert t.fit()["e"]["low_confidence"]
    assert is_monotone([3, 2, 1]) and not is_monotone([1, 1], strict=True)


def test_svg_is_wellformed(tmp_path):
    svg_loglog({"a": ([0.5, 0.25, 0.125], [1, 0.5, 0.25])}, tmp_path / "p.svg", "t")
    svg_loglog({"a": ([0.0, 1.0], [1e-3, 1e-5])}, tmp_path / "q.svg", "t", logx=False)
    svg_loglog({}, tmp_path / "r.svg")
    for n in ("p", "q", "r"):
        ET.parse(tmp_path / f"{n}.svg")


# -- studies --------------------------------------------------------------------------

def test_converge_study_structure(tmp_path):
    table, summary, _ = converge_delta(cfg(tmp_path, "CONVERGE_DELTA"))
    assert set(table.fits) >= {"err_h1", "err_l2_layer", "scaled_grid_over_f", "l2_gamma", "l2_minus"}
    for f in table.fits.values():
        assert f["n"] >= 3 and f["residual"] is not None
    assert summary["checks"]["limit_zero_on_lower_half"]
    assert summary["checks"]["l2_minus_strictly_decreasing"]


def test_single_theta_has_no_fit(tmp_path):
    table, summary = regularize_theta(cfg(tmp_path, "REGULARIZE_THETA", delta=0.25, thetas=[0.1]))
    assert summary["fits"] == {} and len(table.rows) == 5


def test_zero_source_zero_transmission(tmp_path):
    c = cfg(tmp_path, "SHIELDING", physics={"source": None}, eps2_sweep=[0.0, 1.0], delta=0.25)
    table, summary = shielding(c)
    assert all(r["value"] == 0.0 for r in table.rows)
    assert all(p["l2_minus"] == 0.0 for p in summary["eps2_sweep"]["points"])


def test_contrast_ablation(tmp_path):
    _, summary = shielding(cfg(tmp_path, "SHIELDING", deltas=[0.25, 0.125], delta=0.125,
                               eps2_sweep=[0.0, 1.0, 10.0]))
    pts = summary["eps2_sweep"]["points"]
    # without contrast nothing is absorbed in the layer; more contrast transmits less
    assert pts[0]["l2_minus"] > pts[1]["l2_minus"] > pts[2]["l2_minus"]


# -- CLI ------------------------------------------------------------------------------

def _write(tmp_path, text):
    p = tmp_path / "c.yaml"
    p.write_text(text)
    return str(p)


def test_cli_empty_config_is_usage_error(tmp_path, capsys):
    assert main(["converge", "--config", _write(tmp_path, "")]) == 2


def test_cli_missing_command():
    with pytest.raises(SystemExit) as e:
        main([])
    assert e.value.code == 2


def test_cli_outputs_are_deterministic(tmp_path):
    path = _write(tmp_path, f"deltas: [0.25, 0.125, 0.0625]\nresolution: {{limit_refine: 2}}\n"
                            f"output: {{dir: {tmp_path / 'o'}}}\n")
    assert main(["converge", "--config", path]) == 0
    first = {n: (tmp_path / "o" / n).read_bytes() for n in ("results.csv", "summary.json", "plot_converge.svg")}
    assert main(["converge", "--config", path]) == 0
    for n, b in first.items():
        assert (tmp_path / "o" / n).read_bytes() == b


def test_cli_constants_flags(tmp_path, capsys):
    path = _write(tmp_path, f"output: {{dir: {tmp_path / 'o'}}}\n")
    assert main(["constants", "--config", path, "--theta", "0.5", "--diam", "1"]) == 0
    d = json.loads(capsys.readouterr().out)
    assert d["C_prime"] == pytest.approx(0.342371, abs=1e-6)


def test_cli_cell_and_vtk(tmp_path):
    path = _write(tmp_path, f"output: {{dir: {tmp_path / 'o'}, vtk: true}}\n")
    assert main(["cell", "--config", path]) == 0
    assert (tmp_path / "o" / "cell.vtk").exists() and (tmp_path / "o" / "plot_cell.svg").exists()


def test_check_fault_injection_fails(tmp_path):
    path = _write(tmp_path, f"check: {{deltas: [0.25], samples: 4}}\noutput: {{dir: {tmp_path / 'o'}}}\n")
    assert main(["check", "--config", path, "--suite", "unfolding"]) == 0
    assert main(["check", "--config", path, "--suite", "unfolding", "--fault-injection"]) == 1
    xml = ET.parse(tmp_path / "o" / "check.xml").getroot()
    assert int(xml.find("testsuite").get("failures")) >= 1
    rep = json.loads((tmp_path / "o" / "check.json").read_text())
    failed = [r for r in rep["results"] if not r["passed"]]
    assert failed and failed[0]["inputs"]["fault_injection"] is True


def test_check_ops_runs_all_suites(tmp_path):
    rep = run_check_ops(cfg(tmp_path, "CHECK_OPS", check={"samples": 30}))
    assert rep["passed"], [r for r in rep["results"] if not r["passed"]]
