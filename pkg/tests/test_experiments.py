import csv
import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from convexcurv import ConfigValidationError, NormScaled, Region
from convexcurv.cli import EXIT_FAILED, EXIT_INVALID, EXIT_OK, main
from convexcurv.experiments import (
    _histogram,
    convergence_experiment,
    dumps,
    emit_plot_data,
    monotonicity_flags,
    run_scenario,
    validate_config,
)

FAST = {"k_max": 5, "m": 32, "multistart": 1, "m_max": 64}


def flat_config(**extra):
    cfg = {"version": 1, "seed": 11,
           "surface": {"family": "quadratic_form", "dimension": 2,
                       "params": {"A": [[0, 0], [0, 0]], "b": [0, 0], "c": 0}},
           "region": {"center": [0, 0], "radius": 1.0},
           "distance": dict(FAST), "quadruples": {"count": 12}}
    cfg.update(extra)
    return cfg


def saddle_config(**extra):
    cfg = flat_config(**extra)
    cfg["surface"]["params"]["A"] = [[2, 0], [0, -2]]
    return cfg


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


# --- validation ---------------------------------------------------------


@pytest.mark.parametrize("mutate, path", [
    (lambda c: c.pop("seed"), "<root>"),
    (lambda c: c.update(version=2), "version"),
    (lambda c: c["region"].update(radius=-1), "region.radius"),
    (lambda c: c["region"].update(center=[0, 0, 0]), "region.center"),
    (lambda c: c.update(mollify={"ladder": [0.2, 0.3]}), "mollify.ladder[1]"),
    (lambda c: c.update(mollify={"ladder": [0.2, 0.6]}), "mollify.ladder[1]"),
    (lambda c: c.update(distance={"multistart": 0}), "distance.multistart"),
    (lambda c: c.update(distance={"m": 64, "m_max": 32}), "distance"),
    (lambda c: c.update(points=[[0, 0], [1]]), "points[1]"),
    (lambda c: c.update(bogus=1), "<root>"),
    (lambda c: c["surface"].update(family="no_such_family"), "surface"),
])
def test_validation_names_field(mutate, path):
    cfg = flat_config()
    mutate(cfg)
    with pytest.raises(ConfigValidationError) as info:
        validate_config(cfg)
    assert info.value.path == path


def test_mollify_delta_at_half_radius_rejected():
    cfg = flat_config(mollify={"ladder": [0.5]})
    with pytest.raises(ConfigValidationError, match="R/2"):
        validate_config(cfg)


def test_region_outside_domain_rejected(tmp_path):
    cfg = {"version": 1, "seed": 0,
           "surface": {"family": "boundary_chart", "dimension": 1, "params": {
               "body": {"dimension": 2, "constraints": [{"type": "ball", "center": [0, 0], "radius": 1.0}],
                        "interior_point": [0, 0]},
               "x0": [0, -1], "y": [0, 0], "chart_radius": 0.8}},
           "region": {"center": [0.0], "radius": 0.9}}
    with pytest.raises(ConfigValidationError) as info:
        run_scenario(cfg, tmp_path, experiment="distance")
    assert info.value.path == "region"


# --- helpers ------------------------------------------------------------


def test_dumps_is_strict_json():
    text = dumps({"b": float("nan"), "a": np.float64(1.5), "c": [np.inf, -np.inf], "d": np.arange(2)})
    assert json.loads(text) == {"a": 1.5, "b": "nan", "c": ["inf", "-inf"], "d": [0, 1]}
    assert text.index('"a"') < text.index('"b"')


@given(st.lists(st.floats(-10, 10), max_size=60), st.integers(1, 12))
def test_histogram_conserves_counts(values, bins):
    rows = _histogram(values + [math.nan], bins)
    if not values:
        assert rows == []
        return
    assert len(rows) == bins
    assert sum(r[2] for r in rows) == len(values)
    assert all(r[0] < r[1] for r in rows)


def test_monotonicity_flags():
    assert monotonicity_flags([0.4, 0.2, 0.1]) == {"strictly_decreasing": True, "decreasing": True}
    assert monotonicity_flags([1e-15, 2e-15, 1e-16]) == {"strictly_decreasing": False, "decreasing": True}
    assert not monotonicity_flags([0.1, 0.1])["decreasing"]
    assert not monotonicity_flags([0.1, 0.2])["decreasing"]
    assert not monotonicity_flags([1e-12, 0.1])["decreasing"]
    assert monotonicity_flags([None, None]) == {"strictly_decreasing": False, "decreasing": False}


def test_emit_plot_data_empty_table_has_header(tmp_path):
    names = emit_plot_data("exp", {"t": (["x", "y"], [])}, tmp_path)
    assert names == ["exp_t.csv"]
    assert read_csv(tmp_path / "exp_t.csv") == [["x", "y"]]


def test_convergence_table_has_one_row_per_level():
    table = convergence_experiment(NormScaled(1.0, 1), "mollified", [0.2, 0.1, 0.05, 0.025],
                                   Region([0.0], 0.5), probes=32, rng_seed=1)
    assert [r["level"] for r in table.rows] == [0.2, 0.1, 0.05, 0.025]
    assert table.flags["sup_dev"]["strictly_decreasing"]
    assert table.flags["sup_dev"]["within_L_level"]
    assert table.flags["lipschitz"]["ratio_le_1"]
    assert table.flags["convexity"]["no_violations"]
    with pytest.raises(ValueError):
        convergence_experiment(NormScaled(1.0, 1), "mollified", [0.1, 0.2], Region([0.0], 0.5))


# --- scenarios ----------------------------------------------------------


def test_flat_quadruples_scenario(tmp_path):
    rep = run_scenario(flat_config(), tmp_path, experiment="check_quadruples")
    assert rep.ok
    res = rep.results["check_quadruples"]
    assert res["violated"] == 0 and res["checked"] == 12
    rows = read_csv(tmp_path / "check_quadruples_quadruples.csv")
    assert len(rows) == 13
    assert rows[0][:4] == ["quad_id", "d_ab_value", "d_ab_lower", "d_ab_upper"]
    hist = read_csv(tmp_path / "check_quadruples_excess_histogram.csv")
    assert sum(int(r[2]) for r in hist[1:]) == 12
    assert sorted(rep.manifest) == sorted(p.name for p in tmp_path.iterdir())


def test_pipeline_is_deterministic(tmp_path):
    cfg = flat_config(mollify={"ladder": [0.2, 0.1], "probes": 8, "length_paths": 1})
    cfg["surface"] = {"family": "norm_scaled", "dimension": 2, "params": {"alpha": 1.0}}
    cfg["quadruples"] = {"count": 4}
    a, b = tmp_path / "a", tmp_path / "b"
    ra = run_scenario(cfg, a)
    rb = run_scenario(cfg, b)
    assert ra.ok and rb.ok
    assert ra.manifest == rb.manifest
    for name in ra.manifest:
        if name != "timings.json":
            assert (a / name).read_bytes() == (b / name).read_bytes(), name
    assert "timings" not in json.loads((a / "report.json").read_text())


def test_seed_changes_samples(tmp_path):
    cfg = flat_config(quadruples={"count": 3})
    run_scenario(cfg, tmp_path / "a", experiment="check_quadruples")
    run_scenario(cfg, tmp_path / "b", seed=12, experiment="check_quadruples")
    ta = (tmp_path / "a" / "check_quadruples_quadruples.csv").read_text()
    tb = (tmp_path / "b" / "check_quadruples_quadruples.csv").read_text()
    assert ta != tb
    assert json.loads((tmp_path / "b" / "report.json").read_text())["config"]["seed"] == 12


def test_failed_run_writes_partial_report(tmp_path):
    # inf-sup on a saddle is not defined: the run fails but still writes a report
    cfg = saddle_config(infsup={"ladder": [0.1]})
    rep = run_scenario(cfg, tmp_path, experiment="infsup_convergence")
    assert rep.status == "failed"
    data = json.loads((tmp_path / "report.json").read_text())
    assert data["status"] == "failed" and "UnsupportedOperationError" in data["error"]


# --- CLI ----------------------------------------------------------------


def write(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return str(p)


def test_cli_exit_codes(tmp_path, capsys):
    good = write(tmp_path, flat_config(quadruples={"count": 4}))
    assert main(["check-quadruples", "--config", good, "--out", str(tmp_path / "o")]) == EXIT_OK
    assert (tmp_path / "o" / "report.json").exists()

    bad = flat_config()
    bad["region"]["radius"] = 0
    assert main(["distance", "--config", write(tmp_path, bad, "bad.json"),
                 "--out", str(tmp_path / "x")]) == EXIT_INVALID
    assert "region.radius" in capsys.readouterr().err

    (tmp_path / "broken.json").write_text("{not json")
    assert main(["distance", "--config", str(tmp_path / "broken.json"), "--out", str(tmp_path / "y")]) == EXIT_INVALID

    fails = write(tmp_path, saddle_config(), "saddle.json")
    assert main(["inf-sup", "--config", fails, "--out", str(tmp_path / "z")]) == EXIT_FAILED
    assert main(["distance", "--config", str(tmp_path / "missing.json"), "--out", str(tmp_path / "w")]) == EXIT_FAILED


def test_cli_rejects_bad_seed(tmp_path):
    good = write(tmp_path, flat_config())
    with pytest.raises(SystemExit):
        main(["distance", "--config", good, "--seed", str(2**64)])
    with pytest.raises(SystemExit):
        main(["distance", "--config", good, "--jobs", "0"])


def test_cli_saddle_search_finds_violation(tmp_path):
    cfg = saddle_config(search={"seeds": 4, "max_evals": 40})
    cfg["distance"] = {"k_max": 5, "m": 64, "multistart": 1, "m_max": 128}
    out = tmp_path / "s"
    assert main(["search-violation", "--config", write(tmp_path, cfg), "--out", str(out), "--seed", "5"]) == EXIT_OK
    res = json.loads((out / "report.json").read_text())["results"]["search_violation"]
    assert res["excess"] - res["slack"] > 0
    assert res["verdict"] == "violated"
