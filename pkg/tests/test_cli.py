"""Command-line behaviour: exit codes, report format, determinism."""

from __future__ import annotations

import json

import numpy as np
import pytest

from multisl.cli import csv_text, dumps, main
from multisl.config import DEFAULT_TOLERANCES, load_config, parse_config
from multisl.errors import ConfigError, DimensionError, PatternError, RedundantPerturbation, UnknownPreset


def _write(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return str(p)


def _small(preset="coupled-sine", **pert):
    return {
        "problem": {
            "grid": {"a": np.pi, "n_points": 1001},
            "potential": {"preset": preset, "m": 2, "thresholds": [0.0, 0.5]},
            "perturbations": {"scheme": "jacobi", "pivot": 0, **pert},
        },
        "run": {"n_max": 6, "workers": 1},
    }


def _run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


# -- configuration errors (exit 2) -------------------------------------------


def test_redundant_perturbation_exits_2(tmp_path, capsys):
    cfg = {"problem": {"potential": {"preset": "free"}, "h": [[0.5]], "perturbations": {"matrices": [[[0.0]]]}}}
    code, out, err = _run(capsys, "forward", "--config", _write(tmp_path, cfg), "--no-timestamp")
    assert code == 2
    assert json.loads(out)["error"] == "RedundantPerturbation"
    assert "RedundantPerturbation" in err


def test_bad_json_reports_line(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text('{"problem": {\n  "potential": {"preset": "free"},\n}}\n')
    code, out, _ = _run(capsys, "forward", "--config", str(p))
    rep = json.loads(out)
    assert code == 2
    assert rep["context"]["line"] == 3
    assert "line 3" in rep["message"]


def test_missing_config_file(capsys):
    code, out, _ = _run(capsys, "forward", "--config", "/nonexistent/x.json")
    assert code == 2
    assert json.loads(out)["code"] == "E_CONFIG"


@pytest.mark.parametrize(
    "mutate, kind, field",
    [
        (lambda c: c.update(extra=1), ConfigError, "extra"),
        (lambda c: c["problem"]["potential"].update(preset="square"), UnknownPreset, "potential.preset"),
        (lambda c: c["problem"].update(h=[[0, 1], [2, 0]]), ConfigError, "problem.h"),
        (lambda c: c["problem"].update(H=[[0.0]]), DimensionError, "problem.H"),
        (lambda c: c["problem"]["perturbations"].update(pivot=2), ConfigError, "problem.perturbations.pivot"),
        (lambda c: c["problem"]["perturbations"].update(scheme="star"), ConfigError, "problem.perturbations.scheme"),
        (lambda c: c["run"].update(n_max=0), ConfigError, "run.n_max"),
        (lambda c: c["run"].update(tolerances={"speed": 1}), ConfigError, "run.tolerances.speed"),
        (lambda c: c["run"].update(reference="exact"), ConfigError, "run.reference"),
        (lambda c: c["run"].update(colour=1), ConfigError, "run.colour"),
        (lambda c: c["problem"]["grid"].update(n_points=2), ConfigError, "problem.grid.n_points"),
    ],
)
def test_validation_names_the_field(mutate, kind, field):
    cfg = _small()
    mutate(cfg)
    with pytest.raises(kind) as info:
        parse_config(cfg)
    assert info.value.exit_code == 2
    assert info.value.context.get("field") == field


def test_perturbation_pattern_is_checked():
    cfg = _small(matrices=[[[1, 0], [0, 0]], [[1, 0.1], [0.1, 0.2]]])
    with pytest.raises(PatternError) as info:
        parse_config(cfg)
    assert info.value.context["field"] == "problem.perturbations.matrices[1]"


def test_h_equal_to_base_is_rejected():
    cfg = _small(matrices=[[[0, 0], [0, 0]], [[1, 0.1], [0.1, 0]]])
    with pytest.raises(RedundantPerturbation):
        parse_config(cfg)


def test_overrides_and_defaults():
    cfg = load_config("coupled-sine", n_max=7, seed=11)
    assert (cfg.n_max, cfg.seed, cfg.scheme, cfg.pivot) == (7, 11, "jacobi", 0)
    assert cfg.tolerances == DEFAULT_TOLERANCES
    assert cfg.problem.difference(2)[0, 1] == pytest.approx(1e-5)


# -- solver errors (exit 3) --------------------------------------------------


def test_degenerate_preset_exits_3(capsys):
    code, out, _ = _run(capsys, "forward", "--config", "degenerate", "--n-max", "3", "--no-timestamp")
    rep = json.loads(out)
    assert code == 3
    assert rep["error"] == "DegenerateSpectrum"
    assert abs(rep["context"]["lam"]) < 1e-6  # the lowest eigenvalue is already double


def test_singular_scheme_exits_3(tmp_path, capsys):
    cfg = _small(matrices=[[[1, 0], [0, 0]], [[2, 0], [0, 0]]])
    code, out, _ = _run(capsys, "recover", "--config", _write(tmp_path, cfg), "--no-timestamp")
    assert code == 3
    assert json.loads(out)["error"] == "SingularSystem"


# -- successful runs ----------------------------------------------------------


def test_forward_free(capsys):
    code, out, _ = _run(capsys, "forward", "--config", "free", "--n-max", "4", "--no-timestamp")
    rep = json.loads(out)
    assert code == 0
    assert np.allclose(rep["problems"][0]["eigenvalues"], [0, 1, 4, 9], atol=1e-9)


def test_forward_decoupled_tags(capsys):
    code, out, _ = _run(capsys, "forward", "--config", "decoupled", "--n-max", "5", "--no-timestamp")
    rep = json.loads(out)
    assert code == 0
    assert np.allclose(rep["problems"][0]["eigenvalues"], [0, 0.5, 1, 1.5, 4], atol=1e-9)
    assert rep["problems"][0]["channel_tags"] == [0, 1, 0, 1, 0]


def test_forward_oracle_dump(tmp_path, capsys):
    cfg = _small()
    cfg["problem"]["grid"]["n_points"] = 2001
    cfg["run"]["oracle"] = True
    code, out, _ = _run(capsys, "forward", "--config", _write(tmp_path, cfg), "--no-timestamp")
    probs = json.loads(out)["problems"]
    assert code == 0
    for p in probs:
        assert len(p["oracle"]["eigenvalues"]) == 6
        assert p["oracle"]["max_relative_error"] < 1e-5


def test_reports_are_deterministic(tmp_path, capsys):
    texts = []
    for k in range(2):
        d = tmp_path / f"run{k}"
        assert main(["forward", "--config", "decoupled", "--n-max", "4", "--out", str(d), "--no-timestamp"]) == 0
        texts.append(((d / "forward.json").read_text(), (d / "forward.csv").read_text()))
    capsys.readouterr()
    assert texts[0] == texts[1]


def test_timestamp_present_by_default(capsys):
    _, out, _ = _run(capsys, "forward", "--config", "free", "--n-max", "2")
    assert "timestamp" in json.loads(out)


def test_roundtrip_free_passes(tmp_path, capsys):
    code, _, _ = _run(capsys, "roundtrip", "--config", "free", "--out", str(tmp_path), "--no-timestamp")
    rep = json.loads((tmp_path / "roundtrip.json").read_text())
    assert code == 0
    assert rep["status"] == "ok"
    assert rep["checks"]["gamma"]["value"] < 1e-5


def test_tolerance_failure_exits_4(tmp_path, capsys):
    cfg = json.loads(json.dumps(load_config("free").raw))
    cfg["run"]["tolerances"] = {"gamma_rel": 1e-12, "v_sup": 1e-12}
    code, out, _ = _run(capsys, "roundtrip", "--config", _write(tmp_path, cfg), "--no-timestamp")
    assert code == 4
    assert json.loads(out)["status"] == "tolerance_failure"


def test_verify_free_passes(capsys):
    code, out, _ = _run(capsys, "verify", "--config", "free", "--n-max", "10", "--no-timestamp")
    rep = json.loads(out)
    assert code == 0
    assert rep["passed"] is True


# -- serialization ------------------------------------------------------------


def test_floats_round_trip_exactly():
    vals = [np.pi, 1 / 3, 2.0**-40, 1e300, -0.1]
    text = dumps({"v": vals, "x": np.float64(np.e)})
    back = json.loads(text)
    assert back["v"] == vals
    assert back["x"] == np.e
    assert "3.1415926535897931" in text


def test_non_finite_becomes_null():
    assert json.loads(dumps([np.nan, np.inf, 1.0])) == [None, None, 1.0]


def test_csv_uses_full_precision():
    text = csv_text(["n", "v"], [[1, 0.1]])
    assert text.splitlines() == ["n,v", "1,0.10000000000000001"]
