import csv
import json
import math
import subprocess
import sys

import pytest

from impactkam import __version__
from impactkam.cli import ConfigError, config_hash, main, parse_config


def run(tmp_path, text, command, *extra):
    cfg = tmp_path / "cfg.yaml"
    cfg.write_text(text)
    out = tmp_path / "out"
    code = main([command, "--config", str(cfg), "--out", str(out), *extra])
    return code, out


def read_csv(path):
    with path.open() as fh:
        return list(csv.DictReader(fh))


SIMULATE = """\
forcing: {ak: [1.0]}
epsilon: 0.0
simulate: {t0: 0.0, y0: 3.0, n_impacts: 10}
"""


def test_simulate_unperturbed(tmp_path):
    code, out = run(tmp_path, SIMULATE, "simulate")
    assert code == 0
    rows = read_csv(out / "orbit.csv")
    assert len(rows) == 11
    ts = [float(r["t"]) for r in rows]
    assert all(float(r["y"]) == 3.0 for r in rows)
    assert all(abs(b - a - 12.0) < 1e-12 for a, b in zip(ts, ts[1:]))


def test_meta_sidecar(tmp_path):
    code, out = run(tmp_path, SIMULATE, "simulate")
    meta = json.loads((out / "orbit.meta.json").read_text())
    assert meta["version"] == __version__
    assert meta["config_sha256"] == config_hash(parse_config(SIMULATE))
    assert meta["columns"][0] == "impact_index"


def test_byte_identical_rerun(tmp_path):
    code, out = run(tmp_path, SIMULATE.replace("0.0\nsim", "0.01\nsim").replace("3.0", "9.0"), "simulate")
    first = (out / "orbit.csv").read_bytes()
    main(["simulate", "--config", str(tmp_path / "cfg.yaml"), "--out", str(out)])
    assert (out / "orbit.csv").read_bytes() == first


def test_schema_violation_reports_line(tmp_path, capsys):
    bad = SIMULATE.replace("n_impacts: 10", "n_impacts: -5")
    code, out = run(tmp_path, bad, "simulate")
    assert code == 2
    err = capsys.readouterr().err
    assert "cfg.yaml:3:" in err and "n_impacts" in err
    assert not out.exists()


def test_unknown_key_rejected(tmp_path, capsys):
    code, out = run(tmp_path, SIMULATE + "bogus: 1\n", "simulate")
    assert code == 2 and "bogus" in capsys.readouterr().err


def test_parse_config_errors():
    with pytest.raises(ConfigError):
        parse_config("forcing: [\n")
    with pytest.raises(ConfigError):
        parse_config("epsilon: 0.1\n")


def test_large_mean_forcing_rejected(tmp_path):
    code, _ = run(tmp_path, "forcing: {a0: 10.0}\nepsilon: 0.1\nsimulate: {y0: 9.0}\n", "simulate")
    assert code == 2


def test_seed_override_range(tmp_path):
    code, _ = run(tmp_path, SIMULATE, "simulate", "--seed", str(2**64))
    assert code == 2


def test_find_curve_unperturbed_flat(tmp_path):
    text = "forcing: {ak: [1.0]}\nepsilon: 0.0\nladder: {k: 4}\nkam: {order: 32}\n"
    code, out = run(tmp_path, text, "find-curve")
    assert code == 0
    rep = json.loads((out / "kam_report.json").read_text())
    assert rep["verdict"] == "converged" and rep["iterations"] == 1
    rows = read_csv(out / "curve.csv")
    ys = [float(r["y0"]) for r in rows]
    assert max(ys) - min(ys) < 1e-12
    assert ys[0] == pytest.approx((2 * math.pi * (4 + (math.sqrt(5) - 1) / 2)) / 4, rel=1e-12)


def test_find_curve_near_rational_fails(tmp_path):
    w = 2 * math.pi * 5 + 2 * math.pi / 3 * (1 + 1e-13)
    text = f"forcing: {{ak: [1.0]}}\nepsilon: 0.01\nladder: {{k: 5, omega: {w!r}}}\n"
    code, out = run(tmp_path, text, "find-curve")
    assert code == 3
    fail = json.loads((out / "failure.json").read_text())
    assert fail["error"] == "SmallDivisorBreakdown" and fail["k"] % 3 == 0


def test_sweep_ladder_drops_low_rungs(tmp_path):
    text = "forcing: {ak: [1.0]}\nepsilon: 0.01\nladder: {k_range: [2, 5]}\nkam: {order: 64}\n"
    code, out = run(tmp_path, text, "sweep-ladder")
    assert code == 0
    rows = read_csv(out / "ladder.csv")
    assert [int(r["k"]) for r in rows] == [3, 4, 5]
    dropped = json.loads((out / "ladder_dropped.json").read_text())
    assert [d["k"] for d in dropped["dropped"]] == [2]


def test_impact_map_grid(tmp_path):
    text = "forcing: {ak: [1.0]}\nepsilon: 0.02\nimpact_map: {n_t: 4, y_values: [8.0, 16.0]}\n"
    code, out = run(tmp_path, text, "impact-map")
    rows = read_csv(out / "impact_map.csv")
    assert code == 0 and len(rows) == 8
    assert all(abs(float(r["det_jacobian"]) - 1) > 0 for r in rows)


def test_certify_control(tmp_path):
    text = (
        "forcing: {ak: [1.0]}\nepsilon: 0.05\nseed: 2024\n"
        "certify: {k_inner: 4, k_outer: 5, n_trials: 64, n_impacts: 2000, control: true}\n"
    )
    code, out = run(tmp_path, text, "certify")
    assert code == 0
    summary = json.loads((out / "confinement.json").read_text())
    assert summary["n_breached"] >= 1


def test_audit_passes(tmp_path):
    text = "forcing: {ak: [1.0]}\nepsilon: 0.01\naudit: {n_quad: 256}\n"
    code, out = run(tmp_path, text, "audit")
    assert code == 0
    rows = read_csv(out / "audit.csv")
    assert rows and all(r["passed"] == "true" for r in rows)


def test_module_entry_point(tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text(SIMULATE)
    res = subprocess.run(
        [sys.executable, "-m", "impactkam", "simulate", "--config", str(cfg), "--out", str(tmp_path / "o")],
        capture_output=True,
        text=True,
    )
    assert res.returncode == 0 and (tmp_path / "o" / "orbit.csv").exists()
