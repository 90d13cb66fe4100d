import hashlib
import json
import subprocess
import sys

import numpy as np
import pytest

from metamorph import io
from metamorph.cli import (
    ConfigError,
    SCHEMAS,
    experiment_schema,
    list_experiments,
    parse_config,
    run,
    validate_config,
)


# ---------------------------------------------------------------------------
# io
# ---------------------------------------------------------------------------

def test_csv_roundtrip_full_precision(tmp_path):
    path = tmp_path / "t.csv"
    col = np.array([1.0 / 3.0, np.pi, 1e-17, -2.5])
    io.write_csv(path, ["a", "b"], [col, col * 2])
    header, data = io.read_csv(path)
    assert header == ["a", "b"]
    np.testing.assert_array_equal(data[:, 0], col)
    np.testing.assert_array_equal(data[:, 1], col * 2)


def test_pgm_roundtrip(tmp_path):
    path = tmp_path / "t.pgm"
    img = np.linspace(0, 1, 24).reshape(4, 6)
    io.write_pgm(path, img)
    back = io.read_pgm(path)
    assert back.shape == (4, 6)
    np.testing.assert_allclose(back, img, atol=1.0 / 255.0)
    with open(path, "rb") as f:
        assert f.read(2) == b"P5"


def test_pgm_rejects_bad_magic(tmp_path):
    path = tmp_path / "t.pgm"
    path.write_bytes(b"P2\n1 1\n255\n0")
    with pytest.raises(ValueError):
        io.read_pgm(path)


def test_grid_csv_roundtrip(tmp_path):
    path = tmp_path / "g.csv"
    g = np.random.default_rng(0).standard_normal((5, 7))
    io.write_grid_csv(path, g)
    np.testing.assert_array_equal(io.read_grid_csv(path), g)


# ---------------------------------------------------------------------------
# config validation
# ---------------------------------------------------------------------------

def test_list_experiments_has_seven_kinds_stable_order():
    cat = list_experiments()
    assert list(cat) == sorted(cat)
    assert len(cat) == 7


def test_schema_roundtrips_through_validate():
    for kind, schema in list_experiments().items():
        raw = {k: str(v["default"]) for k, v in schema.items()
               if v["default"] != ""}
        params = validate_config(kind, raw)
        assert params["kind"] == kind


def test_unknown_kind_rejected():
    with pytest.raises(KeyError):
        experiment_schema("teleport")
    with pytest.raises(ConfigError):
        validate_config("teleport", {})


def test_validation_errors_name_the_field():
    with pytest.raises(ConfigError) as exc:
        validate_config("peakon_headon", {"dt": "-0.5"})
    assert exc.value.field == "dt"
    with pytest.raises(ConfigError) as exc:
        validate_config("peakon_headon", {"warp": "1"})
    assert exc.value.field == "warp"
    with pytest.raises(ConfigError) as exc:
        validate_config("peakon_headon", {"dt": "fast"})
    assert exc.value.field == "dt"
    with pytest.raises(ConfigError):
        validate_config("oned_run", {"variant": "h1"})


def test_parse_config_single_section(tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[peakon_headon]\nsigma2 = 0\nhorizon = 2.0\n")
    params = parse_config(cfg)
    assert params["kind"] == "peakon_headon"
    assert params["sigma2"] == 0.0
    assert params["horizon"] == 2.0
    assert params["p_gap"] == 4.0  # default filled in
    cfg.write_text("[a]\n[peakon_headon]\n")
    with pytest.raises(ConfigError):
        parse_config(cfg)


# ---------------------------------------------------------------------------
# running experiments
# ---------------------------------------------------------------------------

def _hash_csvs(directory):
    out = {}
    for p in sorted(directory.glob("*.csv")):
        out[p.name] = hashlib.sha256(p.read_bytes()).hexdigest()
    return out


def test_run_peakon_deterministic(tmp_path):
    base = {"sigma2": "1e-4", "horizon": "1.0", "dt": "0.01"}
    d1, d2 = tmp_path / "a", tmp_path / "b"
    run(validate_config("peakon_headon", {**base, "output_dir": str(d1)}))
    run(validate_config("peakon_headon", {**base, "output_dir": str(d2)}))
    h1, h2 = _hash_csvs(d1), _hash_csvs(d2)
    assert h1 and h1 == h2
    manifest = json.loads((d1 / "manifest.json").read_text())
    assert "energy_drift" in manifest["summary"]
    assert manifest["wall_time_seconds"] > 0.0


def test_run_writes_manifest_and_artifacts(tmp_path):
    params = validate_config("peakon_headon", {
        "sigma2": "0", "horizon": "1.0", "dt": "0.01",
        "output_dir": str(tmp_path / "run")})
    manifest = run(params)
    assert manifest["summary"]["crossing"] is False
    assert (tmp_path / "run" / "separation.csv").exists()
    assert (tmp_path / "run" / "trajectory.csv").exists()


def _cli(*args, env=None):
    import os
    full_env = dict(os.environ)
    if env:
        full_env.update(env)
    return subprocess.run([sys.executable, "-m", "metamorph.cli", *args],
                          capture_output=True, text=True, env=full_env)


def test_cli_exit_codes(tmp_path):
    good = tmp_path / "good.ini"
    good.write_text("[peakon_headon]\nhorizon = 0.5\ndt = 0.01\n"
                    f"output_dir = {tmp_path / 'out'}\n")
    assert _cli("run", str(good)).returncode == 0

    bad = tmp_path / "bad.ini"
    bad.write_text("[peakon_headon]\ndt = -1\n")
    res = _cli("run", str(bad))
    assert res.returncode == 2
    assert "dt" in res.stderr

    # sigma2=0 head-on over a long horizon blows up: solver error -> 3
    blow = tmp_path / "blow.ini"
    blow.write_text("[peakon_headon]\nsigma2 = 0\nhorizon = 10.0\n"
                    f"output_dir = {tmp_path / 'blow'}\n")
    assert _cli("run", str(blow)).returncode == 3


def test_cli_list_and_unknown_kind():
    res = _cli("list")
    assert res.returncode == 0
    assert len(json.loads(res.stdout)) == 7
    res = _cli("list", "peakon_headon")
    assert res.returncode == 0
    res = _cli("list", "teleport")
    assert res.returncode == 2


def test_cli_env_output_root(tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[peakon_headon]\nhorizon = 0.5\ndt = 0.01\n")
    res = _cli("run", str(cfg), env={"METAMORPH_OUTPUT": str(tmp_path / "root")})
    assert res.returncode == 0
    assert (tmp_path / "root" / "peakon_headon" / "manifest.json").exists()


def test_cli_sweep_parallel(tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[peakon_headon]\nhorizon = 0.5\ndt = 0.01\n"
                   f"output_dir = {tmp_path / 'sweep'}\n")
    res = _cli("sweep", str(cfg), "--param", "sigma2=0,1e-4",
               "--param", "p_gap=2,4", "--jobs", "2")
    assert res.returncode == 0
    subdirs = [p for p in (tmp_path / "sweep").iterdir() if p.is_dir()]
    assert len(subdirs) == 4
    for d in subdirs:
        assert (d / "manifest.json").exists()


def test_cli_sweep_unknown_param(tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[peakon_headon]\nhorizon = 0.5\n")
    res = _cli("sweep", str(cfg), "--param", "warp=1,2")
    assert res.returncode == 2
