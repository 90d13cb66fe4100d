import json

import numpy as np
import pytest

from metamorph_plots import SchemaError, plot_separation, plot_snapshots
from metamorph_plots.cli import main


def write_separation(run_dir, sigma2, p_gap):
    run_dir.mkdir(parents=True, exist_ok=True)
    t = np.linspace(0.0, 5.0, 50)
    r = 2.0 - sigma2 * 10 * t - 0.1 * p_gap * t
    lines = ["time,r"]
    lines += [f"{ti:.17g},{ri:.17g}" for ti, ri in zip(t, r)]
    (run_dir / "separation.csv").write_text("\n".join(lines) + "\n")
    manifest = {"kind": "peakon_headon",
                "parameters": {"sigma2": sigma2, "p_gap": p_gap},
                "summary": {}}
    (run_dir / "manifest.json").write_text(json.dumps(manifest))


def write_pgm(path, img):
    h, w = img.shape
    data = (np.clip(img, 0.0, 1.0) * 255).round().astype(np.uint8)
    path.write_bytes(b"P5\n# test\n%d %d\n255\n" % (w, h) + data.tobytes())


def write_curve_path(run_dir, m=16, nt=4):
    run_dir.mkdir(parents=True, exist_ok=True)
    th = np.linspace(0.0, 1.0, m, endpoint=False)
    rows = ["time,theta,alpha,px,py"]
    for t in range(nt + 1):
        radius = 1.0 + 0.2 * t / nt
        for j in range(m):
            px = radius * np.cos(2 * np.pi * th[j])
            py = radius * np.sin(2 * np.pi * th[j])
            rows.append(f"{t / nt:.17g},{th[j]:.17g},0,{px:.17g},{py:.17g}")
    (run_dir / "path.csv").write_text("\n".join(rows) + "\n")


def test_separation_sweep_two_panels(tmp_path):
    for s2 in (0.0, 0.05):
        for gap in (1.0, 20.0):
            write_separation(tmp_path / f"s{s2}_g{gap}", s2, gap)
    out = plot_separation(tmp_path)
    assert out.exists() and out.stat().st_size > 0


def test_separation_single_run(tmp_path):
    write_separation(tmp_path, 0.0, 4.0)
    before = (tmp_path / "separation.csv").read_bytes()
    out = plot_separation(tmp_path, output=tmp_path / "fig.png")
    assert out.exists()
    # inputs are never mutated and re-running is idempotent
    assert (tmp_path / "separation.csv").read_bytes() == before
    out2 = plot_separation(tmp_path, output=tmp_path / "fig.png")
    assert out2 == out and out.exists()


def test_separation_empty_dir_schema_error(tmp_path):
    with pytest.raises(SchemaError):
        plot_separation(tmp_path)


def test_separation_malformed_csv(tmp_path):
    (tmp_path / "separation.csv").write_text("time,r\n1,notanumber\n")
    with pytest.raises(SchemaError):
        plot_separation(tmp_path)


def test_snapshots_grid_strip(tmp_path):
    rng = np.random.default_rng(0)
    for t in range(6):
        write_pgm(tmp_path / f"snap_{t:03d}.pgm", rng.random((8, 8)))
    out = plot_snapshots(tmp_path)
    assert out.exists() and out.stat().st_size > 0


def test_snapshots_stride_and_overlarge_stride(tmp_path):
    rng = np.random.default_rng(1)
    for t in range(6):
        write_pgm(tmp_path / f"snap_{t:03d}.pgm", rng.random((8, 8)))
    assert plot_snapshots(tmp_path, stride=2,
                          output=tmp_path / "s2.png").exists()
    # stride larger than the frame count shows all frames
    assert plot_snapshots(tmp_path, stride=100,
                          output=tmp_path / "s100.png").exists()


def test_snapshots_curve_panels(tmp_path):
    write_curve_path(tmp_path)
    out = plot_snapshots(tmp_path, stride=2)
    assert out.exists() and out.stat().st_size > 0


def test_snapshots_non_grid_schema_error(tmp_path):
    (tmp_path / "fields.csv").write_text("time,x,m,rho\n0,0,0,0\n")
    with pytest.raises(SchemaError):
        plot_snapshots(tmp_path)


def test_snapshots_bad_pgm_magic(tmp_path):
    (tmp_path / "snap_000.pgm").write_bytes(b"P2\n8 8\n255\n" + b"0 " * 64)
    with pytest.raises(SchemaError):
        plot_snapshots(tmp_path)


def test_snapshots_wrong_curve_columns(tmp_path):
    (tmp_path / "path.csv").write_text("time,weight,x,y\n0,1,0,0\n")
    with pytest.raises(SchemaError):
        plot_snapshots(tmp_path)


def test_cli_exit_codes(tmp_path):
    write_separation(tmp_path / "run", 0.0, 4.0)
    assert main(["separation", str(tmp_path / "run"),
                 "-o", str(tmp_path / "out.png")]) == 0
    assert (tmp_path / "out.png").exists()
    assert main(["snapshots", str(tmp_path / "run")]) == 2
