"""Config-driven experiment runner.

Configs are flat key-value text files with one section whose name is the
experiment kind::

    [peakon_headon]
    sigma2 = 1e-4
    horizon = 5.0

Subcommands: ``run <config>``, ``list [kind]``,
``sweep <config> --param k=v1,v2,... [--jobs N]``.
Exit codes: 0 success, 2 validation error, 3 solver non-convergence.
"""

from __future__ import annotations

import argparse
import configparser
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import curves, grid, io, landmark, measures, oned
from .kernels import ConditioningError, KernelSpec

OUTPUT_ENV = "METAMORPH_OUTPUT"


class ConfigError(ValueError):
    """Invalid experiment configuration; carries the offending field name."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


# ---------------------------------------------------------------------------
# schemas
# ---------------------------------------------------------------------------

def _positive(v):
    return v > 0


def _nonneg(v):
    return v >= 0


# key -> (python type, default, constraint, description)
_COMMON = {
    "seed": (int, 0, _nonneg, "random seed for stochastic components"),
    "output_dir": (str, "", None, "artifact directory (default: env/CWD)"),
}

SCHEMAS = {
    "peakon_headon": {
        **_COMMON,
        "sigma2": (float, 1e-4, _nonneg, "template weight"),
        "p_gap": (float, 4.0, _positive, "momentum magnitude p - (-p)"),
        "horizon": (float, 5.0, _positive, "integration horizon"),
        "dt": (float, 1e-3, _positive, "RK4 step"),
        "kernel_width": (float, 1.0, _positive, "gaussian kernel width"),
        "kernel_scale": (float, 1.0, _positive, "gaussian kernel scale"),
    },
    "peakon_overtake": {
        **_COMMON,
        "sigma2": (float, 0.05, _nonneg, "template weight"),
        "p_gap": (float, 6.0, _positive, "momentum gap between peakons"),
        "base_momentum": (float, 0.5, _positive, "slow peakon momentum"),
        "horizon": (float, 6.0, _positive, "integration horizon"),
        "dt": (float, 1e-3, _positive, "RK4 step"),
        "kernel_width": (float, 1.0, _positive, "gaussian kernel width"),
        "kernel_scale": (float, 1.0, _positive, "gaussian kernel scale"),
    },
    "image_match": {
        **_COMMON,
        "npix": (int, 16, _positive, "grid size per axis"),
        "sigma2": (float, 0.1, _positive, "template weight"),
        "timesteps": (float, 8, _positive, "time segments"),
        "alpha": (float, 0.01, _positive, "Helmholtz operator coefficient"),
        "order": (int, 2, _positive, "Helmholtz operator power"),
        "source": (str, "", None, "source PGM path (blank: synthetic)"),
        "target": (str, "", None, "target PGM path (blank: synthetic)"),
    },
    "density_match": {
        **_COMMON,
        "npix": (int, 16, _positive, "grid size per axis"),
        "sigma2": (float, 0.1, _positive, "template weight"),
        "timesteps": (float, 8, _positive, "time segments"),
        "alpha": (float, 0.01, _positive, "Helmholtz operator coefficient"),
        "order": (int, 2, _positive, "Helmholtz operator power"),
        "source": (str, "", None, "source PGM path (blank: synthetic)"),
        "target": (str, "", None, "target PGM path (blank: synthetic)"),
    },
    "oned_run": {
        **_COMMON,
        "m": (int, 128, _positive, "spatial grid points"),
        "variant": (str, "l2", None, "l2 | generalized | smooth"),
        "alpha": (float, 1.0, _positive, "velocity Helmholtz coefficient"),
        "beta": (float, 1.0, _positive, "density operator coefficient"),
        "horizon": (float, 1.0, _positive, "integration horizon"),
        "dt": (float, 1e-3, _positive, "RK4 step"),
        "bump_center": (float, 0.5, None, "initial m bump center"),
        "bump_width": (float, 0.05, _positive, "initial m bump width"),
        "bump_mass": (float, 1.0, None, "initial m bump mass"),
        "rho_center": (float, 0.3, None, "initial rho bump center"),
        "rho_width": (float, 0.05, _positive, "initial rho bump width"),
        "rho_mass": (float, 1.0, None, "initial rho bump mass"),
        "snapshot_stride": (int, 100, _positive, "steps between snapshots"),
        "spectrum_count": (int, 6, _positive, "Lax eigenvalues tracked"),
    },
    "curve_match": {
        **_COMMON,
        "m": (int, 64, _positive, "angular grid points"),
        "sigma2": (float, 0.5, _positive, "template weight"),
        "timesteps": (float, 8, _positive, "time segments"),
        "target": (str, "ellipse", None, "ellipse | rotate"),
        "amplitude": (float, 0.25, None, "ellipse tangent-angle amplitude"),
        "rotation": (float, 0.3, None, "rotation angle for target=rotate"),
    },
    "measure_match": {
        **_COMMON,
        "sigma2": (float, 0.5, _positive, "template weight"),
        "timesteps": (float, 8, _positive, "time segments"),
        "restarts": (int, 5, _positive, "optimizer restarts"),
        "kernel_g_width": (float, 1.0, _positive, "deformation kernel width"),
        "kernel_h_width": (float, 0.5, _positive, "RKHS kernel width"),
        "source_csv": (str, "", None, "CSV (weight,x,y); blank: built-in"),
        "target_csv": (str, "", None, "CSV (weight,x,y); blank: built-in"),
    },
}

_CHOICES = {
    ("oned_run", "variant"): ("l2", "generalized", "smooth"),
    ("curve_match", "target"): ("ellipse", "rotate"),
}


def list_experiments():
    """Catalog of experiment kinds with their parameter schemas."""
    catalog = {}
    for kind in sorted(SCHEMAS):
        catalog[kind] = {
            key: {"type": typ.__name__, "default": default, "help": doc}
            for key, (typ, default, _chk, doc) in sorted(SCHEMAS[kind].items())
        }
    return catalog


def experiment_schema(kind: str):
    if kind not in SCHEMAS:
        raise KeyError(f"unknown experiment kind {kind!r}")
    return list_experiments()[kind]


# ---------------------------------------------------------------------------
# config parsing / validation
# ---------------------------------------------------------------------------

def parse_config(path) -> dict:
    cp = configparser.ConfigParser()
    read = cp.read(path)
    if not read:
        raise ConfigError("config", f"cannot read {path}")
    sections = cp.sections()
    if len(sections) != 1:
        raise ConfigError("config", "expected exactly one [kind] section")
    kind = sections[0]
    raw = dict(cp[kind])
    return validate_config(kind, raw)


def validate_config(kind: str, raw: dict) -> dict:
    if kind not in SCHEMAS:
        raise ConfigError("kind", f"unknown experiment kind {kind!r}; "
                          f"known: {', '.join(sorted(SCHEMAS))}")
    schema = SCHEMAS[kind]
    params = {"kind": kind}
    for key, value in raw.items():
        if key not in schema:
            raise ConfigError(key, f"unknown key for {kind}")
        typ, _default, check, _doc = schema[key]
        try:
            if typ is int:
                parsed = int(str(value), 10)
            else:
                parsed = typ(value)
        except (TypeError, ValueError):
            raise ConfigError(key, f"expected {typ.__name__}, got {value!r}")
        if check is not None and not check(parsed):
            raise ConfigError(key, f"value {parsed!r} out of range")
        choices = _CHOICES.get((kind, key))
        if choices and parsed not in choices:
            raise ConfigError(key, f"must be one of {choices}")
        params[key] = parsed
    for key, (typ, default, _check, _doc) in schema.items():
        params.setdefault(key, default)
    # timesteps arrive as float for sweep convenience but must be integral
    if "timesteps" in params:
        t = params["timesteps"]
        if t != int(t) or int(t) < 2:
            raise ConfigError("timesteps", "must be an integer >= 2")
        params["timesteps"] = int(t)
    return params


def _output_dir(params: dict) -> Path:
    if params.get("output_dir"):
        base = Path(params["output_dir"])
    else:
        root = Path(os.environ.get(OUTPUT_ENV, "out"))
        base = root / params["kind"]
    base.mkdir(parents=True, exist_ok=True)
    return base


# ---------------------------------------------------------------------------
# experiment drivers
# ---------------------------------------------------------------------------

def _run_peakon(params, out: Path):
    kind = "head_on" if params["kind"] == "peakon_headon" else "overtaking"
    kernel = KernelSpec(family="gaussian", width=params["kernel_width"],
                        scale=params["kernel_scale"], dim=1)
    kwargs = {}
    if kind == "overtaking":
        kwargs["base_momentum"] = params["base_momentum"]
    res = landmark.collision_experiment(kind, params["p_gap"],
                                        params["sigma2"], params["horizon"],
                                        dt=params["dt"], kernel=kernel, **kwargs)
    io.write_csv(out / "separation.csv", ["time", "r"],
                 [res.times, res.separation])
    pos = res.trajectory.positions
    mom = res.trajectory.momenta
    io.write_csv(out / "trajectory.csv",
                 ["time", "q0", "q1", "p0", "p1"],
                 [res.times, pos[:, 0, 0], pos[:, 1, 0],
                  mom[:, 0, 0], mom[:, 1, 0]])
    return {
        "crossing": bool(res.crossing),
        "crossing_time": res.crossing_time,
        "min_separation": float(np.min(np.abs(res.separation))),
        "final_separation": float(res.separation[-1]),
        "energy_drift": float(res.trajectory.energy_drift()),
    }


def _synthetic_grid(npix: int, seed: int, which: str):
    """Seeded smooth positive test images on [0,1)^2."""
    rng = np.random.default_rng(seed + (0 if which == "source" else 1))
    xs = np.arange(npix) / npix
    xx, yy = np.meshgrid(xs, xs, indexing="ij")
    img = np.full((npix, npix), 0.2)
    for _ in range(3):
        cx, cy = rng.uniform(0.2, 0.8, size=2)
        w = rng.uniform(0.08, 0.15)
        a = rng.uniform(0.3, 0.6)
        dx = np.minimum(np.abs(xx - cx), 1 - np.abs(xx - cx))
        dy = np.minimum(np.abs(yy - cy), 1 - np.abs(yy - cy))
        img += a * np.exp(-(dx**2 + dy**2) / (2 * w**2))
    return img / img.max()


def _run_grid(params, out: Path):
    mode = "image" if params["kind"] == "image_match" else "density"
    npix = params["npix"]
    if params["source"]:
        n0 = io.read_pgm(params["source"])
    else:
        n0 = _synthetic_grid(npix, params["seed"], "source")
    if params["target"]:
        n1 = io.read_pgm(params["target"])
    else:
        n1 = _synthetic_grid(npix, params["seed"], "target")
    op = grid.default_operator(n0.shape, order=params["order"],
                               alpha=params["alpha"])
    path = grid.match_bvp(n0, n1, mode, params["sigma2"],
                          timesteps=params["timesteps"], op=op)
    io.write_pgm(out / "source.pgm", n0)
    io.write_pgm(out / "target.pgm", n1)
    for t, n in enumerate(path.ns):
        io.write_pgm(out / f"snap_{t:03d}.pgm", n / max(n.max(), 1e-12))
        io.write_grid_csv(out / f"snap_{t:03d}.csv", n)
    io.write_csv(out / "energy_trace.csv", ["iteration", "energy"],
                 [np.arange(len(path.energy_trace)), path.energy_trace])
    total, (e_def, e_tem) = grid.path_energy(path)
    manifest = {
        "energy": total,
        "deformation_energy": e_def,
        "template_energy": e_tem,
        "horizontality_residual": float(grid.check_horizontality(path)),
    }
    if mode == "image":
        manifest["integrated_momentum_drift"] = float(
            grid.check_integrated_momentum(path))
    return manifest


def _run_oned(params, out: Path):
    x = oned.grid_points(params["m"])
    m0 = oned.gaussian_bump(x, params["bump_center"], params["bump_width"],
                            params["bump_mass"])
    rho0 = oned.gaussian_bump(x, params["rho_center"], params["rho_width"],
                              params["rho_mass"])
    state0 = oned.OneDState(m=m0, rho=rho0, variant=params["variant"],
                            alpha=params["alpha"], beta=params["beta"])
    traj = oned.integrate_1d(state0, params["horizon"], params["dt"],
                             snapshot_stride=params["snapshot_stride"])
    rows_t, rows_x, rows_m, rows_r = [], [], [], []
    for t, st in zip(traj.times, traj.states):
        rows_t.append(np.full(params["m"], t))
        rows_x.append(x)
        rows_m.append(st.m)
        rows_r.append(st.rho)
    io.write_csv(out / "fields.csv", ["time", "x", "m", "rho"],
                 [np.concatenate(rows_t), np.concatenate(rows_x),
                  np.concatenate(rows_m), np.concatenate(rows_r)])
    n_cons = len(traj.energy)
    cons_times = np.linspace(0.0, params["horizon"], n_cons)
    io.write_csv(out / "conserved.csv",
                 ["time", "energy", "mass_m", "mass_rho"],
                 [cons_times, traj.energy, traj.mass_m, traj.mass_rho])
    count = params["spectrum_count"]
    spec0 = oned.lax_spectrum(traj.states[0], count)
    specT = oned.track_spectrum(spec0, oned.lax_spectrum(traj.states[-1], count))
    io.write_csv(out / "spectrum.csv",
                 ["re_t0", "im_t0", "re_t1", "im_t1"],
                 [spec0.real, spec0.imag, specT.real, specT.imag])
    denom = np.maximum(np.abs(spec0), 1.0)
    return {
        "energy_drift": float(traj.energy_drift()),
        "mass_rho_drift": float(traj.mass_drift()),
        "spectrum_drift": float(np.max(np.abs(specT - spec0) / denom)),
    }


def _run_curve(params, out: Path):
    m = params["m"]
    th = curves.theta_grid(m)
    alpha0 = th.copy()
    if params["target"] == "ellipse":
        alpha1 = curves.project_closure(th + params["amplitude"] * np.sin(2 * th))
    else:
        alpha1 = curves.project_closure(th + params["rotation"])
    path = curves.match_curves(alpha0, alpha1, sigma2=params["sigma2"],
                               timesteps=params["timesteps"])
    nt = path.alphas.shape[0] - 1
    rows_t, rows_th, rows_a = [], [], []
    rows_px, rows_py = [], []
    for t in range(nt + 1):
        rows_t.append(np.full(m, t / nt))
        rows_th.append(th)
        rows_a.append(path.alphas[t])
        pts = curves.reconstruct(path.alphas[t])
        rows_px.append(pts[:, 0])
        rows_py.append(pts[:, 1])
    io.write_csv(out / "path.csv", ["time", "theta", "alpha", "px", "py"],
                 [np.concatenate(rows_t), np.concatenate(rows_th),
                  np.concatenate(rows_a), np.concatenate(rows_px),
                  np.concatenate(rows_py)])
    io.write_csv(out / "energy_trace.csv", ["iteration", "energy"],
                 [np.arange(len(path.energy_trace)), path.energy_trace])
    total, (e_def, e_tem) = curves.curve_path_energy(path.alphas, path.us,
                                                     params["sigma2"])
    closure = max(float(np.abs(curves.closure_residual(a)).max())
                  for a in path.alphas)
    return {"energy": total, "deformation_energy": e_def,
            "template_energy": e_tem, "closure_residual": closure}


def _read_point_set(path):
    _header, data = io.read_csv(path)
    if data.shape[1] < 3:
        raise ConfigError("source_csv", "need columns weight,x,y")
    return data[:, 0], data[:, 1:3]


def _run_measure(params, out: Path):
    if params["source_csv"]:
        n0 = _read_point_set(params["source_csv"])
    else:
        n0 = (np.array([1.0]), np.array([[0.0, 0.0]]))
    if params["target_csv"]:
        n1 = _read_point_set(params["target_csv"])
    else:
        n1 = (np.array([1.0]), np.array([[1.0, 0.0]]))
    kg = KernelSpec(family="gaussian", width=params["kernel_g_width"], dim=2)
    kh = KernelSpec(family="gaussian", width=params["kernel_h_width"], dim=2)
    opts = measures.MeasureMatchOpts(restarts=params["restarts"],
                                     seed=params["seed"], tol=1e-4)
    path = measures.match_measures(n0, n1, params["sigma2"],
                                   timesteps=params["timesteps"],
                                   kernel_g=kg, kernel_h=kh, opts=opts)
    nt = path.timesteps
    q = path.alpha.shape[1]
    r = path.beta.shape[1]
    rows = {k: [] for k in ("time", "particle", "family", "weight", "x", "y")}
    for t in range(nt + 1):
        for i in range(q):
            rows["time"].append(t / nt)
            rows["particle"].append(i)
            rows["family"].append(0)
            rows["weight"].append(path.alpha[t, i])
            rows["x"].append(path.x[t, i, 0])
            rows["y"].append(path.x[t, i, 1])
        for i in range(r):
            rows["time"].append(t / nt)
            rows["particle"].append(i)
            rows["family"].append(1)
            rows["weight"].append(path.beta[t, i])
            rows["x"].append(path.y[t, i, 0])
            rows["y"].append(path.y[t, i, 1])
    io.write_csv(out / "path.csv",
                 ["time", "particle", "family", "weight", "x", "y"],
                 [np.asarray(rows[k], dtype=float)
                  for k in ("time", "particle", "family", "weight", "x", "y")])
    total, (e_def, e_tem) = measures.path_energy(path)
    segs = measures.segment_energies(path)
    h_spread = float((segs.max() - segs.min()) / max(abs(segs.mean()), 1e-15))
    return {"energy": total, "deformation_energy": e_def,
            "template_energy": e_tem, "grad_norm": path.grad_norm,
            "h_spread": h_spread}


_DRIVERS = {
    "peakon_headon": _run_peakon,
    "peakon_overtake": _run_peakon,
    "image_match": _run_grid,
    "density_match": _run_grid,
    "oned_run": _run_oned,
    "curve_match": _run_curve,
    "measure_match": _run_measure,
}


def run(params: dict) -> dict:
    """Run a validated experiment config; returns the manifest dict."""
    out = _output_dir(params)
    t0 = time.perf_counter()
    summary = _DRIVERS[params["kind"]](params, out)
    manifest = {
        "kind": params["kind"],
        "parameters": {k: v for k, v in params.items() if k != "kind"},
        "versions": _versions(),
        "summary": summary,
        "wall_time_seconds": time.perf_counter() - t0,
        "output_dir": str(out),
    }
    with open(out / "manifest.json", "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    return manifest


def _versions():
    import scipy

    from . import __version__
    return {"metamorph": __version__, "numpy": np.__version__,
            "scipy": scipy.__version__}


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------

def _sweep_combos(base: dict, spec_strings):
    """Expand --param k=v1,v2,... options into a list of param dicts."""
    axes = []
    for s in spec_strings:
        if "=" not in s:
            raise ConfigError("param", f"expected k=v1,v2,..., got {s!r}")
        key, values = s.split("=", 1)
        key = key.strip()
        if key not in SCHEMAS[base["kind"]]:
            raise ConfigError(key, f"unknown key for {base['kind']}")
        axes.append((key, [v.strip() for v in values.split(",") if v.strip()]))
    combos = [{}]
    for key, values in axes:
        combos = [{**c, key: v} for c in combos for v in values]
    out = []
    for combo in combos:
        raw = {k: str(v) for k, v in base.items()
               if k not in ("kind",) and v != ""}
        raw.update(combo)
        params = validate_config(base["kind"], raw)
        tag = "_".join(f"{k}={v}" for k, v in combo.items())
        params["output_dir"] = str(Path(_output_dir(base)) / tag)
        out.append(params)
    return out


def _run_one(params):
    return run(params)


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="metamorph", description="metamorphosis experiment runner")
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run one experiment config")
    p_run.add_argument("config")
    p_list = sub.add_parser("list", help="list experiment kinds and schemas")
    p_list.add_argument("kind", nargs="?")
    p_sweep = sub.add_parser("sweep", help="run a parameter sweep")
    p_sweep.add_argument("config")
    p_sweep.add_argument("--param", action="append", default=[],
                         metavar="k=v1,v2,...")
    p_sweep.add_argument("--jobs", type=int, default=1)
    args = parser.parse_args(argv)

    try:
        if args.command == "list":
            catalog = list_experiments()
            if args.kind is not None:
                if args.kind not in catalog:
                    print(f"unknown experiment kind: {args.kind}",
                          file=sys.stderr)
                    return 2
                catalog = {args.kind: catalog[args.kind]}
            print(json.dumps(catalog, indent=2, sort_keys=True))
            return 0
        if args.command == "run":
            manifest = run(parse_config(args.config))
            print(json.dumps(manifest["summary"], indent=2, sort_keys=True))
            print(f"artifacts: {manifest['output_dir']}")
            return 0
        # sweep
        base = parse_config(args.config)
        combos = _sweep_combos(base, args.param)
        if args.jobs > 1:
            with ProcessPoolExecutor(max_workers=args.jobs) as pool:
                manifests = list(pool.map(_run_one, combos))
        else:
            manifests = [run(c) for c in combos]
        for m in manifests:
            print(f"{m['output_dir']}: "
                  f"{json.dumps(m['summary'], sort_keys=True)}")
        return 0
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except (landmark.ConvergenceError, landmark.BlowUpError,
            ConditioningError, curves.DegeneracyError) as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
