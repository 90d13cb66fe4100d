"""Render figures from metamorph CLI artifact directories.

Consumes the documented artifact formats only:

- ``separation.csv`` — columns ``time,r`` (peakon experiments);
- ``manifest.json`` — run metadata; ``parameters.sigma2`` groups sweep
  panels;
- ``snap_NNN.pgm`` — binary (P5) grayscale snapshots (grid experiments);
- ``path.csv`` with columns ``time,theta,alpha,px,py`` — curve evolution.
"""

from __future__ import annotations

import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


class SchemaError(RuntimeError):
    """Input artifacts are missing or do not match the documented schema."""


def _read_csv(path: Path) -> tuple[list[str], np.ndarray]:
    try:
        with open(path, "r") as f:
            header = f.readline().strip().split(",")
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    except (OSError, ValueError) as exc:
        raise SchemaError(f"{path}: malformed CSV ({exc})") from exc
    if data.shape[1] != len(header):
        raise SchemaError(f"{path}: {len(header)} header fields but "
                          f"{data.shape[1]} columns")
    return header, data


def _read_pgm(path: Path) -> np.ndarray:
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise SchemaError(f"{path}: cannot read ({exc})") from exc
    if not raw.startswith(b"P5"):
        raise SchemaError(f"{path}: not a binary (P5) PGM file")
    fields: list[int] = []
    pos = 2
    while len(fields) < 3:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            while pos < len(raw) and raw[pos] != ord("\n"):
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        try:
            fields.append(int(raw[start:pos]))
        except ValueError as exc:
            raise SchemaError(f"{path}: bad PGM header") from exc
    pos += 1  # single whitespace after maxval
    width, height, maxval = fields
    pixels = np.frombuffer(raw, dtype=np.uint8, count=width * height,
                           offset=pos)
    if pixels.size != width * height:
        raise SchemaError(f"{path}: truncated pixel data")
    return pixels.reshape(height, width).astype(float) / maxval


def _read_manifest(run_dir: Path) -> dict:
    path = run_dir / "manifest.json"
    if not path.exists():
        return {}
    try:
        with open(path, "r") as f:
            return json.load(f)
    except (OSError, json.JSONDecodeError) as exc:
        raise SchemaError(f"{path}: malformed manifest ({exc})") from exc


def _separation_runs(directory: Path) -> list[tuple[Path, dict]]:
    """Run directories containing separation.csv (the dir itself or its
    immediate subdirectories, as produced by ``sweep``)."""
    if (directory / "separation.csv").exists():
        return [(directory, _read_manifest(directory))]
    runs = []
    for sub in sorted(p for p in directory.iterdir() if p.is_dir()):
        if (sub / "separation.csv").exists():
            runs.append((sub, _read_manifest(sub)))
    return runs


def plot_separation(directory, output=None):
    """Overlay separation r(t) curves, one panel per sigma2 value.

    ``directory`` is a single peakon run or a sweep directory of runs.
    Returns the output image path (default ``separation.png`` inside
    ``directory``).
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise SchemaError(f"{directory}: not a directory")
    runs = _separation_runs(directory)
    if not runs:
        raise SchemaError(f"{directory}: no separation.csv artifacts found")

    panels: dict[float, list[tuple[str, np.ndarray, np.ndarray]]] = {}
    for run_dir, manifest in runs:
        header, data = _read_csv(run_dir / "separation.csv")
        if header[:2] != ["time", "r"]:
            raise SchemaError(f"{run_dir / 'separation.csv'}: expected "
                              f"columns time,r, got {header}")
        params = manifest.get("parameters", {})
        sigma2 = float(params.get("sigma2", 0.0))
        label_items = {k: v for k, v in params.items()
                       if k not in ("sigma2", "output_dir", "seed")
                       and isinstance(v, (int, float))}
        label = run_dir.name if len(runs) > 1 else "r(t)"
        if "p_gap" in label_items:
            label = f"p_gap={label_items['p_gap']:g}"
        panels.setdefault(sigma2, []).append((label, data[:, 0], data[:, 1]))

    sigmas = sorted(panels)
    fig, axes = plt.subplots(1, len(sigmas),
                             figsize=(4.0 * len(sigmas), 3.2),
                             squeeze=False, sharey=True)
    for ax, s2 in zip(axes[0], sigmas):
        for label, t, r in panels[s2]:
            ax.plot(t, r, label=label)
        ax.axhline(0.0, color="0.7", lw=0.8, zorder=0)
        ax.set_title(rf"$\sigma^2 = {s2:g}$")
        ax.set_xlabel("t")
        if len(panels[s2]) > 1:
            ax.legend(fontsize=8)
    axes[0][0].set_ylabel("separation r(t)")
    fig.tight_layout()
    out = Path(output) if output else directory / "separation.png"
    fig.savefig(out, dpi=150)
    plt.close(fig)
    return out


_CURVE_COLUMNS = ["time", "theta", "alpha", "px", "py"]


def plot_snapshots(directory, stride=1, output=None):
    """Render a snapshot strip: grayscale tiles for grid runs
    (``snap_NNN.pgm``), curve outlines for curve runs (``path.csv``).

    ``stride`` keeps every stride-th frame; a stride larger than the
    frame count falls back to showing all frames. Returns the output
    image path (default ``snapshots.png`` inside ``directory``).
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise SchemaError(f"{directory}: not a directory")
    if stride < 1:
        raise SchemaError(f"stride must be >= 1, got {stride}")

    pgms = sorted(directory.glob("snap_*.pgm"))
    if pgms:
        frames = [(p.stem.split("_")[-1], _read_pgm(p)) for p in pgms]
        if stride < len(frames):
            frames = frames[::stride]
        fig, axes = plt.subplots(1, len(frames),
                                 figsize=(2.2 * len(frames), 2.4),
                                 squeeze=False)
        for ax, (tag, img) in zip(axes[0], frames):
            ax.imshow(img, cmap="gray", vmin=0.0, vmax=1.0)
            ax.set_title(f"t = {tag}", fontsize=9)
            ax.set_xticks([])
            ax.set_yticks([])
    elif (directory / "path.csv").exists():
        header, data = _read_csv(directory / "path.csv")
        if header != _CURVE_COLUMNS:
            raise SchemaError(f"{directory / 'path.csv'}: expected columns "
                              f"{','.join(_CURVE_COLUMNS)}, got {header}")
        times = np.unique(data[:, 0])
        if stride < times.size:
            times = times[::stride]
        fig, axes = plt.subplots(1, times.size,
                                 figsize=(2.2 * times.size, 2.4),
                                 squeeze=False)
        for ax, t in zip(axes[0], times):
            rows = data[data[:, 0] == t]
            px = np.append(rows[:, 3], rows[0, 3])
            py = np.append(rows[:, 4], rows[0, 4])
            ax.plot(px, py, "-")
            ax.set_title(f"t = {t:g}", fontsize=9)
            ax.set_aspect("equal")
            ax.set_xticks([])
            ax.set_yticks([])
    else:
        raise SchemaError(f"{directory}: no snapshot artifacts "
                          "(snap_*.pgm or curve path.csv) found")

    fig.tight_layout()
    out = Path(output) if output else directory / "snapshots.png"
    fig.savefig(out, dpi=150)
    plt.close(fig)
    return out
