"""Deterministic artifact I/O: full-precision CSV tables and binary PGM images."""

from __future__ import annotations

import numpy as np


def write_csv(path, header, columns) -> None:
    """Write columns (sequences of equal length) as CSV with %.17g floats."""
    columns = [np.asarray(c) for c in columns]
    n = columns[0].shape[0]
    with open(path, "w", newline="\n") as f:
        f.write(",".join(header) + "\n")
        for i in range(n):
            f.write(",".join("%.17g" % float(c[i]) for c in columns) + "\n")


def read_csv(path):
    """Read a CSV written by write_csv; returns (header list, 2-D float array)."""
    with open(path) as f:
        header = f.readline().strip().split(",")
        data = np.loadtxt(f, delimiter=",", ndmin=2)
    if data.size and data.shape[1] != len(header):
        raise ValueError(f"{path}: {data.shape[1]} columns, header has {len(header)}")
    return header, data


def write_pgm(path, image) -> None:
    """Write a 2-D array as binary PGM (P5, maxval 255, row-major).

    Values are clipped to [0, 1] then scaled to 0..255.
    """
    img = np.asarray(image, dtype=float)
    if img.ndim != 2:
        raise ValueError("PGM images must be 2-D")
    pix = np.clip(np.rint(np.clip(img, 0.0, 1.0) * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(b"P5\n%d %d\n255\n" % (pix.shape[1], pix.shape[0]))
        f.write(pix.tobytes())


def read_pgm(path):
    """Read a binary PGM (P5) into a float array scaled to [0, 1]."""
    with open(path, "rb") as f:
        raw = f.read()
    if not raw.startswith(b"P5"):
        raise ValueError(f"{path}: not a binary PGM (P5) file")
    # header: magic, width, height, maxval -- comments allowed between tokens
    tokens = []
    i = 2
    while len(tokens) < 3:
        while i < len(raw) and raw[i:i + 1].isspace():
            i += 1
        if raw[i:i + 1] == b"#":
            while i < len(raw) and raw[i:i + 1] != b"\n":
                i += 1
            continue
        j = i
        while j < len(raw) and not raw[j:j + 1].isspace():
            j += 1
        tokens.append(int(raw[i:j]))
        i = j
    i += 1  # single whitespace after maxval
    width, height, maxval = tokens
    pix = np.frombuffer(raw, dtype=np.uint8, count=width * height, offset=i)
    return pix.reshape(height, width).astype(float) / float(maxval)


def write_grid_csv(path, grid) -> None:
    """Write a 2-D grid as CSV rows (row-major, %.17g)."""
    grid = np.asarray(grid, dtype=float)
    with open(path, "w", newline="\n") as f:
        f.write(",".join("c%d" % j for j in range(grid.shape[1])) + "\n")
        for row in grid:
            f.write(",".join("%.17g" % v for v in row) + "\n")


def read_grid_csv(path):
    header, data = read_csv(path)
    return data
