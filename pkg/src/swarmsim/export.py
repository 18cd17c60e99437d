"""File artifacts of a mission: PGM map snapshots and CSV logs.

All numbers are written with ``repr`` so repeated runs with one seed produce
byte-identical directories.
"""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .icp import write_landmarks_csv


def write_pgm(path, cells: np.ndarray):
    """Binary (P5) greyscale image; array row 0 is the lowest y, so rows are flipped."""
    img = np.ascontiguousarray(np.asarray(cells, dtype=np.uint8)[::-1])
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def read_pgm(path) -> np.ndarray:
    """Inverse of :func:`write_pgm` (8-bit P5 only)."""
    data = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        end = pos
        while not data[end:end + 1].isspace():
            end += 1
        tokens.append(data[pos:end])
        pos = end
    magic, w, h, maxval = tokens[0], int(tokens[1]), int(tokens[2]), int(tokens[3])
    if magic != b"P5" or maxval > 255:
        raise ValueError(f"{path}: not an 8-bit P5 image")
    pixels = np.frombuffer(data, dtype=np.uint8, count=w * h, offset=pos + 1)
    return pixels.reshape(h, w)[::-1].copy()


def _write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])


def write_trajectory_csv(path, rows):
    _write_rows(path, ("time_s", "x", "y", "theta", "est_x", "est_y", "est_theta"),
                ([float(v) for v in r] for r in rows))


def write_coverage_csv(path, rows):
    _write_rows(path, ("time_s", "agent_id", "coverage_pct"),
                ((float(t), int(i), float(c)) for t, i, c in rows))


def export_mission(log, out_dir, config_text: str) -> Path:
    """Write the full mission directory and return its path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.snapshot").write_text(config_text)
    for i in log.agent_ids:
        write_trajectory_csv(out / f"trajectory_{i}.csv", log.trajectories[i])
        write_landmarks_csv(out / f"landmarks_{i}.csv", log.landmarks[i])
        _write_rows(out / f"targets_{i}.csv", ("time_s", "x", "y"), log.targets[i])
    write_coverage_csv(out / "coverage.csv", log.coverage)
    for step, i, slam_cells, cov_cells in log.snapshots:
        write_pgm(out / f"slam_{i}_{step}.pgm", slam_cells)
        write_pgm(out / f"cov_{i}_{step}.pgm", cov_cells)
    _write_rows(out / "transforms.csv", ("source", "target", "theta", "tx", "ty", "residual"),
                ((s, t, T.theta, T.t[0], T.t[1], float(log.edge_residuals.get((s, t), float("nan"))))
                 for (s, t), T in sorted(log.edges.items())))
    _write_rows(out / "events.csv", ("time_s", "kind", "source", "target", "detail"),
                ((float(t), kind, e[0], e[1], detail) for t, kind, e, detail in log.events))
    return out
