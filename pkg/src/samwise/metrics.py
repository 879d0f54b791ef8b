"""Region similarity J, boundary F-measure F, and their mean."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np


def region_j(y, g) -> float:
    y, g = np.asarray(y, bool), np.asarray(g, bool)
    if y.shape != g.shape:
        raise ValueError("masks must share a shape")
    union = np.logical_or(y, g).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(y, g).sum() / union)


def boundary(mask) -> np.ndarray:
    """Mask pixels with a 4-neighbour outside the mask; the image border counts as outside."""
    m = np.asarray(mask, bool)
    padded = np.pad(m, 1, constant_values=False)
    interior = (padded[:-2, 1:-1] & padded[2:, 1:-1] & padded[1:-1, :-2] & padded[1:-1, 2:])
    return m & ~interior


def _dilate(m: np.ndarray, tol: int) -> np.ndarray:
    """Chebyshev-ball dilation of radius tol."""
    if tol <= 0:
        return m.copy()
    h, w = m.shape
    padded = np.pad(m, tol, constant_values=False)
    out = np.zeros_like(m)
    for dy in range(2 * tol + 1):
        for dx in range(2 * tol + 1):
            out |= padded[dy:dy + h, dx:dx + w]
    return out


def contour_f(y, g, tol: int = 1) -> float:
    y, g = np.asarray(y, bool), np.asarray(g, bool)
    if y.shape != g.shape:
        raise ValueError("masks must share a shape")
    if tol < 0:
        raise ValueError("tolerance must be nonnegative")
    by, bg = boundary(y), boundary(g)
    ny, ng = by.sum(), bg.sum()
    if ny == 0 and ng == 0:
        return 1.0
    if ny == 0 or ng == 0:
        return 0.0
    precision = (by & _dilate(bg, tol)).sum() / ny
    recall = (bg & _dilate(by, tol)).sum() / ng
    if precision + recall == 0:
        return 0.0
    return float(2 * precision * recall / (precision + recall))


@dataclass
class JFSummary:
    j: float
    f: float
    jf: float
    frames: int

    def as_tuple(self):
        return self.j, self.f, self.jf


def jf_mean(j_values, f_values) -> JFSummary:
    j_values, f_values = list(j_values), list(f_values)
    if not j_values or len(j_values) != len(f_values):
        raise ValueError("need a nonempty, aligned set of per-frame scores")
    j, f = float(np.mean(j_values)), float(np.mean(f_values))
    return JFSummary(j, f, (j + f) / 2, len(j_values))


def score_video(pred_masks, gt_masks, tol: int = 1) -> tuple[list[float], list[float]]:
    js = [region_j(p, g) for p, g in zip(pred_masks, gt_masks)]
    fs = [contour_f(p, g, tol) for p, g in zip(pred_masks, gt_masks)]
    return js, fs


def write_report(path, rows: list[dict], aggregate: JFSummary) -> Path:
    """rows: dicts with video, j, f; one CSV line each plus an aggregate line."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["video", "J", "F", "JF"])
        for r in rows:
            w.writerow([r["video"], f"{r['j']:.6f}", f"{r['f']:.6f}", f"{(r['j'] + r['f']) / 2:.6f}"])
        w.writerow(["ALL", f"{aggregate.j:.6f}", f"{aggregate.f:.6f}", f"{aggregate.jf:.6f}"])
    return path
