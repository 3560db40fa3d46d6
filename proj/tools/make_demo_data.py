#!/usr/bin/env python3
"""Regenerate the bundled synthetic dataset under data/.

Five classes (A..E), six predictors: four functional curves sampled on a
common 15-point grid over [0, 1] (with some deliberately missing points) and
two scalar pairs observed at t = 0 and t = 1.

Planted structure:
  g1  separates all classes (class-graded sine amplitude)
  g2  shifts class A only, so it matters only for boundaries involving A
  g3, g4  pure noise curves
  x1  separates class B (shift on both coordinates)
  x2  noise pair

Samples s003 and s014 lose five g1 points each; with `filters.max_missing: 3`
in data/demo_config.json they land in the ingestion log instead of the fit.
"""

import csv
import pathlib

import numpy as np

OUT = pathlib.Path(__file__).resolve().parent.parent / "data"
N_PER_CLASS = 20
CLASSES = ["A", "B", "C", "D", "E"]
GRID = np.linspace(0.0, 1.0, 15)
AMPLITUDE = {"A": 1.5, "B": 0.75, "C": 0.0, "D": -0.75, "E": -1.5}


def curve_mean(pred: str, cls: str, t: np.ndarray) -> np.ndarray:
    if pred == "g1":
        return AMPLITUDE[cls] * np.sin(2.0 * np.pi * t)
    if pred == "g2":
        bump = 1.2 * np.exp(-(((t - 0.3) / 0.15) ** 2))
        return bump if cls == "A" else np.zeros_like(t)
    return np.zeros_like(t)


def main() -> None:
    rng = np.random.default_rng(12345)
    OUT.mkdir(exist_ok=True)

    samples = [f"s{i + 1:03d}" for i in range(N_PER_CLASS * len(CLASSES))]
    labels = [CLASSES[i % len(CLASSES)] for i in range(len(samples))]

    rows = []
    for sid, cls in zip(samples, labels):
        for pred in ["g1", "g2", "g3", "g4"]:
            wiggle = rng.normal(0.0, 0.3, size=2)
            values = (
                curve_mean(pred, cls, GRID)
                + wiggle[0] * np.sin(np.pi * GRID)
                + wiggle[1] * np.cos(np.pi * GRID)
                + rng.normal(0.0, 0.25, size=GRID.size)
            )
            keep = np.ones(GRID.size, dtype=bool)
            if pred == "g1" and sid in ("s003", "s014"):
                keep[rng.choice(GRID.size, size=5, replace=False)] = False
            elif pred != "g1" and rng.random() < 0.10:
                keep[rng.choice(GRID.size, size=rng.integers(1, 3), replace=False)] = False
            for t, v in zip(GRID[keep], values[keep]):
                rows.append((sid, pred, f"{t:.6f}", f"{v:.6f}"))
        for pred, shift_cls in [("x1", "B"), ("x2", None)]:
            shift = 1.5 if cls == shift_cls else 0.0
            for t in (0.0, 1.0):
                v = shift + rng.normal(0.0, 1.0)
                rows.append((sid, pred, f"{t:.6f}", f"{v:.6f}"))

    order = rng.permutation(len(rows))  # ingestion is order-insensitive
    with open(OUT / "demo_curves.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["sample_id", "predictor", "time", "value"])
        for k in order:
            w.writerow(rows[k])

    with open(OUT / "demo_labels.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["sample_id", "class"])
        for sid, cls in zip(samples, labels):
            w.writerow([sid, cls])


if __name__ == "__main__":
    main()
