"""Reference computations that share no code with the package under test."""

from __future__ import annotations

import math
from statistics import NormalDist

import numpy as np


def normal_cdf_trapezoid(z: float, steps: int = 4000) -> float:
    """Phi(z) by trapezoidal integration of the density over [0, |z|]."""
    if z == 0:
        return 0.5
    x = np.linspace(0.0, abs(z), steps + 1)
    area = float(np.trapezoid(np.exp(-x * x / 2), x)) / math.sqrt(2 * math.pi)
    return 0.5 + area if z > 0 else 0.5 - area


def z_by_integration(level: float, tol: float = 1e-7) -> float:
    """Solve Phi(z) - Phi(-z) = level by bisection on the trapezoid CDF."""
    lo, hi = 0.0, 10.0
    while hi - lo > tol:
        mid = (lo + hi) / 2
        if 2 * normal_cdf_trapezoid(mid) - 1 < level:
            lo = mid
        else:
            hi = mid
    return (lo + hi) / 2


def z_exact(level: float) -> float:
    return 0.0 if level == 0 else NormalDist().inv_cdf((1 + level) / 2)


# S_game written out by hand: j -> (controller, [(label, kind, p, successor)])
S_GAME = {
    0: ("right", [("Guess", "exact", 0.75, 1), ("Help", "exact", 0.2, 2), ("Quit", "exact", 0.05, None)]),
    1: ("left", [("Correct", "exact", 0.01, 0), ("Incorrect", "exact", 0.99, 0)]),
    2: ("left", [("Hint", "exact", 1.0, 0)]),
}


def _deviations(kind, p, est, err):
    low, high = p - err, p + err
    out = set()
    if kind in ("exact", "lower") and est < low:
        out.add("low")
    if kind in ("exact", "upper") and est > high:
        out.add("high")
    return out


def reference_events(table, labels, level):
    """Re-derive warning/retraction events for a sequence of accepted labels.

    ``table`` uses the S_GAME layout.  Returns (events, counts, active) where
    events are (kind, j, label, boundary, blamed, total, count) tuples.
    """
    z = z_exact(level)
    pos = 0
    counts = {j: {} for j in table}
    active = set()
    events = []
    for label in labels:
        who, branches = table[pos]
        counts[pos][label] = counts[pos].get(label, 0) + 1
        total = sum(counts[pos].values())
        for lab, kind, p, _ in branches:
            if kind == "unchecked":
                continue
            c = counts[pos].get(lab, 0)
            err = z * math.sqrt(p * (1 - p) / total)
            dev = _deviations(kind, p, c / total, err)
            for bd in ("low", "high"):
                if bd == "low" and kind == "upper" or bd == "high" and kind == "lower":
                    continue
                key = (pos, lab, bd)
                if bd in dev and key not in active:
                    active.add(key)
                    events.append(("warning", pos, lab, bd, who, total, c))
                elif bd not in dev and key in active:
                    active.discard(key)
                    events.append(("retraction", pos, lab, bd, None, total, c))
        pos = next(s for lab, _, _, s in branches if lab == label)
        if pos is None:
            break
    return events, counts, active


def active_from_counts(table, counts, level):
    """Deviated (j, label, boundary) keys judged from final counts alone."""
    z = z_exact(level)
    out = set()
    for j, (_, branches) in table.items():
        total = sum(counts[j].values())
        if not total:
            continue
        for lab, kind, p, _ in branches:
            if kind == "unchecked":
                continue
            err = z * math.sqrt(p * (1 - p) / total)
            for bd in _deviations(kind, p, counts[j].get(lab, 0) / total, err):
                out.add((j, lab, bd))
    return out


def table_as_reference(table):
    """Convert a package ChoicePointTable into the S_GAME layout."""
    out = {}
    for cp in table:
        who = "right" if cp.direction.value == "external" else "left"
        out[cp.index] = (who, [(b.label, b.annotation.kind.value, b.annotation.p, b.successor)
                               for b in cp.branches])
    return out
