"""Optimal frame-to-frame matching by exhaustive search (N <= 6)."""

from __future__ import annotations

from itertools import permutations

import numpy as np


def closest_match(a: np.ndarray, b: np.ndarray,
                  gate_px: float | None = None) -> list[int | None]:
    """Assignment of b-entries to a-entries minimizing total squared
    (x, y, depth) distance.

    Returns, per a-entry, the matched b index or None. All min(|a|, |b|)
    pairs are matched in the unconstrained optimum; with `gate_px` set,
    matched pairs farther than the gate in the image plane are dropped.
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    na, nb = len(a), len(b)
    if na == 0:
        return []
    if nb == 0:
        return [None] * na
    cost = ((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=2)   # (na, nb)

    best_cost = np.inf
    best: tuple = ()
    if nb >= na:
        for perm in permutations(range(nb), na):
            c = cost[np.arange(na), perm].sum()
            if c < best_cost:
                best_cost = c
                best = perm
        assign: list[int | None] = list(best)
    else:
        for perm in permutations(range(na), nb):
            c = cost[list(perm), np.arange(nb)].sum()
            if c < best_cost:
                best_cost = c
                best = perm
        assign = [None] * na
        for bj, ai in enumerate(best):
            assign[ai] = bj

    if gate_px is not None:
        for i, j in enumerate(assign):
            if j is None:
                continue
            dx = a[i, 0] - b[j, 0]
            dy = a[i, 1] - b[j, 1]
            if dx * dx + dy * dy > gate_px * gate_px:
                assign[i] = None
    return assign


def match_cost(a: np.ndarray, b: np.ndarray, assign: list[int | None]) -> float:
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    total = 0.0
    for i, j in enumerate(assign):
        if j is not None:
            total += float(((a[i] - b[j]) ** 2).sum())
    return total
