"""Pure numpy/Python versions of the compiled kernels.

Same signatures and the same uniform-consumption order as ``_ckernels``,
so both backends return identical arrays for identical inputs.
"""
import math

import numpy as np

EULER_GAMMA = 0.5772156649015329


def _avg_path(size):
    if size <= 1:
        return 0.0
    if size == 2:
        return 1.0
    size = float(size)
    return 2.0 * (math.log(size - 1.0) + EULER_GAMMA) - 2.0 * (size - 1.0) / size


def krr_perturb(values, uniforms, p, q, d):
    keep = uniforms < p
    # kept rows produce negative offsets here; they are discarded by the where
    other = ((uniforms - p) / q).astype(np.int64)
    np.minimum(other, d - 2, out=other)
    other += other >= values
    return np.where(keep, values, other)


def oue_perturb(values, uniforms, p, q):
    n, d = uniforms.shape
    thresholds = np.full((n, d), q)
    thresholds[np.arange(n), values] = p
    return (uniforms < thresholds).astype(np.uint8)


def _build(X, idx, depth, height_limit, u, cursor):
    """Preorder build; returns (tree, cursor). Leaves are ('leaf', size)."""
    if len(idx) <= 1 or depth >= height_limit:
        return ("leaf", len(idx)), cursor
    sub = X[idx]
    mins = sub.min(axis=0)
    maxs = sub.max(axis=0)
    nonconst = np.flatnonzero(maxs > mins)
    if len(nonconst) == 0:
        return ("leaf", len(idx)), cursor
    u1, u2 = u[cursor], u[cursor + 1]
    cursor += 2
    chosen = min(int(u1 * len(nonconst)), len(nonconst) - 1)
    a = int(nonconst[chosen])
    split = mins[a] + u2 * (maxs[a] - mins[a])
    go_left = sub[:, a] < split
    left, cursor = _build(X, idx[go_left], depth + 1, height_limit, u, cursor)
    right, cursor = _build(X, idx[~go_left], depth + 1, height_limit, u, cursor)
    return ("node", a, split, left, right), cursor


def _path(x, tree):
    depth = 0
    while tree[0] == "node":
        _, a, split, left, right = tree
        tree = left if x[a] < split else right
        depth += 1
    return depth + _avg_path(tree[1])


def iforest_path_lengths(X, samples, uniforms, height_limit):
    total = np.zeros(X.shape[0])
    for tr in range(samples.shape[0]):
        tree, _ = _build(X, samples[tr], 0, height_limit, uniforms[tr], 0)
        for i in range(X.shape[0]):
            total[i] += _path(X[i], tree)
    return total / samples.shape[0]
