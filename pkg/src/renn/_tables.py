"""Dense table helpers over sorted variable scopes."""
from __future__ import annotations

import numpy as np


def expand(table, sub_scope, scope):
    """Reshape ``table`` (axes in ``sub_scope`` order) to broadcast over ``scope``.

    Both scopes must be sorted and ``sub_scope`` a subset of ``scope``.
    """
    pos = {v: k for k, v in enumerate(sub_scope)}
    shape = [table.shape[pos[v]] if v in pos else 1 for v in scope]
    return np.reshape(table, shape)


def marginalize(table, scope, target):
    """Sum out every axis of ``table`` whose variable is not in ``target``."""
    keep = set(target)
    axes = tuple(k for k, v in enumerate(scope) if v not in keep)
    return table.sum(axis=axes) if axes else table


def log_marginalize(log_table, scope, target):
    keep = set(target)
    axes = tuple(k for k, v in enumerate(scope) if v not in keep)
    if not axes:
        return log_table
    m = log_table.max(axis=axes, keepdims=True)
    out = np.log(np.exp(log_table - m).sum(axis=axes, keepdims=True)) + m
    return out.squeeze(axis=axes)


def marginal_matrix(scope, target, cards):
    """0/1 matrix mapping a flattened table over ``scope`` to one over ``target``."""
    shape = tuple(cards[v] for v in scope)
    size = int(np.prod(shape)) if shape else 1
    idx = np.indices(shape).reshape(len(shape), -1) if shape else np.zeros((0, 1), dtype=int)
    tpos = [scope.index(v) for v in target]
    tshape = tuple(cards[v] for v in target)
    rows = np.ravel_multi_index([idx[k] for k in tpos], tshape) if target else np.zeros(size, dtype=int)
    return rows, size, int(np.prod(tshape)) if tshape else 1


def xlogx(p):
    p = np.asarray(p, dtype=np.float64)
    out = np.zeros_like(p)
    pos = p > 0
    out[pos] = p[pos] * np.log(p[pos])
    return out


def normalize(table):
    s = table.sum()
    return table / s
