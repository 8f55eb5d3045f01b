"""Euclidean projection onto the simplex and a projected-gradient minimizer.

Used as an oracle for closed-form minimizers; it knows nothing about them.
"""
from __future__ import annotations

import numpy as np


def project_simplex(v, z=1.0):
    """argmin_{x >= 0, sum x = z} ||x - v||^2 via the sort-based algorithm."""
    v = np.asarray(v, dtype=np.float64)
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - z
    ind = np.arange(1, v.size + 1)
    rho = np.count_nonzero(u - css / ind > 0)
    theta = css[rho - 1] / rho
    return np.maximum(v - theta, 0.0)


def project_floored_simplex(v, floor):
    """Projection onto {x >= floor, sum x = 1}."""
    v = np.asarray(v, dtype=np.float64)
    return floor + project_simplex(v - floor, 1.0 - floor * v.size)


def projected_gradient(fun, grad, x0, floor=1e-12, step=1.0, max_iter=20_000, tol=1e-12):
    """Minimize a smooth convex ``fun`` over the (floored) simplex.

    Armijo backtracking along the projection arc; stops when an iteration moves
    less than ``tol`` in the infinity norm.
    """
    x = project_floored_simplex(x0, floor)
    fx = fun(x)
    for _ in range(max_iter):
        g = grad(x)
        t = step
        while True:
            cand = project_floored_simplex(x - t * g, floor)
            fc = fun(cand)
            if fc <= fx + g @ (cand - x) + np.sum((cand - x) ** 2) / (2 * t) or t < 1e-20:
                break
            t *= 0.5
        moved = np.max(np.abs(cand - x))
        x, fx = cand, fc
        if moved < tol:
            break
        step = min(1.0, 2 * t)
    return x
