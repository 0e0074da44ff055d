"""Quasi-Newton minimisation with finite-difference derivatives.

A plain BFGS on the inverse Hessian with Armijo backtracking.  Objective
failures (exceptions or non-finite values) are treated as ``+inf`` so the
line search simply halves the step.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .exceptions import NLGrowthError

CONVERGED, ITERATION_LIMIT, NON_PD_INFORMATION, EVALUATION_FAILED = 0, 1, 2, 3
STATUS_TEXT = {
    CONVERGED: "converged",
    ITERATION_LIMIT: "iteration limit reached",
    NON_PD_INFORMATION: "information matrix not positive definite",
    EVALUATION_FAILED: "objective evaluation failures exhausted",
}
MAX_HALVINGS = 30


def safe_eval(f: Callable[[np.ndarray], float]) -> Callable[[np.ndarray], float]:
    def g(x):
        try:
            v = float(f(x))
        except (NLGrowthError, np.linalg.LinAlgError, FloatingPointError, OverflowError, ValueError):
            return np.inf
        return v if np.isfinite(v) else np.inf
    return g


def fd_steps(x: np.ndarray, rel: float = 1e-6, floor: float = 1e-6) -> np.ndarray:
    return np.maximum(floor, rel * np.abs(x))


def central_gradient(f, x, h=None, f0=None):
    """Central-difference gradient; a one-sided difference is used where one side fails."""
    x = np.asarray(x, dtype=float)
    h = fd_steps(x) if h is None else h
    g = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h[i]
        fp, fm = f(x + e), f(x - e)
        if np.isfinite(fp) and np.isfinite(fm):
            g[i] = (fp - fm) / (2.0 * h[i])
        else:
            if f0 is None:
                f0 = f(x)
            if np.isfinite(fp):
                g[i] = (fp - f0) / h[i]
            elif np.isfinite(fm):
                g[i] = (f0 - fm) / h[i]
            else:
                g[i] = np.nan
    return g


def forward_gradient(f, x, h=None):
    x = np.asarray(x, dtype=float)
    h = fd_steps(x) if h is None else h
    f0 = f(x)
    g = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h[i]
        g[i] = (f(x + e) - f0) / h[i]
    return g


def central_hessian(f, x, rel: float = 1e-4):
    """Central-difference Hessian with steps ``rel * max(1, |x|)``."""
    x = np.asarray(x, dtype=float)
    n = x.size
    h = rel * np.maximum(1.0, np.abs(x))
    f0 = f(x)
    H = np.empty((n, n))
    fp = np.empty(n)
    fm = np.empty(n)
    for i in range(n):
        e = np.zeros(n)
        e[i] = h[i]
        fp[i], fm[i] = f(x + e), f(x - e)
        H[i, i] = (fp[i] - 2.0 * f0 + fm[i]) / h[i] ** 2
    for i in range(n):
        for j in range(i):
            ei = np.zeros(n)
            ej = np.zeros(n)
            ei[i], ej[j] = h[i], h[j]
            v = (f(x + ei + ej) - f(x + ei - ej) - f(x - ei + ej) + f(x - ei - ej)) / (4.0 * h[i] * h[j])
            H[i, j] = H[j, i] = v
    return H


@dataclass(frozen=True)
class OptimResult:
    x: np.ndarray
    fun: float
    status: int
    iterations: int
    grad: np.ndarray
    start_fun: float

    @property
    def grad_norm(self) -> float:
        return float(np.max(np.abs(self.grad))) if self.grad.size else 0.0


def _initial_inverse_hessian(f, x, f0):
    n = x.size
    h = 1e-4 * np.maximum(1.0, np.abs(x))
    d = np.ones(n)
    for i in range(n):
        e = np.zeros(n)
        e[i] = h[i]
        c = (f(x + e) - 2.0 * f0 + f(x - e)) / h[i] ** 2
        d[i] = 1.0 / c if np.isfinite(c) and c > 1e-8 else 1.0
    return np.diag(d)


def bfgs(fun: Callable[[np.ndarray], float], x0, gtol: float = 1e-4, max_iterations: int = 500,
         max_step: float = 5.0) -> OptimResult:
    """Minimise ``fun`` from ``x0``.

    Converged when the central-difference gradient's infinity norm is below
    ``gtol``.  ``max_step`` caps the largest coordinate change of a trial step.
    """
    f = safe_eval(fun)
    x = np.asarray(x0, dtype=float).copy()
    fx = f(x)
    start = fx
    if not np.isfinite(fx):
        return OptimResult(x, fx, EVALUATION_FAILED, 0, np.full(x.size, np.nan), start)
    if x.size == 0:
        return OptimResult(x, fx, CONVERGED, 0, x.copy(), start)
    g = central_gradient(f, x, f0=fx)
    H0 = _initial_inverse_hessian(f, x, fx)
    H = H0.copy()
    for it in range(max_iterations):
        if not np.all(np.isfinite(g)):
            return OptimResult(x, fx, EVALUATION_FAILED, it, g, start)
        if np.max(np.abs(g)) < gtol:
            return OptimResult(x, fx, CONVERGED, it, g, start)
        accepted = False
        for reset in (False, True):
            if reset:
                H = H0.copy()
            d = -H @ g
            slope = float(g @ d)
            if slope >= 0:
                H = H0.copy()
                d = -H @ g
                slope = float(g @ d)
            step = min(1.0, max_step / max(np.max(np.abs(d)), 1e-300))
            for _ in range(MAX_HALVINGS + 1):
                xn = x + step * d
                fn = f(xn)
                if np.isfinite(fn) and fn <= fx + 1e-4 * step * slope:
                    accepted = True
                    break
                step *= 0.5
            if accepted:
                break
        if not accepted:
            return OptimResult(x, fx, EVALUATION_FAILED, it, g, start)
        gn = central_gradient(f, xn, f0=fn)
        s, y = xn - x, gn - g
        sy = float(s @ y)
        if sy > 1e-12 * max(1.0, float(np.linalg.norm(s) * np.linalg.norm(y))):
            rho = 1.0 / sy
            I = np.eye(x.size)
            V = I - rho * np.outer(s, y)
            H = V @ H @ V.T + rho * np.outer(s, s)
        x, fx, g = xn, fn, gn
    status = CONVERGED if np.max(np.abs(g)) < gtol else ITERATION_LIMIT
    return OptimResult(x, fx, status, max_iterations, g, start)
