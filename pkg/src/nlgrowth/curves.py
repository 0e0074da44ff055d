"""Factor loadings and exact trajectories for the supported functional forms.

All loading functions are vectorised over leading axes of the time array so
that a whole sample of individual occasions is handled in one call.

Shape values are passed in a mapping.  The keys are

``b``, ``c``, ``gamma``
    the population ratio/knot of the reduced model, or its mean
    (``mu_b``, ``mu_c``, ``mu_gamma``) in the intrinsic model;
``mu_eta1``, ``mu_eta2``
    growth-factor means at which an intrinsic curve is linearised
    (for the bilinear spline ``mu_eta2`` is the mean of the reparameterised
    half-difference of slopes);
``rates``
    relative interval rates ``gamma_2 .. gamma_{J-1}`` of the nonparametric
    change-score form (the first interval's rate is fixed to 1).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .exceptions import MissingShapeParameter, NonMonotoneTimes

KINDS = ("linear", "quadratic", "neg_exponential", "jenss_bayley", "bilinear_spline", "nonparametric")
INTRINSIC_KINDS = ("neg_exponential", "jenss_bayley", "bilinear_spline")
LCSM_KINDS = ("quadratic", "neg_exponential", "jenss_bayley", "nonparametric")
_ALIASES = {
    "negative_exponential": "neg_exponential", "exponential": "neg_exponential", "exp": "neg_exponential",
    "jb": "jenss_bayley", "jenss-bayley": "jenss_bayley", "bilinear": "bilinear_spline",
    "piecewise": "nonparametric", "quad": "quadratic",
}
SHAPE_KEY = {"neg_exponential": "b", "jenss_bayley": "c", "bilinear_spline": "gamma"}
KINK_EPS = 1e-9


@dataclass(frozen=True)
class FunctionalForm:
    kind: str
    intrinsic: bool = False

    def __post_init__(self):
        kind = _ALIASES.get(self.kind, self.kind)
        if kind not in KINDS:
            raise ValueError(f"unknown functional form {self.kind!r}; choose from {KINDS}")
        object.__setattr__(self, "kind", kind)
        if self.intrinsic and kind not in INTRINSIC_KINDS:
            raise ValueError(f"{kind} has no intrinsically nonlinear version")

    @property
    def shape_key(self) -> str | None:
        return SHAPE_KEY.get(self.kind)

    def factor_names(self, reparam_knot: bool = True) -> tuple[str, ...]:
        """Growth-factor labels, the deviation factor last for intrinsic forms."""
        base = {
            "linear": ("eta0", "eta1"),
            "quadratic": ("eta0", "eta1", "eta2"),
            "neg_exponential": ("eta0", "eta1"),
            "jenss_bayley": ("eta0", "eta1", "eta2"),
            "bilinear_spline": ("eta0p", "eta1p", "eta2p") if reparam_knot else ("eta0", "eta1", "eta2"),
            "nonparametric": ("eta0", "eta1"),
        }[self.kind]
        if self.intrinsic:
            base = base + ("d" + self.shape_key,)
        return base

    @property
    def n_factors(self) -> int:
        return len(self.factor_names())


def _need(shape: Mapping, *keys):
    out = []
    for k in keys:
        if k in shape:
            out.append(shape[k])
        elif "mu_" + k in shape:
            out.append(shape["mu_" + k])
        else:
            raise MissingShapeParameter(k)
    return out


def _sign0(x):
    s = np.sign(x)
    return np.where(np.abs(x) < KINK_EPS, 0.0, s)


def lgcm_loadings(form: FunctionalForm, t, shape: Mapping | None = None) -> np.ndarray:
    """Latent growth curve loadings; returns ``t.shape + (K,)``."""
    shape = shape or {}
    t = np.asarray(t, dtype=float)
    one = np.ones_like(t)
    k = form.kind
    if k == "linear":
        cols = [one, t]
    elif k == "quadratic":
        cols = [one, t, t * t]
    elif k == "neg_exponential":
        (b,) = _need(shape, "b")
        e = np.exp(-b * t)
        cols = [one, 1.0 - e]
        if form.intrinsic:
            (m1,) = _need(shape, "mu_eta1")
            cols.append(m1 * e * t)
    elif k == "jenss_bayley":
        (c,) = _need(shape, "c")
        e = np.exp(c * t)
        cols = [one, t, e - 1.0]
        if form.intrinsic:
            (m2,) = _need(shape, "mu_eta2")
            cols.append(m2 * e * t)
    elif k == "bilinear_spline":
        (g,) = _need(shape, "gamma")
        d = t - g
        cols = [one, d, np.abs(d)]
        if form.intrinsic:
            (m2,) = _need(shape, "mu_eta2")
            cols.append(-m2 - m2 * _sign0(d))
    else:
        raise ValueError("nonparametric form is only defined for change-score models")
    return np.stack(cols, axis=-1)


def lgcm_loading_row(form: FunctionalForm, t: float, shape: Mapping | None = None) -> np.ndarray:
    return lgcm_loadings(form, np.asarray(float(t)), shape)


def lcsm_loadings(form: FunctionalForm, times, shape: Mapping | None = None) -> np.ndarray:
    """Latent change score loadings for every wave; returns ``times.shape + (K,)``.

    Row ``j`` accumulates midpoint-slope approximations of the interval
    changes up to wave ``j``; the first row is ``(1, 0, ...)``.
    """
    shape = shape or {}
    if form.kind not in LCSM_KINDS:
        raise ValueError(f"{form.kind} is not available as a change-score model")
    times = np.asarray(times, dtype=float)
    dt = np.diff(times, axis=-1)
    if np.any(dt <= 0):
        raise NonMonotoneTimes("change-score loadings need strictly increasing times")
    mid = 0.5 * (times[..., 1:] + times[..., :-1])
    k = form.kind
    if k == "quadratic":
        incs = [dt, 2.0 * mid * dt]
    elif k == "neg_exponential":
        (b,) = _need(shape, "b")
        e = np.exp(-b * mid)
        incs = [b * e * dt]
        if form.intrinsic:
            (m1,) = _need(shape, "mu_eta1")
            incs.append(m1 * e * (1.0 - b * mid) * dt)
    elif k == "jenss_bayley":
        (c,) = _need(shape, "c")
        e = np.exp(c * mid)
        incs = [dt, c * e * dt]
        if form.intrinsic:
            (m2,) = _need(shape, "mu_eta2")
            incs.append(m2 * e * (1.0 + c * mid) * dt)
    else:
        incs = [full_rates(shape, times.shape[-1] - 1) * dt]
    zero = np.zeros(times.shape[:-1] + (1,))
    cols = [np.ones_like(times)]
    for inc in incs:
        cols.append(np.concatenate([zero, np.cumsum(inc, axis=-1)], axis=-1))
    return np.stack(cols, axis=-1)


def lcsm_loading_row(form: FunctionalForm, times, shape: Mapping | None = None) -> np.ndarray:
    """Loading row of the last wave in ``times``."""
    times = np.asarray(times, dtype=float)
    if times.shape[-1] == 1:
        return np.concatenate([[1.0], np.zeros(form.n_factors - 1)])
    return lcsm_loadings(form, times, shape)[..., -1, :]


def full_rates(shape: Mapping, n_intervals: int) -> np.ndarray:
    """Relative rates of the first ``n_intervals`` intervals, first one fixed to 1.

    Accepts either the free rates ``gamma_2, ...`` or a sequence that
    already starts with the fixed ``gamma_1 = 1``; extra trailing rates are
    ignored so a row for an early wave can reuse the full rate vector.
    """
    rates = np.asarray(_need(shape, "rates")[0], dtype=float).reshape(-1)
    if n_intervals <= 0:
        return np.zeros(0)
    if rates.size >= n_intervals and rates[0] == 1.0 and rates.size == n_intervals:
        full = rates
    else:
        full = np.concatenate([[1.0], rates])
    if full.size < n_intervals:
        raise MissingShapeParameter(f"rates: need {n_intervals - 1} free rates, got {rates.size}")
    return full[:n_intervals]


def mediation_loadings(kind: str, t, gamma: float | None = None) -> np.ndarray:
    """Loadings of the parallel-process mediation models.

    Linear: ``(1, t)``.  Bilinear: ``(min(0, t - gamma), 1, max(0, t - gamma))``
    on factors (first slope, level at the knot, second slope).
    """
    t = np.asarray(t, dtype=float)
    if kind == "linear":
        return np.stack([np.ones_like(t), t], axis=-1)
    if kind in ("bilinear_spline", "bilinear"):
        if gamma is None:
            raise MissingShapeParameter("gamma")
        d = t - gamma
        return np.stack([np.minimum(0.0, d), np.ones_like(t), np.maximum(0.0, d)], axis=-1)
    raise ValueError("mediation models support only linear and bilinear_spline forms")


def true_trajectory(form: FunctionalForm, t, coefs: Mapping, origin: float | None = None):
    """Exact (non-linearised) individual curve.

    ``coefs`` holds the individual's own ``eta0, eta1[, eta2]`` and
    ``b``/``c``/``gamma`` in the original (not reparameterised) form;
    ``rates`` for the nonparametric form.  With ``origin`` the curve is
    shifted so that it equals ``eta0`` at ``origin``; this is how the
    change-score models anchor the initial status at the first occasion.
    """
    t = np.asarray(t, dtype=float)

    def f(s):
        k = form.kind
        e0 = coefs["eta0"]
        if k == "linear":
            return e0 + coefs["eta1"] * s
        if k == "quadratic":
            return e0 + coefs["eta1"] * s + coefs["eta2"] * s * s
        if k == "neg_exponential":
            return e0 + coefs["eta1"] * (1.0 - np.exp(-coefs["b"] * s))
        if k == "jenss_bayley":
            return e0 + coefs["eta1"] * s + coefs["eta2"] * (np.exp(coefs["c"] * s) - 1.0)
        if k == "bilinear_spline":
            g = coefs["gamma"]
            return np.where(s < g, e0 + coefs["eta1"] * s,
                            e0 + coefs["eta1"] * g + coefs["eta2"] * (s - g))
        raise ValueError("nonparametric trajectories need the occasion sequence; use lcsm_loadings")

    if origin is None:
        return f(t)
    return f(t) - f(np.asarray(origin, dtype=float)) + coefs["eta0"]


# -- bilinear spline reparameterisation --------------------------------------

def knot_forward(eta0, eta1, eta2, gamma):
    """(initial status, slope 1, slope 2) -> (level at knot, mean slope, half difference)."""
    return eta0 + gamma * eta1, 0.5 * (eta1 + eta2), 0.5 * (eta2 - eta1)


def knot_inverse(eta0p, eta1p, eta2p, gamma):
    eta1 = eta1p - eta2p
    return eta0p - gamma * eta1, eta1, eta1p + eta2p


def knot_forward_jacobian(gamma: float) -> np.ndarray:
    return np.array([[1.0, gamma, 0.0], [0.0, 0.5, 0.5], [0.0, -0.5, 0.5]])


def knot_inverse_jacobian(gamma: float) -> np.ndarray:
    return np.array([[1.0, -gamma, gamma], [0.0, 1.0, -1.0], [0.0, 1.0, 1.0]])


def knot_reparam_inverse(reparam_mean, reparam_cov, gamma: float):
    """Map reparameterised bilinear growth-factor moments back to the original form.

    A trailing fourth coordinate (the knot deviation factor) passes through
    unchanged.  The covariance is transformed to first order, ``J S J^T``.
    """
    mean = np.asarray(reparam_mean, dtype=float)
    cov = np.asarray(reparam_cov, dtype=float)
    k = mean.shape[0]
    J = np.eye(k)
    J[:3, :3] = knot_inverse_jacobian(gamma)
    out = mean.copy()
    out[:3] = knot_inverse(mean[0], mean[1], mean[2], gamma)
    return out, J @ cov @ J.T
