"""Synthetic wide-format data from the exact generative curves.

Growth factors (and, for intrinsic forms, the individual shape deviations)
are drawn jointly normal; trajectories are evaluated without linearisation;
individual occasions are jittered around the wave times; cells go missing
completely at random per wave.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import curves
from .curves import FunctionalForm
from .dataset import LongitudinalDataset
from .exceptions import NonPDTrueCovariance
from .model_builder import CompiledModel, ModelSpec, ProcessSpec, class_log_probabilities, class_spec, state_weights
from .params import ParameterSet

MAX_REDRAWS = 100


@dataclass(frozen=True)
class SimConfig:
    """Simulation settings.

    ``true_params`` uses the parameter names of the model (see
    :func:`nlgrowth.model_builder.parameter_template`).  ``missing_rate``
    is a scalar or one rate per wave.  ``tvc0_process`` gives the linear
    process that generates an observed covariate for TVC type 0:
    ``(mean0, mean1, var0, var1, residual variance)``.
    """

    spec: ModelSpec
    true_params: ParameterSet | Mapping[str, float]
    n: int
    wave_times: Sequence[float]
    jitter_window: float = 0.0
    missing_rate: float | Sequence[float] = 0.0
    seed: int = 0
    tvc0_process: tuple[float, float, float, float, float] = (10.0, 1.0, 4.0, 0.25, 1.0)
    class_tic_sd: float = 1.0
    id_prefix: str = ""

    def __post_init__(self):
        w = np.asarray(self.wave_times, dtype=float)
        if w.ndim != 1 or w.size < 2 or np.any(np.diff(w) <= 2 * self.jitter_window):
            raise ValueError("wave times must increase with gaps larger than twice the jitter window")
        if self.jitter_window < 0:
            raise ValueError("jitter_window must be nonnegative")
        rates = np.atleast_1d(np.asarray(self.missing_rate, dtype=float))
        if np.any((rates < 0) | (rates >= 1)):
            raise ValueError("missing rates must lie in [0, 1)")
        if self.n < 1:
            raise ValueError("n must be positive")


@dataclass(frozen=True)
class SimInfo:
    truncation_rate: float
    latent: np.ndarray  # (N, K) drawn latent vectors
    latent_names: tuple[str, ...]
    classes: np.ndarray | None = None  # 1-based true class labels
    missing: np.ndarray | None = None  # (N, J) wave-level missingness indicator


def _values(params) -> dict:
    return params.values() if isinstance(params, ParameterSet) else dict(params)


def simulate(cfg: SimConfig) -> LongitudinalDataset:
    return simulate_with_info(cfg)[0]


def simulate_with_info(cfg: SimConfig):
    rng = np.random.default_rng(cfg.seed)
    spec = cfg.spec
    sub = class_spec(spec)
    n = cfg.n
    wave = np.asarray(cfg.wave_times, dtype=float)
    n_rec = max(max(p.records) for p in sub.processes)
    if n_rec > wave.size:
        raise ValueError(f"records up to {n_rec} but only {wave.size} wave times")

    # occasions: one time draw per (individual, record, time variable)
    t_vars = sorted({p.t_var for p in sub.processes})
    times = {tv: wave[None, :n_rec] + rng.uniform(-cfg.jitter_window, cfg.jitter_window, (n, n_rec))
             if cfg.jitter_window > 0 else np.repeat(wave[None, :n_rec], n, axis=0) for tv in t_vars}

    cols: dict[str, np.ndarray] = {}
    for tv in t_vars:
        for k in range(1, n_rec + 1):
            cols[f"{tv}{k}"] = times[tv][:, k - 1].copy()
    v = _values(cfg.true_params)

    classes = None
    if spec.family == "mixture":
        G = spec.mixture.G
        X = rng.normal(0.0, cfg.class_tic_sd, (n, len(spec.mixture.class_tics))) if spec.mixture.class_tics else None
        logp = class_log_probabilities(v, X, G, spec.mixture.class_tics)
        logp = np.broadcast_to(logp, (n, G))
        u = rng.random(n)
        classes = 1 + np.sum(u[:, None] > np.cumsum(np.exp(logp), axis=1)[:, :-1], axis=1)
        for q, x in enumerate(spec.mixture.class_tics):
            cols[x] = X[:, q]
        prefixes = [f"c{g}." for g in range(1, G + 1)]
    else:
        prefixes = [""]

    dummy = {**cols}
    for p in sub.processes:
        for c in p.value_columns:
            dummy.setdefault(c, np.zeros(n))
    for x in sub.tics:
        dummy.setdefault(x, np.zeros(n))
    if sub.tvc is not None and sub.tvc.type == 0:
        for k in sub.processes[0].records:
            dummy.setdefault(f"{sub.tvc.variable}{k}", np.zeros(n))
    cm = CompiledModel(sub, lambda c: dummy[c], n)

    values = {c: np.full(n, np.nan) for p in sub.processes for c in p.value_columns}
    latent = np.zeros((n, cm.K))
    redraws = 0
    for gi, prefix in enumerate(prefixes):
        who = np.arange(n) if classes is None else np.flatnonzero(classes == gi + 1)
        if who.size == 0:
            continue
        alpha, B, Phi = cm.latent_matrices(v, prefix)
        inv = np.linalg.inv(np.eye(cm.K) - B)
        m, C = inv @ alpha, inv @ Phi @ inv.T
        lat, r = _draw_admissible(rng, m, C, who.size, sub, cm, v, prefix, wave)
        redraws += r
        latent[who] = lat
        theta = cm.residual_matrix(v, prefix)
        for p in sub.processes:
            y = _process_values(p, cm, lat, who, v, prefix, sub)
            rows = cm.rows[p.name]
            values_p = y
            if sub.tvc is not None and p.name == sub.processes[0].name:
                values_p = values_p + _tvc_effect(sub, cm, lat, who, v, prefix, rng, cols, n, cfg.tvc0_process)
            for j, c in enumerate(p.value_columns):
                values[c][who] = values_p[:, j]
        eps = _draw_residuals(rng, theta[: cm.tic_rows.start, : cm.tic_rows.start], who.size)
        for p in sub.processes:
            rows = cm.rows[p.name]
            for j, c in enumerate(p.value_columns):
                values[c][who] += eps[:, rows.start + j]
    for q, x in enumerate(sub.tics):
        cols[x] = latent[:, cm.K - len(sub.tics) + q]
    cols.update(values)

    # wave-level missingness completely at random
    rate = np.broadcast_to(np.atleast_1d(np.asarray(cfg.missing_rate, dtype=float)), (n_rec,))
    miss = rng.random((n, n_rec)) < rate[None, :]
    for c in list(cols):
        k = _record_of(c, sub)
        if k is not None:
            cols[c] = np.where(miss[:, k - 1], np.nan, cols[c])

    header = tuple(cols)
    ids = tuple(f"{cfg.id_prefix}{i + 1}" for i in range(n))
    roles = spec.roles()
    data = LongitudinalDataset(ids, roles, {c: np.asarray(a, dtype=float) for c, a in cols.items()}, header,
                               {}, None)
    info = SimInfo(redraws / max(n, 1), latent, tuple(cm.latents), classes, miss)
    return data, info


def _record_of(column: str, spec: ModelSpec):
    """Wave record number of a longitudinal column, or None for covariates."""
    names = [p.name for p in spec.processes] + [p.t_var for p in spec.processes]
    if spec.tvc is not None:
        names.append(spec.tvc.variable)
    for nm in sorted(set(names), key=len, reverse=True):
        rest = column[len(nm):]
        if column.startswith(nm) and rest.isdigit():
            return int(rest)
    return None


def _draw_residuals(rng, theta, size):
    P = theta.shape[0]
    if P == 0:
        return np.zeros((size, 0))
    w, V = np.linalg.eigh(0.5 * (theta + theta.T))
    if np.min(w) < -1e-10 * max(1.0, np.max(np.abs(w))):
        raise NonPDTrueCovariance("residual covariance is not positive semidefinite")
    root = V * np.sqrt(np.maximum(w, 0.0))
    return rng.standard_normal((size, P)) @ root.T


def _mvn(rng, m, C, size):
    w, V = np.linalg.eigh(0.5 * (C + C.T))
    if np.min(w) < -1e-10 * max(1.0, np.max(np.abs(w))):
        raise NonPDTrueCovariance("latent covariance is not positive semidefinite")
    root = V * np.sqrt(np.maximum(w, 0.0))
    return m + rng.standard_normal((size, m.size)) @ root.T


def _shape_bounds(p: ProcessSpec, wave):
    kind = p.form.kind
    if kind == "neg_exponential":
        return lambda s: s > 0
    if kind == "jenss_bayley":
        return lambda s: s < 0
    if kind == "bilinear_spline":
        lo, hi = wave[p.records[0] - 1], wave[p.records[-1] - 1]
        return lambda s: (s > lo) & (s < hi)
    return None


def _draw_admissible(rng, m, C, size, spec, cm, v, prefix, wave):
    """Draw latents; redraw rows whose individual shape is inadmissible."""
    lat = _mvn(rng, m, C, size)
    checks = []
    for p in spec.processes:
        if p.form.intrinsic:
            k = cm._lat[f"{p.name}.{p.deviation}"]
            checks.append((k, v[prefix + p.shape_param], _shape_bounds(p, wave)))
    redraws = 0
    if not checks:
        return lat, 0
    for _ in range(MAX_REDRAWS):
        bad = np.zeros(size, dtype=bool)
        for k, mu, ok in checks:
            bad |= ~ok(mu + lat[:, k])
        if not bad.any():
            break
        redraws += int(bad.sum())
        lat[bad] = _mvn(rng, m, C, int(bad.sum()))
    return lat, redraws


def _process_values(p: ProcessSpec, cm: CompiledModel, lat, who, v, prefix, spec):
    """Exact true scores of one process for the individuals ``who``."""
    t = cm.times[p.name][who]
    ks = cm.lat_slices[p.name]
    eta = lat[:, ks]
    names = p.factors
    get = lambda n: v[prefix + n]  # noqa: E731
    if p.model == "MED":
        lam = curves.mediation_loadings(p.form.kind, t, get(p.shape_param) if p.shape_param else None)
        return np.einsum("njk,nk->nj", lam, eta)
    if p.form.kind == "nonparametric":
        rates = np.array([get(r) for r in p.rate_params])
        lam = curves.lcsm_loadings(p.form, t, {"rates": rates})
        return np.einsum("njk,nk->nj", lam, eta)
    coefs = {}
    kind = p.form.kind
    if kind == "bilinear_spline":
        mu_g = get(p.shape_param)
        e0, e1, e2 = curves.knot_inverse(eta[:, 0], eta[:, 1], eta[:, 2], mu_g)
        coefs = {"eta0": e0[:, None], "eta1": e1[:, None], "eta2": e2[:, None]}
        g = mu_g + (eta[:, 3] if p.form.intrinsic else 0.0)
        coefs["gamma"] = np.broadcast_to(np.asarray(g, dtype=float), (t.shape[0],))[:, None]
    else:
        for f in p.growth_factors:
            coefs[f] = eta[:, names.index(f)][:, None]
        if p.shape_param:
            s = get(p.shape_param) + (eta[:, names.index(p.deviation)] if p.form.intrinsic else 0.0)
            coefs[p.form.shape_key] = np.broadcast_to(np.asarray(s, dtype=float), (t.shape[0],))[:, None]
    origin = t[:, :1] if p.model == "LCSM" else None
    return curves.true_trajectory(FunctionalForm(kind), t, coefs, origin=origin)


def _tvc_effect(spec, cm, lat, who, v, prefix, rng, cols, n, tvc0):
    """State (or direct) covariate contribution to the outcome, filling covariate columns."""
    y = spec.processes[0]
    kappa = v[prefix + "kappa"]
    if spec.tvc.type == 0:
        m0, m1, v0, v1, th = tvc0
        t = cm.times[y.name][who]
        eta0 = m0 + np.sqrt(v0) * rng.standard_normal(who.size)
        eta1 = m1 + np.sqrt(v1) * rng.standard_normal(who.size)
        x = eta0[:, None] + eta1[:, None] * t + np.sqrt(th) * rng.standard_normal(t.shape)
        for j, k in enumerate(y.records):
            c = f"{spec.tvc.variable}{k}"
            if c not in cols:
                cols[c] = np.full(n, np.nan)
            cols[c][who] = x[:, j]
        return kappa * x
    xp = spec.process(spec.tvc.variable)
    rates = [v[prefix + r] for r in xp.rate_params]
    w = state_weights(spec.tvc.type, cm.times[xp.name][who], rates)
    return kappa * w * lat[:, cm._lat[f"{xp.name}.eta1"]][:, None]
