"""Starting values, multi-start estimation and standard errors."""
from __future__ import annotations

import hashlib
import json
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np
from scipy.cluster.vq import kmeans2

from . import curves
from .curves import FunctionalForm
from .dataset import LongitudinalDataset
from .exceptions import AllAttemptsFailed, DegenerateData, NoCovarianceAvailable
from .fiml import Objective
from .model_builder import (
    CompiledModel,
    ModelSpec,
    ProcessSpec,
    class_spec,
    parameter_template,
    spec_from_dict,
    spec_to_dict,
    user_parameters,
)
from .optim import CONVERGED, NON_PD_INFORMATION, STATUS_TEXT, bfgs, central_hessian
from .params import ParameterSet, chol_names, safe_cholesky

JITTER_DISTRIBUTIONS = ("runif", "rnorm", "rcauchy")
SHAPE_GRID = np.linspace(0.1, 2.0, 12)[1:]
FIT_SCHEMA = "nlgrowth.fit/1"


@dataclass(frozen=True)
class FitConfig:
    """Estimation settings; defaults follow the reference implementation's arguments."""

    starts: ParameterSet | Mapping[str, float] | None = None
    res_scale: float = 0.1
    rand_scale: float = 1.0
    rand_cor: float = 0.3
    joint_cor: float = 0.3
    tries: int | None = None
    jitter_d: str = "runif"
    loc: float = 1.0
    scale: float = 0.25
    ok_status_codes: tuple[int, ...] = (0,)
    max_iterations: int = 500
    gtol: float = 1e-4
    seed: int = 0
    fixed: Mapping[str, float] = field(default_factory=dict)
    compute_se: bool = True

    def __post_init__(self):
        if not 0.0 < self.res_scale < 1.0:
            raise ValueError("res_scale must lie in (0, 1)")
        if self.rand_scale <= 0:
            raise ValueError("rand_scale must be positive")
        if not -1.0 < self.rand_cor < 1.0 or not -1.0 < self.joint_cor < 1.0:
            raise ValueError("correlations must lie in (-1, 1)")
        if self.jitter_d not in JITTER_DISTRIBUTIONS:
            raise ValueError(f"jitter_d must be one of {JITTER_DISTRIBUTIONS}")
        if self.tries is not None and self.tries < 0:
            raise ValueError("tries must be nonnegative")
        object.__setattr__(self, "ok_status_codes", tuple(int(c) for c in self.ok_status_codes))


@dataclass(frozen=True)
class Attempt:
    start_hash: str
    minus_two_log_lik: float
    status_code: int
    iterations: int


@dataclass(frozen=True)
class FitResult:
    spec: ModelSpec
    estimates: ParameterSet
    minus_two_log_lik: float
    status_code: int
    standard_errors: dict  # user-facing name -> SE
    user_estimates: dict  # user-facing name -> value
    vcov_internal: np.ndarray | None  # covariance of the internal free vector
    attempts: tuple[Attempt, ...]
    n_individuals: int
    data_fingerprint: str = ""
    grad_norm: float = float("nan")
    ok_status_codes: tuple[int, ...] = (0,)

    @property
    def n_parameters(self) -> int:
        return self.estimates.n_free

    @property
    def ok(self) -> bool:
        return self.status_code in self.ok_status_codes

    @property
    def status_text(self) -> str:
        return STATUS_TEXT.get(self.status_code, "unknown")

    @property
    def log_likelihood(self) -> float:
        return -0.5 * self.minus_two_log_lik

    @property
    def bic(self) -> float:
        return self.n_parameters * math.log(self.n_individuals) + self.minus_two_log_lik

    def free_standard_errors(self) -> dict:
        """SEs of the free parameters on their natural (not log) scale."""
        if self.vcov_internal is None:
            raise NoCovarianceAvailable("fit has no covariance of estimates")
        u = self.estimates.free_vector(internal=True)
        jac = np.where(self.estimates.positive_mask(), np.exp(u), 1.0)
        var = np.diag(self.vcov_internal) * jac ** 2
        return dict(zip(self.estimates.free_names, np.sqrt(np.maximum(var, 0.0))))

    def parameter_table(self) -> list[tuple[str, float, float]]:
        return [(n, v, self.standard_errors.get(n, float("nan"))) for n, v in self.user_estimates.items()]

    # -- persistence ------------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "schema": FIT_SCHEMA,
            "spec": spec_to_dict(self.spec),
            "parameters": self.estimates.to_records(),
            "minus_two_log_lik": self.minus_two_log_lik,
            "status_code": self.status_code,
            "ok_status_codes": list(self.ok_status_codes),
            "standard_errors": self.standard_errors,
            "user_estimates": self.user_estimates,
            "vcov_internal": None if self.vcov_internal is None else self.vcov_internal.tolist(),
            "attempts": [a.__dict__ for a in self.attempts],
            "n_individuals": self.n_individuals,
            "data_fingerprint": self.data_fingerprint,
            "grad_norm": self.grad_norm,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "FitResult":
        if d.get("schema") != FIT_SCHEMA:
            raise ValueError(f"unsupported fit file schema {d.get('schema')!r}")
        vc = d.get("vcov_internal")
        return cls(
            spec_from_dict(d["spec"]),
            ParameterSet.from_records(d["parameters"]),
            float(d["minus_two_log_lik"]),
            int(d["status_code"]),
            dict(d["standard_errors"]),
            dict(d["user_estimates"]),
            None if vc is None else np.array(vc, dtype=float),
            tuple(Attempt(**a) for a in d["attempts"]),
            int(d["n_individuals"]),
            d.get("data_fingerprint", ""),
            float(d.get("grad_norm", float("nan"))),
            tuple(d.get("ok_status_codes", (0,))),
        )

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=1, sort_keys=True, allow_nan=True)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "FitResult":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


# ---------------------------------------------------------------------------
# starting values
# ---------------------------------------------------------------------------

def _reduced_basis(p: ProcessSpec, t: np.ndarray, shape: dict) -> np.ndarray:
    if p.model == "MED":
        return curves.mediation_loadings(p.form.kind, t, shape.get("gamma"))
    form = FunctionalForm(p.form.kind)
    if p.model == "LCSM":
        return curves.lcsm_loadings(form, t, shape)
    return curves.lgcm_loadings(form, t, shape)


def _pooled_sse(p, y, mask, t, shape) -> float:
    X = _reduced_basis(p, t, shape)[mask]
    coef, *_ = np.linalg.lstsq(X, y[mask], rcond=None)
    r = y[mask] - X @ coef
    return float(r @ r)


def _provisional_shape(p: ProcessSpec, y, mask, t) -> dict:
    shape = {}
    kind = p.form.kind
    if kind == "bilinear_spline":
        shape["gamma"] = float(np.median(t[mask]))
    elif kind in ("neg_exponential", "jenss_bayley"):
        key = p.form.shape_key
        grid = SHAPE_GRID if kind == "neg_exponential" else np.concatenate([-SHAPE_GRID[::-1], SHAPE_GRID])
        sse = [_pooled_sse(p, y, mask, t, {key: g}) for g in grid]
        shape[key] = float(grid[int(np.argmin(sse))])
    elif kind == "nonparametric":
        with np.errstate(all="ignore"):
            ybar = np.array([np.nanmean(np.where(mask[:, j], y[:, j], np.nan)) for j in range(y.shape[1])])
        tbar = t.mean(axis=0)
        slopes = np.diff(ybar) / np.diff(tbar)
        if not np.all(np.isfinite(slopes)) or abs(slopes[0]) < 1e-8:
            rates = np.ones(y.shape[1] - 2)
        else:
            rates = slopes[1:] / slopes[0]
        shape["rates"] = rates
    return shape


def _process_starts(p: ProcessSpec, cm: CompiledModel, cfg: FitConfig):
    """Crude factor scores, shape starts, residual start of one process."""
    rows = cm.rows[p.name]
    y, mask, t = cm.obs[:, rows], cm.mask[:, rows], cm.times[p.name]
    if not mask.any():
        raise DegenerateData(f"{p.name}: no observed values")
    shape = _provisional_shape(p, y, mask, t)
    X = _reduced_basis(p, t, shape)
    k = X.shape[-1]
    scores = np.full((cm.n, k), np.nan)
    for i in np.flatnonzero(mask.sum(axis=1) >= k):
        m = mask[i]
        scores[i], *_ = np.linalg.lstsq(X[i, m], y[i, m], rcond=None)
    valid = ~np.isnan(scores[:, 0])
    if valid.sum() < len(p.factors):
        raise DegenerateData(
            f"{p.name}: {int(valid.sum())} individuals with enough observations for {len(p.factors)} growth factors")
    with np.errstate(all="ignore"):
        wave_var = np.array([np.nanvar(np.where(mask[:, j], y[:, j], np.nan), ddof=1) for j in range(y.shape[1])])
    wave_var = wave_var[np.isfinite(wave_var)]
    theta = cfg.res_scale * float(np.mean(wave_var)) if wave_var.size else 1.0
    return shape, scores, max(theta, 1e-6)


def _add_deviation(p: ProcessSpec, mean, cov, shape, cfg: FitConfig):
    if not p.form.intrinsic:
        return mean, cov
    s = shape[p.form.shape_key]
    var_d = cfg.rand_scale * s * s
    if var_d <= 0:
        var_d = cfg.rand_scale * 0.01
    k = cov.shape[0]
    out = np.zeros((k + 1, k + 1))
    out[:k, :k] = cov
    out[k, k] = var_d
    sd = np.sqrt(np.maximum(np.diag(cov), 0.0))
    out[k, :k] = out[:k, k] = cfg.rand_cor * sd * math.sqrt(var_d)
    return np.append(mean, 0.0), out


def _set_block(ps: ParameterSet, block: str, cov: np.ndarray):
    L = safe_cholesky(cov)
    for name, i, j in chol_names(block, cov.shape[0]):
        ps.set(name, L[i, j])


def derive_starts(spec: ModelSpec, data: LongitudinalDataset, cfg: FitConfig | None = None) -> ParameterSet:
    """Data-driven starting values (see the README for the recipe)."""
    cfg = cfg or FitConfig()
    if data.n_individuals == 0:
        raise DegenerateData("empty dataset")
    sub = class_spec(spec)
    cm = CompiledModel.from_dataset(sub, data)
    all_t = np.concatenate([cm.times[p.name].ravel() for p in sub.processes])
    ps = parameter_template(sub, float(np.median(all_t)))

    per = {}
    for p in sub.processes:
        shape, scores, theta = _process_starts(p, cm, cfg)
        valid = ~np.isnan(scores[:, 0])
        mean = scores[valid].mean(axis=0)
        cov = np.cov(scores[valid], rowvar=False).reshape(len(mean), len(mean))
        for f, v in zip(p.growth_factors, mean):
            ps.set(f"{p.name}.{f}.mean", v)
        if p.shape_param:
            ps.set(p.shape_param, shape[p.form.shape_key if p.model != "MED" else "gamma"])
        for name, r in zip(p.rate_params, np.atleast_1d(shape.get("rates", []))):
            ps.set(name, r)
        mean_full, cov_full = _add_deviation(p, mean, cov, shape, cfg)
        per[p.name] = (scores, mean_full, cov_full, theta)

    if sub.base_family == "MGM":
        blocks = [per[p.name][2] for p in sub.processes]
        joint = _block_diag(blocks)
        stacked = np.column_stack([per[p.name][0] for p in sub.processes])
        ok = ~np.isnan(stacked).any(axis=1)
        if ok.sum() > stacked.shape[1] and not any(p.form.intrinsic for p in sub.processes):
            joint = np.cov(stacked[ok], rowvar=False)
        _set_block(ps, "psi", joint)
        sd = np.sqrt([per[p.name][3] for p in sub.processes])
        R = np.full((len(sd), len(sd)), cfg.joint_cor)
        np.fill_diagonal(R, 1.0)
        _set_block(ps, "res", R * np.outer(sd, sd))
    else:
        for p in sub.processes:
            _set_block(ps, f"{p.name}.psi", per[p.name][2])
            ps.set(f"{p.name}.theta", per[p.name][3])

    if sub.tics:
        X = data.tic_matrix(sub.tics)
        ok = ~np.isnan(X).any(axis=1)
        if ok.sum() < 2:
            raise DegenerateData("too few complete covariate rows")
        for x, mval in zip(sub.tics, X[ok].mean(axis=0)):
            ps.set(f"tic.{x}.mean", mval)
        _set_block(ps, "tic.phi", np.atleast_2d(np.cov(X[ok], rowvar=False)))

    if spec.family != "mixture":
        return ps
    return _mixture_starts(spec, ps, per, sub, cfg)


def _block_diag(blocks):
    n = sum(b.shape[0] for b in blocks)
    out = np.zeros((n, n))
    k = 0
    for b in blocks:
        out[k:k + b.shape[0], k:k + b.shape[0]] = b
        k += b.shape[0]
    return out


def _mixture_starts(spec: ModelSpec, base: ParameterSet, per, sub, cfg: FitConfig) -> ParameterSet:
    """Class starts from k-means on the standardised per-individual coefficients.

    Classes are ordered by the first growth factor's cluster mean.  Clusters
    too small for a covariance fall back to the pooled one; a degenerate
    clustering falls back to shifting the pooled means by +-1 SD.
    """
    G = spec.mixture.G
    ps = parameter_template(spec)
    Z = np.column_stack([per[p.name][0] for p in sub.processes])
    ok = ~np.isnan(Z).any(axis=1)
    Zs = Z[ok]
    sd = Zs.std(axis=0)
    sd[sd == 0] = 1.0
    labels = None
    if ok.sum() >= 2 * G:
        _, lab = kmeans2((Zs - Zs.mean(axis=0)) / sd, G, minit="++", seed=np.random.default_rng(cfg.seed))
        sizes = np.bincount(lab, minlength=G)
        if sizes.min() >= 2:
            order = np.argsort([Zs[lab == g, 0].mean() for g in range(G)])
            labels = np.empty_like(lab)
            for new_g, old_g in enumerate(order):
                labels[lab == old_g] = new_g
    shifts = np.linspace(-1.0, 1.0, G)
    for g in range(1, G + 1):
        for name in base:
            ps.set(f"c{g}.{name}", base[name])
        col = 0
        for p in sub.processes:
            k = len(p.growth_factors)
            scores = Zs[:, col:col + k]
            col += k
            if labels is None:
                s = np.sqrt(np.maximum(np.diag(per[p.name][2]), 0.0))
                mean = np.array([base[f"{p.name}.{f}.mean"] for f in p.growth_factors]) + shifts[g - 1] * s[:k]
                cov = per[p.name][2]
            else:
                member = scores[labels == g - 1]
                mean = member.mean(axis=0)
                cov = np.cov(member, rowvar=False).reshape(k, k) if len(member) > k else per[p.name][2][:k, :k]
                if p.form.intrinsic:
                    full = per[p.name][2].copy()
                    full[:k, :k] = cov
                    cov = full
            for f, v in zip(p.growth_factors, mean):
                ps.set(f"c{g}.{p.name}.{f}.mean", v)
            if sub.base_family != "MGM":
                _set_block(ps, f"c{g}.{p.name}.psi", cov)
        if sub.base_family == "MGM" and labels is not None and not any(p.form.intrinsic for p in sub.processes):
            member = Zs[labels == g - 1]
            if len(member) > Zs.shape[1]:
                _set_block(ps, f"c{g}.psi", np.cov(member, rowvar=False))
        if labels is not None and g >= 2:
            props = np.bincount(labels, minlength=G) / labels.size
            ps.set(f"c{g}.logit.0", float(np.log(props[g - 1] / props[0])))
    return ps


# ---------------------------------------------------------------------------
# jitter and fitting
# ---------------------------------------------------------------------------

def jitter(starts: ParameterSet, cfg: FitConfig, rng: np.random.Generator) -> ParameterSet:
    """Multiply each free value by a random draw; positive entries keep their sign."""
    x = starts.free_vector()
    n = x.size
    if cfg.jitter_d == "runif":
        mult = rng.uniform(cfg.loc - cfg.scale, cfg.loc + cfg.scale, n)
    elif cfg.jitter_d == "rnorm":
        mult = rng.normal(cfg.loc, cfg.scale, n)
    else:
        mult = cfg.loc + cfg.scale * rng.standard_cauchy(n)
    x = x * mult
    pos = starts.positive_mask()
    x[pos] = np.maximum(np.abs(x[pos]), 1e-8)
    return starts.with_free_vector(x)


def _hash(x: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(x, dtype=float).tobytes()).hexdigest()[:12]


def _prepare_starts(spec, data, cfg) -> ParameterSet:
    ps = derive_starts(spec, data, cfg)
    if cfg.starts is not None:
        given = cfg.starts.values() if isinstance(cfg.starts, ParameterSet) else dict(cfg.starts)
        ps.update(given)
    for name, value in cfg.fixed.items():
        ps.fix(name, value)
    return ps


def fit(spec: ModelSpec, data: LongitudinalDataset, cfg: FitConfig | None = None) -> FitResult:
    """Minimise ``-2 ln L`` with jittered restarts; see :class:`FitConfig`."""
    cfg = cfg or FitConfig()
    obj = Objective(spec, data)
    n = max(obj.n_individuals, 1)
    starts = _prepare_starts(spec, data, cfg)
    rng = np.random.default_rng(cfg.seed)

    def run(ps0: ParameterSet):
        u0 = ps0.free_vector(internal=True)

        def f(u):
            return obj(ps0.with_free_vector(u, internal=True)) / n

        res = bfgs(f, u0, gtol=cfg.gtol, max_iterations=cfg.max_iterations)
        est = ps0.with_free_vector(res.x, internal=True)
        status, vcov = res.status, None
        if status == CONVERGED and cfg.compute_se:
            vcov = _internal_vcov(obj, est)
            if vcov is None:
                status = NON_PD_INFORMATION
        att = Attempt(_hash(u0), float(res.fun * n), int(status), int(res.iterations))
        return est, float(res.fun * n), status, vcov, res.grad_norm, att

    attempts = []
    best = run(starts)
    attempts.append(best[-1])
    tries = cfg.tries or 0
    k = 0
    while best[2] not in cfg.ok_status_codes and k < tries:
        k += 1
        cand = run(jitter(best[0], cfg, rng))
        attempts.append(cand[-1])
        ok_c = cand[2] in cfg.ok_status_codes
        if ok_c or (np.isfinite(cand[1]) and (not np.isfinite(best[1]) or cand[1] < best[1])):
            best = cand
    est, value, status, vcov, gnorm, _ = best
    if status not in cfg.ok_status_codes:
        warnings.warn(AllAttemptsFailed(
            f"no attempt reached an acceptable status; best attempt status {status} ({STATUS_TEXT.get(status)})"))

    values = est.values()
    user = user_parameters(values, spec)
    ses = {}
    if vcov is not None and status in cfg.ok_status_codes:
        ses = _user_standard_errors(est, vcov, spec)
    return FitResult(spec, est, value, int(status), ses, {k: float(v) for k, v in user.items()}, vcov,
                     tuple(attempts), data.n_individuals, data.fingerprint(), gnorm, cfg.ok_status_codes)


def _internal_vcov(obj: Objective, est: ParameterSet) -> np.ndarray | None:
    """``2 H^-1`` with ``H`` the central-difference Hessian of ``-2 ln L``."""
    u = est.free_vector(internal=True)

    def f(x):
        try:
            return obj(est.with_free_vector(x, internal=True))
        except Exception:  # noqa: BLE001 - any failure makes the Hessian unusable
            return np.nan

    H = central_hessian(f, u)
    if not np.all(np.isfinite(H)):
        return None
    H = 0.5 * (H + H.T)
    try:
        np.linalg.cholesky(H)
    except np.linalg.LinAlgError:
        return None
    return 2.0 * np.linalg.inv(H)


def delta_covariance(g, u: np.ndarray, V: np.ndarray, rel: float = 1e-6):
    """Value and delta-method covariance of ``g(u)`` with a central-difference Jacobian."""
    u = np.asarray(u, dtype=float)
    g0 = np.asarray(g(u), dtype=float)
    h = np.maximum(rel, rel * np.abs(u))
    J = np.empty((g0.size, u.size))
    for i in range(u.size):
        e = np.zeros_like(u)
        e[i] = h[i]
        J[:, i] = (np.asarray(g(u + e)) - np.asarray(g(u - e))) / (2.0 * h[i])
    return g0, J @ V @ J.T


def _user_standard_errors(est: ParameterSet, vcov: np.ndarray, spec: ModelSpec) -> dict:
    names = list(user_parameters(est.values(), spec))

    def g(u):
        v = user_parameters(est.with_free_vector(u, internal=True).values(), spec)
        return np.array([v[n] for n in names])

    _, cov = delta_covariance(g, est.free_vector(internal=True), vcov)
    se = np.sqrt(np.maximum(np.diag(cov), 0.0))
    free = set(est.free_names)
    out = {}
    for n, s, row in zip(names, se, np.abs(cov).sum(axis=1)):
        # fixed quantities (no dependence on free parameters) have no SE
        out[n] = float(s) if (row > 0 or n in free) else float("nan")
    return out


def refit_config(cfg: FitConfig, **changes) -> FitConfig:
    return replace(cfg, **changes)
