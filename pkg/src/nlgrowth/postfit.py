"""Computations on fitted models.

Derived (non-estimable) parameters with delta-method standard errors,
likelihood-ratio tests, regression factor scores, posterior class
probabilities and the class-enumeration table.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import stats
from scipy.special import logsumexp

from . import curves
from .dataset import LongitudinalDataset
from .estimator import FitResult, delta_covariance
from .exceptions import DatasetMismatch, NegativeStatistic, NonPDImpliedCovariance, NoCovarianceAvailable, NotNested
from .fiml import PIVOT_TOL, Objective, _min_pivot
from .model_builder import CompiledModel, ModelSpec, class_spec, structure_only

LRT_NEGATIVE_TOL = 1e-4
BOUNDARY_NOTE = ("variance parameters tested at the boundary of their space: "
                 "the chi-square p-value is conservative")


# ---------------------------------------------------------------------------
# derived parameters
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DerivedRow:
    name: str
    estimate: float
    se: float
    definition: str


@dataclass(frozen=True)
class DerivedParamTable:
    rows: tuple[DerivedRow, ...]
    function: Callable | None = None  # values(dict) -> vector of estimates

    def __iter__(self):
        return iter(self.rows)

    def __len__(self):
        return len(self.rows)

    def as_dict(self) -> dict[str, tuple[float, float]]:
        return {r.name: (r.estimate, r.se) for r in self.rows}


def _derived_definitions(spec: ModelSpec, prefix: str = ""):
    """List of (name, definition text, function(values) -> float)."""
    out = []
    sm = structure_only(spec)
    lat = sm.latents
    sub = class_spec(spec)

    # (1) bilinear growth factors on the original (initial status, slopes) scale
    for p in sub.processes:
        if p.model == "MED" or p.form.kind != "bilinear_spline":
            continue
        ks = sm.lat_slices[p.name]
        k = len(p.factors)
        orig = [f"{p.name}.eta0", f"{p.name}.eta1", f"{p.name}.eta2"] + (
            [f"{p.name}.{p.deviation}"] if p.form.intrinsic else [])

        def moments(v, p=p, ks=ks):
            m, C = sm.latent_moments(v, prefix)
            return curves.knot_reparam_inverse(m[ks], C[ks, ks], v[prefix + p.shape_param])

        for i in range(3):
            out.append((f"{prefix}orig.mean({orig[i]})", "inverse knot map of reparameterised means",
                        lambda v, i=i, mo=moments: mo(v)[0][i]))
        for i in range(k):
            for j in range(i + 1):
                nm = f"orig.var({orig[i]})" if i == j else f"orig.cov({orig[j]},{orig[i]})"
                out.append((prefix + nm, "J Psi J^T under the inverse knot map",
                            lambda v, i=i, j=j, mo=moments: mo(v)[1][i, j]))

    # (2) growth factors marginal over the time-invariant covariates
    if sub.tics and sub.mediation is None:
        idx = [lat.index(f"{nm}.{f}") for nm in sub.outcomes for f in sub.process(nm).growth_factors]
        for a in idx:
            out.append((f"{prefix}marginal.mean({lat[a]})", "alpha + B_TIC mu_X",
                        lambda v, a=a: sm.latent_moments(v, prefix)[0][a]))
        for ii, a in enumerate(idx):
            for b in idx[: ii + 1]:
                nm = f"marginal.var({lat[a]})" if a == b else f"marginal.cov({lat[b]},{lat[a]})"
                out.append((prefix + nm, "Psi + B_TIC Phi_X B_TIC^T",
                            lambda v, a=a, b=b: sm.latent_moments(v, prefix)[1][a, b]))
        for ii, a in enumerate(idx):
            for b in idx[: ii + 1]:
                nm = f"conditional.var({lat[a]})" if a == b else f"conditional.cov({lat[b]},{lat[a]})"
                out.append((prefix + nm, "Psi (given the covariates)",
                            lambda v, a=a, b=b: sm.latent_matrices(v, prefix)[2][a, b]))

    # (3) mediation: indirect and total effects
    med = sub.mediation
    if med is not None:
        pm, py = sub.process(med.m), sub.process(med.y)
        if med.x_longitudinal:
            px = sub.process(med.x)
            sources = [(a, f"{med.x}.{fa}") for a, fa in enumerate(px.factors)]
        else:
            sources = [(0, f"tic.{med.x}")]

        def beta(v, tgt, src):
            return v.get(f"{prefix}beta({tgt}<-{src})", 0.0)

        for a, src in sources:
            for c, fc in enumerate(py.factors):
                tgt = f"{med.y}.{fc}"
                terms = []
                for b, fb in enumerate(pm.factors):
                    mid = f"{med.m}.{fb}"
                    legal = (not med.x_longitudinal or a <= b) and b <= c
                    if not legal or "xm" not in med.paths or "my" not in med.paths:
                        continue
                    nm = f"{prefix}indirect({src}->{mid}->{tgt})"
                    f = (lambda v, s=src, mid=mid, t=tgt: beta(v, mid, s) * beta(v, t, mid))
                    out.append((nm, f"beta({mid}<-{src}) * beta({tgt}<-{mid})", f))
                    terms.append(f)
                if med.x_longitudinal and a > c and not terms:
                    continue
                out.append((f"{prefix}total({src}->{tgt})", "direct + sum of indirect effects",
                            lambda v, s=src, t=tgt, terms=tuple(terms): beta(v, t, s) + sum(g(v) for g in terms)))
    return out


def derived_params(fit: FitResult, spec: ModelSpec | None = None) -> DerivedParamTable:
    """Derived parameters with delta-method standard errors."""
    spec = spec or fit.spec
    if fit.vcov_internal is None:
        raise NoCovarianceAvailable("derived parameters need the covariance of the estimates")
    defs = []
    if spec.family == "mixture":
        for g in range(1, spec.mixture.G + 1):
            defs += _derived_definitions(spec, f"c{g}.")
    else:
        defs = _derived_definitions(spec)
    if not defs:
        return DerivedParamTable((), None)
    est = fit.estimates

    def fvals(values):
        return np.array([f(values) for _, _, f in defs])

    def g(u):
        return fvals(est.with_free_vector(u, internal=True).values())

    point = fvals(est.values())
    _, cov = delta_covariance(g, est.free_vector(internal=True), fit.vcov_internal)
    se = np.sqrt(np.maximum(np.diag(cov), 0.0))
    rows = tuple(DerivedRow(n, float(x), float(s), d) for (n, d, _), x, s in zip(defs, point, se))
    return DerivedParamTable(rows, fvals)


# ---------------------------------------------------------------------------
# likelihood-ratio test
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LRTResult:
    statistic: float
    df: int
    p_value: float
    note: str = ""


def lrt(full: FitResult, reduced: FitResult) -> LRTResult:
    """Likelihood-ratio test of ``reduced`` nested in ``full``."""
    if full.data_fingerprint and reduced.data_fingerprint and full.data_fingerprint != reduced.data_fingerprint:
        raise DatasetMismatch("the two fits use different data")
    fr, rd = set(full.estimates.free_names), set(reduced.estimates.free_names)
    if not rd <= fr:
        missing = sorted(rd - fr)[:5]
        raise NotNested(f"reduced-model parameters absent from the full model: {missing}")
    df = full.n_parameters - reduced.n_parameters
    stat = reduced.minus_two_log_lik - full.minus_two_log_lik
    if stat < 0:
        if stat < -LRT_NEGATIVE_TOL:
            raise NegativeStatistic(
                f"full model fits worse than the reduced one (statistic {stat:.6g}); "
                "refit the full model starting from the reduced-model estimates")
        stat = 0.0
    if stat == 0.0:
        p = 1.0
    else:
        p = float(stats.chi2.sf(stat, df)) if df > 0 else float("nan")
    note = ""
    if any(".psi.chol." in n for n in fr - rd):
        note = BOUNDARY_NOTE
    return LRTResult(float(stat), int(df), p, note)


# ---------------------------------------------------------------------------
# factor scores
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FactorScores:
    names: tuple[str, ...]
    scores: np.ndarray  # (N, K)
    cov: np.ndarray  # (N, K, K)
    classes: np.ndarray | None = None


def _scores_for(cm: CompiledModel, values, prefix, rows, class_index=None):
    m, C = cm.latent_moments(values, prefix)
    lam, nu = cm.loadings(values, m, prefix)
    theta = cm.residual_matrix(values, prefix)
    K = cm.K
    scores = np.empty((rows.size, K))
    covs = np.empty((rows.size, K, K))
    for out_i, i in enumerate(rows):
        obs = np.flatnonzero(cm.mask[i])
        if obs.size == 0:
            scores[out_i], covs[out_i] = m, C
            continue
        L = lam[i, obs]
        S = L @ C @ L.T + theta[np.ix_(obs, obs)]
        piv = _min_pivot(S)
        if not piv > PIVOT_TOL:
            raise NonPDImpliedCovariance(cm.ids[i], piv, class_index)
        cross = C @ L.T  # Cov(eta, omega)
        resid = cm.obs[i, obs] - (nu[i, obs] + L @ m)
        gain = np.linalg.solve(S, cross.T).T
        scores[out_i] = m + gain @ resid
        covs[out_i] = C - gain @ cross.T
    return scores, covs


def factor_scores(fit: FitResult, data: LongitudinalDataset, spec: ModelSpec | None = None) -> FactorScores:
    """Regression (empirical Bayes) factor scores; mixtures use each individual's modal class."""
    spec = spec or fit.spec
    cm = CompiledModel.from_dataset(spec, data)
    v = fit.estimates.values()
    n = cm.n
    if spec.family != "mixture":
        s, c = _scores_for(cm, v, "", np.arange(n))
        return FactorScores(tuple(cm.latents), s, c)
    post = posterior_classify(fit, data, spec)
    scores = np.empty((n, cm.K))
    covs = np.empty((n, cm.K, cm.K))
    for g in range(1, spec.mixture.G + 1):
        rows = np.flatnonzero(post.modal == g)
        if rows.size:
            scores[rows], covs[rows] = _scores_for(cm, v, f"c{g}.", rows, g)
    return FactorScores(tuple(cm.latents), scores, covs, post.modal)


# ---------------------------------------------------------------------------
# posterior classification and enumeration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PosteriorMatrix:
    probs: np.ndarray  # (N, G)
    modal: np.ndarray  # (N,) 1-based class labels

    @property
    def proportions(self) -> np.ndarray:
        return self.probs.mean(axis=0)


def posterior_from_log(log_prior, log_density) -> PosteriorMatrix:
    """Normalise ``log prior + log density`` per row in log space."""
    z = np.asarray(log_prior) + np.asarray(log_density)
    logpost = z - logsumexp(z, axis=1, keepdims=True)
    probs = np.exp(logpost)
    return PosteriorMatrix(probs, np.argmax(probs, axis=1) + 1)


def posterior_classify(fit: FitResult, data: LongitudinalDataset, spec: ModelSpec | None = None) -> PosteriorMatrix:
    """Posterior class probabilities by Bayes' rule; ties go to the lower class index."""
    spec = spec or fit.spec
    if spec.family != "mixture":
        raise ValueError("posterior classification needs a mixture fit")
    ov = Objective(spec, data).evaluate(fit.estimates)
    return posterior_from_log(ov.log_prior, ov.class_log_densities)


@dataclass(frozen=True)
class CriteriaRow:
    label: str
    log_lik: float
    n_params: int
    bic: float
    proportions: tuple[float, ...]


def criteria_table(fits: Sequence[FitResult], posteriors: Sequence[PosteriorMatrix | None] | None = None,
                   labels: Sequence[str] | None = None) -> list[CriteriaRow]:
    """Log-likelihood, parameter count, BIC and class proportions per fit."""
    if not fits:
        return []
    fps = {f.data_fingerprint for f in fits}
    ns = {f.n_individuals for f in fits}
    if len(fps) > 1 or len(ns) > 1:
        raise DatasetMismatch("fits in one criteria table must share a dataset")
    posteriors = list(posteriors) if posteriors is not None else [None] * len(fits)
    labels = list(labels) if labels is not None else [
        f"G={f.spec.mixture.G}" if f.spec.family == "mixture" else "G=1" for f in fits]
    rows = []
    for f, post, lab in zip(fits, posteriors, labels):
        props = (1.0,) if post is None else tuple(float(x) for x in post.proportions)
        bic = f.n_parameters * math.log(f.n_individuals) + f.minus_two_log_lik
        rows.append(CriteriaRow(lab, -0.5 * f.minus_two_log_lik, f.n_parameters, bic, props))
    return rows


def best_by_bic(rows: Sequence[CriteriaRow]) -> CriteriaRow:
    return min(rows, key=lambda r: r.bic)
