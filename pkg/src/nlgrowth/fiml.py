"""Full-information maximum likelihood objective.

``-2 ln L`` is accumulated over individuals, each contributing the
multivariate normal density of its observed entries only.  Individuals are
grouped by missingness pattern so that each group is one batched Cholesky
factorisation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .dataset import LongitudinalDataset
from .exceptions import NonPDImpliedCovariance, RoleMismatch
from .model_builder import CompiledModel, ModelSpec, class_log_probabilities
from .params import ParameterSet

LOG2PI = math.log(2.0 * math.pi)
PIVOT_TOL = 1e-12


@dataclass(frozen=True)
class ObjectiveValue:
    minus_two_log_lik: float
    per_individual: np.ndarray
    class_log_densities: np.ndarray | None = None  # (N, G) for mixtures
    log_prior: np.ndarray | None = None  # (N, G) log class probabilities


def _min_pivot(S: np.ndarray) -> float:
    """Smallest pivot of an (unpivoted) Cholesky elimination of ``S``."""
    A = np.array(S, dtype=float)
    n = A.shape[0]
    best = np.inf
    for k in range(n):
        d = A[k, k]
        best = min(best, d)
        if d <= PIVOT_TOL:
            return best
        A[k + 1:, k + 1:] -= np.outer(A[k + 1:, k], A[k, k + 1:]) / d
    return best


def mvn_neg2ll(obs: np.ndarray, mu: np.ndarray, sigma: np.ndarray, patterns, ids, class_index=None):
    """Per-individual ``-2 ln N(obs; mu, sigma)`` over observed entries."""
    out = np.zeros(obs.shape[0])
    for rows, cols in patterns:
        p = cols.size
        if p == 0:
            continue
        S = sigma[np.ix_(rows, cols, cols)] if sigma.ndim == 3 else sigma[np.ix_(cols, cols)][None]
        r = obs[np.ix_(rows, cols)] - mu[np.ix_(rows, cols)]
        try:
            L = np.linalg.cholesky(S)
            piv = np.min(np.diagonal(L, axis1=1, axis2=2) ** 2, axis=1)
            bad = np.flatnonzero(~(piv > PIVOT_TOL))
        except np.linalg.LinAlgError:
            L = None
            bad = np.array([k for k in range(S.shape[0]) if not _min_pivot(S[k]) > PIVOT_TOL])
        if bad.size:
            k = int(bad[0])
            raise NonPDImpliedCovariance(ids[rows[k]], _min_pivot(S[k]), class_index)
        z = np.linalg.solve(L, r[..., None])[..., 0]
        logdet = 2.0 * np.sum(np.log(np.diagonal(L, axis1=1, axis2=2)), axis=1)
        out[rows] = p * LOG2PI + logdet + np.sum(z * z, axis=1)
    return out


class Objective:
    """``-2 ln L`` of a spec bound to a dataset.

    For mixtures the submodel is compiled once and evaluated per class with
    the ``c{g}.`` parameter prefix.
    """

    def __init__(self, spec: ModelSpec, data: LongitudinalDataset, compiled: CompiledModel | None = None):
        self.spec = spec
        self.data = data
        self.model = compiled or CompiledModel.from_dataset(spec, data)
        self.G = spec.mixture.G if spec.family == "mixture" else 1

    @property
    def n_individuals(self) -> int:
        return self.model.n

    def class_neg2ll(self, values, prefix: str = "", class_index=None) -> np.ndarray:
        mu, sigma = self.model.moments(values, prefix)
        return mvn_neg2ll(self.model.obs, mu, sigma, self.model.patterns, self.model.ids, class_index)

    def evaluate(self, params) -> ObjectiveValue:
        v = params.values() if isinstance(params, ParameterSet) else params
        if self.G == 1:
            per = self.class_neg2ll(v)
            return ObjectiveValue(math.fsum(per), per)
        dens = np.column_stack([-0.5 * self.class_neg2ll(v, f"c{g}.", g) for g in range(1, self.G + 1)])
        logp = class_log_probabilities(v, self.model.class_x, self.G, self.spec.mixture.class_tics)
        logp = np.broadcast_to(logp, dens.shape)
        per = -2.0 * logsumexp(logp + dens, axis=1)
        return ObjectiveValue(math.fsum(per), per, dens, logp)

    def __call__(self, params) -> float:
        return self.evaluate(params).minus_two_log_lik


def neg2ll_single(spec: ModelSpec, params, data: LongitudinalDataset) -> ObjectiveValue:
    """FIML ``-2 ln L`` of a single-group model."""
    if spec.family == "mixture":
        raise RoleMismatch("use neg2ll_mixture for mixture specs")
    return Objective(spec, data).evaluate(params)


def neg2ll_mixture(spec: ModelSpec, params, data: LongitudinalDataset) -> ObjectiveValue:
    """FIML ``-2 ln L`` of a mixture; per-individual class terms combined in log space."""
    if spec.family != "mixture":
        raise RoleMismatch("neg2ll_mixture needs a mixture spec")
    return Objective(spec, data).evaluate(params)
