"""scikit-learn style estimators wrapping :func:`nlgrowth.estimator.fit`.

``X`` is a wide dataset: a :class:`~nlgrowth.dataset.LongitudinalDataset`,
a pandas ``DataFrame`` or a CSV path.  ``transform`` returns factor scores,
``score`` the mean per-individual log-likelihood.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin, TransformerMixin

from . import postfit
from ._validation import check_dataset, check_fitted, check_names, check_records
from .curves import FunctionalForm
from .estimator import FitConfig, FitResult, fit
from .fiml import Objective
from .model_builder import ModelSpec


class LatentGrowthModel(TransformerMixin, BaseEstimator):
    """Single-group growth model fitted by FIML.

    Either pass a ready :class:`ModelSpec` as ``spec`` or describe a
    one-outcome model through ``family`` (``"LGCM"`` or ``"LCSM"``),
    ``traj_var``, ``records``, ``curve_fun``, ``intrinsic``, ``t_var`` and
    ``growth_tic``.  The remaining arguments mirror :class:`FitConfig`.
    """

    def __init__(self, spec=None, family="LGCM", traj_var="Y", records=(1, 2, 3, 4, 5, 6),
                 curve_fun="linear", intrinsic=False, t_var="T", growth_tic=(), id_column=None,
                 starts=None, res_scale=0.1, rand_scale=1.0, rand_cor=0.3, joint_cor=0.3, tries=None,
                 jitter_d="runif", loc=1.0, scale=0.25, ok_status_codes=(0,), max_iterations=500,
                 seed=0, compute_se=True):
        self.spec = spec
        self.family = family
        self.traj_var = traj_var
        self.records = records
        self.curve_fun = curve_fun
        self.intrinsic = intrinsic
        self.t_var = t_var
        self.growth_tic = growth_tic
        self.id_column = id_column
        self.starts = starts
        self.res_scale = res_scale
        self.rand_scale = rand_scale
        self.rand_cor = rand_cor
        self.joint_cor = joint_cor
        self.tries = tries
        self.jitter_d = jitter_d
        self.loc = loc
        self.scale = scale
        self.ok_status_codes = ok_status_codes
        self.max_iterations = max_iterations
        self.seed = seed
        self.compute_se = compute_se

    # -- construction -----------------------------------------------------
    def _base_spec(self) -> ModelSpec:
        if self.spec is not None:
            if not isinstance(self.spec, ModelSpec):
                raise TypeError("spec must be a ModelSpec")
            return self.spec
        form = FunctionalForm(self.curve_fun, bool(self.intrinsic))
        args = (self.traj_var, check_records(self.records), form)
        kw = dict(t_var=self.t_var, tics=check_names(self.growth_tic))
        if self.family == "LGCM":
            return ModelSpec.lgcm(*args, **kw)
        if self.family == "LCSM":
            return ModelSpec.lcsm(*args, **kw)
        raise ValueError(f"family must be 'LGCM' or 'LCSM' (or pass spec=), got {self.family!r}")

    def _model_spec(self) -> ModelSpec:
        return self._base_spec()

    def _config(self) -> FitConfig:
        return FitConfig(starts=self.starts, res_scale=self.res_scale, rand_scale=self.rand_scale,
                         rand_cor=self.rand_cor, joint_cor=self.joint_cor, tries=self.tries,
                         jitter_d=self.jitter_d, loc=self.loc, scale=self.scale,
                         ok_status_codes=tuple(self.ok_status_codes), max_iterations=self.max_iterations,
                         seed=self.seed, compute_se=self.compute_se)

    # -- estimator API ----------------------------------------------------
    def fit(self, X, y=None):
        spec = self._model_spec()
        data = check_dataset(X, spec, self.id_column)
        res = fit(spec, data, self._config())
        self.spec_ = spec
        self.fit_result_ = res
        self.estimates_ = res.user_estimates
        self.standard_errors_ = res.standard_errors
        self.status_code_ = res.status_code
        self.n_features_in_ = len(spec.roles().columns())
        return self

    def transform(self, X):
        """Regression factor scores, one row per individual."""
        check_fitted(self)
        data = check_dataset(X, self.spec_, self.id_column)
        return postfit.factor_scores(self.fit_result_, data).scores

    def score(self, X, y=None) -> float:
        """Mean log-likelihood per individual at the fitted parameters."""
        check_fitted(self)
        data = check_dataset(X, self.spec_, self.id_column)
        value = Objective(self.spec_, data)(self.fit_result_.estimates)
        return -0.5 * value / max(data.n_individuals, 1)

    @property
    def feature_names_(self) -> tuple[str, ...]:
        check_fitted(self)
        return tuple(self.spec_.latent_names())

    def derived_parameters(self):
        check_fitted(self)
        return postfit.derived_params(self.fit_result_)

    @classmethod
    def from_fit(cls, result: FitResult) -> "LatentGrowthModel":
        est = cls(spec=result.spec)
        est.spec_ = result.spec
        est.fit_result_ = result
        est.estimates_ = result.user_estimates
        est.standard_errors_ = result.standard_errors
        est.status_code_ = result.status_code
        return est


class GrowthMixtureModel(ClusterMixin, LatentGrowthModel):
    """Growth mixture model; ``predict`` returns the 1-based modal class."""

    def __init__(self, n_classes=2, cluster_tic=(), tie=(), spec=None, family="LGCM", traj_var="Y",
                 records=(1, 2, 3, 4, 5, 6), curve_fun="linear", intrinsic=False, t_var="T", growth_tic=(),
                 id_column=None, starts=None, res_scale=0.1, rand_scale=1.0, rand_cor=0.3, joint_cor=0.3,
                 tries=None, jitter_d="runif", loc=1.0, scale=0.25, ok_status_codes=(0,), max_iterations=500,
                 seed=0, compute_se=True):
        super().__init__(spec=spec, family=family, traj_var=traj_var, records=records, curve_fun=curve_fun,
                         intrinsic=intrinsic, t_var=t_var, growth_tic=growth_tic, id_column=id_column,
                         starts=starts, res_scale=res_scale, rand_scale=rand_scale, rand_cor=rand_cor,
                         joint_cor=joint_cor, tries=tries, jitter_d=jitter_d, loc=loc, scale=scale,
                         ok_status_codes=ok_status_codes, max_iterations=max_iterations, seed=seed,
                         compute_se=compute_se)
        self.n_classes = n_classes
        self.cluster_tic = cluster_tic
        self.tie = tie

    def _model_spec(self) -> ModelSpec:
        if int(self.n_classes) < 2:
            raise ValueError("n_classes must be at least 2; use LatentGrowthModel for one class")
        base = self._base_spec()
        if base.family == "mixture":
            return base
        return ModelSpec.mixture_of(base, int(self.n_classes), check_names(self.cluster_tic), check_names(self.tie))

    def fit(self, X, y=None):
        super().fit(X, y)
        data = check_dataset(X, self.spec_, self.id_column)
        self.labels_ = postfit.posterior_classify(self.fit_result_, data).modal
        return self

    def predict_proba(self, X) -> np.ndarray:
        check_fitted(self)
        data = check_dataset(X, self.spec_, self.id_column)
        return postfit.posterior_classify(self.fit_result_, data).probs

    def predict(self, X) -> np.ndarray:
        check_fitted(self)
        data = check_dataset(X, self.spec_, self.id_column)
        return postfit.posterior_classify(self.fit_result_, data).modal
