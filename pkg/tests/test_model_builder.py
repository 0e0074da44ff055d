import numpy as np
import pytest

from helpers import lgcm_truth, make_dataset, mediation_truth, mgm_truth, mixture_truth, tvc_truth
from nlgrowth.dataset import LongitudinalDataset
from nlgrowth.exceptions import ClassIndexOutOfRange, RoleMismatch
from nlgrowth.model_builder import (
    CompiledModel, ModelSpec, build_structural, class_probabilities, class_submodel, implied_moments,
    parameter_template, state_weights,
)
from nlgrowth.params import set_cov_block

T = np.array([0.0, 0.9, 2.1, 3.0, 3.8, 5.2])


def one(values, times=T, tics=None, extra=None, missing=()):
    vals = {}
    for k in values:
        a = np.arange(len(times), dtype=float)[None, :] + 1.0
        for (var, j) in missing:
            if var == k:
                a[0, j] = np.nan
        vals[k] = a
    return make_dataset(vals, np.asarray(times, dtype=float)[None, :], tics=tics, extra=extra)


def moments(spec, ps, ds):
    mu, S = CompiledModel.from_dataset(spec, ds).moments(ps.values())
    return mu[0], S[0]


FAMILIES = {
    "lgcm-jb": (lambda: lgcm_truth("jenss_bayley"), ["Y"], None, None),
    "lgcm-bilinear-intrinsic": (lambda: lgcm_truth("bilinear_spline", intrinsic=True), ["Y"], None, None),
    "lcsm-nonparametric": (lambda: lgcm_truth("nonparametric", model="LCSM"), ["Y"], None, None),
    "lcsm-negexp-intrinsic": (lambda: lgcm_truth("neg_exponential", True, "LCSM"), ["Y"], None, None),
    "lgcm-tic": (lambda: lgcm_truth("quadratic", tics=("x",)), ["Y"], {"x": [0.3]}, None),
    "tvc0": (lambda: tvc_truth(0), ["Y"], None, {f"X{j}": [float(j)] for j in range(1, 7)}),
    "tvc3": (lambda: tvc_truth(3), ["Y", "X"], None, None),
    "mgm": (lambda: mgm_truth(), ["Y", "Z"], None, None),
    "med-baseline": (lambda: mediation_truth("linear"), ["M", "Y"], {"X": [0.1]}, None),
    "med-longitudinal": (lambda: mediation_truth("bilinear_spline", True), ["X", "M", "Y"], None, None),
}


class TestExamples:
    def test_linear_means(self):
        spec = ModelSpec.lgcm("Y", (1, 2, 3), "linear")
        ps = parameter_template(spec)
        ps.set("Y.eta0.mean", 10.0).set("Y.eta1.mean", 2.0)
        mu, _ = moments(spec, ps, one(["Y"], times=[0.0, 1.0, 2.0]))
        np.testing.assert_allclose(mu, [10.0, 12.0, 14.0])

    def test_zero_psi_unit_theta_gives_identity(self):
        spec = ModelSpec.lgcm("Y", (1, 2, 3), "linear")
        ps = parameter_template(spec)
        for n in ps:
            if ".psi.chol." in n:
                ps.set(n, 0.0)
        ps.set("Y.theta", 1.0)
        _, S = moments(spec, ps, one(["Y"], times=[0.0, 1.0, 2.0]))
        np.testing.assert_array_equal(S, np.eye(3))

    def test_linear_covariance_by_hand(self):
        spec, ps = lgcm_truth("linear")
        _, S = moments(spec, ps, one(["Y"]))
        psi = np.array([[25.0, 1.5], [1.5, 1.0]])
        lam = np.column_stack([np.ones(6), T])
        np.testing.assert_allclose(S, lam @ psi @ lam.T + np.eye(6), rtol=1e-12)

    def test_tvc0_with_zero_kappa_equals_base(self):
        spec, ps = tvc_truth(0)
        ps.set("kappa", 0.0)
        ds = one(["Y"], extra={f"X{j}": [3.0 * j] for j in range(1, 7)})
        base_spec, base = lgcm_truth("linear")
        mu, S = moments(spec, ps, ds)
        mu0, S0 = moments(base_spec, base, ds)
        np.testing.assert_allclose(mu, mu0, rtol=1e-14)
        np.testing.assert_allclose(S, S0, rtol=1e-14)

    def test_tvc0_offsets_means_only(self):
        spec, ps = tvc_truth(0)
        x = {f"X{j}": [float(j)] for j in range(1, 7)}
        mu, S = moments(spec, ps, one(["Y"], extra=x))
        ps.set("kappa", 0.0)
        mu0, S0 = moments(spec, ps, one(["Y"], extra=x))
        np.testing.assert_allclose(mu - mu0, 0.8 * np.arange(1, 7), rtol=1e-12)
        np.testing.assert_array_equal(S, S0)

    def test_state_weight_example(self):
        t = np.array([0.0, 1.0, 2.0])
        np.testing.assert_allclose(state_weights(3, t, [1.0]), [0.0, 1.0, 2.0])
        np.testing.assert_allclose(state_weights(1, t, [1.0]), [0.0, 1.0, 1.0])

    def test_mediation_without_paths_is_independent(self):
        spec, ps = mediation_truth("linear", path=0.0)
        mu, S = moments(spec, ps, one(["M", "Y"], tics={"X": [0.0]}))
        np.testing.assert_array_equal(S[:6, 6:12], 0.0)
        np.testing.assert_array_equal(S[:12, 12], 0.0)
        single, sp = lgcm_truth("linear", variable="M")
        for f, v in (("eta0", 10.0), ("eta1", 1.0)):
            sp.set(f"M.{f}.mean", v)
        set_cov_block(sp, "M.psi", np.eye(2))
        m0, S0 = moments(single, sp, one(["M"]))
        np.testing.assert_allclose(mu[:6], m0, rtol=1e-14)
        np.testing.assert_allclose(S[:6, :6], S0, rtol=1e-14)

    def test_tic_regression_adds_variance(self):
        spec, ps = lgcm_truth("linear", tics=("x",))
        _, S = moments(spec, ps, one(["Y"], tics={"x": [0.0]}))
        phi = ps["tic.phi.chol.0.0"] ** 2
        np.testing.assert_allclose(S[:6, 6], 1.2 * phi, rtol=1e-12)
        assert S[6, 6] == pytest.approx(phi)


class TestInvariants:
    @pytest.mark.parametrize("name", sorted(FAMILIES))
    def test_sigma_symmetric_psd(self, name):
        make, vars_, tics, extra = FAMILIES[name]
        spec, ps = make()
        _, S = moments(spec, ps, one(vars_, tics=tics, extra=extra))
        np.testing.assert_allclose(S, S.T, rtol=0, atol=1e-12)
        assert np.linalg.eigvalsh(S).min() > 0

    @pytest.mark.parametrize("name", sorted(FAMILIES))
    def test_reticular_path_matches_batched(self, name):
        make, vars_, tics, extra = FAMILIES[name]
        spec, ps = make()
        ds = one(vars_, tics=tics, extra=extra)
        mu, S = moments(spec, ps, ds)
        im = implied_moments(build_structural(spec, ps, ds.record(0)))
        np.testing.assert_allclose(im.mean, mu, rtol=1e-10, atol=1e-10)
        np.testing.assert_allclose(im.cov, S, rtol=1e-10, atol=1e-10)

    def test_reticular_mask_selects_observed(self):
        spec, ps = lgcm_truth("quadratic")
        ds = one(["Y"], missing=[("Y", 2)])
        im = implied_moments(build_structural(spec, ps, ds.record(0)))
        mu, S = moments(spec, ps, one(["Y"]))
        keep = [0, 1, 3, 4, 5]
        np.testing.assert_allclose(im.mean, mu[keep], rtol=1e-12)
        np.testing.assert_allclose(im.cov, S[np.ix_(keep, keep)], rtol=1e-12)
        assert im.observed == ("Y1", "Y2", "Y4", "Y5", "Y6")

    @pytest.mark.parametrize("kind,model", [("neg_exponential", "LGCM"), ("jenss_bayley", "LGCM"),
                                            ("bilinear_spline", "LGCM"), ("jenss_bayley", "LCSM")])
    def test_intrinsic_with_fixed_deviation_reproduces_reduced(self, kind, model):
        spec, ps = lgcm_truth(kind, intrinsic=True, model=model)
        k = len(spec.processes[0].factors) - 1
        for j in range(k + 1):
            ps.set(f"Y.psi.chol.{k}.{j}", 0.0)
        red_spec, red = lgcm_truth(kind, model=model)
        mu, S = moments(spec, ps, one(["Y"]))
        mu0, S0 = moments(red_spec, red, one(["Y"]))
        np.testing.assert_allclose(mu, mu0, rtol=1e-12)
        np.testing.assert_allclose(S, S0, rtol=1e-12)

    def test_mgm_zero_cross_blocks_is_block_diagonal(self):
        spec, ps = mgm_truth()
        psi = np.diag([25.0, 1.0, 9.0, 1.0])
        psi[0, 1] = psi[1, 0] = 1.5
        set_cov_block(ps, "psi", psi)
        set_cov_block(ps, "res", np.eye(2))
        _, S = moments(spec, ps, one(["Y", "Z"]))
        np.testing.assert_array_equal(S[:6, 6:], 0.0)

    def test_mgm_residual_covariance_only_on_shared_records(self):
        spec, ps = mgm_truth(records=((1, 2, 3, 4, 5, 6), (2, 3, 4, 5, 6)))
        set_cov_block(ps, "psi", np.diag([25.0, 1.0, 9.0, 1.0]))
        vals = {"Y": np.ones((1, 6)), "Z": np.ones((1, 6))}
        ds = make_dataset(vals, T[None, :])
        ds = LongitudinalDataset(ds.ids, spec.roles(), {c: a.copy() for c, a in ds.numeric.items() if c != "Z1"})
        _, S = moments(spec, ps, ds)
        # Z2 sits in slot 6 and shares record 2 with Y2 (slot 1)
        assert S[1, 6] == pytest.approx(0.3)
        assert S[0, 6] == 0.0

    def test_tvc_weight_relations(self):
        rng = np.random.default_rng(3)
        t = np.cumsum(rng.uniform(0.5, 1.5, size=(4, 6)), axis=1)
        rates = [0.9, 0.8, 1.1, 0.7]
        w1, w2, w3 = (state_weights(k, t, rates) for k in (1, 2, 3))
        np.testing.assert_allclose(w2[:, 1:], w1[:, 1:] * np.diff(t, axis=1), rtol=1e-14)
        np.testing.assert_allclose(w3, np.cumsum(w2, axis=1), rtol=1e-14)
        assert np.all(w1[:, 0] == 0) and np.all(w3[:, 0] == 0)

    def test_nested_template(self):
        full, _ = lgcm_truth("jenss_bayley", intrinsic=True)
        red, _ = lgcm_truth("jenss_bayley")
        assert set(parameter_template(red)) < set(parameter_template(full))


class TestClassProbabilities:
    def test_equal_logits(self):
        p = class_probabilities({"c2.logit.0": 0.0, "c3.logit.0": 0.0})
        np.testing.assert_allclose(p, [1 / 3] * 3)

    def test_log_three(self):
        np.testing.assert_allclose(class_probabilities({"c2.logit.0": np.log(3.0)}), [0.25, 0.75])

    def test_extreme_logits_stable(self):
        for z, expect in ((800.0, [0.0, 1.0]), (-800.0, [1.0, 0.0])):
            p = class_probabilities({"c2.logit.0": z})
            assert np.all(np.isfinite(p))
            np.testing.assert_allclose(p, expect, atol=1e-300)

    def test_covariate_logits(self):
        v = {"c2.logit.0": 0.0, "c2.logit.x": 1.0}
        p = class_probabilities(v, X_class=np.array([[0.0], [np.log(3.0)]]), class_tics=("x",))
        np.testing.assert_allclose(p, [[0.5, 0.5], [0.25, 0.75]])

    def test_single_class_rejected(self):
        with pytest.raises(ValueError):
            class_probabilities({}, G=1)

    def test_class_submodel(self):
        spec, ps = mixture_truth()
        sub, slice_ = class_submodel(spec, 2, ps)
        assert sub.family == "LGCM"
        assert slice_["Y.eta0.mean"] == 55.0
        with pytest.raises(ClassIndexOutOfRange):
            class_submodel(spec, 3, ps)
        with pytest.raises(RoleMismatch):
            build_structural(spec, ps, one(["Y"]).record(0))

    def test_mixture_needs_two_classes(self):
        with pytest.raises(ValueError):
            ModelSpec.mixture_of(ModelSpec.lgcm("Y", (1, 2, 3), "linear"), 1)
