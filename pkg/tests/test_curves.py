import math

import numpy as np
import pytest

from nlgrowth.curves import (
    FunctionalForm, full_rates, knot_forward, knot_forward_jacobian, knot_inverse, knot_inverse_jacobian,
    knot_reparam_inverse, lcsm_loading_row, lcsm_loadings, lgcm_loading_row, lgcm_loadings, mediation_loadings,
    true_trajectory,
)
from nlgrowth.exceptions import MissingShapeParameter, NonMonotoneTimes


class TestFunctionalForm:
    @pytest.mark.parametrize("kind", ["linear", "quadratic", "nonparametric"])
    def test_intrinsic_rejected(self, kind):
        with pytest.raises(ValueError):
            FunctionalForm(kind, intrinsic=True)

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            FunctionalForm("cubic")

    def test_aliases(self):
        assert FunctionalForm("negative_exponential").kind == "neg_exponential"
        assert FunctionalForm("bilinear").kind == "bilinear_spline"

    def test_deviation_factor_last(self):
        assert FunctionalForm("jenss_bayley", True).factor_names() == ("eta0", "eta1", "eta2", "dc")
        assert FunctionalForm("bilinear_spline").factor_names() == ("eta0p", "eta1p", "eta2p")


class TestLgcmLoadings:
    def test_linear_at_zero(self):
        np.testing.assert_array_equal(lgcm_loading_row(FunctionalForm("linear"), 0.0), [1.0, 0.0])

    def test_bilinear_reduced(self):
        f = FunctionalForm("bilinear_spline")
        np.testing.assert_array_equal(lgcm_loading_row(f, 1.0, {"gamma": 2.0}), [1, -1, 1])
        np.testing.assert_array_equal(lgcm_loading_row(f, 3.0, {"gamma": 2.0}), [1, 1, 1])

    def test_neg_exponential_reduced(self):
        row = lgcm_loading_row(FunctionalForm("neg_exponential"), 2.0, {"b": 0.5})
        np.testing.assert_allclose(row, [1.0, 1 - math.exp(-1)], rtol=1e-12)
        assert row[1] == pytest.approx(0.6321, abs=1e-4)

    def test_neg_exponential_intrinsic_column(self):
        row = lgcm_loading_row(FunctionalForm("neg_exponential", True), 2.0, {"mu_b": 0.5, "mu_eta1": 10.0})
        assert row[2] == pytest.approx(10 * math.exp(-1) * 2, rel=1e-12)
        assert row[2] == pytest.approx(7.3576, abs=1e-4)

    def test_missing_shape(self):
        with pytest.raises(MissingShapeParameter):
            lgcm_loading_row(FunctionalForm("neg_exponential"), 1.0, {})
        with pytest.raises(MissingShapeParameter):
            lgcm_loading_row(FunctionalForm("jenss_bayley", True), 1.0, {"c": -0.5})

    @pytest.mark.parametrize("kind,shape", [
        ("neg_exponential", {"b": 0.7, "mu_eta1": 12.0}),
        ("jenss_bayley", {"c": -0.6, "mu_eta2": -8.0}),
        ("bilinear_spline", {"gamma": 2.3, "mu_eta2": 1.5}),
    ])
    def test_intrinsic_extends_reduced(self, kind, shape):
        t = np.linspace(0, 6, 25)
        red = lgcm_loadings(FunctionalForm(kind), t, shape)
        full = lgcm_loadings(FunctionalForm(kind, True), t, shape)
        np.testing.assert_array_equal(full[:, :-1], red)

    @pytest.mark.parametrize("kind,coefs,shape", [
        ("neg_exponential", {"eta0": 3.0, "eta1": 10.0, "b": 0.6}, "b"),
        ("jenss_bayley", {"eta0": 3.0, "eta1": 1.0, "eta2": -4.0, "c": -0.5}, "c"),
    ])
    def test_taylor_column_is_shape_derivative(self, kind, coefs, shape):
        """The deviation column equals d(curve)/d(shape) at the mean, by finite differences."""
        form = FunctionalForm(kind, True)
        t = np.linspace(0.1, 5, 9)
        key = "mu_eta1" if kind == "neg_exponential" else "mu_eta2"
        growth = coefs["eta1"] if kind == "neg_exponential" else coefs["eta2"]
        col = lgcm_loadings(form, t, {shape: coefs[shape], key: growth})[:, -1]
        h = 1e-6
        up = true_trajectory(FunctionalForm(kind), t, {**coefs, shape: coefs[shape] + h})
        dn = true_trajectory(FunctionalForm(kind), t, {**coefs, shape: coefs[shape] - h})
        np.testing.assert_allclose(col, (up - dn) / (2 * h), rtol=1e-6)

    def test_bilinear_taylor_column_kink(self):
        f = FunctionalForm("bilinear_spline", True)
        row = lgcm_loading_row(f, 2.0, {"gamma": 2.0, "mu_eta2": 1.5})
        assert row[-1] == pytest.approx(-1.5)
        assert lgcm_loading_row(f, 1.0, {"gamma": 2.0, "mu_eta2": 1.5})[-1] == pytest.approx(0.0)
        assert lgcm_loading_row(f, 3.0, {"gamma": 2.0, "mu_eta2": 1.5})[-1] == pytest.approx(-3.0)

    def test_first_entry_is_one(self):
        t = np.random.default_rng(1).uniform(0, 5, 20)
        for kind, shape in [("linear", {}), ("quadratic", {}), ("neg_exponential", {"b": 0.3}),
                            ("jenss_bayley", {"c": -0.3}), ("bilinear_spline", {"gamma": 2.0})]:
            assert np.all(lgcm_loadings(FunctionalForm(kind), t, shape)[:, 0] == 1.0)

    def test_nonparametric_rejected_for_lgcm(self):
        with pytest.raises(ValueError):
            lgcm_loadings(FunctionalForm("nonparametric"), [0.0, 1.0])


class TestLcsmLoadings:
    @pytest.mark.parametrize("kind,shape", [("quadratic", {}), ("neg_exponential", {"b": 0.5}),
                                            ("jenss_bayley", {"c": -0.5}), ("nonparametric", {"rates": [0.8]})])
    def test_first_row(self, kind, shape):
        f = FunctionalForm(kind)
        row = lcsm_loading_row(f, [0.0], shape)
        np.testing.assert_array_equal(row, np.eye(f.n_factors)[0])

    def test_quadratic_two_waves(self):
        np.testing.assert_allclose(lcsm_loading_row(FunctionalForm("quadratic"), [0.0, 1.0]), [1, 1, 1])

    def test_nonparametric_three_waves(self):
        g2 = 0.7
        row = lcsm_loading_row(FunctionalForm("nonparametric"), [0.0, 1.0, 3.0], {"rates": [g2]})
        np.testing.assert_allclose(row, [1.0, 1.0 + 2 * g2])

    def test_non_monotone(self):
        with pytest.raises(NonMonotoneTimes):
            lcsm_loadings(FunctionalForm("quadratic"), [0.0, 2.0, 1.0])

    def test_quadratic_is_exact(self):
        """Midpoint slopes integrate a quadratic exactly."""
        t = np.array([0.0, 0.7, 1.9, 3.2, 4.0])
        lam = lcsm_loadings(FunctionalForm("quadratic"), t)
        eta = np.array([2.0, 1.5, -0.2])
        np.testing.assert_allclose(lam @ eta, eta[0] + eta[1] * (t - t[0]) + eta[2] * (t**2 - t[0] ** 2), rtol=1e-12)

    def test_cumulative_rows(self):
        t = np.array([0.0, 1.0, 2.5, 3.0, 5.0])
        lam = lcsm_loadings(FunctionalForm("neg_exponential"), t, {"b": 0.4})
        d = np.diff(lam, axis=0)
        assert np.all(d[:, 0] == 0.0) and np.all(d[:, 1:] >= 0.0)

    def test_midpoint_recursion(self):
        """Independent recursion: y_j = y_{j-1} + slope(mid_j) * dt_j."""
        t = np.array([0.1, 1.2, 1.9, 3.3])
        b, e0, e1 = 0.6, 4.0, 9.0
        lam = lcsm_loadings(FunctionalForm("neg_exponential"), t, {"b": b})
        y = [e0]
        for j in range(1, t.size):
            mid = 0.5 * (t[j] + t[j - 1])
            y.append(y[-1] + e1 * b * math.exp(-b * mid) * (t[j] - t[j - 1]))
        np.testing.assert_allclose(lam @ [e0, e1], y, rtol=1e-12)

    def test_full_rates(self):
        np.testing.assert_array_equal(full_rates({"rates": [0.5, 0.4]}, 3), [1.0, 0.5, 0.4])
        np.testing.assert_array_equal(full_rates({"rates": [0.5, 0.4]}, 2), [1.0, 0.5])
        with pytest.raises(MissingShapeParameter):
            full_rates({"rates": [0.5]}, 3)


class TestTrueTrajectory:
    def test_linear(self):
        assert true_trajectory(FunctionalForm("linear"), 3.0, {"eta0": 1.0, "eta1": 2.0}) == 7.0

    def test_bilinear_flat_after_knot(self):
        c = {"eta0": 0.0, "eta1": 1.0, "eta2": 0.0, "gamma": 2.0}
        assert true_trajectory(FunctionalForm("bilinear_spline"), 5.0, c) == 2.0

    def test_neg_exponential_asymptote(self):
        c = {"eta0": 0.0, "eta1": 10.0, "b": 0.5}
        assert true_trajectory(FunctionalForm("neg_exponential"), 200.0, c) == pytest.approx(10.0, abs=1e-12)

    def test_origin_shift(self):
        c = {"eta0": 1.0, "eta1": 10.0, "b": 0.5}
        assert true_trajectory(FunctionalForm("neg_exponential"), 0.3, c, origin=0.3) == pytest.approx(1.0)

    def test_linear_lgcm_matches_truth(self):
        t = np.linspace(-1, 4, 11)
        lam = lgcm_loadings(FunctionalForm("linear"), t)
        np.testing.assert_array_equal(lam @ [1.5, -0.5], true_trajectory(FunctionalForm("linear"), t,
                                                                        {"eta0": 1.5, "eta1": -0.5}))

    def test_bilinear_reparam_loadings_match_truth(self):
        t = np.linspace(0, 5, 21)
        e0, e1, e2, g = 50.0, 5.0, 2.0, 2.5
        ep = knot_forward(e0, e1, e2, g)
        lam = lgcm_loadings(FunctionalForm("bilinear_spline"), t, {"gamma": g})
        truth = true_trajectory(FunctionalForm("bilinear_spline"), t, {"eta0": e0, "eta1": e1, "eta2": e2, "gamma": g})
        np.testing.assert_allclose(lam @ np.array(ep), truth, rtol=1e-13)


class TestKnotMaps:
    def test_round_trip_example(self):
        out = knot_inverse(*knot_forward(1.0, 2.0, 3.0, 1.5), 1.5)
        np.testing.assert_allclose(out, (1.0, 2.0, 3.0), atol=1e-12)

    def test_gamma_zero(self):
        e0, e1, e2 = knot_inverse(4.0, 1.0, 0.5, 0.0)
        assert e0 == 4.0 and e1 == 0.5 and e2 == 1.5

    def test_jacobians_inverse(self):
        for g in (-1.0, 0.0, 2.7):
            np.testing.assert_allclose(knot_forward_jacobian(g) @ knot_inverse_jacobian(g), np.eye(3), atol=1e-14)

    def test_reparam_inverse_diag_cov(self):
        m, S = knot_reparam_inverse(np.zeros(3), np.eye(3), 0.0)
        assert S[1, 1] == pytest.approx(2.0) and S[2, 2] == pytest.approx(2.0) and S[1, 2] == pytest.approx(0.0)

    def test_reparam_inverse_monte_carlo(self):
        """Brute-force transform of MVN draws gives the same covariance (linear map: exact in expectation)."""
        rng = np.random.default_rng(3)
        draws = rng.standard_normal((1_000_000, 3))
        orig = np.column_stack(knot_inverse(draws[:, 0], draws[:, 1], draws[:, 2], 0.0))
        _, S = knot_reparam_inverse(np.zeros(3), np.eye(3), 0.0)
        np.testing.assert_allclose(np.cov(orig, rowvar=False), S, atol=0.01)

    def test_deviation_coordinate_passes_through(self):
        cov = np.diag([1.0, 2.0, 3.0, 0.25])
        m, S = knot_reparam_inverse([1.0, 2.0, 3.0, 0.0], cov, 1.0)
        assert m.shape == (4,) and S[3, 3] == 0.25 and m[3] == 0.0


class TestMediationLoadings:
    def test_linear(self):
        np.testing.assert_array_equal(mediation_loadings("linear", [0.0, 2.0]), [[1, 0], [1, 2]])

    def test_bilinear_min_max(self):
        lam = mediation_loadings("bilinear_spline", [1.0, 2.0, 4.0], 2.0)
        np.testing.assert_array_equal(lam, [[-1, 1, 0], [0, 1, 0], [0, 1, 2]])

    def test_bilinear_needs_gamma(self):
        with pytest.raises(MissingShapeParameter):
            mediation_loadings("bilinear_spline", [1.0])
