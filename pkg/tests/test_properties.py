import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from helpers import WAVES, jittered_times, lgcm_truth, make_dataset
from nlgrowth.cli import parse_records
from nlgrowth.curves import knot_forward, knot_inverse
from nlgrowth.estimator import FitConfig, jitter
from nlgrowth.fiml import neg2ll_single
from nlgrowth.postfit import posterior_from_log

finite = st.floats(-1e3, 1e3, allow_nan=False)
SETTINGS = settings(max_examples=40, deadline=None)


def random_panel(seed, n, missing):
    rng = np.random.default_rng(seed)
    spec, ps = lgcm_truth("quadratic")
    t = jittered_times(rng, n)
    y = 50 + 5 * t + rng.normal(scale=3.0, size=t.shape)
    y[rng.random(y.shape) < missing] = np.nan
    return spec, ps, y, t


class TestKnotMap:
    @SETTINGS
    @given(finite, finite, finite, st.floats(0.1, 10.0))
    def test_round_trip(self, a, b, c, gamma):
        back = knot_inverse(*knot_forward(a, b, c, gamma), gamma)
        np.testing.assert_allclose(back, (a, b, c), rtol=1e-12, atol=1e-9)


class TestLikelihood:
    @SETTINGS
    @given(st.integers(0, 2**32 - 1), st.integers(2, 25), st.floats(0.0, 0.6))
    def test_row_permutation(self, seed, n, missing):
        spec, ps, y, t = random_panel(seed, n, missing)
        perm = np.random.default_rng(seed + 1).permutation(n)
        a = neg2ll_single(spec, ps, make_dataset({"Y": y}, t))
        b = neg2ll_single(spec, ps, make_dataset({"Y": y[perm]}, t[perm]))
        np.testing.assert_allclose(b.per_individual, a.per_individual[perm], rtol=1e-12)
        assert abs(a.minus_two_log_lik - b.minus_two_log_lik) <= 1e-9 * abs(a.minus_two_log_lik)

    @SETTINGS
    @given(st.integers(0, 2**32 - 1), st.integers(1, 15), st.integers(1, 5))
    def test_empty_rows_add_nothing(self, seed, n, extra):
        spec, ps, y, t = random_panel(seed, n, 0.2)
        y2 = np.vstack([y, np.full((extra, len(WAVES)), np.nan)])
        t2 = np.vstack([t, np.tile(WAVES, (extra, 1))])
        a = neg2ll_single(spec, ps, make_dataset({"Y": y}, t))
        b = neg2ll_single(spec, ps, make_dataset({"Y": y2}, t2))
        assert np.all(b.per_individual[n:] == 0.0)
        np.testing.assert_array_equal(b.per_individual[:n], a.per_individual)


class TestPosterior:
    @SETTINGS
    @given(arrays(float, (6, 3), elements=st.floats(-50, 50)), arrays(float, (6, 3), elements=st.floats(-800, 0)),
           st.floats(-1e3, 1e3))
    def test_rows_normalised_and_shift_invariant(self, prior, dens, shift):
        p = posterior_from_log(prior, dens)
        np.testing.assert_allclose(p.probs.sum(axis=1), 1.0, atol=1e-12)
        assert np.all(p.probs >= 0)
        q = posterior_from_log(prior + shift, dens)
        np.testing.assert_allclose(q.probs, p.probs, atol=1e-9)
        assert np.all((p.modal >= 1) & (p.modal <= 3))


class TestJitter:
    @SETTINGS
    @given(st.integers(0, 2**32 - 1), st.floats(0.0, 0.9), st.sampled_from(["runif", "rnorm", "rcauchy"]))
    def test_positivity_kept(self, seed, scale, dist):
        _, ps = lgcm_truth("neg_exponential")
        out = jitter(ps, FitConfig(jitter_d=dist, scale=scale), np.random.default_rng(seed))
        for name, pos in zip(out.free_names, out.positive_mask()):
            assert np.isfinite(out[name])
            if pos:
                assert out[name] > 0


class TestRecords:
    @SETTINGS
    @given(st.integers(1, 50), st.integers(0, 30))
    def test_range_syntax(self, a, k):
        assert parse_records(f"{a}:{a + k}") == [tuple(range(a, a + k + 1))]
        assert parse_records(",".join(map(str, range(a, a + k + 1)))) == [tuple(range(a, a + k + 1))]
