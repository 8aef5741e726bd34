"""Ensembles, intervals, coverage, and the mixture log score."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from confbb import (
    InvalidParameter,
    PredictionInterval,
    PredictiveEnsemble,
    ShapeError,
    average_log_score,
    build_ensemble,
    empirical_coverage,
    influence_pack,
    interval,
    log_score,
)
from confbb.bootstrap import dirichlet_rows, linearized_prediction, perturb_parameters
from confbb.models import predict
from confbb.predictive import effective_scale, mixture_logpdf


def ens(samples, sigma=0.0, alpha=1.0, floor=0.0):
    return PredictiveEnsemble(np.asarray(samples, dtype=float), sigma, alpha, np.zeros(1), floor)


@pytest.fixture(scope="module")
def linear_setup():
    rng = np.random.default_rng(100)
    from confbb import Dataset, ModelSpec, fit_erm

    x = rng.standard_normal((40, 2))
    y = x @ np.array([1.0, -1.0]) + 0.3 * rng.standard_normal(40)
    m = fit_erm(ModelSpec(kind="linear", fit_intercept=False), Dataset(x, y, "train"))
    return m, influence_pack(m)


class TestBuildEnsemble:
    def test_matches_literal_composition(self, linear_setup):
        m, pack = linear_setup
        x = np.array([0.4, -1.2])
        e = build_ensemble(m, pack, x, 0.8, 50, np.random.default_rng(9))
        w = dirichlet_rows(0.8, m.n_train, 50, np.random.default_rng(9))
        manual = np.array(
            [linearized_prediction(m, x, perturb_parameters(pack, m.theta_hat, w[b])) for b in range(50)]
        )
        assert e.samples == pytest.approx(manual, rel=1e-9, abs=1e-12)

    def test_huge_alpha_collapses(self, linear_setup):
        m, pack = linear_setup
        x = np.array([0.5, 0.5])
        e = build_ensemble(m, pack, x, 1e8, 200, np.random.default_rng(1))
        assert e.samples.std() <= 1e-3 * abs(predict(m, x)) + 1e-6

    def test_mean_is_unbiased(self, linear_setup):
        m, pack = linear_setup
        x = np.array([1.0, 2.0])
        e = build_ensemble(m, pack, x, 1.0, 4000, np.random.default_rng(3))
        mc_err = 3 * e.samples.std() / np.sqrt(e.size)
        assert abs(e.samples.mean() - predict(m, x)) <= mc_err

    def test_scalar_mean_sd_matches_brute_force(self):
        from confbb import Dataset, ModelSpec, fit_erm

        ds = Dataset(np.zeros((3, 0)), np.array([1.0, 2.0, 3.0]), "train")
        m = fit_erm(ModelSpec(kind="linear"), ds)
        pack = influence_pack(m)
        e = build_ensemble(m, pack, np.zeros(0), 1.0, 10_000, np.random.default_rng(8))
        w = dirichlet_rows(1.0, 3, 100_000, np.random.default_rng(9))
        brute = w @ np.array([1.0, 2.0, 3.0])
        assert e.samples.std() == pytest.approx(brute.std(), rel=0.05)

    def test_validation(self, linear_setup):
        m, pack = linear_setup
        rng = np.random.default_rng(0)
        with pytest.raises(InvalidParameter):
            build_ensemble(m, pack, np.zeros(2), 1.0, 1, rng)
        with pytest.raises(InvalidParameter):
            build_ensemble(m, pack, np.zeros(2), 0.0, 10, rng)
        with pytest.raises(ShapeError):
            build_ensemble(m, pack, np.zeros(3), 1.0, 10, rng)

    def test_determinism(self, linear_setup):
        m, pack = linear_setup
        x = np.array([0.1, 0.2])
        a = build_ensemble(m, pack, x, 1.0, 64, np.random.default_rng(5)).samples
        b = build_ensemble(m, pack, x, 1.0, 64, np.random.default_rng(5)).samples
        assert np.array_equal(a, b)


class TestInterval:
    def test_hand_computed_quantiles(self):
        # samples 1..10 at level 0.9: positions 0.45 and 8.55 between order stats
        e = ens(np.arange(1.0, 11.0))
        iv = interval(e, 0.9, include_noise=False)
        assert iv.lo == pytest.approx(1.45)
        assert iv.hi == pytest.approx(9.55)

    def test_constant_samples_degenerate(self):
        iv = interval(ens(np.full(20, 3.3)), 0.5, include_noise=False)
        assert (iv.lo, iv.hi) == (pytest.approx(3.3), pytest.approx(3.3))

    def test_noise_widens_on_average(self):
        base = ens(np.linspace(-1, 1, 200), sigma=0.5)
        widths_on, widths_off = [], []
        for seed in range(100):
            on = interval(base, 0.9, include_noise=True, rng=np.random.default_rng(seed))
            off = interval(base, 0.9, include_noise=False)
            widths_on.append(on.hi - on.lo)
            widths_off.append(off.hi - off.lo)
        assert np.mean(widths_on) > np.mean(widths_off)

    def test_level_validation(self):
        with pytest.raises(InvalidParameter):
            interval(ens([1.0, 2.0]), 1.0, include_noise=False)
        with pytest.raises(InvalidParameter):
            interval(ens([1.0, 2.0]), 0.0, include_noise=False)

    def test_noise_requires_rng(self):
        with pytest.raises(InvalidParameter):
            interval(ens([1.0, 2.0], sigma=1.0), 0.5, include_noise=True)

    @given(level_pair=st.tuples(st.floats(0.05, 0.9), st.floats(0.05, 0.9)), seed=st.integers(0, 10_000))
    @settings(max_examples=50, deadline=None)
    def test_nested_levels(self, level_pair, seed):
        l1, l2 = sorted(level_pair)
        if l1 == l2:
            return
        samples = np.random.default_rng(seed).standard_normal(50)
        e = ens(samples)
        inner = interval(e, l1, include_noise=False)
        outer = interval(e, l2, include_noise=False)
        assert outer.lo <= inner.lo and inner.hi <= outer.hi


class TestEmpiricalCoverage:
    def test_all_inside(self):
        ivs = [PredictionInterval(0.0, 1.0, 0.9)] * 3
        assert empirical_coverage(ivs, [0.1, 0.5, 0.9]) == 1.0

    def test_half_inside(self):
        ivs = [PredictionInterval(0.0, 1.0, 0.9)] * 4
        assert empirical_coverage(ivs, [0.5, 0.5, 2.0, 2.0]) == 0.5

    def test_39_of_40(self):
        ivs = [PredictionInterval(0.0, 1.0, 0.9)] * 40
        targets = np.full(40, 0.5)
        targets[-1] = 5.0
        assert empirical_coverage(ivs, targets) == pytest.approx(0.975)

    def test_validation(self):
        ivs = [PredictionInterval(0.0, 1.0, 0.9)]
        with pytest.raises(ShapeError):
            empirical_coverage(ivs, [0.5, 0.5])
        with pytest.raises(InvalidParameter):
            empirical_coverage([], [])


class TestLogScore:
    def test_standard_normal_point(self):
        e = ens([0.0], sigma=1.0)
        assert log_score(e, 0.0) == pytest.approx(-0.5 * np.log(2 * np.pi))

    def test_two_component_symmetry(self):
        e = ens([-1.0, 1.0], sigma=1.0)
        expected = -0.5 - 0.5 * np.log(2 * np.pi)  # density phi(1) at either center
        assert log_score(e, 0.0) == pytest.approx(expected)

    def test_translation_invariance(self):
        rng = np.random.default_rng(2)
        samples = rng.standard_normal(30)
        for c in (-5.0, 0.3, 12.0):
            a = log_score(ens(samples, sigma=0.7), 0.4)
            b = log_score(ens(samples + c, sigma=0.7), 0.4 + c)
            assert b == pytest.approx(a, abs=1e-9)

    def test_floor_prevents_minus_inf(self):
        e = ens([1.0, 1.0], sigma=0.0, floor=0.0)
        assert np.isfinite(log_score(e, 2.0))

    def test_scale_floor_applies(self):
        e = ens([0.0], sigma=1e-9, floor=0.25)
        assert effective_scale(e) == 0.25

    def test_density_integrates_to_one(self):
        rng = np.random.default_rng(4)
        for _ in range(5):
            samples = rng.standard_normal(rng.integers(2, 30))
            s = float(rng.uniform(0.1, 2.0))
            total, _ = quad(
                lambda y: np.exp(mixture_logpdf(samples, s, y)),
                samples.min() - 6 * s,
                samples.max() + 6 * s,
                limit=200,
            )
            assert total == pytest.approx(1.0, abs=1e-3)


class TestAverageLogScore:
    def test_single_point(self):
        e = ens([0.0], sigma=1.0)
        assert average_log_score([e], [0.0]) == pytest.approx(log_score(e, 0.0))

    def test_two_points_mean(self):
        e1, e2 = ens([0.0], sigma=1.0), ens([1.0], sigma=2.0)
        a, b = log_score(e1, 0.3), log_score(e2, -0.2)
        assert average_log_score([e1, e2], [0.3, -0.2]) == pytest.approx((a + b) / 2)

    def test_validation(self):
        with pytest.raises(ShapeError):
            average_log_score([ens([1.0])], [1.0, 2.0])
        with pytest.raises(InvalidParameter):
            average_log_score([], [])


class TestEnsembleCollapseRate:
    def test_variance_tracks_dirichlet_rate(self, linear_setup):
        # Var(w_i) = (n-1)/(n^2 (n alpha + 1)) pushes through the linear map,
        # so ensemble variance should scale like 1/(n alpha + 1).
        m, pack = linear_setup
        x = np.array([0.7, -0.3])
        n = m.n_train
        variances = {}
        for alpha in (1.0, 4.0, 16.0):
            e = build_ensemble(m, pack, x, alpha, 6000, np.random.default_rng(12))
            variances[alpha] = e.samples.var()
        for a1, a2 in ((1.0, 4.0), (4.0, 16.0)):
            expected = (n * a1 + 1.0) / (n * a2 + 1.0)
            observed = variances[a2] / variances[a1]
            assert observed == pytest.approx(expected, rel=0.15)
