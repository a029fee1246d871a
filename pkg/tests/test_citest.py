"""CIT-LR: the paired test, the g/h estimators and the end-to-end procedure."""

import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate, special

from cfaudit import citest
from cfaudit.citest import CitConfig, CounterfactualDraws, InsufficientDataError, paired_t
from cfaudit.zoo import ConstantClassifier, ThresholdClassifier


def t_two_sided_quad(t, dof):
    """Two-sided tail of Student's t by direct quadrature of the density."""
    c = math.exp(special.gammaln((dof + 1) / 2) - special.gammaln(dof / 2)) / math.sqrt(dof * math.pi)
    tail, _ = integrate.quad(lambda s: c * (1 + s * s / dof) ** (-(dof + 1) / 2), abs(t), np.inf, epsabs=1e-13)
    return 2 * tail


class TestPairedT:
    def test_fixed_vector(self):
        d = [0.1, -0.2, 0.05, 0.0, 0.15]
        t, p, dof, degenerate = paired_t(d)
        # mean 0.02, sample variance 0.073 / 4
        assert t == pytest.approx(0.02 / math.sqrt(0.073 / 4 / 5), rel=1e-12)
        assert t == pytest.approx(0.33104, abs=1e-5)
        assert dof == 4 and not degenerate
        assert p == pytest.approx(t_two_sided_quad(t, 4), abs=1e-6)

    def test_zero_variance(self):
        assert paired_t(np.zeros(10)) == (0.0, 1.0, 9, True)
        # a constant that is not exactly representable still counts as zero spread
        assert paired_t(np.full(10, 0.3))[3]
        assert not paired_t(np.array([0.3] * 9 + [0.3 + 1e-9]))[3]

    @given(st.lists(st.floats(-1, 1), min_size=3, max_size=30))
    def test_sign_flip(self, d):
        d = np.asarray(d)
        t1, p1, _, deg = paired_t(d)
        t2, p2, _, _ = paired_t(-d)
        if not deg:
            assert t2 == pytest.approx(-t1)
            assert p2 == pytest.approx(p1)
            assert 0.0 <= p1 <= 1.0

    def test_too_few(self):
        with pytest.raises(InsufficientDataError):
            paired_t([1.0])


class TestProducts:
    def test_constant_products_degenerate(self):
        rep = citest.test_from_products(np.full(20, 0.7), np.full(20, 0.7))
        assert rep.p == 1.0 and rep.degenerate and not rep.reject

    def test_row_order_invariance(self):
        rng = np.random.default_rng(0)
        g, h = rng.uniform(size=50), rng.uniform(size=50)
        perm = rng.permutation(50)
        a, b = citest.test_from_products(g, h), citest.test_from_products(g[perm], h[perm])
        assert a.t == pytest.approx(b.t, rel=1e-12) and a.p == pytest.approx(b.p, rel=1e-12)

    def test_refuses_small_n(self):
        with pytest.raises(InsufficientDataError, match="power"):
            citest.test_from_products(np.zeros(7), np.ones(7))

    def test_json_nan_is_null(self):
        rep = citest.test_from_products(np.arange(10.0), np.arange(10.0) + np.linspace(0, 1, 10))
        rep.mu_az = float("nan")
        assert json.loads(rep.to_json())["mu_az"] is None


def test_marginalize():
    g = np.array([[0.2, 0.9], [1.0, 0.0]])
    np.testing.assert_allclose(citest.marginalize(g, [0.7, 0.3]), [0.7 * 0.2 + 0.3 * 0.9, 0.7])


def _draws(rng, rows, n_mc, shared):
    """Counterfactual samples whose law does not depend on the attribute."""
    x = rng.normal(size=(rows, 2))
    base = x[:, None, :] + rng.normal(size=(rows, n_mc, 2))
    other = base if shared else x[:, None, :] + rng.normal(size=(rows, n_mc, 2))
    a = (rng.uniform(size=rows) < 0.3).astype(int)
    return CounterfactualDraws({0: base, 1: other}, None, np.array([0.7, 0.3]), x, a)


class TestInvariantOracle:
    """When generation does not depend on the attribute, g = h in law and the null holds."""

    def test_identical_draws_degenerate(self):
        rep = citest.cit_lr_from_draws(lambda x: 1 / (1 + np.exp(-x[:, 0])), _draws(np.random.default_rng(0), 60, 8, True), CitConfig())
        assert rep.degenerate and rep.p == 1.0

    def test_independent_draws_size(self):
        f = lambda x: 1 / (1 + np.exp(-2 * x[:, 0]))  # noqa: E731
        rng = np.random.default_rng(1)
        reps = 400
        rejections = sum(citest.cit_lr_from_draws(f, _draws(rng, 80, 4, False), CitConfig()).reject for _ in range(reps))
        # binomial(400, 0.05): mean 20, sd ~4.4
        assert 6 <= rejections <= 34

    def test_planted_dependence_rejects(self):
        # the attribute shifts both the observed row and its generated samples
        rng = np.random.default_rng(2)
        rows, n_mc = 200, 8
        a = (rng.uniform(size=rows) < 0.3).astype(int)
        base = rng.normal(size=(rows, 1))
        noise = rng.normal(size=(rows, n_mc, 1))
        by_attr = {v: base[:, None, :] + 1.5 * v + noise for v in (0, 1)}
        d = CounterfactualDraws(by_attr, None, np.array([0.7, 0.3]), base + 1.5 * a[:, None], a)
        rep = citest.cit_lr_from_draws(lambda x: (x[:, 0] > 0.5).astype(float), d, CitConfig())
        assert rep.p < 1e-3 and rep.t < 0


class TestEstimators:
    def test_constant_classifier(self, tiny_bundle):
        _, _, test, bundle = tiny_bundle
        z_T = np.random.default_rng(0).normal(size=(6, bundle.latent_dim))
        f = ConstantClassifier(0.7, test.k).predict_proba
        np.testing.assert_allclose(citest.estimate_g(bundle, f, 1, z_T, n_mc=8), 0.7, rtol=1e-14)
        for mode in citest.H_MODES:
            np.testing.assert_allclose(citest.estimate_h(bundle, f, z_T, n_mc=8, mode=mode), 0.7, rtol=1e-14)

    def test_monte_carlo_consistency(self, tiny_bundle):
        _, _, test, bundle = tiny_bundle
        f = ThresholdClassifier(np.ones(test.k), 0.0).predict_proba
        z = np.random.default_rng(1).normal(size=(1, bundle.latent_dim))
        ref = citest.estimate_g(bundle, f, 0, z, n_mc=20_000, rng=np.random.default_rng(2))[0]
        small = citest.estimate_g(bundle, f, 0, np.repeat(z, 60, axis=0), n_mc=32, rng=np.random.default_rng(3))
        se = math.sqrt(max(ref * (1 - ref), 1e-4) / (32 * 60)) + math.sqrt(max(ref * (1 - ref), 1e-4) / 20_000)
        assert abs(small.mean() - ref) <= 4 * se

    def test_cross_mode_agreement(self, tiny_bundle):
        _, _, test, bundle = tiny_bundle
        f = ThresholdClassifier(np.ones(test.k), 0.0).predict_proba
        z = citest._latents_at_T(bundle, test.x[:100], test.a[:100], np.random.default_rng(4))
        h_m = citest.estimate_h(bundle, f, z, n_mc=32, mode="marginalize", rng=np.random.default_rng(5))
        h_n = citest.estimate_h(bundle, f, z, n_mc=32, mode="null-token", rng=np.random.default_rng(5))
        assert abs(h_m.mean() - h_n.mean()) <= 0.02


class TestEndToEnd:
    def test_constant_classifier_degenerate(self, tiny_bundle):
        _, _, test, bundle = tiny_bundle
        rep = citest.cit_lr(ConstantClassifier(0.4, test.k).predict_proba, bundle, test, CitConfig(n_mc=4))
        assert rep.degenerate and rep.p == 1.0 and not rep.reject
        assert rep.n == len(test) and rep.dof == len(test) - 1

    def test_deterministic(self, tiny_bundle):
        _, _, test, bundle = tiny_bundle
        f = ThresholdClassifier(np.ones(test.k), 0.0).predict_proba
        small = test.subset(np.arange(40))
        a = citest.cit_lr(f, bundle, small, CitConfig(n_mc=4, seed=7))
        b = citest.cit_lr(f, bundle, small, CitConfig(n_mc=4, seed=7))
        assert (a.t, a.p) == (b.t, b.p)

    def test_refuses_training_rows(self, tiny_bundle):
        _, train, _, bundle = tiny_bundle
        with pytest.raises(ValueError, match="disjoint"):
            citest.cit_lr(ConstantClassifier(0.5, train.k).predict_proba, bundle, train, CitConfig(n_mc=2))

    def test_refuses_small_test_set(self, tiny_bundle):
        _, _, test, bundle = tiny_bundle
        with pytest.raises(InsufficientDataError):
            citest.cit_lr(ConstantClassifier(0.5, test.k).predict_proba, bundle, test.subset(np.arange(7)))

    def test_config_validation(self):
        for bad in ({"n_mc": 0}, {"alpha": 1.0}, {"h_mode": "exact"}):
            with pytest.raises(ValueError):
                CitConfig(**bad)
        assert CitConfig().hash == CitConfig().hash != CitConfig(seed=1).hash

