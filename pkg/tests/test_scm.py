"""Structural equations, sampling, and the counterfactual-accuracy oracle."""

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from cfaudit.numerics import NumericError, RngStream, sigmoid
from cfaudit.scm import (
    VARIANTS,
    DomainError,
    ExogenousUnit,
    LabeledDataset,
    SCMSpec,
    eca,
    f_y_eval,
    propagate,
    sample_dataset,
)


def scalar_spec(m=2.0, n_=3.0, sigma=0.0, prior=0.3):
    return SCMSpec(
        "linear", np.array([[[m]]]), np.array([[[n_]]]), np.array([[1.0]]), np.zeros(1),
        np.array([1.0]), 0.0, sigma=sigma, prior=prior,
    )


class TestPropagate:
    def test_hand_propagation(self):
        spec = scalar_spec()
        unit = ExogenousUnit(np.array([1.0]), np.zeros((1, 1)), np.zeros(1), np.zeros(1))
        x1, p1 = propagate(spec, unit, 1)
        x0, p0 = propagate(spec, unit, 0)
        assert x1[0] == 2.0 and x0[0] == 3.0
        assert p1 == p0 == pytest.approx(1 / (1 + math.exp(-1)))

    def test_tied_spec_no_pathway(self):
        spec = SCMSpec.generate("linear", seed=1, k=4, sigma=0.0, tied=True)
        unit = ExogenousUnit.sample(spec, 200, np.random.default_rng(0))
        np.testing.assert_array_equal(propagate(spec, unit, 0)[0], propagate(spec, unit, 1)[0])

    @pytest.mark.parametrize("variant", VARIANTS)
    def test_label_mechanism_excludes_attribute(self, variant):
        spec = SCMSpec.generate(variant, seed=2, k=4)
        unit = ExogenousUnit.sample(spec, 1000, np.random.default_rng(1))
        _, p0 = propagate(spec, unit, 0)
        _, p1 = propagate(spec, unit, 1)
        assert p0.tobytes() == p1.tobytes()
        assert np.all((p0 >= 0) & (p0 <= 1))

    def test_chain_recurrence_matches_loop(self):
        spec = SCMSpec.generate("sin", seed=4, n=3, k=3)
        rng = np.random.default_rng(2)
        unit = ExogenousUnit.sample(spec, 1, rng)
        a = 1
        z = unit.z_n[0]
        for i in (2, 1, 0):
            z = (spec.M[i] if a else spec.N[i]) @ z + unit.xi[i, 0]
        x = spec.M_X @ z + spec.r + unit.eps_x[0]
        np.testing.assert_allclose(propagate(spec, unit, np.array([a]))[0][0], x, rtol=1e-12)

    def test_overflow_is_numeric_error(self):
        spec = SCMSpec.generate("exponential", seed=0, k=2)
        unit = ExogenousUnit(np.array([[800.0, 0.0]]), np.zeros((3, 1, 2)), np.zeros((1, 2)), np.zeros(1))
        with pytest.raises(NumericError, match="exponential"):
            propagate(spec, unit, 0)


class TestFY:
    def test_constant_linear(self):
        z = np.random.default_rng(0).normal(size=(5, 3))
        np.testing.assert_array_equal(f_y_eval("linear", np.zeros(3), 2.5, z), np.full(5, 2.5))

    def test_quadratic(self):
        assert f_y_eval("quadratic", np.array([1.0, 1.0]), 0.0, np.array([1.0, 2.0])) == 5.0

    def test_interactive(self):
        w = np.array([[0.0, 1.0], [1.0, 0.0]])
        assert f_y_eval("interactive", w, 0.0, np.array([2.0, 3.0])) == 12.0

    def test_interactive_ignores_diagonal(self):
        w = np.array([[5.0, 1.0], [1.0, 7.0]])
        assert f_y_eval("interactive", w, 0.0, np.array([2.0, 3.0])) == 12.0

    def test_exponential_and_sin(self):
        z = np.array([0.5, -1.0])
        w = np.array([2.0, 3.0])
        assert f_y_eval("exponential", w, 1.0, z) == pytest.approx(2 * math.exp(0.5) + 3 * math.exp(-1) + 1)
        assert f_y_eval("sin", w, 1.0, z) == pytest.approx(2 * math.sin(0.5) + 3 * math.sin(-1) + 1)

    def test_log_exponent(self):
        assert f_y_eval("log-exponent", np.array([1.0]), 2.0, np.array([0.0])) == pytest.approx(math.log(3.0))
        assert f_y_eval("log-exponent", np.array([1.0]), -0.5, np.array([0.0])) == pytest.approx(math.log(0.5))
        with pytest.raises(DomainError):
            f_y_eval("log-exponent", np.array([1.0]), -2.0, np.array([0.0]))

    def test_unknown_variant(self):
        with pytest.raises(ValueError):
            f_y_eval("cubic", np.zeros(1), 0.0, np.zeros(1))


class TestSpec:
    def test_hyperparameter_defaults(self):
        spec = SCMSpec.generate("linear", seed=0)
        assert (spec.n, spec.k, spec.sigma, spec.prior) == (3, 32, 0.01, 0.3)
        assert np.all(np.abs(spec.M) <= 10) and np.all(np.abs(spec.M_X) <= 10)

    def test_frozen(self):
        spec = SCMSpec.generate("linear", seed=0, k=2)
        with pytest.raises(ValueError):
            spec.omega[0] = 1.0

    def test_serialization_regenerates(self, tmp_path):
        spec = SCMSpec.generate("quadratic", seed=9, k=5)
        spec.save(tmp_path / "s.json")
        assert SCMSpec.load(tmp_path / "s.json").fingerprint == spec.fingerprint
        with pytest.raises(ValueError):
            SCMSpec.from_dict({**spec.to_dict(), "extra": 1})

    def test_validation(self):
        with pytest.raises(ValueError):
            SCMSpec.generate("cubic", seed=0)
        with pytest.raises(ValueError):
            scalar_spec(prior=1.0)
        with pytest.raises(ValueError):
            scalar_spec(sigma=-1.0)


class TestSampling:
    def test_attribute_prior(self):
        d = sample_dataset(SCMSpec.generate("linear", seed=0, k=2), 100_000, 5)
        assert abs(d.a.mean() - 0.3) <= 0.01

    def test_same_seed_identical(self):
        spec = SCMSpec.generate("sin", seed=1, k=3)
        assert sample_dataset(spec, 50, 3).to_csv() == sample_dataset(spec, 50, 3).to_csv()

    def test_splits_use_disjoint_streams(self):
        spec = SCMSpec.generate("sin", seed=1, k=3)
        tr, te = sample_dataset(spec, 50, 3, "train"), sample_dataset(spec, 50, 3, "test")
        assert not np.array_equal(tr.x, te.x)

    def test_label_binomial_oracle(self):
        spec = SCMSpec.generate("linear", seed=3, k=3)
        rng = np.random.default_rng(4)
        m = 20_000
        z = np.tile(rng.normal(size=(1, 3)), (m, 1))
        unit = ExogenousUnit(z, spec.sigma * rng.normal(size=(3, m, 3)), spec.sigma * rng.normal(size=(m, 3)), rng.uniform(size=m))
        _, p = propagate(spec, unit, (unit.u_a < 0.3).astype(int))
        y = rng.uniform(size=m) < p
        p0 = float(sigmoid(f_y_eval("linear", spec.omega, spec.b, z[0])))
        assert abs(y.mean() - p0) <= 3 * math.sqrt(p0 * (1 - p0) / m)

    def test_csv_round_trip(self, tmp_path):
        d = sample_dataset(SCMSpec.generate("linear", seed=2, k=3), 40, 1)
        d.save_csv(tmp_path / "d.csv")
        back = LabeledDataset.load_csv(tmp_path / "d.csv")
        np.testing.assert_array_equal(back.x, d.x)
        np.testing.assert_array_equal(back.a, d.a)
        assert (tmp_path / "d.csv").read_text().splitlines()[0] == "x_0,x_1,x_2,a,y"

    def test_needs_rows(self):
        with pytest.raises(ValueError):
            sample_dataset(scalar_spec(), 0, 0)


class TestECA:
    @pytest.mark.parametrize("variant", ["linear", "quadratic", "sin"])
    def test_constant_classifier(self, variant):
        spec = SCMSpec.generate(variant, seed=0, k=4)
        res = eca(spec, lambda x: np.full(len(x), 0.7), n_units=200, n_noise=4)
        assert res.value == 1.0

    def test_tied_spec_any_classifier(self):
        spec = SCMSpec.generate("linear", seed=0, k=4, tied=True)
        w = np.random.default_rng(1).normal(size=4)
        res = eca(spec, lambda x: (x @ w > 0).astype(float), n_units=200, n_noise=8)
        assert res.value == 1.0

    def test_two_branch_enumeration(self):
        spec = scalar_spec()
        theta = 1.0
        f = lambda x: (x[:, 0] > theta).astype(float)  # noqa: E731
        res = eca(spec, f, n_units=4000, n_noise=1, rng=np.random.default_rng(8))
        z = np.random.default_rng(8).standard_normal((4000, 1))[:, 0]
        # sigma = 0: the two branches are x = 2z and x = 3z; a unit scores 1 for
        # both attribute values iff they agree, and 0 for both otherwise
        agree = (2 * z > theta) == (3 * z > theta)
        assert res.value == agree.mean()
        p = 1 - (stats.norm.cdf(0.5) - stats.norm.cdf(1 / 3))
        assert abs(res.value - p) <= 3 * math.sqrt(p * (1 - p) / 4000)

    def test_relabeling_symmetry(self):
        spec = SCMSpec.generate("linear", seed=5, k=3)
        swapped = SCMSpec(spec.variant, spec.N.copy(), spec.M.copy(), spec.M_X.copy(), spec.r.copy(),
                          spec.omega.copy(), spec.b, spec.sigma, 1 - spec.prior)
        w = np.random.default_rng(2).normal(size=3)
        f = lambda x: sigmoid(0.01 * x @ w)  # noqa: E731
        a = eca(spec, f, 300, 8, rng=np.random.default_rng(3)).value
        b = eca(swapped, f, 300, 8, rng=np.random.default_rng(3)).value
        assert a == b

    def test_monotone_in_tau(self):
        spec = SCMSpec.generate("sin", seed=1, k=3)
        w = np.random.default_rng(2).normal(size=3)
        f = lambda x: sigmoid(0.02 * x @ w)  # noqa: E731
        vals = [eca(spec, f, 300, 8, tau, rng=np.random.default_rng(0)).value for tau in (0.01, 0.02, 0.05, 0.1, 0.2, 0.5)]
        assert vals == sorted(vals)
        assert all(0.0 <= v <= 1.0 for v in vals)

    def test_standard_error_warning(self):
        spec = SCMSpec.generate("linear", seed=0, k=3, sigma=1.0)
        w = np.random.default_rng(2).normal(size=3)
        f = lambda x: (x @ w > 0).astype(float)  # noqa: E731
        assert eca(spec, f, 50, 2).warnings
        assert not eca(spec, lambda x: np.zeros(len(x)), 50, 2).warnings

    def test_argument_errors(self):
        spec = scalar_spec()
        with pytest.raises(ValueError):
            eca(spec, lambda x: x[:, 0], n_units=0)
        with pytest.raises(ValueError):
            eca(spec, lambda x: x[:, 0], tau=0.0)

    @given(st.integers(0, 2**32 - 1))
    def test_in_unit_interval(self, seed):
        spec = SCMSpec.generate("linear", seed=seed % 50, k=2)
        f = lambda x: sigmoid(0.05 * x[:, 0])  # noqa: E731
        v = eca(spec, f, 20, 2, rng=RngStream(seed, "t").generator()).value
        assert 0.0 <= v <= 1.0
