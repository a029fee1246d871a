"""Analytic gradients of every trained network against central differences."""

import numpy as np
import pytest

from cfaudit.numerics.gradcheck import max_relative_error, relative_error
from gradsuite import CASES

TOL = 1e-4
POINTS = 5


@pytest.mark.parametrize("name", sorted(CASES))
def test_matches_central_differences(name):
    for i in range(POINTS):
        loss, analytic, params, kinks = CASES[name](np.random.default_rng(100 + i))
        err = max_relative_error(loss, analytic, params, kinks=kinks)
        assert err <= TOL, f"{name} point {i}: {err:.3g}"


@pytest.mark.parametrize("name", ["vae-conditional", "denoiser", "mlp-16-8-4", "perturbation-step"])
def test_detects_corrupted_gradient(name):
    loss, analytic, params, kinks = CASES[name](np.random.default_rng(7))
    bad = [a.copy() for a in analytic]
    j = int(np.argmax([np.abs(a).max() for a in bad]))
    bad[j].flat[np.argmax(np.abs(bad[j]))] *= 1.01
    assert max_relative_error(loss, bad, params, kinks=kinks) > TOL


def test_relative_error_floor():
    assert relative_error(np.array(0.0), np.array(1e-9))[()] == pytest.approx(1e-3)
    assert relative_error(np.array(2.0), np.array(1.0))[()] == 0.5
