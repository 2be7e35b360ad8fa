import numpy as np
import pytest

from lspline.diffop import preset
from lspline.errors import SingularGram
from lspline.gp import (
    GPModel,
    brownian_cov,
    check_psd,
    cubic_cov,
    penalized_coefficients,
    posterior_mean,
    verify_bayes_equivalence,
)
from lspline.greens import make_kernel

RNG = np.random.default_rng(8)


def test_one_point_by_hand():
    gp = GPModel("brownian", 0.5)
    assert posterior_mean(gp, [0.5], [1.0], [0.5])[0] == pytest.approx(0.5, abs=1e-15)
    assert verify_bayes_equivalence(gp, [0.5], [1.0], [0.5]) <= 1e-15


def test_huge_noise_gives_zero_mean():
    gp = GPModel("cubic", 1e12)
    t = RNG.uniform(0, 1, 10)
    assert np.abs(posterior_mean(gp, t, RNG.normal(size=10), np.linspace(0, 1, 21))).max() < 1e-10


def test_noiseless_interpolates():
    gp = GPModel("brownian", 0.0)
    t = np.sort(RNG.uniform(0.05, 1, 8))
    y = RNG.normal(size=8)
    np.testing.assert_allclose(posterior_mean(gp, t, y, t), y, atol=1e-10)
    assert verify_bayes_equivalence(gp, t, y) <= 1e-8


def test_singular_gram_only_without_noise():
    t = [0.3, 0.3]
    with pytest.raises(SingularGram):
        posterior_mean(GPModel("brownian", 0.0), t, [1.0, 2.0], [0.5])
    out = posterior_mean(GPModel("brownian", 0.1), t, [1.0, 2.0], [0.3])
    assert np.isfinite(out).all()


@pytest.mark.parametrize("cov", ["brownian", "cubic"])
@pytest.mark.parametrize("noise", [1e-3, 0.1, 1.0])
def test_bayes_equivalence(cov, noise):
    t = RNG.uniform(0.01, 1, 20)
    y = RNG.normal(size=20)
    assert verify_bayes_equivalence(GPModel(cov, noise), t, y, np.linspace(0, 1, 201)) <= 1e-8


def test_penalized_beta_is_posterior_weights():
    gp = GPModel("cubic", 0.05)
    t = RNG.uniform(0.01, 1, 15)
    y = RNG.normal(size=15)
    S = gp.gram(t)
    np.testing.assert_allclose(penalized_coefficients(gp, t, y),
                               np.linalg.solve(S + 0.05 * np.eye(15), y), atol=1e-10)


def test_linear_in_y():
    gp = GPModel("brownian", 0.2)
    t = RNG.uniform(0, 1, 12)
    y = RNG.normal(size=12)
    q = np.linspace(0, 1, 31)
    np.testing.assert_allclose(posterior_mean(gp, t, 3.7 * y, q),
                               3.7 * posterior_mean(gp, t, y, q), rtol=1e-12, atol=1e-12)


def test_builtins_match_kernels():
    s, t = RNG.uniform(0, 1, (2, 50))
    lin = make_kernel(preset("linear"), (0, 1))
    cub = make_kernel(preset("cubic"), (0, 1))
    np.testing.assert_allclose(brownian_cov(s, t), lin.r1(s, t), atol=1e-15)
    np.testing.assert_allclose(cubic_cov(s, t), cub.r1(s, t), atol=1e-15)


def test_psd_check():
    check_psd(GPModel("cubic", 0.1), RNG.uniform(0, 1, 20))
    with pytest.raises(ValueError):
        check_psd(GPModel(lambda s, t: -np.ones(np.broadcast(s, t).shape) - (s == t), 0.1),
                  np.linspace(0, 1, 5))
    with pytest.raises(ValueError):
        check_psd(GPModel(lambda s, t: s + 0 * t, 0.1), np.linspace(0, 1, 5))


def test_bad_model():
    with pytest.raises(ValueError):
        GPModel("nope", 1.0)
    with pytest.raises(ValueError):
        GPModel("cubic", -1.0)
