import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from bdia.config import default_mixture
from bdia.estimators import DiffusionSampler
from bdia.models import GaussianMixture


@pytest.fixture(scope="module")
def X():
    rng = np.random.default_rng(5)
    return np.vstack([rng.normal(2, 0.5, (100, 2)), rng.normal(-2, 0.5, (100, 2))])


def test_params_and_clone():
    est = DiffusionSampler(gamma=0.92, n_steps=30)
    c = clone(est)
    assert c.get_params()["gamma"] == 0.92 and c.get_params()["n_steps"] == 30
    assert not hasattr(c, "mixture_")


def test_fit_recovers_two_components(X):
    est = DiffusionSampler(random_state=0).fit(X)
    means = est.mixture_.means[np.argsort(est.mixture_.means[:, 0])]
    np.testing.assert_allclose(means, [[-2, -2], [2, 2]], atol=0.2)
    assert est.mixture_.weights.sum() == pytest.approx(1.0, abs=1e-12)
    assert est.n_features_in_ == 2


@pytest.mark.parametrize("solver,kw", [("bdia-ddim", {}), ("bdia-ddim", {"gamma": 0.92}), ("edict", {}), ("cbdia", {})])
def test_exact_inversion(X, solver, kw):
    est = DiffusionSampler(solver=solver, n_steps=40, mixture=default_mixture(), **kw).fit(X)
    Z = est.transform(X)
    assert Z.shape == (len(X), 4)
    assert est.roundtrip_error(X) <= 1e-8


def test_naive_ddim_is_inexact(X):
    est = DiffusionSampler(solver="ddim", n_steps=10, mixture=default_mixture()).fit(X)
    assert est.transform(X).shape == X.shape
    assert est.roundtrip_error(X) > 1e-4


def test_errors(X):
    with pytest.raises(NotFittedError):
        DiffusionSampler().transform(X)
    with pytest.raises(NotFittedError):
        DiffusionSampler().inverse_transform(np.zeros((2, 4)))
    with pytest.raises(ValueError):
        DiffusionSampler(solver="euler").fit(X)
    with pytest.raises(ValueError):
        DiffusionSampler(solver="edm").fit(X)
    bad = X.copy()
    bad[0, 0] = np.nan
    with pytest.raises(ValueError):
        DiffusionSampler().fit(bad)
    est = DiffusionSampler(mixture=default_mixture()).fit(X)
    with pytest.raises(ValueError):
        est.transform(np.zeros((3, 3)))
    with pytest.raises(ValueError):
        DiffusionSampler(mixture=GaussianMixture.from_params([(1.0, [0.0], 1.0)])).fit(X)
    with pytest.raises(ValueError):
        DiffusionSampler(solver="dpmpp-2m", mixture=default_mixture()).fit(X).transform(X)


def test_sample_deterministic(X):
    est = DiffusionSampler(mixture=default_mixture(), random_state=3).fit(X)
    a, b = est.sample(50), est.sample(50)
    np.testing.assert_array_equal(a, b)
    assert a.shape == (50, 2) and not np.array_equal(a, est.sample(50, random_state=4))


def test_edm_sampler(X):
    est = DiffusionSampler(solver="bdia-edm", schedule="edm", grid="power_law", t_min=0.002, t_max=80.0,
                           n_steps=18, mixture=default_mixture(), random_state=0).fit(X)
    out = est.sample(200)
    assert np.all(np.isfinite(out)) and np.abs(np.abs(out).mean() - 2.0) < 0.3
