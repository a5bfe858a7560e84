import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from lpnsr.data import CorpusConfig, make_split
from lpnsr.errors import ShapeError
from lpnsr.estimators import RegressionUpsampler, ResidualShiftSR, check_images, check_pairs

SPLIT = make_split(CorpusConfig(n_train=8, n_val=1, n_test=1), "train")
X, Y = SPLIT.lr, SPLIT.hr
TINY = dict(denoiser_iterations=4, upsampler_iterations=4, predictor_iterations=3, batch=4, width=4)


def test_check_images_adds_channel():
    out = check_images(np.zeros((2, 8, 8)))
    assert out.shape == (2, 1, 8, 8) and out.dtype == np.float32
    with pytest.raises(ShapeError):
        check_images(np.zeros((2, 1, 1, 8, 8)))
    with pytest.raises(ValueError):
        check_images(np.full((1, 8, 8), np.nan))


def test_check_pairs():
    check_pairs(X, Y)
    with pytest.raises(ShapeError, match="4x"):
        check_pairs(X, Y[:, :, :16, :16])
    with pytest.raises(ShapeError, match="LR images"):
        check_pairs(X, Y[:3])


def test_regression_upsampler():
    est = RegressionUpsampler(iterations=5, batch=4, width=4)
    with pytest.raises(NotFittedError):
        est.transform(X)
    out = est.fit(X, Y).transform(X[:, 0])
    assert out.shape == (8, 1, 32, 32)
    with pytest.raises(ShapeError):
        est.transform(np.zeros((1, 3, 8, 8)))


def test_params_and_clone():
    est = ResidualShiftSR(kappa=1.5, steps=2, **TINY)
    assert est.get_params()["kappa"] == 1.5
    twin = clone(est)
    assert twin.get_params() == est.get_params() and not hasattr(twin, "denoiser_")


def test_fit_predict_score():
    est = ResidualShiftSR(steps=3, **TINY)
    with pytest.raises(NotFittedError):
        est.predict(X)
    est.fit(X, Y)
    assert set(est.reports_) == {"denoiser", "upsampler", "predictor"}
    out = est.predict(X[:2])
    assert out.shape == (2, 1, 32, 32) and np.isfinite(out).all()
    np.testing.assert_array_equal(out, est.predict(X[:2]))
    assert np.isfinite(est.score(X[:2], Y[:2]))


def test_optimal_strategy_with_target():
    est = ResidualShiftSR(strategy="optimal", **TINY).fit(X, Y)
    assert est.predict(X[:1], Y[:1]).shape == (1, 1, 32, 32)


def test_invalid_strategy_rejected_at_fit():
    with pytest.raises(Exception, match="strategy"):
        ResidualShiftSR(strategy="loud", **TINY).fit(X, Y)
