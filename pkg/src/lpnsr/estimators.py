"""scikit-learn style wrappers around the training and inference functions."""

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .data import SCALE, Corpus, PairedSample
from .errors import ShapeError
from .metrics import metrics
from .models import Denoiser, NoisePredictor, Upsampler
from .sampling import InferenceConfig, Networks, infer
from .schedule import build_schedule
from .training import TrainConfig, pretrain_denoiser, pretrain_upsampler, train_predictor


def check_images(X, name="X"):
    """Validate an image batch and return it as float32 ``[B, C, H, W]``.

    A 3-d input is read as ``[B, H, W]`` (one channel).
    """
    X = check_array(X, allow_nd=True, ensure_2d=False, dtype=np.float32, input_name=name)
    if X.ndim == 3:
        X = X[:, None]
    if X.ndim != 4:
        raise ShapeError(f"{name} must be [B, C, H, W] or [B, H, W], got shape {X.shape}")
    return X


def check_pairs(X_lr, y_hr):
    X_lr, y_hr = check_images(X_lr, "X_lr"), check_images(y_hr, "y_hr")
    if len(X_lr) != len(y_hr):
        raise ShapeError(f"{len(X_lr)} LR images but {len(y_hr)} HR images")
    b, c, h, w = X_lr.shape
    if y_hr.shape[1:] != (c, h * SCALE, w * SCALE):
        raise ShapeError(f"HR images must be {SCALE}x the LR size: {X_lr.shape} vs {y_hr.shape}")
    return X_lr, y_hr


def as_corpus(X_lr, y_hr, split="train"):
    X_lr, y_hr = check_pairs(X_lr, y_hr)
    return Corpus(split, -1, [PairedSample.from_pair(y_hr[i:i + 1], X_lr[i:i + 1]) for i in range(len(X_lr))])


class RegressionUpsampler(TransformerMixin, BaseEstimator):
    """Bicubic plus a learned conv refinement, trained with L1 to the HR image."""

    def __init__(self, iterations=3000, batch=8, lr=1e-3, width=16, seed=0):
        self.iterations = iterations
        self.batch = batch
        self.lr = lr
        self.width = width
        self.seed = seed

    def fit(self, X, y):
        corpus = as_corpus(X, y)
        cfg = TrainConfig("upsampler", self.iterations, self.batch, self.lr, seed=self.seed,
                          width=self.width, eval_every=max(self.iterations, 1))
        self.params_, self.report_ = pretrain_upsampler(corpus, cfg)
        self.n_channels_ = corpus.hr.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "params_")
        X = check_images(X)
        if X.shape[1] != self.n_channels_:
            raise ShapeError(f"fitted on {self.n_channels_} channels, got {X.shape[1]}")
        return Upsampler(self.params_)(X).numpy()


class ResidualShiftSR(BaseEstimator):
    """Few-step residual-shifting super-resolver with a learned noise predictor.

    ``fit`` runs the three training phases in order; ``predict`` runs the
    reverse chain from ``steps`` with the chosen init and noise strategy.
    """

    def __init__(self, T=4, kappa=2.0, eta_min=0.001, eta_max=0.999, steps=4, init="regression",
                 strategy="predicted", denoiser_iterations=5000, upsampler_iterations=3000,
                 predictor_iterations=3000, batch=8, lr=1e-3, lambda_1=1.0, lambda_l=1.0,
                 lambda_g=0.1, width=16, seed=0):
        self.T = T
        self.kappa = kappa
        self.eta_min = eta_min
        self.eta_max = eta_max
        self.steps = steps
        self.init = init
        self.strategy = strategy
        self.denoiser_iterations = denoiser_iterations
        self.upsampler_iterations = upsampler_iterations
        self.predictor_iterations = predictor_iterations
        self.batch = batch
        self.lr = lr
        self.lambda_1 = lambda_1
        self.lambda_l = lambda_l
        self.lambda_g = lambda_g
        self.width = width
        self.seed = seed

    def _train_cfg(self, phase, iterations):
        return TrainConfig(phase, iterations, self.batch, self.lr, lambda_1=self.lambda_1,
                           lambda_l=self.lambda_l, lambda_g=self.lambda_g, seed=self.seed,
                           width=self.width, eval_every=max(iterations, 1))

    def fit(self, X, y):
        InferenceConfig(self.steps, self.init, self.strategy)
        corpus = as_corpus(X, y)
        self.schedule_ = build_schedule(self.T, self.eta_min, self.eta_max, self.kappa)
        self.reports_ = {}
        self.denoiser_, self.reports_["denoiser"] = pretrain_denoiser(
            corpus, self.schedule_, self._train_cfg("denoiser", self.denoiser_iterations))
        self.upsampler_, self.reports_["upsampler"] = pretrain_upsampler(
            corpus, self._train_cfg("upsampler", self.upsampler_iterations))
        self.predictor_, self.reports_["predictor"] = train_predictor(
            corpus, self.schedule_, self.denoiser_, self._train_cfg("predictor", self.predictor_iterations))
        self.n_channels_ = corpus.hr.shape[1]
        return self

    def predict(self, X, y_true=None):
        """Super-resolve ``X``; ``y_true`` is only consulted by the optimal-noise strategy."""
        check_is_fitted(self, "denoiser_")
        X = check_images(X)
        nets = Networks(Denoiser(self.denoiser_), NoisePredictor(self.predictor_), Upsampler(self.upsampler_))
        cfg = InferenceConfig(self.steps, self.init, self.strategy, self.seed)
        x0 = None if y_true is None else check_images(y_true, "y_true")
        return infer(X, cfg, nets, self.schedule_, x0=x0).numpy()

    def score(self, X, y):
        """Mean per-image PSNR (dB) of ``predict(X)`` against ``y``."""
        return metrics(self.predict(X, y), check_images(y, "y")).psnr
