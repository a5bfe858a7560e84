"""Reverse sampling chain, inference, and the strategy / step-count harnesses."""

import time
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, as_tensor
from .data import SCALE, bicubic_resample
from .diffusion import NoiseStrategy, init_state, optimal_noise, reverse_moments, reverse_step
from .errors import ConfigError, MissingArtifactError
from .metrics import metrics

INIT_MODES = ("bicubic", "regression")
TABLE_HEADER = ("config", "psnr", "ssim", "l1", "proxy", "nfe")


@dataclass
class Networks:
    """The callables a chain may use; only the denoiser is always required."""

    denoiser: object
    predictor: object = None
    upsampler: object = None


@dataclass(frozen=True)
class InferenceConfig:
    t_start: int = 4
    init: str = "regression"
    strategy: NoiseStrategy = NoiseStrategy.PREDICTED
    seed: int = 0

    def __post_init__(self):
        if self.init not in INIT_MODES:
            raise ConfigError(f"init must be one of {INIT_MODES}, got {self.init!r}", key="infer.init")
        object.__setattr__(self, "strategy", NoiseStrategy.parse(self.strategy))

    def label(self):
        return f"{self.init}/t{self.t_start}/{self.strategy.value}"


@dataclass
class ChainResult:
    output: Tensor
    states: list = field(default_factory=list)
    predictions: list = field(default_factory=list)
    nfe: int = 0
    """Network evaluations: denoiser, predictor and upsampler calls."""


def run_chain(x_start, y0, t_start, sched, denoiser, noise_fn=None, keep_states=False):
    """Iterate reverse steps from ``x_start`` at ``t_start`` down to the final prediction.

    ``noise_fn(t, x_t, x0_pred, moments)`` returns the noise for the step that
    produces ``x_{t-1}`` (or None for the noiseless mean). Works under an
    active tape, so gradients flow through every step.
    """
    sched.check_step(t_start)
    x = as_tensor(x_start)
    y0 = as_tensor(y0)
    result = ChainResult(output=None)
    if keep_states:
        result.states.append(x)
    for t in range(t_start, 0, -1):
        x0_pred = denoiser(x, y0, t)
        if keep_states:
            result.predictions.append(x0_pred)
        if t == 1:
            break
        z = None
        if noise_fn is not None:
            z = noise_fn(t, x, x0_pred, reverse_moments(x, x0_pred, t, sched))
        x = reverse_step(x, x0_pred, t, sched, z)
        if keep_states:
            result.states.append(x)
    result.output = x0_pred
    return result


class _RandomNoise:
    def __init__(self, rng, shape):
        self.rng, self.shape = rng, shape

    def __call__(self, t, x_t, x0_pred, moments):
        return Tensor(self.rng.standard_normal(self.shape))


class _PredictedNoise:
    def __init__(self, predictor, y0):
        self.predictor, self.y0 = predictor, y0

    def __call__(self, t, x_t, x0_pred, moments):
        return self.predictor(x_t, x0_pred, self.y0, t)


class _OptimalNoise:
    """Closed-form optimal noise around ``reference`` (true or estimated HR image)."""

    def __init__(self, reference, y0, sched):
        self.reference, self.y0, self.sched = as_tensor(reference), as_tensor(y0), sched

    def __call__(self, t, x_t, x0_pred, moments):
        return optimal_noise(self.reference, self.y0, moments, t, self.sched)


def noise_source(strategy, nets, y0, sched, rng, x0=None, y_hat=None):
    """Build the ``noise_fn`` for a strategy; raises when its inputs are missing."""
    strategy = NoiseStrategy.parse(strategy)
    y0 = as_tensor(y0)
    if strategy is NoiseStrategy.ZERO:
        return None
    if strategy is NoiseStrategy.RANDOM_GAUSSIAN:
        return _RandomNoise(rng, y0.shape)
    if strategy is NoiseStrategy.PREDICTED:
        if nets.predictor is None:
            raise MissingArtifactError("Predicted strategy needs a noise predictor (run train-predictor)")
        return _PredictedNoise(nets.predictor, y0)
    if strategy is NoiseStrategy.THEORETICAL_OPTIMAL:
        if x0 is None:
            raise MissingArtifactError("TheoreticalOptimal strategy needs the ground-truth HR image")
        return _OptimalNoise(x0, y0, sched)
    if y_hat is None:
        raise MissingArtifactError("ApproximateOptimal strategy needs the pre-upsampled image (run pretrain-upsampler)")
    return _OptimalNoise(y_hat, y0, sched)


def upsample_lr(y_lr, init, nets):
    """Starting-point image: bicubic or the regression upsampler."""
    if init == "regression":
        if nets.upsampler is None:
            raise MissingArtifactError("regression init needs an upsampler checkpoint (run pretrain-upsampler)")
        return nets.upsampler(y_lr)
    return Tensor(bicubic_resample(as_tensor(y_lr).data, SCALE, "up"))


def infer(y_lr, cfg, nets, sched, x0=None, keep_states=False):
    """Super-resolve a batch of LR images ``[B, C, h, w]``.

    The denoiser and predictor are conditioned on the bicubic upsample of
    ``y_lr``; ``cfg.init`` only chooses the centre of the starting state.
    """
    if not 1 <= cfg.t_start <= sched.T:
        raise ConfigError(f"t_start {cfg.t_start} outside 1..{sched.T}", key="infer.steps")
    y_lr = as_tensor(y_lr)
    rng = np.random.default_rng([cfg.seed, 7])
    y0 = Tensor(bicubic_resample(y_lr.data, SCALE, "up"))
    y_start = upsample_lr(y_lr, cfg.init, nets)
    nfe = cfg.t_start + (cfg.init == "regression")
    y_hat = None
    noise_fn = None
    if cfg.t_start > 1:
        if cfg.strategy is NoiseStrategy.APPROXIMATE_OPTIMAL:
            if cfg.init == "regression":
                y_hat = y_start
            else:
                y_hat = upsample_lr(y_lr, "regression", nets)
                nfe += 1
        if cfg.strategy is NoiseStrategy.PREDICTED:
            nfe += cfg.t_start - 1
        noise_fn = noise_source(cfg.strategy, nets, y0, sched, rng, x0=x0, y_hat=y_hat)
    z_start = Tensor(rng.standard_normal(y0.shape))
    x_start = init_state(y_start, cfg.t_start, sched, z_start)
    result = run_chain(x_start, y0, cfg.t_start, sched, nets.denoiser, noise_fn, keep_states)
    result.nfe = nfe
    return result if keep_states else result.output


@dataclass
class EvalRow:
    config: str
    psnr: float
    ssim: float
    l1: float
    proxy: float
    runtime: float
    nfe: int

    def cells(self):
        return [self.config, f"{self.psnr:.4f}", f"{self.ssim:.6f}", f"{self.l1:.6f}", f"{self.proxy:.6f}", str(self.nfe)]


def evaluate(testset, nets, sched, cfg, seeds=(0,), batch=128, oracle_factory=None):
    """Average metrics of ``infer`` over the test split and noise seeds.

    ``oracle_factory(x0)``, when given, replaces the denoiser per batch (used to
    instantiate the exact-recovery setting).
    """
    hr, lr = testset.hr, testset.lr
    scores, seconds, nfe = [], 0.0, 0
    for seed in seeds:
        for lo in range(0, len(hr), batch):
            x0, y_lr = hr[lo:lo + batch], lr[lo:lo + batch]
            run_nets = nets
            if oracle_factory is not None:
                run_nets = Networks(oracle_factory(x0), nets.predictor, nets.upsampler)
            start = time.perf_counter()
            res = infer(y_lr, InferenceConfig(cfg.t_start, cfg.init, cfg.strategy, seed), run_nets, sched,
                        x0=x0, keep_states=True)
            seconds += time.perf_counter() - start
            nfe = res.nfe
            s = metrics(res.output, x0)
            scores.append((s, len(x0)))
    weight = sum(n for _, n in scores)
    avg = lambda key: sum(getattr(s, key) * n for s, n in scores) / weight
    return EvalRow(cfg.label(), avg("psnr"), avg("ssim"), avg("l1"), avg("proxy"),
                   seconds / (len(seeds) * len(hr)), nfe)


STRATEGY_ORDER = (
    NoiseStrategy.RANDOM_GAUSSIAN,
    NoiseStrategy.APPROXIMATE_OPTIMAL,
    NoiseStrategy.PREDICTED,
    NoiseStrategy.THEORETICAL_OPTIMAL,
)


def compare_strategies(testset, nets, sched, seeds=(0, 1, 2), init="regression", oracle_factory=None):
    """One row per noise strategy at ``t_start = T``, averaged over ``seeds``.

    Every strategy is seed-dependent through the starting-state draw, so all
    of them are averaged.
    """
    rows = []
    for strategy in STRATEGY_ORDER:
        cfg = InferenceConfig(sched.T, init, strategy)
        rows.append(evaluate(testset, nets, sched, cfg, seeds, oracle_factory=oracle_factory))
    return rows


def step_sweep(testset, nets, sched, seeds=(0, 1, 2)):
    """Rows for {bicubic, regression} x t_start in 1..T with predicted noise."""
    rows = []
    for init in INIT_MODES:
        for t_start in range(1, sched.T + 1):
            cfg = InferenceConfig(t_start, init, NoiseStrategy.PREDICTED)
            rows.append(evaluate(testset, nets, sched, cfg, seeds))
    return rows


def write_table(path, rows, include_runtime=False):
    header = list(TABLE_HEADER) + (["runtime_s"] if include_runtime else [])
    lines = ["\t".join(header)]
    for row in rows:
        cells = row.cells() + ([f"{row.runtime:.6f}"] if include_runtime else [])
        lines.append("\t".join(cells))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
