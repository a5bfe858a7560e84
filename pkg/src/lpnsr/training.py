"""Training phases: denoiser pretraining, upsampler pretraining, end-to-end predictor training."""

import logging
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .autodiff import AdamState, Tape, Tensor, adam_step, backward, l1_loss
from .diffusion import forward_marginal, init_state
from .errors import ConfigError, MissingArtifactError, TrainingDivergedError
from .losses import LossWeights, loss_total, perceptual_proxy
from .models import Denoiser, NoisePredictor, init_params, upsampler_forward
from .sampling import _PredictedNoise, run_chain

log = logging.getLogger(__name__)

PHASES = ("denoiser", "upsampler", "predictor")
DEFAULT_ITERATIONS = {"denoiser": 5000, "upsampler": 3000, "predictor": 3000}
# full-scale reference run: 200k iterations at batch 16
FULL_SCALE_ITERATIONS, FULL_SCALE_BATCH, FULL_SCALE_LR = 200_000, 16, 5e-5


@dataclass(frozen=True)
class TrainConfig:
    phase: str = "predictor"
    iterations: int = 3000
    batch: int = 8
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-4
    lambda_1: float = 1.0
    lambda_l: float = 1.0
    lambda_g: float = 0.1
    seed: int = 0
    eval_every: int = 250
    width: int = 16

    def validate(self):
        if self.phase not in PHASES:
            raise ConfigError(f"phase must be one of {PHASES}, got {self.phase!r}", key="train.phase")
        if self.iterations < 0:
            raise ConfigError(f"must be >= 0, got {self.iterations}", key="train.iterations")
        if self.batch < 1:
            raise ConfigError(f"must be >= 1, got {self.batch}", key="train.batch")
        if not self.lr > 0:
            raise ConfigError(f"must be > 0, got {self.lr}", key="train.lr")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("betas must lie in [0, 1)", key="train.beta1")
        if self.weight_decay < 0:
            raise ConfigError(f"must be >= 0, got {self.weight_decay}", key="train.weight_decay")
        if self.eval_every < 1:
            raise ConfigError(f"must be >= 1, got {self.eval_every}", key="train.eval_every")
        self.weights()
        return self

    def weights(self):
        return LossWeights(self.lambda_1, self.lambda_l, self.lambda_g)

    def adam(self):
        return AdamState(self.lr, self.beta1, self.beta2, self.eps, self.weight_decay)


@dataclass
class TrainReport:
    phase: str
    rows: list = field(default_factory=list)
    """``(iteration, mean train loss since last row, val L1, val proxy, val loss_total)``."""
    wall_clock: float = 0.0
    checkpoint: str = ""
    flags: dict = field(default_factory=dict)

    def add(self, iteration, loss, val_l1, val_proxy, val_total):
        if self.rows and iteration <= self.rows[-1][0]:
            raise ValueError("report rows must have increasing iteration counts")
        self.rows.append((iteration, loss, val_l1, val_proxy, val_total))

    @property
    def initial(self):
        return self.rows[0]

    @property
    def final(self):
        return self.rows[-1]

    def to_text(self):
        lines = ["iter\tloss\tval_l1"]
        for it, loss, val_l1, _, _ in self.rows:
            lines.append(f"{it}\t{loss:.6f}\t{val_l1:.6f}")
        return "\n".join(lines) + "\n"

    def write(self, path):
        Path(path).write_text(self.to_text(), encoding="utf-8")


def _batch_rng(cfg, it):
    return np.random.default_rng([cfg.seed, PHASES.index(cfg.phase), it])


def _eval_points(cfg):
    points = list(range(0, cfg.iterations, cfg.eval_every))
    return set(points) | {cfg.iterations}


def _check_finite(value, phase, it, state, params):
    if math.isfinite(value):
        return
    dump = {"phase": phase, "iteration": it, "loss": value, "adam_step": state.step, "lr": state.lr}
    for name, t in params.items():
        dump[f"norm.{name}"] = float(np.linalg.norm(t.data.astype(np.float64)))
        dump[f"finite.{name}"] = bool(np.isfinite(t.data).all())
    err = TrainingDivergedError(f"{phase} loss became {value} at iteration {it} (adam step {state.step}, lr {state.lr})")
    err.dump = dump
    raise err


def _arrays(corpus):
    if len(corpus) == 0:
        raise ConfigError("corpus is empty", key="corpus")
    return corpus.hr, corpus.lr, corpus.up


def _sgd_loop(cfg, params, step_fn, eval_fn, report):
    """Shared Adam loop: ``step_fn(rng)`` returns a scalar loss tensor built on the active tape."""
    state = cfg.adam()
    leaves = list(params.values())
    points = _eval_points(cfg)
    running = []
    start = time.perf_counter()
    for it in range(cfg.iterations + 1):
        if it in points:
            val = eval_fn(params)
            mean_loss = float(np.mean(running)) if running else float("nan")
            report.add(it, mean_loss, *val)
            running = []
            log.info("%s iter %d loss %.5f val_l1 %.5f", cfg.phase, it, mean_loss, val[0])
        if it == cfg.iterations:
            break
        params.zero_grad()
        with Tape() as tape:
            loss = step_fn(_batch_rng(cfg, it))
        value = loss.item()
        _check_finite(value, cfg.phase, it, state, params)
        backward(loss, tape, leaves=leaves)
        adam_step(params, params.grads(), state)
        running.append(value)
    params.zero_grad()
    report.wall_clock = time.perf_counter() - start
    return params, report


def denoiser_val_l1(params, corpus, sched, seed=0, denoiser=None):
    """Per-step validation L1 of the denoiser and of the identity baseline ``x0' = x_t``.

    Returns two arrays indexed by ``t - 1``.
    """
    hr, _, up = _arrays(corpus)
    net = denoiser or Denoiser(params)
    rng = np.random.default_rng([seed, 101])
    model, ident = [], []
    for t in range(1, sched.T + 1):
        eps = rng.standard_normal(hr.shape)
        x_t = forward_marginal(hr, up, t, sched, eps)
        model.append(l1_loss(net(x_t, up, t), hr).item())
        ident.append(l1_loss(x_t, hr).item())
    return np.array(model), np.array(ident)


def pretrain_denoiser(corpus, sched, cfg=None, val=None, params=None):
    """Train ``f(x_t, y0, t) -> x0`` on states drawn from the forward marginal."""
    cfg = (cfg or TrainConfig(phase="denoiser", iterations=DEFAULT_ITERATIONS["denoiser"])).validate()
    hr, _, up = _arrays(corpus)
    val = val or corpus
    if params is None:
        params = init_params("denoiser", cfg.seed, channels=hr.shape[1], width=cfg.width, T=sched.T)
    params.set_trainable(True)

    def step(rng):
        idx = rng.integers(0, len(hr), cfg.batch)
        t = int(rng.integers(1, sched.T + 1))
        x0, y0 = hr[idx], up[idx]
        x_t = forward_marginal(x0, y0, t, sched, rng.standard_normal(x0.shape))
        return l1_loss(Denoiser(params)(x_t.detach(), y0, t), x0)

    def evaluate(p):
        per_t, _ = denoiser_val_l1(p, val, sched, cfg.seed)
        return float(per_t.mean()), float("nan"), float("nan")

    report = TrainReport("denoiser")
    _sgd_loop(cfg, params, step, evaluate, report)
    params.set_trainable(False)
    return params, report


def bicubic_val_l1(corpus):
    hr, _, up = _arrays(corpus)
    return float(np.abs(up.astype(np.float64) - hr).mean())


def pretrain_upsampler(corpus, cfg=None, val=None, params=None):
    """Train the regression upsampler with L1 to the HR image; flags failure to beat bicubic."""
    cfg = (cfg or TrainConfig(phase="upsampler", iterations=DEFAULT_ITERATIONS["upsampler"])).validate()
    hr, lr, _ = _arrays(corpus)
    val = val or corpus
    vhr, vlr, _ = _arrays(val)
    if params is None:
        params = init_params("upsampler", cfg.seed, channels=hr.shape[1], width=cfg.width)
    params.set_trainable(True)

    def step(rng):
        idx = rng.integers(0, len(hr), cfg.batch)
        return l1_loss(upsampler_forward(params, lr[idx]), hr[idx])

    def evaluate(p):
        out = upsampler_forward(p, vlr)
        return l1_loss(out, vhr).item(), perceptual_proxy(out, vhr).item(), float("nan")

    report = TrainReport("upsampler")
    _sgd_loop(cfg, params, step, evaluate, report)
    params.set_trainable(False)
    baseline = bicubic_val_l1(val)
    report.flags["bicubic_val_l1"] = baseline
    report.flags["beats_bicubic"] = report.final[2] < baseline
    if not report.flags["beats_bicubic"]:
        log.warning("upsampler val L1 %.5f did not beat bicubic %.5f", report.final[2], baseline)
    return params, report


def predictor_chain_loss(pred_params, den_params, x0, y0, z_start, sched, weights):
    """Final-output loss of the full T-step chain started from the bicubic image.

    Builds on the active tape when called inside one; returns ``(loss, output)``.
    """
    x_start = init_state(y0, sched.T, sched, z_start)
    noise = _PredictedNoise(NoisePredictor(pred_params), Tensor(y0))
    result = run_chain(x_start, y0, sched.T, sched, Denoiser(den_params), noise)
    return loss_total(result.output, x0, weights), result.output


def predictor_val(pred_params, den_params, corpus, sched, weights, seed=0):
    """``(val L1, val proxy, val loss_total)`` of the bicubic-initialised chain."""
    hr, _, up = _arrays(corpus)
    z = np.random.default_rng([seed, 202]).standard_normal(hr.shape)
    loss, out = predictor_chain_loss(pred_params, den_params, hr, up, z, sched, weights)
    return l1_loss(out, hr).item(), perceptual_proxy(out, hr).item(), loss.item()


def train_predictor(corpus, sched, denoiser, cfg=None, val=None, params=None):
    """End-to-end training of the noise predictor through the whole reverse chain.

    Each iteration starts from the bicubic image plus fresh noise at step T,
    runs every reverse step with predicted noise (none at t = 1), and
    backpropagates the final-output loss into the predictor only.
    """
    if denoiser is None:
        raise MissingArtifactError("train_predictor needs a pretrained denoiser (run pretrain-denoiser)")
    cfg = (cfg or TrainConfig(phase="predictor", iterations=DEFAULT_ITERATIONS["predictor"])).validate()
    if cfg.phase != "predictor":
        cfg = replace(cfg, phase="predictor")
    hr, _, up = _arrays(corpus)
    val = val or corpus
    weights = cfg.weights()
    if params is None:
        params = init_params("predictor", cfg.seed, channels=hr.shape[1], width=cfg.width, T=sched.T)
    denoiser.set_trainable(False)
    params.set_trainable(True)

    def step(rng):
        idx = rng.integers(0, len(hr), cfg.batch)
        z = rng.standard_normal(hr[idx].shape)
        loss, _ = predictor_chain_loss(params, denoiser, hr[idx], up[idx], z, sched, weights)
        return loss

    def evaluate(p):
        return predictor_val(p, denoiser, val, sched, weights, cfg.seed)

    report = TrainReport("predictor")
    _sgd_loop(cfg, params, step, evaluate, report)
    params.set_trainable(False)
    return params, report


def predictor_gradients(pred_params, den_params, corpus, sched, cfg, iteration=0):
    """Gradients of one training iteration's loss for both networks (nothing is updated)."""
    hr, _, up = _arrays(corpus)
    rng = _batch_rng(replace(cfg, phase="predictor"), iteration)
    idx = rng.integers(0, len(hr), cfg.batch)
    z = rng.standard_normal(hr[idx].shape)
    pred_params.set_trainable(True)
    den_params.set_trainable(False)
    pred_params.zero_grad()
    den_params.zero_grad()
    with Tape() as tape:
        loss, _ = predictor_chain_loss(pred_params, den_params, hr[idx], up[idx], z, sched, cfg.weights())
    backward(loss, tape, leaves=list(pred_params.values()) + list(den_params.values()))
    grads = {"predictor": pred_params.grads(), "denoiser": den_params.grads()}
    pred_params.zero_grad()
    den_params.zero_grad()
    pred_params.set_trainable(False)
    return grads
