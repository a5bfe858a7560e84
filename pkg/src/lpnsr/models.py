"""Tiny residual conv nets: denoiser, noise predictor and regression upsampler.

Each network is three 3x3 conv layers (``width`` channels, leaky ReLU 0.2)
built only from the autodiff primitives. Step conditioning is a learned
per-step bias added to the first layer's channels.
"""

import hashlib
from collections.abc import Mapping
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, add, as_tensor, concat_channels, conv2d, leaky_relu
from .data import SCALE, bicubic_resample
from .errors import ShapeError, StepRangeError

ARCHS = ("denoiser", "predictor", "upsampler")
DEFAULT_WIDTH = 16


@dataclass
class NetworkParams(Mapping):
    """Named parameter tensors plus the architecture they belong to."""

    arch: str
    channels: int
    width: int
    T: int
    tensors: dict = field(default_factory=dict)

    def __getitem__(self, name):
        return self.tensors[name]

    def __iter__(self):
        return iter(self.tensors)

    def __len__(self):
        return len(self.tensors)

    @property
    def n_params(self):
        return int(sum(t.size for t in self.tensors.values()))

    def set_trainable(self, flag):
        for t in self.tensors.values():
            t.requires_grad = flag
            t.grad = None
        return self

    def zero_grad(self):
        for t in self.tensors.values():
            t.grad = None

    def grads(self):
        return {k: t.grad for k, t in self.tensors.items() if t.grad is not None}

    def checksum(self):
        h = hashlib.sha256(self.arch.encode())
        for name in self.tensors:
            h.update(name.encode())
            h.update(self.tensors[name].data.tobytes())
        return h.hexdigest()

    def copy(self):
        tensors = {k: Tensor(t.data.copy(), requires_grad=t.requires_grad, name=k) for k, t in self.tensors.items()}
        return NetworkParams(self.arch, self.channels, self.width, self.T, tensors)

    def embedded_steps(self):
        """Steps carrying a learned bias; the predictor never runs at t = 1."""
        if self.arch == "denoiser":
            return range(1, self.T + 1)
        if self.arch == "predictor":
            return range(2, self.T + 1)
        return range(0)


def _in_channels(arch, channels):
    return {"denoiser": 2 * channels, "predictor": 3 * channels, "upsampler": channels}[arch]


def init_params(arch, seed=0, channels=1, width=DEFAULT_WIDTH, T=4):
    """Seeded fan-in-scaled uniform conv weights; zero biases, step biases and output layer."""
    if arch not in ARCHS:
        raise ValueError(f"unknown architecture {arch!r}; expected one of {ARCHS}")
    rng = np.random.default_rng([seed, ARCHS.index(arch)])
    gain = np.sqrt(2.0 / (1.0 + 0.2**2))
    shapes = [(width, _in_channels(arch, channels)), (width, width), (channels, width)]
    params = NetworkParams(arch, channels, width, T)
    for i, (cout, cin) in enumerate(shapes, start=1):
        bound = gain * np.sqrt(3.0 / (cin * 9))
        if i == len(shapes):
            w = np.zeros((cout, cin, 3, 3))
        else:
            w = rng.uniform(-bound, bound, size=(cout, cin, 3, 3))
        params.tensors[f"conv{i}.weight"] = Tensor(w, name=f"conv{i}.weight")
        params.tensors[f"conv{i}.bias"] = Tensor(np.zeros(cout), name=f"conv{i}.bias")
    for t in params.embedded_steps():
        params.tensors[f"step_bias.{t}"] = Tensor(np.zeros(width), name=f"step_bias.{t}")
    return params


def _trunk(params, x, t=None):
    bias1 = params["conv1.bias"]
    if t is not None:
        if t not in params.embedded_steps():
            raise StepRangeError(f"{params.arch} has no embedding for step {t}")
        bias1 = add(bias1, params[f"step_bias.{t}"])
    h = leaky_relu(conv2d(x, params["conv1.weight"], bias1))
    h = leaky_relu(conv2d(h, params["conv2.weight"], params["conv2.bias"]))
    return conv2d(h, params["conv3.weight"], params["conv3.bias"])


def _same(*tensors):
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.shape != ref:
            raise ShapeError(f"input shapes differ: {ref} vs {t.shape}")


def denoiser_forward(params, x_t, y0, t):
    """Clean-image estimate ``x_t + residual(x_t, y0, t)``."""
    x_t, y0 = as_tensor(x_t), as_tensor(y0)
    _same(x_t, y0)
    return add(x_t, _trunk(params, concat_channels([x_t, y0]), t))


def predictor_forward(params, x_t, x0_pred, y0, t):
    """Noise map for the step producing ``x_{t-1}``; unconstrained in scale."""
    if t < 2:
        raise StepRangeError("the noise predictor is not used at t = 1")
    x_t, x0_pred, y0 = as_tensor(x_t), as_tensor(x0_pred), as_tensor(y0)
    _same(x_t, x0_pred, y0)
    return _trunk(params, concat_channels([x_t, x0_pred, y0]), t)


def upsampler_forward(params, y_lr):
    """4x estimate: bicubic upsample plus a learned refinement."""
    y_lr = as_tensor(y_lr)
    if y_lr.ndim != 4 or y_lr.shape[1] != params.channels:
        raise ShapeError(f"upsampler expects [B,{params.channels},h,w], got {y_lr.shape}")
    base = Tensor(bicubic_resample(y_lr.data, SCALE, "up"))
    return add(base, _trunk(params, base))


class Denoiser:
    """Callable wrapper around denoiser parameters."""

    def __init__(self, params):
        self.params = params

    def __call__(self, x_t, y0, t):
        return denoiser_forward(self.params, x_t, y0, t)


class OracleDenoiser:
    """Test double that always returns the ground-truth HR image."""

    def __init__(self, x0):
        self.x0 = as_tensor(x0)

    def __call__(self, x_t, y0, t):
        if as_tensor(x_t).shape != self.x0.shape:
            raise ShapeError(f"oracle holds {self.x0.shape}, got {as_tensor(x_t).shape}")
        return Tensor(self.x0.data)


class NoisePredictor:
    def __init__(self, params):
        self.params = params

    def __call__(self, x_t, x0_pred, y0, t):
        return predictor_forward(self.params, x_t, x0_pred, y0, t)


class Upsampler:
    def __init__(self, params):
        self.params = params

    def __call__(self, y_lr):
        return upsampler_forward(self.params, y_lr)

