"""Closed-form residual-shifting diffusion math over image tensors.

All functions are pure. Noise draws are always passed in by the caller, so
every stochastic path is reproducible. Arrays are accepted wherever a
``Tensor`` is, and results are always tensors (differentiable when an input
is tracked on an active tape).

Step convention: the noise used while producing ``x_{t-1}`` from ``x_t`` is
computed from the reverse moments at step ``t``.
"""

import enum
import math
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, add, add_scaled, as_tensor, mul_scalar, sub
from .errors import DomainError, ShapeError


class NoiseStrategy(enum.Enum):
    RANDOM_GAUSSIAN = "random"
    PREDICTED = "predicted"
    APPROXIMATE_OPTIMAL = "approx_optimal"
    THEORETICAL_OPTIMAL = "optimal"
    ZERO = "zero"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        for member in cls:
            if value in (member.value, member.name, member.name.lower()):
                return member
        raise ValueError(f"unknown noise strategy {value!r}; expected one of {[m.value for m in cls]}")


@dataclass(frozen=True)
class ReverseMoments:
    mean: Tensor
    std: float


def _pair(a, b, what):
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"{what}: shapes {a.shape} and {b.shape} differ")
    return a, b


def forward_transition(x_prev, e0, t, sched, eps):
    """One forward step: ``x_prev + alpha_t*e0 + kappa*sqrt(alpha_t)*eps``."""
    sched.check_step(t)
    x_prev, e0 = _pair(x_prev, e0, "forward_transition")
    _, eps = _pair(x_prev, eps, "forward_transition")
    alpha = sched.alpha_at(t)
    shift = add_scaled(alpha, e0, sched.kappa * math.sqrt(alpha), eps)
    return add(x_prev, shift)


def forward_marginal(x0, y0, t, sched, eps):
    """Sample of ``q(x_t | x0, y0)``: ``(1-eta_t)*x0 + eta_t*y0 + kappa*sqrt(eta_t)*eps``."""
    sched.check_step(t)
    x0, y0 = _pair(x0, y0, "forward_marginal")
    _, eps = _pair(x0, eps, "forward_marginal")
    eta = sched.eta[t]
    blend = add_scaled(1.0 - eta, x0, eta, y0)
    return add_scaled(1.0, blend, sched.kappa * math.sqrt(eta), eps)


def init_state(y0_up, t_start, sched, z):
    """Start state for sampling from ``t_start`` around the upsampled LR image."""
    sched.check_step(t_start)
    y0_up, z = _pair(y0_up, z, "init_state")
    return add_scaled(1.0, y0_up, sched.kappa * math.sqrt(sched.eta[t_start]), z)


def reverse_coefficients(t, sched):
    """``(eta_{t-1}/eta_t, alpha_t/eta_t, std)`` for reverse step ``t``."""
    sched.check_step(t)
    eta_prev, eta_t = sched.eta[t - 1], sched.eta[t]
    alpha = eta_t - eta_prev
    keep = eta_prev / eta_t
    std = sched.kappa * math.sqrt(keep * alpha)
    return keep, alpha / eta_t, std


def reverse_moments(x_t, x0_pred, t, sched):
    keep, take, std = reverse_coefficients(t, sched)
    x_t, x0_pred = _pair(x_t, x0_pred, "reverse_moments")
    if t == 1:
        # eta_0 = 0: the mean is the prediction itself, bit for bit
        return ReverseMoments(mean=add_scaled(0.0, x_t, 1.0, x0_pred), std=0.0)
    return ReverseMoments(mean=add_scaled(keep, x_t, take, x0_pred), std=std)


def reverse_step(x_t, x0_pred, t, sched, z=None):
    """``x_{t-1} = mean + std*z``; ``z`` must be zero (or None) at t = 1."""
    moments = reverse_moments(x_t, x0_pred, t, sched)
    if z is None:
        return moments.mean
    z = as_tensor(z)
    if z.shape != moments.mean.shape:
        raise ShapeError(f"reverse_step: noise shape {z.shape} != state shape {moments.mean.shape}")
    if t == 1:
        if np.any(z.data != 0):
            raise DomainError("reverse_step: the final step takes no noise (z must be 0 at t = 1)")
        return moments.mean
    return add_scaled(1.0, moments.mean, moments.std, z)


def deterministic_state(x0, y0, s, sched):
    """Noiseless marginal mean ``(1-eta_s)*x0 + eta_s*y0`` for ``s`` in 0..T."""
    sched.check_step(s, lo=0)
    x0, y0 = _pair(x0, y0, "deterministic_state")
    eta = sched.eta[s]
    return add_scaled(1.0 - eta, x0, eta, y0)


def optimal_noise(x0, y0, moments, t, sched):
    """Noise that lands the reverse step on the noiseless marginal mean at ``t-1``.

    This maximises the flat-prior posterior likelihood of ``x0`` given the
    resulting state; undefined at t = 1 where the step carries no noise.
    """
    sched.check_step(t)
    if t == 1 or moments.std == 0:
        raise DomainError("optimal_noise is undefined at t = 1 (std = 0); use z = 0 there")
    target = deterministic_state(x0, y0, t - 1, sched)
    if target.shape != moments.mean.shape:
        raise ShapeError(f"optimal_noise: target {target.shape} vs mean {moments.mean.shape}")
    return mul_scalar(sub(target, moments.mean), 1.0 / moments.std)


def posterior_params(x_t, y0, t, sched):
    """Flat-prior posterior of ``x0`` given ``x_t``: ``(mean tensor, variance)``.

    The likelihood ``N(x_t; (1-eta)x0 + eta*y0, kappa^2 eta)`` read as a
    density in ``x0`` has variance ``kappa^2 eta / (1-eta)^2``; see
    ``unscaled_posterior_variance`` for the form without the second factor.
    """
    sched.check_step(t)
    eta = sched.eta[t]
    if eta >= 1:
        raise DomainError(f"posterior undefined for eta_t = {eta} >= 1")
    x_t, y0 = _pair(x_t, y0, "posterior_params")
    mean = add_scaled(1.0 / (1.0 - eta), x_t, -eta / (1.0 - eta), y0)
    var = sched.kappa**2 * eta / (1.0 - eta) ** 2
    return mean, var


def unscaled_posterior_variance(t, sched):
    """``kappa^2 eta_t / (1 - eta_t)``: the marginal noise variance divided once by ``1 - eta_t``.

    Kept for comparison only; it is not the variance of the flat-prior
    posterior (it misses one factor of ``1 / (1 - eta_t)``).
    """
    sched.check_step(t)
    eta = sched.eta[t]
    return sched.kappa**2 * eta / (1.0 - eta)
