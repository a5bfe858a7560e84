"""Minimal reverse-mode automatic differentiation over float32 arrays."""

from .gradcheck import GradCheckReport, finite_diff_check, nudge_from_kinks
from .ops import (
    LEAKY_SLOPE,
    add,
    add_scaled,
    concat_channels,
    conv2d,
    crop_border,
    l1_loss,
    leaky_relu,
    mul_scalar,
    resample,
    sub,
    total,
)
from .optim import AdamState, adam_step
from .tensor import DTYPE, Tape, Tensor, as_tensor, backward


def elementwise(kind, *args):
    """Dispatch a pointwise op by name."""
    table = {
        "add": add,
        "sub": sub,
        "mul_scalar": mul_scalar,
        "add_scaled": add_scaled,
        "leaky_relu": leaky_relu,
    }
    if kind not in table:
        raise ValueError(f"unknown elementwise kind {kind!r}")
    return table[kind](*args)


__all__ = [
    "DTYPE",
    "LEAKY_SLOPE",
    "AdamState",
    "GradCheckReport",
    "Tape",
    "Tensor",
    "adam_step",
    "add",
    "add_scaled",
    "as_tensor",
    "backward",
    "concat_channels",
    "conv2d",
    "crop_border",
    "elementwise",
    "finite_diff_check",
    "l1_loss",
    "leaky_relu",
    "mul_scalar",
    "nudge_from_kinks",
    "resample",
    "sub",
    "total",
]
