"""Central finite-difference check against the reverse-mode gradient."""

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tape, Tensor, backward, kink_watch, reference_precision

KINK_MARGIN = 1e-3


@dataclass
class GradCheckReport:
    passed: bool
    max_abs_err: float
    max_rel_err: float
    checked: int
    skipped_kinks: int
    failures: list = field(default_factory=list)


def nudge_from_kinks(values, margin=KINK_MARGIN):
    """Push entries lying within ``margin`` of zero out to +/- 2*margin."""
    values = np.array(values, dtype=np.float32)
    close = np.abs(values) < margin
    values[close] = np.where(values[close] >= 0, 2 * margin, -2 * margin)
    return values


def _probe(f, x):
    """Float64 value of ``f`` at ``x`` and the signs of every kinked quantity."""
    with reference_precision(), kink_watch() as watch:
        value = float(f(Tensor(x)).data.reshape(()))
    return value, watch.signs


def _flips(signs, base):
    return any((a != b).any() for a, b in zip(signs, base))


def finite_diff_check(f, x, tol_rel=1e-2, tol_abs=1e-4, steps=(1e-3, 1e-4, 1e-5)):
    """Compare autodiff and finite-difference gradients of scalar ``f`` at ``x``.

    Element ``i`` passes when ``|g_ad - g_fd| <= tol_abs + tol_rel * |g_fd|``.
    The reference values are computed in float64 so the quotient is not
    swamped by float32 rounding. The ops are piecewise linear, so the
    quotient is exact unless a perturbation moves some value (leaky-relu
    input, L1 difference) across its kink. For each element the largest step
    in ``steps`` whose central or one-sided perturbation crosses no kink is
    used; elements with no clean step are skipped and counted.
    """
    x0 = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float32)
    leaf = Tensor(x0, requires_grad=True)
    with Tape() as tape:
        root = f(leaf)
    backward(root, tape, leaves=[leaf])
    g_ad = leaf.grad.astype(np.float64).ravel()

    flat = x0.astype(np.float64).ravel()
    f0, base_signs = _probe(f, flat.reshape(x0.shape))
    g_fd = np.zeros(flat.size)
    skipped = []
    for i in range(flat.size):
        for h in steps:
            plus, minus = flat.copy(), flat.copy()
            plus[i] += h
            minus[i] -= h
            fp, sp = _probe(f, plus.reshape(x0.shape))
            fm, sm = _probe(f, minus.reshape(x0.shape))
            ok_p, ok_m = not _flips(sp, base_signs), not _flips(sm, base_signs)
            if not (ok_p or ok_m):
                continue
            hi, fhi = (plus[i], fp) if ok_p else (flat[i], f0)
            lo, flo = (minus[i], fm) if ok_m else (flat[i], f0)
            g_fd[i] = (fhi - flo) / (hi - lo)
            break
        else:
            skipped.append(i)

    mask = np.ones(flat.size, dtype=bool)
    mask[skipped] = False
    err = np.abs(g_ad - g_fd)
    bound = tol_abs + tol_rel * np.abs(g_fd)
    bad = np.flatnonzero(mask & (err > bound))
    # relative error is only meaningful where the gradient is not ~0
    rel = np.where(np.abs(g_fd) > tol_abs, err / np.maximum(np.abs(g_fd), tol_abs), 0.0)
    return GradCheckReport(
        passed=bool(bad.size == 0 and mask.any()),
        max_abs_err=float(err[mask].max()) if mask.any() else float("nan"),
        max_rel_err=float(rel[mask].max()) if mask.any() else float("nan"),
        checked=int(mask.sum()),
        skipped_kinks=len(skipped),
        failures=[(int(i), float(g_ad[i]), float(g_fd[i])) for i in bad],
    )
