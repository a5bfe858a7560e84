"""Residual-shifting schedule: shifting sequence, increments and noise scale."""

from dataclasses import dataclass

import numpy as np

from .errors import EtaBoundsError, KappaError, ScheduleOrderError, StepCountError, StepRangeError

DEFAULT_T = 4
DEFAULT_ETA_MIN = 0.001
DEFAULT_ETA_MAX = 0.999
DEFAULT_KAPPA = 2.0


@dataclass(frozen=True)
class DiffusionSchedule:
    """Shifting sequence ``eta[0..T]`` with ``eta[0] = 0`` and noise scale ``kappa``.

    Values are held in float64; consumers cast when combining with float32
    image tensors.
    """

    T: int
    eta: tuple
    kappa: float

    def __post_init__(self):
        validate_schedule(self)

    @property
    def alpha(self):
        """Increments ``alpha[t] = eta[t] - eta[t-1]``; ``alpha[0]`` is unused (0)."""
        eta = np.asarray(self.eta)
        return np.concatenate([[0.0], np.diff(eta)])

    def eta_at(self, t):
        self.check_step(t, lo=0)
        return self.eta[t]

    def alpha_at(self, t):
        self.check_step(t)
        return self.eta[t] - self.eta[t - 1]

    def check_step(self, t, lo=1):
        if not (lo <= t <= self.T) or int(t) != t:
            raise StepRangeError(f"step {t} outside {lo}..{self.T}")

    def as_dict(self):
        return {"T": self.T, "eta": list(self.eta), "kappa": self.kappa}


def validate_schedule(sched):
    if sched.T < 1:
        raise StepCountError(f"T must be >= 1, got {sched.T}", key="schedule.T")
    if sched.kappa <= 0 or not np.isfinite(sched.kappa):
        raise KappaError(f"kappa must be > 0, got {sched.kappa}", key="schedule.kappa")
    eta = np.asarray(sched.eta, dtype=np.float64)
    if eta.shape != (sched.T + 1,):
        raise ScheduleOrderError(f"eta needs {sched.T + 1} entries, got {eta.size}")
    if eta[0] != 0.0:
        raise ScheduleOrderError("eta[0] must be exactly 0")
    if not eta[1] > 0:
        raise EtaBoundsError(f"eta[1] must be > 0, got {eta[1]}", key="schedule.eta_min")
    if not eta[-1] < 1:
        raise EtaBoundsError(f"eta[T] must be < 1, got {eta[-1]}", key="schedule.eta_max")
    if np.any(np.diff(eta) <= 0):
        raise ScheduleOrderError(f"eta must be strictly increasing, got {eta.tolist()}")


def build_schedule(T=DEFAULT_T, eta_min=DEFAULT_ETA_MIN, eta_max=DEFAULT_ETA_MAX, kappa=DEFAULT_KAPPA):
    """Geometric shifting sequence from ``eta_min`` (t=1) to ``eta_max`` (t=T).

    >>> build_schedule(1).eta
    (0.0, 0.999)
    """
    if int(T) != T or T < 1:
        raise StepCountError(f"T must be an integer >= 1, got {T}", key="schedule.T")
    if not eta_min > 0:
        raise EtaBoundsError(f"eta_min must be > 0, got {eta_min}", key="schedule.eta_min")
    if not eta_max < 1:
        raise EtaBoundsError(f"eta_max must be < 1, got {eta_max}", key="schedule.eta_max")
    if not eta_min < eta_max:
        raise ScheduleOrderError(
            f"eta_min ({eta_min}) must be below eta_max ({eta_max})", key="schedule.eta_min"
        )
    if not kappa > 0:
        raise KappaError(f"kappa must be > 0, got {kappa}", key="schedule.kappa")
    T = int(T)
    if T == 1:
        eta = [eta_max]
    else:
        ratio = eta_max / eta_min
        eta = [eta_min * ratio ** ((t - 1) / (T - 1)) for t in range(1, T + 1)]
        eta[-1] = float(eta_max)
    return DiffusionSchedule(T=T, eta=tuple([0.0] + [float(e) for e in eta]), kappa=float(kappa))
