"""Uncertainty-weighted aggregation of K critic outputs.

The aggregate is ``q_e = mean + sign * beta(n) * std`` where ``std`` is the
Bessel-corrected sample standard deviation over the ensemble and ``beta(n)``
follows one of several schedules over the alternating-iteration index ``n``.
Min-selection modes return the smallest critic output instead.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NumericError, ShapeError

MODES = (
    "tdu_exponential",
    "uncertainty_agnostic",
    "constant_optimistic",
    "linear_decay",
    "pessimism_dec",
    "pessimism_inc",
    "pessimism_min",
    "min_of_all",
)
MIN_MODES = ("pessimism_min", "min_of_all")
PESSIMISTIC_MODES = ("pessimism_dec", "pessimism_inc")
# modes whose beta is derived from beta0/beta_min and must start at 1
_DECAY_MODES = ("tdu_exponential", "linear_decay", "pessimism_dec", "pessimism_inc")


@dataclass(frozen=True)
class TduSchedule:
    beta0: float = 0.85
    beta_min: float = 0.15
    decay_lambda: float = 3.0
    n_total: int = 200
    mode: str = "tdu_exponential"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown aggregation mode {self.mode!r}; choose from {MODES}")
        if not 0.0 < self.beta0 <= 1.0:
            raise ValueError(f"beta0 must lie in (0, 1], got {self.beta0}")
        if self.beta_min < 0.0:
            raise ValueError(f"beta_min must be >= 0, got {self.beta_min}")
        if self.decay_lambda <= 0.0:
            raise ValueError(f"decay_lambda must be positive, got {self.decay_lambda}")
        if int(self.n_total) != self.n_total or self.n_total < 1:
            raise ValueError(f"n_total must be a positive integer, got {self.n_total}")
        if self.mode in _DECAY_MODES and abs(self.beta0 + self.beta_min - 1.0) > 1e-12:
            raise ValueError("beta0 + beta_min must equal 1")

    @property
    def sign(self) -> float:
        return -1.0 if self.mode in PESSIMISTIC_MODES else 1.0

    def with_mode(self, mode: str) -> "TduSchedule":
        return TduSchedule(self.beta0, self.beta_min, self.decay_lambda, self.n_total, mode)


@dataclass(frozen=True)
class AggregateResult:
    mean: float
    std: float
    beta: float
    q_e: float


@dataclass(frozen=True)
class AggregateBatch:
    mean: np.ndarray
    std: np.ndarray
    beta: float
    q_e: np.ndarray

    def __len__(self) -> int:
        return len(self.q_e)

    def row(self, i: int) -> AggregateResult:
        return AggregateResult(float(self.mean[i]), float(self.std[i]), self.beta, float(self.q_e[i]))


def _exp_beta(s: TduSchedule, n: float) -> float:
    return s.beta0 * math.exp(-s.decay_lambda * n / s.n_total) + s.beta_min


def beta(schedule: TduSchedule, n: int) -> float:
    """Uncertainty coefficient at alternating iteration ``n`` (``0 <= n <= N``).

    ``pessimism_inc`` mirrors the exponential curve and rescales it to run 0 -> 1;
    ``pessimism_dec`` is its complement (1 -> 0). Min-selection modes do not use
    a coefficient and report 0.
    """
    if not 0 <= n <= schedule.n_total:
        raise ValueError(f"iteration index {n} outside [0, {schedule.n_total}]")
    mode = schedule.mode
    if mode == "tdu_exponential":
        return _exp_beta(schedule, n)
    if mode == "linear_decay":
        return 1.0 - n / schedule.n_total
    if mode == "constant_optimistic":
        return 1.0
    if mode in ("uncertainty_agnostic",) + MIN_MODES:
        return 0.0
    end = _exp_beta(schedule, schedule.n_total)
    rising = (1.0 - _exp_beta(schedule, n)) / (1.0 - end)
    if mode == "pessimism_inc":
        return rising
    return 1.0 - rising


def _as_matrix(q) -> np.ndarray:
    try:
        q = np.asarray(q, dtype=np.float64)
    except ValueError as exc:
        raise ShapeError(f"ragged critic-value rows: {exc}") from None
    if q.ndim != 2:
        raise ShapeError(f"expected a (batch, K) matrix, got shape {q.shape}")
    if not np.all(np.isfinite(q)):
        bad = int(np.argwhere(~np.isfinite(q))[0, 0])
        raise NumericError(f"non-finite critic value in row {bad}")
    return q


def _check_arity(k: int, schedule: TduSchedule) -> None:
    if schedule.mode in MIN_MODES:
        if k < 1:
            raise ShapeError("need at least one critic value")
    elif k < 2:
        raise ShapeError(f"mode {schedule.mode!r} needs K >= 2 critic values, got {k}")


def _moments(q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # sorting first makes the result independent of critic order, bit for bit;
    # shifting by the row minimum keeps equal rows at exactly zero spread
    k = q.shape[1]
    s = np.sort(q, axis=1)
    lo, hi = s[:, 0], s[:, -1]
    mean = np.clip(lo + (s - lo[:, None]).sum(axis=1) / k, lo, hi)
    if k < 2:
        return mean, np.zeros_like(mean)
    dev = s - mean[:, None]
    std = np.sqrt((dev * dev).sum(axis=1) / (k - 1))
    return mean, std


def aggregate_batch(q_matrix, schedule: TduSchedule, n: int) -> AggregateBatch:
    """Row-wise aggregation of a ``(batch, K)`` matrix of critic outputs."""
    q = _as_matrix(q_matrix)
    _check_arity(q.shape[1], schedule)
    b = beta(schedule, n)
    mean, std = _moments(q)
    if schedule.mode in MIN_MODES:
        q_e = q.min(axis=1)
    elif schedule.mode == "uncertainty_agnostic":
        q_e = mean.copy()
    else:
        q_e = mean + schedule.sign * b * std
    return AggregateBatch(mean, std, b, q_e)


def aggregate(q_values, schedule: TduSchedule, n: int) -> AggregateResult:
    return aggregate_batch(np.asarray(q_values, dtype=np.float64)[None, :], schedule, n).row(0)


def aggregate_grad(q_matrix, schedule: TduSchedule, n: int) -> np.ndarray:
    """Partial derivatives ``d q_e / d q_k`` for every row, shape ``(batch, K)``.

    Rows with zero spread use the mean's gradient (the spread term has a kink
    there). Min modes route the whole gradient to the first minimal critic.
    """
    q = _as_matrix(q_matrix)
    bsz, k = q.shape
    _check_arity(k, schedule)
    if schedule.mode in MIN_MODES:
        w = np.zeros_like(q)
        w[np.arange(bsz), q.argmin(axis=1)] = 1.0
        return w
    w = np.full_like(q, 1.0 / k)
    if schedule.mode == "uncertainty_agnostic":
        return w
    b = beta(schedule, n)
    mean, std = _moments(q)
    live = std > 0
    if b != 0.0 and np.any(live):
        dstd = (q[live] - mean[live, None]) / ((k - 1) * std[live, None])
        w[live] += schedule.sign * b * dstd
    return w
