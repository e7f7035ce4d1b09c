"""Bayesian target over behaviour tendencies.

Weights get a Jeffreys prior truncated to ``[w_min, w_max]``; thresholds get
independent Normal priors. The sampler works on the unconstrained point
``(ln w1, .., ln w4, delta1, delta2)`` where the truncated Jeffreys prior is
uniform on a box, so the weight prior and the log-Jacobian cancel exactly.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Mapping, Sequence

import numpy as np

from . import kernels
from .datagen import Dataset, DatasetRecord
from .decision_model import (
    PARAM_NAMES,
    Theta,
    direction_utilities,
    move_logit,
)
from .gridworld import Direction

N_PARAMS = len(PARAM_NAMES)
WEIGHT_IDX = slice(0, 4)
THRESHOLD_IDX = slice(4, 6)


@dataclass(frozen=True)
class PriorSpec:
    w_min: float = 1e-3
    w_max: float = 10.0
    delta_mean: float = 50.0
    delta_sd: float = 25.0

    def __post_init__(self):
        if not (0 < self.w_min < self.w_max) or not math.isfinite(self.w_max):
            raise ValueError("prior needs 0 < w_min < w_max < inf")
        if not (self.delta_sd > 0 and math.isfinite(self.delta_sd)):
            raise ValueError("delta_sd must be positive")
        if not math.isfinite(self.delta_mean):
            raise ValueError("delta_mean must be finite")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping) -> "PriorSpec":
        unknown = set(data) - {"w_min", "w_max", "delta_mean", "delta_sd"}
        if unknown:
            raise ValueError(f"unknown prior fields: {sorted(unknown)}")
        return cls(**{k: float(v) for k, v in data.items()})

    @property
    def log_bounds(self) -> tuple[float, float]:
        return math.log(self.w_min), math.log(self.w_max)


def log_prior(theta: Theta, prior: PriorSpec) -> float:
    """Unnormalised log prior; ``-inf`` outside the weight truncation box."""
    weights = (theta.w1, theta.w2, theta.w3, theta.w4)
    if any(w < prior.w_min or w > prior.w_max for w in weights):
        return -math.inf
    lp = -sum(math.log(w) for w in weights)
    for delta in (theta.delta1, theta.delta2):
        lp -= 0.5 * ((delta - prior.delta_mean) / prior.delta_sd) ** 2
    return lp


def _log_sigmoid(z: float) -> float:
    return -float(np.logaddexp(0.0, -z))


def record_log_likelihood(theta: Theta, record: DatasetRecord) -> float:
    """Log-probability of one record's (move, direction) pair.

    Evaluated through the scalar decision-model functions, independently of
    the batched kernels.
    """
    move, direction = record.decision.move, record.decision.direction
    if (move == 0) != (direction is Direction.NONE):
        raise ValueError("invalid record: move and direction disagree")
    z = move_logit(theta, record.state)
    ll = _log_sigmoid(z) if move else _log_sigmoid(-z)
    if move:
        if record.state.dirs[direction].oa == 1:
            return -math.inf
        util = direction_utilities(theta, record.state)
        open_u = np.array([util[d] for d in record.state.open_directions()])
        top = open_u.max()
        ll += util[direction] - (top + math.log(np.exp(open_u - top).sum()))
    return ll


def _check_dataset(dataset: Dataset, allow_empty: bool) -> Dataset:
    if not isinstance(dataset, Dataset):
        dataset = Dataset(dataset)
    if len(dataset) == 0 and not allow_empty:
        raise ValueError("dataset is empty (pass allow_empty=True for prior-only runs)")
    return dataset


def log_likelihood(theta: Theta, dataset: Dataset, backend: str | None = None) -> float:
    if len(dataset) == 0:
        return 0.0
    ll, _ = kernels.loglik_grad(theta.as_array(), dataset.packed, backend)
    return ll


def log_posterior(
    theta: Theta,
    dataset: Dataset | Sequence[DatasetRecord],
    prior: PriorSpec,
    *,
    allow_empty: bool = False,
    backend: str | None = None,
) -> float:
    """``log_prior + sum of record log-likelihoods`` (additive constants dropped)."""
    dataset = _check_dataset(dataset, allow_empty)
    lp = log_prior(theta, prior)
    if lp == -math.inf:
        return lp
    return lp + log_likelihood(theta, dataset, backend)


def transform(point) -> tuple[Theta, float]:
    """Map an unconstrained point to Theta; returns ``(theta, log_jacobian)``."""
    point = np.asarray(point, dtype=float)
    if point.shape != (N_PARAMS,):
        raise ValueError(f"expected a point of {N_PARAMS} coordinates")
    w = np.exp(point[WEIGHT_IDX])
    theta = Theta(*w.tolist(), *point[THRESHOLD_IDX].tolist())
    return theta, float(point[WEIGHT_IDX].sum())


def inverse_transform(theta: Theta) -> np.ndarray:
    values = theta.as_array()
    values[WEIGHT_IDX] = np.log(values[WEIGHT_IDX])
    return values


def _smooth_logp_grad(point: np.ndarray, packed, prior: PriorSpec, backend) -> tuple[float, np.ndarray]:
    # log posterior in unconstrained coordinates, ignoring the box indicator
    w = np.exp(point[WEIGHT_IDX])
    deltas = point[THRESHOLD_IDX]
    raw = np.concatenate([w, deltas])
    if packed is not None:
        ll, g_raw = kernels.loglik_grad(raw, packed, backend)
    else:
        ll, g_raw = 0.0, np.zeros(N_PARAMS)
    dev = (deltas - prior.delta_mean) / prior.delta_sd
    logp = ll - 0.5 * float(dev @ dev)
    grad = np.empty(N_PARAMS)
    # Jeffreys term (-v) and log-Jacobian (+v) cancel
    grad[WEIGHT_IDX] = w * g_raw[WEIGHT_IDX]
    grad[THRESHOLD_IDX] = g_raw[THRESHOLD_IDX] - dev / prior.delta_sd
    return logp, grad


def grad_log_posterior(
    point,
    dataset: Dataset | Sequence[DatasetRecord],
    prior: PriorSpec,
    *,
    allow_empty: bool = False,
    backend: str | None = None,
) -> np.ndarray:
    """Gradient of ``log_posterior(transform(point)) + log_jacobian``.

    Outside the truncation box the density is zero; the gradient returned
    there is that of the smooth part, which the sampler never uses.
    """
    dataset = _check_dataset(dataset, allow_empty)
    point = np.asarray(point, dtype=float)
    packed = dataset.packed if len(dataset) else None
    return _smooth_logp_grad(point, packed, prior, backend)[1]


class LogPosterior:
    """Sampler target in unconstrained coordinates.

    Calling it returns ``(logp, grad)`` for the free coordinates. Parameters
    not listed in ``free`` are held at their values in ``fixed``. ``lower`` and
    ``upper`` are the box bounds of the free coordinates (log-weight bounds;
    thresholds are unbounded).
    """

    def __init__(
        self,
        dataset: Dataset | Sequence[DatasetRecord],
        prior: PriorSpec | None = None,
        *,
        free: Sequence[str] = PARAM_NAMES,
        fixed: Theta | None = None,
        allow_empty: bool = False,
        backend: str | None = None,
    ):
        self.dataset = _check_dataset(dataset, allow_empty)
        self.prior = prior or PriorSpec()
        self.backend = backend
        unknown = set(free) - set(PARAM_NAMES)
        if unknown:
            raise ValueError(f"unknown parameters {sorted(unknown)}")
        self.free_idx = np.array([PARAM_NAMES.index(n) for n in PARAM_NAMES if n in free])
        if len(self.free_idx) < N_PARAMS and fixed is None:
            raise ValueError("fixed values are required when some parameters are not free")
        self._base = inverse_transform(fixed) if fixed is not None else np.zeros(N_PARAMS)
        self._packed = self.dataset.packed if len(self.dataset) else None
        lo, hi = self.prior.log_bounds
        full_lower = np.array([lo] * 4 + [-np.inf] * 2)
        full_upper = np.array([hi] * 4 + [np.inf] * 2)
        self.lower = full_lower[self.free_idx]
        self.upper = full_upper[self.free_idx]
        self.dim = len(self.free_idx)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(PARAM_NAMES[i] for i in self.free_idx)

    def full_point(self, x) -> np.ndarray:
        point = self._base.copy()
        point[self.free_idx] = x
        return point

    def __call__(self, x) -> tuple[float, np.ndarray]:
        x = np.asarray(x, dtype=float)
        if not np.all(np.isfinite(x)):
            return -math.inf, np.zeros(self.dim)
        point = self.full_point(x)
        lo, hi = self.prior.log_bounds
        if np.any(point[WEIGHT_IDX] < lo) or np.any(point[WEIGHT_IDX] > hi):
            return -math.inf, np.zeros(self.dim)
        logp, grad = _smooth_logp_grad(point, self._packed, self.prior, self.backend)
        return logp, grad[self.free_idx]

    def to_theta(self, x) -> Theta:
        return transform(self.full_point(x))[0]

    def theta_log_posterior(self, x, logp: float) -> float:
        """Theta-space log posterior from an unconstrained log density value."""
        point = self.full_point(x)
        # unconstrained logp = theta logp + sum(v), and the Jeffreys term is -sum(v)
        return logp - float(point[WEIGHT_IDX].sum())

    def draw_from_prior(self, rng: np.random.Generator) -> np.ndarray:
        lo, hi = self.prior.log_bounds
        point = np.concatenate([
            rng.uniform(lo, hi, size=4),
            rng.normal(self.prior.delta_mean, self.prior.delta_sd, size=2),
        ])
        return point[self.free_idx]
