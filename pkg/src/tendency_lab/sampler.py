"""MCMC sampling of the tendency posterior.

Two transition kernels are provided:

* ``nuts``: Hamiltonian Monte Carlo with trajectory doubling, multinomial
  sampling from the trajectory and the generalised no-U-turn criterion.
  Step size is tuned by dual averaging during burn-in; a diagonal inverse
  metric is estimated from burn-in draws.
* ``random_walk``: Gaussian random-walk Metropolis whose scale is tuned
  towards 0.234 acceptance.

Box bounds on the target (the log-weight truncation) are handled by
reflecting the position and momentum at the walls, which keeps the leapfrog
map reversible and volume preserving.
"""

from __future__ import annotations

import csv
import io
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, NamedTuple, Sequence

import numpy as np

from ._io import atomic_write
from .decision_model import PARAM_NAMES
from .posterior import LogPosterior, PriorSpec

logger = logging.getLogger(__name__)

ALGORITHMS = ("nuts", "random_walk")
METRICS = ("dense", "diag")
DIVERGENCE_THRESHOLD = 1000.0
MAX_DIVERGENCE_RATE = 0.10
INIT_ATTEMPTS = 100

Target = Callable[[np.ndarray], "tuple[float, np.ndarray]"]


class SamplerError(RuntimeError):
    """Initialisation failure or too many divergent transitions."""


@dataclass(frozen=True)
class SamplerConfig:
    chains: int = 2
    iterations: int = 10000
    burn_in: int = 2000
    target_accept: float = 0.8
    max_tree_depth: int = 10
    seed: int = 0
    algorithm: str = "nuts"
    metric: str = "dense"

    def __post_init__(self):
        if self.chains < 1:
            raise ValueError("chains must be positive")
        if self.iterations < 1:
            raise ValueError("iterations must be positive")
        if not (0 <= self.burn_in < self.iterations):
            raise ValueError("burn_in must satisfy 0 <= burn_in < iterations")
        if not (0.0 < self.target_accept < 1.0):
            raise ValueError("target_accept must lie in (0, 1)")
        if self.max_tree_depth < 1:
            raise ValueError("max_tree_depth must be positive")
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"algorithm must be one of {ALGORITHMS}")
        if self.metric not in METRICS:
            raise ValueError(f"metric must be one of {METRICS}")

    @property
    def n_draws(self) -> int:
        return self.iterations - self.burn_in

    def to_dict(self) -> dict:
        return asdict(self)


def chain_rng(seed: int, chain_index: int, stream: int = 0) -> np.random.Generator:
    """Independent generator per (seed, chain, stream)."""
    return np.random.default_rng([seed & (2**64 - 1), chain_index, stream])


# -- Hamiltonian dynamics ---------------------------------------------------


def reflect(x: np.ndarray, p: np.ndarray, lower, upper) -> tuple[np.ndarray, np.ndarray]:
    """Fold positions back into ``[lower, upper]``, flipping momentum per bounce."""
    for _ in range(64):
        below = x < lower
        above = x > upper
        if not (below.any() or above.any()):
            break
        x = np.where(below, 2 * lower - x, np.where(above, 2 * upper - x, x))
        p = np.where(below | above, -p, p)
    return x, p


def leapfrog(x, p, grad, step, metric: Metric, target: Target, lower=None, upper=None):
    """One leapfrog step; a negative ``step`` integrates backwards in time."""
    p = p + 0.5 * step * grad
    x = x + step * metric.velocity(p)
    if lower is not None:
        x, p = reflect(x, p, lower, upper)
    logp, grad = target(x)
    p = p + 0.5 * step * grad
    return x, p, grad, logp


class _State(NamedTuple):
    x: np.ndarray
    p: np.ndarray
    grad: np.ndarray
    logp: float


class _Tree(NamedTuple):
    first: _State  # end nearest the trajectory origin
    last: _State  # end furthest along the build direction
    rho: np.ndarray  # sum of momenta
    log_weight: float
    sample: _State
    n_steps: int
    accept_sum: float
    turning: bool
    diverged: bool


class Metric:
    """Euclidean metric given by an inverse mass matrix (a vector means diagonal)."""

    def __init__(self, inv_mass):
        self.inv_mass = np.asarray(inv_mass, dtype=float)
        self.dense = self.inv_mass.ndim == 2
        if self.dense:
            # momentum ~ N(0, M) with M = inv_mass^-1
            self._chol_mass = np.linalg.cholesky(np.linalg.inv(self.inv_mass))
        else:
            self._sd = 1.0 / np.sqrt(self.inv_mass)

    @classmethod
    def identity(cls, dim: int, dense: bool) -> "Metric":
        return cls(np.eye(dim) if dense else np.ones(dim))

    def velocity(self, p):
        return self.inv_mass @ p if self.dense else self.inv_mass * p

    def kinetic(self, p) -> float:
        return 0.5 * float(p @ self.velocity(p))

    def draw(self, rng, dim):
        z = rng.standard_normal(dim)
        return self._chol_mass @ z if self.dense else z * self._sd


def _turning(p_a, p_b, rho, metric: Metric) -> bool:
    return not (float(metric.velocity(p_a) @ rho) > 0 and float(metric.velocity(p_b) @ rho) > 0)


class _Nuts:
    """One chain's NUTS transition with fixed step size and metric."""

    def __init__(self, target, lower, upper, max_depth, rng):
        self.target = target
        self.lower = lower
        self.upper = upper
        self.max_depth = max_depth
        self.rng = rng

    def _leaf(self, state: _State, step: float, h0: float) -> _Tree:
        x, p, grad, logp = leapfrog(
            state.x, state.p, state.grad, step, self.metric, self.target, self.lower, self.upper
        )
        h = -logp + self.metric.kinetic(p)
        if not math.isfinite(h):
            h = math.inf
        delta = h - h0
        leaf = _State(x, p, grad, logp)
        return _Tree(
            first=leaf,
            last=leaf,
            rho=p,
            log_weight=-delta,
            sample=leaf,
            n_steps=1,
            accept_sum=math.exp(min(0.0, -delta)) if math.isfinite(delta) else 0.0,
            turning=False,
            diverged=not (delta <= DIVERGENCE_THRESHOLD),
        )

    def _build(self, state: _State, step: float, depth: int, h0: float) -> _Tree:
        if depth == 0:
            return self._leaf(state, step, h0)
        inner = self._build(state, step, depth - 1, h0)
        if inner.turning or inner.diverged:
            return inner
        outer = self._build(inner.last, step, depth - 1, h0)
        n_steps = inner.n_steps + outer.n_steps
        accept_sum = inner.accept_sum + outer.accept_sum
        if outer.turning or outer.diverged:
            return outer._replace(n_steps=n_steps, accept_sum=accept_sum)
        log_weight = np.logaddexp(inner.log_weight, outer.log_weight)
        # uniform multinomial sampling within a subtree
        if math.log(self.rng.random()) < outer.log_weight - log_weight:
            sample = outer.sample
        else:
            sample = inner.sample
        rho = inner.rho + outer.rho
        m = self.metric
        turning = (
            _turning(inner.first.p, outer.last.p, rho, m)
            or _turning(inner.first.p, outer.first.p, inner.rho + outer.first.p, m)
            or _turning(inner.last.p, outer.last.p, inner.last.p + outer.rho, m)
        )
        return _Tree(inner.first, outer.last, rho, float(log_weight), sample,
                     n_steps, accept_sum, turning, False)

    def transition(self, current: _State, step: float, metric: Metric):
        self.metric = metric
        rng = self.rng
        p0 = metric.draw(rng, len(current.x))
        start = current._replace(p=p0)
        h0 = -current.logp + metric.kinetic(p0)
        left = right = start
        sample = current
        log_weight = 0.0
        rho = p0.copy()
        n_steps = 0
        accept_sum = 0.0
        diverged = False
        depth = 0
        while depth < self.max_depth:
            forward = rng.random() < 0.5
            origin = right if forward else left
            sub = self._build(origin, step if forward else -step, depth, h0)
            depth += 1
            n_steps += sub.n_steps
            accept_sum += sub.accept_sum
            if sub.diverged:
                diverged = True
                break
            if sub.turning:
                break
            # biased progressive sampling favours the new subtree
            if math.log(rng.random()) < sub.log_weight - log_weight:
                sample = sub.sample
            log_weight = float(np.logaddexp(log_weight, sub.log_weight))
            old_far, old_near = (left, right) if forward else (right, left)
            rho_old = rho
            rho = rho + sub.rho
            if forward:
                right = sub.last
            else:
                left = sub.last
            if (
                _turning(old_far.p, sub.last.p, rho, metric)
                or _turning(old_far.p, sub.first.p, rho_old + sub.first.p, metric)
                or _turning(old_near.p, sub.last.p, old_near.p + sub.rho, metric)
            ):
                break
        stats = {
            "accept": accept_sum / max(n_steps, 1),
            "n_steps": n_steps,
            "depth": depth,
            "diverged": diverged,
        }
        return sample._replace(p=None), stats


class DualAveraging:
    """Dual-averaging step-size adaptation (Nesterov scheme, MCMC variant)."""

    def __init__(self, step: float, target: float, gamma=0.05, t0=10.0, kappa=0.75):
        self.mu = math.log(10.0 * step)
        self.target = target
        self.gamma = gamma
        self.t0 = t0
        self.kappa = kappa
        self.t = 0
        self.h_bar = 0.0
        self.log_step = math.log(step)
        self.log_step_bar = 0.0

    def update(self, accept: float) -> float:
        self.t += 1
        eta = 1.0 / (self.t + self.t0)
        self.h_bar = (1 - eta) * self.h_bar + eta * (self.target - accept)
        self.log_step = self.mu - math.sqrt(self.t) / self.gamma * self.h_bar
        w = self.t ** (-self.kappa)
        self.log_step_bar = w * self.log_step + (1 - w) * self.log_step_bar
        return math.exp(self.log_step)

    @property
    def final_step(self) -> float:
        return math.exp(self.log_step_bar)


def find_reasonable_step(state: _State, metric: Metric, target, lower, upper, rng, step=1.0) -> float:
    """Double or halve the step until one leapfrog's acceptance crosses 1/2."""
    p = metric.draw(rng, len(state.x))
    h0 = -state.logp + metric.kinetic(p)

    def log_accept(eps):
        _, p1, _, logp1 = leapfrog(state.x, p, state.grad, eps, metric, target, lower, upper)
        h1 = -logp1 + metric.kinetic(p1)
        return h0 - h1 if math.isfinite(h1) else -math.inf

    direction = 1 if log_accept(step) > math.log(0.5) else -1
    for _ in range(100):
        nxt = step * 2.0**direction
        crossed = (log_accept(nxt) > math.log(0.5)) != (direction == 1)
        if crossed or not (1e-10 < nxt < 1e5):
            break
        step = nxt
    return step


def warmup_windows(burn_in: int) -> list[tuple[int, int]]:
    """Slow adaptation windows ``[start, end)``; the metric is refitted at each end.

    An initial step-size-only buffer is followed by doubling slow windows
    (base width 25) and a terminal step-size-only buffer. Short burn-ins
    shrink the buffers proportionally; below 20 iterations no metric is fitted.
    """
    if burn_in < 20:
        return []
    init, term, base = 75, 50, 25
    if init + term + base > burn_in:
        init = int(0.15 * burn_in)
        term = int(0.1 * burn_in)
        base = burn_in - init - term
    last = burn_in - term
    windows, pos, width = [], init, base
    while True:
        nxt = pos + width
        # stretch the window when the following one would not fit
        if nxt + 2 * width > last:
            windows.append((pos, last))
            return windows
        windows.append((pos, nxt))
        pos, width = nxt, 2 * width


def _regularised_variance(draws: np.ndarray) -> np.ndarray:
    n = len(draws)
    var = draws.var(axis=0, ddof=1)
    return (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0))


def _regularised_covariance(draws: np.ndarray) -> np.ndarray:
    n, dim = draws.shape
    cov = np.atleast_2d(np.cov(draws, rowvar=False))
    return (n / (n + 5.0)) * cov + 1e-3 * (5.0 / (n + 5.0)) * np.eye(dim)


def estimate_metric(draws: np.ndarray, dense: bool) -> Metric:
    return Metric(_regularised_covariance(draws) if dense else _regularised_variance(draws))


@dataclass
class ChainResult:
    """Post-burn-in draws of one chain in the target's coordinates."""

    draws: np.ndarray
    log_density: np.ndarray
    step_size: float
    inv_mass: np.ndarray
    n_divergent: int
    accept_rate: float
    mean_tree_depth: float
    n_leapfrog: int
    algorithm: str
    diverged: np.ndarray = field(repr=False, default=None)

    def metadata(self) -> dict:
        dense = self.inv_mass.ndim == 2
        diagonal = np.diag(self.inv_mass) if dense else self.inv_mass
        return {
            "algorithm": self.algorithm,
            "step_size": self.step_size,
            "metric": "dense" if dense else "diag",
            "inv_mass_diagonal": [float(v) for v in diagonal],
            "inv_mass": self.inv_mass.tolist(),
            "divergences": int(self.n_divergent),
            "accept_rate": self.accept_rate,
            "mean_tree_depth": self.mean_tree_depth,
            "n_leapfrog": int(self.n_leapfrog),
        }


def _bounds(target):
    lower = getattr(target, "lower", None)
    upper = getattr(target, "upper", None)
    if lower is None and upper is None:
        return None, None
    dim = len(lower if lower is not None else upper)
    lower = np.full(dim, -np.inf) if lower is None else np.asarray(lower, float)
    upper = np.full(dim, np.inf) if upper is None else np.asarray(upper, float)
    return lower, upper


def run_chain(target: Target, config: SamplerConfig, chain_index: int, init) -> ChainResult:
    """Run one chain from ``init``; deterministic given ``(config.seed, chain_index)``.

    ``target(x)`` returns ``(log_density, gradient)``; optional ``lower`` /
    ``upper`` attributes on the target declare box bounds.
    """
    rng = chain_rng(config.seed, chain_index)
    x = np.array(init, dtype=float)
    logp, grad = target(x)
    if not math.isfinite(logp):
        raise SamplerError("initialization failure: target is not finite at init")
    if config.algorithm == "random_walk":
        return _run_random_walk(target, config, rng, x, logp)
    return _run_nuts(target, config, rng, _State(x, None, np.asarray(grad, float), logp))


def _run_nuts(target, config: SamplerConfig, rng, state: _State) -> ChainResult:
    lower, upper = _bounds(target)
    dim = len(state.x)
    dense = config.metric == "dense"
    metric = Metric.identity(dim, dense)
    kernel = _Nuts(target, lower, upper, config.max_tree_depth, rng)
    step = find_reasonable_step(state, metric, target, lower, upper, rng)
    adapt = DualAveraging(step, config.target_accept)
    windows = warmup_windows(config.burn_in)

    n = config.n_draws
    draws = np.empty((n, dim))
    log_density = np.empty(n)
    diverged = np.zeros(n, dtype=bool)
    burn_draws = np.empty((config.burn_in, dim))
    accept_total = depth_total = 0.0
    n_leapfrog = 0

    for it in range(config.iterations):
        state, stats = kernel.transition(state, step, metric)
        if it < config.burn_in:
            burn_draws[it] = state.x
            step = adapt.update(stats["accept"])
            if windows and it + 1 == windows[0][1]:
                window_start = windows.pop(0)[0]
                metric = estimate_metric(burn_draws[window_start : it + 1], dense)
                step = find_reasonable_step(state, metric, target, lower, upper, rng, step)
                adapt = DualAveraging(step, config.target_accept)
            if it + 1 == config.burn_in:
                step = adapt.final_step
            continue
        k = it - config.burn_in
        draws[k] = state.x
        log_density[k] = state.logp
        diverged[k] = stats["diverged"]
        accept_total += stats["accept"]
        depth_total += stats["depth"]
        n_leapfrog += stats["n_steps"]

    n_div = int(diverged.sum())
    if n_div > MAX_DIVERGENCE_RATE * n:
        raise SamplerError(f"divergence rate exceeded: {n_div} of {n} transitions diverged")
    return ChainResult(draws, log_density, step, metric.inv_mass, n_div, accept_total / n,
                       depth_total / n, n_leapfrog, "nuts", diverged)


def _run_random_walk(target, config: SamplerConfig, rng, x, logp) -> ChainResult:
    lower, upper = _bounds(target)
    dim = len(x)
    scale_sd = np.ones(dim)
    log_scale = math.log(2.38 / math.sqrt(dim))
    windows = warmup_windows(config.burn_in)
    n = config.n_draws
    draws = np.empty((n, dim))
    log_density = np.empty(n)
    burn_draws = np.empty((config.burn_in, dim))
    accepted = 0
    adapt_t = 0

    for it in range(config.iterations):
        proposal = x + math.exp(log_scale) * scale_sd * rng.standard_normal(dim)
        inside = lower is None or (np.all(proposal >= lower) and np.all(proposal <= upper))
        logp_new = target(proposal)[0] if inside else -math.inf
        log_alpha = logp_new - logp if math.isfinite(logp_new) else -math.inf
        alpha = math.exp(min(0.0, log_alpha))
        if math.log(rng.random()) < log_alpha:
            x, logp = proposal, logp_new
            if it >= config.burn_in:
                accepted += 1
        if it < config.burn_in:
            burn_draws[it] = x
            adapt_t += 1
            log_scale += (alpha - 0.234) / adapt_t**0.6
            if windows and it + 1 == windows[0][1]:
                window_start = windows.pop(0)[0]
                scale_sd = np.sqrt(_regularised_variance(burn_draws[window_start : it + 1]))
                log_scale = math.log(2.38 / math.sqrt(dim))
                adapt_t = 0
            continue
        k = it - config.burn_in
        draws[k] = x
        log_density[k] = logp

    step = math.exp(log_scale)
    return ChainResult(draws, log_density, step, scale_sd**2, 0, accepted / n, 0.0, 0,
                       "random_walk", np.zeros(n, dtype=bool))


# -- posterior inference ----------------------------------------------------


@dataclass
class PosteriorChains:
    """Theta-space draws, shape ``(chains, draws, params)``."""

    names: tuple[str, ...]
    draws: np.ndarray
    log_post: np.ndarray
    iterations: np.ndarray
    chain_meta: list[dict] = field(default_factory=list)

    @property
    def n_chains(self) -> int:
        return self.draws.shape[0]

    @property
    def n_draws(self) -> int:
        return self.draws.shape[1]

    def param(self, name: str) -> np.ndarray:
        return self.draws[:, :, self.names.index(name)]

    @property
    def n_divergent(self) -> int:
        return sum(int(m.get("divergences", 0)) for m in self.chain_meta)


def initial_point(target: LogPosterior, seed: int, chain_index: int) -> np.ndarray:
    """Draw a starting point from the prior, retrying until the target is finite."""
    rng = chain_rng(seed, chain_index, stream=1)
    for _ in range(INIT_ATTEMPTS):
        x = target.draw_from_prior(rng)
        logp, grad = target(x)
        if math.isfinite(logp) and np.all(np.isfinite(grad)):
            return x
    raise SamplerError(f"initialization failure: no finite point in {INIT_ATTEMPTS} prior draws")


def default_threads(chains: int) -> int:
    raw = os.environ.get("TENDENCY_LAB_THREADS")
    cap = os.cpu_count() or 1
    if raw:
        try:
            cap = max(1, int(raw))
        except ValueError:
            logger.warning("ignoring non-integer TENDENCY_LAB_THREADS=%r", raw)
    return max(1, min(chains, cap))


def run_inference(
    dataset,
    prior: PriorSpec | None = None,
    config: SamplerConfig | None = None,
    *,
    target: LogPosterior | None = None,
    threads: int | None = None,
    allow_empty: bool = False,
    backend: str | None = None,
) -> PosteriorChains:
    """Run ``config.chains`` chains from prior draws and return Theta-space draws."""
    config = config or SamplerConfig()
    if target is None:
        target = LogPosterior(dataset, prior, allow_empty=allow_empty, backend=backend)
    inits = [initial_point(target, config.seed, c) for c in range(config.chains)]
    workers = threads or default_threads(config.chains)

    def one(c):
        return run_chain(target, config, c, inits[c])

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, range(config.chains)))
    else:
        results = [one(c) for c in range(config.chains)]

    n_params = len(PARAM_NAMES)
    draws = np.empty((config.chains, config.n_draws, n_params))
    log_post = np.empty((config.chains, config.n_draws))
    for c, res in enumerate(results):
        for k in range(config.n_draws):
            x = res.draws[k]
            point = target.full_point(x)
            draws[c, k, :4] = np.exp(point[:4])
            draws[c, k, 4:] = point[4:]
            log_post[c, k] = target.theta_log_posterior(x, res.log_density[k])
    iterations = np.arange(config.burn_in + 1, config.iterations + 1)
    return PosteriorChains(PARAM_NAMES, draws, log_post, iterations,
                           [r.metadata() for r in results])


# -- chain CSV --------------------------------------------------------------

CSV_HEADER = ("chain", "iter", *PARAM_NAMES, "log_post")


class ChainFileError(ValueError):
    pass


def chains_to_csv(chains: PosteriorChains) -> str:
    """CSV text, one row per stored draw; floats use their shortest round-trip repr."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for c in range(chains.n_chains):
        for k in range(chains.n_draws):
            writer.writerow([
                c,
                int(chains.iterations[k]),
                *(repr(float(v)) for v in chains.draws[c, k]),
                repr(float(chains.log_post[c, k])),
            ])
    return buf.getvalue()


def write_chains_csv(chains: PosteriorChains, path: str | Path) -> None:
    atomic_write(path, chains_to_csv(chains))


def read_chains_csv(path: str | Path) -> PosteriorChains:
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise ChainFileError(f"cannot read chains file {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != CSV_HEADER:
            raise ChainFileError(f"expected header {','.join(CSV_HEADER)}")
        rows: dict[int, list] = {}
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(CSV_HEADER):
                raise ChainFileError(f"line {lineno}: expected {len(CSV_HEADER)} fields")
            try:
                chain, it = int(row[0]), int(row[1])
                values = [float(v) for v in row[2:]]
            except ValueError:
                raise ChainFileError(f"line {lineno}: non-numeric field") from None
            if not all(math.isfinite(v) for v in values[:-1]):
                raise ChainFileError(f"line {lineno}: non-finite parameter value")
            rows.setdefault(chain, []).append((it, values))
    if not rows:
        raise ChainFileError("chains file has no draws")
    chain_ids = sorted(rows)
    if chain_ids != list(range(len(chain_ids))):
        raise ChainFileError("chain indices must be 0..C-1")
    lengths = {len(rows[c]) for c in chain_ids}
    if len(lengths) != 1:
        raise ChainFileError("chains have different lengths")
    iterations = np.array([it for it, _ in rows[0]])
    data = np.array([[vals for _, vals in rows[c]] for c in chain_ids])
    return PosteriorChains(PARAM_NAMES, data[:, :, :-1], data[:, :, -1], iterations, [])
