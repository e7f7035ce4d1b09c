"""Posterior summaries and convergence diagnostics for MCMC chains.

All functions take draws as ``(chains, draws)`` arrays (a 1-D array is one
chain). Intervals are 94% highest-density intervals whose endpoints are
labelled ``hdi3`` / ``hdi97``.
"""

from __future__ import annotations

import io
import json
import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from ._io import atomic_write
from .decision_model import Theta

logger = logging.getLogger(__name__)

HDI_PROB = 0.94
MIN_DRAWS = 100


class DiagnosticsError(ValueError):
    pass


def _as_chains(draws) -> np.ndarray:
    arr = np.asarray(draws, dtype=float)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2:
        raise ValueError("draws must be 1-D or (chains, draws)")
    return arr


def hdi(draws, prob: float = HDI_PROB) -> tuple[float, float]:
    """Shortest interval containing at least ``prob`` of the pooled draws.

    Among equally short intervals the one with the lowest start wins.
    """
    x = np.sort(np.asarray(draws, dtype=float).ravel())
    n = len(x)
    if n == 0:
        raise ValueError("no draws")
    k = min(n, math.ceil(prob * n))
    widths = x[k - 1 :] - x[: n - k + 1]
    i = int(np.argmin(widths))
    return float(x[i]), float(x[i + k - 1])


def _autocovariance(x: np.ndarray) -> np.ndarray:
    # FFT autocovariance with 1/n normalisation at every lag
    n = len(x)
    centred = x - x.mean()
    size = 1 << (2 * n - 1).bit_length()
    spec = np.fft.rfft(centred, size)
    return np.fft.irfft(spec * np.conj(spec), size)[:n] / n


def autocorrelation(draws, max_lag: int) -> np.ndarray:
    """Autocorrelation at lags ``0..max_lag``, computed per chain and averaged."""
    chains = _as_chains(draws)
    if max_lag < 1:
        raise ValueError("max_lag must be positive")
    if chains.shape[1] <= max_lag:
        raise ValueError("need more draws than max_lag")
    rows = []
    for chain in chains:
        acov = _autocovariance(chain)
        if not acov[0] > 0:
            raise DiagnosticsError("degenerate series: zero variance")
        rows.append(acov[: max_lag + 1] / acov[0])
    return np.mean(rows, axis=0)


def split_rhat(draws) -> float:
    """Split potential scale reduction over ``2 * chains`` half-chains."""
    chains = _as_chains(draws)
    half = chains.shape[1] // 2
    if half < 2:
        raise ValueError("need at least 4 draws per chain")
    # the middle draw of an odd-length chain is dropped
    parts = np.concatenate([chains[:, :half], chains[:, -half:]])
    within = parts.var(axis=1, ddof=1).mean()
    between = half * parts.mean(axis=1).var(ddof=1)
    if within == 0:
        return 1.0 if between == 0 else math.inf
    var_plus = (half - 1) / half * within + between / half
    return math.sqrt(var_plus / within)


def ess(draws) -> float:
    """Effective sample size by Geyer's initial monotone sequence estimator.

    Autocorrelations are combined across chains; the result is capped at the
    total number of draws.
    """
    chains = _as_chains(draws)
    m, n = chains.shape
    total = m * n
    if n < 4:
        raise ValueError("need at least 4 draws per chain")
    acov = np.array([_autocovariance(c) for c in chains])
    chain_var = acov[:, 0] * n / (n - 1)
    within = chain_var.mean()
    if within == 0:
        return float(total)
    var_plus = within * (n - 1) / n
    if m > 1:
        var_plus += chains.mean(axis=1).var(ddof=1)
    rho = 1.0 - (within - acov.mean(axis=0)) / var_plus
    rho[0] = 1.0
    # sums of adjacent pairs, truncated at the first non-positive pair
    pairs = rho[: n - n % 2].reshape(-1, 2).sum(axis=1)
    positive = np.flatnonzero(pairs <= 0)
    pairs = pairs[: positive[0]] if len(positive) else pairs
    pairs = np.minimum.accumulate(pairs)
    tau = -1.0 + 2.0 * pairs.sum()
    if tau <= 0:
        return float(total)
    return float(min(total / tau, total))


@dataclass(frozen=True)
class ParameterSummary:
    name: str
    mean: float
    sd: float
    hdi3: float
    hdi97: float
    ess: float
    rhat: float

    def to_dict(self) -> dict:
        return asdict(self)


def summarize_draws(name: str, draws) -> ParameterSummary:
    chains = _as_chains(draws)
    if chains.size < MIN_DRAWS:
        raise DiagnosticsError(f"insufficient draws: {chains.size} < {MIN_DRAWS}")
    pooled = chains.ravel()
    if np.ptp(pooled) == 0:
        # summing a constant can round; report it exactly
        logger.warning("parameter %s is constant across all draws", name)
        mean, sd = float(pooled[0]), 0.0
    else:
        mean, sd = float(pooled.mean()), float(pooled.std(ddof=1))
    lo, hi = hdi(pooled)
    return ParameterSummary(
        name=name,
        mean=mean,
        sd=sd,
        hdi3=lo,
        hdi97=hi,
        ess=ess(chains),
        rhat=split_rhat(chains),
    )


def summarize(chains) -> list[ParameterSummary]:
    """One :class:`ParameterSummary` per parameter of a ``PosteriorChains``."""
    if chains.n_chains * chains.n_draws < MIN_DRAWS:
        raise DiagnosticsError(
            f"insufficient draws: {chains.n_chains * chains.n_draws} < {MIN_DRAWS}"
        )
    return [summarize_draws(name, chains.param(name)) for name in chains.names]


def summary_to_json(summary: Sequence[ParameterSummary]) -> str:
    return json.dumps([s.to_dict() for s in summary], indent=2) + "\n"


@dataclass(frozen=True)
class RecoveryRow:
    name: str
    truth: float
    mean: float
    bias: float
    hdi3: float
    hdi97: float
    inside_hdi: bool

    def to_dict(self) -> dict:
        return asdict(self)


def recovery_report(summary: Sequence[ParameterSummary], truth: Theta) -> list[RecoveryRow]:
    """Compare each posterior summary with the generating value."""
    rows = []
    truth_values = truth.to_dict()
    for s in summary:
        if s.name not in truth_values:
            raise ValueError(f"truth has no parameter {s.name!r}")
        t = truth_values[s.name]
        rows.append(RecoveryRow(
            name=s.name,
            truth=t,
            mean=s.mean,
            bias=s.mean - t,
            hdi3=s.hdi3,
            hdi97=s.hdi97,
            inside_hdi=bool(s.hdi3 <= t <= s.hdi97),
        ))
    return rows


def recovery_to_json(rows: Sequence[RecoveryRow]) -> str:
    return json.dumps([r.to_dict() for r in rows], indent=2) + "\n"


def format_table(header: Sequence[str], rows: Sequence[Sequence[str]]) -> str:
    widths = [max(len(h), *(len(r[i]) for r in rows)) for i, h in enumerate(header)]
    lines = ["  ".join(h.rjust(w) for h, w in zip(header, widths))]
    lines += ["  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in rows]
    return "\n".join(lines) + "\n"


def recovery_to_text(rows: Sequence[RecoveryRow]) -> str:
    return format_table(
        ("param", "truth", "mean", "bias", "hdi3%", "hdi97%", "inside"),
        [
            (r.name, f"{r.truth:.4g}", f"{r.mean:.4f}", f"{r.bias:+.4f}",
             f"{r.hdi3:.4f}", f"{r.hdi97:.4f}", "yes" if r.inside_hdi else "no")
            for r in rows
        ],
    )


def summary_to_text(summary: Sequence[ParameterSummary]) -> str:
    return format_table(
        ("param", "mean", "sd", "hdi3%", "hdi97%", "ess", "r_hat"),
        [
            (s.name, f"{s.mean:.4f}", f"{s.sd:.4f}", f"{s.hdi3:.4f}", f"{s.hdi97:.4f}",
             f"{s.ess:.0f}", f"{s.rhat:.4f}")
            for s in summary
        ],
    )


def _save_svg(fig, path: Path) -> None:
    buf = io.BytesIO()
    fig.savefig(buf, format="svg", metadata={"Date": None})
    atomic_write(path, buf.getvalue())


def write_plots(chains, out_dir: str | Path, max_lag: int = 100) -> list[Path]:
    """Write per-parameter trace and autocorrelation SVGs; needs matplotlib.

    Output bytes are reproducible: the SVG id salt is fixed and no date is
    embedded.
    """
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    with matplotlib.rc_context({"svg.hashsalt": "tendency-lab", "svg.fonttype": "none"}):
        for name in chains.names:
            draws = chains.param(name)
            fig, ax = plt.subplots(figsize=(8, 3))
            for c, chain in enumerate(draws):
                ax.plot(chains.iterations, chain, lw=0.4, label=f"chain {c}")
            ax.set_xlabel("iteration")
            ax.set_ylabel(name)
            ax.legend(loc="upper right")
            path = out_dir / f"trace_{name}.svg"
            _save_svg(fig, path)
            plt.close(fig)
            written.append(path)

            lag = min(max_lag, draws.shape[1] - 1)
            try:
                rho = autocorrelation(draws, lag)
            except DiagnosticsError:
                continue
            fig, ax = plt.subplots(figsize=(5, 3))
            ax.bar(np.arange(lag + 1), rho, width=0.8)
            ax.axhline(0.0, color="black", lw=0.5)
            ax.set_xlabel("lag")
            ax.set_ylabel(f"autocorrelation of {name}")
            path = out_dir / f"autocorr_{name}.svg"
            _save_svg(fig, path)
            plt.close(fig)
            written.append(path)
    return written
