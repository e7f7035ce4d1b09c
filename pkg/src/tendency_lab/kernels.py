"""Backend selection for the likelihood kernel.

The compiled extension is used when it imports; ``TENDENCY_LAB_BACKEND``
(``compiled`` / ``python``) overrides the choice.
"""

from __future__ import annotations

import os

import numpy as np

from . import _pykernel

try:
    from . import _ckernel
except ImportError:  # extension not built
    _ckernel = None

BACKENDS = {"python": _pykernel.loglik_grad}
if _ckernel is not None:
    BACKENDS["compiled"] = _ckernel.loglik_grad


def _default_backend() -> str:
    requested = os.environ.get("TENDENCY_LAB_BACKEND", "").strip().lower()
    if requested and requested != "auto":
        if requested not in BACKENDS:
            raise ImportError(
                f"TENDENCY_LAB_BACKEND={requested!r} unavailable (have {sorted(BACKENDS)})"
            )
        return requested
    return "compiled" if "compiled" in BACKENDS else "python"


BACKEND = _default_backend()


def loglik_grad(theta, packed, backend: str | None = None) -> tuple[float, np.ndarray]:
    """Dataset log-likelihood and its gradient w.r.t. ``(w1..w4, delta1, delta2)``."""
    fn = BACKENDS[backend or BACKEND]
    return fn(
        np.ascontiguousarray(theta, dtype=np.float64),
        packed.cell_ga,
        packed.cell_ra,
        packed.n_move,
        packed.n_stay,
        packed.choice,
        packed.gold_ratio,
        packed.rock_ratio,
        packed.is_open,
    )
