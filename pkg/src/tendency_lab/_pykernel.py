"""Pure numpy implementation of the dataset log-likelihood and its gradient.

Used when the compiled extension is unavailable, and as the reference the
compiled kernel is tested against.
"""

import numpy as np


def loglik_grad(theta, cell_ga, cell_ra, n_move, n_stay, choice, gold_ratio, rock_ratio, is_open):
    """Return ``(loglik, grad)`` with the gradient taken w.r.t. the six raw
    parameters ``(w1, w2, w3, w4, delta1, delta2)``.

    A mover whose chosen direction is blocked makes the result ``-inf`` with
    a zero gradient.
    """
    w1, w2, w3, w4, d1, d2 = (float(t) for t in theta)
    grad = np.zeros(6)
    gold_dev = cell_ga - d1
    rock_dev = cell_ra - d2
    z = w2 * rock_dev - w1 * gold_dev
    log_p_move = -np.logaddexp(0.0, -z)
    log_p_stay = -np.logaddexp(0.0, z)
    ll = (n_move * log_p_move + n_stay * log_p_stay).sum()
    # d/dz of the Bernoulli log-likelihood, summed over the cell: n1 - n * sigmoid(z)
    resid = n_move * np.exp(log_p_stay) - n_stay * np.exp(log_p_move)
    grad[0] = -(resid * gold_dev).sum()
    grad[1] = (resid * rock_dev).sum()
    rsum = resid.sum()
    grad[4] = w1 * rsum
    grad[5] = -w2 * rsum

    if choice.size:
        rows = np.arange(choice.size)
        open_ = is_open.astype(bool)
        if not open_[rows, choice].all():
            return -np.inf, np.zeros(6)
        a = w1 / w3
        b = w2 / w4
        u = np.where(open_, a * gold_ratio - b * rock_ratio, -np.inf)
        umax = u.max(axis=1)
        e = np.exp(u - umax[:, None])
        s = e.sum(axis=1)
        ll += (u[rows, choice] - umax - np.log(s)).sum()
        d_gold = (gold_ratio[rows, choice] - (e * gold_ratio).sum(axis=1) / s).sum()
        d_rock = -(rock_ratio[rows, choice] - (e * rock_ratio).sum(axis=1) / s).sum()
        grad[0] += d_gold / w3
        grad[2] -= d_gold * w1 / (w3 * w3)
        grad[1] += d_rock / w4
        grad[3] -= d_rock * w2 / (w4 * w4)
    return float(ll), grad
