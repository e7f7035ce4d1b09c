# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled dataset log-likelihood and gradient (one pass, GIL released)."""

import numpy as np
from libc.math cimport exp, log, log1p, fabs, INFINITY


def loglik_grad(theta,
                const double[::1] cell_ga,
                const double[::1] cell_ra,
                const double[::1] n_move,
                const double[::1] n_stay,
                const int[::1] choice,
                const double[:, ::1] gold_ratio,
                const double[:, ::1] rock_ratio,
                const signed char[:, ::1] is_open):
    cdef double w1 = theta[0], w2 = theta[1], w3 = theta[2], w4 = theta[3]
    cdef double d1 = theta[4], d2 = theta[5]
    cdef double a = w1 / w3, b = w2 / w4
    cdef Py_ssize_t k = cell_ga.shape[0], m = choice.shape[0], i, j
    cdef int c, jmax
    cdef bint blocked = False
    cdef double ll = 0.0, z, e, l1p, p_hi, p_lo, log_move, log_stay, p_move, p_stay
    cdef double resid, gdev, rdev
    cdef double g_gold = 0.0, g_rock = 0.0, rsum = 0.0, d_gold = 0.0, d_rock = 0.0
    cdef double u[4]
    cdef double umax, s, sg, sr

    with nogil:
        for i in range(k):
            gdev = cell_ga[i] - d1
            rdev = cell_ra[i] - d2
            z = w2 * rdev - w1 * gdev
            # one exp per cell: sigmoid(|z|) and sigmoid(-|z|) share exp(-|z|)
            e = exp(-fabs(z))
            l1p = log1p(e)
            p_hi = 1.0 / (1.0 + e)
            p_lo = e * p_hi
            if z >= 0:
                log_move = -l1p
                log_stay = -z - l1p
                p_move = p_hi
                p_stay = p_lo
            else:
                log_move = z - l1p
                log_stay = -l1p
                p_move = p_lo
                p_stay = p_hi
            ll += n_move[i] * log_move + n_stay[i] * log_stay
            resid = n_move[i] * p_stay - n_stay[i] * p_move
            g_gold -= resid * gdev
            g_rock += resid * rdev
            rsum += resid

        for i in range(m):
            c = choice[i]
            if not is_open[i, c]:
                blocked = True
                break
            umax = -INFINITY
            jmax = -1
            for j in range(4):
                if is_open[i, j]:
                    u[j] = a * gold_ratio[i, j] - b * rock_ratio[i, j]
                    if u[j] > umax:
                        umax = u[j]
                        jmax = j
            s = 1.0
            sg = gold_ratio[i, jmax]
            sr = rock_ratio[i, jmax]
            for j in range(4):
                if j != jmax and is_open[i, j]:
                    e = exp(u[j] - umax)
                    s += e
                    sg += e * gold_ratio[i, j]
                    sr += e * rock_ratio[i, j]
            ll += u[c] - umax - log(s)
            d_gold += gold_ratio[i, c] - sg / s
            d_rock -= rock_ratio[i, c] - sr / s

    grad = np.zeros(6)
    if blocked:
        return -INFINITY, grad
    grad[0] = g_gold + d_gold / w3
    grad[1] = g_rock + d_rock / w4
    grad[2] = -d_gold * w1 / (w3 * w3)
    grad[3] = -d_rock * w2 / (w4 * w4)
    grad[4] = w1 * rsum
    grad[5] = -w2 * rsum
    return ll, grad
