"""JIT-compiled hot loop for the collapsed indicator sweep.

The indicator updates are inherently sequential (each draw conditions on
the count tables left by the previous one), so this is the one place the
package drops to a compiled kernel. The caller owns capacity management:
arrays are passed with spare rows/columns and the kernel returns
STATUS_GROW together with a resume point when a retrospective walk is
about to overflow them. Partially completed walks are resumed, never
redrawn: a redraw would censor long walks and bias the birth process.

The same np.random.Generator is shared with host-side numpy code; numba
mutates the underlying bit-generator state, so draws interleave
deterministically.
"""

import math

import numpy as np
from numba import njit

STATUS_OK = 0
STATUS_GROW = 1
STATUS_WALK_OVERFLOW = 2
STATUS_ZERO_MASS = 3

SIDE_SOURCE = 0
SIDE_RECEIVER = 1
SIDE_BOTH = 2


@njit(cache=True, inline="always")
def _sigmoid(x):
    if x >= 0.0:
        return 1.0 / (1.0 + math.exp(-x))
    z = math.exp(x)
    return z / (1.0 + z)


@njit(cache=True)
def _resample_side(rng, t, side, i, j, m, y, s, r, A, B, v, eta, mu, phi,
                   lam_F, lam_V, g_a, g_b, K, truncated, walk_cap,
                   walk_start, rho):
    """One collapsed indicator draw; returns (status, K, births, walk_idx).

    walk_start < 0 is a fresh draw (counts get decremented here);
    walk_start >= 0 resumes an interrupted retrospective walk whose
    partial columns are already in v/eta and whose decrement already
    happened.
    """
    node = i if side == 0 else j
    cap = v.shape[0]
    N = v.shape[1]
    F = eta.shape[0]
    gsum = g_a + g_b

    if walk_start < 0:
        if y == 1:
            A[s[t], r[t], m] -= 1
        else:
            B[s[t], r[t], m] -= 1
        fixed = r[t] if side == 0 else s[t]

        rem = 1.0
        tot = 0.0
        for k in range(K):
            c = _sigmoid(v[k, node])
            if truncated and k == K - 1:
                pik = rem
                rem = 0.0
            else:
                pik = c * rem
                rem *= 1.0 - c
            if side == 0:
                a_ = A[k, fixed, m]
                b_ = B[k, fixed, m]
            else:
                a_ = A[fixed, k, m]
                b_ = B[fixed, k, m]
            if y == 1:
                lik = (a_ + g_a) / (a_ + b_ + gsum)
            else:
                lik = (b_ + g_b) / (a_ + b_ + gsum)
            rho[k] = pik * lik
            tot += rho[k]
        n_opt = K
        if not truncated:
            if y == 1:
                rho[K] = rem * (g_a / gsum)
            else:
                rho[K] = rem * (g_b / gsum)
            tot += rho[K]
            n_opt = K + 1
        if not (tot > 0.0):
            if y == 1:
                A[s[t], r[t], m] += 1
            else:
                B[s[t], r[t], m] += 1
            return STATUS_ZERO_MASS, K, 0, -1

        u = rng.random() * tot
        acc = 0.0
        chosen = n_opt - 1
        for k in range(n_opt):
            acc += rho[k]
            if u < acc:
                chosen = k
                break
        walk = (not truncated) and chosen == K
        idx = K
    else:
        walk = True
        idx = walk_start
        chosen = -1  # always set by the walk before use

    births = 0
    if walk:
        # walk the stick-breaking prior until a stick accepts; every
        # community visited stays instantiated
        sd_F = 1.0 / math.sqrt(lam_F)
        sd_V = 1.0 / math.sqrt(lam_V)
        while True:
            if idx >= cap:
                return STATUS_GROW, K, 0, idx
            if idx - K >= walk_cap:
                if y == 1:
                    A[s[t], r[t], m] += 1
                else:
                    B[s[t], r[t], m] += 1
                return STATUS_WALK_OVERFLOW, K, 0, idx
            for f in range(F):
                eta[f, idx] = mu[f] + sd_F * rng.standard_normal()
            for n2 in range(N):
                mean = 0.0
                for f in range(F):
                    mean += eta[f, idx] * phi[f, n2]
                v[idx, n2] = mean + sd_V * rng.standard_normal()
            if rng.random() < _sigmoid(v[idx, node]):
                chosen = idx
                break
            idx += 1
        births = chosen + 1 - K
        K = chosen + 1

    if side == 0:
        s[t] = chosen
    else:
        r[t] = chosen
    if y == 1:
        A[s[t], r[t], m] += 1
    else:
        B[s[t], r[t], m] += 1
    return STATUS_OK, K, births, -1


@njit(cache=True)
def indicator_sweep(rng, ei, ej, em, ey, s, r, A, B, v, eta, mu, phi,
                    lam_F, lam_V, g_a, g_b, K0, t0, sides, truncated,
                    walk_cap, grow_margin, resume_side, resume_idx, rho):
    """Resample indicators for entries t0..E-1 in place.

    v/eta/A/B carry capacity beyond K0; rho is scratch of length
    capacity+1. resume_side/resume_idx continue an interrupted walk
    (see STATUS_GROW). Returns (status, entry, K, births, side, walk_idx).
    """
    K = K0
    births = 0
    cap = v.shape[0]
    E = ei.shape[0]
    pending = resume_side

    for t in range(t0, E):
        if (not truncated) and pending < 0 and K + grow_margin > cap:
            return STATUS_GROW, t, K, births, -1, -1
        i = ei[t]
        j = ej[t]
        m = em[t]
        y = ey[t]
        for side in range(2):
            if sides == SIDE_SOURCE and side != 0:
                continue
            if sides == SIDE_RECEIVER and side != 1:
                continue
            walk_start = -1
            if t == t0 and pending >= 0:
                if side < pending:
                    continue  # committed before the interruption
                if side == pending:
                    walk_start = resume_idx
            status, K, d_births, widx = _resample_side(
                rng, t, side, i, j, m, y, s, r, A, B, v, eta, mu, phi,
                lam_F, lam_V, g_a, g_b, K, truncated, walk_cap,
                walk_start, rho)
            births += d_births
            if status != STATUS_OK:
                return status, t, K, births, side, widx
        pending = -1

    return STATUS_OK, E, K, births, -1, -1
