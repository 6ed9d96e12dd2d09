"""Compiled resumable kernels behind the Monte Carlo harness.

Each kernel advances a detector over a block of samples, mutating its state
arrays in place, and returns how many samples it consumed (it stops right
after the first statistic above ``b``).  They mirror :mod:`.core` step for
step; ``tests/test_detect.py`` checks the two agree to 1e-9.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def _project_l1_inplace(v, s, buf, l1):
    """Project ``v`` onto the l1 ball of radius ``s`` (``l1`` is its l1 norm;
    ``buf`` is 2 x d scratch)."""
    if l1 <= s:
        return
    d = v.shape[0]
    # Condat's linear-time search for the soft threshold tau on |v|
    keep = buf[0]
    spill = buf[1]
    nk = 1
    ns = 0
    keep[0] = abs(v[0])
    rho = keep[0] - s
    for i in range(1, d):
        y = abs(v[i])
        if y > rho:
            rho += (y - rho) / (nk + 1)
            if rho > y - s:
                keep[nk] = y
                nk += 1
            else:
                for j in range(nk):
                    spill[ns + j] = keep[j]
                ns += nk
                keep[0] = y
                nk = 1
                rho = y - s
    for j in range(ns):
        y = spill[j]
        if y > rho:
            keep[nk] = y
            nk += 1
            rho += (y - rho) / nk
    changed = True
    while changed:
        changed = False
        j = 0
        while j < nk:
            y = keep[j]
            if y <= rho:
                nk -= 1
                keep[j] = keep[nk]
                rho += (rho - y) / nk
                changed = True
            else:
                j += 1
    tau = rho
    for i in range(d):
        a = abs(v[i]) - tau
        if a > 0:
            v[i] = a if v[i] > 0 else -a
        else:
            v[i] = 0.0


@njit(cache=True, nogil=True)
def adaptive_advance(X, t0, theta, loglr, kstart, s, eta, decay, use_sum, b, stats_out):
    """ACM (``use_sum=False``) or ASR over rows of ``X``; ``t0`` samples seen so far.

    State is a ring buffer of ``W = w + 1`` candidates: ``theta`` (W x d),
    ``loglr`` (W), ``kstart`` (W, 0-based entry time).
    """
    W, d = theta.shape
    buf = np.empty((2, d))
    bounded = s < np.inf
    n = X.shape[0]
    for r in range(n):
        t = t0 + r
        slot = t % W
        for i in range(d):
            theta[slot, i] = 0.0
        loglr[slot] = 0.0
        kstart[slot] = t
        active = t + 1 if t + 1 < W else W
        x = X[r]
        for j in range(active):
            th = theta[j]
            e = 1.0 / math.sqrt(t - kstart[j] + 1.0) if decay else eta
            dot = 0.0
            nrm = 0.0
            l1 = 0.0
            for i in range(d):
                v = th[i]
                dot += v * x[i]
                nrm += v * v
                v = v - e * (v - x[i])
                th[i] = v
                l1 += abs(v)
            loglr[j] += dot - 0.5 * nrm
            if bounded:
                _project_l1_inplace(th, s, buf, l1)
        m = -np.inf
        for j in range(active):
            if loglr[j] > m:
                m = loglr[j]
        if use_sum:
            acc = 0.0
            for j in range(active):
                acc += math.exp(loglr[j] - m)
            stat = m + math.log(acc)
        else:
            stat = m
        stats_out[r] = stat
        if stat > b:
            return r + 1
    return n


@njit(cache=True, nogil=True)
def cusum_advance(X, state, theta1, b, stats_out):
    """CUSUM; ``state[0]`` holds the previous statistic."""
    d = theta1.shape[0]
    half = 0.0
    for i in range(d):
        half += theta1[i] * theta1[i]
    half *= 0.5
    Wt = state[0]
    n = X.shape[0]
    for r in range(n):
        dot = 0.0
        for i in range(d):
            dot += theta1[i] * X[r, i]
        Wt = max(0.0, Wt) + dot - half
        stats_out[r] = Wt
        if Wt > b:
            state[0] = Wt
            return r + 1
    state[0] = Wt
    return n


@njit(cache=True, nogil=True)
def glr_advance(X, t0, prefix, csum, b, stats_out):
    """Window-limited GLR. ``prefix`` (W x d) ring-buffers the partial sums
    ``S_{k-1}`` of the candidates; ``csum`` holds the running total ``S_t``."""
    W, d = prefix.shape
    n = X.shape[0]
    for r in range(n):
        t = t0 + r
        slot = t % W
        for i in range(d):
            prefix[slot, i] = csum[i]
            csum[i] += X[r, i]
        active = t + 1 if t + 1 < W else W
        best = -np.inf
        for j in range(active):
            # slot j holds the candidate that entered (slot - j) % W steps ago
            cnt = ((slot - j) % W) + 1.0
            acc = 0.0
            for i in range(d):
                diff = csum[i] - prefix[j, i]
                acc += diff * diff
            val = 0.5 * acc / cnt
            if val > best:
                best = val
        stats_out[r] = best
        if best > b:
            return r + 1
    return n
