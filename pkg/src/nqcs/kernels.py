"""Hot numerical kernels.

Every kernel has two implementations with identical signatures:

* ``*_loop``: explicit loops, compiled by numba when enabled (see
  :mod:`nqcs._accel`); runs interpreted otherwise.
* ``*_numpy``: vectorized numpy.

The public name (without suffix) points at the loop version when numba is
active and at the numpy version otherwise.  Tests compare the two and the
benchmark times them against each other.
"""
import math

import numpy as np

from ._accel import NUMBA_ENABLED, njit

# --------------------------------------------------------------------------
# scalar Riccati equation  phi' = -2 L phi - gamma ((1 + rho) phi^2 + 1)


@njit
def _riccati_rhs(L, gamma, rho, phi):
    return -2.0 * L * phi - gamma * ((1.0 + rho) * phi * phi + 1.0)


@njit
def riccati_rk4_loop(L, gamma, rho, phi0, step, n_steps):
    """RK4 for a batch of parameter tuples; returns shape (batch, n_steps + 1).

    ``step`` holds one step size per tuple.
    """
    B = L.shape[0]
    out = np.empty((B, n_steps + 1))
    for b in range(B):
        h = step[b]
        Lb = L[b]
        gb = gamma[b]
        rb = rho[b]
        y = phi0[b]
        out[b, 0] = y
        for k in range(n_steps):
            k1 = _riccati_rhs(Lb, gb, rb, y)
            k2 = _riccati_rhs(Lb, gb, rb, y + 0.5 * h * k1)
            k3 = _riccati_rhs(Lb, gb, rb, y + 0.5 * h * k2)
            k4 = _riccati_rhs(Lb, gb, rb, y + h * k3)
            y = y + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            out[b, k + 1] = y
    return out


def riccati_rk4_numpy(L, gamma, rho, phi0, step, n_steps):
    L = np.asarray(L, dtype=float)
    gamma = np.asarray(gamma, dtype=float)
    rho = np.asarray(rho, dtype=float)
    step = np.asarray(step, dtype=float)
    y = np.array(phi0, dtype=float)
    out = np.empty((y.shape[0], n_steps + 1))
    out[:, 0] = y

    def rhs(p):
        return -2.0 * L * p - gamma * ((1.0 + rho) * p * p + 1.0)

    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(n_steps):
            k1 = rhs(y)
            k2 = rhs(y + 0.5 * step * k1)
            k3 = rhs(y + 0.5 * step * k2)
            k4 = rhs(y + step * k3)
            y = y + step / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            out[:, k + 1] = y
    return out


# --------------------------------------------------------------------------
# round-robin dead-beat sum:  sqrt(sum_i |phi(i, c, theta)|^2) for the
# homogeneous recursion that zeroes node (i mod l) at step i.


@njit
def rr_deadbeat_loop(block_sq, c):
    """block_sq: (S, l) squared block norms; c: (S,) integer counters."""
    S, l = block_sq.shape
    out = np.empty(S)
    work = np.empty(l)
    for s in range(S):
        for j in range(l):
            work[j] = block_sq[s, j]
        acc = 0.0
        i = c[s]
        for _ in range(l):
            tot = 0.0
            for j in range(l):
                tot += work[j]
            acc += tot
            work[i % l] = 0.0
            i += 1
        out[s] = math.sqrt(acc)
    return out


def rr_deadbeat_numpy(block_sq, c):
    block_sq = np.asarray(block_sq, dtype=float)
    l = block_sq.shape[1]
    c = np.asarray(c, dtype=np.int64)
    # block j survives ((j - c) mod l) + 1 terms of the sum
    weights = (np.arange(l)[None, :] - c[:, None]) % l + 1
    return np.sqrt(np.sum(block_sq * weights, axis=1))


# --------------------------------------------------------------------------
# TOD grant: first index of the largest block norm


@njit
def tod_grant_loop(block_norms):
    S, l = block_norms.shape
    out = np.empty(S, dtype=np.int64)
    for s in range(S):
        best = 0
        val = block_norms[s, 0]
        for j in range(1, l):
            if block_norms[s, j] > val:
                val = block_norms[s, j]
                best = j
        out[s] = best
    return out


def tod_grant_numpy(block_norms):
    return np.argmax(np.asarray(block_norms, dtype=float), axis=1).astype(np.int64)


# --------------------------------------------------------------------------
# zoom quantizer on one node:  mid-tread grid, spacing 2*delta/sqrt(n) per
# axis on z/mu, clipped to [-M, M], normalized deadzone.  The spacing is shrunk
# by GRID_GUARD so that the float error stays strictly below delta*mu even at
# rounding ties.

GRID_GUARD = 1e-12
# box centers closer than this (relative) to a sub-box face get nudged toward z
BOX_GUARD = 1e-14


@njit
def zoom_quantize_loop(z, mu, delta, M, deadzone):
    S, n = z.shape
    q = np.empty((S, n))
    spacing = 2.0 * delta / math.sqrt(n) * (1.0 - GRID_GUARD)
    for s in range(S):
        m = mu[s]
        nrm = 0.0
        for i in range(n):
            nrm += (z[s, i] / m) ** 2
        if math.sqrt(nrm) <= deadzone:
            for i in range(n):
                q[s, i] = 0.0
            continue
        for i in range(n):
            u = z[s, i] / m
            if u > M:
                u = M
            elif u < -M:
                u = -M
            k = np.floor(abs(u) / spacing + 0.5)  # float: ratios may exceed int64
            if u < 0.0:
                q[s, i] = -m * spacing * k
            else:
                q[s, i] = m * spacing * k
    return q


def zoom_quantize_numpy(z, mu, delta, M, deadzone):
    z = np.asarray(z, dtype=float)
    mu = np.asarray(mu, dtype=float)[:, None]
    spacing = 2.0 * delta / math.sqrt(z.shape[1]) * (1.0 - GRID_GUARD)
    u = np.clip(z / mu, -M, M)
    q = mu * spacing * np.sign(u) * np.floor(np.abs(u) / spacing + 0.5)
    dead = np.sqrt(np.sum((z / mu) ** 2, axis=1)) <= deadzone
    q[dead] = 0.0
    return q


# --------------------------------------------------------------------------
# box quantizer on one node: N^n sub-boxes of B(center, mu), returns the
# selected sub-box center; boundary points go to the lower index.  Points on
# (or within rounding of) a face get the center nudged by a few ulps so the
# float error never exceeds mu/N per axis.


@njit
def box_quantize_loop(z, center, mu, N):
    S, n = z.shape
    q = np.empty((S, n))
    for s in range(S):
        w = 2.0 * mu[s] / N
        lim = mu[s] / N * (1.0 - BOX_GUARD)
        for i in range(n):
            lo = center[s, i] - mu[s]
            k = np.ceil((z[s, i] - lo) / w) - 1.0
            if k < 0.0:
                k = 0.0
            elif k > N - 1.0:
                k = N - 1.0
            c = lo + (k + 0.5) * w
            d = c - z[s, i]
            if abs(d) > lim:
                c = z[s, i] + math.copysign(lim, d)
                while abs(c - z[s, i]) > lim:
                    c = np.nextafter(c, z[s, i])
            q[s, i] = c
    return q


def box_quantize_numpy(z, center, mu, N):
    z = np.asarray(z, dtype=float)
    center = np.asarray(center, dtype=float)
    mu = np.asarray(mu, dtype=float)[:, None]
    w = 2.0 * mu / N
    lim = np.broadcast_to(mu / N * (1.0 - BOX_GUARD), z.shape)
    lo = center - mu
    k = np.clip(np.ceil((z - lo) / w) - 1, 0, N - 1)
    q = lo + (k + 0.5) * w
    d = q - z
    far = np.abs(d) > lim
    if far.any():
        q[far] = z[far] + np.copysign(lim[far], d[far])
        bad = np.abs(q - z) > lim
        while bad.any():
            q[bad] = np.nextafter(q[bad], z[bad])
            bad = np.abs(q - z) > lim
    return q


# --------------------------------------------------------------------------
# manipulator closed-loop flow between network events.
# core vector y = (eta1, eta2, ref1, ref2, edf1, edf2, ef); received values
# (held) are yhat = eta + edf and uf_hat = uf + ef.


@njit
def _manip_rhs(t, y, m, a, uf_amp, uf_freq, transmit_f, out):
    eta1 = y[0]
    eta2 = y[1]
    r1 = y[2]
    r2 = y[3]
    yh1 = eta1 + y[4]
    yh2 = eta2 + y[5]
    uf = uf_amp * math.cos(uf_freq * t)
    uf_hat = uf + y[6]
    uct = -(m * math.sin(0.5 * yh1) + yh1 + yh2) / a
    # input-affine plant: the common uf_hat term cancels in the error dynamics
    d_eta2 = -m * math.cos(eta1 + r1) + m * math.cos(r1) + a * uct
    out[0] = eta2
    out[1] = d_eta2
    out[2] = r2
    out[3] = -m * math.cos(r1) + a * uf_hat
    out[4] = -eta2
    out[5] = -d_eta2
    if transmit_f:
        out[6] = uf_amp * uf_freq * math.sin(uf_freq * t)
    else:
        out[6] = 0.0


@njit
def manipulator_segment_loop(y0, t0, t1, step, m, a, uf_amp, uf_freq, transmit_f):
    """RK4 from t0 to t1; last step shortened.  Returns (times, states)."""
    span = t1 - t0
    n_full = int(math.floor(span / step))
    if t0 + n_full * step < t1 - 1e-12 * max(1.0, abs(t1)):
        n = n_full + 1
    else:
        n = max(n_full, 1) if span > 0.0 else 0
    times = np.empty(n + 1)
    states = np.empty((n + 1, 7))
    y = y0.copy()
    times[0] = t0
    states[0, :] = y
    k1 = np.empty(7)
    k2 = np.empty(7)
    k3 = np.empty(7)
    k4 = np.empty(7)
    tmp = np.empty(7)
    t = t0
    for k in range(n):
        if k == n - 1:
            h = t1 - t
        else:
            h = step
        _manip_rhs(t, y, m, a, uf_amp, uf_freq, transmit_f, k1)
        for i in range(7):
            tmp[i] = y[i] + 0.5 * h * k1[i]
        _manip_rhs(t + 0.5 * h, tmp, m, a, uf_amp, uf_freq, transmit_f, k2)
        for i in range(7):
            tmp[i] = y[i] + 0.5 * h * k2[i]
        _manip_rhs(t + 0.5 * h, tmp, m, a, uf_amp, uf_freq, transmit_f, k3)
        for i in range(7):
            tmp[i] = y[i] + h * k3[i]
        _manip_rhs(t + h, tmp, m, a, uf_amp, uf_freq, transmit_f, k4)
        for i in range(7):
            y[i] = y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
        if k == n - 1:
            t = t1
        else:
            t = t0 + (k + 1) * step
        times[k + 1] = t
        states[k + 1, :] = y
    return times, states


def manipulator_segment_numpy(y0, t0, t1, step, m, a, uf_amp, uf_freq, transmit_f):
    # the flow is a single trajectory, so there is nothing to vectorize across;
    # fall back to the same loop run by the interpreter
    fn = getattr(manipulator_segment_loop, "py_func", manipulator_segment_loop)
    return fn(np.asarray(y0, dtype=float), float(t0), float(t1), float(step),
              m, a, uf_amp, uf_freq, bool(transmit_f))


if NUMBA_ENABLED:
    riccati_rk4 = riccati_rk4_loop
    rr_deadbeat = rr_deadbeat_loop
    tod_grant = tod_grant_loop
    zoom_quantize = zoom_quantize_loop
    box_quantize = box_quantize_loop
    manipulator_segment = manipulator_segment_loop
else:
    riccati_rk4 = riccati_rk4_numpy
    rr_deadbeat = rr_deadbeat_numpy
    tod_grant = tod_grant_numpy
    zoom_quantize = zoom_quantize_numpy
    box_quantize = box_quantize_numpy
    manipulator_segment = manipulator_segment_numpy

KERNELS = {
    "riccati_rk4": (riccati_rk4_loop, riccati_rk4_numpy),
    "rr_deadbeat": (rr_deadbeat_loop, rr_deadbeat_numpy),
    "tod_grant": (tod_grant_loop, tod_grant_numpy),
    "zoom_quantize": (zoom_quantize_loop, zoom_quantize_numpy),
    "box_quantize": (box_quantize_loop, box_quantize_numpy),
    "manipulator_segment": (manipulator_segment_loop, manipulator_segment_numpy),
}
