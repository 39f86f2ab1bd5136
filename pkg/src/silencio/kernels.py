"""Hot numeric kernels with numba and pure-numpy implementations.

Each kernel ships as ``<name>_np`` (vectorized numpy, always available) and,
when numba is importable, ``<name>_nb`` (nopython loops).  The unprefixed
name is bound to whichever implementation the active backend selects; both
stay importable so tests and the benchmark can compare them directly.

Conventions: float64 throughout; temporal matrices are (frames, channels);
conv weights are (kernel, in_channels, out_channels) with symmetric zero
padding, so kernel widths must be odd and output length equals input length.
"""

import math

import numpy as np

from .backend import HAVE_NUMBA, USE_NUMBA, njit

# --------------------------------------------------------------------------
# temporal convolution


def conv1d_fwd_np(x, w):
    t, _ = x.shape
    k, cin, cout = w.shape
    r = k // 2
    xp = np.zeros((t + k - 1, cin))
    xp[r : r + t] = x
    out = np.zeros((t, cout))
    for dk in range(k):
        out += xp[dk : dk + t] @ w[dk]
    return out


def conv1d_bwd_np(x, w, gout):
    t, cin = x.shape
    k, _, _ = w.shape
    r = k // 2
    xp = np.zeros((t + k - 1, cin))
    xp[r : r + t] = x
    gxp = np.zeros_like(xp)
    gw = np.zeros_like(w)
    for dk in range(k):
        gxp[dk : dk + t] += gout @ w[dk].T
        gw[dk] = xp[dk : dk + t].T @ gout
    return gxp[r : r + t], gw


def _conv1d_fwd_loops(x, w):
    t, cin = x.shape
    k, _, cout = w.shape
    r = k // 2
    out = np.zeros((t, cout))
    for n in range(t):
        for dk in range(k):
            s = n + dk - r
            if s < 0 or s >= t:
                continue
            for o in range(cout):
                acc = 0.0
                for i in range(cin):
                    acc += x[s, i] * w[dk, i, o]
                out[n, o] += acc
    return out


def _conv1d_bwd_loops(x, w, gout):
    t, cin = x.shape
    k, _, cout = w.shape
    r = k // 2
    gx = np.zeros((t, cin))
    gw = np.zeros((k, cin, cout))
    for n in range(t):
        for dk in range(k):
            s = n + dk - r
            if s < 0 or s >= t:
                continue
            for i in range(cin):
                acc = 0.0
                for o in range(cout):
                    g = gout[n, o]
                    acc += g * w[dk, i, o]
                    gw[dk, i, o] += x[s, i] * g
                gx[s, i] += acc
    return gx, gw


# --------------------------------------------------------------------------
# gated recurrence (update/reset gates) over a full sequence
#
#   z_t = sigm(x_t Wz + h_{t-1} Uz + bz)
#   r_t = sigm(x_t Wr + h_{t-1} Ur + br)
#   c_t = tanh(x_t Wh + (r_t * h_{t-1}) Uh + bh)
#   h_t = (1 - z_t) * h_{t-1} + z_t * c_t        with h_{-1} = 0


def gru_fwd_np(x, wz, wr, wh, uz, ur, uh, bz, br, bh):
    s = x.shape[0]
    h = uz.shape[0]
    az0 = x @ wz + bz
    ar0 = x @ wr + br
    ah0 = x @ wh + bh
    hs = np.zeros((s, h))
    zs = np.zeros((s, h))
    rs = np.zeros((s, h))
    cs = np.zeros((s, h))
    hprev = np.zeros(h)
    for t in range(s):
        zt = 1.0 / (1.0 + np.exp(-(az0[t] + hprev @ uz)))
        rt = 1.0 / (1.0 + np.exp(-(ar0[t] + hprev @ ur)))
        ct = np.tanh(ah0[t] + (rt * hprev) @ uh)
        hprev = (1.0 - zt) * hprev + zt * ct
        zs[t] = zt
        rs[t] = rt
        cs[t] = ct
        hs[t] = hprev
    return hs, zs, rs, cs


def gru_bwd_np(x, wz, wr, wh, uz, ur, uh, z, r, c, h, gh):
    s, _ = x.shape
    hid = uz.shape[0]
    gx = np.zeros_like(x)
    gwz = np.zeros_like(wz)
    gwr = np.zeros_like(wr)
    gwh = np.zeros_like(wh)
    guz = np.zeros_like(uz)
    gur = np.zeros_like(ur)
    guh = np.zeros_like(uh)
    gbz = np.zeros(hid)
    gbr = np.zeros(hid)
    gbh = np.zeros(hid)
    dh = np.zeros(hid)
    for t in range(s - 1, -1, -1):
        dh = dh + gh[t]
        hprev = h[t - 1] if t > 0 else np.zeros(hid)
        zt, rt, ct = z[t], r[t], c[t]
        daz = dh * (ct - hprev) * zt * (1.0 - zt)
        dac = dh * zt * (1.0 - ct * ct)
        tmp = dac @ uh.T
        dar = tmp * hprev * rt * (1.0 - rt)
        gx[t] = daz @ wz.T + dar @ wr.T + dac @ wh.T
        gwz += np.outer(x[t], daz)
        gwr += np.outer(x[t], dar)
        gwh += np.outer(x[t], dac)
        guz += np.outer(hprev, daz)
        gur += np.outer(hprev, dar)
        guh += np.outer(rt * hprev, dac)
        gbz += daz
        gbr += dar
        gbh += dac
        dh = dh * (1.0 - zt) + daz @ uz.T + dar @ ur.T + tmp * rt
    return gx, gwz, gwr, gwh, guz, gur, guh, gbz, gbr, gbh


def _gru_fwd_loops(x, wz, wr, wh, uz, ur, uh, bz, br, bh):
    s = x.shape[0]
    hid = uz.shape[0]
    az0 = x @ wz
    ar0 = x @ wr
    ah0 = x @ wh
    hs = np.zeros((s, hid))
    zs = np.zeros((s, hid))
    rs = np.zeros((s, hid))
    cs = np.zeros((s, hid))
    hprev = np.zeros(hid)
    for t in range(s):
        for j in range(hid):
            az = az0[t, j] + bz[j]
            ar = ar0[t, j] + br[j]
            for i in range(hid):
                az += hprev[i] * uz[i, j]
                ar += hprev[i] * ur[i, j]
            zs[t, j] = 1.0 / (1.0 + math.exp(-az))
            rs[t, j] = 1.0 / (1.0 + math.exp(-ar))
        for j in range(hid):
            ac = ah0[t, j] + bh[j]
            for i in range(hid):
                ac += rs[t, i] * hprev[i] * uh[i, j]
            cs[t, j] = math.tanh(ac)
        for j in range(hid):
            hs[t, j] = (1.0 - zs[t, j]) * hprev[j] + zs[t, j] * cs[t, j]
        hprev = hs[t].copy()
    return hs, zs, rs, cs


def _gru_bwd_loops(x, wz, wr, wh, uz, ur, uh, z, r, c, h, gh):
    s, din = x.shape
    hid = uz.shape[0]
    gx = np.zeros((s, din))
    gwz = np.zeros((din, hid))
    gwr = np.zeros((din, hid))
    gwh = np.zeros((din, hid))
    guz = np.zeros((hid, hid))
    gur = np.zeros((hid, hid))
    guh = np.zeros((hid, hid))
    gbz = np.zeros(hid)
    gbr = np.zeros(hid)
    gbh = np.zeros(hid)
    dh = np.zeros(hid)
    dhn = np.zeros(hid)
    daz = np.zeros(hid)
    dar = np.zeros(hid)
    dac = np.zeros(hid)
    tmp = np.zeros(hid)
    hprev = np.zeros(hid)
    for t in range(s - 1, -1, -1):
        for j in range(hid):
            dh[j] += gh[t, j]
            hprev[j] = h[t - 1, j] if t > 0 else 0.0
        for j in range(hid):
            zt = z[t, j]
            ct = c[t, j]
            daz[j] = dh[j] * (ct - hprev[j]) * zt * (1.0 - zt)
            dac[j] = dh[j] * zt * (1.0 - ct * ct)
        for j in range(hid):
            acc = 0.0
            for i in range(hid):
                acc += dac[i] * uh[j, i]
            tmp[j] = acc
            rt = r[t, j]
            dar[j] = acc * hprev[j] * rt * (1.0 - rt)
        for i in range(din):
            acc = 0.0
            for j in range(hid):
                acc += daz[j] * wz[i, j] + dar[j] * wr[i, j] + dac[j] * wh[i, j]
                gwz[i, j] += x[t, i] * daz[j]
                gwr[i, j] += x[t, i] * dar[j]
                gwh[i, j] += x[t, i] * dac[j]
            gx[t, i] = acc
        for i in range(hid):
            for j in range(hid):
                guz[i, j] += hprev[i] * daz[j]
                gur[i, j] += hprev[i] * dar[j]
                guh[i, j] += r[t, i] * hprev[i] * dac[j]
        for j in range(hid):
            gbz[j] += daz[j]
            gbr[j] += dar[j]
            gbh[j] += dac[j]
        for j in range(hid):
            acc = dh[j] * (1.0 - z[t, j]) + tmp[j] * r[t, j]
            for i in range(hid):
                acc += daz[i] * uz[j, i] + dar[i] * ur[j, i]
            dhn[j] = acc
        for j in range(hid):
            dh[j] = dhn[j]
    return gx, gwz, gwr, gwh, guz, gur, guh, gbz, gbr, gbh


# --------------------------------------------------------------------------
# DTW: accumulated-cost table and backtracking
#
# Steps {(1,0),(0,1),(1,1)}; backtracking breaks ties preferring the
# diagonal, then (0,1), then (1,0).


def dtw_table_np(dist):
    t, u = dist.shape
    acc = np.empty((t, u))
    acc[0, 0] = dist[0, 0]
    for j in range(1, u):
        acc[0, j] = acc[0, j - 1] + dist[0, j]
    for i in range(1, t):
        acc[i, 0] = acc[i - 1, 0] + dist[i, 0]
        row = acc[i]
        prev = acc[i - 1]
        for j in range(1, u):
            m = prev[j - 1]
            if row[j - 1] < m:
                m = row[j - 1]
            if prev[j] < m:
                m = prev[j]
            row[j] = dist[i, j] + m
    return acc


def dtw_backtrack_np(acc):
    t, u = acc.shape
    cap = t + u - 1
    vi = np.empty(cap, dtype=np.int64)
    sj = np.empty(cap, dtype=np.int64)
    i, j = t - 1, u - 1
    n = 0
    vi[n] = i
    sj[n] = j
    n += 1
    while i > 0 or j > 0:
        if i == 0:
            j -= 1
        elif j == 0:
            i -= 1
        else:
            d = acc[i - 1, j - 1]
            l = acc[i, j - 1]
            up = acc[i - 1, j]
            if d <= l and d <= up:
                i -= 1
                j -= 1
            elif l <= up:
                j -= 1
            else:
                i -= 1
        vi[n] = i
        sj[n] = j
        n += 1
    return vi[:n][::-1].copy(), sj[:n][::-1].copy()


# --------------------------------------------------------------------------
# backend binding

if HAVE_NUMBA:
    conv1d_fwd_nb = njit(_conv1d_fwd_loops)
    conv1d_bwd_nb = njit(_conv1d_bwd_loops)
    gru_fwd_nb = njit(_gru_fwd_loops)
    gru_bwd_nb = njit(_gru_bwd_loops)
    dtw_table_nb = njit(dtw_table_np)
    dtw_backtrack_nb = njit(dtw_backtrack_np)

if USE_NUMBA:
    conv1d_fwd = conv1d_fwd_nb
    conv1d_bwd = conv1d_bwd_nb
    gru_fwd = gru_fwd_nb
    gru_bwd = gru_bwd_nb
    dtw_table = dtw_table_nb
    dtw_backtrack = dtw_backtrack_nb
else:
    conv1d_fwd = conv1d_fwd_np
    conv1d_bwd = conv1d_bwd_np
    gru_fwd = gru_fwd_np
    gru_bwd = gru_bwd_np
    dtw_table = dtw_table_np
    dtw_backtrack = dtw_backtrack_np


def warm_up():
    """Trigger JIT compilation of the active kernels on tiny inputs."""
    rng = np.random.default_rng(0)
    x = rng.normal(size=(4, 3))
    w = rng.normal(size=(3, 3, 2))
    conv1d_bwd(x, w, conv1d_fwd(x, w))
    din, hid = 3, 2
    args = (
        rng.normal(size=(4, din)),
        rng.normal(size=(din, hid)),
        rng.normal(size=(din, hid)),
        rng.normal(size=(din, hid)),
        rng.normal(size=(hid, hid)),
        rng.normal(size=(hid, hid)),
        rng.normal(size=(hid, hid)),
        rng.normal(size=hid),
        rng.normal(size=hid),
        rng.normal(size=hid),
    )
    h, z, r, c = gru_fwd(*args)
    gru_bwd(args[0], *args[1:7], z, r, c, h, np.ones_like(h))
    d = np.abs(rng.normal(size=(5, 6)))
    dtw_backtrack(dtw_table(d))
