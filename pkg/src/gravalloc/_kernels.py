"""Compiled force kernels and the adaptive flow integrator.

Field modes understood by :func:`field_eval`:

0  periodic field, d = 3, reciprocal part from a cubic B-spline grid
1  periodic field, any d, reciprocal part summed over an explicit k list
2  restricted field of the stars inside a ball minus the uniform background
3  plain star sum (no background), truncated at the distance to the window edge

``fpar`` layout: [side, alpha, rc2, lam, lower, radius, const, c_0 .. c_{d-1}]
where ``lower`` is the lower window coordinate, ``radius``/``c`` describe the
ball of mode 2 and ``const`` is an additive potential constant.
"""

from __future__ import annotations

import math

import numpy as np
from numba import config, njit, prange

# the bundled TBB may be too old; the workqueue layer is always available
config.THREADING_LAYER = "workqueue"

# Dormand-Prince 5(4) tableau
_A21 = 1.0 / 5
_A31, _A32 = 3.0 / 40, 9.0 / 40
_A41, _A42, _A43 = 44.0 / 45, -56.0 / 15, 32.0 / 9
_A51, _A52, _A53, _A54 = 19372.0 / 6561, -25360.0 / 2187, 64448.0 / 6561, -212.0 / 729
_A61, _A62, _A63, _A64, _A65 = 9017.0 / 3168, -355.0 / 33, 46732.0 / 5247, 49.0 / 176, -5103.0 / 18656
_B1, _B3, _B4, _B5, _B6 = 35.0 / 384, 500.0 / 1113, 125.0 / 192, -2187.0 / 6784, 11.0 / 84
_E1 = _B1 - 5179.0 / 57600
_E3 = _B3 - 7571.0 / 16695
_E4 = _B4 - 393.0 / 640
_E5 = _B5 - -92097.0 / 339200
_E6 = _B6 - 187.0 / 2100
_E7 = -1.0 / 40

STATUS_CAPTURED = 0
STATUS_TIMEOUT = 1
STATUS_LEFT = 2
STATUS_UNDERFLOW = 3
STATUS_INFERRED = 4
STATUS_MAXSTEPS = 5


@njit(cache=True)
def gamma_q(s2, x):
    """Regularized upper incomplete gamma Q(s2/2, x) for a positive integer s2."""
    if s2 % 2 == 1:
        q = math.erfc(math.sqrt(x))
        s = 0.5
    else:
        q = math.exp(-x)
        s = 1.0
    while s < 0.5 * s2 - 1e-9:
        q += math.exp(s * math.log(x) - x - math.lgamma(s + 1.0)) if x > 0 else 0.0
        s += 1.0
    return q


@njit(cache=True)
def _bspline_w(f, w):
    f2 = f * f
    f3 = f2 * f
    w[0] = (1.0 - f) ** 3 / 6.0
    w[1] = (3.0 * f3 - 6.0 * f2 + 4.0) / 6.0
    w[2] = (-3.0 * f3 + 3.0 * f2 + 3.0 * f + 1.0) / 6.0
    w[3] = f3 / 6.0


@njit(cache=True)
def _recip_grid3(x, grid, side, lower, want_pot, out):
    m = grid.shape[1]
    h = side / m
    wx = np.empty(4)
    wy = np.empty(4)
    wz = np.empty(4)
    tx = (x[0] - lower) / h
    ty = (x[1] - lower) / h
    tz = (x[2] - lower) / h
    ix = int(math.floor(tx))
    iy = int(math.floor(ty))
    iz = int(math.floor(tz))
    _bspline_w(tx - ix, wx)
    _bspline_w(ty - iy, wy)
    _bspline_w(tz - iz, wz)
    nf = 4 if want_pot else 3
    for c in range(nf):
        out[c] = 0.0
    for a in range(4):
        ia = (ix - 1 + a) % m
        for b in range(4):
            ib = (iy - 1 + b) % m
            wab = wx[a] * wy[b]
            for e in range(4):
                ie = (iz - 1 + e) % m
                w = wab * wz[e]
                for c in range(nf):
                    out[c] += w * grid[c, ia, ib, ie]


@njit(cache=True)
def field_eval(mode, x, stars, fpar, grid, kvec, akr, aki, want_pot, f):
    """Evaluate the field at ``x`` into ``f``.

    Returns (potential, nearest star index, nearest distance). The potential
    is only meaningful when ``want_pot`` is true.
    """
    d = x.shape[0]
    n = stars.shape[0]
    side = fpar[0]
    for c in range(d):
        f[c] = 0.0
    pot = 0.0
    best = 1e300
    ibest = -1
    y = np.empty(d)
    if mode == 0 or mode == 1:
        alpha = fpar[1]
        rc2 = fpar[2]
        s2 = d - 2
        gd2 = math.gamma(0.5 * d)
        ad2 = alpha ** (d - 2)
        for j in range(n):
            r2 = 0.0
            for c in range(d):
                v = stars[j, c] - x[c]
                v -= side * math.floor(v / side + 0.5)
                y[c] = v
                r2 += v * v
            if r2 < best:
                best = r2
                ibest = j
            if r2 >= rc2:
                continue
            r = math.sqrt(r2)
            a2r2 = alpha * alpha * r2
            if d == 3:
                q = math.erfc(alpha * r)
                ex = math.exp(-a2r2)
                fac = (q / r2 + 1.1283791670955126 * alpha * ex / r) / r
                if want_pot:
                    pot -= q / r
            else:
                q = gamma_q(s2, a2r2)
                ex = math.exp(-a2r2)
                rp = r ** (1 - d)
                fac = (q * rp + ad2 * ex / (gd2 * r)) / r
                if want_pot:
                    pot -= q * rp * r / (d - 2)
            for c in range(d):
                f[c] += fac * y[c]
        tmp = np.empty(4)
        if mode == 0:
            _recip_grid3(x, grid, side, fpar[4], want_pot, tmp)
            for c in range(3):
                f[c] += tmp[c]
            if want_pot:
                pot += tmp[3]
        else:
            for k in range(kvec.shape[0]):
                ph = 0.0
                for c in range(d):
                    ph += kvec[k, c] * x[c]
                cs = math.cos(ph)
                sn = math.sin(ph)
                im = aki[k] * cs - akr[k] * sn
                for c in range(d):
                    f[c] += kvec[k, c] * im
                if want_pot:
                    pot -= akr[k] * cs + aki[k] * sn
        pot += fpar[6]
    elif mode == 2:
        lam = fpar[3]
        rad = fpar[5]
        kd = math.pi ** (0.5 * d) / math.gamma(0.5 * d + 1.0)
        for j in range(n):
            r2 = 0.0
            for c in range(d):
                v = stars[j, c] - x[c]
                y[c] = v
                r2 += v * v
            if r2 < best:
                best = r2
                ibest = j
            r = math.sqrt(r2)
            rp = r ** (-d)
            for c in range(d):
                f[c] += rp * y[c]
            if want_pot:
                pot -= r ** (2 - d) / (d - 2)
        dc2 = 0.0
        for c in range(d):
            dc2 += (x[c] - fpar[7 + c]) ** 2
        if dc2 <= rad * rad:
            for c in range(d):
                f[c] -= lam * kd * (fpar[7 + c] - x[c])
            if want_pot:
                pot += lam * (d * kd * rad * rad / (2.0 * (d - 2)) - kd * dc2 / 2.0)
        else:
            dcn = math.sqrt(dc2)
            rdd = rad**d
            for c in range(d):
                f[c] -= lam * kd * rdd * (fpar[7 + c] - x[c]) / dcn**d
            if want_pot:
                pot += lam * kd * rdd * dcn ** (2 - d) / (d - 2)
    else:
        lower = fpar[4]
        cut = 1e300
        for c in range(d):
            cut = min(cut, x[c] - lower, lower + side - x[c])
        cut2 = cut * cut
        for j in range(n):
            r2 = 0.0
            for c in range(d):
                v = stars[j, c] - x[c]
                y[c] = v
                r2 += v * v
            if r2 < best:
                best = r2
                ibest = j
            if r2 > cut2:
                continue
            r = math.sqrt(r2)
            rp = r ** (-d)
            for c in range(d):
                f[c] += rp * y[c]
            if want_pot:
                pot -= r ** (2 - d) / (d - 2)
    return pot, ibest, math.sqrt(best)


@njit(cache=True)
def field_eval_many(mode, xs, stars, fpar, grid, kvec, akr, aki, want_pot):
    n, d = xs.shape
    out = np.empty((n, d))
    pots = np.empty(n)
    near = np.empty(n, dtype=np.int64)
    dist = np.empty(n)
    f = np.empty(d)
    for i in range(n):
        p, ib, dd = field_eval(mode, xs[i], stars, fpar, grid, kvec, akr, aki, want_pot, f)
        out[i, :] = f
        pots[i] = p
        near[i] = ib
        dist[i] = dd
    return out, pots, near, dist


@njit(cache=True)
def _outside(mode, x, fpar):
    d = x.shape[0]
    if mode == 2:
        s = 0.0
        for c in range(d):
            s += (x[c] - fpar[7 + c]) ** 2
        return s > fpar[5] * fpar[5]
    if mode == 3:
        lo = fpar[4]
        for c in range(d):
            if x[c] < lo or x[c] > lo + fpar[0]:
                return True
    return False


@njit(cache=True)
def _mask_lookup(x, mask, mside, mlower, mn):
    d = x.shape[0]
    h = mside / mn
    flat = 0
    for c in range(d):
        i = int(math.floor((x[c] - mlower) / h)) % mn
        flat = flat * mn + i
    return mask[flat]


@njit(cache=True)
def _norm(v):
    s = 0.0
    for c in range(v.shape[0]):
        s += v[c] * v[c]
    return math.sqrt(s)


@njit(cache=True)
def integrate_one(
    x0, direction, mode, stars, fpar, grid, kvec, akr, aki,
    r_cap, t_max, rtol, h_max, max_steps, trap, use_trap,
    mask, mside, mlower, mn, use_mask,
    record, rec_t, rec_x, rec_u, rec_l,
):
    """Integrate ``dx/dt = direction * F(x)`` from ``x0``.

    Returns (status, label, time, steps, final position, recorded count).
    """
    d = x0.shape[0]
    x = x0.copy()
    xn = np.empty(d)
    xs = np.empty(d)
    k1 = np.empty(d)
    k2 = np.empty(d)
    k3 = np.empty(d)
    k4 = np.empty(d)
    k5 = np.empty(d)
    k6 = np.empty(d)
    k7 = np.empty(d)
    atol = rtol
    pot, near, dist = field_eval(mode, x, stars, fpar, grid, kvec, akr, aki, record, k1)
    for c in range(d):
        k1[c] *= direction
    t = 0.0
    arc = 0.0
    nrec = 0
    if record:
        rec_t[0] = 0.0
        rec_u[0] = pot
        rec_l[0] = 0.0
        for c in range(d):
            rec_x[0, c] = x[c]
        nrec = 1
    if dist < r_cap:
        return STATUS_CAPTURED, near, t, 0, x, nrec
    if use_trap and dist < trap[near]:
        return STATUS_CAPTURED, near, t, 0, x, nrec
    fn = 0.0
    for c in range(d):
        fn += k1[c] * k1[c]
    fn = math.sqrt(fn)
    h = min(h_max, 0.1 * dist / (fn + 1e-300), 1e-3)
    steps = 0
    while True:
        if steps >= max_steps:
            return STATUS_MAXSTEPS, -1, t, steps, x, nrec
        if t >= t_max:
            return STATUS_TIMEOUT, -1, t, steps, x, nrec
        h = min(h, h_max, 0.1 * dist / (fn + 1e-300), t_max - t)
        if h < 1e-15 * (1.0 + t):
            return STATUS_UNDERFLOW, -1, t, steps, x, nrec
        for c in range(d):
            xs[c] = x[c] + h * _A21 * k1[c]
        field_eval(mode, xs, stars, fpar, grid, kvec, akr, aki, False, k2)
        for c in range(d):
            k2[c] *= direction
            xs[c] = x[c] + h * (_A31 * k1[c] + _A32 * k2[c])
        field_eval(mode, xs, stars, fpar, grid, kvec, akr, aki, False, k3)
        for c in range(d):
            k3[c] *= direction
            xs[c] = x[c] + h * (_A41 * k1[c] + _A42 * k2[c] + _A43 * k3[c])
        field_eval(mode, xs, stars, fpar, grid, kvec, akr, aki, False, k4)
        for c in range(d):
            k4[c] *= direction
            xs[c] = x[c] + h * (_A51 * k1[c] + _A52 * k2[c] + _A53 * k3[c] + _A54 * k4[c])
        field_eval(mode, xs, stars, fpar, grid, kvec, akr, aki, False, k5)
        for c in range(d):
            k5[c] *= direction
            xs[c] = x[c] + h * (_A61 * k1[c] + _A62 * k2[c] + _A63 * k3[c] + _A64 * k4[c] + _A65 * k5[c])
        field_eval(mode, xs, stars, fpar, grid, kvec, akr, aki, False, k6)
        for c in range(d):
            k6[c] *= direction
            xn[c] = x[c] + h * (_B1 * k1[c] + _B3 * k3[c] + _B4 * k4[c] + _B5 * k5[c] + _B6 * k6[c])
        potn, nearn, distn = field_eval(mode, xn, stars, fpar, grid, kvec, akr, aki, record, k7)
        for c in range(d):
            k7[c] *= direction
        err = 0.0
        for c in range(d):
            e = h * (_E1 * k1[c] + _E3 * k3[c] + _E4 * k4[c] + _E5 * k5[c] + _E6 * k6[c] + _E7 * k7[c])
            sc = atol + rtol * max(abs(x[c]), abs(xn[c]))
            err = max(err, abs(e) / sc)
        if err <= 1.0:
            fn7 = 0.0
            for c in range(d):
                fn7 += k7[c] * k7[c]
            fn7 = math.sqrt(fn7)
            # arclength as an extra component s' = |F|, advanced with the same fifth-order weights
            arc += h * (_B1 * fn + _B3 * _norm(k3) + _B4 * _norm(k4) + _B5 * _norm(k5) + _B6 * _norm(k6))
            t += h
            for c in range(d):
                x[c] = xn[c]
                k1[c] = k7[c]
            fn = fn7
            dist = distn
            near = nearn
            steps += 1
            if record and nrec < rec_t.shape[0]:
                rec_t[nrec] = t
                rec_u[nrec] = potn
                rec_l[nrec] = arc
                for c in range(d):
                    rec_x[nrec, c] = x[c]
                nrec += 1
            if dist < r_cap:
                return STATUS_CAPTURED, near, t, steps, x, nrec
            if use_trap and dist < trap[near]:
                return STATUS_CAPTURED, near, t, steps, x, nrec
            if _outside(mode, x, fpar):
                return STATUS_LEFT, -1, t, steps, x, nrec
            if use_mask:
                lab = _mask_lookup(x, mask, mside, mlower, mn)
                if lab >= 0:
                    return STATUS_INFERRED, lab, t, steps, x, nrec
            fac = 5.0 if err == 0.0 else min(5.0, max(0.2, 0.9 * err ** (-0.2)))
        else:
            fac = max(0.2, 0.9 * err ** (-0.2))
        h *= fac


@njit(cache=True)
def integrate_batch(
    starts, direction, mode, stars, fpar, grid, kvec, akr, aki,
    r_cap, t_max, rtol, h_max, max_steps, trap, use_trap,
    mask, mside, mlower, mn, use_mask,
):
    n, d = starts.shape
    labels = np.empty(n, dtype=np.int64)
    status = np.empty(n, dtype=np.int64)
    times = np.empty(n)
    steps = np.empty(n, dtype=np.int64)
    ends = np.empty((n, d))
    dummy_t = np.empty(1)
    dummy_x = np.empty((1, d))
    for i in range(n):
        st, lab, tt, ns, xe, _ = integrate_one(
            starts[i], direction, mode, stars, fpar, grid, kvec, akr, aki,
            r_cap, t_max, rtol, h_max, max_steps, trap, use_trap,
            mask, mside, mlower, mn, use_mask,
            False, dummy_t, dummy_x, dummy_t, dummy_t,
        )
        labels[i] = lab
        status[i] = st
        times[i] = tt
        steps[i] = ns
        ends[i, :] = xe
    return labels, status, times, steps, ends


@njit(cache=True, parallel=True)
def weighted_sum(points, masses, probes):
    """``sum_i m_i (w_i - x) / |w_i - x|^d`` at every probe ``x``."""
    n, d = points.shape
    out = np.zeros(probes.shape)
    for p in prange(probes.shape[0]):
        acc = np.zeros(d)
        for i in range(n):
            r2 = 0.0
            for j in range(d):
                dx = points[i, j] - probes[p, j]
                r2 += dx * dx
            f = masses[i] / r2 ** (0.5 * d)
            for j in range(d):
                acc[j] += f * (points[i, j] - probes[p, j])
        out[p] = acc
    return out
