"""Compiled numerical kernels: rate evaluation, linearisation and the
Dormand-Prince integrator for the mean / covariance / propagator system.

A model is passed to these functions as a flat tuple of arrays (see
``model.CompiledModel.kernel``)::

    (stoich, lin_tr, lin_src, lin_c, lin_tf,
     inf_tr, inf_s, inf_i, inf_c, inf_tf, tf_tab)

Rates are written per individual, in fraction units: the population rate of
transition ``xi`` at state ``n`` is ``omega * rate_xi(n / omega)``.
"""
import numpy as np
from numba import njit

STEP, EASING = 0, 1


@njit(cache=True)
def activity_profile(t, kind, t_lock, w_lock, a_final, r, t_end):
    t_on = t_lock - 0.5 * w_lock
    t_off = t_lock + 0.5 * w_lock
    if t <= t_on:
        return 1.0
    if t < t_off:
        return 1.0 + (a_final - 1.0) * (t - t_on) / w_lock
    if kind == STEP or t_end <= t_off:
        return a_final
    a = a_final + r * (1.0 - a_final) * (t - t_off) / (t_end - t_off)
    return min(a, 1.0)


@njit(cache=True)
def tf_values(t, tf_tab):
    n = tf_tab.shape[0]
    out = np.ones(n + 1)
    for k in range(n):
        row = tf_tab[k]
        out[k] = activity_profile(t, int(row[0]), row[1], row[2], row[3], row[4], row[5])
    return out


@njit(cache=True)
def _term_coefs(t, c, tf_idx, tfv):
    out = c.copy()
    for m in range(c.shape[0]):
        for q in range(tf_idx.shape[1]):
            out[m] *= tfv[tf_idx[m, q]]
    return out


@njit(cache=True)
def transition_rates(t, x, kern):
    """Per-individual rate of every transition at fraction state ``x``."""
    stoich, lin_tr, lin_src, lin_c, lin_tf, inf_tr, inf_s, inf_i, inf_c, inf_tf, tf_tab = kern
    tfv = tf_values(t, tf_tab)
    w = np.zeros(stoich.shape[0])
    lc = _term_coefs(t, lin_c, lin_tf, tfv)
    for m in range(lin_tr.shape[0]):
        w[lin_tr[m]] += lc[m] * x[lin_src[m]]
    ic = _term_coefs(t, inf_c, inf_tf, tfv)
    for m in range(inf_tr.shape[0]):
        w[inf_tr[m]] += ic[m] * x[inf_s[m]] * x[inf_i[m]]
    return w


@njit(cache=True)
def rates_and_derivative(t, x, kern):
    """Rates and their derivatives ``D[xi, j] = d rate_xi / d x_j``."""
    stoich, lin_tr, lin_src, lin_c, lin_tf, inf_tr, inf_s, inf_i, inf_c, inf_tf, tf_tab = kern
    tfv = tf_values(t, tf_tab)
    n_tr, d = stoich.shape
    w = np.zeros(n_tr)
    D = np.zeros((n_tr, d))
    lc = _term_coefs(t, lin_c, lin_tf, tfv)
    for m in range(lin_tr.shape[0]):
        w[lin_tr[m]] += lc[m] * x[lin_src[m]]
        D[lin_tr[m], lin_src[m]] += lc[m]
    ic = _term_coefs(t, inf_c, inf_tf, tfv)
    for m in range(inf_tr.shape[0]):
        k = ic[m]
        s = inf_s[m]
        i = inf_i[m]
        w[inf_tr[m]] += k * x[s] * x[i]
        D[inf_tr[m], s] += k * x[i]
        D[inf_tr[m], i] += k * x[s]
    return w, D


@njit(cache=True)
def drift(t, x, kern):
    return kern[0].T @ transition_rates(t, x, kern)


@njit(cache=True)
def jacobian_and_noise(t, x, kern):
    stoich = kern[0]
    w, D = rates_and_derivative(t, x, kern)
    J = stoich.T @ D
    B = stoich.T @ (stoich * w.reshape(-1, 1))
    return J, B


@njit(cache=True)
def sparse_stoich(stoich):
    """Nonzero pattern of each stoichiometric row: ``(index, value, count)``."""
    n_tr, d = stoich.shape
    cnt = np.zeros(n_tr, np.int64)
    for r in range(n_tr):
        for i in range(d):
            if stoich[r, i] != 0.0:
                cnt[r] += 1
    width = max(1, cnt.max()) if n_tr > 0 else 1
    idx = np.zeros((n_tr, width), np.int64)
    val = np.zeros((n_tr, width))
    for r in range(n_tr):
        q = 0
        for i in range(d):
            if stoich[r, i] != 0.0:
                idx[r, q] = i
                val[r, q] = stoich[r, i]
                q += 1
    return idx, val, cnt


@njit(cache=True)
def linear_noise_terms(t, x, kern, sp, with_noise, drift, J, B):
    """Fill ``drift``, the Jacobian ``J`` and (optionally) the noise matrix ``B``.

    Works rate term by rate term through the sparse stoichiometry ``sp``
    instead of forming the dense rate-derivative matrix.
    """
    stoich, lin_tr, lin_src, lin_c, lin_tf, inf_tr, inf_s, inf_i, inf_c, inf_tf, tf_tab = kern
    nz_idx, nz_val, nz_cnt = sp
    tfv = tf_values(t, tf_tab)
    w = np.zeros(stoich.shape[0])
    drift[:] = 0.0
    J[:, :] = 0.0
    lc = _term_coefs(t, lin_c, lin_tf, tfv)
    for m in range(lin_tr.shape[0]):
        r = lin_tr[m]
        k = lc[m]
        src = lin_src[m]
        w[r] += k * x[src]
        for q in range(nz_cnt[r]):
            J[nz_idx[r, q], src] += nz_val[r, q] * k
    ic = _term_coefs(t, inf_c, inf_tf, tfv)
    for m in range(inf_tr.shape[0]):
        r = inf_tr[m]
        k = ic[m]
        s = inf_s[m]
        i = inf_i[m]
        w[r] += k * x[s] * x[i]
        for q in range(nz_cnt[r]):
            a = nz_idx[r, q]
            v = nz_val[r, q] * k
            J[a, s] += v * x[i]
            J[a, i] += v * x[s]
    for r in range(w.shape[0]):
        for q in range(nz_cnt[r]):
            drift[nz_idx[r, q]] += nz_val[r, q] * w[r]
    if with_noise:
        B[:, :] = 0.0
        for r in range(w.shape[0]):
            for q1 in range(nz_cnt[r]):
                vq = nz_val[r, q1] * w[r]
                a = nz_idx[r, q1]
                for q2 in range(nz_cnt[r]):
                    B[a, nz_idx[r, q2]] += vq * nz_val[r, q2]


@njit(cache=True)
def _sparse_left_product(J, S, out):
    """``out = J @ S`` skipping the (many) zero entries of ``J``."""
    d = J.shape[0]
    out[:, :] = 0.0
    for i in range(d):
        for k in range(d):
            a = J[i, k]
            if a != 0.0:
                for j in range(S.shape[1]):
                    out[i, j] += a * S[k, j]


@njit(cache=True)
def moment_rhs(t, y, d, do_sigma, do_prop, kern, sp):
    """Right-hand side of the augmented system (mean, covariance, propagator)."""
    x = np.maximum(y[:d], 0.0)
    out = np.empty_like(y)
    if not (do_sigma or do_prop):
        out[:d] = kern[0].T @ transition_rates(t, x, kern)
        return out
    drift = np.empty(d)
    J = np.empty((d, d))
    B = np.empty((d, d))
    linear_noise_terms(t, x, kern, sp, do_sigma, drift, J, B)
    out[:d] = drift
    P = np.empty((d, d))
    off = d
    if do_sigma:
        S = y[off:off + d * d].reshape(d, d)
        _sparse_left_product(J, S, P)
        dS = out[off:off + d * d].reshape(d, d)
        for i in range(d):
            for j in range(d):
                dS[i, j] = P[i, j] + P[j, i] + B[i, j]
        off += d * d
    if do_prop:
        U = y[off:off + d * d].reshape(d, d)
        _sparse_left_product(J, U, P)
        out[off:off + d * d] = P.reshape(d * d)
    return out


# Dormand-Prince 5(4) coefficients
_C2, _C3, _C4, _C5 = 1.0 / 5, 3.0 / 10, 4.0 / 5, 8.0 / 9
_A21 = 1.0 / 5
_A31, _A32 = 3.0 / 40, 9.0 / 40
_A41, _A42, _A43 = 44.0 / 45, -56.0 / 15, 32.0 / 9
_A51, _A52, _A53, _A54 = 19372.0 / 6561, -25360.0 / 2187, 64448.0 / 6561, -212.0 / 729
_A61, _A62, _A63, _A64, _A65 = 9017.0 / 3168, -355.0 / 33, 46732.0 / 5247, 49.0 / 176, -5103.0 / 18656
_B1, _B3, _B4, _B5, _B6 = 35.0 / 384, 500.0 / 1113, 125.0 / 192, -2187.0 / 6784, 11.0 / 84
_E1 = 71.0 / 57600
_E3 = -71.0 / 16695
_E4 = 71.0 / 1920
_E5 = -17253.0 / 339200
_E6 = 22.0 / 525
_E7 = -1.0 / 40


@njit(cache=True)
def _err_norm(err, y0, y1, rtol, atol):
    s = 0.0
    for i in range(err.shape[0]):
        sc = atol + rtol * max(abs(y0[i]), abs(y1[i]))
        s += (err[i] / sc) ** 2
    return np.sqrt(s / err.shape[0])


@njit(cache=True)
def integrate_segment(t0, t1, y, h, d, do_sigma, do_prop, kern, sp, rtol, atol, max_steps):
    """Advance ``y`` from ``t0`` to ``t1`` with adaptive step control.

    Returns ``(y, h_next, status, t_fail, n_steps, min_mean)``; status is 0 on
    success, 1 on step-size underflow, 2 on non-finite values, 3 when the
    step budget is exhausted.
    """
    t = t0
    min_mean = 0.0
    span = t1 - t0
    if span <= 0.0:
        return y, h, 0, t, 0, min_mean
    k1 = moment_rhs(t, y, d, do_sigma, do_prop, kern, sp)
    if h <= 0.0:
        d0 = np.sqrt(np.mean(y ** 2)) / 1.0
        d1 = np.sqrt(np.mean(k1 ** 2))
        if d0 < 1e-5 or d1 < 1e-5:
            h = 1e-6 * max(span, 1.0)
        else:
            h = 0.01 * d0 / d1
        h = min(h, span)
    n = 0
    while t < t1:
        if n >= max_steps:
            return y, h, 3, t, n, min_mean
        last = False
        h_prop = h
        if t + 1.1 * h >= t1:
            h = t1 - t
            last = True
        k2 = moment_rhs(t + _C2 * h, y + h * (_A21 * k1), d, do_sigma, do_prop, kern, sp)
        k3 = moment_rhs(t + _C3 * h, y + h * (_A31 * k1 + _A32 * k2), d, do_sigma, do_prop, kern, sp)
        k4 = moment_rhs(t + _C4 * h, y + h * (_A41 * k1 + _A42 * k2 + _A43 * k3), d, do_sigma, do_prop, kern, sp)
        k5 = moment_rhs(t + _C5 * h, y + h * (_A51 * k1 + _A52 * k2 + _A53 * k3 + _A54 * k4),
                        d, do_sigma, do_prop, kern, sp)
        k6 = moment_rhs(t + h, y + h * (_A61 * k1 + _A62 * k2 + _A63 * k3 + _A64 * k4 + _A65 * k5),
                        d, do_sigma, do_prop, kern, sp)
        y_new = y + h * (_B1 * k1 + _B3 * k3 + _B4 * k4 + _B5 * k5 + _B6 * k6)
        k7 = moment_rhs(t + h, y_new, d, do_sigma, do_prop, kern, sp)
        err = h * (_E1 * k1 + _E3 * k3 + _E4 * k4 + _E5 * k5 + _E6 * k6 + _E7 * k7)
        en = _err_norm(err, y, y_new, rtol, atol)
        if not np.isfinite(en):
            if h < 1e-14 * max(abs(t), 1.0):
                return y, h, 2, t, n, min_mean
            h *= 0.25
            continue
        if en <= 1.0:
            t = t1 if last else t + h
            y = y_new
            k1 = k7
            n += 1
            m = y[:d].min()
            if m < min_mean:
                min_mean = m
            fac = 10.0 if en == 0.0 else min(10.0, 0.9 * en ** -0.2)
            h = max(h, h_prop) if last else h * fac
        else:
            h *= max(0.2, 0.9 * en ** -0.2)
            if h < 1e-14 * max(abs(t), 1.0):
                return y, h, 1, t, n, min_mean
    return y, h, 0, t, n, min_mean


@njit(cache=True)
def integrate_moments(x0, times, do_sigma, do_prop, kern, rtol, atol, max_steps):
    """Integrate from ``times[0]`` through every later entry of ``times``.

    The propagator block is reset to the identity at the start of every
    segment, so the stored propagators are ``U(times[k-1], times[k])``.
    """
    d = x0.shape[0]
    n_t = times.shape[0]
    size = d + (d * d if do_sigma else 0) + (d * d if do_prop else 0)
    y = np.zeros(size)
    y[:d] = x0
    means = np.zeros((n_t, d))
    covs = np.zeros((n_t, d, d)) if do_sigma else np.zeros((0, d, d))
    props = np.zeros((n_t, d, d)) if do_prop else np.zeros((0, d, d))
    means[0] = x0
    if do_prop:
        props[0] = np.eye(d)
    h = 0.0
    min_mean = 0.0
    eye = np.eye(d).reshape(d * d)
    sp = sparse_stoich(kern[0])
    for k in range(1, n_t):
        if do_prop:
            off = d + (d * d if do_sigma else 0)
            y[off:off + d * d] = eye
        y, h, status, t_fail, n, mm = integrate_segment(
            times[k - 1], times[k], y, h, d, do_sigma, do_prop, kern, sp, rtol, atol, max_steps)
        if mm < min_mean:
            min_mean = mm
        if status != 0:
            return means, covs, props, status, t_fail, min_mean
        means[k] = y[:d]
        off = d
        if do_sigma:
            S = y[off:off + d * d].reshape(d, d)
            covs[k] = 0.5 * (S + S.T)
            y[off:off + d * d] = covs[k].reshape(d * d)
            off += d * d
        if do_prop:
            props[k] = y[off:off + d * d].reshape(d, d)
    return means, covs, props, 0, 0.0, min_mean
