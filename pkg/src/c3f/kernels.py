"""Hot numeric kernels, each with a numba and a pure-numpy implementation.

The public names (``quantile_index``, ``ecdf_at``, ...) are bound to one
backend at import time; see :mod:`c3f._backend`. Both variants stay
importable as ``_np_*`` / ``_nb_*`` for the benchmark and agreement tests.

``quantile_index`` is bit-identical across backends (both accumulate
sequentially). The remaining kernels agree to rounding only: the numpy
variants use pairwise/BLAS summation and a tanh-form sigmoid, the numba
variants sequential loops and an exp-form sigmoid.
"""

from __future__ import annotations

import numpy as np

from ._backend import HAVE_NUMBA, USE_NUMBA

# ---------------------------------------------------------------------------
# numpy implementations
# ---------------------------------------------------------------------------


def _np_quantile_index(sorted_weights, level):
    cum = np.cumsum(sorted_weights)
    hits = np.flatnonzero(cum / cum[-1] >= level)
    return int(hits[0]) if hits.size else -1


def _np_ecdf_at(scores, weights, q):
    return float(np.sum(weights[scores <= q]) / np.sum(weights))


def _np_sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _np_smoothed_mean(q, scores, temperature, wts):
    acc = _np_sigmoid((q - scores) / temperature)
    return float(np.dot(wts, acc) / np.sum(wts))


def _np_hard_mean(q, scores, wts):
    return float(np.sum(wts[scores <= q]) / np.sum(wts))


def _np_logistic_fit(X, y, step, l2, tol, max_iter):
    n, d = X.shape
    coef = np.zeros(d)
    intercept = 0.0
    grad_norm = np.inf
    it = 0
    while it < max_iter:
        p = _np_sigmoid(X @ coef + intercept)
        r = p - y
        g_coef = X.T @ r / n + l2 * coef
        g_int = r.sum() / n
        grad_norm = float(np.sqrt(g_coef @ g_coef + g_int * g_int))
        if grad_norm < tol:
            break
        coef = coef - step * g_coef
        intercept = intercept - step * g_int
        it += 1
    return coef, intercept, it, grad_norm


def _np_residual_covered(y, pred, thresholds):
    return np.abs(y - pred) <= thresholds


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------

if HAVE_NUMBA:
    import math

    from numba import njit

    # scalar libm exp is much cheaper than scalar tanh inside numba loops
    @njit(cache=True, nogil=True)
    def _nb_sigmoid(z):
        # exp overflows to inf for very negative z, giving exactly 0
        return 1.0 / (1.0 + math.exp(-z))

    @njit(cache=True, nogil=True)
    def _nb_quantile_index(sorted_weights, level):
        total = 0.0
        for i in range(sorted_weights.shape[0]):
            total += sorted_weights[i]
        acc = 0.0
        for i in range(sorted_weights.shape[0]):
            acc += sorted_weights[i]
            if acc / total >= level:
                return i
        return -1

    @njit(cache=True, nogil=True)
    def _nb_ecdf_at(scores, weights, q):
        num = 0.0
        den = 0.0
        for i in range(scores.shape[0]):
            den += weights[i]
            if scores[i] <= q:
                num += weights[i]
        return num / den

    @njit(cache=True, nogil=True)
    def _nb_smoothed_mean(q, scores, temperature, wts):
        num = 0.0
        den = 0.0
        for i in range(scores.shape[0]):
            z = (q - scores[i]) / temperature
            num += wts[i] * _nb_sigmoid(z)
            den += wts[i]
        return num / den

    @njit(cache=True, nogil=True)
    def _nb_hard_mean(q, scores, wts):
        num = 0.0
        den = 0.0
        for i in range(scores.shape[0]):
            den += wts[i]
            if scores[i] <= q:
                num += wts[i]
        return num / den

    @njit(cache=True, nogil=True)
    def _nb_logistic_fit(X, y, step, l2, tol, max_iter):
        n, d = X.shape
        coef = np.zeros(d)
        g_coef = np.zeros(d)
        intercept = 0.0
        grad_norm = np.inf
        it = 0
        while it < max_iter:
            g_coef[:] = 0.0
            g_int = 0.0
            for i in range(n):
                z = intercept
                for j in range(d):
                    z += X[i, j] * coef[j]
                r = _nb_sigmoid(z) - y[i]
                g_int += r
                for j in range(d):
                    g_coef[j] += X[i, j] * r
            sq = 0.0
            for j in range(d):
                g_coef[j] = g_coef[j] / n + l2 * coef[j]
                sq += g_coef[j] * g_coef[j]
            g_int /= n
            sq += g_int * g_int
            grad_norm = np.sqrt(sq)
            if grad_norm < tol:
                break
            for j in range(d):
                coef[j] -= step * g_coef[j]
            intercept -= step * g_int
            it += 1
        return coef, intercept, it, grad_norm

    @njit(cache=True, nogil=True)
    def _nb_residual_covered(y, pred, thresholds):
        out = np.empty(y.shape[0], dtype=np.bool_)
        for i in range(y.shape[0]):
            out[i] = abs(y[i] - pred[i]) <= thresholds[i]
        return out


# ---------------------------------------------------------------------------
# public entry points
# ---------------------------------------------------------------------------


def _f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


if USE_NUMBA:
    _quantile_index = _nb_quantile_index
    _ecdf_at = _nb_ecdf_at
    _smoothed_mean = _nb_smoothed_mean
    _hard_mean = _nb_hard_mean
    _logistic_fit = _nb_logistic_fit
    _residual_covered = _nb_residual_covered
else:
    _quantile_index = _np_quantile_index
    _ecdf_at = _np_ecdf_at
    _smoothed_mean = _np_smoothed_mean
    _hard_mean = _np_hard_mean
    _logistic_fit = _np_logistic_fit
    _residual_covered = _np_residual_covered


def quantile_index(sorted_weights, level: float) -> int:
    """First index whose normalized cumulative weight reaches ``level``; -1 if none."""
    return int(_quantile_index(_f64(sorted_weights), float(level)))


def ecdf_at(scores, weights, q: float) -> float:
    """Self-normalized weighted ECDF evaluated at ``q``."""
    return float(_ecdf_at(_f64(scores), _f64(weights), float(q)))


def smoothed_mean(q: float, scores, temperature: float, wts) -> float:
    """Weighted mean of sigmoid((q - score) / temperature)."""
    return float(_smoothed_mean(float(q), _f64(scores), float(temperature), _f64(wts)))


def hard_mean(q: float, scores, wts) -> float:
    """Weighted mean of 1{score <= q}."""
    return float(_hard_mean(float(q), _f64(scores), _f64(wts)))


def logistic_fit(X, y, step: float, l2: float, tol: float, max_iter: int):
    """Full-batch gradient descent on L2-penalized logistic loss (intercept unpenalized).

    Returns ``(coef, intercept, n_iter, grad_norm)``.
    """
    coef, intercept, it, gn = _logistic_fit(
        np.ascontiguousarray(X, dtype=np.float64), _f64(y),
        float(step), float(l2), float(tol), int(max_iter),
    )
    return np.asarray(coef), float(intercept), int(it), float(gn)


def residual_covered(y, pred, thresholds):
    """Elementwise |y - pred| <= threshold."""
    y = _f64(y)
    thresholds = np.broadcast_to(_f64(thresholds), y.shape).copy()
    return np.asarray(_residual_covered(y, _f64(pred), thresholds), dtype=bool)
