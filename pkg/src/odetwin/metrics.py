"""Error measures between predicted and reference series.

Series are arrays of shape ``(n,)`` or ``(n, d)``.  For multivariate series
the DTW local cost is the Euclidean norm of the per-time difference.
"""

from dataclasses import dataclass

import numba
import numpy as np

MRE_EPS = 1e-9


class UndefinedMetric(ValueError):
    pass


def _as_series(x):
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError("series must be a non-empty 1-D or 2-D array")
    return x


def _values(x):
    return x.states if hasattr(x, "states") else np.asarray(x, dtype=float)


def l1_error(pred, truth):
    """Mean absolute difference over all (time, dimension) entries."""
    if hasattr(pred, "times") and hasattr(truth, "times"):
        if not np.array_equal(pred.times, truth.times):
            raise ValueError("time grids differ")
    p, t = _values(pred), _values(truth)
    if p.shape != t.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {t.shape}")
    return float(np.mean(np.abs(p - t)))


@dataclass(frozen=True)
class MreResult:
    value: float
    n_used: int
    excluded: tuple


def mre(pred, truth, eps=MRE_EPS, details=False):
    """Mean relative error ``mean(|x - y| / |y|)``.

    Entries whose reference magnitude is below ``eps`` are left out of the
    mean; ``details=True`` returns an :class:`MreResult` listing them.
    """
    x = np.ravel(_values(pred))
    y = np.ravel(_values(truth))
    if x.shape != y.shape:
        raise ValueError(f"length mismatch: {x.size} vs {y.size}")
    keep = np.abs(y) >= eps
    if not keep.any():
        raise UndefinedMetric("undefined MRE: every reference entry is below the zero guard")
    value = float(np.mean(np.abs(x[keep] - y[keep]) / np.abs(y[keep])))
    if details:
        return MreResult(value, int(keep.sum()), tuple(np.flatnonzero(~keep).tolist()))
    return value


def cost_matrix(x, y):
    x, y = _as_series(x), _as_series(y)
    if x.shape[1] != y.shape[1]:
        raise ValueError("series dimensions differ")
    return np.sqrt(((x[:, None, :] - y[None, :, :]) ** 2).sum(-1))


# -- hard DTW -----------------------------------------------------------------


@numba.njit(cache=True)
def _dtw_table(d):
    n, m = d.shape
    acc = np.full((n + 1, m + 1), np.inf)
    acc[0, 0] = 0.0
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            best = acc[i - 1, j - 1]
            if acc[i - 1, j] < best:
                best = acc[i - 1, j]
            if acc[i, j - 1] < best:
                best = acc[i, j - 1]
            acc[i, j] = d[i - 1, j - 1] + best
    return acc


@dataclass(frozen=True)
class DtwMatrix:
    """Local costs ``cost[i, j]`` and cumulative table ``acc`` (padded, 1-based)."""

    cost: np.ndarray
    acc: np.ndarray

    @property
    def total(self):
        return float(self.acc[-1, -1])


def dtw_matrix(x, y):
    d = cost_matrix(x, y)
    return DtwMatrix(d, _dtw_table(d))


def dtw(x, y):
    """Minimal cumulative alignment cost D(n, m)."""
    return dtw_matrix(x, y).total


def dtw_normalized(x, y):
    """DTW total divided by n + m (the per-step score used for comparisons)."""
    n, m = len(_as_series(x)), len(_as_series(y))
    return dtw(x, y) / (n + m)


# -- soft DTW -----------------------------------------------------------------


@numba.njit(cache=True)
def _softmin3(a, b, c, gamma):
    lo = min(a, b, c)
    if lo == np.inf:
        return np.inf
    s = np.exp(-(a - lo) / gamma) + np.exp(-(b - lo) / gamma) + np.exp(-(c - lo) / gamma)
    return lo - gamma * np.log(s)


@numba.njit(cache=True)
def _soft_table(d, gamma):
    n, m = d.shape
    r = np.full((n + 2, m + 2), np.inf)
    r[0, 0] = 0.0
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            r[i, j] = d[i - 1, j - 1] + _softmin3(r[i - 1, j - 1], r[i - 1, j], r[i, j - 1], gamma)
    return r


@numba.njit(cache=True)
def _soft_alignment(d, r, gamma):
    """Expected alignment matrix E = dR(n,m)/dd (backward recursion)."""
    n, m = d.shape
    dp = np.zeros((n + 2, m + 2))
    dp[1:n + 1, 1:m + 1] = d
    r = r.copy()
    e = np.zeros((n + 2, m + 2))
    for i in range(1, n + 1):
        r[i, m + 1] = -np.inf
    for j in range(1, m + 1):
        r[n + 1, j] = -np.inf
    r[n + 1, m + 1] = r[n, m]
    e[n + 1, m + 1] = 1.0
    for j in range(m, 0, -1):
        for i in range(n, 0, -1):
            a = np.exp((r[i + 1, j] - r[i, j] - dp[i + 1, j]) / gamma)
            b = np.exp((r[i, j + 1] - r[i, j] - dp[i, j + 1]) / gamma)
            c = np.exp((r[i + 1, j + 1] - r[i, j] - dp[i + 1, j + 1]) / gamma)
            e[i, j] = e[i + 1, j] * a + e[i, j + 1] * b + e[i + 1, j + 1] * c
    return e[1:n + 1, 1:m + 1]


def _check_gamma(gamma):
    if not gamma > 0:
        raise ValueError("soft-DTW smoothing gamma must be > 0")


def soft_dtw(x, y, gamma=1.0):
    """Soft-DTW value: the DTW recursion with min replaced by a soft-min."""
    _check_gamma(gamma)
    return float(_soft_table(cost_matrix(x, y), float(gamma))[-2, -2])


def soft_dtw_grad(x, y, gamma=1.0):
    """Soft-DTW value and its gradient with respect to ``x`` (shape of ``x``)."""
    _check_gamma(gamma)
    xs, ys = _as_series(x), _as_series(y)
    d = cost_matrix(xs, ys)
    r = _soft_table(d, float(gamma))
    e = _soft_alignment(d, r, float(gamma))
    diff = xs[:, None, :] - ys[None, :, :]
    with np.errstate(invalid="ignore", divide="ignore"):
        unit = np.where(d[..., None] > 0, diff / d[..., None], 0.0)
    g = np.einsum("ij,ijk->ik", e, unit)
    return float(r[-2, -2]), g.reshape(np.shape(x))


def soft_dtw_divergence(x, y, gamma=1.0):
    """``sdtw(x, y) - (sdtw(x, x) + sdtw(y, y)) / 2`` and its gradient in ``x``.

    The divergence is zero with zero gradient when ``x == y``, which plain
    soft-DTW is not.
    """
    v_xy, g_xy = soft_dtw_grad(x, y, gamma)
    v_xx, g_xx = soft_dtw_grad(x, x, gamma)
    v_yy = soft_dtw(y, y, gamma)
    return v_xy - 0.5 * (v_xx + v_yy), g_xy - g_xx
