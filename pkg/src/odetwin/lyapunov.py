"""Maximal Lyapunov exponent estimates for 1-D maps and for flows."""

from dataclasses import dataclass
import math

import numpy as np


@dataclass(frozen=True)
class MleEstimate:
    lam: float
    lyapunov_time: float
    sample_count: int


def _estimate(lam, n):
    return MleEstimate(float(lam), 1.0 / lam if lam > 0 else math.inf, int(n))


def mle_estimate(f, dfdx, x0, n_steps):
    """Orbit average of ``ln|f'(x_i)|`` for a one-dimensional map.

    Units are per iteration.  Non-positive exponents give an infinite
    Lyapunov time.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    x, total = float(x0), 0.0
    for _ in range(n_steps):
        total += math.log(abs(dfdx(x)))
        x = f(x)
    return _estimate(total / n_steps, n_steps)


def mle_flow(field, jacobian, x0, dt, n_steps, transient=0, seed=0):
    """Largest exponent of ``dx/dt = field(x, t)`` by tangent renormalisation.

    The state and one tangent vector are advanced together with RK4 (the
    tangent under the linearised flow ``J(x) v``); the tangent is rescaled to
    unit length every step and the log stretch factors are averaged.  The first
    ``transient`` steps move the state onto the attractor and align the
    tangent without being counted.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    rng = np.random.default_rng(seed)
    x = np.array(x0, dtype=float)
    v = rng.standard_normal(x.shape)
    v /= np.linalg.norm(v)

    def g(x, v, t):
        return field(x, t), jacobian(x, t) @ v

    t, total = 0.0, 0.0
    for k in range(transient + n_steps):
        a1, b1 = g(x, v, t)
        a2, b2 = g(x + 0.5 * dt * a1, v + 0.5 * dt * b1, t + 0.5 * dt)
        a3, b3 = g(x + 0.5 * dt * a2, v + 0.5 * dt * b2, t + 0.5 * dt)
        a4, b4 = g(x + dt * a3, v + dt * b3, t + dt)
        x = x + dt / 6 * (a1 + 2 * a2 + 2 * a3 + a4)
        v = v + dt / 6 * (b1 + 2 * b2 + 2 * b3 + b4)
        t += dt
        norm = np.linalg.norm(v)
        if not np.isfinite(norm) or norm == 0:
            raise FloatingPointError(f"tangent vector degenerated at t={t:.6g}")
        v /= norm
        if k >= transient:
            total += math.log(norm)
    return _estimate(total / (n_steps * dt), n_steps)


def error_growth(pred, truth, dt, lyapunov_time, horizons=range(1, 8)):
    """Mean absolute error at whole multiples of the Lyapunov time.

    Returns ``[(multiple, time, l1), ...]`` for each multiple that fits in the
    series.
    """
    pred, truth = np.asarray(pred), np.asarray(truth)
    curve = []
    for m in horizons:
        k = int(round(m * lyapunov_time / dt))
        if k >= len(truth):
            break
        curve.append((int(m), k * dt, float(np.mean(np.abs(pred[k] - truth[k])))))
    return curve
