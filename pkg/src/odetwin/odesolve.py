"""Fixed-step explicit integrators (Euler, classical RK4) and their adjoints.

A *field* is any callable ``field(h, t) -> dh/dt`` where ``h`` is an array
(a single state vector or a batch of them stacked along axis 0).  Fields that
are used for training also provide ``field.vjp(h, t, cotangent)`` returning
``(h_bar, theta_bar)`` where ``theta_bar`` is a flat parameter gradient.
"""

from dataclasses import dataclass

import numpy as np

from .trajectory import Trajectory

METHODS = ("euler", "rk4")


class SolverBlowUp(FloatingPointError):
    """Raised when an integration produces a non-finite state."""

    def __init__(self, time, message="non-finite state"):
        super().__init__(f"{message} at t={time:.6g}")
        self.time = time


@dataclass(frozen=True)
class SolverSpec:
    method: str = "rk4"
    substeps: int = 1

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if int(self.substeps) != self.substeps or self.substeps < 1:
            raise ValueError("substeps must be an integer >= 1")


@dataclass(frozen=True)
class OdeProblem:
    field: object
    h0: np.ndarray
    time_grid: np.ndarray

    def __post_init__(self):
        grid = np.asarray(self.time_grid, dtype=float)
        if grid.ndim != 1 or len(grid) < 2:
            raise ValueError("time grid needs at least two points")
        if not np.all(np.diff(grid) > 0):
            raise ValueError("time grid must be strictly increasing")
        object.__setattr__(self, "time_grid", grid)
        object.__setattr__(self, "h0", np.asarray(self.h0, dtype=float))


def _check_finite(h, t):
    if not np.all(np.isfinite(h)):
        raise SolverBlowUp(t)
    return h


def step_euler(field, h, t, dt):
    if not dt > 0:
        raise ValueError("dt must be positive")
    return _check_finite(h + dt * field(h, t), t + dt)


def step_rk4(field, h, t, dt):
    if not dt > 0:
        raise ValueError("dt must be positive")
    k1 = field(h, t)
    k2 = field(h + 0.5 * dt * k1, t + 0.5 * dt)
    k3 = field(h + 0.5 * dt * k2, t + 0.5 * dt)
    k4 = field(h + dt * k3, t + dt)
    return _check_finite(h + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4), t + dt)


STEPPERS = {"euler": step_euler, "rk4": step_rk4}


def integrate(field, h0, grid, spec=SolverSpec(), perturb=None):
    """Integrate over ``grid`` and return the states at every grid time.

    Output shape is ``(len(grid),) + h0.shape``; row 0 is ``h0`` itself.
    ``perturb``, if given, is an array of that same shape whose row ``k`` is
    added to the state right after grid point ``k`` is reached (row 0 is
    ignored).  Training uses it to inject state noise.
    """
    step = STEPPERS[spec.method]
    grid = np.asarray(grid, dtype=float)
    h = np.array(h0, dtype=float)
    out = np.empty((len(grid),) + h.shape)
    out[0] = h
    n = spec.substeps
    for k in range(len(grid) - 1):
        t0 = grid[k]
        dt = (grid[k + 1] - t0) / n
        for s in range(n):
            h = step(field, h, t0 + s * dt, dt)
        if perturb is not None:
            h = h + perturb[k + 1]
        out[k + 1] = h
    return out


def ode_solve(problem, spec=SolverSpec(), labels=()):
    """Solve an initial-value problem and return a :class:`Trajectory`."""
    states = integrate(problem.field, problem.h0, problem.time_grid, spec)
    return Trajectory(problem.time_grid, states.reshape(len(states), -1), labels)


# -- discrete adjoints --------------------------------------------------------
#
# The backward step is the exact transpose of the forward step's linearisation.
# For an explicit Runge-Kutta scheme this is itself a Runge-Kutta integration of
# the adjoint equation da/dt = -a^T df/dh (and of dL/dtheta = -int a^T df/dtheta)
# backwards in time with the same tableau, evaluated at the forward stages.


def vjp_euler(field, h, t, dt, a):
    h_bar, th_bar = field.vjp(h, t, dt * a)
    return a + h_bar, th_bar


def vjp_rk4(field, h, t, dt, a):
    half = 0.5 * dt
    if hasattr(field, "linearize"):
        lin = field.linearize
    else:
        def lin(x, tt):
            return field(x, tt), lambda c: field.vjp(x, tt, c)
    k1, pb1 = lin(h, t)
    k2, pb2 = lin(h + half * k1, t + half)
    k3, pb3 = lin(h + half * k2, t + half)
    _, pb4 = lin(h + dt * k3, t + dt)

    kb = dt / 6.0 * a
    sb, th_bar = pb4(kb)
    h_bar = a + sb
    sb, g = pb3(2.0 * kb + dt * sb)
    th_bar += g
    h_bar += sb
    sb, g = pb2(2.0 * kb + half * sb)
    th_bar += g
    h_bar += sb
    sb, g = pb1(kb + half * sb)
    th_bar += g
    h_bar += sb
    return h_bar, th_bar


VJP_STEPPERS = {"euler": vjp_euler, "rk4": vjp_rk4}


def integrate_adjoint(field, states, grid, spec, state_cotangents, n_params):
    """Backward pass over a stored forward solution.

    ``states`` are the forward states at the grid points (checkpoints); the
    states inside each grid interval are recomputed from the checkpoint.
    ``state_cotangents[k]`` is dL/dh(t_k) from the loss and is added to the
    adjoint as a jump when the backward sweep reaches t_k.  Returns
    ``(a0, theta_grad)`` with ``a0 = dL/dh(t_0)``.
    """
    step = STEPPERS[spec.method]
    vjp = VJP_STEPPERS[spec.method]
    n = spec.substeps
    a = np.array(state_cotangents[-1], dtype=float)
    theta = np.zeros(n_params)
    for k in range(len(grid) - 2, -1, -1):
        t0 = grid[k]
        dt = (grid[k + 1] - t0) / n
        inner = [states[k]]
        for s in range(n - 1):
            inner.append(step(field, inner[-1], t0 + s * dt, dt))
        for s in range(n - 1, -1, -1):
            a, g = vjp(field, inner[s], t0 + s * dt, dt, a)
            theta += g
        if not np.all(np.isfinite(a)):
            raise SolverBlowUp(t0, "non-finite adjoint")
        a = a + state_cotangents[k]
    return a, theta
