"""Ground-truth systems: the HP memristor and Lorenz96, plus drive waveforms.

The HP memristor state is the normalised boundary position ``u = w / D``.
Its resistance is ``r_on * u + r_off * (1 - u)`` and the boundary drifts as
``du/dt = mu_v * r_on / D**2 * i``.  The state is hard-clamped to [0, 1]: at a
boundary, a derivative pointing outward is zeroed.
"""

from dataclasses import dataclass, field

import numpy as np

from .odesolve import SolverBlowUp, step_rk4
from .trajectory import Trajectory

# Initial condition used for the six-variable Lorenz96 reference.
LORENZ96_X0 = (-1.2061, 0.0617, 1.1632, -1.5008, -1.5944, -0.0187)

WAVEFORM_KINDS = ("sine", "triangular", "rectangular", "modulated-sine")


@dataclass(frozen=True)
class HpParams:
    r_on: float = 100.0
    r_off: float = 16e3
    depth_d: float = 10e-9
    mobility_mu_v: float = 1e-14

    def __post_init__(self):
        if not self.r_on > 0:
            raise ValueError("r_on must be positive")
        if not self.r_off > self.r_on:
            raise ValueError("r_off must exceed r_on")
        if not self.depth_d > 0 or not self.mobility_mu_v > 0:
            raise ValueError("depth_d and mobility_mu_v must be positive")

    @property
    def drift_gain(self):
        """mu_v * r_on / D**2, in 1/(s*A)."""
        return self.mobility_mu_v * self.r_on / self.depth_d**2


@dataclass(frozen=True)
class Lorenz96Params:
    n: int = 6
    forcing_f: float = 8.0

    def __post_init__(self):
        if int(self.n) != self.n or self.n <= 3:
            raise ValueError("Lorenz96 needs an integer dimension n > 3")


@dataclass(frozen=True)
class Waveform:
    """Periodic drive voltage.

    ``modulated-sine`` is ``amplitude * (1 - envelope_depth * sin(2 pi
    envelope_frequency t)) * sin(2 pi frequency t + phase)``.
    """

    kind: str = "sine"
    amplitude: float = 3.0
    frequency: float = 2.0
    phase: float = 0.0
    envelope_frequency: float = 0.5
    envelope_depth: float = 0.5

    def __post_init__(self):
        if self.kind not in WAVEFORM_KINDS:
            raise ValueError(f"unknown waveform kind {self.kind!r}")
        if self.amplitude < 0:
            raise ValueError("amplitude must be >= 0")
        if not self.frequency > 0:
            raise ValueError("frequency must be > 0")

    def __call__(self, t):
        return waveform_eval(self, t)


def waveform_eval(w, t):
    """Drive voltage at time ``t`` (scalar or array)."""
    t = np.asarray(t, dtype=float)
    arg = w.frequency * t + w.phase / (2 * np.pi)
    if w.kind == "sine":
        v = np.sin(2 * np.pi * arg)
    elif w.kind == "modulated-sine":
        env = 1.0 - w.envelope_depth * np.sin(2 * np.pi * w.envelope_frequency * t)
        v = env * np.sin(2 * np.pi * arg)
    else:
        # Work on the fractional cycle so the shapes are exact at their corners.
        frac = np.mod(arg, 1.0)
        if w.kind == "rectangular":
            v = np.where(frac < 0.5, 1.0, -1.0)
        else:
            v = np.where(frac < 0.25, 4 * frac, np.where(frac < 0.75, 2 - 4 * frac, 4 * frac - 4))
    v = w.amplitude * v
    return float(v) if v.ndim == 0 else v


def _check_u(u):
    if not 0.0 <= u <= 1.0:
        raise ValueError(f"HP state u={u!r} outside [0, 1]")


def hp_current(p, u, v):
    _check_u(u)
    return v / (p.r_on * u + p.r_off * (1.0 - u))


def hp_state_deriv(p, u, v):
    _check_u(u)
    du = p.drift_gain * hp_current(p, u, v)
    if (u >= 1.0 and du > 0) or (u <= 0.0 and du < 0):
        return 0.0
    return du


class HpField:
    """du/dt of the HP memristor as an ODE field, driven by ``drive(t)``.

    Intermediate Runge-Kutta stages may overshoot [0, 1]; they are evaluated
    at the clamped position.
    """

    def __init__(self, params, drive):
        self.params = params
        self.drive = drive

    def __call__(self, h, t):
        u = min(max(float(h[0]), 0.0), 1.0)
        return np.array([hp_state_deriv(self.params, u, float(self.drive(t)))])


def lorenz96_deriv(p, x):
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != p.n:
        raise ValueError(f"state length {x.shape[-1]} != n={p.n}")
    return (np.roll(x, -1, axis=-1) - np.roll(x, 2, axis=-1)) * np.roll(x, 1, axis=-1) - x + p.forcing_f


def lorenz96_jacobian(p, x):
    """Analytic Jacobian d(dx/dt)/dx for a single state vector."""
    n = p.n
    j = -np.eye(n)
    for i in range(n):
        ip1, im1, im2 = (i + 1) % n, (i - 1) % n, (i - 2) % n
        j[i, ip1] += x[im1]
        j[i, im2] -= x[im1]
        j[i, im1] += x[ip1] - x[im2]
    return j


class Lorenz96Field:
    def __init__(self, params):
        self.params = params

    def __call__(self, h, t):
        return lorenz96_deriv(self.params, h)

    def jacobian(self, h, t=0.0):
        return lorenz96_jacobian(self.params, h)


@dataclass(frozen=True)
class ReferenceConfig:
    """Sampling recipe for a ground-truth trajectory.

    ``refine`` is the number of internal RK4 steps per output interval.
    """

    n_points: int
    dt: float
    x0: tuple
    refine: int = 4
    drive: Waveform = field(default_factory=Waveform)

    def __post_init__(self):
        if self.n_points < 2 or not self.dt > 0 or self.refine < 1:
            raise ValueError("need n_points >= 2, dt > 0 and refine >= 1")


def default_reference_config(system):
    if isinstance(system, HpParams):
        return ReferenceConfig(n_points=501, dt=1e-3, x0=(0.1,))
    if system.n == 6:
        x0 = LORENZ96_X0
    else:
        # Off the fixed point F*1 by a small kick on the first variable.
        x0 = (system.forcing_f + 0.01,) + (system.forcing_f,) * (system.n - 1)
    return ReferenceConfig(n_points=2400, dt=0.02, x0=x0)


def generate_reference(system, config=None):
    """Integrate an oracle with RK4 and sample it on a uniform grid from t=0."""
    config = config or default_reference_config(system)
    if isinstance(system, HpParams):
        fld = HpField(system, config.drive)
        labels = ("u",)
        clamp = True
    elif isinstance(system, Lorenz96Params):
        fld = Lorenz96Field(system)
        labels = tuple(f"x{i + 1}" for i in range(system.n))
        clamp = False
    else:
        raise TypeError(f"unsupported system {type(system).__name__}")
    x = np.array(config.x0, dtype=float)
    if x.shape != (len(labels),):
        raise ValueError(f"initial state has {x.size} entries, system needs {len(labels)}")
    times = np.arange(config.n_points) * config.dt
    out = np.empty((config.n_points, len(labels)))
    out[0] = x
    h = config.dt / config.refine
    for k in range(1, config.n_points):
        t0 = times[k - 1]
        for s in range(config.refine):
            x = step_rk4(fld, x, t0 + s * h, h)
            if clamp:
                x = np.clip(x, 0.0, 1.0)
        if not np.all(np.isfinite(x)):
            raise SolverBlowUp(times[k])
        out[k] = x
    return Trajectory(times, out, labels)
