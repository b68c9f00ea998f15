"""Behavioural emulation of the analogue memristor neural-ODE solver.

Each signed weight is stored as a differential pair of conductances
``(g_plus, g_minus)`` in ``[g_min, g_max]``.  A layer's bias is stored as one
extra column driven by a constant 1 V input.  Non-idealities modelled:

* quantisation to ``levels`` evenly spaced conductances,
* multiplicative programming error ``g * (1 + N(0, prog_noise_rel_std))``,
* stuck devices (probability ``1 - yield_fraction``), frozen at a uniform
  random conductance,
* multiplicative read noise, drawn afresh for every device on every read,
* a clamp on the hidden-layer ReLU outputs.

The IVP integrator is the ODE solve itself: pre-charging sets the initial
state, current integration advances it with RK4.
"""

from dataclasses import asdict, dataclass, field, replace
import json
import math

import numpy as np

from .nn import MlpParams
from .odesolve import SolverSpec, integrate
from .rng import substream, subseed
from .trajectory import Trajectory


@dataclass(frozen=True)
class HardwareSpec:
    """Device and circuit parameters.

    ``levels=None`` disables quantisation; ``clamp_limit=None`` disables the
    activation clamp.
    """

    g_min: float = 20e-6
    g_max: float = 100e-6
    levels: int = 64
    prog_noise_rel_std: float = 0.0436
    read_noise_rel_std: float = 0.0
    yield_fraction: float = 0.972
    clamp_limit: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.g_min < self.g_max:
            raise ValueError("need 0 < g_min < g_max")
        if self.levels is not None and self.levels < 2:
            raise ValueError("levels must be >= 2")
        if self.prog_noise_rel_std < 0 or self.read_noise_rel_std < 0:
            raise ValueError("noise levels must be >= 0")
        if not 0 < self.yield_fraction <= 1:
            raise ValueError("yield_fraction must lie in (0, 1]")
        if self.clamp_limit is not None and not self.clamp_limit > 0:
            raise ValueError("clamp_limit must be > 0")

    @property
    def g_mid(self):
        return 0.5 * (self.g_min + self.g_max)

    @property
    def level_step(self):
        return None if self.levels is None else (self.g_max - self.g_min) / (self.levels - 1)

    def ideal(self):
        """The same spec with every non-ideality switched off."""
        return replace(self, levels=None, prog_noise_rel_std=0.0, read_noise_rel_std=0.0,
                       yield_fraction=1.0, clamp_limit=None)


@dataclass(frozen=True)
class HwInferenceSpec:
    substeps: int = 1
    initial_state: tuple = None

    def __post_init__(self):
        if self.substeps < 1:
            raise ValueError("substeps must be >= 1")


def quantize_conductance(g, spec):
    """Snap to the nearest of ``spec.levels`` evenly spaced conductances.

    Exact ties go to the lower level.  Inputs outside the window raise.
    """
    g = np.asarray(g, dtype=float)
    span = spec.g_max - spec.g_min
    tol = 1e-9 * span
    if np.any(g < spec.g_min - tol) or np.any(g > spec.g_max + tol):
        raise ValueError("conductance outside [g_min, g_max]")
    if spec.levels is None:
        return np.clip(g, spec.g_min, spec.g_max)
    step = spec.level_step
    k = np.ceil((g - spec.g_min) / step - 0.5)
    k = np.clip(k, 0, spec.levels - 1)
    out = spec.g_min + k * step
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class CrossbarLayer:
    g_plus: np.ndarray
    g_minus: np.ndarray
    stuck_plus: np.ndarray
    stuck_minus: np.ndarray
    scale: float

    @property
    def shape(self):
        return self.g_plus.shape

    def decoded_weights(self):
        """Signed ``[W | b]`` recovered from the conductance difference."""
        return (self.g_plus - self.g_minus) / self.scale


@dataclass(frozen=True)
class CrossbarProgram:
    layers: tuple
    spec: HardwareSpec

    @property
    def net_shape(self):
        return [self.layers[0].shape[1] - 1] + [l.shape[0] for l in self.layers]

    def decoded_params(self):
        ws, bs = [], []
        for layer in self.layers:
            wb = layer.decoded_weights()
            ws.append(wb[:, :-1])
            bs.append(wb[:, -1])
        return MlpParams(tuple(ws), tuple(bs))

    def to_dict(self):
        return {
            "format_version": 1,
            "units": "siemens",
            "spec": asdict(self.spec),
            "layers": [
                {
                    "g_plus": l.g_plus.tolist(),
                    "g_minus": l.g_minus.tolist(),
                    "stuck_plus": l.stuck_plus.astype(int).tolist(),
                    "stuck_minus": l.stuck_minus.astype(int).tolist(),
                    "scale": l.scale,
                }
                for l in self.layers
            ],
        }

    @classmethod
    def from_dict(cls, doc):
        layers = tuple(
            CrossbarLayer(
                np.asarray(l["g_plus"], dtype=float),
                np.asarray(l["g_minus"], dtype=float),
                np.asarray(l["stuck_plus"], dtype=bool),
                np.asarray(l["stuck_minus"], dtype=bool),
                float(l["scale"]),
            )
            for l in doc["layers"]
        )
        return cls(layers, HardwareSpec(**doc["spec"]))

    def save(self, path):
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(self.to_dict(), fh)
            fh.write("\n")

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def _program_devices(target, spec, rng_prog, rng_fault):
    g = quantize_conductance(np.clip(target, spec.g_min, spec.g_max), spec)
    if spec.prog_noise_rel_std > 0:
        g = g * (1.0 + spec.prog_noise_rel_std * rng_prog.standard_normal(g.shape))
        g = np.clip(g, spec.g_min, spec.g_max)
    stuck = np.zeros(g.shape, dtype=bool)
    if spec.yield_fraction < 1:
        stuck = rng_fault.random(g.shape) >= spec.yield_fraction
        frozen = rng_fault.uniform(spec.g_min, spec.g_max, size=g.shape)
        g = np.where(stuck, frozen, g)
    return g, stuck


def map_weights(params, spec):
    """Program a network onto differential pairs, one crossbar per layer.

    Per layer the scale is ``(g_max - g_min) / max|[W | b]|`` so the largest
    magnitude weight spans the full window.  Random draws come from substreams
    of ``spec.seed`` named by purpose and layer.
    """
    layers = []
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        wb = np.concatenate([w, b[:, None]], axis=1)
        if not np.all(np.isfinite(wb)):
            raise ValueError(f"layer {i} has non-finite weights")
        scale = (spec.g_max - spec.g_min) / max(float(np.max(np.abs(wb))), 1e-12)
        half = 0.5 * scale * wb
        rngs = [substream(spec.seed, "program", i, side) for side in ("plus", "minus")]
        frngs = [substream(spec.seed, "fault", i, side) for side in ("plus", "minus")]
        gp, sp = _program_devices(spec.g_mid + half, spec, rngs[0], frngs[0])
        gm, sm = _program_devices(spec.g_mid - half, spec, rngs[1], frngs[1])
        layers.append(CrossbarLayer(gp, gm, sp, sm, scale))
    return CrossbarProgram(tuple(layers), spec)


def crossbar_currents(layer, v, spec, rng=None):
    """Column currents (amperes) for input voltages ``v`` (vector or rows).

    With read noise on, every device of every input row gets its own draw.
    """
    v = np.asarray(v, dtype=float)
    if v.shape[-1] != layer.shape[1] - 1:
        raise ValueError(f"input length {v.shape[-1]} != crossbar inputs {layer.shape[1] - 1}")
    vb = np.concatenate([v, np.ones(v.shape[:-1] + (1,))], axis=-1)
    sigma = spec.read_noise_rel_std
    if sigma == 0 or rng is None:
        return vb @ (layer.g_plus - layer.g_minus).T
    shape = v.shape[:-1] + layer.shape
    gp = layer.g_plus * (1.0 + sigma * rng.standard_normal(shape))
    gm = layer.g_minus * (1.0 + sigma * rng.standard_normal(shape))
    return np.einsum("...oi,...i->...o", gp - gm, vb)


def crossbar_matvec(layer, v, spec, rng=None):
    """Layer pre-activations: column currents divided by the layer scale."""
    return crossbar_currents(layer, v, spec, rng) / layer.scale


def clamped_relu(x, clamp_limit):
    if clamp_limit is None:
        return np.maximum(x, 0.0)
    if not clamp_limit > 0:
        raise ValueError("clamp_limit must be > 0")
    return np.minimum(np.maximum(x, 0.0), clamp_limit)


def calibrate_clamp(params, inputs, margin=1.25):
    """Clamp limit covering every hidden activation seen on ``inputs``.

    ``inputs`` are network inputs (rows); the limit is ``margin`` times the
    largest hidden-layer activation, so the clamp only acts on excursions
    beyond the training range.
    """
    x = np.asarray(inputs, dtype=float)
    peak = 0.0
    for w, b in zip(params.weights[:-1], params.biases[:-1]):
        x = np.maximum(x @ w.T + b, 0.0)
        peak = max(peak, float(np.max(x)))
    return margin * peak if peak > 0 else 1.0


class HardwareField:
    """The network vector field evaluated through the crossbars.

    Tracks how often a hidden activation hits the clamp.
    """

    def __init__(self, program, drive=None, rng=None):
        self.program = program
        self.spec = program.spec
        self.drive = drive
        self.rng = rng
        self.n_drive = program.net_shape[0] - program.net_shape[-1]
        self.clamped = 0
        self.activations = 0

    def __call__(self, h, t):
        x = h
        if self.drive is not None:
            u = np.atleast_1d(np.asarray(self.drive(t), dtype=float))
            if h.ndim == 2:
                u = np.broadcast_to(u, (h.shape[0], u.size))
            x = np.concatenate([u, h], axis=-1)
        last = len(self.program.layers) - 1
        for i, layer in enumerate(self.program.layers):
            x = crossbar_matvec(layer, x, self.spec, self.rng)
            if i < last:
                if self.spec.clamp_limit is not None:
                    self.clamped += int(np.count_nonzero(x > self.spec.clamp_limit))
                    self.activations += x.size
                x = clamped_relu(x, self.spec.clamp_limit)
        return x

    @property
    def saturation_fraction(self):
        return self.clamped / self.activations if self.activations else 0.0


def hw_infer(program, inf_spec, time_grid, drive=None, rng_name="read"):
    """Closed-loop inference of the programmed twin over ``time_grid``.

    ``inf_spec.initial_state`` is the pre-charge value (a vector, or rows for
    several independent integrators run side by side).  Returns a Trajectory
    for a single initial state, otherwise the raw state array
    ``(len(grid), B, d)``; both carry the clamp saturation fraction.
    """
    if inf_spec.initial_state is None:
        raise ValueError("an initial (pre-charge) state is required")
    h0 = np.asarray(inf_spec.initial_state, dtype=float)
    if h0.shape[-1] != program.net_shape[-1]:
        raise ValueError("initial state does not match the network output width")
    rng = substream(program.spec.seed, rng_name)
    fld = HardwareField(program, drive, rng)
    states = integrate(fld, h0, time_grid, SolverSpec("rk4", inf_spec.substeps))
    meta = {"clamp_saturation_fraction": fld.saturation_fraction}
    if h0.ndim == 1:
        return Trajectory(time_grid, states, meta=meta)
    return states, meta


@dataclass
class NoiseSweepResult:
    read_levels: tuple
    prog_levels: tuple
    repeats: int
    mean: np.ndarray
    std: np.ndarray
    samples: dict = field(default_factory=dict)
    errors: dict = field(default_factory=dict)

    def rows(self):
        for i, r in enumerate(self.read_levels):
            for j, p in enumerate(self.prog_levels):
                yield r, p, self.mean[i, j], self.std[i, j], self.repeats

    def to_csv(self, path=None):
        lines = ["read_noise,prog_noise,mean,std,repeats"]
        lines += [f"{r:.17g},{p:.17g},{m:.17g},{s:.17g},{n}" for r, p, m, s, n in self.rows()]
        text = "\n".join(lines) + "\n"
        if path is not None:
            with open(path, "w", encoding="utf-8", newline="\n") as fh:
                fh.write(text)
        return text


def _sweep_cell(args):
    params, spec, evaluate = args
    return evaluate(map_weights(params, spec), spec)


def noise_sweep(params, base_spec, evaluate, read_levels=(0.0, 0.01, 0.02),
                prog_levels=(0.0, 0.02, 0.0436), repeats=10, seed=0, pool=None):
    """Mean and std of ``evaluate(program, spec)`` over a read x prog noise grid.

    Every (cell, repeat) is programmed afresh from its own sub-seed keyed by
    the cell's noise levels and the repeat index, so results do not depend on
    evaluation order.  ``pool`` may be an executor with a ``map`` method.
    Failures are recorded per cell instead of aborting the sweep.
    """
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    jobs, keys = [], []
    for r in read_levels:
        for p in prog_levels:
            for k in range(repeats):
                s = replace(base_spec, read_noise_rel_std=r, prog_noise_rel_std=p,
                            seed=subseed(seed, "sweep", repr(r), repr(p), k))
                jobs.append((params, s, evaluate))
                keys.append((r, p, k))
    mapper = pool.map if pool is not None else map
    results = {}
    errors = {}
    for key, job in zip(keys, jobs):
        results[key] = None
    outs = list(mapper(_safe_cell, jobs))
    for key, (value, err) in zip(keys, outs):
        if err is None:
            results[key] = value
        else:
            errors.setdefault(key[:2], []).append(err)
    mean = np.full((len(read_levels), len(prog_levels)), np.nan)
    std = np.full_like(mean, np.nan)
    samples = {}
    for i, r in enumerate(read_levels):
        for j, p in enumerate(prog_levels):
            vals = sorted(results[(r, p, k)] for k in range(repeats) if results[(r, p, k)] is not None)
            samples[(r, p)] = vals
            if vals:
                mean[i, j] = math.fsum(vals) / len(vals)
                std[i, j] = math.sqrt(math.fsum((v - mean[i, j]) ** 2 for v in vals) / len(vals))
    return NoiseSweepResult(tuple(read_levels), tuple(prog_levels), repeats, mean, std, samples, errors)


def _safe_cell(job):
    try:
        return float(_sweep_cell(job)), None
    except (FloatingPointError, ValueError) as exc:
        return None, str(exc)
