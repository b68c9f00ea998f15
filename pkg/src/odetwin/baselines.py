"""Discrete-time comparison models.

* Recurrent ResNet ``h[k+1] = h[k] + f([u[k]; h[k]])``: an Euler step with
  unit step length in index time, so it is trained with the same adjoint code
  as the twin (the Euler discrete adjoint *is* backpropagation through time).
* Elman RNN, GRU and LSTM cells driving an autoregressive state forecast
  ``x[k+1] = x[k] + W_out h[k+1] + b_out`` with ``h[k+1] = cell(x[k], h[k])``.
  Gradients come from hand-written full BPTT.
"""

from dataclasses import dataclass, replace
import json
import time

import numpy as np

from .nn import FORMAT_VERSION, MlpField, MlpParams, init_params, mlp_forward
from .odesolve import SolverBlowUp, SolverSpec, integrate
from .rng import subseed
from .trajectory import Trajectory
from .training import (TrainReport, fit, loss_and_cotangent, make_windows,
                       noise_perturbation, optimise)

CELL_KINDS = ("rnn", "gru", "lstm")
GATES = {"rnn": 1, "gru": 3, "lstm": 4}


# -- recurrent ResNet ----------------------------------------------------------


@dataclass(frozen=True)
class RecurrentResNet:
    params: MlpParams

    @property
    def state_dim(self):
        return self.params.shape[-1]


def resnet_step(params, h, u=None):
    """``h + f([u; h])``; ``u`` is the external input (omit for autonomous)."""
    h = np.asarray(h, dtype=float)
    x = h if u is None else np.concatenate([np.atleast_1d(np.asarray(u, dtype=float)), h], axis=-1)
    out = mlp_forward(params, x)
    if out.shape != h.shape:
        raise ValueError(f"step output {out.shape} does not match state {h.shape}")
    return h + out


class IndexDrive:
    """Drive sampled on the observation grid and addressed by step index."""

    def __init__(self, drive, times):
        self.drive = drive
        self.times = np.asarray(times, dtype=float)

    def __call__(self, k):
        return self.drive(self.times[int(round(k))])


def _check_rollout(x, k):
    if not np.all(np.isfinite(x)):
        raise SolverBlowUp(float(k), "non-finite rollout state")


def rollout(model, h0, inputs=None, n_steps=None, times=None):
    """Iterate a discrete model and return the states as a Trajectory.

    ``inputs[k]`` is the external input at step ``k`` (ResNet only).  Row 0
    is ``h0``; ``times`` (length ``n_steps + 1``) maps indices onto the
    reference grid and defaults to the indices themselves.
    """
    if n_steps is None:
        n_steps = len(inputs) - 1 if inputs is not None else None
    if n_steps is None or n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    h0 = np.asarray(h0, dtype=float)
    out = np.empty((n_steps + 1,) + h0.shape)
    out[0] = h0
    if isinstance(model, RecurrentResNet):
        h = h0
        for k in range(n_steps):
            h = resnet_step(model.params, h, None if inputs is None else inputs[k])
            _check_rollout(h, k + 1)
            out[k + 1] = h
    else:
        out = cell_rollout(model, h0, n_steps)
    times = np.arange(n_steps + 1, dtype=float) if times is None else np.asarray(times, dtype=float)
    return Trajectory(times, out.reshape(n_steps + 1, -1))


def zero_output_layer(params):
    ws, bs = list(params.weights), list(params.biases)
    ws[-1] = np.zeros_like(ws[-1])
    bs[-1] = np.zeros_like(bs[-1])
    return MlpParams(tuple(ws), tuple(bs))


def train_resnet_hp(reference, drive, config, shape=(2, 14, 14, 1), log=None):
    """Fit a recurrent ResNet to the HP reference with full BPTT.

    The drive at step ``k`` is sampled at the ``k``-th reference time.  The
    output layer starts at zero so the untrained model is the identity map; a
    Glorot-initialised residual overflows within a few hundred steps.
    """
    params0 = zero_output_layer(init_params(shape, subseed(config.seed, "init")))
    index_drive = IndexDrive(drive, reference.times)
    grid = np.arange(len(reference.times), dtype=float)
    cfg = replace(config, solver=SolverSpec("euler", 1))
    report = fit(lambda p: MlpField(p, index_drive), params0, grid, reference.states, cfg, log)
    report.extras["kind"] = "resnet"
    report.extras["n_params"] = params0.n_params
    return report


def resnet_predict(params, drive, times, h0):
    """Closed-loop ResNet prediction on ``times`` (one step per sample)."""
    fld = MlpField(params, IndexDrive(drive, times))
    grid = np.arange(len(times), dtype=float)
    return integrate(fld, np.asarray(h0, dtype=float), grid, SolverSpec("euler", 1))


# -- gated recurrent cells -----------------------------------------------------


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


@dataclass(frozen=True)
class RecurrentCellParams:
    kind: str
    w_x: np.ndarray
    w_h: np.ndarray
    b: np.ndarray
    w_out: np.ndarray
    b_out: np.ndarray

    def __post_init__(self):
        if self.kind not in CELL_KINDS:
            raise ValueError(f"unknown cell kind {self.kind!r}; expected one of {CELL_KINDS}")
        for name in ("w_x", "w_h", "b", "w_out", "b_out"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        g, hidden = GATES[self.kind], self.w_h.shape[1]
        if self.w_h.shape != (g * hidden, hidden) or self.w_x.shape[0] != g * hidden:
            raise ValueError("gate weights inconsistent with hidden size")
        if self.b.shape != (g * hidden,):
            raise ValueError("gate bias has the wrong length")
        if self.w_out.shape != (self.w_x.shape[1], hidden) or self.b_out.shape != (self.w_x.shape[1],):
            raise ValueError("readout must map hidden state back to the input width")

    @property
    def hidden(self):
        return self.w_h.shape[1]

    @property
    def dim(self):
        return self.w_x.shape[1]

    @property
    def n_params(self):
        return sum(a.size for a in (self.w_x, self.w_h, self.b, self.w_out, self.b_out))

    def to_vector(self):
        return np.concatenate([a.ravel() for a in (self.w_x, self.w_h, self.b, self.w_out, self.b_out)])

    @classmethod
    def from_vector(cls, kind, vec, dim, hidden):
        g = GATES[kind]
        sizes = [(g * hidden, dim), (g * hidden, hidden), (g * hidden,), (dim, hidden), (dim,)]
        parts, i = [], 0
        for s in sizes:
            n = int(np.prod(s))
            parts.append(vec[i:i + n].reshape(s))
            i += n
        if i != len(vec):
            raise ValueError("vector length does not fit the cell shape")
        return cls(kind, *parts)

    def to_dict(self):
        return {
            "format_version": FORMAT_VERSION,
            "cell_kind": self.kind,
            "hidden": self.hidden,
            "dim": self.dim,
            **{k: getattr(self, k).tolist() for k in ("w_x", "w_h", "b", "w_out", "b_out")},
        }

    @classmethod
    def from_dict(cls, doc):
        if doc.get("format_version") != FORMAT_VERSION:
            raise ValueError("unsupported params format_version")
        return cls(doc["cell_kind"], *(doc[k] for k in ("w_x", "w_h", "b", "w_out", "b_out")))

    def save(self, path):
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(self.to_dict(), fh, indent=1)
            fh.write("\n")


def init_cell(kind, dim, hidden, seed):
    """Uniform(+-1/sqrt(hidden)) gates, Glorot-uniform readout, zero biases."""
    if kind not in CELL_KINDS:
        raise ValueError(f"unknown cell kind {kind!r}")
    rng = np.random.default_rng(seed)
    g = GATES[kind]
    k = 1.0 / np.sqrt(hidden)
    lim = np.sqrt(6.0 / (dim + hidden))
    return RecurrentCellParams(
        kind,
        rng.uniform(-k, k, (g * hidden, dim)),
        rng.uniform(-k, k, (g * hidden, hidden)),
        np.zeros(g * hidden),
        rng.uniform(-lim, lim, (dim, hidden)),
        np.zeros(dim),
    )


def cell_step(p, x, h, c=None):
    """One cell update.  Returns ``(h_new, c_new, cache)``; ``c`` is LSTM-only."""
    a = x @ p.w_x.T + h @ p.w_h.T + p.b
    H = p.hidden
    if p.kind == "rnn":
        hn = np.tanh(a)
        return hn, None, (x, h, hn)
    if p.kind == "gru":
        ah_n = h @ p.w_h[2 * H:].T
        r = _sigmoid(a[..., :H])
        z = _sigmoid(a[..., H:2 * H])
        n = np.tanh(a[..., 2 * H:] - ah_n + r * ah_n)
        hn = (1.0 - z) * n + z * h
        return hn, None, (x, h, r, z, n, ah_n)
    i = _sigmoid(a[..., :H])
    f = _sigmoid(a[..., H:2 * H])
    g = np.tanh(a[..., 2 * H:3 * H])
    o = _sigmoid(a[..., 3 * H:])
    cn = f * c + i * g
    tc = np.tanh(cn)
    return o * tc, cn, (x, h, c, i, f, g, o, tc)


def _cell_backward(p, cache, dh, dc):
    """Pullback of :func:`cell_step`: returns ``(dx, dh_prev, dc_prev, da, dah)``.

    ``da`` is the gate pre-activation cotangent (input and bias side) and
    ``dah`` the cotangent entering ``w_h``.
    """
    if p.kind == "rnn":
        x, h, hn = cache
        da = dh * (1.0 - hn * hn)
        return da @ p.w_x, da @ p.w_h, None, da, da
    if p.kind == "gru":
        x, h, r, z, n, ah_n = cache
        dn = dh * (1.0 - z)
        dz = dh * (h - n)
        dan = dn * (1.0 - n * n)
        dar = dan * ah_n * r * (1.0 - r)
        daz = dz * z * (1.0 - z)
        da = np.concatenate([dar, daz, dan], axis=-1)
        dah = np.concatenate([dar, daz, dan * r], axis=-1)
        return da @ p.w_x, dah @ p.w_h + dh * z, None, da, dah
    x, h, c, i, f, g, o, tc = cache
    do = dh * tc
    dcn = dc + dh * o * (1.0 - tc * tc)
    da = np.concatenate([
        dcn * g * i * (1.0 - i),
        dcn * c * f * (1.0 - f),
        dcn * i * (1.0 - g * g),
        do * o * (1.0 - o),
    ], axis=-1)
    return da @ p.w_x, da @ p.w_h, dcn * f, da, da


def _cell_forward(p, x0, n_steps, perturb=None):
    x = np.array(x0, dtype=float)
    h = np.zeros(x.shape[:-1] + (p.hidden,))
    c = np.zeros_like(h) if p.kind == "lstm" else None
    xs, hs, caches = [x], [], []
    for k in range(n_steps):
        h, c, cache = cell_step(p, x, h, c)
        x = x + h @ p.w_out.T + p.b_out
        if perturb is not None:
            x = x + perturb[k + 1]
        _check_rollout(x, k + 1)
        xs.append(x)
        hs.append(h)
        caches.append(cache)
    return np.stack(xs), hs, caches


def cell_rollout(p, x0, n_steps):
    """Autoregressive forecast ``(n_steps + 1, ...)`` from ``x0`` with zero hidden state."""
    return _cell_forward(p, x0, n_steps)[0]


def cell_loss_grad(p, truth, loss_spec, perturb=None):
    """Loss and flat parameter gradient by full BPTT.

    ``truth`` is (N, d) or (N, B, d); the rollout starts at ``truth[0]``.
    """
    n = truth.shape[0] - 1
    xs, hs, caches = _cell_forward(p, truth[0], n, perturb)
    loss, cot = loss_and_cotangent(loss_spec, xs, truth)
    gx, gh, gb = np.zeros_like(p.w_x), np.zeros_like(p.w_h), np.zeros_like(p.b)
    gwo, gbo = np.zeros_like(p.w_out), np.zeros_like(p.b_out)
    ax = cot[n].copy()
    dh_next = np.zeros_like(hs[0])
    dc_next = np.zeros_like(hs[0]) if p.kind == "lstm" else None
    for k in range(n - 1, -1, -1):
        hk = hs[k]
        a2 = ax.reshape(-1, ax.shape[-1])
        gwo += a2.T @ hk.reshape(-1, hk.shape[-1])
        gbo += a2.sum(axis=0)
        dh = ax @ p.w_out + dh_next
        dx, dh_next, dc_next, da, dah = _cell_backward(p, caches[k], dh, dc_next)
        x_in, h_in = caches[k][0], caches[k][1]
        da2, dah2 = da.reshape(-1, da.shape[-1]), dah.reshape(-1, dah.shape[-1])
        gx += da2.T @ x_in.reshape(-1, x_in.shape[-1])
        gh += dah2.T @ h_in.reshape(-1, h_in.shape[-1])
        gb += da2.sum(axis=0)
        ax = ax + dx + cot[k]
    grad = np.concatenate([a.ravel() for a in (gx, gh, gb, gwo, gbo)])
    return loss, grad


def train_cell(kind, reference, config, hidden=64, n_train=1800, log=None):
    """Fit an RNN/GRU/LSTM forecaster on the first ``n_train`` points.

    Uses the same windows, loss, noise regulariser and Adam settings as the
    twin's ``config``.
    """
    dim = reference.dim
    p0 = init_cell(kind, dim, hidden, subseed(config.seed, "init", kind))
    train = reference.states[:n_train]
    truth = train if config.window is None else make_windows(train, config.window, config.stride)

    def objective(theta, epoch):
        p = RecurrentCellParams.from_vector(kind, theta, dim, hidden)
        return cell_loss_grad(p, truth, config.loss, noise_perturbation(config, epoch, truth))

    t_start = time.perf_counter()
    theta, curve, status = optimise(objective, p0.to_vector(), config, log)
    params = RecurrentCellParams.from_vector(kind, theta, dim, hidden)
    return TrainReport(
        loss_curve=curve,
        params=params,
        init_params=p0,
        seed=config.seed,
        config=config.to_dict(),
        status=status,
        wall_clock_s=time.perf_counter() - t_start,
        extras={"kind": kind, "hidden": hidden, "n_params": p0.n_params, "loss_points": int(n_train)},
    )


def cell_split_errors(p, reference, n_train, window):
    """Interpolation/extrapolation L1 with the twin's windowed protocol."""
    x = reference.states

    def forecast(start, stop):
        pred, s = [], start
        while s < stop - 1:
            n = min(window, stop - 1 - s)
            pred.append(cell_rollout(p, x[s], n)[1:])
            s += n
        return np.concatenate(pred)

    pi = forecast(0, n_train)
    pe = forecast(n_train - 1, len(x))
    return {
        "interp_l1": float(np.mean(np.abs(pi - x[1:n_train]))),
        "extrap_l1": float(np.mean(np.abs(pe - x[n_train:]))),
        "eval_window": int(window),
    }


def train_baseline(kind, task, reference, config, drive=None, hidden=64, n_train=1800, log=None):
    """Dispatch: ``resnet`` on the HP task, ``rnn|gru|lstm`` on Lorenz96."""
    if kind == "resnet":
        if task != "hp":
            raise ValueError("the recurrent ResNet baseline is defined for the hp task")
        return train_resnet_hp(reference, drive, config, log=log)
    if kind in CELL_KINDS:
        if task != "lorenz96":
            raise ValueError(f"{kind} baseline is defined for the lorenz96 task")
        return train_cell(kind, reference, config, hidden, n_train, log)
    raise ValueError(f"unknown baseline kind {kind!r}")
