"""Adjoint-gradient training of neural-ODE twins.

Gradients come from one forward solve that stores the state at every grid
point, followed by a reverse sweep of the adjoint.  Loss cotangents are added
to the adjoint as jumps at the observation times.
"""

from dataclasses import asdict, dataclass, field, replace
import math
import time

import numpy as np

from .metrics import soft_dtw_divergence
from .nn import MlpField, MlpParams, init_params
from .odesolve import SolverSpec, integrate, integrate_adjoint
from .rng import substream, subseed

LOSSES = ("l1", "soft_dtw")


@dataclass(frozen=True)
class LossSpec:
    kind: str = "l1"
    gamma: float = 1.0

    def __post_init__(self):
        if self.kind not in LOSSES:
            raise ValueError(f"unknown loss {self.kind!r}; expected one of {LOSSES}")
        if not self.gamma > 0:
            raise ValueError("gamma must be > 0")


def loss_and_cotangent(spec, pred, truth):
    """Loss value and dL/dpred for states of shape (N, d) or (N, B, d).

    ``l1`` is the mean absolute error over every entry.  ``soft_dtw`` is the
    soft-DTW divergence per series divided by its length, averaged over the
    batch axis.
    """
    if pred.shape != truth.shape:
        raise ValueError(f"prediction {pred.shape} and truth {truth.shape} differ")
    if spec.kind == "l1":
        diff = pred - truth
        return float(np.mean(np.abs(diff))), np.sign(diff) / diff.size
    n = pred.shape[0]
    if pred.ndim == 2:
        v, g = soft_dtw_divergence(pred, truth, spec.gamma)
        return v / n, g / n
    grads = np.empty_like(pred)
    total = 0.0
    nb = pred.shape[1]
    for b in range(nb):
        v, g = soft_dtw_divergence(pred[:, b], truth[:, b], spec.gamma)
        total += v
        grads[:, b] = g
    return total / (n * nb), grads / (n * nb)


def adjoint_grad_vector(fld, h0, grid, solver, loss_spec, truth, perturb=None):
    """Loss and flat parameter gradient for one (possibly batched) solve."""
    grid = np.asarray(grid, dtype=float)
    if truth.shape[0] != len(grid):
        raise ValueError(f"truth has {truth.shape[0]} points, grid has {len(grid)}")
    states = integrate(fld, h0, grid, solver, perturb)
    loss, cot = loss_and_cotangent(loss_spec, states, truth)
    _, grad = integrate_adjoint(fld, states, grid, solver, cot, fld.n_params)
    return loss, grad


def adjoint_grad(params, problem, loss_spec, truth, solver=SolverSpec()):
    """Loss and dL/dparams for an :class:`OdeProblem` whose field is an MlpField.

    ``truth`` is a Trajectory (or array) on the problem's time grid.
    """
    if hasattr(truth, "times"):
        if not np.array_equal(truth.times, problem.time_grid):
            raise ValueError("truth grid does not match the problem grid")
        truth = truth.states
    fld = problem.field
    if fld.params is not params:
        fld = MlpField(params, fld.drive)
    h0 = problem.h0
    truth = np.asarray(truth, dtype=float).reshape((len(problem.time_grid),) + h0.shape)
    loss, g = adjoint_grad_vector(fld, h0, problem.time_grid, solver, loss_spec, truth)
    return loss, MlpParams.from_vector(g, params.shape)


# -- optimiser ----------------------------------------------------------------


@dataclass(frozen=True)
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def zeros(cls, n):
        return cls(np.zeros(n), np.zeros(n), 0)


def adam_step(params, grad, state, lr=1e-2, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update.  Returns ``(new_params, new_state)``."""
    t = state.step + 1
    m = beta1 * state.m + (1 - beta1) * grad
    v = beta2 * state.v + (1 - beta2) * grad * grad
    m_hat = m / (1 - beta1**t)
    v_hat = v / (1 - beta2**t)
    return params - lr * m_hat / (np.sqrt(v_hat) + eps), AdamState(m, v, t)


# -- training loop ------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    """Optimisation settings.

    ``window`` splits the training span into consecutive segments of that many
    intervals, each started from the observed state (``None`` trains on the
    whole span as one solve).  ``noise_reg_sigma`` is the standard deviation of
    the additive state noise, relative to the per-dimension RMS of the data.
    ``weight_noise_sigma`` adds, each epoch, Gaussian noise to every weight and
    bias with standard deviation relative to the largest magnitude in its layer
    (the way conductance programming error lands on a crossbar); gradients are
    taken at the perturbed point and applied to the clean parameters.
    ``lr_decay`` multiplies the learning rate after every epoch.
    """

    loss: LossSpec = field(default_factory=LossSpec)
    lr: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 2000
    solver: SolverSpec = field(default_factory=SolverSpec)
    noise_reg_sigma: float = 0.01
    seed: int = 0
    window: int = None
    stride: int = None
    patience: int = 50
    min_delta: float = 1e-6
    lr_decay: float = 1.0
    grad_clip: float = None
    weight_noise_sigma: float = 0.0

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError("lr must be > 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("Adam betas must lie in [0, 1)")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.noise_reg_sigma < 0 or self.weight_noise_sigma < 0:
            raise ValueError("noise levels must be >= 0")
        if self.window is not None and self.window < 1:
            raise ValueError("window must be >= 1")
        if self.stride is not None and self.stride < 1:
            raise ValueError("stride must be >= 1")
        if not 0 < self.lr_decay <= 1:
            raise ValueError("lr_decay must lie in (0, 1]")

    def to_dict(self):
        return asdict(self)


@dataclass
class TrainReport:
    loss_curve: list
    params: MlpParams
    init_params: MlpParams
    seed: int
    config: dict
    status: str = "completed"
    wall_clock_s: float = 0.0
    extras: dict = field(default_factory=dict)

    def summary(self):
        """JSON-ready record (wall clock excluded; it is not reproducible)."""
        return {
            "status": self.status,
            "seed": self.seed,
            "epochs_completed": len(self.loss_curve),
            "final_loss": self.loss_curve[-1] if self.loss_curve else None,
            "n_params": self.params.n_params,
            "shape": getattr(self.params, "shape", None),
            "config": self.config,
            **self.extras,
        }


def make_windows(states, window, stride=None):
    """Cut ``states`` (N, d) into segments of ``window`` intervals.

    Returns an array (window + 1, B, d): segment ``b`` covers indices
    ``b*stride .. b*stride + window`` (``stride`` defaults to ``window``, i.e.
    back-to-back segments).  Segments running past the end are dropped.
    """
    stride = stride or window
    n = states.shape[0]
    if window > n - 1:
        raise ValueError(f"window {window} longer than the {n}-point series")
    starts = np.arange(0, n - window, stride)
    idx = np.arange(window + 1)[:, None] + starts[None, :]
    return states[idx]


def optimise(objective, theta0, config, log=None):
    """Adam loop shared by the twin and the baselines.

    ``objective(theta, epoch)`` returns ``(loss, flat_grad)`` and may raise
    :class:`FloatingPointError` on blow-up, which ends training with a
    ``diverged`` status and the last good parameters.
    """
    theta = np.array(theta0, dtype=float)
    state = AdamState.zeros(theta.size)
    curve, status = [], "completed"
    best, since_best = math.inf, 0
    lr = config.lr
    for epoch in range(config.epochs):
        try:
            loss, grad = objective(theta, epoch)
        except FloatingPointError as exc:
            status = f"diverged: {exc}"
            break
        if not (np.isfinite(loss) and np.all(np.isfinite(grad))):
            status = f"diverged: non-finite loss at epoch {epoch}"
            break
        curve.append(loss)
        if config.grad_clip is not None:
            gn = np.linalg.norm(grad)
            if gn > config.grad_clip:
                grad = grad * (config.grad_clip / gn)
        theta, state = adam_step(theta, grad, state, lr, config.beta1, config.beta2, config.eps)
        lr *= config.lr_decay
        if log is not None:
            log(epoch, loss)
        if loss < best - config.min_delta:
            best, since_best = loss, 0
        else:
            since_best += 1
            if since_best >= config.patience:
                status = "early-stop"
                break
    return theta, curve, status


def noise_perturbation(config, epoch, truth):
    """State noise for one epoch, scaled by the per-dimension RMS of ``truth``."""
    if config.noise_reg_sigma <= 0:
        return None
    rms = np.sqrt(np.mean(truth.reshape(-1, truth.shape[-1]) ** 2, axis=0))
    rng = substream(config.seed, "noise-reg", epoch)
    return rng.standard_normal(truth.shape) * (config.noise_reg_sigma * rms)


def weight_perturbation(config, epoch, theta, shape):
    if config.weight_noise_sigma <= 0:
        return 0.0
    scale = np.empty_like(theta)
    i = 0
    for n_in, n_out in zip(shape[:-1], shape[1:]):
        n = (n_in + 1) * n_out
        scale[i:i + n] = np.max(np.abs(theta[i:i + n]))
        i += n
    rng = substream(config.seed, "weight-noise", epoch)
    return rng.standard_normal(theta.shape) * (config.weight_noise_sigma * scale)


def fit(fld_factory, params0, grid, truth, config, log=None):
    """Minimise the loss of ``fld_factory(params)`` against ``truth``.

    ``truth`` is (N, d) for one solve over ``grid`` or (N, B, d) for a batch
    of solves that share ``grid``; ``truth[0]`` is the initial state.
    """
    shape = params0.shape

    def objective(theta, epoch):
        theta = theta + weight_perturbation(config, epoch, theta, shape)
        fld = fld_factory(MlpParams.from_vector(theta, shape))
        perturb = noise_perturbation(config, epoch, truth)
        return adjoint_grad_vector(fld, truth[0], grid, config.solver, config.loss, truth, perturb)

    t_start = time.perf_counter()
    theta, curve, status = optimise(objective, params0.to_vector(), config, log)
    return TrainReport(
        loss_curve=curve,
        params=MlpParams.from_vector(theta, shape),
        init_params=params0,
        seed=config.seed,
        config=config.to_dict(),
        status=status,
        wall_clock_s=time.perf_counter() - t_start,
    )


def windowed_forecast(fld, states, times, start, stop, window, solver=SolverSpec()):
    """Predict ``states[start+1:stop]`` restarting from the observed state.

    The twin is re-initialised from ``states[s]`` at ``s = start, start +
    window, ...`` and run for up to ``window`` intervals each time; ``fld`` may
    be any field accepting a single state vector.
    """
    if window < 1:
        raise ValueError("window must be >= 1")
    pred, s = [], start
    while s < stop - 1:
        n = min(window, stop - 1 - s)
        out = integrate(fld, states[s], times[s:s + n + 1], solver)
        pred.append(out[1:])
        s += n
    return np.concatenate(pred)


def split_errors(fld, reference, n_train, window, solver=SolverSpec()):
    """Interpolation and extrapolation L1 under the windowed protocol.

    Interpolation covers points ``1 .. n_train-1``; extrapolation covers
    ``n_train .. end``, seeded from the last training point.
    """
    x, t = reference.states, reference.times
    pi = windowed_forecast(fld, x, t, 0, n_train, window, solver)
    pe = windowed_forecast(fld, x, t, n_train - 1, len(x), window, solver)
    return {
        "interp_l1": float(np.mean(np.abs(pi - x[1:n_train]))),
        "extrap_l1": float(np.mean(np.abs(pe - x[n_train:]))),
        "eval_window": int(window),
    }


# -- task recipes --------------------------------------------------------------


def hp_twin_field(params, drive):
    return MlpField(params, drive=drive)


def train_hp_twin(reference, drive, config, shape=(2, 14, 14, 1), log=None):
    """Fit the closed-loop HP twin ``du/dt = net(v(t), u)`` to a reference.

    The whole reference (typically 500 intervals at 1 ms) is one solve from
    the observed initial state and the loss covers every time step.
    """
    params0 = init_params(shape, subseed(config.seed, "init"))
    truth = reference.states
    report = fit(lambda p: hp_twin_field(p, drive), params0, reference.times, truth, config, log)
    report.extras["loss_points"] = int(truth.shape[0])
    return report


def train_lorenz96_twin(reference, config, shape=(6, 64, 64, 6), n_train=1800, eval_window=50, log=None):
    """Fit an autonomous twin on the first ``n_train`` reference points.

    With ``config.window`` set, the training span is cut into windows that
    start from the observed state; otherwise it is one solve from ``x(0)``.
    Points past ``n_train`` never enter the loss.  The report carries the
    interpolation and extrapolation L1 of :func:`split_errors`.
    """
    params0 = init_params(shape, subseed(config.seed, "init"))
    train = reference.states[:n_train]
    times = reference.times[:n_train]
    if config.window is None:
        grid, truth = times, train
    else:
        grid = times[: config.window + 1] - times[0]
        truth = make_windows(train, config.window, config.stride)
    report = fit(lambda p: MlpField(p), params0, grid, truth, config, log)
    report.extras["loss_points"] = int(n_train)
    report.extras["train_span"] = [float(times[0]), float(times[-1])]
    if report.status in ("completed", "early-stop"):
        report.extras.update(split_errors(MlpField(report.params), reference, n_train, eval_window, config.solver))
    return report


# Task presets.  The Lorenz96 values come from a small sweep over window
# length and noise levels; the weight noise buys robustness to conductance
# programming error at a small cost in software accuracy.
HP_TRAIN = TrainConfig(loss=LossSpec("l1"), epochs=200, noise_reg_sigma=0.0, patience=200)
LORENZ96_TRAIN = TrainConfig(
    loss=LossSpec("soft_dtw", 1.0), epochs=600, noise_reg_sigma=0.03,
    window=10, lr_decay=0.998, patience=200, weight_noise_sigma=0.05,
)


def with_epochs(config, epochs):
    return replace(config, epochs=epochs)
