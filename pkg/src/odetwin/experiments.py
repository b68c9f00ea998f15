"""Experiment commands behind the ``odetwin`` CLI.

Every command reads a resolved :class:`ExperimentConfig`, consumes artifacts
from the output directory (checked against ``manifest.json``), writes its own
artifacts and records their SHA-256 in the manifest.  Everything written is a
function of (config, seed); wall-clock times and timestamps go to
``run_log.json``, which is the one file left out of the manifest.
"""

from contextlib import contextmanager
from dataclasses import replace
from datetime import datetime, timezone
import hashlib
import json
import os
import time

import numpy as np

from . import __version__
from .analogue import (HwInferenceSpec, calibrate_clamp,
                       hw_infer, map_weights, noise_sweep)
from .baselines import cell_split_errors, resnet_predict, train_baseline
from .dynamics import Lorenz96Field, generate_reference
from .lyapunov import error_growth, mle_flow
from .metrics import UndefinedMetric, dtw_matrix, l1_error, mre
from .nn import MlpField, MlpParams
from .odesolve import integrate
from .projection import check_quoted, load_constants, project_task, ratio_table_csv
from .rng import subseed
from .trajectory import Trajectory
from .training import split_errors, train_hp_twin, train_lorenz96_twin, windowed_forecast

MANIFEST = "manifest.json"
RUN_LOG = "run_log.json"


class InputMissing(Exception):
    exit_code = 2


class StaleArtifact(Exception):
    exit_code = 4


class ModuleFailure(Exception):
    exit_code = 5

    def __init__(self, module, message):
        super().__init__(f"[{module}] {message}")
        self.module = module


@contextmanager
def stage(module):
    """Re-raise numerical and validation errors tagged with the module name."""
    try:
        yield
    except (FloatingPointError, UndefinedMetric, ValueError, KeyError) as exc:
        raise ModuleFailure(module, str(exc)) from exc


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def _dump_json(doc):
    return json.dumps(doc, indent=1, sort_keys=True, allow_nan=True) + "\n"


class Workspace:
    """Output directory plus its manifest."""

    def __init__(self, out_dir, config):
        self.dir = out_dir
        self.config = config
        os.makedirs(out_dir, exist_ok=True)
        path = os.path.join(out_dir, MANIFEST)
        if os.path.exists(path):
            with open(path, encoding="utf-8") as fh:
                self.manifest = json.load(fh)
        else:
            self.manifest = {"artifacts": {}}
        self.manifest["tool_version"] = __version__
        self.manifest["config_hash"] = config.hash

    def path(self, name):
        return os.path.join(self.dir, name)

    def require(self, name):
        """Path of an input artifact after checking it against the manifest."""
        p = self.path(name)
        if not os.path.exists(p):
            raise InputMissing(f"missing input {name}; run the producing command first")
        entry = self.manifest["artifacts"].get(name)
        if entry is None:
            raise StaleArtifact(f"{name} is not recorded in the manifest")
        if sha256_file(p) != entry["sha256"]:
            raise StaleArtifact(f"stale artifact {name}: content does not match the manifest")
        return p

    def write_text(self, name, text, command):
        p = self.path(name)
        with open(p, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        self.manifest["artifacts"][name] = {
            "sha256": sha256_file(p),
            "command": command,
            "config_hash": self.config.hash,
        }
        return p

    def write_json(self, name, doc, command):
        return self.write_text(name, _dump_json(doc), command)

    def save(self):
        self.manifest["artifacts"] = dict(sorted(self.manifest["artifacts"].items()))
        with open(self.path(MANIFEST), "w", encoding="utf-8", newline="\n") as fh:
            fh.write(_dump_json(self.manifest))

    def log_run(self, command, started, seconds, extra=None):
        p = self.path(RUN_LOG)
        runs = []
        if os.path.exists(p):
            with open(p, encoding="utf-8") as fh:
                runs = json.load(fh)
        runs.append({"command": command, "started": started, "wall_clock_s": seconds, **(extra or {})})
        with open(p, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(_dump_json(runs))


def verify_manifest(out_dir):
    """Names of artifacts whose content no longer matches the manifest."""
    with open(os.path.join(out_dir, MANIFEST), encoding="utf-8") as fh:
        manifest = json.load(fh)
    return [n for n, e in manifest["artifacts"].items()
            if not os.path.exists(os.path.join(out_dir, n)) or sha256_file(os.path.join(out_dir, n)) != e["sha256"]]


def _report(cfg, command, **body):
    return {"command": command, "config": cfg.doc, "config_hash": cfg.hash, **body}


def _round4(d):
    return {k: (round(v, 4) if isinstance(v, float) else v) for k, v in d.items()}


def _series_metrics(pred, truth):
    """L1, MRE and DTW (total and length-normalised) for one prediction."""
    m = mre(pred, truth, details=True)
    d = dtw_matrix(pred, truth)
    n, k = len(pred), len(truth)
    return {
        "l1": l1_error(pred, truth),
        "mre": m.value,
        "mre_excluded": len(m.excluded),
        "dtw_total": d.total,
        "dtw_normalized": d.total / (n + k),
        "lengths": [n, k],
    }


# -- simulate ------------------------------------------------------------------


def _heldout_config(cfg):
    return replace(cfg.reference, drive=cfg.heldout_drive)


def cmd_simulate(cfg, ws, workers=1):
    with stage("dynamics"):
        ref = generate_reference(cfg.system, cfg.reference)
        files = {"reference.csv": ref}
        if cfg.task == "hp":
            files["heldout.csv"] = generate_reference(cfg.system, _heldout_config(cfg))
    for name, traj in files.items():
        ws.write_text(name, traj.to_csv(), "simulate")
    meta = _report(cfg, "simulate", files={n: {"rows": len(t), "columns": ["t", *t.labels]} for n, t in files.items()})
    ws.write_json("reference_meta.json", meta, "simulate")
    return meta


def _load_reference(ws, name="reference.csv"):
    return Trajectory.from_csv(ws.require(name))


# -- train ---------------------------------------------------------------------


def _train_twin(cfg, ref):
    tc = cfg.train
    if cfg.task == "hp":
        return train_hp_twin(ref, cfg.drive, tc, shape=tuple(cfg.doc["net_shape"]))
    ev = cfg.doc["eval"]
    return train_lorenz96_twin(ref, tc, shape=tuple(cfg.doc["net_shape"]),
                               n_train=ev["n_train"], eval_window=ev["window"])


def _curve_csv(curve):
    return "epoch,loss\n" + "".join(f"{i},{v:.17g}\n" for i, v in enumerate(curve))


def cmd_train(cfg, ws, workers=1):
    ref = _load_reference(ws)
    with stage("training"):
        report = _train_twin(cfg, ref)
    ws.write_json("twin_params.json", report.params.to_dict(), "train")
    ws.write_text("loss_curve.csv", _curve_csv(report.loss_curve), "train")
    doc = _report(cfg, "train", **report.summary())
    ws.write_json("train_report.json", doc, "train")
    ws.last_wall_clock = report.wall_clock_s
    if report.status.startswith("diverged"):
        raise ModuleFailure("training", report.status)
    return doc


# -- eval ----------------------------------------------------------------------


def _lyapunov_time(cfg):
    """Reference-system Lyapunov time (Lorenz96), from tangent renormalisation."""
    fld = Lorenz96Field(cfg.system)
    x0 = np.asarray(cfg.doc["reference"]["x0"], dtype=float)
    est = mle_flow(fld, fld.jacobian, x0, 0.01, 20000, transient=2000, seed=subseed(cfg.seed, "mle"))
    return est


def _lorenz_eval(cfg, fld, ref):
    ev = cfg.doc["eval"]
    n_train, window = ev["n_train"], ev["window"]
    x, t = ref.states, ref.times
    errs = split_errors(fld, ref, n_train, window, cfg.train.solver)
    pi = windowed_forecast(fld, x, t, 0, n_train, window, cfg.train.solver)
    pe = windowed_forecast(fld, x, t, n_train - 1, len(x), window, cfg.train.solver)
    est = _lyapunov_time(cfg)
    free = integrate(fld, x[n_train - 1], t[n_train - 1:] - t[n_train - 1], cfg.train.solver)
    growth = error_growth(free, x[n_train - 1:], ref.times[1] - ref.times[0], est.lyapunov_time, ev["horizons"])
    return errs, pi, pe, est, free, growth


def cmd_eval(cfg, ws, workers=1):
    params = MlpParams.load(ws.require("twin_params.json"))
    ref = _load_reference(ws)
    body = {}
    if cfg.task == "hp":
        held = _load_reference(ws, "heldout.csv")
        with stage("evaluation"):
            for name, drive, truth in (("train_drive", cfg.drive, ref), ("heldout_drive", cfg.heldout_drive, held)):
                pred = integrate(MlpField(params, drive), truth.states[0], truth.times, cfg.train.solver)
                body[name] = _series_metrics(pred, truth.states)
                ws.write_text(f"prediction_{name}.csv", Trajectory(truth.times, pred, truth.labels).to_csv(), "eval")
        body["summary"] = _round4({"heldout_mre": body["heldout_drive"]["mre"],
                                   "heldout_dtw_normalized": body["heldout_drive"]["dtw_normalized"]})
    else:
        with stage("evaluation"):
            errs, pi, pe, est, free, growth = _lorenz_eval(cfg, MlpField(params), ref)
            n_train = cfg.doc["eval"]["n_train"]
            body["windowed"] = errs
            body["interpolation"] = _series_metrics(pi, ref.states[1:n_train])
            body["extrapolation"] = _series_metrics(pe, ref.states[n_train:])
            body["lyapunov"] = {"mle_per_s": est.lam, "lyapunov_time_s": est.lyapunov_time,
                                "steps": est.sample_count}
            body["error_growth"] = [{"lyapunov_multiple": m, "time_s": tm, "l1": v} for m, tm, v in growth]
        ws.write_text("prediction_windowed.csv",
                      Trajectory(ref.times[1:], np.concatenate([pi, pe]), ref.labels).to_csv(), "eval")
        ws.write_text("prediction_freerun.csv",
                      Trajectory(ref.times[n_train - 1:], free, ref.labels).to_csv(), "eval")
        ws.write_text("error_growth.csv", "lyapunov_multiple,time_s,l1\n"
                      + "".join(f"{m},{tm:.17g},{v:.17g}\n" for m, tm, v in growth), "eval")
        body["summary"] = _round4({"interp_l1": errs["interp_l1"], "extrap_l1": errs["extrap_l1"]})
    doc = _report(cfg, "eval", **body)
    ws.write_json("eval_report.json", doc, "eval")
    return doc


# -- hardware ------------------------------------------------------------------


def _network_inputs(cfg, ref):
    if cfg.task == "hp":
        v = np.array([cfg.drive(t) for t in ref.times])
        return np.column_stack([v, ref.states])
    return ref.states[: cfg.doc["eval"]["n_train"]]


def resolve_clamp(cfg, params, ref):
    clamp = cfg.doc["hardware"]["clamp_limit"]
    if clamp == "auto":
        return calibrate_clamp(params, _network_inputs(cfg, ref))
    return clamp


class SweepMetric:
    """Picklable hardware metric for the noise sweep.

    Lorenz96: windowed extrapolation L1.  HP: L1 on the held-out drive.
    """

    def __init__(self, cfg, ref, held=None):
        self.task = cfg.task
        self.substeps = 1
        if cfg.task == "hp":
            self.drive = cfg.heldout_drive
            self.times, self.truth = held.times, held.states
        else:
            ev = cfg.doc["eval"]
            self.n_train, self.window = ev["n_train"], ev["window"]
            self.times, self.truth = ref.times, ref.states

    def __call__(self, program, spec):
        if self.task == "hp":
            traj = hw_infer(program, HwInferenceSpec(self.substeps, tuple(self.truth[0])), self.times, self.drive)
            return float(np.mean(np.abs(traj.states - self.truth)))
        return hw_windowed(program, self.truth, self.times, self.n_train - 1, len(self.truth), self.window)[1]


def hw_windowed(program, states, times, start, stop, window, substeps=1):
    """Windowed hardware forecast of ``states[start+1:stop]`` run as a batch.

    All windows start from observed states and run side by side (one
    integrator bank per window); the field is autonomous, so each window
    uses the same relative time grid.  Returns ``(pred, l1, saturation)``.
    """
    starts = np.arange(start, stop - 1, window)
    grid = np.arange(window + 1) * (times[1] - times[0])
    out, meta = hw_infer(program, HwInferenceSpec(substeps, states[starts]), grid)
    pred = out[1:].transpose(1, 0, 2).reshape(-1, states.shape[1])[: stop - 1 - start]
    return pred, float(np.mean(np.abs(pred - states[start + 1:stop]))), meta["clamp_saturation_fraction"]


def cmd_hw_eval(cfg, ws, workers=1):
    params = MlpParams.load(ws.require("twin_params.json"))
    ref = _load_reference(ws)
    with stage("analogue"):
        clamp = resolve_clamp(cfg, params, ref)
        spec = cfg.hardware_spec(clamp_limit=clamp)
        prog = map_weights(params, spec)
        body = {"hardware": {**spec.__dict__, "resolved_clamp_limit": clamp},
                "quantization": {"levels": spec.levels, "level_step_s": spec.level_step},
                "faults": {"stuck_devices": int(sum(l.stuck_plus.sum() + l.stuck_minus.sum() for l in prog.layers)),
                           "devices": int(sum(2 * l.g_plus.size for l in prog.layers))}}
        if cfg.task == "hp":
            held = _load_reference(ws, "heldout.csv")
            for name, drive, truth in (("train_drive", cfg.drive, ref), ("heldout_drive", cfg.heldout_drive, held)):
                traj = hw_infer(prog, HwInferenceSpec(1, tuple(truth.states[0])), truth.times, drive)
                body[name] = _series_metrics(traj.states, truth.states)
                body[name]["clamp_saturation_fraction"] = traj.meta["clamp_saturation_fraction"]
                ws.write_text(f"hw_prediction_{name}.csv",
                              Trajectory(truth.times, traj.states, truth.labels).to_csv(), "hw-eval")
            body["summary"] = _round4({"heldout_mre": body["heldout_drive"]["mre"]})
        else:
            ev = cfg.doc["eval"]
            n_train, window = ev["n_train"], ev["window"]
            x, t = ref.states, ref.times
            pi, li, si = hw_windowed(prog, x, t, 0, n_train, window)
            pe, le, se = hw_windowed(prog, x, t, n_train - 1, len(x), window)
            body["windowed"] = {"interp_l1": li, "extrap_l1": le, "eval_window": window,
                                "clamp_saturation_fraction": {"interp": si, "extrap": se}}
            ws.write_text("hw_prediction_windowed.csv",
                          Trajectory(t[1:], np.concatenate([pi, pe]), ref.labels).to_csv(), "hw-eval")
            body["summary"] = _round4({"interp_l1": li, "extrap_l1": le})
    ws.write_json("crossbar_program.json", prog.to_dict(), "hw-eval")
    doc = _report(cfg, "hw-eval", **body)
    ws.write_json("hw_eval_report.json", doc, "hw-eval")
    return doc


def cmd_noise_sweep(cfg, ws, workers=1):
    params = MlpParams.load(ws.require("twin_params.json"))
    ref = _load_reference(ws)
    held = _load_reference(ws, "heldout.csv") if cfg.task == "hp" else None
    ns = cfg.doc["noise_sweep"]
    with stage("analogue"):
        clamp = resolve_clamp(cfg, params, ref)
        base = cfg.hardware_spec(clamp_limit=clamp, yield_fraction=ns["yield_fraction"])
        metric = SweepMetric(cfg, ref, held)
        if workers > 1:
            from concurrent.futures import ProcessPoolExecutor
            with ProcessPoolExecutor(workers) as pool:
                res = noise_sweep(params, base, metric, ns["read"], ns["prog"], ns["repeats"],
                                  subseed(cfg.seed, "noise-sweep"), pool)
        else:
            res = noise_sweep(params, base, metric, ns["read"], ns["prog"], ns["repeats"],
                              subseed(cfg.seed, "noise-sweep"))
    ws.write_text("noise_sweep.csv", res.to_csv(), "noise-sweep")
    cells = [{"read_noise": r, "prog_noise": p, "mean": m, "std": s, "repeats": n,
              "errors": res.errors.get((r, p), [])} for r, p, m, s, n in res.rows()]
    metric_name = "heldout_l1" if cfg.task == "hp" else "extrap_l1"
    doc = _report(cfg, "noise-sweep", metric=metric_name, resolved_clamp_limit=clamp, cells=cells)
    ws.write_json("noise_sweep.json", doc, "noise-sweep")
    return doc


# -- baselines -----------------------------------------------------------------


def cmd_baseline(cfg, ws, workers=1):
    ref = _load_reference(ws)
    # Same optimiser, windows, loss and state noise as the twin; the
    # crossbar-aware weight noise does not apply to digital baselines.
    tc = replace(cfg.train, weight_noise_sigma=0.0)
    shape = cfg.doc["net_shape"]
    twin_count = sum((a + 1) * b for a, b in zip(shape[:-1], shape[1:]))
    results = {}
    for kind in cfg.doc["baselines"]["kinds"]:
        with stage("baselines"):
            if cfg.task == "hp":
                held = _load_reference(ws, "heldout.csv")
                rep = train_baseline(kind, "hp", ref, tc, drive=cfg.drive)
                pred = resnet_predict(rep.params, cfg.heldout_drive, held.times, held.states[0])
                metrics = {"heldout_drive": _series_metrics(pred, held.states)}
                pdoc = rep.params.to_dict(cell_kind=kind)
            else:
                ev = cfg.doc["eval"]
                rep = train_baseline(kind, "lorenz96", ref, tc, hidden=cfg.doc["baselines"]["hidden"],
                                     n_train=ev["n_train"])
                metrics = {"windowed": cell_split_errors(rep.params, ref, ev["n_train"], ev["window"])}
                pdoc = rep.params.to_dict()
        ws.write_json(f"baseline_{kind}_params.json", pdoc, "baseline")
        ws.write_text(f"baseline_{kind}_loss_curve.csv", _curve_csv(rep.loss_curve), "baseline")
        summ = rep.summary()
        summ.pop("shape", None)
        results[kind] = {**summ, **metrics}
    doc = _report(cfg, "baseline", twin_n_params=twin_count, baselines=results)
    ws.write_json("baseline_report.json", doc, "baseline")
    return doc


# -- projection ----------------------------------------------------------------


def cmd_project(cfg, ws, workers=1):
    path = cfg.doc["projection"]["constants"]
    try:
        constants = load_constants(path)
    except FileNotFoundError:
        raise InputMissing(f"projection constants file {path} not found") from None
    with stage("projection"):
        reports = {task: project_task(constants, task) for task in constants["tasks"]}
        checks = check_quoted(constants)
    for task, rep in reports.items():
        ws.write_text(f"projection_ratios_{task}.csv", ratio_table_csv(rep), "project")
    doc = _report(cfg, "project", banner=constants["banner"], projections=reports, quoted_checks=checks)
    ws.write_json("projection.json", doc, "project")
    return doc


COMMANDS = {
    "simulate": cmd_simulate,
    "train": cmd_train,
    "eval": cmd_eval,
    "hw-eval": cmd_hw_eval,
    "noise-sweep": cmd_noise_sweep,
    "baseline": cmd_baseline,
    "project": cmd_project,
}


def run_command(name, cfg, out_dir, workers=1):
    ws = Workspace(out_dir, cfg)
    started = datetime.now(timezone.utc).isoformat(timespec="seconds")
    t0 = time.perf_counter()
    try:
        ws.write_json("config.resolved.json", cfg.doc, name)
        doc = COMMANDS[name](cfg, ws, workers)
    finally:
        ws.save()
        ws.log_run(name, started, time.perf_counter() - t0,
                   {"train_wall_clock_s": getattr(ws, "last_wall_clock", None)})
    return doc
