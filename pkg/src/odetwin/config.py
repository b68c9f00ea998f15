"""Experiment configuration: one JSON document per experiment.

User documents are merged over task defaults; every key must be known and
every value is validated before anything runs.  The resolved configuration
(defaults filled in) is what gets hashed and echoed into reports.
"""

import copy
import hashlib
import json

from .analogue import HardwareSpec
from .dynamics import (HpParams, Lorenz96Params, ReferenceConfig, Waveform,
                       default_reference_config)
from .odesolve import SolverSpec
from .rng import subseed
from .training import HP_TRAIN, LORENZ96_TRAIN, LossSpec, TrainConfig

TASKS = ("hp", "lorenz96")


class ConfigError(ValueError):
    """Invalid configuration; ``path`` names the offending field."""

    def __init__(self, path, message):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


def _train_dict(cfg):
    d = cfg.to_dict()
    d["loss"] = dict(d["loss"])
    d["solver"] = dict(d["solver"])
    return d


def _waveform_dict(w):
    return {k: getattr(w, k) for k in ("kind", "amplitude", "frequency", "phase",
                                      "envelope_frequency", "envelope_depth")}


def _hardware_dict(**over):
    spec = HardwareSpec()
    d = {k: getattr(spec, k) for k in ("g_min", "g_max", "levels", "prog_noise_rel_std",
                                       "read_noise_rel_std", "yield_fraction", "clamp_limit")}
    d["seed"] = None
    d.update(over)
    return d


def task_defaults(task):
    if task == "hp":
        ref = default_reference_config(HpParams())
        return {
            "task": "hp",
            "seed": 0,
            "system": {"r_on": 100.0, "r_off": 16e3, "depth_d": 1e-8, "mobility_mu_v": 1e-14},
            "reference": {"n_points": ref.n_points, "dt": ref.dt, "x0": list(ref.x0), "refine": ref.refine,
                          "drive": _waveform_dict(Waveform("sine", 3.0, 2.0))},
            "heldout_drive": _waveform_dict(Waveform("triangular", 3.0, 2.0)),
            "net_shape": [2, 14, 14, 1],
            "train": _train_dict(HP_TRAIN),
            "eval": {},
            "hardware": _hardware_dict(clamp_limit="auto"),
            "noise_sweep": {"read": [0.0, 0.01, 0.02], "prog": [0.0, 0.02, 0.0436],
                            "repeats": 10, "yield_fraction": 1.0},
            "baselines": {"kinds": ["resnet"]},
            "projection": {"constants": None},
        }
    if task == "lorenz96":
        ref = default_reference_config(Lorenz96Params())
        return {
            "task": "lorenz96",
            "seed": 0,
            "system": {"n": 6, "forcing_f": 8.0},
            "reference": {"n_points": ref.n_points, "dt": ref.dt, "x0": list(ref.x0), "refine": ref.refine},
            "net_shape": [6, 64, 64, 6],
            "train": _train_dict(LORENZ96_TRAIN),
            "eval": {"n_train": 1800, "window": 50, "horizons": [1, 2, 3, 4, 5, 6, 7]},
            "hardware": _hardware_dict(clamp_limit="auto"),
            "noise_sweep": {"read": [0.0, 0.01, 0.02], "prog": [0.0, 0.02, 0.0436],
                            "repeats": 10, "yield_fraction": 1.0},
            "baselines": {"kinds": ["rnn", "gru", "lstm"], "hidden": 64},
            "projection": {"constants": None},
        }
    raise ConfigError("task", f"unknown task {task!r}; expected one of {TASKS}")


def _merge(base, user, path=""):
    out = copy.deepcopy(base)
    for key, value in user.items():
        where = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(where, "unknown key")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(where, "expected an object")
            out[key] = _merge(base[key], value, where)
        else:
            out[key] = value
    return out


def _build(path, ctor, **kwargs):
    try:
        return ctor(**kwargs)
    except TypeError as exc:
        raise ConfigError(path, str(exc)) from None
    except ValueError as exc:
        raise ConfigError(path, str(exc)) from None


class ExperimentConfig:
    """A validated, fully resolved experiment configuration."""

    def __init__(self, doc):
        if not isinstance(doc, dict):
            raise ConfigError("", "configuration must be a JSON object")
        if "task" not in doc:
            raise ConfigError("task", "missing required key")
        self.doc = _merge(task_defaults(doc["task"]), doc)
        self._validate()

    @classmethod
    def from_file(cls, path):
        with open(path, encoding="utf-8") as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError("", f"not valid JSON: {exc}") from None
        return cls(doc)

    def with_seed(self, seed):
        doc = copy.deepcopy(self.doc)
        doc["seed"] = int(seed)
        return ExperimentConfig(doc)

    def _validate(self):
        d = self.doc
        if not isinstance(d["seed"], int) or d["seed"] < 0:
            raise ConfigError("seed", "must be a non-negative integer")
        self.system
        self.reference
        self.train
        self.hardware_spec(clamp_limit=1.0)
        shape = d["net_shape"]
        if not (isinstance(shape, list) and len(shape) >= 2 and all(isinstance(w, int) and w >= 1 for w in shape)):
            raise ConfigError("net_shape", "need >= 2 positive integer widths")
        n_state = len(d["reference"]["x0"])
        n_drive = 1 if self.task == "hp" else 0
        if shape[0] != n_state + n_drive or shape[-1] != n_state:
            raise ConfigError("net_shape", f"widths must start at {n_state + n_drive} and end at {n_state}")
        clamp = d["hardware"]["clamp_limit"]
        if not (clamp is None or clamp == "auto" or (isinstance(clamp, (int, float)) and clamp > 0)):
            raise ConfigError("hardware.clamp_limit", "must be a positive number, null or \"auto\"")
        ns = d["noise_sweep"]
        if not isinstance(ns["repeats"], int) or ns["repeats"] < 1:
            raise ConfigError("noise_sweep.repeats", "must be an integer >= 1")
        for key in ("read", "prog"):
            if not ns[key] or any(not isinstance(v, (int, float)) or v < 0 for v in ns[key]):
                raise ConfigError(f"noise_sweep.{key}", "need a non-empty list of levels >= 0")
        if not 0 < ns["yield_fraction"] <= 1:
            raise ConfigError("noise_sweep.yield_fraction", "must lie in (0, 1]")
        if self.task == "lorenz96":
            ev = d["eval"]
            if not 1 < ev["n_train"] < d["reference"]["n_points"]:
                raise ConfigError("eval.n_train", "must split the reference into two non-empty parts")
            if not isinstance(ev["window"], int) or ev["window"] < 1:
                raise ConfigError("eval.window", "must be an integer >= 1")
        kinds = d["baselines"]["kinds"]
        allowed = ("resnet",) if self.task == "hp" else ("rnn", "gru", "lstm")
        bad = [k for k in kinds if k not in allowed]
        if bad:
            raise ConfigError("baselines.kinds", f"{bad} not available for {self.task}; choose from {allowed}")
        if self.task == "hp":
            self.drive
            self.heldout_drive

    @property
    def task(self):
        return self.doc["task"]

    @property
    def seed(self):
        return self.doc["seed"]

    @property
    def system(self):
        if self.task == "hp":
            return _build("system", HpParams, **self.doc["system"])
        return _build("system", Lorenz96Params, **self.doc["system"])

    @property
    def drive(self):
        return _build("reference.drive", Waveform, **self.doc["reference"]["drive"])

    @property
    def heldout_drive(self):
        return _build("heldout_drive", Waveform, **self.doc["heldout_drive"])

    @property
    def reference(self):
        r = dict(self.doc["reference"])
        if self.task == "hp":
            r["drive"] = self.drive
        r["x0"] = tuple(r["x0"])
        return _build("reference", ReferenceConfig, **r)

    @property
    def train(self):
        t = dict(self.doc["train"])
        t["loss"] = _build("train.loss", LossSpec, **t["loss"])
        t["solver"] = _build("train.solver", SolverSpec, **t["solver"])
        t["seed"] = self.seed
        return _build("train", TrainConfig, **t)

    def hardware_spec(self, clamp_limit=None, **over):
        h = dict(self.doc["hardware"])
        h["clamp_limit"] = clamp_limit
        if h["seed"] is None:
            h["seed"] = subseed(self.seed, "hardware")
        h.update(over)
        return _build("hardware", HardwareSpec, **h)

    def to_json(self):
        return json.dumps(self.doc, sort_keys=True, indent=1)

    @property
    def hash(self):
        return hashlib.sha256(json.dumps(self.doc, sort_keys=True).encode("utf-8")).hexdigest()
