"""Speed and energy projection from declared calibration constants.

This is a bookkeeping model, not a measurement.  Each platform is described
by a linear cost model

    energy  = energy_fixed + energy_per_mac * MACs + energy_per_update * updates
    latency = latency_fixed + latency_per_layer * layer_traversals

and the constants are scaled so the model reproduces quoted anchor figures
for a reference workload.  Only one anchor per (task, platform) is available,
so the least-squares fit reduces to a single scale factor with zero residual.
"""

from dataclasses import asdict, dataclass
import json
from importlib import resources

BANNER = "projection, not measurement"
PLATFORMS = ("analogue-ode", "gpu-node", "gpu-resnet", "gpu-rnn", "gpu-gru", "gpu-lstm")
CELL_GATES = {"rnn": 1, "gru": 3, "lstm": 4}


@dataclass(frozen=True)
class WorkloadShape:
    """``layers`` are (n_in, n_out) matvecs per field evaluation."""

    layers: tuple
    solver_steps: int = 1
    seq_len: int = 1
    state_dim: int = 1

    def __post_init__(self):
        layers = tuple((int(a), int(b)) for a, b in self.layers)
        if not layers or min(min(l) for l in layers) < 1:
            raise ValueError("layers must be non-empty with positive sizes")
        if self.solver_steps < 1 or self.seq_len < 1 or self.state_dim < 1:
            raise ValueError("solver_steps, seq_len and state_dim must be positive")
        object.__setattr__(self, "layers", layers)

    @classmethod
    def from_widths(cls, widths, solver_steps=1, seq_len=1):
        widths = list(widths)
        return cls(tuple(zip(widths[:-1], widths[1:])), solver_steps, seq_len, widths[-1])

    @classmethod
    def recurrent_cell(cls, kind, dim, hidden, seq_len=1):
        """Gate matvec on ``[x; h]`` plus the linear readout."""
        g = CELL_GATES[kind]
        return cls(((dim + hidden, g * hidden), (hidden, dim)), 1, seq_len, dim)


@dataclass(frozen=True)
class OpCount:
    macs: int
    updates: int
    layer_traversals: int
    weight_reads: int


def count_ops(shape):
    """MACs = sum(in * out) * solver_steps * seq_len, plus related counts."""
    reps = shape.solver_steps * shape.seq_len
    per = sum(a * b for a, b in shape.layers)
    return OpCount(
        macs=per * reps,
        updates=shape.state_dim * reps,
        layer_traversals=len(shape.layers) * reps,
        weight_reads=per * reps,
    )


@dataclass(frozen=True)
class CostModel:
    energy_per_mac: float = 0.0
    energy_per_update: float = 0.0
    energy_fixed: float = 0.0
    latency_per_layer: float = 0.0
    latency_fixed: float = 0.0
    provenance: str = ""

    def __post_init__(self):
        for k, v in asdict(self).items():
            if k != "provenance" and not v >= 0:
                raise ValueError(f"{k} must be >= 0")

    def scaled(self, factor):
        return CostModel(*(factor * v for v in astuple_numeric(self)), provenance=self.provenance)


def astuple_numeric(m):
    return (m.energy_per_mac, m.energy_per_update, m.energy_fixed, m.latency_per_layer, m.latency_fixed)


def cost(model, shape):
    ops = count_ops(shape)
    return {
        "energy_j": model.energy_fixed + model.energy_per_mac * ops.macs + model.energy_per_update * ops.updates,
        "latency_s": model.latency_fixed + model.latency_per_layer * ops.layer_traversals,
    }


def project(models, shapes, reference="analogue-ode"):
    """Cost per platform and the ratio table against ``reference``.

    ``models`` and ``shapes`` map platform name to CostModel / WorkloadShape.
    Ratios are digital / analogue, so larger means the analogue system wins.
    """
    missing = [p for p in shapes if p not in models]
    if missing or reference not in shapes:
        raise KeyError(f"missing platform constants: {missing or [reference]}")
    costs = {p: cost(models[p], shapes[p]) for p in shapes}
    ref = costs[reference]
    ratios = {}
    for p, c in costs.items():
        if p == reference:
            continue
        ratios[p] = {
            "speedup": c["latency_s"] / ref["latency_s"] if ref["latency_s"] > 0 else None,
            "energy_factor": c["energy_j"] / ref["energy_j"] if ref["energy_j"] > 0 else None,
        }
    return {"banner": BANNER, "costs": costs, "ratios": ratios}


# -- calibration ---------------------------------------------------------------


def task_shapes(task_doc):
    """WorkloadShape per platform from a constants-file task record."""
    shapes = {}
    for name, w in task_doc["workloads"].items():
        if "cell" in w:
            shapes[name] = WorkloadShape.recurrent_cell(w["cell"], w["dim"], w["hidden"], w["seq_len"])
        else:
            shapes[name] = WorkloadShape.from_widths(w["widths"], w["solver_steps"], w["seq_len"])
    return shapes


def calibrate(task_doc):
    """Fit per-platform constants to the task's anchors.

    Energy anchors fix ``energy_per_mac``; latency anchors fix
    ``latency_per_layer``.  A platform without its own latency anchor may
    borrow another platform's per-layer latency (``latency_from``).
    """
    shapes = task_shapes(task_doc)
    out = {}
    pending = []
    for name, a in task_doc["anchors"].items():
        ops = count_ops(shapes[name])
        e = a["energy_j"] / ops.macs
        if "latency_s" in a:
            out[name] = CostModel(e, 0.0, 0.0, a["latency_s"] / ops.layer_traversals, 0.0, a["provenance"])
        else:
            out[name] = CostModel(e, 0.0, 0.0, 0.0, 0.0, a["provenance"])
            pending.append((name, a["latency_from"]))
    for name, src in pending:
        m = out[name]
        out[name] = CostModel(m.energy_per_mac, 0.0, 0.0, out[src].latency_per_layer, 0.0, m.provenance)
    return out


def load_constants(path=None):
    if path is None:
        text = resources.files("odetwin").joinpath("data/projection_constants.json").read_text("utf-8")
    else:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    return json.loads(text)


def models_from_doc(task_doc):
    return {k: CostModel(**v) for k, v in task_doc["constants"].items()}


def project_task(doc, task):
    t = doc["tasks"][task]
    report = project(models_from_doc(t), task_shapes(t))
    report["task"] = task
    report["quoted"] = t.get("quoted", {})
    return report


def quoted_figure_matches(value, quoted):
    """Compare at the precision the quoted figure was printed with (max 3 s.f.).

    ``quoted`` is the figure as a string, e.g. ``"9.8"`` or ``"705.4"``.
    """
    digits = sum(ch.isdigit() for ch in quoted.lstrip("0."))
    sig = min(3, digits)
    return float(f"{value:.{sig}g}") == float(f"{float(quoted):.{sig}g}")


def check_quoted(doc):
    """Every quoted figure in the constants file vs the model's output."""
    rows = []
    for task in doc["tasks"]:
        rep = project_task(doc, task)
        for q in rep["quoted"]:
            plat, key = q["platform"], q["quantity"]
            if key in ("energy_j", "latency_s"):
                value = rep["costs"][plat][key] * q["unit_scale"]
            else:
                value = rep["ratios"][plat][key]
            rows.append({"task": task, "platform": plat, "quantity": key, "quoted": q["value"],
                         "value": value, "ok": quoted_figure_matches(value, q["value"])})
    return rows


def ratio_rows(report):
    for p, r in report["ratios"].items():
        yield p, r["speedup"], r["energy_factor"]


def ratio_table_csv(report):
    lines = ["platform,speedup,energy_factor"]
    lines += [f"{p},{s:.17g},{e:.17g}" for p, s, e in ratio_rows(report)]
    return "\n".join(lines) + "\n"
