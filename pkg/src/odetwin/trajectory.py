"""Time-stamped multivariate state sequences and their CSV form."""

from dataclasses import dataclass, field
import io

import numpy as np


@dataclass(frozen=True)
class Trajectory:
    """States sampled on a strictly increasing time axis.

    ``states`` has one row per time point and one column per state dimension.
    """

    times: np.ndarray
    states: np.ndarray
    labels: tuple = ()
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        states = np.asarray(self.states, dtype=float)
        if states.ndim == 1:
            states = states[:, None]
        if times.ndim != 1 or states.ndim != 2:
            raise ValueError("times must be 1-D and states 2-D")
        if len(times) != states.shape[0]:
            raise ValueError(
                f"{len(times)} time points but {states.shape[0]} state rows"
            )
        if len(times) > 1 and not np.all(np.diff(times) > 0):
            raise ValueError("time axis must be strictly increasing")
        labels = tuple(self.labels) or tuple(f"y{i + 1}" for i in range(states.shape[1]))
        if len(labels) != states.shape[1]:
            raise ValueError("one label per state dimension required")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "labels", labels)

    @property
    def dim(self):
        return self.states.shape[1]

    def __len__(self):
        return len(self.times)

    def slice(self, start=None, stop=None):
        return Trajectory(self.times[start:stop], self.states[start:stop], self.labels)

    def to_csv(self, path=None):
        """Write ``t,y1,...,yn`` rows at 17 significant digits (LF endings)."""
        buf = io.StringIO()
        buf.write(",".join(("t",) + self.labels) + "\n")
        for t, row in zip(self.times, self.states):
            buf.write(",".join(f"{v:.17g}" for v in (t, *row)) + "\n")
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", encoding="utf-8", newline="\n") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_csv(cls, path):
        with open(path, encoding="utf-8") as fh:
            header = fh.readline().strip().split(",")
            data = np.loadtxt(fh, delimiter=",", ndmin=2)
        if header[0] != "t":
            raise ValueError(f"{path}: first column must be 't'")
        return cls(data[:, 0], data[:, 1:], tuple(header[1:]))


def check_same_grid(a, b):
    if a.states.shape != b.states.shape:
        raise ValueError(f"shape mismatch: {a.states.shape} vs {b.states.shape}")
    if not np.array_equal(a.times, b.times):
        raise ValueError("time grids differ")
