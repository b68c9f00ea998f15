"""Fully connected ReLU networks used as vector fields, with exact derivatives.

Layers compute ``W @ x + b``; every layer except the last is followed by a
ReLU.  The ReLU derivative at exactly zero is taken as zero.
"""

from dataclasses import dataclass
import json

import numpy as np

FORMAT_VERSION = 1


@dataclass(frozen=True)
class MlpParams:
    weights: tuple
    biases: tuple

    def __post_init__(self):
        ws = tuple(np.asarray(w, dtype=float) for w in self.weights)
        bs = tuple(np.asarray(b, dtype=float) for b in self.biases)
        if len(ws) == 0 or len(ws) != len(bs):
            raise ValueError("need one bias per weight matrix")
        for i, (w, b) in enumerate(zip(ws, bs)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ValueError(f"layer {i}: weight {w.shape} / bias {b.shape} mismatch")
            if i and w.shape[1] != ws[i - 1].shape[0]:
                raise ValueError(f"layer {i} input {w.shape[1]} != previous output {ws[i - 1].shape[0]}")
        object.__setattr__(self, "weights", ws)
        object.__setattr__(self, "biases", bs)

    @property
    def shape(self):
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    @property
    def n_params(self):
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def to_vector(self):
        return np.concatenate([np.concatenate([w.ravel(), b]) for w, b in zip(self.weights, self.biases)])

    @classmethod
    def from_vector(cls, vec, shape):
        ws, bs, i = [], [], 0
        for n_in, n_out in zip(shape[:-1], shape[1:]):
            ws.append(vec[i:i + n_in * n_out].reshape(n_out, n_in))
            i += n_in * n_out
            bs.append(vec[i:i + n_out])
            i += n_out
        if i != len(vec):
            raise ValueError(f"vector of length {len(vec)} does not fit shape {shape}")
        return cls(tuple(ws), tuple(bs))

    def to_dict(self, **extra):
        doc = {
            "format_version": FORMAT_VERSION,
            "shape": self.shape,
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }
        doc.update(extra)
        return doc

    @classmethod
    def from_dict(cls, doc):
        if doc.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"unsupported params format_version {doc.get('format_version')!r}")
        p = cls(tuple(doc["weights"]), tuple(doc["biases"]))
        if p.shape != list(doc["shape"]):
            raise ValueError("declared shape does not match arrays")
        return p

    def save(self, path, **extra):
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(self.to_dict(**extra), fh, indent=1)
            fh.write("\n")

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def init_params(shape, seed):
    """Glorot-uniform weights, zero biases."""
    shape = list(shape)
    if len(shape) < 2 or min(shape) < 1:
        raise ValueError(f"invalid net shape {shape}")
    rng = np.random.default_rng(seed)
    ws, bs = [], []
    for n_in, n_out in zip(shape[:-1], shape[1:]):
        lim = np.sqrt(6.0 / (n_in + n_out))
        ws.append(rng.uniform(-lim, lim, size=(n_out, n_in)))
        bs.append(np.zeros(n_out))
    return MlpParams(tuple(ws), tuple(bs))


def _check_input(p, x):
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != p.weights[0].shape[1]:
        raise ValueError(f"input length {x.shape[-1]} != first layer width {p.weights[0].shape[1]}")
    return x


def mlp_forward(p, x):
    """Evaluate the network on one input vector or a batch (rows)."""
    x = _check_input(p, x)
    last = len(p.weights) - 1
    for i, (w, b) in enumerate(zip(p.weights, p.biases)):
        x = x @ w.T + b
        if i < last:
            x = np.maximum(x, 0.0)
    return x


def _forward_cache(p, x):
    acts, masks = [x], []
    last = len(p.weights) - 1
    for i, (w, b) in enumerate(zip(p.weights, p.biases)):
        z = x @ w.T + b
        if i < last:
            m = z > 0.0
            masks.append(m)
            x = z * m
        else:
            x = z
        acts.append(x)
    return acts, masks


def _backward(p, x, cotangent):
    acts, masks = _forward_cache(p, x)
    return _backprop(p, acts, masks, cotangent)


def _backprop(p, acts, masks, cotangent):
    g = np.asarray(cotangent, dtype=float)
    if g.shape != acts[-1].shape:
        raise ValueError(f"cotangent shape {g.shape} != output shape {acts[-1].shape}")
    gw, gb = [None] * len(p.weights), [None] * len(p.weights)
    for i in range(len(p.weights) - 1, -1, -1):
        if i < len(p.weights) - 1:
            g = g * masks[i]
        a = acts[i]
        if g.ndim == 1:
            gw[i] = g[:, None] * a[None, :]
            gb[i] = g.copy()
        else:
            gw[i] = g.T @ a
            gb[i] = g.sum(axis=0)
        g = g @ p.weights[i]
    return g, gw, gb


def mlp_vjp(p, x, cotangent):
    """Reverse-mode product of ``cotangent`` with the network Jacobians.

    Returns ``(input_grad, param_grad)``; for batched input the parameter
    gradient is summed over the batch.
    """
    g, gw, gb = _backward(p, _check_input(p, x), cotangent)
    return g, MlpParams(tuple(gw), tuple(gb))


def mlp_jacobian_state(p, x):
    """Jacobian (out x in) of the network output with respect to one input."""
    x = _check_input(p, x)
    if x.ndim != 1:
        raise ValueError("Jacobian is defined for a single input vector")
    _, masks = _forward_cache(p, x)
    j = p.weights[0]
    for i in range(1, len(p.weights)):
        j = p.weights[i] @ (masks[i - 1][:, None] * j)
    return j


class MlpField:
    """Neural vector field ``f(h, t) = mlp([drive(t), h])``.

    Without a drive the network sees the state only (autonomous system).  The
    drive is any callable ``t -> array`` of external inputs placed ahead of the
    state in the network input.
    """

    def __init__(self, params, drive=None):
        self.params = params
        self.drive = drive
        self.n_params = params.n_params
        self._drive_cache = {}

    def inputs(self, h, t):
        if self.drive is None:
            return h
        u = self._drive_cache.get(t)
        if u is None:
            u = np.atleast_1d(np.asarray(self.drive(t), dtype=float))
            self._drive_cache[t] = u
        if h.ndim == 2:
            u = np.broadcast_to(u, (h.shape[0], u.shape[-1]))
        return np.concatenate([u, h], axis=-1)

    @property
    def n_drive(self):
        return self.params.shape[0] - self.params.shape[-1]

    def __call__(self, h, t):
        return mlp_forward(self.params, self.inputs(h, t))

    def vjp(self, h, t, cotangent):
        return self.linearize(h, t)[1](cotangent)

    def linearize(self, h, t):
        """Return ``f(h, t)`` and a pullback ``cot -> (h_bar, theta_bar)``."""
        p = self.params
        acts, masks = _forward_cache(p, self.inputs(h, t))
        nd = self.n_drive

        def pullback(cotangent):
            gx, gw, gb = _backprop(p, acts, masks, cotangent)
            flat = np.concatenate([v for pair in zip(gw, gb) for v in (pair[0].ravel(), pair[1])])
            return gx[..., nd:], flat

        return acts[-1], pullback

    def jacobian(self, h, t=0.0):
        return mlp_jacobian_state(self.params, self.inputs(h, t))[:, self.n_drive:]
