"""Encoder / classifier / projector MLP with hand-written backprop and SGD.

All parameters live in one flat vector; per-layer weights are views into it,
so the canonical flattening used by gradient vectors is simply that vector.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class NetDims:
    d_in: int
    hidden: tuple[int, ...] = (64, 64)
    num_classes: int = 10
    proj_hidden: int = 64
    d_proj: int = 32

    def layer_shapes(self) -> list[tuple[str, tuple[int, int]]]:
        shapes = []
        prev = self.d_in
        for i, h in enumerate(self.hidden):
            shapes.append((f"backbone{i}", (prev, h)))
            prev = h
        shapes.append(("classifier", (prev, self.num_classes)))
        shapes.append(("proj0", (prev, self.proj_hidden)))
        shapes.append(("proj1", (self.proj_hidden, self.d_proj)))
        return shapes

    def num_params(self) -> int:
        return sum(a * b + b for _, (a, b) in self.layer_shapes())


class NetState:
    """Parameters of one network. Treated as immutable once built."""

    def __init__(self, dims: NetDims, theta: np.ndarray):
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != (dims.num_params(),):
            raise ValueError(f"expected {dims.num_params()} parameters, got {theta.shape}")
        self.dims = dims
        self.theta = theta
        self.layers: dict[str, tuple[np.ndarray, np.ndarray]] = {}
        self.slices: dict[str, tuple[slice, slice]] = {}
        off = 0
        for name, (a, b) in dims.layer_shapes():
            ws = slice(off, off + a * b)
            bs = slice(off + a * b, off + a * b + b)
            self.layers[name] = (theta[ws].reshape(a, b), theta[bs])
            self.slices[name] = (ws, bs)
            off += a * b + b

    @classmethod
    def init(cls, dims: NetDims, seed=0) -> "NetState":
        """He-normal weights, zero biases."""
        rng = np.random.default_rng(seed)
        theta = np.zeros(dims.num_params())
        net = cls(dims, theta)
        for name, (a, _) in dims.layer_shapes():
            ws, _ = net.slices[name]
            theta[ws] = rng.standard_normal(ws.stop - ws.start) * np.sqrt(2.0 / a)
        return cls(dims, theta)

    def with_theta(self, theta: np.ndarray) -> "NetState":
        return NetState(self.dims, theta)

    def block(self, vec: np.ndarray, prefix: str) -> np.ndarray:
        """Entries of a flat vector that belong to layers whose name starts with ``prefix``."""
        parts = [np.r_[ws, bs] for name, (ws, bs) in self.slices.items() if name.startswith(prefix)]
        return vec[np.concatenate(parts)]


@dataclass
class ForwardOut:
    z: np.ndarray
    t: np.ndarray
    q: np.ndarray
    cache: dict = field(repr=False)


def softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def forward(net: NetState, x: np.ndarray) -> ForwardOut:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != net.dims.d_in:
        raise ValueError(f"input must be b x {net.dims.d_in}, got {x.shape}")
    acts = [x]
    h = x
    for i in range(len(net.dims.hidden)):
        W, b = net.layers[f"backbone{i}"]
        h = np.maximum(h @ W + b, 0.0)
        acts.append(h)
    Wc, bc = net.layers["classifier"]
    z = h @ Wc + bc
    W0, b0 = net.layers["proj0"]
    ph = np.maximum(h @ W0 + b0, 0.0)
    W1, b1 = net.layers["proj1"]
    u = ph @ W1 + b1
    norm = np.sqrt(np.sum(u * u, axis=1, keepdims=True))
    q = u / np.maximum(norm, 1e-12)
    cache = {"theta": net.theta, "acts": acts, "ph": ph, "norm": norm, "q": q}
    return ForwardOut(z, softmax(z), q, cache)


def backward(net: NetState, out: ForwardOut, dz=None, dq=None) -> np.ndarray:
    """Reverse-mode gradient of a scalar given its gradients on logits and unit embeddings."""
    cache = out.cache
    if cache["theta"] is not net.theta:
        raise ValueError("forward cache does not belong to this network state")
    grad = np.zeros_like(net.theta)
    acts = cache["acts"]
    h = acts[-1]
    dh = np.zeros_like(h)

    if dz is not None:
        Wc, _ = net.layers["classifier"]
        ws, bs = net.slices["classifier"]
        grad[ws] = (h.T @ dz).ravel()
        grad[bs] = dz.sum(axis=0)
        dh += dz @ Wc.T

    if dq is not None:
        q, norm, ph = cache["q"], cache["norm"], cache["ph"]
        # Jacobian of u -> u/||u||
        du = (dq - q * np.sum(q * dq, axis=1, keepdims=True)) / np.maximum(norm, 1e-12)
        W1, _ = net.layers["proj1"]
        ws, bs = net.slices["proj1"]
        grad[ws] = (ph.T @ du).ravel()
        grad[bs] = du.sum(axis=0)
        dph = (du @ W1.T) * (ph > 0)
        W0, _ = net.layers["proj0"]
        ws, bs = net.slices["proj0"]
        grad[ws] = (h.T @ dph).ravel()
        grad[bs] = dph.sum(axis=0)
        dh += dph @ W0.T

    for i in reversed(range(len(net.dims.hidden))):
        dpre = dh * (acts[i + 1] > 0)
        W, _ = net.layers[f"backbone{i}"]
        ws, bs = net.slices[f"backbone{i}"]
        grad[ws] = (acts[i].T @ dpre).ravel()
        grad[bs] = dpre.sum(axis=0)
        dh = dpre @ W.T
    return grad


class DivergenceError(FloatingPointError):
    """Raised when a gradient or loss turns non-finite."""


@dataclass
class SGDState:
    velocity: np.ndarray | None = None


def sgd_step(net: NetState, grad: np.ndarray, lr: float, momentum: float = 0.0,
             weight_decay: float = 0.0, state: SGDState | None = None) -> NetState:
    """Heavy-ball SGD: v <- mu v + (g + wd theta); theta <- theta - lr v."""
    if lr < 0:
        raise ValueError("lr must be non-negative")
    if not np.all(np.isfinite(grad)):
        raise DivergenceError("non-finite gradient")
    g = grad + weight_decay * net.theta if weight_decay else grad
    if momentum:
        if state is None:
            raise ValueError("momentum needs an SGDState")
        v = g.copy() if state.velocity is None else momentum * state.velocity + g
        state.velocity = v
        g = v
    return net.with_theta(net.theta - lr * g)


def save_checkpoint(net: NetState, path: str | Path) -> None:
    """Flat parameters as one-column CSV plus ``<path>.json`` holding the dims."""
    path = Path(path)
    path.write_text("theta\n" + "".join(f"{float(v)!r}\n" for v in net.theta))
    d = net.dims
    meta = {"d_in": d.d_in, "hidden": list(d.hidden), "num_classes": d.num_classes,
            "proj_hidden": d.proj_hidden, "d_proj": d.d_proj}
    Path(str(path) + ".json").write_text(json.dumps(meta, indent=2) + "\n")


def load_checkpoint(path: str | Path) -> NetState:
    path = Path(path)
    meta = json.loads(Path(str(path) + ".json").read_text())
    meta["hidden"] = tuple(meta["hidden"])
    lines = path.read_text().split()
    theta = np.array([float(v) for v in lines[1:]])
    return NetState(NetDims(**meta), theta)
