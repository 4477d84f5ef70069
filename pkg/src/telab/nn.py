"""Small dense feedforward networks with analytic backpropagation.

Everything is double precision. Hidden layers use a leaky rectifier; the
output layer is either linear (critic) or a per-group softmax (actor), where
each group covers one session's block of path logits so every block sums
to one.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path as FsPath

import numpy as np

CHECKPOINT_VERSION = 1


@dataclass
class MlpParams:
    weights: list[np.ndarray]          # each (fan_out, fan_in)
    biases: list[np.ndarray]           # each (fan_out,)
    hidden_slope: float = 0.01         # leaky-rectifier negative slope
    output_mode: str = "identity"      # "identity" | "grouped_softmax"
    groups: tuple[int, ...] | None = None

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def output_dim(self) -> int:
        return self.weights[-1].shape[0]


@dataclass
class Gradients:
    weights: list[np.ndarray]
    biases: list[np.ndarray]


@dataclass
class ForwardCache:
    x: np.ndarray
    pre: list[np.ndarray]    # pre-activations, one per layer
    post: list[np.ndarray]   # hidden activations (len = n_layers - 1)
    y: np.ndarray


@dataclass
class AdamState:
    lr: float
    m_w: list[np.ndarray]
    v_w: list[np.ndarray]
    m_b: list[np.ndarray]
    v_b: list[np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def init_params(
    input_dim: int,
    output_dim: int,
    hidden: tuple[int, ...] = (64, 32),
    output_mode: str = "identity",
    groups: tuple[int, ...] | None = None,
    hidden_slope: float = 0.01,
    seed: int = 0,
) -> MlpParams:
    """Fan-in scaled uniform init (U[-1/sqrt(fan_in), 1/sqrt(fan_in)]), zero biases."""
    sizes = (input_dim, *hidden, output_dim)
    if any(s < 1 for s in sizes):
        raise ValueError(f"zero-width layer in {sizes}")
    if output_mode not in ("identity", "grouped_softmax"):
        raise ValueError(f"unknown output mode {output_mode!r}")
    if output_mode == "grouped_softmax":
        if not groups or sum(groups) != output_dim or any(g < 1 for g in groups):
            raise ValueError(f"groups {groups} must partition output_dim {output_dim}")
        groups = tuple(int(g) for g in groups)
    else:
        groups = None
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes, sizes[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MlpParams(weights, biases, hidden_slope, output_mode, groups)


def _leaky(z: np.ndarray, slope: float) -> np.ndarray:
    return np.where(z >= 0, z, slope * z)


def _leaky_grad(z: np.ndarray, slope: float) -> np.ndarray:
    return np.where(z >= 0, 1.0, slope)


def _grouped_softmax(logits: np.ndarray, groups: tuple[int, ...]) -> np.ndarray:
    out = np.empty_like(logits)
    start = 0
    for g in groups:
        block = logits[start:start + g]
        e = np.exp(block - block.max())
        out[start:start + g] = e / e.sum()
        start += g
    return out


def forward(p: MlpParams, x: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    x = np.asarray(x, dtype=float)
    if x.shape != (p.input_dim,):
        raise ValueError(f"input shape {x.shape} != ({p.input_dim},)")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite input")
    pre, post = [], []
    h = x
    last = len(p.weights) - 1
    for l, (W, b) in enumerate(zip(p.weights, p.biases)):
        z = W @ h + b
        pre.append(z)
        if l < last:
            h = _leaky(z, p.hidden_slope)
            post.append(h)
    if p.output_mode == "grouped_softmax":
        y = _grouped_softmax(pre[-1], p.groups)
    else:
        y = pre[-1].copy()
    return y, ForwardCache(x=x, pre=pre, post=post, y=y)


def _output_grad_to_logits(p: MlpParams, cache: ForwardCache,
                           output_grad: np.ndarray) -> np.ndarray:
    if p.output_mode != "grouped_softmax":
        return np.asarray(output_grad, dtype=float)
    g = np.asarray(output_grad, dtype=float)
    dz = np.empty_like(g)
    start = 0
    for size in p.groups:
        y = cache.y[start:start + size]
        gb = g[start:start + size]
        dz[start:start + size] = y * (gb - float(y @ gb))
        start += size
    return dz


def _backward(p: MlpParams, cache: ForwardCache,
              output_grad: np.ndarray) -> tuple[Gradients, np.ndarray]:
    output_grad = np.asarray(output_grad, dtype=float)
    if output_grad.shape != (p.output_dim,):
        raise ValueError(f"output_grad shape {output_grad.shape} != ({p.output_dim},)")
    dz = _output_grad_to_logits(p, cache, output_grad)
    n = len(p.weights)
    gw: list[np.ndarray] = [None] * n
    gb: list[np.ndarray] = [None] * n
    for l in range(n - 1, -1, -1):
        h_prev = cache.post[l - 1] if l > 0 else cache.x
        gw[l] = np.outer(dz, h_prev)
        gb[l] = dz.copy()
        dh = p.weights[l].T @ dz
        if l > 0:
            dz = dh * _leaky_grad(cache.pre[l - 1], p.hidden_slope)
    return Gradients(gw, gb), dh


def backward_params(p: MlpParams, cache: ForwardCache,
                    output_grad: np.ndarray) -> Gradients:
    """Exact gradient w.r.t. weights/biases of the scalar objective whose
    output-gradient is supplied."""
    grads, _ = _backward(p, cache, output_grad)
    return grads


def backward_input(p: MlpParams, cache: ForwardCache,
                   output_grad: np.ndarray) -> np.ndarray:
    """Exact gradient of the same scalar objective w.r.t. the input vector."""
    _, dx = _backward(p, cache, output_grad)
    return dx


def zeros_like_grads(p: MlpParams) -> Gradients:
    return Gradients([np.zeros_like(w) for w in p.weights],
                     [np.zeros_like(b) for b in p.biases])


def accumulate(acc: Gradients, g: Gradients, scale: float = 1.0) -> None:
    for a, b in zip(acc.weights, g.weights):
        a += scale * b
    for a, b in zip(acc.biases, g.biases):
        a += scale * b


def init_adam(p: MlpParams, lr: float) -> AdamState:
    return AdamState(
        lr=lr,
        m_w=[np.zeros_like(w) for w in p.weights],
        v_w=[np.zeros_like(w) for w in p.weights],
        m_b=[np.zeros_like(b) for b in p.biases],
        v_b=[np.zeros_like(b) for b in p.biases],
    )


def adam_step(p: MlpParams, g: Gradients, st: AdamState) -> tuple[MlpParams, AdamState]:
    """One bias-corrected Adam descent step on the supplied gradient (in place)."""
    for arr in (*g.weights, *g.biases):
        if not np.all(np.isfinite(arr)):
            raise ValueError("non-finite gradient")
    st.step += 1
    c1 = 1.0 - st.beta1 ** st.step
    c2 = 1.0 - st.beta2 ** st.step
    for W, gw, m, v in zip(p.weights, g.weights, st.m_w, st.v_w):
        m *= st.beta1
        m += (1 - st.beta1) * gw
        v *= st.beta2
        v += (1 - st.beta2) * gw * gw
        W -= st.lr * (m / c1) / (np.sqrt(v / c2) + st.eps)
    for b, gb, m, v in zip(p.biases, g.biases, st.m_b, st.v_b):
        m *= st.beta1
        m += (1 - st.beta1) * gb
        v *= st.beta2
        v += (1 - st.beta2) * gb * gb
        b -= st.lr * (m / c1) / (np.sqrt(v / c2) + st.eps)
    return p, st


def soft_update(target: MlpParams, online: MlpParams, tau: float) -> MlpParams:
    """target <- tau * online + (1 - tau) * target, element-wise, in place."""
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau must be in [0, 1], got {tau}")
    for tw, ow in zip(target.weights, online.weights):
        if tw.shape != ow.shape:
            raise ValueError("shape mismatch in soft_update")
        tw *= 1.0 - tau
        tw += tau * ow
    for tb, ob in zip(target.biases, online.biases):
        tb *= 1.0 - tau
        tb += tau * ob
    return target


def clone_params(p: MlpParams) -> MlpParams:
    return MlpParams([w.copy() for w in p.weights], [b.copy() for b in p.biases],
                     p.hidden_slope, p.output_mode, p.groups)


def save_params(path: str | FsPath, p: MlpParams) -> None:
    """Checkpoint: numpy .npz archive with a JSON header (see README)."""
    header = {
        "version": CHECKPOINT_VERSION,
        "n_layers": len(p.weights),
        "hidden_slope": p.hidden_slope,
        "output_mode": p.output_mode,
        "groups": list(p.groups) if p.groups else None,
    }
    arrays = {"header": np.frombuffer(json.dumps(header).encode(), dtype=np.uint8)}
    for i, (w, b) in enumerate(zip(p.weights, p.biases)):
        arrays[f"W{i}"] = w
        arrays[f"b{i}"] = b
    np.savez(path, **arrays)


def load_params(path: str | FsPath) -> MlpParams:
    with np.load(path) as data:
        header = json.loads(bytes(data["header"]).decode())
        if header["version"] != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {header['version']}")
        n = header["n_layers"]
        weights = [data[f"W{i}"] for i in range(n)]
        biases = [data[f"b{i}"] for i in range(n)]
    groups = header["groups"]
    return MlpParams(weights, biases, header["hidden_slope"], header["output_mode"],
                     tuple(groups) if groups else None)
