"""Minimal numpy neural-network toolkit with explicit backward passes.

Everything is float64 and deterministic given a seed. Layers cache what their
backward pass needs during forward; gradients accumulate into ``d*`` buffers
until ``zero_grads``. Two introspection methods keep optimizers and
checkpoints honest:

* ``variables(prefix)``   -> [(name, array)] every persistent array
* ``trainables(prefix)``  -> [(name, value, grad)] excluding frozen layers

Shapes: Linear/LayerNorm/GELU accept any (..., d); attention expects
(B, T, d).
"""

from __future__ import annotations

import json
import math
from typing import Iterable, Optional

import numpy as np
from scipy.special import erf

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def softmax(z: np.ndarray, axis: int = -1) -> np.ndarray:
    z = z - np.max(z, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


def gelu(x: np.ndarray) -> np.ndarray:
    """Exact Gaussian-CDF GELU: x * Phi(x)."""
    return 0.5 * x * (1.0 + erf(x * _INV_SQRT2))


def gelu_grad(x: np.ndarray) -> np.ndarray:
    """d/dx [x * Phi(x)] = Phi(x) + x * phi(x)."""
    return 0.5 * (1.0 + erf(x * _INV_SQRT2)) + x * np.exp(-0.5 * x * x) * _INV_SQRT2PI


def _flat(x: np.ndarray) -> np.ndarray:
    return x.reshape(-1, x.shape[-1])


class Linear:
    """Affine map on the last axis. ``frozen`` layers skip grad accumulation
    and stay out of ``trainables``."""

    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator,
                 init_scale: Optional[float] = None):
        scale = init_scale if init_scale is not None else 1.0 / math.sqrt(d_in)
        self.w = rng.normal(0.0, scale, size=(d_in, d_out))
        self.b = np.zeros(d_out)
        self.dw = np.zeros_like(self.w)
        self.db = np.zeros_like(self.b)
        self.frozen = False

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._x = x
        return x @ self.w + self.b

    def backward(self, dout: np.ndarray) -> np.ndarray:
        if not self.frozen:
            self.dw += _flat(self._x).T @ _flat(dout)
            self.db += _flat(dout).sum(axis=0)
        return dout @ self.w.T

    def variables(self, prefix: str):
        return [(f"{prefix}.w", self.w), (f"{prefix}.b", self.b)]

    def trainables(self, prefix: str):
        if self.frozen:
            return []
        return [(f"{prefix}.w", self.w, self.dw), (f"{prefix}.b", self.b, self.db)]

    def zero_grads(self):
        self.dw[...] = 0.0
        self.db[...] = 0.0


class LoRALinear:
    """A frozen Linear plus a trainable low-rank update.

    Output is ``x @ W + b + (alpha/rank) * drop(x) @ A @ B`` with A drawn
    normal(0, 1/sqrt(d_in)) and B zeros, so a freshly wrapped layer computes
    bitwise exactly what the base layer did. Dropout (inverted scaling) hits
    only the adapter input and only in train mode.
    """

    def __init__(self, base: Linear, rank: int, alpha: float, dropout: float,
                 rng: np.random.Generator):
        d_in, d_out = base.w.shape
        if not 1 <= rank <= min(d_in, d_out):
            raise ValueError(f"rank must be in [1, {min(d_in, d_out)}], got {rank}")
        base.frozen = True
        self.base = base
        self.rank = rank
        self.alpha = float(alpha)
        self.scale = self.alpha / rank
        self.p_drop = float(dropout)
        self.a = rng.normal(0.0, 1.0 / math.sqrt(d_in), size=(d_in, rank))
        self.b = np.zeros((rank, d_out))
        self.da = np.zeros_like(self.a)
        self.db = np.zeros_like(self.b)
        self._rng = rng
        self.train_mode = False

    def forward(self, x: np.ndarray) -> np.ndarray:
        y = self.base.forward(x)
        if self.train_mode and self.p_drop > 0.0:
            keep = (self._rng.random(x.shape) >= self.p_drop) / (1.0 - self.p_drop)
        else:
            keep = None
        xd = x if keep is None else x * keep
        self._xd = xd
        self._keep = keep
        self._xa = xd @ self.a
        return y + self.scale * (self._xa @ self.b)

    def backward(self, dout: np.ndarray) -> np.ndarray:
        dx = self.base.backward(dout)  # frozen base: only propagates
        d_xa = self.scale * (dout @ self.b.T)
        self.db += self.scale * (_flat(self._xa).T @ _flat(dout))
        self.da += _flat(self._xd).T @ _flat(d_xa)
        d_xd = d_xa @ self.a.T
        if self._keep is not None:
            d_xd = d_xd * self._keep
        return dx + d_xd

    def merged_weight(self) -> np.ndarray:
        return self.base.w + self.scale * (self.a @ self.b)

    def variables(self, prefix: str):
        return self.base.variables(prefix) + [
            (f"{prefix}.lora_a", self.a),
            (f"{prefix}.lora_b", self.b),
        ]

    def trainables(self, prefix: str):
        return [(f"{prefix}.lora_a", self.a, self.da),
                (f"{prefix}.lora_b", self.b, self.db)]

    def zero_grads(self):
        self.base.zero_grads()
        self.da[...] = 0.0
        self.db[...] = 0.0


class LayerNorm:
    def __init__(self, d: int, eps: float = 1e-5):
        self.gamma = np.ones(d)
        self.beta = np.zeros(d)
        self.dgamma = np.zeros_like(self.gamma)
        self.dbeta = np.zeros_like(self.beta)
        self.eps = eps

    def forward(self, x: np.ndarray) -> np.ndarray:
        mu = x.mean(axis=-1, keepdims=True)
        var = x.var(axis=-1, keepdims=True)
        self._inv = 1.0 / np.sqrt(var + self.eps)
        self._xhat = (x - mu) * self._inv
        return self.gamma * self._xhat + self.beta

    def backward(self, dout: np.ndarray) -> np.ndarray:
        xhat = self._xhat
        self.dgamma += (_flat(dout) * _flat(xhat)).sum(axis=0)
        self.dbeta += _flat(dout).sum(axis=0)
        dxhat = dout * self.gamma
        m1 = dxhat.mean(axis=-1, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
        return self._inv * (dxhat - m1 - xhat * m2)

    def variables(self, prefix: str):
        return [(f"{prefix}.gamma", self.gamma), (f"{prefix}.beta", self.beta)]

    def trainables(self, prefix: str):
        return [(f"{prefix}.gamma", self.gamma, self.dgamma),
                (f"{prefix}.beta", self.beta, self.dbeta)]

    def zero_grads(self):
        self.dgamma[...] = 0.0
        self.dbeta[...] = 0.0


class GELU:
    def forward(self, x: np.ndarray) -> np.ndarray:
        self._x = x
        return gelu(x)

    def backward(self, dout: np.ndarray) -> np.ndarray:
        return dout * gelu_grad(self._x)

    def variables(self, prefix: str):
        return []

    def trainables(self, prefix: str):
        return []

    def zero_grads(self):
        pass


class MultiHeadAttention:
    """Scaled dot-product attention over (B, T, d), optionally causal."""

    def __init__(self, d: int, heads: int, rng: np.random.Generator, causal: bool):
        if d % heads != 0:
            raise ValueError(f"model dim {d} not divisible by {heads} heads")
        self.d = d
        self.heads = heads
        self.dh = d // heads
        self.causal = causal
        self.wq = Linear(d, d, rng)
        self.wk = Linear(d, d, rng)
        self.wv = Linear(d, d, rng)
        self.wo = Linear(d, d, rng)

    def _split(self, x: np.ndarray) -> np.ndarray:
        B, T, _ = x.shape
        return x.reshape(B, T, self.heads, self.dh).transpose(0, 2, 1, 3)

    def _merge(self, x: np.ndarray) -> np.ndarray:
        B, H, T, dh = x.shape
        return x.transpose(0, 2, 1, 3).reshape(B, T, H * dh)

    def forward(self, x: np.ndarray) -> np.ndarray:
        B, T, _ = x.shape
        q = self._split(self.wq.forward(x))
        k = self._split(self.wk.forward(x))
        v = self._split(self.wv.forward(x))
        scores = (q @ k.transpose(0, 1, 3, 2)) / math.sqrt(self.dh)
        if self.causal:
            mask = np.triu(np.ones((T, T), dtype=bool), k=1)
            scores = np.where(mask, -np.inf, scores)
        p = softmax(scores, axis=-1)
        ctx = p @ v
        self._q, self._k, self._v, self._p = q, k, v, p
        return self.wo.forward(self._merge(ctx))

    def backward(self, dout: np.ndarray) -> np.ndarray:
        d_ctx = self._split(self.wo.backward(dout))
        dp = d_ctx @ self._v.transpose(0, 1, 3, 2)
        dv = self._p.transpose(0, 1, 3, 2) @ d_ctx
        ds = self._p * (dp - np.sum(dp * self._p, axis=-1, keepdims=True))
        ds = ds / math.sqrt(self.dh)
        dq = ds @ self._k
        dk = ds.transpose(0, 1, 3, 2) @ self._q
        dx = self.wq.backward(self._merge(dq))
        dx = dx + self.wk.backward(self._merge(dk))
        dx = dx + self.wv.backward(self._merge(dv))
        return dx

    def _parts(self):
        return [("wq", self.wq), ("wk", self.wk), ("wv", self.wv), ("wo", self.wo)]

    def variables(self, prefix: str):
        out = []
        for name, layer in self._parts():
            out += layer.variables(f"{prefix}.{name}")
        return out

    def trainables(self, prefix: str):
        out = []
        for name, layer in self._parts():
            out += layer.trainables(f"{prefix}.{name}")
        return out

    def zero_grads(self):
        for _, layer in self._parts():
            layer.zero_grads()


class MLP:
    """Position-wise feed-forward: Linear(d, 4d) -> GELU -> Linear(4d, d)."""

    def __init__(self, d: int, rng: np.random.Generator, hidden_mult: int = 4):
        self.fc1 = Linear(d, hidden_mult * d, rng)
        self.act = GELU()
        self.fc2 = Linear(hidden_mult * d, d, rng)

    def forward(self, x):
        return self.fc2.forward(self.act.forward(self.fc1.forward(x)))

    def backward(self, dout):
        return self.fc1.backward(self.act.backward(self.fc2.backward(dout)))

    def variables(self, prefix):
        return self.fc1.variables(f"{prefix}.fc1") + self.fc2.variables(f"{prefix}.fc2")

    def trainables(self, prefix):
        return self.fc1.trainables(f"{prefix}.fc1") + self.fc2.trainables(f"{prefix}.fc2")

    def zero_grads(self):
        self.fc1.zero_grads()
        self.fc2.zero_grads()


class TransformerBlock:
    """Pre-norm residual block: x + attn(ln1(x)), then x + mlp(ln2(x))."""

    def __init__(self, d: int, heads: int, rng: np.random.Generator, causal: bool):
        self.ln1 = LayerNorm(d)
        self.attn = MultiHeadAttention(d, heads, rng, causal)
        self.ln2 = LayerNorm(d)
        self.mlp = MLP(d, rng)

    def forward(self, x):
        x = x + self.attn.forward(self.ln1.forward(x))
        x = x + self.mlp.forward(self.ln2.forward(x))
        return x

    def backward(self, dout):
        dout = dout + self.ln2.backward(self.mlp.backward(dout))
        dout = dout + self.ln1.backward(self.attn.backward(dout))
        return dout

    def _parts(self):
        return [("ln1", self.ln1), ("attn", self.attn), ("ln2", self.ln2), ("mlp", self.mlp)]

    def variables(self, prefix):
        out = []
        for name, layer in self._parts():
            out += layer.variables(f"{prefix}.{name}")
        return out

    def trainables(self, prefix):
        out = []
        for name, layer in self._parts():
            out += layer.trainables(f"{prefix}.{name}")
        return out

    def zero_grads(self):
        for _, layer in self._parts():
            layer.zero_grads()


class Embedding:
    def __init__(self, n: int, d: int, rng: np.random.Generator, init_scale: float = 0.02):
        self.table = rng.normal(0.0, init_scale, size=(n, d))
        self.dtable = np.zeros_like(self.table)
        self.frozen = False

    def forward(self, ids) -> np.ndarray:
        ids = np.asarray(ids, dtype=np.int64)
        self._ids = ids
        return self.table[ids]

    def backward(self, dout: np.ndarray) -> None:
        if not self.frozen:
            np.add.at(self.dtable, self._ids, dout)

    def variables(self, prefix):
        return [(f"{prefix}.table", self.table)]

    def trainables(self, prefix):
        if self.frozen:
            return []
        return [(f"{prefix}.table", self.table, self.dtable)]

    def zero_grads(self):
        self.dtable[...] = 0.0


class Adam:
    """Adam with decoupled weight decay and per-group learning rates.

    ``groups`` is a list of dicts: {"params": [(name, value, grad)],
    "lr": float, "weight_decay": float (optional)}. Parameter arrays are
    updated in place. A zero gradient leaves the parameter untouched
    (weight decay aside), since m and v stay exactly zero.
    """

    def __init__(self, groups, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.groups = []
        seen = set()
        for g in groups:
            params = list(g["params"])
            for name, _, _ in params:
                if name in seen:
                    raise ValueError(f"parameter {name!r} appears in two groups")
                seen.add(name)
            self.groups.append({
                "params": params,
                "lr": float(g["lr"]),
                "weight_decay": float(g.get("weight_decay", 0.0)),
            })
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self._m = {name: np.zeros_like(v) for g in self.groups for name, v, _ in g["params"]}
        self._v = {name: np.zeros_like(v) for g in self.groups for name, v, _ in g["params"]}

    def step(self):
        self.t += 1
        b1c = 1.0 - self.beta1**self.t
        b2c = 1.0 - self.beta2**self.t
        for g in self.groups:
            lr, wd = g["lr"], g["weight_decay"]
            for name, value, grad in g["params"]:
                if wd:
                    value *= 1.0 - lr * wd
                m = self._m[name]
                v = self._v[name]
                m *= self.beta1
                m += (1.0 - self.beta1) * grad
                v *= self.beta2
                v += (1.0 - self.beta2) * (grad * grad)
                value -= lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)

    def zero_grads(self):
        for g in self.groups:
            for _, _, grad in g["params"]:
                grad[...] = 0.0


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

CHECKPOINT_FORMAT = 1


def save_checkpoint(path, kind: str, config: dict, variables: Iterable[tuple[str, np.ndarray]]) -> None:
    """Write a versioned npz checkpoint: config header plus named arrays."""
    arrays = dict(variables)
    meta = json.dumps({"format": CHECKPOINT_FORMAT, "kind": kind, "config": config})
    np.savez(path, __meta__=np.str_(meta), **arrays)


def load_checkpoint(path) -> tuple[str, dict, dict[str, np.ndarray]]:
    """Read a checkpoint; rejects unknown format versions."""
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(str(z["__meta__"]))
        if meta.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"unsupported checkpoint format {meta.get('format')!r}")
        arrays = {k: z[k] for k in z.files if k != "__meta__"}
    return meta["kind"], meta["config"], arrays


def restore_variables(variables, arrays: dict[str, np.ndarray]) -> None:
    """Copy checkpoint arrays into live parameter arrays, by name, in place."""
    live = dict(variables)
    missing = sorted(set(live) - set(arrays))
    extra = sorted(set(arrays) - set(live))
    if missing or extra:
        raise ValueError(f"checkpoint mismatch: missing {missing}, unexpected {extra}")
    for name, arr in live.items():
        src = arrays[name]
        if src.shape != arr.shape:
            raise ValueError(f"{name}: checkpoint shape {src.shape} != model shape {arr.shape}")
        arr[...] = src
