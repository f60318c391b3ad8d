"""Bridging sensor embeddings into the language model.

The projector is two affine layers with an exact-erf GELU between them:
rows of a sensor embedding (k_in wide) are mapped to the LM width k_out and
then refined k_out -> k_out. A fused input is simply the projected sensor
rows stacked above the query token embeddings, subject to a context budget.

Alignment training pulls projected sensor rows toward reference text
embeddings (e.g. the LM token embeddings of a caption). When a target has a
different number of rows than the projector output, both are mean-pooled
over time and compared as single vectors.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import nn

DEFAULT_CONTEXT_BUDGET = 2048


@dataclass
class ProjectorConfig:
    in_dim: int   # sensor embedding width
    out_dim: int  # LM embedding width
    seed: int = 0

    def __post_init__(self):
        if self.in_dim < 1 or self.out_dim < 1:
            raise ValueError(f"dims must be positive, got {self.in_dim}, {self.out_dim}")


class Projector:
    """fc2(gelu(fc1(z))): (rows, in_dim) -> (rows, out_dim)."""

    def __init__(self, cfg: ProjectorConfig):
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        self.fc1 = nn.Linear(cfg.in_dim, cfg.out_dim, rng)
        self.act = nn.GELU()
        self.fc2 = nn.Linear(cfg.out_dim, cfg.out_dim, rng)

    def forward(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=np.float64)
        if z.ndim != 2 or z.shape[1] != self.cfg.in_dim:
            raise ValueError(f"expected (rows, {self.cfg.in_dim}), got {z.shape}")
        return self.fc2.forward(self.act.forward(self.fc1.forward(z)))

    def backward(self, dout: np.ndarray) -> np.ndarray:
        return self.fc1.backward(self.act.backward(self.fc2.backward(dout)))

    def variables(self):
        return self.fc1.variables("fc1") + self.fc2.variables("fc2")

    def trainables(self):
        return self.fc1.trainables("fc1") + self.fc2.trainables("fc2")

    def zero_grads(self):
        self.fc1.zero_grads()
        self.fc2.zero_grads()


def project(z: np.ndarray, projector: Projector) -> np.ndarray:
    """Map a sensor embedding matrix into LM space, row by row."""
    return projector.forward(z)


@dataclass
class FusedInput:
    """Sensor rows stacked above query token embeddings, ready for the LM."""

    h: np.ndarray  # (sensor_token_count + query_token_count, dim)
    sensor_token_count: int
    query_token_count: int

    def __post_init__(self):
        if self.h.ndim != 2:
            raise ValueError(f"fused input must be 2-D, got shape {self.h.shape}")
        if self.sensor_token_count + self.query_token_count != self.h.shape[0]:
            raise ValueError(
                f"row count {self.h.shape[0]} != sensor {self.sensor_token_count} "
                f"+ query {self.query_token_count}"
            )

    @property
    def total_tokens(self) -> int:
        return self.h.shape[0]


def fuse(h_s: np.ndarray, h_q: np.ndarray,
         budget: int = DEFAULT_CONTEXT_BUDGET) -> FusedInput:
    """Concatenate sensor rows and query embeddings along time.

    Raises ValueError when widths differ or when the combined length exceeds
    the context budget (the message names both counts and the budget).
    """
    h_s = np.asarray(h_s, dtype=np.float64)
    h_q = np.asarray(h_q, dtype=np.float64)
    if h_s.ndim != 2 or h_q.ndim != 2 or h_s.shape[1] != h_q.shape[1]:
        raise ValueError(f"width mismatch: sensor {h_s.shape} vs query {h_q.shape}")
    total = h_s.shape[0] + h_q.shape[0]
    if total > budget:
        raise ValueError(
            f"context budget exceeded: {h_s.shape[0]} sensor tokens + "
            f"{h_q.shape[0]} query tokens = {total} > budget {budget}"
        )
    return FusedInput(
        h=np.vstack([h_s, h_q]),
        sensor_token_count=int(h_s.shape[0]),
        query_token_count=int(h_q.shape[0]),
    )


def budget_report(sensor_tokens: int, query_tokens: int, text_equivalent_tokens: int,
                  budget: int = DEFAULT_CONTEXT_BUDGET) -> str:
    """Human-readable comparison of embedding-prefix cost vs raw-text cost.

    Reporting only; nothing here is enforced or assumed elsewhere.
    """
    fused = sensor_tokens + query_tokens
    text = text_equivalent_tokens + query_tokens
    lines = [
        f"context budget: {budget}",
        f"fused prefix: {sensor_tokens} sensor rows + {query_tokens} query tokens = {fused}",
        f"raw-text equivalent: {text_equivalent_tokens} serialized tokens + "
        f"{query_tokens} query tokens = {text}",
        f"savings: {text - fused} tokens ({fused} vs {text})",
    ]
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# alignment training
# ---------------------------------------------------------------------------

def alignment_loss(projector: Projector, pairs, grads: bool = False) -> float:
    """Mean over pairs of the row-MSE (same row count) or pooled-MSE
    (different row count) between projection and target."""
    total = 0.0
    n = len(pairs)
    for z, target in pairs:
        target = np.asarray(target, dtype=np.float64)
        h = projector.forward(z)
        if target.ndim != 2 or target.shape[1] != h.shape[1]:
            raise ValueError(f"target shape {target.shape} incompatible with output {h.shape}")
        if target.shape[0] == h.shape[0]:
            diff = h - target
            denom = diff.size
        else:
            diff = h.mean(axis=0, keepdims=True) - target.mean(axis=0, keepdims=True)
            denom = diff.size
        total += float(np.sum(diff * diff) / denom)
        if grads:
            if target.shape[0] == h.shape[0]:
                dh = 2.0 * diff / (denom * n)
            else:
                # d/dh mean over rows: spread pooled gradient evenly
                dh = np.repeat(2.0 * diff / (denom * n) / h.shape[0], h.shape[0], axis=0)
            projector.backward(dh)
    return total / n


def train_projector(
    pairs,
    lr: float = 1e-4,
    batch_size: int = 32,
    epochs: int = 1,
    projector: Projector | None = None,
    seed: int = 0,
) -> tuple[Projector, list[float]]:
    """Adam alignment training; returns the projector and per-step losses.

    ``pairs`` is a sequence of (sensor_embedding, target_embedding). When no
    projector is passed, one is built from the first pair's shapes using
    ``seed``. Batches are consecutive slices, so one epoch visits every pair
    once; a zero gradient (targets equal outputs) leaves parameters exactly
    unchanged.
    """
    pairs = list(pairs)
    if not pairs:
        raise ValueError("train_projector needs at least one pair")
    if projector is None:
        z0, t0 = pairs[0]
        projector = Projector(ProjectorConfig(in_dim=z0.shape[1],
                                              out_dim=np.asarray(t0).shape[1],
                                              seed=seed))
    opt = nn.Adam([{"params": projector.trainables(), "lr": lr}])
    trace: list[float] = []
    for _ in range(epochs):
        for start in range(0, len(pairs), batch_size):
            batch = pairs[start : start + batch_size]
            projector.zero_grads()
            loss = alignment_loss(projector, batch, grads=True)
            if not math.isfinite(loss):
                raise RuntimeError(f"non-finite alignment loss {loss} at step {len(trace)}")
            opt.step()
            trace.append(loss)
    return projector, trace


def save_projector(projector: Projector, path) -> None:
    nn.save_checkpoint(path, "projector", asdict(projector.cfg), projector.variables())


def load_projector(path) -> Projector:
    kind, cfg, arrays = nn.load_checkpoint(path)
    if kind != "projector":
        raise ValueError(f"checkpoint holds {kind!r}, not a projector")
    proj = Projector(ProjectorConfig(**cfg))
    nn.restore_variables(proj.variables(), arrays)
    return proj
