"""Self-supervised sensor encoder.

A small bidirectional transformer is pretrained by masked reconstruction:
a random subset of frames is replaced by a learned mask vector and the model
is trained to reconstruct the original values at exactly those positions
(MSE on masked frames only). After pretraining the encoder is frozen and
used purely as a feature extractor: ``encode`` maps one normalized window
to a (frames // pool, hidden) embedding matrix.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import nn
from .signal import Window


@dataclass
class EncoderConfig:
    channels: int = 6
    frames: int = 120        # window length in frames
    rate_hz: float = 20.0    # the rate encode() expects windows at
    hidden: int = 72         # embedding width
    layers: int = 4
    heads: int = 4
    mask_ratio: float = 0.15
    pool: int = 1            # mean-pool factor on the output time axis
    seed: int = 0

    def __post_init__(self):
        if self.channels < 1 or self.frames < 2 or self.hidden < 1 or self.layers < 1:
            raise ValueError("channels, frames, hidden, layers must be positive")
        if self.hidden % self.heads != 0:
            raise ValueError(f"hidden {self.hidden} not divisible by heads {self.heads}")
        if not 0.0 < self.mask_ratio < 1.0:
            raise ValueError(f"mask_ratio must be in (0, 1), got {self.mask_ratio}")
        if self.pool < 1 or self.frames % self.pool != 0:
            raise ValueError(f"pool {self.pool} must divide frames {self.frames}")

    @property
    def n_masked(self) -> int:
        return math.ceil(self.mask_ratio * self.frames)

    @property
    def out_rows(self) -> int:
        return self.frames // self.pool


class SensorEncoder:
    def __init__(self, cfg: EncoderConfig):
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        self.input_proj = nn.Linear(cfg.channels, cfg.hidden, rng)
        self.pos = rng.normal(0.0, 0.02, size=(cfg.frames, cfg.hidden))
        self.dpos = np.zeros_like(self.pos)
        self.mask_vec = rng.normal(0.0, 0.02, size=(cfg.channels,))
        self.dmask_vec = np.zeros_like(self.mask_vec)
        self.blocks = [
            nn.TransformerBlock(cfg.hidden, cfg.heads, rng, causal=False)
            for _ in range(cfg.layers)
        ]
        self.final_ln = nn.LayerNorm(cfg.hidden)
        self.recon = nn.Linear(cfg.hidden, cfg.channels, rng)
        self.frozen = False

    # --- plumbing ---------------------------------------------------------

    def variables(self):
        out = self.input_proj.variables("input_proj")
        out += [("pos", self.pos), ("mask_vec", self.mask_vec)]
        for i, b in enumerate(self.blocks):
            out += b.variables(f"block{i}")
        out += self.final_ln.variables("final_ln")
        out += self.recon.variables("recon")
        return out

    def trainables(self):
        out = self.input_proj.trainables("input_proj")
        out += [("pos", self.pos, self.dpos), ("mask_vec", self.mask_vec, self.dmask_vec)]
        for i, b in enumerate(self.blocks):
            out += b.trainables(f"block{i}")
        out += self.final_ln.trainables("final_ln")
        out += self.recon.trainables("recon")
        return out

    def zero_grads(self):
        self.input_proj.zero_grads()
        self.dpos[...] = 0.0
        self.dmask_vec[...] = 0.0
        for b in self.blocks:
            b.zero_grads()
        self.final_ln.zero_grads()
        self.recon.zero_grads()

    # --- forward ----------------------------------------------------------

    def _hidden(self, x: np.ndarray) -> np.ndarray:
        """(B, T, C) -> (B, T, hidden) through projection, position, blocks."""
        h = self.input_proj.forward(x) + self.pos
        for b in self.blocks:
            h = b.forward(h)
        return self.final_ln.forward(h)

    def encode(self, w: Window) -> np.ndarray:
        """Embed one normalized window; returns (frames // pool, hidden)."""
        cfg = self.cfg
        if abs(w.rate_hz - cfg.rate_hz) > 1e-9:
            raise ValueError(f"encoder expects {cfg.rate_hz:g} Hz windows, got {w.rate_hz:g} Hz")
        if w.n_frames != cfg.frames:
            raise ValueError(f"encoder expects {cfg.frames} frames, got {w.n_frames}")
        h = self._hidden(w.frames[None, :, :])[0]
        if cfg.pool == 1:
            return h
        return h.reshape(cfg.out_rows, cfg.pool, cfg.hidden).mean(axis=1)

    # --- masked reconstruction -------------------------------------------

    def reconstruction_loss(self, batch: np.ndarray, mask_idx: np.ndarray,
                            grads: bool = False) -> float:
        """MSE over masked frames only.

        ``batch`` is (B, T, C); ``mask_idx`` is (B, M) frame indices whose
        input rows are replaced by the learned mask vector. With
        ``grads=True`` the backward pass accumulates into all parameter
        gradient buffers (caller zeroes them).
        """
        if self.frozen and grads:
            raise RuntimeError("encoder is frozen; no further pretraining")
        B, T, C = batch.shape
        if T != self.cfg.frames or C != self.cfg.channels:
            raise ValueError(f"batch shape {batch.shape} does not match config")
        M = mask_idx.shape[1]
        rows = np.repeat(np.arange(B), M)
        cols = mask_idx.reshape(-1)

        xin = batch.copy()
        xin[rows, cols] = self.mask_vec

        h = self.input_proj.forward(xin) + self.pos
        hs = [h]
        for b in self.blocks:
            h = b.forward(h)
            hs.append(h)
        hf = self.final_ln.forward(h)
        xhat = self.recon.forward(hf)

        diff = xhat[rows, cols] - batch[rows, cols]
        denom = B * M * C
        loss = float(np.sum(diff * diff) / denom)

        if grads:
            dxhat = np.zeros_like(xhat)
            dxhat[rows, cols] = 2.0 * diff / denom
            d = self.recon.backward(dxhat)
            d = self.final_ln.backward(d)
            for b in reversed(self.blocks):
                d = b.backward(d)
            self.dpos += d.sum(axis=0)
            dxin = self.input_proj.backward(d)
            self.dmask_vec += dxin[rows, cols].sum(axis=0)
        return loss


def pretrain(
    windows,
    cfg: EncoderConfig,
    steps: int = 300,
    lr: float = 1e-3,
    batch_size: int = 8,
) -> tuple[SensorEncoder, list[float]]:
    """Masked-reconstruction pretraining over a window corpus.

    Fully deterministic for a fixed ``cfg.seed``: initialization, batch
    sampling, and mask sampling all derive from it, so two runs produce
    bitwise-identical loss traces. Returns the encoder (frozen) and the
    per-step loss trace.
    """
    if not windows:
        raise ValueError("pretrain needs at least one window")
    for w in windows:
        if w.n_frames != cfg.frames or abs(w.rate_hz - cfg.rate_hz) > 1e-9:
            raise ValueError(
                f"window ({w.n_frames} frames @ {w.rate_hz:g} Hz) does not match "
                f"config ({cfg.frames} frames @ {cfg.rate_hz:g} Hz)"
            )
    data = np.stack([w.frames for w in windows])  # (N, T, C)
    N = data.shape[0]
    model = SensorEncoder(cfg)
    rng = np.random.default_rng(cfg.seed)
    opt = nn.Adam([{"params": model.trainables(), "lr": lr}])
    trace: list[float] = []
    M = cfg.n_masked
    for step in range(steps):
        idx = rng.integers(0, N, size=min(batch_size, N))
        mask_idx = np.stack([rng.choice(cfg.frames, size=M, replace=False) for _ in idx])
        model.zero_grads()
        loss = model.reconstruction_loss(data[idx], mask_idx, grads=True)
        if not math.isfinite(loss):
            raise RuntimeError(f"non-finite pretraining loss {loss} at step {step}")
        opt.step()
        trace.append(loss)
    model.frozen = True
    return model, trace


def save_encoder(model: SensorEncoder, path) -> None:
    nn.save_checkpoint(path, "encoder", asdict(model.cfg), model.variables())


def load_encoder(path) -> SensorEncoder:
    kind, cfg, arrays = nn.load_checkpoint(path)
    if kind != "encoder":
        raise ValueError(f"checkpoint holds {kind!r}, not an encoder")
    model = SensorEncoder(EncoderConfig(**cfg))
    nn.restore_variables(model.variables(), arrays)
    model.frozen = True
    return model
