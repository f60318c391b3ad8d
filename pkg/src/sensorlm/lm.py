"""Toy decoder-only causal language model with LoRA adapters.

Small enough to train on a laptop CPU in seconds, but structurally faithful:
token + position embeddings, pre-norm causal transformer blocks, an untied
output head, greedy/temperature decoding, and answer-only cross-entropy
fine-tuning where gradient flows through low-rank adapters on chosen
attention maps and through the sensor projector, while every base weight
stays bitwise untouched.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np

from . import nn
from .fusion import FusedInput, Projector, fuse
from .tokenizer import EOS_ID

# per-block target name -> (block attribute, layer attribute)
BLOCK_LORA_ATTRS = {
    "q": ("attn", "wq"),
    "k": ("attn", "wk"),
    "v": ("attn", "wv"),
    "o": ("attn", "wo"),
    "mlp_fc1": ("mlp", "fc1"),
    "mlp_fc2": ("mlp", "fc2"),
}
# "head" adapts the model-level output projection instead of a block layer
LORA_TARGET_NAMES = tuple(BLOCK_LORA_ATTRS) + ("head",)
DEFAULT_LORA_TARGETS = ("q", "v")


@dataclass
class LMConfig:
    vocab_size: int = 512
    dim: int = 64
    layers: int = 4
    heads: int = 4
    max_context: int = 2048
    seed: int = 0

    def __post_init__(self):
        if self.vocab_size < 259:
            raise ValueError(f"vocab_size must cover specials + bytes (>= 259), got {self.vocab_size}")
        if self.dim % self.heads != 0:
            raise ValueError(f"dim {self.dim} not divisible by heads {self.heads}")
        if self.layers < 1 or self.max_context < 2:
            raise ValueError("layers must be >= 1 and max_context >= 2")


@dataclass
class LoRAConfig:
    rank: int = 8
    alpha: Optional[float] = None          # defaults to rank (scale alpha/rank = 1)
    targets: tuple[str, ...] = DEFAULT_LORA_TARGETS
    dropout: float = 0.05

    def __post_init__(self):
        if self.rank < 1:
            raise ValueError(f"rank must be >= 1, got {self.rank}")
        if self.alpha is None:
            self.alpha = float(self.rank)
        if self.alpha <= 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")
        self.targets = tuple(self.targets)
        unknown = [t for t in self.targets if t not in LORA_TARGET_NAMES]
        if unknown:
            raise ValueError(
                f"unknown LoRA target(s) {unknown}; valid: {sorted(LORA_TARGET_NAMES)}"
            )
        if not self.targets:
            raise ValueError("LoRA needs at least one target")


class CausalLM:
    def __init__(self, cfg: LMConfig):
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        self.tok_emb = nn.Embedding(cfg.vocab_size, cfg.dim, rng)
        self.pos = rng.normal(0.0, 0.02, size=(cfg.max_context, cfg.dim))
        self.dpos = np.zeros_like(self.pos)
        self.blocks = [
            nn.TransformerBlock(cfg.dim, cfg.heads, rng, causal=True)
            for _ in range(cfg.layers)
        ]
        self.final_ln = nn.LayerNorm(cfg.dim)
        self.head = nn.Linear(cfg.dim, cfg.vocab_size, rng)
        self.lora_cfg: Optional[LoRAConfig] = None

    # --- plumbing ----------------------------------------------------------

    @property
    def adapted(self) -> bool:
        return self.lora_cfg is not None

    def variables(self):
        out = self.tok_emb.variables("tok_emb")
        out += [("pos", self.pos)]
        for i, b in enumerate(self.blocks):
            out += b.variables(f"block{i}")
        out += self.final_ln.variables("final_ln")
        out += self.head.variables("head")
        return out

    def zero_grads(self):
        self.tok_emb.zero_grads()
        self.dpos[...] = 0.0
        for b in self.blocks:
            b.zero_grads()
        self.final_ln.zero_grads()
        self.head.zero_grads()

    def _lora_layers(self) -> list[tuple[str, nn.LoRALinear]]:
        out = []
        for i, b in enumerate(self.blocks):
            for part, attr in BLOCK_LORA_ATTRS.values():
                layer = getattr(getattr(b, part), attr)
                if isinstance(layer, nn.LoRALinear):
                    out.append((f"block{i}.{part}.{attr}", layer))
        if isinstance(self.head, nn.LoRALinear):
            out.append(("head", self.head))
        return out

    def lora_trainables(self):
        out = []
        for name, layer in self._lora_layers():
            out += layer.trainables(name)
        return out

    def set_train_mode(self, on: bool):
        for _, layer in self._lora_layers():
            layer.train_mode = on

    # --- forward -----------------------------------------------------------

    def embed_tokens(self, ids: Sequence[int]) -> np.ndarray:
        ids = np.asarray(ids, dtype=np.int64)
        if ids.size and (ids.min() < 0 or ids.max() >= self.cfg.vocab_size):
            raise ValueError(f"token id out of range for vocab {self.cfg.vocab_size}")
        return self.tok_emb.table[ids]

    def forward_embedded(self, h: np.ndarray) -> np.ndarray:
        """(n, dim) input rows -> (n, vocab) logits. Caches for backward."""
        n = h.shape[0]
        if n > self.cfg.max_context:
            raise ValueError(f"sequence of {n} rows exceeds max_context {self.cfg.max_context}")
        if n == 0:
            raise ValueError("empty sequence")
        x = (h + self.pos[:n])[None, :, :]
        for b in self.blocks:
            x = b.forward(x)
        x = self.final_ln.forward(x)
        return self.head.forward(x)[0]

    def backward_embedded(self, dlogits: np.ndarray) -> np.ndarray:
        """Backprop through the last forward_embedded; returns d(input rows)."""
        d = self.head.backward(dlogits[None, :, :])
        d = self.final_ln.backward(d)
        for b in reversed(self.blocks):
            d = b.backward(d)
        d = d[0]
        self.dpos[: d.shape[0]] += d
        return d

    def next_token_dist(self, prefix: FusedInput, tokens: Sequence[int]) -> np.ndarray:
        """Distribution over the next token after ``prefix`` plus ``tokens``."""
        rows = [prefix.h] if prefix.total_tokens else []
        if len(tokens):
            rows.append(self.embed_tokens(tokens))
        if not rows:
            raise ValueError("need at least one prefix row or token")
        h = np.vstack(rows)
        logits = self.forward_embedded(h)
        return nn.softmax(logits[-1])

    def decode(
        self,
        prefix: FusedInput,
        max_tokens: int = 64,
        mode: str = "greedy",
        temperature: float = 1.0,
        seed: int = 0,
    ) -> list[int]:
        """Generate until EOS or ``max_tokens``; returns ids without EOS.

        "greedy" takes the argmax each step (ties to the lowest id);
        "sample" draws from softmax(logits / temperature) with the given
        seed. temperature <= 0 degrades to greedy.
        """
        if mode not in ("greedy", "sample"):
            raise ValueError(f"unknown decode mode {mode!r}")
        rng = np.random.default_rng(seed)
        out: list[int] = []
        for _ in range(max_tokens):
            dist = self.next_token_dist(prefix, out)
            if mode == "greedy" or temperature <= 0.0:
                nxt = int(np.argmax(dist))
            else:
                logits = np.log(np.maximum(dist, 1e-300)) / temperature
                p = nn.softmax(logits)
                nxt = int(rng.choice(self.cfg.vocab_size, p=p / p.sum()))
            if nxt == EOS_ID:
                break
            out.append(nxt)
        return out


def text_prefix(model: CausalLM, ids: Sequence[int]) -> FusedInput:
    """A FusedInput with no sensor rows, for text-only prompting."""
    h_q = model.embed_tokens(ids)
    return FusedInput(h=h_q, sensor_token_count=0, query_token_count=len(ids))


# ---------------------------------------------------------------------------
# LoRA application / merge
# ---------------------------------------------------------------------------

def lora_apply(model: CausalLM, cfg: LoRAConfig, seed: int = 0) -> CausalLM:
    """Wrap the configured target maps of every block with low-rank adapters.

    Mutates and returns ``model``. Base weights are shared, frozen, and
    never rewritten; with B zero-initialized the adapted model computes
    bitwise exactly what the base model did.
    """
    if model.adapted:
        raise ValueError("model already has LoRA adapters")
    rng = np.random.default_rng(seed)
    for b in model.blocks:
        for target in cfg.targets:
            if target == "head":
                continue
            part, attr = BLOCK_LORA_ATTRS[target]
            owner = getattr(b, part)
            base = getattr(owner, attr)
            setattr(owner, attr, nn.LoRALinear(base, cfg.rank, cfg.alpha, cfg.dropout, rng))
    if "head" in cfg.targets:
        model.head = nn.LoRALinear(model.head, cfg.rank, cfg.alpha, cfg.dropout, rng)
    model.lora_cfg = cfg
    return model


def lora_merge(model: CausalLM) -> CausalLM:
    """Fold every adapter into its base weight and drop the adapters.

    The result is a plain model whose logits match the adapted model to
    float64 matmul reassociation error.
    """
    if not model.adapted:
        raise ValueError("model has no LoRA adapters to merge")

    def fold(wrapper: nn.LoRALinear) -> nn.Linear:
        base = wrapper.base
        base.w = wrapper.merged_weight()
        base.dw = np.zeros_like(base.w)
        base.frozen = False
        return base

    for b in model.blocks:
        for target in model.lora_cfg.targets:
            if target == "head":
                continue
            part, attr = BLOCK_LORA_ATTRS[target]
            owner = getattr(b, part)
            setattr(owner, attr, fold(getattr(owner, attr)))
    if "head" in model.lora_cfg.targets:
        model.head = fold(model.head)
    model.lora_cfg = None
    return model


# ---------------------------------------------------------------------------
# fine-tuning
# ---------------------------------------------------------------------------

@dataclass
class FinetuneExample:
    """One training item: sensor embedding rows (possibly none), the question
    token ids, and the answer token ids (EOS is appended as a final target
    automatically)."""

    z: np.ndarray
    question: list[int]
    answer: list[int]

    def __post_init__(self):
        self.z = np.asarray(self.z, dtype=np.float64)
        if self.z.ndim != 2:
            raise ValueError(f"z must be 2-D (rows, width), got {self.z.shape}")
        if not self.answer:
            raise ValueError("answer must be non-empty")


def _example_forward(model: CausalLM, projector: Projector, ex: FinetuneExample):
    """Assemble [projected sensor ; question ; answer] rows and run the LM.

    Returns (logits, target ids, first target position, sensor row count).
    The row at position P-1 (the last prefix row) predicts answer[0]; the
    row carrying answer[j] predicts answer[j+1], and the final answer row
    predicts EOS.
    """
    h_s = projector.forward(ex.z) if ex.z.shape[0] else np.zeros((0, model.cfg.dim))
    h_q = model.embed_tokens(ex.question)
    fused = fuse(h_s, h_q, budget=model.cfg.max_context)
    ans_rows = model.embed_tokens(ex.answer)
    h = np.vstack([fused.h, ans_rows])
    if h.shape[0] > model.cfg.max_context:
        raise ValueError(
            f"example needs {h.shape[0]} rows, exceeds max_context {model.cfg.max_context}"
        )
    P = fused.total_tokens
    if P < 1:
        raise ValueError("example has an empty prefix")
    logits = model.forward_embedded(h)
    targets = list(ex.answer) + [EOS_ID]
    return logits, targets, P - 1, h_s.shape[0]


def example_loss(model: CausalLM, projector: Projector, ex: FinetuneExample) -> float:
    """Sum of answer-token cross-entropies for one example (no gradients)."""
    logits, targets, start, _ = _example_forward(model, projector, ex)
    total = 0.0
    for j, tgt in enumerate(targets):
        row = logits[start + j]
        row = row - row.max()
        total += math.log(np.exp(row).sum()) - row[tgt]
    return total


def batch_loss(model: CausalLM, projector: Projector, batch: Sequence[FinetuneExample],
               grads: bool = False) -> float:
    """Mean answer-token cross-entropy over a batch.

    The loss is ``fsum(per-example sums) / total answer tokens``, which is
    bitwise invariant to example order (fsum is correctly rounded). With
    ``grads=True``, adapter and projector gradients accumulate; base model
    weights receive no updates anywhere.
    """
    total_tokens = sum(len(ex.answer) + 1 for ex in batch)
    sums = []
    for ex in batch:
        logits, targets, start, n_sensor = _example_forward(model, projector, ex)
        rows = logits[start : start + len(targets)]
        shifted = rows - rows.max(axis=1, keepdims=True)
        logZ = np.log(np.exp(shifted).sum(axis=1))
        picked = shifted[np.arange(len(targets)), targets]
        sums.append(float(np.sum(logZ - picked)))
        if grads:
            dlogits = np.zeros_like(logits)
            probs = nn.softmax(rows, axis=1)
            probs[np.arange(len(targets)), targets] -= 1.0
            dlogits[start : start + len(targets)] = probs / total_tokens
            dh = model.backward_embedded(dlogits)
            if n_sensor:
                projector.backward(dh[:n_sensor])
    return math.fsum(sums) / total_tokens


def finetune(
    model: CausalLM,
    projector: Projector,
    examples: Sequence[FinetuneExample],
    lora: Optional[LoRAConfig] = None,
    lr: float = 1e-4,
    projector_lr: float = 1e-4,
    batch_size: int = 16,
    epochs: int = 1,
    weight_decay: float = 0.0,
    seed: int = 0,
    max_steps: Optional[int] = None,
) -> list[float]:
    """Answer-only fine-tuning of LoRA adapters plus the projector.

    Applies ``lora`` first when the model is not yet adapted. Two parameter
    groups train at their own rates: adapters at ``lr``, projector at
    ``projector_lr``. Base LM weights (embeddings, positions, attention,
    MLPs, head) are never modified. Returns the per-step loss trace.
    """
    examples = list(examples)
    if not examples:
        raise ValueError("finetune needs at least one example")
    if not model.adapted:
        if lora is None:
            raise ValueError("model has no adapters and no LoRA config was given")
        lora_apply(model, lora, seed=seed)
    opt = nn.Adam([
        {"params": model.lora_trainables(), "lr": lr, "weight_decay": weight_decay},
        {"params": projector.trainables(), "lr": projector_lr, "weight_decay": weight_decay},
    ])
    rng = np.random.default_rng(seed)
    trace: list[float] = []
    model.set_train_mode(True)
    try:
        epoch = 0
        # with a step budget, keep cycling epochs until it is spent
        while (len(trace) < max_steps) if max_steps is not None else (epoch < epochs):
            epoch += 1
            order = rng.permutation(len(examples))
            for start in range(0, len(examples), batch_size):
                batch = [examples[i] for i in order[start : start + batch_size]]
                model.zero_grads()
                projector.zero_grads()
                loss = batch_loss(model, projector, batch, grads=True)
                if not math.isfinite(loss):
                    raise RuntimeError(f"non-finite loss {loss} at step {len(trace)}")
                opt.step()
                trace.append(loss)
                if max_steps is not None and len(trace) >= max_steps:
                    break
    finally:
        model.set_train_mode(False)
    return trace


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

def save_lm(model: CausalLM, path) -> None:
    # model.variables() already includes adapter arrays for wrapped layers
    cfg = {"lm": asdict(model.cfg)}
    if model.adapted:
        lora_doc = asdict(model.lora_cfg)
        lora_doc["targets"] = list(lora_doc["targets"])
        cfg["lora"] = lora_doc
    nn.save_checkpoint(path, "lm", cfg, model.variables())


def load_lm(path) -> CausalLM:
    kind, cfg, arrays = nn.load_checkpoint(path)
    if kind != "lm":
        raise ValueError(f"checkpoint holds {kind!r}, not a language model")
    model = CausalLM(LMConfig(**cfg["lm"]))
    if "lora" in cfg:
        lora_doc = dict(cfg["lora"])
        lora_doc["targets"] = tuple(lora_doc["targets"])
        lora_apply(model, LoRAConfig(**lora_doc), seed=0)
    nn.restore_variables(model.variables(), arrays)
    return model
