"""Byte-fallback subword tokenizer.

Token id layout: 0=PAD, 1=BOS, 2=EOS, 3..258 the 256 raw bytes, 259+ learned
merges. Merges are trained greedily on UTF-8 byte sequences: the most
frequent adjacent pair wins each round, ties broken by the lexicographically
smallest merged byte string, so training is deterministic. Because every
byte has a token, ``decode(encode(s)) == s`` for any string regardless of
training corpus.
"""

from __future__ import annotations

import json
from collections import Counter
from pathlib import Path
from typing import Iterable, Sequence

PAD_ID = 0
BOS_ID = 1
EOS_ID = 2
N_SPECIALS = 3
FIRST_MERGE_ID = N_SPECIALS + 256  # 259
SPECIAL_NAMES = {PAD_ID: "<pad>", BOS_ID: "<bos>", EOS_ID: "<eos>"}


def _apply_merge(seq: list[int], pair: tuple[int, int], new_id: int) -> list[int]:
    out = []
    i = 0
    n = len(seq)
    while i < n:
        if i + 1 < n and seq[i] == pair[0] and seq[i + 1] == pair[1]:
            out.append(new_id)
            i += 2
        else:
            out.append(seq[i])
            i += 1
    return out


class Tokenizer:
    def __init__(self, merges: Sequence[tuple[int, int]] = ()):
        self.merges = [tuple(m) for m in merges]
        self._bytes: list[bytes] = [b""] * N_SPECIALS + [bytes([i]) for i in range(256)]
        self._rank: dict[tuple[int, int], int] = {}
        for rank, pair in enumerate(self.merges):
            a, b = pair
            if not (N_SPECIALS <= a < len(self._bytes) and N_SPECIALS <= b < len(self._bytes)):
                raise ValueError(f"merge {rank} references unknown token ids {pair}")
            self._bytes.append(self._bytes[a] + self._bytes[b])
            self._rank[pair] = rank

    @property
    def vocab_size(self) -> int:
        return len(self._bytes)

    def token_bytes(self, tid: int) -> bytes:
        return self._bytes[tid]

    @classmethod
    def train(cls, corpus: Iterable[str], vocab_size: int = 512) -> "Tokenizer":
        """Learn merges until the vocabulary reaches ``vocab_size`` or no
        adjacent pair occurs at least twice."""
        if vocab_size < FIRST_MERGE_ID:
            raise ValueError(f"vocab_size must be >= {FIRST_MERGE_ID}, got {vocab_size}")
        seqs = [[N_SPECIALS + b for b in text.encode("utf-8")] for text in corpus]
        seqs = [s for s in seqs if len(s) >= 2]
        tok_bytes = [b""] * N_SPECIALS + [bytes([i]) for i in range(256)]
        merges: list[tuple[int, int]] = []
        while FIRST_MERGE_ID + len(merges) < vocab_size:
            counts: Counter = Counter()
            for s in seqs:
                for pair in zip(s, s[1:]):
                    counts[pair] += 1
            if not counts:
                break
            # deterministic pick: highest count, ties to smallest merged bytes
            best = min(counts.items(),
                       key=lambda kv: (-kv[1], tok_bytes[kv[0][0]] + tok_bytes[kv[0][1]]))
            pair, freq = best
            if freq < 2:
                break
            new_id = FIRST_MERGE_ID + len(merges)
            merges.append(pair)
            tok_bytes.append(tok_bytes[pair[0]] + tok_bytes[pair[1]])
            seqs = [_apply_merge(s, pair, new_id) for s in seqs]
        return cls(merges)

    def encode(self, text: str, add_bos: bool = False, add_eos: bool = False) -> list[int]:
        seq = [N_SPECIALS + b for b in text.encode("utf-8")]
        while len(seq) >= 2:
            pairs = set(zip(seq, seq[1:]))
            ranked = [p for p in pairs if p in self._rank]
            if not ranked:
                break
            best = min(ranked, key=lambda p: self._rank[p])
            seq = _apply_merge(seq, best, FIRST_MERGE_ID + self._rank[best])
        if add_bos:
            seq.insert(0, BOS_ID)
        if add_eos:
            seq.append(EOS_ID)
        return seq

    def decode(self, ids: Sequence[int]) -> str:
        chunks = []
        for tid in ids:
            if tid < 0 or tid >= len(self._bytes):
                raise ValueError(f"token id {tid} out of range 0..{len(self._bytes) - 1}")
            if tid >= N_SPECIALS:
                chunks.append(self._bytes[tid])
        return b"".join(chunks).decode("utf-8", errors="replace")

    def save(self, path) -> None:
        doc = {"format": 1, "merges": [list(m) for m in self.merges]}
        Path(path).write_text(json.dumps(doc))

    @classmethod
    def load(cls, path) -> "Tokenizer":
        doc = json.loads(Path(path).read_text())
        if doc.get("format") != 1:
            raise ValueError(f"unsupported tokenizer format {doc.get('format')!r}")
        return cls([tuple(m) for m in doc["merges"]])
