"""Transcript features: ingest precomputed 384-d sentence embeddings, or fall
back to a deterministic hashed bag-of-tokens embedding so the pipeline runs
hermetically."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import torch
from torch import nn

from .corpus import ClipRecord

TEXT_EMBED_DIM = 384


@dataclass
class BuiltinTextConfig:
    n_buckets: int = 4096
    embed_dim: int = TEXT_EMBED_DIM

    def __post_init__(self) -> None:
        if self.n_buckets < 2 or self.embed_dim < 1:
            raise ValueError("invalid builtin text config")


def tokenize(transcript: str) -> list[str]:
    """Lowercase and split on non-alphanumeric runs."""
    tokens: list[str] = []
    word: list[str] = []
    for ch in transcript.lower():
        if ch.isalnum():
            word.append(ch)
        elif word:
            tokens.append("".join(word))
            word = []
    if word:
        tokens.append("".join(word))
    return tokens


def _bucket(token: str, n_buckets: int) -> int:
    digest = hashlib.sha256(token.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") % n_buckets


class HashedTextEncoder(nn.Module):
    """Mean-pooled bucket embeddings over hashed tokens.

    The table is trainable for text-only experiments but frozen during
    fusion. The initial table is derived deterministically from the seed.
    """

    def __init__(self, cfg: BuiltinTextConfig | None = None, seed: int = 0):
        super().__init__()
        self.cfg = cfg or BuiltinTextConfig()
        gen = torch.Generator().manual_seed(seed)
        table = torch.empty(self.cfg.n_buckets, self.cfg.embed_dim)
        nn.init.trunc_normal_(table, std=0.02, generator=gen)
        self.table = nn.Parameter(table)

    def embed_text(self, transcript: str) -> torch.Tensor:
        """One 384-d vector: mean of the token bucket embeddings."""
        tokens = tokenize(transcript)
        if not tokens:
            raise ValueError("transcript has no tokens")
        idx = torch.tensor([_bucket(t, self.cfg.n_buckets) for t in tokens])
        return self.table[idx].mean(dim=0)

    def embed_batch(self, transcripts: list[str]) -> torch.Tensor:
        return torch.stack([self.embed_text(t) for t in transcripts])


def load_embeddings(records: list[ClipRecord], dim: int = TEXT_EMBED_DIM) -> dict[str, torch.Tensor]:
    """Validated precomputed embeddings keyed by clip id."""
    out: dict[str, torch.Tensor] = {}
    for rec in records:
        if rec.text_embedding is None:
            continue
        vec = torch.tensor(rec.text_embedding, dtype=torch.float32)
        if vec.ndim != 1 or vec.numel() != dim:
            raise ValueError(
                f"clip {rec.clip_id}: expected {dim}-d text embedding, got {vec.numel()}"
            )
        if not torch.isfinite(vec).all():
            raise ValueError(f"clip {rec.clip_id}: non-finite text embedding")
        out[rec.clip_id] = vec
    return out
