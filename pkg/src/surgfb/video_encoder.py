"""Tube-masked video autoencoder: tubelet patch embedding, pre-norm
transformer encoder, lightweight decoder with shared mask tokens, and pooled
feature extraction.

Masking is spatial-tube: a masked spatial position is masked at every
temporal index, which forces temporal reasoning during reconstruction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .numerics import masked_mse


@dataclass
class EncoderConfig:
    """Architecture dimensions. The desk defaults train in minutes on one
    CPU; the paper profile's constants (embed_dim 768 etc.) are configuration
    only, not a model we instantiate in tests."""

    frames: int = 16
    resolution: int = 32
    channels: int = 3
    temporal_patch: int = 2
    spatial_patch: int = 8
    embed_dim: int = 96
    depth: int = 4
    heads: int = 4
    decoder_dim: int = 48
    decoder_depth: int = 2
    mask_ratio: float = 0.85

    def __post_init__(self) -> None:
        if self.embed_dim % self.heads != 0:
            raise ValueError("embed_dim must be divisible by heads")
        if not 0.0 < self.mask_ratio < 1.0:
            raise ValueError("mask_ratio must lie in (0, 1)")
        if self.frames % self.temporal_patch != 0:
            raise ValueError("frames must be divisible by temporal_patch")
        if self.resolution % self.spatial_patch != 0:
            raise ValueError("resolution must be divisible by spatial_patch")

    @property
    def n_temporal(self) -> int:
        return self.frames // self.temporal_patch

    @property
    def n_spatial(self) -> int:
        return (self.resolution // self.spatial_patch) ** 2

    @property
    def n_tokens(self) -> int:
        return self.n_temporal * self.n_spatial

    @property
    def patch_dim(self) -> int:
        return self.temporal_patch * self.spatial_patch**2 * self.channels


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


@dataclass(frozen=True)
class MaskPlan:
    """Masked spatial tube positions; every (t, s) with s masked is masked."""

    n_spatial: int
    n_temporal: int
    masked_spatial: tuple[int, ...]

    def token_mask(self) -> torch.Tensor:
        """Boolean [n_temporal * n_spatial] mask in (t, s) token order."""
        spatial = torch.zeros(self.n_spatial, dtype=torch.bool)
        spatial[list(self.masked_spatial)] = True
        return spatial.repeat(self.n_temporal)

    @property
    def n_masked_tokens(self) -> int:
        return len(self.masked_spatial) * self.n_temporal


def tube_mask(n_spatial: int, n_temporal: int, ratio: float, seed: int) -> MaskPlan:
    """Sample round-half-up(ratio * n_spatial) spatial positions uniformly
    without replacement; deterministic per seed."""
    if not 0.0 < ratio < 1.0:
        raise ValueError("ratio must lie in (0, 1)")
    if n_spatial < 2:
        raise ValueError("need at least 2 spatial positions")
    n_masked = round_half_up(ratio * n_spatial)
    if n_masked == 0 or n_masked == n_spatial:
        raise ValueError(
            f"degenerate mask: {n_masked} of {n_spatial} spatial positions masked"
        )
    rng = np.random.default_rng(seed)
    chosen = rng.choice(n_spatial, size=n_masked, replace=False)
    return MaskPlan(
        n_spatial=n_spatial,
        n_temporal=n_temporal,
        masked_spatial=tuple(sorted(int(i) for i in chosen)),
    )


def patchify(clips: torch.Tensor, cfg: EncoderConfig) -> torch.Tensor:
    """[B, T, H, W, C] -> [B, n_tokens, patch_dim] non-overlapping tubelets.

    Token order is temporal-major: token index = t * n_spatial + (row-major
    spatial index).
    """
    b, t, h, w, c = clips.shape
    if t != cfg.frames or h != cfg.resolution or w != cfg.resolution or c != cfg.channels:
        raise ValueError(
            f"clip shape {tuple(clips.shape)} does not match config "
            f"({cfg.frames}, {cfg.resolution}, {cfg.resolution}, {cfg.channels})"
        )
    tp, sp = cfg.temporal_patch, cfg.spatial_patch
    x = clips.reshape(b, t // tp, tp, h // sp, sp, w // sp, sp, c)
    x = x.permute(0, 1, 3, 5, 2, 4, 6, 7)  # B, nt, nh, nw, tp, sp, sp, C
    return x.reshape(b, cfg.n_tokens, cfg.patch_dim)


def unpatchify(patches: torch.Tensor, cfg: EncoderConfig) -> torch.Tensor:
    """Inverse of :func:`patchify`."""
    b = patches.shape[0]
    tp, sp = cfg.temporal_patch, cfg.spatial_patch
    nt = cfg.n_temporal
    ns_side = cfg.resolution // sp
    x = patches.reshape(b, nt, ns_side, ns_side, tp, sp, sp, cfg.channels)
    x = x.permute(0, 1, 4, 2, 5, 3, 6, 7)
    return x.reshape(b, cfg.frames, cfg.resolution, cfg.resolution, cfg.channels)


class TransformerBlock(nn.Module):
    """Pre-norm block: LN -> MHA -> residual, LN -> MLP(GELU) -> residual."""

    def __init__(self, dim: int, heads: int, mlp_ratio: float = 4.0):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = nn.MultiheadAttention(dim, heads, batch_first=True)
        self.norm2 = nn.LayerNorm(dim)
        hidden = int(dim * mlp_ratio)
        self.mlp = nn.Sequential(nn.Linear(dim, hidden), nn.GELU(), nn.Linear(hidden, dim))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = self.norm1(x)
        x = x + self.attn(h, h, h, need_weights=False)[0]
        x = x + self.mlp(self.norm2(x))
        return x


def _init_transformer(module: nn.Module) -> None:
    for m in module.modules():
        if isinstance(m, nn.Linear):
            nn.init.trunc_normal_(m.weight, std=0.02)
            if m.bias is not None:
                nn.init.zeros_(m.bias)
        elif isinstance(m, nn.MultiheadAttention):
            nn.init.trunc_normal_(m.in_proj_weight, std=0.02)
            nn.init.zeros_(m.in_proj_bias)
        elif isinstance(m, nn.LayerNorm):
            nn.init.ones_(m.weight)
            nn.init.zeros_(m.bias)


class VideoAutoencoder(nn.Module):
    """Mini masked video autoencoder.

    The encoder runs on visible tokens only during SSL; the decoder receives
    visible encodings plus a shared learnable mask token, both with learned
    positional embeddings, and predicts raw standardized pixel patches.
    """

    def __init__(self, cfg: EncoderConfig, per_patch_norm_targets: bool = False):
        super().__init__()
        self.cfg = cfg
        self.per_patch_norm_targets = per_patch_norm_targets
        self.patch_embed = nn.Linear(cfg.patch_dim, cfg.embed_dim)
        self.pos_embed = nn.Parameter(torch.zeros(1, cfg.n_tokens, cfg.embed_dim))
        self.blocks = nn.ModuleList(
            TransformerBlock(cfg.embed_dim, cfg.heads) for _ in range(cfg.depth)
        )
        self.norm = nn.LayerNorm(cfg.embed_dim)
        # normalizes the pooled feature's scale so downstream heads see
        # unit-variance inputs regardless of how concentrated the token mean is
        self.pool_norm = nn.LayerNorm(cfg.embed_dim)

        self.decoder_embed = nn.Linear(cfg.embed_dim, cfg.decoder_dim)
        self.mask_token = nn.Parameter(torch.zeros(1, 1, cfg.decoder_dim))
        self.decoder_pos_embed = nn.Parameter(torch.zeros(1, cfg.n_tokens, cfg.decoder_dim))
        self.decoder_blocks = nn.ModuleList(
            TransformerBlock(cfg.decoder_dim, max(1, cfg.heads // 2))
            for _ in range(cfg.decoder_depth)
        )
        self.decoder_norm = nn.LayerNorm(cfg.decoder_dim)
        self.decoder_head = nn.Linear(cfg.decoder_dim, cfg.patch_dim)

        _init_transformer(self)
        nn.init.trunc_normal_(self.pos_embed, std=0.02)
        nn.init.trunc_normal_(self.decoder_pos_embed, std=0.02)
        nn.init.trunc_normal_(self.mask_token, std=0.02)

    # -- encoding ---------------------------------------------------------

    def encode_tokens(self, clips: torch.Tensor, visible_idx: torch.Tensor | None = None) -> torch.Tensor:
        """Encode the (optionally restricted) token grid; returns
        [B, n_visible, embed_dim]."""
        patches = patchify(clips, self.cfg)
        x = self.patch_embed(patches) + self.pos_embed
        if visible_idx is not None:
            x = x[:, visible_idx, :]
        for block in self.blocks:
            x = block(x)
        return self.norm(x)

    def encode_features(self, clips: torch.Tensor) -> torch.Tensor:
        """Mean over the full, unmasked token grid, then layer-normalized:
        [B, embed_dim]."""
        return self.pool_norm(self.encode_tokens(clips).mean(dim=1))

    # -- self-supervised reconstruction -----------------------------------

    def forward_ssl(self, clips: torch.Tensor, plan: MaskPlan) -> torch.Tensor:
        """Masked-reconstruction loss over masked token positions only."""
        cfg = self.cfg
        if plan.n_spatial != cfg.n_spatial or plan.n_temporal != cfg.n_temporal:
            raise ValueError(
                f"mask plan grid ({plan.n_temporal}x{plan.n_spatial}) does not match "
                f"config grid ({cfg.n_temporal}x{cfg.n_spatial})"
            )
        token_mask = plan.token_mask()
        visible_idx = torch.nonzero(~token_mask, as_tuple=False).squeeze(1)

        encoded = self.encode_tokens(clips, visible_idx)
        b = clips.shape[0]
        dec = self.mask_token.expand(b, cfg.n_tokens, cfg.decoder_dim).clone()
        dec[:, visible_idx, :] = self.decoder_embed(encoded)
        dec = dec + self.decoder_pos_embed
        for block in self.decoder_blocks:
            dec = block(dec)
        pred = self.decoder_head(self.decoder_norm(dec))

        target = patchify(clips, cfg)
        if self.per_patch_norm_targets:
            mu = target.mean(dim=-1, keepdim=True)
            sd = target.var(dim=-1, keepdim=True, unbiased=True).add(1e-6).sqrt()
            target = (target - mu) / sd
        batch_mask = token_mask.unsqueeze(0).expand(b, -1)
        return masked_mse(pred, target, batch_mask)
