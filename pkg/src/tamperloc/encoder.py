"""Windowed ViT encoder over zero-padded canvases.

Blocks are windowed by default with a full global-attention block retained
every ``global_every`` layers. The masked forward (used by the
reconstruction branch) drops a random subset of patch tokens and runs all
blocks globally over the kept set, since windows are ill-defined on a
sparse token grid.
"""

from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn


@dataclass
class EncoderConfig:
    img_size: int = 256
    patch_size: int = 16
    embed_dim: int = 192
    depth: int = 4
    num_heads: int = 3
    window_size: int = 4   # in patches
    global_every: int = 2
    mlp_ratio: float = 4.0

    def __post_init__(self):
        if self.depth % self.global_every:
            raise ValueError("depth must be divisible by global_every")
        if self.embed_dim % self.num_heads:
            raise ValueError("embed_dim must be divisible by num_heads")
        if self.img_size % self.patch_size:
            raise ValueError("img_size must be divisible by patch_size")
        if self.grid_size % self.window_size:
            raise ValueError("patch grid must be divisible by window_size")

    @property
    def grid_size(self):
        return self.img_size // self.patch_size

    @property
    def num_patches(self):
        return self.grid_size ** 2

    def is_global_block(self, i: int) -> bool:
        """Block i (0-based) attends globally iff it closes a group of
        `global_every` layers."""
        return (i + 1) % self.global_every == 0

    def to_dict(self):
        return {k: getattr(self, k) for k in
                ("img_size", "patch_size", "embed_dim", "depth", "num_heads",
                 "window_size", "global_every", "mlp_ratio")}


DESK_ENCODER = EncoderConfig()
PAPER_ENCODER = EncoderConfig(img_size=1024, patch_size=16, embed_dim=768,
                              depth=12, num_heads=12, window_size=16,
                              global_every=3)


@dataclass(frozen=True)
class MaskingPlan:
    ratio: float
    kept_indices: torch.Tensor    # (n_keep,) long
    masked_indices: torch.Tensor  # (n_mask,) long
    seed: int


def sincos_pos_embed_2d(embed_dim: int, gh: int, gw: int) -> torch.Tensor:
    """Fixed 2D sine-cosine positional table, (gh*gw, embed_dim)."""
    assert embed_dim % 4 == 0
    dim_half = embed_dim // 2

    def _1d(pos, dim):
        omega = 1.0 / 10000 ** (np.arange(dim // 2, dtype=np.float64) / (dim / 2))
        out = np.einsum("p,d->pd", pos.ravel(), omega)
        return np.concatenate([np.sin(out), np.cos(out)], axis=1)

    gy, gx = np.meshgrid(np.arange(gh, dtype=np.float64),
                         np.arange(gw, dtype=np.float64), indexing="ij")
    emb = np.concatenate([_1d(gy, dim_half), _1d(gx, dim_half)], axis=1)
    return torch.from_numpy(emb).float()


class Attention(nn.Module):
    def __init__(self, dim, num_heads):
        super().__init__()
        self.num_heads = num_heads
        self.scale = (dim // num_heads) ** -0.5
        self.qkv = nn.Linear(dim, dim * 3, bias=True)
        self.proj = nn.Linear(dim, dim)

    def forward(self, x):
        B, N, C = x.shape
        qkv = self.qkv(x).reshape(B, N, 3, self.num_heads, C // self.num_heads)
        q, k, v = qkv.permute(2, 0, 3, 1, 4).unbind(0)
        attn = (q @ k.transpose(-2, -1)) * self.scale
        attn = attn.softmax(dim=-1)
        x = (attn @ v).transpose(1, 2).reshape(B, N, C)
        return self.proj(x)


class Block(nn.Module):
    def __init__(self, dim, num_heads, mlp_ratio=4.0):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = Attention(dim, num_heads)
        self.norm2 = nn.LayerNorm(dim)
        hidden = int(dim * mlp_ratio)
        self.mlp = nn.Sequential(nn.Linear(dim, hidden), nn.GELU(),
                                 nn.Linear(hidden, dim))

    def forward(self, x):
        x = x + self.attn(self.norm1(x))
        return x + self.mlp(self.norm2(x))


def window_partition(x, grid, window):
    """(B, N, C) on a (gh, gw) grid -> (B*nW, window*window, C)."""
    B, N, C = x.shape
    gh, gw = grid
    x = x.view(B, gh // window, window, gw // window, window, C)
    x = x.permute(0, 1, 3, 2, 4, 5).reshape(-1, window * window, C)
    return x


def window_reverse(x, grid, window, B):
    gh, gw = grid
    C = x.shape[-1]
    x = x.view(B, gh // window, gw // window, window, window, C)
    x = x.permute(0, 1, 3, 2, 4, 5).reshape(B, gh * gw, C)
    return x


def random_mask(num_tokens: int, ratio: float, seed: int) -> MaskingPlan:
    """Uniform masking plan without replacement; deterministic under seed."""
    if not 0.0 < ratio < 1.0:
        raise ValueError("mask ratio must be in (0, 1)")
    g = torch.Generator().manual_seed(seed)
    perm = torch.randperm(num_tokens, generator=g)
    n_mask = int(round(ratio * num_tokens))
    masked = perm[:n_mask].sort().values
    kept = perm[n_mask:].sort().values
    return MaskingPlan(ratio, kept, masked, seed)


class WindowedViTEncoder(nn.Module):
    """Patch embedding + interleaved windowed/global transformer blocks."""

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.cfg = cfg
        self.patch_proj = nn.Conv2d(3, cfg.embed_dim, kernel_size=cfg.patch_size,
                                    stride=cfg.patch_size)
        pos = sincos_pos_embed_2d(cfg.embed_dim, cfg.grid_size, cfg.grid_size)
        self.register_buffer("pos_embed", pos, persistent=True)
        self.blocks = nn.ModuleList(
            Block(cfg.embed_dim, cfg.num_heads, cfg.mlp_ratio)
            for _ in range(cfg.depth))
        self.norm = nn.LayerNorm(cfg.embed_dim)

    def patch_embed(self, x):
        """(B, 3, H, W) -> (B, N, C) tokens with positions baked in."""
        if x.shape[-1] % self.cfg.patch_size or x.shape[-2] % self.cfg.patch_size:
            raise ValueError("input dims must be divisible by patch size")
        t = self.patch_proj(x).flatten(2).transpose(1, 2)
        return t + self.pos_embed.to(t.dtype)

    def forward(self, x):
        """Full (unmasked) encode; windowed blocks per the schedule."""
        t = self.patch_embed(x)
        grid = (self.cfg.grid_size, self.cfg.grid_size)
        B = t.shape[0]
        for i, blk in enumerate(self.blocks):
            if self.cfg.is_global_block(i):
                t = blk(t)
            else:
                t = window_reverse(
                    blk(window_partition(t, grid, self.cfg.window_size)),
                    grid, self.cfg.window_size, B)
        return self.norm(t)

    def forward_masked(self, x, ratio: float, seed: int):
        """Encode only the kept tokens; all blocks global on the sparse set."""
        t = self.patch_embed(x)
        plan = random_mask(t.shape[1], ratio, seed)
        t = t[:, plan.kept_indices.to(t.device)]
        for blk in self.blocks:
            t = blk(t)
        return self.norm(t), plan

    def load_pretrained(self, tensors: dict, strict: bool = False):
        """Load by name; positional tables with mismatched grids are
        bicubically resized to this config's grid."""
        own = self.state_dict()
        fixed = {}
        for k, v in tensors.items():
            if k not in own:
                continue
            if v.shape != own[k].shape and "pos_embed" in k:
                side_src = int(round(v.shape[0] ** 0.5))
                side_dst = int(round(own[k].shape[0] ** 0.5))
                grid = v.T.reshape(1, -1, side_src, side_src)
                grid = torch.nn.functional.interpolate(
                    grid, size=(side_dst, side_dst), mode="bicubic",
                    align_corners=False)
                v = grid.reshape(-1, side_dst * side_dst).T
            fixed[k] = v
        missing = self.load_state_dict(fixed, strict=False)
        if strict and (missing.missing_keys or missing.unexpected_keys):
            raise ValueError(f"checkpoint mismatch: {missing}")
        return fixed.keys()
