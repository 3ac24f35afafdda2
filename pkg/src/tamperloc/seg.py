"""Segmentation branch: simple feature pyramid over the encoder output plus
a lightweight all-MLP prediction head emitting logits at (H/4, W/4)."""

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .encoder import EncoderConfig


def tokens_to_map(tokens, grid):
    """(B, N, C) -> (B, C, gh, gw); rejects masked-pass token counts."""
    B, N, C = tokens.shape
    gh, gw = grid
    if N != gh * gw:
        raise ValueError(
            f"expected {gh * gw} tokens for a full encode, got {N}")
    return tokens.transpose(1, 2).reshape(B, C, gh, gw)


class SimpleFeaturePyramid(nn.Module):
    """Four maps at H/8, H/16, H/32, H/64 from the single H/16 encoder map.

    Level 1 upsamples by a deconvolution, level 2 keeps scale, levels 3 and 4
    downsample with strided convolutions; every level projects to the shared
    channel width.
    """

    def __init__(self, cfg: EncoderConfig, out_channels: int = 64):
        super().__init__()
        self.cfg = cfg
        self.out_channels = out_channels
        d = cfg.embed_dim
        c = out_channels
        self.up2 = nn.Sequential(
            nn.ConvTranspose2d(d, c, kernel_size=2, stride=2),
            nn.GroupNorm(1, c), nn.GELU(),
            nn.Conv2d(c, c, 3, padding=1))
        self.same = nn.Sequential(
            nn.Conv2d(d, c, 1),
            nn.GroupNorm(1, c), nn.GELU(),
            nn.Conv2d(c, c, 3, padding=1))
        self.down2 = nn.Sequential(
            nn.Conv2d(d, c, 3, stride=2, padding=1),
            nn.GroupNorm(1, c), nn.GELU(),
            nn.Conv2d(c, c, 3, padding=1))
        self.down4 = nn.Sequential(
            nn.Conv2d(d, c, 3, stride=2, padding=1),
            nn.GroupNorm(1, c), nn.GELU(),
            nn.Conv2d(c, c, 3, stride=2, padding=1))

    def forward(self, tokens):
        g = tokens_to_map(tokens, (self.cfg.grid_size, self.cfg.grid_size))
        return [self.up2(g), self.same(g), self.down2(g), self.down4(g)]


class MLPDecoder(nn.Module):
    """Per-level linear projection, bilinear upsampling to (H/4, W/4),
    concatenation, and a two-layer MLP fusion to one logit channel."""

    def __init__(self, in_channels: int = 64, decoder_dim: int = 64):
        super().__init__()
        self.decoder_dim = decoder_dim
        self.level_proj = nn.ModuleList(
            nn.Conv2d(in_channels, decoder_dim, 1) for _ in range(4))
        self.fuse = nn.Sequential(
            nn.Conv2d(4 * decoder_dim, decoder_dim, 1), nn.GELU(),
            nn.Conv2d(decoder_dim, 1, 1))

    def forward(self, pyramid, out_hw):
        ups = [
            F.interpolate(proj(f), size=out_hw, mode="bilinear",
                          align_corners=False)
            for proj, f in zip(self.level_proj, pyramid)
        ]
        return self.fuse(torch.cat(ups, dim=1))


class SegmentationBranch(nn.Module):
    def __init__(self, cfg: EncoderConfig, pyramid_channels=64, decoder_dim=64):
        super().__init__()
        self.cfg = cfg
        self.pyramid = SimpleFeaturePyramid(cfg, pyramid_channels)
        self.decoder = MLPDecoder(pyramid_channels, decoder_dim)

    def forward(self, tokens):
        out_hw = (self.cfg.img_size // 4, self.cfg.img_size // 4)
        return self.decoder(self.pyramid(tokens), out_hw)


def downsample_target(mask, factor: int = 4):
    """Max-pool the ground truth so thin tampered structures survive the
    reduction to prediction resolution."""
    if mask.dim() == 3:
        mask = mask.unsqueeze(1)
    return F.max_pool2d(mask.float(), kernel_size=factor, stride=factor)


def seg_loss(logits, mask):
    """Mean binary cross-entropy from logits against the max-pooled target.

    `mask` is the full-resolution padded ground truth (B, H, W) in {0,1}.
    """
    if not torch.isin(mask.detach().flatten().float(),
                      torch.tensor([0.0, 1.0])).all():
        raise ValueError("target mask must be binary")
    target = downsample_target(mask).to(logits.dtype)
    return F.binary_cross_entropy_with_logits(logits, target)
