"""Reconstruction branch: a shallow global-attention ViT decoder that maps
the masked encoding back to a full RGB canvas, supervised by a hierarchical
masked perceptual loss.

The perceptual features come from a frozen convolutional stack with taps at
full, half and quarter resolution (64/128/256 channels). By default the
stack is deterministically initialized from a fixed seed; externally
supplied pretrained weights can be loaded instead.
"""

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .encoder import Block, EncoderConfig, MaskingPlan, sincos_pos_embed_2d

PERCEPTUAL_SEED = 20240501


@dataclass(frozen=True)
class ReconLossBreakdown:
    level1: float | torch.Tensor  # full-resolution tap
    level2: float | torch.Tensor  # half resolution
    level3: float | torch.Tensor  # quarter resolution

    @property
    def total(self):
        return self.level1 + self.level2 + self.level3

    def detach(self):
        def _f(v):
            return float(v.detach()) if torch.is_tensor(v) else float(v)
        return ReconLossBreakdown(_f(self.level1), _f(self.level2),
                                  _f(self.level3))


class ReconstructionDecoder(nn.Module):
    """MAE-style decoder: mask tokens fill the dropped positions, a few
    global blocks mix, and a linear head emits patch pixels."""

    def __init__(self, cfg: EncoderConfig, dim: int = 128, depth: int = 2,
                 num_heads: int = 4):
        super().__init__()
        self.cfg = cfg
        self.embed = nn.Linear(cfg.embed_dim, dim)
        self.mask_token = nn.Parameter(torch.zeros(1, 1, dim))
        nn.init.normal_(self.mask_token, std=0.02)
        pos = sincos_pos_embed_2d(dim, cfg.grid_size, cfg.grid_size)
        self.register_buffer("pos_embed", pos, persistent=True)
        self.blocks = nn.ModuleList(
            Block(dim, num_heads, cfg.mlp_ratio) for _ in range(depth))
        self.norm = nn.LayerNorm(dim)
        self.head = nn.Linear(dim, cfg.patch_size ** 2 * 3)

    def forward(self, kept_tokens, plan: MaskingPlan):
        B = kept_tokens.shape[0]
        n_total = self.cfg.num_patches
        if kept_tokens.shape[1] != plan.kept_indices.numel():
            raise ValueError("token count inconsistent with masking plan")
        t = self.embed(kept_tokens)
        full = self.mask_token.to(t.dtype).expand(B, n_total, -1).clone()
        full[:, plan.kept_indices.to(t.device)] = t
        t = full + self.pos_embed.to(t.dtype)
        for blk in self.blocks:
            t = blk(t)
        patches = self.head(self.norm(t))  # (B, N, p*p*3)
        return unpatchify(patches, self.cfg.patch_size,
                          self.cfg.grid_size, self.cfg.grid_size)


def patchify(img, patch):
    """(B, 3, H, W) -> (B, N, patch*patch*3)."""
    B, C, H, W = img.shape
    gh, gw = H // patch, W // patch
    x = img.reshape(B, C, gh, patch, gw, patch)
    return x.permute(0, 2, 4, 3, 5, 1).reshape(B, gh * gw, patch * patch * C)


def unpatchify(patches, patch, gh, gw):
    """(B, N, patch*patch*3) -> (B, 3, H, W)."""
    B = patches.shape[0]
    x = patches.reshape(B, gh, gw, patch, patch, 3)
    return x.permute(0, 5, 1, 3, 2, 4).reshape(B, 3, gh * patch, gw * patch)


class PerceptualStack(nn.Module):
    """Frozen shallow feature extractor with three taps.

    Stage 1: two 3x3 convs at full resolution (64 ch); stage 2: pool + two
    convs at 1/2 (128 ch); stage 3: pool + two convs at 1/4 (256 ch).
    Average pooling and GELU keep the map smooth for gradient checking.
    """

    def __init__(self, seed: int = PERCEPTUAL_SEED):
        super().__init__()

        def conv(cin, cout):
            return nn.Conv2d(cin, cout, 3, padding=1)

        self.stage1 = nn.Sequential(conv(3, 64), nn.GELU(), conv(64, 64), nn.GELU())
        self.stage2 = nn.Sequential(nn.AvgPool2d(2), conv(64, 128), nn.GELU(),
                                    conv(128, 128), nn.GELU())
        self.stage3 = nn.Sequential(nn.AvgPool2d(2), conv(128, 256), nn.GELU(),
                                    conv(256, 256), nn.GELU())
        g = torch.Generator().manual_seed(seed)
        for m in self.modules():
            if isinstance(m, nn.Conv2d):
                fan_in = m.in_channels * 9
                std = (2.0 / fan_in) ** 0.5
                with torch.no_grad():
                    m.weight.copy_(torch.randn(m.weight.shape, generator=g) * std)
                    m.bias.zero_()
        for p in self.parameters():
            p.requires_grad_(False)

    def forward(self, x):
        f1 = self.stage1(x)
        f2 = self.stage2(f1)
        f3 = self.stage3(f2)
        return f1, f2, f3

    def load_pretrained(self, tensors: dict):
        """Optionally replace the deterministic weights with externally
        trained ones (same layer shapes required)."""
        self.load_state_dict(tensors)
        for p in self.parameters():
            p.requires_grad_(False)


def _mask_at(pm, hw, dtype, device):
    """Footprint-OR downsample of the patch edge mask to a tap resolution."""
    H, W = pm.shape[-2:]
    th, tw = hw
    if H % th or W % tw:
        raise ValueError("tap resolution does not divide mask dims")
    m = pm.reshape(-1, 1, H, W).float()
    m = F.max_pool2d(m, kernel_size=(H // th, W // tw))
    return m.to(dtype=dtype, device=device)


def masked_perceptual_loss(recon, target, patch_mask,
                           stack: PerceptualStack) -> ReconLossBreakdown:
    """MSE between mask-gated features of reconstruction and target, one
    term per tap; the gate is the patch edge mask downsampled to each tap's
    resolution. Reduction is the mean over all elements.
    """
    if recon.shape != target.shape:
        raise ValueError(f"shape mismatch {recon.shape} vs {target.shape}")
    fr = stack(recon)
    ft = stack(target)
    losses = []
    for r, t in zip(fr, ft):
        m = _mask_at(patch_mask, r.shape[-2:], r.dtype, r.device)
        losses.append(F.mse_loss(r * m, t * m))
    return ReconLossBreakdown(*losses)
