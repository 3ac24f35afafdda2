"""Composite model: one shared encoder feeding the segmentation and
reconstruction branches."""

import numpy as np
import torch
import torch.nn as nn

from . import masks
from .encoder import EncoderConfig, WindowedViTEncoder
from .recon import PerceptualStack, ReconstructionDecoder, masked_perceptual_loss
from .seg import SegmentationBranch, seg_loss


class TamperLocModel(nn.Module):
    """Both branches run the same encoder parameters: a full windowed pass
    for segmentation and a masked global pass for reconstruction."""

    def __init__(self, cfg: EncoderConfig, pyramid_channels=64, decoder_dim=64,
                 recon_dim=128, recon_depth=2, recon_heads=4,
                 perceptual_seed=None):
        super().__init__()
        self.cfg = cfg
        self.hparams = {"pyramid_channels": pyramid_channels,
                        "decoder_dim": decoder_dim, "recon_dim": recon_dim,
                        "recon_depth": recon_depth, "recon_heads": recon_heads}
        self.encoder = WindowedViTEncoder(cfg)
        self.seg = SegmentationBranch(cfg, pyramid_channels, decoder_dim)
        self.recon = ReconstructionDecoder(cfg, recon_dim, recon_depth,
                                           recon_heads)
        kwargs = {} if perceptual_seed is None else {"seed": perceptual_seed}
        self.perceptual = PerceptualStack(**kwargs)

    def forward_seg(self, images):
        """(B, 3, H, W) -> logits (B, 1, H/4, W/4)."""
        return self.seg(self.encoder(images))

    def forward_recon(self, images, mask_ratio, seed):
        tokens, plan = self.encoder.forward_masked(images, mask_ratio, seed)
        return self.recon(tokens, plan), plan

    def seg_step_loss(self, images, gt_masks):
        logits = self.forward_seg(images)
        return seg_loss(logits, gt_masks), logits

    def recon_step_loss(self, images, gt_masks, mask_ratio, seed,
                        edge_radius=None):
        """Masked encode -> decode -> hierarchical masked perceptual loss
        against the original (unmasked) padded image."""
        radius = edge_radius or masks.default_edge_radius(self.cfg.img_size)
        pm = np.stack([
            masks.patch_edge_mask(masks.edge_mask(m, radius),
                                  self.cfg.patch_size)
            for m in gt_masks.detach().cpu().numpy().astype(np.uint8)
        ])
        pm_t = torch.from_numpy(pm).to(images.device)
        recon, plan = self.forward_recon(images, mask_ratio, seed)
        return masked_perceptual_loss(recon, images, pm_t, self.perceptual), plan

    def trainable_parameters(self):
        return [p for p in self.parameters() if p.requires_grad]


def batch_from_samples(padded_samples, dtype=torch.float32, device="cpu"):
    """Stack PaddedSamples into (B,3,H,W) image and (B,H,W) mask tensors."""
    imgs = np.stack([s.image.transpose(2, 0, 1) for s in padded_samples])
    msks = np.stack([s.mask for s in padded_samples])
    return (torch.from_numpy(imgs).to(dtype=dtype, device=device),
            torch.from_numpy(msks).to(dtype=dtype, device=device))
