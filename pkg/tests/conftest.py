import numpy as np
import pytest
import torch

from tamperloc.data import RawSample
from tamperloc.encoder import EncoderConfig
from tamperloc.model import TamperLocModel

torch.manual_seed(0)


def tiny_cfg(img_size=32):
    """Smallest valid config; grid 2x2 at 32 px."""
    return EncoderConfig(img_size=img_size, patch_size=16, embed_dim=16,
                         depth=2, num_heads=2, window_size=1, global_every=2)


def small_cfg(img_size=64):
    return EncoderConfig(img_size=img_size, patch_size=16, embed_dim=32,
                         depth=2, num_heads=2, window_size=2, global_every=2)


def tiny_model(seed=0, img_size=32, dtype=torch.float32):
    torch.manual_seed(seed)
    m = TamperLocModel(tiny_cfg(img_size), pyramid_channels=8, decoder_dim=8,
                       recon_dim=16, recon_depth=1, recon_heads=2)
    return m.to(dtype)


def small_model(seed=0, img_size=64, dtype=torch.float32):
    torch.manual_seed(seed)
    m = TamperLocModel(small_cfg(img_size), pyramid_channels=16,
                       decoder_dim=16, recon_dim=32, recon_depth=1,
                       recon_heads=2)
    return m.to(dtype)


def random_raw(h, w, seed=0, with_rect=True):
    rng = np.random.default_rng(seed)
    img = rng.random((h, w, 3)).astype(np.float32)
    mask = np.zeros((h, w), np.uint8)
    if with_rect:
        rh, rw = max(2, h // 4), max(2, w // 4)
        y = int(rng.integers(0, h - rh))
        x = int(rng.integers(0, w - rw))
        mask[y:y + rh, x:x + rw] = 1
    return RawSample(img, mask)
