"""Edge-band masks and patch quantization.

The reconstruction branch is supervised only near the tamper boundary. From a
ground-truth mask we derive a morphological edge band, quantize it to the
patch grid (any set pixel marks the whole patch), and downsample it to each
feature resolution with footprint-OR semantics.
"""

import numpy as np
from scipy import ndimage


def _check_binary(grid):
    a = np.asarray(grid)
    if not np.isin(a, (0, 1)).all():
        raise ValueError("mask must be binary (0/1)")
    return a.astype(np.uint8)


def default_edge_radius(canvas: int) -> int:
    """Dilation radius proportional to canvas size (7 px at 1024)."""
    return max(1, round(7 * canvas / 1024))


def edge_mask(gt, radius: int):
    """Band of width ~2*radius straddling the tamper boundary.

    dilate(gt, r) AND NOT erode(gt, r) with a square structuring element.
    All-zero and all-one inputs both yield an empty band.
    """
    gt = _check_binary(gt)
    if radius < 1:
        raise ValueError("radius must be >= 1")
    size = 2 * radius + 1
    dil = ndimage.maximum_filter(gt, size=size, mode="constant", cval=0)
    ero = ndimage.minimum_filter(gt, size=size, mode="constant", cval=1)
    return (dil & ~ero).astype(np.uint8)


def patch_edge_mask(edge, patch_size: int):
    """Broadcast per-patch OR back to pixel resolution."""
    edge = _check_binary(edge)
    h, w = edge.shape
    if h % patch_size or w % patch_size:
        raise ValueError(f"dims {(h, w)} not divisible by patch size {patch_size}")
    blocks = edge.reshape(h // patch_size, patch_size, w // patch_size, patch_size)
    block_any = blocks.any(axis=(1, 3)).astype(np.uint8)
    return np.repeat(np.repeat(block_any, patch_size, axis=0), patch_size, axis=1)


def downsample_mask(mask, target):
    """Reduce a binary mask to `target` (th, tw); a cell is 1 iff its
    footprint contains any 1."""
    mask = _check_binary(mask)
    h, w = mask.shape
    th, tw = target
    if h % th or w % tw:
        raise ValueError(f"target {target} does not divide dims {(h, w)}")
    fh, fw = h // th, w // tw
    return mask.reshape(th, fh, tw, fw).any(axis=(1, 3)).astype(np.uint8)
