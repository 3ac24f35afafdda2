"""Pixel-level F1/AUC scoring, inference over manifests, and the
distortion robustness sweep.

At inference only the segmentation branch runs. Probability maps are
bilinearly upsampled from (H/4, W/4) to the canvas, cropped to the
original extent, and scored against the full-resolution ground truth;
padding pixels never enter the metrics.
"""

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from scipy.stats import rankdata

from . import data as data_mod
from .data import DistortionSpec
from .model import TamperLocModel, batch_from_samples


@dataclass(frozen=True)
class EvalResult:
    dataset: str
    f1: float
    auc: float | None
    n_images: int
    threshold: float = 0.5
    n_auc_skipped: int = 0


@dataclass(frozen=True)
class RobustnessRow:
    distortion: DistortionSpec
    f1: float


def pixel_f1(pred, gt, threshold: float = 0.5) -> float:
    """F1 = 2TP / (2TP + FP + FN) with pred binarized at `threshold`.

    Both maps empty counts as a perfect 1.0; exactly one empty scores 0.
    """
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {gt.shape}")
    p = pred >= threshold
    g = gt >= 0.5
    tp = np.count_nonzero(p & g)
    fp = np.count_nonzero(p & ~g)
    fn = np.count_nonzero(~p & g)
    if tp == 0:
        return 1.0 if (fp == 0 and fn == 0) else 0.0
    return 2.0 * tp / (2.0 * tp + fp + fn)


def pixel_auc(pred, gt) -> float:
    """ROC AUC via the rank statistic with tie-averaged ranks.

    Raises on single-class ground truth; callers skip such images.
    """
    pred = np.asarray(pred, dtype=np.float64).ravel()
    gt = np.asarray(gt).ravel() >= 0.5
    n_pos = int(gt.sum())
    n_neg = gt.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC undefined for single-class ground truth")
    ranks = rankdata(pred)
    return (ranks[gt].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg)


@torch.no_grad()
def predict_probability(model: TamperLocModel, raw: data_mod.RawSample,
                        device="cpu") -> np.ndarray:
    """Probability map at the sample's original resolution."""
    H = model.cfg.img_size
    raw = data_mod.resize_oversized(raw, H)
    padded = data_mod.pad_to_canvas(raw, H, H)
    images, _ = batch_from_samples([padded], device=device,
                                   dtype=next(model.parameters()).dtype)
    logits = model.forward_seg(images)
    probs = torch.sigmoid(
        F.interpolate(logits, size=(H, H), mode="bilinear",
                      align_corners=False))
    h, w = padded.orig_hw
    return probs[0, 0, :h, :w].cpu().numpy(), raw.mask


def evaluate(model: TamperLocModel, samples, dataset_name="eval",
             threshold: float = 0.5, device="cpu",
             distortion: DistortionSpec | None = None) -> EvalResult:
    """Macro-averaged per-image scores over RawSamples or manifest entries."""
    model.eval()
    f1s, aucs = [], []
    skipped = 0
    for s in samples:
        if isinstance(s, data_mod.ManifestEntry):
            s = data_mod.load_sample(s)
        if distortion is not None:
            s = data_mod.apply_distortion(s, distortion)
        prob, gt = predict_probability(model, s, device)
        f1s.append(pixel_f1(prob, gt, threshold))
        try:
            aucs.append(pixel_auc(prob, gt))
        except ValueError:
            skipped += 1
    auc = float(np.mean(aucs)) if aucs else None
    return EvalResult(dataset_name, float(np.mean(f1s)), auc, len(f1s),
                      threshold, skipped)


def default_distortion_specs():
    """Baseline plus the JPEG-quality and blur-kernel grids."""
    specs = [DistortionSpec("none")]
    specs += [DistortionSpec("jpeg", jpeg_quality=q)
              for q in (100, 90, 80, 70, 60, 50)]
    specs += [DistortionSpec("gaussian_blur", blur_kernel=k) for k in (3, 5, 11)]
    return specs


def robustness_sweep(model: TamperLocModel, samples, specs=None,
                     threshold: float = 0.5, device="cpu"):
    """F1 per distortion; distortion hits the raw input before padding."""
    specs = specs if specs is not None else default_distortion_specs()
    samples = [data_mod.load_sample(s) if isinstance(s, data_mod.ManifestEntry)
               else s for s in samples]
    rows = []
    for spec in specs:
        res = evaluate(model, samples, dataset_name=spec.name(),
                       threshold=threshold, device=device, distortion=spec)
        rows.append(RobustnessRow(spec, res.f1))
    return rows
