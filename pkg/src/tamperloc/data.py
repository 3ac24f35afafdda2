"""Dataset manifests, zero-padding, synthetic tampering, augmentation and
distortion.

Images are float32 HxWx3 in [0,1]; masks are uint8 HxW in {0,1}. On disk,
masks are single-channel PNGs with 0 = authentic and 255 = tampered,
thresholded at 128 on load. Manifests are JSON-lines files with fields
``image``, ``mask`` (null for authentic) and ``label``.
"""

import json
import os
from dataclasses import dataclass, field

import cv2
import numpy as np
from scipy import ndimage


class ManifestError(Exception):
    """Raised for missing files or invalid manifest rows."""


@dataclass(frozen=True)
class ManifestEntry:
    image_path: str
    mask_path: str | None
    label: str  # "authentic" | "manipulated"


@dataclass(frozen=True)
class DatasetManifest:
    entries: list
    n_authentic: int = 0
    n_manipulated: int = 0


@dataclass(frozen=True)
class RawSample:
    image: np.ndarray  # (h, w, 3) float32 in [0,1]
    mask: np.ndarray   # (h, w) uint8 in {0,1}

    def __post_init__(self):
        if self.image.shape[:2] != self.mask.shape:
            raise ValueError("image/mask spatial dims differ")
        if not np.isin(self.mask, (0, 1)).all():
            raise ValueError("mask must be binary")


@dataclass(frozen=True)
class PaddedSample:
    image: np.ndarray  # (H, W, 3)
    mask: np.ndarray   # (H, W)
    orig_hw: tuple     # (h, w)


@dataclass(frozen=True)
class DistortionSpec:
    kind: str = "none"  # none | jpeg | gaussian_blur
    jpeg_quality: int = 100
    blur_kernel: int = 5

    def __post_init__(self):
        if self.kind not in ("none", "jpeg", "gaussian_blur"):
            raise ValueError(f"unknown distortion kind {self.kind!r}")
        if self.kind == "jpeg" and not 50 <= self.jpeg_quality <= 100:
            raise ValueError("jpeg quality must be in [50, 100]")
        if self.kind == "gaussian_blur":
            if self.blur_kernel < 3 or self.blur_kernel % 2 == 0:
                raise ValueError("blur kernel must be odd and >= 3")

    def name(self):
        if self.kind == "jpeg":
            return f"jpeg_q{self.jpeg_quality}"
        if self.kind == "gaussian_blur":
            return f"blur_k{self.blur_kernel}"
        return "none"


@dataclass
class AugmentConfig:
    p_hflip: float = 0.5
    p_vflip: float = 0.0
    p_rot90: float = 0.25
    p_rescale: float = 0.25
    p_blur: float = 0.1
    rescale_range: tuple = (0.8, 1.2)
    blur_kernel: int = 5


def load_manifest(path: str) -> DatasetManifest:
    """Parse and validate a JSON-lines manifest.

    Authentic rows need no mask (an all-zero mask is implied); manipulated
    rows must name a readable mask file.
    """
    if not os.path.isfile(path):
        raise ManifestError(f"manifest not found: {path}")
    base = os.path.dirname(os.path.abspath(path))
    entries = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise ManifestError(f"{path}:{lineno}: bad record: {e}") from e
            label = rec.get("label")
            if label not in ("authentic", "manipulated"):
                raise ManifestError(f"{path}:{lineno}: bad label {label!r}")
            img = rec.get("image")
            if not img:
                raise ManifestError(f"{path}:{lineno}: missing image path")
            img = img if os.path.isabs(img) else os.path.join(base, img)
            if not os.path.isfile(img):
                raise ManifestError(f"{path}:{lineno}: image not found: {img}")
            mask = rec.get("mask")
            if label == "manipulated":
                if not mask:
                    raise ManifestError(
                        f"{path}:{lineno}: manipulated entry without mask")
                mask = mask if os.path.isabs(mask) else os.path.join(base, mask)
                if not os.path.isfile(mask):
                    raise ManifestError(f"{path}:{lineno}: mask not found: {mask}")
            else:
                mask = None
            entries.append(ManifestEntry(img, mask, label))
    n_auth = sum(1 for e in entries if e.label == "authentic")
    return DatasetManifest(entries, n_auth, len(entries) - n_auth)


def load_sample(entry: ManifestEntry) -> RawSample:
    img = cv2.imread(entry.image_path, cv2.IMREAD_COLOR)
    if img is None:
        raise ManifestError(f"unreadable image: {entry.image_path}")
    img = cv2.cvtColor(img, cv2.COLOR_BGR2RGB).astype(np.float32) / 255.0
    if entry.mask_path is None:
        mask = np.zeros(img.shape[:2], np.uint8)
    else:
        m = cv2.imread(entry.mask_path, cv2.IMREAD_GRAYSCALE)
        if m is None:
            raise ManifestError(f"unreadable mask: {entry.mask_path}")
        if m.shape != img.shape[:2]:
            raise ManifestError(
                f"mask shape {m.shape} != image shape {img.shape[:2]}")
        mask = (m >= 128).astype(np.uint8)
    return RawSample(img, mask)


def save_sample(sample: RawSample, image_path: str, mask_path: str):
    img = np.clip(sample.image * 255.0 + 0.5, 0, 255).astype(np.uint8)
    cv2.imwrite(image_path, cv2.cvtColor(img, cv2.COLOR_RGB2BGR))
    cv2.imwrite(mask_path, sample.mask * 255)


def pad_to_canvas(sample: RawSample, H: int, W: int) -> PaddedSample:
    """Place the sample at the top-left of an HxW zero canvas."""
    h, w = sample.mask.shape
    if h > H or w > W:
        raise ValueError(f"sample {(h, w)} exceeds canvas {(H, W)}")
    img = np.zeros((H, W, 3), np.float32)
    msk = np.zeros((H, W), np.uint8)
    img[:h, :w] = sample.image
    msk[:h, :w] = sample.mask
    return PaddedSample(img, msk, (h, w))


def crop_to_extent(padded: PaddedSample) -> RawSample:
    h, w = padded.orig_hw
    return RawSample(padded.image[:h, :w].copy(), padded.mask[:h, :w].copy())


def resized_dims(h: int, w: int, limit: int) -> tuple:
    """Target dims with the longer side at `limit`, aspect ratio kept."""
    scale = limit / max(h, w)
    return max(1, round(h * scale)), max(1, round(w * scale))


def resize_oversized(sample: RawSample, limit: int) -> RawSample:
    """Shrink so the longer side equals `limit`; no-op if already within."""
    h, w = sample.mask.shape
    if max(h, w) <= limit:
        return sample
    nh, nw = resized_dims(h, w, limit)
    img = cv2.resize(sample.image, (nw, nh), interpolation=cv2.INTER_LINEAR)
    msk = cv2.resize(sample.mask.astype(np.float32), (nw, nh),
                     interpolation=cv2.INTER_NEAREST)
    return RawSample(img, (msk >= 0.5).astype(np.uint8))


def gaussian_kernel_1d(k: int) -> np.ndarray:
    """Normalized 1D Gaussian; sigma follows the usual kernel-size heuristic."""
    if k < 3 or k % 2 == 0:
        raise ValueError("kernel size must be odd and >= 3")
    sigma = 0.3 * ((k - 1) * 0.5 - 1) + 0.8
    x = np.arange(k, dtype=np.float64) - (k - 1) / 2
    g = np.exp(-(x ** 2) / (2 * sigma ** 2))
    return g / g.sum()


def gaussian_blur(image: np.ndarray, k: int) -> np.ndarray:
    """Separable Gaussian blur with reflected borders."""
    g = gaussian_kernel_1d(k)
    out = image.astype(np.float64)
    out = ndimage.correlate1d(out, g, axis=0, mode="reflect")
    out = ndimage.correlate1d(out, g, axis=1, mode="reflect")
    return out.astype(np.float32)


def jpeg_roundtrip(image: np.ndarray, quality: int) -> np.ndarray:
    u8 = np.clip(image * 255.0 + 0.5, 0, 255).astype(np.uint8)
    ok, buf = cv2.imencode(".jpg", cv2.cvtColor(u8, cv2.COLOR_RGB2BGR),
                           [cv2.IMWRITE_JPEG_QUALITY, int(quality)])
    if not ok:
        raise RuntimeError("jpeg encode failed")
    dec = cv2.imdecode(buf, cv2.IMREAD_COLOR)
    return cv2.cvtColor(dec, cv2.COLOR_BGR2RGB).astype(np.float32) / 255.0


def apply_distortion(sample: RawSample, spec: DistortionSpec) -> RawSample:
    """Distort the image only; the mask is never touched."""
    if spec.kind == "none":
        return sample
    if spec.kind == "jpeg":
        return RawSample(jpeg_roundtrip(sample.image, spec.jpeg_quality),
                         sample.mask)
    return RawSample(gaussian_blur(sample.image, spec.blur_kernel), sample.mask)


def random_base_image(h: int, w: int, rng: np.random.Generator) -> np.ndarray:
    """Smooth pseudo-natural image: upsampled low-frequency noise plus a
    linear shading ramp."""
    low = rng.random((max(2, h // 16), max(2, w // 16), 3)).astype(np.float32)
    img = cv2.resize(low, (w, h), interpolation=cv2.INTER_CUBIC)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float32)
    ramp = (xx / w * rng.uniform(-0.3, 0.3)
            + yy / h * rng.uniform(-0.3, 0.3))[..., None]
    img = img * 0.7 + 0.15 + ramp
    img += rng.normal(0, 0.02, img.shape).astype(np.float32)
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def synthesize_manipulation(image: RawSample, rng_seed: int,
                            mode: str | None = None) -> RawSample:
    """Tamper one random rectangle by copy-move or inpaint-style fill.

    Deterministic for a given (image, seed); the returned mask is exactly
    the altered rectangle. `mode` forces "copy_move" or "inpaint"; by
    default it is drawn at random.
    """
    h, w = image.mask.shape
    if h < 32 or w < 32:
        raise ValueError("image must be at least 32x32")
    rng = np.random.default_rng(rng_seed)
    rh = int(rng.integers(8, max(9, h // 3)))
    rw = int(rng.integers(8, max(9, w // 3)))
    y = int(rng.integers(0, h - rh + 1))
    x = int(rng.integers(0, w - rw + 1))
    img = image.image.copy()
    if mode is None:
        mode = str(rng.choice(["copy_move", "inpaint"]))
    elif mode not in ("copy_move", "inpaint"):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "copy_move":
        # source rectangle disjoint from the paste target
        for _ in range(100):
            sy = int(rng.integers(0, h - rh + 1))
            sx = int(rng.integers(0, w - rw + 1))
            if abs(sy - y) >= rh or abs(sx - x) >= rw:
                break
        else:
            sy, sx = (y + rh) % (h - rh + 1), (x + rw) % (w - rw + 1)
        img[y:y + rh, x:x + rw] = image.image[sy:sy + rh, sx:sx + rw]
    else:
        if rng.random() < 0.5:
            fill = image.image.mean(axis=(0, 1))
            img[y:y + rh, x:x + rw] = fill
        else:
            blurred = ndimage.gaussian_filter(
                image.image, sigma=(8, 8, 0)).astype(np.float32)
            img[y:y + rh, x:x + rw] = blurred[y:y + rh, x:x + rw]
    mask = np.zeros((h, w), np.uint8)
    mask[y:y + rh, x:x + rw] = 1
    return RawSample(img, mask)


def augment(sample: RawSample, rng_seed: int,
            cfg: AugmentConfig | None = None) -> RawSample:
    """Stochastic train-time augmentation; geometry is applied identically
    to image and mask, blur to the image only."""
    cfg = cfg or AugmentConfig()
    rng = np.random.default_rng(rng_seed)
    img, msk = sample.image, sample.mask
    if rng.random() < cfg.p_hflip:
        img, msk = img[:, ::-1], msk[:, ::-1]
    if rng.random() < cfg.p_vflip:
        img, msk = img[::-1], msk[::-1]
    if rng.random() < cfg.p_rot90:
        k = int(rng.integers(1, 4))
        img, msk = np.rot90(img, k), np.rot90(msk, k)
    if rng.random() < cfg.p_rescale:
        s = rng.uniform(*cfg.rescale_range)
        h, w = msk.shape
        nh, nw = max(8, round(h * s)), max(8, round(w * s))
        img = cv2.resize(np.ascontiguousarray(img), (nw, nh),
                         interpolation=cv2.INTER_LINEAR)
        m = cv2.resize(np.ascontiguousarray(msk, dtype=np.float32), (nw, nh),
                       interpolation=cv2.INTER_NEAREST)
        msk = (m >= 0.5).astype(np.uint8)
    if rng.random() < cfg.p_blur:
        img = gaussian_blur(np.ascontiguousarray(img), cfg.blur_kernel)
    return RawSample(np.ascontiguousarray(img, dtype=np.float32),
                     np.ascontiguousarray(msk, dtype=np.uint8))
