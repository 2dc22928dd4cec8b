"""Stochastic image pipelines: supervised policy, two-branch views, TTA.

Images cross this API as float arrays of shape HxWx3 with values in [0,1];
batches stack them to NxHxWx3. Every transform clamps its output back to
[0,1]. All randomness flows through per-sample generators derived from
(global seed, epoch, sample index, branch), so outputs are bit-reproducible
regardless of batch composition or worker parallelism.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import torch
import torchvision.transforms.functional as TF
from torchvision.transforms import InterpolationMode

from .seeding import rng_for


@dataclass(frozen=True)
class SolarizeParams:
    """Invert bright pixels, then brighten the inverted ones."""

    threshold: float = 0.1
    addition: float = 0.1

    def __post_init__(self):
        if not 0.0 <= self.threshold <= 1.0:
            raise ValueError("threshold must lie in [0, 1]")
        if not -1.0 <= self.addition <= 1.0:
            raise ValueError("addition must lie in [-1, 1]")


@dataclass(frozen=True)
class CutoutParams:
    """Zero a centered rectangle; sized in pixels, clipped to the image."""

    width_range: tuple[int, int] = (50, 100)
    height_range: tuple[int, int] = (185, 190)

    def __post_init__(self):
        for lo, hi in (self.width_range, self.height_range):
            if not 0 < lo <= hi:
                raise ValueError("cutout ranges need 0 < low <= high")


@dataclass(frozen=True)
class JitterParams:
    """Color jitter magnitudes. External defaults, not measured values."""

    brightness: float = 0.4
    contrast: float = 0.4
    saturation: float = 0.2
    hue: float = 0.1


@dataclass(frozen=True)
class CropParams:
    """Random resized crop bounds; output size equals input size."""

    scale: tuple[float, float] = (0.7, 1.0)
    ratio: tuple[float, float] = (0.75, 4.0 / 3.0)


@dataclass(frozen=True)
class TrainPolicy:
    """Supervised-training augmentation: crop, flip, rotate."""

    crop_p: float = 1.0
    crop: CropParams = field(default_factory=CropParams)
    flip_p: float = 0.25
    rotate_p: float = 0.25
    angle_range: tuple[float, float] = (0.0, 45.0)


@dataclass(frozen=True)
class BranchPolicy:
    """One branch of the two-view pipeline, applied in the order:
    crop, cutout, flip, color jitter, grayscale, blur, solarize."""

    crop_p: float = 1.0
    crop: CropParams = field(default_factory=CropParams)
    cutout_p: float = 0.0
    cutout: CutoutParams = field(default_factory=CutoutParams)
    flip_p: float = 0.5
    jitter_p: float = 0.8
    jitter: JitterParams = field(default_factory=JitterParams)
    grayscale_p: float = 0.2
    blur_p: float = 1.0
    solarize_p: float = 0.0
    solarize: SolarizeParams = field(default_factory=SolarizeParams)

    def __post_init__(self):
        for name in ("crop_p", "cutout_p", "flip_p", "jitter_p", "grayscale_p", "blur_p", "solarize_p"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")


def view_pair_policies(include_cutout: bool = False) -> tuple[BranchPolicy, BranchPolicy]:
    """The two branch policies; they differ only in blur and solarization
    probabilities. Cutout participates only when the watermarked corpus is
    part of the pre-training mix."""
    cutout_p = 0.33 if include_cutout else 0.0
    first = BranchPolicy(cutout_p=cutout_p, blur_p=1.0, solarize_p=0.0)
    second = BranchPolicy(cutout_p=cutout_p, blur_p=0.1, solarize_p=0.2)
    return first, second


def _check_image(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float32)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected HxWx3 image, got shape {img.shape}")
    return img


def _to_chw(img: np.ndarray) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(img.transpose(2, 0, 1)))


def _to_hwc(t: torch.Tensor) -> np.ndarray:
    return np.clip(t.numpy().transpose(1, 2, 0), 0.0, 1.0).astype(np.float32)


def solarize(img: np.ndarray, params: SolarizeParams = SolarizeParams()) -> np.ndarray:
    """Pixels above the threshold become clamp(1 - x + addition); the rest
    pass through unchanged."""
    img = _check_image(img)
    inverted = np.clip(1.0 - img + params.addition, 0.0, 1.0)
    return np.where(img > params.threshold, inverted, img).astype(np.float32)


def center_cutout(
    img: np.ndarray,
    params: CutoutParams = CutoutParams(),
    rng: "np.random.Generator | int" = 0,
) -> np.ndarray:
    """Zero a centered w x h rectangle with sides drawn uniformly from the
    configured pixel ranges, clipped to the image bounds."""
    img = _check_image(img).copy()
    rng = np.random.default_rng(rng)
    h_img, w_img = img.shape[:2]
    w = int(rng.integers(params.width_range[0], params.width_range[1] + 1))
    h = int(rng.integers(params.height_range[0], params.height_range[1] + 1))
    w, h = min(w, w_img), min(h, h_img)
    top = (h_img - h) // 2
    left = (w_img - w) // 2
    img[top : top + h, left : left + w, :] = 0.0
    return img


def _crop_box(rng: np.random.Generator, h: int, w: int, params: CropParams) -> tuple[int, int, int, int]:
    area = h * w
    log_lo, log_hi = math.log(params.ratio[0]), math.log(params.ratio[1])
    for _ in range(10):
        target = area * rng.uniform(params.scale[0], params.scale[1])
        aspect = math.exp(rng.uniform(log_lo, log_hi))
        cw = round(math.sqrt(target * aspect))
        ch = round(math.sqrt(target / aspect))
        if 0 < cw <= w and 0 < ch <= h:
            top = int(rng.integers(0, h - ch + 1))
            left = int(rng.integers(0, w - cw + 1))
            return top, left, ch, cw
    # fallback: largest centered box with in-range aspect
    in_ratio = w / h
    if in_ratio < params.ratio[0]:
        cw, ch = w, min(h, round(w / params.ratio[0]))
    elif in_ratio > params.ratio[1]:
        cw, ch = min(w, round(h * params.ratio[1])), h
    else:
        cw, ch = w, h
    return (h - ch) // 2, (w - cw) // 2, ch, cw


def _random_resized_crop(t: torch.Tensor, rng: np.random.Generator, params: CropParams) -> torch.Tensor:
    h, w = t.shape[1], t.shape[2]
    top, left, ch, cw = _crop_box(rng, h, w, params)
    return TF.resized_crop(t, top, left, ch, cw, [h, w], InterpolationMode.BILINEAR, antialias=True)


def _color_jitter(t: torch.Tensor, rng: np.random.Generator, params: JitterParams) -> torch.Tensor:
    # fixed op order keeps the draw sequence stable
    b = rng.uniform(max(0.0, 1.0 - params.brightness), 1.0 + params.brightness)
    c = rng.uniform(max(0.0, 1.0 - params.contrast), 1.0 + params.contrast)
    s = rng.uniform(max(0.0, 1.0 - params.saturation), 1.0 + params.saturation)
    hshift = rng.uniform(-params.hue, params.hue)
    t = TF.adjust_brightness(t, b)
    t = TF.adjust_contrast(t, c)
    t = TF.adjust_saturation(t, s)
    t = TF.adjust_hue(t, hshift)
    return t


def _blur_kernel(h: int, w: int) -> int:
    k = max(3, round(0.1 * min(h, w)))
    return k if k % 2 == 1 else k + 1


def _gaussian_blur(t: torch.Tensor, rng: np.random.Generator) -> torch.Tensor:
    sigma = float(rng.uniform(0.1, 2.0))
    k = _blur_kernel(t.shape[1], t.shape[2])
    return TF.gaussian_blur(t, [k, k], [sigma, sigma])


def apply_branch(img: np.ndarray, policy: BranchPolicy, rng: "np.random.Generator | int") -> np.ndarray:
    """Run one two-view branch on a single image."""
    img = _check_image(img)
    rng = np.random.default_rng(rng)
    t = _to_chw(img)
    if rng.uniform() < policy.crop_p:
        t = _random_resized_crop(t, rng, policy.crop)
    if rng.uniform() < policy.cutout_p:
        t = _to_chw(center_cutout(_to_hwc(t), policy.cutout, rng))
    if rng.uniform() < policy.flip_p:
        t = TF.hflip(t)
    if rng.uniform() < policy.jitter_p:
        t = _color_jitter(t, rng, policy.jitter)
    if rng.uniform() < policy.grayscale_p:
        t = TF.rgb_to_grayscale(t, num_output_channels=3)
    if rng.uniform() < policy.blur_p:
        t = _gaussian_blur(t, rng)
    out = _to_hwc(t)
    if rng.uniform() < policy.solarize_p:
        out = solarize(out, policy.solarize)
    return out


def apply_train(img: np.ndarray, policy: TrainPolicy, rng: "np.random.Generator | int") -> np.ndarray:
    """Run the supervised-training policy on a single image."""
    img = _check_image(img)
    rng = np.random.default_rng(rng)
    t = _to_chw(img)
    if rng.uniform() < policy.crop_p:
        t = _random_resized_crop(t, rng, policy.crop)
    if rng.uniform() < policy.flip_p:
        t = TF.hflip(t)
    if rng.uniform() < policy.rotate_p:
        angle = float(rng.uniform(policy.angle_range[0], policy.angle_range[1]))
        t = TF.rotate(t, angle, interpolation=InterpolationMode.BILINEAR, fill=[0.0, 0.0, 0.0])
    return _to_hwc(t)


def train_augment(
    batch: np.ndarray,
    *,
    global_seed: int,
    epoch: int,
    sample_indices: Sequence[int],
    policy: TrainPolicy | None = None,
) -> np.ndarray:
    """Augment a batch with the supervised policy, one derived generator per
    sample."""
    policy = policy or TrainPolicy()
    out = [
        apply_train(img, policy, rng_for(global_seed, epoch, int(idx), "train"))
        for img, idx in zip(batch, sample_indices, strict=True)
    ]
    return np.stack(out)


def make_view_pair(
    batch: np.ndarray,
    t: BranchPolicy,
    t_prime: BranchPolicy,
    *,
    global_seed: int,
    epoch: int,
    sample_indices: Sequence[int],
) -> tuple[np.ndarray, np.ndarray]:
    """Produce the two independently augmented views of every sample."""
    first, second = [], []
    for img, idx in zip(batch, sample_indices, strict=True):
        first.append(apply_branch(img, t, rng_for(global_seed, epoch, int(idx), "view-a")))
        second.append(apply_branch(img, t_prime, rng_for(global_seed, epoch, int(idx), "view-b")))
    return np.stack(first), np.stack(second)


def tta_views(
    img: np.ndarray,
    k: int = 3,
    policy: TrainPolicy | None = None,
    *,
    seed: int = 0,
    sample_index: int = 0,
) -> list[np.ndarray]:
    """k independently augmented copies for test-time averaging."""
    if k < 1:
        raise ValueError("k must be at least 1")
    policy = policy or TrainPolicy()
    return [
        apply_train(img, policy, rng_for(seed, "tta", sample_index, view))
        for view in range(k)
    ]
