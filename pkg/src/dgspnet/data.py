"""Image/mask ingestion, random cropping and a synthetic infrared scene generator.

On-disk layout::

    root/images/<id>.png   8- or 16-bit grayscale
    root/masks/<id>.png    0 background, 255 target
    root/train.txt         one id per line
    root/test.txt
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError
from scipy import ndimage

from .errors import DataError, IngestionError

SPLITS = ("train", "test")


@dataclass
class SamplePair:
    image: np.ndarray  # float32 (H, W) in [0, 1]
    mask: np.ndarray  # uint8 (H, W) in {0, 1}
    id: str


@dataclass
class DatasetManifest:
    root: Path
    splits: dict[str, list[str]]

    @classmethod
    def read(cls, root: str | Path) -> "DatasetManifest":
        root = Path(root)
        splits = {}
        for split in SPLITS:
            path = root / f"{split}.txt"
            if not path.exists():
                raise IngestionError(f"missing split file {path}")
            splits[split] = [ln.strip() for ln in path.read_text(encoding="utf-8").splitlines()
                             if ln.strip()]
        overlap = set(splits["train"]) & set(splits["test"])
        if overlap:
            raise DataError(f"train/test splits overlap: {sorted(overlap)[:5]}")
        return cls(root, splits)

    def write(self) -> None:
        for split, ids in self.splits.items():
            (self.root / f"{split}.txt").write_text("".join(i + "\n" for i in ids), encoding="utf-8")


def read_png(path: str | Path) -> np.ndarray:
    """Decode a grayscale PNG and scale to float32 [0, 1] by its bit depth."""
    path = Path(path)
    try:
        with Image.open(path) as im:
            im.load()
            arr = np.array(im)
    except (UnidentifiedImageError, OSError, SyntaxError) as exc:
        raise IngestionError(f"cannot decode {path}: {exc}") from exc
    if arr.ndim == 3:
        arr = arr[..., :3].mean(axis=-1) if arr.shape[-1] >= 3 else arr[..., 0]
    if arr.dtype == np.uint8:
        return (arr / 255.0).astype(np.float32)
    if arr.dtype in (np.uint16, np.int32, np.int16):
        return (arr.astype(np.float64) / 65535.0).clip(0, 1).astype(np.float32)
    if arr.dtype == bool:
        return arr.astype(np.float32)
    return np.clip(arr.astype(np.float32) / 255.0, 0, 1)


def write_png(path: str | Path, arr: np.ndarray) -> None:
    """Write a uint8 or uint16 array as a grayscale PNG."""
    arr = np.asarray(arr)
    if arr.dtype not in (np.uint8, np.uint16):
        raise DataError(f"write_png expects uint8 or uint16, got {arr.dtype}")
    Image.fromarray(arr).save(path, format="PNG")


def load_pair(root: Path, sample_id: str) -> SamplePair:
    img_path = root / "images" / f"{sample_id}.png"
    mask_path = root / "masks" / f"{sample_id}.png"
    for p in (img_path, mask_path):
        if not p.exists():
            raise IngestionError(f"sample {sample_id!r}: missing {p}")
    image = read_png(img_path)
    mask = (read_png(mask_path) > 0).astype(np.uint8)
    if image.shape != mask.shape:
        raise DataError(f"sample {sample_id!r}: image {image.shape} and mask {mask.shape} differ")
    return SamplePair(image, mask, sample_id)


def load_dataset(root: str | Path, split: str) -> list[SamplePair]:
    manifest = DatasetManifest.read(root)
    if split not in manifest.splits:
        raise DataError(f"unknown split {split!r}")
    return [load_pair(manifest.root, i) for i in manifest.splits[split]]


def standardize(image: np.ndarray) -> np.ndarray:
    return ((image - image.mean()) / (image.std() + 1e-6)).astype(np.float32)


def _reflect_pad(arr: np.ndarray, pad_h: int, pad_w: int) -> np.ndarray:
    # np.pad "reflect" cannot pad more than dim-1 at once; repeat until large enough.
    while pad_h > 0 or pad_w > 0:
        ph = min(pad_h, arr.shape[0] - 1)
        pw = min(pad_w, arr.shape[1] - 1)
        arr = np.pad(arr, ((0, ph), (0, pw)), mode="reflect")
        pad_h -= ph
        pad_w -= pw
    return arr


def augment(pair: SamplePair, crop: int, rng: np.random.Generator) -> SamplePair:
    """Random ``crop`` x ``crop`` window, identical for image and mask."""
    image, mask = pair.image, pair.mask
    h, w = image.shape
    if h < crop or w < crop:
        image = _reflect_pad(image, max(0, crop - h), max(0, crop - w))
        mask = _reflect_pad(mask, max(0, crop - h), max(0, crop - w))
        h, w = image.shape
    top = int(rng.integers(0, h - crop + 1))
    left = int(rng.integers(0, w - crop + 1))
    return SamplePair(image[top:top + crop, left:left + crop].copy(),
                      mask[top:top + crop, left:left + crop].copy(), pair.id)


@dataclass
class SynthParams:
    targets: tuple[int, int] = (1, 3)
    sigma: tuple[float, float] = (0.7, 2.5)
    contrast: tuple[float, float] = (0.15, 0.5)
    background: tuple[float, float] = (0.25, 0.45)
    noise_smooth: float = 2.0
    noise_amp: float = 0.06
    train_fraction: float = 0.8


def synth_scene(size: int, rng: np.random.Generator, params: SynthParams | None = None):
    """One synthetic frame: smoothed noise + gradient background with Gaussian spot targets."""
    p = params or SynthParams()
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    noise = ndimage.gaussian_filter(rng.standard_normal((size, size)), p.noise_smooth, mode="reflect")
    noise = noise / (noise.std() + 1e-12) * p.noise_amp
    angle = rng.uniform(0, 2 * np.pi)
    ramp = (np.cos(angle) * xx + np.sin(angle) * yy) / size
    lo, hi = p.background
    base = rng.uniform(lo, hi)
    background = base + 0.15 * (ramp - ramp.mean()) + noise

    n_targets = int(rng.integers(p.targets[0], p.targets[1] + 1))
    margin = 4
    centres: list[tuple[float, float]] = []
    image = background.copy()
    mask = np.zeros((size, size), dtype=bool)
    for _ in range(1000):
        if len(centres) == n_targets:
            break
        cy, cx = rng.uniform(margin, size - margin, size=2)
        # Well separated so half-peak regions never merge.
        if any(math.hypot(cy - y, cx - x) < 12 for y, x in centres):
            continue
        centres.append((cy, cx))
        sigma = rng.uniform(*p.sigma)
        peak = rng.uniform(*p.contrast)
        spot = peak * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sigma ** 2))
        image += spot
        mask |= spot > 0.5 * peak
    return np.clip(image, 0.0, 1.0), mask


def synth_generate(out: str | Path, count: int, size: int, seed: int,
                   params: SynthParams | None = None) -> DatasetManifest:
    """Write ``count`` synthetic pairs under ``out`` in the standard layout with an 80/20 split."""
    if size % 16:
        raise DataError(f"size must be a multiple of 16, got {size}")
    if count < 1:
        raise DataError("count must be >= 1")
    p = params or SynthParams()
    out = Path(out)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    ids = [f"synth_{i:05d}" for i in range(count)]
    for sample_id in ids:
        image, mask = synth_scene(size, rng, p)
        write_png(out / "images" / f"{sample_id}.png", np.round(image * 255).astype(np.uint8))
        write_png(out / "masks" / f"{sample_id}.png", mask.astype(np.uint8) * 255)
    n_train = int(round(p.train_fraction * count)) if count > 1 else 1
    n_train = min(max(n_train, 1), count)
    manifest = DatasetManifest(out, {"train": ids[:n_train], "test": ids[n_train:]})
    manifest.write()
    return manifest


def stack_batch(pairs: list[SamplePair], standardize_images: bool = False):
    """Stack pairs into (n, 1, H, W) float32 image and mask arrays."""
    images = [standardize(s.image) if standardize_images else s.image for s in pairs]
    return (np.stack(images)[:, None].astype(np.float32),
            np.stack([s.mask for s in pairs])[:, None].astype(np.float32))
