"""Synthetic imbalanced binary-segmentation data, plus PGM ingestion.

Masks are unions of random axis-aligned ellipses, resampled until the
foreground fraction lands within 20% (relative) of the requested target.
Images are two-level intensity (0.2 background, 0.8 foreground) plus optional
Gaussian noise, clamped to [0, 1].

Randomness comes from numpy's PCG64 (the published PCG XSL-RR 128/64
generator), with each sample drawing from its own stream seeded by
``SeedSequence([seed, sample_index])``.  Identical specs therefore reproduce
identical datasets bit-for-bit, independent of generation order or
parallelism.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass

import numpy as np

BG_LEVEL = 0.2
FG_LEVEL = 0.8
MAX_ATTEMPTS = 500


class GenerationFailure(RuntimeError):
    """Could not hit the requested foreground fraction with the given blob range."""


class PGMError(ValueError):
    """Base for PGM parsing problems."""


class PGMFormatError(PGMError):
    """Not a binary (P5) PGM file."""


class PGMDepthError(PGMError):
    """Sample depth other than 8 bits."""


class PGMHeaderError(PGMError):
    """Malformed or truncated header/payload."""


@dataclass(frozen=True)
class SynthSpec:
    width: int = 48
    height: int = 48
    fg_fraction_target: float = 0.05
    n_images: int = 32
    noise_sigma: float = 0.1
    blob_count_range: tuple[int, int] = (1, 3)
    seed: int = 0

    def __post_init__(self):
        if self.width < 16 or self.height < 16:
            raise ValueError("width and height must be >= 16")
        if not (0.0 < self.fg_fraction_target <= 0.5):
            raise ValueError("fg_fraction_target must be in (0, 0.5]")
        if self.n_images < 1:
            raise ValueError("n_images must be >= 1")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        lo, hi = self.blob_count_range
        if lo < 1 or hi < lo:
            raise ValueError(f"bad blob_count_range {self.blob_count_range}")
        if not (0 <= self.seed < 2**64):
            raise ValueError("seed must fit in 64 unsigned bits")


@dataclass
class Sample:
    image: np.ndarray  # float64 in [0, 1], shape (H, W)
    mask: np.ndarray  # int, values {0, 1}, same shape

    @property
    def fg_fraction(self) -> float:
        return float(np.mean(self.mask))


def _sample_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, index])))


def _draw_mask(spec: SynthSpec, rng: np.random.Generator) -> np.ndarray:
    h, w = spec.height, spec.width
    lo, hi = spec.blob_count_range
    target_px = spec.fg_fraction_target * w * h
    yy, xx = np.mgrid[0:h, 0:w]
    for _ in range(MAX_ATTEMPTS):
        k = int(rng.integers(lo, hi + 1))
        mask = np.zeros((h, w), dtype=np.int64)
        base_r = np.sqrt(target_px / k / np.pi)
        for _ in range(k):
            a = base_r * rng.uniform(0.6, 1.4)
            b = (target_px / k / np.pi) / a * rng.uniform(0.9, 1.1)
            cx = rng.uniform(0, w - 1)
            cy = rng.uniform(0, h - 1)
            inside = ((xx - cx) / max(a, 0.5)) ** 2 + ((yy - cy) / max(b, 0.5)) ** 2 <= 1.0
            mask[inside] = 1
        frac = mask.mean()
        if frac == 0.0 or frac == 1.0:
            continue
        if abs(frac - spec.fg_fraction_target) <= 0.2 * spec.fg_fraction_target:
            return mask
    raise GenerationFailure(
        f"no mask within 20% of fg fraction {spec.fg_fraction_target} "
        f"after {MAX_ATTEMPTS} attempts (blob range {spec.blob_count_range})"
    )


def generate_sample(spec: SynthSpec, index: int) -> Sample:
    """Generate one sample; depends only on (spec, index)."""
    rng = _sample_rng(spec.seed, index)
    mask = _draw_mask(spec, rng)
    image = BG_LEVEL + (FG_LEVEL - BG_LEVEL) * mask.astype(np.float64)
    if spec.noise_sigma > 0:
        image = image + rng.normal(0.0, spec.noise_sigma, size=image.shape)
        image = np.clip(image, 0.0, 1.0)
    return Sample(image=image, mask=mask)


def generate(spec: SynthSpec) -> list[Sample]:
    return [generate_sample(spec, i) for i in range(spec.n_images)]


def train_val_split(samples, ratio: float = 0.8, seed: int = 0):
    """Deterministic shuffle then split; both halves must be non-empty."""
    n = len(samples)
    n_train = int(n * ratio)
    if not (0 < ratio < 1) or n_train == 0 or n_train == n:
        raise ValueError(f"split ratio {ratio} leaves an empty partition for {n} samples")
    order = _sample_rng(seed, 2**32).permutation(n)
    train = [samples[i] for i in order[:n_train]]
    val = [samples[i] for i in order[n_train:]]
    return train, val


# ---------------------------------------------------------------------------
# PGM (P5, 8-bit) I/O


def write_pgm(path, values: np.ndarray) -> None:
    """Write a 2-D uint8 array as a binary PGM."""
    arr = np.asarray(values)
    if arr.ndim != 2:
        raise ValueError("PGM payload must be 2-D")
    arr = arr.astype(np.uint8)
    h, w = arr.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(arr.tobytes())


def read_pgm(path) -> np.ndarray:
    """Read a binary (P5) 8-bit PGM into a uint8 array of shape (H, W)."""
    with open(path, "rb") as f:
        data = f.read()
    magic, data = _token(data, first=True)
    if magic == b"P2":
        raise PGMFormatError(f"{path}: ASCII (P2) PGM is not supported")
    if magic != b"P5":
        raise PGMFormatError(f"{path}: not a PGM file (magic {magic!r})")
    try:
        w_tok, data = _token(data)
        h_tok, data = _token(data)
        maxval_tok, data = _token(data)
        w, h, maxval = int(w_tok), int(h_tok), int(maxval_tok)
    except (ValueError, IndexError) as exc:
        raise PGMHeaderError(f"{path}: malformed header") from exc
    if w <= 0 or h <= 0:
        raise PGMHeaderError(f"{path}: bad dimensions {w}x{h}")
    if maxval > 255:
        raise PGMDepthError(f"{path}: 16-bit samples (maxval {maxval}) not supported")
    if maxval <= 0:
        raise PGMHeaderError(f"{path}: bad maxval {maxval}")
    if len(data) < w * h:
        raise PGMHeaderError(f"{path}: truncated payload ({len(data)} < {w * h} bytes)")
    return np.frombuffer(data[: w * h], dtype=np.uint8).reshape(h, w)


def _token(data: bytes, first: bool = False):
    # Skip whitespace and '#' comments, return the next whitespace-delimited
    # token.  After the maxval token exactly one whitespace byte precedes the
    # raster, which the trailing single-byte skip handles.
    i = 0
    while True:
        while i < len(data) and data[i : i + 1].isspace():
            i += 1
        if i < len(data) and data[i] == ord("#"):
            while i < len(data) and data[i] != ord("\n"):
                i += 1
            continue
        break
    j = i
    while j < len(data) and not data[j : j + 1].isspace():
        j += 1
    if j == i:
        raise PGMHeaderError("unexpected end of header")
    tok = data[i:j]
    if first:
        return tok, data[j:]
    return tok, data[j + 1 :] if j < len(data) else data[j:]


def load_pgm_pair(image_path, mask_path) -> Sample:
    """Load an (image, mask) PGM pair; intensities /255, mask binarized at 128."""
    img = read_pgm(image_path)
    msk = read_pgm(mask_path)
    if img.shape != msk.shape:
        raise PGMError(f"dimension mismatch: image {img.shape} vs mask {msk.shape}")
    return Sample(image=img.astype(np.float64) / 255.0, mask=(msk >= 128).astype(np.int64))


def write_dataset(samples, out_dir) -> str:
    """Materialize samples as PGM pairs plus a manifest CSV; returns the manifest path."""
    os.makedirs(out_dir, exist_ok=True)
    manifest = os.path.join(out_dir, "manifest.csv")
    with open(manifest, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["index", "image_path", "mask_path", "fg_fraction"])
        for i, s in enumerate(samples):
            img_name = f"image_{i:04d}.pgm"
            msk_name = f"mask_{i:04d}.pgm"
            write_pgm(os.path.join(out_dir, img_name), np.round(s.image * 255.0).astype(np.uint8))
            write_pgm(os.path.join(out_dir, msk_name), (s.mask * 255).astype(np.uint8))
            writer.writerow([i, img_name, msk_name, "%.6g" % s.fg_fraction])
    return manifest


def load_dataset(manifest_path) -> list[Sample]:
    """Load every pair listed in a manifest produced by :func:`write_dataset`."""
    base = os.path.dirname(os.path.abspath(manifest_path))
    out = []
    with open(manifest_path, newline="") as f:
        for row in csv.DictReader(f):
            out.append(
                load_pgm_pair(
                    os.path.join(base, row["image_path"]),
                    os.path.join(base, row["mask_path"]),
                )
            )
    return out
