"""Image loading, colour conversion, crop augmentation and manifests."""
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Tuple

import cv2
import numpy as np

from .errors import CropSizeError, DecodeError, PairDimensionError
from .validation import check_gray_image

# Full-range BT.601 R'G'B' -> Y'CbCr, rows (Y, Cb, Cr); Cb/Cr carry a +0.5 offset.
_RGB2YCC = np.array([
    [0.299, 0.587, 0.114],
    [-0.168736, -0.331264, 0.5],
    [0.5, -0.418688, -0.081312],
])
_YCC2RGB = np.linalg.inv(_RGB2YCC)
_CHROMA_OFFSET = np.array([0.0, 0.5, 0.5])

CROP_SIZE = 120
CROP_SOURCE = 256
CROP_OFFSETS = (0, 27, 54, 81, 108, 136)


@dataclass
class ImagePair:
    """An aligned MRI / functional-modality sample.

    ``functional_chroma`` holds the (Cb, Cr) planes of a colour functional
    image, or None when it was grayscale.
    """
    mri: np.ndarray
    functional_y: np.ndarray
    functional_chroma: Optional[Tuple[np.ndarray, np.ndarray]] = None
    identifier: str = ""

    def __post_init__(self):
        self.mri = check_gray_image(self.mri, "mri")
        self.functional_y = check_gray_image(self.functional_y, "functional_y")
        if self.mri.shape != self.functional_y.shape:
            raise PairDimensionError(
                f"mri {self.mri.shape} and functional {self.functional_y.shape} differ")
        if self.functional_chroma is not None:
            cb, cr = (np.asarray(c, dtype=np.float64) for c in self.functional_chroma)
            if cb.shape != self.mri.shape or cr.shape != self.mri.shape:
                raise PairDimensionError("chroma planes must match the luma plane")
            self.functional_chroma = (cb, cr)

    @property
    def shape(self):
        return self.mri.shape


@dataclass
class PatchSet:
    patches: List[ImagePair]
    source_id: str

    def __len__(self):
        return len(self.patches)

    def __iter__(self):
        return iter(self.patches)


def rgb_to_ycbcr(rgb):
    """Split an (H, W, 3) RGB image in [0, 1] into clipped (y, cb, cr) planes."""
    rgb = np.asarray(rgb, dtype=np.float64)
    if rgb.ndim != 3 or rgb.shape[-1] != 3:
        raise ValueError(f"expected an (H, W, 3) image, got {rgb.shape}")
    ycc = rgb @ _RGB2YCC.T + _CHROMA_OFFSET
    ycc = np.clip(ycc, 0.0, 1.0)
    return ycc[..., 0], ycc[..., 1], ycc[..., 2]


def ycbcr_to_rgb(y, cb, cr):
    """Inverse of :func:`rgb_to_ycbcr`; returns an (H, W, 3) image clipped to [0, 1]."""
    ycc = np.stack([np.asarray(p, dtype=np.float64) for p in (y, cb, cr)], axis=-1)
    rgb = (ycc - _CHROMA_OFFSET) @ _YCC2RGB.T
    return np.clip(rgb, 0.0, 1.0)


def read_image(path):
    """Read a PNG/TIFF file as float64 in [0, 1].

    Returns an (H, W) array for grayscale files and (H, W, 3) RGB otherwise.
    """
    path = Path(path)
    if not path.is_file():
        raise DecodeError(f"no such file: {path}")
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise DecodeError(f"cannot decode image: {path}")
    if raw.dtype == np.uint8:
        img = raw.astype(np.float64) / 255.0
    elif raw.dtype == np.uint16:
        img = raw.astype(np.float64) / 65535.0
    else:
        raise DecodeError(f"unsupported pixel type {raw.dtype} in {path}")
    if img.ndim == 3:
        if img.shape[2] == 1:
            img = img[..., 0]
        elif img.shape[2] in (3, 4):
            img = img[..., 2::-1]  # BGR(A) -> RGB
        else:
            raise DecodeError(f"unsupported channel count {img.shape[2]} in {path}")
    return np.ascontiguousarray(img)


def write_image(path, img):
    """Write a [0, 1] grayscale (H, W) or RGB (H, W, 3) image as 8-bit PNG."""
    img = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    out = np.rint(img * 255.0).astype(np.uint8)
    if out.ndim == 3:
        out = np.ascontiguousarray(out[..., ::-1])
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if not cv2.imwrite(str(path), out):
        raise DecodeError(f"cannot write image: {path}")


def load_pair(mri_path, functional_path, identifier=None):
    mri = read_image(mri_path)
    func = read_image(functional_path)
    if mri.shape[:2] != func.shape[:2]:
        raise PairDimensionError(
            f"{mri_path} is {mri.shape[:2]} but {functional_path} is {func.shape[:2]}")
    if mri.ndim == 3:
        mri = rgb_to_ycbcr(mri)[0]
    chroma = None
    if func.ndim == 3:
        func, cb, cr = rgb_to_ycbcr(func)
        chroma = (cb, cr)
    if identifier is None:
        identifier = Path(mri_path).stem
    return ImagePair(mri, func, chroma, identifier)


def crop_augment(pair):
    """Cut a 256x256 pair into the fixed 6x6 grid of 120x120 patches."""
    if pair.shape != (CROP_SOURCE, CROP_SOURCE):
        raise CropSizeError(f"crop augmentation needs 256x256 input, got {pair.shape}")
    patches = []
    for i, r in enumerate(CROP_OFFSETS):
        for j, c in enumerate(CROP_OFFSETS):
            sl = (slice(r, r + CROP_SIZE), slice(c, c + CROP_SIZE))
            chroma = None
            if pair.functional_chroma is not None:
                chroma = tuple(p[sl].copy() for p in pair.functional_chroma)
            patches.append(ImagePair(
                pair.mri[sl].copy(), pair.functional_y[sl].copy(), chroma,
                f"{pair.identifier}#r{i}c{j}"))
    return PatchSet(patches, pair.identifier)


def read_manifest(path):
    """Parse a manifest of ``<mri_path>\\t<functional_path>`` lines.

    Relative paths are resolved against the manifest's directory. Blank lines
    and lines starting with ``#`` are skipped.
    """
    path = Path(path)
    entries = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        parts = line.rstrip("\n").split("\t")
        if len(parts) != 2:
            raise ValueError(f"{path}:{lineno}: expected two tab-separated paths")
        a, b = (Path(p.strip()) for p in parts)
        entries.append((a if a.is_absolute() else path.parent / a,
                        b if b.is_absolute() else path.parent / b))
    return entries


def load_manifest(path):
    return [load_pair(a, b) for a, b in read_manifest(path)]
