"""CT ingestion, slice selection/normalization, and lung volume estimation.

Volumes live in a portable container: a per-patient directory holding
``meta.json`` (id, spacing, slice count, dims) and one 16-bit little-endian
raw file per slice (``slice_0000.raw``, row-major, anatomical order).
Intensities are raw scanner units, expected in [0, 2048].

Segmentation runs on the raw slices; intensity normalization feeds only the
model path.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage
from skimage.segmentation import watershed

__all__ = [
    "INTENSITY_CEILING",
    "CtVolume",
    "PreparedSlice",
    "write_ct_volume",
    "read_ct_volume",
    "select_slice",
    "normalize_intensity",
    "resize_bilinear",
    "watershed_lung_mask",
    "segment_volume",
    "volume_from_masks",
    "estimate_volume",
    "prepare_slice",
]

log = logging.getLogger(__name__)

INTENSITY_CEILING = 2048.0
TRUNCATE_FRACTION = 0.15
DEFAULT_T_LOW = 400.0
DEFAULT_T_HIGH = 1100.0


@dataclass
class CtVolume:
    """Ordered slice stack with physical voxel spacing in mm."""

    patient_id: str
    slices: np.ndarray  # [m, H, W] integer intensities
    spacing_mm: tuple  # (dx, dy, dz)

    def __post_init__(self):
        self.slices = np.asarray(self.slices)
        if self.slices.ndim != 3:
            raise ValueError(f"slices must be [m, H, W], got {self.slices.shape}")
        self.spacing_mm = tuple(float(s) for s in self.spacing_mm)
        if len(self.spacing_mm) != 3 or any(s <= 0 for s in self.spacing_mm):
            raise ValueError(f"spacing must be 3 positive reals, got {self.spacing_mm}")

    @property
    def n_slices(self) -> int:
        return self.slices.shape[0]


@dataclass
class PreparedSlice:
    """Model-ready raster: values in [0,1] at the configured target size."""

    pixels: np.ndarray
    source_index: int
    target_size: tuple


def write_ct_volume(directory, volume: CtVolume):
    """Write the per-patient container (meta.json + one raw file per slice)."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    m, h, w = volume.slices.shape
    meta = {
        "patient_id": volume.patient_id,
        "spacing_mm": list(volume.spacing_mm),
        "n_slices": m,
        "height": h,
        "width": w,
        "dtype": "uint16-le",
    }
    (d / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    data = np.clip(np.rint(volume.slices), 0, 65535).astype("<u2")
    for i in range(m):
        (d / f"slice_{i:04d}.raw").write_bytes(data[i].tobytes())


def read_ct_volume(directory) -> CtVolume:
    """Load a container directory; slices come back sorted by position index."""
    d = Path(directory)
    meta_path = d / "meta.json"
    if not meta_path.is_file():
        raise FileNotFoundError(f"no meta.json in {d}")
    meta = json.loads(meta_path.read_text())
    m, h, w = meta["n_slices"], meta["height"], meta["width"]
    slices = np.empty((m, h, w), dtype=np.int64)
    for i in range(m):
        raw = (d / f"slice_{i:04d}.raw").read_bytes()
        if len(raw) != 2 * h * w:
            raise ValueError(f"slice_{i:04d}.raw: expected {2*h*w} bytes, got {len(raw)}")
        slices[i] = np.frombuffer(raw, dtype="<u2").reshape(h, w)
    return CtVolume(meta["patient_id"], slices, tuple(meta["spacing_mm"]))


def select_slice(volume: CtVolume, rng_seed: int):
    """Pick one slice uniformly after truncating 15% of slices at each end.

    Returns (slice, source_index); deterministic for a fixed seed.
    """
    m = volume.n_slices
    if m < 3:
        raise ValueError(f"volume has {m} slices; need at least 3")
    cut = int(np.floor(TRUNCATE_FRACTION * m))
    lo, hi = cut, m - cut
    if hi <= lo:  # cannot happen for m >= 1, kept as a guard
        idx = m // 2
        log.warning("%s: volume too thin after truncation, using middle slice %d",
                    volume.patient_id, idx)
    else:
        idx = int(np.random.default_rng(rng_seed).integers(lo, hi))
    return volume.slices[idx], idx


def normalize_intensity(slice_raw) -> np.ndarray:
    """Map raw units to [0,1] by dividing by 2048; out-of-range values clamp."""
    return np.clip(np.asarray(slice_raw, dtype=np.float64) / INTENSITY_CEILING, 0.0, 1.0)


def resize_bilinear(image, target) -> np.ndarray:
    """Bilinear resample with corner-aligned sampling.

    Output pixel (i, j) reads source coordinate (i*(H-1)/(H'-1), ...); a
    1-pixel target axis samples coordinate 0. Constant input stays constant.
    """
    src = np.asarray(image, dtype=np.float64)
    if src.ndim != 2:
        raise ValueError(f"expected a 2-d raster, got shape {src.shape}")
    th, tw = int(target[0]), int(target[1])
    if th < 1 or tw < 1:
        raise ValueError(f"target dims must be >= 1, got {(th, tw)}")
    sh, sw = src.shape

    ys = np.linspace(0.0, sh - 1.0, th) if th > 1 else np.zeros(1)
    xs = np.linspace(0.0, sw - 1.0, tw) if tw > 1 else np.zeros(1)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, sh - 1)
    x1 = np.minimum(x0 + 1, sw - 1)
    wy = (ys - y0)[:, None]
    wx = (xs - x0)[None, :]

    top = src[np.ix_(y0, x0)] * (1 - wx) + src[np.ix_(y0, x1)] * wx
    bot = src[np.ix_(y1, x0)] * (1 - wx) + src[np.ix_(y1, x1)] * wx
    return top * (1 - wy) + bot * wy


def _border_labels(labels: np.ndarray) -> set:
    return set(np.unique(labels[0])) | set(np.unique(labels[-1])) | \
        set(np.unique(labels[:, 0])) | set(np.unique(labels[:, -1]))


def watershed_lung_mask(slice_raw, t_low: float = DEFAULT_T_LOW,
                        t_high: float = DEFAULT_T_HIGH) -> np.ndarray:
    """Marker-based watershed lung mask, strictly {0,1} valued.

    Internal markers: connected components with intensity < t_low that do
    not touch the image border. External marker: the border-connected
    region with intensity > t_high. Flooding runs on the Sobel gradient
    magnitude; the mask is the union of basins grown from internal markers.
    Returns an all-zero mask (logged) when no internal marker exists.
    """
    img = np.asarray(slice_raw, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError(f"expected a 2-d raster, got shape {img.shape}")

    low_labels, n_low = ndimage.label(img < t_low)
    interior = set(range(1, n_low + 1)) - _border_labels(low_labels)
    mask = np.zeros(img.shape, dtype=np.uint8)
    if not interior:
        log.debug("watershed: no interior low-intensity component; empty mask")
        return mask

    markers = np.zeros(img.shape, dtype=np.int32)
    markers[np.isin(low_labels, list(interior))] = 1
    high_labels, n_high = ndimage.label(img > t_high)
    border_high = _border_labels(high_labels) - {0}
    if border_high:
        markers[np.isin(high_labels, list(border_high))] = 2

    gradient = np.hypot(ndimage.sobel(img, axis=0), ndimage.sobel(img, axis=1))
    basins = watershed(gradient, markers)
    mask[basins == 1] = 1
    return mask


def segment_volume(volume: CtVolume, t_low: float = DEFAULT_T_LOW,
                   t_high: float = DEFAULT_T_HIGH):
    """Per-slice lung masks for a whole stack.

    Returns (masks [m,H,W] uint8, warnings: list of slice indices that
    produced an empty mask).
    """
    masks = np.zeros(volume.slices.shape, dtype=np.uint8)
    warnings = []
    for i in range(volume.n_slices):
        masks[i] = watershed_lung_mask(volume.slices[i], t_low, t_high)
        if not masks[i].any():
            warnings.append(i)
    return masks, warnings


def volume_from_masks(masks, spacing_mm) -> float:
    """Sum of mask voxels times dx*dy*dz, in cubic millimeters."""
    dx, dy, dz = (float(s) for s in spacing_mm)
    if min(dx, dy, dz) <= 0:
        raise ValueError(f"spacing must be positive, got {spacing_mm}")
    count = int(np.count_nonzero(np.asarray(masks)))
    return count * dx * dy * dz


def estimate_volume(volume: CtVolume, t_low: float = DEFAULT_T_LOW,
                    t_high: float = DEFAULT_T_HIGH) -> float:
    """Watershed-segmented lung volume of the stack, in cubic millimeters."""
    masks, _ = segment_volume(volume, t_low, t_high)
    return volume_from_masks(masks, volume.spacing_mm)


def masked_slice(slice_raw, mask) -> np.ndarray:
    """Debug view: the raw slice with non-lung pixels zeroed."""
    return np.asarray(slice_raw) * np.asarray(mask)


def prepare_slice(volume: CtVolume, rng_seed: int, target_size) -> PreparedSlice:
    """Full per-patient model input path: select, normalize, resize."""
    raw, idx = select_slice(volume, rng_seed)
    pixels = resize_bilinear(normalize_intensity(raw), target_size)
    return PreparedSlice(pixels, idx, (int(target_size[0]), int(target_size[1])))
