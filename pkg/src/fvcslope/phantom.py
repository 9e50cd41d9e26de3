"""Ellipsoidal CT phantoms with known analytic lung volume.

Used by the synthetic dataset generator and by segmentation tests: bright
uniform tissue with a dark ellipsoidal cavity whose exact volume is
(4/3)*pi*a*b*c.
"""

from __future__ import annotations

import numpy as np

from .ctprep import CtVolume

__all__ = ["ellipsoid_ct", "analytic_ellipsoid_volume", "ellipse_mask"]

TISSUE_VALUE = 1500
LUNG_VALUE = 100


def analytic_ellipsoid_volume(semi_axes_mm) -> float:
    a, b, c = semi_axes_mm
    return 4.0 / 3.0 * np.pi * a * b * c


def ellipse_mask(height: int, width: int, center_px, semi_axes_px) -> np.ndarray:
    """Pixels whose centers fall inside the ellipse, as uint8 {0,1}."""
    cy, cx = center_px
    ay, ax = semi_axes_px
    yy, xx = np.mgrid[0:height, 0:width]
    inside = ((yy - cy) / ay) ** 2 + ((xx - cx) / ax) ** 2 < 1.0
    return inside.astype(np.uint8)


def ellipsoid_ct(patient_id: str, shape, spacing_mm, semi_axes_mm,
                 center_mm=None, tissue=TISSUE_VALUE, lung=LUNG_VALUE):
    """Build a phantom CtVolume plus its per-slice true masks.

    ``shape`` is (n_slices, height, width); ``semi_axes_mm`` is (sx, sy, sz)
    along the width, height, and slice axes. The voxel at (slice j, row y,
    col x) samples physical position (x*dx, y*dy, j*dz) relative to the
    volume center unless ``center_mm`` overrides it.

    Returns (CtVolume, true_masks [m,H,W] uint8, analytic_volume_mm3).
    """
    m, h, w = shape
    dx, dy, dz = (float(s) for s in spacing_mm)
    sx, sy, sz = (float(s) for s in semi_axes_mm)
    if center_mm is None:
        center_mm = ((w - 1) / 2.0 * dx, (h - 1) / 2.0 * dy, (m - 1) / 2.0 * dz)
    cx, cy, cz = center_mm

    xs = np.arange(w) * dx
    ys = np.arange(h) * dy
    zs = np.arange(m) * dz
    plane = (((ys[:, None] - cy) / sy) ** 2 + ((xs[None, :] - cx) / sx) ** 2)
    masks = np.zeros((m, h, w), dtype=np.uint8)
    slices = np.full((m, h, w), tissue, dtype=np.int64)
    for j in range(m):
        zterm = ((zs[j] - cz) / sz) ** 2
        inside = plane + zterm < 1.0
        masks[j][inside] = 1
        slices[j][inside] = lung

    vol = CtVolume(patient_id, slices, (dx, dy, dz))
    return vol, masks, analytic_ellipsoid_volume((sx, sy, sz))
