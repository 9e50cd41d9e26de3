"""CT container, slice selection, normalization, resize, watershed, volume."""

import numpy as np
import pytest

from fvcslope.ctprep import (CtVolume, estimate_volume, normalize_intensity,
                             prepare_slice, read_ct_volume, resize_bilinear,
                             segment_volume, select_slice, volume_from_masks,
                             watershed_lung_mask, write_ct_volume)
from fvcslope.phantom import ellipse_mask, ellipsoid_ct


def dice(a, b):
    a = np.asarray(a, bool)
    b = np.asarray(b, bool)
    denom = a.sum() + b.sum()
    return 1.0 if denom == 0 else 2.0 * np.logical_and(a, b).sum() / denom


# ---------------------------------------------------------------------------
# container


def test_container_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    slices = rng.integers(0, 2049, size=(5, 8, 6))
    vol = CtVolume("P1", slices, (0.7, 0.7, 5.0))
    write_ct_volume(tmp_path / "P1", vol)
    back = read_ct_volume(tmp_path / "P1")
    assert back.patient_id == "P1"
    assert back.spacing_mm == (0.7, 0.7, 5.0)
    assert np.array_equal(back.slices, slices)


def test_container_missing_meta(tmp_path):
    with pytest.raises(FileNotFoundError, match="meta.json"):
        read_ct_volume(tmp_path / "nope")


def test_container_truncated_slice(tmp_path):
    vol = CtVolume("P1", np.zeros((2, 4, 4), dtype=int), (1, 1, 1))
    write_ct_volume(tmp_path / "P1", vol)
    (tmp_path / "P1" / "slice_0001.raw").write_bytes(b"\x00" * 10)
    with pytest.raises(ValueError, match="slice_0001"):
        read_ct_volume(tmp_path / "P1")


def test_volume_validation():
    with pytest.raises(ValueError, match="spacing"):
        CtVolume("P", np.zeros((2, 3, 3)), (1.0, 0.0, 1.0))
    with pytest.raises(ValueError, match="m, H, W"):
        CtVolume("P", np.zeros((3, 3)), (1.0, 1.0, 1.0))


# ---------------------------------------------------------------------------
# slice selection


def _volume_of(m):
    return CtVolume("P", np.zeros((m, 4, 4), dtype=int), (1, 1, 1))


def test_select_slice_respects_truncation_bands():
    vol = _volume_of(100)
    for seed in range(200):
        _, idx = select_slice(vol, seed)
        assert 15 <= idx < 85


def test_select_slice_tiny_volume():
    vol = _volume_of(3)
    for seed in range(50):
        _, idx = select_slice(vol, seed)
        assert 0 <= idx < 3


def test_select_slice_deterministic():
    vol = _volume_of(20)
    picks = {select_slice(vol, 42)[1] for _ in range(5)}
    assert len(picks) == 1


def test_select_slice_needs_three():
    with pytest.raises(ValueError, match="at least 3"):
        select_slice(_volume_of(2), 0)


# ---------------------------------------------------------------------------
# normalization


def test_normalize_anchor_points():
    out = normalize_intensity(np.array([0, 1024, 2048]))
    assert np.array_equal(out, [0.0, 0.5, 1.0])


def test_normalize_clamps():
    out = normalize_intensity(np.array([-10, 3000]))
    assert np.array_equal(out, [0.0, 1.0])


def test_normalize_monotone():
    vals = np.arange(0, 2049, 7)
    out = normalize_intensity(vals)
    assert np.all(np.diff(out) >= 0)
    assert out.min() == 0.0 and out.max() == 1.0


# ---------------------------------------------------------------------------
# resize


def test_resize_constant_input():
    out = resize_bilinear(np.full((5, 7), 0.3), (3, 11))
    assert out.shape == (3, 11)
    assert np.allclose(out, 0.3, rtol=0, atol=1e-15)


def test_resize_monotone_rows():
    out = resize_bilinear(np.array([[0.0, 1.0], [0.0, 1.0]]), (2, 4))
    assert out.shape == (2, 4)
    for row in out:
        assert np.all(np.diff(row) >= 0)
    # corner alignment pins the ends
    assert out[0, 0] == 0.0 and out[0, -1] == 1.0


def test_resize_matches_pointwise_oracle():
    rng = np.random.default_rng(3)
    src = rng.uniform(0, 1, size=(8, 8))
    out = resize_bilinear(src, (4, 4))

    # independent per-pixel interpolation
    for i in range(4):
        for j in range(4):
            y = i * 7.0 / 3.0
            x = j * 7.0 / 3.0
            y0, x0 = int(np.floor(y)), int(np.floor(x))
            y1, x1 = min(y0 + 1, 7), min(x0 + 1, 7)
            fy, fx = y - y0, x - x0
            want = (src[y0, x0] * (1 - fy) * (1 - fx)
                    + src[y0, x1] * (1 - fy) * fx
                    + src[y1, x0] * fy * (1 - fx)
                    + src[y1, x1] * fy * fx)
            assert abs(out[i, j] - want) < 1e-12


def test_resize_single_pixel_target():
    src = np.arange(9.0).reshape(3, 3)
    assert resize_bilinear(src, (1, 1)).shape == (1, 1)
    assert resize_bilinear(src, (1, 1))[0, 0] == src[0, 0]


# ---------------------------------------------------------------------------
# watershed


def _two_hole_slice():
    img = np.full((64, 64), 1500, dtype=np.int64)
    holes = ellipse_mask(64, 64, (20, 18), (9, 7)) | \
        ellipse_mask(64, 64, (42, 44), (8, 11))
    img[holes.astype(bool)] = 100
    return img, holes


def test_watershed_all_air_slice_empty():
    mask = watershed_lung_mask(np.zeros((32, 32), dtype=int))
    assert mask.shape == (32, 32)
    assert not mask.any()


def test_watershed_two_holes_dice():
    img, truth = _two_hole_slice()
    mask = watershed_lung_mask(img)
    assert set(np.unique(mask)) <= {0, 1}
    assert dice(mask, truth) >= 0.95


def test_watershed_border_hole_excluded():
    img = np.full((64, 64), 1500, dtype=np.int64)
    interior = ellipse_mask(64, 64, (20, 20), (8, 8)).astype(bool)
    img[interior] = 100
    img[55:, 0:9] = 100  # hole touching the bottom/left border
    mask = watershed_lung_mask(img).astype(bool)
    assert not mask[60, 3]
    assert dice(mask, interior) >= 0.95


def test_watershed_invariant_to_safe_constant_shift():
    # +50 keeps every pixel on the same side of both thresholds and leaves
    # the gradient image unchanged, so the mask must be identical
    img, _ = _two_hole_slice()
    assert np.array_equal(watershed_lung_mask(img),
                          watershed_lung_mask(img + 50))


# ---------------------------------------------------------------------------
# volume


def test_volume_from_masks_direct_sum():
    masks = np.ones((10, 4, 4), dtype=np.uint8)
    assert volume_from_masks(masks, (1.0, 1.0, 5.0)) == 800.0


def test_volume_linear_in_dz():
    rng = np.random.default_rng(4)
    masks = (rng.uniform(size=(6, 8, 8)) > 0.5).astype(np.uint8)
    v1 = volume_from_masks(masks, (0.7, 0.9, 2.5))
    v2 = volume_from_masks(masks, (0.7, 0.9, 5.0))
    assert v2 == 2.0 * v1


def test_volume_additive_over_slice_partition():
    rng = np.random.default_rng(5)
    masks = (rng.uniform(size=(6, 8, 8)) > 0.5).astype(np.uint8)
    spacing = (1.0, 1.0, 3.0)
    total = volume_from_masks(masks, spacing)
    assert total == volume_from_masks(masks[:2], spacing) + \
        volume_from_masks(masks[2:], spacing)


def test_ellipsoid_phantom_volume_within_5_percent():
    vol, _, analytic = ellipsoid_ct("P", (24, 64, 64), (1.0, 1.0, 5.0),
                                    (20.0, 15.0, 45.0))
    estimate = estimate_volume(vol)
    assert abs(estimate - analytic) / analytic < 0.05


def test_segment_volume_reports_empty_slices():
    vol, true_masks, _ = ellipsoid_ct("P", (24, 64, 64), (1.0, 1.0, 5.0),
                                      (20.0, 15.0, 45.0))
    masks, warnings = segment_volume(vol)
    empty_truth = [i for i in range(24) if not true_masks[i].any()]
    assert warnings == empty_truth


# ---------------------------------------------------------------------------
# end-to-end slice prep determinism


def test_prepared_slice_deterministic(tmp_path):
    vol, _, _ = ellipsoid_ct("P", (12, 32, 32), (1.0, 1.0, 5.0),
                             (10.0, 8.0, 20.0))
    a = prepare_slice(vol, 77, (16, 16))
    b = prepare_slice(vol, 77, (16, 16))
    assert a.source_index == b.source_index
    assert a.pixels.tobytes() == b.pixels.tobytes()
    assert a.pixels.min() >= 0.0 and a.pixels.max() <= 1.0
    assert a.target_size == (16, 16)
