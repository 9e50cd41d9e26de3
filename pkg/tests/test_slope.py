"""Slope fitting vs independent normal-equation oracles."""

from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fvcslope.slope import FvcSeries, build_design_matrix, fit_slope, svd_2col


def normal_equations_exact(weeks, fvc):
    """(A^T A)^-1 A^T b in exact rational arithmetic."""
    w = [Fraction(int(x)) for x in weeks]
    b = [Fraction(v) for v in fvc]
    s_ww = sum(x * x for x in w)
    s_w = sum(w)
    n = Fraction(len(w))
    s_wb = sum(x * v for x, v in zip(w, b))
    s_b = sum(b)
    det = s_ww * n - s_w * s_w
    slope = (n * s_wb - s_w * s_b) / det
    intercept = (s_ww * s_b - s_w * s_wb) / det
    return float(slope), float(intercept)


def test_design_matrix_transcription():
    a, b = build_design_matrix(FvcSeries((0, 10), (2000.0, 1900.0)))
    assert np.array_equal(a, [[0.0, 1.0], [10.0, 1.0]])
    assert np.array_equal(b, [2000.0, 1900.0])


def test_design_matrix_negative_weeks():
    a, _ = build_design_matrix(FvcSeries((-4, 0, 9), (1.0, 2.0, 3.0)))
    assert np.array_equal(a[:, 0], [-4.0, 0.0, 9.0])
    assert a.shape[1] == 2


def test_design_matrix_needs_two_points():
    with pytest.raises(ValueError, match="at least 2"):
        build_design_matrix(FvcSeries((3,), (1000.0,)))


def test_svd_identity_like():
    u, s, vt = svd_2col(np.eye(2))
    assert np.allclose(s, [1.0, 1.0])
    assert np.allclose(u @ np.diag(s) @ vt, np.eye(2), atol=1e-14)


def test_svd_axis_aligned_rank_deficient():
    a = np.array([[2.0, 0.0], [0.0, 0.0], [0.0, 0.0]])
    u, s, vt = svd_2col(a)
    assert np.allclose(s, [2.0, 0.0])
    assert np.allclose(u @ np.diag(s) @ vt, a, atol=1e-14)
    # U columns stay orthonormal even with a zero singular value
    assert np.allclose(u.T @ u, np.eye(2), atol=1e-12)


def test_svd_random_reconstruction_and_eigen_oracle():
    rng = np.random.default_rng(2)
    for _ in range(50):
        a = rng.normal(size=(6, 2)) * rng.uniform(0.1, 50)
        u, s, vt = svd_2col(a)
        # reconstruction
        err = np.linalg.norm(u @ np.diag(s) @ vt - a) / max(np.linalg.norm(a), 1e-12)
        assert err < 1e-10
        # singular values vs the closed-form 2x2 characteristic polynomial
        m = a.T @ a
        tr, det = m[0, 0] + m[1, 1], m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]
        disc = max(tr * tr - 4 * det, 0.0)
        lam1 = (tr + np.sqrt(disc)) / 2
        lam2 = (tr - np.sqrt(disc)) / 2
        assert np.allclose(s, np.sqrt(np.maximum([lam1, lam2], 0.0)),
                           rtol=1e-9, atol=1e-9)
        assert s[0] >= s[1] >= 0
        # V orthogonal
        assert np.allclose(vt @ vt.T, np.eye(2), atol=1e-12)


def test_fit_exact_two_points():
    label = fit_slope(FvcSeries((0, 10), (2000.0, 1900.0)))
    assert abs(label.slope_ml_per_week - (-10.0)) < 1e-12
    assert abs(label.intercept_ml - 2000.0) < 1e-9
    assert label.residual_norm < 1e-9


def test_fit_constant_series():
    label = fit_slope(FvcSeries((0, 5, 10), (3000.0, 3000.0, 3000.0)))
    assert abs(label.slope_ml_per_week) < 1e-12
    assert abs(label.intercept_ml - 3000.0) < 1e-9


def test_fit_matches_normal_equations():
    weeks, fvc = (0, 1, 2, 3), (10.0, 12.0, 9.0, 13.0)
    label = fit_slope(FvcSeries(weeks, fvc))
    slope, intercept = normal_equations_exact(weeks, fvc)
    assert abs(label.slope_ml_per_week - slope) < 1e-9
    assert abs(label.intercept_ml - intercept) < 1e-9


def test_degenerate_time_axis_rejected():
    with pytest.raises(ValueError, match="degenerate time axis"):
        fit_slope(FvcSeries((5, 5, 5), (1000.0, 1100.0, 1200.0)))


def test_duplicate_weeks_kept_in_fit():
    # duplicates are legitimate rows; result matches the exact oracle
    weeks, fvc = (0, 0, 10), (2000.0, 2100.0, 1500.0)
    label = fit_slope(FvcSeries(weeks, fvc))
    slope, intercept = normal_equations_exact(weeks, fvc)
    assert abs(label.slope_ml_per_week - slope) < 1e-9


def test_residual_norm_recomputable():
    rng = np.random.default_rng(9)
    weeks = tuple(int(w) for w in rng.choice(np.arange(-12, 134), 8, replace=False))
    fvc = tuple(rng.uniform(1000, 4000, 8))
    label = fit_slope(FvcSeries(weeks, fvc))
    a, b = build_design_matrix(FvcSeries(weeks, fvc))
    recomputed = np.linalg.norm(
        a @ np.array([label.slope_ml_per_week, label.intercept_ml]) - b)
    assert abs(recomputed - label.residual_norm) <= 1e-9 * max(recomputed, 1.0)


def test_residual_optimality_under_perturbations():
    rng = np.random.default_rng(10)
    weeks = (0, 3, 7, 12, 20)
    fvc = tuple(rng.uniform(2000, 3000, 5))
    label = fit_slope(FvcSeries(weeks, fvc))
    a, b = build_design_matrix(FvcSeries(weeks, fvc))
    x0 = np.array([label.slope_ml_per_week, label.intercept_ml])
    base = np.linalg.norm(a @ x0 - b)
    offsets = [(1e-3, 0), (-1e-3, 0), (0, 1e-3), (0, -1e-3),
               (1e-3, 1e-3), (1e-3, -1e-3), (-1e-3, 1e-3), (-1e-3, -1e-3)]
    for dx in offsets:
        assert np.linalg.norm(a @ (x0 + np.array(dx)) - b) >= base


@settings(max_examples=80, deadline=None)
@given(
    weeks=st.lists(st.integers(-12, 133), min_size=2, max_size=12, unique=True),
    data=st.data(),
)
def test_svd_equals_exact_normal_equations(weeks, data):
    fvc = [data.draw(st.floats(1000, 4000)) for _ in weeks]
    label = fit_slope(FvcSeries(tuple(weeks), tuple(fvc)))
    slope, intercept = normal_equations_exact(weeks, fvc)
    got = np.array([label.slope_ml_per_week, label.intercept_ml])
    want = np.array([slope, intercept])
    assert np.linalg.norm(got - want) <= 1e-9 * max(np.linalg.norm(want), 1.0)


@settings(max_examples=40, deadline=None)
@given(
    weeks=st.lists(st.integers(-12, 133), min_size=2, max_size=10, unique=True),
    shift=st.integers(-100, 100),
    scale=st.floats(0.1, 10.0),
    data=st.data(),
)
def test_shift_and_scale_properties(weeks, shift, scale, data):
    fvc = [data.draw(st.floats(1000, 4000)) for _ in weeks]
    base = fit_slope(FvcSeries(tuple(weeks), tuple(fvc)))

    shifted = fit_slope(FvcSeries(tuple(w + shift for w in weeks), tuple(fvc)))
    tol = 1e-9 * max(abs(base.intercept_ml), 1.0)
    assert abs(shifted.slope_ml_per_week - base.slope_ml_per_week) <= tol
    assert abs(shifted.intercept_ml -
               (base.intercept_ml - shift * base.slope_ml_per_week)) <= \
        1e-9 * max(abs(base.intercept_ml), abs(shift * base.slope_ml_per_week), 1.0)

    scaled = fit_slope(FvcSeries(tuple(weeks), tuple(v * scale for v in fvc)))
    assert abs(scaled.slope_ml_per_week - scale * base.slope_ml_per_week) <= \
        1e-9 * max(abs(scale * base.slope_ml_per_week), 1.0)
    assert abs(scaled.intercept_ml - scale * base.intercept_ml) <= \
        1e-9 * max(abs(scale * base.intercept_ml), 1.0)
