"""Laplace log-likelihood and RMSE exactness and properties."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fvcslope.metrics import (ERROR_CEILING_ML, LLL_M_MAX, SIGMA_FLOOR_ML,
                              Prediction, ScorePair, lll_m_aggregate,
                              lll_m_single, rmse)


def test_analytic_maximum_at_zero_error():
    score = lll_m_single(2500.0, Prediction(2500.0, 70.0))
    assert abs(score - (-math.log(math.sqrt(2.0) * 70.0))) < 1e-12
    assert abs(score - LLL_M_MAX) < 1e-12


def test_both_clips_engaged():
    # |err| = 5000 clips to 1000; sigma 100 stays
    score = lll_m_single(8000.0, Prediction(3000.0, 100.0))
    expected = -(math.sqrt(2.0) * 1000.0) / 100.0 - math.log(math.sqrt(2.0) * 100.0)
    assert abs(score - expected) < 1e-12
    assert abs(expected - (-19.0939)) < 5e-5


def test_sigma_clip_region():
    for delta in (0.0, 123.0, 999.0):
        low = lll_m_single(2000.0 + delta, Prediction(2000.0, 10.0))
        floor = lll_m_single(2000.0 + delta, Prediction(2000.0, 70.0))
        assert low == floor


def test_nonfinite_rejected():
    with pytest.raises(ValueError):
        lll_m_single(float("nan"), Prediction(1.0, 80.0))
    with pytest.raises(ValueError):
        lll_m_single(1.0, Prediction(float("inf"), 80.0))


def test_sigma_must_be_positive():
    with pytest.raises(ValueError):
        Prediction(100.0, 0.0)
    with pytest.raises(ValueError):
        Prediction(100.0, -5.0)


def test_aggregate_identical_rows():
    rows = [(2400.0, Prediction(2300.0, 90.0))] * 4
    assert abs(lll_m_aggregate(rows) - lll_m_single(*rows[0])) < 1e-15


def test_aggregate_two_rows():
    r1 = (2400.0, Prediction(2300.0, 90.0))
    r2 = (1800.0, Prediction(2100.0, 70.0))
    s1, s2 = lll_m_single(*r1), lll_m_single(*r2)
    assert abs(lll_m_aggregate([r1, r2]) - (s1 + s2) / 2) < 1e-15


def test_aggregate_matches_direct_resummation():
    rng = np.random.default_rng(8)
    rows = [(float(rng.uniform(1500, 3500)),
             Prediction(float(rng.uniform(1500, 3500)),
                        float(rng.uniform(30, 400))))
            for _ in range(20)]
    # spreadsheet-style oracle: recompute each row from the raw formula
    total = 0.0
    for t, p in rows:
        sc = max(p.sigma_ml, 70.0)
        d = min(abs(t - p.fvc_pred_ml), 1000.0)
        total += -(math.sqrt(2) * d) / sc - math.log(math.sqrt(2) * sc)
    assert abs(lll_m_aggregate(rows) - total / 20) < 1e-12


def test_aggregate_empty_rejected():
    with pytest.raises(ValueError):
        lll_m_aggregate([])
    with pytest.raises(ValueError):
        rmse([])


def test_rmse_perfect_and_hand():
    assert rmse([(1.0, 1.0), (2.0, 2.0)]) == 0.0
    assert abs(rmse([(3.0, 0.0), (4.0, 0.0)]) - math.sqrt(12.5)) < 1e-12


def test_rmse_random_direct():
    rng = np.random.default_rng(12)
    rows = [(float(rng.normal()), float(rng.normal())) for _ in range(15)]
    direct = math.sqrt(sum((t - p) ** 2 for t, p in rows) / 15)
    assert abs(rmse(rows) - direct) < 1e-14


def test_rmse_no_clipping():
    # a 5000 ml error contributes its full square
    assert abs(rmse([(6000.0, 1000.0)]) - 5000.0) < 1e-9


@settings(max_examples=100, deadline=None)
@given(sigma=st.floats(1.0, 500.0),
       d1=st.floats(0.0, 2000.0), d2=st.floats(0.0, 2000.0))
def test_monotone_in_error_and_bounded(sigma, d1, d2):
    lo, hi = sorted((d1, d2))
    s_lo = lll_m_single(1000.0 + lo, Prediction(1000.0, sigma))
    s_hi = lll_m_single(1000.0 + hi, Prediction(1000.0, sigma))
    assert s_hi <= s_lo + 1e-12
    assert s_lo <= LLL_M_MAX + 1e-12
    if lo >= ERROR_CEILING_ML:
        assert s_lo == s_hi  # constant beyond the error ceiling


def test_score_pair_invariants():
    ScorePair(LLL_M_MAX, 0.0)
    with pytest.raises(ValueError):
        ScorePair(LLL_M_MAX + 1e-6, 10.0)
    with pytest.raises(ValueError):
        ScorePair(-7.0, -1.0)


def test_constants():
    assert SIGMA_FLOOR_ML == 70.0
    assert ERROR_CEILING_ML == 1000.0
