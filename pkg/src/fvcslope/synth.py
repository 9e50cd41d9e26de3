"""Synthetic desk-scale dataset: linear FVC decline + ellipsoid CT phantoms.

Each patient gets a true slope drawn from a declining range, an FVC series
sampled at 6-9 visit weeks with Gaussian noise, and an ellipsoidal lung
phantom whose analytic volume increases monotonically with the true slope
(so the shallow volume feature genuinely predicts decline). A ``truth.csv``
records the generating slope and analytic volume for closed-loop checks.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from ._util import stable_seed
from .ctprep import write_ct_volume
from .phantom import ellipsoid_ct

__all__ = ["generate_synthetic", "SLOPE_RANGE", "VOLUME_RANGE_MM3"]

SLOPE_RANGE = (-12.0, -2.0)  # ml/week, strictly declining
VOLUME_RANGE_MM3 = (20000.0, 80000.0)
SEXES = ("Male", "Female")
SMOKING = ("Never smoked", "Ex-smoker", "Currently smokes")


def _semi_axes_for_volume(volume_mm3: float) -> tuple:
    # shape fixed at (r, r, 1.4 r) so the volume pins the scale
    r = (3.0 * volume_mm3 / (4.0 * np.pi * 1.4)) ** (1.0 / 3.0)
    return (r, r, 1.4 * r)


def generate_synthetic(out_dir, n_patients: int, noise_ml: float, seed: int,
                       n_slices: int = 16, slice_px: int = 64,
                       spacing_mm=(1.0, 1.0, 5.0)) -> dict:
    """Write clinical.csv, ct/<pid>/ containers, and truth.csv under out_dir.

    Deterministic: a fixed seed reproduces the dataset byte for byte.
    Returns a small summary dict (patient ids, paths).
    """
    if n_patients < 2:
        raise ValueError(f"need at least 2 patients, got {n_patients}")
    if noise_ml < 0:
        raise ValueError(f"noise must be >= 0, got {noise_ml}")
    out = Path(out_dir)
    (out / "ct").mkdir(parents=True, exist_ok=True)

    a_lo, a_hi = SLOPE_RANGE
    v_lo, v_hi = VOLUME_RANGE_MM3
    clinical_rows = []
    truth_rows = []
    ids = []
    for i in range(n_patients):
        pid = f"SYN{i:04d}"
        ids.append(pid)
        rng = np.random.default_rng(stable_seed(seed, "patient", pid))

        true_slope = float(rng.uniform(a_lo, a_hi))
        intercept = float(rng.uniform(2200.0, 3800.0))
        n_visits = int(rng.integers(6, 10))
        weeks = np.sort(rng.choice(np.arange(-4, 61), size=n_visits, replace=False))
        noise = rng.normal(0.0, noise_ml, size=n_visits) if noise_ml > 0 else \
            np.zeros(n_visits)
        fvc = intercept + true_slope * weeks + noise

        age = int(rng.integers(55, 86))
        sex = SEXES[int(rng.integers(0, 2))]
        smoking = SMOKING[int(rng.integers(0, 3))]
        typical = intercept * 1.1
        for w, v in zip(weeks, fvc):
            clinical_rows.append([pid, int(w), repr(float(v)),
                                  repr(float(100.0 * v / typical)),
                                  age, sex, smoking])

        # volume grows monotonically with the slope over its range
        t = (true_slope - a_lo) / (a_hi - a_lo)
        volume = v_lo + t * (v_hi - v_lo)
        ct, _, analytic = ellipsoid_ct(pid, (n_slices, slice_px, slice_px),
                                       spacing_mm, _semi_axes_for_volume(volume))
        write_ct_volume(out / "ct" / pid, ct)
        truth_rows.append([pid, repr(true_slope), repr(analytic)])

    with open(out / "clinical.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["Patient", "Weeks", "FVC", "Percent", "Age", "Sex",
                         "SmokingStatus"])
        writer.writerows(clinical_rows)
    with open(out / "truth.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["patient_id", "true_slope", "analytic_volume_mm3"])
        writer.writerows(truth_rows)

    return {"patients": ids, "clinical": str(out / "clinical.csv"),
            "truth": str(out / "truth.csv"), "ct_root": str(out / "ct")}


def read_truth_csv(path) -> dict:
    """truth.csv -> {patient_id: (true_slope, analytic_volume_mm3)}."""
    out = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            out[row["patient_id"]] = (float(row["true_slope"]),
                                      float(row["analytic_volume_mm3"]))
    return out
