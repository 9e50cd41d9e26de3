"""Shallow-modality feature encoding: demographics plus estimated lung volume.

The encoded vector order is frozen (see FEATURES.md):

    [age_z, sex_code, smoke_code_1, smoke_code_2, volume_z]

Sex codes Male=1, Female=0. Smoking is a reference-category one-hot:
never smoked = [0,0], ex-smoker = [1,0], currently smokes = [0,1]. Age and
volume are z-scored with statistics fit on the training fold only; the
optional baseline-FVC extension appends a sixth z-scored entry.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum

import numpy as np

__all__ = ["Sex", "Smoking", "Demographics", "NormStats", "fit_norm_stats", "encode"]

log = logging.getLogger(__name__)

SHALLOW_DIM = 5


class Sex(Enum):
    MALE = "Male"
    FEMALE = "Female"


class Smoking(Enum):
    CURRENTLY_SMOKES = "Currently smokes"
    EX_SMOKER = "Ex-smoker"
    NEVER_SMOKED = "Never smoked"


_SMOKE_CODES = {
    Smoking.NEVER_SMOKED: (0.0, 0.0),
    Smoking.EX_SMOKER: (1.0, 0.0),
    Smoking.CURRENTLY_SMOKES: (0.0, 1.0),
}


@dataclass(frozen=True)
class Demographics:
    age_years: float
    sex: Sex
    smoking: Smoking

    def __post_init__(self):
        if not 0 < self.age_years < 130:
            raise ValueError(f"age out of range (0, 130): {self.age_years}")


@dataclass(frozen=True)
class NormStats:
    """Per-feature (mean, std) fit on one training fold.

    ``fold_id`` records the fold the stats were fit on so the harness can
    assert that test rows are never normalized with their own fold's stats.
    """

    age_mean: float
    age_std: float
    volume_mean: float
    volume_std: float
    fold_id: int
    baseline_fvc_mean: float | None = None
    baseline_fvc_std: float | None = None


def _mean_std(values, name: str):
    """Population (1/N) mean and std; a zero std is replaced by 1."""
    arr = np.asarray(values, dtype=np.float64)
    mean = float(arr.mean())
    std = float(arr.std())
    if std == 0.0:
        log.warning("feature '%s' has zero variance on this fold; std set to 1", name)
        std = 1.0
    return mean, std


def fit_norm_stats(ages, volumes, fold_id: int, baseline_fvcs=None) -> NormStats:
    """Fit normalization statistics from training-fold rows only."""
    ages = list(ages)
    volumes = list(volumes)
    if len(ages) < 2 or len(volumes) != len(ages):
        raise ValueError(
            f"need >= 2 matching rows to fit stats, got {len(ages)} ages "
            f"and {len(volumes)} volumes"
        )
    age_mean, age_std = _mean_std(ages, "age")
    vol_mean, vol_std = _mean_std(volumes, "volume")
    fvc_mean = fvc_std = None
    if baseline_fvcs is not None:
        fvc_mean, fvc_std = _mean_std(list(baseline_fvcs), "baseline_fvc")
    return NormStats(age_mean, age_std, vol_mean, vol_std, int(fold_id),
                     fvc_mean, fvc_std)


def encode(demo: Demographics, volume_mm3: float, stats: NormStats,
           baseline_fvc_ml: float | None = None) -> np.ndarray:
    """Encode one patient into the frozen shallow feature vector.

    Passing ``baseline_fvc_ml`` requires stats fit with baseline FVCs and
    appends a sixth entry; the default vector has exactly five.
    """
    vec = [
        (demo.age_years - stats.age_mean) / stats.age_std,
        1.0 if demo.sex is Sex.MALE else 0.0,
        *_SMOKE_CODES[demo.smoking],
        (volume_mm3 - stats.volume_mean) / stats.volume_std,
    ]
    if baseline_fvc_ml is not None:
        if stats.baseline_fvc_mean is None:
            raise ValueError("stats were fit without baseline FVC values")
        vec.append((baseline_fvc_ml - stats.baseline_fvc_mean) / stats.baseline_fvc_std)
    out = np.asarray(vec, dtype=np.float64)
    if not np.all(np.isfinite(out)):
        raise ValueError(f"non-finite shallow feature vector: {out}")
    return out
