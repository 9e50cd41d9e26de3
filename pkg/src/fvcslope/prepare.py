"""Dataset preparation: segmentation, slice extraction, slope pseudo-labels.

Turns a dataset directory (clinical.csv + ct containers) into the single
prepared-data file consumed by training, plus a volumes.csv summary. The
expensive watershed pass runs exactly once per patient here.
"""

from __future__ import annotations

import csv
import logging
from pathlib import Path

from ._util import stable_seed
from .ctprep import DEFAULT_T_HIGH, DEFAULT_T_LOW, prepare_slice, read_ct_volume, \
    segment_volume, volume_from_masks
from .dataset import PatientRecord, PreparedPatient, load_dataset, write_prepared
from .slope import fit_slope

__all__ = ["prepare_dataset", "fit_slopes_csv"]

log = logging.getLogger(__name__)


def _pseudo_label(record: PatientRecord, include_negative_weeks: bool):
    series = record.fvc_series
    if not include_negative_weeks:
        series = series.without_negative_weeks()
    if len(series) < 2 or len(set(series.weeks)) < 2:
        return None, len(series)
    label = fit_slope(series)
    return label, len(series)


def prepare_dataset(data_dir, out_path, seed: int, target_size,
                    volumes_csv=None, t_low: float = DEFAULT_T_LOW,
                    t_high: float = DEFAULT_T_HIGH,
                    include_negative_weeks: bool = True) -> dict:
    """Build the prepared-data container for a dataset directory.

    Per patient: read the CT stack, segment every slice for the volume
    estimate, select + normalize + resize one slice (seeded per patient),
    and fit the slope pseudo-label. Patients without a CT container are
    skipped with a warning. Returns a summary dict.
    """
    data_dir = Path(data_dir)
    out_path = Path(out_path)
    records = load_dataset(data_dir)
    if not records:
        raise ValueError(f"{data_dir}: no patients in clinical.csv")

    prepared: list[PreparedPatient] = []
    volume_rows = []
    skipped = []
    for rec in records:
        if rec.ct_ref is None:
            skipped.append(rec.patient_id)
            log.warning("prepare: %s has no CT container, skipping", rec.patient_id)
            continue
        volume = read_ct_volume(rec.ct_ref)
        masks, empty = segment_volume(volume, t_low, t_high)
        vol_mm3 = volume_from_masks(masks, volume.spacing_mm)
        ps = prepare_slice(volume, stable_seed(seed, "prepare", rec.patient_id),
                           target_size)
        label, n_points = _pseudo_label(rec, include_negative_weeks)
        prepared.append(PreparedPatient(
            patient_id=rec.patient_id,
            pixels=ps.pixels,
            source_index=ps.source_index,
            volume_mm3=vol_mm3,
            n_slices=volume.n_slices,
            n_empty_masks=len(empty),
            demographics=rec.demographics,
            weeks=rec.fvc_series.weeks,
            fvc_ml=rec.fvc_series.fvc_ml,
            slope=None if label is None else label.slope_ml_per_week,
            intercept=None if label is None else label.intercept_ml,
            residual_norm=None if label is None else label.residual_norm,
            ct_ref=str(rec.ct_ref),
        ))
        volume_rows.append([rec.patient_id, repr(vol_mm3), volume.n_slices,
                            len(empty)])

    if not prepared:
        raise ValueError(f"{data_dir}: no patient had a CT container")

    meta = {
        "seed": seed,
        "target_size": [int(target_size[0]), int(target_size[1])],
        "t_low": t_low,
        "t_high": t_high,
        "include_negative_weeks": include_negative_weeks,
        "n_patients": len(prepared),
        "data_dir": str(data_dir),
    }
    write_prepared(out_path, prepared, meta)

    if volumes_csv is None:
        volumes_csv = out_path.parent / "volumes.csv"
    with open(volumes_csv, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["patient_id", "volume_mm3", "n_slices", "warnings"])
        writer.writerows(volume_rows)

    return {"prepared": str(out_path), "volumes_csv": str(volumes_csv),
            "n_patients": len(prepared), "skipped": skipped}


def fit_slopes_csv(clinical_path, out_csv, include_negative_weeks: bool = True) -> int:
    """Write per-patient least-squares lines to a CSV; returns the row count."""
    from .dataset import load_clinical_csv

    records = load_clinical_csv(clinical_path)
    rows = []
    for rec in records:
        label, n_points = _pseudo_label(rec, include_negative_weeks)
        if label is None:
            log.warning("fit-slopes: %s has <2 distinct weeks, skipping",
                        rec.patient_id)
            continue
        rows.append([rec.patient_id, repr(label.slope_ml_per_week),
                     repr(label.intercept_ml), repr(label.residual_norm), n_points])
    with open(out_csv, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["patient_id", "slope", "intercept", "residual_norm",
                         "n_points"])
        writer.writerows(rows)
    return len(rows)
