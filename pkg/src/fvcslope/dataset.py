"""Dataset model: clinical CSV ingestion, fold plans, prepared-data container.

A dataset directory holds ``clinical.csv`` (schema
``Patient,Weeks,FVC,Percent,Age,Sex,SmokingStatus``) and one CT container
per patient under ``ct/<patient_id>/``. The ``prepare`` step condenses it
into a single binary file so training never re-runs segmentation.
"""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .features import Demographics, Sex, Smoking
from .slope import FvcSeries

__all__ = [
    "PatientRecord",
    "FoldPlan",
    "PreparedPatient",
    "load_clinical_csv",
    "load_dataset",
    "make_folds",
    "write_prepared",
    "read_prepared",
    "CtCache",
]

CLINICAL_HEADER = ["Patient", "Weeks", "FVC", "Percent", "Age", "Sex", "SmokingStatus"]

PREPARED_MAGIC = b"FVCPREP1"
PREPARED_VERSION = 1


@dataclass
class PatientRecord:
    """One patient: FVC series, demographics, and an optional CT reference."""

    patient_id: str
    fvc_series: FvcSeries
    demographics: Demographics
    percent: tuple = ()
    ct_ref: Path | None = None

    @property
    def baseline(self) -> tuple:
        """(week, fvc) of the earliest recorded measurement."""
        i = int(np.argmin(self.fvc_series.weeks))
        return self.fvc_series.weeks[i], self.fvc_series.fvc_ml[i]


def _parse_enum(enum_cls, raw: str, line_no: int, column: str):
    for member in enum_cls:
        if member.value == raw:
            return member
    valid = ", ".join(repr(m.value) for m in enum_cls)
    raise ValueError(
        f"clinical csv line {line_no}: unknown {column} {raw!r}; valid values: {valid}"
    )


def load_clinical_csv(path) -> list[PatientRecord]:
    """Parse the clinical file; rows grouped by patient in first-seen order.

    Duplicate (patient, week) rows are kept: the least-squares fit handles
    repeated visits naturally. Demographics come from the patient's first
    row. Malformed rows fail with their line number.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"clinical file not found: {path}")
    groups: dict[str, dict] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty clinical file") from None
        if header != CLINICAL_HEADER:
            raise ValueError(
                f"{path}: header {header} does not match {CLINICAL_HEADER}"
            )
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(CLINICAL_HEADER):
                raise ValueError(
                    f"clinical csv line {line_no}: expected "
                    f"{len(CLINICAL_HEADER)} fields, got {len(row)}"
                )
            pid, weeks_s, fvc_s, pct_s, age_s, sex_s, smoke_s = row
            try:
                week = int(weeks_s)
                fvc = float(fvc_s)
                pct = float(pct_s)
                age = float(age_s)
            except ValueError as exc:
                raise ValueError(f"clinical csv line {line_no}: {exc}") from None
            sex = _parse_enum(Sex, sex_s, line_no, "sex")
            smoking = _parse_enum(Smoking, smoke_s, line_no, "smoking status")
            g = groups.setdefault(pid, {
                "weeks": [], "fvc": [], "pct": [],
                "demo": Demographics(age, sex, smoking),
            })
            g["weeks"].append(week)
            g["fvc"].append(fvc)
            g["pct"].append(pct)

    records = []
    for pid, g in groups.items():
        records.append(PatientRecord(
            patient_id=pid,
            fvc_series=FvcSeries(tuple(g["weeks"]), tuple(g["fvc"])),
            demographics=g["demo"],
            percent=tuple(g["pct"]),
        ))
    return records


def load_dataset(data_dir) -> list[PatientRecord]:
    """Load clinical.csv from a dataset directory and attach CT references."""
    data_dir = Path(data_dir)
    records = load_clinical_csv(data_dir / "clinical.csv")
    for rec in records:
        ct_dir = data_dir / "ct" / rec.patient_id
        rec.ct_ref = ct_dir if (ct_dir / "meta.json").is_file() else None
    return records


@dataclass(frozen=True)
class FoldPlan:
    """Patient-disjoint fold assignment; fold sizes differ by at most one."""

    k: int
    assignments: dict  # patient_id -> fold index
    seed: int

    def fold_members(self, fold: int) -> list:
        return sorted(p for p, f in self.assignments.items() if f == fold)

    def to_dict(self) -> dict:
        return {"k": self.k, "seed": self.seed, "assignments": dict(self.assignments)}

    @classmethod
    def from_dict(cls, d: dict) -> "FoldPlan":
        return cls(int(d["k"]), {str(p): int(f) for p, f in d["assignments"].items()},
                   int(d["seed"]))


def make_folds(patient_ids, k: int, seed: int) -> FoldPlan:
    """Seeded shuffle + round-robin assignment of patients to k folds."""
    ids = list(patient_ids)
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate patient ids in fold input")
    if k < 2:
        raise ValueError(f"k must be >= 2, got {k}")
    if k > len(ids):
        raise ValueError(f"k={k} exceeds patient count {len(ids)}")
    order = list(np.random.default_rng(seed).permutation(len(ids)))
    assignments = {ids[j]: i % k for i, j in enumerate(order)}
    return FoldPlan(k, assignments, seed)


# ---------------------------------------------------------------------------
# prepared-dataset container


@dataclass
class PreparedPatient:
    """Everything training/eval needs for one patient, minus the raw CT stack.

    Shallow features are stored un-normalized; z-scoring happens per
    training fold so statistics never leak across the split. ``slope`` is
    None when the patient has fewer than two distinct weeks.
    """

    patient_id: str
    pixels: np.ndarray  # prepared slice, [H, W] in [0,1]
    source_index: int
    volume_mm3: float
    n_slices: int
    n_empty_masks: int
    demographics: Demographics
    weeks: tuple
    fvc_ml: tuple
    slope: float | None
    intercept: float | None
    residual_norm: float | None
    ct_ref: str | None = None

    @property
    def baseline(self) -> tuple:
        i = int(np.argmin(self.weeks))
        return self.weeks[i], self.fvc_ml[i]

    @property
    def trainable(self) -> bool:
        return self.slope is not None


def _patient_json(p: PreparedPatient) -> dict:
    return {
        "patient_id": p.patient_id,
        "source_index": p.source_index,
        "volume_mm3": p.volume_mm3,
        "n_slices": p.n_slices,
        "n_empty_masks": p.n_empty_masks,
        "age_years": p.demographics.age_years,
        "sex": p.demographics.sex.value,
        "smoking": p.demographics.smoking.value,
        "weeks": list(p.weeks),
        "fvc_ml": list(p.fvc_ml),
        "slope": p.slope,
        "intercept": p.intercept,
        "residual_norm": p.residual_norm,
        "ct_ref": p.ct_ref,
        "height": int(p.pixels.shape[0]),
        "width": int(p.pixels.shape[1]),
    }


def write_prepared(path, patients: list[PreparedPatient], meta: dict):
    """Write the binary prepared-dataset container."""
    chunks = [PREPARED_MAGIC, struct.pack("<I", PREPARED_VERSION)]
    meta_b = json.dumps(meta, sort_keys=True).encode()
    chunks.append(struct.pack("<I", len(meta_b)))
    chunks.append(meta_b)
    chunks.append(struct.pack("<I", len(patients)))
    for p in patients:
        rec = json.dumps(_patient_json(p), sort_keys=True).encode()
        chunks.append(struct.pack("<I", len(rec)))
        chunks.append(rec)
        chunks.append(np.ascontiguousarray(p.pixels, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(chunks))


def read_prepared(path) -> tuple[list[PreparedPatient], dict]:
    """Read back (patients, meta) from a prepared-dataset container."""
    buf = Path(path).read_bytes()
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(buf):
            raise ValueError(f"{path}: truncated prepared file")
        out = buf[pos:pos + n]
        pos += n
        return out

    def u32():
        return struct.unpack("<I", take(4))[0]

    if take(len(PREPARED_MAGIC)) != PREPARED_MAGIC:
        raise ValueError(f"{path}: not a prepared-dataset file (bad magic)")
    version = u32()
    if version != PREPARED_VERSION:
        raise ValueError(f"{path}: unsupported prepared format version {version}")
    meta = json.loads(take(u32()).decode())
    patients = []
    for _ in range(u32()):
        rec = json.loads(take(u32()).decode())
        h, w = rec["height"], rec["width"]
        pixels = np.frombuffer(take(8 * h * w), dtype="<f8").reshape(h, w).copy()
        patients.append(PreparedPatient(
            patient_id=rec["patient_id"],
            pixels=pixels,
            source_index=rec["source_index"],
            volume_mm3=rec["volume_mm3"],
            n_slices=rec["n_slices"],
            n_empty_masks=rec["n_empty_masks"],
            demographics=Demographics(rec["age_years"], Sex(rec["sex"]),
                                      Smoking(rec["smoking"])),
            weeks=tuple(rec["weeks"]),
            fvc_ml=tuple(rec["fvc_ml"]),
            slope=rec["slope"],
            intercept=rec["intercept"],
            residual_norm=rec["residual_norm"],
            ct_ref=rec["ct_ref"],
        ))
    if pos != len(buf):
        raise ValueError(f"{path}: trailing bytes in prepared file")
    return patients, meta


class CtCache:
    """Lazy in-memory cache of CT containers under one dataset directory."""

    def __init__(self, data_dir):
        self.data_dir = Path(data_dir)
        self._cache: dict[str, object] = {}

    def get(self, patient_id: str):
        from .ctprep import read_ct_volume

        if patient_id not in self._cache:
            self._cache[patient_id] = read_ct_volume(
                self.data_dir / "ct" / patient_id
            )
        return self._cache[patient_id]
