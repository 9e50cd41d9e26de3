"""Training loop, per-fold evaluation, and cross-validated experiments.

Training consumes prepared patients (see :mod:`fvcslope.dataset`) plus the
raw CT containers: one random slice per patient is redrawn every epoch as
light augmentation, while segmentation-derived volumes come from the
prepared file. Evaluation uses each patient's stored prepared slice (the
deterministic baseline-CT view), training-fold normalization stats, and a
per-fold sigma, so nothing leaks across the split.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._util import atomic_write, canonical_json, fingerprint, stable_seed
from .dataset import CtCache, FoldPlan, PreparedPatient, make_folds
from .features import NormStats, encode, fit_norm_stats
from .metrics import SIGMA_FLOOR_ML, Prediction, lll_m_aggregate, rmse
from .model import FibroModel, ModelConfig, reconstruct_fvc
from .optim import AdamW
from .tensor import GradTape, Tensor, backward, l1_loss, reshape

__all__ = [
    "TrainConfig",
    "train_fold",
    "evaluate_fold",
    "run_cv",
    "report_to_json",
]

log = logging.getLogger(__name__)

REPORT_FORMAT = 1
METRIC_CONVENTION = ("lll_m: higher (less negative) is better; "
                     "rmse: lower is better")


@dataclass
class TrainConfig:
    epochs: int = 40
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    weight_decay: float = 0.01
    seed: int = 0
    sigma_mode: str = "train_residuals"  # or "constant"
    sigma_constant: float | None = None

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.learning_rate < 0:
            raise ValueError(f"learning rate must be >= 0, got {self.learning_rate}")
        if self.sigma_mode not in ("train_residuals", "constant"):
            raise ValueError(f"unknown sigma mode {self.sigma_mode!r}")
        if self.sigma_mode == "constant" and not self.sigma_constant:
            raise ValueError("sigma_mode 'constant' needs sigma_constant > 0")

    def to_dict(self) -> dict:
        return {
            "epochs": self.epochs,
            "learning_rate": self.learning_rate,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "epsilon": self.epsilon,
            "weight_decay": self.weight_decay,
            "seed": self.seed,
            "sigma_mode": self.sigma_mode,
            "sigma_constant": self.sigma_constant,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


def _fold_stats(patients: list[PreparedPatient], fold_id: int) -> NormStats:
    return fit_norm_stats([p.demographics.age_years for p in patients],
                          [p.volume_mm3 for p in patients], fold_id)


def _shallow(p: PreparedPatient, stats: NormStats) -> np.ndarray:
    return encode(p.demographics, p.volume_mm3, stats)


def _check_stats_fold(stats: NormStats, fold_id: int):
    """Leakage guard: stats must have been fit on this training fold."""
    if stats.fold_id != fold_id:
        raise RuntimeError(
            f"normalization stats were fit on fold {stats.fold_id} "
            f"but are being used for fold {fold_id}"
        )


def _epoch_pixels(p: PreparedPatient, ct_cache: CtCache, slice_seed: int,
                  input_size) -> np.ndarray:
    from .ctprep import prepare_slice

    volume = ct_cache.get(p.patient_id)
    return prepare_slice(volume, slice_seed, input_size).pixels


def _nonbaseline_rows(p: PreparedPatient):
    """(week, fvc) rows excluding the single baseline (earliest-week) row."""
    i_base = int(np.argmin(p.weeks))
    return [(w, v) for j, (w, v) in enumerate(zip(p.weeks, p.fvc_ml))
            if j != i_base]


def _residual_sigma(predict_slope, patients: list[PreparedPatient]) -> float:
    """Population std of FVC residuals under the fitted model, floored."""
    residuals = []
    for p in patients:
        slope = predict_slope(p)
        base_w, base_v = p.baseline
        rows = _nonbaseline_rows(p)
        if not rows:
            continue
        preds = reconstruct_fvc(slope, base_v, [w for w, _ in rows], base_w)
        residuals.extend(v - pred for (_, v), pred in zip(rows, preds))
    if not residuals:
        return SIGMA_FLOOR_ML
    return max(float(np.std(residuals)), SIGMA_FLOOR_ML)


def train_fold(train_patients: list[PreparedPatient], ct_cache: CtCache,
               train_cfg: TrainConfig, model_cfg: ModelConfig, fold_id: int):
    """Train one fold's model on its training patients.

    Returns (model, stats, sigma, log_dict). Patients without a pseudo-label
    or CT container are excluded with a logged reason. A zero learning rate
    skips optimizer stepping entirely (no update, no decay).
    """
    usable, excluded = [], []
    for p in train_patients:
        if not p.trainable:
            excluded.append((p.patient_id, "fewer than 2 distinct weeks"))
        elif p.ct_ref is None:
            excluded.append((p.patient_id, "missing CT container"))
        else:
            usable.append(p)
    for pid, reason in excluded:
        log.warning("fold %d: excluding %s from training: %s", fold_id, pid, reason)
    if len(usable) < 2:
        raise ValueError(f"fold {fold_id}: only {len(usable)} trainable patients")

    stats = _fold_stats(usable, fold_id)
    _check_stats_fold(stats, fold_id)
    shallow_vecs = {p.patient_id: _shallow(p, stats) for p in usable}

    fold_model_cfg = ModelConfig.from_dict(model_cfg.to_dict())
    fold_model_cfg.seed = stable_seed(model_cfg.seed, "fold", fold_id)
    model = FibroModel(fold_model_cfg)

    optimizer = None
    if train_cfg.learning_rate > 0:
        optimizer = AdamW(model.parameters(),
                          learning_rate=train_cfg.learning_rate,
                          beta1=train_cfg.beta1, beta2=train_cfg.beta2,
                          epsilon=train_cfg.epsilon,
                          weight_decay=train_cfg.weight_decay)

    epoch_losses = []
    for epoch in range(train_cfg.epochs):
        order_rng = np.random.default_rng(
            stable_seed(train_cfg.seed, "order", fold_id, epoch))
        order = order_rng.permutation(len(usable))
        losses = []
        for j in order:
            p = usable[int(j)]
            slice_seed = stable_seed(train_cfg.seed, "slice", fold_id, epoch,
                                     p.patient_id)
            pixels = _epoch_pixels(p, ct_cache, slice_seed, model_cfg.input_size)
            with GradTape():
                pred = model.forward(pixels, shallow_vecs[p.patient_id])
                loss = l1_loss(reshape(pred, (1,)), Tensor([p.slope]))
                backward(loss)
            losses.append(loss.item())
            if optimizer is not None:
                optimizer.step()
                optimizer.zero_grad()
            else:
                for t in model.parameters().values():
                    t.grad = None
        epoch_losses.append(float(np.mean(losses)))

    def predict(p: PreparedPatient) -> float:
        return model.predict_slope(p.pixels, _shallow(p, stats))

    if train_cfg.sigma_mode == "constant":
        sigma = float(train_cfg.sigma_constant)
    else:
        sigma = _residual_sigma(predict, usable)

    log_dict = {
        "fold": fold_id,
        "n_train_patients": len(usable),
        "excluded": [[pid, reason] for pid, reason in excluded],
        "epoch_losses": epoch_losses,
    }
    return model, stats, sigma, log_dict


def evaluate_fold(predict_slope, test_patients: list[PreparedPatient],
                  stats: NormStats, sigma: float, fold_id: int) -> dict:
    """Score one fold: reconstruct FVC at all non-baseline weeks per patient.

    ``predict_slope(patient)`` maps a prepared patient to a slope estimate;
    patients with only the baseline row contribute no scored rows but are
    counted. Returns the fold's report entry.
    """
    _check_stats_fold(stats, fold_id)
    scored = []
    details = []
    n_unscored = 0
    for p in test_patients:
        slope = float(predict_slope(p))
        base_w, base_v = p.baseline
        rows = _nonbaseline_rows(p)
        if not rows:
            n_unscored += 1
        else:
            preds = reconstruct_fvc(slope, base_v, [w for w, _ in rows], base_w)
            scored.extend((v, Prediction(pred, sigma))
                          for (_, v), pred in zip(rows, preds))
        details.append({"patient_id": p.patient_id, "slope_pred": slope,
                        "n_scored_rows": len(rows)})

    entry = {
        "fold": fold_id,
        "stats_fold_id": stats.fold_id,
        "sigma_used": sigma,
        "n_test_patients": len(test_patients),
        "n_unscored_patients": n_unscored,
        "n_rows": len(scored),
        "lll_m": lll_m_aggregate(scored) if scored else None,
        "rmse": rmse([(t, pr.fvc_pred_ml) for t, pr in scored]) if scored else None,
        "patients": details,
    }
    return entry


def _aggregate(fold_entries: list[dict]) -> dict:
    def stats_for(key):
        vals = [f[key] for f in fold_entries if f[key] is not None]
        if not vals:
            return None, None
        return float(np.mean(vals)), float(np.std(vals))

    lll_mean, lll_std = stats_for("lll_m")
    rmse_mean, rmse_std = stats_for("rmse")
    return {"lll_m_mean": lll_mean, "lll_m_std": lll_std,
            "rmse_mean": rmse_mean, "rmse_std": rmse_std}


def run_cv(patients: list[PreparedPatient], ct_cache: CtCache, k: int,
           fold_seed: int, train_cfg: TrainConfig, model_cfg: ModelConfig,
           out_dir=None) -> dict:
    """Patient-disjoint k-fold cross-validation of the full pipeline.

    Trains one model per fold, scores it on the held-out patients, and
    scores a zero-slope constant predictor on the same folds with the same
    sigma policy. When ``out_dir`` is given, checkpoints, fold plan, train
    logs, and the report are persisted there.
    """
    plan = make_folds([p.patient_id for p in patients], k, fold_seed)
    by_id = {p.patient_id: p for p in patients}

    fp_payload = {
        "k": k,
        "fold_seed": fold_seed,
        "train_config": train_cfg.to_dict(),
        "model_config": model_cfg.to_dict(),
        "stats_fold_ids": list(range(k)),
        "sigma_fold_ids": list(range(k)),
    }
    fp = fingerprint(fp_payload)

    out = None
    if out_dir is not None:
        out = Path(out_dir) / f"run-{fp[:12]}"
        (out / "checkpoints").mkdir(parents=True, exist_ok=True)
        atomic_write(out / "fold_plan.json",
                     json.dumps(plan.to_dict(), sort_keys=True, indent=2))

    fold_entries, baseline_entries, train_logs = [], [], []
    for fold in range(k):
        test_ids = plan.fold_members(fold)
        test = [by_id[i] for i in test_ids]
        train = [p for p in patients if plan.assignments[p.patient_id] != fold]
        log.info("fold %d: %d train / %d test patients", fold, len(train), len(test))

        model, stats, sigma, tlog = train_fold(train, ct_cache, train_cfg,
                                               model_cfg, fold)
        train_logs.append(tlog)

        def predict(p, _model=model, _stats=stats):
            return _model.predict_slope(p.pixels, _shallow(p, _stats))

        fold_entries.append(evaluate_fold(predict, test, stats, sigma, fold))

        # zero-slope reference under the identical sigma policy
        trainable = [p for p in train if p.trainable]
        if train_cfg.sigma_mode == "constant":
            base_sigma = float(train_cfg.sigma_constant)
        else:
            base_sigma = _residual_sigma(lambda p: 0.0, trainable)
        base_entry = evaluate_fold(lambda p: 0.0, test, stats, base_sigma, fold)
        base_entry.pop("patients")
        baseline_entries.append(base_entry)

        if out is not None:
            model.save(out / "checkpoints" / f"fold_{fold}.ckpt", extra_meta={
                "train_config": train_cfg.to_dict(),
                "fold": fold,
                "k": k,
                "fold_seed": fold_seed,
                "config_fingerprint": fp,
                "sigma_used": sigma,
                "norm_stats": {
                    "age_mean": stats.age_mean, "age_std": stats.age_std,
                    "volume_mean": stats.volume_mean,
                    "volume_std": stats.volume_std,
                    "fold_id": stats.fold_id,
                },
            })

    report = {
        "report_format": REPORT_FORMAT,
        "metric_convention": METRIC_CONVENTION,
        "config_fingerprint": fp,
        "k": k,
        "fold_seed": fold_seed,
        "train_config": train_cfg.to_dict(),
        "model_config": model_cfg.to_dict(),
        "fold_assignments": dict(sorted(plan.assignments.items())),
        "folds": fold_entries,
        "aggregate": _aggregate(fold_entries),
        "baseline_zero_slope": {
            "folds": baseline_entries,
            "aggregate": _aggregate(baseline_entries),
        },
    }

    if out is not None:
        atomic_write(out / "eval_report.json", report_to_json(report))
        atomic_write(out / "train_log.json",
                     json.dumps(train_logs, sort_keys=True, indent=2))
        report["run_dir"] = str(out)
    return report


def report_to_json(report: dict) -> str:
    """Deterministic report serialization (stable key order, fixed floats)."""
    clean = {key: v for key, v in report.items() if key != "run_dir"}
    return json.dumps(clean, sort_keys=True, indent=2)


def evaluate_checkpoint(ckpt_path, patients: list[PreparedPatient],
                        fold_plan: FoldPlan | None = None) -> dict:
    """Score a saved fold checkpoint on its held-out patients.

    The checkpoint's metadata carries the fold id, normalization stats, and
    sigma. When a fold plan is given, the test set is that fold's members;
    otherwise every supplied patient is scored.
    """
    model, meta = FibroModel.load(ckpt_path)
    if "fold" not in meta or "norm_stats" not in meta:
        raise ValueError(f"{ckpt_path}: checkpoint lacks fold/stats metadata")
    fold = int(meta["fold"])
    ns = meta["norm_stats"]
    stats = NormStats(ns["age_mean"], ns["age_std"], ns["volume_mean"],
                      ns["volume_std"], int(ns["fold_id"]))
    sigma = float(meta["sigma_used"])

    if fold_plan is not None:
        members = set(fold_plan.fold_members(fold))
        test = [p for p in patients if p.patient_id in members]
    else:
        test = list(patients)

    def predict(p):
        return model.predict_slope(p.pixels, _shallow(p, stats))

    entry = evaluate_fold(predict, test, stats, sigma, fold)
    return {
        "report_format": REPORT_FORMAT,
        "metric_convention": METRIC_CONVENTION,
        "config_fingerprint": meta.get("config_fingerprint"),
        "k": meta.get("k"),
        "folds": [entry],
        "aggregate": _aggregate([entry]),
    }
