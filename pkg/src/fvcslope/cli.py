"""Command-line front end. See CLI.md for the full surface.

Exit codes: 0 success, 1 validation error (bad arguments, configs, or
data), 2 internal error. Errors are printed to stderr as single-line JSON
records. Every artifact-producing run writes one manifest.json (atomically,
at run end) next to its outputs.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

from ._util import atomic_write, fingerprint

VERSION = "0.1.0"


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; the contract here is exit 1
    def error(self, message):
        self.print_usage(sys.stderr)
        raise _UsageError(message)


def _emit_error(code: int, message: str):
    print(json.dumps({"level": "error", "exit_code": code, "message": message}),
          file=sys.stderr)


def _write_manifest(directory, command: str, config_paths: dict, seeds: dict,
                    artifacts: dict, fp: str, started: float):
    manifest = {
        "command": command,
        "config_paths": config_paths,
        "seeds": seeds,
        "artifacts": artifacts,
        "config_fingerprint": fp,
        "started_unix": started,
        "finished_unix": time.time(),
    }
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    atomic_write(directory / "manifest.json",
                 json.dumps(manifest, sort_keys=True, indent=2))


def _parse_size(text: str) -> tuple:
    try:
        h, w = text.lower().split("x")
        return int(h), int(w)
    except ValueError:
        raise ValueError(f"size must look like 64x64, got {text!r}") from None


def _load_train_config(path):
    from .train import TrainConfig

    if path is None:
        return TrainConfig()
    return TrainConfig.from_dict(json.loads(Path(path).read_text()))


def _load_model_config(path):
    from .model import ModelConfig

    if path is None:
        return ModelConfig()
    return ModelConfig.from_dict(json.loads(Path(path).read_text()))


CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "fvcslope configuration files",
    "train_config": {
        "type": "object",
        "properties": {
            "epochs": {"type": "integer", "minimum": 1, "default": 40},
            "learning_rate": {"type": "number", "minimum": 0, "default": 1e-3},
            "beta1": {"type": "number", "default": 0.9},
            "beta2": {"type": "number", "default": 0.999},
            "epsilon": {"type": "number", "default": 1e-8},
            "weight_decay": {"type": "number", "minimum": 0, "default": 0.01},
            "seed": {"type": "integer", "default": 0},
            "sigma_mode": {"enum": ["train_residuals", "constant"],
                           "default": "train_residuals"},
            "sigma_constant": {"type": ["number", "null"], "default": None},
        },
    },
    "model_config": {
        "type": "object",
        "properties": {
            "input_size": {"type": "array", "items": {"type": "integer"},
                           "default": [64, 64]},
            "backbone_channels": {"type": "array", "items": {"type": "integer"},
                                  "default": [8, 16, 32]},
            "attention_filter_size": {"type": "integer", "minimum": 1,
                                      "default": 32},
            "stacking_factor": {"type": "integer", "minimum": 0, "default": 1},
            "shallow_dim": {"type": "integer", "default": 5},
            "seed": {"type": "integer", "default": 0},
            "post_pool_linear": {"type": "boolean", "default": True},
            "gamma_init_range": {"type": "array", "items": {"type": "number"},
                                 "default": [0.0, 0.1]},
        },
    },
}


def _build_parser() -> _Parser:
    parser = _Parser(prog="fvcslope",
                     description="FVC slope prognosis pipeline")
    parser.add_argument("--version", action="version", version=VERSION)
    parser.add_argument("--print-config-schema", action="store_true",
                        help="print the JSON schema of config files and exit")
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--patients", type=int, required=True)
    p.add_argument("--noise", type=float, required=True, help="FVC noise in ml")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--slices", type=int, default=16)
    p.add_argument("--slice-px", type=int, default=64)

    p = sub.add_parser("prepare", help="segment CTs and build the prepared file")
    p.add_argument("--data-dir", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--size", default="64x64", help="target slice size, HxW")
    p.add_argument("--volumes-csv", default=None)
    p.add_argument("--t-low", type=float, default=None)
    p.add_argument("--t-high", type=float, default=None)
    p.add_argument("--exclude-negative-weeks", action="store_true")

    p = sub.add_parser("fit-slopes", help="fit per-patient FVC lines to a CSV")
    p.add_argument("--data-dir", default=None)
    p.add_argument("--clinical", default=None,
                   help="clinical CSV (default: <data-dir>/clinical.csv)")
    p.add_argument("--out", required=True)
    p.add_argument("--exclude-negative-weeks", action="store_true")

    p = sub.add_parser("train", help="train one cross-validation fold")
    p.add_argument("--prepared", required=True)
    p.add_argument("--data-dir", required=True)
    p.add_argument("--fold-plan", required=True)
    p.add_argument("--fold", type=int, required=True)
    p.add_argument("--config", default=None, help="train config JSON")
    p.add_argument("--model-config", default=None, help="model config JSON")
    p.add_argument("--out", required=True)

    p = sub.add_parser("evaluate", help="score a fold checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--prepared", required=True)
    p.add_argument("--fold-plan", default=None)
    p.add_argument("--out", required=True)

    p = sub.add_parser("cv", help="k-fold cross-validation experiment")
    p.add_argument("--prepared", required=True)
    p.add_argument("--data-dir", required=True)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--config", default=None, help="train config JSON")
    p.add_argument("--model-config", default=None, help="model config JSON")
    p.add_argument("--out", required=True)

    p = sub.add_parser("gradcheck", help="finite-difference gradient check")
    p.add_argument("--model-config", default=None, help="model config JSON")
    p.add_argument("--h", type=float, default=1e-5)
    p.add_argument("--tol", type=float, default=1e-4)

    return parser


def _require_exists(path, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"{what} not found: {p}")
    return p


def _check_prepared_size(meta: dict, model_cfg) -> None:
    size = tuple(meta.get("target_size", ()))
    if size != tuple(model_cfg.input_size):
        raise ValueError(
            f"prepared slices are {size} but the model expects "
            f"{tuple(model_cfg.input_size)}; re-run prepare or change the config"
        )


def _cmd_synth(args) -> int:
    from .synth import generate_synthetic

    started = time.time()
    summary = generate_synthetic(args.out, args.patients, args.noise, args.seed,
                                 n_slices=args.slices, slice_px=args.slice_px)
    fp = fingerprint({"command": "synth", "patients": args.patients,
                      "noise": args.noise, "seed": args.seed,
                      "slices": args.slices, "slice_px": args.slice_px})
    _write_manifest(args.out, "synth", {}, {"seed": args.seed}, summary, fp, started)
    print(json.dumps({"status": "ok", "n_patients": args.patients,
                      "out": str(args.out)}))
    return 0


def _cmd_prepare(args) -> int:
    from .ctprep import DEFAULT_T_HIGH, DEFAULT_T_LOW
    from .prepare import prepare_dataset

    started = time.time()
    data_dir = _require_exists(args.data_dir, "data directory")
    size = _parse_size(args.size)
    t_low = DEFAULT_T_LOW if args.t_low is None else args.t_low
    t_high = DEFAULT_T_HIGH if args.t_high is None else args.t_high
    summary = prepare_dataset(
        data_dir, args.out, args.seed, size,
        volumes_csv=args.volumes_csv, t_low=t_low, t_high=t_high,
        include_negative_weeks=not args.exclude_negative_weeks)
    fp = fingerprint({"command": "prepare", "seed": args.seed,
                      "size": list(size), "t_low": t_low, "t_high": t_high,
                      "include_negative_weeks": not args.exclude_negative_weeks})
    _write_manifest(Path(args.out).parent, "prepare", {}, {"seed": args.seed},
                    summary, fp, started)
    print(json.dumps({"status": "ok", **summary}))
    return 0


def _cmd_fit_slopes(args) -> int:
    from .prepare import fit_slopes_csv

    started = time.time()
    if args.clinical is None:
        if args.data_dir is None:
            raise ValueError("fit-slopes needs --clinical or --data-dir")
        clinical = _require_exists(Path(args.data_dir) / "clinical.csv",
                                   "clinical file")
    else:
        clinical = _require_exists(args.clinical, "clinical file")
    n = fit_slopes_csv(clinical, args.out,
                       include_negative_weeks=not args.exclude_negative_weeks)
    fp = fingerprint({"command": "fit-slopes",
                      "include_negative_weeks": not args.exclude_negative_weeks})
    _write_manifest(Path(args.out).parent, "fit-slopes", {}, {},
                    {"out": str(args.out), "n_patients": n}, fp, started)
    print(json.dumps({"status": "ok", "n_patients": n, "out": str(args.out)}))
    return 0


def _cmd_train(args) -> int:
    from .dataset import CtCache, FoldPlan, read_prepared
    from .train import train_fold

    started = time.time()
    patients, meta = read_prepared(_require_exists(args.prepared, "prepared file"))
    plan = FoldPlan.from_dict(json.loads(
        _require_exists(args.fold_plan, "fold plan").read_text()))
    if not 0 <= args.fold < plan.k:
        raise ValueError(f"fold {args.fold} out of range for k={plan.k}")
    train_cfg = _load_train_config(args.config)
    model_cfg = _load_model_config(args.model_config)
    _check_prepared_size(meta, model_cfg)

    ct_cache = CtCache(_require_exists(args.data_dir, "data directory"))
    train = [p for p in patients
             if plan.assignments.get(p.patient_id) != args.fold]
    model, stats, sigma, tlog = train_fold(train, ct_cache, train_cfg,
                                           model_cfg, args.fold)

    fp = fingerprint({"command": "train", "fold": args.fold,
                      "train_config": train_cfg.to_dict(),
                      "model_config": model_cfg.to_dict(),
                      "fold_plan": plan.to_dict()})
    out = Path(args.out) / f"run-{fp[:12]}"
    out.mkdir(parents=True, exist_ok=True)
    ckpt = out / f"fold_{args.fold}.ckpt"
    model.save(ckpt, extra_meta={
        "train_config": train_cfg.to_dict(),
        "fold": args.fold, "k": plan.k, "fold_seed": plan.seed,
        "config_fingerprint": fp, "sigma_used": sigma,
        "norm_stats": {"age_mean": stats.age_mean, "age_std": stats.age_std,
                       "volume_mean": stats.volume_mean,
                       "volume_std": stats.volume_std,
                       "fold_id": stats.fold_id},
    })
    atomic_write(out / "train_log.json", json.dumps(tlog, sort_keys=True, indent=2))
    _write_manifest(out, "train",
                    {"config": args.config, "model_config": args.model_config,
                     "fold_plan": str(args.fold_plan)},
                    {"train_seed": train_cfg.seed, "model_seed": model_cfg.seed},
                    {"checkpoint": str(ckpt)}, fp, started)
    print(json.dumps({"status": "ok", "checkpoint": str(ckpt),
                      "final_loss": tlog["epoch_losses"][-1]}))
    return 0


def _cmd_evaluate(args) -> int:
    from .dataset import FoldPlan, read_prepared
    from .train import evaluate_checkpoint, report_to_json

    started = time.time()
    patients, _ = read_prepared(_require_exists(args.prepared, "prepared file"))
    plan = None
    if args.fold_plan is not None:
        plan = FoldPlan.from_dict(json.loads(
            _require_exists(args.fold_plan, "fold plan").read_text()))
    report = evaluate_checkpoint(_require_exists(args.checkpoint, "checkpoint"),
                                 patients, plan)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report_path = out / "eval_report.json"
    atomic_write(report_path, report_to_json(report))
    fp = report.get("config_fingerprint") or fingerprint(
        {"command": "evaluate", "checkpoint": str(args.checkpoint)})
    _write_manifest(out, "evaluate", {"fold_plan": args.fold_plan}, {},
                    {"report": str(report_path)}, fp, started)
    print(json.dumps({"status": "ok", "report": str(report_path),
                      "aggregate": report["aggregate"]}))
    return 0


def _cmd_cv(args) -> int:
    from .dataset import CtCache, read_prepared
    from .train import report_to_json, run_cv

    started = time.time()
    patients, meta = read_prepared(_require_exists(args.prepared, "prepared file"))
    train_cfg = _load_train_config(args.config)
    model_cfg = _load_model_config(args.model_config)
    _check_prepared_size(meta, model_cfg)
    ct_cache = CtCache(_require_exists(args.data_dir, "data directory"))

    report = run_cv(patients, ct_cache, args.k, args.seed, train_cfg, model_cfg,
                    out_dir=args.out)
    run_dir = Path(report["run_dir"])
    _write_manifest(run_dir, "cv",
                    {"config": args.config, "model_config": args.model_config},
                    {"fold_seed": args.seed, "train_seed": train_cfg.seed,
                     "model_seed": model_cfg.seed},
                    {"report": str(run_dir / "eval_report.json")},
                    report["config_fingerprint"], started)
    print(json.dumps({"status": "ok", "run_dir": str(run_dir),
                      "aggregate": report["aggregate"],
                      "baseline_aggregate":
                          report["baseline_zero_slope"]["aggregate"]}))
    return 0


def _cmd_gradcheck(args) -> int:
    from .gradcheck import gradient_check

    model_cfg = _load_model_config(args.model_config)
    result = gradient_check(model_cfg, h=args.h)
    ok = result["max_rel_err"] < args.tol
    print(json.dumps({"status": "ok" if ok else "fail",
                      "max_rel_err": result["max_rel_err"],
                      "n_params": result["n_params"], "tol": args.tol}))
    return 0 if ok else 1


_COMMANDS = {
    "synth": _cmd_synth,
    "prepare": _cmd_prepare,
    "fit-slopes": _cmd_fit_slopes,
    "train": _cmd_train,
    "evaluate": _cmd_evaluate,
    "cv": _cmd_cv,
    "gradcheck": _cmd_gradcheck,
}


def dispatch(argv) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        _emit_error(1, str(exc))
        return 1
    if getattr(args, "print_config_schema", False):
        print(json.dumps(CONFIG_SCHEMA, indent=2, sort_keys=True))
        return 0
    if args.command is None:
        parser.print_usage(sys.stderr)
        _emit_error(1, "no subcommand given")
        return 1
    try:
        return _COMMANDS[args.command](args)
    except (ValueError, FileNotFoundError, KeyError, json.JSONDecodeError) as exc:
        _emit_error(1, f"{type(exc).__name__}: {exc}")
        return 1
    except Exception as exc:  # noqa: BLE001 - boundary of the process
        _emit_error(2, f"internal error: {type(exc).__name__}: {exc}")
        return 2


def main():
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
