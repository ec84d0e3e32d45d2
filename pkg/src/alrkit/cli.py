"""Batch command-line pipeline: phantom-gen, preprocess, train, evaluate,
proxy, repro.

Exit codes: 0 success, 2 usage/config error, 3 I/O error, 4 missing
prerequisite artifact. Logs go to stderr; data goes to files only.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import airway, phantom, stats, train as train_mod
from .nnet import (
    ParamSet,
    concat_forward_batch,
    gated_forward_batch,
    load_checkpoint,
    save_checkpoint,
    stage1_model_forward,
)
from .train import TargetScaler, TrainConfig, train_stage1, train_stage2
from .volgrid import (VIEWS, pad_to_fov, project, read_mvol, resample_nn,
                      volume_mm3, write_stack)

log = logging.getLogger("alr")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_MISSING = 4

RUN_MANIFEST_NAME = "run_manifest.json"
PREPROCESS_META_NAME = "preprocess_meta.json"

PROXY_COLUMNS = ("id", "proxy_alr", "n_branches_used", "mean_diam_mm", "lung_vol_mm3")
EVAL_COLUMNS = ("id", "alr_true", "alr_pred", "residual")
ATTN_COLUMNS = ("attention_cor", "attention_sag", "attention_ax")


class CliConfigError(Exception):
    exit_code = EXIT_CONFIG


class CliIOError(Exception):
    exit_code = EXIT_IO


class CliMissingError(Exception):
    exit_code = EXIT_MISSING


# ---------------------------------------------------------------------------
# Run manifest
# ---------------------------------------------------------------------------

def config_hash(config: dict) -> str:
    return hashlib.sha256(
        json.dumps(config, sort_keys=True).encode("ascii")).hexdigest()


@dataclass
class RunManifest:
    dataset_manifest: str = ""
    cache_dir: str = ""
    dims: int = 0
    fov_mm: list = field(default_factory=list)
    scaler: dict = field(default_factory=dict)  # {"mu": ..., "sigma": ...}
    checkpoints: dict = field(default_factory=dict)  # name -> {path, config_hash}
    root: Path = Path(".")  # run directory; checkpoint paths resolve against it

    @classmethod
    def load(cls, run_dir) -> "RunManifest":
        path = Path(run_dir) / RUN_MANIFEST_NAME
        if not path.exists():
            raise CliMissingError(f"run manifest not found: {path}")
        with open(path, encoding="utf-8") as fh:
            return cls(**json.load(fh), root=Path(run_dir))

    def save(self, run_dir) -> None:
        path = Path(run_dir) / RUN_MANIFEST_NAME
        payload = {"dataset_manifest": self.dataset_manifest,
                   "cache_dir": self.cache_dir, "dims": self.dims,
                   "fov_mm": self.fov_mm, "scaler": self.scaler,
                   "checkpoints": self.checkpoints}
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")

    def record_checkpoint(self, name: str, path: Path, config: dict) -> None:
        # relative to the run dir so the directory stays relocatable
        self.checkpoints[name] = {"path": Path(path).name,
                                  "config_hash": config_hash(config)}

    def verified_checkpoint(self, name: str) -> tuple[ParamSet, dict, int]:
        """Load a recorded checkpoint, enforcing the config-hash invariant."""
        entry = self.checkpoints.get(name)
        if entry is None:
            raise CliMissingError(f"checkpoint {name!r} not recorded in the run manifest")
        path = Path(entry["path"])
        if not path.is_absolute():
            path = self.root / path
        if not path.exists():
            raise CliMissingError(f"checkpoint file missing: {path}")
        params, config, seed = load_checkpoint(path)
        if config_hash(config) != entry["config_hash"]:
            raise CliMissingError(
                f"checkpoint {name!r} does not match the recorded config hash; "
                "artifacts were mixed across runs")
        return params, config, seed

    def target_scaler(self) -> TargetScaler:
        if not self.scaler:
            raise CliMissingError("run manifest has no target scaler; train stage 1 first")
        return TargetScaler(mu=self.scaler["mu"], sigma=self.scaler["sigma"])


# ---------------------------------------------------------------------------
# phantom-gen
# ---------------------------------------------------------------------------

def cmd_phantom_gen(args) -> int:
    if args.n < 1:
        raise CliConfigError("--n must be at least 1")
    if args.strata < 1:
        raise CliConfigError("--strata must be at least 1")
    if args.rescan:
        manifest = phantom.gen_rescan_set(args.n, args.seed, args.strata, args.out)
    else:
        manifest = phantom.gen_dataset(args.n, args.seed, args.strata, args.out)
    log.info("wrote %s", manifest)
    return EXIT_OK


# ---------------------------------------------------------------------------
# preprocess
# ---------------------------------------------------------------------------

def _dataset_fov(rows, lung_key: str) -> np.ndarray:
    """Per-axis max physical extent (mm) across the dataset's cardiac volumes."""
    fov = np.zeros(3)
    for row in rows:
        grid = read_mvol(row[lung_key])
        fov = np.maximum(fov, np.array(grid.dims) * np.array(grid.spacing_mm))
    return fov


def _check_volume_files(rows, keys) -> None:
    missing = [row["id"] for row in rows
               if any(not Path(row[k]).exists() for k in keys)]
    if missing:
        raise CliIOError(f"missing volume files for ids: {missing}")


def _subject_stacks(lung_path, airway_path, fov_mm, dims: int, subject_id):
    lung = read_mvol(lung_path)
    aw = read_mvol(airway_path)
    if not aw.data.any():
        log.warning("subject %s: empty airway mask; stacks get zero airway channels",
                    subject_id)
    lung = resample_nn(pad_to_fov(lung, fov_mm), (dims, dims, dims))
    aw = resample_nn(pad_to_fov(aw, fov_mm), (dims, dims, dims))
    return [project(aw, lung, view) for view in VIEWS]


def cmd_preprocess(args) -> int:
    if args.dims < 8:
        raise CliConfigError("--dims must be at least 8")
    manifest_path = Path(args.manifest)
    if not manifest_path.exists():
        raise CliIOError(f"manifest not found: {manifest_path}")
    rows = phantom.load_manifest(manifest_path)
    _check_volume_files(rows, ("cc_lung", "cc_airway"))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    fov = _dataset_fov(rows, "cc_lung")
    for row in rows:
        for stack in _subject_stacks(row["cc_lung"], row["cc_airway"], fov,
                                     args.dims, row["id"]):
            write_stack(stack, train_mod.stack_path(out, row["id"], stack.view))
    meta = {"dims": args.dims, "fov_mm": [float(x) for x in fov],
            "manifest": str(manifest_path)}
    with open(out / PREPROCESS_META_NAME, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    log.info("wrote %d view stacks to %s", 3 * len(rows), out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

_CONFIG_FLAGS = ("lr", "weight_decay", "max_epochs", "patience", "batch_size",
                 "seed", "augment", "patch", "dim", "blocks", "attn_hidden",
                 "dropout", "t0", "t_mult")


def build_train_config(args, image_hw: int) -> TrainConfig:
    fields: dict = {}
    if args.config:
        cfg_path = Path(args.config)
        if not cfg_path.exists():
            raise CliIOError(f"config file not found: {cfg_path}")
        with open(cfg_path, encoding="utf-8") as fh:
            loaded = json.load(fh)
        unknown = set(loaded) - set(TrainConfig.__dataclass_fields__)
        if unknown:
            raise CliConfigError(f"unknown config fields: {sorted(unknown)}")
        fields.update(loaded)
    for name in _CONFIG_FLAGS:
        val = getattr(args, name, None)
        if val is not None:
            fields[name] = val
    fields["image_hw"] = image_hw
    try:
        return TrainConfig(**fields)
    except (TypeError, ValueError) as exc:
        raise CliConfigError(f"invalid training config: {exc}") from None


def _load_run_inputs(args):
    manifest_path = Path(args.manifest)
    if not manifest_path.exists():
        raise CliIOError(f"manifest not found: {manifest_path}")
    rows = phantom.load_manifest(manifest_path)
    cache = Path(args.cache)
    meta_path = cache / PREPROCESS_META_NAME
    if not meta_path.exists():
        raise CliMissingError(f"no preprocessing metadata in {cache}; run preprocess first")
    with open(meta_path, encoding="utf-8") as fh:
        meta = json.load(fh)
    return manifest_path, rows, cache, meta


def _split_features(rows, cache, stage1_params, split: str) -> tuple[np.ndarray, np.ndarray]:
    sel = [r for r in rows if r["split"] == split]
    if not sel:
        raise CliMissingError(f"split {split!r} is empty")
    feats = np.stack([train_mod.compute_features(
        train_mod.load_stacks(sel, cache, view), stage1_params[view])
        for view in VIEWS], axis=1)  # (n, 3, D)
    targets = np.array([r["alr_gt"] for r in sel], dtype=np.float64)
    return feats, targets


def cmd_train(args) -> int:
    manifest_path, rows, cache, meta = _load_run_inputs(args)
    run_dir = Path(args.run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    config = build_train_config(args, image_hw=meta["dims"])
    try:
        manifest = RunManifest.load(run_dir)
    except CliMissingError:
        manifest = RunManifest()
    manifest.dataset_manifest = str(manifest_path)
    manifest.cache_dir = str(cache)
    manifest.dims = meta["dims"]
    manifest.fov_mm = meta["fov_mm"]

    if args.stage == 1:
        if not args.view:
            raise CliConfigError("--view is required for stage 1")
        result = train_stage1(rows, args.view, config, cache)
        name = f"stage1_{args.view}"
        ckpt_config = {"kind": "stage1", "view": args.view, **config.to_dict()}
        manifest.scaler = {"mu": result.scaler.mu, "sigma": result.scaler.sigma}
        params, curves = result.params, result.curves
    else:
        if not args.mode:
            raise CliConfigError("--mode is required for stage 2")
        scaler = manifest.target_scaler()
        stage1_params = {view: manifest.verified_checkpoint(f"stage1_{view}")[0]
                         for view in VIEWS}
        feat_train, y_train = _split_features(rows, cache, stage1_params, "train")
        feat_val, y_val = _split_features(rows, cache, stage1_params, "val")
        result = train_stage2(feat_train, scaler.apply(y_train),
                              feat_val, scaler.apply(y_val), args.mode, config)
        name = f"stage2_{args.mode}"
        ckpt_config = {"kind": args.mode, **config.to_dict()}
        params, curves = result.params, result.curves

    ckpt_path = run_dir / f"{name}.ckpt"
    save_checkpoint(ckpt_path, params, ckpt_config, config.seed)
    train_mod.write_curves(run_dir / f"curves_{name}.csv", curves)
    manifest.record_checkpoint(name, ckpt_path, ckpt_config)
    manifest.save(run_dir)
    log.info("%s: best val MSE %.6g at epoch %d (%d epochs run)",
             name, result.best_val_mse, result.best_epoch, len(curves))
    return EXIT_OK


# ---------------------------------------------------------------------------
# evaluate
# ---------------------------------------------------------------------------

def _predict_checkpoint(run_manifest: RunManifest, name: str, rows, cache):
    """Normalized predictions for manifest rows; returns (preds, attn or None)."""
    params, config, _ = run_manifest.verified_checkpoint(name)
    kind = config.get("kind")
    if kind == "stage1":
        stacks = train_mod.load_stacks(rows, cache, config["view"])
        preds, _ = stage1_model_forward(stacks, params)
        return preds, None
    stage1_params = {view: run_manifest.verified_checkpoint(f"stage1_{view}")[0]
                     for view in VIEWS}
    feats = np.stack([train_mod.compute_features(
        train_mod.load_stacks(rows, cache, view), stage1_params[view])
        for view in VIEWS], axis=1)
    if kind == "gated":
        preds, weights, _ = gated_forward_batch(feats, params)
        return preds, weights
    if kind == "concat":
        preds, _ = concat_forward_batch(feats, params)
        return preds, None
    raise CliConfigError(f"checkpoint has unknown kind {kind!r}")


def _json_dump(path, payload) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _checkpoint_name_from_path(ckpt: Path) -> str:
    return ckpt.stem


def cmd_evaluate(args) -> int:
    ckpt = Path(args.checkpoint)
    if not ckpt.exists():
        raise CliMissingError(f"checkpoint not found: {ckpt}")
    run_dir = ckpt.parent
    run_manifest = RunManifest.load(run_dir)
    scaler = run_manifest.target_scaler()
    rows = phantom.load_manifest(run_manifest.dataset_manifest)
    sel = [r for r in rows if r["split"] == args.split]
    if not sel:
        raise CliMissingError(f"split {args.split!r} is empty")
    cache = Path(run_manifest.cache_dir)
    name = _checkpoint_name_from_path(ckpt)
    preds_norm, attn = _predict_checkpoint(run_manifest, name, sel, cache)
    alr_pred = scaler.invert(preds_norm)
    alr_true = np.array([r["alr_gt"] for r in sel], dtype=np.float64)

    report = stats.eval_report(alr_pred, alr_true)
    ba = stats.bland_altman(alr_pred, alr_true)
    summary = {
        # file name only: keeps evaluation JSON byte-reproducible across
        # runs living in different directories
        "checkpoint": Path(ckpt).name, "split": args.split, "n": report.n,
        "r2": report.r2, "residual_mean": report.residual_mean,
        "residual_sd": report.residual_sd,
        "bland_altman": {
            "fixed_bias": ba.fixed_bias, "fixed_bias_p": ba.fixed_bias_p,
            "loa_low": ba.loa_low, "loa_high": ba.loa_high,
            "prop_slope": ba.prop_slope,
            "prop_ci": [ba.prop_ci_low, ba.prop_ci_high]},
        "mse_normalized": float(np.mean((preds_norm - scaler.apply(alr_true)) ** 2)),
    }
    if args.proxy_csv:
        summary["r2_increment_over_proxy"] = _increment_block(
            Path(args.proxy_csv), sel, alr_true, alr_pred)

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    _json_dump(out.with_suffix(".json"), summary)
    columns = EVAL_COLUMNS + (ATTN_COLUMNS if attn is not None else ())
    with open(out.with_suffix(".csv"), "w", encoding="utf-8", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for i, row in enumerate(sel):
            vals = [row["id"], "%.9g" % alr_true[i], "%.9g" % alr_pred[i],
                    "%.9g" % (alr_pred[i] - alr_true[i])]
            if attn is not None:
                vals += ["%.9g" % w for w in attn[i]]
            writer.writerow(vals)
    log.info("evaluate %s on %s: R2 %.4f, residual %.3g +/- %.3g", name,
             args.split, report.r2, report.residual_mean, report.residual_sd)
    return EXIT_OK


def _increment_block(proxy_csv: Path, sel, alr_true, alr_pred) -> dict:
    """Variance explained by the model prediction over the proxy baseline."""
    if not proxy_csv.exists():
        raise CliMissingError(f"proxy CSV not found: {proxy_csv}")
    with open(proxy_csv, encoding="utf-8", newline="") as fh:
        proxy_by_id = {int(r["id"]): float(r["proxy_alr"])
                       for r in csv.DictReader(fh)}
    missing = [r["id"] for r in sel if r["id"] not in proxy_by_id]
    if missing:
        raise CliMissingError(f"proxy CSV lacks ids: {missing}")
    base = np.array([proxy_by_id[r["id"]] for r in sel])
    if not np.all(np.isfinite(base)):
        raise CliConfigError("proxy CSV contains non-finite values for this split")
    inc = stats.r2_increment(alr_true, base[:, None], alr_pred)
    return {"r2_base": inc.r2_base, "r2_full": inc.r2_full,
            "increment": inc.increment, "f_stat": inc.f_stat,
            "p_value": inc.p_value}


# ---------------------------------------------------------------------------
# proxy
# ---------------------------------------------------------------------------

def cmd_proxy(args) -> int:
    manifest_path = Path(args.manifest)
    if not manifest_path.exists():
        raise CliIOError(f"manifest not found: {manifest_path}")
    rows = phantom.load_manifest(manifest_path)
    lung_key, airway_key = (("cc_lung", "cc_airway") if args.volumes == "cc"
                            else ("fl_lung", "fl_airway"))
    _check_volume_files(rows, (lung_key, airway_key))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(PROXY_COLUMNS)
        for row in rows:
            lung = read_mvol(row[lung_key])
            aw = read_mvol(row[airway_key])
            try:
                rep = airway.proxy_report(lung, aw)
                vals = ["%.9g" % rep.proxy_alr, rep.n_branches_used,
                        "%.9g" % rep.mean_diam_mm, "%.9g" % rep.lung_vol_mm3]
            except airway.MeasurementError as exc:
                log.warning("subject %s: %s; writing nan", row["id"], exc)
                vals = ["nan", 0, "nan", "%.9g" % volume_mm3(lung)]
            writer.writerow([row["id"], *vals])
    log.info("wrote %s", out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# repro
# ---------------------------------------------------------------------------

def cmd_repro(args) -> int:
    pairs_path = Path(args.manifest_pairs)
    if not pairs_path.exists():
        raise CliIOError(f"rescan manifest not found: {pairs_path}")
    rows = phantom.load_manifest(pairs_path)
    run_dir = Path(args.run_dir)
    run_manifest = RunManifest.load(run_dir)
    scaler = run_manifest.target_scaler()
    dims = run_manifest.dims
    if not dims:
        raise CliMissingError("run manifest lacks preprocessing dims")
    _check_volume_files(rows, ("cc_lung_a", "cc_airway_a", "cc_lung_b", "cc_airway_b"))
    stage1_params = {view: run_manifest.verified_checkpoint(f"stage1_{view}")[0]
                     for view in VIEWS}
    gated_params, _, _ = run_manifest.verified_checkpoint("stage2_gated")

    # rescans may extend past the training FOV; pad to whichever is larger
    fov = np.array(run_manifest.fov_mm, dtype=np.float64)
    for key in ("cc_lung_a", "cc_lung_b"):
        fov = np.maximum(fov, _dataset_fov(rows, key))

    def predict(lung_key, airway_key):
        feats_by_view = {view: [] for view in VIEWS}
        for row in rows:
            for stack in _subject_stacks(row[lung_key], row[airway_key], fov,
                                         dims, row["id"]):
                feats_by_view[stack.view].append(stack.data)
        feats = np.stack([train_mod.compute_features(
            np.stack(feats_by_view[view], axis=0), stage1_params[view])
            for view in VIEWS], axis=1)
        preds, _, _ = gated_forward_batch(feats, gated_params)
        return scaler.invert(preds)

    pred_a = predict("cc_lung_a", "cc_airway_a")
    pred_b = predict("cc_lung_b", "cc_airway_b")
    icc = stats.icc_oneway(np.column_stack([pred_a, pred_b]))
    summary = {
        "n": icc.n, "k": icc.k, "icc": icc.icc, "icc_variant": icc.variant,
        # scan-1 prediction is the reference; scan-2 is scored against it
        "r2_scan2_vs_scan1": stats.r2(pred_b, pred_a),
        "truth_label": "scan-1 prediction", "measure_label": "scan-2 prediction",
    }
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    _json_dump(out.with_suffix(".json"), summary)
    with open(out.with_suffix(".csv"), "w", encoding="utf-8", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["id", "pred_a", "pred_b"])
        for row, a, b in zip(rows, pred_a, pred_b):
            writer.writerow([row["id"], "%.17g" % a, "%.17g" % b])
    log.info("repro ICC %.4f over %d pairs", icc.icc, icc.n)
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file of TrainConfig fields")
    p.add_argument("--lr", type=float)
    p.add_argument("--weight-decay", dest="weight_decay", type=float)
    p.add_argument("--max-epochs", dest="max_epochs", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--seed", type=int, default=None,
                   help="training seed (default 0)")
    p.add_argument("--no-augment", dest="augment", action="store_false",
                   default=None)
    p.add_argument("--patch", type=int)
    p.add_argument("--dim", type=int)
    p.add_argument("--blocks", type=int)
    p.add_argument("--attn-hidden", dest="attn_hidden", type=int)
    p.add_argument("--dropout", type=float)
    p.add_argument("--t0", type=int)
    p.add_argument("--t-mult", dest="t_mult", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="alr",
        description="Airway-to-lung-ratio pipeline: synthetic phantoms, "
                    "projection preprocessing, two-stage training, and evaluation.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("phantom-gen", help="generate a synthetic paired-mask dataset")
    p.add_argument("--n", type=int, required=True, help="number of subjects")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--strata", type=int, default=4,
                   help="number of in-plane spacing strata")
    p.add_argument("--rescan", action="store_true",
                   help="emit paired rescan crops instead of a split dataset")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_phantom_gen)

    p = sub.add_parser("preprocess", help="project cardiac masks to cached view stacks")
    p.add_argument("--manifest", required=True)
    p.add_argument("--dims", type=int, default=64,
                   help="cubic resample size before projection")
    p.add_argument("--out", required=True, help="projection cache directory")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="train stage-1 views or a stage-2 head")
    p.add_argument("--stage", type=int, choices=(1, 2), required=True)
    p.add_argument("--view", choices=VIEWS)
    p.add_argument("--mode", choices=("gated", "concat"))
    p.add_argument("--manifest", required=True)
    p.add_argument("--cache", required=True, help="projection cache directory")
    p.add_argument("--run-dir", dest="run_dir", required=True)
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a checkpoint on a manifest split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=("train", "val", "test"), default="test")
    p.add_argument("--proxy-csv", dest="proxy_csv",
                   help="per-subject proxy CSV for the R2-increment block")
    p.add_argument("--out", required=True, help="output prefix (.json / .csv)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("proxy", help="geometric proxy ALR per subject")
    p.add_argument("--manifest", required=True)
    p.add_argument("--volumes", choices=("cc", "fl"), default="cc",
                   help="which mask pair to measure")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_proxy)

    p = sub.add_parser("repro", help="scan-rescan agreement of a trained model")
    p.add_argument("--manifest-pairs", dest="manifest_pairs", required=True)
    p.add_argument("--run-dir", dest="run_dir", required=True)
    p.add_argument("--out", required=True, help="output prefix (.json / .csv)")
    p.set_defaults(func=cmd_repro)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO,
                        format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (CliConfigError, CliIOError, CliMissingError) as exc:
        log.error("%s", exc)
        return exc.exit_code
    except (ValueError, FloatingPointError) as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        log.error("%s", exc)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
