"""Command-line surface: generate / train / eval / reproduce / seed-sweep.

Every command reads only the paths given on its own flags, writes CSV/JSON
outputs plus SVG figures, and finishes by writing a manifest of what it
produced. Exit codes: 0 success, 2 config or validation error, 3 numerical
abort.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .config import (RunConfig, load_run_config, merge_config_objs,
                     preset_config, write_effective_config)
from .errors import ConfigError, NumericalAbort, PdgmmError, ValidationError
from .evalsep import marginal_report, match_sources, zscore
from .model import load_checkpoint, mlp_apply, save_checkpoint
from .plots import (plot_density_comparison, plot_source_overlays,
                    plot_training_curves, read_log_columns)
from .storage import write_rows_csv
from .synthgen import (draw_linear_mixing, draw_tanh2_mixing, generate_dataset,
                       load_dataset, save_dataset)
from .trainer import fit, standardize_columns, write_train_log

logger = logging.getLogger("pdgmm")

# Reference per-source |corr| values the reproduce command compares against.
REFERENCE_CORRS = {
    "linear": (0.9988, 0.9963, 0.9907),
    "nonlinear": (0.9943, 0.9693, 0.9593),
}

LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}


def _setup_logging():
    raw = os.environ.get("PDGMM_LOG_LEVEL", "info").lower()
    if raw not in LOG_LEVELS:
        raise ConfigError(
            f"PDGMM_LOG_LEVEL must be one of {sorted(LOG_LEVELS)}, got {raw!r}"
        )
    logging.basicConfig(level=LOG_LEVELS[raw], format="%(levelname)s %(message)s")


def _write_manifest(out_dir: Path, command: str, config: RunConfig | None,
                    seed, inputs: dict, outputs: dict):
    for label, p in {**inputs, **outputs}.items():
        if p is not None and not Path(p).exists():
            raise ValidationError(f"manifest entry {label} missing on disk: {p}")
    manifest = {
        "command": command,
        "toolkit_version": __version__,
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        "seed": seed,
        "config": None if config is None else config.to_json_obj(),
        "inputs": {k: str(v) for k, v in inputs.items() if v is not None},
        "outputs": {k: str(v) for k, v in outputs.items() if v is not None},
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2) + "\n")
    return path


def _build_mixing(config: RunConfig):
    data = config.data
    mix_seed = [data.seed, 1]
    if data.mixing_kind == "linear":
        return draw_linear_mixing(data.n, data.m, mix_seed, data.cond_max)
    return draw_tanh2_mixing(data.sources, data.m, data.hidden, mix_seed)


def cmd_generate(config: RunConfig, out_dir) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    mixing = _build_mixing(config)
    dataset = generate_dataset(config.data.sources, mixing, config.data.T,
                               config.data.seed)
    paths = save_dataset(dataset, out)
    cfg_path = out / "effective_config.json"
    write_effective_config(config, cfg_path)
    paths["effective_config"] = str(cfg_path)
    _write_manifest(out, "generate", config, config.data.seed, {}, paths)
    print(
        f"generate: wrote T={dataset.T} m={dataset.Y.shape[1]} "
        f"n={dataset.Z_true.shape[1]} ({config.data.mixing_kind}) to {out}"
    )
    return paths


def cmd_train(config: RunConfig, data_dir, out_dir) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dataset = load_dataset(data_dir)
    z_true = dataset.Z_true if dataset.Z_true.shape[1] > 0 else None
    ckpt_dir = out / "checkpoint"

    model, record = fit(config.train, dataset.Y, z_true=z_true,
                        checkpoint_dir=ckpt_dir)

    extra = {"standardize_y": None}
    if config.train.standardize_y:
        _, mean, std = standardize_columns(dataset.Y)
        extra["standardize_y"] = {"mean": mean.tolist(), "std": std.tolist()}
    save_checkpoint(model, ckpt_dir, extra=extra)

    log_path = out / "train_log.csv"
    write_train_log(record, config.train, log_path)

    final = record.breakdowns[-1]
    final_corrs = record.max_corrs[-1]
    summary = {
        "final": {
            "total": final.total,
            "rec": final.rec,
            "kl_surrogate": final.kl_surrogate,
            "log_q": final.log_q,
            "log_p": final.log_p,
        },
        "abs_corrs": None if final_corrs is None else [float(c) for c in final_corrs],
        "mean_abs_corr": None if final_corrs is None else float(np.mean(final_corrs)),
        "epochs_run": record.epochs[-1],
        "converged_epoch": record.converged_epoch,
        "posterior_vars": record.posterior_vars[-1].tolist(),
        "config": config.to_json_obj(),
    }
    summary_path = out / "summary.json"
    summary_path.write_text(json.dumps(summary, indent=2) + "\n")
    cfg_path = out / "effective_config.json"
    write_effective_config(config, cfg_path)

    outputs = {
        "train_log": log_path,
        "checkpoint": ckpt_dir / "manifest.json",
        "summary": summary_path,
        "effective_config": cfg_path,
    }
    _write_manifest(out, "train", config, config.train.seed,
                    {"data_dir": Path(data_dir) / "Y.csv"}, outputs)
    corr_note = (
        "no ground truth"
        if summary["abs_corrs"] is None
        else " ".join(f"{c:.4f}" for c in summary["abs_corrs"])
    )
    print(
        f"train: {record.epochs[-1]} epochs, final loss "
        f"{final.total:.6g}, |corr| {corr_note}"
    )
    return {k: str(v) for k, v in outputs.items()}


def cmd_eval(checkpoint_dir, data_dir, out_dir) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    model, manifest = load_checkpoint(checkpoint_dir)
    dataset = load_dataset(data_dir)
    if dataset.Y.shape[1] != model.m:
        raise ValidationError(
            f"dataset has {dataset.Y.shape[1]} observation columns, "
            f"checkpoint expects {model.m}"
        )
    if dataset.Z_true.shape[1] != model.n:
        raise ValidationError(
            f"dataset has {dataset.Z_true.shape[1]} source columns, "
            f"checkpoint expects {model.n}"
        )
    std_info = manifest.get("standardize_y")
    Y = dataset.Y
    if std_info is not None:
        Y = (Y - np.asarray(std_info["mean"])) / np.asarray(std_info["std"])

    mu = mlp_apply(model.encoder, Y)
    result = match_sources(dataset.Z_true, mu)

    outputs = {}
    tables = []
    for j in range(model.n):
        est_col = mu[:, result.assignment[j]]
        table = marginal_report(model.prior, result.assignment[j],
                                dataset.Z_true[:, j], est_col,
                                sign=result.signs[j])
        tables.append(table)
        csv_path = out / f"density_source_{j+1}.csv"
        write_rows_csv(
            csv_path,
            ["grid", "learned_density", "true_hist", "est_hist"],
            zip(table.grid, table.gmm_density, table.true_density,
                table.est_density),
        )
        outputs[f"density_csv_{j+1}"] = csv_path
        fig_path = out / f"density_source_{j+1}.svg"
        plot_density_comparison(table, j, fig_path)
        outputs[f"density_fig_{j+1}"] = fig_path

    match_obj = result.to_json_obj()
    match_obj["tv_distances"] = [t.tv_distance for t in tables]
    match_path = out / "match.json"
    match_path.write_text(json.dumps(match_obj, indent=2) + "\n")
    outputs["match"] = match_path

    true_z = zscore(dataset.Z_true)
    est_z = zscore(mu[:, result.assignment]) * np.asarray(result.signs)
    sigma = np.exp(0.5 * model.log_var.value[0])
    est_std = mu[:, result.assignment].std(axis=0, ddof=1)
    bands = 2.0 * sigma[result.assignment] / est_std
    overlay_path = out / "sources_overlay.svg"
    plot_source_overlays(true_z, est_z, bands, result.abs_corrs, overlay_path)
    outputs["sources_overlay"] = overlay_path

    log_path = _find_train_log(checkpoint_dir)
    if log_path is not None:
        curves_path = out / "training_curves.svg"
        plot_training_curves(read_log_columns(log_path), model.n,
                             model.prior.K, curves_path)
        outputs["training_curves"] = curves_path

    _write_manifest(out, "eval", None, None,
                    {"checkpoint": Path(checkpoint_dir) / "manifest.json",
                     "data_dir": Path(data_dir) / "Y.csv"},
                    outputs)
    print(
        "eval: |corr| " + " ".join(f"{c:.4f}" for c in result.abs_corrs)
        + f", mean {np.mean(result.abs_corrs):.4f}"
    )
    return {k: str(v) for k, v in outputs.items()}


def _find_train_log(checkpoint_dir):
    ckpt = Path(checkpoint_dir)
    for candidate in (ckpt / "train_log.csv", ckpt.parent / "train_log.csv"):
        if candidate.exists():
            return candidate
    return None


def run_pipeline(experiment: str, seed: int, out_dir,
                 override_obj: dict | None = None) -> dict:
    """generate -> train -> eval for one preset seed; returns summary info."""
    config = preset_config(experiment, seed)
    if override_obj:
        config = RunConfig.from_json_obj(
            merge_config_objs(config.to_json_obj(), override_obj)
        ).with_seed(seed)
    out = Path(out_dir)
    data_dir = out / "data"
    train_dir = out / "train"
    eval_dir = out / "eval"
    cmd_generate(config, data_dir)
    cmd_train(config, data_dir, train_dir)
    cmd_eval(train_dir / "checkpoint", data_dir, eval_dir)
    match = json.loads((eval_dir / "match.json").read_text())
    summary = json.loads((train_dir / "summary.json").read_text())
    return {
        "seed": seed,
        "experiment": experiment,
        "abs_corrs": match["abs_corrs"],
        "mean_abs_corr": match["mean_abs_corr"],
        "epochs_run": summary["epochs_run"],
        "dirs": {"data": str(data_dir), "train": str(train_dir),
                 "eval": str(eval_dir)},
    }


def cmd_reproduce(experiment: str, out_dir, seed: int = 0,
                  override_obj: dict | None = None) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    info = run_pipeline(experiment, seed, out, override_obj)
    reference = REFERENCE_CORRS[experiment]
    rows = []
    print(f"reproduce[{experiment}] seed={seed}")
    print(f"{'source':>8} {'achieved':>10} {'reference':>10}")
    for j, (ach, ref) in enumerate(zip(info["abs_corrs"], reference)):
        rows.append([experiment, j + 1, ach, ref])
        print(f"{j+1:>8} {ach:>10.4f} {ref:>10.4f}")
    cmp_path = out / "comparison.csv"
    write_rows_csv(
        cmp_path,
        ["experiment", "source", "achieved_abs_corr", "reference_abs_corr"],
        rows,
    )
    config = preset_config(experiment, seed)
    if override_obj:
        config = RunConfig.from_json_obj(
            merge_config_objs(config.to_json_obj(), override_obj)
        ).with_seed(seed)
    _write_manifest(out, "reproduce", config, seed, {},
                    {"comparison": cmp_path,
                     "match": Path(info["dirs"]["eval"]) / "match.json",
                     "train_log": Path(info["dirs"]["train"]) / "train_log.csv"})
    return info


def _sweep_worker(args):
    experiment, seed, out_dir, override_obj = args
    return run_pipeline(experiment, seed, out_dir, override_obj)


def cmd_seed_sweep(experiment: str, seeds: list[int], out_dir, jobs: int = 1,
                   override_obj: dict | None = None) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    work = [(experiment, s, out / f"seed_{s}", override_obj) for s in seeds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_sweep_worker, work))
    else:
        results = [_sweep_worker(w) for w in work]

    rows = []
    for r in results:
        rows.append([r["seed"], *r["abs_corrs"], r["mean_abs_corr"]])
    n = len(results[0]["abs_corrs"])
    write_rows_csv(
        out / "sweep_summary.csv",
        ["seed"] + [f"abs_corr_{j+1}" for j in range(n)] + ["mean_abs_corr"],
        rows,
    )
    all_corrs = np.array([r["abs_corrs"] for r in results])
    summary = {
        "experiment": experiment,
        "seeds": seeds,
        "per_seed": {str(r["seed"]): r["abs_corrs"] for r in results},
        "mean_abs_corr": float(all_corrs.mean()),
        "per_source_min": all_corrs.min(axis=0).tolist(),
        "per_source_mean": all_corrs.mean(axis=0).tolist(),
        "best_seed": int(seeds[int(np.argmax(all_corrs.mean(axis=1)))]),
    }
    (out / "sweep_summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    _write_manifest(out, "seed-sweep", None, seeds,
                    {}, {"sweep_summary": out / "sweep_summary.json"})
    for r in results:
        print(
            f"seed {r['seed']}: |corr| "
            + " ".join(f"{c:.4f}" for c in r["abs_corrs"])
            + f", mean {r['mean_abs_corr']:.4f}"
        )
    return summary


def _load_config_arg(args, require: bool = True) -> RunConfig | None:
    if getattr(args, "config", None) is None:
        if require:
            raise ConfigError("--config is required for this command")
        return None
    config = load_run_config(args.config)
    if getattr(args, "seed", None) is not None:
        config = config.with_seed(args.seed)
    return config


def _load_override_obj(args) -> dict | None:
    if getattr(args, "config", None) is None:
        return None
    path = Path(args.config)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"config file {path} is not valid JSON: {e}") from e


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pdgmm",
        description="Blind source separation with per-dimension "
                    "Gaussian-mixture-prior VAEs.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="synthesize a mixture dataset")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("train", help="train on an existing dataset")
    p.add_argument("--config", required=True)
    p.add_argument("--data-dir", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("eval", help="score a checkpoint against a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data-dir", required=True)
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("reproduce", help="run a preset experiment end to end")
    p.add_argument("--experiment", required=True, choices=("linear", "nonlinear"))
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", default=None,
                   help="optional JSON overrides merged onto the preset")

    p = sub.add_parser("seed-sweep", help="reproduce across several seeds")
    p.add_argument("--experiment", required=True, choices=("linear", "nonlinear"))
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seeds", default="0,1,2",
                   help="comma-separated seed list (default 0,1,2)")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--config", default=None,
                   help="optional JSON overrides merged onto the preset")
    return parser


def main(argv=None) -> int:
    try:
        _setup_logging()
        args = build_parser().parse_args(argv)
        if args.command == "generate":
            cmd_generate(_load_config_arg(args), args.out_dir)
        elif args.command == "train":
            cmd_train(_load_config_arg(args), args.data_dir, args.out_dir)
        elif args.command == "eval":
            cmd_eval(args.checkpoint, args.data_dir, args.out_dir)
        elif args.command == "reproduce":
            cmd_reproduce(args.experiment, args.out_dir, args.seed,
                          _load_override_obj(args))
        elif args.command == "seed-sweep":
            seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
            if not seeds:
                raise ConfigError(f"--seeds parsed to an empty list: {args.seeds!r}")
            cmd_seed_sweep(args.experiment, seeds, args.out_dir, args.jobs,
                           _load_override_obj(args))
        return 0
    except NumericalAbort as e:
        print(f"numerical abort: {e}", file=sys.stderr)
        return 3
    except (PdgmmError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
