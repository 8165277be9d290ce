"""Experiment driver.

Subcommands: init-config, generate, oi, train, eval, ensemble, report.
Every value in the JSON config can be overridden with --set key=value
(flags map 1:1 to config keys). Exit codes: 0 success, 2 configuration
error, 3 runtime numeric failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

import numpy as np

from . import backend, config as cfgmod
from .config import ConfigError, ExperimentConfig, from_dict, load_config, save_config, to_dict
from .ensemble import train_ensemble, uq_correlation, uq_correlation_daily
from .metrics import error_maps, metrics_record, psd_score_grid
from .osse import merge_obs, optimal_interp, sample_nadir, sample_swath, simulate_truth
from .serialization import (
    config_hash,
    load_checkpoint,
    load_dataset,
    read_json,
    save_checkpoint,
    save_dataset,
    write_blob,
    write_csv,
    write_json,
    write_pgm16,
)
from .solver import NumericError, fixed_point_solve
from .state import FieldSeq, ObsSet, SeqData
from .training import fit, sliding_reconstruct
from .prior import phi_apply
from . import autodiff as ad

METRICS_HEADER = ["method", "mu_rmse_score", "sigma_rmse_score", "lambda_x_deg", "lambda_t_days"]


def _load_with_overrides(path: str, overrides: list[str]) -> ExperimentConfig:
    cfg = load_config(Path(path))
    if overrides:
        d = to_dict(cfg)
        for item in overrides:
            if "=" not in item:
                raise ConfigError(f"--set expects key=value, got {item!r}")
            key, _, val = item.partition("=")
            cfgmod.set_flat(d, key.strip(), val.strip())
        cfg = from_dict(ExperimentConfig, d)
    return cfg


def _dataset_paths(cfg: ExperimentConfig, flag: str | None) -> Path:
    return Path(flag) if flag else Path(cfg.out_dir) / "dataset"


def cmd_init_config(args) -> int:
    cfg = ExperimentConfig()
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_config(out, cfg)
    print(f"wrote default config to {out}")
    return 0


def cmd_generate(args) -> int:
    cfg = _load_with_overrides(args.config, args.set).resolve_seeds()
    out_dir = _dataset_paths(cfg, args.out)
    g = cfg.grid
    truth = simulate_truth(g.days, g.rows, g.cols, cfg.regime)
    truth = FieldSeq(truth.values, g.cell_deg, g.dt_days)
    nadir = sample_nadir(truth, cfg.sampling)
    extras: dict[str, np.ndarray] = {
        "obs_nadir_values": nadir.values.values,
        "obs_nadir_mask": nadir.mask,
    }
    if cfg.sampling.use_swath:
        swath = sample_swath(truth, cfg.sampling)
        merged = merge_obs(nadir, swath)
        extras["obs_swath_values"] = swath.values.values
        extras["obs_swath_mask"] = swath.mask
    else:
        merged = nadir
    oi = optimal_interp(merged, cfg.oi)
    data = SeqData(truth=truth, obs=merged, oi=oi)
    configs = {"experiment": to_dict(cfg), "swath_included": cfg.sampling.use_swath}
    save_dataset(out_dir, data, configs, cfg.seed, extras=extras)
    print(f"dataset written to {out_dir} (swath={'yes' if cfg.sampling.use_swath else 'no'})")
    return 0


def cmd_oi(args) -> int:
    cfg = _load_with_overrides(args.config, args.set).resolve_seeds()
    ds_dir = _dataset_paths(cfg, args.dataset)
    data, man = load_dataset(ds_dir)
    oi = optimal_interp(data.obs, cfg.oi)
    write_blob(ds_dir / man["files"]["oi"], oi.values)
    man["configs"]["oi_recomputed"] = to_dict(cfg.oi)
    write_json(ds_dir / "manifest.json", man)
    print(f"OI baseline recomputed in {ds_dir}")
    return 0


def cmd_train(args) -> int:
    cfg = _load_with_overrides(args.config, args.set).resolve_seeds()
    ds_dir = _dataset_paths(cfg, args.dataset)
    data, man = load_dataset(ds_dir)
    cfg.windows.check_disjoint()
    _check_window_bounds(cfg, data)
    run_dir = Path(args.out) if args.out else Path(cfg.out_dir) / "train"
    run_dir.mkdir(parents=True, exist_ok=True)

    train_data = data.window(*cfg.windows.train)
    val_data = data.window(*cfg.windows.val)
    pp, sp, log = fit(train_data, val_data, cfg.train)
    chash = config_hash(to_dict(cfg))
    save_checkpoint(run_dir, pp, sp, cfg.seed, chash, extra={"dataset": str(ds_dir)})
    write_csv(
        run_dir / "log.csv",
        ["epoch", "train_loss", "val_mu_rmse_score", "val_lambda_x", "val_lambda_t"],
        [[r.epoch, r.train_loss, r.val_mu_rmse_score, r.val_lambda_x, r.val_lambda_t] for r in log],
    )
    print(f"checkpoint and log written to {run_dir} (config hash {chash})")
    return 0


def _check_window_bounds(cfg: ExperimentConfig, data: SeqData) -> None:
    T = data.truth.shape[0]
    for name, (t0, t1) in (
        ("train", cfg.windows.train),
        ("val", cfg.windows.val),
        ("test", cfg.windows.test),
    ):
        if not (0 <= t0 < t1 <= T):
            raise ConfigError(f"{name} window {(t0, t1)} outside dataset day range [0, {T})")
        if t1 - t0 < cfg.train.window:
            raise ConfigError(
                f"{name} window {(t0, t1)} shorter than the assimilation window "
                f"N={cfg.train.window}"
            )


def _window_from_flag(flag: str | None, cfg: ExperimentConfig) -> tuple[int, int]:
    if not flag:
        return cfg.windows.test
    try:
        t0, t1 = flag.split(":")
        return int(t0), int(t1)
    except ValueError as exc:
        raise ConfigError(f"--window expects T0:T1, got {flag!r}") from exc


def cmd_eval(args) -> int:
    cfg = _load_with_overrides(args.config, args.set).resolve_seeds()
    ds_dir = _dataset_paths(cfg, args.dataset)
    data, man = load_dataset(ds_dir)
    ckpt_dir = Path(args.checkpoint) if args.checkpoint else Path(cfg.out_dir) / "train"
    pp, sp, ck_man = load_checkpoint(ckpt_dir)
    if pp.cfg.state_channels != 3 * cfg.train.window:
        raise ConfigError(
            f"checkpoint expects {pp.cfg.state_channels} state channels but the config window "
            f"N={cfg.train.window} implies {3 * cfg.train.window}"
        )
    window = _window_from_flag(args.window, cfg)
    if not (0 <= window[0] < window[1] <= data.truth.shape[0]):
        raise ConfigError(f"eval window {window} outside dataset range")
    sub = data.window(*window)
    out_dir = Path(args.out) if args.out else Path(cfg.out_dir) / "eval"
    out_dir.mkdir(parents=True, exist_ok=True)

    results: dict[str, FieldSeq] = {"oi": sub.oi}
    recon = sliding_reconstruct(sub, pp, sp, cfg.train)
    results["4dvarnet"] = recon
    if args.fixed_point:
        results["4dvarnet_fixed_point"] = _fixed_point_recon(sub, pp, cfg, args.fixed_point)

    rows = []
    for name, fld in results.items():
        rec = metrics_record(fld, sub.truth)
        rows.append([name, rec.mu_rmse_score, rec.sigma_rmse_score, rec.lambda_x, rec.lambda_t])
        rmse_map, rmse_t = error_maps(fld, sub.truth)
        write_blob(out_dir / f"rmse_map_{name}.f64", rmse_map)
        write_csv(
            out_dir / f"rmse_t_{name}.csv",
            ["day", "rmse"],
            [[window[0] + i, float(v)] for i, v in enumerate(rmse_t)],
        )
        score, freqs, ks = psd_score_grid(fld, sub.truth)
        grid_rows = [
            [float(freqs[i]), float(ks[j]), float(score[i, j])]
            for i in range(len(freqs))
            for j in range(len(ks))
        ]
        write_csv(out_dir / f"psd_score_{name}.csv",
                  ["freq_per_day", "wavenumber_per_deg", "score"], grid_rows)
    write_csv(out_dir / "metrics.csv", METRICS_HEADER, rows)

    mid = sub.truth.shape[0] // 2
    write_pgm16(out_dir / "snapshot_truth.pgm", sub.truth.values[mid])
    write_pgm16(out_dir / "snapshot_oi.pgm", sub.oi.values[mid])
    write_pgm16(out_dir / "snapshot_4dvarnet.pgm", recon.values[mid])
    write_pgm16(out_dir / "snapshot_abs_err.pgm", np.abs(recon.values[mid] - sub.truth.values[mid]))
    write_json(
        out_dir / "eval.json",
        {
            "dataset": str(ds_dir),
            "checkpoint": str(ckpt_dir),
            "window": list(window),
            "methods": sorted(results),
            "psd_resolved_threshold": 0.5,
            "config_hash": config_hash(to_dict(cfg)),
        },
    )
    print(f"metrics written to {out_dir / 'metrics.csv'}")
    return 0


def _fixed_point_recon(sub: SeqData, pp, cfg: ExperimentConfig, n_fp: int) -> FieldSeq:
    """Evaluate the parameter-free fixed-point solver over the window."""
    from .state import build_augmented_obs, init_state, aug_to_array, mask_to_array
    from .training import reconstruct_window, PatchIndex

    n = cfg.train.window
    T, H, W = sub.truth.shape
    half = n // 2
    out = np.zeros((T, H, W))

    def phi_np(arr: np.ndarray) -> np.ndarray:
        with ad.no_grad():
            return phi_apply(pp, ad.tensor(arr[None])).data[0]

    cache: dict[int, np.ndarray] = {}
    g = dict(cell_deg=sub.truth.cell_deg, dt_days=sub.truth.dt_days)
    for t in range(T):
        t0 = min(max(t - half, 0), T - n)
        if t0 not in cache:
            sl = slice(t0, t0 + n)
            obs_w = ObsSet(FieldSeq(sub.obs.values.values[sl], **g), sub.obs.mask[sl])
            oi_w = FieldSeq(sub.oi.values[sl], **g)
            aug_obs, aug_mask = build_augmented_obs(obs_w, oi_w)
            x0 = aug_to_array(init_state(aug_obs, aug_mask))
            y = aug_to_array(aug_obs)
            m = mask_to_array(aug_mask)
            xf = fixed_point_solve(x0, y, m, phi_np, n_fp=n_fp)
            cache = {t0: xf[:n] + xf[2 * n :]}
        out[t] = cache[t0][t - t0]
    return FieldSeq(out, **g)


def cmd_ensemble(args) -> int:
    cfg = _load_with_overrides(args.config, args.set).resolve_seeds()
    ds_dir = _dataset_paths(cfg, args.dataset)
    data, _ = load_dataset(ds_dir)
    cfg.windows.check_disjoint()
    _check_window_bounds(cfg, data)
    seeds = (
        [int(s) for s in args.seeds.split(",")]
        if args.seeds
        else list(cfg.ensemble.member_seeds)
    )
    out_dir = Path(args.out) if args.out else Path(cfg.out_dir) / "ensemble"
    out_dir.mkdir(parents=True, exist_ok=True)

    run = train_ensemble(
        data.window(*cfg.windows.train),
        data.window(*cfg.windows.val),
        data.window(*cfg.windows.test),
        cfg.train,
        seeds,
    )
    member_rows = []
    ckpt_paths = []
    for i, (seed, (pp, sp), rec) in enumerate(zip(run.seeds, run.members, run.member_metrics)):
        member_dir = out_dir / f"member{i}"
        save_checkpoint(member_dir, pp, sp, seed, config_hash(to_dict(cfg)))
        ckpt_paths.append(str(member_dir))
        member_rows.append(
            [f"member{i}", rec.mu_rmse_score, rec.sigma_rmse_score, rec.lambda_x, rec.lambda_t]
        )
    med = run.median_metrics
    member_rows.append(
        ["median", med.mu_rmse_score, med.sigma_rmse_score, med.lambda_x, med.lambda_t]
    )
    write_csv(out_dir / "member_metrics.csv", METRICS_HEADER, member_rows)
    write_blob(out_dir / "median.f64", run.median.values)
    write_blob(out_dir / "std.f64", run.std.values)

    test_truth = data.window(*cfg.windows.test).truth
    abs_err = FieldSeq(
        np.abs(run.median.values - test_truth.values), test_truth.cell_deg, test_truth.dt_days
    )
    report = {
        "seeds": run.seeds,
        "checkpoints": ckpt_paths,
        "r2_pointwise": uq_correlation(run.std, abs_err),
        "r2_daily_mean": uq_correlation_daily(run.std, abs_err),
        "median_metrics": dataclasses.asdict(run.median_metrics),
    }
    write_json(out_dir / "ensemble.json", report)
    print(
        f"ensemble of {len(run.seeds)} members written to {out_dir} "
        f"(R2 pointwise {report['r2_pointwise']:.3f}, daily {report['r2_daily_mean']:.3f})"
    )
    return 0


def cmd_report(args) -> int:
    run_dir = Path(args.run)
    lines = ["# varnet4d run report", ""]
    metrics = run_dir / "eval" / "metrics.csv"
    if not metrics.exists():
        metrics = run_dir / "metrics.csv"
    if metrics.exists():
        lines += ["## Reconstruction metrics", "", "| " + " | ".join(METRICS_HEADER) + " |",
                  "|" + "---|" * len(METRICS_HEADER)]
        for row in metrics.read_text().strip().splitlines()[1:]:
            lines.append("| " + " | ".join(row.split(",")) + " |")
        lines.append("")
    ens = run_dir / "ensemble" / "ensemble.json"
    if not ens.exists():
        ens = run_dir / "ensemble.json"
    if ens.exists():
        rep = read_json(ens)
        lines += [
            "## Ensemble uncertainty",
            "",
            f"- members: {len(rep['seeds'])} (seeds {rep['seeds']})",
            f"- R2 spread vs |error| (pointwise): {rep['r2_pointwise']:.4f}",
            f"- R2 spread vs |error| (daily mean): {rep['r2_daily_mean']:.4f}",
            "",
        ]
    if len(lines) <= 2:
        raise ConfigError(f"no metrics.csv or ensemble.json found under {run_dir}")
    out = Path(args.out) if args.out else run_dir / "report.md"
    out.write_text("\n".join(lines) + "\n")
    print(f"report written to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="varnet4d",
        description="learned variational space-time interpolation over an OSSE harness "
        f"(kernel backend: {backend.backend_name()})",
    )
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("init-config", help="write the default JSON config")
    sp.add_argument("--out", default="config.json")
    sp.set_defaults(fn=cmd_init_config)

    def common(sp, dataset=True):
        sp.add_argument("--config", required=True, help="experiment JSON config")
        sp.add_argument(
            "--set", action="append", default=[], metavar="KEY=VAL",
            help="override any config key, e.g. --set grid.days=40",
        )
        if dataset:
            sp.add_argument("--dataset", default=None, help="dataset directory")

    sp = sub.add_parser("generate", help="simulate truth, observations, and the OI baseline")
    common(sp, dataset=False)
    sp.add_argument("--out", default=None, help="dataset output directory")
    sp.set_defaults(fn=cmd_generate)

    sp = sub.add_parser("oi", help="recompute the OI baseline for a dataset")
    common(sp)
    sp.set_defaults(fn=cmd_oi)

    sp = sub.add_parser("train", help="train the model on a dataset")
    common(sp)
    sp.add_argument("--out", default=None, help="run directory for checkpoint and log")
    sp.set_defaults(fn=cmd_train)

    sp = sub.add_parser("eval", help="evaluate a checkpoint against the OI baseline")
    common(sp)
    sp.add_argument("--checkpoint", default=None, help="checkpoint directory")
    sp.add_argument("--window", default=None, metavar="T0:T1", help="day range (default: test)")
    sp.add_argument(
        "--fixed-point", type=int, default=0, metavar="N_FP",
        help="also evaluate the parameter-free fixed-point solver with N_FP iterations",
    )
    sp.add_argument("--out", default=None)
    sp.set_defaults(fn=cmd_eval)

    sp = sub.add_parser("ensemble", help="train an ensemble and report uncertainty metrics")
    common(sp)
    sp.add_argument("--seeds", default=None, help="comma-separated member seeds")
    sp.add_argument("--out", default=None)
    sp.set_defaults(fn=cmd_ensemble)

    sp = sub.add_parser("report", help="summarize eval/ensemble outputs as markdown")
    sp.add_argument("--run", required=True, help="run directory")
    sp.add_argument("--out", default=None)
    sp.set_defaults(fn=cmd_report)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
