"""Command-line entry point: ``feinfn {train,eval,ablate,plot}``.

Exit codes: 0 ok, 1 configuration / checkpoint / manifest error, 2 data error,
3 training aborted on a non-finite loss.
"""

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
import torch

from .config import load_config, make_config
from .coords import bicubic_tensor
from .data import wald_simulate
from .errors import ConfigError, DataError, NonFiniteLossError
from .metrics import MetricReport, error_map
from .model import load_checkpoint, set_deterministic, version_string
from .reporting import (
    ablation_table,
    error_image,
    parse_variant,
    plot_amplitude_phase,
    plot_psnr_curves,
    plot_quality_scatter,
    pseudo_color,
    save_png,
    write_json,
)
from .train import (
    evaluate_model,
    load_splits,
    read_manifest,
    run_training,
    sha256_file,
    spectral_response,
    to_batch,
    utc_now,
    write_manifest,
)

log = logging.getLogger("feinfn")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NONFINITE = 0, 1, 2, 3


def _data_root(args):
    root = args.data_root or os.environ.get("FEINFN_DATA_ROOT")
    return Path(root) if root else None


def _apply_overrides(cfg, args):
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.scale is not None:
        changes["scale"] = args.scale
    return cfg.updated(**changes) if changes else cfg


def _config(args):
    cfg = load_config(args.config) if args.config else make_config()
    return _apply_overrides(cfg, args)


def _split_images(cfg, root, split):
    train, test = load_splits(cfg, root)
    return {"train": train, "test": test, "all": train + test}[split]


# --- commands ----------------------------------------------------------------


def cmd_train(args):
    cfg = _config(args)
    root = _data_root(args)
    train, test = load_splits(cfg, root)
    if not train:
        raise DataError("training split is empty")
    out = Path(args.out)
    res = run_training(cfg, train, test, out, deterministic=args.deterministic, time_budget=args.time_budget)
    final = res.history[-1] if res.history else {}
    print(f"trained {res.steps_done} steps; final loss {final.get('loss', float('nan')):.5f}; artifacts in {out}")
    return EXIT_OK


def _check_bands(cfg, images):
    for im in images:
        if im.bands != cfg.bands:
            raise DataError(f"scene {im.name} has {im.bands} bands, model expects {cfg.bands}")


def cmd_eval(args):
    set_deterministic(args.seed or 0, args.deterministic)
    if args.bicubic_only:
        model, cfg = None, _config(args)
        label = "bicubic"
    else:
        if not args.checkpoint:
            raise ConfigError("eval needs --checkpoint unless --bicubic-only is given")
        model, payload = load_checkpoint(args.checkpoint)
        cfg = _apply_overrides(model.cfg, args)
        label = Path(args.checkpoint).stem
    root = _data_root(args)
    images = _split_images(cfg, root, args.split)
    if not images:
        raise DataError(f"split '{args.split}' is empty")
    _check_bands(cfg, images)
    report, kept = evaluate_model(model, images, cfg, bicubic_only=args.bicubic_only, label=label, keep=True)

    out = Path(args.out)
    (out / "maps").mkdir(parents=True, exist_ok=True)
    (out / "previews").mkdir(parents=True, exist_ok=True)
    written = [write_json(out / "report.json", report.to_dict())]
    table = out / "report.txt"
    table.write_text(report.to_table())
    written.append(table)
    wavelengths = {im.name: im.band_wavelengths for im in images}
    for name, (pred, gt) in kept.items():
        err = error_map(pred, gt)
        written.append(save_png(out / "maps" / f"{name}_error.png", error_image(err)))
        np.save(out / "maps" / f"{name}_error.npy", err.astype(np.float32))
        written.append(out / "maps" / f"{name}_error.npy")
        written.append(save_png(out / "previews" / f"{name}_pred.png", pseudo_color(pred, wavelengths[name])))
        written.append(save_png(out / "previews" / f"{name}_gt.png", pseudo_color(gt, wavelengths[name])))
    manifest = {
        "kind": "eval",
        "checkpoint": str(args.checkpoint) if args.checkpoint else None,
        "bicubic_only": args.bicubic_only,
        "split": args.split,
        "config": cfg.model_dump(),
        "seed": args.seed,
        "version": version_string(),
        "finished": utc_now(),
        "artifacts": {str(p.relative_to(out)): sha256_file(p) for p in written},
    }
    write_manifest(out, manifest)
    print(report.to_table(), end="")
    return EXIT_OK


def cmd_ablate(args):
    cfg = _config(args)
    try:
        axes = [parse_variant(v) for v in (args.variant or ["domain"])]
    except ValueError as e:
        raise ConfigError(str(e)) from e
    root = _data_root(args)
    train, test = load_splits(cfg, root)
    if not train or not test:
        raise DataError("ablation needs non-empty train and test splits")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    artifacts, tables = {}, {}
    for axis, values in axes:
        reports = {}
        for value in values:
            run_dir = out / axis / value
            res = run_training(cfg.updated(**{axis: value}), train, test, run_dir, deterministic=args.deterministic)
            reports[value] = evaluate_model(res.model, test, res.model.cfg, label=value)
            artifacts[f"{axis}/{value}/manifest.json"] = sha256_file(run_dir / "manifest.json")
        table = ablation_table(axis, reports)
        tables[axis] = table
        (out / f"ablation_{axis}.txt").write_text(table)
        write_json(out / f"ablation_{axis}.json", {v: r.to_dict() for v, r in reports.items()})
        for name in (f"ablation_{axis}.txt", f"ablation_{axis}.json"):
            artifacts[name] = sha256_file(out / name)
        print(table)
    write_manifest(
        out,
        {
            "kind": "ablate",
            "version": version_string(),
            "variants": {axis: values for axis, values in axes},
            "config": cfg.model_dump(),
            "seed": cfg.seed,
            "deterministic": args.deterministic,
            "finished": utc_now(),
            "artifacts": artifacts,
        },
    )
    return EXIT_OK


def _latent_maps(run_dir, manifest, root):
    """Spectral and spatial latent maps of the first test (or train) scene of a run."""
    model, _ = load_checkpoint(Path(run_dir) / "model.pt")
    cfg = model.cfg
    train, test = load_splits(cfg, root)
    img = (test or train)[0]
    lr, msi = wald_simulate(img, cfg.int_scale, spectral_response(cfg), cfg.data.blur_sigma)
    dtype = next(model.parameters()).dtype
    lr_t, msi_t = to_batch([lr.data], dtype), to_batch([msi.data], dtype)
    with torch.no_grad():
        z_spe = model.enc_spe(lr_t)[0].permute(1, 2, 0).numpy()
        z_spa = model.enc_spa(torch.cat([bicubic_tensor(lr_t, msi_t.shape[-2:]), msi_t], 1))[0].permute(1, 2, 0).numpy()
    return z_spe, z_spa


def cmd_plot(args):
    out = Path(args.out)
    runs = {}
    for d in args.run_dirs:
        try:
            runs[Path(d).name or str(d)] = (Path(d), read_manifest(d))
        except (OSError, ValueError) as e:
            raise ConfigError(f"unreadable manifest in {d}: {e}") from e
    out.mkdir(parents=True, exist_ok=True)
    written = [plot_psnr_curves({k: m.get("history", []) for k, (_, m) in runs.items()}, out / "psnr_curves.png")]
    points = []
    for label, (_, m) in runs.items():
        fm = m.get("final_metrics")
        if fm and fm.get("aggregate"):
            agg = fm["aggregate"]
            points.append((label, agg["psnr"]["mean"], agg["ssim"]["mean"], m.get("n_parameters", 0)))
    if points:
        written.append(plot_quality_scatter(points, out / "psnr_ssim_scatter.png"))
    root = _data_root(args)
    for label, (d, m) in runs.items():
        if not (d / "model.pt").exists():
            continue
        z_spe, z_spa = _latent_maps(d, m, root)
        written.append(plot_amplitude_phase(z_spe, out / f"{label}_spectral_latent_fft.png", (0, 1), "spectral latent"))
        written.append(plot_amplitude_phase(z_spa, out / f"{label}_spatial_latent_fft.png", (0, 1), "spatial latent"))
    write_manifest(
        out,
        {
            "kind": "plot",
            "version": version_string(),
            "runs": [str(d) for d, _ in runs.values()],
            "finished": utc_now(),
            "artifacts": {p.name: sha256_file(p) for p in written},
        },
    )
    print("\n".join(str(p) for p in written))
    return EXIT_OK


# --- parser ------------------------------------------------------------------


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--data-root", help="dataset root (default: $FEINFN_DATA_ROOT)")
    common.add_argument("--out", required=True, help="output directory")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--deterministic", action="store_true", help="deterministic kernels, single thread")
    common.add_argument("--scale", type=int, help="override the upsampling factor")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="feinfn", description="Hyperspectral/multispectral image fusion")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", parents=[common], help="train a model")
    t.add_argument("--config", required=True)
    t.add_argument("--time-budget", type=float, help="stop after this many seconds")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint or the bicubic baseline")
    e.add_argument("--checkpoint")
    e.add_argument("--config", help="config for --bicubic-only runs")
    e.add_argument("--split", choices=["train", "test", "all"], default="test")
    e.add_argument("--bicubic-only", action="store_true", help="no model, bicubic upsampling only")
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("ablate", parents=[common], help="run an ablation matrix")
    a.add_argument("--config", required=True)
    a.add_argument(
        "--variant",
        action="append",
        help="axis or axis:value[,value] with axis in upsample, domain, activation (repeatable)",
    )
    a.set_defaults(func=cmd_ablate)

    pl = sub.add_parser("plot", parents=[common], help="figures from run directories")
    pl.add_argument("run_dirs", nargs="+")
    pl.set_defaults(func=cmd_plot)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.seed is not None:
            torch.manual_seed(args.seed)
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except NonFiniteLossError as e:
        print(f"training aborted: {e}\n{json.dumps(e.diagnostics, indent=2, default=str)}", file=sys.stderr)
        return EXIT_NONFINITE


if __name__ == "__main__":
    sys.exit(main())
