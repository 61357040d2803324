"""Training and evaluation loops shared by the CLI and the acceptance tests."""

import csv
import hashlib
import json
import logging
import math
import time
from datetime import datetime, timezone
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .config import FusionConfig
from .coords import bicubic_tensor
from .data import SpectralResponse, fingerprint, harvard_crop, load_dataset, make_split, sample_patches, wald_simulate
from .errors import DataError
from .metrics import MetricReport, evaluate
from .model import FeINFN, make_optimizer, save_checkpoint, set_deterministic, train_step, version_string

log = logging.getLogger(__name__)

DTYPES = {"float32": torch.float32, "float64": torch.float64}


def spectral_response(cfg: FusionConfig):
    if cfg.data.srf_file:
        srf = SpectralResponse.from_csv(cfg.data.srf_file)
        if srf.hsi_bands != cfg.bands or srf.msi_bands != cfg.msi_bands:
            raise DataError(f"SRF {cfg.data.srf_file} is {srf.matrix.shape}, config wants ({cfg.msi_bands}, {cfg.bands})")
        return srf
    return SpectralResponse.grouped(cfg.bands, cfg.msi_bands)


def load_splits(cfg: FusionConfig, root=None):
    """Returns (train_images, test_images) according to the data section."""
    d = cfg.data
    if d.layout == "synthetic":
        images = load_dataset(layout="synthetic", seed=d.split_seed, count=d.synthetic_count, size=d.synthetic_size, bands=cfg.bands)
        n_test = max(1, d.synthetic_count // 4)
        spec = {"train": [im.name for im in images[:-n_test]], "test": [im.name for im in images[-n_test:]]}
    else:
        if root is None:
            raise DataError("no data root given (use --data-root or FEINFN_DATA_ROOT)")
        images = load_dataset(root, d.layout)
        spec = d.split_spec or {"seed": d.split_seed, "n_train": d.n_train, "n_test": d.n_test}
    if d.harvard_crop:
        images = [harvard_crop(im, cfg.int_scale) for im in images]
    parts = make_split([im.name for im in images], spec)
    pick = lambda names: [im for im in images if im.name in set(names)]
    return pick(parts.get("train", [])), pick(parts.get("test", []))


def to_batch(arrays, dtype=torch.float32):
    """Stack HWC numpy arrays into a (N, C, H, W) tensor."""
    return torch.from_numpy(np.stack([np.asarray(a) for a in arrays])).permute(0, 3, 1, 2).to(dtype).contiguous()


def triplet_batch(triplets, dtype=torch.float32):
    return (
        to_batch([t.lr_hsi for t in triplets], dtype),
        to_batch([t.hr_msi for t in triplets], dtype),
        to_batch([t.gt for t in triplets], dtype),
    )


def simulate(img, cfg: FusionConfig, srf=None, dtype=torch.float32):
    """Full-scene (lr, msi, gt) tensors with a batch dim of 1."""
    lr, msi = wald_simulate(img, cfg.int_scale, srf or spectral_response(cfg), cfg.data.blur_sigma)
    return to_batch([lr.data], dtype), to_batch([msi.data], dtype), to_batch([img.data], dtype)


def _hwc(t):
    return t[0].permute(1, 2, 0).detach().cpu().numpy().astype(np.float64)


def predict_scene(model, img, cfg, srf=None, bicubic_only=False):
    dtype = DTYPES[cfg.train.dtype] if model is None else next(model.parameters()).dtype
    lr, msi, gt = simulate(img, cfg, srf, dtype)
    if bicubic_only or model is None:
        pred = bicubic_tensor(lr, gt.shape[-2:])
    else:
        pred = model.predict(lr, msi)
    return _hwc(pred), _hwc(gt)


def evaluate_model(model, images, cfg: FusionConfig, srf=None, bicubic_only=False, label="", keep=False):
    """Metrics over whole scenes. With keep=True also returns {name: (pred, gt)}."""
    report = MetricReport(label=label)
    kept = {}
    for img in images:
        pred, gt = predict_scene(model, img, cfg, srf, bicubic_only)
        report.add(img.name, evaluate(pred, gt, cfg.int_scale))
        if keep:
            kept[img.name] = (pred, gt)
    return (report, kept) if keep else report


def sha256_file(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


@dataclass
class TrainResult:
    model: FeINFN
    history: list = field(default_factory=list)
    artifacts: dict = field(default_factory=dict)
    steps_done: int = 0


def run_training(
    cfg: FusionConfig,
    train_images,
    test_images=(),
    out_dir=None,
    deterministic=False,
    time_budget=None,
    srf=None,
):
    """Train from scratch on random patches of ``train_images``.

    Patches are re-drawn every ``patches_per_epoch`` samples from a seed that
    depends only on (cfg.seed, epoch), so runs are reproducible.  Test PSNR is
    recorded every ``eval_every`` steps when test scenes are given.
    ``time_budget`` (seconds) stops training early at a step boundary.
    """
    set_deterministic(cfg.seed, deterministic)
    dtype = DTYPES[cfg.train.dtype]
    srf = srf or spectral_response(cfg)
    model = FeINFN(cfg).to(dtype)
    opt, sched = make_optimizer(model, cfg)
    out = Path(out_dir) if out_dir else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
    tc = cfg.train
    scale = cfg.int_scale
    bs = tc.batch_size
    per_epoch = max(tc.patches_per_epoch, bs)
    history, artifacts = [], {}
    pool, epoch = [], -1
    start = time.monotonic()
    started = utc_now()
    step = 0
    for step in range(1, tc.steps + 1):
        pos = ((step - 1) * bs) % per_epoch
        if pos + bs > per_epoch or not pool:
            epoch += 1
            pool = sample_patches(train_images, tc.patch_hr, scale, per_epoch, cfg.seed * 100003 + epoch, srf, cfg.data.blur_sigma)
            pos = 0
        batch = triplet_batch(pool[pos : pos + bs], dtype)
        loss = train_step(batch, model, opt, sched, cfg, step)
        rec = {"step": step, "loss": loss, "lr": opt.param_groups[0]["lr"]}
        last = step == tc.steps or (time_budget is not None and time.monotonic() - start > time_budget)
        if test_images and (step % tc.eval_every == 0 or last):
            rec["test_psnr"] = evaluate_model(model, test_images, cfg, srf).aggregate["psnr"]["mean"]
            log.info("step %d loss %.5f test psnr %.2f", step, loss, rec["test_psnr"])
        history.append(rec)
        if out and tc.checkpoint_every and step % tc.checkpoint_every == 0:
            _record_checkpoint(artifacts, save_checkpoint(out / f"step_{step:07d}.pt", model, opt, sched, step))
        if last:
            break
    if out:
        _record_checkpoint(artifacts, save_checkpoint(out / "model.pt", model, opt, sched, step))
        hist = out / "history.csv"
        write_history(hist, history)
        artifacts[hist.name] = sha256_file(hist)
        final = evaluate_model(model, test_images, cfg, srf).to_dict() if test_images else None
        manifest = {
            "kind": "train",
            "version": version_string(),
            "config": cfg.model_dump(),
            "seed": cfg.seed,
            "deterministic": deterministic,
            "started": started,
            "finished": utc_now(),
            "steps_done": step,
            "dataset_fingerprints": {
                "train": {im.name: fingerprint(im) for im in train_images},
                "test": {im.name: fingerprint(im) for im in test_images},
            },
            "history": history,
            "final_metrics": final,
            "n_parameters": sum(p.numel() for p in model.parameters()),
            "checkpoints": sorted(k for k in artifacts if k.endswith(".pt")),
            "artifacts": artifacts,
        }
        write_manifest(out, manifest)
    return TrainResult(model, history, artifacts, step)


def _record_checkpoint(artifacts, path):
    for p in (path, path.with_suffix(".json")):
        artifacts[p.name] = sha256_file(p)


def utc_now():
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def write_manifest(out_dir, manifest):
    """Every file a command writes is listed under 'artifacts' with its sha256."""
    path = Path(out_dir) / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return path


def read_manifest(path):
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    return json.loads(path.read_text())


def write_history(path, history):
    keys = ["step", "loss", "lr", "test_psnr"]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys)
        w.writeheader()
        for rec in history:
            w.writerow({k: rec.get(k, "") for k in keys})


def read_history(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    conv = lambda v: float(v) if v not in ("", None) else math.nan
    return [{k: conv(v) for k, v in r.items()} for r in rows]
