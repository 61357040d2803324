"""End-to-end fusion network, loss, optimisation step and checkpoints."""

import hashlib
import io
import json
import math
import subprocess
from pathlib import Path

import torch
import torch.nn as nn
import torch.nn.functional as F

from . import __version__
from .config import FusionConfig, make_config
from .coords import bicubic_tensor, make_coord
from .decoder import SFIDecoder
from .encoders import EDSREncoder
from .errors import ConfigError, NonFiniteLossError
from .iff import SpaFreIFF, build_query_batch, high_pass


class GridUpsampleHead(nn.Module):
    """Replaces the implicit function with a fixed or sub-pixel upsampler.

    The LR spectral latent map is brought to HR size, concatenated with the
    spatial latent map and projected per pixel to the two decoder inputs.
    """

    def __init__(self, mode, channels, out_bands, hidden, scale):
        super().__init__()
        self.mode = mode
        if mode == "pixel_shuffle":
            self.shuffle = nn.Sequential(
                nn.Conv2d(channels, channels * scale * scale, 3, padding=1), nn.PixelShuffle(scale)
            )
        self.proj = nn.Sequential(
            nn.Conv2d(2 * channels, hidden, 1), nn.ReLU(inplace=True), nn.Conv2d(hidden, 2 * out_bands, 1)
        )
        self.out_bands = out_bands

    def upsample(self, z_spe, size):
        if self.mode == "pixel_shuffle":
            up = self.shuffle(z_spe)
            if up.shape[-2:] != size:
                raise ConfigError(f"pixel shuffle produced {tuple(up.shape[-2:])}, expected {tuple(size)}")
            return up
        return F.interpolate(z_spe, size=size, mode=self.mode, align_corners=False)

    def forward(self, z_spe, z_spa):
        feats = self.proj(torch.cat([self.upsample(z_spe, z_spa.shape[-2:]), z_spa], dim=1))
        eps = feats.flatten(2).transpose(1, 2)  # (B, H*W, 2S)
        return eps[..., : self.out_bands], eps[..., self.out_bands :]


class FeINFN(nn.Module):
    def __init__(self, cfg: FusionConfig = FusionConfig()):
        super().__init__()
        self.cfg = cfg
        c = cfg.encoder.base_channels
        self.enc_spe = EDSREncoder(cfg.bands, cfg.encoder)
        self.enc_spa = EDSREncoder(cfg.bands + cfg.msi_bands, cfg.encoder)
        if cfg.upsample == "inr":
            self.iff = SpaFreIFF(c, cfg.bands, cfg.iff_hidden, cfg.pe_levels)
        else:
            scale = cfg.int_scale if cfg.upsample == "pixel_shuffle" else 1
            self.iff = GridUpsampleHead(cfg.upsample, c, cfg.bands, cfg.iff_hidden, scale)
        self.decoder = SFIDecoder(cfg.bands, cfg.bands, cfg.decoder_channels, cfg.gabor, cfg.activation)
        self.query_chunk = cfg.train.query_chunk

    def _check_inputs(self, lr, msi):
        if lr.dim() != 4 or msi.dim() != 4:
            raise ValueError("inputs must be (B, C, H, W)")
        if lr.shape[0] != msi.shape[0]:
            raise ValueError("batch sizes differ")
        if lr.shape[1] != self.cfg.bands or msi.shape[1] != self.cfg.msi_bands:
            raise ValueError(
                f"expected {self.cfg.bands} HSI and {self.cfg.msi_bands} MSI bands, got {lr.shape[1]} and {msi.shape[1]}"
            )
        h, w = lr.shape[-2:]
        hh, ww = msi.shape[-2:]
        r = float(self.cfg.scale)
        if hh != round(r * h) or ww != round(r * w):
            raise ValueError(f"HR size {hh}x{ww} inconsistent with LR size {h}x{w} at scale {r}")

    def fused_features(self, lr, msi):
        """Returns (upsampled LR-HSI, eps_s, eps_f) with eps shaped (B, H*W, S)."""
        self._check_inputs(lr, msi)
        size = msi.shape[-2:]
        up = bicubic_tensor(lr, size)
        z_spe = self.enc_spe(lr)
        z_spa = self.enc_spa(torch.cat([up, msi], dim=1))
        if isinstance(self.iff, GridUpsampleHead):
            eps_s, eps_f = self.iff(z_spe, z_spa)
        else:
            z_hp = high_pass(z_spe)
            coords = make_coord(*size, dtype=lr.dtype, device=lr.device).reshape(-1, 2)
            parts_s, parts_f = [], []
            for start in range(0, coords.shape[0], self.query_chunk):
                batch = build_query_batch(z_spe, z_hp, z_spa, coords[start : start + self.query_chunk])
                s = self.iff.spatial(batch) if self.cfg.domain != "frequency_only" else None
                f = self.iff.frequency(batch) if self.cfg.domain != "spatial_only" else None
                parts_s.append(s if s is not None else torch.zeros_like(f))
                parts_f.append(f if f is not None else torch.zeros_like(s))
            eps_s, eps_f = torch.cat(parts_s, dim=1), torch.cat(parts_f, dim=1)
        if self.cfg.domain == "spatial_only":
            eps_f = torch.zeros_like(eps_f)
        elif self.cfg.domain == "frequency_only":
            eps_s = torch.zeros_like(eps_s)
        return up, eps_s, eps_f

    def forward_parts(self, lr, msi):
        up, eps_s, eps_f = self.fused_features(lr, msi)
        b, s, hh, ww = up.shape
        residual = self.decoder(eps_s, eps_f).transpose(1, 2).reshape(b, s, hh, ww)
        return up + residual, up, residual

    def forward(self, lr, msi):
        return self.forward_parts(lr, msi)[0]

    @torch.no_grad()
    def predict(self, lr, msi):
        was_training = self.training
        self.eval()
        out = self(lr, msi).clamp(0, 1)
        self.train(was_training)
        return out


def fusion_loss(prediction, ground_truth, kind="L1"):
    if prediction.shape != ground_truth.shape:
        raise ValueError(f"shape mismatch: {tuple(prediction.shape)} vs {tuple(ground_truth.shape)}")
    if kind == "L1":
        return (prediction - ground_truth).abs().mean()
    if kind == "L2":
        return (prediction - ground_truth).square().mean()
    raise ConfigError(f"unknown loss {kind!r}")


def make_optimizer(model, cfg: FusionConfig):
    opt = torch.optim.AdamW(model.parameters(), lr=cfg.optimizer.lr, weight_decay=cfg.optimizer.weight_decay)
    sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, T_max=cfg.scheduler.t_max, eta_min=cfg.scheduler.eta_min)
    return opt, sched


def cosine_lr(step, lr0, t_max, eta_min=0.0):
    return eta_min + (lr0 - eta_min) * (1 + math.cos(math.pi * step / t_max)) / 2


def train_step(batch, model, optimizer, scheduler=None, cfg: FusionConfig = None, step=None):
    """One AdamW update on ``batch = (lr, msi, gt)``. Returns the loss value."""
    cfg = cfg or model.cfg
    lr, msi, gt = batch
    model.train()
    optimizer.zero_grad(set_to_none=True)
    loss = fusion_loss(model(lr, msi), gt, cfg.loss)
    if not torch.isfinite(loss):
        snapshot = {
            "step": step,
            "loss": float(loss.detach()),
            "lr": optimizer.param_groups[0]["lr"],
            "nonfinite_params": [n for n, p in model.named_parameters() if not torch.isfinite(p).all()],
        }
        raise NonFiniteLossError("non-finite training loss", snapshot)
    loss.backward()
    optimizer.step()
    if scheduler is not None:
        scheduler.step()
    return float(loss.detach())


def set_deterministic(seed, deterministic=True):
    torch.manual_seed(seed)
    if deterministic:
        torch.use_deterministic_algorithms(True)
        torch.set_num_threads(1)


def version_string():
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            cwd=Path(__file__).resolve().parent,
            capture_output=True,
            text=True,
            timeout=5,
        )
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}+{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def save_checkpoint(path, model, optimizer=None, scheduler=None, step=0, extra=None):
    path = Path(path)
    payload = {
        "model": model.state_dict(),
        "config": model.cfg.model_dump(),
        "version": version_string(),
        "step": step,
        "rng_state": torch.get_rng_state(),
    }
    if optimizer is not None:
        payload["optimizer"] = optimizer.state_dict()
    if scheduler is not None:
        payload["scheduler"] = scheduler.state_dict()
    buf = io.BytesIO()
    torch.save(payload, buf)
    data = buf.getvalue()
    path.write_bytes(data)
    meta = {
        "checkpoint": path.name,
        "sha256": hashlib.sha256(data).hexdigest(),
        "version": payload["version"],
        "step": step,
        "n_parameters": sum(p.numel() for p in model.parameters()),
        "config": payload["config"],
    }
    if extra:
        meta.update(extra)
    path.with_suffix(".json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    return path


def load_checkpoint(path, dtype=None):
    """Returns (model, payload)."""
    try:
        payload = torch.load(path, map_location="cpu", weights_only=False)
        cfg = make_config(payload["config"])
        model = FeINFN(cfg)
        state = payload["model"]
        stored = next(v.dtype for v in state.values() if v.is_floating_point())
        model.to(stored)
        model.load_state_dict(state)
        if dtype is not None:
            model.to(dtype)
    except ConfigError:
        raise
    except Exception as e:  # torch raises a variety of types for corrupt files
        raise ConfigError(f"cannot load checkpoint {path}: {e}") from e
    return model, payload
