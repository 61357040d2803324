"""Tables, previews and figures written by the CLI."""

import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from PIL import Image  # noqa: E402

from .data import CAVE_WAVELENGTHS  # noqa: E402
from .metrics import format_table  # noqa: E402

PREVIEW_NM = (620.0, 550.0, 450.0)  # R, G, B

# per-axis table layout: (first column header, [(variant value, row label)])
ABLATIONS = {
    "upsample": ("Methods", [("bilinear", "Bilinear"), ("bicubic", "Bicubic"), ("pixel_shuffle", "Pixel Shuffle"), ("inr", "INR")]),
    "domain": ("S F", [("spatial_only", "✓ ✗"), ("frequency_only", "✗ ✓"), ("both", "✓ ✓")]),
    "activation": ("Nonlinear", [("relu", "ReLU"), ("gelu", "GELU"), ("leaky_relu", "Leaky ReLU"), ("gabor", "Gabor")]),
}
METRIC_HEADERS = ["PSNR(↑)", "SAM(↓)", "ERGAS(↓)", "SSIM(↑)"]
# no timestamps or version strings inside figure files
_SAVE_KW = {"metadata": {"Software": None}}


def parse_variant(text):
    """'domain' -> ('domain', all values); 'domain:spatial_only' -> ('domain', ['spatial_only'])."""
    axis, _, value = text.partition(":")
    if axis not in ABLATIONS:
        raise ValueError(f"unknown ablation axis {axis!r}; choose from {sorted(ABLATIONS)}")
    known = [v for v, _ in ABLATIONS[axis][1]]
    if not value:
        return axis, known
    values = value.split(",")
    bad = [v for v in values if v not in known]
    if bad:
        raise ValueError(f"unknown {axis} variant(s) {bad}; choose from {known}")
    return axis, values


def ablation_table(axis, reports):
    """reports: {variant value: MetricReport}. Rows follow the fixed table order."""
    head, rows_spec = ABLATIONS[axis]
    rows = [[label] + reports[v].row() for v, label in rows_spec if v in reports]
    return format_table([head] + METRIC_HEADERS, rows)


def band_indices(n_bands, wavelengths=None, targets=PREVIEW_NM):
    if wavelengths is None:
        wavelengths = CAVE_WAVELENGTHS if n_bands == len(CAVE_WAVELENGTHS) else np.linspace(400, 700, n_bands)
    wl = np.asarray(wavelengths, dtype=np.float64)
    return [int(np.argmin(np.abs(wl - t))) for t in targets]


def pseudo_color(cube, wavelengths=None, targets=PREVIEW_NM):
    """(H, W, B) cube -> (H, W, 3) uint8 using the bands nearest the target wavelengths."""
    cube = np.asarray(cube, dtype=np.float64)
    rgb = cube[..., band_indices(cube.shape[-1], wavelengths, targets)]
    hi = np.percentile(rgb, 99.5)
    if hi > 0:
        rgb = rgb / hi
    return (np.clip(rgb, 0, 1) * 255 + 0.5).astype(np.uint8)


def error_image(err, vmax=None):
    err = np.asarray(err, dtype=np.float64)
    vmax = vmax or max(float(err.max()), 1e-12)
    rgba = matplotlib.colormaps["inferno"](np.clip(err / vmax, 0, 1))
    return (rgba[..., :3] * 255 + 0.5).astype(np.uint8)


def save_png(path, array):
    Image.fromarray(array).save(path, format="PNG")
    return Path(path)


def amplitude_phase(latent):
    """Centred amplitude (log1p) and phase of the 2-D DFT of each channel of an (h, w, C) map."""
    spec = np.fft.fftshift(np.fft.fft2(np.asarray(latent, dtype=np.float64), axes=(0, 1)), axes=(0, 1))
    return np.log1p(np.abs(spec)), np.angle(spec)


def plot_amplitude_phase(latent, path, channels=(0,), title=""):
    amp, phase = amplitude_phase(latent)
    fig, axes = plt.subplots(len(channels), 2, figsize=(5, 2.5 * len(channels)), squeeze=False)
    for row, c in zip(axes, channels):
        row[0].imshow(amp[..., c], cmap="gray")
        row[0].set_title(f"amplitude, ch {c}")
        row[1].imshow(phase[..., c], cmap="twilight", vmin=-np.pi, vmax=np.pi)
        row[1].set_title(f"phase, ch {c}")
        for ax in row:
            ax.set_xticks([])
            ax.set_yticks([])
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)
    return Path(path)


def _finite(v):
    return v is not None and np.isfinite(v)


def plot_psnr_curves(histories, path):
    """histories: {label: [{'step', 'test_psnr', ...}, ...]}"""
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for label, hist in histories.items():
        pts = [(r["step"], r["test_psnr"]) for r in hist if _finite(r.get("test_psnr"))]
        if pts:
            x, y = zip(*pts)
            ax.plot(x, y, marker="o", ms=3, label=label)
    ax.set_xlabel("iteration")
    ax.set_ylabel("PSNR (dB)")
    ax.grid(alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)
    return Path(path)


def plot_quality_scatter(points, path):
    """points: [(label, psnr, ssim, n_parameters)]; marker area grows with parameter count."""
    fig, ax = plt.subplots(figsize=(5, 3.5))
    sizes = np.array([p[3] for p in points], dtype=np.float64)
    area = 40 + 400 * sizes / sizes.max() if len(sizes) and sizes.max() > 0 else np.full(len(points), 40.0)
    for (label, ps, ss, n), a in zip(points, area):
        ax.scatter(ps, ss, s=a, alpha=0.6)
        ax.annotate(f"{label} ({n / 1e3:.0f}k)", (ps, ss), fontsize=7, xytext=(3, 3), textcoords="offset points")
    ax.set_xlabel("PSNR (dB)")
    ax.set_ylabel("SSIM")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)
    return Path(path)


def write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True))
    return Path(path)
