"""PSNR, SAM, ERGAS and SSIM over (H, W, B) cubes, plus aggregate reports."""

import json
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

PSNR_CAP = 100.0
METRICS = ("psnr", "sam", "ergas", "ssim")


def _pair(pred, gt):
    p = np.asarray(getattr(pred, "data", pred), dtype=np.float64)
    g = np.asarray(getattr(gt, "data", gt), dtype=np.float64)
    if p.shape != g.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {g.shape}")
    if p.ndim == 2:
        p, g = p[..., None], g[..., None]
    return p, g


def psnr(pred, gt, peak=1.0):
    p, g = _pair(pred, gt)
    mse = np.mean((p - g) ** 2)
    if mse < 1e-10:
        return PSNR_CAP
    return float(10 * np.log10(peak**2 / mse))


def sam(pred, gt, return_skipped=False):
    """Mean spectral angle in degrees; pixels with a zero-norm spectrum are skipped."""
    p, g = _pair(pred, gt)
    p = p.reshape(-1, p.shape[-1])
    g = g.reshape(-1, g.shape[-1])
    np_, ng = np.linalg.norm(p, axis=1), np.linalg.norm(g, axis=1)
    valid = (np_ > 0) & (ng > 0)
    skipped = float(1 - valid.mean())
    if not valid.any():
        angle = float("nan")
    else:
        u = p[valid] / np_[valid, None]
        v = g[valid] / ng[valid, None]
        # half-angle form stays accurate near 0 and 180 degrees, unlike arccos
        ang = 2 * np.arctan2(np.linalg.norm(u - v, axis=1), np.linalg.norm(u + v, axis=1))
        angle = float(np.degrees(np.mean(ang)))
    return (angle, skipped) if return_skipped else angle


def ergas(pred, gt, ratio):
    """100 * ratio * sqrt(mean_b (RMSE_b / mean(gt_b))^2), ratio = LR/HR pixel ratio (1/scale)."""
    p, g = _pair(pred, gt)
    rmse = np.sqrt(np.mean((p - g) ** 2, axis=(0, 1)))
    means = np.mean(g, axis=(0, 1))
    ok = means != 0
    if not ok.all():
        warnings.warn(f"ERGAS: excluding {int((~ok).sum())} band(s) with zero mean", RuntimeWarning)
    if not ok.any():
        return float("nan")
    return float(100 * ratio * np.sqrt(np.mean((rmse[ok] / means[ok]) ** 2)))


def gaussian_window(size=11, sigma=1.5):
    x = np.arange(size) - size // 2
    k = np.exp(-(x**2) / (2 * sigma**2))
    return k / k.sum()


def _filter_valid(img, k):
    # separable correlation keeping only fully-supported outputs
    r = len(k) // 2
    out = ndimage.correlate1d(img, k, axis=0, mode="constant")[r:-r]
    return ndimage.correlate1d(out, k, axis=1, mode="constant")[:, r:-r]


def ssim(pred, gt, peak=1.0, win_size=11, sigma=1.5):
    p, g = _pair(pred, gt)
    if min(p.shape[:2]) < win_size:
        raise ValueError(f"SSIM needs spatial extent >= {win_size}")
    c1, c2 = (0.01 * peak) ** 2, (0.03 * peak) ** 2
    k = gaussian_window(win_size, sigma)
    vals = []
    for b in range(p.shape[-1]):
        x, y = p[..., b], g[..., b]
        mx, my = _filter_valid(x, k), _filter_valid(y, k)
        sxx = _filter_valid(x * x, k) - mx * mx
        syy = _filter_valid(y * y, k) - my * my
        sxy = _filter_valid(x * y, k) - mx * my
        s = ((2 * mx * my + c1) * (2 * sxy + c2)) / ((mx * mx + my * my + c1) * (sxx + syy + c2))
        vals.append(s.mean())
    return float(np.mean(vals))


def error_map(pred, gt):
    p, g = _pair(pred, gt)
    return np.mean(np.abs(p - g), axis=-1)


def evaluate(pred, gt, scale):
    return {
        "psnr": psnr(pred, gt),
        "sam": sam(pred, gt),
        "ergas": ergas(pred, gt, 1.0 / scale),
        "ssim": ssim(pred, gt),
    }


@dataclass
class MetricReport:
    per_scene: list = field(default_factory=list)
    label: str = ""

    def add(self, name, values):
        self.per_scene.append({"name": name, **{m: float(values[m]) for m in METRICS}})

    @property
    def aggregate(self):
        # population std (ddof=0) across scenes
        out = {}
        for m in METRICS:
            vals = np.array([row[m] for row in self.per_scene], dtype=np.float64)
            out[m] = {"mean": float(vals.mean()), "std": float(vals.std())} if len(vals) else None
        return out

    def to_dict(self):
        return {"label": self.label, "per_scene": self.per_scene, "aggregate": self.aggregate}

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, d):
        return cls(per_scene=list(d["per_scene"]), label=d.get("label", ""))

    def row(self):
        agg = self.aggregate
        fmt = {"psnr": "{:.2f}", "sam": "{:.2f}", "ergas": "{:.2f}", "ssim": "{:.3f}"}
        return [
            f"{fmt[m].format(agg[m]['mean'])}±{fmt[m].format(agg[m]['std'])}" if agg[m] else "-" for m in METRICS
        ]

    def to_table(self):
        header = ["Scene", "PSNR", "SAM", "ERGAS", "SSIM"]
        rows = [
            [r["name"], f"{r['psnr']:.2f}", f"{r['sam']:.2f}", f"{r['ergas']:.2f}", f"{r['ssim']:.4f}"]
            for r in self.per_scene
        ]
        rows.append([self.label or "mean ± std"] + self.row())
        return format_table(header, rows)


def format_table(header, rows):
    widths = [max(len(str(x)) for x in col) for col in zip(header, *rows)]
    line = lambda cells: "  ".join(str(c).ljust(w) for c, w in zip(cells, widths)).rstrip()
    sep = "  ".join("-" * w for w in widths)
    return "\n".join([line(header), sep] + [line(r) for r in rows]) + "\n"


