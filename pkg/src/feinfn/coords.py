"""Coordinate grids, neighbour gathering, positional encoding, resampling and
per-patch 2-D Fourier helpers."""

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .image import HyperspectralImage, from_tensor, to_tensor


@dataclass(frozen=True)
class CoordinateGrid:
    height: int
    width: int
    coords: torch.Tensor  # (height, width, 2)


@dataclass(frozen=True)
class NeighborSet:
    indices: np.ndarray  # (4, 2) integer (row, col) into the LR grid
    delta: np.ndarray  # (4, 2) relative coordinates in LR-cell units
    areas: np.ndarray  # (4,) partial areas, already divided by the cell area

    @property
    def weights(self):
        return self.areas / self.areas.sum()


@dataclass
class SpectrumPatch:
    amplitude: torch.Tensor
    phase: torch.Tensor


def _axis_centers(n, dtype=torch.float64, device=None):
    return -1 + (2 * torch.arange(n, dtype=dtype, device=device) + 1) / n


def make_coord(height, width, dtype=torch.float64, device=None):
    if height < 1 or width < 1:
        raise ValueError(f"grid dimensions must be positive, got {height}x{width}")
    ys = _axis_centers(height, dtype, device)
    xs = _axis_centers(width, dtype, device)
    return torch.stack(torch.meshgrid(ys, xs, indexing="ij"), dim=-1)


def make_coord_grid(height: int, width: int) -> CoordinateGrid:
    return CoordinateGrid(int(height), int(width), make_coord(int(height), int(width)))


def _axis_neighbors(c, n):
    # continuous pixel index of the query along one axis
    pos = (c + 1) * n / 2 - 0.5
    i0 = torch.floor(pos).clamp(0, max(n - 2, 0)).long()
    i1 = torch.clamp(i0 + 1, max=n - 1)
    t = (pos - i0.to(pos.dtype)).clamp(0, 1)
    return i0, i1, t


def neighbor_table(coords, height, width):
    """Batched 4-neighbour lookup on an LR grid of size height x width.

    coords: (..., 2) query coordinates. Returns
      rows, cols: (..., 4) long indices, order (r0,c0), (r0,c1), (r1,c0), (r1,c1)
      delta: (..., 4, 2) query minus neighbour centre, one LR pitch == 2 units
      weights: (..., 4) normalized diagonal-area weights
    """
    r0, r1, ty = _axis_neighbors(coords[..., 0], height)
    c0, c1, tx = _axis_neighbors(coords[..., 1], width)
    rows = torch.stack([r0, r0, r1, r1], dim=-1)
    cols = torch.stack([c0, c1, c0, c1], dim=-1)
    weights = torch.stack(
        [(1 - ty) * (1 - tx), (1 - ty) * tx, ty * (1 - tx), ty * tx], dim=-1
    )
    cy = -1 + (2 * rows.to(coords.dtype) + 1) / height
    cx = -1 + (2 * cols.to(coords.dtype) + 1) / width
    delta = torch.stack(
        [(coords[..., None, 0] - cy) * height, (coords[..., None, 1] - cx) * width], dim=-1
    )
    return rows, cols, delta, weights


def gather_neighbors(query, lr_grid: CoordinateGrid) -> NeighborSet:
    q = torch.as_tensor(query, dtype=torch.float64).reshape(2)
    if not bool(torch.all((q >= -1) & (q <= 1))):
        raise ValueError(f"query {q.tolist()} outside [-1, 1]^2")
    rows, cols, delta, weights = neighbor_table(q, lr_grid.height, lr_grid.width)
    return NeighborSet(
        indices=torch.stack([rows, cols], dim=-1).numpy(),
        delta=delta.numpy(),
        areas=weights.numpy(),
    )


def gather_patch(feat, rows, cols, size=4):
    """Gather size x size patches of a (B, C, H, W) map around HR pixels.

    rows, cols: (B, Q) integer pixel positions. The patch spans
    [r - size//2, r + size - size//2) with replicate padding.
    Returns (B, Q, C, size, size).
    """
    lo = size // 2
    hi = size - lo - 1
    padded = F.pad(feat, (lo, hi, lo, hi), mode="replicate")
    b, c = feat.shape[:2]
    off = torch.arange(size, device=feat.device)
    rr = rows[..., :, None] + off  # (B, Q, size) in padded coordinates
    cc = cols[..., :, None] + off
    bidx = torch.arange(b, device=feat.device)[:, None, None, None]
    patches = padded.permute(0, 2, 3, 1)[bidx, rr[..., :, None], cc[..., None, :]]
    return patches.permute(0, 1, 4, 2, 3)


def positional_encoding(delta, L: int):
    """[sin(2^0 d), cos(2^0 d), ..., sin(2^(L-1) d), cos(2^(L-1) d)] for both
    components of d, giving 4L features on the last axis."""
    if L < 1:
        raise ValueError("L must be >= 1")
    d = torch.as_tensor(delta)
    if not d.is_floating_point():
        d = d.to(torch.float64)
    freqs = 2.0 ** torch.arange(L, dtype=d.dtype, device=d.device)
    ang = d[..., :, None] * freqs  # (..., 2, L)
    enc = torch.stack([torch.sin(ang), torch.cos(ang)], dim=-1)  # (..., 2, L, 2)
    return enc.flatten(-3)


def bicubic_tensor(x, size):
    """Bicubic resize of a (B, C, h, w) tensor, clipped to [0, 1]."""
    out = F.interpolate(x, size=size, mode="bicubic", align_corners=False)
    return out.clamp(0, 1)


def bicubic_resample(image: HyperspectralImage, out_height: int, out_width: int) -> HyperspectralImage:
    if out_height < 1 or out_width < 1:
        raise ValueError("target dimensions must be positive")
    t = to_tensor(image, torch.float64)
    out = from_tensor(bicubic_tensor(t, (out_height, out_width))).astype(image.data.dtype)
    return image.replace(out)


def wrap_phase(phase):
    """Map angles into (-pi, pi]."""
    wrapped = torch.remainder(phase + math.pi, 2 * math.pi) - math.pi
    return torch.where(wrapped <= -math.pi, wrapped + 2 * math.pi, wrapped)


def split_spectrum(spec):
    amp = spec.abs()
    phase = torch.atan2(spec.imag, spec.real)
    # atan2(-0.0, x<0) gives -pi
    phase = torch.where(phase <= -math.pi, phase + 2 * math.pi, phase)
    return amp, phase


def fft2_patch(patch) -> SpectrumPatch:
    """Unnormalized 2-D DFT of an (H, W, C) real patch over its spatial axes."""
    p = torch.as_tensor(patch)
    if p.dim() != 3:
        raise ValueError("patch must be (H, W, C)")
    amp, phase = split_spectrum(torch.fft.fft2(p, dim=(0, 1)))
    return SpectrumPatch(amp, phase)


def ifft2_patch(spec: SpectrumPatch):
    """Inverse of fft2_patch. Returns (real part, max |imaginary residual|)."""
    z = torch.polar(spec.amplitude, spec.phase)
    x = torch.fft.ifft2(z, dim=(0, 1))
    return x.real, float(x.imag.abs().max())
