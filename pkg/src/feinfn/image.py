from dataclasses import dataclass, field
from typing import Optional

import numpy as np


@dataclass
class HyperspectralImage:
    """A (height, width, bands) cube with values in [0, 1]."""

    data: np.ndarray
    band_wavelengths: Optional[list] = None
    name: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim == 2:
            data = data[:, :, None]
        if data.ndim != 3 or min(data.shape) < 1:
            raise ValueError(f"expected a (height, width, bands) array, got shape {data.shape}")
        if not np.issubdtype(data.dtype, np.floating):
            data = data.astype(np.float32)
        if not np.all(np.isfinite(data)):
            raise ValueError(f"{self.name or 'image'}: non-finite values")
        lo, hi = float(data.min()), float(data.max())
        if lo < -1e-6 or hi > 1 + 1e-6:
            raise ValueError(f"{self.name or 'image'}: values outside [0, 1] (min={lo}, max={hi})")
        self.data = data
        if self.band_wavelengths is not None:
            wl = [float(w) for w in self.band_wavelengths]
            if len(wl) != data.shape[2]:
                raise ValueError("band_wavelengths length does not match band count")
            if any(b <= a for a, b in zip(wl, wl[1:])):
                raise ValueError("band_wavelengths must be strictly increasing")
            self.band_wavelengths = wl

    @property
    def height(self):
        return self.data.shape[0]

    @property
    def width(self):
        return self.data.shape[1]

    @property
    def bands(self):
        return self.data.shape[2]

    @property
    def shape(self):
        return self.data.shape

    def replace(self, data, **kw):
        return HyperspectralImage(
            data,
            band_wavelengths=kw.get("band_wavelengths", self.band_wavelengths),
            name=kw.get("name", self.name),
            meta=dict(kw.get("meta", self.meta)),
        )


def to_tensor(img, dtype=None):
    """HWC image (or array) -> 1xCxHxW tensor."""
    import torch

    arr = img.data if isinstance(img, HyperspectralImage) else np.asarray(img)
    t = torch.from_numpy(np.ascontiguousarray(arr)).permute(2, 0, 1).unsqueeze(0)
    return t.to(dtype) if dtype is not None else t


def from_tensor(t):
    """1xCxHxW (or CxHxW) tensor -> HWC numpy array."""
    if t.dim() == 4:
        t = t[0]
    return t.detach().permute(1, 2, 0).cpu().numpy()
