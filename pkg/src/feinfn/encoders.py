import math
from dataclasses import dataclass

import torch
import torch.nn as nn

from .config import EncoderConfig
from .coords import CoordinateGrid, make_coord_grid
from .errors import ConfigError
from .image import HyperspectralImage, to_tensor


@dataclass
class LatentField:
    features: torch.Tensor  # (height, width, C)
    grid: CoordinateGrid

    @property
    def channels(self):
        return self.features.shape[-1]


def conv(in_ch, out_ch, kernel_size, padding_mode="zeros"):
    return nn.Conv2d(in_ch, out_ch, kernel_size, padding=kernel_size // 2, padding_mode=padding_mode)


class ResBlock(nn.Module):
    def __init__(self, n_feats, kernel_size, padding_mode="zeros", res_scale=1.0):
        super().__init__()
        self.body = nn.Sequential(
            conv(n_feats, n_feats, kernel_size, padding_mode),
            nn.ReLU(inplace=True),
            conv(n_feats, n_feats, kernel_size, padding_mode),
        )
        self.res_scale = res_scale

    def forward(self, x):
        return x + self.body(x) * self.res_scale


class EDSREncoder(nn.Module):
    """EDSR-style feature extractor without upsampling or batch norm."""

    def __init__(self, in_channels, cfg: EncoderConfig = EncoderConfig()):
        super().__init__()
        k, pm = cfg.kernel_size, cfg.padding_mode
        self.in_channels = in_channels
        self.out_channels = cfg.base_channels
        self.head = conv(in_channels, cfg.base_channels, k, pm)
        self.body = nn.Sequential(*[ResBlock(cfg.base_channels, k, pm) for _ in range(cfg.num_residual_blocks)])
        self.tail = conv(cfg.base_channels, cfg.base_channels, k, pm)
        self.reset_parameters()

    def reset_parameters(self):
        for m in self.modules():
            if isinstance(m, nn.Conv2d):
                nn.init.kaiming_uniform_(m.weight, a=math.sqrt(5))
                bound = 1 / math.sqrt(m.weight[0].numel())
                nn.init.uniform_(m.bias, -bound, bound)

    def forward(self, x):
        if x.shape[1] != self.in_channels:
            raise ConfigError(f"encoder expects {self.in_channels} input channels, got {x.shape[1]}")
        x = self.head(x)
        return x + self.tail(self.body(x))


def _latent(feat):
    f = feat[0].permute(1, 2, 0)
    return LatentField(f, make_coord_grid(f.shape[0], f.shape[1]))


def encode_spectral(lr_hsi: HyperspectralImage, encoder: EDSREncoder) -> LatentField:
    dtype = next(encoder.parameters()).dtype
    return _latent(encoder(to_tensor(lr_hsi, dtype)))


def encode_spatial(up_lr_hsi: HyperspectralImage, hr_msi: HyperspectralImage, encoder: EDSREncoder) -> LatentField:
    if up_lr_hsi.shape[:2] != hr_msi.shape[:2]:
        raise ValueError(f"spatial shapes differ: {up_lr_hsi.shape[:2]} vs {hr_msi.shape[:2]}")
    dtype = next(encoder.parameters()).dtype
    x = torch.cat([to_tensor(up_lr_hsi, dtype), to_tensor(hr_msi, dtype)], dim=1)
    return _latent(encoder(x))


def count_parameters(module):
    return sum(p.numel() for p in module.parameters())
