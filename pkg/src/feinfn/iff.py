"""Spatial-frequency implicit fusion function.

Each HR query looks at the 4 nearest LR latent codes.  The spatial branch feeds
(spectral code, high-passed spectral code, encoded offset) of each neighbour,
plus the HR spatial code at the query pixel, through an MLP that emits a value and a per-channel attention logit;
the frequency branch does the same on amplitude and phase of local spectra.
Neighbour logits are softmax-normalized per output channel.

Tensor layouts follow the query axis convention (..., Q, 4, C): any leading
batch dims are carried through.
"""

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .coords import gather_patch, neighbor_table, positional_encoding, split_spectrum
from .errors import ConfigError

PATCH = 4


@dataclass
class QueryBatch:
    coords: torch.Tensor  # (..., Q, 2)
    delta: torch.Tensor  # (..., Q, 4, 2)
    area_weights: torch.Tensor  # (..., Q, 4)
    z_spe: torch.Tensor  # (..., Q, 4, C)
    z_hp: torch.Tensor  # (..., Q, 4, C)
    z_spa: torch.Tensor  # (..., Q, 4, C)
    z_patch_spa: torch.Tensor  # (..., Q, 4, 4, C)

    @property
    def channels(self):
        return self.z_spe.shape[-1]


@dataclass
class IFFOutput:
    eps_s: torch.Tensor
    eps_f: torch.Tensor


def high_pass(z, padding="replicate"):
    """Identity minus 3x3 box blur over the last two axes of a (B, C, h, w) map."""
    if z.shape[-1] < 3 or z.shape[-2] < 3:
        raise ValueError(f"high_pass needs a map of at least 3x3, got {tuple(z.shape[-2:])}")
    blurred = F.avg_pool2d(F.pad(z, (1, 1, 1, 1), mode=padding), 3, stride=1)
    return z - blurred


def _take(feat, rows, cols):
    """feat (B, C, H, W), rows/cols (B, *idx) -> (B, *idx, C)."""
    b = feat.shape[0]
    bidx = torch.arange(b, device=feat.device).view(b, *([1] * (rows.dim() - 1)))
    return feat.permute(0, 2, 3, 1)[bidx, rows, cols]


def build_query_batch(z_spe, z_hp, z_spa, coords):
    """Assemble per-query inputs.

    z_spe, z_hp: (B, C, h, w) LR maps; z_spa: (B, C, H, W) HR map;
    coords: (Q, 2) HR pixel-centre coordinates of the H x W grid.
    """
    b, _, h, w = z_spe.shape
    hh, ww = z_spa.shape[-2:]
    coords = coords.to(z_spe.dtype)
    rows, cols, delta, weights = neighbor_table(coords, h, w)
    rows_b = rows.expand(b, *rows.shape)
    cols_b = cols.expand(b, *cols.shape)
    q_rows = torch.clamp(torch.floor((coords[:, 0] + 1) * hh / 2).long(), 0, hh - 1).expand(b, -1)
    q_cols = torch.clamp(torch.floor((coords[:, 1] + 1) * ww / 2).long(), 0, ww - 1).expand(b, -1)
    patch = gather_patch(z_spa, q_rows, q_cols, PATCH).permute(0, 1, 3, 4, 2)
    return QueryBatch(
        coords=coords.expand(b, *coords.shape),
        delta=delta.expand(b, *delta.shape),
        area_weights=weights.expand(b, *weights.shape),
        z_spe=_take(z_spe, rows_b, cols_b),
        z_hp=_take(z_hp, rows_b, cols_b),
        # the spatial code is read at the query pixel and shared by all four neighbours
        z_spa=_take(z_spa, q_rows, q_cols).unsqueeze(-2).expand(-1, -1, 4, -1),
        z_patch_spa=patch,
    )


def slice_batch(batch: QueryBatch, sl):
    """Restrict every field to queries ``sl`` along the query axis."""
    return QueryBatch(*(getattr(batch, f)[(Ellipsis, sl) + (slice(None),) * n] for f, n in _TAIL_DIMS))


_TAIL_DIMS = [
    ("coords", 1),
    ("delta", 2),
    ("area_weights", 1),
    ("z_spe", 2),
    ("z_hp", 2),
    ("z_spa", 2),
    ("z_patch_spa", 3),
]


_MASKS = {}


def _tap_masks(k, dtype, device):
    """m1[p, t]: tap t reads inside the patch for output p.
    m2[t, x]: input x is read by tap t from some in-patch output."""
    key = (k, dtype, device)
    if key not in _MASKS:
        r = k // 2
        offs = [(dy, dx) for dy in range(-r, r + 1) for dx in range(-r, r + 1)]
        pos = [(y, x) for y in range(PATCH) for x in range(PATCH)]
        inside = lambda y, x: 0 <= y < PATCH and 0 <= x < PATCH
        m1 = torch.tensor([[inside(y + dy, x + dx) for dy, dx in offs] for y, x in pos], dtype=dtype, device=device)
        m2 = torch.tensor([[inside(y - dy, x - dx) for y, x in pos] for dy, dx in offs], dtype=dtype, device=device)
        _MASKS[key] = (m1, m2)
    return _MASKS[key]


def mlp(in_dim, hidden, out_dim, layers=4):
    mods, d = [], in_dim
    for _ in range(layers - 1):
        mods += [nn.Linear(d, hidden), nn.ReLU(inplace=True)]
        d = hidden
    mods.append(nn.Linear(d, out_dim))
    for m in mods:
        if isinstance(m, nn.Linear):
            nn.init.kaiming_uniform_(m.weight, nonlinearity="relu")
            nn.init.zeros_(m.bias)
    return nn.Sequential(*mods)


def attend(out, n_out):
    """Split (..., 4, 2S) into values and logits; softmax logits over neighbours."""
    values, logits = out[..., :n_out], out[..., n_out:]
    weights = torch.softmax(logits, dim=-2)
    return (weights * values).sum(-2), weights, values


class SpaFreIFF(nn.Module):
    def __init__(self, latent_channels, out_bands, hidden=32, pe_levels=10):
        super().__init__()
        c, s = latent_channels, out_bands
        self.latent_channels, self.out_bands, self.pe_levels = c, s, pe_levels
        self.phi_theta = mlp(3 * c + 4 * pe_levels, hidden, 2 * s)
        self.phi_alpha = nn.Sequential(
            nn.Conv2d(2 * c + 2, hidden, 1), nn.ReLU(inplace=True), nn.Conv2d(hidden, 2 * s, 1)
        )
        self.phi_beta = nn.Sequential(
            nn.Conv2d(2 * c + 2, hidden, 3, padding=1), nn.ReLU(inplace=True), nn.Conv2d(hidden, 2 * s, 3, padding=1)
        )

    def _check(self, batch):
        if batch.channels != self.latent_channels:
            raise ConfigError(f"IFF built for {self.latent_channels} latent channels, batch has {batch.channels}")

    def spatial(self, batch: QueryBatch, return_weights=False):
        self._check(batch)
        pe = positional_encoding(batch.delta, self.pe_levels)
        inp = torch.cat([batch.z_spe, batch.z_spa, batch.z_hp, pe], dim=-1)
        eps_s, weights, _ = attend(self.phi_theta(inp), self.out_bands)
        return (eps_s, weights) if return_weights else eps_s

    def _branch(self, net, spe, spa, delta):
        """Evaluate conv -> ReLU -> conv -> mean-over-bins for every neighbour.

        Input maps are cat(spe_i broadcast, patch spectrum, delta_i broadcast).
        The first conv is split by linearity: the patch part is convolved once
        per query, the broadcast part reduces to a per-position matrix.  The
        mean over the output bins of the second conv is folded into per-tap
        window sums.  Equal to running the two convolutions directly.
        """
        conv1, conv2 = net[0], net[2]
        k = conv1.kernel_size[0]
        c = spe.shape[-1]
        lead = spe.shape[:-2]
        w1 = conv1.weight
        hid = w1.shape[0]
        patch = spa.reshape(-1, PATCH, PATCH, c).permute(0, 3, 1, 2)
        spa_part = F.conv2d(patch, w1[:, c : 2 * c], padding=k // 2).flatten(-2)  # (N, hid, P)
        spa_part = spa_part.reshape(*lead, 1, hid, PATCH * PATCH)
        u = torch.cat([spe, delta.to(spe.dtype)], dim=-1)  # (..., 4, C+2)
        w_u = torch.cat([w1[:, :c], w1[:, 2 * c :]], dim=1).flatten(-2)  # (hid, C+2, T)
        m1, m2 = _tap_masks(k, spe.dtype, spe.device)
        w_pos = torch.einsum("pt,hct->phc", m1, w_u)  # (P, hid, C+2)
        const = torch.einsum("...c,phc->...hp", u, w_pos)
        h = torch.relu(spa_part + const + conv1.bias[:, None])  # (..., 4, hid, P)
        window = torch.einsum("...hx,tx->...ht", h, m2)
        w2 = conv2.weight.flatten(-2)  # (out, hid, T)
        return torch.einsum("...ht,oht->...o", window, w2) / (PATCH * PATCH) + conv2.bias

    def frequency(self, batch: QueryBatch, return_parts=False):
        self._check(batch)
        spa_amp, spa_phase = split_spectrum(torch.fft.fft2(batch.z_patch_spa, dim=(-3, -2)))
        # the 1x1 transform of a single code is the code itself
        spe_amp, spe_phase = split_spectrum(torch.complex(batch.z_spe, torch.zeros_like(batch.z_spe)))
        s = self.out_bands
        amp, w_amp, _ = attend(self._branch(self.phi_alpha, spe_amp, spa_amp, batch.delta), s)
        phase, w_phase, _ = attend(self._branch(self.phi_beta, spe_phase, spa_phase, batch.delta), s)
        eps_f = amp * torch.cos(phase)
        if return_parts:
            return eps_f, {"amplitude": amp, "phase": phase, "w_amplitude": w_amp, "w_phase": w_phase}
        return eps_f

    def forward(self, batch: QueryBatch) -> IFFOutput:
        return IFFOutput(self.spatial(batch), self.frequency(batch))


def spatial_iff(batch, params: SpaFreIFF):
    return params.spatial(batch)


def frequency_iff(batch, params: SpaFreIFF):
    return params.frequency(batch)


def spa_fre_iff(batch, params: SpaFreIFF) -> IFFOutput:
    return params(batch)
