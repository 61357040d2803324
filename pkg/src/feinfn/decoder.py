"""Dual-stream interactive decoder with complex Gabor wavelet activations."""

import math

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import GaborParams
from .errors import NumericalError

N_BLOCKS = 3


def gabor_activation(x, params: GaborParams = GaborParams(), omega0=None, upsilon0=None):
    """G(x) = exp(j w0 Re(x)) exp(-|u0 x|^2), elementwise; |G| <= 1."""
    w0 = params.omega0 if omega0 is None else omega0
    u0 = params.upsilon0 if upsilon0 is None else upsilon0
    x = torch.as_tensor(x)
    if x.is_complex():
        re, sq = x.real, x.real.square() + x.imag.square()
    else:
        if not x.is_floating_point():
            x = x.to(torch.float64)
        re, sq = x, x.square()
    phase = w0 * re
    envelope = torch.exp(-(u0 * u0) * sq)
    return torch.complex(envelope * torch.cos(phase), envelope * torch.sin(phase))


class Gabor(nn.Module):
    def __init__(self, params: GaborParams = GaborParams()):
        super().__init__()
        w0 = torch.tensor(float(params.omega0), dtype=torch.float64)
        u0 = torch.tensor(float(params.upsilon0), dtype=torch.float64)
        if params.trainable:
            self.omega0, self.upsilon0 = nn.Parameter(w0), nn.Parameter(u0)
        else:
            self.register_buffer("omega0", w0)
            self.register_buffer("upsilon0", u0)

    def forward(self, x):
        dtype = x.real.dtype if x.is_complex() else x.dtype
        return gabor_activation(x, omega0=self.omega0.to(dtype), upsilon0=self.upsilon0.to(dtype))


_REAL_ACTIVATIONS = {
    "relu": nn.ReLU,
    "gelu": nn.GELU,
    "leaky_relu": lambda: nn.LeakyReLU(0.01),
}


class ComplexLinear(nn.Module):
    """Linear map with complex weight and bias.

    Real and imaginary parts are stored as separate real parameters so dtype
    casts, optimizers and checkpoints treat them like any other tensor.
    """

    def __init__(self, in_features, out_features, bias=True):
        super().__init__()
        self.weight_real = nn.Parameter(torch.empty(out_features, in_features))
        self.weight_imag = nn.Parameter(torch.empty(out_features, in_features))
        if bias:
            self.bias_real = nn.Parameter(torch.empty(out_features))
            self.bias_imag = nn.Parameter(torch.empty(out_features))
        else:
            self.register_parameter("bias_real", None)
            self.register_parameter("bias_imag", None)
        self.reset_parameters()

    def reset_parameters(self):
        bound = 1 / math.sqrt(self.weight_real.shape[1])
        for p in self.parameters():
            nn.init.uniform_(p, -bound, bound)

    @property
    def weight(self):
        return torch.complex(self.weight_real, self.weight_imag)

    @property
    def bias(self):
        if self.bias_real is None:
            return None
        return torch.complex(self.bias_real, self.bias_imag)

    def forward(self, x):
        w = self.weight
        if not x.is_complex():
            x = x.to(w.dtype)
        return F.linear(x, w, self.bias)


def _linear(in_f, out_f, complex_):
    return ComplexLinear(in_f, out_f) if complex_ else nn.Linear(in_f, out_f)


class InteractionBlock(nn.Module):
    """h_s <- act(W_s h_s + U_s h_f); h_f <- act(W_f h_f + U_f h_s), both from the old states."""

    def __init__(self, in_features, out_features, complex_, act):
        super().__init__()
        self.W_s = _linear(in_features, out_features, complex_)
        self.U_s = _linear(in_features, out_features, complex_)
        self.W_f = _linear(in_features, out_features, complex_)
        self.U_f = _linear(in_features, out_features, complex_)
        self.act = act

    def forward(self, h_s, h_f):
        return self.act(self.W_s(h_s) + self.U_s(h_f)), self.act(self.W_f(h_f) + self.U_f(h_s))


class SFIDecoder(nn.Module):
    def __init__(self, in_bands=31, out_bands=31, channels=31, gabor: GaborParams = GaborParams(), activation="gabor"):
        super().__init__()
        self.activation = activation
        if activation == "gabor":
            # one shared module so trainable omega0/upsilon0 are shared across blocks
            act = Gabor(gabor)
            is_complex = [False, True, True]
        elif activation in _REAL_ACTIVATIONS:
            act = _REAL_ACTIVATIONS[activation]()
            is_complex = [False, False, False]
        else:
            raise ValueError(f"unknown decoder activation {activation!r}")
        dims = [in_bands] + [channels] * N_BLOCKS
        self.blocks = nn.ModuleList(
            InteractionBlock(dims[k], dims[k + 1], is_complex[k], act) for k in range(N_BLOCKS)
        )
        self.out = _linear(channels, out_bands, activation == "gabor")
        if activation == "gabor":
            self._scale_init(gabor.upsilon0)
        # start from a zero residual, i.e. from the bicubic upsampling
        self.zero_output()

    def _scale_init(self, upsilon0):
        # keep pre-activations inside the Gaussian envelope exp(-(upsilon0 x)^2)
        for block in self.blocks:
            for lin in (block.W_s, block.U_s, block.W_f, block.U_f):
                fan_in = next(lin.parameters()).shape[-1]
                bound = 1 / (upsilon0 * math.sqrt(fan_in))
                for p in lin.parameters():
                    nn.init.uniform_(p, -bound, bound)

    def zero_output(self):
        with torch.no_grad():
            for p in self.out.parameters():
                p.zero_()

    def forward(self, eps_s, eps_f):
        if eps_s.shape != eps_f.shape:
            raise ValueError(f"decoder inputs differ in shape: {tuple(eps_s.shape)} vs {tuple(eps_f.shape)}")
        h_s, h_f = eps_s, eps_f
        for block in self.blocks:
            h_s, h_f = block(h_s, h_f)
        out = self.out(h_s + h_f)
        return out.real if out.is_complex() else out


def decode(eps_s, eps_f, state: SFIDecoder):
    return state(eps_s, eps_f)


def time_frequency_spread(params: GaborParams, n_points=4097, span=6.0, tail_tol=1e-8):
    """Standard deviations of |G(t)|^2 and |G^(w)|^2 about their centroids.

    The time grid spans +-span/upsilon0; the spectrum is evaluated by FFT of the
    zero-padded samples.  Returns (sigma_t, sigma_omega, product).
    """
    w0, u0 = float(params.omega0), float(params.upsilon0)
    if not (np.isfinite(w0) and np.isfinite(u0) and w0 > 0 and u0 > 0):
        raise ValueError("omega0 and upsilon0 must be positive and finite")
    half = span / u0
    t = np.linspace(-half, half, n_points)
    dt = t[1] - t[0]
    g = np.exp(1j * w0 * t) * np.exp(-((u0 * t) ** 2))

    energy_t = np.abs(g) ** 2
    edge = max(energy_t[0], energy_t[-1]) / energy_t.max()
    nyquist = np.pi / dt
    diag = {"dt": dt, "edge_energy": edge, "nyquist": nyquist, "n_points": n_points}
    if edge > tail_tol:
        raise NumericalError("time window truncates the envelope; increase span", diag)
    # spectrum must fit well inside the sampled band
    if w0 + span * 2 * u0 > nyquist:
        raise NumericalError("time grid too coarse for the carrier frequency; increase n_points", diag)

    sigma_t = _spread(t, energy_t)

    n_fft = 1 << int(np.ceil(np.log2(16 * n_points)))
    spec = np.fft.fftshift(np.fft.fft(g, n_fft)) * dt
    omega = np.fft.fftshift(np.fft.fftfreq(n_fft, d=dt)) * 2 * np.pi
    energy_w = np.abs(spec) ** 2
    edge_w = max(energy_w[0], energy_w[-1]) / energy_w.max()
    if edge_w > tail_tol:
        diag["edge_energy_freq"] = edge_w
        raise NumericalError("spectrum not contained in the sampled band", diag)
    sigma_w = _spread(omega, energy_w)
    return sigma_t, sigma_w, sigma_t * sigma_w


def _spread(x, density):
    mass = np.trapezoid(density, x)
    mean = np.trapezoid(x * density, x) / mass
    return float(np.sqrt(np.trapezoid((x - mean) ** 2 * density, x) / mass))
