import numpy as np
import pytest
import torch

from feinfn.config import EncoderConfig
from feinfn.encoders import EDSREncoder, count_parameters, encode_spatial, encode_spectral
from feinfn.errors import ConfigError
from feinfn.image import HyperspectralImage


def _enc(in_ch=4, c=6, blocks=2, pm="zeros", seed=0):
    torch.manual_seed(seed)
    return EDSREncoder(in_ch, EncoderConfig(base_channels=c, num_residual_blocks=blocks, padding_mode=pm)).double()


def test_spectral_latent_shape_and_grid():
    img = HyperspectralImage(np.random.default_rng(0).random((5, 7, 4)))
    z = encode_spectral(img, _enc())
    assert z.features.shape == (5, 7, 6)
    assert z.grid.coords.shape == (5, 7, 2)


def test_spatial_latent_shape():
    up = HyperspectralImage(np.random.default_rng(1).random((8, 8, 4)))
    msi = HyperspectralImage(np.random.default_rng(2).random((8, 8, 3)))
    z = encode_spatial(up, msi, _enc(in_ch=7))
    assert z.features.shape == (8, 8, 6)


def test_spatial_shape_mismatch():
    up = HyperspectralImage(np.zeros((8, 8, 4)))
    msi = HyperspectralImage(np.zeros((8, 6, 3)))
    with pytest.raises(ValueError):
        encode_spatial(up, msi, _enc(in_ch=7))


def test_channel_mismatch():
    with pytest.raises(ConfigError):
        _enc(in_ch=4)(torch.zeros(1, 5, 4, 4, dtype=torch.float64))


def test_circular_padding_translation_equivariance():
    enc = _enc(pm="circular")
    x = torch.randn(1, 4, 9, 11, dtype=torch.float64)
    shifted = torch.roll(x, shifts=(2, -3), dims=(-2, -1))
    assert torch.allclose(enc(shifted), torch.roll(enc(x), shifts=(2, -3), dims=(-2, -1)), atol=1e-12)


def test_zeroed_blocks_reduce_to_head():
    enc = _enc(blocks=3)
    with torch.no_grad():
        for p in enc.tail.parameters():
            p.zero_()
    x = torch.randn(2, 4, 6, 6, dtype=torch.float64)
    assert torch.allclose(enc(x), enc.head(x), atol=1e-14)


def test_no_blocks():
    enc = _enc(blocks=0)
    x = torch.randn(1, 4, 5, 5, dtype=torch.float64)
    assert enc(x).shape == (1, 6, 5, 5)


def test_parameter_count():
    c, k, i, n = 6, 3, 4, 2
    conv = lambda a, b: a * b * k * k + b
    expected = conv(i, c) + 2 * n * conv(c, c) + conv(c, c)
    assert count_parameters(_enc(i, c, n)) == expected


def test_gradcheck():
    enc = _enc(in_ch=2, c=3, blocks=1)
    x = torch.randn(1, 2, 4, 4, dtype=torch.float64, requires_grad=True)
    assert torch.autograd.gradcheck(enc, (x,))


def test_even_kernel_rejected():
    with pytest.raises(ValueError):
        EncoderConfig(kernel_size=4)
