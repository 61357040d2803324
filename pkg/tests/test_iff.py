import cmath
import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from feinfn.coords import make_coord, positional_encoding
from feinfn.errors import ConfigError
from feinfn.iff import SpaFreIFF, build_query_batch, high_pass, slice_batch, spa_fre_iff


def _maps(seed, c=3, h=4, w=5, scale=2, dtype=torch.float64):
    g = torch.Generator().manual_seed(seed)
    z_spe = torch.randn(1, c, h, w, generator=g, dtype=dtype)
    z_spa = torch.randn(1, c, h * scale, w * scale, generator=g, dtype=dtype)
    return z_spe, z_spa


def _iff(c=3, s=2, hidden=8, L=3, seed=0):
    torch.manual_seed(seed)
    return SpaFreIFF(c, s, hidden, L).double()


def test_high_pass_impulse():
    z = torch.zeros(1, 1, 5, 5, dtype=torch.float64)
    z[0, 0, 2, 2] = 1
    hp = high_pass(z)[0, 0]
    assert hp[2, 2].item() == pytest.approx(8 / 9)
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            if dy or dx:
                assert hp[2 + dy, 2 + dx].item() == pytest.approx(-1 / 9)
    assert hp[0, 0].item() == 0


def test_high_pass_constant_and_linearity():
    g = torch.Generator().manual_seed(0)
    a = torch.randn(2, 3, 6, 7, generator=g, dtype=torch.float64)
    b = torch.randn(2, 3, 6, 7, generator=g, dtype=torch.float64)
    assert torch.allclose(high_pass(torch.full_like(a, 0.7)), torch.zeros_like(a), atol=1e-15)
    assert torch.allclose(high_pass(2 * a - 3 * b), 2 * high_pass(a) - 3 * high_pass(b), atol=1e-12)


def test_high_pass_too_small():
    with pytest.raises(ValueError):
        high_pass(torch.zeros(1, 1, 2, 5))


def _batch(seed=0, c=3, h=4, w=5, scale=2):
    z_spe, z_spa = _maps(seed, c, h, w, scale)
    coords = make_coord(h * scale, w * scale, dtype=torch.float64).reshape(-1, 2)
    return build_query_batch(z_spe, high_pass(z_spe), z_spa, coords), (z_spe, z_spa)


def test_attention_weights_sum_to_one():
    batch, _ = _batch()
    net = _iff()
    _, w = net.spatial(batch, return_weights=True)
    assert torch.allclose(w.sum(-2), torch.ones_like(w.sum(-2)), atol=1e-12)
    _, parts = net.frequency(batch, return_parts=True)
    for key in ("w_amplitude", "w_phase"):
        s = parts[key].sum(-2)
        assert torch.allclose(s, torch.ones_like(s), atol=1e-12)


def test_spatial_output_in_convex_hull():
    batch, _ = _batch(1)
    net = _iff(seed=1)
    pe = positional_encoding(batch.delta, net.pe_levels)
    raw = net.phi_theta(torch.cat([batch.z_spe, batch.z_spa, batch.z_hp, pe], dim=-1))
    values = raw[..., : net.out_bands]
    eps = net.spatial(batch)
    assert (eps >= values.min(-2).values - 1e-12).all()
    assert (eps <= values.max(-2).values + 1e-12).all()


def test_frequency_parts_in_convex_hull():
    batch, _ = _batch(2)
    net = _iff(seed=2)
    eps_f, parts = net.frequency(batch, return_parts=True)
    assert torch.allclose(eps_f, parts["amplitude"] * torch.cos(parts["phase"]))


def _dft4(x):
    """Literal 2-D DFT of a 4x4 numpy array."""
    out = np.zeros((4, 4), dtype=complex)
    for u in range(4):
        for v in range(4):
            out[u, v] = sum(
                x[m, n] * cmath.exp(-2j * math.pi * (u * m + v * n) / 4) for m in range(4) for n in range(4)
            )
    return out


def _phase(z):
    # bins that are real in exact arithmetic carry round-off imaginary parts here
    z = np.where(np.abs(z.imag) < 1e-12 * (1 + np.abs(z)), z.real + 0j, z)
    p = np.angle(z)
    return np.where(p <= -math.pi, p + 2 * math.pi, p)


def _oracle_query(net, z_spe, z_spa, q):
    """Evaluate one query with explicit loops and direct convolutions."""
    c, h, w = z_spe.shape
    hh, ww = z_spa.shape[-2:]
    z_hp = high_pass(z_spe[None])[0]
    # neighbours
    pos = [(q[0].item() + 1) * h / 2 - 0.5, (q[1].item() + 1) * w / 2 - 0.5]
    idx = []
    for p, n in zip(pos, (h, w)):
        i0 = min(max(math.floor(p), 0), max(n - 2, 0))
        idx.append((i0, min(i0 + 1, n - 1)))
    neigh = [(r, cc) for r in idx[0] for cc in idx[1]]
    ys = lambda r: -1 + (2 * r + 1) / h
    xs = lambda cc: -1 + (2 * cc + 1) / w
    deltas = [torch.tensor([(q[0].item() - ys(r)) * h, (q[1].item() - xs(cc)) * w], dtype=torch.float64) for r, cc in neigh]
    qr = min(int(math.floor((q[0].item() + 1) * hh / 2)), hh - 1)
    qc = min(int(math.floor((q[1].item() + 1) * ww / 2)), ww - 1)

    s = net.out_bands
    outs = []
    for (r, cc), d in zip(neigh, deltas):
        inp = torch.cat([z_spe[:, r, cc], z_spa[:, qr, qc], z_hp[:, r, cc], positional_encoding(d, net.pe_levels)])
        outs.append(net.phi_theta(inp))
    outs = torch.stack(outs)
    eps_s = (torch.softmax(outs[:, s:], 0) * outs[:, :s]).sum(0)

    rows = [min(max(qr + k, 0), hh - 1) for k in range(-2, 2)]
    cols = [min(max(qc + k, 0), ww - 1) for k in range(-2, 2)]
    patch = z_spa[:, rows][:, :, cols].numpy()
    spec = np.stack([_dft4(patch[k]) for k in range(c)])
    amp = torch.from_numpy(np.abs(spec))
    ph = torch.from_numpy(_phase(spec))

    def branch(net_, spe_vals, spa_map):
        res = []
        for (r, cc), d in zip(neigh, deltas):
            m = torch.cat(
                [spe_vals[:, r, cc][:, None, None].expand(c, 4, 4), spa_map, d[:, None, None].expand(2, 4, 4)]
            )
            res.append(net_(m[None])[0].mean((-2, -1)))
        res = torch.stack(res)
        return (torch.softmax(res[:, s:], 0) * res[:, :s]).sum(0)

    spe_amp = z_spe.abs()
    spe_ph = torch.where(z_spe < 0, torch.full_like(z_spe, math.pi), torch.zeros_like(z_spe))
    a = branch(net.phi_alpha, spe_amp, amp)
    p = branch(net.phi_beta, spe_ph, ph)
    return eps_s, a * torch.cos(p)


@pytest.mark.parametrize("seed,h,w,scale", [(0, 4, 5, 2), (1, 3, 3, 3), (2, 5, 4, 4)])
def test_batched_matches_unbatched_oracle(seed, h, w, scale):
    z_spe, z_spa = _maps(seed, 3, h, w, scale)
    net = _iff(seed=seed)
    coords = make_coord(h * scale, w * scale, dtype=torch.float64).reshape(-1, 2)
    out = spa_fre_iff(build_query_batch(z_spe, high_pass(z_spe), z_spa, coords), net)
    for k in range(coords.shape[0]):
        es, ef = _oracle_query(net, z_spe[0], z_spa[0], coords[k])
        assert torch.allclose(out.eps_s[0, k], es, atol=1e-6)
        assert torch.allclose(out.eps_f[0, k], ef, atol=1e-6)


def test_slice_batch_consistent():
    batch, _ = _batch(3)
    net = _iff(seed=3)
    full = net(batch)
    part = net(slice_batch(batch, slice(5, 17)))
    assert torch.allclose(full.eps_s[:, 5:17], part.eps_s, atol=1e-14)
    assert torch.allclose(full.eps_f[:, 5:17], part.eps_f, atol=1e-14)


def test_batch_items_independent():
    z1, s1 = _maps(4)
    z2, s2 = _maps(5)
    coords = make_coord(8, 10, dtype=torch.float64).reshape(-1, 2)
    net = _iff(seed=4)
    both = net(build_query_batch(torch.cat([z1, z2]), high_pass(torch.cat([z1, z2])), torch.cat([s1, s2]), coords))
    one = net(build_query_batch(z2, high_pass(z2), s2, coords))
    assert torch.allclose(both.eps_f[1], one.eps_f[0], atol=1e-13)
    assert torch.allclose(both.eps_s[1], one.eps_s[0], atol=1e-13)


def test_channel_mismatch_raises():
    batch, _ = _batch()
    with pytest.raises(ConfigError):
        _iff(c=4)(batch)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_random_queries_weights_normalized(seed):
    z_spe, z_spa = _maps(seed % 1000)
    g = torch.Generator().manual_seed(seed)
    coords = torch.rand(100, 2, generator=g, dtype=torch.float64) * 2 - 1
    batch = build_query_batch(z_spe, high_pass(z_spe), z_spa, coords)
    assert torch.allclose(batch.area_weights.sum(-1), torch.ones(1, 100, dtype=torch.float64), atol=1e-6)


def test_gradcheck_wrt_latents():
    z_spe, z_spa = _maps(6, c=2, h=3, w=3, scale=2)
    net = _iff(c=2, s=2, hidden=4, L=2, seed=6)
    coords = make_coord(6, 6, dtype=torch.float64).reshape(-1, 2)[::5]
    z_spe.requires_grad_(True)
    z_spa.requires_grad_(True)

    def f(a, b):
        out = net(build_query_batch(a, high_pass(a), b, coords))
        return out.eps_s, out.eps_f

    assert torch.autograd.gradcheck(f, (z_spe, z_spa), eps=1e-6, atol=1e-5, rtol=1e-3)
