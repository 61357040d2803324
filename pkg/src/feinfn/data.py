"""Dataset ingestion, Wald-protocol simulation and patch sampling."""

import json
import re
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import DataError
from .image import HyperspectralImage

CAVE_WAVELENGTHS = [400.0 + 10 * i for i in range(31)]
RAW_MAGIC = b"HSI1"


@dataclass(frozen=True)
class SpectralResponse:
    matrix: np.ndarray  # (msi_bands, hsi_bands), row-stochastic

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 1:
            raise ValueError("spectral response must be a 2-D matrix")
        if (m < 0).any():
            raise ValueError("spectral response must be nonnegative")
        if not np.allclose(m.sum(axis=1), 1.0, atol=1e-6):
            raise ValueError("spectral response rows must sum to 1")
        object.__setattr__(self, "matrix", m)

    @property
    def msi_bands(self):
        return self.matrix.shape[0]

    @property
    def hsi_bands(self):
        return self.matrix.shape[1]

    @classmethod
    def grouped(cls, hsi_bands=31, msi_bands=3):
        """Contiguous equal-weight groups (blue/green/red thirds for 31 -> 3)."""
        m = np.zeros((msi_bands, hsi_bands))
        for row, idx in enumerate(np.array_split(np.arange(hsi_bands), msi_bands)):
            m[row, idx] = 1.0 / len(idx)
        return cls(m)

    @classmethod
    def from_csv(cls, path):
        try:
            m = np.loadtxt(path, delimiter=",", ndmin=2)
        except (OSError, ValueError) as e:
            raise DataError(f"cannot read spectral response {path}: {e}") from e
        m = m / m.sum(axis=1, keepdims=True)
        return cls(m)


def gaussian_kernel(sigma):
    """1-D Gaussian with int(4*sigma + 1) taps, rounded up to odd."""
    taps = int(4 * sigma + 1)
    if taps % 2 == 0:
        taps += 1
    x = np.arange(taps) - taps // 2
    k = np.exp(-(x**2) / (2 * sigma**2))
    return k / k.sum()


def blur(cube, sigma, mode="reflect"):
    """Separable per-band Gaussian blur of an (H, W, B) array.

    mode: 'reflect' (edge-mirrored, edge sample repeated) or 'wrap'.
    """
    k = gaussian_kernel(sigma)
    out = ndimage.convolve1d(cube, k, axis=0, mode=mode)
    return ndimage.convolve1d(out, k, axis=1, mode=mode)


def decimation_offset(scale):
    return (scale - 1) // 2


def wald_simulate(gt: HyperspectralImage, scale: int, srf: SpectralResponse = None, blur_sigma=None, mode="reflect"):
    """Returns (lr_hsi, hr_msi) for a ground-truth cube."""
    scale = int(scale)
    if scale < 1:
        raise ValueError("scale must be a positive integer")
    if gt.height % scale or gt.width % scale:
        raise ValueError(f"{gt.name or 'image'}: {gt.height}x{gt.width} not divisible by scale {scale}")
    srf = srf or SpectralResponse.grouped(gt.bands, 3)
    if srf.hsi_bands != gt.bands:
        raise ValueError(f"spectral response expects {srf.hsi_bands} bands, image has {gt.bands}")
    sigma = scale / 2 if blur_sigma is None else blur_sigma
    cube = gt.data.astype(np.float64)
    off = decimation_offset(scale)
    lr = blur(cube, sigma, mode)[off::scale, off::scale]
    msi = cube @ srf.matrix.T
    lr_img = HyperspectralImage(
        np.clip(lr, 0, 1).astype(gt.data.dtype), gt.band_wavelengths, gt.name, {"role": "lr_hsi", "scale": scale}
    )
    msi_img = HyperspectralImage(np.clip(msi, 0, 1).astype(gt.data.dtype), None, gt.name, {"role": "hr_msi"})
    return lr_img, msi_img


# --- loading ---------------------------------------------------------------


def _normalize(cube, name):
    cube = cube.astype(np.float64)
    peak = float(cube.max())
    if peak <= 0:
        raise DataError(f"{name}: image is all zeros")
    return (cube / peak).astype(np.float32), peak


def _read_gray(path):
    from PIL import Image

    try:
        with Image.open(path) as im:
            arr = np.array(im)
    except Exception as e:
        raise DataError(f"unreadable image file {path}: {e}") from e
    if arr.ndim == 3:
        # some CAVE pngs are stored as RGB(A) with identical channels
        arr = arr[..., 0]
    return arr


_BAND_RE = re.compile(r"_(\d+)\.(png|tif|tiff|bmp)$", re.IGNORECASE)


def load_band_directory(directory, name=None):
    """A directory of single-band images named *_01.png ... *_NN.png."""
    directory = Path(directory)
    files = []
    for p in directory.rglob("*"):
        m = _BAND_RE.search(p.name)
        if m and p.is_file():
            files.append((int(m.group(1)), p))
    if not files:
        raise DataError(f"no band images (*_NN.png) in {directory}")
    files.sort()
    numbers = [n for n, _ in files]
    expected = list(range(numbers[0], numbers[0] + len(numbers)))
    if numbers != expected:
        missing = sorted(set(range(numbers[0], numbers[-1] + 1)) - set(numbers))
        raise DataError(f"{directory}: missing or duplicate band files (missing indices {missing})")
    bands = []
    for _, p in files:
        arr = _read_gray(p)
        if bands and arr.shape != bands[0].shape:
            raise DataError(f"{p}: shape {arr.shape} differs from first band {bands[0].shape}")
        bands.append(arr)
    cube, peak = _normalize(np.stack(bands, axis=-1), directory)
    wl = CAVE_WAVELENGTHS if len(bands) == 31 else None
    return HyperspectralImage(cube, wl, name or directory.name, {"source": str(directory), "peak": peak})


def load_tiff(path):
    import tifffile

    try:
        arr = tifffile.imread(path)
    except Exception as e:
        raise DataError(f"unreadable TIFF {path}: {e}") from e
    if arr.ndim != 3:
        raise DataError(f"{path}: expected a 3-D multiband TIFF, got shape {arr.shape}")
    # band-first storage is the common multipage layout
    if arr.shape[0] < arr.shape[-1]:
        arr = np.moveaxis(arr, 0, -1)
    cube, peak = _normalize(arr, path)
    return HyperspectralImage(cube, None, Path(path).stem, {"source": str(path), "peak": peak})


def write_raw(path, cube):
    """Little-endian float32 container: 16-byte header (magic, height, width, bands)."""
    cube = np.asarray(cube, dtype="<f4")
    h, w, b = cube.shape
    with open(path, "wb") as fh:
        fh.write(RAW_MAGIC + struct.pack("<III", h, w, b))
        fh.write(np.ascontiguousarray(cube).tobytes())


def read_raw(path):
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as e:
        raise DataError(f"unreadable file {path}: {e}") from e
    if len(blob) < 16 or blob[:4] != RAW_MAGIC:
        raise DataError(f"{path}: not a raw HSI container (bad magic)")
    h, w, b = struct.unpack("<III", blob[4:16])
    expected = 16 + 4 * h * w * b
    if len(blob) != expected:
        raise DataError(f"{path}: size {len(blob)} does not match header ({expected} bytes)")
    return np.frombuffer(blob, dtype="<f4", offset=16).reshape(h, w, b).copy()


def load_raw(path):
    cube, peak = _normalize(read_raw(path), path)
    return HyperspectralImage(cube, None, Path(path).stem, {"source": str(path), "peak": peak})


def synthetic_scene(rng, size=64, bands=31, n_endmembers=4, name="synthetic"):
    """Linear mixture of smooth endmember spectra with piecewise-smooth abundances."""
    h = w = size
    wl = np.linspace(0, 1, bands)
    spectra = []
    for _ in range(n_endmembers):
        centres = rng.uniform(-0.2, 1.2, size=3)
        widths = rng.uniform(0.15, 0.6, size=3)
        amps = rng.uniform(0.2, 1.0, size=3)
        s = sum(a * np.exp(-((wl - c) ** 2) / (2 * wd**2)) for a, c, wd in zip(amps, centres, widths))
        spectra.append(s / s.max())
    spectra = np.stack(spectra)  # (E, B)

    yy, xx = np.mgrid[0:h, 0:w] / size
    logits = []
    for _ in range(n_endmembers):
        field = ndimage.gaussian_filter(rng.standard_normal((h, w)), sigma=size / 10, mode="wrap")
        field /= field.std() + 1e-12
        # sharp structures: a few rectangles and discs
        for _ in range(rng.integers(1, 4)):
            if rng.random() < 0.5:
                y0, x0 = rng.uniform(0, 0.8, size=2)
                dy, dx = rng.uniform(0.1, 0.4, size=2)
                mask = (yy >= y0) & (yy < y0 + dy) & (xx >= x0) & (xx < x0 + dx)
            else:
                cy, cx, r = rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9), rng.uniform(0.05, 0.25)
                mask = (yy - cy) ** 2 + (xx - cx) ** 2 < r**2
            field = field + rng.uniform(1.0, 3.0) * mask
        # fine stripes give high-frequency content the LR input cannot carry
        freq = rng.uniform(8, 20)
        angle = rng.uniform(0, np.pi)
        field = field + 0.5 * np.sin(2 * np.pi * freq * (np.cos(angle) * xx + np.sin(angle) * yy))
        logits.append(field)
    logits = np.stack(logits, axis=-1)
    abund = np.exp(logits - logits.max(axis=-1, keepdims=True))
    abund /= abund.sum(axis=-1, keepdims=True)
    brightness = 0.3 + 0.7 * ndimage.gaussian_filter(rng.random((h, w)), sigma=size / 8, mode="wrap")
    brightness = (brightness - brightness.min()) / (np.ptp(brightness) + 1e-12) * 0.7 + 0.3
    cube = (abund @ spectra) * brightness[..., None]
    cube = np.clip(cube, 0, 1).astype(np.float32)
    return HyperspectralImage(cube, None, name, {"synthetic": True})


def synthetic_dataset(seed, count, size=64, bands=31):
    rng = np.random.default_rng(seed)
    return [synthetic_scene(rng, size, bands, name=f"synthetic_{i:03d}") for i in range(count)]


def harvard_crop(img: HyperspectralImage, scale, crop=1000):
    """Top-left crop x crop region, then centre-crop to multiples of scale."""
    data = img.data[:crop, :crop]
    h, w = data.shape[:2]
    nh, nw = h - h % scale, w - w % scale
    top, left = (h - nh) // 2, (w - nw) // 2
    return img.replace(data[top : top + nh, left : left + nw])


def make_split(names, split_spec=None):
    """Partition scene names.

    split_spec: None (everything is 'train'), a dict/JSON file with explicit
    name lists {"train": [...], "test": [...]}, or a seeded random split
    {"seed": 0, "n_train": 20, "n_test": 11}.
    """
    names = sorted(names)
    if split_spec is None:
        return {"train": names, "test": []}
    if isinstance(split_spec, (str, Path)):
        try:
            split_spec = json.loads(Path(split_spec).read_text())
        except (OSError, ValueError) as e:
            raise DataError(f"cannot read split spec {split_spec}: {e}") from e
    if "train" in split_spec or "test" in split_spec:
        split = {k: sorted(v) for k, v in split_spec.items()}
        known = set(names)
        for k, v in split.items():
            unknown = [n for n in v if n not in known]
            if unknown:
                raise DataError(f"split '{k}' names unknown scenes: {unknown}")
    else:
        rng = np.random.default_rng(split_spec.get("seed", 0))
        n_train = int(split_spec.get("n_train", len(names)))
        n_test = int(split_spec.get("n_test", len(names) - n_train))
        if n_train + n_test > len(names):
            raise DataError(f"split asks for {n_train}+{n_test} scenes but only {len(names)} exist")
        order = [names[i] for i in rng.permutation(len(names))]
        split = {"train": sorted(order[:n_train]), "test": sorted(order[n_train : n_train + n_test])}
    train, test = set(split.get("train", [])), set(split.get("test", []))
    if train & test:
        raise DataError(f"train and test splits overlap: {sorted(train & test)}")
    return split


def _scene_entries(root, layout):
    root = Path(root)
    if not root.exists():
        raise DataError(f"data root {root} does not exist")
    if layout == "band_pngs":
        dirs = sorted({p.parent for p in root.rglob("*") if _BAND_RE.search(p.name)})
        # CAVE nests scene/scene/*.png; name scenes by their top-level directory
        entries = {}
        for d in dirs:
            rel = d.relative_to(root)
            name = rel.parts[0] if rel.parts else root.name
            entries.setdefault(name, d if len(rel.parts) <= 1 else root / rel.parts[0])
        return entries
    if layout == "multiband_tiff":
        return {p.stem: p for p in sorted(root.glob("*.tif*"))}
    if layout == "raw":
        return {p.stem: p for p in sorted(root.glob("*.hsi"))}
    raise DataError(f"unknown layout {layout!r}")


_LOADERS = {"band_pngs": load_band_directory, "multiband_tiff": load_tiff, "raw": load_raw}


def load_dataset(root_path=None, layout="synthetic", split_spec=None, split=None, *, seed=0, count=3, size=32, bands=31):
    """Load scenes, sorted by name; optionally restrict to one split.

    For layout='synthetic' the root is ignored and ``seed``, ``count``,
    ``size`` and ``bands`` drive the generator.
    """
    if layout == "synthetic":
        images = synthetic_dataset(seed, count, size, bands)
    else:
        entries = _scene_entries(root_path, layout)
        if not entries:
            raise DataError(f"no scenes found under {root_path} for layout {layout}")
        images = []
        for name in sorted(entries):
            img = _LOADERS[layout](entries[name]) if layout != "band_pngs" else load_band_directory(entries[name], name)
            img.name = name
            images.append(img)
        shapes = {img.bands for img in images}
        if len(shapes) > 1:
            raise DataError(f"scenes under {root_path} have different band counts: {sorted(shapes)}")
    if split is None:
        return images
    parts = make_split([im.name for im in images], split_spec)
    wanted = set(parts.get(split, []))
    return [im for im in images if im.name in wanted]


@dataclass(frozen=True)
class Triplet:
    lr_hsi: np.ndarray
    hr_msi: np.ndarray
    gt: np.ndarray
    source: str
    top: int
    left: int


def crop_positions(images, patch_hr, scale, count, seed):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        k = int(rng.integers(len(images)))
        img = images[k]
        top = int(rng.integers(0, (img.height - patch_hr) // scale + 1)) * scale
        left = int(rng.integers(0, (img.width - patch_hr) // scale + 1)) * scale
        out.append((k, top, left))
    return out


def sample_patches(images, patch_hr, scale, count, seed, srf=None, blur_sigma=None):
    """Random GT crops with their simulated LR-HSI / HR-MSI counterparts."""
    if count == 0:
        return []
    if patch_hr % scale:
        raise ValueError(f"patch size {patch_hr} not divisible by scale {scale}")
    for img in images:
        if patch_hr > img.height or patch_hr > img.width:
            raise ValueError(f"patch {patch_hr} larger than image {img.name} ({img.height}x{img.width})")
    triplets = []
    for k, top, left in crop_positions(images, patch_hr, scale, count, seed):
        img = images[k]
        gt = img.replace(img.data[top : top + patch_hr, left : left + patch_hr])
        lr, msi = wald_simulate(gt, scale, srf, blur_sigma)
        triplets.append(Triplet(lr.data, msi.data, gt.data, img.name, top, left))
    return triplets


def fingerprint(img: HyperspectralImage):
    import hashlib

    return hashlib.sha256(np.ascontiguousarray(img.data).tobytes()).hexdigest()[:16]
