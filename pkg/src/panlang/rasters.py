"""Raster images, the PANR container, synthetic scenes, and pixmap previews."""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .exceptions import FormatError, ParameterError, TruncationError

MAGIC = b"PANR"
HEADER = struct.Struct("<4sIIII")
DTYPE_F32 = 0
MAX_VALUES = 1 << 31
RATIO = 4
SPECTRAL_JITTER = 0.08


@dataclass(frozen=True, eq=False)
class Raster:
    """Band-major image ``data[bands, height, width]`` with values in [0, 1].

    Values are clamped and stored as a read-only float32 array.
    """

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim == 2:
            arr = arr[None]
        if arr.ndim != 3 or min(arr.shape) < 1:
            raise ParameterError(f"raster data must be (bands, height, width), got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ParameterError("raster data contains non-finite values")
        arr = np.clip(arr.astype(np.float32), 0.0, 1.0) + np.float32(0.0)
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def bands(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple:
        return self.data.shape

    def __repr__(self) -> str:
        return f"Raster({self.width}x{self.height}x{self.bands})"


@dataclass(frozen=True)
class Scene:
    id: int
    hr_ms: Raster
    seed: int
    size: int


# ---------------------------------------------------------------------------
# synthetic scenes


def _smooth_field(rng, size: int, n_waves: int = 6) -> np.ndarray:
    y, x = np.mgrid[0:size, 0:size] / size
    f = np.zeros((size, size))
    for _ in range(n_waves):
        fx, fy = rng.uniform(-3.0, 3.0, size=2)
        phase = rng.uniform(0, 2 * np.pi)
        f += rng.uniform(0.3, 1.0) * np.cos(2 * np.pi * (fx * x + fy * y) + phase)
    f -= f.min()
    return f / max(f.max(), 1e-12)


def _shape_mask(rng, size: int) -> np.ndarray:
    y, x = np.mgrid[0:size, 0:size].astype(np.float64)
    kind = rng.integers(3)
    if kind == 0:
        h, w = rng.integers(3, max(4, size // 3), size=2)
        top, left = rng.integers(0, size - 2, size=2)
        return (y >= top) & (y < top + h) & (x >= left) & (x < left + w)
    if kind == 1:
        cy, cx = rng.uniform(0, size, size=2)
        ry, rx = rng.uniform(2, size / 5, size=2)
        return ((y - cy) / ry) ** 2 + ((x - cx) / rx) ** 2 <= 1.0
    theta = rng.uniform(0, np.pi)
    offset = rng.uniform(-size / 2, size / 2)
    width = rng.uniform(0.6, 2.0)
    dist = (x - size / 2) * np.sin(theta) - (y - size / 2) * np.cos(theta) - offset
    return np.abs(dist) <= width / 2


def synth_scene(seed: int, size: int = 64, bands: int = 4, scene_id: int | None = None) -> Scene:
    """Deterministic synthetic multispectral ground scene.

    A shared low-frequency latent is mixed into the bands through a random
    spectral matrix; sharp rectangles, ellipses and lines are painted on top
    with a scene spectrum scaled by a per-object brightness plus a small
    per-band deviation, followed by mild per-band noise.
    """
    if size < RATIO or size % RATIO:
        raise ParameterError(f"scene size must be a positive multiple of {RATIO}, got {size}")
    if bands not in (4, 8):
        raise ParameterError(f"bands must be 4 or 8, got {bands}")
    rng = np.random.default_rng(seed)

    latent = np.stack([_smooth_field(rng, size) for _ in range(3)])
    mixing = rng.uniform(0.1, 1.0, size=(bands, 3))
    mixing /= mixing.sum(axis=1, keepdims=True)
    level = rng.uniform(0.15, 0.45, size=(bands, 1, 1))
    img = level + 0.35 * np.tensordot(mixing, latent, axes=1)

    base_spectrum = rng.uniform(0.1, 0.9, size=bands)
    for _ in range(int(rng.integers(10, 18))):
        mask = _shape_mask(rng, size)
        # objects mostly differ in brightness, with a small spectral deviation
        albedo = base_spectrum * rng.uniform(0.3, 1.1) + rng.normal(0, SPECTRAL_JITTER, size=bands)
        albedo = np.clip(albedo, 0.02, 0.98)
        img = np.where(mask[None], albedo[:, None, None] * rng.uniform(0.7, 1.0) + 0.1 * latent[0] * mask, img)

    img += rng.normal(0, 0.01, size=img.shape)
    return Scene(id=seed if scene_id is None else scene_id, hr_ms=Raster(np.clip(img, 0, 1)), seed=seed, size=size)


# ---------------------------------------------------------------------------
# PANR container


def raster_to_bytes(r: Raster) -> bytes:
    return HEADER.pack(MAGIC, r.width, r.height, r.bands, DTYPE_F32) + r.data.astype("<f4").tobytes()


def raster_from_bytes(buf: bytes) -> Raster:
    if len(buf) < HEADER.size:
        raise TruncationError(f"header needs {HEADER.size} bytes, file has {len(buf)}", len(buf))
    magic, width, height, bands, dtype = HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}", 0)
    if dtype != DTYPE_F32:
        raise FormatError(f"unsupported dtype tag {dtype}", 16)
    if width == 0 or height == 0 or bands == 0:
        raise FormatError("zero-sized dimension", 4)
    count = width * height * bands
    if count >= MAX_VALUES:
        raise FormatError(f"dimension overflow: {width}x{height}x{bands}", 4)
    end = HEADER.size + 4 * count
    if len(buf) < end:
        raise TruncationError(f"payload declares {4 * count} bytes, found {len(buf) - HEADER.size}", len(buf))
    if len(buf) > end:
        raise FormatError("trailing bytes after payload", end)
    data = np.frombuffer(buf, dtype="<f4", count=count, offset=HEADER.size).astype(np.float32)
    if not np.all(np.isfinite(data)):
        bad = int(np.flatnonzero(~np.isfinite(data))[0])
        raise FormatError("non-finite sample", HEADER.size + 4 * bad)
    return Raster(data.reshape(bands, height, width))


def write_raster(r: Raster, path) -> None:
    Path(path).write_bytes(raster_to_bytes(r))


def read_raster(path) -> Raster:
    return raster_from_bytes(Path(path).read_bytes())


# ---------------------------------------------------------------------------
# previews


def _stretch(band: np.ndarray) -> np.ndarray:
    lo, hi = np.percentile(band, [1, 99])
    if not hi > lo:
        return np.full(band.shape, 128, dtype=np.uint8)
    v = np.clip((band.astype(np.float64) - lo) / (hi - lo), 0.0, 1.0)
    return np.round(v * 255.0).astype(np.uint8)


def export_preview(r: Raster, band_map="gray") -> bytes:
    """8-bit binary PGM (``"gray"``) or PPM (three band indices) bytes."""
    if isinstance(band_map, str):
        if band_map != "gray":
            raise ParameterError(f"band_map must be 'gray' or three band indices, got {band_map!r}")
        plane = r.data[0] if r.bands == 1 else r.data.mean(axis=0)
        header = f"P5\n{r.width} {r.height}\n255\n".encode("ascii")
        return header + _stretch(plane).tobytes()
    idx = tuple(int(i) for i in band_map)
    if len(idx) != 3:
        raise ParameterError("band_map needs exactly three band indices")
    for i in idx:
        if not 0 <= i < r.bands:
            raise ParameterError(f"band index {i} out of range for {r.bands} bands")
    rgb = np.stack([_stretch(r.data[i]) for i in idx], axis=-1)
    header = f"P6\n{r.width} {r.height}\n255\n".encode("ascii")
    return header + rgb.tobytes()


def default_band_map(r: Raster):
    return "gray" if r.bands < 3 else (2, 1, 0)
