"""Wald-protocol simulation, PAN synthesis, and BDSD / EXP reference fusion."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator

from .exceptions import DimensionError, ParameterError
from .ndtensor.ops import filter_matrix, gaussian_taps, resize_matrix
from .rasters import Raster, Scene
from .validation import check_pair, check_raster, check_triplets

RIDGE = 1e-6
DEFAULT_MS_GAIN = 0.3
DEFAULT_PAN_GAIN = 0.15


@dataclass(frozen=True)
class SensorModel:
    """Degradation model: MTF Nyquist gains, PAN spectral weights, ratio."""

    mtf_gains: tuple
    pan_weights: tuple
    ratio: int = 4
    pan_gain: float = DEFAULT_PAN_GAIN

    def __post_init__(self):
        gains = tuple(float(g) for g in self.mtf_gains)
        weights = tuple(float(w) for w in self.pan_weights)
        object.__setattr__(self, "mtf_gains", gains)
        object.__setattr__(self, "pan_weights", weights)
        if len(gains) != len(weights):
            raise ParameterError("mtf_gains and pan_weights must have one entry per band")
        for g in gains + (self.pan_gain,):
            if not 0.0 < g < 1.0:
                raise ParameterError(f"MTF gain must lie in (0, 1), got {g}")
        if any(w < 0 for w in weights) or abs(sum(weights) - 1.0) > 1e-6:
            raise ParameterError("pan_weights must be nonnegative and sum to 1")
        if self.ratio < 1:
            raise ParameterError("ratio must be a positive integer")

    @classmethod
    def default(cls, bands: int, gain: float = DEFAULT_MS_GAIN) -> "SensorModel":
        return cls(mtf_gains=(gain,) * bands, pan_weights=(1.0 / bands,) * bands)

    @property
    def bands(self) -> int:
        return len(self.mtf_gains)


@dataclass(frozen=True)
class SceneTriplet:
    """Co-registered LRMS / PAN (/ pseudo-HRMS) group of one scene.

    ``reference`` carries the ground-truth HRMS when it exists (synthetic
    scenes); it is only ever read by reduced-resolution scoring.
    """

    lrms: Raster
    pan: Raster
    pseudo_hrms: Raster | None = None
    scene_id: int = 0
    reference: Raster | None = field(default=None, repr=False)

    def __post_init__(self):
        check_pair(self.lrms, self.pan)
        if self.pseudo_hrms is not None:
            p = self.pseudo_hrms
            if p.bands != self.lrms.bands or (p.height, p.width) != (self.pan.height, self.pan.width):
                raise DimensionError("pseudo_hrms must match pan spatially and lrms spectrally")


# ---------------------------------------------------------------------------
# MTF degradation


def mtf_sigma(gain: float, ratio: int) -> float:
    """Std of the Gaussian whose response at the LR Nyquist frequency is ``gain``."""
    if not 0.0 < gain < 1.0:
        raise ParameterError(f"MTF gain must lie in (0, 1), got {gain}")
    return ratio / math.pi * math.sqrt(-2.0 * math.log(gain))


def mtf_taps(gain: float, ratio: int) -> tuple:
    sigma = mtf_sigma(gain, ratio)
    return gaussian_taps(sigma, 2 * math.ceil(3 * sigma) + 1)


def lowpass(plane: np.ndarray, gain: float, ratio: int) -> np.ndarray:
    taps = mtf_taps(gain, ratio)
    h, w = plane.shape
    return filter_matrix(h, taps) @ plane @ filter_matrix(w, taps).T


def degrade_plane(plane: np.ndarray, gain: float, ratio: int) -> np.ndarray:
    """MTF blur followed by decimation at offset 0."""
    return lowpass(plane, gain, ratio)[::ratio, ::ratio]


def _check_divisible(r: Raster, ratio: int) -> None:
    if r.height % ratio or r.width % ratio:
        raise DimensionError(f"{r.height}x{r.width} is not a multiple of ratio {ratio}")


def mtf_degrade(hr: Raster, model: SensorModel) -> Raster:
    check_raster(hr, "hr", bands=model.bands)
    _check_divisible(hr, model.ratio)
    data = hr.data.astype(np.float64)
    out = [degrade_plane(data[b], g, model.ratio) for b, g in enumerate(model.mtf_gains)]
    return Raster(np.stack(out))


def degrade_pan(pan: Raster, model: SensorModel) -> Raster:
    check_raster(pan, "pan", bands=1)
    _check_divisible(pan, model.ratio)
    return Raster(degrade_plane(pan.data[0].astype(np.float64), model.pan_gain, model.ratio)[None])


def synth_pan(hr: Raster, model: SensorModel) -> Raster:
    check_raster(hr, "hr")
    if hr.bands != len(model.pan_weights):
        raise ParameterError(f"{hr.bands} bands but {len(model.pan_weights)} PAN weights")
    w = np.asarray(model.pan_weights)
    return Raster(np.tensordot(w, hr.data.astype(np.float64), axes=1)[None])


# ---------------------------------------------------------------------------
# EXP and BDSD


def upsample_array(arr: np.ndarray, ratio: int = 4) -> np.ndarray:
    """Unclamped bicubic upsampling of ``arr[..., h, w]`` in float64."""
    h, w = arr.shape[-2:]
    return resize_matrix(h, h * ratio) @ arr.astype(np.float64) @ resize_matrix(w, w * ratio).T


def exp_upsample(lrms: Raster, ratio: int = 4) -> Raster:
    check_raster(lrms, "lrms")
    return Raster(upsample_array(lrms.data, ratio))


def bdsd_coefficients(lrms: Raster, pan: Raster, model: SensorModel) -> np.ndarray:
    """Per-band least-squares injection coefficients, shape ``(B, B + 1)``.

    Row ``b`` holds ``[gamma_b, c_b1 .. c_bB]`` so that the fused band is
    ``up_b + gamma_b * pan + sum_k c_bk * up_k``.
    """
    check_pair(lrms, pan, model.ratio)
    r = model.ratio
    up = upsample_array(lrms.data, r)
    pan_l = degrade_plane(pan.data[0].astype(np.float64), model.pan_gain, r)
    up_l = np.stack([degrade_plane(up[b], g, r) for b, g in enumerate(model.mtf_gains)])
    design = np.column_stack([pan_l.ravel()] + [u.ravel() for u in up_l])
    target = (lrms.data.astype(np.float64) - up_l).reshape(lrms.bands, -1).T
    gram = design.T @ design + RIDGE * np.eye(design.shape[1])
    rhs = design.T @ target
    try:
        theta = np.linalg.solve(gram, rhs)
    except np.linalg.LinAlgError:
        theta = np.linalg.lstsq(gram, rhs, rcond=None)[0]
    return theta.T


def bdsd_fuse(lrms: Raster, pan: Raster, model: SensorModel) -> Raster:
    """Band-dependent spatial detail fusion with one global estimate per band."""
    theta = bdsd_coefficients(lrms, pan, model)
    up = upsample_array(lrms.data, model.ratio)
    regressors = np.concatenate([pan.data.astype(np.float64), up])
    return Raster(up + np.tensordot(theta, regressors, axes=1))


def make_triplet(scene: Scene, model: SensorModel, with_pseudo: bool = True) -> SceneTriplet:
    hr = scene.hr_ms
    lrms = mtf_degrade(hr, model)
    pan = synth_pan(hr, model)
    pseudo = bdsd_fuse(lrms, pan, model) if with_pseudo else None
    return SceneTriplet(lrms=lrms, pan=pan, pseudo_hrms=pseudo, scene_id=scene.id, reference=hr)


def reduce_triplet(t: SceneTriplet, model: SensorModel) -> SceneTriplet:
    """Apply the degradation once more so the original LRMS becomes the reference."""
    return SceneTriplet(lrms=mtf_degrade(t.lrms, model), pan=degrade_pan(t.pan, model),
                        scene_id=t.scene_id, reference=t.lrms)


# ---------------------------------------------------------------------------
# estimator wrappers


class WaldDegrader(BaseEstimator):
    """Turn ground scenes into (LRMS, PAN, pseudo-HRMS) triplets."""

    def __init__(self, sensor: SensorModel | None = None, with_pseudo: bool = True):
        self.sensor = sensor
        self.with_pseudo = with_pseudo

    def fit(self, X=None, y=None):
        return self

    def transform(self, scenes):
        out = []
        for s in scenes:
            model = self.sensor or SensorModel.default(s.hr_ms.bands)
            out.append(make_triplet(s, model, self.with_pseudo))
        return out

    def fit_transform(self, scenes, y=None):
        return self.fit(scenes).transform(scenes)


class BDSDPansharpener(BaseEstimator):
    """Classical BDSD; stateless, ``fit`` only validates."""

    def __init__(self, sensor: SensorModel | None = None):
        self.sensor = sensor

    def fit(self, X=None, y=None):
        if X is not None:
            check_triplets(X)
        return self

    def predict(self, X) -> list[Raster]:
        out = []
        for t in check_triplets(X):
            model = self.sensor or SensorModel.default(t.lrms.bands)
            out.append(bdsd_fuse(t.lrms, t.pan, model))
        return out


class ExpPansharpener(BaseEstimator):
    """Plain bicubic upsampling baseline."""

    def __init__(self, ratio: int = 4):
        self.ratio = ratio

    def fit(self, X=None, y=None):
        return self

    def predict(self, X) -> list[Raster]:
        return [exp_upsample(t.lrms, self.ratio) for t in check_triplets(X)]
