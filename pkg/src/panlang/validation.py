"""Input validation helpers shared by the estimators."""
from __future__ import annotations

from collections.abc import Sequence

from .exceptions import DimensionError, ParameterError
from .rasters import Raster


def check_raster(r, name: str = "raster", bands: int | None = None) -> Raster:
    if not isinstance(r, Raster):
        raise ParameterError(f"{name} must be a Raster, got {type(r).__name__}")
    if bands is not None and r.bands != bands:
        raise DimensionError(f"{name} has {r.bands} bands, expected {bands}")
    return r


def check_pair(lrms, pan, ratio: int = 4) -> tuple[Raster, Raster]:
    """Validate a (LRMS, PAN) input pair: PAN single-band and ``ratio`` times larger."""
    check_raster(lrms, "lrms")
    check_raster(pan, "pan")
    if pan.bands != 1:
        raise DimensionError(f"pan must have one band, got {pan.bands}")
    if pan.height != ratio * lrms.height or pan.width != ratio * lrms.width:
        raise DimensionError(
            f"pan {pan.height}x{pan.width} is not {ratio}x lrms {lrms.height}x{lrms.width}")
    return lrms, pan


def check_same_shape(a: Raster, b: Raster) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"raster shapes differ: {a.shape} vs {b.shape}")


def check_triplets(X, need_pseudo: bool = False) -> list:
    from .protocol import SceneTriplet

    if isinstance(X, SceneTriplet):
        X = [X]
    if not isinstance(X, Sequence) or len(X) == 0:
        raise ParameterError("expected a non-empty sequence of SceneTriplet")
    out = []
    for t in X:
        if not isinstance(t, SceneTriplet):
            raise ParameterError(f"expected SceneTriplet, got {type(t).__name__}")
        if need_pseudo and t.pseudo_hrms is None:
            raise ParameterError(f"triplet {t.scene_id} has no pseudo-HRMS reference")
        out.append(t)
    bands = {t.lrms.bands for t in out}
    if len(bands) != 1:
        raise DimensionError(f"mixed band counts in batch: {sorted(bands)}")
    return out
