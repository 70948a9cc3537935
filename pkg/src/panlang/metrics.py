"""Reduced- and full-resolution pansharpening quality indices (numpy only)."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from .exceptions import DegenerateInputError, DimensionError, ParameterError
from .rasters import Raster

PSNR_CAP = 99.0
Q_EPS = 1e-8
Q_BLOCK = 32
CSV_HEADER = ("mpsnr", "ergas", "sam", "q2n", "d_lambda", "d_s", "qnr")


def _arr(x) -> np.ndarray:
    a = x.data if isinstance(x, Raster) else np.asarray(x)
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 2:
        a = a[None]
    if a.ndim != 3:
        raise DimensionError(f"expected (bands, height, width), got {a.shape}")
    return a


def _pair(fused, ref) -> tuple:
    f, r = _arr(fused), _arr(ref)
    if f.shape != r.shape:
        raise DimensionError(f"shape mismatch: {f.shape} vs {r.shape}")
    return f, r


# ---------------------------------------------------------------------------
# reference-based indices


def mpsnr(fused, ref) -> float:
    """Mean over bands of ``10 log10(1 / MSE_b)``, each capped at 99 dB."""
    f, r = _pair(fused, ref)
    mse = ((f - r) ** 2).reshape(f.shape[0], -1).mean(axis=1)
    with np.errstate(divide="ignore"):
        psnr = np.where(mse > 0, 10.0 * np.log10(1.0 / np.where(mse > 0, mse, 1.0)), PSNR_CAP)
    return float(np.mean(np.minimum(psnr, PSNR_CAP)))


def ergas(fused, ref, ratio: int = 4) -> float:
    f, r = _pair(fused, ref)
    b = f.shape[0]
    mu = r.reshape(b, -1).mean(axis=1)
    if np.any(mu == 0):
        raise DegenerateInputError("reference band with zero mean")
    rmse = np.sqrt(((f - r) ** 2).reshape(b, -1).mean(axis=1))
    return float(100.0 / ratio * math.sqrt(np.mean((rmse / mu) ** 2)))


def sam(fused, ref, return_skipped: bool = False):
    """Mean spectral angle in degrees; pixels where either vector is zero are skipped."""
    f, r = _pair(fused, ref)
    fv = f.reshape(f.shape[0], -1)
    rv = r.reshape(r.shape[0], -1)
    nf = np.sqrt((fv * fv).sum(axis=0))
    nr = np.sqrt((rv * rv).sum(axis=0))
    ok = (nf > 0) & (nr > 0)
    if not np.any(ok):
        raise DegenerateInputError("every pixel has a zero spectral vector")
    cos = (fv[:, ok] * rv[:, ok]).sum(axis=0) / (nf[ok] * nr[ok])
    angle = float(np.degrees(np.mean(np.arccos(np.clip(cos, -1.0, 1.0)))))
    skipped = int(ok.size - ok.sum())
    return (angle, skipped) if return_skipped else angle


# ---------------------------------------------------------------------------
# Q index family


def stabilized_q(mean_x, mean_y, var_x, var_y, cov, eps: float = Q_EPS):
    """``(2 mx my + e)/(mx^2 + my^2 + e) * (2 cov + e)/(vx + vy + e)``.

    Equals the universal image quality index when the epsilon is negligible
    and evaluates to 1 for identical flat blocks.
    """
    return (2 * mean_x * mean_y + eps) / (mean_x * mean_x + mean_y * mean_y + eps) * \
        (2 * cov + eps) / (var_x + var_y + eps)


def block_view(a: np.ndarray, block: int) -> np.ndarray:
    """Non-overlapping ``block x block`` tiles of ``a[..., H, W]`` as ``[..., n_tiles, block*block]``.

    Incomplete border tiles are dropped.
    """
    h, w = a.shape[-2:]
    nh, nw = h // block, w // block
    a = a[..., : nh * block, : nw * block]
    lead = a.shape[:-2]
    t = a.reshape(*lead, nh, block, nw, block)
    t = np.moveaxis(t, -3, -2)
    return t.reshape(*lead, nh * nw, block * block)


def effective_block(shape: tuple, block: int) -> int:
    return max(1, min(block, shape[-2], shape[-1]))


def q_map(x, y, block: int = Q_BLOCK) -> np.ndarray:
    """Block-averaged stabilized Q over the last two axes, batched over leading axes."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    x, y = np.broadcast_arrays(x, y)
    bs = effective_block(x.shape, block)
    xb, yb = block_view(x, bs), block_view(y, bs)
    mx, my = xb.mean(axis=-1), yb.mean(axis=-1)
    dx, dy = xb - mx[..., None], yb - my[..., None]
    vx, vy = (dx * dx).mean(axis=-1), (dy * dy).mean(axis=-1)
    cxy = (dx * dy).mean(axis=-1)
    return stabilized_q(mx, my, vx, vy, cxy).mean(axis=-1)


def q_index(x, y, block: int = Q_BLOCK) -> float:
    """Block-averaged stabilized Q between two single-band images."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 2:
        raise DimensionError(f"q_index needs two equal 2-D images, got {x.shape} and {y.shape}")
    return float(q_map(x, y, block))


def band_pairs(bands: int) -> tuple:
    """Ordered index pairs ``(l, r)`` with ``l != r``."""
    li, ri = np.nonzero(~np.eye(bands, dtype=bool))
    return li, ri


def cd_conj(a: np.ndarray) -> np.ndarray:
    """Hypercomplex conjugate on the last axis (negate all imaginary parts)."""
    out = -a
    out[..., 0] = a[..., 0]
    return out


def cd_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Cayley-Dickson product on the last axis (length a power of two).

    ``(p, q)(r, s) = (p r - conj(s) q, s p + q conj(r))``.
    """
    n = a.shape[-1]
    if n == 1:
        return a * b
    h = n // 2
    p, q = a[..., :h], a[..., h:]
    r, s = b[..., :h], b[..., h:]
    return np.concatenate([cd_mul(p, r) - cd_mul(cd_conj(s), q), cd_mul(s, p) + cd_mul(q, cd_conj(r))], axis=-1)


def q2n(fused, ref, block: int = Q_BLOCK) -> float:
    """Hypercomplex quality index for 2^n bands, averaged over square blocks."""
    f, r = _pair(fused, ref)
    b = f.shape[0]
    if b & (b - 1):
        raise ParameterError(f"q2n needs a power-of-two band count, got {b}")
    bs = effective_block(f.shape, block)
    fx = np.moveaxis(block_view(f, bs), 0, -1)  # (tiles, pixels, bands)
    rx = np.moveaxis(block_view(r, bs), 0, -1)
    mf, mr = fx.mean(axis=1), rx.mean(axis=1)
    df, dr = fx - mf[:, None], rx - mr[:, None]
    vf = (df * df).sum(axis=-1).mean(axis=1)
    vr = (dr * dr).sum(axis=-1).mean(axis=1)
    cov = cd_mul(df, cd_conj(dr)).mean(axis=1)
    cov_mod = np.sqrt((cov * cov).sum(axis=-1))
    nf = np.sqrt((mf * mf).sum(axis=-1))
    nr = np.sqrt((mr * mr).sum(axis=-1))
    q = stabilized_q(nf, nr, vf, vr, cov_mod)
    return float(np.mean(q))


# ---------------------------------------------------------------------------
# no-reference indices


def d_lambda(fused, lrms, block: int = Q_BLOCK, ratio: int = 4) -> float:
    """Mean |Q(F_l, F_r) - Q(M_l, M_r)| over ordered band pairs l != r.

    LR images use ``block // ratio`` so both sides cover the same ground area.
    """
    f, m = _arr(fused), _arr(lrms)
    bands = f.shape[0]
    if bands < 2:
        raise DegenerateInputError("spectral distortion needs at least two bands")
    if m.shape[0] != bands:
        raise DimensionError("fused and lrms band counts differ")
    li, ri = band_pairs(bands)
    qf = q_map(f[li], f[ri], block)
    qm = q_map(m[li], m[ri], max(1, block // ratio))
    return float(np.mean(np.abs(qf - qm)))


def d_s(fused, lrms, pan, pan_lr, block: int = Q_BLOCK, ratio: int = 4) -> float:
    """Mean |Q(F_l, P) - Q(M_l, P_L)| over bands; ``pan_lr`` is the degraded PAN."""
    f, m = _arr(fused), _arr(lrms)
    p, pl = _arr(pan), _arr(pan_lr)
    qf = q_map(f, p, block)
    qm = q_map(m, pl, max(1, block // ratio))
    return float(np.mean(np.abs(qf - qm)))


def qnr(fused, lrms, pan, sensor=None, block: int = Q_BLOCK) -> tuple:
    """``(d_lambda, d_s, qnr)`` with ``qnr = (1 - d_lambda) * (1 - d_s)``."""
    from .protocol import SensorModel, degrade_pan

    fr = fused if isinstance(fused, Raster) else Raster(_arr(fused))
    lr = lrms if isinstance(lrms, Raster) else Raster(_arr(lrms))
    pr = pan if isinstance(pan, Raster) else Raster(_arr(pan))
    sensor = sensor or SensorModel.default(lr.bands)
    if fr.shape[1:] != pr.shape[1:] or fr.bands != lr.bands:
        raise DimensionError("fused must match pan spatially and lrms spectrally")
    pan_lr = degrade_pan(pr, sensor)
    dl = d_lambda(fr, lr, block, sensor.ratio)
    ds = d_s(fr, lr, pr, pan_lr, block, sensor.ratio)
    return dl, ds, (1.0 - dl) * (1.0 - ds)


# ---------------------------------------------------------------------------
# report


@dataclass(frozen=True)
class MetricReport:
    mpsnr: float | None = None
    ergas: float | None = None
    sam: float | None = None
    q2n: float | None = None
    d_lambda: float | None = None
    d_s: float | None = None
    qnr: float | None = None

    def as_row(self) -> list[str]:
        return ["" if v is None else repr(float(v)) for v in (getattr(self, k) for k in CSV_HEADER)]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        w.writerow(self.as_row())
        return buf.getvalue()

    @classmethod
    def from_row(cls, row: dict) -> "MetricReport":
        return cls(**{k: (float(row[k]) if row.get(k) not in (None, "") else None) for k in CSV_HEADER})

    def as_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def mean(cls, reports) -> "MetricReport":
        """Field-wise mean; QNR is recomputed from the mean distortions so the
        identity ``qnr = (1 - d_lambda) * (1 - d_s)`` still holds exactly."""
        reports = list(reports)
        out = {}
        for fld in fields(cls):
            vals = [getattr(r, fld.name) for r in reports]
            out[fld.name] = None if any(v is None for v in vals) or not vals else float(np.mean(vals))
        if out["d_lambda"] is not None and out["d_s"] is not None:
            out["qnr"] = (1.0 - out["d_lambda"]) * (1.0 - out["d_s"])
        return cls(**out)


def evaluate(fused, lrms=None, pan=None, reference=None, sensor=None, ratio: int = 4) -> MetricReport:
    """All indices computable from the supplied inputs."""
    vals = {}
    if reference is not None:
        f, r = _pair(fused, reference)
        vals.update(mpsnr=mpsnr(f, r), ergas=ergas(f, r, ratio), sam=sam(f, r))
        b = f.shape[0]
        if not b & (b - 1):
            vals["q2n"] = q2n(f, r)
    if lrms is not None and pan is not None:
        dl, ds, q = qnr(fused, lrms, pan, sensor)
        vals.update(d_lambda=dl, d_s=ds, qnr=q)
    return MetricReport(**vals)


def write_reports(rows, path, extra_header: tuple = ()) -> None:
    """CSV with optional leading columns (e.g. scene id) then the metric columns."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(tuple(extra_header) + CSV_HEADER)
        for extra, rep in rows:
            w.writerow(list(extra) + rep.as_row())
