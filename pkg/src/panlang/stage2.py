"""Unsupervised full-resolution training of a PNN-style fusion backbone.

The composite objective is ``L_spec + L_spat + L_QNR + L_pseudo + w_d * L_d``
with each group switchable for ablations:

* ``L_spec``: bicubic-downsampled output vs LRMS (MSE + 1 - SSIM),
* ``L_spat``: learned 1x1 band mix of the output vs PAN (MSE + 1 - SSIM),
* ``L_QNR``: ``1 - (1 - D_lambda)(1 - D_s)`` from differentiable Q indices,
* ``L_pseudo``: mean absolute difference to a frozen reference generator,
* ``L_d``: directional agreement, in the frozen encoder's space, between
  the image displacement (sources -> output) and the text displacement
  (source prompts -> HRMS prompt).
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator

from .checkpoint import ParamSet
from .encoder import PromptSet, encode_images, encode_prompts
from .exceptions import DegenerateInputError, DependencyError, DimensionError, DivergenceError, ParameterError
from .metrics import Q_BLOCK, Q_EPS, band_pairs, effective_block, q_map
from .ndtensor import (
    Adam,
    Tensor,
    backward,
    concat,
    conv2d,
    l2_normalize,
    matmul,
    mean,
    no_grad,
    relu,
    resize_bicubic,
    ssim,
    tabs,
    tsum,
)
from .ndtensor.tensor import getitem
from .protocol import SensorModel, degrade_pan, reduce_triplet, upsample_array
from .rasters import Raster
from .validation import check_pair, check_triplets

TERMS = ("L_spec", "L_spat", "L_QNR", "L_pseudo", "L_d")
DIRECTION_EPS = 1e-8

# ablation rows: label -> (spec+spat, QNR, pseudo, semantic)
ABLATIONS = {
    "L_spec+L_spat": (True, False, False, False),
    "L_unsup": (True, True, False, False),
    "L_unsup+L_pseudo": (True, True, True, False),
    "L_unsup+L_d": (True, True, False, True),
    "L_unsup+L_pseudo+L_d": (True, True, True, True),
}


# ---------------------------------------------------------------------------
# backbone


def init_backbone(bands: int, seed: int = 0, widths: tuple = (32, 16), kernels: tuple = (9, 5, 5)) -> ParamSet:
    """PNN-style three-layer network; the last layer starts at zero so the
    initial output is exactly the upsampled LRMS."""
    rng = np.random.default_rng(seed)
    p = ParamSet()
    p["meta.bands"] = np.array([bands], dtype=np.float32)
    chans = (bands + 1, *widths, bands)
    for k, (cin, cout, ks) in enumerate(zip(chans[:-1], chans[1:], kernels)):
        last = k == len(kernels) - 1
        w = np.zeros((cout, cin, ks, ks)) if last else rng.normal(0, math.sqrt(2.0 / (cin * ks * ks)),
                                                                    size=(cout, cin, ks, ks))
        p[f"bb.{k}.weight"] = w
        p[f"bb.{k}.bias"] = np.zeros(cout)
    p["phi.weight"] = np.full((1, bands), 1.0 / bands)
    return p


def _layers(params: ParamSet) -> int:
    k = 0
    while f"bb.{k}.weight" in params:
        k += 1
    return k


def backbone_tensor(up: Tensor, pan: Tensor, params: ParamSet) -> Tensor:
    """Raw (unclamped) output ``[N, B, H, W]`` from upsampled LRMS and PAN."""
    if up.shape[0] != pan.shape[0] or up.shape[2:] != pan.shape[2:]:
        raise DimensionError(f"upsampled MS {up.shape} and PAN {pan.shape} do not align")
    h = concat([up, pan], axis=1)
    n = _layers(params)
    for k in range(n):
        w = params[f"bb.{k}.weight"]
        h = conv2d(h, w, stride=1, padding=w.shape[-1] // 2, bias=params[f"bb.{k}.bias"])
        if k < n - 1:
            h = relu(h)
    return up + h


def backbone_forward(lrms: Raster, pan: Raster, params: ParamSet, ratio: int = 4) -> Raster:
    """Inference: fused raster clamped to [0, 1]."""
    check_pair(lrms, pan, ratio)
    if lrms.bands != params.meta("bands"):
        raise DimensionError(f"backbone expects {params.meta('bands')} bands, got {lrms.bands}")
    dtype = params["phi.weight"].dtype
    up = Tensor(upsample_array(lrms.data, ratio)[None].astype(dtype))
    with no_grad():
        out = backbone_tensor(up, Tensor(pan.data[None].astype(dtype)), params)
    return Raster(out.data[0])


def phi(x: Tensor, params: ParamSet) -> Tensor:
    """Learned spectral degradation: 1x1 band mix to a single channel."""
    n, b, h, w = x.shape
    return matmul(params["phi.weight"], x.reshape(n, b, h * w)).reshape(n, 1, h, w)


# ---------------------------------------------------------------------------
# losses


def loss_spec(out: Tensor, ms, ratio: int = 4) -> Tensor:
    down = resize_bicubic(out, ratio, "down")
    ms = Tensor(np.asarray(ms.data if isinstance(ms, Tensor) else ms, dtype=out.dtype))
    if down.shape != ms.shape:
        raise DimensionError(f"downsampled output {down.shape} does not match MS {ms.shape}")
    diff = down - ms
    return mean(diff * diff) + (1.0 - ssim(down, ms))


def loss_spat(out: Tensor, pan, params: ParamSet) -> Tensor:
    synth = phi(out, params)
    pan = Tensor(np.asarray(pan.data if isinstance(pan, Tensor) else pan, dtype=out.dtype))
    if synth.shape != pan.shape:
        raise DimensionError(f"degraded output {synth.shape} does not match PAN {pan.shape}")
    diff = synth - pan
    return mean(diff * diff) + (1.0 - ssim(synth, pan))


def _tiles(x: Tensor, block: int) -> Tensor:
    """``[..., H, W] -> [..., tiles, block*block]`` (incomplete tiles dropped)."""
    h, w = x.shape[-2:]
    nh, nw = h // block, w // block
    if nh * block != h or nw * block != w:
        x = x[..., : nh * block, : nw * block]
    lead = x.shape[:-2]
    k = len(lead)
    t = x.reshape(*lead, nh, block, nw, block)
    t = t.transpose(*range(k), k, k + 2, k + 1, k + 3)
    return t.reshape(*lead, nh * nw, block * block)


def q_tensor(x: Tensor, y, block: int = Q_BLOCK) -> Tensor:
    """Differentiable twin of :func:`panlang.metrics.q_map` (batched over leading axes)."""
    y = y if isinstance(y, Tensor) else Tensor(np.asarray(y, dtype=x.dtype))
    bs = effective_block(x.shape, block)
    xb, yb = _tiles(x, bs), _tiles(y, bs)
    mx, my = xb.mean(axis=-1, keepdims=True), yb.mean(axis=-1, keepdims=True)
    dx, dy = xb - mx, yb - my
    vx, vy = (dx * dx).mean(axis=-1), (dy * dy).mean(axis=-1)
    cxy = (dx * dy).mean(axis=-1)
    mx, my = mx.reshape(*mx.shape[:-1]), my.reshape(*my.shape[:-1])
    q = (2 * mx * my + Q_EPS) / (mx * mx + my * my + Q_EPS) * (2 * cxy + Q_EPS) / (vx + vy + Q_EPS)
    return q.mean(axis=-1)


def qnr_reference(lrms: np.ndarray, pan_lr: np.ndarray, block: int = Q_BLOCK, ratio: int = 4) -> tuple:
    """Constant LR-side Q values: ``Q(M_l, M_r)`` per ordered pair and ``Q(M_l, P_L)`` per band."""
    lrms = np.asarray(lrms, dtype=np.float64)
    li, ri = band_pairs(lrms.shape[-3])
    lr_block = max(1, block // ratio)
    q_mm = q_map(lrms[..., li, :, :], lrms[..., ri, :, :], lr_block)
    q_mp = q_map(lrms, pan_lr, lr_block)
    return q_mm, q_mp


def qnr_terms(out: Tensor, pan, q_mm, q_mp, block: int = Q_BLOCK) -> tuple:
    """Per-image differentiable ``(D_lambda, D_s)`` for ``out[N, B, H, W]``."""
    li, ri = band_pairs(out.shape[1])
    q_ff = q_tensor(getitem(out, (slice(None), li)), getitem(out, (slice(None), ri)), block)
    dl = tabs(q_ff - Tensor(np.asarray(q_mm, dtype=out.dtype))).mean(axis=-1)
    q_fp = q_tensor(out, pan, block)
    ds = tabs(q_fp - Tensor(np.asarray(q_mp, dtype=out.dtype))).mean(axis=-1)
    return dl, ds


def loss_qnr(out: Tensor, pan, q_mm, q_mp, block: int = Q_BLOCK) -> Tensor:
    """Batch mean of ``1 - (1 - D_lambda)(1 - D_s)``."""
    dl, ds = qnr_terms(out, pan, q_mm, q_mp, block)
    return mean(1.0 - (1.0 - dl) * (1.0 - ds))


def loss_pseudo(out: Tensor, ref) -> Tensor:
    if ref is None:
        raise DependencyError("pseudo-supervision needs a reference output")
    ref = Tensor(np.asarray(ref.data if isinstance(ref, Tensor) else ref, dtype=out.dtype))
    return mean(tabs(out - ref))


def directional_loss(dv_img_ms: Tensor, dv_txt_ms, dv_img_pan: Tensor, dv_txt_pan) -> Tensor:
    """``1 - (cos(dI_ms, dT_ms) + cos(dI_pan, dT_pan)) / 2`` on the last axis.

    Raises :class:`DegenerateInputError` if any displacement has (near) zero norm.
    """
    vecs = [v if isinstance(v, Tensor) else Tensor(np.asarray(v)) for v in (dv_img_ms, dv_txt_ms, dv_img_pan, dv_txt_pan)]
    for v in vecs:
        if np.any(np.sqrt(np.sum(v.data * v.data, axis=-1)) < DIRECTION_EPS):
            raise DegenerateInputError("zero-length displacement vector")
    a, b, c, d = vecs
    cos_ms = tsum(l2_normalize(a) * l2_normalize(b), axis=-1)
    cos_pan = tsum(l2_normalize(c) * l2_normalize(d), axis=-1)
    return 1.0 - 0.5 * (cos_ms + cos_pan)


@dataclass
class SemanticContext:
    """Frozen-encoder quantities that do not depend on the backbone output."""

    encoder: ParamSet
    text_dir_ms: np.ndarray
    text_dir_pan: np.ndarray

    @classmethod
    def build(cls, encoder: ParamSet, prompts: PromptSet, dtype=np.float32) -> "SemanticContext":
        enc = encoder.astype(dtype).freeze()
        with no_grad():
            t = encode_prompts(prompts, enc)
        hr = t["HRMS"].data
        return cls(enc, hr - t["MS"].data, hr - t["PAN"].data)

    def embed(self, x: np.ndarray, modality: str) -> np.ndarray:
        with no_grad():
            return encode_images(Tensor(x.astype(self.encoder["img.head.weight"].dtype)), self.encoder, modality).data


def loss_semantic(out: Tensor, f_ms: np.ndarray, f_pan: np.ndarray, ctx: SemanticContext) -> tuple:
    """Directional semantic loss averaged over the batch.

    Samples whose image displacement is shorter than ``1e-8`` contribute 0
    (skip-step policy). Returns ``(loss, skipped_count)``.
    """
    f_out = encode_images(out, ctx.encoder, "HRMS")
    dv_ms = f_out - Tensor(f_ms.astype(out.dtype))
    dv_pan = f_out - Tensor(f_pan.astype(out.dtype))
    n = out.shape[0]
    norms = np.minimum(np.linalg.norm(dv_ms.data, axis=-1), np.linalg.norm(dv_pan.data, axis=-1))
    keep = np.flatnonzero(norms >= DIRECTION_EPS)
    if keep.size == 0:
        return Tensor(np.zeros((), dtype=out.dtype)), n
    tm = np.broadcast_to(ctx.text_dir_ms.astype(out.dtype), (keep.size, ctx.text_dir_ms.size))
    tp = np.broadcast_to(ctx.text_dir_pan.astype(out.dtype), (keep.size, ctx.text_dir_pan.size))
    per = directional_loss(getitem(dv_ms, keep), tm, getitem(dv_pan, keep), tp)
    return tsum(per) * (1.0 / n), n - keep.size


# ---------------------------------------------------------------------------
# data preparation


@dataclass
class SceneArrays:
    """Per-scene full-resolution arrays reused by every crop."""

    up: np.ndarray        # [S, B, H, W] unclamped bicubic LRMS
    pan: np.ndarray       # [S, 1, H, W]
    lrms: np.ndarray      # [S, B, h, w]
    pan_lr: np.ndarray    # [S, 1, h, w]
    ref: np.ndarray | None  # [S, B, H, W] pseudo-supervisor output


def prepare(triplets, sensor: SensorModel, pseudo: ParamSet | None, dtype) -> SceneArrays:
    r = sensor.ratio
    up = np.stack([upsample_array(t.lrms.data, r) for t in triplets])
    pan = np.stack([t.pan.data for t in triplets]).astype(np.float64)
    lrms = np.stack([t.lrms.data for t in triplets]).astype(np.float64)
    pan_lr = np.stack([degrade_pan(t.pan, sensor).data for t in triplets]).astype(np.float64)
    ref = None
    if pseudo is not None:
        ref = np.stack([backbone_forward(t.lrms, t.pan, pseudo.astype(dtype), r).data for t in triplets])
    cast = lambda a: None if a is None else a.astype(dtype)  # noqa: E731
    return SceneArrays(cast(up), cast(pan), cast(lrms), cast(pan_lr), cast(ref))


def sample_crops(arrays: SceneArrays, idx: np.ndarray, patch: int, ratio: int, rng) -> dict:
    """Random aligned crops: ``patch`` pixels at PAN scale, ``patch / ratio`` at LR."""
    H = arrays.pan.shape[-1]
    lp = patch // ratio
    nlr = H // ratio
    ys = rng.integers(0, nlr - lp + 1, size=idx.size)
    xs = rng.integers(0, nlr - lp + 1, size=idx.size)
    out = {k: [] for k in ("up", "pan", "lrms", "pan_lr", "ref")}
    for i, y, x in zip(idx, ys, xs):
        hy, hx = y * ratio, x * ratio
        out["up"].append(arrays.up[i, :, hy:hy + patch, hx:hx + patch])
        out["pan"].append(arrays.pan[i, :, hy:hy + patch, hx:hx + patch])
        out["lrms"].append(arrays.lrms[i, :, y:y + lp, x:x + lp])
        out["pan_lr"].append(arrays.pan_lr[i, :, y:y + lp, x:x + lp])
        if arrays.ref is not None:
            out["ref"].append(arrays.ref[i, :, hy:hy + patch, hx:hx + patch])
    return {k: (np.ascontiguousarray(np.stack(v)) if v else None) for k, v in out.items()}


# ---------------------------------------------------------------------------
# training


@dataclass
class Stage2Config:
    iterations: int = 1000
    batch_size: int = 32
    lr: float = 0.0003
    seed: int = 0
    patch: int = 32
    use_spec_spat: bool = True
    use_qnr: bool = True
    use_pseudo: bool = True
    use_semantic: bool = True
    w_d: float = 1.0
    prompt_variant: str = "Wald"
    q_block: int = Q_BLOCK
    dtype: str = "float32"

    def enabled_terms(self) -> tuple:
        flags = (self.use_spec_spat, self.use_spec_spat, self.use_qnr, self.use_pseudo, self.use_semantic)
        return tuple(t for t, on in zip(TERMS, flags) if on)

    @classmethod
    def ablation(cls, label: str, **kw) -> "Stage2Config":
        if label not in ABLATIONS:
            raise ParameterError(f"unknown ablation row {label!r}; choose from {list(ABLATIONS)}")
        ss, q, ps, sem = ABLATIONS[label]
        return cls(use_spec_spat=ss, use_qnr=q, use_pseudo=ps, use_semantic=sem, **kw)

    def label(self) -> str:
        flags = (self.use_spec_spat, self.use_qnr, self.use_pseudo, self.use_semantic)
        for name, f in ABLATIONS.items():
            if f == flags:
                return name
        return "+".join(self.enabled_terms()) or "none"


def log_header(cfg: Stage2Config) -> tuple:
    return ("iteration", *cfg.enabled_terms(), "total")


def stage2_objective(params: ParamSet, crops: dict, cfg: Stage2Config, ctx: SemanticContext | None = None,
                     f_src: tuple | None = None, ratio: int = 4):
    """Composite loss and its enabled terms for one batch of crops."""
    out = backbone_tensor(Tensor(crops["up"]), Tensor(crops["pan"]), params)
    terms = {}
    if cfg.use_spec_spat:
        terms["L_spec"] = loss_spec(out, crops["lrms"], ratio)
        terms["L_spat"] = loss_spat(out, crops["pan"], params)
    if cfg.use_qnr:
        q_mm, q_mp = qnr_reference(crops["lrms"], crops["pan_lr"], cfg.q_block, ratio)
        terms["L_QNR"] = loss_qnr(out, crops["pan"], q_mm, q_mp, cfg.q_block)
    if cfg.use_pseudo:
        terms["L_pseudo"] = loss_pseudo(out, crops["ref"])
    skipped = 0
    if cfg.use_semantic:
        if ctx is None:
            raise DependencyError("semantic loss needs an aligned encoder checkpoint")
        if f_src is None:
            f_src = (ctx.embed(crops["lrms"], "MS"), ctx.embed(crops["pan"], "PAN"))
        ld, skipped = loss_semantic(out, f_src[0], f_src[1], ctx)
        terms["L_d"] = ld
    total = None
    for name, t in terms.items():
        w = cfg.w_d if name == "L_d" else 1.0
        total = t * w if total is None else total + t * w
    if total is None:
        raise ParameterError("every loss group is disabled")
    return total, terms, skipped


@dataclass
class Stage2Result:
    params: ParamSet
    log: list = field(default_factory=list)
    header: tuple = ()
    skipped: int = 0


def train_stage2(triplets, encoder: ParamSet | None = None, pseudo: ParamSet | None = None,
                 cfg: Stage2Config | None = None, sensor: SensorModel | None = None,
                 params: ParamSet | None = None, progress=None) -> Stage2Result:
    """Train the backbone with the enabled unsupervised loss groups.

    The encoder is copied and frozen; it is never modified.  With
    ``lr == 0`` the losses are logged but no update is applied.
    """
    cfg = cfg or Stage2Config()
    triplets = check_triplets(triplets)
    bands = triplets[0].lrms.bands
    sensor = sensor or SensorModel.default(bands)
    if cfg.use_semantic and encoder is None:
        raise DependencyError("L_d is enabled but no aligned encoder checkpoint was given")
    if cfg.use_pseudo and pseudo is None:
        raise DependencyError("L_pseudo is enabled but no pseudo-supervisor checkpoint was given")
    if cfg.lr < 0 or cfg.iterations < 0:
        raise ParameterError("lr and iterations must be >= 0")
    if cfg.patch % sensor.ratio or cfg.patch > triplets[0].pan.height:
        raise ParameterError(f"patch {cfg.patch} must be a multiple of {sensor.ratio} and fit the scene")
    dtype = np.dtype(cfg.dtype)
    params = (params or init_backbone(bands, cfg.seed)).astype(dtype)
    ctx = SemanticContext.build(encoder, PromptSet.for_variant(cfg.prompt_variant), dtype) if cfg.use_semantic else None
    arrays = prepare(triplets, sensor, pseudo if cfg.use_pseudo else None, dtype)
    rng = np.random.default_rng(cfg.seed)
    opt = Adam(params.parameters(), lr=cfg.lr) if cfg.lr > 0 else None
    header = log_header(cfg)
    n = len(triplets)
    bs = min(cfg.batch_size, n)
    log, skipped_total = [], 0
    for it in range(1, cfg.iterations + 1):
        idx = rng.permutation(n)[:bs]
        crops = sample_crops(arrays, idx, cfg.patch, sensor.ratio, rng)
        params.zero_grad()
        total, terms, skipped = stage2_objective(params, crops, cfg, ctx, ratio=sensor.ratio)
        skipped_total += skipped
        values = [float(terms[k].item()) for k in header[1:-1]] + [float(total.item())]
        if not all(math.isfinite(v) for v in values):
            raise DivergenceError(f"non-finite fusion loss at iteration {it}: {values}",
                                  iteration=it, last_good=params.astype(np.float32))
        log.append((it, *values))
        if opt is not None:
            backward(total)
            snapshot = [p.data for p in opt.params]
            opt.step()
            if not all(np.all(np.isfinite(p.data)) for p in opt.params):
                for p, d in zip(opt.params, snapshot):
                    p.data = d
                raise DivergenceError(f"non-finite backbone parameters after iteration {it}",
                                      iteration=it, last_good=params.astype(np.float32))
        if progress is not None:
            progress(it, values)
    params.zero_grad()
    return Stage2Result(params.astype(np.float32), log, header, skipped_total)


# ---------------------------------------------------------------------------
# pseudo-supervisor pretrained at reduced resolution


@dataclass
class PretrainConfig:
    iterations: int = 1000
    batch_size: int = 32
    lr: float = 0.0003
    seed: int = 0
    dtype: str = "float32"


PRETRAIN_HEADER = ("iteration", "L_l1")


def pretrain_backbone_reduced(triplets, cfg: PretrainConfig | None = None, sensor: SensorModel | None = None,
                              progress=None) -> Stage2Result:
    """Supervised l1 training on twice-degraded inputs with the original LRMS as target."""
    cfg = cfg or PretrainConfig()
    triplets = check_triplets(triplets)
    bands = triplets[0].lrms.bands
    sensor = sensor or SensorModel.default(bands)
    if cfg.lr < 0 or cfg.iterations < 0:
        raise ParameterError("lr and iterations must be >= 0")
    dtype = np.dtype(cfg.dtype)
    reduced = [reduce_triplet(t, sensor) for t in triplets]
    up = np.stack([upsample_array(t.lrms.data, sensor.ratio) for t in reduced]).astype(dtype)
    pan = np.stack([t.pan.data for t in reduced]).astype(dtype)
    target = np.stack([t.reference.data for t in reduced]).astype(dtype)
    params = init_backbone(bands, cfg.seed).astype(dtype)
    rng = np.random.default_rng(cfg.seed)
    opt = Adam(params.parameters(), lr=cfg.lr) if cfg.lr > 0 else None
    n = len(triplets)
    bs = min(cfg.batch_size, n)
    log = []
    for it in range(1, cfg.iterations + 1):
        idx = np.sort(rng.permutation(n)[:bs])
        params.zero_grad()
        out = backbone_tensor(Tensor(up[idx]), Tensor(pan[idx]), params)
        loss = loss_pseudo(out, target[idx])
        value = float(loss.item())
        if not math.isfinite(value):
            raise DivergenceError(f"non-finite pretraining loss at iteration {it}", iteration=it,
                                  last_good=params.astype(np.float32))
        log.append((it, value))
        if opt is not None:
            backward(loss)
            opt.step()
        if progress is not None:
            progress(it, [value])
    params.zero_grad()
    return Stage2Result(params.astype(np.float32), log, PRETRAIN_HEADER)


def write_log(rows, path, header) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([row[0]] + [repr(float(v)) for v in row[1:]])


def fuse_all(triplets, params: ParamSet, ratio: int = 4) -> list[Raster]:
    return [backbone_forward(t.lrms, t.pan, params, ratio) for t in check_triplets(triplets)]


# ---------------------------------------------------------------------------
# estimators


class ReducedResolutionPansharpener(BaseEstimator):
    """Supervised pseudo-supervisor trained on twice-degraded triplets."""

    def __init__(self, iterations: int = 1000, batch_size: int = 32, lr: float = 0.0003, seed: int = 0):
        self.iterations = iterations
        self.batch_size = batch_size
        self.lr = lr
        self.seed = seed

    def fit(self, X, y=None):
        res = pretrain_backbone_reduced(X, PretrainConfig(self.iterations, self.batch_size, self.lr, self.seed))
        self.params_, self.log_ = res.params, res.log
        return self

    def predict(self, X) -> list[Raster]:
        from sklearn.utils.validation import check_is_fitted

        check_is_fitted(self, "params_")
        return fuse_all(X, self.params_)


class LanguageGuidedPansharpener(BaseEstimator):
    """Backbone trained with the unsupervised composite loss.

    ``encoder`` and ``pseudo`` are frozen checkpoints (``ParamSet``) for the
    semantic and pseudo-supervision terms.
    """

    def __init__(self, encoder: ParamSet | None = None, pseudo: ParamSet | None = None, iterations: int = 1000,
                 batch_size: int = 32, lr: float = 0.0003, seed: int = 0, patch: int = 32,
                 use_spec_spat: bool = True, use_qnr: bool = True, use_pseudo: bool = True,
                 use_semantic: bool = True, w_d: float = 1.0, prompt_variant: str = "Wald"):
        self.encoder = encoder
        self.pseudo = pseudo
        self.iterations = iterations
        self.batch_size = batch_size
        self.lr = lr
        self.seed = seed
        self.patch = patch
        self.use_spec_spat = use_spec_spat
        self.use_qnr = use_qnr
        self.use_pseudo = use_pseudo
        self.use_semantic = use_semantic
        self.w_d = w_d
        self.prompt_variant = prompt_variant

    def _config(self) -> Stage2Config:
        return Stage2Config(iterations=self.iterations, batch_size=self.batch_size, lr=self.lr, seed=self.seed,
                            patch=self.patch, use_spec_spat=self.use_spec_spat, use_qnr=self.use_qnr,
                            use_pseudo=self.use_pseudo, use_semantic=self.use_semantic, w_d=self.w_d,
                            prompt_variant=self.prompt_variant)

    def fit(self, X, y=None):
        res = train_stage2(X, self.encoder, self.pseudo, self._config())
        self.params_, self.log_, self.log_header_ = res.params, res.log, res.header
        return self

    def predict(self, X) -> list[Raster]:
        from sklearn.utils.validation import check_is_fitted

        check_is_fitted(self, "params_")
        return fuse_all(X, self.params_)


__all__ = [
    "ABLATIONS", "LanguageGuidedPansharpener", "PretrainConfig", "ReducedResolutionPansharpener", "SceneArrays",
    "SemanticContext", "Stage2Config", "Stage2Result", "TERMS", "backbone_forward", "backbone_tensor",
    "directional_loss", "fuse_all", "init_backbone", "log_header", "loss_pseudo", "loss_qnr", "loss_semantic",
    "loss_spat", "loss_spec", "phi", "prepare", "pretrain_backbone_reduced", "q_tensor", "qnr_reference",
    "qnr_terms", "sample_crops", "stage2_objective", "train_stage2", "write_log",
]
