"""Toy dual image/text encoder with type adapters and fusion adapters.

Image path: input projection to three channels, three stride-2 3x3
convolution blocks, global average pooling, a linear head to ``dim`` and
one of three residual bottleneck adapters (MS / PAN / HRMS).  Text path:
mean of token embeddings scaled by learned positional factors, a linear
head and one of three text adapters.  IFA/TFA map a (MS, PAN) embedding
pair to a fused embedding.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass

import numpy as np

from .checkpoint import ParamSet
from .exceptions import DimensionError, ParameterError, VocabularyError
from .ndtensor import Tensor, concat, conv2d, l2_normalize, matmul, relu
from .ndtensor.tensor import _lift
from .rasters import Raster

MODALITIES = ("MS", "PAN", "HRMS")
PROJECTIONS = ("Conv", "PCA", "RGB", "GBNIR")
BAND_SELECTIONS = {"RGB": (2, 1, 0), "GBNIR": (1, 0, 3)}

MS_PROMPT = "a multispectral image"
PAN_PROMPT = "a panchromatic image"
HRMS_PROMPTS = {
    "Wald": "High-quality reference image adhering to Wald's protocol: "
            "spectrally consistent with original data and spatially sharp",
    "Khan": "High-quality fused image adhering to Khan's protocol: "
            "spectral features consistent with the MS image and spatial details consistent with the PAN image",
    "Noise": "an image independent of the inputs",
    "DescI": "This image is the fusion image of the input image",
    "DescII": "a fused product of the MS and PAN images",
}

DEFAULT_DIM = 64
DEFAULT_WIDTHS = (16, 32, 32)
DEFAULT_ALPHA = 0.2
DEFAULT_TAU = 0.07

_TOKEN = re.compile(r"[a-z0-9]+(?:'[a-z]+)?")


def tokenize(text: str) -> list[str]:
    return _TOKEN.findall(text.lower())


VOCAB: tuple = tuple(sorted({w for p in (MS_PROMPT, PAN_PROMPT, *HRMS_PROMPTS.values()) for w in tokenize(p)}))
_INDEX = {w: i for i, w in enumerate(VOCAB)}
MAX_TOKENS = max(len(tokenize(p)) for p in (MS_PROMPT, PAN_PROMPT, *HRMS_PROMPTS.values()))


def token_ids(text: str) -> tuple:
    ids = []
    for w in tokenize(text):
        if w not in _INDEX:
            raise VocabularyError(w)
        ids.append(_INDEX[w])
    if not ids:
        raise VocabularyError(text)
    return tuple(ids)


@dataclass(frozen=True)
class PromptSet:
    ms_prompt: tuple
    pan_prompt: tuple
    hrms_prompt: tuple
    hrms_variant: str = "Wald"

    @classmethod
    def for_variant(cls, variant: str = "Wald") -> "PromptSet":
        if variant not in HRMS_PROMPTS:
            raise ParameterError(f"unknown prompt variant {variant!r}; choose from {sorted(HRMS_PROMPTS)}")
        return cls(token_ids(MS_PROMPT), token_ids(PAN_PROMPT), token_ids(HRMS_PROMPTS[variant]), variant)

    def tokens(self, modality: str) -> tuple:
        return {"MS": self.ms_prompt, "PAN": self.pan_prompt, "HRMS": self.hrms_prompt}[modality]


@dataclass
class EmbeddingBatch:
    vectors: np.ndarray
    modality: tuple
    scene_id: np.ndarray


# ---------------------------------------------------------------------------
# initialization


def init_encoder(bands: int, projection: str = "Conv", dim: int = DEFAULT_DIM,
                 widths: tuple = DEFAULT_WIDTHS, seed: int = 0) -> ParamSet:
    if projection not in PROJECTIONS:
        raise ParameterError(f"projection must be one of {PROJECTIONS}, got {projection!r}")
    if projection in BAND_SELECTIONS and bands < 4:
        raise ParameterError(f"{projection} projection needs at least 4 bands, got {bands}")
    if projection == "PCA" and bands < 3:
        raise ParameterError("PCA projection needs at least 3 bands")
    if dim % 4:
        raise ParameterError("embedding dim must be divisible by 4")
    rng = np.random.default_rng(seed)
    p = ParamSet()
    p["meta.bands"] = np.array([bands], dtype=np.float32)
    p["meta.projection"] = np.array([PROJECTIONS.index(projection)], dtype=np.float32)
    if projection == "Conv":
        p["proj.weight"] = np.zeros((3, bands), dtype=np.float32)
    cin = 3
    for k, w in enumerate(widths):
        p[f"stem.{k}.weight"] = rng.normal(0, math.sqrt(2.0 / (cin * 9)), size=(w, cin, 3, 3))
        p[f"stem.{k}.bias"] = np.zeros(w)
        cin = w
    for m in MODALITIES:
        p[f"meta.norm.{m}.shift"] = np.zeros(cin)
        p[f"meta.norm.{m}.scale"] = np.ones(cin)
    p["img.head.weight"] = rng.normal(0, math.sqrt(1.0 / cin), size=(cin, dim))
    p["img.head.bias"] = np.zeros(dim)
    p["txt.embed"] = rng.normal(0, 1.0, size=(len(VOCAB), dim))
    p["txt.pos"] = np.zeros(MAX_TOKENS)
    p["txt.head.weight"] = rng.normal(0, math.sqrt(1.0 / dim), size=(dim, dim))
    p["txt.head.bias"] = np.zeros(dim)
    hidden = dim // 4
    for side in ("img", "txt"):
        for m in MODALITIES:
            pre = f"adapter.{side}.{m}"
            p[f"{pre}.w1"] = rng.normal(0, math.sqrt(2.0 / dim), size=(dim, hidden))
            p[f"{pre}.b1"] = np.zeros(hidden)
            p[f"{pre}.w2"] = rng.normal(0, math.sqrt(1.0 / hidden), size=(hidden, dim))
            p[f"{pre}.b2"] = np.zeros(dim)
            p[f"{pre}.alpha"] = np.array(DEFAULT_ALPHA)
    for name in ("ifa", "tfa"):
        p[f"{name}.w1"] = rng.normal(0, math.sqrt(2.0 / (2 * dim)), size=(2 * dim, dim))
        p[f"{name}.b1"] = np.zeros(dim)
        p[f"{name}.w2"] = rng.normal(0, math.sqrt(1.0 / dim), size=(dim, dim))
        p[f"{name}.b2"] = np.zeros(dim)
    p["log_tau_c"] = np.array(math.log(DEFAULT_TAU))
    p["log_tau_i"] = np.array(math.log(DEFAULT_TAU))
    return p


def projection_of(params: ParamSet) -> str:
    return PROJECTIONS[params.meta("projection")]


def adapter_names(params: ParamSet) -> list[str]:
    return sorted({n.rsplit(".", 1)[0] for n in params.names() if n.startswith("adapter.")})


# ---------------------------------------------------------------------------
# image side


def pca_basis(x: np.ndarray, k: int = 3) -> np.ndarray:
    """Top-``k`` eigenvectors of the band covariance of ``x[B,H,W]`` as ``(B, k)``.

    Signs are fixed so the largest-magnitude entry of each vector is positive.
    """
    flat = x.reshape(x.shape[0], -1).astype(np.float64)
    cov = np.cov(flat) if flat.shape[1] > 1 else np.zeros((x.shape[0], x.shape[0]))
    vals, vecs = np.linalg.eigh(np.atleast_2d(cov))
    vecs = vecs[:, np.argsort(vals)[::-1][:k]]
    signs = np.sign(vecs[np.argmax(np.abs(vecs), axis=0), np.arange(vecs.shape[1])])
    return vecs * np.where(signs == 0, 1.0, signs)


def project(x: Tensor, params: ParamSet) -> Tensor:
    """Map ``x[N,C,H,W]`` to three channels; single-band inputs are replicated."""
    x = _lift(x)
    if x.ndim != 4:
        raise DimensionError(f"expected x[N,C,H,W], got shape {x.shape}")
    n, c, h, w = x.shape
    if c == 1:
        return concat([x, x, x], axis=1)
    bands = params.meta("bands")
    if c != bands:
        raise DimensionError(f"encoder expects {bands} bands, got {c}")
    mode = projection_of(params)
    if mode == "Conv":
        avg = x.mean(axis=1, keepdims=True)
        wt = params["proj.weight"]
        mixed = matmul(wt, x.reshape(n, c, h * w)).reshape(n, 3, h, w)
        return mixed + avg
    if mode == "PCA":
        basis = np.stack([pca_basis(img) for img in x.data]).astype(x.dtype)  # (N, B, 3), constant
        return matmul(Tensor(basis.transpose(0, 2, 1)), x.reshape(n, c, h * w)).reshape(n, 3, h, w)
    idx = BAND_SELECTIONS[mode]
    return concat([x[:, i:i + 1] for i in idx], axis=1)


def pooled_features(x: Tensor, params: ParamSet) -> Tensor:
    """Globally averaged stem activations ``[N, widths[-1]]``."""
    h = project(x, params)
    k = 0
    while f"stem.{k}.weight" in params:
        h = relu(conv2d(h, params[f"stem.{k}.weight"], stride=2, padding=1, bias=params[f"stem.{k}.bias"]))
        k += 1
    return h.mean(axis=(2, 3))


def stem_features(x: Tensor, params: ParamSet, modality: str) -> Tensor:
    """Pooled features standardized per modality, then the linear head."""
    pooled = pooled_features(x, params)
    z = (pooled - params[f"meta.norm.{modality}.shift"]) * params[f"meta.norm.{modality}.scale"]
    return matmul(z, params["img.head.weight"]) + params["img.head.bias"]


def calibrate(params: ParamSet, images: dict) -> ParamSet:
    """Data-dependent init of the per-modality feature standardization.

    Pooled stem activations of random conv features share one dominant
    direction across scenes; centering and scaling them with statistics of
    the training images makes scene differences visible to the losses.
    """
    from .ndtensor import no_grad

    with no_grad():
        for m, arr in images.items():
            f = pooled_features(Tensor(arr.astype(params["img.head.weight"].dtype)), params).data
            params[f"meta.norm.{m}.shift"].data = f.mean(axis=0).astype(f.dtype)
            params[f"meta.norm.{m}.scale"].data = (1.0 / np.maximum(f.std(axis=0), 1e-6)).astype(f.dtype)
    return params


def adapt(v: Tensor, params: ParamSet, side: str, modality: str) -> Tensor:
    """Residual bottleneck adapter: ``alpha * A(v) + (1 - alpha) * v``."""
    if modality not in MODALITIES:
        raise ParameterError(f"unknown adapter {modality!r}")
    pre = f"adapter.{side}.{modality}"
    hid = relu(matmul(v, params[f"{pre}.w1"]) + params[f"{pre}.b1"])
    out = matmul(hid, params[f"{pre}.w2"]) + params[f"{pre}.b2"]
    alpha = params[f"{pre}.alpha"]
    return alpha * out + (1.0 - alpha) * v


def encode_images(x: Tensor, params: ParamSet, adapter: str) -> Tensor:
    """Unit-norm embeddings ``[N, dim]`` of a batch of same-size images."""
    return l2_normalize(adapt(stem_features(x, params, adapter), params, "img", adapter), axis=-1)


def raster_tensor(r: Raster, dtype=np.float64) -> Tensor:
    return Tensor(r.data.astype(dtype)[None])


def encode_image(r: Raster, params: ParamSet, adapter: str) -> np.ndarray:
    from .ndtensor import no_grad

    with no_grad():
        dtype = params["img.head.weight"].dtype
        return encode_images(raster_tensor(r, dtype), params, adapter).data[0]


# ---------------------------------------------------------------------------
# text side


def text_features(ids, params: ParamSet) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim != 1 or ids.size == 0:
        raise VocabularyError("empty token sequence")
    if ids.min() < 0 or ids.max() >= len(VOCAB) or ids.size > MAX_TOKENS:
        raise VocabularyError(f"token ids outside the prompt vocabulary: {ids.tolist()}")
    emb = params["txt.embed"][ids]
    scale = params["txt.pos"][: ids.size].reshape(ids.size, 1) + 1.0
    pooled = (emb * scale).mean(axis=0, keepdims=True)
    return matmul(pooled, params["txt.head.weight"]) + params["txt.head.bias"]


def encode_text(ids, params: ParamSet, adapter: str) -> Tensor:
    """Unit-norm ``[dim]`` embedding of one prompt."""
    return l2_normalize(adapt(text_features(ids, params), params, "txt", adapter), axis=-1).reshape(-1)


def encode_prompts(prompts: PromptSet, params: ParamSet) -> dict:
    """Each modality's prompt through its own text adapter."""
    return {m: encode_text(prompts.tokens(m), params, m) for m in MODALITIES}


# ---------------------------------------------------------------------------
# fusion adapters


def _fusion(name: str, a: Tensor, b: Tensor, params: ParamSet) -> Tensor:
    a, b = _lift(a), _lift(b)
    dim = params[f"{name}.b2"].shape[0]
    if a.shape[-1] != dim or b.shape[-1] != dim:
        raise DimensionError(f"{name} expects {dim}-dim inputs, got {a.shape} and {b.shape}")
    single = a.ndim == 1
    if single:
        a, b = a.reshape(1, dim), b.reshape(1, dim)
    h = relu(matmul(concat([a, b], axis=-1), params[f"{name}.w1"]) + params[f"{name}.b1"])
    out = l2_normalize(matmul(h, params[f"{name}.w2"]) + params[f"{name}.b2"], axis=-1)
    return out.reshape(dim) if single else out


def ifa(f_ms: Tensor, f_pan: Tensor, params: ParamSet) -> Tensor:
    return _fusion("ifa", f_ms, f_pan, params)


def tfa(t_ms: Tensor, t_pan: Tensor, params: ParamSet) -> Tensor:
    return _fusion("tfa", t_ms, t_pan, params)


def temperatures(params: ParamSet) -> tuple:
    return params["log_tau_c"].exp(), params["log_tau_i"].exp()
