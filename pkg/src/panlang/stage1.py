"""Image/text alignment of the toy encoder.

The objective is ``L_inter + L_intra + L_fusion``:

* ``L_inter`` binds each image type to its prompt: every MS / PAN / HRMS
  image is classified against the three prompt embeddings.
* ``L_intra`` pulls the three images of one scene together and pushes
  other scenes away, which keeps same-type embeddings diverse.
* ``L_fusion`` asks the fusion adapters to map (MS, PAN) embeddings onto
  the HRMS image embedding and the HRMS prompt embedding.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator

from .checkpoint import ParamSet
from .encoder import (
    MODALITIES,
    EmbeddingBatch,
    calibrate,
    PromptSet,
    encode_images,
    encode_prompts,
    ifa,
    init_encoder,
    temperatures,
    tfa,
)
from .exceptions import ContractError, DegenerateInputError, DivergenceError, ParameterError
from .ndtensor import Adam, Tensor, backward, cross_entropy, logsumexp, matmul, mean, no_grad, softplus, stack, tabs
from .ndtensor.tensor import getitem
from .validation import check_triplets

LOG_HEADER = ("iteration", "L_inter", "L_intra", "L_fusion", "L_s1")


# ---------------------------------------------------------------------------
# losses


def loss_inter(images: dict, texts: dict, tau_c) -> Tensor:
    """Mean over MS / PAN / HRMS of the ``N x 3`` image-to-prompt cross-entropy."""
    tmat = stack([texts[m] for m in MODALITIES], axis=0)
    total = None
    for k, m in enumerate(MODALITIES):
        f = images[m]
        if f.shape[0] == 0:
            raise DegenerateInputError("empty batch")
        logits = matmul(f, tmat.T) / tau_c
        term = cross_entropy(logits, np.full(f.shape[0], k))
        total = term if total is None else total + term
    return total * (1.0 / len(MODALITIES))


def intra_pairs(scene_ids: np.ndarray) -> tuple:
    """Anchor/positive index pairs (same scene, different row) and the negative mask."""
    ids = np.asarray(scene_ids)
    same = ids[:, None] == ids[None, :]
    pos = same & ~np.eye(ids.size, dtype=bool)
    anchors, positives = np.nonzero(pos)
    return anchors, positives, ~same


def loss_intra(features: Tensor, scene_ids, tau_i) -> Tensor:
    """Scene-level contrastive loss over all image rows.

    Each (anchor, same-scene positive) pair is scored against the rows of
    every other scene: ``-log(e^{s_ap} / (e^{s_ap} + sum_n e^{s_an}))``.
    """
    ids = np.asarray(scene_ids)
    if np.unique(ids).size < 2:
        raise DegenerateInputError("intra-modal loss needs at least two scenes for negatives")
    anchors, positives, neg = intra_pairs(ids)
    if anchors.size == 0:
        raise DegenerateInputError("no same-scene positive pairs in batch")
    sim = matmul(features, features.T) / tau_i
    lse_neg = logsumexp(sim, axis=1, mask=neg)
    s_pos = getitem(sim, (anchors, positives))
    return mean(softplus(getitem(lse_neg, anchors) - s_pos))


def loss_fusion(t_fuse: Tensor, t_hrms: Tensor, f_fuse: Tensor, f_hrms: Tensor) -> Tensor:
    """``|T_fuse - T_hrms|_1`` plus the batch mean of ``|F_fuse - F_hrms|_1``."""
    if f_hrms is None or t_hrms is None:
        raise ContractError("fusion alignment needs HRMS embeddings")
    text = tabs(t_fuse - t_hrms).sum()
    image = tabs(f_fuse - f_hrms).sum(axis=-1).mean()
    return text + image


# ---------------------------------------------------------------------------
# batch assembly


@dataclass
class Stage1Config:
    iterations: int = 1000
    batch_size: int = 32
    lr: float = 0.003
    seed: int = 0
    prompt_variant: str = "Wald"
    projection: str = "Conv"
    dim: int = 64
    w_inter: float = 1.0
    w_intra: float = 1.0
    w_fusion: float = 1.0
    augment: bool = True
    freeze_stem: bool = True
    dtype: str = "float32"


def stack_triplets(triplets, dtype=np.float32) -> dict:
    """Arrays ``[S, C, H, W]`` per image type; HRMS rows are the pseudo references."""
    for t in triplets:
        if t.pseudo_hrms is None:
            raise ContractError(f"scene {t.scene_id} has no pseudo-HRMS reference")
    return {
        "MS": np.stack([t.lrms.data for t in triplets]).astype(dtype),
        "PAN": np.stack([t.pan.data for t in triplets]).astype(dtype),
        "HRMS": np.stack([t.pseudo_hrms.data for t in triplets]).astype(dtype),
        "scene_id": np.array([t.scene_id for t in triplets]),
    }


def dihedral(x: np.ndarray, k: int) -> np.ndarray:
    """One of the eight square symmetries applied to the last two axes."""
    if k >= 4:
        x = x[..., ::-1]
    return np.rot90(x, k % 4, axes=(-2, -1))


def augment_batch(arrays: dict, idx: np.ndarray, rng) -> dict:
    ks = rng.integers(0, 8, size=idx.size)
    out = {"scene_id": arrays["scene_id"][idx]}
    for m in MODALITIES:
        out[m] = np.ascontiguousarray(np.stack([dihedral(arrays[m][i], k) for i, k in zip(idx, ks)]))
    return out


def stage1_objective(params: ParamSet, batch: dict, prompts: PromptSet, cfg: Stage1Config | None = None):
    """Total loss tensor and a dict of the three terms for one batch."""
    cfg = cfg or Stage1Config()
    images = {m: encode_images(Tensor(batch[m]), params, m) for m in MODALITIES}
    texts = encode_prompts(prompts, params)
    tau_c, tau_i = temperatures(params)
    l_inter = loss_inter(images, texts, tau_c)
    rows = stack([images[m] for m in MODALITIES], axis=0).reshape(-1, images["MS"].shape[1])
    ids = np.tile(batch["scene_id"], len(MODALITIES))
    l_intra = loss_intra(rows, ids, tau_i)
    f_fuse = ifa(images["MS"], images["PAN"], params)
    t_fuse = tfa(texts["MS"], texts["PAN"], params)
    l_fusion = loss_fusion(t_fuse, texts["HRMS"], f_fuse, images["HRMS"])
    total = cfg.w_inter * l_inter + cfg.w_intra * l_intra + cfg.w_fusion * l_fusion
    return total, {"L_inter": l_inter, "L_intra": l_intra, "L_fusion": l_fusion}


# ---------------------------------------------------------------------------
# training


FROZEN_PREFIXES = ("stem.", "img.head.")


def trainable(params: ParamSet, freeze_stem: bool = True) -> list:
    """Parameters updated during alignment.

    With ``freeze_stem`` the image stem and head keep their initial values
    and adaptation happens through the input projection, the adapters, the
    text branch, the fusion adapters and the temperatures.
    """
    return [t for n, t in params.named_parameters()
            if not (freeze_stem and n.startswith(FROZEN_PREFIXES))]


@dataclass
class Stage1Result:
    params: ParamSet
    log: list = field(default_factory=list)


def train_stage1(triplets, cfg: Stage1Config | None = None, params: ParamSet | None = None,
                 progress=None) -> Stage1Result:
    """Minimize the alignment objective with Adam; deterministic per seed.

    With ``lr == 0`` the loss is still evaluated and logged every iteration
    but no update is applied.
    """
    cfg = cfg or Stage1Config()
    triplets = check_triplets(triplets, need_pseudo=True)
    if cfg.iterations < 0:
        raise ParameterError("iterations must be >= 0")
    if cfg.lr < 0:
        raise ParameterError("learning rate must be >= 0")
    if len(triplets) < cfg.batch_size:
        raise ParameterError(f"dataset has {len(triplets)} scenes, fewer than batch size {cfg.batch_size}")
    dtype = np.dtype(cfg.dtype)
    bands = triplets[0].lrms.bands
    arrays = stack_triplets(triplets, dtype)
    if params is None:
        params = calibrate(init_encoder(bands, cfg.projection, cfg.dim, seed=cfg.seed).astype(dtype),
                           {m: arrays[m] for m in MODALITIES})
    params = params.astype(dtype)
    prompts = PromptSet.for_variant(cfg.prompt_variant)
    rng = np.random.default_rng(cfg.seed)
    opt = Adam(trainable(params, cfg.freeze_stem), lr=cfg.lr) if cfg.lr > 0 else None
    n = len(triplets)
    log = []
    for it in range(1, cfg.iterations + 1):
        idx = rng.permutation(n)[: cfg.batch_size]
        if cfg.augment:
            batch = augment_batch(arrays, idx, rng)
        else:
            batch = {m: arrays[m][idx] for m in (*MODALITIES, "scene_id")}
        params.zero_grad()
        total, parts = stage1_objective(params, batch, prompts, cfg)
        values = [float(parts[k].item()) for k in ("L_inter", "L_intra", "L_fusion")] + [float(total.item())]
        if not all(math.isfinite(v) for v in values):
            raise DivergenceError(f"non-finite alignment loss at iteration {it}: {values}",
                                  iteration=it, last_good=params)
        log.append((it, *values))
        if opt is not None:
            backward(total)
            snapshot = [p.data for p in opt.params]
            opt.step()
            if not all(np.all(np.isfinite(p.data)) for p in opt.params):
                for p, d in zip(opt.params, snapshot):
                    p.data = d
                raise DivergenceError(f"non-finite parameters after iteration {it}",
                                      iteration=it, last_good=params)
        if progress is not None:
            progress(it, values)
    params.zero_grad()
    return Stage1Result(params.astype(np.float32), log)


def write_log(rows, path, header=LOG_HEADER) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([row[0]] + [repr(float(v)) for v in row[1:]])


# ---------------------------------------------------------------------------
# evaluation of an aligned encoder


def embed_triplets(params: ParamSet, triplets, dtype=np.float64) -> EmbeddingBatch:
    """Image embeddings of every MS / PAN / HRMS patch, each through its own adapter."""
    params = params.astype(dtype)
    arrays = stack_triplets(triplets, dtype)
    vecs, tags, ids = [], [], []
    with no_grad():
        for m in MODALITIES:
            vecs.append(encode_images(Tensor(arrays[m]), params, m).data)
            tags += [m] * len(triplets)
            ids.append(arrays["scene_id"])
    return EmbeddingBatch(np.concatenate(vecs), tuple(tags), np.concatenate(ids))


def prompt_matrix(params: ParamSet, prompts: PromptSet, dtype=np.float64) -> np.ndarray:
    params = params.astype(dtype)
    with no_grad():
        t = encode_prompts(prompts, params)
    return np.stack([t[m].data for m in MODALITIES])


def classify_modalities(params: ParamSet, triplets, prompts: PromptSet | None = None) -> tuple:
    """Nearest-prompt labels and the true labels of every held-out image."""
    prompts = prompts or PromptSet.for_variant("Wald")
    emb = embed_triplets(params, triplets)
    sims = emb.vectors @ prompt_matrix(params, prompts).T
    pred = np.array([MODALITIES[k] for k in np.argmax(sims, axis=1)])
    return pred, np.array(emb.modality)


def modality_accuracy(params: ParamSet, triplets, prompts: PromptSet | None = None) -> float:
    pred, true = classify_modalities(params, triplets, prompts)
    return float(np.mean(pred == true))


def same_type_similarity(params: ParamSet, triplets) -> dict:
    """Mean pairwise cosine between embeddings of distinct scenes, per image type."""
    emb = embed_triplets(params, triplets)
    tags = np.array(emb.modality)
    out = {}
    for m in MODALITIES:
        v = emb.vectors[tags == m]
        g = v @ v.T
        iu = np.triu_indices(len(v), k=1)
        out[m] = float(g[iu].mean())
    return out


class LanguageAligner(BaseEstimator):
    """Estimator wrapper around :func:`train_stage1`."""

    def __init__(self, iterations: int = 1000, batch_size: int = 32, lr: float = 0.003, seed: int = 0,
                 prompt_variant: str = "Wald", projection: str = "Conv", dim: int = 64, augment: bool = True):
        self.iterations = iterations
        self.batch_size = batch_size
        self.lr = lr
        self.seed = seed
        self.prompt_variant = prompt_variant
        self.projection = projection
        self.dim = dim
        self.augment = augment

    def _config(self) -> Stage1Config:
        return Stage1Config(iterations=self.iterations, batch_size=self.batch_size, lr=self.lr, seed=self.seed,
                            prompt_variant=self.prompt_variant, projection=self.projection, dim=self.dim,
                            augment=self.augment)

    def fit(self, X, y=None, params: ParamSet | None = None):
        res = train_stage1(X, self._config(), params)
        self.params_, self.log_ = res.params, res.log
        return self

    def transform(self, X) -> EmbeddingBatch:
        self._check_fitted()
        return embed_triplets(self.params_, check_triplets(X, need_pseudo=True))

    def predict(self, X) -> np.ndarray:
        self._check_fitted()
        return classify_modalities(self.params_, check_triplets(X, need_pseudo=True),
                                   PromptSet.for_variant(self.prompt_variant))[0]

    def score(self, X, y=None) -> float:
        self._check_fitted()
        return modality_accuracy(self.params_, check_triplets(X, need_pseudo=True),
                                 PromptSet.for_variant(self.prompt_variant))

    def _check_fitted(self):
        from sklearn.utils.validation import check_is_fitted

        check_is_fitted(self, "params_")


__all__ = [
    "LOG_HEADER", "LanguageAligner", "Stage1Config", "Stage1Result", "augment_batch", "classify_modalities",
    "dihedral", "embed_triplets", "intra_pairs", "loss_fusion", "loss_inter", "loss_intra",
    "modality_accuracy", "prompt_matrix", "same_type_similarity", "stack_triplets", "stage1_objective",
    "train_stage1", "write_log",
]
