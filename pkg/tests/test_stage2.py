import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from panlang.encoder import PromptSet, init_encoder
from panlang.exceptions import (
    DegenerateInputError,
    DependencyError,
    DimensionError,
    ParameterError,
)
from panlang.metrics import q_map, qnr
from panlang.ndtensor import Tensor, grad_check, no_grad
from panlang.protocol import (
    SensorModel,
    degrade_pan,
    exp_upsample,
    make_triplet,
)
from panlang.rasters import Raster, synth_scene
from panlang.stage2 import (
    ABLATIONS,
    LanguageGuidedPansharpener,
    PretrainConfig,
    ReducedResolutionPansharpener,
    SemanticContext,
    Stage2Config,
    backbone_forward,
    backbone_tensor,
    directional_loss,
    init_backbone,
    log_header,
    loss_pseudo,
    loss_qnr,
    loss_semantic,
    loss_spat,
    loss_spec,
    phi,
    prepare,
    pretrain_backbone_reduced,
    q_tensor,
    qnr_reference,
    qnr_terms,
    sample_crops,
    stage2_objective,
    train_stage2,
)

TOL = 1e-4


def rng(seed):
    return np.random.default_rng(seed)


@pytest.fixture(scope="module")
def small():
    model = SensorModel.default(4)
    return [make_triplet(synth_scene(s, 32, 4), model) for s in range(4)]


@pytest.fixture(scope="module")
def encoder():
    return init_encoder(4, seed=1)


def quick(**kw):
    base = dict(iterations=3, batch_size=2, patch=24, lr=0.001)
    base.update(kw)
    return Stage2Config(**base)


# -- backbone ---------------------------------------------------------------


def test_initial_output_is_upsampled_lrms(small):
    t = small[0]
    p = init_backbone(4)
    np.testing.assert_array_equal(backbone_forward(t.lrms, t.pan, p).data, exp_upsample(t.lrms).data)


def test_backbone_rejects_band_mismatch(small):
    with pytest.raises(DimensionError):
        backbone_forward(small[0].lrms, small[0].pan, init_backbone(8))


def test_phi_initial_is_band_mean():
    x = rng(0).random((2, 4, 6, 6))
    p = init_backbone(4).astype(np.float64)
    np.testing.assert_allclose(phi(Tensor(x), p).data[:, 0], x.mean(axis=1), atol=1e-12)


# -- loss values ---------------------------------------------------------------


def test_loss_spec_zero_when_consistent():
    from panlang.ndtensor import resize_bicubic

    out = Tensor(rng(1).random((1, 4, 24, 24)))
    ms = resize_bicubic(out, 4, "down").data
    assert abs(loss_spec(out, ms).item()) < 1e-12
    with pytest.raises(DimensionError):
        loss_spec(out, np.zeros((1, 4, 5, 5)))


def test_loss_spat_zero_when_pan_matches():
    p = init_backbone(4).astype(np.float64)
    out = Tensor(rng(2).random((1, 4, 8, 8)))
    pan = out.data.mean(axis=1, keepdims=True)
    assert abs(loss_spat(out, pan, p).item()) < 1e-12


def test_q_tensor_matches_metric_q():
    x, y = rng(3).random((2, 4, 16, 16)), rng(4).random((2, 4, 16, 16))
    np.testing.assert_allclose(q_tensor(Tensor(x), y, 8).data, q_map(x, y, 8), atol=1e-12)


@pytest.mark.parametrize("seed", range(3))
def test_loss_qnr_matches_metric(seed):
    model = SensorModel.default(4)
    t = make_triplet(synth_scene(seed, 64, 4), model, with_pseudo=False)
    fused = Raster(np.clip(exp_upsample(t.lrms).data + 0.02 * rng(seed).normal(size=(4, 64, 64)), 0, 1))
    pan_lr = degrade_pan(t.pan, model).data[None]
    q_mm, q_mp = qnr_reference(t.lrms.data[None], pan_lr)
    got = loss_qnr(Tensor(fused.data[None].astype(np.float64)), t.pan.data[None].astype(np.float64), q_mm, q_mp)
    dl, ds, q = qnr(fused, t.lrms, t.pan, model)
    assert abs(got.item() - (1 - q)) < 1e-6
    dlt, dst = qnr_terms(Tensor(fused.data[None].astype(np.float64)), t.pan.data[None].astype(np.float64), q_mm, q_mp)
    assert abs(dlt.data[0] - dl) < 1e-6 and abs(dst.data[0] - ds) < 1e-6


def test_loss_pseudo_examples():
    out = Tensor(np.full((1, 2, 4, 4), 0.5))
    assert abs(loss_pseudo(out, np.full((1, 2, 4, 4), 0.25)).item() - 0.25) < 1e-15
    with pytest.raises(DependencyError):
        loss_pseudo(out, None)


def test_directional_loss_examples():
    e0, e1 = np.array([[1.0, 0.0]]), np.array([[0.0, 1.0]])
    assert abs(directional_loss(Tensor(e0), e0, Tensor(e0), e0).item()) < 1e-12
    assert abs(directional_loss(Tensor(e0), e1, Tensor(e0), e1).item() - 1) < 1e-12
    assert abs(directional_loss(Tensor(e0), -e0, Tensor(e0), -e0).item() - 2) < 1e-12
    with pytest.raises(DegenerateInputError):
        directional_loss(Tensor(np.zeros((1, 2))), e0, Tensor(e0), e0)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_directional_loss_bounded(seed):
    v = rng(seed).normal(size=(4, 3, 8))
    d = directional_loss(Tensor(v[0]), v[1], Tensor(v[2]), v[3]).data
    assert np.all(d >= -1e-12) and np.all(d <= 2 + 1e-12)


def test_semantic_skip_step(encoder, small):
    ctx = SemanticContext.build(encoder, PromptSet.for_variant("Wald"), np.float64)
    x = small[0].pseudo_hrms.data[None].astype(np.float64)
    f = ctx.embed(x, "HRMS")
    with no_grad():
        loss, skipped = loss_semantic(Tensor(x), f, f, ctx)
    assert skipped == 1 and loss.item() == 0.0


# -- gradients -----------------------------------------------------------------


def test_grad_loss_spec():
    ms = rng(5).random((1, 2, 6, 6))
    assert grad_check(lambda t: loss_spec(t, ms), rng(6).random((1, 2, 24, 24)), max_coords=60) < TOL


def test_grad_loss_spat():
    p = init_backbone(2).astype(np.float64)
    p["phi.weight"].data = np.array([[0.3, 0.7]])
    pan = rng(7).random((1, 1, 8, 8))
    assert grad_check(lambda t: loss_spat(t, pan, p), rng(8).random((1, 2, 8, 8))) < TOL


def test_grad_loss_qnr():
    lrms, pan_lr = rng(9).random((1, 3, 2, 2)), rng(10).random((1, 1, 2, 2))
    q_mm, q_mp = qnr_reference(lrms, pan_lr, 8)
    pan = rng(11).random((1, 1, 8, 8))
    assert grad_check(lambda t: loss_qnr(t, pan, q_mm, q_mp, 8), rng(12).random((1, 3, 8, 8))) < TOL


def test_grad_loss_pseudo():
    ref = rng(13).random((1, 2, 8, 8))
    assert grad_check(lambda t: loss_pseudo(t, ref), rng(14).random((1, 2, 8, 8))) < TOL


def test_grad_directional_loss():
    v = rng(15).normal(size=(4, 2, 6))
    assert grad_check(lambda t: directional_loss(t, v[1], Tensor(v[2]), v[3]).mean(), v[0]) < TOL


def test_grad_semantic_loss(encoder):
    enc = encoder.astype(np.float64)
    enc["proj.weight"].data = rng(16).normal(0, 0.5, (3, 4))
    ctx = SemanticContext.build(enc, PromptSet.for_variant("Wald"), np.float64)
    src = rng(17).random((1, 4, 8, 8))
    f_ms, f_pan = ctx.embed(src, "MS"), ctx.embed(src[:, :1], "PAN")
    assert grad_check(lambda t: loss_semantic(t, f_ms, f_pan, ctx)[0], rng(18).random((1, 4, 8, 8)),
                      max_coords=40) < TOL


def test_grad_backbone_weights():
    p = init_backbone(2, widths=(3, 2), kernels=(3, 3, 3)).astype(np.float64)
    p["bb.2.weight"].data = rng(19).normal(0, 0.1, p["bb.2.weight"].shape)
    up, pan = rng(20).random((1, 2, 8, 8)), rng(21).random((1, 1, 8, 8))

    def f(w):
        p["bb.0.weight"] = w
        out = backbone_tensor(Tensor(up), Tensor(pan), p)
        return (out * out).mean()

    assert grad_check(f, p["bb.0.weight"].data.copy(), max_coords=30) < TOL


# -- data ------------------------------------------------------------------------


def test_crops_aligned(small):
    model = SensorModel.default(4)
    arrays = prepare(small, model, None, np.float64)
    idx = np.array([1, 2])
    c = sample_crops(arrays, idx, 16, 4, rng(0))
    assert c["up"].shape == (2, 4, 16, 16) and c["lrms"].shape == (2, 4, 4, 4) and c["ref"] is None
    for k, i in enumerate(idx):
        # locate the LR crop, then the PAN-scale crops must sit at four times that offset
        hits = [(y, x) for y in range(5) for x in range(5)
                if np.array_equal(arrays.lrms[i, :, y:y + 4, x:x + 4], c["lrms"][k])]
        assert len(hits) == 1
        y, x = hits[0]
        np.testing.assert_array_equal(c["up"][k], arrays.up[i, :, 4 * y:4 * y + 16, 4 * x:4 * x + 16])
        np.testing.assert_array_equal(c["pan"][k], arrays.pan[i, :, 4 * y:4 * y + 16, 4 * x:4 * x + 16])
        np.testing.assert_array_equal(c["pan_lr"][k], arrays.pan_lr[i, :, y:y + 4, x:x + 4])


# -- configuration -----------------------------------------------------------------


def test_ablation_rows():
    assert len(ABLATIONS) == 5
    for label in ABLATIONS:
        assert Stage2Config.ablation(label).label() == label
    assert log_header(Stage2Config.ablation("L_unsup")) == ("iteration", "L_spec", "L_spat", "L_QNR", "total")
    with pytest.raises(ParameterError):
        Stage2Config.ablation("nope")


# -- training ------------------------------------------------------------------------


def test_objective_is_sum_of_terms(small, encoder):
    model = SensorModel.default(4)
    pseudo = init_backbone(4, seed=3)
    cfg = quick(dtype="float64")
    arrays = prepare(small, model, pseudo, np.float64)
    crops = sample_crops(arrays, np.array([0, 1]), 24, 4, rng(1))
    ctx = SemanticContext.build(encoder, PromptSet.for_variant("Wald"), np.float64)
    p = init_backbone(4).astype(np.float64)
    total, terms, _ = stage2_objective(p, crops, cfg, ctx)
    assert set(terms) == {"L_spec", "L_spat", "L_QNR", "L_pseudo", "L_d"}
    assert abs(total.item() - sum(t.item() for t in terms.values())) < 1e-10
    for t in terms.values():
        assert t.item() >= 0


def test_missing_dependencies(small, encoder):
    with pytest.raises(DependencyError):
        train_stage2(small, None, init_backbone(4), quick())
    with pytest.raises(DependencyError):
        train_stage2(small, encoder, None, quick())


def test_training_leaves_encoder_untouched(small, encoder):
    before = encoder.sha256()
    res = train_stage2(small, encoder, init_backbone(4, seed=5), quick())
    assert encoder.sha256() == before
    assert res.header == ("iteration", "L_spec", "L_spat", "L_QNR", "L_pseudo", "L_d", "total")
    assert len(res.log) == 3
    assert all(v >= 0 for row in res.log for v in row[1:])


def test_zero_lr_keeps_weights(small):
    start = init_backbone(4, seed=2)
    res = train_stage2(small, cfg=quick(lr=0.0, use_pseudo=False, use_semantic=False), params=start.copy())
    assert res.params.sha256() == start.sha256()


def test_training_deterministic(small, encoder):
    cfg = quick()
    a = train_stage2(small, encoder, init_backbone(4, seed=5), cfg)
    b = train_stage2(small, encoder, init_backbone(4, seed=5), cfg)
    assert a.params.to_bytes() == b.params.to_bytes() and a.log == b.log


def test_training_moves_weights(small):
    res = train_stage2(small, cfg=quick(use_pseudo=False, use_semantic=False))
    assert res.params.sha256() != init_backbone(4).sha256()


def test_bad_patch(small):
    with pytest.raises(ParameterError):
        train_stage2(small, cfg=quick(patch=18, use_pseudo=False, use_semantic=False))


def test_pretrain_runs_and_is_deterministic(small):
    cfg = PretrainConfig(iterations=3, batch_size=2)
    a, b = pretrain_backbone_reduced(small, cfg), pretrain_backbone_reduced(small, cfg)
    assert a.params.to_bytes() == b.params.to_bytes()
    assert [r[0] for r in a.log] == [1, 2, 3] and all(r[1] >= 0 for r in a.log)


def test_estimators(small, encoder):
    rr = ReducedResolutionPansharpener(iterations=2, batch_size=2).fit(small)
    out = rr.predict(small[:1])
    assert out[0].shape == (4, 32, 32)
    lg = LanguageGuidedPansharpener(encoder=encoder, pseudo=rr.params_, iterations=2, batch_size=2, patch=24)
    assert lg.fit(small).predict(small[:2])[1].shape == (4, 32, 32)
