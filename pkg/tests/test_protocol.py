import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import reflect

from panlang.exceptions import DimensionError, ParameterError
from panlang.metrics import ergas, mpsnr, sam
from panlang.protocol import (
    BDSDPansharpener,
    ExpPansharpener,
    SensorModel,
    WaldDegrader,
    bdsd_coefficients,
    bdsd_fuse,
    degrade_pan,
    degrade_plane,
    exp_upsample,
    make_triplet,
    mtf_degrade,
    mtf_sigma,
    mtf_taps,
    reduce_triplet,
    synth_pan,
    upsample_array,
)
from panlang.rasters import Raster, synth_scene


def sensor(bands=4):
    return SensorModel.default(bands)


def test_sensor_validation():
    with pytest.raises(ParameterError):
        SensorModel((0.3, 1.2), (0.5, 0.5))
    with pytest.raises(ParameterError):
        SensorModel((0.3, 0.3), (0.6, 0.6))
    with pytest.raises(ParameterError):
        SensorModel((0.3, 0.3), (1.2, -0.2))
    assert abs(sum(sensor(8).pan_weights) - 1) < 1e-6


def test_mtf_sigma_hits_nyquist_gain():
    # Fourier response of a sampled Gaussian at the LR Nyquist frequency
    for g in (0.15, 0.3, 0.5):
        s = mtf_sigma(g, 4)
        assert abs(math.exp(-2 * math.pi**2 * s * s / 64) - g) < 1e-12


def test_mtf_constant_preserved():
    hr = Raster(np.full((4, 64, 64), 0.42))
    lr = mtf_degrade(hr, sensor())
    assert lr.shape == (4, 16, 16)
    np.testing.assert_allclose(lr.data, 0.42, atol=1e-6)


def test_mtf_impulse_matches_dense_oracle():
    hr = np.zeros((1, 32, 32))
    hr[0, 16, 16] = 1.0
    model = SensorModel((0.3,), (1.0,))
    lr = mtf_degrade(Raster(hr), model).data[0].astype(np.float64)
    taps = np.asarray(mtf_taps(0.3, 4))
    half = len(taps) // 2
    k2 = np.outer(taps, taps)
    dense = np.zeros((32, 32))
    for y in range(32):
        for x in range(32):
            s = 0.0
            for u in range(len(taps)):
                for v in range(len(taps)):
                    s += k2[u, v] * hr[0, reflect(y + u - half, 32), reflect(x + v - half, 32)]
            dense[y, x] = s
    np.testing.assert_allclose(lr, dense[::4, ::4], atol=1e-7)


def test_mtf_rejects_indivisible():
    with pytest.raises(DimensionError):
        mtf_degrade(Raster(np.zeros((4, 30, 32))), sensor())


def test_synth_pan_examples():
    band = np.random.default_rng(0).random((8, 8))
    same = Raster(np.stack([band] * 4))
    np.testing.assert_allclose(synth_pan(same, SensorModel((0.3,) * 4, (0.1, 0.2, 0.3, 0.4))).data[0],
                               band.astype(np.float32), atol=1e-6)
    r = Raster(np.random.default_rng(1).random((4, 8, 8)))
    sel = synth_pan(r, SensorModel((0.3,) * 4, (1.0, 0.0, 0.0, 0.0)))
    np.testing.assert_array_equal(sel.data[0], r.data[0])
    mean = synth_pan(r, sensor()).data[0].astype(np.float64)
    oracle = np.array([[sum(float(r.data[b, y, x]) for b in range(4)) / 4 for x in range(8)] for y in range(8)])
    np.testing.assert_allclose(mean, oracle.astype(np.float32), atol=1e-7)
    with pytest.raises(ParameterError):
        synth_pan(r, sensor(8))


def test_make_triplet_contract():
    s = synth_scene(0, 64, 4)
    t = make_triplet(s, sensor())
    assert t.lrms.shape == (4, 16, 16) and t.pan.shape == (1, 64, 64)
    assert t.pseudo_hrms.shape == (4, 64, 64)
    assert make_triplet(s, sensor(), with_pseudo=False).pseudo_hrms is None
    t2 = make_triplet(s, sensor())
    for a, b in ((t.lrms, t2.lrms), (t.pan, t2.pan), (t.pseudo_hrms, t2.pseudo_hrms)):
        assert a.data.tobytes() == b.data.tobytes()


def test_bdsd_no_detail_limit():
    # a PAN equal to its own low-pass carries no detail to inject
    lr = Raster(np.full((4, 16, 16), 0.3) + 0.01 * np.arange(4)[:, None, None])
    pan = Raster(np.full((1, 64, 64), 0.31))
    out = bdsd_fuse(lr, pan, sensor())
    assert out.shape == (4, 64, 64)
    np.testing.assert_allclose(out.data, exp_upsample(lr).data, atol=1e-3)


def test_bdsd_coefficients_match_normal_equations():
    rng = np.random.default_rng(2)
    lr = Raster(rng.random((4, 8, 8)))
    pan = Raster(rng.random((1, 32, 32)))
    model = sensor()
    theta = bdsd_coefficients(lr, pan, model)
    # brute force: explicit per-band normal equations built element by element
    up = upsample_array(lr.data, 4)
    pl = degrade_pan(pan, model).data[0].astype(np.float64)
    cols = [pl.ravel()] + [degrade_plane(up[k], 0.3, 4).ravel() for k in range(4)]
    A = np.zeros((5, 5))
    for i in range(5):
        for j in range(5):
            A[i, j] = sum(cols[i] * cols[j])
    A += 1e-6 * np.eye(5)
    for b in range(4):
        h = lr.data[b].astype(np.float64).ravel() - cols[1 + b]
        rhs = np.array([sum(c * h) for c in cols])
        np.testing.assert_allclose(theta[b], np.linalg.solve(A, rhs), atol=1e-6)


def test_bdsd_singular_design_never_crashes():
    lr = Raster(np.zeros((4, 8, 8)))
    pan = Raster(np.zeros((1, 32, 32)))
    out = bdsd_fuse(lr, pan, sensor())
    assert np.all(np.isfinite(out.data))


def test_exp_upsample_examples():
    c = exp_upsample(Raster(np.full((4, 16, 16), 0.6)))
    assert c.shape == (4, 64, 64)
    np.testing.assert_allclose(c.data, 0.6, atol=1e-6)
    base = np.random.default_rng(3).uniform(0.1, 0.5, (8, 8))
    ratios = np.array([1.0, 0.5, 1.5, 1.8])
    up = exp_upsample(Raster(ratios[:, None, None] * base[None])).data.astype(np.float64)
    ok = up[0] > 0.05
    for b in range(4):
        np.testing.assert_allclose(up[b][ok] / up[0][ok], ratios[b], rtol=1e-5)


def test_reduce_triplet_reference():
    t = make_triplet(synth_scene(4, 64, 4), sensor(), with_pseudo=False)
    r = reduce_triplet(t, sensor())
    assert r.lrms.shape == (4, 4, 4) and r.pan.shape == (1, 16, 16)
    assert r.reference is t.lrms


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_pseudo_scores_finite(seed):
    s = synth_scene(seed, 32, 4)
    t = make_triplet(s, sensor())
    for v in (mpsnr(t.pseudo_hrms, s.hr_ms), ergas(t.pseudo_hrms, s.hr_ms), sam(t.pseudo_hrms, s.hr_ms)):
        assert math.isfinite(v)


@pytest.mark.parametrize("seed", range(5))
def test_bdsd_consistency_bound(seed):
    model = sensor()
    t = make_triplet(synth_scene(seed, 64, 4), model)
    def rmse(fused):
        d = mtf_degrade(fused, model).data.astype(np.float64) - t.lrms.data
        return np.sqrt((d**2).reshape(4, -1).mean(axis=1))
    assert np.all(rmse(t.pseudo_hrms) <= 2 * rmse(exp_upsample(t.lrms)) + 1e-7)


def test_estimators():
    scenes = [synth_scene(i, 32, 4) for i in range(3)]
    trip = WaldDegrader(with_pseudo=False).fit_transform(scenes)
    assert len(trip) == 3 and trip[0].pseudo_hrms is None
    assert BDSDPansharpener().fit(trip).predict(trip)[0].shape == (4, 32, 32)
    assert ExpPansharpener().predict(trip)[0].shape == (4, 32, 32)
    assert ExpPansharpener(ratio=4).get_params() == {"ratio": 4}
