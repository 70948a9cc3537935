import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from panlang.exceptions import FormatError, ParameterError, TruncationError
from panlang.rasters import (
    HEADER,
    Raster,
    export_preview,
    raster_from_bytes,
    raster_to_bytes,
    read_raster,
    synth_scene,
    write_raster,
)


def test_raster_clamps_and_freezes():
    r = Raster(np.array([[[-0.5, 0.5], [1.5, 0.25]]]))
    np.testing.assert_array_equal(r.data, np.array([[[0.0, 0.5], [1.0, 0.25]]], dtype=np.float32))
    assert r.data.dtype == np.float32
    assert (r.width, r.height, r.bands) == (2, 2, 1)
    assert r.data.size == r.width * r.height * r.bands
    with pytest.raises(ValueError):
        r.data[0, 0, 0] = 0.3


def test_raster_rejects_nan():
    with pytest.raises(ParameterError):
        Raster(np.full((1, 2, 2), np.nan))


def test_synth_scene_contract():
    s = synth_scene(0, 64, 4)
    assert s.hr_ms.shape == (4, 64, 64)
    assert s.hr_ms.data.min() >= 0 and s.hr_ms.data.max() <= 1
    np.testing.assert_array_equal(s.hr_ms.data, synth_scene(0, 64, 4).hr_ms.data)
    assert np.any(s.hr_ms.data != synth_scene(1, 64, 4).hr_ms.data)
    assert synth_scene(3, 32, 8).hr_ms.shape == (8, 32, 32)


def test_synth_scene_rejections():
    with pytest.raises(ParameterError):
        synth_scene(0, 62, 4)
    with pytest.raises(ParameterError):
        synth_scene(0, 64, 5)


def test_synth_scene_bands_correlated():
    d = synth_scene(4, 64, 4).hr_ms.data.reshape(4, -1)
    c = np.corrcoef(d)
    assert np.mean(c[~np.eye(4, dtype=bool)]) > 0.2


def test_file_round_trip(tmp_path):
    r = synth_scene(5, 32, 4).hr_ms
    write_raster(r, tmp_path / "a.panr")
    back = read_raster(tmp_path / "a.panr")
    assert back.data.tobytes() == r.data.tobytes()


def test_header_layout():
    r = Raster(np.zeros((3, 2, 5)))
    buf = raster_to_bytes(r)
    assert buf[:4] == b"PANR"
    assert HEADER.unpack(buf[:HEADER.size])[1:] == (5, 2, 3, 0)
    assert len(buf) == HEADER.size + 4 * 30


def test_bad_magic():
    buf = bytearray(raster_to_bytes(Raster(np.zeros((1, 2, 2)))))
    buf[:4] = b"XXXX"
    with pytest.raises(FormatError) as exc:
        raster_from_bytes(bytes(buf))
    assert "offset 0" in str(exc.value)


def test_truncated_payload():
    buf = raster_to_bytes(Raster(np.zeros((1, 4, 4))))
    with pytest.raises(TruncationError):
        raster_from_bytes(buf[:-3])
    with pytest.raises(TruncationError):
        raster_from_bytes(buf[:10])


def test_dimension_overflow_rejected():
    buf = HEADER.pack(b"PANR", 1 << 20, 1 << 20, 8, 0)
    with pytest.raises(FormatError):
        raster_from_bytes(buf)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 8), st.integers(1, 9), st.integers(1, 9), st.integers(0, 2**31 - 1))
def test_round_trip_property(bands, h, w, seed):
    r = Raster(np.random.default_rng(seed).random((bands, h, w)))
    assert raster_from_bytes(raster_to_bytes(r)).data.tobytes() == r.data.tobytes()


def test_preview_gray_and_rgb():
    pan = Raster(np.random.default_rng(0).random((1, 6, 7)))
    pgm = export_preview(pan, "gray")
    assert pgm.startswith(b"P5\n7 6\n255\n") and len(pgm) == len(b"P5\n7 6\n255\n") + 42
    ms = Raster(np.random.default_rng(1).random((4, 6, 7)))
    ppm = export_preview(ms, (2, 1, 0))
    assert ppm.startswith(b"P6\n7 6\n255\n")


def test_preview_constant_is_mid_gray():
    data = export_preview(Raster(np.full((1, 4, 4), 0.3)), "gray")
    assert set(data[len(b"P5\n4 4\n255\n"):]) == {128}


def test_preview_channel_swap():
    ms = Raster(np.random.default_rng(2).random((4, 5, 5)))
    head = len(b"P6\n5 5\n255\n")
    a = np.frombuffer(export_preview(ms, (2, 1, 0))[head:], np.uint8).reshape(5, 5, 3)
    b = np.frombuffer(export_preview(ms, (0, 1, 2))[head:], np.uint8).reshape(5, 5, 3)
    np.testing.assert_array_equal(a, b[:, :, ::-1])


def test_preview_index_out_of_range():
    with pytest.raises(ParameterError):
        export_preview(Raster(np.zeros((4, 3, 3))), (0, 1, 4))
