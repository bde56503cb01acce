import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.signal import fftconvolve

from airtrack.blobs import (
    RADIUS_PER_SCALE,
    BlobConfig,
    Measurement,
    blob_order_key,
    detect_blobs,
    log_response,
    measurements_from_json,
    measurements_to_json,
    principal_axis,
)
from airtrack.errors import IsotropicPointError
from airtrack.phantom import PhantomBranch, PhantomTree, rasterize
from airtrack.volume import Volume
from oracles import ball

SCALES = (1.0, 2.0, 4.0, 8.0, 12.0)


def dense_log_kernel(sigma, radius):
    """sigma^2 * laplacian of the normalized continuous 3D Gaussian, sampled."""
    g = np.indices((2 * radius + 1,) * 3) - float(radius)
    r2 = (g**2).sum(axis=0)
    G = np.exp(-r2 / (2 * sigma**2)) / (2 * math.pi * sigma**2) ** 1.5
    return sigma**2 * G * (r2 / sigma**4 - 3 / sigma**2)


def tube_volume(direction, dims=(40, 40, 40), radius=3.0):
    c = np.array(dims, dtype=float) / 2 - 0.5
    d = np.asarray(direction, dtype=float)
    t = np.arange(-12.0, 12.01, 0.5)
    tree = PhantomTree([PhantomBranch(c + t[:, None] * d, np.full(len(t), radius))])
    return rasterize(tree, dims)


@pytest.fixture(scope="module")
def ball_volume():
    return Volume(ball((40, 40, 40), (20, 20, 20), 6))


# -- log_response ------------------------------------------------------------

def test_log_constant_is_zero():
    v = Volume(np.full((12, 12, 12), 0.7))
    np.testing.assert_allclose(log_response(v, 2.0).data, 0.0, atol=1e-12)


def test_log_bright_blob_negative_at_center():
    g = np.indices((21, 21, 21)) - 10.0
    v = Volume(np.exp(-(g**2).sum(axis=0) / 8.0))
    assert log_response(v, 2.0).data[10, 10, 10] < 0


@pytest.mark.parametrize("sigma", [1.0, 2.0, 3.0])
def test_log_impulse_matches_dense_oracle(sigma):
    n = 41
    data = np.zeros((n, n, n))
    data[20, 20, 20] = 1.0
    out = log_response(Volume(data), sigma).data
    oracle = dense_log_kernel(sigma, 20)
    assert np.abs(out - oracle).max() <= 0.02 * np.abs(oracle).max()
    assert out[20, 20, 20] == pytest.approx(oracle[20, 20, 20], rel=0.02)


def test_log_anisotropic_spacing_matches_isotropic_world():
    # the same continuous blob sampled at two spacings gives the same centre response
    def blob(spacing, n):
        idx = np.indices(n).astype(float)
        x = [(idx[i] - (n[i] - 1) / 2) * spacing[i] for i in range(3)]
        return Volume(np.exp(-sum(c**2 for c in x) / 18.0), spacing=spacing)
    iso = log_response(blob((1.0, 1.0, 1.0), (41, 41, 41)), 2.0).data[20, 20, 20]
    ani = log_response(blob((1.0, 0.5, 0.5), (41, 81, 81)), 2.0).data[20, 40, 40]
    assert ani == pytest.approx(iso, rel=0.02)


def test_log_rejects_nonpositive_sigma():
    with pytest.raises(ValueError):
        log_response(Volume(np.zeros((4, 4, 4))), 0.0)


# -- detect_blobs -------------------------------------------------------------

def test_constant_volume_has_no_blobs():
    assert detect_blobs(Volume(np.full((16, 16, 16), 0.5))) == []


def test_single_ball(ball_volume):
    ms = detect_blobs(ball_volume, BlobConfig(scales=SCALES))
    assert len(ms) == 1
    m = ms[0]
    assert np.linalg.norm(np.subtract(m.position, (20, 20, 20))) <= 1.0
    assert 4.5 <= m.radius <= 7.5
    assert m.radius == pytest.approx(RADIUS_PER_SCALE * m.scale)


def test_single_ball_matches_dense_scale_space_argmax(ball_volume):
    # oracle: dense 3D LoG kernels applied by FFT, argmax over scale and space
    best = None
    for s in SCALES:
        k = dense_log_kernel(s, min(int(math.ceil(4 * s)), 19))
        resp = -fftconvolve(ball_volume.data, k, mode="same")
        i = np.unravel_index(np.argmax(resp), resp.shape)
        if best is None or resp[i] > best[0]:
            best = (resp[i], s, i)
    m = detect_blobs(ball_volume)[0]
    assert m.scale == best[1]
    assert np.abs(np.subtract(m.position, best[2])).max() <= 1.0


def test_two_balls_larger_first():
    d = np.maximum(ball((80, 40, 40), (18, 20, 20), 3), ball((80, 40, 40), (52, 20, 20), 8))
    ms = detect_blobs(Volume(d))
    assert len(ms) == 2
    assert ms[0].scale > ms[1].scale
    assert ms[0].position[0] == pytest.approx(52, abs=1)
    assert ms[1].position[0] == pytest.approx(18, abs=1)


def test_dark_polarity():
    v = Volume(1.0 - ball((40, 40, 40), (20, 20, 20), 6))
    dark = detect_blobs(v, BlobConfig(polarity="dark"))
    assert len(dark) == 1 and dark[0].response > 0
    bright = detect_blobs(v, BlobConfig(polarity="bright"))
    assert all(np.linalg.norm(np.subtract(m.position, (20, 20, 20))) > 3 for m in bright)
    both = detect_blobs(v, BlobConfig(polarity="both"))
    assert any(m.position == dark[0].position and m.scale == dark[0].scale for m in both)


def test_threshold_and_order_invariants():
    v = tube_volume((0.0, 0.6, 0.8))
    cfg = BlobConfig(response_threshold=0.3)
    ms = detect_blobs(v, cfg)
    assert ms
    assert all(abs(m.response) >= cfg.response_threshold for m in ms)
    assert all(m.radius > 0 and m.scale in cfg.scales for m in ms)
    assert ms == sorted(ms, key=blob_order_key)
    assert detect_blobs(v, cfg) == ms


def test_spatial_ties_break_lexicographically():
    m = [Measurement((1.0, 0.0, 0.0), 1, 2.0, -1.0), Measurement((0.0, 0.0, 1.0), 1, 2.0, -1.0),
         Measurement((0.0, 1.0, 0.0), 1, 2.0, -1.0)]
    ordered = sorted(m, key=blob_order_key)
    assert [x.position for x in ordered] == [(1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0)]


@settings(max_examples=6, deadline=None)
@given(shift=st.tuples(*[st.integers(-4, 4)] * 3))
def test_translation_equivariance(shift):
    # compact objects well inside a zero background: rolling is an exact shift
    d = ball((44, 44, 44), (16, 22, 22), 4)
    d = np.maximum(d, tube_volume((0.0, 0.6, 0.8), dims=(44, 44, 44), radius=2.0).data * (
        np.indices(d.shape)[0] > 22))
    base, moved = Volume(d), Volume(np.roll(d, shift, axis=(0, 1, 2)))
    a = sorted((tuple(np.add(m.position, shift)), m.scale, m.response) for m in detect_blobs(base))
    b = sorted((m.position, m.scale, m.response) for m in detect_blobs(moved))
    assert a and a == b


def test_mirror_equivariance():
    v = tube_volume((0.3, 0.5, 0.81))
    mirrored = Volume(v.data[::-1])
    a = {(39.0 - m.position[0], *m.position[1:], m.scale) for m in detect_blobs(v)}
    b = {(*m.position, m.scale) for m in detect_blobs(mirrored)}
    assert a == b


def test_small_volume_rejected():
    with pytest.raises(ValueError):
        detect_blobs(Volume(np.zeros((3, 8, 8))))


@pytest.mark.parametrize("kwargs", [
    {"scales": ()},
    {"scales": (2.0, 1.0)},
    {"scales": (1.0, 1.0)},
    {"scales": (0.0, 1.0)},
    {"response_threshold": -0.1},
    {"polarity": "grey"},
])
def test_blob_config_validation(kwargs):
    with pytest.raises(ValueError):
        BlobConfig(**kwargs)


# -- principal axis ------------------------------------------------------------

@pytest.mark.parametrize("direction", [(0.0, 0.0, 1.0), (1.0, 0.0, 0.0), (0.0, 0.6, 0.8)])
def test_principal_axis_along_tube(direction):
    v = tube_volume(direction)
    m = Measurement((19.5, 19.5, 19.5), 3.5, 2.0, -1.0)
    axis = principal_axis(v, m)
    assert np.linalg.norm(axis) == pytest.approx(1.0)
    cos = abs(float(axis @ np.asarray(direction)))
    assert math.degrees(math.acos(min(cos, 1.0))) < 10.0
    # canonical sign: first nonzero component positive
    assert axis[np.flatnonzero(np.abs(axis) > 1e-12)[0]] > 0


def test_principal_axis_sphere_does_not_crash(ball_volume):
    m = Measurement((20.0, 20.0, 20.0), 6.9, 4.0, -1.0)
    try:
        axis = principal_axis(ball_volume, m)
    except IsotropicPointError:
        return
    assert np.linalg.norm(axis) == pytest.approx(1.0)


def test_principal_axis_flat_hessian_raises():
    v = Volume(np.zeros((10, 10, 10)))
    with pytest.raises(IsotropicPointError):
        principal_axis(v, Measurement((5.0, 5.0, 5.0), 1.7, 1.0, -1.0))


# -- JSON ----------------------------------------------------------------------

def test_measurement_json_round_trip():
    ms = [Measurement((1.0, 2.5, -3.0), 3.4641016151377544, 2.0, -0.75),
          Measurement((0.0, 0.0, 0.0), 1.7320508075688772, 1.0, 0.2)]
    back = measurements_from_json(measurements_to_json(ms))
    assert back == ms
    assert set(measurements_to_json(ms)[0]) == {"pos", "r", "scale", "response"}


def test_measurement_json_bad_position():
    with pytest.raises(ValueError):
        measurements_from_json([{"pos": [1, 2], "r": 1, "scale": 1, "response": 1}])
