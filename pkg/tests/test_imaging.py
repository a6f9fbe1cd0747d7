import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from hydroptic.imaging import (
    DistanceWarning,
    RestoreParams,
    SceneGeometry,
    airlight,
    degrade,
    invert,
    rescale_channels,
    restore,
    restore_with_geometry,
    synthesize,
    transmission,
)
from hydroptic.images import from_uint8, load_png, save_png, to_uint8
from hydroptic.spectral import ChannelAttenuation
from hydroptic.synthetic import synthetic_scene

NO_RANGE = RestoreParams(keep_range=(0, 255), rescale=False)


# ------------------------------------------------------------- t and A


def test_transmission_values():
    assert transmission((0, 0, 0), 3).tolist() == [1.0, 1.0, 1.0]
    assert transmission((1, 1, 1), 1) == pytest.approx([0.3679] * 3, abs=1e-4)
    t = transmission(ChannelAttenuation(0.6, 0.2, 0.1), 5)
    assert t.tolist() == [math.exp(-3), math.exp(-1), math.exp(-0.5)]
    assert t[0] < t[1] < t[2]


@pytest.mark.parametrize("d", [0, -1])
def test_transmission_rejects_nonpositive_distance(d):
    with pytest.raises(ValueError):
        transmission((0.1, 0.1, 0.1), d)


def test_airlight_values():
    assert airlight((0.6, 0.2, 0.1), 0).tolist() == [1.0, 1.0, 1.0]
    A = airlight((0.6, 0.2, 0.1), 10)
    assert A.tolist() == [math.exp(-6), math.exp(-2), math.exp(-1)]
    assert A[0] < A[1] < A[2]
    assert airlight((0, 0, 0), 42.0).tolist() == [1.0, 1.0, 1.0]
    with pytest.raises(ValueError):
        airlight((0.1, 0.1, 0.1), -1)


def test_geometry_invariants():
    with pytest.raises(ValueError):
        SceneGeometry(0.0, 1.0)
    with pytest.raises(ValueError):
        SceneGeometry(1.0, -0.5)


def test_params_invariants():
    for kwargs in ({"t0": 0}, {"t0": 1.5}, {"keep_range": (200, 100)}, {"keep_range": (-1, 255)}):
        with pytest.raises(ValueError):
            RestoreParams(**kwargs)


# -------------------------------------------------------------- forward model


def test_degrade_identity_without_medium(rng):
    J = rng.random((8, 8, 3))
    assert np.array_equal(degrade(J, (1, 1, 1), (0.3, 0.5, 0.7)), J)


def test_degrade_fixed_point(rng):
    A = np.array([0.2, 0.4, 0.6])
    J = np.broadcast_to(A, (5, 7, 3)).copy()
    out = degrade(J, rng.uniform(0.1, 1, 3), A)
    assert np.allclose(out, J, atol=1e-15)


def test_degrade_elementwise_oracle(rng):
    J = rng.random((8, 8, 3))
    t, A = (0.5, 0.7, 0.9), (0.2, 0.4, 0.6)
    out = degrade(J, t, A)
    for y in range(8):
        for x in range(8):
            for c in range(3):
                want = J[y, x, c] * t[c] + A[c] * (1 - t[c])
                assert out[y, x, c] == pytest.approx(want, abs=1e-15)


def test_degrade_shape_errors(rng):
    with pytest.raises(ValueError):
        degrade(rng.random((4, 4)), (1, 1, 1), (0, 0, 0))
    with pytest.raises(ValueError):
        degrade(rng.random((4, 4, 3)), (1, 1), (0, 0, 0))
    with pytest.raises(ValueError):
        degrade(rng.random((4, 4, 3)), (0, 1, 1), (0, 0, 0))


# -------------------------------------------------------------------- restore


def test_roundtrip_recovers_source(rng):
    J = rng.random((16, 16, 3))
    t, A = np.array([0.3, 0.6, 0.8]), np.array([0.1, 0.35, 0.5])
    out = restore(degrade(J, t, A), t, A, NO_RANGE)
    assert np.max(np.abs(out - J)) <= 1 / 255


def test_restore_of_pure_airlight_is_airlight():
    A = np.array([0.1, 0.45, 0.7])
    I = np.broadcast_to(A, (6, 6, 3)).copy()
    out = restore(I, (0.05, 0.3, 0.9), A, RestoreParams(rescale=False))
    assert np.allclose(out, I, atol=1e-15)


def test_t0_floors_the_denominator():
    I = np.full((2, 2, 3), 0.5)
    A = np.array([0.2, 0.2, 0.2])
    out = restore(I, (0.05, 0.5, 0.5), A, NO_RANGE)
    assert out[0, 0, 0] == pytest.approx((0.5 - 0.2) / 0.1 + 0.2)
    assert out[0, 0, 1] == pytest.approx((0.5 - 0.2) / 0.5 + 0.2)


def test_keep_range_clamps_dark_pixels_only():
    I = np.zeros((1, 3, 3))
    I[0, 0] = 5 / 255  # below 13
    I[0, 1] = 20 / 255
    I[0, 2] = 0.9
    t, A = (0.2, 0.2, 0.2), np.array([0.3, 0.3, 0.3])
    out = restore(I, t, A, RestoreParams(rescale=False))
    raw = invert(I, np.array(t), A, 0.1)
    assert np.all(out[0, 0] == 0.0)  # clamped: raw inversion is negative
    assert raw[0, 0, 0] < 0
    assert np.array_equal(out[0, 1:], raw[0, 1:])  # inside the range: untouched


def test_rescale_stretches_each_channel(rng):
    I = 0.2 + 0.5 * rng.random((10, 10, 3))
    out = restore(I, (0.5, 0.6, 0.7), (0.1, 0.2, 0.3))
    assert np.allclose(out.min(axis=(0, 1)), 0) and np.allclose(out.max(axis=(0, 1)), 1)


def test_rescale_leaves_flat_channel():
    img = np.zeros((3, 3, 3))
    img[..., 0] = 0.4
    img[..., 1] = np.arange(9).reshape(3, 3) / 10
    out = rescale_channels(img)
    assert np.all(out[..., 0] == 0.4)
    assert out[..., 1].max() == 1.0


def test_restore_with_geometry_zero_attenuation(rng):
    I = rng.random((9, 9, 3))
    out = restore_with_geometry(I, (0, 0, 0), SceneGeometry(3, 4), RestoreParams(rescale=False, keep_range=(0, 255)))
    assert np.array_equal(out, I)
    out2 = restore_with_geometry(I, (0, 0, 0), SceneGeometry(3, 4))
    assert np.allclose(out2, rescale_channels(I))


def test_restore_with_geometry_recovers_synthetic_source(rng, site_p):
    J = synthetic_scene(rng, 32, 32, floor=13 / 255)
    geom = SceneGeometry(3.0, 7.0)
    I = synthesize(J, site_p, geom)
    out = restore_with_geometry(I, site_p, geom, RestoreParams(rescale=False))
    assert np.max(np.abs(out - J)) < 1e-12


@pytest.mark.parametrize("d, warns", [(0.5, True), (1.0, False), (5.0, False), (7.5, True)])
def test_distance_outside_typical_range_warns(d, warns, rng):
    I = rng.random((4, 4, 3))
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        restore_with_geometry(I, (0.1, 0.1, 0.1), SceneGeometry(d, 2))
    assert any(issubclass(x.category, DistanceWarning) for x in w) == warns


# --------------------------------------------------------------------- codec


def test_codec_round_half_up():
    assert to_uint8(np.array([0.5 / 255, 1.49 / 255, -0.2, 1.3])).tolist() == [1, 1, 0, 255]
    k = np.arange(256, dtype=np.uint8)
    assert np.array_equal(to_uint8(from_uint8(k)), k)


def test_png_alpha_passthrough(tmp_path, rng):
    img = rng.random((5, 6, 3))
    alpha = rng.integers(0, 256, (5, 6), dtype=np.uint8)
    save_png(tmp_path / "a.png", img, alpha)
    back, a2 = load_png(tmp_path / "a.png")
    assert np.array_equal(a2, alpha)
    assert np.array_equal(to_uint8(back), to_uint8(img))
    assert list(tmp_path.iterdir()) == [tmp_path / "a.png"]


# ----------------------------------------------------------------- properties

unit_images = arrays(np.float64, (6, 5, 3), elements=st.floats(13 / 255, 1.0))
triples = st.tuples(*[st.floats(0.1, 1.0)] * 3)
lights = st.tuples(*[st.floats(0.0, 1.0)] * 3)


@settings(max_examples=80, deadline=None)
@given(J=unit_images, t=triples, A=lights)
def test_roundtrip_property(J, t, A):
    out = restore(degrade(J, t, A), t, A, RestoreParams(rescale=False))
    assert np.max(np.abs(out - J)) <= 1 / 255


@settings(max_examples=80, deadline=None)
@given(I=arrays(np.float64, (40,), elements=st.floats(0, 1)), t=st.floats(0.01, 1), A=st.floats(0, 1))
def test_restore_preserves_pixel_order(I, t, A):
    img = np.stack([I, I, I], axis=-1)[None]
    out = restore(img, (t, t, t), (A, A, A), NO_RANGE)[0, :, 0]
    order = np.argsort(I, kind="stable")
    assert np.all(np.diff(out[order]) >= 0)


@settings(max_examples=80, deadline=None)
@given(I=arrays(np.float64, (40,), elements=st.floats(0, 1)), t=st.floats(0.01, 1), A=st.floats(0, 1))
def test_restore_preserves_order_inside_keep_range(I, t, A):
    # dark inputs are clamped by their input value, so order is only promised among kept pixels
    img = np.stack([I, I, I], axis=-1)[None]
    out = restore(img, (t, t, t), (A, A, A), RestoreParams(rescale=False))[0, :, 0]
    kept = to_uint8(I) >= 13
    order = np.argsort(I[kept], kind="stable")
    assert np.all(np.diff(out[kept][order]) >= 0)


@settings(max_examples=50, deadline=None)
@given(img=arrays(np.float64, (5, 5, 3), elements=st.floats(-2, 3)))
def test_rescale_idempotent(img):
    once = rescale_channels(img)
    assert np.allclose(rescale_channels(once), once, atol=1e-12, rtol=0)


@settings(max_examples=50, deadline=None)
@given(I=arrays(np.float64, (4, 4, 3), elements=st.floats(0, 1)), t=triples, A=lights, perm=st.permutations([0, 1, 2]))
def test_channel_permutation_equivariance(I, t, A, perm):
    perm = list(perm)
    t, A = np.array(t), np.array(A)
    base = restore(I, t, A)
    permuted = restore(I[..., perm], t[perm], A[perm])
    assert np.array_equal(permuted, base[..., perm])
