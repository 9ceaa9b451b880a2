import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from trifuse.errors import ConvergenceError, DimensionMismatchError, InvalidDimensionsError
from trifuse.triplane import Triplane
from trifuse.warp import (
    IdentityUndistorter, OracleUndistorter, WarpField, apply_warp, compose_residual,
    identity_undistorter, invert_warp, load_warp, oracle_undistort, save_warp, synth_distortion,
    undistort, undistort_loss, upsample_grid,
)

from conftest import random_triplane


def _brute_warp(planes, field):
    P, C, H, W = planes.shape
    out = np.zeros(planes.shape)
    src = planes.astype(np.float64)
    for p in range(P):
        for y in range(H):
            for x in range(W):
                u = min(max(x + float(field[p, 0, y, x]), 0.0), W - 1.0)
                v = min(max(y + float(field[p, 1, y, x]), 0.0), H - 1.0)
                x0, y0 = min(int(u), W - 2), min(int(v), H - 2)
                fx, fy = u - x0, v - y0
                out[p, :, y, x] = ((1 - fx) * (1 - fy) * src[p, :, y0, x0] + fx * (1 - fy) * src[p, :, y0, x0 + 1]
                                   + (1 - fx) * fy * src[p, :, y0 + 1, x0] + fx * fy * src[p, :, y0 + 1, x0 + 1])
    return out


# -- apply_warp ------------------------------------------------------------------

def test_zero_field_identity(rng):
    tri = random_triplane(rng, height=9, width=10)
    out = apply_warp(tri, WarpField.zeros(9, 10))
    assert out == tri


def test_zero_field_identity_through_kernel(rng):
    # also exact when the kernel actually runs
    from trifuse.warp import warp_array
    tri = random_triplane(rng, height=9, width=10)
    np.testing.assert_array_equal(warp_array(tri.planes, WarpField.zeros(9, 10)), tri.planes)


def test_constant_shift_is_column_copy(rng):
    tri = random_triplane(rng, channels=3, height=6, width=8)
    out = apply_warp(tri, WarpField.constant(1.0, 0.0, 6, 8)).planes
    np.testing.assert_array_equal(out[..., :-1], tri.planes[..., 1:])
    np.testing.assert_array_equal(out[..., -1], tri.planes[..., -1])


def test_smooth_field_matches_bruteforce(rng):
    tri = random_triplane(rng, channels=3, height=20, width=24)
    w = synth_distortion(11, 4.0, 8.0, 20, 24)
    assert w.magnitude().max() > 1.0
    np.testing.assert_allclose(apply_warp(tri, w).planes, _brute_warp(tri.planes, w.field), atol=1e-6)


def test_dimension_mismatch(rng):
    with pytest.raises(DimensionMismatchError):
        apply_warp(random_triplane(rng, height=8, width=8), WarpField.zeros(8, 9))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31), st.floats(-2, 2), st.floats(-2, 2))
def test_warp_is_linear(seed, a, b):
    g = np.random.default_rng(seed)
    t1, t2 = g.standard_normal((2, 3, 2, 7, 7))
    w = synth_distortion(seed % 1000, 3.0, 4.0, 7, 7)
    lhs = apply_warp(Triplane(a * t1 + b * t2), w).planes.astype(np.float64)
    rhs = a * apply_warp(Triplane(t1), w).planes + b * apply_warp(Triplane(t2), w).planes
    np.testing.assert_allclose(lhs, rhs, atol=1e-5 * (abs(a) + abs(b) + 1) * 10)


# -- synth_distortion ------------------------------------------------------------

def test_zero_magnitude_is_zero_field():
    assert not synth_distortion(3, 0.0, 16.0, 32, 32).field.any()


def test_distortion_deterministic():
    assert synth_distortion(9, 4.0, 16.0, 40, 40) == synth_distortion(9, 4.0, 16.0, 40, 40)
    assert synth_distortion(9, 4.0, 16.0, 40, 40) != synth_distortion(10, 4.0, 16.0, 40, 40)


@pytest.mark.parametrize("seed", range(5))
def test_distortion_magnitude_bound(seed):
    w = synth_distortion(seed, 8.0, 32.0, 64, 64)
    m = w.magnitude()
    assert m.max() <= 8.0 and m.mean() > 0


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6), st.floats(0.01, 20), st.floats(1, 64))
def test_distortion_bound_property(seed, mag, smooth):
    assert synth_distortion(seed, mag, smooth, 17, 23).magnitude().max() <= mag


def test_distortion_rejects_bad_args():
    with pytest.raises(ValueError):
        synth_distortion(0, -1.0, 16.0)
    with pytest.raises(ValueError):
        synth_distortion(0, 1.0, 0.0)


def test_upsample_grid_corners_exact():
    g = np.array([[0.0, 1.0], [2.0, 5.0]])
    up = upsample_grid(g, 3, 3)
    np.testing.assert_array_equal(up[[0, 0, -1, -1], [0, -1, 0, -1]], [0, 1, 2, 5])
    assert up[1, 1] == 2.0


# -- invert_warp -----------------------------------------------------------------

def test_invert_zero():
    assert not invert_warp(WarpField.zeros(8, 8)).field.any()


def test_invert_constant():
    inv = invert_warp(WarpField.constant(1.5, -0.75, 8, 8))
    np.testing.assert_array_equal(inv.field[:, 0], -1.5)
    np.testing.assert_array_equal(inv.field[:, 1], 0.75)


def _brute_residual(w, g):
    f = w.field.astype(np.float64)
    moved = _brute_warp(f, g.field)
    r = g.field.astype(np.float64) + moved
    return np.sqrt(r[:, 0] ** 2 + r[:, 1] ** 2)


def test_inverse_residual_small():
    w = synth_distortion(2, 4.0, 32.0, 64, 64)
    inv = invert_warp(w, iterations=20)
    res = _brute_residual(w, inv)
    assert res.max() < 0.05
    np.testing.assert_allclose(compose_residual(w, inv), res, atol=1e-5)


def test_residual_decreases_with_iterations():
    w = synth_distortion(4, 4.0, 32.0, 48, 48)
    res = [compose_residual(w, invert_warp(w, k)).max() for k in (1, 2, 4, 8, 16)]
    assert all(b <= a + 1e-7 for a, b in zip(res, res[1:]))
    assert res[-1] < res[0] / 10


def test_history_monotone():
    w = synth_distortion(5, 4.0, 32.0, 32, 32)
    _, hist = invert_warp(w, 12, return_history=True)
    assert len(hist) == 11
    assert all(b <= a + 1e-12 for a, b in zip(hist, hist[1:]))


def test_nonconvergence_reports_residual():
    # a strongly contracting field cannot be inverted in one step
    w = synth_distortion(1, 6.0, 4.0, 32, 32)
    with pytest.raises(ConvergenceError) as exc:
        invert_warp(w, iterations=1, tolerance=1e-6)
    assert exc.value.residual > 1e-6


# -- undistorters ----------------------------------------------------------------

def test_oracle_with_zero_distortion(rng):
    raw = random_triplane(rng, height=8, width=8)
    assert oracle_undistort(raw, WarpField.zeros(8, 8)) == raw


def test_identity_undistorter(rng):
    raw = random_triplane(rng)
    assert identity_undistorter(raw, random_triplane(rng)) is raw
    out, corr = undistort(raw, None, IdentityUndistorter())
    assert out == raw and not corr.field.any()


def test_oracle_undistorter_interface(rng):
    from trifuse.synth import gen_canonical_triplane
    # bilinear resampling error grows as resolution drops; 128 texels keeps it under 3e-3
    gt = gen_canonical_triplane(1, channels=32, resolution=128)
    d = synth_distortion(8, 4.0, 32.0, 128, 128)
    raw = apply_warp(gt, d)
    out, corr = undistort(raw, None, OracleUndistorter(d))
    assert corr == invert_warp(d)
    err = np.abs(out.planes - gt.planes)[..., 4:-4, 4:-4]
    assert err.mean() < 3e-3


# -- loss ------------------------------------------------------------------------

def test_undistort_loss_examples(rng):
    a = random_triplane(rng)
    assert undistort_loss(a, a) == 0.0
    b = Triplane(a.planes + np.float32(0.25))
    assert undistort_loss(b, a) == pytest.approx(0.25, abs=1e-6)
    zero = Triplane.zeros(2, 3, 3)
    assert undistort_loss(Triplane.constant([0.25, 0.25], 3, 3), zero) == 0.25


def test_undistort_loss_bruteforce(rng):
    for _ in range(10):
        a, b = random_triplane(rng, 3, 5, 6), random_triplane(rng, 3, 5, 6)
        total = 0.0
        for x, y in zip(a.planes.ravel().tolist(), b.planes.ravel().tolist()):
            total += abs(x - y)
        assert undistort_loss(a, b) == pytest.approx(total / a.planes.size, rel=1e-7)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31))
def test_undistort_loss_metric_like(seed):
    g = np.random.default_rng(seed)
    a, b = Triplane(g.standard_normal((3, 2, 3, 3))), Triplane(g.standard_normal((3, 2, 3, 3)))
    assert undistort_loss(a, b) == undistort_loss(b, a) > 0
    assert undistort_loss(a, a) == 0


def test_undistort_loss_shape_mismatch(rng):
    with pytest.raises(DimensionMismatchError):
        undistort_loss(random_triplane(rng, 4, 8, 8), random_triplane(rng, 4, 8, 9))


# -- file format -----------------------------------------------------------------

def test_warp_file_round_trip(tmp_path):
    w = synth_distortion(3, 4.0, 8.0, 12, 10)
    save_warp(w, tmp_path / "w.wrp")
    raw = (tmp_path / "w.wrp").read_bytes()
    assert raw[:4] == b"WRP1" and struct.unpack("<4I", raw[4:20]) == (3, 2, 12, 10)
    assert load_warp(tmp_path / "w.wrp") == w


def test_warp_file_wrong_dims(tmp_path):
    (tmp_path / "w.wrp").write_bytes(struct.pack("<4s4I", b"WRP1", 3, 3, 2, 2) + b"\0" * 144)
    with pytest.raises(InvalidDimensionsError):
        load_warp(tmp_path / "w.wrp")
