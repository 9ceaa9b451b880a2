import csv
import json
import statistics

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from trifuse.errors import DimensionMismatchError, MetricUnavailableError, SchemaError, TrifuseIOError
from trifuse.evaluate import (
    PSNR_CAP, SCHEMA, ScoreTensor, aggregates, get_metric, ivv, l1_metric, load_report,
    make_reconstructor, nvs_quality, nvv, overall_quality, psnr, psnr_from_mse, report_hash,
    score_tensor, score_tensors, ssim, write_report,
)
from trifuse.synth import build_sequence
from trifuse.triplane import RenderConfig

from conftest import tiny_spec

T122 = np.array([[[30.0, 20.0], [22.0, 28.0]]])
scores = st.floats(-100, 100, allow_nan=False)


# -- metrics ---------------------------------------------------------------------

def test_psnr_identical_is_cap(rng):
    a = rng.random((4, 4, 3))
    assert psnr(a, a) == PSNR_CAP == 99.0


def test_psnr_closed_forms():
    assert psnr_from_mse(0.01) == 20.0
    assert psnr(np.zeros((3, 3, 3)), np.ones((3, 3, 3))) == 0.0


def test_psnr_twenty_db_image_pair():
    a = np.zeros((10, 10, 3))
    b = a.copy()
    b.reshape(-1)[:12] = 0.5  # 12 of 300 entries off by 0.5 -> MSE 0.01
    assert psnr(a, b) == 20.0


def test_l1_and_ssim_identities(rng):
    a = rng.random((16, 16, 3))
    assert l1_metric(a, a) == 0.0
    assert ssim(a, a) == 1.0
    assert l1_metric(np.zeros((4, 4, 3)), np.ones((4, 4, 3))) == 1.0


def test_l1_scalar_oracle(rng):
    a, b = rng.random((9, 7, 3)), rng.random((9, 7, 3))
    total = 0.0
    for x, y in zip(a.ravel().tolist(), b.ravel().tolist()):
        total += abs(x - y)
    assert l1_metric(a, b) == pytest.approx(total / a.size, rel=1e-7)


def test_ssim_decreases_with_noise(rng):
    a = rng.random((32, 32, 3))
    noisy = np.clip(a + 0.2 * rng.standard_normal(a.shape), 0, 1)
    assert ssim(a, noisy) < ssim(a, np.clip(a + 0.02 * rng.standard_normal(a.shape), 0, 1)) < 1.0


def test_metric_dimension_mismatch():
    with pytest.raises(DimensionMismatchError):
        psnr(np.zeros((4, 4, 3)), np.zeros((4, 3, 3)))


@pytest.mark.parametrize("name,model", [("id", "ArcFace"), ("expr", "Maxine")])
def test_unavailable_metrics(name, model):
    with pytest.raises(MetricUnavailableError, match=model):
        get_metric(name)


# -- aggregates: hand examples ---------------------------------------------------

def test_overall_quality_example():
    assert overall_quality(T122) == 25.0


def test_nvs_quality_example():
    assert nvs_quality(T122) == 21.0


def test_nvv_row_example():
    S = np.zeros((1, 3, 3))
    S[0, 0] = [50.0, 20.0, 24.0]
    # row 0 contributes pstdev{20, 24} = 2, other rows are constant
    assert nvv(S) == pytest.approx(2.0 / 3, abs=0)
    assert statistics.pstdev([20.0, 24.0]) == 2.0


def test_ivv_column_example():
    S = np.zeros((1, 3, 3))
    S[0, :, 0] = [50.0, 18.0, 26.0]
    assert ivv(S) == pytest.approx(4.0 / 3, abs=0)
    assert statistics.pstdev([18.0, 26.0]) == 4.0


def test_diagonal_excluded():
    S = np.full((2, 4, 4), 10.0)
    for i in range(4):
        S[:, i, i] = 99.0
    assert nvs_quality(S) == 10.0 and nvv(S) == 0.0 and ivv(S) == 0.0


def test_identical_rows_nvv():
    S = np.array([[[0.0, 1.0, 5.0], [1.0, 0.0, 5.0], [1.0, 5.0, 0.0]]])
    assert nvv(S) == statistics.pstdev([1.0, 5.0])


def test_constant_tensor(rng):
    S = np.full((3, 4, 4), 17.25)
    assert aggregates(S) == {"s": 17.25, "s_nv": 17.25, "nvv": 0.0, "ivv": 0.0}


def test_per_frame_mean_decomposition(rng):
    S = rng.random((5, 3, 3))
    per_frame = [overall_quality(S[t:t + 1]) for t in range(5)]
    assert statistics.fmean(per_frame) == pytest.approx(overall_quality(S), rel=1e-15)


# -- aggregates: properties ------------------------------------------------------

tensors = st.integers(2, 5).flatmap(
    lambda n: arrays(np.float64, st.tuples(st.integers(1, 3), st.just(n), st.just(n)), elements=scores))


@settings(max_examples=150, deadline=None)
@given(tensors)
def test_means_bounded(S):
    lo, hi = S.min(), S.max()
    assert lo - 1e-9 <= overall_quality(S) <= hi + 1e-9
    assert lo - 1e-9 <= nvs_quality(S) <= hi + 1e-9


@settings(max_examples=150, deadline=None)
@given(tensors, st.floats(-50, 50), st.floats(0.1, 10))
def test_spread_shift_and_scale(S, c, k):
    assert nvv(S + c) == pytest.approx(nvv(S), abs=1e-9)
    assert ivv(S + c) == pytest.approx(ivv(S), abs=1e-9)
    assert nvv(k * S) == pytest.approx(k * nvv(S), rel=1e-9, abs=1e-9)
    assert ivv(k * S) == pytest.approx(k * ivv(S), rel=1e-9, abs=1e-9)


@settings(max_examples=150, deadline=None)
@given(tensors, st.randoms(use_true_random=False))
def test_relabeling_invariance(S, r):
    perm = list(range(S.shape[1]))
    r.shuffle(perm)
    P = S[:, perm][:, :, perm]
    for k, v in aggregates(S).items():
        assert aggregates(P)[k] == pytest.approx(v, rel=1e-12, abs=1e-12)


def test_score_tensor_validation():
    with pytest.raises(DimensionMismatchError):
        ScoreTensor(np.zeros((1, 2, 3)))
    with pytest.raises(ValueError):
        ScoreTensor(np.full((1, 2, 2), np.inf))


# -- score tensors on a bundle ---------------------------------------------------

def test_perfect_reconstructor_at_cap(tiny_bundle):
    S = score_tensor(make_reconstructor("perfect"), tiny_bundle, "psnr")
    assert S.values.shape == (2, 3, 3)
    assert np.all(S.values >= 45.0)
    np.testing.assert_array_equal(S.values, PSNR_CAP)
    assert aggregates(S)["ivv"] == 0.0 and aggregates(S)["nvv"] == 0.0


def test_canonical_reconstructor_zero_ivv(tiny_bundle):
    S = score_tensor(make_reconstructor("canonical"), tiny_bundle, "psnr")
    assert ivv(S) == 0.0


def test_identity_eval_order_invariant(tiny_bundle):
    rec = make_reconstructor("identity")
    a = score_tensor(rec, tiny_bundle, "l1")
    b = score_tensor(rec, tiny_bundle, "l1", eval_order=[2, 0, 1])
    assert a == b
    assert ivv(a) > 0


def test_shape_one_by_two(tmp_path):
    b = build_sequence(tiny_spec(frames=1, views=2), tmp_path)
    assert score_tensor(make_reconstructor("identity"), b, "psnr").values.shape == (1, 2, 2)


def test_multiple_metrics_one_pass(tiny_bundle):
    out = score_tensors(make_reconstructor("fuse"), tiny_bundle, ["psnr", "ssim", "l1"])
    assert set(out) == {"psnr", "ssim", "l1"}
    assert out["psnr"].higher_is_better and not out["l1"].higher_is_better


def test_reconstructor_dimension_violation(tiny_bundle):
    from trifuse.triplane import Triplane

    def bad(bundle, frame, view):
        return Triplane.zeros(4, 8, 8)

    with pytest.raises(DimensionMismatchError):
        score_tensor(bad, tiny_bundle, "psnr")


def test_custom_render_config(tiny_bundle):
    cfg = RenderConfig(width=10, height=10, samples=8)
    with pytest.raises(DimensionMismatchError):
        # GT images are 20 x 20
        score_tensor(make_reconstructor("perfect"), tiny_bundle, "psnr", cfg=cfg)


# -- reports ---------------------------------------------------------------------

def test_report_round_trip(tmp_path, rng):
    S = ScoreTensor(rng.random((2, 3, 3)) * 30, "psnr", True)
    jpath, cpath = write_report(S, tmp_path / "r", metadata={"bundle_spec_hash": "abc"})
    S2, aggs, meta = load_report(jpath)
    assert S2 == S
    for k, v in aggregates(S).items():
        assert aggs[k] == pytest.approx(v, abs=1e-9)
    assert meta["bundle_spec_hash"] == "abc" and "substitutions" in meta and meta["psnr_cap_db"] == 99.0
    rows = list(csv.reader(cpath.open()))
    assert rows[0] == ["frame", "input_view", "eval_view", "value"]
    assert len(rows) == 2 * 3 * 3 + 1
    assert float(rows[5][3]) == S.values[0, 1, 1]


def test_report_hash_ignores_timestamp(tmp_path, rng):
    S = ScoreTensor(rng.random((1, 2, 2)))
    j1, _ = write_report(S, tmp_path / "a")
    j2, _ = write_report(S, tmp_path / "b")
    r1, r2 = json.loads(j1.read_text()), json.loads(j2.read_text())
    r2["metadata"]["created"] = "1970-01-01T00:00:00+00:00"
    assert report_hash(r1) == report_hash(r2) == report_hash(j1)


def test_report_schema_errors(tmp_path):
    (tmp_path / "x.json").write_text(json.dumps({"schema": "other/2"}))
    with pytest.raises(SchemaError):
        load_report(tmp_path / "x.json")
    (tmp_path / "y.json").write_text("{not json")
    with pytest.raises(SchemaError):
        load_report(tmp_path / "y.json")
    with pytest.raises(TrifuseIOError, match="missing.json"):
        load_report(tmp_path / "missing.json")
    assert SCHEMA == "scoretensor/1"
