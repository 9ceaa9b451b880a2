import json

import numpy as np
import pytest

from trifuse.cli import EXIT_DATA, EXIT_OK, EXIT_USAGE, main
from trifuse.evaluate import load_report, report_hash
from trifuse.imageio import read_image
from trifuse.triplane import Camera, load_triplane, save_triplane
from trifuse.warp import load_warp

SMALL = ["--frames", "2", "--views", "3", "--resolution", "16", "--channels", "4",
         "--render-size", "12", "--samples", "12"]


@pytest.fixture(scope="module")
def bundle(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli") / "bundle"
    assert main(["gen", "--out", str(root), "--seed", "2", *SMALL]) == EXIT_OK
    return root


def test_gen_single_view_is_usage_error(tmp_path, capsys):
    assert main(["gen", "--out", str(tmp_path / "b"), "--views", "1"]) == EXIT_USAGE
    assert "views" in capsys.readouterr().err


def test_unknown_flag_and_bad_metric(tmp_path, bundle):
    assert main(["gen", "--bogus"]) == EXIT_USAGE
    assert main(["eval", "--bundle", str(bundle), "--out", str(tmp_path), "--metric", "lpips"]) == EXIT_USAGE


def test_unavailable_metric_exit_code(tmp_path, bundle, capsys):
    assert main(["eval", "--bundle", str(bundle), "--out", str(tmp_path), "--metric", "id"]) == EXIT_DATA
    assert "ArcFace" in capsys.readouterr().err


def test_eval_perfect_prints_zero_ivv(tmp_path, bundle, capsys):
    rc = main(["eval", "--bundle", str(bundle), "--reconstructor", "perfect", "--out", str(tmp_path)])
    assert rc == EXIT_OK
    out = capsys.readouterr().out
    assert "reconstructor: perfect" in out and "0.0000" in out
    S, aggs, meta = load_report(tmp_path / "perfect_psnr.json")
    assert aggs["ivv"] == 0.0 and S.values.shape == (2, 3, 3)
    assert meta["reconstructor"] == "perfect"


def test_eval_twice_same_hash(tmp_path, bundle):
    for d in ("a", "b"):
        assert main(["eval", "--bundle", str(bundle), "--reconstructor", "identity",
                     "--out", str(tmp_path / d)]) == EXIT_OK
    assert report_hash(tmp_path / "a" / "identity_psnr.json") == report_hash(tmp_path / "b" / "identity_psnr.json")


def test_metric_lists_comma_and_repeat(tmp_path, bundle):
    rc = main(["eval", "--bundle", str(bundle), "--reconstructor", "canonical", "--out", str(tmp_path),
               "--metric", "psnr,l1", "--metric", "ssim"])
    assert rc == EXIT_OK
    assert {p.name for p in tmp_path.glob("*.json")} == {
        "canonical_psnr.json", "canonical_l1.json", "canonical_ssim.json"}
    assert len((tmp_path / "canonical_l1.csv").read_text().splitlines()) == 2 * 3 * 3 + 1


def test_oracle_undistort_alias(tmp_path, bundle):
    assert main(["eval", "--bundle", str(bundle), "--reconstructor", "oracle-undistort",
                 "--out", str(tmp_path), "--metric", "l1"]) == EXIT_OK
    assert (tmp_path / "undistort_l1.json").is_file()


def test_report_command(tmp_path, bundle, capsys):
    main(["eval", "--bundle", str(bundle), "--reconstructor", "identity", "--out", str(tmp_path)])
    capsys.readouterr()
    assert main(["report", "--report", str(tmp_path / "identity_psnr.json")]) == EXIT_OK
    out = capsys.readouterr().out
    assert "frames: 2" in out and "views: 3" in out and "ivv" in out.lower()


def test_report_errors(tmp_path, capsys):
    assert main(["report", "--report", str(tmp_path / "nope.json")]) == EXIT_DATA
    assert "nope.json" in capsys.readouterr().err
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"schema": "scoretensor/99"}))
    assert main(["report", "--report", str(bad)]) == EXIT_DATA
    assert "schema" in capsys.readouterr().err.lower()


def test_config_file_precedence(tmp_path, bundle):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"bundle": str(bundle), "out": str(tmp_path / "fromcfg"),
                               "reconstructor": "perfect", "metric": ["l1"]}))
    assert main(["eval", "--config", str(cfg)]) == EXIT_OK
    assert (tmp_path / "fromcfg" / "perfect_l1.json").is_file()
    # explicit flags win over the file
    assert main(["eval", "--config", str(cfg), "--reconstructor", "identity", "--metric", "psnr"]) == EXIT_OK
    assert (tmp_path / "fromcfg" / "identity_psnr.json").is_file()
    assert not (tmp_path / "fromcfg" / "identity_l1.json").exists()


def test_config_errors(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"colour": "red"}))
    assert main(["eval", "--config", str(cfg)]) == EXIT_USAGE
    cfg.write_text("{nope")
    assert main(["eval", "--config", str(cfg)]) == EXIT_USAGE
    assert main(["eval", "--config", str(tmp_path / "absent.json")]) == EXIT_DATA


def test_render_from_bundle(tmp_path, bundle):
    out = tmp_path / "img.pfm"
    assert main(["render", "--bundle", str(bundle), "--frame", "1", "--view", "2", "--out", str(out)]) == EXIT_OK
    img = read_image(out)
    assert img.shape == (12, 12, 3)
    np.testing.assert_array_equal(img, read_image(bundle / "gt_images" / "f1_v2.pfm"))


def test_render_triplane_and_camera(tmp_path, bundle):
    cam = tmp_path / "cam.json"
    cam.write_text(json.dumps(Camera.look_at((0.0, 0.0, 2.7)).flatten().tolist()))
    out = tmp_path / "img.png"
    rc = main(["render", "--triplane", str(bundle / "gt_triplanes" / "f0.tri"), "--camera", str(cam),
               "--render-size", "10", "--samples", "8", "--out", str(out)])
    assert rc == EXIT_OK and read_image(out).shape == (10, 10, 3)
    assert main(["render", "--out", str(out)]) == EXIT_USAGE


def test_distort_then_undistort(tmp_path, bundle):
    src = bundle / "gt_triplanes" / "f0.tri"
    args = ["--triplane", str(src), "--out", str(tmp_path / "raw.tri"), "--field-out", str(tmp_path / "d.wrp")]
    assert main(["distort", *args, "--magnitude", "1.5", "--smoothness", "8"]) == EXIT_OK
    assert load_warp(tmp_path / "d.wrp").magnitude().max() <= 1.5
    assert main(["undistort", "--triplane", str(tmp_path / "raw.tri"), "--field", str(tmp_path / "d.wrp"),
                 "--out", str(tmp_path / "rec.tri")]) == EXIT_OK
    gt, raw, rec = (load_triplane(p) for p in (src, tmp_path / "raw.tri", tmp_path / "rec.tri"))
    assert np.abs(rec.planes - gt.planes).mean() < np.abs(raw.planes - gt.planes).mean()
    assert main(["undistort", "--triplane", str(tmp_path / "raw.tri"), "--out", str(tmp_path / "x.tri")]) == EXIT_USAGE
    assert main(["undistort", "--triplane", str(tmp_path / "raw.tri"), "--method", "identity",
                 "--out", str(tmp_path / "id.tri")]) == EXIT_OK
    assert load_triplane(tmp_path / "id.tri") == raw


def test_fuse_command(tmp_path, bundle):
    out = tmp_path / "fused.tri"
    assert main(["fuse", "--bundle", str(bundle), "--frame", "1", "--input-view", "1", "--out", str(out)]) == EXIT_OK
    assert load_triplane(out).planes.shape == (3, 4, 16, 16)
    assert main(["fuse", "--bundle", str(bundle), "--input-view", "7", "--out", str(out)]) == EXIT_USAGE


def test_missing_triplane_is_data_error(tmp_path):
    assert main(["undistort", "--triplane", str(tmp_path / "none.tri"), "--method", "identity",
                 "--out", str(tmp_path / "o.tri")]) == EXIT_DATA


def test_threads_must_be_positive(tmp_path):
    assert main(["gen", "--out", str(tmp_path), "--threads", "0"]) == EXIT_USAGE


def test_save_roundtrip_helper(tmp_path, rng):
    # the CLI reads what the library writes
    from trifuse.triplane import Triplane
    t = Triplane(rng.standard_normal((3, 2, 4, 4)).astype(np.float32))
    save_triplane(t, tmp_path / "t.tri")
    assert main(["undistort", "--triplane", str(tmp_path / "t.tri"), "--method", "identity",
                 "--out", str(tmp_path / "u.tri")]) == EXIT_OK
    assert load_triplane(tmp_path / "u.tri") == t
