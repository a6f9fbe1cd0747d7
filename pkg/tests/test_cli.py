import csv
import hashlib
import json
import subprocess
import sys

import numpy as np
import pytest

from conftest import make_toy_dataset
from hydroptic import cli
from hydroptic.images import from_uint8, load_png, save_png
from hydroptic.metrics import mse, psnr, score_pair, ssim
from hydroptic.spectral import write_synthetic_site
from hydroptic.synthetic import synthetic_scene


def run(*argv):
    try:
        return cli.main([str(a) for a in argv])
    except SystemExit as exc:
        return exc.code


def digest(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


@pytest.fixture
def site(tmp_path):
    return write_synthetic_site(tmp_path / "site", site_id="reef")


@pytest.fixture
def frames(tmp_path):
    rng = np.random.default_rng(21)
    d = tmp_path / "frames"
    for i in range(10):
        save_png(d / f"f{i:02d}.png", synthetic_scene(rng, 40, 48, floor=0.2))
    return d


# --------------------------------------------------------------------- restore


def test_restore_single_image(tmp_path, site, frames):
    out = tmp_path / "out"
    assert run("restore", "--input", frames / "f00.png", "--output", out, "--site", site, "--distance", 2, "--depth", 6) == 0
    assert sorted(p.name for p in out.iterdir()) == ["f00.png", "f00.provenance.json"]
    prov = json.loads((out / "f00.provenance.json").read_text())
    assert prov["params"] == {"t0": 0.1, "keep_range": [13, 255], "rescale": True}
    assert prov["output_sha256"] == digest(out / "f00.png")


def test_restore_explicit_defaults_match(tmp_path, site, frames):
    base = ("restore", "--input", frames, "--site", site, "--distance", 3, "--depth", 5)
    assert run(*base, "--output", tmp_path / "a") == 0
    assert run(*base, "--output", tmp_path / "b", "--t0", "0.1", "--keep-range", "13:255") == 0
    for f in sorted((tmp_path / "a").glob("*.png")):
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()


def test_restore_panel(tmp_path, site, frames):
    out = tmp_path / "out"
    assert run("restore", "--input", frames / "f01.png", "--output", out, "--site", site, "--distance", 2, "--depth", 6, "--panel") == 0
    panel, _ = load_png(out / "f01.panel.png")
    assert panel.shape[0] == 40 and panel.shape[1] > 2 * 48


@pytest.mark.parametrize("threads", [1, 4, 8])
def test_restore_deterministic_across_threads(tmp_path, site, frames, threads):
    ref = tmp_path / "ref"
    assert run("restore", "--input", frames, "--output", ref, "--site", site, "--distance", 2.5, "--depth", 7, "--threads", 1) == 0
    out = tmp_path / f"t{threads}"
    assert run("restore", "--input", frames, "--output", out, "--site", site, "--distance", 2.5, "--depth", 7, "--threads", threads) == 0
    names = sorted(p.name for p in ref.iterdir())
    assert len(names) == 20 and names == sorted(p.name for p in out.iterdir())
    assert all((ref / n).read_bytes() == (out / n).read_bytes() for n in names)


def test_threads_env_default(monkeypatch):
    monkeypatch.setenv(cli.THREADS_ENV, "6")
    args = cli.build_parser().parse_args(["restore", "--input", "x", "--output", "y"])
    assert args.threads == 6


def test_restore_missing_sidecar_is_io_error(tmp_path, site, frames, capsys):
    assert run("restore", "--input", frames, "--output", tmp_path / "o", "--site", site) == 1
    assert "geometry sidecar" in capsys.readouterr().err


def test_restore_missing_input_is_io_error(tmp_path, site):
    assert run("restore", "--input", tmp_path / "nope", "--output", tmp_path / "o", "--site", site, "--distance", 1, "--depth", 1) == 1


@pytest.mark.parametrize("flag, value", [("--keep-range", "a:b"), ("--attenuation", "1,2"), ("--t0", "x")])
def test_restore_parse_errors(tmp_path, flag, value):
    assert run("restore", "--input", tmp_path, "--output", tmp_path / "o", flag, value) == 2


def test_restore_requires_spectra(tmp_path, frames):
    assert run("restore", "--input", frames, "--output", tmp_path / "o", "--distance", 1, "--depth", 1) == 2


@pytest.mark.parametrize("flag, value", [("--keep-range", "200:100"), ("--t0", "0"), ("--distance", "-1")])
def test_restore_invariant_violations(tmp_path, site, frames, flag, value):
    args = {"--distance": "2", "--depth": "3", flag: value}
    flat = [x for kv in args.items() for x in kv]
    assert run("restore", "--input", frames, "--output", tmp_path / "o", "--site", site, *flat) == 3


def test_help_prints_defaults(capsys):
    assert run("restore", "--help") == 0
    text = capsys.readouterr().out
    assert "13:255" in text and "0.1" in text and "400:750" in text
    run("losscheck", "--help")
    text = capsys.readouterr().out
    assert "0.07" in text and "10.0" in text


# ------------------------------------------------------------------ synthesize


def test_synthesize_zero_attenuation_is_copy(tmp_path, frames):
    out = tmp_path / "syn"
    assert run("synthesize", "--input", frames, "--output", out, "--attenuation", "0,0,0", "--distance", 3, "--depth", 8) == 0
    for f in sorted(frames.glob("*.png")):
        assert (out / f.name).read_bytes() == f.read_bytes()
    assert json.loads((out / "f00.geometry.json").read_text()) == {"distance_m": 3.0, "dive_depth_m": 8.0}


def test_synthesize_needs_geometry(tmp_path, frames, site):
    assert run("synthesize", "--input", frames, "--output", tmp_path / "s", "--site", site, "--distance", 2) == 2


def test_synthesize_distance_sweep_loses_red(tmp_path, frames, site):
    reds = []
    for d in (1, 2, 3, 4, 5):
        out = tmp_path / f"d{d}"
        assert run("synthesize", "--input", frames / "f03.png", "--output", out, "--site", site, "--distance", d, "--depth", 8) == 0
        img, _ = load_png(out / "f03.png")
        reds.append(img[..., 0].mean())
    assert all(b < a for a, b in zip(reds, reds[1:])), reds


def test_synthesize_restore_roundtrip(tmp_path, frames, site):
    syn, rec = tmp_path / "syn", tmp_path / "rec"
    assert run("synthesize", "--input", frames, "--output", syn, "--site", site, "--distance", 2, "--depth", 6) == 0
    assert run("restore", "--input", syn, "--output", rec, "--site", site, "--no-rescale", "--keep-range", "0:255") == 0
    for f in sorted(frames.glob("*.png")):
        a, _ = load_png(f)
        b, _ = load_png(rec / f.name)
        assert psnr(a, b) >= 40.0


# -------------------------------------------------------------------- evaluate


def write_pairs(root, n, rng, noise=6):
    a, b = root / "restored", root / "reference"
    for i in range(n):
        ref = rng.integers(0, 256, (16, 16, 3)).astype(np.uint8)
        res = np.clip(ref.astype(int) + rng.integers(-noise, noise + 1, ref.shape), 0, 255).astype(np.uint8)
        save_png(b / f"{i:03d}.png", from_uint8(ref))
        save_png(a / f"{i:03d}.png", from_uint8(res))
    return a, b


def test_evaluate_identical_dirs(tmp_path, frames):
    out = tmp_path / "m.csv"
    assert run("evaluate", "--restored", frames, "--reference", frames, "--output", out) == 0
    rows = list(csv.DictReader(out.open()))
    assert rows[-1]["filename"] == "MEAN" and len(rows) == 11
    assert all(float(r["mse"]) == 0 and float(r["ssim"]) == 1 for r in rows)
    doc = json.loads(out.with_suffix(".json").read_text())
    assert all(img["psnr_inf"] for img in doc["images"]) and doc["summary"]["fid"] is None


def test_evaluate_300_pairs_matches_per_file_loop(tmp_path):
    a, b = write_pairs(tmp_path, 300, np.random.default_rng(4))
    out = tmp_path / "m.csv"
    assert run("evaluate", "--restored", a, "--reference", b, "--output", out, "--threads", 4) == 0
    rows = list(csv.DictReader(out.open()))
    assert len(rows) == 301
    assert list(rows[0]) == ["filename", "mse", "psnr", "ssim", "uicm", "uism", "uiconm", "uiqm"]
    sums = dict.fromkeys(("mse", "psnr", "ssim", "uiqm"), 0.0)
    for row in rows[:-1]:
        x, _ = load_png(a / row["filename"])
        y, _ = load_png(b / row["filename"])
        r = score_pair(row["filename"], x, y)
        for k in sums:
            assert float(row[k]) == pytest.approx(getattr(r, k), rel=1e-9, abs=1e-12)
            sums[k] += getattr(r, k)
    for k, total in sums.items():
        assert float(rows[-1][k]) == pytest.approx(total / 300, rel=1e-9)


def test_evaluate_missing_pair_named(tmp_path, capsys):
    a, b = write_pairs(tmp_path, 4, np.random.default_rng(1))
    (b / "002.png").unlink()
    assert run("evaluate", "--restored", a, "--reference", b, "--output", tmp_path / "m.csv") == 3
    assert "002.png" in capsys.readouterr().err
    assert not (tmp_path / "m.csv").exists()


def test_evaluate_ssim_gray(tmp_path):
    a, b = write_pairs(tmp_path, 2, np.random.default_rng(2), noise=40)
    out = tmp_path / "m.csv"
    assert run("evaluate", "--restored", a, "--reference", b, "--output", out, "--ssim-gray") == 0
    doc = json.loads(out.with_suffix(".json").read_text())
    x, _ = load_png(a / "000.png")
    y, _ = load_png(b / "000.png")
    assert doc["ssim_mode"] == "luma"
    assert doc["images"][0]["ssim"] == pytest.approx(ssim(x, y, gray=True), rel=1e-12)
    assert doc["images"][0]["mse"] == pytest.approx(mse(x, y), rel=1e-12)


# ------------------------------------------------------------------- losscheck


def test_losscheck_random(capsys):
    assert run("losscheck", "--random", "--seed", 7) == 0
    out = capsys.readouterr().out
    assert out.count("PASS") == 4 and "FAIL" not in out and "max_dev=" in out


def test_losscheck_symmetric_fixture(tmp_path, capsys):
    row = [0.5, -1.0, 2.0, 0.25]
    doc = {"layers": [{"s": 4, "c": 4, "data": row * 4}, {"s": 3, "c": 4, "data": row * 3}]}
    f = tmp_path / "sym.json"
    f.write_text(json.dumps(doc))
    assert run("losscheck", "--features-x", f, "--features-gx", f) == 0


def test_losscheck_shape_mismatch_exit_3(tmp_path, capsys):
    rng = np.random.default_rng(0)
    from hydroptic.losses import FeatureStack

    (tmp_path / "x.json").write_text(FeatureStack.random(rng, [(4, 5), (3, 5)]).to_json())
    (tmp_path / "g.json").write_text(FeatureStack.random(rng, [(4, 5), (3, 6)]).to_json())
    assert run("losscheck", "--features-x", tmp_path / "x.json", "--features-gx", tmp_path / "g.json") == 3
    assert "layer 1" in capsys.readouterr().err


def test_losscheck_corrupt_data_exit_3(tmp_path, capsys):
    (tmp_path / "x.json").write_text('{"layers": [{"s": 3, "c": 2, "data": [1, 2, 3]}]}')
    assert run("losscheck", "--features-x", tmp_path / "x.json", "--features-gx", tmp_path / "x.json") == 3
    assert "layer 0" in capsys.readouterr().err


def test_losscheck_needs_input():
    assert run("losscheck") == 2


# --------------------------------------------------------------------- dataset


def test_dataset_toy(tmp_path, capsys):
    root = make_toy_dataset(tmp_path / "toy")
    assert run("dataset", "--root", root, "--test-count", 4, "--seed", 3, "--expected-size", "32x24") == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["violations"] == [] and summary["test"] == 4 and summary["paired_train"] == 8
    assert summary["unpaired_train"] == {"low": 8, "restored": 8}
    assert sorted(p.name for p in (root / "manifests").iterdir()) == ["paired_train.json", "test.json", "unpaired_train.json"]


def test_dataset_rerun_byte_identical(tmp_path):
    root = make_toy_dataset(tmp_path / "toy")
    args = ("dataset", "--root", root, "--test-count", 4, "--seed", 3, "--expected-size", "none")
    assert run(*args) == 0
    first = {p: digest(p) for p in (root / "manifests").iterdir()}
    assert run(*args, "--threads", 4) == 0
    assert first == {p: digest(p) for p in (root / "manifests").iterdir()}


def test_dataset_exclusion(tmp_path, capsys):
    root = make_toy_dataset(tmp_path / "toy")
    (root / "exclusions.txt").write_text("restored/frame_005.png\n")
    assert run("dataset", "--root", root, "--test-count", 4, "--expected-size", "32x24") == 0
    text = "".join(p.read_text() for p in (root / "manifests").iterdir())
    assert "frame_005" not in text


def test_dataset_insufficient_pairs(tmp_path):
    root = make_toy_dataset(tmp_path / "toy")
    assert run("dataset", "--root", root, "--test-count", 50, "--expected-size", "none") == 3


def test_dataset_missing_root(tmp_path):
    assert run("dataset", "--root", tmp_path / "nothing") == 1


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "hydroptic", "losscheck", "--random", "--seed", "1"], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
