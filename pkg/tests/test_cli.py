import numpy as np
import pytest

from editfit.cli import run_cli
from editfit.imgio import Image, load_image, save_image
from editfit.model import ModelConfig, load_model, mac_count
from editfit.presets import PresetSpec, Vignette, serialize_preset

FAST = ["--iters", "5", "--samples", "8", "--window", "5"]


@pytest.fixture
def tiny_fixture(tmp_path):
    rng = np.random.default_rng(0)
    before = rng.random((24, 24, 3)).astype(np.float32)
    paths = {}
    for name, data in [
        ("before", before),
        ("after", np.clip(before * 0.7 + 0.1, 0, 1).astype(np.float32)),
        ("input", rng.random((24, 24, 3)).astype(np.float32)),
    ]:
        p = tmp_path / f"{name}.png"
        save_image(Image(data), p)
        paths[name] = str(p)
    return tmp_path, paths


def test_apply_runs_and_writes_output(tiny_fixture, capsys):
    tmp_path, paths = tiny_fixture
    out = tmp_path / "out.png"
    code = run_cli(
        ["apply", "--before", paths["before"], "--after", paths["after"],
         "--input", paths["input"], "--output", str(out), *FAST]
    )
    captured = capsys.readouterr().out
    assert code == 0
    assert out.exists()
    assert "iterations = 5" in captured  # resolved config echoed
    assert "psnr_vs_input" in captured


def test_apply_identity_pair_preserves_input(tiny_fixture, capsys):
    tmp_path, paths = tiny_fixture
    out = tmp_path / "out.png"
    code = run_cli(
        ["apply", "--before", paths["before"], "--after", paths["before"],
         "--input", paths["input"], "--output", str(out), *FAST]
    )
    assert code == 0
    produced = load_image(out)
    original = load_image(paths["input"])
    assert np.abs(produced.data - original.data).max() <= 1.0 / 255.0
    assert "psnr_vs_input = inf" in capsys.readouterr().out


def test_apply_save_and_reload_model(tiny_fixture):
    tmp_path, paths = tiny_fixture
    model_path = tmp_path / "edit.model"
    out_a = tmp_path / "a.png"
    out_b = tmp_path / "b.png"
    assert run_cli(
        ["apply", "--before", paths["before"], "--after", paths["after"],
         "--input", paths["input"], "--output", str(out_a),
         "--save-model", str(model_path), *FAST]
    ) == 0
    params = load_model(model_path)
    assert params.config.window_n == 5
    assert run_cli(
        ["apply", "--model", str(model_path), "--input", paths["input"],
         "--output", str(out_b), *FAST]
    ) == 0
    assert out_a.read_bytes() == out_b.read_bytes()


def test_apply_missing_reference_is_validation_error(tiny_fixture, capsys):
    tmp_path, paths = tiny_fixture
    code = run_cli(["apply", "--input", paths["input"], "--output", str(tmp_path / "x.png")])
    assert code == 1
    assert "--before" in capsys.readouterr().err


def _write_sources(tmp_path, count=3, size=(24, 24)):
    src_dir = tmp_path / "sources"
    src_dir.mkdir()
    rng = np.random.default_rng(1)
    for i in range(count):
        save_image(
            Image(rng.random((*size, 3)).astype(np.float32)),
            src_dir / f"s{i}.png",
        )
    return src_dir


def test_gen_then_eval_row_contract(tmp_path):
    src_dir = _write_sources(tmp_path, count=3)
    spec_a = tmp_path / "vig.txt"
    spec_a.write_text(serialize_preset(PresetSpec((Vignette(0.8, 1.0),))))
    spec_b = tmp_path / "ident.txt"
    spec_b.write_text("# identity\n")
    fixtures = tmp_path / "fixtures"
    assert run_cli(
        ["gen", "--spec", str(spec_a), "--spec", str(spec_b),
         "--inputs", str(src_dir), "--out", str(fixtures), "--seed", "3"]
    ) == 0
    assert (fixtures / "vig" / "000_before.png").exists()
    assert (fixtures / "vig" / "002_after.png").exists()
    assert (fixtures / "vig" / "spec.txt").read_text().startswith("vignette ")
    assert (fixtures / "ident" / "spec.txt").exists()

    report = tmp_path / "report.csv"
    assert run_cli(
        ["eval", "--fixtures", str(fixtures), "--report", str(report), *FAST]
    ) == 0
    lines = report.read_text().strip().splitlines()
    # header + 2 specs x 2 held-out + mean row
    assert lines[0] == "spec_id,image_id,psnr,ssim,train_seconds,infer_seconds"
    assert len(lines) == 1 + 2 * 2 + 1
    assert lines[-1].startswith("mean,")


def test_eval_deterministic_bytes_without_timings(tmp_path):
    src_dir = _write_sources(tmp_path, count=2)
    spec = tmp_path / "tone.txt"
    spec.write_text("tonecurve pts=0:0,0.5:0.3,1:1\n")
    fixtures = tmp_path / "fx"
    assert run_cli(
        ["gen", "--spec", str(spec), "--inputs", str(src_dir), "--out", str(fixtures),
         "--seed", "0"]
    ) == 0
    r1, r2 = tmp_path / "r1.csv", tmp_path / "r2.csv"
    for r in (r1, r2):
        assert run_cli(
            ["eval", "--fixtures", str(fixtures), "--report", str(r),
             "--no-timings", "--seed", "7", *FAST]
        ) == 0
    assert r1.read_bytes() == r2.read_bytes()


def test_select_ref_picks_exact_match(tmp_path, capsys):
    src_dir = _write_sources(tmp_path, count=3)
    spec = tmp_path / "ident.txt"
    spec.write_text("# identity\n")
    fixtures = tmp_path / "fx"
    run_cli(["gen", "--spec", str(spec), "--inputs", str(src_dir), "--out", str(fixtures),
             "--seed", "0"])
    cand_dir = fixtures / "ident"
    probe = sorted(cand_dir.glob("*_before.png"))[1]
    assert run_cli(["select-ref", "--input", str(probe), "--candidates", str(cand_dir)]) == 0
    out = capsys.readouterr().out
    assert "001_before.png" in out
    assert "distance = 0.000000" in out


def test_bench_reports_macs(capsys):
    assert run_cli(["bench", "--size", "64x48", "--repeat", "1"]) == 0
    out = capsys.readouterr().out
    cfg = ModelConfig()
    expected = mac_count(cfg, 48, 64)
    assert f"macs = {expected}" in out
    assert "mean_ms" in out and "min_ms" in out


def test_bench_bad_size_is_validation_error(capsys):
    assert run_cli(["bench", "--size", "banana"]) == 1
    assert "WxH" in capsys.readouterr().err


def test_make_sources_writes_files(tmp_path):
    out_dir = tmp_path / "src"
    assert run_cli(
        ["make-sources", "--out", str(out_dir), "--count", "2", "--size", "20x16",
         "--seed", "1"]
    ) == 0
    files = sorted(out_dir.glob("*.png"))
    assert len(files) == 2
    img = load_image(files[0])
    assert (img.height, img.width) == (16, 20)


def test_unknown_subcommand_exits_2():
    assert run_cli(["frobnicate"]) == 2


def test_unknown_flag_exits_2():
    assert run_cli(["bench", "--size", "8x8", "--warp-speed"]) == 2


def test_no_arguments_exits_2():
    assert run_cli([]) == 2
