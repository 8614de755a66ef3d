import json

import numpy as np
import pytest

from nnfield import io
from nnfield.cli import RunConfig, load_config, build_parser, main, psnr, read_trace
from nnfield.tensor import bicubic_resize


@pytest.fixture
def pair(tmp_path, rng):
    from conftest import smooth_texture

    ref = smooth_texture(rng, 40, 40)
    lr = bicubic_resize(ref[4:36, 4:36], 8, 8)
    io.write_image(tmp_path / "ref.ppm", ref)
    io.write_image(tmp_path / "lr.ppm", np.clip(lr, 0, 1))
    return tmp_path / "lr.ppm", tmp_path / "ref.ppm"


def run(*args):
    return main([str(a) for a in args])


def base(pair):
    return ["--lr", pair[0], "--ref", pair[1], "--n", 2]


def test_match_outputs(pair, tmp_path):
    out = tmp_path / "m"
    assert run("match", *base(pair), "--out", out, "--dump-levels") == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["lr_up_size"] == [32, 32]
    assert len(summary["scales"]) == 2
    s0 = summary["scales"][0]
    assert s0["relevance_evals"] == sum(s0["per_level_breakdown"]) == 18 * (16 + 64 + 256 * 2 + 1024 * 12)
    pos, rel = io.read_nnf(out / "nnf_scale0.nnf")
    assert pos.shape == (32, 32, 2) and np.all(np.abs(rel) <= 1)
    assert (out / "nnf_scale1_level3.nnf").exists()
    assert "wall_time" in json.loads((out / "timing.json").read_text())


def test_transfer_and_reuse(pair, tmp_path):
    assert run("match", *base(pair), "--out", tmp_path / "m") == 0
    assert run("transfer", *base(pair), "--out", tmp_path / "a.ppm") == 0
    assert run("transfer", *base(pair), "--nnf-dir", tmp_path / "m", "--out", tmp_path / "b.ppm") == 0
    assert (tmp_path / "a.ppm").read_bytes() == (tmp_path / "b.ppm").read_bytes()
    assert io.read_image(tmp_path / "a.ppm").shape == (32, 32, 3)


def test_transfer_flags(pair, tmp_path):
    assert run("transfer", *base(pair), "--patch-size", 5, "--no-mean-subtract", "--ref-degrade",
               "--kernel", "box", "--out", tmp_path / "c.png") == 0
    assert io.read_image(tmp_path / "c.png").shape == (32, 32, 3)


def test_convergence_csv(pair, tmp_path):
    out = tmp_path / "c"
    assert run("convergence", *base(pair), "--out", out, "--single-iters", 3) == 0
    text = (out / "cfe.csv").read_text()
    assert text.startswith("evals,mse\n")
    cfe = read_trace(out / "cfe.csv")
    single = read_trace(out / "single.csv")
    assert len(cfe) == 1 + 6 * 2 and len(single) == 1 + 3 * 2
    assert single[0][0] == 32 * 32


def test_bench(tmp_path, capsys):
    assert run("bench", "--sizes", 16, 32, "--out", tmp_path / "b.json") == 0
    rows = json.loads((tmp_path / "b.json").read_text())
    assert all(r["measured"] == r["predicted"] for r in rows if r["measured"] is not None)
    assert "ratio enumerated/cfe" in capsys.readouterr().out


def test_oracle(pair, tmp_path):
    assert run("match", *base(pair), "--out", tmp_path / "m") == 0
    assert run("oracle", *base(pair), "--nnf-dir", tmp_path / "m", "--out", tmp_path / "o") == 0
    summary = json.loads((tmp_path / "o" / "oracle_summary.json").read_text())
    for entry in summary["scales"]:
        assert entry["mean_gap"] >= 0
        assert entry["mse"] >= 0


def test_errors(tmp_path, pair, capsys):
    assert run("match", "--out", tmp_path / "x") == 1
    assert "--lr" in capsys.readouterr().err
    assert run("match", *base(pair)) == 1
    assert run("match", "--lr", tmp_path / "missing.ppm", "--ref", pair[1], "--out", tmp_path) == 1
    assert run("match", "--lr", pair[0], "--ref", pair[1], "--n", 30, "--out", tmp_path) == 1
    assert "level" in capsys.readouterr().err
    with pytest.raises(SystemExit):
        build_parser().parse_args(["frobnicate"])


def test_config_precedence(tmp_path):
    cfg_file = tmp_path / "c.toml"
    cfg_file.write_text('k = 0.5\nseed = 7\nscales = [0.5, 1.0]\niters = [1, 2]\n')
    args = build_parser().parse_args(["match", "--config", str(cfg_file), "--seed", "9"])
    cfg = load_config(args)
    assert (cfg.k, cfg.seed, cfg.scales, cfg.iters, cfg.n) == (0.5, 9, (0.5, 1.0), (1, 2), 5)
    cfg_file.write_text("bogus = 1\n")
    with pytest.raises(ValueError, match="bogus"):
        load_config(build_parser().parse_args(["match", "--config", str(cfg_file)]))


def test_run_config_validation():
    with pytest.raises(ValueError):
        RunConfig(scale=0)


def test_psnr():
    assert psnr(np.zeros(4), np.zeros(4)) == float("inf")
    assert psnr(np.zeros(4), np.full(4, 0.1)) == pytest.approx(20.0)
