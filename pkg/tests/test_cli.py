import json

import numpy as np
import pytest
import torch
from PIL import Image

from conftest import TINY_CODEC, TINY_PREEDIT
from lvcodec.cli import main
from lvcodec.evalkit import CurvePoint, write_curve_csv
from lvcodec.pipeline import build_pipeline, save_checkpoint
from lvcodec.tokens import load_tokens


@pytest.fixture(scope="module")
def model_ckpt(tmp_path_factory):
    torch.manual_seed(0)
    pipe = build_pipeline(codec=TINY_CODEC, preedit=TINY_PREEDIT)
    path = tmp_path_factory.mktemp("model") / "tiny.ckpt"
    save_checkpoint(path, pipe, stage=3)
    return str(path)


@pytest.fixture()
def png(tmp_path):
    rng = np.random.default_rng(0)
    arr = (rng.random((96, 80, 3)) * 255).astype(np.uint8)
    path = tmp_path / "img.png"
    Image.fromarray(arr).save(path)
    return str(path)


def curve_csv(path, scale=1.0):
    points = [CurvePoint(q=i, bpp=scale * (0.25 * 2 ** i), metric=30.0 + 2 * i,
                         n_images=3) for i in range(6)]
    write_curve_csv(path, points)
    return str(path)


class TestBdrateCommand:
    def test_identical_curves_print_zero(self, tmp_path, capsys):
        a = curve_csv(tmp_path / "a.csv")
        rc = main(["bdrate", "--anchor", a, "--test", a])
        assert rc == 0
        assert capsys.readouterr().out.strip() == "0.00%"

    def test_half_rate(self, tmp_path, capsys):
        a = curve_csv(tmp_path / "a.csv")
        b = curve_csv(tmp_path / "b.csv", scale=0.5)
        rc = main(["bdrate", "--anchor", a, "--test", b])
        assert rc == 0
        assert capsys.readouterr().out.strip() == "-50.00%"

    def test_missing_file(self, tmp_path, capsys):
        a = curve_csv(tmp_path / "a.csv")
        rc = main(["bdrate", "--anchor", a, "--test", str(tmp_path / "nope.csv")])
        assert rc != 0
        assert "error" in capsys.readouterr().err.lower()


class TestEncodeDecode:
    def test_round_trip_dims(self, model_ckpt, png, tmp_path, capsys):
        out = tmp_path / "x.lvcc"
        rc = main(["encode", "--input", png, "--q", "2", "--model", model_ckpt,
                   "--output", str(out)])
        assert rc == 0
        rec = tmp_path / "rec.png"
        rc = main(["decode", "--input", str(out), "--model", model_ckpt,
                   "--output", str(rec)])
        assert rc == 0
        assert "q=2" in capsys.readouterr().out
        with Image.open(rec) as img:
            assert img.size == (80, 96)

    def test_undersized_image_is_a_clean_error(self, model_ckpt, tmp_path, capsys):
        rng = np.random.default_rng(9)
        arr = (rng.random((32, 32, 3)) * 255).astype(np.uint8)
        small = tmp_path / "small.png"
        Image.fromarray(arr).save(small)
        rc = main(["encode", "--input", str(small), "--q", "0",
                   "--model", model_ckpt, "--output", str(tmp_path / "x.lvcc")])
        assert rc != 0
        assert "smaller than" in capsys.readouterr().err

    def test_no_preedit_flag(self, model_ckpt, png, tmp_path):
        out = tmp_path / "x.lvcc"
        rc = main(["encode", "--input", png, "--q", "0", "--model", model_ckpt,
                   "--output", str(out), "--no-preedit"])
        assert rc == 0

    def test_decode_truncated_file(self, model_ckpt, png, tmp_path, capsys):
        out = tmp_path / "x.lvcc"
        main(["encode", "--input", png, "--q", "1", "--model", model_ckpt,
              "--output", str(out)])
        data = out.read_bytes()
        out.write_bytes(data[:len(data) - 7])
        rc = main(["decode", "--input", str(out), "--model", model_ckpt,
                   "--output", str(tmp_path / "rec.png")])
        assert rc != 0
        assert "decode error" in capsys.readouterr().err

    def test_encode_with_token_file(self, model_ckpt, png, tmp_path):
        tok = tmp_path / "t.tok"
        rc = main(["tokens", "--input", png, "--extractor", "toy",
                   "--output", str(tok)])
        assert rc == 0
        assert load_tokens(tok).shape == (64, 256)
        rc = main(["encode", "--input", png, "--q", "3", "--model", model_ckpt,
                   "--output", str(tmp_path / "x.lvcc"), "--tokens", str(tok)])
        assert rc == 0

    def test_unknown_flag_rejected(self, model_ckpt, png, tmp_path):
        with pytest.raises(SystemExit) as exc:
            main(["encode", "--input", png, "--q", "1", "--model", model_ckpt,
                  "--output", str(tmp_path / "x.lvcc"), "--frobnicate"])
        assert exc.value.code != 0


class TestCurveCommand:
    def test_curve_and_plot(self, model_ckpt, tmp_path, capsys):
        rng = np.random.default_rng(3)
        d = tmp_path / "imgs"
        d.mkdir()
        for i in range(2):
            arr = (rng.random((64, 64, 3)) * 255).astype(np.uint8)
            Image.fromarray(arr).save(d / f"{i}.png")
        out_csv = tmp_path / "curve.csv"
        plot = tmp_path / "curve.svg"
        rc = main(["curve", "--dir", str(d), "--model", model_ckpt,
                   "--metric", "psnr", "--out", str(out_csv),
                   "--plot", str(plot)])
        assert rc == 0
        assert out_csv.exists() and plot.stat().st_size > 0
        lines = out_csv.read_text().splitlines()
        assert lines[0] == "q,bpp,metric,n_images"
        assert len(lines) == 7


class TestTrainCommand:
    def test_train_stage1_smoke(self, toy_image_dir, tmp_path, capsys):
        cfg = dict(stage=1, dataset_path=str(toy_image_dir), iterations=2,
                   batch_size=2, crop_size=64, codec=TINY_CODEC,
                   preedit=TINY_PREEDIT, out_dir=str(tmp_path / "run"), seed=1)
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps(cfg))
        rc = main(["train", "--config", str(cfg_path)])
        assert rc == 0
        out = capsys.readouterr().out
        assert "checkpoint:" in out
        assert (tmp_path / "run" / "stage1.ckpt").exists()

    def test_train_stage2_resume_chain(self, toy_image_dir, tmp_path, capsys):
        base = dict(dataset_path=str(toy_image_dir), iterations=2, batch_size=2,
                    crop_size=64, codec=TINY_CODEC, preedit=TINY_PREEDIT,
                    out_dir=str(tmp_path / "run"), seed=1)
        (tmp_path / "s1.json").write_text(json.dumps(dict(stage=1, **base)))
        assert main(["train", "--config", str(tmp_path / "s1.json")]) == 0
        (tmp_path / "s2.json").write_text(json.dumps(dict(stage=2, **base)))
        # stage 2 without a checkpoint is a configuration error
        rc = main(["train", "--config", str(tmp_path / "s2.json")])
        assert rc != 0
        assert "error" in capsys.readouterr().err.lower()
        rc = main(["train", "--config", str(tmp_path / "s2.json"),
                   "--resume", str(tmp_path / "run" / "stage1.ckpt")])
        assert rc == 0
        assert (tmp_path / "run" / "stage2.ckpt").exists()


class TestComplexityCommand:
    def test_report_runs(self, model_ckpt, capsys):
        rc = main(["report-complexity", "--model", model_ckpt])
        assert rc == 0
        out = capsys.readouterr().out
        for name in ("token_extractor", "preedit", "encoder", "decoder"):
            assert name in out
        # reference values printed alongside
        assert "23.51" in out and "30.97" in out and "30.45" in out
