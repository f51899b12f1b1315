import json
import subprocess
import sys

import jsonschema
import numpy as np
import pytest
import yaml
from PIL import Image

from textmark import cli
from textmark.data_io import read_image, synth_dataset, tensor_to_uint8, write_dataset

TINY_CONFIG = {
    "pretrain_epochs": 20,
    "full_epochs": 4,
    "eval_every": 2,
    "batch_size": 4,
    "codec": {"num_layers": 1, "d_model": 16, "ff_dim": 32, "num_heads": 2},
    "stego": {"image_size": 32, "patch_size": 8, "vit_depth": 1, "vit_dim": 32, "vit_heads": 2},
}


def run(argv, capsys):
    code = cli.main(argv)
    out, err = capsys.readouterr()
    return code, out, err


def run_json(argv, capsys):
    code, out, err = run([*argv, "--json"], capsys)
    summary = json.loads(out.strip().splitlines()[-1])
    jsonschema.validate(summary, cli.SUMMARY_SCHEMA)
    assert summary["exit_code"] == code
    return code, summary, err


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    ds = synth_dataset(7, 4, size=32)
    write_dataset(ds, root / "images", root / "sentences.txt")
    (root / "tiny.yaml").write_text(yaml.safe_dump(TINY_CONFIG))
    base = ["--profile", "desk", "--config", str(root / "tiny.yaml"), "--seed", "1"]
    data = ["--images", str(root / "images"), "--sentences", str(root / "sentences.txt")]
    assert cli.main(["pretrain", *base, "--sentences", str(root / "sentences.txt"), "--out", str(root / "codec.pt")]) == 0
    assert cli.main(["train", *base, *data, "--checkpoint", str(root / "codec.pt"), "--out", str(root / "full.pt")]) == 0
    return {"root": root, "base": base, "data": data, "full": str(root / "full.pt"), "codec": str(root / "codec.pt")}


class TestBuildVocab:
    def _run(self, *args):
        return subprocess.run([sys.executable, "-m", "textmark", "build-vocab", *args], capture_output=True, text=True)

    def test_writes_file(self, tmp_path):
        (tmp_path / "s.txt").write_text("a b b\nc b a\n")
        p = self._run("--sentences", str(tmp_path / "s.txt"), "--out", str(tmp_path / "v.txt"), "--json")
        assert p.returncode == 0
        assert json.loads(p.stdout)["summary"]["size"] == 7
        lines = (tmp_path / "v.txt").read_text().splitlines()
        assert lines[0].startswith("#textmark-vocab v1") and lines[1:] == ["b", "a", "c"]

    def test_min_count(self, tmp_path):
        (tmp_path / "s.txt").write_text("a b b\nc b a\n")
        p = self._run("--sentences", str(tmp_path / "s.txt"), "--out", str(tmp_path / "v.txt"), "--min-count", "2")
        assert p.returncode == 0
        assert (tmp_path / "v.txt").read_text().splitlines()[1:] == ["b", "a"]

    def test_missing_corpus(self, tmp_path):
        p = self._run("--sentences", str(tmp_path / "none.txt"), "--out", str(tmp_path / "v.txt"))
        assert p.returncode == 1 and "not found" in p.stderr


def test_pretrain_artifacts(work):
    root = work["root"]
    for name in ("codec.pt", "codec.log.csv", "codec.summary.json", "full.pt", "full.log.csv", "full.summary.json"):
        assert (root / name).stat().st_size > 0
    header = (root / "full.log.csv").read_text().splitlines()[0]
    for col in ("epoch", "split", "text_loss", "image_mse", "embedding_mse", "ssim", "bleu"):
        assert col in header


def test_pretrain_deterministic(work, tmp_path, capsys):
    args = ["pretrain", *work["base"], "--sentences", str(work["root"] / "sentences.txt")]
    _, a, _ = run_json([*args, "--out", str(tmp_path / "a.pt")], capsys)
    _, b, _ = run_json([*args, "--out", str(tmp_path / "b.pt")], capsys)
    assert a["summary"] == b["summary"]
    assert (tmp_path / "a.log.csv").read_text() == (tmp_path / "b.log.csv").read_text()


def test_save_last(work, tmp_path):
    args = ["pretrain", *work["base"], "--sentences", str(work["root"] / "sentences.txt"), "--epochs", "2"]
    assert cli.main([*args, "--out", str(tmp_path / "c.pt"), "--save-last"]) == 0
    assert (tmp_path / "c.last.pt").is_file()


def test_config_error_names_field(work, tmp_path, capsys):
    (tmp_path / "bad.yaml").write_text("lr_stego: -1\n")
    code, _, err = run(["pretrain", "--config", str(tmp_path / "bad.yaml"), "--sentences",
                        str(work["root"] / "sentences.txt"), "--out", str(tmp_path / "x.pt")], capsys)
    assert code == 1 and "lr_stego" in err


def test_train_missing_checkpoint(work, tmp_path, capsys):
    code, summary, err = run_json(["train", *work["base"], *work["data"], "--out", str(tmp_path / "f.pt")], capsys)
    assert code == 1 and "--checkpoint" in err


def test_train_rejects_full_checkpoint(work, tmp_path, capsys):
    code, _, err = run(["train", *work["base"], *work["data"], "--checkpoint", work["full"],
                        "--out", str(tmp_path / "f.pt")], capsys)
    assert code == 1 and "--checkpoint" in err


class TestEmbedExtract:
    def test_embed_png(self, work, tmp_path, capsys):
        img = str(work["root"] / "images" / "synth_7_0000.png")
        code, summary, _ = run_json(["embed", "--checkpoint", work["full"], "--image", img, "--text", "a dog runs",
                                     "--out", str(tmp_path / "m.png")], capsys)
        assert code == 0 and summary["artifacts"] == [str(tmp_path / "m.png")]
        with Image.open(tmp_path / "m.png") as im:
            assert im.format == "PNG" and im.size == (32, 32) and im.mode == "RGB"

    def test_zero_strength_identity(self, work, tmp_path):
        src = tmp_path / "big.png"
        rng = np.random.default_rng(0)
        Image.fromarray(rng.integers(0, 256, (50, 70, 3), dtype=np.uint8)).save(src)
        assert cli.main(["embed", "--checkpoint", work["full"], "--image", str(src), "--text", "a dog",
                         "--strength", "0", "--out", str(tmp_path / "m.png")]) == 0
        resized = tensor_to_uint8(read_image(src, 32))
        assert np.array_equal(np.asarray(Image.open(tmp_path / "m.png")), resized)

    def test_unknown_words_warn(self, work, tmp_path, capsys, caplog):
        img = str(work["root"] / "images" / "synth_7_0001.png")
        code, summary, _ = run_json(["embed", "--checkpoint", work["full"], "--image", img, "--text", "qqq zzz",
                                     "--out", str(tmp_path / "m.png")], capsys)
        assert code == 0 and summary["summary"]["unknown_words"] == 2
        assert "not in the vocabulary" in caplog.text

    def test_empty_text(self, work, tmp_path, capsys):
        img = str(work["root"] / "images" / "synth_7_0001.png")
        code, _, err = run(["embed", "--checkpoint", work["full"], "--image", img, "--text", "  ",
                            "--out", str(tmp_path / "m.png")], capsys)
        assert code == 1 and "empty" in err

    def test_extract_deterministic(self, work, capsys):
        img = str(work["root"] / "images" / "synth_7_0002.png")
        _, a, _ = run_json(["extract", "--checkpoint", work["full"], "--image", img], capsys)
        _, b, _ = run_json(["extract", "--checkpoint", work["full"], "--image", img], capsys)
        assert a == b
        assert len(a["summary"]["tokens"]) == 16
        assert set(a["summary"]["embedding_stats"]) == {"mean", "std", "min", "max"}

    def test_extract_plain_text(self, work, capsys):
        img = str(work["root"] / "images" / "synth_7_0002.png")
        code, out, _ = run(["extract", "--checkpoint", work["full"], "--image", img], capsys)
        assert code == 0 and out.endswith("\n")

    def test_extract_malformed(self, work, tmp_path, capsys):
        (tmp_path / "bad.png").write_bytes(b"\x89PNG garbage")
        code, _, err = run(["extract", "--checkpoint", work["full"], "--image", str(tmp_path / "bad.png")], capsys)
        assert code == 1 and "bad.png" in err

    def test_codec_checkpoint_rejected(self, work, capsys):
        img = str(work["root"] / "images" / "synth_7_0002.png")
        code, _, err = run(["extract", "--checkpoint", work["codec"], "--image", img], capsys)
        assert code == 1


def test_attack_zero_grid_matches_evaluate(work, tmp_path, capsys):
    code, ev, _ = run_json(["evaluate", "--checkpoint", work["full"], *work["data"], "--out", str(tmp_path / "ev")],
                           capsys)
    assert code == 0
    code, _, _ = run_json(["attack", "--checkpoint", work["full"], *work["data"], "--out", str(tmp_path / "at"),
                           "--grid", "rotation=0;gaussian_blur=0;salt_pepper=0"], capsys)
    assert code == 0
    rows = json.loads((tmp_path / "at" / "sweep.json").read_text())
    assert len(rows) == 3
    for r in rows:
        for k in ("mse", "ssim", "psnr_db", "bleu", "n"):
            assert r[k] == ev["summary"][k]


def test_attack_grid_file(work, tmp_path):
    (tmp_path / "g.yaml").write_text("grids:\n  rotation: [0, 5]\n  salt_pepper: [0.1]\n")
    assert cli.main(["attack", "--checkpoint", work["full"], *work["data"], "--out", str(tmp_path / "at"),
                     "--grid", str(tmp_path / "g.yaml")]) == 0
    assert len((tmp_path / "at" / "sweep.csv").read_text().splitlines()) == 4


@pytest.mark.parametrize("grid", ["rotation", "jpeg=1,2", "rotation=a"])
def test_bad_grid(work, tmp_path, capsys, grid):
    code, _, err = run(["attack", "--checkpoint", work["full"], *work["data"], "--out", str(tmp_path),
                        "--grid", grid], capsys)
    assert code == 1 and "--grid" in err


def test_evaluate_missing_images(work, tmp_path, capsys):
    code, _, _ = run(["evaluate", "--checkpoint", work["full"], "--images", str(tmp_path / "none"),
                      "--sentences", str(work["root"] / "sentences.txt"), "--out", str(tmp_path)], capsys)
    assert code == 1


def test_plot_two_rows(tmp_path, capsys):
    (tmp_path / "s.csv").write_text("kind,severity,mse,ssim,psnr_db,bleu,n\nrotation,0.0,0,1,inf,1.0,4\n"
                                    "rotation,5.0,0,1,inf,0.5,4\n")
    code, summary, _ = run_json(["plot", "--csv", str(tmp_path / "s.csv"), "--out", str(tmp_path / "s.png")], capsys)
    assert code == 0 and summary["artifacts"] == [str(tmp_path / "s.png")]
    assert (tmp_path / "s.png").stat().st_size > 0


def test_plot_log(work, tmp_path):
    assert cli.main(["plot", "--csv", str(work["root"] / "full.log.csv"), "--out", str(tmp_path / "l.png")]) == 0
    assert (tmp_path / "l.png").stat().st_size > 0


def test_internal_error_exit_2(monkeypatch, capsys):
    def boom(args):
        raise RuntimeError("boom")

    monkeypatch.setitem(cli.COMMANDS, "plot", boom)
    code, summary, _ = run_json(["plot", "--csv", "x", "--out", "y"], capsys)
    assert code == 2 and "boom" in summary["summary"]["error"]


def test_synth(tmp_path, capsys):
    code, summary, _ = run_json(["synth", "--n", "3", "--size", "16", "--seed", "2", "--out", str(tmp_path)], capsys)
    assert code == 0 and summary["summary"]["n"] == 3
    assert len(list((tmp_path / "images").iterdir())) == 3


def test_ablation_two_arms(work, tmp_path, capsys):
    code, summary, _ = run_json(["ablation", *work["base"], *work["data"], "--epochs", "2", "--out", str(tmp_path),
                                 "--grid", "salt_pepper=0,0.1"], capsys)
    assert code == 0 and set(summary["summary"]) == {"with_noise", "without_noise"}
    report = json.loads((tmp_path / "ablation.json").read_text())
    a, b = report["arms"]["with_noise"]["config"], report["arms"]["without_noise"]["config"]
    assert a.pop("embedding_noise") is True and b.pop("embedding_noise") is False
    assert a == b
    assert (tmp_path / "sweep_with_noise.csv").is_file() and (tmp_path / "sweep_without_noise.csv").is_file()
