import hashlib
import json

import numpy as np
import pytest
import torch
from PIL import Image

from textmark.data_io import (
    load_images,
    load_paired,
    load_sentences,
    pair_random,
    quantize,
    read_image,
    synth_dataset,
    write_dataset,
    write_png,
)
from textmark.text_codec import build_vocabulary, tokenize


def test_jpeg_resized(tmp_path):
    rng = np.random.default_rng(0)
    Image.fromarray(rng.integers(0, 256, (480, 640, 3), dtype=np.uint8)).save(tmp_path / "a.jpg")
    [(path, img)] = list(load_images(tmp_path, 224))
    assert path.name == "a.jpg"
    assert img.shape == (3, 224, 224) and img.dtype == torch.float32
    assert img.min() >= 0 and img.max() <= 1


def test_grayscale_replicated(tmp_path):
    Image.fromarray(np.arange(64 * 64, dtype=np.uint8).reshape(64, 64)).save(tmp_path / "g.png")
    img = read_image(tmp_path / "g.png", 32)
    assert torch.equal(img[0], img[1]) and torch.equal(img[1], img[2])


def test_empty_dir(tmp_path):
    with pytest.raises(FileNotFoundError):
        list(load_images(tmp_path))


def test_undecodable_skipped(tmp_path, caplog):
    (tmp_path / "bad.png").write_bytes(b"not an image")
    Image.new("RGB", (10, 10)).save(tmp_path / "ok.png")
    out = list(load_images(tmp_path, 16))
    assert [p.name for p, _ in out] == ["ok.png"]
    assert "bad.png" in caplog.text


def test_sorted_order(tmp_path):
    for name in ["c.png", "a.png", "b.png"]:
        Image.new("RGB", (8, 8)).save(tmp_path / name)
    assert [p.name for p, _ in load_images(tmp_path, 8)] == ["a.png", "b.png", "c.png"]


def test_sentences(tmp_path):
    p = tmp_path / "s.txt"
    p.write_text("first one\n\nsecond one\n", encoding="utf-8")
    assert load_sentences(p) == ["first one", "second one"]


def test_sentences_bad_utf8_names_line(tmp_path):
    p = tmp_path / "s.txt"
    p.write_bytes(b"ok\nbad \xff\xfe\n")
    with pytest.raises(ValueError, match=":2:"):
        load_sentences(p)


def test_sentences_missing(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_sentences(tmp_path / "nope.txt")


class TestPairing:
    def test_deterministic(self):
        imgs = [torch.zeros(3, 4, 4)] * 5
        sents = [f"s{i}" for i in range(7)]
        a, b = pair_random(imgs, sents, 3), pair_random(imgs, sents, 3)
        assert a.sentences == b.sentences and len(a) == 5

    def test_replacement(self):
        ds = pair_random([torch.zeros(3, 4, 4)] * 2, ["only"], 0)
        assert ds.sentences == ["only", "only"]

    def test_empty(self):
        with pytest.raises(ValueError):
            pair_random([], ["a"], 0)
        with pytest.raises(ValueError):
            pair_random([torch.zeros(3, 4, 4)], [], 0)


def _digest(ds):
    h = hashlib.sha256()
    for img, s in zip(ds.images, ds.sentences):
        h.update(img.numpy().tobytes())
        h.update(s.encode())
    return h.hexdigest()


class TestSynth:
    def test_deterministic(self):
        a, b = synth_dataset(7, 8, size=32), synth_dataset(7, 8, size=32)
        assert _digest(a) == _digest(b)

    def test_distinct_seeds(self):
        assert _digest(synth_dataset(7, 8, size=32)) != _digest(synth_dataset(8, 8, size=32))

    @pytest.mark.parametrize("kind", ["gradient", "checkerboard", "smooth", "mixed"])
    def test_contract(self, kind):
        ds = synth_dataset(1, 6, kind, size=32)
        vocab = build_vocabulary(ds.sentences)
        for img, s in zip(ds.images, ds.sentences):
            assert img.shape == (3, 32, 32) and img.min() >= 0 and img.max() <= 1
            assert len(s.split()) <= 16
            assert vocab.unk_id not in tokenize(s, vocab).ids

    def test_sentences_distinct(self):
        ds = synth_dataset(7, 8, size=16)
        assert len(set(ds.sentences)) == 8

    def test_bad_args(self):
        with pytest.raises(ValueError):
            synth_dataset(0, 0)
        with pytest.raises(ValueError):
            synth_dataset(0, 1, "noise")

    def test_written_and_reloaded(self, tmp_path):
        ds = synth_dataset(7, 4, size=32)
        write_dataset(ds, tmp_path / "img", tmp_path / "s.txt")
        again = load_paired(tmp_path / "img", tmp_path / "s.txt", 32, seed=0)
        assert sorted(again.sentences) == sorted(ds.sentences)
        for img in again.images:
            assert any(torch.equal(img, quantize(orig)) for orig in ds.images)
        ds.write_manifest(tmp_path / "m.json")
        m = json.loads((tmp_path / "m.json").read_text())
        assert m["seed"] == 7 and m["split"] == "train" and len(m["images"]) == 4


def test_png_round_trip_is_quantize(tmp_path):
    img = torch.rand(3, 16, 16, generator=torch.Generator().manual_seed(0))
    write_png(img, tmp_path / "x.png")
    assert torch.equal(read_image(tmp_path / "x.png", 16), quantize(img))
