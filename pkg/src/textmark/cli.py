"""Command-line entry point: ``textmark <command> [options]``.

Exit codes: 0 success, 1 user error (bad input, config or checkpoint),
2 internal error.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import torch

from .checkpoint import Checkpoint, CheckpointError
from .config import ConfigError, load_config_file, make_config
from .data_io import load_paired, load_sentences, read_image, synth_dataset, write_dataset, write_png
from .evaluation import SweepRow, evaluate_model, robustness_sweep_model
from .experiments import ablation_noise_pretraining, write_history_csv, write_json, write_sweep_csv
from .objectives import MetricsReport
from .perturb import IMAGE_DISTORTIONS
from .text_codec import Vocabulary, build_vocabulary, detokenize, tokenize
from .training import TrainingDiverged, pretrain_codec, train_full

log = logging.getLogger("textmark")

SUMMARY_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["command", "exit_code", "artifacts", "summary"],
    "properties": {
        "command": {"type": "string"},
        "exit_code": {"type": "integer", "enum": [0, 1, 2]},
        "artifacts": {"type": "array", "items": {"type": "string"}},
        "summary": {"type": "object"},
    },
    "additionalProperties": False,
}


class UserError(Exception):
    pass


def _json_safe(obj):
    if isinstance(obj, float) and math.isinf(obj):
        return "inf"
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    return obj


def _config(args):
    overrides = load_config_file(args.config) if getattr(args, "config", None) else {}
    profile = args.profile or overrides.pop("profile", None) or "paper"
    overrides.pop("profile", None)
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "strength", None) is not None:
        overrides["strength"] = args.strength
    if getattr(args, "no_noise", False):
        overrides["embedding_noise"] = False
    if getattr(args, "epochs", None) is not None:
        overrides["pretrain_epochs" if args.command == "pretrain" else "full_epochs"] = args.epochs
    if getattr(args, "grid", None):
        overrides["grids"] = parse_grid(args.grid)
    return make_config(profile, overrides)


def parse_grid(spec: str) -> dict:
    """A YAML/JSON file path, or inline ``kind=s1,s2;kind=...``."""
    p = Path(spec)
    if p.is_file():
        grids = load_config_file(p)
        grids = grids.get("grids", grids)
    else:
        grids = {}
        for part in filter(None, (s.strip() for s in spec.split(";"))):
            if "=" not in part:
                raise UserError(f"--grid: cannot parse {part!r} (expected kind=s1,s2,...)")
            kind, values = part.split("=", 1)
            try:
                grids[kind.strip()] = [float(v) for v in values.split(",") if v.strip()]
            except ValueError as e:
                raise UserError(f"--grid: bad severity in {part!r}") from e
    for kind in grids:
        if kind not in IMAGE_DISTORTIONS:
            raise UserError(f"--grid: unknown distortion kind {kind!r}")
    return grids


def _require(args, *names):
    for n in names:
        if getattr(args, n.replace("-", "_"), None) in (None, ""):
            raise UserError(f"missing required flag --{n}")


def _load_full(path) -> Checkpoint:
    ckpt = Checkpoint.load(path)
    if ckpt.phase != "full":
        raise UserError(f"--checkpoint {path} is a {ckpt.phase} checkpoint; this command needs a full one")
    return ckpt


def _side_paths(out: Path) -> tuple[Path, Path]:
    return out.with_suffix(".log.csv"), out.with_suffix(".summary.json")


# -- commands -----------------------------------------------------------------


def cmd_synth(args):
    ds = synth_dataset(args.seed if args.seed is not None else 7, args.n, args.kind, args.size)
    out = Path(args.out)
    write_dataset(ds, out / "images", out / "sentences.txt")
    ds.write_manifest(out / "manifest.json")
    return [str(out / "images"), str(out / "sentences.txt"), str(out / "manifest.json")], {"n": len(ds)}


def cmd_build_vocab(args):
    _require(args, "sentences", "out")
    vocab = build_vocabulary(load_sentences(args.sentences), args.min_count)
    vocab.save(args.out)
    return [args.out], {"size": len(vocab)}


def cmd_pretrain(args):
    _require(args, "sentences", "out")
    cfg = _config(args)
    sentences = load_sentences(args.sentences)
    vocab = Vocabulary.load(args.vocab) if args.vocab else build_vocabulary(sentences)
    res = pretrain_codec(cfg, sentences, vocab)
    out = Path(args.out)
    log_csv, summary = _side_paths(out)
    res.best.save(out)
    write_history_csv(res.history, log_csv)
    final = [h for h in res.history if h["split"] == "val"][-1]
    result = {"phase": "pretrain_codec", "final_val": final, "vocab_size": len(vocab)}
    write_json(_json_safe(result), summary)
    artifacts = [str(out), str(log_csv), str(summary)]
    if args.save_last:
        last = out.with_suffix(".last.pt")
        res.last.save(last)
        artifacts.append(str(last))
    return artifacts, result


def cmd_train(args):
    _require(args, "checkpoint", "images", "sentences", "out")
    codec_ckpt = Checkpoint.load(args.checkpoint)
    if codec_ckpt.phase != "pretrain_codec":
        raise UserError(f"--checkpoint must be a pretrain checkpoint, got phase {codec_ckpt.phase!r}")
    cfg = _config(args)
    data = load_paired(args.images, args.sentences, cfg.stego.image_size, cfg.seed)
    target = (args.target_bleu, args.target_ssim) if args.target_bleu is not None else None
    res = train_full(cfg, data, codec_ckpt, target=target)
    out = Path(args.out)
    log_csv, summary = _side_paths(out)
    res.best.save(out)
    write_history_csv(res.history, log_csv)
    final = [h for h in res.history if h["split"] == "val"][-1]
    result = {"phase": "full", "final_val": final, "epochs_run": max(h["epoch"] for h in res.history)}
    write_json(_json_safe(result), summary)
    artifacts = [str(out), str(log_csv), str(summary)]
    if args.save_last:
        last = out.with_suffix(".last.pt")
        res.last.save(last)
        artifacts.append(str(last))
    return artifacts, result


def cmd_embed(args):
    _require(args, "checkpoint", "image", "text", "out")
    if not args.text.strip():
        raise UserError("--text is empty")
    ckpt = _load_full(args.checkpoint)
    model = ckpt.build_model()
    size = ckpt.config.stego.image_size
    cover = _read_image(args.image, size)
    seq = tokenize(args.text, ckpt.vocab)
    if seq.length > len(seq.ids):
        log.warning("sentence has %d words; only the first %d are embedded", seq.length, len(seq.ids))
    n_unk = sum(1 for i in seq.ids if i == ckpt.vocab.unk_id)
    if n_unk:
        log.warning("%d word(s) are not in the vocabulary and will be embedded as <unk>", n_unk)
    marked = model.embed(cover.unsqueeze(0), seq.tensor().unsqueeze(0), args.strength)[0]
    write_png(marked, args.out)
    return [args.out], {"tokens": list(seq.ids), "unknown_words": n_unk}


def _read_image(path, size):
    try:
        return read_image(path, size)
    except FileNotFoundError as e:
        raise UserError(f"image not found: {path}") from e
    except OSError as e:
        raise UserError(f"unreadable image {path}: {e}") from e


def cmd_extract(args):
    _require(args, "checkpoint", "image")
    ckpt = _load_full(args.checkpoint)
    model = ckpt.build_model()
    marked = _read_image(args.image, ckpt.config.stego.image_size)
    ids, z_hat = model.extract(marked.unsqueeze(0))
    text = detokenize(ids[0].tolist(), ckpt.vocab)
    summary = {
        "text": text,
        "tokens": ids[0].tolist(),
        "embedding_stats": {
            "mean": z_hat.mean().item(),
            "std": z_hat.std().item(),
            "min": z_hat.min().item(),
            "max": z_hat.max().item(),
        },
    }
    if not args.json:
        print(text)
    return [], summary


def _eval_data(args, ckpt):
    _require(args, "images", "sentences")
    seed = args.seed if args.seed is not None else ckpt.config.seed
    return load_paired(args.images, args.sentences, ckpt.config.stego.image_size, seed)


def cmd_evaluate(args):
    _require(args, "checkpoint", "out")
    ckpt = _load_full(args.checkpoint)
    data = _eval_data(args, ckpt)
    report = evaluate_model(ckpt.build_model(), data, ckpt.vocab, args.strength, through_png=not args.in_memory)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.csv").write_text(report.to_csv(), encoding="utf-8")
    (out / "metrics.json").write_text(report.to_json() + "\n", encoding="utf-8")
    return [str(out / "metrics.csv"), str(out / "metrics.json")], report.to_dict()


def cmd_attack(args):
    _require(args, "checkpoint", "out")
    ckpt = _load_full(args.checkpoint)
    data = _eval_data(args, ckpt)
    grids = parse_grid(args.grid) if args.grid else ckpt.config.grids
    seed = args.seed if args.seed is not None else ckpt.config.seed
    rows = robustness_sweep_model(ckpt.build_model(), data, ckpt.vocab, grids, seed, args.strength,
                                  through_png=not args.in_memory)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_sweep_csv(rows, out / "sweep.csv")
    write_json(_json_safe([r.to_dict() for r in rows]), out / "sweep.json")
    return [str(out / "sweep.csv"), str(out / "sweep.json")], {"rows": len(rows)}


def cmd_ablation(args):
    _require(args, "images", "sentences", "out")
    cfg = _config(args)
    data = load_paired(args.images, args.sentences, cfg.stego.image_size, cfg.seed)
    target = (args.target_bleu, args.target_ssim) if args.target_bleu is not None else None
    report = ablation_noise_pretraining(cfg, data, target=target)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_json(_json_safe(report), out / "ablation.json")
    arts = [str(out / "ablation.json")]
    for arm, res in report["arms"].items():
        rows = [SweepRow(r["kind"], r["severity"], MetricsReport.from_dict(r)) for r in res["sweep"]]
        write_sweep_csv(rows, out / f"sweep_{arm}.csv")
        arts.append(str(out / f"sweep_{arm}.csv"))
    return arts, {arm: res["mean_distorted_bleu"] for arm, res in report["arms"].items()}


def cmd_plot(args):
    _require(args, "csv", "out")
    from .plotting import plot_csv

    plot_csv(args.csv, args.out)
    return [args.out], {}


COMMANDS = {
    "synth": cmd_synth,
    "build-vocab": cmd_build_vocab,
    "pretrain": cmd_pretrain,
    "train": cmd_train,
    "embed": cmd_embed,
    "extract": cmd_extract,
    "evaluate": cmd_evaluate,
    "attack": cmd_attack,
    "ablation": cmd_ablation,
    "plot": cmd_plot,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="textmark", description="Text-in-image watermarking")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, *, config=False, data=False, ckpt=False):
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out")
        sp.add_argument("--json", action="store_true", help="print a JSON summary to stdout")
        if config:
            sp.add_argument("--config")
            sp.add_argument("--profile", choices=["paper", "desk"])
            sp.add_argument("--epochs", type=int)
            sp.add_argument("--no-noise", action="store_true", help="disable embedding noise in pretraining")
            sp.add_argument("--grid")
        if data:
            sp.add_argument("--images")
            sp.add_argument("--sentences")
        if ckpt:
            sp.add_argument("--checkpoint")
        return sp

    sp = common(sub.add_parser("synth", help="write a synthetic dataset"))
    sp.add_argument("--n", type=int, default=8)
    sp.add_argument("--size", type=int, default=224)
    sp.add_argument("--kind", default="mixed")

    sp = common(sub.add_parser("build-vocab", help="build a vocabulary file"), data=True)
    sp.add_argument("--min-count", type=int, default=1)

    sp = common(sub.add_parser("pretrain", help="pretrain the text codec"), config=True, data=True)
    sp.add_argument("--vocab")
    sp.add_argument("--strength", type=float)
    sp.add_argument("--save-last", action="store_true")

    sp = common(sub.add_parser("train", help="train the full network"), config=True, data=True, ckpt=True)
    sp.add_argument("--strength", type=float)
    sp.add_argument("--target-bleu", type=float)
    sp.add_argument("--target-ssim", type=float, default=0.0)
    sp.add_argument("--save-last", action="store_true")

    sp = common(sub.add_parser("embed", help="watermark one image"), ckpt=True)
    sp.add_argument("--image")
    sp.add_argument("--text")
    sp.add_argument("--strength", type=float)

    sp = common(sub.add_parser("extract", help="recover the sentence from a marked image"), ckpt=True)
    sp.add_argument("--image")

    for name in ("evaluate", "attack"):
        sp = common(sub.add_parser(name), data=True, ckpt=True)
        sp.add_argument("--strength", type=float)
        sp.add_argument("--in-memory", action="store_true", help="skip 8-bit quantization of marked images")
        if name == "attack":
            sp.add_argument("--grid")

    sp = common(sub.add_parser("ablation", help="noise vs no-noise pretraining"), config=True, data=True)
    sp.add_argument("--strength", type=float)
    sp.add_argument("--target-bleu", type=float)
    sp.add_argument("--target-ssim", type=float, default=0.0)

    sp = common(sub.add_parser("plot", help="render a metric CSV as a PNG line chart"))
    sp.add_argument("--csv")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    torch.use_deterministic_algorithms(True, warn_only=True)
    try:
        artifacts, summary = COMMANDS[args.command](args)
        code = 0
    except (UserError, ConfigError, CheckpointError, FileNotFoundError, ValueError, IndexError) as e:
        print(f"error: {e}", file=sys.stderr)
        artifacts, summary, code = [], {"error": str(e)}, 1
    except TrainingDiverged as e:
        print(f"error: training diverged: {e}", file=sys.stderr)
        artifacts, summary, code = [], {"error": str(e)}, 2
    except Exception as e:  # noqa: BLE001
        log.exception("internal error")
        artifacts, summary, code = [], {"error": f"{type(e).__name__}: {e}"}, 2
    if getattr(args, "json", False):
        print(json.dumps(_json_safe({"command": args.command, "exit_code": code, "artifacts": artifacts,
                                     "summary": summary}), sort_keys=True))
    return code


if __name__ == "__main__":
    sys.exit(main())
