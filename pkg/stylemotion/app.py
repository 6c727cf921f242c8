"""Generate stylized facial motion from phonemes and reference clips.

Main entry point of the `stylemotion` command.
"""

import argparse
import csv
import json
import logging
import os
import sys
from collections.abc import Callable, Sequence
from pathlib import Path

import numpy as np
import torch

from stylemotion import __version__
from stylemotion.checkpoint import (
    load_checkpoint,
    load_generator,
    load_style_disc,
    load_sync_disc,
    save_discriminator,
    save_generator,
)
from stylemotion.config import RunConfig, load
from stylemotion.core import (
    FaceBasis,
    FaceSplit,
    MotionSequence,
    TrainingClip,
    read_motion,
    read_phonemes,
    read_style_code,
    write_motion,
    write_style_code,
)
from stylemotion.discriminators import (
    evaluate_sync,
    face_vertices,
    holdout_split,
    mouth_points,
    pretrain_sync_disc,
    sample_sync_pairs,
)
from stylemotion.errors import (
    CheckpointError,
    ConfigError,
    ContractError,
    DataError,
    FormatError,
)
from stylemotion.metrics import (
    landmark_distance,
    nearest_centroid_accuracy,
    project_2d,
    silhouette,
)
from stylemotion.model import (
    MotionGenerator,
    build_generator,
    generate,
    interpolate_styles,
)
from stylemotion.style_encoder import StyleCode, extract_style
from stylemotion.synth_data import (
    SyntheticCorpus,
    gen_basis,
    gen_corpus,
    read_dataset,
    separability,
    write_dataset,
)
from stylemotion.training import (
    ABLATIONS,
    apply_ablation,
    pretrain_style_disc,
    torch_dtype,
    train,
)

logging.basicConfig(
    format="%(asctime)s - %(levelname)-7s - %(module)s.py:%(lineno)d - %(message)s",
    datefmt="%H:%M:%S",
    level="WARNING",
)
logger = logging.getLogger("stylemotion")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3

GENERATOR_FILE = "generator.ckpt"
LOSS_LOG_FILE = "losses.jsonl"
EVAL_PAIRS = 1024


def _require_file(path: Path) -> Path:
    if not Path(path).is_file():
        message = f"No such file: {path}"
        raise FileNotFoundError(message)
    return Path(path)


def _require_dir(path: Path) -> Path:
    if not Path(path).is_dir():
        message = f"No such directory: {path}"
        raise FileNotFoundError(message)
    return Path(path)


def _output_path(path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def _output_dir(path: Path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    if not os.access(path, os.W_OK):
        message = f"Output directory is not writable: {path}"
        raise PermissionError(message)
    return path


def _check_corpus(corpus: SyntheticCorpus, config: RunConfig) -> None:
    if corpus.vocab > config.model.vocab_size:
        message = (
            f"Corpus vocabulary {corpus.vocab} exceeds model.vocab_size "
            f"{config.model.vocab_size}."
        )
        raise ContractError(message)


def _style_source(clip: TrainingClip) -> MotionSequence:
    return clip.style_ref if clip.style_ref is not None else clip.target


def cmd_gen_data(args: argparse.Namespace, config: RunConfig) -> int:
    data = config.data
    seed = data.seed if args.seed is None else args.seed
    styles = data.styles if args.styles is None else args.styles
    per_style = args.clips_per_style
    if per_style is None:
        per_style = data.clips_per_style
    vertices = data.vertices if args.vertices is None else args.vertices
    split = FaceSplit(data.lower_indices)

    corpus = gen_corpus(
        seed,
        styles,
        per_style,
        config.train.clip_length,
        config.model.vocab_size,
        split=split,
        noise_scale=data.noise_scale,
        mean_dwell=data.mean_dwell,
    )
    basis = gen_basis(seed, vertices, split)
    write_dataset(args.out, corpus, basis, split)
    score = separability(corpus.clips)
    logger.info("Wrote corpus with seed %s to %s.", seed, args.out)
    print(
        f"{len(corpus.clips)} clips in {styles} styles, "
        f"{config.train.clip_length} frames each, separability {score:.3f}"
    )
    return EXIT_OK


def cmd_pretrain(args: argparse.Namespace, config: RunConfig) -> int:
    corpus, basis, _ = read_dataset(_require_dir(args.data))
    _check_corpus(corpus, config)
    out = _output_path(args.out)
    if args.which == "sync":
        result = pretrain_sync_disc(corpus.clips, basis, config)
        label = "sync AUC"
    else:
        result = pretrain_style_disc(corpus.clips, config)
        label = "style accuracy"
    save_discriminator(out, result.discriminator, config, result.metric)
    logger.info("Saved frozen %s discriminator to %s.", args.which, out)
    print(f"held-out {label}: {result.metric:.4f}")
    return EXIT_OK


def cmd_train(args: argparse.Namespace, config: RunConfig) -> int:
    config = apply_ablation(config, args.ablation)
    sync_path = _require_file(args.sync_ckpt) if args.sync_ckpt else None
    style_path = _require_file(args.style_ckpt) if args.style_ckpt else None
    data = _require_dir(args.data)
    out = _output_dir(args.out)
    corpus, basis, split = read_dataset(data)
    _check_corpus(corpus, config)
    sync_disc = load_sync_disc(sync_path) if sync_path else None
    style_disc = load_style_disc(style_path) if style_path else None

    rng = np.random.default_rng(config.train.seed)
    train_clips, held_out = holdout_split(
        corpus.clips, config.discriminator.holdout_fraction, rng
    )
    generator = build_generator(
        config.model, split, config.train.seed, torch_dtype(config.train.precision)
    )
    trainer, history = train(
        generator,
        train_clips,
        config,
        basis=basis,
        sync_disc=sync_disc,
        style_disc=style_disc,
        log_path=out / LOSS_LOG_FILE,
    )
    state = {
        "steps": trainer.step,
        "ablation": args.ablation,
        "held_out": [c.clip_id for c in held_out],
    }
    save_generator(out / GENERATOR_FILE, generator, config, state)
    logger.info("Saved generator to %s.", out / GENERATOR_FILE)
    if history:
        first, last = history[0], history[-1]
        print(
            f"rec loss {first['rec']:.4f} -> {last['rec']:.4f} "
            f"in {len(history)} steps"
        )
    return EXIT_OK


def cmd_extract_style(args: argparse.Namespace, _: RunConfig) -> int:
    generator, _ = load_generator(_require_file(args.ckpt))
    motion = read_motion(_require_file(args.motion))
    code = extract_style(motion, generator.style_encoder)
    write_style_code(_output_path(args.out), code.values)
    return EXIT_OK


def cmd_infer(args: argparse.Namespace, _: RunConfig) -> int:
    generator, _ = load_generator(_require_file(args.ckpt))
    phonemes = read_phonemes(_require_file(args.phonemes))
    style = StyleCode(read_style_code(_require_file(args.style)))
    write_motion(_output_path(args.out), generate(phonemes, style, generator))
    return EXIT_OK


def cmd_interpolate(args: argparse.Namespace, _: RunConfig) -> int:
    first = StyleCode(read_style_code(_require_file(args.style_a)))
    second = StyleCode(read_style_code(_require_file(args.style_b)))
    style = interpolate_styles(first, second, args.alpha)
    generator, _ = load_generator(_require_file(args.ckpt))
    phonemes = read_phonemes(_require_file(args.phonemes))
    write_motion(_output_path(args.out), generate(phonemes, style, generator))
    if args.code_out:
        write_style_code(_output_path(args.code_out), style.values)
    return EXIT_OK


def _style_codes(
    clips: Sequence[TrainingClip], generator: MotionGenerator
) -> np.ndarray:
    encoder = generator.style_encoder
    return np.stack([extract_style(c.target, encoder).values for c in clips])


def _landmark_rows(
    clips: Sequence[TrainingClip],
    generated: Sequence[MotionSequence],
    basis: FaceBasis,
) -> list[dict]:
    rows = []
    for clip, motion in zip(clips, generated, strict=True):
        reference = torch.as_tensor(clip.target.frames, dtype=torch.float64)
        predicted = torch.as_tensor(motion.frames, dtype=torch.float64)
        rows.append(
            {
                "clip_id": clip.clip_id,
                "f_lmd": landmark_distance(
                    face_vertices(reference, basis).numpy(),
                    face_vertices(predicted, basis).numpy(),
                ),
                "m_lmd": landmark_distance(
                    mouth_points(reference, basis).numpy(),
                    mouth_points(predicted, basis).numpy(),
                ),
            }
        )
    return rows


def cmd_eval(args: argparse.Namespace, _: RunConfig) -> int:
    ckpt = _require_file(args.ckpt)
    sync_path = _require_file(args.sync_ckpt) if args.sync_ckpt else None
    corpus, basis, _ = read_dataset(_require_dir(args.data))
    generator, config = load_generator(ckpt)
    _check_corpus(corpus, config)

    held_ids = set(load_checkpoint(ckpt).state.get("held_out", []))
    if held_ids:
        held_out = [c for c in corpus.clips if c.clip_id in held_ids]
        train_clips = [c for c in corpus.clips if c.clip_id not in held_ids]
    else:
        rng = np.random.default_rng(config.train.seed)
        train_clips, held_out = holdout_split(
            corpus.clips, config.discriminator.holdout_fraction, rng
        )
    if not held_out or not train_clips:
        raise DataError("Evaluation needs both training and held-out clips.")

    encoder = generator.style_encoder
    generated = [
        generate(c.phonemes, extract_style(_style_source(c), encoder), generator)
        for c in held_out
    ]
    rows = _landmark_rows(held_out, generated, basis)
    report = {
        "clips": len(held_out),
        "f_lmd": float(np.mean([r["f_lmd"] for r in rows])),
        "m_lmd": float(np.mean([r["m_lmd"] for r in rows])),
        "sync_auc": None,
        "per_clip": rows,
    }
    if sync_path is not None:
        sync_disc = load_sync_disc(sync_path).to(torch.float32)
        fakes = [
            TrainingClip(c.clip_id, c.phonemes, motion, c.style_label)
            for c, motion in zip(held_out, generated, strict=True)
        ]
        pairs = sample_sync_pairs(
            fakes,
            basis,
            sync_disc.half_width,
            EVAL_PAIRS,
            np.random.default_rng([config.train.seed, 2]),
        )
        report["sync_auc"] = evaluate_sync(sync_disc, pairs)

    train_codes = _style_codes(train_clips, generator)
    held_codes = _style_codes(held_out, generator)
    train_labels = np.array([c.style_label for c in train_clips])
    held_labels = np.array([c.style_label for c in held_out])
    report["style_accuracy"] = nearest_centroid_accuracy(
        train_codes, train_labels, held_codes, held_labels
    )
    report["silhouette"] = silhouette(held_codes, held_labels)

    _output_path(args.report).write_text(json.dumps(report, indent=2), encoding="utf-8")
    print(
        f"F-LMD {report['f_lmd']:.4f}, M-LMD {report['m_lmd']:.4f}, "
        f"style accuracy {report['style_accuracy']:.3f}, "
        f"silhouette {report['silhouette']:.3f}"
    )
    return EXIT_OK


def cmd_project_styles(args: argparse.Namespace, _: RunConfig) -> int:
    generator, _ = load_generator(_require_file(args.ckpt))
    corpus, _, _ = read_dataset(_require_dir(args.data))
    coords = project_2d(_style_codes(corpus.clips, generator))
    with _output_path(args.out).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["clip_id", "style_label", "x", "y"])
        for clip, (x, y) in zip(corpus.clips, coords, strict=True):
            writer.writerow(
                [clip.clip_id, clip.style_label, repr(float(x)), repr(float(y))]
            )
    return EXIT_OK


def _add_command(
    subparsers: argparse._SubParsersAction,
    name: str,
    handler: Callable[[argparse.Namespace, RunConfig], int],
    help_text: str,
    parents: list[argparse.ArgumentParser],
) -> argparse.ArgumentParser:
    parser = subparsers.add_parser(name, help=help_text, parents=parents)
    parser.set_defaults(handler=handler)
    return parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        "-v", "--verbose", action="store_true", help="Verbose log output for debugging"
    )
    common.add_argument("--config", type=Path, help="User config file (toml)")
    common.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="SECTION.KEY=VALUE",
        help="Override one config value, can be repeated",
    )

    parser = argparse.ArgumentParser(prog="stylemotion", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    subparsers = parser.add_subparsers(dest="command", required=True)

    gen = _add_command(
        subparsers, "gen-data", cmd_gen_data, "Generate a synthetic corpus", [common]
    )
    gen.add_argument("--seed", type=int)
    gen.add_argument("--styles", type=int)
    gen.add_argument("--clips-per-style", type=int)
    gen.add_argument("--vertices", type=int)
    gen.add_argument("--out", type=Path, required=True)

    pre = _add_command(
        subparsers, "pretrain", cmd_pretrain, "Pretrain a frozen critic", [common]
    )
    pre.add_argument("--data", type=Path, required=True)
    pre.add_argument("--which", choices=("sync", "style"), required=True)
    pre.add_argument("--out", type=Path, required=True)

    trn = _add_command(subparsers, "train", cmd_train, "Train the generator", [common])
    trn.add_argument("--data", type=Path, required=True)
    trn.add_argument("--sync-ckpt", type=Path)
    trn.add_argument("--style-ckpt", type=Path)
    trn.add_argument("--ablation", choices=sorted(ABLATIONS), default="full")
    trn.add_argument("--out", type=Path, required=True)

    ext = _add_command(
        subparsers,
        "extract-style",
        cmd_extract_style,
        "Extract a style code from a motion file",
        [common],
    )
    ext.add_argument("--ckpt", type=Path, required=True)
    ext.add_argument("--motion", type=Path, required=True)
    ext.add_argument("--out", type=Path, required=True)

    inf = _add_command(
        subparsers, "infer", cmd_infer, "Decode phonemes with a style code", [common]
    )
    inf.add_argument("--ckpt", type=Path, required=True)
    inf.add_argument("--phonemes", type=Path, required=True)
    inf.add_argument("--style", type=Path, required=True)
    inf.add_argument("--out", type=Path, required=True)

    itp = _add_command(
        subparsers,
        "interpolate",
        cmd_interpolate,
        "Decode phonemes with a blend of two style codes",
        [common],
    )
    itp.add_argument("--ckpt", type=Path, required=True)
    itp.add_argument("--style-a", type=Path, required=True)
    itp.add_argument("--style-b", type=Path, required=True)
    itp.add_argument("--alpha", type=float, required=True)
    itp.add_argument("--phonemes", type=Path, required=True)
    itp.add_argument("--out", type=Path, required=True)
    itp.add_argument("--code-out", type=Path, help="Also write the blended style code")

    evl = _add_command(
        subparsers, "eval", cmd_eval, "Write an evaluation report", [common]
    )
    evl.add_argument("--ckpt", type=Path, required=True)
    evl.add_argument("--data", type=Path, required=True)
    evl.add_argument("--sync-ckpt", type=Path)
    evl.add_argument("--report", type=Path, required=True)

    prj = _add_command(
        subparsers,
        "project-styles",
        cmd_project_styles,
        "Export 2-D style code coordinates as CSV",
        [common],
    )
    prj.add_argument("--ckpt", type=Path, required=True)
    prj.add_argument("--data", type=Path, required=True)
    prj.add_argument("--out", type=Path, required=True)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    """Run one command and return its exit code."""
    args = build_parser().parse_args(argv)
    if args.verbose:
        logger.setLevel("DEBUG")
        logger.debug("CLI Options: %s", vars(args))
    try:
        config = load(args.config, args.overrides)
        return args.handler(args, config)
    except (ConfigError, ContractError, DataError) as exc:
        print(f"stylemotion {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, FormatError, CheckpointError) as exc:
        print(f"stylemotion {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
