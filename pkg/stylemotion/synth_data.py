"""Seeded synthetic corpora of stylized, phoneme-driven motion.

A style owns a phoneme-to-mouth-shape table (lower face) and a set of slow
oscillations (upper face). A clip draws a phoneme stream with geometric dwell times,
looks up and smooths the mouth shapes, adds the style's oscillations and a little
noise. All randomness derives from the corpus seed and the clip index, so any clip
can be regenerated on its own.

Directory layout written by `write_corpus`:

    index.json             seed, vocabulary, fps and one entry per clip
    styles.npz             the style parameters
    clips/<id>.mvec        motion file
    clips/<id>.phon.json   phoneme file
"""

import json
import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from stylemotion.core import (
    DEFAULT_FPS,
    EXPRESSION_DIM,
    LOWER_FACE_DIM,
    UPPER_FACE_DIM,
    FaceBasis,
    FaceSplit,
    MotionSequence,
    PhonemeSequence,
    TrainingClip,
    read_face_basis,
    read_face_split,
    read_motion,
    read_phonemes,
    save_arrays,
    write_face_basis,
    write_face_split,
    write_motion,
    write_phonemes,
)
from stylemotion.errors import ContractError, DataError, FormatError
from stylemotion.metrics import silhouette

logger = logging.getLogger("stylemotion")

COEFF_LIMIT = 3.0
INDEX_FILE = "index.json"
STYLES_FILE = "styles.npz"
BASIS_FILE = "basis.npz"
SPLIT_FILE = "split.json"
CLIPS_DIR = "clips"

# Scale of lower-face columns on non-mouth vertices, and of upper-face columns on
# mouth vertices, before orthonormalization.
_OFF_REGION_SCALE = 0.05
_UPPER_ON_MOUTH_SCALE = 0.2


@dataclass(frozen=True, eq=False)
class SyntheticStyle:
    style_id: int
    gains: np.ndarray
    mouth_response: np.ndarray
    frequencies: np.ndarray
    phases: np.ndarray
    noise_scale: float

    def __post_init__(self) -> None:
        if self.gains.shape != (EXPRESSION_DIM,) or not (self.gains > 0).all():
            raise ContractError(f"Style {self.style_id}: gains must be 64 positives.")
        response = self.mouth_response
        if response.ndim != 2 or response.shape[1] != LOWER_FACE_DIM:  # noqa: PLR2004
            message = f"Mouth response must have {LOWER_FACE_DIM} columns."
            raise ContractError(message)
        if self.frequencies.shape != (UPPER_FACE_DIM,) or self.phases.shape != (
            UPPER_FACE_DIM,
        ):
            message = f"Style {self.style_id}: need {UPPER_FACE_DIM} frequencies."
            raise ContractError(message)
        if not ((self.frequencies > 0) & (self.frequencies < DEFAULT_FPS / 2)).all():
            message = f"Style {self.style_id}: frequencies must lie in (0, fps/2)."
            raise ContractError(message)
        if self.noise_scale < 0:
            raise ContractError(f"Style {self.style_id}: negative noise scale.")


@dataclass(frozen=True, eq=False)
class SyntheticCorpus:
    styles: list[SyntheticStyle]
    clips: list[TrainingClip]
    seed: int
    vocab: int
    fps: float = DEFAULT_FPS

    def __post_init__(self) -> None:
        for clip in self.clips:
            if not 0 <= clip.style_label < len(self.styles):
                message = f"Clip {clip.clip_id}: unknown style {clip.style_label}."
                raise ContractError(message)

    @property
    def labels(self) -> np.ndarray:
        return np.array([c.style_label for c in self.clips], dtype=np.int64)

    def clip_by_id(self, clip_id: str) -> TrainingClip:
        return next(c for c in self.clips if c.clip_id == clip_id)


def gen_basis(
    seed: int, num_vertices: int, split: FaceSplit | None = None
) -> FaceBasis:
    """Random orthonormal face basis whose lower-face columns live on the mouth.

    The first ceil(P/4) vertices are the mouth. Lower-face columns are
    orthonormalized first, so each stays a mix of mouth-dominated directions.
    """
    if num_vertices < EXPRESSION_DIM:
        message = f"Need at least {EXPRESSION_DIM} vertices, got {num_vertices}."
        raise ContractError(message)
    split = split or FaceSplit.default()
    rng = np.random.default_rng(seed)
    mouth_count = math.ceil(num_vertices / 4)
    mouth_rows = np.zeros(3 * num_vertices, dtype=bool)
    mouth_rows[: 3 * mouth_count] = True

    raw = rng.standard_normal((3 * num_vertices, EXPRESSION_DIM))
    lower = list(split.lower_indices)
    upper = list(split.upper_indices)
    raw[np.ix_(~mouth_rows, lower)] *= _OFF_REGION_SCALE
    raw[np.ix_(mouth_rows, upper)] *= _UPPER_ON_MOUTH_SCALE

    order = split.order
    q, r = np.linalg.qr(raw[:, order])
    q = q * np.sign(np.diag(r))[None, :]
    basis = np.empty_like(q)
    basis[:, order] = q
    mean_shape = rng.standard_normal(3 * num_vertices)
    return FaceBasis(basis, mean_shape, tuple(range(mouth_count)))


def mouth_energy_ratio(basis: FaceBasis) -> np.ndarray:
    """Share of each column's squared norm that falls on mouth vertices."""
    squared = basis.vertex_basis**2
    return squared[basis.mouth_rows].sum(axis=0) / squared.sum(axis=0)


def gen_style(
    style_id: int,
    base_visemes: np.ndarray,
    rng: np.random.Generator,
    noise_scale: float,
    split: FaceSplit,
) -> SyntheticStyle:
    vocab = base_visemes.shape[0]
    gains = rng.uniform(0.3, 1.5, EXPRESSION_DIM)
    lower_gains = gains[list(split.lower_indices)]
    mouth_response = base_visemes * lower_gains[None, :] + 0.25 * rng.standard_normal(
        (vocab, LOWER_FACE_DIM)
    )
    return SyntheticStyle(
        style_id=style_id,
        gains=gains,
        mouth_response=mouth_response,
        frequencies=rng.uniform(0.2, 3.0, UPPER_FACE_DIM),
        phases=rng.uniform(0.0, 2 * np.pi, UPPER_FACE_DIM),
        noise_scale=noise_scale,
    )


def gen_phonemes(
    length: int, vocab: int, mean_dwell: float, rng: np.random.Generator
) -> np.ndarray:
    """Random labels held for geometrically distributed numbers of frames."""
    labels = np.empty(length, dtype=np.int64)
    t = 0
    while t < length:
        dwell = int(rng.geometric(1.0 / mean_dwell))
        labels[t : t + dwell] = rng.integers(vocab)
        t += dwell
    return labels


def gen_clip_motion(
    style: SyntheticStyle,
    labels: np.ndarray,
    split: FaceSplit,
    rng: np.random.Generator,
    fps: float = DEFAULT_FPS,
) -> np.ndarray:
    """Motion of shape (L, 64) for one phoneme stream in one style."""
    length = labels.shape[0]
    raw = style.mouth_response[labels]
    lower = raw.copy()
    lower[1:] = 0.5 * (raw[1:] + raw[:-1])
    lower += style.noise_scale * rng.standard_normal(lower.shape)

    start = rng.integers(0, int(10 * fps))
    t = (np.arange(length) + start)[:, None] / fps
    upper_gains = style.gains[list(split.upper_indices)]
    upper = upper_gains * np.sin(2 * np.pi * style.frequencies * t + style.phases)
    upper += style.noise_scale * rng.standard_normal(upper.shape)

    frames = np.empty((length, EXPRESSION_DIM))
    frames[:, list(split.lower_indices)] = lower
    frames[:, list(split.upper_indices)] = upper
    return np.clip(frames, -COEFF_LIMIT, COEFF_LIMIT)


def gen_corpus(
    seed: int,
    n_styles: int,
    clips_per_style: int,
    length: int,
    vocab: int,
    split: FaceSplit | None = None,
    noise_scale: float = 0.05,
    mean_dwell: float = 4.0,
) -> SyntheticCorpus:
    """Generate `n_styles * clips_per_style` clips of `length` frames.

    Each clip's style reference is the next clip of the same style.
    """
    if n_styles < 2:  # noqa: PLR2004
        message = f"Need at least 2 styles (n_styles >= 2), got {n_styles}."
        raise ContractError(message)
    if clips_per_style < 2:  # noqa: PLR2004
        message = (
            "Need at least 2 clips per style (clips_per_style >= 2), "
            f"got {clips_per_style}."
        )
        raise ContractError(message)
    if length < 1 or vocab < 1:
        message = f"Invalid clip length {length} or vocabulary {vocab}."
        raise ContractError(message)
    split = split or FaceSplit.default()
    base_visemes = np.random.default_rng([seed, 0]).uniform(
        -1.5, 1.5, (vocab, LOWER_FACE_DIM)
    )
    styles = [
        gen_style(
            s, base_visemes, np.random.default_rng([seed, 1, s]), noise_scale, split
        )
        for s in range(n_styles)
    ]

    clip_data = []
    for s, style in enumerate(styles):
        for k in range(clips_per_style):
            rng = np.random.default_rng([seed, 2, s * clips_per_style + k])
            labels = gen_phonemes(length, vocab, mean_dwell, rng)
            frames = gen_clip_motion(style, labels, split, rng)
            clip_data.append((f"s{s:02d}_c{k:03d}", s, labels, frames))

    clips = []
    for index, (clip_id, s, labels, frames) in enumerate(clip_data):
        k = index % clips_per_style
        ref_frames = clip_data[s * clips_per_style + (k + 1) % clips_per_style][3]
        clips.append(
            TrainingClip(
                clip_id=clip_id,
                phonemes=PhonemeSequence(labels, vocab),
                target=MotionSequence(frames),
                style_label=s,
                style_ref=MotionSequence(ref_frames),
            )
        )
    logger.debug("Generated %s clips in %s styles.", len(clips), n_styles)
    return SyntheticCorpus(styles=styles, clips=clips, seed=seed, vocab=vocab)


def motion_statistics(frames: np.ndarray) -> np.ndarray:
    """Per-coefficient mean and standard deviation over time, shape (128,)."""
    frames = np.asarray(frames, dtype=np.float64)
    return np.concatenate([frames.mean(axis=0), frames.std(axis=0)])


def separability(clips: Sequence[TrainingClip]) -> float:
    """Silhouette of the clips' raw motion statistics grouped by style."""
    stats = np.stack([motion_statistics(c.target.frames) for c in clips])
    return silhouette(stats, np.array([c.style_label for c in clips]))


def _save_styles(path: Path, styles: Sequence[SyntheticStyle]) -> None:
    save_arrays(
        path,
        style_id=np.array([s.style_id for s in styles], dtype=np.int64),
        gains=np.stack([s.gains for s in styles]),
        mouth_response=np.stack([s.mouth_response for s in styles]),
        frequencies=np.stack([s.frequencies for s in styles]),
        phases=np.stack([s.phases for s in styles]),
        noise_scale=np.array([s.noise_scale for s in styles]),
    )


def _load_styles(path: Path) -> list[SyntheticStyle]:
    try:
        with np.load(path, allow_pickle=False) as archive:
            return [
                SyntheticStyle(
                    style_id=int(archive["style_id"][i]),
                    gains=archive["gains"][i],
                    mouth_response=archive["mouth_response"][i],
                    frequencies=archive["frequencies"][i],
                    phases=archive["phases"][i],
                    noise_scale=float(archive["noise_scale"][i]),
                )
                for i in range(len(archive["style_id"]))
            ]
    except (KeyError, ValueError) as exc:
        raise FormatError(f"Unreadable styles: {exc}", offset=0, path=path) from exc


def write_corpus(directory: Path, corpus: SyntheticCorpus) -> None:
    directory = Path(directory)
    (directory / CLIPS_DIR).mkdir(parents=True, exist_ok=True)
    entries = []
    for clip in corpus.clips:
        motion = f"{CLIPS_DIR}/{clip.clip_id}.mvec"
        phonemes = f"{CLIPS_DIR}/{clip.clip_id}.phon.json"
        write_motion(directory / motion, clip.target)
        write_phonemes(directory / phonemes, clip.phonemes)
        entry = {
            "clip_id": clip.clip_id,
            "style_label": clip.style_label,
            "motion": motion,
            "phonemes": phonemes,
        }
        if clip.style_ref is not None:
            entry["style_ref"] = _style_ref_id(corpus, clip)
        entries.append(entry)
    _save_styles(directory / STYLES_FILE, corpus.styles)
    index = {
        "seed": corpus.seed,
        "vocab": corpus.vocab,
        "fps": corpus.fps,
        "clips": entries,
    }
    (directory / INDEX_FILE).write_text(json.dumps(index, indent=2), encoding="utf-8")
    logger.debug("Wrote %s clips to %s.", len(entries), directory)


def _style_ref_id(corpus: SyntheticCorpus, clip: TrainingClip) -> str:
    for other in corpus.clips:
        if other.style_label == clip.style_label and np.array_equal(
            other.target.frames, clip.style_ref.frames
        ):
            return other.clip_id
    message = f"Clip {clip.clip_id}: style reference is not a clip of the corpus."
    raise DataError(message)


def _read_entry(
    directory: Path, entry: dict, position: int
) -> tuple[str, TrainingClip, str | None]:
    clip_id = f"#{position}"
    if isinstance(entry, dict):
        clip_id = entry.get("clip_id", clip_id)
    try:
        motion_path = directory / entry["motion"]
        phonemes_path = directory / entry["phonemes"]
        label = int(entry["style_label"])
    except (KeyError, TypeError, ValueError) as exc:
        message = f"Corrupt index entry for clip {clip_id}: {exc!r}"
        raise DataError(message) from exc
    for path in (motion_path, phonemes_path):
        if not path.is_file():
            message = f"Clip {clip_id}: missing file {path}."
            raise DataError(message)
    try:
        clip = TrainingClip(
            clip_id=str(clip_id),
            phonemes=read_phonemes(phonemes_path),
            target=read_motion(motion_path),
            style_label=label,
        )
    except (FormatError, ContractError) as exc:
        message = f"Clip {clip_id}: {exc}"
        raise DataError(message) from exc
    return str(clip_id), clip, entry.get("style_ref")


def read_corpus(directory: Path) -> SyntheticCorpus:
    directory = Path(directory)
    index_path = directory / INDEX_FILE
    if not index_path.is_file():
        message = f"No corpus index at {index_path}."
        raise DataError(message)
    try:
        index = json.loads(index_path.read_text(encoding="utf-8"))
        entries = index["clips"]
    except json.JSONDecodeError as exc:
        raise FormatError(exc.msg, offset=exc.pos, path=index_path) from exc
    except (KeyError, TypeError) as exc:
        raise FormatError("Index has no clip list", offset=0, path=index_path) from exc

    loaded = [_read_entry(directory, entry, i) for i, entry in enumerate(entries)]
    ids = [clip_id for clip_id, _, _ in loaded]
    if len(set(ids)) != len(ids):
        duplicate = next(i for i in ids if ids.count(i) > 1)
        message = f"Clip {duplicate} appears more than once in the index."
        raise DataError(message)
    by_id = {clip_id: clip for clip_id, clip, _ in loaded}
    clips = []
    for clip_id, clip, ref_id in loaded:
        if ref_id is not None and ref_id not in by_id:
            message = f"Clip {clip_id}: style reference {ref_id} is not in the index."
            raise DataError(message)
        style_ref = by_id[ref_id].target if ref_id is not None else None
        clips.append(
            TrainingClip(
                clip_id=clip_id,
                phonemes=clip.phonemes,
                target=clip.target,
                style_label=clip.style_label,
                style_ref=style_ref,
            )
        )
    return SyntheticCorpus(
        styles=_load_styles(directory / STYLES_FILE),
        clips=clips,
        seed=int(index.get("seed", 0)),
        vocab=int(index.get("vocab", 0)),
        fps=float(index.get("fps", DEFAULT_FPS)),
    )


def write_dataset(
    directory: Path, corpus: SyntheticCorpus, basis: FaceBasis, split: FaceSplit
) -> None:
    """Corpus plus the face basis and split it was generated with."""
    write_corpus(directory, corpus)
    write_face_basis(Path(directory) / BASIS_FILE, basis)
    write_face_split(Path(directory) / SPLIT_FILE, split)


def read_dataset(directory: Path) -> tuple[SyntheticCorpus, FaceBasis, FaceSplit]:
    directory = Path(directory)
    for name in (BASIS_FILE, SPLIT_FILE):
        if not (directory / name).is_file():
            message = f"Dataset {directory} has no {name}."
            raise DataError(message)
    return (
        read_corpus(directory),
        read_face_basis(directory / BASIS_FILE),
        read_face_split(directory / SPLIT_FILE),
    )
