"""Domain types, phoneme windowing, the upper/lower face split and file codecs.

Naming:
1. A "frame" is one vector of 64 expression coefficients.
2. A "motion" is a time series of frames at a fixed frame rate.
3. "Phonemes" are frame-aligned integer labels with the same frame rate as the motion
   they drive.
4. The "split" routes 13 coefficients to the lower (mouth) face decoder and the other
   51 to the upper face decoder.
"""

import json
import logging
import math
import struct
import zipfile
from collections.abc import Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from stylemotion.errors import (
    ContractError,
    FormatError,
    VocabularyError,
    WindowRangeError,
)

logger = logging.getLogger("stylemotion")

EXPRESSION_DIM = 64
LOWER_FACE_DIM = 13
UPPER_FACE_DIM = EXPRESSION_DIM - LOWER_FACE_DIM
DEFAULT_FPS = 30.0
# Max deviation of a face basis Gram matrix from the identity.
BASIS_ORTHO_TOL = 1e-5

MOTION_MAGIC = b"MVEC"
MOTION_VERSION = 1
_MOTION_HEADER = struct.Struct("<4sIIIf")
MOTION_HEADER_SIZE = _MOTION_HEADER.size

# Timestamp stamped on every archive member.
ZIP_EPOCH = (1980, 1, 1, 0, 0, 0)


def _frozen(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class ExpressionFrame:
    coeffs: np.ndarray

    def __post_init__(self) -> None:
        coeffs = np.array(self.coeffs, dtype=np.float64).reshape(-1)
        if coeffs.shape != (EXPRESSION_DIM,):
            message = f"Expected {EXPRESSION_DIM} coefficients, got {coeffs.size}."
            raise ContractError(message)
        if not np.isfinite(coeffs).all():
            raise ContractError("Expression coefficients must be finite.")
        object.__setattr__(self, "coeffs", _frozen(coeffs))


@dataclass(frozen=True, eq=False)
class MotionSequence:
    """Expression frames stored as an (N, 64) float32 array."""

    frames: np.ndarray
    fps: float = DEFAULT_FPS

    def __post_init__(self) -> None:
        frames = np.array(self.frames, dtype=np.float32)
        if frames.ndim != 2 or frames.shape[1] != EXPRESSION_DIM:  # noqa: PLR2004
            message = f"Motion must be (N, {EXPRESSION_DIM}), got {frames.shape}."
            raise ContractError(message)
        if frames.shape[0] < 1:
            raise ContractError("Motion must contain at least one frame.")
        if not np.isfinite(frames).all():
            raise ContractError("Motion frames must be finite.")
        if not self.fps > 0:
            message = f"fps must be positive, got {self.fps}."
            raise ContractError(message)
        object.__setattr__(self, "frames", _frozen(frames))

    def __len__(self) -> int:
        return self.frames.shape[0]

    def frame(self, index: int) -> ExpressionFrame:
        return ExpressionFrame(self.frames[index])

    @classmethod
    def from_frames(
        cls, frames: Sequence[ExpressionFrame], fps: float = DEFAULT_FPS
    ) -> "MotionSequence":
        return cls(np.stack([f.coeffs for f in frames]), fps=fps)


@dataclass(frozen=True, eq=False)
class PhonemeSequence:
    labels: np.ndarray
    vocab: int
    fps: float = DEFAULT_FPS

    def __post_init__(self) -> None:
        labels = np.array(self.labels, dtype=np.int64).reshape(-1)
        if labels.size < 1:
            raise ContractError("Phoneme sequence must contain at least one label.")
        if self.vocab < 1:
            message = f"Vocabulary size must be positive, got {self.vocab}."
            raise ContractError(message)
        if labels.min() < 0 or labels.max() >= self.vocab:
            message = (
                f"Phoneme labels must lie in [0, {self.vocab}), "
                f"got range [{labels.min()}, {labels.max()}]."
            )
            raise VocabularyError(message)
        object.__setattr__(self, "labels", _frozen(labels))

    def __len__(self) -> int:
        return self.labels.shape[0]


@dataclass(frozen=True)
class FaceSplit:
    lower_indices: tuple[int, ...]

    def __post_init__(self) -> None:
        lower = tuple(int(i) for i in self.lower_indices)
        if len(lower) != LOWER_FACE_DIM:
            message = f"Expected {LOWER_FACE_DIM} lower-face indices, got {len(lower)}."
            raise ContractError(message)
        if len(set(lower)) != len(lower):
            raise ContractError("Lower-face indices must be distinct.")
        if min(lower) < 0 or max(lower) >= EXPRESSION_DIM:
            message = f"Lower-face indices must lie in [0, {EXPRESSION_DIM})."
            raise ContractError(message)
        object.__setattr__(self, "lower_indices", lower)

    @property
    def upper_indices(self) -> tuple[int, ...]:
        lower = set(self.lower_indices)
        return tuple(i for i in range(EXPRESSION_DIM) if i not in lower)

    @property
    def order(self) -> np.ndarray:
        """Coefficient index of every position in `concat(lower, upper)`."""
        return np.array(self.lower_indices + self.upper_indices, dtype=np.int64)

    @property
    def inverse_order(self) -> np.ndarray:
        """Position in `concat(lower, upper)` of every coefficient index."""
        return np.argsort(self.order)

    @classmethod
    def default(cls) -> "FaceSplit":
        return cls(tuple(range(LOWER_FACE_DIM)))


@dataclass(frozen=True, eq=False)
class FaceBasis:
    """Linear face model mapping expression coefficients to vertex positions.

    `vertex_basis` has shape (3 * P, 64) with rows ordered x, y, z per vertex.
    """

    vertex_basis: np.ndarray
    mean_shape: np.ndarray
    mouth_vertex_ids: tuple[int, ...] = field(default=())

    def __post_init__(self) -> None:
        basis = np.array(self.vertex_basis, dtype=np.float64)
        mean = np.array(self.mean_shape, dtype=np.float64).reshape(-1)
        rows, cols = basis.shape if basis.ndim == 2 else (0, 0)  # noqa: PLR2004
        if cols != EXPRESSION_DIM or rows == 0 or rows % 3:
            message = f"Vertex basis must be (3P, {EXPRESSION_DIM}), got {basis.shape}."
            raise ContractError(message)
        deviation = np.abs(basis.T @ basis - np.eye(EXPRESSION_DIM)).max()
        if not deviation <= BASIS_ORTHO_TOL:
            message = f"Vertex basis is not orthonormal, Gram error {deviation:.3g}."
            raise ContractError(message)
        if mean.shape != (basis.shape[0],):
            raise ContractError("Mean shape must match the basis row count.")
        mouth = tuple(int(i) for i in self.mouth_vertex_ids)
        num_vertices = basis.shape[0] // 3
        if not mouth:
            raise ContractError("Mouth vertex ids must not be empty.")
        distinct = len(set(mouth)) == len(mouth)
        if not distinct or min(mouth) < 0 or max(mouth) >= num_vertices:
            message = f"Mouth vertex ids must be distinct and in [0, {num_vertices})."
            raise ContractError(message)
        object.__setattr__(self, "vertex_basis", _frozen(basis))
        object.__setattr__(self, "mean_shape", _frozen(mean))
        object.__setattr__(self, "mouth_vertex_ids", mouth)

    @property
    def num_vertices(self) -> int:
        return self.vertex_basis.shape[0] // 3

    @property
    def mouth_rows(self) -> np.ndarray:
        """Basis rows belonging to mouth vertices, in vertex then axis order."""
        ids = np.array(self.mouth_vertex_ids, dtype=np.int64)
        return (ids[:, None] * 3 + np.arange(3)[None, :]).reshape(-1)


@dataclass(frozen=True, eq=False)
class TrainingClip:
    """Aligned phonemes and motion of one clip.

    `style_ref` is the reference motion the style code is extracted from. Corpora
    fill it with another clip of the same style.
    """

    clip_id: str
    phonemes: PhonemeSequence
    target: MotionSequence
    style_label: int
    style_ref: MotionSequence | None = None

    def __post_init__(self) -> None:
        if len(self.phonemes) != len(self.target):
            message = (
                f"Clip {self.clip_id}: {len(self.phonemes)} phonemes "
                f"but {len(self.target)} motion frames."
            )
            raise ContractError(message)
        if self.style_label < 0:
            message = f"Clip {self.clip_id}: negative style label {self.style_label}."
            raise ContractError(message)

    def __len__(self) -> int:
        return len(self.target)


def window_indices(length: int, half_width: int) -> np.ndarray:
    """Clamped label indices of every sliding window over a sequence.

    Returns:
        Array of shape (length, 2 * half_width + 1).
    """
    if length < 1 or half_width < 0:
        message = f"Invalid window request: length={length}, half_width={half_width}."
        raise ContractError(message)
    offsets = np.arange(-half_width, half_width + 1)
    indices = np.arange(length)[:, None] + offsets[None, :]
    return np.clip(indices, 0, length - 1)


def extract_window(phonemes: PhonemeSequence, t: int, half_width: int) -> list[int]:
    """Return the 2w+1 labels centered at frame t, replicating edge labels.

    Raises:
        WindowRangeError: If t is not a frame index of the sequence.
    """
    if not 0 <= t < len(phonemes):
        message = f"Frame index {t} outside [0, {len(phonemes)})."
        raise WindowRangeError(message)
    if half_width < 0:
        message = f"Half-width must be non-negative, got {half_width}."
        raise ContractError(message)
    offsets = np.arange(t - half_width, t + half_width + 1)
    indices = np.clip(offsets, 0, len(phonemes) - 1)
    return [int(label) for label in phonemes.labels[indices]]


def split_expression(
    frame: ExpressionFrame, split: FaceSplit
) -> tuple[np.ndarray, np.ndarray]:
    lower = frame.coeffs[list(split.lower_indices)]
    upper = frame.coeffs[list(split.upper_indices)]
    return lower, upper


def merge_expression(
    lower: np.ndarray, upper: np.ndarray, split: FaceSplit
) -> ExpressionFrame:
    lower = np.asarray(lower, dtype=np.float64).reshape(-1)
    upper = np.asarray(upper, dtype=np.float64).reshape(-1)
    if lower.size != LOWER_FACE_DIM or upper.size != UPPER_FACE_DIM:
        message = (
            f"Expected {LOWER_FACE_DIM} lower and {UPPER_FACE_DIM} upper "
            f"coefficients, got {lower.size} and {upper.size}."
        )
        raise ContractError(message)
    return ExpressionFrame(np.concatenate([lower, upper])[split.inverse_order])


def write_motion(path: Path, motion: MotionSequence) -> None:
    """Write a motion file: 20 byte header, then float32 frames row-major."""
    header = _MOTION_HEADER.pack(
        MOTION_MAGIC, MOTION_VERSION, len(motion), EXPRESSION_DIM, motion.fps
    )
    payload = motion.frames.astype("<f4", copy=False).tobytes(order="C")
    Path(path).write_bytes(header + payload)


def read_motion(path: Path) -> MotionSequence:
    path = Path(path)
    data = path.read_bytes()
    if data[:4] != MOTION_MAGIC:
        message = f"Bad magic {data[:4]!r}, expected {MOTION_MAGIC!r}"
        raise FormatError(message, offset=0, path=path)
    if len(data) < MOTION_HEADER_SIZE:
        raise FormatError("Truncated header", offset=len(data), path=path)
    _, version, num_frames, dim, fps = _MOTION_HEADER.unpack_from(data)
    if version != MOTION_VERSION:
        message = f"Unsupported version {version}, expected {MOTION_VERSION}"
        raise FormatError(message, offset=4, path=path)
    if dim != EXPRESSION_DIM:
        message = f"Frame dimension {dim}, expected {EXPRESSION_DIM}"
        raise FormatError(message, offset=12, path=path)
    if not (math.isfinite(fps) and fps > 0):
        raise FormatError(f"Invalid fps {fps}", offset=16, path=path)
    expected = MOTION_HEADER_SIZE + num_frames * dim * 4
    if len(data) < expected:
        raise FormatError("Truncated payload", offset=len(data), path=path)
    if len(data) > expected:
        raise FormatError("Trailing bytes after payload", offset=expected, path=path)
    frames = np.frombuffer(data, dtype="<f4", offset=MOTION_HEADER_SIZE)
    try:
        return MotionSequence(frames.reshape(num_frames, dim).astype(np.float32), fps)
    except ContractError as exc:
        raise FormatError(str(exc), offset=MOTION_HEADER_SIZE, path=path) from exc


def _load_json(path: Path) -> Any:  # noqa: ANN401
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(exc.msg, offset=exc.pos, path=Path(path)) from exc


def _require_keys(
    payload: Any,  # noqa: ANN401
    keys: Sequence[str],
    path: Path,
) -> None:
    if not isinstance(payload, dict):
        raise FormatError("Expected a JSON object", offset=0, path=path)
    if missing := [k for k in keys if k not in payload]:
        raise FormatError(f"Missing keys {missing}", offset=0, path=path)


def write_phonemes(path: Path, phonemes: PhonemeSequence) -> None:
    payload = {
        "fps": phonemes.fps,
        "vocab": phonemes.vocab,
        "labels": phonemes.labels.tolist(),
    }
    Path(path).write_text(json.dumps(payload), encoding="utf-8")


def read_phonemes(path: Path) -> PhonemeSequence:
    path = Path(path)
    payload = _load_json(path)
    _require_keys(payload, ["fps", "vocab", "labels"], path)
    return PhonemeSequence(
        np.array(payload["labels"], dtype=np.int64),
        vocab=int(payload["vocab"]),
        fps=float(payload["fps"]),
    )


def write_style_code(path: Path, values: np.ndarray) -> None:
    values = np.asarray(values).reshape(-1)
    payload = {"dim": int(values.size), "values": [float(v) for v in values]}
    Path(path).write_text(json.dumps(payload), encoding="utf-8")


def read_style_code(path: Path) -> np.ndarray:
    path = Path(path)
    payload = _load_json(path)
    _require_keys(payload, ["dim", "values"], path)
    values = np.array(payload["values"], dtype=np.float64)
    if values.ndim != 1 or values.size != payload["dim"]:
        message = f"Style code has {values.size} values, header says {payload['dim']}"
        raise FormatError(message, offset=0, path=path)
    if not np.isfinite(values).all():
        raise FormatError("Style code values must be finite", offset=0, path=path)
    return values


def write_face_split(path: Path, split: FaceSplit) -> None:
    payload = {"lower": list(split.lower_indices)}
    Path(path).write_text(json.dumps(payload), encoding="utf-8")


def read_face_split(path: Path) -> FaceSplit:
    path = Path(path)
    payload = _load_json(path)
    _require_keys(payload, ["lower"], path)
    try:
        return FaceSplit(tuple(payload["lower"]))
    except (ContractError, TypeError) as exc:
        raise FormatError(str(exc), offset=0, path=path) from exc


def save_arrays(path: Path, **arrays: np.ndarray) -> None:
    """Write an `.npz` archive whose bytes depend only on the arrays."""
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as archive:
        for name, array in arrays.items():
            info = zipfile.ZipInfo(f"{name}.npy", date_time=ZIP_EPOCH)
            with archive.open(info, "w") as fh:
                np.lib.format.write_array(fh, np.asarray(array), allow_pickle=False)


def write_face_basis(path: Path, basis: FaceBasis) -> None:
    save_arrays(
        path,
        vertex_basis=basis.vertex_basis,
        mean_shape=basis.mean_shape,
        mouth_vertex_ids=np.array(basis.mouth_vertex_ids, dtype=np.int64),
    )


def read_face_basis(path: Path) -> FaceBasis:
    path = Path(path)
    try:
        with np.load(path, allow_pickle=False) as archive:
            return FaceBasis(
                archive["vertex_basis"],
                archive["mean_shape"],
                tuple(archive["mouth_vertex_ids"].tolist()),
            )
    except (KeyError, ValueError) as exc:
        raise FormatError(f"Unreadable face basis: {exc}", offset=0, path=path) from exc
