"""Critics guiding the generator.

Naming:
1. The "sync" discriminator embeds mouth vertices and a phoneme window and scores
   their agreement by cosine similarity. It is pretrained and frozen.
2. The "style" discriminator classifies a clip's speaking style from its motion. It
   is pretrained and frozen.
3. The "temporal" discriminator scores short time patches of a clip as real or
   generated. It trains jointly with the generator on a hinge objective.
"""

import logging
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F  # noqa: N812
from torch import nn

from stylemotion.config import RunConfig
from stylemotion.core import (
    EXPRESSION_DIM,
    ExpressionFrame,
    FaceBasis,
    TrainingClip,
    window_indices,
)
from stylemotion.errors import ContractError, DataError
from stylemotion.metrics import sync_auc

logger = logging.getLogger("stylemotion")

# Guards the cosine denominator.
SYNC_EPS = 1e-8
# Floor inside -log() for probabilities that reach zero or go negative.
LOG_EPS = 1e-7

PATCH_LAYERS = 3


def freeze(module: nn.Module) -> nn.Module:
    module.requires_grad_(False)
    return module.eval()


def face_vertices(coeffs: torch.Tensor, basis: FaceBasis) -> torch.Tensor:
    """Full mesh of (..., 64) coefficients, shape (..., P, 3)."""
    matrix = torch.as_tensor(basis.vertex_basis).to(coeffs)
    mean = torch.as_tensor(basis.mean_shape).to(coeffs)
    points = mean + coeffs @ matrix.T
    return points.reshape(*coeffs.shape[:-1], basis.num_vertices, 3)


def mouth_points(
    coeffs: torch.Tensor | ExpressionFrame, basis: FaceBasis
) -> torch.Tensor | np.ndarray:
    """Mouth vertex cloud of (..., 64) coefficients, shape (..., M, 3).

    An `ExpressionFrame` gives a float64 numpy (M, 3) cloud.
    """
    rows = basis.mouth_rows
    if isinstance(coeffs, ExpressionFrame):
        points = basis.mean_shape[rows] + basis.vertex_basis[rows] @ coeffs.coeffs
        return points.reshape(-1, 3)
    matrix = torch.as_tensor(basis.vertex_basis[rows]).to(coeffs)
    mean = torch.as_tensor(basis.mean_shape[rows]).to(coeffs)
    points = mean + coeffs @ matrix.T
    return points.reshape(*coeffs.shape[:-1], len(basis.mouth_vertex_ids), 3)


def sync_prob(
    mouth_embedding: torch.Tensor, audio_embedding: torch.Tensor, eps: float = SYNC_EPS
) -> torch.Tensor:
    """Cosine agreement of the two embeddings, in [-1, 1]."""
    if mouth_embedding.shape[-1] != audio_embedding.shape[-1]:
        message = (
            f"Embedding sizes differ: {mouth_embedding.shape[-1]} "
            f"vs {audio_embedding.shape[-1]}."
        )
        raise ContractError(message)
    dot = (mouth_embedding * audio_embedding).sum(dim=-1)
    norms = torch.linalg.vector_norm(mouth_embedding, dim=-1)
    norms = norms * torch.linalg.vector_norm(audio_embedding, dim=-1)
    return dot / torch.clamp(norms, min=eps)


def neg_log(prob: torch.Tensor) -> torch.Tensor:
    return -torch.log(torch.clamp(prob, min=LOG_EPS, max=1.0))


class PointNetEncoder(nn.Module):
    """Shared per-point MLP, max-pool over points, linear head."""

    def __init__(self, width: int = 64, embed_dim: int = 128) -> None:
        super().__init__()
        self.mlp = nn.Sequential(
            nn.Conv1d(3, width, kernel_size=1),
            nn.ReLU(),
            nn.Conv1d(width, 2 * width, kernel_size=1),
            nn.ReLU(),
            nn.Conv1d(2 * width, 4 * width, kernel_size=1),
            nn.ReLU(),
        )
        self.head = nn.Linear(4 * width, embed_dim)

    def forward(self, points: torch.Tensor) -> torch.Tensor:
        """Embed (B, M, 3) point clouds into (B, embed_dim)."""
        features = self.mlp(points.transpose(1, 2))
        return self.head(features.amax(dim=2))


class PhonemeWindowEncoder(nn.Module):
    def __init__(
        self, vocab_size: int, window: int, width: int = 64, embed_dim: int = 128
    ) -> None:
        super().__init__()
        self.vocab_size = vocab_size
        self.embedding = nn.Embedding(vocab_size, width)
        self.mlp = nn.Sequential(
            nn.Flatten(),
            nn.Linear(window * width, 4 * width),
            nn.ReLU(),
            nn.Linear(4 * width, embed_dim),
        )

    def forward(self, windows: torch.Tensor) -> torch.Tensor:
        return self.mlp(self.embedding(windows))


class SyncDiscriminator(nn.Module):
    def __init__(
        self,
        vocab_size: int,
        half_width: int,
        width: int = 64,
        embed_dim: int = 128,
    ) -> None:
        super().__init__()
        self.half_width = half_width
        self.mouth_encoder = PointNetEncoder(width, embed_dim)
        self.audio_encoder = PhonemeWindowEncoder(
            vocab_size, 2 * half_width + 1, width, embed_dim
        )

    def embeddings(
        self, points: torch.Tensor, windows: torch.Tensor
    ) -> tuple[torch.Tensor, torch.Tensor]:
        return self.mouth_encoder(points), self.audio_encoder(windows)

    def forward(self, points: torch.Tensor, windows: torch.Tensor) -> torch.Tensor:
        """P_sync of (B, M, 3) mouth clouds against (B, 2w+1) phoneme windows."""
        return sync_prob(*self.embeddings(points, windows))


def sync_loss(
    motion: torch.Tensor,
    phonemes: torch.Tensor,
    discriminator: SyncDiscriminator,
    basis: FaceBasis,
) -> torch.Tensor:
    """Mean over clips and frames of -log P_sync.

    Args:
        motion: Generated clips of shape (B, L, 64).
        phonemes: Labels of shape (B, L).
        discriminator: Frozen sync discriminator.
        basis: Face basis mapping coefficients to vertices.
    """
    if motion.shape[:2] != phonemes.shape:
        message = (
            f"Motion of shape {tuple(motion.shape)} does not match phonemes "
            f"of shape {tuple(phonemes.shape)}."
        )
        raise ContractError(message)
    batch, length = phonemes.shape
    indices = torch.as_tensor(
        window_indices(length, discriminator.half_width), device=phonemes.device
    )
    windows = phonemes[:, indices].reshape(batch * length, -1)
    points = mouth_points(motion.reshape(batch * length, EXPRESSION_DIM), basis)
    return neg_log(discriminator(points, windows)).mean()


def _patch_trunk(width: int) -> tuple[nn.Sequential, int]:
    """Stride-2 temporal convolutions; three layers see about 22 frames."""
    layers: list[nn.Module] = []
    channels = EXPRESSION_DIM
    for i in range(PATCH_LAYERS):
        out_channels = width * min(2**i, 8)
        layers += [nn.Conv1d(channels, out_channels, 4, 2, 1), nn.LeakyReLU(0.2)]
        channels = out_channels
    return nn.Sequential(*layers), channels


class _PatchCritic(nn.Module):
    def __init__(self, out_channels: int, clip_length: int, width: int) -> None:
        super().__init__()
        if clip_length < 2**PATCH_LAYERS:
            message = f"Patch critics need clips of at least {2**PATCH_LAYERS} frames."
            raise ContractError(message)
        self.clip_length = clip_length
        self.trunk, channels = _patch_trunk(width)
        self.head = nn.Conv1d(channels, out_channels, kernel_size=1)

    def patches(self, motion: torch.Tensor) -> torch.Tensor:
        """Per-patch outputs of (B, L, 64) motion, shape (B, out_channels, patches)."""
        expected = (self.clip_length, EXPRESSION_DIM)
        if motion.ndim != 3 or motion.shape[1:] != expected:  # noqa: PLR2004
            message = (
                f"Expected motion of shape (B, {self.clip_length}, {EXPRESSION_DIM}), "
                f"got {tuple(motion.shape)}."
            )
            raise ContractError(message)
        return self.head(self.trunk(motion.transpose(1, 2)))


class StyleDiscriminator(_PatchCritic):
    def __init__(self, num_styles: int, clip_length: int, width: int = 64) -> None:
        if num_styles < 2:  # noqa: PLR2004
            message = f"Style discriminator needs at least 2 styles, got {num_styles}."
            raise ContractError(message)
        super().__init__(num_styles, clip_length, width)
        self.num_styles = num_styles

    def logits(self, motion: torch.Tensor) -> torch.Tensor:
        return self.patches(motion).mean(dim=-1)

    def forward(self, motion: torch.Tensor) -> torch.Tensor:
        """Style probabilities P^s of shape (B, C)."""
        return torch.softmax(self.logits(motion), dim=-1)


class TemporalDiscriminator(_PatchCritic):
    def __init__(self, clip_length: int, width: int = 64) -> None:
        super().__init__(1, clip_length, width)

    def forward(self, motion: torch.Tensor) -> torch.Tensor:
        """Real-valued patch scores of shape (B, patches)."""
        return self.patches(motion).squeeze(1)


def style_disc_prob(
    motion: torch.Tensor, discriminator: StyleDiscriminator
) -> torch.Tensor:
    return discriminator(motion)


def style_loss(
    motion: torch.Tensor, labels: torch.Tensor, discriminator: StyleDiscriminator
) -> torch.Tensor:
    """Mean of -log P^s[label] over the batch."""
    labels = torch.as_tensor(labels, device=motion.device).reshape(-1)
    if labels.numel() and (
        int(labels.min()) < 0 or int(labels.max()) >= discriminator.num_styles
    ):
        message = f"Style labels must lie in [0, {discriminator.num_styles})."
        raise ContractError(message)
    probs = discriminator(motion)
    return neg_log(probs.gather(1, labels[:, None].long())).mean()


def temporal_scores(
    motion: torch.Tensor, discriminator: TemporalDiscriminator
) -> torch.Tensor:
    return discriminator(motion)


def critic_hinge_loss(
    real_scores: torch.Tensor, fake_scores: torch.Tensor
) -> torch.Tensor:
    return F.relu(1 - real_scores).mean() + F.relu(1 + fake_scores).mean()


def generator_hinge_loss(fake_scores: torch.Tensor) -> torch.Tensor:
    return -fake_scores.mean()


@dataclass(frozen=True)
class SyncPairs:
    """A batch of mouth clouds paired with phoneme windows.

    `offsets` is 0 for synchronous pairs, the frame shift for shifted negatives and
    -1 for windows taken from another clip.
    """

    points: torch.Tensor
    windows: torch.Tensor
    labels: torch.Tensor
    offsets: np.ndarray


def sample_sync_pairs(
    clips: Sequence[TrainingClip],
    basis: FaceBasis,
    half_width: int,
    count: int,
    rng: np.random.Generator,
) -> SyncPairs:
    """Draw half synchronous, half asynchronous pairs.

    Asynchronous windows are shifted by at least 2w+1 frames within the same clip,
    or taken from another clip, with equal chance.
    """
    if len(clips) < 2:  # noqa: PLR2004
        message = f"Negative sampling needs at least 2 clips, got {len(clips)}."
        raise DataError(message)
    gap = 2 * half_width + 1
    rows = basis.mouth_rows
    points, windows, labels, offsets = [], [], [], []
    for _ in range(count):
        i = int(rng.integers(len(clips)))
        clip = clips[i]
        length = len(clip)
        t = int(rng.integers(length))
        coeffs = clip.target.frames[t].astype(np.float64)
        points.append(basis.mean_shape[rows] + basis.vertex_basis[rows] @ coeffs)
        source, frame, offset = clip, t, 0
        if rng.random() >= 0.5:  # noqa: PLR2004
            far = [u for u in range(length) if abs(u - t) >= gap]
            if far and rng.random() < 0.5:  # noqa: PLR2004
                frame = int(rng.choice(far))
                offset = frame - t
            else:
                j = int(rng.integers(len(clips) - 1))
                source = clips[j + (j >= i)]
                frame = int(rng.integers(len(source)))
                offset = -1
        labels.append(1.0 if offset == 0 else 0.0)
        offsets.append(offset)
        window = window_indices(len(source), half_width)[frame]
        windows.append(source.phonemes.labels[window])
    return SyncPairs(
        points=torch.as_tensor(
            np.stack(points).reshape(count, -1, 3), dtype=torch.float32
        ),
        windows=torch.as_tensor(np.stack(windows), dtype=torch.long),
        labels=torch.as_tensor(labels, dtype=torch.float32),
        offsets=np.array(offsets),
    )


def sync_pair_loss(discriminator: SyncDiscriminator, pairs: SyncPairs) -> torch.Tensor:
    """Binary cross-entropy on (1 + P_sync) / 2."""
    prob = (1 + discriminator(pairs.points, pairs.windows)) / 2
    return F.binary_cross_entropy(
        torch.clamp(prob, LOG_EPS, 1 - LOG_EPS), pairs.labels.to(prob)
    )


@torch.no_grad()
def evaluate_sync(
    discriminator: SyncDiscriminator, pairs: SyncPairs
) -> float:
    scores = discriminator(pairs.points, pairs.windows)
    return sync_auc(pairs.labels.numpy(), scores.cpu().numpy())


@dataclass(frozen=True)
class PretrainResult:
    discriminator: nn.Module
    metric: float
    initial_loss: float
    final_loss: float


def holdout_split(
    clips: Sequence[TrainingClip], fraction: float, rng: np.random.Generator
) -> tuple[list[TrainingClip], list[TrainingClip]]:
    """Hold out a fraction of each style's clips, at least one per style."""
    train, held_out = [], []
    labels = sorted({c.style_label for c in clips})
    for label in labels:
        members = [c for c in clips if c.style_label == label]
        order = rng.permutation(len(members))
        n_out = max(1, round(fraction * len(members))) if len(members) > 1 else 0
        if n_out == 0:
            logger.warning("Style %s has a single clip; nothing held out.", label)
        held_out += [members[k] for k in order[:n_out]]
        train += [members[k] for k in order[n_out:]]
    return train, held_out


def pretrain_sync_disc(
    clips: Sequence[TrainingClip],
    basis: FaceBasis,
    config: RunConfig,
    eval_pairs: int = 1024,
) -> PretrainResult:
    """Train the sync discriminator on sampled pairs, then freeze it.

    Returns:
        The frozen discriminator with its held-out AUC.
    """
    settings = config.discriminator
    rng = np.random.default_rng(config.train.seed)
    train_clips, held_out = holdout_split(clips, settings.holdout_fraction, rng)
    if len(train_clips) < 2 or len(held_out) < 2:  # noqa: PLR2004
        message = (
            f"Corpus too small for sync pretraining: {len(train_clips)} training and "
            f"{len(held_out)} held-out clips, need at least 2 of each."
        )
        raise DataError(message)

    torch.manual_seed(config.train.seed)
    discriminator = SyncDiscriminator(
        config.model.vocab_size,
        config.model.window,
        width=settings.width,
        embed_dim=settings.embed_dim,
    )
    optimizer = torch.optim.Adam(
        discriminator.parameters(),
        lr=settings.learning_rate,
        betas=config.train.betas,
        eps=config.train.eps,
    )
    half_width = config.model.window
    losses = []
    for step in range(settings.steps):
        pairs = sample_sync_pairs(
            train_clips, basis, half_width, settings.batch_size, rng
        )
        loss = sync_pair_loss(discriminator, pairs)
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        losses.append(float(loss))
        if step % config.train.log_every == 0:
            logger.debug("Sync pretraining step %s: loss %.4f", step, float(loss))

    eval_rng = np.random.default_rng([config.train.seed, 1])
    pairs = sample_sync_pairs(held_out, basis, half_width, eval_pairs, eval_rng)
    auc = evaluate_sync(freeze(discriminator), pairs)
    logger.info("Sync discriminator held-out AUC: %.4f", auc)
    return PretrainResult(
        discriminator=discriminator,
        metric=auc,
        initial_loss=losses[0] if losses else float("nan"),
        final_loss=losses[-1] if losses else float("nan"),
    )
