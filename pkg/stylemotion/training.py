"""Batching, triplet sampling and the joint training loop.

One training step:
1. Extract a style code from a different clip of each target's style.
2. Decode the target's phoneme stream with that code.
3. Score the prediction with the reconstruction, triplet, sync, temporal and style
   losses and take one optimizer step on the generator.
4. Take one hinge step on the temporal critic against the detached prediction.
"""

import dataclasses
import json
import logging
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F  # noqa: N812

from stylemotion.config import PRECISIONS, RunConfig
from stylemotion.core import FaceBasis, TrainingClip
from stylemotion.discriminators import (
    PretrainResult,
    StyleDiscriminator,
    SyncDiscriminator,
    TemporalDiscriminator,
    critic_hinge_loss,
    freeze,
    generator_hinge_loss,
    holdout_split,
    style_loss,
    sync_loss,
)
from stylemotion.errors import ContractError, DataError, NumericError
from stylemotion.losses import LossComponents, rec_loss, total_loss, triplet_loss
from stylemotion.model import MotionGenerator

logger = logging.getLogger("stylemotion")

ABLATIONS: dict[str, dict[str, dict]] = {
    "full": {},
    "no-dyffn": {"model": {"dynamic_ffn": False}},
    "no-style-disc": {"loss": {"style": 0.0}},
    "no-triplet": {"loss": {"trip": 0.0}},
    "no-sync-disc": {"loss": {"sync": 0.0}},
}


def torch_dtype(precision: str) -> torch.dtype:
    if precision not in PRECISIONS:
        message = f"Unknown precision '{precision}', expected one of {PRECISIONS}."
        raise ContractError(message)
    return getattr(torch, precision)


def apply_ablation(config: RunConfig, name: str) -> RunConfig:
    """Config with the named ablation's overrides applied."""
    if name not in ABLATIONS:
        message = f"Unknown ablation '{name}', expected one of {sorted(ABLATIONS)}."
        raise ContractError(message)
    sections = {}
    for section, values in ABLATIONS[name].items():
        sections[section] = dataclasses.replace(getattr(config, section), **values)
    return dataclasses.replace(config, **sections)


def sample_triplet(
    clips: Sequence[TrainingClip],
    style: int,
    rng: np.random.Generator,
    anchor: int | None = None,
) -> tuple[int, int, int]:
    """Indices of an anchor clip of `style`, another clip of it and a clip of another.

    Args:
        clips: Labeled clips to draw from.
        style: Style label of the anchor.
        rng: Source of randomness.
        anchor: Fixed anchor index. Drawn from the style's clips if omitted.

    Raises:
        DataError: If the style has fewer than 2 clips or no other style exists.
    """
    members = [i for i, c in enumerate(clips) if c.style_label == style]
    others = [i for i, c in enumerate(clips) if c.style_label != style]
    if len(members) < 2:  # noqa: PLR2004
        message = f"Style {style} needs at least 2 clips, has {len(members)}."
        raise DataError(message)
    if not others:
        message = f"No clip with a style other than {style} to draw a negative from."
        raise DataError(message)
    if anchor is None:
        anchor = int(rng.choice(members))
    elif anchor not in members:
        message = f"Anchor clip {anchor} is not of style {style}."
        raise ContractError(message)
    positive = int(rng.choice([i for i in members if i != anchor]))
    negative = int(rng.choice(others))
    return anchor, positive, negative


@dataclass(frozen=True)
class TrainingBatch:
    """Stacked training tensors, all with a leading batch axis."""

    phonemes: torch.Tensor
    target: torch.Tensor
    labels: torch.Tensor
    style_ref: torch.Tensor
    positive_ref: torch.Tensor
    negative_ref: torch.Tensor


def _crop_start(clip: TrainingClip, length: int, rng: np.random.Generator) -> int:
    if len(clip) < length:
        message = f"Clip {clip.clip_id} has {len(clip)} frames, need {length}."
        raise DataError(message)
    return int(rng.integers(len(clip) - length + 1))


def make_batch(
    clips: Sequence[TrainingClip],
    indices: Sequence[int],
    clip_length: int,
    rng: np.random.Generator,
    dtype: torch.dtype = torch.float32,
) -> TrainingBatch:
    """Crop each chosen clip to `clip_length` and draw its style references.

    The style reference is another clip of the target's style, the triplet positive
    another clip of that style and the negative a clip of a different style.
    """
    phonemes, target, labels, refs = [], [], [], {"style": [], "pos": [], "neg": []}

    def crop(index: int) -> tuple[np.ndarray, np.ndarray]:
        clip = clips[index]
        start = _crop_start(clip, clip_length, rng)
        window = slice(start, start + clip_length)
        return clip.phonemes.labels[window], clip.target.frames[window]

    for i in indices:
        clip = clips[i]
        ref, positive, negative = sample_triplet(clips, clip.style_label, rng)
        if ref == i:
            ref, positive = positive, ref
        labels_i, frames_i = crop(i)
        phonemes.append(labels_i)
        target.append(frames_i)
        labels.append(clip.style_label)
        for key, index in (("style", ref), ("pos", positive), ("neg", negative)):
            refs[key].append(crop(index)[1])

    def stack(frames: list[np.ndarray]) -> torch.Tensor:
        return torch.as_tensor(np.stack(frames)).to(dtype)

    return TrainingBatch(
        phonemes=torch.as_tensor(np.stack(phonemes), dtype=torch.long),
        target=stack(target),
        labels=torch.as_tensor(labels, dtype=torch.long),
        style_ref=stack(refs["style"]),
        positive_ref=stack(refs["pos"]),
        negative_ref=stack(refs["neg"]),
    )


class Trainer:
    """Owns the generator, the temporal critic and both optimizers.

    The sync and style critics are optional. A missing critic contributes 0 to the
    objective, as does a zero loss weight.
    """

    def __init__(
        self,
        generator: MotionGenerator,
        config: RunConfig,
        basis: FaceBasis | None = None,
        sync_disc: SyncDiscriminator | None = None,
        style_disc: StyleDiscriminator | None = None,
        temporal_disc: TemporalDiscriminator | None = None,
    ) -> None:
        if sync_disc is not None and basis is None:
            raise ContractError("The sync loss needs a face basis.")
        dtype = torch_dtype(config.train.precision)
        self.generator = generator
        self.config = config
        self.basis = basis
        if sync_disc is not None:
            sync_disc = freeze(sync_disc.to(dtype))
        if style_disc is not None:
            style_disc = freeze(style_disc.to(dtype))
        self.sync_disc = sync_disc
        self.style_disc = style_disc
        if temporal_disc is None:
            temporal_disc = TemporalDiscriminator(
                config.train.clip_length, width=config.discriminator.width
            ).to(dtype)
        self.temporal_disc = temporal_disc
        self.gen_optimizer = self._adam(generator.parameters())
        self.critic_optimizer = self._adam(self.temporal_disc.parameters())
        self.step = 0
        for name, critic, weight in (
            ("sync", self.sync_disc, config.loss.sync),
            ("style", self.style_disc, config.loss.style),
        ):
            if critic is None or weight == 0:
                logger.info("The %s loss is disabled.", name)

    def _adam(self, parameters: object) -> torch.optim.Adam:
        train = self.config.train
        return torch.optim.Adam(
            parameters, lr=train.learning_rate, betas=train.betas, eps=train.eps
        )

    def losses(self, batch: TrainingBatch) -> tuple[LossComponents, torch.Tensor]:
        """All five loss components and the predicted motion of a batch."""
        weights = self.config.loss
        generator = self.generator
        style = generator.extract_style(batch.style_ref)
        pred = generator.decode(batch.phonemes, style)
        zero = pred.new_zeros(())

        rec = rec_loss(
            batch.target, pred, weights.mu, weights.ssim_window, weights.ssim_range
        )
        trip = zero
        if weights.trip:
            trip = triplet_loss(
                style,
                generator.extract_style(batch.positive_ref),
                generator.extract_style(batch.negative_ref),
                weights.gamma,
            )
        sync = zero
        if weights.sync and self.sync_disc is not None:
            sync = sync_loss(pred, batch.phonemes, self.sync_disc, self.basis)
        tem = zero
        if weights.tem:
            tem = generator_hinge_loss(self.temporal_disc(pred))
        style_term = zero
        if weights.style and self.style_disc is not None:
            style_term = style_loss(pred, batch.labels, self.style_disc)
        return LossComponents(rec, trip, sync, tem, style_term), pred

    def train_step(self, batch: TrainingBatch) -> dict[str, float]:
        """One generator step and one temporal-critic step.

        Raises:
            NumericError: If a loss component turns non-finite.
        """
        self.generator.train()
        self.temporal_disc.train()
        components, pred = self.losses(batch)
        total = total_loss(components, self.config.loss)
        self.gen_optimizer.zero_grad()
        total.backward()
        self.gen_optimizer.step()

        critic = 0.0
        if self.config.loss.tem:
            self.critic_optimizer.zero_grad()
            critic_loss = critic_hinge_loss(
                self.temporal_disc(batch.target), self.temporal_disc(pred.detach())
            )
            if not torch.isfinite(critic_loss):
                message = f"Temporal critic loss is not finite: {float(critic_loss)}."
                raise NumericError(message, component="critic")
            critic_loss.backward()
            self.critic_optimizer.step()
            critic = float(critic_loss)

        record = {"step": self.step, **components.as_floats()}
        record["total"] = float(total)
        record["critic"] = critic
        self.step += 1
        return record


def train(
    generator: MotionGenerator,
    clips: Sequence[TrainingClip],
    config: RunConfig,
    basis: FaceBasis | None = None,
    sync_disc: SyncDiscriminator | None = None,
    style_disc: StyleDiscriminator | None = None,
    log_path: Path | None = None,
    steps: int | None = None,
) -> tuple[Trainer, list[dict[str, float]]]:
    """Run `config.train.steps` training steps on random batches of `clips`.

    Returns:
        The trainer and one loss record per step. With `log_path` each record is
        also appended to that file as one JSON line.
    """
    settings = config.train
    steps = settings.steps if steps is None else steps
    torch.manual_seed(settings.seed)
    rng = np.random.default_rng(settings.seed)
    dtype = torch_dtype(settings.precision)
    trainer = Trainer(generator, config, basis, sync_disc, style_disc)

    history = []
    log_file = Path(log_path).open("w", encoding="utf-8") if log_path else None
    try:
        for step in range(steps):
            size = settings.batch_size
            indices = rng.choice(len(clips), size=size, replace=len(clips) < size)
            batch = make_batch(clips, indices, settings.clip_length, rng, dtype)
            record = trainer.train_step(batch)
            history.append(record)
            if log_file is not None:
                log_file.write(json.dumps(record) + "\n")
            if step % settings.log_every == 0 or step == steps - 1:
                logger.info(
                    "Step %s: rec %.4f, trip %.4f, sync %.4f, tem %.4f, style %.4f",
                    step,
                    record["rec"],
                    record["trip"],
                    record["sync"],
                    record["tem"],
                    record["style"],
                )
    finally:
        if log_file is not None:
            log_file.close()
    return trainer, history


def _style_batch(
    clips: Sequence[TrainingClip],
    indices: Sequence[int],
    clip_length: int,
    rng: np.random.Generator | None,
    dtype: torch.dtype,
) -> tuple[torch.Tensor, torch.Tensor]:
    frames = []
    for i in indices:
        start = _crop_start(clips[i], clip_length, rng) if rng is not None else 0
        frames.append(clips[i].target.frames[start : start + clip_length])
    labels = [clips[i].style_label for i in indices]
    return (
        torch.as_tensor(np.stack(frames)).to(dtype),
        torch.as_tensor(labels, dtype=torch.long),
    )


@torch.no_grad()
def style_accuracy(
    discriminator: StyleDiscriminator, clips: Sequence[TrainingClip], clip_length: int
) -> float:
    """Share of clips whose first `clip_length` frames are classified correctly."""
    dtype = next(discriminator.parameters()).dtype
    motion, labels = _style_batch(clips, range(len(clips)), clip_length, None, dtype)
    predicted = discriminator.logits(motion).argmax(dim=-1)
    return float((predicted == labels).float().mean())


def pretrain_style_disc(
    clips: Sequence[TrainingClip], config: RunConfig
) -> PretrainResult:
    """Train the style classifier with cross-entropy, then freeze it.

    Returns:
        The frozen discriminator with its held-out accuracy.

    Raises:
        DataError: If the corpus holds fewer than 2 styles or nothing to hold out.
    """
    labels = {c.style_label for c in clips}
    if len(labels) < 2:  # noqa: PLR2004
        message = f"Style pretraining needs at least 2 styles, got {len(labels)}."
        raise DataError(message)
    settings = config.discriminator
    clip_length = config.train.clip_length
    rng = np.random.default_rng(config.train.seed)
    train_clips, held_out = holdout_split(clips, settings.holdout_fraction, rng)
    if not held_out:
        raise DataError("No held-out clips to measure style accuracy on.")

    torch.manual_seed(config.train.seed)
    dtype = torch_dtype(config.train.precision)
    discriminator = StyleDiscriminator(
        max(labels) + 1, clip_length, width=settings.width
    ).to(dtype)
    optimizer = torch.optim.Adam(
        discriminator.parameters(),
        lr=settings.learning_rate,
        betas=config.train.betas,
        eps=config.train.eps,
    )
    losses = []
    for step in range(settings.steps):
        indices = rng.integers(len(train_clips), size=settings.batch_size)
        motion, targets = _style_batch(train_clips, indices, clip_length, rng, dtype)
        loss = F.cross_entropy(discriminator.logits(motion), targets)
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        losses.append(float(loss))
        if step % config.train.log_every == 0:
            logger.debug("Style pretraining step %s: loss %.4f", step, float(loss))

    accuracy = style_accuracy(freeze(discriminator), held_out, clip_length)
    logger.info("Style discriminator held-out accuracy: %.4f", accuracy)
    return PretrainResult(
        discriminator=discriminator,
        metric=accuracy,
        initial_loss=losses[0] if losses else float("nan"),
        final_loss=losses[-1] if losses else float("nan"),
    )
