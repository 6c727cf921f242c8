"""Reconstruction, triplet and total objectives."""

import logging
from dataclasses import dataclass, fields

import torch
import torch.nn.functional as F  # noqa: N812
from torchmetrics.functional.image import structural_similarity_index_measure

from stylemotion.config import LossWeights
from stylemotion.errors import ContractError, NumericError

logger = logging.getLogger("stylemotion")


def ssim(
    reference: torch.Tensor,
    predicted: torch.Tensor,
    window: int = 7,
    data_range: float = 6.0,
) -> torch.Tensor:
    """SSIM of (B, L, 64) clips, each read as a single-channel L x 64 image.

    Uses a uniform window and averages over valid window positions and the batch.
    """
    return structural_similarity_index_measure(
        predicted.unsqueeze(1),
        reference.unsqueeze(1),
        gaussian_kernel=False,
        kernel_size=window,
        data_range=data_range,
        k1=0.01,
        k2=0.03,
    )


def rec_loss(
    reference: torch.Tensor,
    predicted: torch.Tensor,
    mu: float = 0.1,
    window: int = 7,
    data_range: float = 6.0,
) -> torch.Tensor:
    """`mu * L1 + (1 - mu) * (1 - SSIM)` between ground truth and prediction."""
    if reference.shape != predicted.shape:
        message = (
            f"Reference shape {tuple(reference.shape)} differs from prediction "
            f"shape {tuple(predicted.shape)}."
        )
        raise ContractError(message)
    if reference.ndim != 3 or min(reference.shape[1:]) < window:  # noqa: PLR2004
        message = (
            f"Clips of shape {tuple(reference.shape)} are too small for a "
            f"{window}x{window} SSIM window."
        )
        raise ContractError(message)
    l1 = F.l1_loss(predicted, reference)
    return mu * l1 + (1 - mu) * (1 - ssim(reference, predicted, window, data_range))


def triplet_loss(
    anchor: torch.Tensor,
    positive: torch.Tensor,
    negative: torch.Tensor,
    gamma: float = 5.0,
) -> torch.Tensor:
    """Batch mean of `max(|a - p| - |a - n| + gamma, 0)`."""
    if not anchor.shape == positive.shape == negative.shape:
        message = (
            f"Style code shapes differ: {tuple(anchor.shape)}, "
            f"{tuple(positive.shape)}, {tuple(negative.shape)}."
        )
        raise ContractError(message)
    pos_dist = torch.linalg.vector_norm(anchor - positive, dim=-1)
    neg_dist = torch.linalg.vector_norm(anchor - negative, dim=-1)
    return F.relu(pos_dist - neg_dist + gamma).mean()


@dataclass(frozen=True)
class LossComponents:
    rec: torch.Tensor
    trip: torch.Tensor
    sync: torch.Tensor
    tem: torch.Tensor
    style: torch.Tensor

    def as_floats(self) -> dict[str, float]:
        return {f.name: float(getattr(self, f.name)) for f in fields(self)}


def total_loss(components: LossComponents, weights: LossWeights) -> torch.Tensor:
    """Weighted sum of the five loss components.

    Raises:
        NumericError: If any component is not finite.
    """
    total = None
    for item in fields(components):
        value = torch.as_tensor(getattr(components, item.name))
        if not torch.isfinite(value).all():
            message = f"Loss component '{item.name}' is not finite: {float(value)}."
            raise NumericError(message, component=item.name)
        term = getattr(weights, item.name) * value
        total = term if total is None else total + term
    return total
