"""Evaluation metrics for sync critics, style spaces and generated motion."""

import logging

import numpy as np
from sklearn.decomposition import PCA
from sklearn.metrics import roc_auc_score, silhouette_score
from sklearn.neighbors import NearestCentroid

from stylemotion.errors import DataError

logger = logging.getLogger("stylemotion")


def sync_auc(labels: np.ndarray, scores: np.ndarray) -> float:
    """ROC area: chance that a synchronous pair outranks an async one."""
    labels = np.asarray(labels)
    if len(np.unique(labels)) < 2:  # noqa: PLR2004
        raise DataError("AUC needs both synchronous and asynchronous pairs.")
    return float(roc_auc_score(labels, scores))


def silhouette(codes: np.ndarray, labels: np.ndarray) -> float:
    labels = np.asarray(labels)
    n_labels = len(np.unique(labels))
    if not 2 <= n_labels < len(labels):  # noqa: PLR2004
        message = f"Silhouette needs 2..{len(labels) - 1} clusters, got {n_labels}."
        raise DataError(message)
    return float(silhouette_score(codes, labels))


def nearest_centroid_accuracy(
    train_codes: np.ndarray,
    train_labels: np.ndarray,
    test_codes: np.ndarray,
    test_labels: np.ndarray,
) -> float:
    """Share of test codes whose nearest training-style centroid has their label."""
    classifier = NearestCentroid().fit(train_codes, train_labels)
    return float(np.mean(classifier.predict(test_codes) == np.asarray(test_labels)))


def project_2d(codes: np.ndarray) -> np.ndarray:
    """Coordinates of each code along the top two principal directions."""
    codes = np.asarray(codes, dtype=np.float64)
    if codes.shape[0] < 2:  # noqa: PLR2004
        raise DataError("Projection needs at least 2 style codes.")
    components = min(2, codes.shape[0], codes.shape[1])
    projected = PCA(n_components=components, svd_solver="full").fit_transform(codes)
    if components < 2:  # noqa: PLR2004
        projected = np.pad(projected, ((0, 0), (0, 2 - components)))
    return projected


def landmark_distance(reference: np.ndarray, predicted: np.ndarray) -> float:
    """Mean Euclidean distance between corresponding (..., P, 3) vertices."""
    return float(np.linalg.norm(reference - predicted, axis=-1).mean())
