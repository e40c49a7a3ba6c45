"""
Anchor priors from k-means over annotated box sizes with 1 - IoU distance
"""
from typing import List, Sequence, Tuple
import logging
import numpy as np

from ..exceptions import DatasetError

logger = logging.getLogger(__name__)

MAX_ITERATIONS = 300


def size_iou(sizes: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """(n, k) IoU of co-centered (w, h) rectangles"""
    inter = (
        np.minimum(sizes[:, None, 0], centroids[None, :, 0])
        * np.minimum(sizes[:, None, 1], centroids[None, :, 1])
    )
    areas = sizes[:, 0] * sizes[:, 1]
    centroid_areas = centroids[:, 0] * centroids[:, 1]
    return inter / (areas[:, None] + centroid_areas[None, :] - inter)


def kmeans_priors(
    sizes: Sequence[Tuple[float, float]], k: int, grid_size: int, seed: int = 0
) -> List[Tuple[float, float]]:
    """Normalized (w, h) pairs -> k priors in cell units, sorted by area"""
    boxes = np.asarray(sizes, dtype=np.float64).reshape(-1, 2) * grid_size
    if k < 1:
        raise DatasetError(f"k must be positive, got {k}")
    if boxes.shape[0] < k:
        raise DatasetError(f"need at least {k} boxes to cluster, got {boxes.shape[0]}")

    rng = np.random.default_rng(seed)
    centroids = boxes[rng.choice(boxes.shape[0], size=k, replace=False)].copy()
    labels = np.full(boxes.shape[0], -1)
    for iteration in range(MAX_ITERATIONS):
        nearest = np.argmax(size_iou(boxes, centroids), axis=1)
        if np.array_equal(nearest, labels):
            break
        labels = nearest
        for c in range(k):
            members = boxes[labels == c]
            # empty clusters keep their previous centroid
            if members.size:
                centroids[c] = members.mean(axis=0)

    mean_iou = float(np.mean(np.max(size_iou(boxes, centroids), axis=1)))
    logger.info(f"k-means priors: k={k}, {iteration + 1} iterations, mean IoU {mean_iou:.4f}")
    order = np.argsort(centroids[:, 0] * centroids[:, 1], kind="stable")
    return [(float(w), float(h)) for w, h in centroids[order]]


def format_anchors(priors: Sequence[Tuple[float, float]]) -> str:
    """`anchors=` config line"""
    return "anchors=" + " ".join(f"{w:.4f},{h:.4f}" for w, h in priors)
