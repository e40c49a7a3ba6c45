"""
Region head: anchor decoding of the raw network output and greedy NMS

Raw channel layout per anchor a: a*(C+5) + [tx, ty, tw, th, to, class logits...]
    cx = (j + sigmoid(tx)) / S          cy = (i + sigmoid(ty)) / S
    w  = pw * exp(tw) / S               h  = ph * exp(th) / S
    score_c = sigmoid(to) * softmax(class logits)[c]
"""
from typing import Dict, List, Sequence, Tuple
import logging
import numpy as np
from scipy.special import expit, logit, softmax

from ..config import settings
from ..exceptions import ShapeError
from ..schemas.box import Box, Detection, RegionClass
from ..schemas.network import NetworkConfig
from .metrics import iou

logger = logging.getLogger(__name__)

_LOGIT_EPS = 1e-12
MIN_BOX_SIZE = 1e-6  # below detection file precision


def split_channels(raw: np.ndarray, config: NetworkConfig) -> np.ndarray:
    """(N, (C+5)*A, S, S) -> (N, A, C+5, S, S)"""
    if raw.ndim != 4:
        raise ShapeError(f"feature map must be rank 4, got shape {raw.shape}")
    n, channels, s, s2 = raw.shape
    per_anchor = config.num_classes + 5
    if channels % config.num_anchors != 0 or channels != per_anchor * config.num_anchors:
        raise ShapeError(
            f"feature map has {channels} channels, expected (C+5)*A = "
            f"({config.num_classes}+5)*{config.num_anchors} = {config.head_filters}"
        )
    if s != s2:
        raise ShapeError(f"feature map must be square, got {s}x{s2}")
    return raw.reshape(n, config.num_anchors, per_anchor, s, s)


def class_probabilities(logits: np.ndarray) -> np.ndarray:
    """Softmax over axis 1; a single class is identically 1"""
    if logits.shape[1] == 1:
        return np.ones_like(logits)
    return softmax(logits, axis=1)


def decode(feature_map: np.ndarray, config: NetworkConfig, conf_threshold: float = None, image_id: str = "") -> List[Detection]:
    """One Detection per (cell, anchor, class) whose score reaches the threshold"""
    if conf_threshold is None:
        conf_threshold = settings.CONF_THRESHOLD
    if feature_map.ndim != 4 or feature_map.shape[0] != 1:
        raise ShapeError(f"decode expects a single-image feature map (1, (C+5)*A, S, S), got {feature_map.shape}")

    raw = split_channels(feature_map.astype(np.float64), config)[0]  # (A, C+5, S, S)
    s = raw.shape[-1]
    priors = np.asarray(config.anchor_priors, dtype=np.float64)
    rows = np.arange(s)[:, None]
    cols = np.arange(s)[None, :]

    cx = (cols[None] + expit(raw[:, 0])) / s
    cy = (rows[None] + expit(raw[:, 1])) / s
    w = priors[:, 0, None, None] * np.exp(raw[:, 2]) / s
    h = priors[:, 1, None, None] * np.exp(raw[:, 3]) / s
    objectness = expit(raw[:, 4])
    scores = objectness[:, None] * class_probabilities(raw[:, 5:])  # (A, C, S, S)

    # sizes beyond the whole image are capped; centers always lie in the image
    w = np.minimum(w, 1.0)
    h = np.minimum(h, 1.0)

    detections = []
    a_idx, c_idx, i_idx, j_idx = np.nonzero(scores >= conf_threshold)
    order = np.lexsort((c_idx, a_idx, j_idx, i_idx))
    for k in order:
        a, c, i, j = a_idx[k], c_idx[k], i_idx[k], j_idx[k]
        bw = w[a, i, j]
        bh = h[a, i, j]
        if bw < MIN_BOX_SIZE or bh < MIN_BOX_SIZE:
            continue
        detections.append(Detection(
            box=Box(
                cx=float(cx[a, i, j]),
                cy=float(cy[a, i, j]),
                w=float(bw),
                h=float(bh),
            ),
            class_id=RegionClass(int(c)),
            confidence=float(min(max(scores[a, c, i, j], 0.0), 1.0)),
            image_id=image_id,
        ))
    return detections


def responsible_cell(box: Box, grid_size: int) -> Tuple[int, int]:
    """(row, col) of the cell containing the box center"""
    i = min(int(np.floor(box.cy * grid_size)), grid_size - 1)
    j = min(int(np.floor(box.cx * grid_size)), grid_size - 1)
    return i, j


def encode(box: Box, cell: Tuple[int, int], prior: Tuple[float, float], grid_size: int) -> Tuple[float, float, float, float]:
    """Raw (tx, ty, tw, th) that decode maps back onto `box`"""
    i, j = cell
    ox = np.clip(box.cx * grid_size - j, _LOGIT_EPS, 1 - _LOGIT_EPS)
    oy = np.clip(box.cy * grid_size - i, _LOGIT_EPS, 1 - _LOGIT_EPS)
    return (
        float(logit(ox)),
        float(logit(oy)),
        float(np.log(box.w * grid_size / prior[0])),
        float(np.log(box.h * grid_size / prior[1])),
    )


def nms(detections: Sequence[Detection], iou_threshold: float = None) -> List[Detection]:
    """Greedy per-class suppression within each image; output by descending confidence"""
    if iou_threshold is None:
        iou_threshold = settings.NMS_IOU_THRESHOLD

    groups: Dict[Tuple[str, int], List[Tuple[int, Detection]]] = {}
    for position, det in enumerate(detections):
        groups.setdefault((det.image_id, int(det.class_id)), []).append((position, det))

    kept: List[Tuple[int, Detection]] = []
    suppressed = 0
    for group in groups.values():
        ranked = sorted(group, key=lambda item: -item[1].confidence)
        survivors: List[Tuple[int, Detection]] = []
        for position, det in ranked:
            if all(iou(det.box, other.box) <= iou_threshold for _, other in survivors):
                survivors.append((position, det))
            else:
                suppressed += 1
        kept.extend(survivors)

    kept.sort(key=lambda item: (-item[1].confidence, item[0]))
    if suppressed:
        logger.debug(f"NMS suppressed {suppressed} of {len(detections)} detections")
    return [det for _, det in kept]
