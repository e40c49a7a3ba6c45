"""
Anchor-target assignment, the multi-part detection loss and seeded SGD

Loss over responsible (cell, anchor) slots R and the rest N:

    lambda_coord * sum_R [(s(tx)-x)^2 + (s(ty)-y)^2 + (tw-w)^2 + (th-h)^2]
    + sum_R (s(to)-1)^2 + lambda_noobj * sum_N s(to)^2
    + sum_R cross-entropy(class logits, class)

where s is the logistic sigmoid and (x, y, w, h) are the encoded targets.
"""
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union
import csv
import logging
import numpy as np
from scipy.special import expit, log_softmax, softmax

from ..exceptions import DatasetError, NumericalError, ShapeError, TrainingDivergedError
from ..models.network import Model, grads_by_key
from ..schemas.box import Annotation, Box
from ..schemas.dataset import DatasetManifest, Split
from ..schemas.network import NetworkConfig
from ..schemas.training import TrainConfig
from .dataset import load_split
from .detect_head import responsible_cell

logger = logging.getLogger(__name__)

AnnotationLike = Union[Annotation, Tuple[int, Box]]


@dataclass
class TargetMap:
    """Targets for a batch; every array is indexed (N, A, ..., S, S)"""
    num_classes: int
    responsible: np.ndarray   # (N, A, S, S) bool
    boxes: np.ndarray         # (N, A, 4, S, S): x, y offsets in the cell, log w, log h
    classes: np.ndarray       # (N, A, S, S) model class index, -1 where unassigned
    # (image, annotation index, row, col, anchor) per assigned box
    assignments: List[Tuple[int, int, int, int, int]] = field(default_factory=list)

    @property
    def objectness(self) -> np.ndarray:
        return self.responsible.astype(np.float64)

    @property
    def batch_size(self) -> int:
        return self.responsible.shape[0]


def prior_ious(box: Box, priors: Sequence[Tuple[float, float]], grid_size: int) -> np.ndarray:
    """IoU of the box size against every prior, both centered at the origin, in cell units"""
    w = box.w * grid_size
    h = box.h * grid_size
    p = np.asarray(priors, dtype=np.float64)
    inter = np.minimum(w, p[:, 0]) * np.minimum(h, p[:, 1])
    return inter / (w * h + p[:, 0] * p[:, 1] - inter)


def _unpack(item: AnnotationLike) -> Tuple[int, Box]:
    if isinstance(item, Annotation):
        return int(item.class_id), item.box
    class_id, box = item
    return int(class_id), box


def assign_targets(
    annotations: Sequence[AnnotationLike],
    config: NetworkConfig,
    classes: Optional[Sequence[int]] = None,
) -> TargetMap:
    """
    Single-image targets. `classes` lists the dataset class ids the model
    predicts, in model order; other annotations are ignored. Default: both
    classes for C=2, every annotation as the single class for C=1.
    """
    s = config.grid_size
    a_count = config.num_anchors
    responsible = np.zeros((1, a_count, s, s), dtype=bool)
    boxes = np.zeros((1, a_count, 4, s, s), dtype=np.float64)
    class_map = np.full((1, a_count, s, s), -1, dtype=np.int64)
    assignments = []

    if classes is None and config.num_classes == 2:
        classes = (0, 1)
    for index, item in enumerate(annotations):
        class_id, box = _unpack(item)
        if not (0.0 <= box.cx <= 1.0 and 0.0 <= box.cy <= 1.0):
            raise DatasetError(f"box center ({box.cx}, {box.cy}) lies outside the image")
        if classes is None:
            model_class = 0
        elif class_id in classes:
            model_class = list(classes).index(class_id)
        else:
            continue

        i, j = responsible_cell(box, s)
        ranking = np.argsort(-prior_ious(box, config.anchor_priors, s), kind="stable")
        free = [int(a) for a in ranking if not responsible[0, a, i, j]]
        if not free:
            logger.warning(f"No free anchor in cell ({i}, {j}) for annotation {index}; dropped")
            continue
        a = free[0]
        if a != int(ranking[0]):
            logger.debug(f"Anchor collision in cell ({i}, {j}): annotation {index} moved to anchor {a}")

        pw, ph = config.anchor_priors[a]
        responsible[0, a, i, j] = True
        boxes[0, a, :, i, j] = (
            box.cx * s - j,
            box.cy * s - i,
            np.log(box.w * s / pw),
            np.log(box.h * s / ph),
        )
        class_map[0, a, i, j] = model_class
        assignments.append((0, index, i, j, a))

    return TargetMap(config.num_classes, responsible, boxes, class_map, assignments)


def stack_targets(maps: Sequence[TargetMap]) -> TargetMap:
    assignments = [
        (n, index, i, j, a) for n, m in enumerate(maps) for (_, index, i, j, a) in m.assignments
    ]
    return TargetMap(
        num_classes=maps[0].num_classes,
        responsible=np.concatenate([m.responsible for m in maps]),
        boxes=np.concatenate([m.boxes for m in maps]),
        classes=np.concatenate([m.classes for m in maps]),
        assignments=assignments,
    )


def detection_loss(raw_output: np.ndarray, targets: TargetMap, config: TrainConfig) -> Tuple[float, np.ndarray]:
    """Summed loss over the batch and its exact gradient w.r.t. the raw output"""
    n, channels, s, s2 = raw_output.shape
    a_count = targets.responsible.shape[1]
    per_anchor = targets.num_classes + 5
    if channels != a_count * per_anchor or (n, a_count, s, s2) != targets.responsible.shape:
        raise ShapeError(
            f"raw output shape {raw_output.shape} does not match targets "
            f"(N, A, S, S)={targets.responsible.shape} with C={targets.num_classes}"
        )

    raw = raw_output.astype(np.float64).reshape(n, a_count, per_anchor, s, s)
    resp = targets.objectness
    noobj = 1.0 - resp
    t = targets.boxes
    grad = np.zeros_like(raw)

    sx = expit(raw[:, :, 0])
    sy = expit(raw[:, :, 1])
    so = expit(raw[:, :, 4])
    dx = sx - t[:, :, 0]
    dy = sy - t[:, :, 1]
    dw = raw[:, :, 2] - t[:, :, 2]
    dh = raw[:, :, 3] - t[:, :, 3]

    lc = config.lambda_coord
    ln = config.lambda_noobj
    coord = lc * np.sum(resp * (dx ** 2 + dy ** 2 + dw ** 2 + dh ** 2))
    obj = np.sum(resp * (so - 1.0) ** 2)
    no_obj = ln * np.sum(noobj * so ** 2)

    grad[:, :, 0] = lc * resp * 2.0 * dx * sx * (1.0 - sx)
    grad[:, :, 1] = lc * resp * 2.0 * dy * sy * (1.0 - sy)
    grad[:, :, 2] = lc * resp * 2.0 * dw
    grad[:, :, 3] = lc * resp * 2.0 * dh
    grad[:, :, 4] = (resp * 2.0 * (so - 1.0) + noobj * ln * 2.0 * so) * so * (1.0 - so)

    cls = 0.0
    if targets.num_classes > 1:
        logits = raw[:, :, 5:]                      # (N, A, C, S, S)
        onehot = np.zeros_like(logits)
        labelled = np.clip(targets.classes, 0, None)
        np.put_along_axis(onehot, labelled[:, :, None], 1.0, axis=2)
        onehot *= resp[:, :, None]
        cls = -np.sum(onehot * log_softmax(logits, axis=2))
        grad[:, :, 5:] = resp[:, :, None] * (softmax(logits, axis=2) - onehot)

    loss = float(coord + obj + no_obj + cls)
    if not np.isfinite(loss):
        raise NumericalError(f"non-finite detection loss {loss}")
    return loss, grad.reshape(raw_output.shape)


@dataclass
class TrainResult:
    model: Model
    history: List[float]  # mean loss per image, one entry per epoch


def write_loss_history(path: str, history: Sequence[float]) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["epoch", "mean_loss"])
        for epoch, value in enumerate(history, start=1):
            writer.writerow([epoch, repr(float(value))])


class SGD:
    """Momentum SGD; weight decay applies to conv weights only"""

    def __init__(self, model: Model, config: TrainConfig):
        self.model = model
        self.learning_rate = config.learning_rate
        self.momentum = config.momentum
        self.weight_decay = config.weight_decay
        self.velocity: Dict[str, np.ndarray] = {
            key: np.zeros_like(param) for key, param in model.trainable()
        }

    def step(self, grads: Dict[str, np.ndarray]) -> None:
        for key, param in self.model.trainable():
            g = grads[key].astype(param.dtype, copy=False)
            if key.endswith(".weights"):
                g = g + self.weight_decay * param
            v = self.velocity[key]
            v *= self.momentum
            v -= self.learning_rate * g
            param += v


def train_on_arrays(
    model: Model,
    images: np.ndarray,
    targets: Sequence[TargetMap],
    config: TrainConfig,
) -> List[float]:
    """Runs the epochs in place on `model`; returns the per-epoch mean loss"""
    count = images.shape[0]
    if count == 0:
        raise DatasetError("training split is empty")
    rng = np.random.default_rng(config.seed)
    optimizer = SGD(model, config)
    history: List[float] = []

    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(count)
        total = 0.0
        for start in range(0, count, config.batch_size):
            batch = order[start:start + config.batch_size]
            output, caches = model.forward_train(images[batch])
            try:
                loss, grad = detection_loss(output, stack_targets([targets[k] for k in batch]), config)
            except NumericalError:
                logger.error(f"Training diverged at epoch {epoch}")
                raise TrainingDivergedError(epoch, float("nan"))
            total += loss
            grad = (grad / len(batch)).astype(output.dtype)
            optimizer.step(grads_by_key(model.backward(grad, caches)))

        mean_loss = total / count
        if not np.isfinite(mean_loss):
            logger.error(f"Training diverged at epoch {epoch}: mean loss {mean_loss}")
            raise TrainingDivergedError(epoch, mean_loss)
        history.append(mean_loss)
        logger.info(f"Epoch {epoch}/{config.epochs}: mean loss {mean_loss:.6f}")
    return history


def train(
    model: Model,
    manifest: DatasetManifest,
    config: TrainConfig,
    classes: Optional[Sequence[int]] = None,
) -> TrainResult:
    """Seeded mini-batch SGD over the manifest's train split"""
    net = model.config
    if config.profile != net.profile:
        logger.warning(f"Train config profile {config.profile.value} differs from model profile {net.profile.value}")

    image_ids, images, annotations = load_split(manifest, Split.TRAIN, net.input_channels, net.input_size)
    if not image_ids:
        raise DatasetError("manifest has no images in the train split")
    targets = [assign_targets(anns, net, classes) for anns in annotations]
    assigned = sum(len(t.assignments) for t in targets)
    logger.info(
        f"Training on {len(image_ids)} images ({assigned} boxes), "
        f"{config.epochs} epochs, batch {config.batch_size}, lr {config.learning_rate}"
    )
    history = train_on_arrays(model, images, targets, config)
    return TrainResult(model=model, history=history)
