"""
Detection evaluation: IoU, greedy PASCAL-VOC style matching, precision /
recall / F-score, interpolated AP and mAP, per-image best-detection IoU.

A detection is correct when its IoU with a not-yet-matched ground-truth
box of the same class and image is strictly above the threshold.
"""
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union
import logging
import numpy as np

from ..config import settings
from ..exceptions import EvaluationError
from ..schemas.box import Annotation, Box, CLASS_NAMES, Detection, RegionClass
from ..schemas.report import ClassMetrics, EvalReport, ImageIoU

logger = logging.getLogger(__name__)

BoxLike = Union[Box, Sequence[float]]
GroundTruth = Mapping[str, Sequence[Annotation]]


def _xywh(box: BoxLike) -> Tuple[float, float, float, float]:
    if isinstance(box, Box):
        return box.as_tuple()
    cx, cy, w, h = box
    return float(cx), float(cy), float(w), float(h)


def _overlap(ac: float, aw: float, bc: float, bw: float) -> float:
    # from widths and center distance; corner differences lose the last bits for equal boxes
    return min(aw, bw, (aw + bw) / 2 - abs(ac - bc))


def iou(a: BoxLike, b: BoxLike) -> float:
    """Intersection over union of two center/size rectangles"""
    acx, acy, aw, ah = _xywh(a)
    bcx, bcy, bw, bh = _xywh(b)
    ix = _overlap(acx, aw, bcx, bw)
    iy = _overlap(acy, ah, bcy, bh)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    union = aw * ah + bw * bh - inter
    if union <= 0:
        return 0.0
    return min(1.0, inter / union)


@dataclass
class MatchedDetection:
    position: int            # index in the caller's detection list
    image_id: str
    confidence: float
    true_positive: bool
    gt_index: Optional[int]  # matched ground-truth index within its image
    iou: float


@dataclass
class ClassMatch:
    class_id: int
    num_gt: int
    detections: List[MatchedDetection] = field(default_factory=list)  # descending confidence

    @property
    def tp_flags(self) -> List[bool]:
        return [d.true_positive for d in self.detections]

    @property
    def confidences(self) -> List[float]:
        return [d.confidence for d in self.detections]


@dataclass
class MatchResult:
    per_class: Dict[int, ClassMatch]
    # (image_id, class_id) -> {gt_index: detection position}
    matched_gt: Dict[Tuple[str, int], Dict[int, int]]

    def __getitem__(self, class_id: int) -> ClassMatch:
        return self.per_class[int(class_id)]


@dataclass
class APResult:
    precision: List[float]
    recall: List[float]
    average_precision: float
    no_ground_truth: bool = False


def _check_classes(detections: Iterable[Detection], classes: Sequence[int]) -> None:
    known = set(classes)
    unknown = sorted({int(d.class_id) for d in detections} - known)
    if unknown:
        raise EvaluationError(f"unknown class_id(s) {unknown}; evaluating classes {sorted(known)}")


def match_detections(
    detections: Sequence[Detection],
    ground_truth: GroundTruth,
    iou_threshold: float = None,
    classes: Sequence[int] = (RegionClass.IRIS, RegionClass.PERIOCULAR),
) -> MatchResult:
    """Greedy matching per class in descending confidence; ties keep input order"""
    if iou_threshold is None:
        iou_threshold = settings.MATCH_IOU_THRESHOLD
    class_ids = [int(c) for c in classes]
    _check_classes(detections, class_ids)

    per_class: Dict[int, ClassMatch] = {}
    matched_gt: Dict[Tuple[str, int], Dict[int, int]] = {}
    for class_id in class_ids:
        num_gt = sum(
            1 for anns in ground_truth.values() for ann in anns if int(ann.class_id) == class_id
        )
        ranked = sorted(
            ((pos, det) for pos, det in enumerate(detections) if int(det.class_id) == class_id),
            key=lambda item: -item[1].confidence,
        )
        result = ClassMatch(class_id=class_id, num_gt=num_gt)
        for pos, det in ranked:
            taken = matched_gt.setdefault((det.image_id, class_id), {})
            best_iou, best_index = 0.0, None
            for gt_index, ann in enumerate(ground_truth.get(det.image_id, ())):
                if int(ann.class_id) != class_id or gt_index in taken:
                    continue
                overlap = iou(det.box, ann.box)
                if overlap > best_iou:
                    best_iou, best_index = overlap, gt_index
            hit = best_index is not None and best_iou > iou_threshold
            if hit:
                taken[best_index] = pos
            result.detections.append(MatchedDetection(
                position=pos,
                image_id=det.image_id,
                confidence=det.confidence,
                true_positive=hit,
                gt_index=best_index if hit else None,
                iou=best_iou,
            ))
        per_class[class_id] = result
    return MatchResult(per_class=per_class, matched_gt=matched_gt)


def precision_recall(match: ClassMatch, num_gt: Optional[int] = None) -> Tuple[List[float], List[float]]:
    num_gt = match.num_gt if num_gt is None else num_gt
    flags = np.asarray(match.tp_flags, dtype=bool)
    tp = np.cumsum(flags)
    fp = np.cumsum(~flags)
    precision = tp / np.maximum(tp + fp, 1)
    recall = tp / num_gt if num_gt > 0 else np.zeros_like(precision, dtype=float)
    return precision.tolist(), recall.tolist()


def _all_point_ap(precision: Sequence[float], recall: Sequence[float]) -> float:
    mrec = np.concatenate(([0.0], recall, [1.0]))
    mpre = np.concatenate(([0.0], precision, [0.0]))
    # precision envelope
    for i in range(mpre.size - 1, 0, -1):
        mpre[i - 1] = max(mpre[i - 1], mpre[i])
    steps = np.where(mrec[1:] != mrec[:-1])[0]
    return float(np.sum((mrec[steps + 1] - mrec[steps]) * mpre[steps + 1]))


def _eleven_point_ap(precision: Sequence[float], recall: Sequence[float]) -> float:
    prec = np.asarray(precision, dtype=float)
    rec = np.asarray(recall, dtype=float)
    total = 0.0
    for k in range(11):
        t = k / 10.0
        above = prec[rec >= t]
        total += float(above.max()) if above.size else 0.0
    return total / 11.0


def pr_and_ap(match: ClassMatch, num_gt: Optional[int] = None, method: str = None) -> APResult:
    method = method or settings.AP_METHOD
    num_gt = match.num_gt if num_gt is None else num_gt
    if num_gt < 0:
        raise EvaluationError(f"num_gt must be non-negative, got {num_gt}")
    precision, recall = precision_recall(match, num_gt)
    if num_gt == 0:
        return APResult(precision, recall, 0.0, no_ground_truth=True)
    if not precision:
        return APResult(precision, recall, 0.0)
    if method == "eleven_point":
        ap = _eleven_point_ap(precision, recall)
    elif method == "all_point":
        ap = _all_point_ap(precision, recall)
    else:
        raise EvaluationError(f"unknown AP method {method!r}")
    return APResult(precision, recall, min(max(ap, 0.0), 1.0))


@dataclass
class FScoreResult:
    precision: float
    recall: float
    f_score: float
    true_positives: int
    false_positives: int


def f_score(match: ClassMatch, num_gt: Optional[int] = None, conf_threshold: float = None) -> FScoreResult:
    """Dataset-level precision, recall and F over detections at or above the threshold"""
    if conf_threshold is None:
        conf_threshold = settings.FSCORE_CONF_THRESHOLD
    num_gt = match.num_gt if num_gt is None else num_gt
    kept = [d for d in match.detections if d.confidence >= conf_threshold]
    tp = sum(1 for d in kept if d.true_positive)
    fp = len(kept) - tp
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / num_gt if num_gt else 0.0
    f = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return FScoreResult(precision, recall, f, tp, fp)


def best_detection_iou(
    detections: Sequence[Detection],
    ground_truth: GroundTruth,
    image_ids: Sequence[str],
    class_id: int,
) -> List[ImageIoU]:
    """Per image with a ground truth of the class: IoU of its top-confidence detection, 0 when absent"""
    top: Dict[str, Detection] = {}
    for det in detections:
        if int(det.class_id) != int(class_id):
            continue
        current = top.get(det.image_id)
        if current is None or det.confidence > current.confidence:
            top[det.image_id] = det

    series = []
    for image_id in image_ids:
        truths = [a for a in ground_truth.get(image_id, ()) if int(a.class_id) == int(class_id)]
        if not truths:
            continue
        det = top.get(image_id)
        value = max(iou(det.box, a.box) for a in truths) if det is not None else 0.0
        series.append(ImageIoU(image_id=image_id, iou=value))
    return series


def mean_iou(per_image_best: Sequence[Union[ImageIoU, float]]) -> float:
    if len(per_image_best) == 0:
        raise EvaluationError("mean IoU of an empty series")
    values = [item.iou if isinstance(item, ImageIoU) else float(item) for item in per_image_best]
    return min(1.0, float(np.mean(values)))


def evaluate_detections(
    detections: Sequence[Detection],
    ground_truth: GroundTruth,
    image_ids: Sequence[str],
    classes: Sequence[int] = (RegionClass.IRIS, RegionClass.PERIOCULAR),
    iou_threshold: float = None,
    conf_threshold: float = None,
    ap_method: str = None,
) -> EvalReport:
    """EvalReport over the given images; detections on other images are ignored"""
    if not image_ids:
        raise EvaluationError("no images to evaluate")
    iou_threshold = settings.MATCH_IOU_THRESHOLD if iou_threshold is None else iou_threshold
    conf_threshold = settings.FSCORE_CONF_THRESHOLD if conf_threshold is None else conf_threshold
    ap_method = ap_method or settings.AP_METHOD

    wanted = set(image_ids)
    scoped = [d for d in detections if d.image_id in wanted]
    truth = {image_id: list(ground_truth.get(image_id, ())) for image_id in image_ids}
    class_ids = [int(c) for c in classes]
    match = match_detections(scoped, truth, iou_threshold, class_ids)

    metrics: Dict[str, ClassMetrics] = {}
    per_image: Dict[str, List[ImageIoU]] = {}
    for class_id in class_ids:
        name = CLASS_NAMES[RegionClass(class_id)]
        class_match = match[class_id]
        ap = pr_and_ap(class_match, method=ap_method)
        fs = f_score(class_match, conf_threshold=conf_threshold)
        series = best_detection_iou(scoped, truth, image_ids, class_id)
        if ap.no_ground_truth:
            logger.warning(f"Class {name} has no ground truth on the evaluated images; AP set to 0")
        metrics[name] = ClassMetrics(
            class_id=class_id,
            class_name=name,
            mean_iou=mean_iou(series) if series else 0.0,
            precision=fs.precision,
            recall=fs.recall,
            f_score=fs.f_score,
            average_precision=ap.average_precision,
            num_gt=class_match.num_gt,
            num_detections=len(class_match.detections),
            true_positives=fs.true_positives,
            false_positives=fs.false_positives,
            no_ground_truth=ap.no_ground_truth,
        )
        per_image[name] = series

    m_ap = sum(m.average_precision for m in metrics.values()) / len(metrics)
    report = EvalReport(
        classes=metrics,
        mean_average_precision=m_ap,
        per_image_iou=per_image,
        num_images=len(image_ids),
        num_detections=len(scoped),
        ap_method=ap_method,
        iou_threshold=iou_threshold,
        conf_threshold=conf_threshold,
    )
    summary = ", ".join(
        f"{name}: IoU={m.mean_iou:.4f} F={m.f_score:.4f} AP={m.average_precision:.4f}"
        for name, m in metrics.items()
    )
    logger.info(f"Evaluated {len(image_ids)} images: {summary}; mAP={m_ap:.4f}")
    return report
