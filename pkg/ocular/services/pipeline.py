"""
Experiment pipeline: detection over the test split, file-level evaluation,
and the simultaneous-vs-single comparison with paired Wilcoxon tests
"""
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple
import csv
import logging
import os
import time
import numpy as np

from ..config import settings
from ..exceptions import EvaluationError, FormatError
from ..models.network import Model
from ..schemas.box import CLASS_NAMES, Detection, RegionClass
from ..schemas.dataset import DatasetManifest, Split
from ..schemas.report import ClassComparison, CompareReport, EvalReport
from .annotations import read_detections
from .dataset import load_ground_truth, load_image_tensor
from .detect_head import decode, nms
from .metrics import evaluate_detections
from .stats import wilcoxon_signed_rank

logger = logging.getLogger(__name__)

ALL_CLASSES = (int(RegionClass.IRIS), int(RegionClass.PERIOCULAR))
DETECT_BATCH = 8
THROUGHPUT_SUFFIX = ".throughput.csv"


@dataclass
class Throughput:
    images: int
    seconds: float

    @property
    def ms_per_image(self) -> float:
        return 1000.0 * self.seconds / self.images if self.images else 0.0


def detect_with_throughput(
    model: Model,
    manifest: DatasetManifest,
    class_ids: Optional[Sequence[int]] = None,
    conf_threshold: float = None,
    nms_threshold: float = None,
    split: Split = Split.TEST,
) -> Tuple[List[Detection], Throughput]:
    """
    Decoded, NMS-filtered detections for every image of a split, with the
    wall-clock cost of the pass. `class_ids` maps model class index ->
    dataset class id.
    """
    config = model.config
    if class_ids is None:
        class_ids = ALL_CLASSES[: config.num_classes]
    if len(class_ids) != config.num_classes:
        raise EvaluationError(f"{len(class_ids)} class ids given for a {config.num_classes}-class model")
    conf_threshold = settings.EVAL_CONF_THRESHOLD if conf_threshold is None else conf_threshold

    entries = manifest.split_entries(split)
    if not entries:
        raise EvaluationError(f"manifest has no images in the {split.value} split")

    detections: List[Detection] = []
    started = time.perf_counter()
    for start in range(0, len(entries), DETECT_BATCH):
        chunk = entries[start:start + DETECT_BATCH]
        batch = np.stack([
            load_image_tensor(e.image_path, config.input_channels, config.input_size) for e in chunk
        ])
        output = model.forward(batch)
        for k, entry in enumerate(chunk):
            found = decode(output[k:k + 1], config, conf_threshold, image_id=entry.image_id)
            found = [
                d.model_copy(update={"class_id": RegionClass(class_ids[int(d.class_id)])}) for d in found
            ]
            detections.extend(nms(found, nms_threshold))
    elapsed = time.perf_counter() - started

    throughput = Throughput(images=len(entries), seconds=elapsed)
    logger.info(
        f"Detected {len(detections)} boxes on {len(entries)} images in {elapsed:.2f}s "
        f"({throughput.ms_per_image:.1f} ms/image, {len(entries) / max(elapsed, 1e-9):.1f} images/s)"
    )
    return detections, throughput


def run_detection(
    model: Model,
    manifest: DatasetManifest,
    class_ids: Optional[Sequence[int]] = None,
    conf_threshold: float = None,
    nms_threshold: float = None,
    split: Split = Split.TEST,
) -> List[Detection]:
    return detect_with_throughput(model, manifest, class_ids, conf_threshold, nms_threshold, split)[0]


def check_image_ids(detections: Sequence[Detection], manifest: DatasetManifest) -> List[Detection]:
    """Rejects unknown image ids; drops, with a warning, those outside the test split"""
    known = {e.image_id for e in manifest.entries}
    unknown = sorted({d.image_id for d in detections} - known)
    if unknown:
        shown = ", ".join(unknown[:10]) + (" ..." if len(unknown) > 10 else "")
        raise EvaluationError(f"detections reference {len(unknown)} unknown image_id(s): {shown}")
    test_ids = set(manifest.image_ids(Split.TEST))
    kept = [d for d in detections if d.image_id in test_ids]
    if len(kept) != len(detections):
        logger.warning(f"Ignoring {len(detections) - len(kept)} detections on images outside the test split")
    return kept


def evaluate(
    detection_files: Sequence[str],
    manifest: DatasetManifest,
    classes: Sequence[int] = ALL_CLASSES,
    iou_threshold: float = None,
    conf_threshold: float = None,
    ap_method: str = None,
) -> EvalReport:
    """EvalReport over the test split; several files are merged into one run"""
    image_ids = manifest.image_ids(Split.TEST)
    if not image_ids:
        raise EvaluationError("manifest has no images in the test split")

    detections: List[Detection] = []
    for path in detection_files:
        detections.extend(read_detections(path))
    detections = check_image_ids(detections, manifest)
    ground_truth = load_ground_truth(manifest, Split.TEST)
    return evaluate_detections(
        detections, ground_truth, image_ids, classes, iou_threshold, conf_threshold, ap_method
    )


def check_single_class(path: str, class_id: int) -> None:
    others = sorted({int(d.class_id) for d in read_detections(path)} - {int(class_id)})
    if others:
        raise EvaluationError(
            f"{path}: single-detector file for class {class_id} also contains class(es) {others}"
        )


def compare(
    multi_file: str,
    single_iris_file: str,
    single_peri_file: str,
    manifest: DatasetManifest,
    alpha: float = None,
    ap_method: str = None,
) -> CompareReport:
    """Multi (one 2-class detector) against Single (two 1-class detectors)"""
    alpha = settings.SIGNIFICANCE_LEVEL if alpha is None else alpha
    check_single_class(single_iris_file, RegionClass.IRIS)
    check_single_class(single_peri_file, RegionClass.PERIOCULAR)

    multi = evaluate([multi_file], manifest, ap_method=ap_method)
    single = evaluate([single_iris_file, single_peri_file], manifest, ap_method=ap_method)

    comparisons = []
    for class_id in ALL_CLASSES:
        name = CLASS_NAMES[RegionClass(class_id)]
        multi_iou = multi.classes[name].mean_iou
        single_iou = single.classes[name].mean_iou
        if multi_iou > single_iou:
            best = "multi"
        elif single_iou > multi_iou:
            best = "single"
        else:
            best = "tie"
        # DegenerateTestError propagates when both series are identical
        result = wilcoxon_signed_rank(multi.iou_series(name), single.iou_series(name), alpha=alpha)
        if result.significant:
            verdict = f"{best} better (p={result.p_value:.4g} < {alpha})"
        else:
            verdict = f"no statistical difference (p={result.p_value:.4g} >= {alpha})"
        logger.info(f"{name}: multi IoU {multi_iou:.4f} vs single {single_iou:.4f}: {verdict}")
        comparisons.append(ClassComparison(
            class_name=name,
            multi_mean_iou=multi_iou,
            single_mean_iou=single_iou,
            best=best,
            wilcoxon=result,
            verdict=verdict,
        ))
    return CompareReport(multi=multi, single=single, comparisons=comparisons)


def format_eval_report(report: EvalReport, title: str = "evaluation") -> List[str]:
    lines = [
        f"[{title}]",
        f"num_images = {report.num_images}",
        f"num_detections = {report.num_detections}",
        f"ap_method = {report.ap_method}",
        f"iou_threshold = {report.iou_threshold}",
        f"conf_threshold = {report.conf_threshold}",
        f"mAP = {report.mean_average_precision:.6f}",
        "",
        f"{'class':<12}{'mean_iou':>10}{'precision':>11}{'recall':>10}{'f_score':>10}{'ap':>10}"
        f"{'gt':>6}{'dets':>7}{'tp':>6}{'fp':>7}",
    ]
    for name, m in report.classes.items():
        flag = "  (no ground truth)" if m.no_ground_truth else ""
        lines.append(
            f"{name:<12}{m.mean_iou:>10.6f}{m.precision:>11.6f}{m.recall:>10.6f}{m.f_score:>10.6f}"
            f"{m.average_precision:>10.6f}{m.num_gt:>6}{m.num_detections:>7}{m.true_positives:>6}"
            f"{m.false_positives:>7}{flag}"
        )
    return lines


def write_eval_report(path: str, report: EvalReport) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("\n".join(format_eval_report(report)) + "\n")
    write_eval_csv(path + ".csv", {"eval": report})
    logger.info(f"Wrote report {path}")


def _metric_rows(condition: str, report: EvalReport) -> List[List]:
    return [
        [condition, name, m.mean_iou, m.precision, m.recall, m.f_score, m.average_precision,
         report.mean_average_precision, m.num_gt, m.num_detections, m.true_positives, m.false_positives]
        for name, m in report.classes.items()
    ]


def write_eval_csv(path: str, reports: Dict[str, EvalReport]) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow([
            "condition", "class", "mean_iou", "precision", "recall", "f_score", "average_precision",
            "mAP", "num_gt", "num_detections", "true_positives", "false_positives",
        ])
        for condition, report in reports.items():
            writer.writerows(_metric_rows(condition, report))


def write_compare_report(path: str, report: CompareReport) -> None:
    lines = format_eval_report(report.multi, "multi") + [""] + format_eval_report(report.single, "single")
    lines += ["", "[comparison]"]
    for c in report.comparisons:
        w = c.wilcoxon
        lines += [
            f"{c.class_name}.multi_mean_iou = {c.multi_mean_iou:.6f}",
            f"{c.class_name}.single_mean_iou = {c.single_mean_iou:.6f}",
            f"{c.class_name}.best = {c.best}",
        ]
        if w is not None:
            lines += [
                f"{c.class_name}.wilcoxon.n = {w.n_effective}",
                f"{c.class_name}.wilcoxon.W = {w.statistic}",
                f"{c.class_name}.wilcoxon.p_value = {w.p_value:.6g}",
                f"{c.class_name}.wilcoxon.method = {w.method}",
                f"{c.class_name}.wilcoxon.significant = {str(w.significant).lower()}",
            ]
        lines.append(f"{c.class_name}.verdict = {c.verdict}")
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("\n".join(lines) + "\n")
    write_eval_csv(path + ".csv", {"multi": report.multi, "single": report.single})
    logger.info(f"Wrote comparison report {path}")


def write_throughput(path: str, throughput: Throughput) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["images", "seconds", "ms_per_image"])
        writer.writerow([throughput.images, repr(throughput.seconds), repr(throughput.ms_per_image)])


def read_throughput(path: str) -> Optional[Throughput]:
    """None when the file does not exist"""
    if not os.path.exists(path):
        return None
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    try:
        row = rows[0]
        return Throughput(images=int(row["images"]), seconds=float(row["seconds"]))
    except (IndexError, KeyError, TypeError, ValueError) as e:
        raise FormatError(f"malformed throughput file: {e}", path=path) from e


def write_compare_throughput(
    multi_file: str, single_iris_file: str, single_peri_file: str, report_path: str
) -> bool:
    """
    Per-condition detection cost from the throughput files `detect` leaves
    next to each detection file. The single condition is the sum of its two
    passes. Written beside the report, never into it.
    """
    multi = read_throughput(multi_file + THROUGHPUT_SUFFIX)
    singles = [read_throughput(p + THROUGHPUT_SUFFIX) for p in (single_iris_file, single_peri_file)]
    if multi is None or any(s is None for s in singles):
        logger.info("Throughput files missing for some detection files; no timing table written")
        return False

    single_ms = sum(s.ms_per_image for s in singles)
    with open(report_path + THROUGHPUT_SUFFIX, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["condition", "passes", "ms_per_image"])
        writer.writerow(["multi", 1, repr(multi.ms_per_image)])
        writer.writerow(["single", len(singles), repr(single_ms)])
    logger.info(f"Detection cost: multi {multi.ms_per_image:.1f} ms/image, single {single_ms:.1f} ms/image")
    return True
