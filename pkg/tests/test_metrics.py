import numpy as np
import pytest

from ocular.exceptions import EvaluationError
from ocular.schemas.box import Annotation, Box, CLASS_NAMES, Detection, RegionClass
from ocular.services.annotations import write_detections
from ocular.services.metrics import (
    ClassMatch,
    MatchedDetection,
    evaluate_detections,
    f_score,
    iou,
    match_detections,
    mean_iou,
    pr_and_ap,
)
from ocular.services.pipeline import evaluate

IRIS_GT = (0.5, 0.5, 0.2, 0.2)
PERI_GT = (0.5, 0.5, 0.6, 0.4)


def det(image_id, class_id, confidence, cx, cy, w, h):
    return Detection(
        box=Box(cx=cx, cy=cy, w=w, h=h),
        class_id=RegionClass(class_id),
        confidence=confidence,
        image_id=image_id,
    )


def class_match(flags, num_gt):
    """ClassMatch with the given TP flags in descending confidence"""
    detections = [
        MatchedDetection(position=k, image_id="x", confidence=1.0 - k * 1e-3,
                         true_positive=bool(flag), gt_index=None, iou=0.0)
        for k, flag in enumerate(flags)
    ]
    return ClassMatch(class_id=0, num_gt=num_gt, detections=detections)


def reference_ap(flags, num_gt):
    """Sum over each TP of 1/num_gt times the best precision at that rank or later"""
    tp = np.cumsum(flags)
    precision = tp / np.arange(1, len(flags) + 1)
    total = 0.0
    for k, flag in enumerate(flags):
        if flag:
            total += precision[k:].max() / num_gt
    return total


def corner_iou(a, b):
    ax0, ay0, ax1, ay1 = a.corners()
    bx0, by0, bx1, by1 = b.corners()
    w = max(0.0, min(ax1, bx1) - max(ax0, bx0))
    h = max(0.0, min(ay1, by1) - max(ay0, by0))
    inter = w * h
    return inter / ((ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter)


def reference_match(detections, ground_truth, threshold):
    """TP flags, in descending confidence, for one class on one image"""
    taken = set()
    flags = []
    for d in sorted(detections, key=lambda d: -d.confidence):
        overlaps = [
            (corner_iou(d.box, g.box), k) for k, g in enumerate(ground_truth) if k not in taken
        ]
        best = max(overlaps, default=(0.0, None))
        if best[1] is not None and best[0] > threshold:
            taken.add(best[1])
            flags.append(True)
        else:
            flags.append(False)
    return flags


def random_box(rng):
    return tuple(rng.uniform(0.25, 0.75, 2)) + tuple(rng.uniform(0.05, 0.4, 2))


def jitter(rng, box):
    cx, cy = np.clip(np.array([box.cx, box.cy]) + rng.normal(0.0, 0.03, 2), 0.25, 0.75)
    w, h = np.clip(np.array([box.w, box.h]) * np.exp(rng.normal(0.0, 0.15, 2)), 0.05, 0.5)
    return float(cx), float(cy), float(w), float(h)


def random_instance(rng):
    """At most 20 boxes over 1-3 images; most detections jitter a ground truth"""
    image_ids = [f"img{k}" for k in range(int(rng.integers(1, 4)))]
    truth = {image_id: [] for image_id in image_ids}
    placed = []
    for _ in range(int(rng.integers(0, 9))):
        image_id = image_ids[int(rng.integers(len(image_ids)))]
        cx, cy, w, h = random_box(rng)
        ann = Annotation(class_id=RegionClass(int(rng.integers(2))), box=Box(cx=cx, cy=cy, w=w, h=h))
        truth[image_id].append(ann)
        placed.append((image_id, ann))

    count = int(rng.integers(0, 21 - len(placed)))
    detections = []
    for confidence in (rng.permutation(999)[:count] + 1) / 1000:
        if placed and rng.random() < 0.7:
            image_id, ann = placed[int(rng.integers(len(placed)))]
            class_id = int(ann.class_id) if rng.random() < 0.85 else 1 - int(ann.class_id)
            box = jitter(rng, ann.box)
        else:
            image_id = image_ids[int(rng.integers(len(image_ids)))]
            class_id = int(rng.integers(2))
            box = random_box(rng)
        detections.append(det(image_id, class_id, float(confidence), *box))
    return truth, image_ids, detections


def brute_force_class(truth, detections, class_id, threshold=0.5, conf_threshold=0.25):
    """(TP flags in descending confidence, AP, F-score) for one class across all images"""
    num_gt = sum(1 for anns in truth.values() for a in anns if int(a.class_id) == class_id)
    ranked = sorted((d for d in detections if int(d.class_id) == class_id), key=lambda d: -d.confidence)
    taken = set()
    flags = []
    for d in ranked:
        candidates = [
            (corner_iou(d.box, g.box), (d.image_id, k))
            for k, g in enumerate(truth[d.image_id])
            if int(g.class_id) == class_id and (d.image_id, k) not in taken
        ]
        overlap, key = max(candidates, default=(0.0, None))
        hit = key is not None and overlap > threshold
        if hit:
            taken.add(key)
        flags.append(hit)

    ap = reference_ap(flags, num_gt) if num_gt and flags else 0.0
    kept = [flag for d, flag in zip(ranked, flags) if d.confidence >= conf_threshold]
    tp = sum(kept)
    f = 2 * tp / (len(kept) + num_gt) if tp else 0.0
    return flags, ap, f


@pytest.fixture
def five_image_run(make_test_manifest, iris_factory, periocular_factory, tmp_path):
    truth = {
        f"img{k}": [iris_factory(*IRIS_GT), periocular_factory(*PERI_GT)] for k in range(1, 6)
    }
    manifest, _ = make_test_manifest(truth)
    detections = [
        det("img1", 0, 0.9, *IRIS_GT),
        det("img2", 0, 0.8, 0.55, 0.5, 0.2, 0.2),   # IoU 0.6
        det("img3", 0, 0.7, 0.65, 0.5, 0.2, 0.2),   # IoU 1/7
        det("img5", 0, 0.6, *IRIS_GT),
    ]
    detections += [det(f"img{k}", 1, 1.0 - 0.05 * k, *PERI_GT) for k in range(1, 6)]
    path = str(tmp_path / "dets.txt")
    write_detections(path, detections)
    return manifest, path


class TestIoU:
    def test_identical(self):
        assert iou((0.5, 0.5, 0.2, 0.2), (0.5, 0.5, 0.2, 0.2)) == 1.0

    def test_identical_random_boxes_are_exactly_one(self, rng):
        for _ in range(500):
            box = tuple(rng.uniform(0.0, 1.0, 2)) + tuple(rng.uniform(1e-3, 1.0, 2))
            assert iou(box, box) == 1.0

    def test_contained_box(self):
        assert iou((0.5, 0.5, 0.4, 0.4), (0.5, 0.5, 0.2, 0.2)) == pytest.approx(0.25)

    def test_disjoint(self):
        assert iou((0.2, 0.2, 0.1, 0.1), (0.8, 0.8, 0.1, 0.1)) == 0.0

    def test_touching_edges(self):
        assert iou((0.25, 0.5, 0.5, 0.5), (0.75, 0.5, 0.5, 0.5)) == 0.0

    def test_overlapping_squares(self):
        assert iou((1, 1, 2, 2), (2, 2, 2, 2)) == pytest.approx(1 / 7)

    def test_symmetric_and_bounded(self, rng):
        for _ in range(200):
            a = tuple(rng.uniform(0.05, 1.0, 4))
            b = tuple(rng.uniform(0.05, 1.0, 4))
            assert iou(a, b) == pytest.approx(iou(b, a))
            assert 0.0 <= iou(a, b) <= 1.0


class TestMatching:
    def test_single_hit(self, iris_factory):
        gt = {"a": [iris_factory(0.5, 0.5, 0.2, 0.2)]}
        match = match_detections([det("a", 0, 0.9, 0.5, 0.5, 0.2, 0.19)], gt)
        assert match[0].tp_flags == [True]

    def test_second_detection_is_false_positive(self, iris_factory):
        gt = {"a": [iris_factory(0.5, 0.5, 0.2, 0.2)]}
        dets = [det("a", 0, 0.8, 0.5, 0.5, 0.2, 0.19), det("a", 0, 0.9, 0.5, 0.5, 0.19, 0.2)]
        match = match_detections(dets, gt)
        assert match[0].tp_flags == [True, False]
        assert match[0].detections[0].position == 1

    def test_threshold_is_strict(self, iris_factory):
        gt = {"a": [iris_factory(0.5, 0.5, 0.5, 0.5)]}
        # IoU exactly 0.5: half-width box sharing the left edge
        match = match_detections([det("a", 0, 0.9, 0.375, 0.5, 0.25, 0.5)], gt, iou_threshold=0.5)
        assert match[0].detections[0].iou == 0.5
        assert match[0].tp_flags == [False]

    def test_other_class_never_matches(self, periocular_factory):
        gt = {"a": [periocular_factory(0.5, 0.5, 0.2, 0.2)]}
        match = match_detections([det("a", 0, 0.9, 0.5, 0.5, 0.2, 0.2)], gt)
        assert match[0].tp_flags == [False]
        assert match[1].num_gt == 1

    def test_unknown_class_rejected(self, iris_factory):
        with pytest.raises(EvaluationError):
            match_detections([det("a", 1, 0.9, 0.5, 0.5, 0.2, 0.2)], {"a": []}, classes=(0,))

    @pytest.mark.parametrize("seed", range(50))
    def test_matches_reference(self, seed, iris_factory):
        rng = np.random.default_rng(900 + seed)
        gt = [
            iris_factory(*rng.uniform(0.3, 0.7, 2), *rng.uniform(0.1, 0.3, 2))
            for _ in range(int(rng.integers(1, 6)))
        ]
        confidences = rng.permutation(20)[: int(rng.integers(1, 15))] / 20 + 0.01
        dets = [
            det("a", 0, float(c), *rng.uniform(0.3, 0.7, 2), *rng.uniform(0.1, 0.3, 2))
            for c in confidences
        ]
        match = match_detections(dets, {"a": gt}, iou_threshold=0.3)
        assert match[0].tp_flags == reference_match(dets, gt, 0.3)


class TestAveragePrecision:
    def test_perfect(self):
        assert pr_and_ap(class_match([1, 1, 1], 3)).average_precision == 1.0

    def test_hand_enumerated_envelope(self):
        result = pr_and_ap(class_match([1, 0, 1], 2))
        assert result.precision == pytest.approx([1.0, 0.5, 2 / 3])
        assert result.recall == pytest.approx([0.5, 0.5, 1.0])
        assert result.average_precision == pytest.approx(5 / 6, abs=1e-12)

    def test_no_detections(self):
        assert pr_and_ap(class_match([], 3)).average_precision == 0.0

    def test_no_ground_truth_flagged(self):
        result = pr_and_ap(class_match([0, 0], 0))
        assert result.average_precision == 0.0
        assert result.no_ground_truth

    def test_eleven_point(self):
        result = pr_and_ap(class_match([1, 0, 1], 2), method="eleven_point")
        # precision 1 up to recall 0.5, then 2/3 up to recall 1
        assert result.average_precision == pytest.approx((6 + 5 * 2 / 3) / 11)

    def test_unknown_method(self):
        with pytest.raises(EvaluationError):
            pr_and_ap(class_match([1], 1), method="coco")

    def test_random_instances_match_reference(self, rng):
        for _ in range(1000):
            flags = (rng.random(int(rng.integers(1, 25))) < 0.5).astype(int)
            num_gt = int(flags.sum()) + int(rng.integers(0, 4))
            if num_gt == 0:
                continue
            ap = pr_and_ap(class_match(flags, num_gt)).average_precision
            assert ap == pytest.approx(reference_ap(flags, num_gt), abs=1e-9)
            assert 0.0 <= ap <= 1.0


class TestFScore:
    def test_perfect(self):
        assert f_score(class_match([1, 1], 2)).f_score == 1.0

    def test_half_precision_full_recall(self):
        assert f_score(class_match([1, 0], 1)).f_score == pytest.approx(2 / 3)

    def test_no_true_positives(self):
        result = f_score(class_match([0, 0], 2))
        assert (result.precision, result.recall, result.f_score) == (0.0, 0.0, 0.0)

    def test_threshold_filters_low_confidence(self):
        match = class_match([1, 0], 1)
        match.detections[1].confidence = 0.1
        assert f_score(match, conf_threshold=0.25).f_score == 1.0


class TestMeanIoU:
    def test_missing_detection_counts_zero(self):
        assert mean_iou([0.8, 0.0]) == pytest.approx(0.4)

    def test_empty_series(self):
        with pytest.raises(EvaluationError):
            mean_iou([])


class TestEvaluate:
    def test_identical_to_ground_truth(self, make_test_manifest, iris_factory, periocular_factory, tmp_path):
        truth = {
            "a": [iris_factory(0.4, 0.5, 0.2, 0.2), periocular_factory(0.45, 0.5, 0.6, 0.4)],
            "b": [iris_factory(0.6, 0.4, 0.1, 0.1), periocular_factory(0.6, 0.45, 0.5, 0.5)],
        }
        manifest, _ = make_test_manifest(truth)
        path = str(tmp_path / "dets.txt")
        write_detections(path, [
            det(image_id, int(a.class_id), 0.9, *a.box.as_tuple())
            for image_id, anns in truth.items() for a in anns
        ])
        report = evaluate([path], manifest)
        for metrics in report.classes.values():
            assert metrics.mean_iou == pytest.approx(1.0)
            assert metrics.f_score == 1.0
            assert metrics.average_precision == 1.0
        assert report.mean_average_precision == 1.0

    def test_empty_detection_file(self, make_test_manifest, iris_factory, tmp_path):
        manifest, _ = make_test_manifest({"a": [iris_factory(0.5, 0.5, 0.2, 0.2)]})
        path = tmp_path / "empty.txt"
        path.write_text("")
        report = evaluate([str(path)], manifest)
        iris_metrics = report.classes["iris"]
        assert (iris_metrics.mean_iou, iris_metrics.f_score, iris_metrics.average_precision) == (0.0, 0.0, 0.0)
        assert report.classes["periocular"].no_ground_truth
        assert report.num_detections == 0

    def test_unknown_image_ids_listed(self, make_test_manifest, iris_factory, tmp_path):
        manifest, _ = make_test_manifest({"a": [iris_factory(0.5, 0.5, 0.2, 0.2)]})
        path = str(tmp_path / "dets.txt")
        write_detections(path, [det("ghost1", 0, 0.9, *IRIS_GT), det("ghost2", 0, 0.8, *IRIS_GT)])
        with pytest.raises(EvaluationError) as exc:
            evaluate([path], manifest)
        assert "ghost1" in str(exc.value) and "ghost2" in str(exc.value)

    def test_five_image_fixture(self, five_image_run):
        manifest, path = five_image_run
        report = evaluate([path], manifest)
        iris_metrics = report.classes["iris"]
        assert iris_metrics.average_precision == pytest.approx(0.55)
        assert iris_metrics.precision == pytest.approx(0.75)
        assert iris_metrics.recall == pytest.approx(0.6)
        assert iris_metrics.f_score == pytest.approx(2 / 3)
        assert iris_metrics.mean_iou == pytest.approx(19.2 / 35)
        assert (iris_metrics.true_positives, iris_metrics.false_positives) == (3, 1)
        assert report.iou_series("iris") == pytest.approx([1.0, 0.6, 1 / 7, 0.0, 1.0])

        peri = report.classes["periocular"]
        assert (peri.average_precision, peri.f_score) == (1.0, 1.0)
        assert peri.mean_iou == pytest.approx(1.0)
        assert report.mean_average_precision == pytest.approx(0.775)

    def test_five_image_fixture_eleven_point(self, five_image_run):
        manifest, path = five_image_run
        report = evaluate([path], manifest, ap_method="eleven_point")
        assert report.classes["iris"].average_precision == pytest.approx(6.5 / 11)

    def test_files_merge_into_one_run(self, five_image_run, tmp_path):
        manifest, path = five_image_run
        lines = open(path).read().splitlines()
        first, second = tmp_path / "iris.txt", tmp_path / "peri.txt"
        first.write_text("\n".join(l for l in lines if l.split()[1] == "0") + "\n")
        second.write_text("\n".join(l for l in lines if l.split()[1] == "1") + "\n")
        merged = evaluate([str(first), str(second)], manifest)
        assert merged.classes == evaluate([path], manifest).classes

    def test_detections_outside_scope_ignored(self, iris_factory):
        truth = {"a": [iris_factory(*IRIS_GT)], "b": [iris_factory(*IRIS_GT)]}
        dets = [det("a", 0, 0.9, *IRIS_GT), det("b", 0, 0.9, 0.1, 0.1, 0.1, 0.1)]
        report = evaluate_detections(dets, truth, ["a"], classes=(0,))
        assert report.classes["iris"].average_precision == 1.0
        assert report.num_detections == 1

    def test_random_instances_match_brute_force(self, rng):
        for _ in range(1000):
            truth, image_ids, dets = random_instance(rng)
            report = evaluate_detections(
                dets, truth, image_ids, iou_threshold=0.5, conf_threshold=0.25, ap_method="all_point"
            )
            match = match_detections(dets, truth, iou_threshold=0.5)
            aps = []
            for class_id in (0, 1):
                flags, ap, f = brute_force_class(truth, dets, class_id)
                assert match[class_id].tp_flags == flags
                metrics = report.classes[CLASS_NAMES[RegionClass(class_id)]]
                assert metrics.average_precision == pytest.approx(ap, abs=1e-9)
                assert metrics.f_score == pytest.approx(f, abs=1e-9)
                aps.append(ap)
            assert report.mean_average_precision == pytest.approx(sum(aps) / 2, abs=1e-9)
