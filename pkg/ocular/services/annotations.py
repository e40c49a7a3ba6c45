"""
Text codecs for coarse annotations and detection files

    annotation line:  class_id cx cy w h
    detection line:   image_id class_id confidence cx cy w h

Whitespace separated, one object per line, LF endings, normalized floats.
"""
from typing import Iterable, List, Sequence
import logging
import os

from pydantic import ValidationError

from ..exceptions import FormatError
from ..schemas.box import Annotation, Box, Detection, RegionClass
from ..utils.validators import (
    validate_box_size,
    validate_class_id,
    validate_image_id,
    validate_unit_values,
)

logger = logging.getLogger(__name__)

ANNOTATION_DECIMALS = 6
DETECTION_DECIMALS = 9
_BOX_FIELDS = ("cx", "cy", "w", "h")


def _read_lines(path: str) -> List[str]:
    with open(path, "r", encoding="utf-8") as f:
        return f.read().split("\n")


def _check(result, path: str, line: int) -> None:
    is_valid, error = result
    if not is_valid:
        raise FormatError(error, path=path, line=line)


def _parse_box(tokens: Sequence[str], path: str, line: int) -> Box:
    _check(validate_unit_values(tokens, _BOX_FIELDS), path, line)
    cx, cy, w, h = (float(t) for t in tokens)
    _check(validate_box_size(w, h), path, line)
    return Box(cx=cx, cy=cy, w=w, h=h)


def parse_annotations(lines: Iterable[str], path: str = "<annotations>") -> List[Annotation]:
    annotations = []
    for number, raw in enumerate(lines, start=1):
        tokens = raw.split()
        if not tokens:
            continue
        if len(tokens) != 5:
            raise FormatError(f"expected 5 fields 'class_id cx cy w h', got {len(tokens)}", path=path, line=number)
        _check(validate_class_id(tokens[0]), path, number)
        box = _parse_box(tokens[1:], path, number)
        try:
            annotations.append(Annotation(class_id=RegionClass(int(tokens[0])), box=box))
        except ValidationError as e:
            raise FormatError(f"invalid annotation: {e.errors()[0]['msg']}", path=path, line=number) from e
    return annotations


def read_annotations(path: str) -> List[Annotation]:
    return parse_annotations(_read_lines(path), path)


def format_annotation(annotation: Annotation) -> str:
    d = ANNOTATION_DECIMALS
    b = annotation.box
    return f"{int(annotation.class_id)} {b.cx:.{d}f} {b.cy:.{d}f} {b.w:.{d}f} {b.h:.{d}f}"


def write_annotations(path: str, annotations: Sequence[Annotation]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for annotation in annotations:
            f.write(format_annotation(annotation) + "\n")


def parse_detections(lines: Iterable[str], path: str = "<detections>") -> List[Detection]:
    detections = []
    for number, raw in enumerate(lines, start=1):
        tokens = raw.split()
        if not tokens:
            continue
        if len(tokens) != 7:
            raise FormatError(
                f"expected 7 fields 'image_id class_id confidence cx cy w h', got {len(tokens)}",
                path=path, line=number,
            )
        _check(validate_image_id(tokens[0]), path, number)
        _check(validate_class_id(tokens[1]), path, number)
        _check(validate_unit_values(tokens[2:3], ("confidence",)), path, number)
        box = _parse_box(tokens[3:], path, number)
        detections.append(Detection(
            box=box,
            class_id=RegionClass(int(tokens[1])),
            confidence=float(tokens[2]),
            image_id=tokens[0],
        ))
    return detections


def read_detections(path: str) -> List[Detection]:
    detections = parse_detections(_read_lines(path), path)
    logger.debug(f"Read {len(detections)} detections from {path}")
    return detections


def format_detection(detection: Detection) -> str:
    d = DETECTION_DECIMALS
    b = detection.box
    return (
        f"{detection.image_id} {int(detection.class_id)} {detection.confidence:.{d}f} "
        f"{b.cx:.{d}f} {b.cy:.{d}f} {b.w:.{d}f} {b.h:.{d}f}"
    )


def write_detections(path: str, detections: Sequence[Detection]) -> None:
    for detection in detections:
        is_valid, error = validate_image_id(detection.image_id)
        if not is_valid:
            raise FormatError(error, path=path)
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for detection in detections:
            f.write(format_detection(detection) + "\n")
    logger.debug(f"Wrote {len(detections)} detections to {path}")
