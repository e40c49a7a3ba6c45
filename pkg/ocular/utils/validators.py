"""
Validators for annotation, detection and manifest fields
"""
import math
import re
from typing import Optional, Sequence, Tuple

VALID_CLASS_IDS = (0, 1)


def validate_class_id(token: str) -> Tuple[bool, Optional[str]]:
    """
    Validate a class id token
    Returns: (is_valid, error_message)
    """
    try:
        value = int(token)
    except ValueError:
        return False, f"non-numeric class_id {token!r}"

    if value not in VALID_CLASS_IDS:
        return False, f"class_id must be 0 (iris) or 1 (periocular), got {value}"

    return True, None


def validate_unit_values(tokens: Sequence[str], names: Sequence[str]) -> Tuple[bool, Optional[str]]:
    """
    Validate that every token is a finite number in [0, 1]
    Returns: (is_valid, error_message)
    """
    for name, token in zip(names, tokens):
        try:
            value = float(token)
        except ValueError:
            return False, f"non-numeric {name} {token!r}"
        if not math.isfinite(value):
            return False, f"{name} must be finite, got {token}"
        if value < 0.0 or value > 1.0:
            return False, f"{name} must lie in [0, 1], got {value}"

    return True, None


def validate_box_size(w: float, h: float) -> Tuple[bool, Optional[str]]:
    """
    Validate that a box has positive extent
    Returns: (is_valid, error_message)
    """
    if w <= 0 or h <= 0:
        return False, f"box width and height must be positive, got w={w} h={h}"
    return True, None


def validate_image_id(image_id: str) -> Tuple[bool, Optional[str]]:
    """
    Validate an image identifier
    Returns: (is_valid, error_message)
    """
    if not image_id:
        return False, "image_id cannot be empty"

    if re.search(r"\s", image_id):
        return False, f"image_id cannot contain whitespace: {image_id!r}"

    return True, None
