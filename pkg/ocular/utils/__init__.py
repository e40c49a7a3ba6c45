# Utils module
from .validators import (
    validate_class_id,
    validate_unit_values,
    validate_box_size,
    validate_image_id
)

__all__ = [
    "validate_class_id",
    "validate_unit_values",
    "validate_box_size",
    "validate_image_id"
]
