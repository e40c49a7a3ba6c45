from .network import (
    Model,
    ConvLayer,
    LAYER_TABLE,
    build_yolov2,
    forward,
    infer_shapes,
    layer_specs
)
from .weights import save_weights, load_weights, load_model, read_weights_header

__all__ = [
    "Model",
    "ConvLayer",
    "LAYER_TABLE",
    "build_yolov2",
    "forward",
    "infer_shapes",
    "layer_specs",
    "save_weights",
    "load_weights",
    "load_model",
    "read_weights_header"
]
