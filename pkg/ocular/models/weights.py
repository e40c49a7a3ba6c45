"""
Portable weights file

    8 bytes   magic "OCLRWTS1"
    4 x int32 num_classes, num_anchors, input_channels, input_size (little-endian)
    per conv layer, in index order, little-endian float32:
        bias            (batch-normed layers: the batch-norm beta)
        gamma, running_mean, running_var   (batch-normed layers only)
        weights         (out, in, kh, kw) row-major
"""
from typing import List, Optional, Tuple
import logging
import os
import struct
import numpy as np
from pydantic import ValidationError

from ..exceptions import FormatError
from ..schemas.network import DEFAULT_ANCHORS, NetworkConfig, Profile
from .network import HEAD_INDEX, Model, build_yolov2, layer_specs

logger = logging.getLogger(__name__)

MAGIC = b"OCLRWTS1"
HEADER = struct.Struct("<4i")
HEADER_SIZE = len(MAGIC) + HEADER.size
_F32 = np.dtype("<f4")


def _layer_arrays(model: Model, index: int) -> List[Tuple[str, np.ndarray]]:
    layer = model.conv_layers[index]
    if layer.bn is None:
        arrays = [("bias", layer.conv.bias)]
    else:
        arrays = [
            ("bias", layer.bn.beta),
            ("gamma", layer.bn.gamma),
            ("running_mean", layer.bn.running_mean),
            ("running_var", layer.bn.running_var),
        ]
    arrays.append(("weights", layer.conv.weights))
    return arrays


def payload_size(model: Model) -> int:
    total = 0
    for index in model.conv_indices():
        total += sum(a.size for _, a in _layer_arrays(model, index)) * _F32.itemsize
    return total


def save_weights(model: Model, path: str) -> None:
    config = model.config
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(HEADER.pack(config.num_classes, config.num_anchors, config.input_channels, config.input_size))
        for index in model.conv_indices():
            for _, array in _layer_arrays(model, index):
                f.write(np.ascontiguousarray(array, dtype=_F32).tobytes())
    logger.info(f"Saved weights to {path} ({HEADER_SIZE + payload_size(model)} bytes)")


def read_weights_header(path: str) -> Tuple[int, int, int, int]:
    """(num_classes, num_anchors, input_channels, input_size)"""
    with open(path, "rb") as f:
        head = f.read(HEADER_SIZE)
    if len(head) < len(MAGIC) or head[: len(MAGIC)] != MAGIC:
        raise FormatError("not a weights file", path=path)
    if len(head) < HEADER_SIZE:
        raise FormatError(
            f"truncated header: expected {HEADER_SIZE} bytes, got {len(head)}", path=path
        )
    return HEADER.unpack(head[len(MAGIC):])


def load_weights(model: Model, path: str) -> Model:
    """Fills the model's parameters in place; bit-exact with save_weights"""
    num_classes, num_anchors, channels, size = read_weights_header(path)
    config = model.config
    found = (num_classes, num_anchors, channels, size)
    expected = (config.num_classes, config.num_anchors, config.input_channels, config.input_size)
    if found != expected:
        raise FormatError(
            f"config mismatch: file has (C, A, channels, size)={found}, model has {expected}",
            path=path,
        )

    with open(path, "rb") as f:
        f.seek(HEADER_SIZE)
        payload = f.read()

    total = payload_size(model)
    offset = 0
    for index in model.conv_indices():
        for name, array in _layer_arrays(model, index):
            nbytes = array.size * _F32.itemsize
            if offset + nbytes > len(payload):
                raise FormatError(
                    f"truncated payload in layer {index} ({name}): "
                    f"expected {HEADER_SIZE + total} bytes, got {HEADER_SIZE + len(payload)}",
                    path=path,
                )
            values = np.frombuffer(payload, dtype=_F32, count=array.size, offset=offset)
            array[...] = values.reshape(array.shape)
            offset += nbytes
    if offset != len(payload):
        raise FormatError(
            f"unexpected trailing data: expected {HEADER_SIZE + total} bytes, got {HEADER_SIZE + len(payload)}",
            path=path,
        )
    logger.info(f"Loaded weights from {path}")
    return model


def infer_profile(path: str, config: NetworkConfig) -> Profile:
    """Profile whose parameter count matches the file size; full when none does"""
    actual = os.path.getsize(path) - HEADER_SIZE
    for profile in (Profile.FULL, Profile.TINY):
        candidate = config.model_copy(update={"profile": profile})
        count = 0
        for spec in layer_specs(candidate):
            if spec.filters is None:
                continue
            in_channels = spec.expected_input_shape[0]
            per_channel = 1 if spec.index == HEAD_INDEX else 4
            count += spec.filters * per_channel + spec.filters * in_channels * spec.kernel * spec.kernel
        if count * _F32.itemsize == actual:
            return profile
    return Profile.FULL


def _header_config(path: str, header: Tuple[int, int, int, int], **fields) -> NetworkConfig:
    try:
        return NetworkConfig(**fields)
    except ValidationError as e:
        raise FormatError(f"header {header} is not a valid network: {e}", path=path) from e


def load_model(path: str, config: Optional[NetworkConfig] = None) -> Model:
    """Builds a model matching the file header, then loads its parameters

    `config` supplies what the header does not record (anchors, profile,
    leaky slope); header fields always win.
    """
    header = read_weights_header(path)
    num_classes, num_anchors, channels, size = header
    base = config if config is not None else _header_config(
        path, header,
        num_classes=num_classes,
        num_anchors=num_anchors,
        anchor_priors=list(DEFAULT_ANCHORS[:num_anchors]),
    )
    update = {
        "num_classes": num_classes,
        "num_anchors": num_anchors,
        "input_channels": channels,
        "input_size": size,
    }
    if len(base.anchor_priors) != num_anchors:
        raise FormatError(
            f"file has {num_anchors} anchors but config provides {len(base.anchor_priors)} priors",
            path=path,
        )
    merged = _header_config(path, header, **{**base.model_dump(), **update})
    if config is None:
        merged = merged.model_copy(update={"profile": infer_profile(path, merged)})
    return load_weights(build_yolov2(merged), path)
