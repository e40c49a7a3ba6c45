"""
Single-shot ocular detector: 19 conv layers, 5 max-pool layers and a
detection head, with no route/concatenation layers.

Layer table (index, kind, group, filters at full width, kernel):

     0 conv external   32 3x3      13 conv internal  256 1x1
     1 max                         14 conv external  512 3x3
     2 conv external   64 3x3      15 conv internal  256 1x1
     3 max                         16 conv external  512 3x3
     4 conv external  128 3x3      17 max
     5 conv internal   64 1x1      18 conv external 1024 3x3
     6 conv external  128 3x3      19 conv internal  512 1x1
     7 max                         20 conv external 1024 3x3
     8 conv external  256 3x3      21 conv internal  512 1x1
     9 conv internal  128 1x1      22 conv external 1024 3x3
    10 conv external  256 3x3      23 conv           (C+5)*A 1x1
    11 max                         24 detection
    12 conv external  512 3x3
"""
from dataclasses import dataclass
from typing import Dict, Iterator, List, Optional, Tuple, Union
import logging
import numpy as np

from ..exceptions import ConfigError, ShapeError
from ..schemas.network import LayerGroup, LayerKind, LayerSpec, NetworkConfig, Profile
from ..services import tensor_ops as ops
from ..services.tensor_ops import BatchNormCache, BatchNormParams, ConvParams, Tensor

logger = logging.getLogger(__name__)

HEAD_INDEX = 23
DETECTION_INDEX = 24

_EXT = LayerGroup.EXTERNAL
_INT = LayerGroup.INTERNAL

# (kind, group, full-width filters, kernel); the head's filters come from the config
LAYER_TABLE: List[Tuple[LayerKind, LayerGroup, int, int]] = [
    (LayerKind.CONV, _EXT, 32, 3),
    (LayerKind.MAXPOOL, LayerGroup.NONE, 0, 2),
    (LayerKind.CONV, _EXT, 64, 3),
    (LayerKind.MAXPOOL, LayerGroup.NONE, 0, 2),
    (LayerKind.CONV, _EXT, 128, 3),
    (LayerKind.CONV, _INT, 64, 1),
    (LayerKind.CONV, _EXT, 128, 3),
    (LayerKind.MAXPOOL, LayerGroup.NONE, 0, 2),
    (LayerKind.CONV, _EXT, 256, 3),
    (LayerKind.CONV, _INT, 128, 1),
    (LayerKind.CONV, _EXT, 256, 3),
    (LayerKind.MAXPOOL, LayerGroup.NONE, 0, 2),
    (LayerKind.CONV, _EXT, 512, 3),
    (LayerKind.CONV, _INT, 256, 1),
    (LayerKind.CONV, _EXT, 512, 3),
    (LayerKind.CONV, _INT, 256, 1),
    (LayerKind.CONV, _EXT, 512, 3),
    (LayerKind.MAXPOOL, LayerGroup.NONE, 0, 2),
    (LayerKind.CONV, _EXT, 1024, 3),
    (LayerKind.CONV, _INT, 512, 1),
    (LayerKind.CONV, _EXT, 1024, 3),
    (LayerKind.CONV, _INT, 512, 1),
    (LayerKind.CONV, _EXT, 1024, 3),
    (LayerKind.CONV, LayerGroup.NONE, 0, 1),
    (LayerKind.DETECTION, LayerGroup.NONE, 0, 0),
]

TINY_WIDTH_DIVISOR = 4


@dataclass
class ConvLayer:
    spec: LayerSpec
    conv: ConvParams
    bn: Optional[BatchNormParams]  # None for the prediction head


@dataclass
class ConvCache:
    x: Tensor
    bn: Optional[BatchNormCache]
    pre_activation: Optional[Tensor]


@dataclass
class ConvGrads:
    weights: np.ndarray
    bias: Optional[np.ndarray]  # head only
    gamma: Optional[np.ndarray]
    beta: Optional[np.ndarray]


LayerCache = Union[ConvCache, Tensor, None]


def layer_specs(config: NetworkConfig) -> List[LayerSpec]:
    """Layer table with concrete filters and (C, H, W) shapes for this config"""
    divisor = TINY_WIDTH_DIVISOR if config.profile == Profile.TINY else 1
    shape = (config.input_channels, config.input_size, config.input_size)
    specs = []
    for index, (kind, group, filters, kernel) in enumerate(LAYER_TABLE):
        c, h, w = shape
        if kind == LayerKind.CONV:
            n_filters = config.head_filters if index == HEAD_INDEX else filters // divisor
            out_shape = (n_filters, h, w)
            spec = LayerSpec(
                index=index, kind=kind, group=group, filters=n_filters,
                kernel=kernel, stride=1,
                expected_input_shape=shape, expected_output_shape=out_shape,
            )
        elif kind == LayerKind.MAXPOOL:
            out_shape = (c, h // 2, w // 2)
            spec = LayerSpec(
                index=index, kind=kind, kernel=2, stride=2,
                expected_input_shape=shape, expected_output_shape=out_shape,
            )
        else:
            out_shape = shape
            spec = LayerSpec(
                index=index, kind=kind,
                expected_input_shape=shape, expected_output_shape=out_shape,
            )
        specs.append(spec)
        shape = out_shape
    return specs


class Model:
    """Built network: layer specs plus parameters for every conv layer"""

    def __init__(self, config: NetworkConfig, layers: List[LayerSpec], conv_layers: Dict[int, ConvLayer]):
        self.config = config
        self.layers = layers
        self.conv_layers = conv_layers

    def __repr__(self):
        return f"<Model(C={self.config.num_classes}, A={self.config.num_anchors}, profile={self.config.profile.value})>"

    @property
    def output_shape(self) -> Tuple[int, int, int]:
        return self.layers[-1].expected_output_shape

    def conv_indices(self) -> List[int]:
        return sorted(self.conv_layers)

    def _check_input(self, batch: Tensor) -> None:
        first = self.layers[0]
        if not isinstance(batch, np.ndarray) or batch.ndim != 4 or tuple(batch.shape[1:]) != first.expected_input_shape:
            raise ShapeError(
                f"input shape {getattr(batch, 'shape', None)} does not match expected "
                f"(N, {', '.join(map(str, first.expected_input_shape))})",
                layer_index=first.index,
            )

    def forward(self, batch: Tensor, training: bool = False) -> Tensor:
        out, _ = self._run(batch, training, keep_cache=False)
        return out

    def forward_train(self, batch: Tensor) -> Tuple[Tensor, List[LayerCache]]:
        return self._run(batch, training=True, keep_cache=True)

    def _run(self, batch: Tensor, training: bool, keep_cache: bool) -> Tuple[Tensor, List[LayerCache]]:
        self._check_input(batch)
        x = batch
        caches: List[LayerCache] = []
        slope = self.config.leaky_slope
        for spec in self.layers:
            cache: LayerCache = None
            if spec.kind == LayerKind.CONV:
                layer = self.conv_layers[spec.index]
                z = ops.conv2d_forward(x, layer.conv)
                if layer.bn is None:
                    cache = ConvCache(x=x, bn=None, pre_activation=None)
                    x = z
                else:
                    z, bn_cache = ops.batchnorm_forward(z, layer.bn, training)
                    cache = ConvCache(x=x, bn=bn_cache, pre_activation=z)
                    x = ops.leaky_relu(z, slope)
            elif spec.kind == LayerKind.MAXPOOL:
                cache = x
                x = ops.maxpool2(x)
            if tuple(x.shape[1:]) != spec.expected_output_shape:
                raise ShapeError(
                    f"output shape {x.shape[1:]} differs from expected {spec.expected_output_shape}",
                    layer_index=spec.index,
                )
            caches.append(cache if keep_cache else None)
        return x, caches

    def backward(self, grad_out: Tensor, caches: List[LayerCache]) -> Dict[int, ConvGrads]:
        """Gradients of every conv layer given d(loss)/d(output)"""
        grads: Dict[int, ConvGrads] = {}
        g = grad_out
        slope = self.config.leaky_slope
        for spec, cache in zip(reversed(self.layers), reversed(caches)):
            if spec.kind == LayerKind.CONV:
                layer = self.conv_layers[spec.index]
                if layer.bn is None:
                    g, gw, gb = ops.conv2d_backward(cache.x, layer.conv, g)
                    grads[spec.index] = ConvGrads(weights=gw, bias=gb, gamma=None, beta=None)
                else:
                    g = ops.leaky_relu_backward(cache.pre_activation, g, slope)
                    g, ggamma, gbeta = ops.batchnorm_backward(g, cache.bn)
                    g, gw, _ = ops.conv2d_backward(cache.x, layer.conv, g)
                    grads[spec.index] = ConvGrads(weights=gw, bias=None, gamma=ggamma, beta=gbeta)
            elif spec.kind == LayerKind.MAXPOOL:
                g = ops.maxpool2_backward(cache, g)
        return grads

    def trainable(self) -> Iterator[Tuple[str, np.ndarray]]:
        """(key, array) pairs of every trained parameter, in layer order"""
        for index in self.conv_indices():
            layer = self.conv_layers[index]
            yield f"{index}.weights", layer.conv.weights
            if layer.bn is None:
                yield f"{index}.bias", layer.conv.bias
            else:
                yield f"{index}.gamma", layer.bn.gamma
                yield f"{index}.beta", layer.bn.beta


def grads_by_key(grads: Dict[int, ConvGrads]) -> Dict[str, np.ndarray]:
    flat = {}
    for index, g in grads.items():
        flat[f"{index}.weights"] = g.weights
        if g.bias is not None:
            flat[f"{index}.bias"] = g.bias
        if g.gamma is not None:
            flat[f"{index}.gamma"] = g.gamma
            flat[f"{index}.beta"] = g.beta
    return flat


def build_yolov2(config: NetworkConfig, seed: int = 0) -> Model:
    """Builds the 25-layer table with seeded fan-in scaled weights"""
    if config.num_classes not in (1, 2):
        raise ConfigError(f"num_classes must be 1 or 2, got {config.num_classes}")
    if config.num_anchors <= 0:
        raise ConfigError(f"num_anchors must be positive, got {config.num_anchors}")
    if config.input_size <= 0 or config.input_size % 32 != 0:
        raise ConfigError(f"input_size must be a positive multiple of 32, got {config.input_size}")

    rng = np.random.default_rng(seed)
    layers = layer_specs(config)
    conv_layers: Dict[int, ConvLayer] = {}
    for spec in layers:
        if spec.kind != LayerKind.CONV:
            continue
        in_channels = spec.expected_input_shape[0]
        weights = ops.he_normal(rng, (spec.filters, in_channels, spec.kernel, spec.kernel))
        bias = np.zeros(spec.filters, dtype=np.float32)
        bn = None if spec.index == HEAD_INDEX else BatchNormParams.identity(spec.filters)
        conv_layers[spec.index] = ConvLayer(spec=spec, conv=ConvParams(weights, bias), bn=bn)

    logger.info(
        f"Built model: C={config.num_classes} A={config.num_anchors} "
        f"head filters={config.head_filters} input={config.input_channels}x{config.input_size} "
        f"profile={config.profile.value}"
    )
    return Model(config, layers, conv_layers)


def forward(model: Model, batch: Tensor, training: bool = False) -> Tensor:
    return model.forward(batch, training)


def infer_shapes(config: NetworkConfig) -> List[Tuple[int, Tuple[int, int, int], Tuple[int, int, int]]]:
    """(index, input CHW, output CHW) per layer without running any math"""
    return [(s.index, s.expected_input_shape, s.expected_output_shape) for s in layer_specs(config)]
