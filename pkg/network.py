"""
Nest-connection auto-encoder: encoder (Conv + ECB10..ECB40) and decoder
(DCB11..DCB31 + 1x1 Conv), with optional deep-supervision heads.

Public single-image operations take and return channel-first numpy arrays
(C x H x W). The batch helpers (`*_batch`, `decode_nodes`) work on NHWC
TensorFlow tensors and accept any mapping of parameter name -> tensor, so
the trainer can pass `tf.Variable`s through the same forward pass.
"""
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Mapping, Optional

import numpy as np
import tensorflow as tf

from errors import ConfigurationError, SizeError, TopologyError

INTERNAL_WIDTH = 16
SIZE_MULTIPLE = 16
SCALE_CHANNELS = (64, 112, 160, 208)
HEAD_NAMES = ("head1", "head2", "head3")


class BlockKind(str, Enum):
    ECB = "ECB"
    DCB = "DCB"
    PLAIN = "PlainConv"


@dataclass(frozen=True)
class BlockSpec:
    name: str
    kind: BlockKind
    in_channels: int
    out_channels: int
    internal_width: int = INTERNAL_WIDTH
    kernel: int = 3
    stride: int = 1

    def parameter_shapes(self):
        """Named kernel/bias shapes owned by this block (HWIO kernels)."""
        if self.kind == BlockKind.PLAIN:
            k = self.kernel
            return {
                f"{self.name}.kernel": (k, k, self.in_channels, self.out_channels),
                f"{self.name}.bias": (self.out_channels,),
            }
        return {
            f"{self.name}.conv1.kernel": (3, 3, self.in_channels, self.internal_width),
            f"{self.name}.conv1.bias": (self.internal_width,),
            f"{self.name}.conv2.kernel": (3, 3, self.internal_width, self.out_channels),
            f"{self.name}.conv2.bias": (self.out_channels,),
        }


ENCODER_BLOCKS = (
    BlockSpec("conv0", BlockKind.PLAIN, 1, 16),
    BlockSpec("ECB10", BlockKind.ECB, 16, 64),
    BlockSpec("ECB20", BlockKind.ECB, 64, 112),
    BlockSpec("ECB30", BlockKind.ECB, 112, 160),
    BlockSpec("ECB40", BlockKind.ECB, 160, 208),
)

# Order in which the decoder evaluates its nodes.
DECODER_BLOCKS = (
    BlockSpec("DCB11", BlockKind.DCB, 176, 64),
    BlockSpec("DCB21", BlockKind.DCB, 272, 112),
    BlockSpec("DCB31", BlockKind.DCB, 368, 160),
    BlockSpec("DCB12", BlockKind.DCB, 240, 64),
    BlockSpec("DCB22", BlockKind.DCB, 384, 112),
    BlockSpec("DCB13", BlockKind.DCB, 304, 64),
)

FINAL_BLOCK = BlockSpec("final", BlockKind.PLAIN, 64, 1, kernel=1)
HEAD_BLOCKS = tuple(BlockSpec(name, BlockKind.PLAIN, 64, 1, kernel=1) for name in HEAD_NAMES)

BLOCKS = {spec.name: spec for spec in ENCODER_BLOCKS + DECODER_BLOCKS + (FINAL_BLOCK,) + HEAD_BLOCKS}


def topology(deep_supervision=False):
    """All blocks of the network in parameter order."""
    blocks = ENCODER_BLOCKS + DECODER_BLOCKS + (FINAL_BLOCK,)
    if deep_supervision:
        blocks = blocks + HEAD_BLOCKS
    return blocks


def parameter_shapes(deep_supervision=False):
    shapes = {}
    for spec in topology(deep_supervision):
        shapes.update(spec.parameter_shapes())
    return shapes


@dataclass
class NetworkState:
    """Named float32 kernels and biases plus the deep-supervision flag."""
    tensors: Dict[str, np.ndarray] = field(default_factory=dict)
    deep_supervision: bool = False

    def copy(self):
        return NetworkState(
            tensors={name: np.array(value, copy=True) for name, value in self.tensors.items()},
            deep_supervision=self.deep_supervision,
        )

    def without_heads(self):
        tensors = {
            name: value for name, value in self.tensors.items()
            if name.split(".")[0] not in HEAD_NAMES
        }
        return NetworkState(tensors=tensors, deep_supervision=False)


def validate_state(state: NetworkState):
    """Raise TopologyError unless every tensor matches the channel plan."""
    expected = parameter_shapes(state.deep_supervision)
    missing = sorted(set(expected) - set(state.tensors))
    extra = sorted(set(state.tensors) - set(expected))
    if missing or extra:
        raise TopologyError(f"State names do not match topology (missing={missing}, extra={extra})")
    for name, shape in expected.items():
        actual = tuple(np.shape(state.tensors[name]))
        if actual != shape:
            raise TopologyError(f"Tensor '{name}' has shape {actual}, expected {shape}")
    return True


def init_network(seed=0, deep_supervision=False):
    """Kaiming fan-in normal kernels, zero biases, deterministic for a seed."""
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in parameter_shapes(deep_supervision).items():
        if name.endswith(".bias"):
            tensors[name] = np.zeros(shape, dtype=np.float32)
        else:
            fan_in = shape[0] * shape[1] * shape[2]
            std = np.sqrt(2.0 / fan_in)
            tensors[name] = (rng.standard_normal(shape) * std).astype(np.float32)
    logging.info("Initialized network with seed %d (%d tensors).", seed, len(tensors))
    return NetworkState(tensors=tensors, deep_supervision=deep_supervision)


# ---------------------------------------------------------------------------
# Batch (NHWC) forward pass

def _conv(x, params, prefix, relu=True):
    y = tf.nn.conv2d(x, params[f"{prefix}.kernel"], strides=1, padding="SAME")
    y = tf.nn.bias_add(y, params[f"{prefix}.bias"])
    return tf.nn.relu(y) if relu else y


def _channels(x):
    return int(x.shape[-1])


def apply_block(x, spec: BlockSpec, params):
    """Run one block; its input width is checked against the plan."""
    if _channels(x) != spec.in_channels:
        raise TopologyError(
            f"{spec.name} expects {spec.in_channels} input channels, got {_channels(x)}"
        )
    if spec.kind == BlockKind.PLAIN:
        return _conv(x, params, spec.name)
    y = _conv(x, params, f"{spec.name}.conv1")
    return _conv(y, params, f"{spec.name}.conv2")


def upsample_batch(x):
    """Nearest-neighbour x2 on NHWC tensors."""
    return tf.repeat(tf.repeat(x, 2, axis=1), 2, axis=2)


def _max_pool(x):
    return tf.nn.max_pool2d(x, ksize=2, strides=2, padding="VALID")


def encode_batch(x, params) -> List[tf.Tensor]:
    """
    Encoder forward pass on an NHWC batch of single-channel images.

    Each ECB's conv output is the scale feature; its max-pooled copy feeds
    the next ECB. ECB40's pooled output is never used.
    """
    height, width = int(x.shape[1]), int(x.shape[2])
    if height % SIZE_MULTIPLE or width % SIZE_MULTIPLE:
        raise SizeError(
            f"Image size {height}x{width} is not divisible by {SIZE_MULTIPLE}"
        )
    y = apply_block(x, ENCODER_BLOCKS[0], params)
    features = []
    for spec in ENCODER_BLOCKS[1:]:
        phi = apply_block(y, spec, params)
        features.append(phi)
        y = _max_pool(phi)
    return features


def _check_scales(features):
    if len(features) != len(SCALE_CHANNELS):
        raise TopologyError(f"Expected {len(SCALE_CHANNELS)} scales, got {len(features)}")
    base = features[0].shape
    for m, (phi, channels) in enumerate(zip(features, SCALE_CHANNELS)):
        if _channels(phi) != channels:
            raise TopologyError(f"Scale {m + 1} has {_channels(phi)} channels, expected {channels}")
        expected = (int(base[1]) >> m, int(base[2]) >> m)
        if (int(phi.shape[1]), int(phi.shape[2])) != expected:
            raise TopologyError(
                f"Scale {m + 1} has spatial size {tuple(phi.shape[1:3])}, expected {expected}"
            )


def decode_nodes(features, params) -> Dict[str, tf.Tensor]:
    """
    Evaluate every nest-connection node.

    Concatenation order: encoder skip, same-row nodes left to right,
    upsampled deeper node last.
    """
    _check_scales(features)
    phi1, phi2, phi3, phi4 = features
    up = upsample_batch
    nodes = {}
    nodes["X11"] = apply_block(tf.concat([phi1, up(phi2)], -1), BLOCKS["DCB11"], params)
    nodes["X21"] = apply_block(tf.concat([phi2, up(phi3)], -1), BLOCKS["DCB21"], params)
    nodes["X31"] = apply_block(tf.concat([phi3, up(phi4)], -1), BLOCKS["DCB31"], params)
    nodes["X12"] = apply_block(
        tf.concat([phi1, nodes["X11"], up(nodes["X21"])], -1), BLOCKS["DCB12"], params)
    nodes["X22"] = apply_block(
        tf.concat([phi2, nodes["X21"], up(nodes["X31"])], -1), BLOCKS["DCB22"], params)
    nodes["X13"] = apply_block(
        tf.concat([phi1, nodes["X11"], nodes["X12"], up(nodes["X22"])], -1), BLOCKS["DCB13"], params)
    return nodes


def decode_batch(features, params):
    """Decoder output after the final ReLU (not clamped)."""
    nodes = decode_nodes(features, params)
    return apply_block(nodes["X13"], FINAL_BLOCK, params)


def deep_supervised_batch(features, params):
    """O1, O2, O3 from heads attached to X11, X12, X13 (not clamped)."""
    if any(f"{name}.kernel" not in params for name in HEAD_NAMES):
        raise ConfigurationError("Network state has no deep-supervision heads")
    nodes = decode_nodes(features, params)
    return [
        apply_block(nodes[node], spec, params)
        for node, spec in zip(("X11", "X12", "X13"), HEAD_BLOCKS)
    ]


def reconstruct_batch(x, params):
    return decode_batch(encode_batch(x, params), params)


# ---------------------------------------------------------------------------
# Single-image (C x H x W) operations

def _to_nhwc(feature_map):
    return tf.convert_to_tensor(np.transpose(np.asarray(feature_map, dtype=np.float32), (1, 2, 0))[None])


def _to_chw(tensor):
    return np.transpose(tensor.numpy()[0], (2, 0, 1))


def _checked_params(state: NetworkState):
    validate_state(state)
    return state.tensors


def encode(image, state: NetworkState) -> List[np.ndarray]:
    """Encode one 1 x H x W image into the four scale features."""
    image = np.asarray(image, dtype=np.float32)
    if image.ndim == 2:
        image = image[None]
    if image.ndim != 3 or image.shape[0] != 1:
        raise TopologyError(f"encode expects a 1 x H x W image, got shape {image.shape}")
    params = _checked_params(state)
    return [_to_chw(phi) for phi in encode_batch(_to_nhwc(image), params)]


def decode(fused, state: NetworkState) -> np.ndarray:
    """Decode multi-scale features into a 1 x H x W image clamped to [0, 1]."""
    params = _checked_params(state)
    output = decode_batch([_to_nhwc(phi) for phi in fused], params)
    return np.clip(_to_chw(output), 0.0, 1.0)


def decode_deep_supervised(fused, state: NetworkState):
    """Decode into the three deep-supervision outputs (O1, O2, O3)."""
    if not state.deep_supervision:
        raise ConfigurationError("Network state has no deep-supervision heads")
    params = _checked_params(state)
    outputs = deep_supervised_batch([_to_nhwc(phi) for phi in fused], params)
    return tuple(np.clip(_to_chw(o), 0.0, 1.0) for o in outputs)


def upsample2x(feature_map) -> np.ndarray:
    """Nearest-neighbour x2 on a C x H x W map."""
    feature_map = np.asarray(feature_map)
    return feature_map.repeat(2, axis=1).repeat(2, axis=2)


def parameter_count(state: Optional[NetworkState] = None):
    shapes = parameter_shapes(state.deep_supervision if state else False)
    return int(sum(np.prod(shape) for shape in shapes.values()))


def as_variables(state: NetworkState) -> Mapping[str, tf.Variable]:
    """Trainable copies of the state tensors, keyed by parameter name."""
    return {
        name: tf.Variable(value, name=name.replace(".", "_"), trainable=True)
        for name, value in state.tensors.items()
    }


def from_variables(variables, deep_supervision=False) -> NetworkState:
    return NetworkState(
        tensors={name: np.array(var.numpy(), dtype=np.float32) for name, var in variables.items()},
        deep_supervision=deep_supervision,
    )
