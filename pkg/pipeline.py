"""Inference pipelines: auto-encoder reconstruction and two-image fusion."""
import logging
from typing import Optional

import numpy as np

from errors import ConfigurationError, SizeError
from fusion import FusionStrategy, PoolingKind, fuse_multiscale
from network import NetworkState, decode, decode_deep_supervised, encode
from preprocess import crop_to, pad_crop_wrap, pad_to_multiple


def _single_channel(image):
    image = np.asarray(image, dtype=np.float32)
    if image.ndim == 2:
        image = image[None]
    if image.ndim != 3 or image.shape[0] != 1:
        raise SizeError(f"Expected a 1 x H x W image, got shape {image.shape}")
    return image


def _decode(features, state: NetworkState, output_head: Optional[int]):
    if output_head is None:
        return decode(features, state)
    if output_head not in (1, 2, 3):
        raise ConfigurationError(f"Output head must be 1, 2 or 3, got {output_head}")
    return decode_deep_supervised(features, state)[output_head - 1]


def reconstruct(image, state: NetworkState, output_head: Optional[int] = None):
    """Encode and decode one image of any size."""
    image = _single_channel(image)
    return pad_crop_wrap(image, lambda padded: _decode(encode(padded, state), state, output_head))


def fuse_images(image_a, image_b, state: NetworkState, pooling=PoolingKind.AVG,
                strategy=FusionStrategy.ATTENTION, output_head: Optional[int] = None):
    """
    Fuse two registered single-channel images.

    Both images are padded to a multiple of 16, encoded, fused scale by
    scale, decoded and cropped back to the input size.
    """
    image_a = _single_channel(image_a)
    image_b = _single_channel(image_b)
    if image_a.shape != image_b.shape:
        raise SizeError(f"Source images differ in size: {image_a.shape[1:]} vs {image_b.shape[1:]}")
    height, width = image_a.shape[1:]

    features_a = encode(pad_to_multiple(image_a), state)
    features_b = encode(pad_to_multiple(image_b), state)
    fused = fuse_multiscale(features_a, features_b, pooling, strategy)
    logging.debug("Fused %dx%d pair with %s pooling.", height, width, PoolingKind.parse(pooling).value)
    return crop_to(_decode(fused, state, output_head), height, width)
