import logging

import numpy as np
import tensorflow as tf

from errors import SizeError

LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])
PAD_MULTIPLE = 16


def to_grayscale(rgb):
    """
    Convert an H x W x 3 (or x 4) array to luminance.

    Parameters:
    rgb (numpy.ndarray): color image, any value scale

    Returns:
    numpy.ndarray: H x W float64 luminance in the same scale as the input
    """
    rgb = np.asarray(rgb, dtype=np.float64)
    if rgb.ndim == 2:
        return rgb
    if rgb.ndim != 3 or rgb.shape[2] < 3:
        raise SizeError(f"Cannot convert array of shape {rgb.shape} to grayscale")
    return rgb[..., :3] @ LUMA_WEIGHTS


def normalize_intensity(image, max_value=255.0):
    """Scale raw intensities to [0, 1] as float32."""
    image = np.asarray(image, dtype=np.float64) / float(max_value)
    return np.clip(image, 0.0, 1.0).astype(np.float32)


def resize_image(image, size):
    """
    Bilinear resize of an H x W image to size x size.

    Images that already have the target shape are returned untouched.
    """
    image = np.asarray(image, dtype=np.float32)
    if image.shape == (size, size):
        return image
    resized = tf.image.resize(image[:, :, None], (size, size), method="bilinear")
    logging.debug("Resized image from %s to %dx%d.", image.shape, size, size)
    return resized.numpy()[:, :, 0]


def quantize(image):
    """[0, 1] floats -> uint8 with round-half-up."""
    image = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    return np.floor(image * 255.0 + 0.5).astype(np.uint8)


def to_uint8(image):
    """Quantize an image for histogram metrics; uint8 input passes through."""
    image = np.asarray(image)
    if image.ndim == 3 and image.shape[0] == 1:
        image = image[0]
    if image.dtype == np.uint8:
        return image
    return quantize(image)


def padded_size(height, width, multiple=PAD_MULTIPLE):
    return -(-height // multiple) * multiple, -(-width // multiple) * multiple


def pad_to_multiple(image, multiple=PAD_MULTIPLE):
    """Reflect-pad the bottom/right edges of an (..., H, W) array."""
    image = np.asarray(image)
    height, width = image.shape[-2:]
    target_h, target_w = padded_size(height, width, multiple)
    if (target_h, target_w) == (height, width):
        return image
    pad = [(0, 0)] * (image.ndim - 2) + [(0, target_h - height), (0, target_w - width)]
    return np.pad(image, pad, mode="reflect")


def crop_to(image, height, width):
    return np.asarray(image)[..., :height, :width]


def pad_crop_wrap(image, fn, multiple=PAD_MULTIPLE):
    """Pad to a multiple of 16, apply fn, crop the result back."""
    height, width = np.shape(image)[-2:]
    return crop_to(fn(pad_to_multiple(image, multiple)), height, width)
