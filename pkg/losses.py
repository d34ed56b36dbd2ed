"""
Reconstruction objective: pixel loss, SSIM loss and their weighted sum,
plus the deep-supervised average over several outputs.

All losses are TensorFlow ops so the trainer can differentiate through them.
Inputs may be H x W, 1 x H x W or N x H x W x 1; batched losses are averaged
over the batch.
"""
from dataclasses import dataclass

import numpy as np
import tensorflow as tf
from dataclasses_json import dataclass_json

from errors import SizeError

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
DATA_RANGE = 1.0
DEEP_SUPERVISION_OUTPUTS = 3


@dataclass_json
@dataclass(frozen=True)
class LossBreakdown:
    pixel: float
    ssim: float
    total: float
    ssim_weight: float

    @classmethod
    def from_terms(cls, pixel, ssim, ssim_weight):
        pixel = float(pixel)
        ssim = float(ssim)
        ssim_weight = float(ssim_weight)
        return cls(pixel=pixel, ssim=ssim, total=pixel + ssim_weight * ssim, ssim_weight=ssim_weight)

    def is_finite(self):
        return bool(np.isfinite([self.pixel, self.ssim, self.total]).all())


def as_batch(image):
    """View an image (or batch) as an N x H x W x 1 tensor."""
    tensor = tf.convert_to_tensor(image)
    if not tensor.dtype.is_floating:
        tensor = tf.cast(tensor, tf.float64)
    if tensor.shape.rank == 2:
        return tensor[None, :, :, None]
    if tensor.shape.rank == 3:
        if tensor.shape[0] != 1:
            raise SizeError(f"Expected a single-channel image, got shape {tuple(tensor.shape)}")
        return tensor[..., None]
    if tensor.shape.rank == 4:
        return tensor
    raise SizeError(f"Unsupported image rank {tensor.shape.rank}")


def _same_shape(output, target):
    output, target = as_batch(output), as_batch(target)
    if output.shape != target.shape:
        raise SizeError(f"Shape mismatch: {tuple(output.shape)} vs {tuple(target.shape)}")
    if output.dtype != target.dtype:
        target = tf.cast(target, output.dtype)
    return output, target


def pixel_loss(output, target):
    """Squared Frobenius norm of (output - target), averaged over the batch."""
    output, target = _same_shape(output, target)
    return tf.reduce_mean(tf.reduce_sum(tf.square(output - target), axis=[1, 2, 3]))


def gaussian_window(size, sigma=SSIM_SIGMA):
    coords = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(coords ** 2) / (2.0 * sigma ** 2))
    g /= g.sum()
    return np.outer(g, g)


def ssim_map(a, b, data_range=DATA_RANGE):
    """Local SSIM over Gaussian windows ('valid' positions only)."""
    a, b = _same_shape(a, b)
    height, width = int(a.shape[1]), int(a.shape[2])
    size = min(SSIM_WINDOW, height, width)
    if size < 1:
        raise SizeError(f"Image {height}x{width} is too small for SSIM")
    window = tf.constant(gaussian_window(size)[:, :, None, None], dtype=a.dtype)

    def blur(x):
        return tf.nn.conv2d(x, window, strides=1, padding="VALID")

    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    mu_a, mu_b = blur(a), blur(b)
    var_a = blur(a * a) - mu_a * mu_a
    var_b = blur(b * b) - mu_b * mu_b
    cov = blur(a * b) - mu_a * mu_b
    numerator = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    denominator = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return numerator / denominator


def ssim_index(a, b, data_range=DATA_RANGE):
    """Mean local SSIM per image, averaged over the batch."""
    return tf.reduce_mean(ssim_map(a, b, data_range))


def ssim_loss(output, target):
    return 1.0 - ssim_index(output, target)


def loss_terms(output, target, ssim_weight):
    """(pixel, ssim_loss, total) as tensors."""
    pixel = pixel_loss(output, target)
    structural = ssim_loss(output, target)
    return pixel, structural, pixel + ssim_weight * structural


def total_loss(output, target, ssim_weight=100.0) -> LossBreakdown:
    pixel, structural, _ = loss_terms(output, target, ssim_weight)
    return LossBreakdown.from_terms(pixel.numpy(), structural.numpy(), ssim_weight)


def deep_supervised_terms(outputs, target, ssim_weight):
    """Mean of (pixel, ssim_loss, total) over the deep-supervision outputs."""
    if len(outputs) != DEEP_SUPERVISION_OUTPUTS:
        raise SizeError(
            f"Deep supervision expects {DEEP_SUPERVISION_OUTPUTS} outputs, got {len(outputs)}"
        )
    terms = [loss_terms(output, target, ssim_weight) for output in outputs]
    count = float(len(terms))
    pixel = tf.add_n([t[0] for t in terms]) / count
    structural = tf.add_n([t[1] for t in terms]) / count
    total = tf.add_n([t[2] for t in terms]) / count
    return pixel, structural, total


def deep_supervised_loss(outputs, target, ssim_weight=100.0) -> LossBreakdown:
    pixel, structural, _ = deep_supervised_terms(outputs, target, ssim_weight)
    return LossBreakdown.from_terms(pixel.numpy(), structural.numpy(), ssim_weight)
