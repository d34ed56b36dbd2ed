"""
Auto-encoder training: reconstruction loss (pixel + lambda * SSIM), or the
deep-supervised average over three outputs, minimized with Adam.

The fusion strategy plays no part here; this module never imports it.
"""
import logging
import os
from dataclasses import dataclass
from typing import Optional

import numpy as np
import pandas as pd
import tensorflow as tf
from dataclasses_json import dataclass_json

import network
from checkpoint import CheckpointMeta, save_checkpoint
from corpus import batches_per_epoch, iter_batches, prepare_corpus
from errors import ConfigurationError, CorpusError, NumericalError
from losses import LossBreakdown, deep_supervised_terms, loss_terms
from monitoring import TrainingMonitor

LAMBDA_GRID = (1.0, 10.0, 100.0, 1000.0)


@dataclass_json
@dataclass
class TrainConfig:
    corpus_dir: Optional[str] = None
    image_size: int = 256
    epochs: int = 2
    batch_size: int = 4
    ssim_weight: float = 100.0
    learning_rate: float = 1e-4
    seed: int = 0
    deep_supervision: bool = False
    checkpoint_every: int = 100
    checkpoint_path: Optional[str] = None

    def validate(self):
        if self.epochs < 1:
            raise ConfigurationError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigurationError(f"batch size must be >= 1, got {self.batch_size}")
        if not self.ssim_weight > 0:
            raise ConfigurationError(f"lambda must be > 0, got {self.ssim_weight}")
        if self.learning_rate < 0:
            raise ConfigurationError(f"learning rate must be >= 0, got {self.learning_rate}")
        if self.image_size < network.SIZE_MULTIPLE or self.image_size % network.SIZE_MULTIPLE:
            raise ConfigurationError(
                f"image size must be a positive multiple of {network.SIZE_MULTIPLE}, got {self.image_size}"
            )
        if self.checkpoint_every < 0:
            raise ConfigurationError(f"checkpoint interval must be >= 0, got {self.checkpoint_every}")
        return True


@dataclass
class TrainResult:
    state: network.NetworkState
    history: pd.DataFrame
    iterations: int


def batch_losses(batch, params, ssim_weight, deep_supervision=False):
    """(pixel, ssim_loss, total) tensors for one NHWC batch."""
    features = network.encode_batch(batch, params)
    if deep_supervision:
        outputs = network.deep_supervised_batch(features, params)
        return deep_supervised_terms(outputs, batch, ssim_weight)
    return loss_terms(network.decode_batch(features, params), batch, ssim_weight)


def _meta(config: TrainConfig, iteration):
    return CheckpointMeta(
        deep_supervision=config.deep_supervision,
        ssim_weight=config.ssim_weight,
        iteration=iteration,
    )


def _finalize(state: network.NetworkState):
    """Plain decode of a deep-supervised network reproduces O3."""
    if state.deep_supervision:
        state.tensors["final.kernel"] = state.tensors["head3.kernel"].copy()
        state.tensors["final.bias"] = state.tensors["head3.bias"].copy()
    return state


def train(config: TrainConfig, images=None, monitor: Optional[TrainingMonitor] = None) -> TrainResult:
    """
    Train the auto-encoder.

    Parameters:
    config (TrainConfig): hyper-parameters and paths
    images (numpy.ndarray): optional N x H x W corpus; loaded from
        config.corpus_dir when omitted
    monitor (TrainingMonitor): receives every LossBreakdown

    Returns:
    TrainResult: final state, per-iteration loss history, iteration count
    """
    config.validate()
    if images is None:
        if not config.corpus_dir:
            raise CorpusError("No corpus directory given")
        images = prepare_corpus(config.corpus_dir, config.image_size)
    images = np.asarray(images, dtype=np.float32)
    if len(images) < config.batch_size:
        raise CorpusError(
            f"Corpus has {len(images)} images, fewer than the batch size {config.batch_size}"
        )

    monitor = monitor or TrainingMonitor()
    state = network.init_network(config.seed, config.deep_supervision)
    variables = network.as_variables(state)
    names = list(variables)
    optimizer = tf.keras.optimizers.Adam(learning_rate=config.learning_rate)

    steps = batches_per_epoch(len(images), config.batch_size)
    logging.info(
        "Training on %d images: %d epochs x %d iterations, batch %d, lambda %g, lr %g, %d parameters%s",
        len(images), config.epochs, steps, config.batch_size, config.ssim_weight,
        config.learning_rate, network.parameter_count(state),
        " (deep supervision)" if config.deep_supervision else "",
    )

    iteration = 0
    for epoch in range(config.epochs):
        for batch in iter_batches(images, config.batch_size, seed=config.seed + epoch):
            iteration += 1
            batch = tf.constant(batch)
            with tf.GradientTape() as tape:
                pixel, structural, total = batch_losses(
                    batch, variables, config.ssim_weight, config.deep_supervision
                )
            breakdown = LossBreakdown.from_terms(pixel.numpy(), structural.numpy(), config.ssim_weight)
            monitor.record_loss(iteration, breakdown)
            if not breakdown.is_finite():
                monitor.check_alerts()
                where = config.checkpoint_path if config.checkpoint_path and os.path.exists(config.checkpoint_path) else "none"
                raise NumericalError(
                    f"Non-finite loss at iteration {iteration}; last good checkpoint: {where}"
                )

            gradients = tape.gradient(total, [variables[name] for name in names])
            pairs = [(g, variables[n]) for g, n in zip(gradients, names) if g is not None]
            if pairs:
                optimizer.apply_gradients(pairs)

            if config.checkpoint_every and iteration % config.checkpoint_every == 0:
                if config.checkpoint_path:
                    snapshot = _finalize(network.from_variables(variables, config.deep_supervision))
                    save_checkpoint(snapshot, config.checkpoint_path, _meta(config, iteration))
                monitor.capture_system_metrics(iteration)
                monitor.check_alerts()
        logging.info("Epoch %d/%d finished after %d iterations.", epoch + 1, config.epochs, iteration)

    state = _finalize(network.from_variables(variables, config.deep_supervision))
    if config.checkpoint_path:
        save_checkpoint(state, config.checkpoint_path, _meta(config, iteration))
    logging.info("Training finished after %d iterations.", iteration)
    return TrainResult(state=state, history=monitor.history(), iterations=iteration)
