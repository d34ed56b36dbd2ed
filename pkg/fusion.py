"""
Two-stage attention fusion of multi-scale deep features.

Spatial attention weighs every position by the l1-norm of its channel
vector; channel attention weighs every channel by a global pooling scalar.
The two fused maps are averaged. All functions operate on C x H x W numpy
arrays and are pure.
"""
import logging
from enum import Enum

import numpy as np

from errors import ConfigurationError, NumericalError, TopologyError

# Beyond this many pixels the nuclear norm is taken from Gram eigenvalues.
SVD_PIXEL_LIMIT = 512 * 512


def parse_choice(enum_cls, value, label):
    """Map a case-insensitive name (or a member) onto a str-valued enum."""
    if isinstance(value, enum_cls):
        return value
    try:
        return enum_cls(str(value).strip().lower())
    except ValueError:
        choices = ", ".join(member.value for member in enum_cls)
        raise ConfigurationError(f"Unknown {label} '{value}' (choose from {choices})")


class PoolingKind(str, Enum):
    AVG = "avg"
    MAX = "max"
    NUCLEAR = "nuclear"

    @classmethod
    def parse(cls, value):
        return parse_choice(cls, value, "pooling")


class FusionStrategy(str, Enum):
    ATTENTION = "attention"
    SPATIAL = "spatial"
    CHANNEL = "channel"

    @classmethod
    def parse(cls, value):
        return parse_choice(cls, value, "fusion strategy")


def _pair(phi1, phi2):
    phi1 = np.asarray(phi1)
    phi2 = np.asarray(phi2)
    if phi1.shape != phi2.shape:
        raise TopologyError(f"Feature shapes differ: {phi1.shape} vs {phi2.shape}")
    if phi1.ndim != 3:
        raise TopologyError(f"Expected C x H x W feature maps, got shape {phi1.shape}")
    return phi1, phi2


def _normalize(first, second):
    """first/(first+second) and its complement; 0.5 each where the sum is zero."""
    total = first + second
    w1 = np.full(np.shape(total), 0.5, dtype=np.result_type(total, np.float32))
    w2 = np.full_like(w1, 0.5)
    nonzero = total != 0
    np.divide(first, total, out=w1, where=nonzero)
    np.divide(second, total, out=w2, where=nonzero)
    return w1, w2


def spatial_weight_maps(phi1, phi2):
    """Per-position weights beta_1, beta_2 (H x W) from channel l1-norms."""
    phi1, phi2 = _pair(phi1, phi2)
    return _normalize(np.abs(phi1).sum(axis=0), np.abs(phi2).sum(axis=0))


def spatial_fuse(phi1, phi2):
    beta1, beta2 = spatial_weight_maps(phi1, phi2)
    return beta1[None] * phi1 + beta2[None] * phi2


def _nuclear_norm(channel):
    if channel.size <= SVD_PIXEL_LIMIT:
        return float(np.sum(np.linalg.svd(channel, compute_uv=False)))
    gram = channel.T @ channel if channel.shape[1] <= channel.shape[0] else channel @ channel.T
    eigenvalues = np.linalg.eigvalsh(gram)
    return float(np.sum(np.sqrt(np.clip(eigenvalues, 0.0, None))))


def global_pool(channel, kind=PoolingKind.AVG, channel_index=None):
    """Reduce one H x W channel to a scalar (mean, max or nuclear norm)."""
    kind = PoolingKind.parse(kind)
    channel = np.asarray(channel, dtype=np.float64)
    if channel.ndim != 2 or channel.size == 0:
        raise TopologyError(f"global_pool expects a non-empty H x W matrix, got shape {channel.shape}")
    if kind == PoolingKind.AVG:
        return float(channel.mean())
    if kind == PoolingKind.MAX:
        return float(channel.max())
    try:
        return _nuclear_norm(channel)
    except np.linalg.LinAlgError as e:
        where = "" if channel_index is None else f" in channel {channel_index}"
        raise NumericalError(f"SVD did not converge{where}: {e}")


def _pooled(phi, kind):
    if kind == PoolingKind.AVG:
        return phi.mean(axis=(1, 2))
    if kind == PoolingKind.MAX:
        return phi.max(axis=(1, 2))
    return np.array([global_pool(phi[n], kind, channel_index=n) for n in range(phi.shape[0])])


def channel_weights(phi1, phi2, kind=PoolingKind.AVG):
    """Per-channel weights alpha_1, alpha_2 (length C) from global pooling."""
    phi1, phi2 = _pair(phi1, phi2)
    kind = PoolingKind.parse(kind)
    return _normalize(_pooled(phi1, kind), _pooled(phi2, kind))


def channel_fuse(phi1, phi2, kind=PoolingKind.AVG):
    alpha1, alpha2 = channel_weights(phi1, phi2, kind)
    return alpha1[:, None, None] * phi1 + alpha2[:, None, None] * phi2


def combine(spatial, channel):
    spatial = np.asarray(spatial)
    channel = np.asarray(channel)
    if spatial.shape != channel.shape:
        raise TopologyError(f"Cannot combine shapes {spatial.shape} and {channel.shape}")
    return (spatial + channel) * 0.5


def fuse_scale(phi1, phi2, kind=PoolingKind.AVG, strategy=FusionStrategy.ATTENTION):
    strategy = FusionStrategy.parse(strategy)
    if strategy == FusionStrategy.SPATIAL:
        return spatial_fuse(phi1, phi2)
    if strategy == FusionStrategy.CHANNEL:
        return channel_fuse(phi1, phi2, kind)
    return combine(spatial_fuse(phi1, phi2), channel_fuse(phi1, phi2, kind))


def fuse_multiscale(features1, features2, kind=PoolingKind.AVG, strategy=FusionStrategy.ATTENTION):
    """Fuse two multi-scale feature sets scale by scale."""
    if len(features1) != len(features2):
        raise TopologyError(
            f"Scale count mismatch: {len(features1)} vs {len(features2)}"
        )
    kind = PoolingKind.parse(kind)
    strategy = FusionStrategy.parse(strategy)
    fused = []
    for m, (phi1, phi2) in enumerate(zip(features1, features2), start=1):
        if np.shape(phi1) != np.shape(phi2):
            raise TopologyError(f"Scale {m} shapes differ: {np.shape(phi1)} vs {np.shape(phi2)}")
        fused.append(fuse_scale(phi1, phi2, kind, strategy).astype(np.asarray(phi1).dtype, copy=False))
    logging.debug("Fused %d scales with %s pooling (%s).", len(fused), kind.value, strategy.value)
    return fused
