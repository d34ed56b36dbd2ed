"""
Fusion quality metrics over (fused, source1, source2) triples:
En, SD, MI, FMI_dct, FMI_w, SSIM_a and VIF, plus report aggregation.

Images are 1 x H x W or H x W arrays; floats are taken to lie in [0, 1]
and are quantized to 8 bits for the histogram-based metrics.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import List

import numpy as np
import pandas as pd
from dataclasses_json import dataclass_json
from scipy.fft import dctn
from scipy.ndimage import convolve
from scipy.stats import entropy as shannon_entropy
from sklearn.metrics import mutual_info_score

from errors import MetricError, NestFuseError, SizeError
from image_io import atomic_output
from losses import ssim_index
from preprocess import to_uint8
from runtime import worker_count

LEVELS = 256
DCT_BLOCK = 8
VIF_SCALES = 4
VIF_MIN_SIZE = 32
VIF_NOISE_VAR = 2.0
VIF_EPS = 1e-10

# Table column names, in report order.
METRIC_COLUMNS = {
    "en": "En",
    "sd": "SD",
    "mi": "MI",
    "fmi_dct": "FMI_dct",
    "fmi_w": "FMI_w",
    "ssim_a": "SSIM_a",
    "vif": "VIF",
}
AVERAGE_ID = "AVERAGE"


@dataclass_json
@dataclass
class MetricsReport:
    pair_id: str
    en: float
    sd: float
    mi: float
    fmi_dct: float
    fmi_w: float
    ssim_a: float
    vif: float

    def values(self):
        return [getattr(self, key) for key in METRIC_COLUMNS]


def _gray(image):
    image = np.asarray(image)
    if image.ndim == 3 and image.shape[0] == 1:
        image = image[0]
    if image.ndim != 2:
        raise SizeError(f"Expected a single-channel image, got shape {image.shape}")
    return image


def _float01(image):
    image = _gray(image)
    if image.dtype == np.uint8:
        return image.astype(np.float64) / 255.0
    return image.astype(np.float64)


def _same_shapes(*images):
    shapes = {np.shape(_gray(image)) for image in images}
    if len(shapes) != 1:
        raise SizeError(f"Image shapes differ: {sorted(shapes)}")


def _entropy_bits(labels):
    counts = np.bincount(np.asarray(labels).ravel())
    return float(shannon_entropy(counts, base=2)) if counts.size else 0.0


def entropy(image):
    """Shannon entropy (bits) of the 256-bin histogram."""
    hist = np.bincount(to_uint8(image).ravel(), minlength=LEVELS)
    return float(shannon_entropy(hist, base=2))


def std_dev(image):
    """Population standard deviation of the 8-bit intensities."""
    return float(np.std(to_uint8(image).astype(np.float64)))


def _mi_bits(a, b):
    return float(mutual_info_score(np.ravel(a), np.ravel(b)) / np.log(2.0))


def mutual_information(a, b):
    """I(A;B) = H(A) + H(B) - H(A,B) in bits over 256-level images."""
    _same_shapes(a, b)
    return _mi_bits(to_uint8(a), to_uint8(b))


def fusion_mi(fused, source1, source2):
    """
    I(F;A) + I(F;B) in bits.

    This is not tied to the entropy of F: values of exactly 2 x En, as some
    published fusion tables report, come from a different MI definition.
    """
    return mutual_information(fused, source1) + mutual_information(fused, source2)


def _crop_to_multiple(image, multiple):
    height, width = image.shape
    if height < multiple or width < multiple:
        raise SizeError(f"Image {height}x{width} is smaller than one {multiple}x{multiple} block")
    return image[:height - height % multiple, :width - width % multiple]


def dct_features(image):
    """Magnitudes of the 8x8 block DCT, laid out like the image."""
    image = _crop_to_multiple(_float01(image), DCT_BLOCK)
    h, w = image.shape
    blocks = image.reshape(h // DCT_BLOCK, DCT_BLOCK, w // DCT_BLOCK, DCT_BLOCK)
    coeffs = dctn(blocks, type=2, axes=(1, 3), norm="ortho")
    return np.abs(coeffs).reshape(h, w)


def wavelet_features(image):
    """Magnitude of the level-1 Haar detail coefficients (LH, HL, HH)."""
    image = _crop_to_multiple(_float01(image), 2)
    a, b = image[0::2, 0::2], image[0::2, 1::2]
    c, d = image[1::2, 0::2], image[1::2, 1::2]
    lh = (a + b - c - d) / 2.0
    hl = (a - b + c - d) / 2.0
    hh = (a - b - c + d) / 2.0
    return np.sqrt(lh ** 2 + hl ** 2 + hh ** 2)


FEATURE_EXTRACTORS = {"dct": dct_features, "wavelet": wavelet_features}


def _feature_levels(feature):
    """Quantize a feature map into 256 levels over its own range."""
    low, high = feature.min(), feature.max()
    if high <= low:
        return np.zeros(feature.shape, dtype=np.int64)
    return np.floor((feature - low) / (high - low) * (LEVELS - 1) + 0.5).astype(np.int64)


def normalized_mi(a, b):
    """2 I(A;B) / (H(A) + H(B)) for integer-labelled maps; 1.0 for equal constant maps."""
    denominator = _entropy_bits(a) + _entropy_bits(b)
    if denominator <= 0:
        return 1.0 if np.array_equal(a, b) else 0.0
    value = 2.0 * _mi_bits(a, b) / denominator
    return float(np.clip(value, 0.0, 1.0))


def fmi(fused, source1, source2, feature="dct"):
    """Feature mutual information, averaged over the two sources."""
    if feature not in FEATURE_EXTRACTORS:
        raise ValueError(f"Unknown FMI feature '{feature}'")
    _same_shapes(fused, source1, source2)
    extract = FEATURE_EXTRACTORS[feature]
    fused_levels = _feature_levels(extract(fused))
    scores = [normalized_mi(fused_levels, _feature_levels(extract(source))) for source in (source1, source2)]
    return float(np.mean(scores))


def ssim_a(fused, source1, source2):
    """Mean SSIM of the fused image against both sources."""
    _same_shapes(fused, source1, source2)
    f = _float01(fused)
    return 0.5 * (float(ssim_index(f, _float01(source1))) + float(ssim_index(f, _float01(source2))))


def _gaussian_kernel(size, sigma):
    radius = (size - 1) / 2.0
    y, x = np.ogrid[-radius:radius + 1, -radius:radius + 1]
    kernel = np.exp(-(x * x + y * y) / (2.0 * sigma * sigma))
    kernel[kernel < np.finfo(kernel.dtype).eps * kernel.max()] = 0
    return kernel / kernel.sum()


def vif_single(reference, distorted):
    """Pixel-domain multi-scale VIF of `distorted` relative to `reference` (0-255 scale)."""
    ref = _float01(reference) * 255.0
    dist = _float01(distorted) * 255.0
    if min(ref.shape) < VIF_MIN_SIZE:
        raise SizeError(f"VIF needs at least {VIF_MIN_SIZE}x{VIF_MIN_SIZE} pixels, got {ref.shape}")
    if np.array_equal(ref, dist) and np.ptp(ref) == 0:
        return 1.0

    numerator = 0.0
    denominator = 0.0
    for scale in range(1, VIF_SCALES + 1):
        size = 2 ** (VIF_SCALES - scale + 1) + 1
        window = _gaussian_kernel(size, size / 5.0)
        if scale > 1:
            ref = convolve(ref, window, mode="reflect")[::2, ::2]
            dist = convolve(dist, window, mode="reflect")[::2, ::2]

        mu1 = convolve(ref, window, mode="reflect")
        mu2 = convolve(dist, window, mode="reflect")
        sigma1_sq = np.maximum(convolve(ref * ref, window, mode="reflect") - mu1 * mu1, 0)
        sigma2_sq = np.maximum(convolve(dist * dist, window, mode="reflect") - mu2 * mu2, 0)
        sigma12 = convolve(ref * dist, window, mode="reflect") - mu1 * mu2

        g = sigma12 / (sigma1_sq + VIF_EPS)
        sv_sq = sigma2_sq - g * sigma12

        flat_ref = sigma1_sq < VIF_EPS
        g[flat_ref] = 0
        sv_sq[flat_ref] = sigma2_sq[flat_ref]
        sigma1_sq[flat_ref] = 0

        flat_dist = sigma2_sq < VIF_EPS
        g[flat_dist] = 0
        sv_sq[flat_dist] = 0

        negative = g < 0
        sv_sq[negative] = sigma2_sq[negative]
        g[negative] = 0
        sv_sq = np.maximum(sv_sq, VIF_EPS)

        numerator += np.sum(np.log10(1.0 + g * g * sigma1_sq / (sv_sq + VIF_NOISE_VAR)))
        denominator += np.sum(np.log10(1.0 + sigma1_sq / VIF_NOISE_VAR))

    if denominator <= 0:
        return 0.0
    return float(numerator / denominator)


def vif(fused, source1, source2):
    """VIF of the fused image, averaged over the two sources."""
    _same_shapes(fused, source1, source2)
    return 0.5 * (vif_single(source1, fused) + vif_single(source2, fused))


def evaluate_pair(fused, source1, source2, pair_id="pair") -> MetricsReport:
    """Compute all seven metrics for one fused image and its sources."""
    try:
        _same_shapes(fused, source1, source2)
        return MetricsReport(
            pair_id=str(pair_id),
            en=entropy(fused),
            sd=std_dev(fused),
            mi=fusion_mi(fused, source1, source2),
            fmi_dct=fmi(fused, source1, source2, "dct"),
            fmi_w=fmi(fused, source1, source2, "wavelet"),
            ssim_a=ssim_a(fused, source1, source2),
            vif=vif(fused, source1, source2),
        )
    except (NestFuseError, ValueError) as e:
        raise MetricError(pair_id, str(e)) from e


def evaluate_pairs(triples, workers=None) -> List[MetricsReport]:
    """
    Evaluate (pair_id, fused, source1, source2) triples, keeping their order.
    """
    triples = list(triples)
    with ThreadPoolExecutor(max_workers=worker_count(workers)) as pool:
        reports = list(pool.map(lambda t: evaluate_pair(t[1], t[2], t[3], pair_id=t[0]), triples))
    logging.info("Evaluated %d image pairs.", len(reports))
    return reports


def aggregate(reports, pair_id=AVERAGE_ID) -> MetricsReport:
    """Arithmetic mean of every metric over the reports."""
    if not reports:
        raise MetricError(pair_id, "No reports to aggregate")
    values = np.array([report.values() for report in reports], dtype=np.float64)
    means = values.mean(axis=0)
    return MetricsReport(pair_id=pair_id, **dict(zip(METRIC_COLUMNS, (float(m) for m in means))))


def reports_frame(reports, include_average=True) -> pd.DataFrame:
    rows = list(reports)
    if include_average and rows:
        rows.append(aggregate(rows))
    frame = pd.DataFrame([asdict(report) for report in rows], columns=["pair_id"] + list(METRIC_COLUMNS))
    return frame.rename(columns={"pair_id": "pair", **METRIC_COLUMNS})


def write_report(reports, path, include_average=True):
    """CSV with one row per pair plus an AVERAGE row; floats to 5 decimals."""
    frame = reports_frame(reports, include_average)
    with atomic_output(path) as tmp:
        frame.to_csv(tmp, index=False, float_format="%.5f")
    logging.info("Metrics report written to %s (%d rows)", path, len(frame))
    return frame
