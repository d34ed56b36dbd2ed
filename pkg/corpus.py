import logging
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from errors import CorpusError, ImageDecodeError
from image_io import list_images, load_image
from preprocess import resize_image
from runtime import worker_count


def load_corpus_image(path, size=256):
    """Load one training image as a size x size float32 array in [0, 1]."""
    try:
        image = load_image(path)[0]
    except ImageDecodeError as e:
        logging.warning("Skipping undecodable corpus file: %s", e)
        return None
    return resize_image(image, size)


def prepare_corpus(directory, size=256, workers=None):
    """
    Decode every image of a directory into gray size x size arrays.

    Parameters:
    directory (str): folder with PNG/JPEG images
    size (int): output side length
    workers (int): decoding threads (forced to 1 in deterministic mode)

    Returns:
    numpy.ndarray: N x size x size float32, in sorted filename order
    """
    paths = list_images(directory)
    if not paths:
        raise CorpusError(f"No images found in corpus directory '{directory}'")

    with ThreadPoolExecutor(max_workers=worker_count(workers)) as pool:
        loaded = list(pool.map(lambda p: load_corpus_image(p, size), paths))

    images = [image for image in loaded if image is not None]
    skipped = len(paths) - len(images)
    if not images:
        raise CorpusError(f"Corpus directory '{directory}' has no decodable images")
    logging.info("Prepared corpus of %d images (%d skipped) at %dx%d.", len(images), skipped, size, size)
    return np.stack(images).astype(np.float32)


def batches_per_epoch(count, batch_size):
    return count // batch_size


def iter_batches(images, batch_size, seed=0):
    """
    Yield N x H x W x 1 batches in a seeded random order.

    The remainder that does not fill a whole batch is dropped.
    """
    images = np.asarray(images, dtype=np.float32)
    order = np.random.default_rng(seed).permutation(len(images))
    for b in range(batches_per_epoch(len(images), batch_size)):
        index = order[b * batch_size:(b + 1) * batch_size]
        yield images[index][..., None]


def generate_sample_corpus(n_samples=16, size=64, seed=0):
    """Generate smooth synthetic gray images for development/testing."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) / size
    images = []
    for _ in range(n_samples):
        image = rng.uniform(-0.5, 0.5) * xx + rng.uniform(-0.5, 0.5) * yy
        for _ in range(rng.integers(3, 8)):
            cy, cx = rng.uniform(0, 1, size=2)
            radius = rng.uniform(0.05, 0.3)
            image += rng.uniform(-1, 1) * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * radius ** 2))
        image += rng.normal(0, 0.02, size=image.shape)
        image -= image.min()
        peak = image.max()
        if peak > 0:
            image /= peak
        images.append(image.astype(np.float32))
    logging.info("Generated %d sample corpus images at %dx%d.", n_samples, size, size)
    return np.stack(images)
