import logging
import os
import tempfile
from contextlib import contextmanager
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from errors import ImageDecodeError
from preprocess import normalize_intensity, quantize, to_grayscale

IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff")


@contextmanager
def atomic_output(path):
    """
    Yield a temporary path next to `path`; rename it over `path` on success.

    Readers never observe a partially written file.
    """
    path = Path(path)
    if path.parent and not path.parent.exists():
        path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(prefix=f".{path.name}.", suffix=path.suffix or ".tmp", dir=path.parent or ".")
    os.close(fd)
    try:
        yield tmp_name
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.remove(tmp_name)
        raise


def _bit_depth_max(mode, array):
    if mode in ("I;16", "I;16B", "I;16L", "I;16N"):
        return 65535.0
    if mode == "I":
        return 65535.0 if array.max(initial=0) > 255 else 255.0
    if mode == "F":
        return 1.0
    return 255.0


def load_image(path):
    """
    Read a PNG/JPEG (any bit depth) as a 1 x H x W float32 image in [0, 1].

    Color images are converted to luminance (0.299R + 0.587G + 0.114B).
    """
    try:
        with Image.open(path) as img:
            img.load()
            mode = img.mode
            if mode == "P":
                img = img.convert("RGBA" if "transparency" in img.info else "RGB")
                mode = img.mode
            elif mode in ("1", "LA"):
                img = img.convert("L")
                mode = "L"
            elif mode in ("CMYK", "YCbCr", "LAB", "HSV"):
                img = img.convert("RGB")
                mode = "RGB"
            array = np.asarray(img)
    except (OSError, UnidentifiedImageError, ValueError) as e:
        raise ImageDecodeError(path, str(e))

    if array.ndim == 3:
        gray = to_grayscale(array)
    else:
        gray = array.astype(np.float64)
    return normalize_intensity(gray, _bit_depth_max(mode, array))[None]


def save_image(image, path):
    """Quantize to 8-bit (round half up) and write a grayscale PNG atomically."""
    image = np.asarray(image)
    if image.ndim == 3:
        image = image[0]
    with atomic_output(path) as tmp:
        Image.fromarray(quantize(image)).save(tmp, format="PNG")
    logging.info("Saved image %s", path)
    return str(path)


def list_images(directory):
    directory = Path(directory)
    if not directory.is_dir():
        return []
    return sorted(
        p for p in directory.iterdir()
        if p.is_file() and p.suffix.lower() in IMAGE_EXTENSIONS
    )


def match_stems(*directories):
    """
    Pair files with the same stem across directories.

    Returns:
    (dict stem -> tuple of paths, sorted list of unmatched stems)
    """
    indexed = [{p.stem: p for p in list_images(d)} for d in directories]
    all_stems = set().union(*indexed) if indexed else set()
    common = set.intersection(*(set(index) for index in indexed)) if indexed else set()
    matched = {stem: tuple(index[stem] for index in indexed) for stem in sorted(common)}
    return matched, sorted(all_stems - common)
