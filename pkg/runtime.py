import logging
import os

import tensorflow as tf

DETERMINISTIC_ENV = "NESTFUSE_DETERMINISTIC"


def deterministic_mode():
    """True when NESTFUSE_DETERMINISTIC=1 is set in the environment."""
    return os.environ.get(DETERMINISTIC_ENV, "0").strip() == "1"


def worker_count(requested=None):
    """Number of worker threads for decoding/evaluation pools."""
    if deterministic_mode():
        return 1
    if requested:
        return max(1, int(requested))
    return min(8, os.cpu_count() or 1)


def configure_runtime(deterministic=None):
    """
    Apply the threading/determinism settings to TensorFlow.

    Must run before the first TensorFlow op; afterwards the thread pools
    are fixed and only a warning is logged.
    """
    if deterministic is None:
        deterministic = deterministic_mode()
    if not deterministic:
        return False

    try:
        tf.config.threading.set_intra_op_parallelism_threads(1)
        tf.config.threading.set_inter_op_parallelism_threads(1)
    except RuntimeError as e:
        logging.warning("Could not switch TensorFlow to single-threaded mode: %s", e)
    tf.config.experimental.enable_op_determinism()
    logging.info("Deterministic mode enabled (single-threaded, deterministic ops).")
    return True
