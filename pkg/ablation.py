"""
Ablation sweeps: one model per SSIM weight (lambda), every test pair fused
with every pooling operator, and optionally a deep-supervised model whose
three outputs are compared with the plain model.
"""
import logging
import os
from dataclasses import dataclass, field, replace
from typing import List, Optional

import numpy as np
import pandas as pd
from dataclasses_json import dataclass_json

from errors import ConfigurationError, CorpusError
from fusion import PoolingKind
from image_io import atomic_output, load_image, match_stems, save_image
from metrics import METRIC_COLUMNS, aggregate, evaluate_pairs
from pipeline import fuse_images
from preprocess import quantize
from training import LAMBDA_GRID, TrainConfig, train

DEEP_SUPERVISION_LAMBDA = 100.0
BASELINE_LABEL = "w/o deep supervision"


@dataclass_json
@dataclass
class AblationConfig:
    pairs_dir: str
    out_dir: str
    lambdas: List[float] = field(default_factory=lambda: list(LAMBDA_GRID))
    poolings: List[str] = field(default_factory=lambda: [kind.value for kind in PoolingKind])
    deep_supervision: bool = False
    pair_dirs: List[str] = field(default_factory=lambda: ["ir", "vis"])
    workers: Optional[int] = None
    train: TrainConfig = field(default_factory=TrainConfig)

    def validate(self):
        if not self.lambdas:
            raise ConfigurationError("At least one lambda is required")
        if any(not value > 0 for value in self.lambdas):
            raise ConfigurationError(f"All lambdas must be > 0, got {self.lambdas}")
        if not self.poolings:
            raise ConfigurationError("At least one pooling operator is required")
        for kind in self.poolings:
            PoolingKind.parse(kind)
        if len(self.pair_dirs) != 2:
            raise ConfigurationError(f"Expected two pair subdirectories, got {self.pair_dirs}")
        self.train.validate()
        return True


@dataclass
class AblationResult:
    lambda_grid: pd.DataFrame
    deep_supervision_grid: Optional[pd.DataFrame] = None


def load_test_pairs(pairs_dir, pair_dirs=("ir", "vis")):
    """Load (stem, source1, source2) for every stem present in both subdirectories."""
    matched, unmatched = match_stems(*(os.path.join(pairs_dir, name) for name in pair_dirs))
    for stem in unmatched:
        logging.warning("Unmatched test image skipped: %s", stem)
    if not matched:
        raise CorpusError(f"No matched image pairs under '{pairs_dir}' ({', '.join(pair_dirs)})")
    return [(stem, load_image(a), load_image(b)) for stem, (a, b) in matched.items()]


def _format_lambda(value):
    return f"{value:g}"


def _evaluate_setting(state, pairs, pooling, output_head, fused_dir, workers):
    triples = []
    for stem, source1, source2 in pairs:
        fused = quantize(fuse_images(source1, source2, state, pooling, output_head=output_head))
        if fused_dir:
            save_image(fused.astype(np.float64) / 255.0, os.path.join(fused_dir, f"{stem}.png"))
        triples.append((stem, fused, source1, source2))
    return aggregate(evaluate_pairs(triples, workers))


def _row(labels, report):
    row = dict(labels)
    row.update({column: getattr(report, key) for key, column in METRIC_COLUMNS.items()})
    return row


def _write_grid(frame, path):
    with atomic_output(path) as tmp:
        frame.to_csv(tmp, index=False, float_format="%.5f")
    logging.info("Ablation grid written to %s (%d rows)", path, len(frame))


def run_ablation(config: AblationConfig, images=None) -> AblationResult:
    """
    Train one model per lambda and evaluate every (lambda, pooling) cell.

    Training runs sequentially; per-pair evaluation may use worker threads.
    """
    config.validate()
    os.makedirs(config.out_dir, exist_ok=True)
    pairs = load_test_pairs(config.pairs_dir, config.pair_dirs)
    poolings = [PoolingKind.parse(kind) for kind in config.poolings]

    rows = []
    states = {}
    for value in config.lambdas:
        label = _format_lambda(value)
        train_config = replace(
            config.train,
            ssim_weight=float(value),
            deep_supervision=False,
            checkpoint_path=os.path.join(config.out_dir, f"nestfuse_lambda{label}.ckpt"),
        )
        logging.info("Ablation: training with lambda=%s", label)
        states[value] = train(train_config, images=images).state
        for kind in poolings:
            fused_dir = os.path.join(config.out_dir, "fused", f"lambda{label}_{kind.value}")
            report = _evaluate_setting(states[value], pairs, kind, None, fused_dir, config.workers)
            rows.append(_row({"lambda": value, "pooling": kind.value}, report))
    lambda_grid = pd.DataFrame(rows, columns=["lambda", "pooling"] + list(METRIC_COLUMNS.values()))
    _write_grid(lambda_grid, os.path.join(config.out_dir, "ablation_lambda.csv"))

    deep_grid = None
    if config.deep_supervision:
        value = DEEP_SUPERVISION_LAMBDA if DEEP_SUPERVISION_LAMBDA in config.lambdas else config.lambdas[0]
        label = _format_lambda(value)
        train_config = replace(
            config.train,
            ssim_weight=float(value),
            deep_supervision=True,
            checkpoint_path=os.path.join(config.out_dir, f"nestfuse_deep_lambda{label}.ckpt"),
        )
        logging.info("Ablation: training deep-supervised model with lambda=%s", label)
        deep_state = train(train_config, images=images).state

        rows = []
        for head in (1, 2, 3):
            for kind in poolings:
                fused_dir = os.path.join(config.out_dir, "fused", f"deep_O{head}_{kind.value}")
                report = _evaluate_setting(deep_state, pairs, kind, head, fused_dir, config.workers)
                rows.append(_row({"output": f"O{head}", "pooling": kind.value}, report))
        for kind in poolings:
            report = _evaluate_setting(states[value], pairs, kind, None, None, config.workers)
            rows.append(_row({"output": BASELINE_LABEL, "pooling": kind.value}, report))
        deep_grid = pd.DataFrame(rows, columns=["output", "pooling"] + list(METRIC_COLUMNS.values()))
        _write_grid(deep_grid, os.path.join(config.out_dir, "ablation_deep_supervision.csv"))

    return AblationResult(lambda_grid=lambda_grid, deep_supervision_grid=deep_grid)
