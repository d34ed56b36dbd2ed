import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from datetime import datetime
from typing import List, Optional

from dataclasses_json import dataclass_json

from ablation import AblationConfig, run_ablation
from checkpoint import load_checkpoint
from corpus import generate_sample_corpus
from errors import ConfigurationError, CorpusError, NestFuseError, NumericalError
from fusion import FusionStrategy, PoolingKind
from image_io import load_image, match_stems, save_image
from metrics import AVERAGE_ID, evaluate_pairs, write_report
from monitoring import TrainingMonitor
from pipeline import fuse_images, reconstruct
from runtime import configure_runtime
from training import TrainConfig, train
from visualization import plot_loss_curves

DEFAULT_CONFIG = {
    "report_path": "reports/",
    "model_path": "models/",
    "visualization_path": "visualizations/",
    "monitoring_path": "monitoring/",
    "save_visualizations": True,
    "use_sample_corpus": False,
    "training": {
        "image_size": 256,
        "epochs": 2,
        "batch_size": 4,
        "ssim_weight": 100.0,
        "learning_rate": 1e-4,
        "seed": 0,
        "checkpoint_every": 100,
    },
    "fusion": {
        "pooling": "avg",
        "strategy": "attention",
    },
    "evaluation": {
        "pair_dirs": ["ir", "vis"],
        "workers": None,
    },
    "monitoring": {
        "enabled": True,
        "alert_thresholds": {
            "cpu_usage": 90,
            "memory_usage": 90,
        },
    },
}


@dataclass_json
@dataclass
class RunConfig:
    """Paths and fusion settings of one inference/evaluation command."""
    inputs: List[str] = field(default_factory=list)
    output: Optional[str] = None
    checkpoint: Optional[str] = None
    report: Optional[str] = None
    pooling: str = PoolingKind.AVG.value
    strategy: str = FusionStrategy.ATTENTION.value
    output_head: Optional[int] = None

    def validate(self):
        """Check every path before any computation begins"""
        if self.checkpoint is not None and not os.path.isfile(self.checkpoint):
            raise ConfigurationError(f"Checkpoint not found: {self.checkpoint}")
        missing = [path for path in self.inputs if not os.path.exists(path)]
        if missing:
            raise ConfigurationError(f"Input paths not found: {missing}")
        for target in (self.output, self.report):
            if target is not None and os.path.isdir(target):
                raise ConfigurationError(f"Output path is a directory: {target}")
        PoolingKind.parse(self.pooling)
        FusionStrategy.parse(self.strategy)
        if self.output_head is not None and self.output_head not in (1, 2, 3):
            raise ConfigurationError(f"Output head must be 1, 2 or 3, got {self.output_head}")
        return True


def load_config(config_file="config.json"):
    """Load configuration from JSON file"""
    try:
        with open(config_file, 'r') as f:
            config = json.load(f)
    except FileNotFoundError:
        config_dir = os.path.dirname(config_file)
        if config_dir:
            os.makedirs(config_dir, exist_ok=True)
        with open(config_file, 'w') as f:
            json.dump(DEFAULT_CONFIG, f, indent=4)
        return json.loads(json.dumps(DEFAULT_CONFIG))
    except json.JSONDecodeError as e:
        raise ConfigurationError(f"Invalid configuration file {config_file}: {e}")

    merged = json.loads(json.dumps(DEFAULT_CONFIG))
    for key, value in config.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key].update(value)
        else:
            merged[key] = value
    return merged


def setup_directories(config):
    """Create necessary directories"""
    for path in [config["visualization_path"],
                 config["report_path"],
                 config["model_path"],
                 config["monitoring_path"]]:
        os.makedirs(path, exist_ok=True)


def setup_logging(config):
    log_file = os.path.join(config["report_path"], "application.log")
    logging.basicConfig(
        level=logging.INFO,
        format='%(asctime)s - %(levelname)s - %(message)s',
        handlers=[
            logging.FileHandler(log_file),
            logging.StreamHandler()
        ]
    )


def generate_report(report_text, config, report_type="general"):
    """Generate timestamped reports"""
    timestamp = datetime.now().strftime("%Y%m%d_%H%M%S_%f")
    report_file = os.path.join(
        config["report_path"],
        f"{report_type}_report_{timestamp}.txt"
    )

    with open(report_file, "w") as file:
        file.write("NestFuse Report\n")
        file.write(f"Generated: {datetime.now().strftime('%Y-%m-%d %H:%M:%S')}\n")
        file.write("-" * 50 + "\n\n")
        file.write(report_text + "\n")

    logging.info("Report generated: %s", report_file)
    return report_file


def _float_list(text):
    try:
        return [float(item) for item in text.split(",") if item.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got '{text}'")


def _name_list(text):
    return [item.strip() for item in text.split(",") if item.strip()]


def build_parser():
    parser = argparse.ArgumentParser(prog="nestfuse", description="Infrared/visible image fusion with NestFuse")
    parser.add_argument("--config", default="config.json", help="configuration file")
    commands = parser.add_subparsers(dest="command", required=True)

    def add_training_flags(sub):
        sub.add_argument("--corpus", help="directory of training images")
        sub.add_argument("--lambda", dest="ssim_weight", type=float, help="SSIM loss weight (> 0)")
        sub.add_argument("--epochs", type=int)
        sub.add_argument("--batch", dest="batch_size", type=int)
        sub.add_argument("--lr", dest="learning_rate", type=float)
        sub.add_argument("--seed", type=int)
        sub.add_argument("--image-size", dest="image_size", type=int)
        sub.add_argument("--checkpoint-every", dest="checkpoint_every", type=int)

    train_cmd = commands.add_parser("train", help="train the auto-encoder")
    add_training_flags(train_cmd)
    train_cmd.add_argument("--out", required=True, help="checkpoint path")
    train_cmd.add_argument("--deep-supervision", dest="deep_supervision", action="store_true")
    train_cmd.add_argument("--loss-csv", dest="loss_csv", help="loss history CSV (default: next to the checkpoint)")

    fuse_cmd = commands.add_parser("fuse", help="fuse two registered images")
    fuse_cmd.add_argument("--ckpt", required=True)
    fuse_cmd.add_argument("--a", required=True, help="first source (infrared)")
    fuse_cmd.add_argument("--b", required=True, help="second source (visible)")
    fuse_cmd.add_argument("--out", required=True)
    fuse_cmd.add_argument("--pooling", choices=[kind.value for kind in PoolingKind])
    fuse_cmd.add_argument("--strategy", choices=[kind.value for kind in FusionStrategy])
    fuse_cmd.add_argument("--output-head", dest="output_head", type=int, choices=[1, 2, 3])

    reconstruct_cmd = commands.add_parser("reconstruct", help="encode and decode one image")
    reconstruct_cmd.add_argument("--ckpt", required=True)
    reconstruct_cmd.add_argument("--input", required=True)
    reconstruct_cmd.add_argument("--out", required=True)
    reconstruct_cmd.add_argument("--output-head", dest="output_head", type=int, choices=[1, 2, 3])

    eval_cmd = commands.add_parser("eval", help="score fused images against their sources")
    eval_cmd.add_argument("--pairs", required=True, help="directory holding the source subdirectories")
    eval_cmd.add_argument("--fused", required=True)
    eval_cmd.add_argument("--report", required=True, help="CSV report path")
    eval_cmd.add_argument("--workers", type=int)

    ablate_cmd = commands.add_parser("ablate", help="lambda x pooling (and deep supervision) ablation")
    add_training_flags(ablate_cmd)
    ablate_cmd.add_argument("--pairs", required=True)
    ablate_cmd.add_argument("--lambdas", type=_float_list, default=[1.0, 10.0, 100.0, 1000.0])
    ablate_cmd.add_argument("--poolings", type=_name_list, default=[kind.value for kind in PoolingKind])
    ablate_cmd.add_argument("--deep-supervision", dest="deep_supervision", action="store_true")
    ablate_cmd.add_argument("--out", help="output directory (default: <model_path>/ablation)")
    ablate_cmd.add_argument("--workers", type=int)
    return parser


TRAIN_FLAGS = ("image_size", "epochs", "batch_size", "ssim_weight", "learning_rate", "seed", "checkpoint_every")


def build_train_config(args, config) -> TrainConfig:
    """Built-in defaults, overridden by config.json, overridden by CLI flags."""
    values = TrainConfig().to_dict()
    values.update({k: v for k, v in config.get("training", {}).items() if k in TRAIN_FLAGS})
    for name in TRAIN_FLAGS:
        value = getattr(args, name, None)
        if value is not None:
            values[name] = value
    values["corpus_dir"] = getattr(args, "corpus", None)
    values["deep_supervision"] = bool(getattr(args, "deep_supervision", False))
    if args.command == "train":
        values["checkpoint_path"] = args.out
    train_config = TrainConfig(**values)
    train_config.validate()
    return train_config


def _training_images(train_config: TrainConfig, config):
    """None means: load the corpus directory inside train()."""
    if train_config.corpus_dir:
        if not os.path.isdir(train_config.corpus_dir):
            raise CorpusError(f"Corpus directory not found: {train_config.corpus_dir}")
        return None
    if config.get("use_sample_corpus"):
        logging.info("No corpus given; training on the generated sample corpus.")
        return generate_sample_corpus(size=train_config.image_size, seed=train_config.seed)
    raise ConfigurationError("--corpus is required (or set use_sample_corpus in the configuration)")


def _loss_csv_path(args):
    if args.loss_csv:
        return args.loss_csv
    return os.path.splitext(args.out)[0] + "_loss.csv"


def cmd_train(args, config):
    train_config = build_train_config(args, config)
    images = _training_images(train_config, config)

    logging.info("Training auto-encoder -> %s", train_config.checkpoint_path)
    monitor = TrainingMonitor(config)
    try:
        result = train(train_config, images=images, monitor=monitor)
    finally:
        monitor.save_loss_history(_loss_csv_path(args))
    if config.get("monitoring", {}).get("enabled", True):
        monitor.save_metrics()

    if config["save_visualizations"]:
        plot_path = os.path.join(
            config["visualization_path"],
            f"loss_curves_{datetime.now().strftime('%Y%m%d_%H%M%S')}.png"
        )
        plot_loss_curves(result.history, plot_path)

    generate_report(
        f"Training: {result.iterations} iterations, checkpoint {train_config.checkpoint_path}\n"
        f"Settings: {train_config.to_json()}\n\n" + monitor.generate_report(),
        config,
        "training"
    )
    return 0


def _fusion_settings(args, config):
    fusion_config = config.get("fusion", {})
    pooling = getattr(args, "pooling", None) or fusion_config.get("pooling", PoolingKind.AVG.value)
    strategy = getattr(args, "strategy", None) or fusion_config.get("strategy", FusionStrategy.ATTENTION.value)
    return pooling, strategy


def cmd_fuse(args, config):
    pooling, strategy = _fusion_settings(args, config)
    run = RunConfig(
        inputs=[args.a, args.b], output=args.out, checkpoint=args.ckpt,
        pooling=pooling, strategy=strategy, output_head=args.output_head,
    )
    run.validate()

    state = load_checkpoint(run.checkpoint, deep_supervision=run.output_head is not None)
    image_a, image_b = load_image(args.a), load_image(args.b)
    fused = fuse_images(
        image_a, image_b, state,
        pooling=PoolingKind.parse(run.pooling),
        strategy=FusionStrategy.parse(run.strategy),
        output_head=run.output_head,
    )
    save_image(fused, run.output)
    generate_report(
        f"Fusion: {args.a} + {args.b} -> {run.output}\n"
        f"Pooling: {run.pooling}, strategy: {run.strategy}, output head: {run.output_head or 'final'}",
        config,
        "fusion"
    )
    return 0


def cmd_reconstruct(args, config):
    run = RunConfig(inputs=[args.input], output=args.out, checkpoint=args.ckpt, output_head=args.output_head)
    run.validate()

    state = load_checkpoint(run.checkpoint, deep_supervision=run.output_head is not None)
    save_image(reconstruct(load_image(args.input), state, run.output_head), run.output)
    generate_report(f"Reconstruction: {args.input} -> {run.output}", config, "reconstruction")
    return 0


def cmd_eval(args, config):
    evaluation = config.get("evaluation", {})
    pair_dirs = evaluation.get("pair_dirs", ["ir", "vis"])
    source_dirs = [os.path.join(args.pairs, name) for name in pair_dirs]
    run = RunConfig(inputs=source_dirs + [args.fused], report=args.report)
    run.validate()

    matched, unmatched = match_stems(*source_dirs, args.fused)
    for stem in unmatched:
        logging.warning("Unmatched filename skipped: %s", stem)
    if not matched:
        raise CorpusError(f"No matched pairs between {source_dirs} and {args.fused}")

    triples = [
        (stem, load_image(fused), load_image(first), load_image(second))
        for stem, (first, second, fused) in matched.items()
    ]
    reports = evaluate_pairs(triples, args.workers or evaluation.get("workers"))
    frame = write_report(reports, run.report)

    average = frame[frame["pair"] == AVERAGE_ID]
    generate_report(
        f"Evaluation: {len(reports)} pairs ({len(unmatched)} unmatched skipped)\n"
        f"Report: {run.report}\n\n" + average.to_string(index=False),
        config,
        "evaluation"
    )
    return 0


def cmd_ablate(args, config):
    train_config = build_train_config(args, config)
    images = _training_images(train_config, config)
    evaluation = config.get("evaluation", {})
    ablation = AblationConfig(
        pairs_dir=args.pairs,
        out_dir=args.out or os.path.join(config["model_path"], "ablation"),
        lambdas=args.lambdas,
        poolings=args.poolings,
        deep_supervision=args.deep_supervision,
        pair_dirs=list(evaluation.get("pair_dirs", ["ir", "vis"])),
        workers=args.workers or evaluation.get("workers"),
        train=train_config,
    )
    result = run_ablation(ablation, images=images)

    text = "Lambda x pooling grid:\n" + result.lambda_grid.to_string(index=False, float_format="%.5f")
    if result.deep_supervision_grid is not None:
        text += "\n\nDeep supervision grid:\n" + result.deep_supervision_grid.to_string(
            index=False, float_format="%.5f"
        )
    generate_report(text, config, "ablation")
    return 0


COMMANDS = {
    "train": cmd_train,
    "fuse": cmd_fuse,
    "reconstruct": cmd_reconstruct,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
}


def main(argv=None):
    """Run one CLI command; returns the process exit code (0, 1, 2 or 3)."""
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args.config)
        setup_directories(config)
        setup_logging(config)
        configure_runtime()

        logging.info("Starting NestFuse command '%s'", args.command)
        code = COMMANDS[args.command](args, config)
        logging.info("NestFuse command '%s' complete", args.command)
        return code

    except NumericalError as e:
        logging.error("Numerical error: %s", str(e))
        return e.exit_code
    except ConfigurationError as e:
        logging.error("Configuration error: %s", str(e))
        return e.exit_code
    except NestFuseError as e:
        logging.error("%s: %s", type(e).__name__, str(e))
        return e.exit_code
    except Exception as e:
        logging.exception("Unexpected error: %s", str(e))
        return 1


if __name__ == "__main__":
    sys.exit(main())
