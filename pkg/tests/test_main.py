import json
import logging
import os
import shutil
import tempfile
import unittest
from io import StringIO
from unittest.mock import MagicMock, patch

import numpy as np
import pandas as pd
import tensorflow as tf
from PIL import Image

from checkpoint import save_checkpoint
from errors import ConfigurationError, NumericalError
from main import (
    DEFAULT_CONFIG,
    RunConfig,
    build_parser,
    build_train_config,
    generate_report,
    load_config,
    main,
    setup_directories,
)
from network import init_network


def nan_losses(*args, **kwargs):
    nan = tf.constant(float("nan"))
    return nan, nan, nan


class TestMainOrchestration(unittest.TestCase):
    def setUp(self):
        """Set up test environment"""
        self.test_dir = tempfile.mkdtemp()
        self.test_config = {
            "report_path": self.path("reports") + "/",
            "model_path": self.path("models") + "/",
            "visualization_path": self.path("visualizations") + "/",
            "monitoring_path": self.path("monitoring") + "/",
            "save_visualizations": False,
            "use_sample_corpus": True,
            "training": {"image_size": 32, "epochs": 1, "batch_size": 4, "checkpoint_every": 0},
        }
        self.config_file = self.path("config.json")
        with open(self.config_file, "w") as f:
            json.dump(self.test_config, f)

        self.log_output = StringIO()
        self.log_handler = logging.StreamHandler(self.log_output)
        logging.getLogger().addHandler(self.log_handler)
        logging.getLogger().setLevel(logging.INFO)

    def tearDown(self):
        """Clean up test environment"""
        logging.getLogger().removeHandler(self.log_handler)
        self.log_output.close()
        shutil.rmtree(self.test_dir)

    def path(self, *parts):
        return os.path.join(self.test_dir, *parts)

    def run_cli(self, *argv):
        return main(["--config", self.config_file] + list(argv))

    def write_png(self, path, array):
        os.makedirs(os.path.dirname(path), exist_ok=True)
        Image.fromarray(np.asarray(array, dtype=np.uint8)).save(path)

    def random_png(self, path, seed, shape=(32, 32)):
        rng = np.random.default_rng(seed)
        yy, xx = np.mgrid[0:shape[0], 0:shape[1]]
        base = 128 + 80 * np.sin(xx / (3.0 + seed)) * np.cos(yy / 4.0)
        self.write_png(path, np.clip(base + rng.normal(0, 10, shape), 0, 255))

    def checkpoint(self):
        path = self.path("models", "nestfuse.ckpt")
        save_checkpoint(init_network(seed=0), path)
        return path

    def test_load_config(self):
        """Test configuration loading"""
        config = load_config(self.config_file)
        self.assertEqual(config["report_path"], self.test_config["report_path"])
        self.assertEqual(config["training"]["image_size"], 32)
        self.assertEqual(config["training"]["ssim_weight"], 100.0)
        self.assertEqual(config["fusion"]["pooling"], "avg")

        # Test creating default config
        missing = self.path("nested", "config.json")
        config = load_config(missing)
        self.assertTrue(os.path.exists(missing))
        self.assertEqual(config, DEFAULT_CONFIG)

        with open(self.config_file, "w") as f:
            f.write("{not json")
        with self.assertRaises(ConfigurationError):
            load_config(self.config_file)

    def test_setup_directories(self):
        """Test directory creation"""
        setup_directories(self.test_config)
        for key in ("report_path", "model_path", "visualization_path", "monitoring_path"):
            self.assertTrue(os.path.isdir(self.test_config[key]))

    def test_generate_report(self):
        """Test report generation"""
        setup_directories(self.test_config)
        report_file = generate_report("Test report content", self.test_config, "test")
        self.assertTrue(os.path.exists(report_file))
        with open(report_file, 'r') as f:
            content = f.read()
        self.assertIn("Test report content", content)
        self.assertIn("NestFuse Report", content)

    def test_build_train_config(self):
        """Test defaults, config values and CLI overrides"""
        parser = build_parser()
        args = parser.parse_args(["train", "--corpus", "data", "--out", "m.ckpt"])
        config = build_train_config(args, {"training": {}})
        self.assertEqual((config.ssim_weight, config.epochs, config.batch_size), (100.0, 2, 4))
        self.assertEqual(config.learning_rate, 1e-4)
        self.assertEqual(config.checkpoint_path, "m.ckpt")

        config = build_train_config(args, {"training": {"epochs": 5, "seed": 3}})
        self.assertEqual((config.epochs, config.seed), (5, 3))

        args = parser.parse_args(["train", "--out", "m.ckpt", "--epochs", "7", "--lambda", "10", "--deep-supervision"])
        config = build_train_config(args, {"training": {"epochs": 5}})
        self.assertEqual((config.epochs, config.ssim_weight, config.deep_supervision), (7, 10.0, True))

        args = parser.parse_args(["train", "--out", "m.ckpt", "--lambda", "0.0"])
        with self.assertRaises(ConfigurationError):
            build_train_config(args, {})

    def test_run_config_validation(self):
        """Test that paths are checked before any computation"""
        with self.assertRaises(ConfigurationError):
            RunConfig(inputs=[self.path("absent.png")]).validate()
        with self.assertRaises(ConfigurationError):
            RunConfig(checkpoint=self.path("absent.ckpt")).validate()
        with self.assertRaises(ConfigurationError):
            RunConfig(pooling="median").validate()
        self.assertTrue(RunConfig(inputs=[self.test_dir], output=self.path("f.png")).validate())

    def test_train_command(self):
        """Test training on the sample corpus"""
        ckpt = self.path("out", "model.ckpt")
        self.assertEqual(self.run_cli("train", "--out", ckpt), 0)
        self.assertTrue(os.path.exists(ckpt))
        history = pd.read_csv(self.path("out", "model_loss.csv"))
        self.assertEqual(list(history.columns), ["iteration", "pixel", "ssim", "total"])
        self.assertEqual(len(history), 4)
        reports = os.listdir(self.test_config["report_path"])
        self.assertTrue(any(name.startswith("training_report_") for name in reports))

    def test_train_loss_plot(self):
        """Test the loss-curve figure when visualizations are enabled"""
        self.test_config["save_visualizations"] = True
        with open(self.config_file, "w") as f:
            json.dump(self.test_config, f)
        self.assertEqual(self.run_cli("train", "--out", self.path("model.ckpt")), 0)
        plots = os.listdir(self.test_config["visualization_path"])
        self.assertEqual(len(plots), 1)
        self.assertTrue(plots[0].startswith("loss_curves_"))

    def test_train_deterministic(self):
        """Test that two seeded runs write identical loss CSVs"""
        with patch.dict(os.environ, {"NESTFUSE_DETERMINISTIC": "1"}):
            for name in ("a", "b"):
                self.assertEqual(self.run_cli(
                    "train", "--out", self.path(f"{name}.ckpt"), "--loss-csv", self.path(f"{name}.csv"), "--seed", "4"
                ), 0)
        with open(self.path("a.csv"), "rb") as a, open(self.path("b.csv"), "rb") as b:
            self.assertEqual(a.read(), b.read())

    def test_train_errors(self):
        """Test user errors and numerical aborts"""
        self.assertEqual(self.run_cli("train", "--out", self.path("m.ckpt"), "--lambda", "0.0"), 2)
        self.assertEqual(self.run_cli("train", "--out", self.path("m.ckpt"), "--corpus", self.path("missing")), 2)
        with patch("training.batch_losses", side_effect=nan_losses):
            self.assertEqual(self.run_cli("train", "--out", self.path("m.ckpt")), 3)
        self.assertIn("Numerical error", self.log_output.getvalue())
        aborted = pd.read_csv(self.path("m_loss.csv"))
        self.assertEqual(len(aborted), 1)
        self.assertTrue(aborted["total"].isna().all())

        self.test_config["use_sample_corpus"] = False
        with open(self.config_file, "w") as f:
            json.dump(self.test_config, f)
        self.assertEqual(self.run_cli("train", "--out", self.path("m.ckpt")), 2)
        self.assertEqual(NumericalError.exit_code, 3)

    def test_fuse_command(self):
        """Test fusion of two images"""
        ckpt = self.checkpoint()
        self.random_png(self.path("ir", "01.png"), 1)
        self.random_png(self.path("vis", "01.png"), 2)
        for pooling in ("avg", "max", "nuclear"):
            with self.subTest(pooling=pooling):
                out = self.path("fused", f"{pooling}.png")
                code = self.run_cli(
                    "fuse", "--ckpt", ckpt, "--a", self.path("ir", "01.png"), "--b", self.path("vis", "01.png"),
                    "--out", out, "--pooling", pooling,
                )
                self.assertEqual(code, 0)
                with Image.open(out) as image:
                    self.assertEqual(image.size, (32, 32))
                    self.assertEqual(image.mode, "L")

    def test_fuse_identity(self):
        """Test that fusing an image with itself matches its reconstruction"""
        ckpt = self.checkpoint()
        source = self.path("ir", "01.png")
        self.random_png(source, 3, shape=(30, 40))
        self.assertEqual(self.run_cli(
            "fuse", "--ckpt", ckpt, "--a", source, "--b", source, "--out", self.path("fused.png")
        ), 0)
        self.assertEqual(self.run_cli(
            "reconstruct", "--ckpt", ckpt, "--input", source, "--out", self.path("recon.png")
        ), 0)
        with Image.open(self.path("fused.png")) as fused, Image.open(self.path("recon.png")) as recon:
            np.testing.assert_array_equal(np.asarray(fused), np.asarray(recon))

    def test_fuse_errors(self):
        """Test size mismatch, missing inputs and bad flags"""
        ckpt = self.checkpoint()
        self.random_png(self.path("ir", "01.png"), 1)
        self.random_png(self.path("vis", "01.png"), 2, shape=(32, 48))
        out = self.path("fused.png")
        code = self.run_cli("fuse", "--ckpt", ckpt, "--a", self.path("ir", "01.png"),
                            "--b", self.path("vis", "01.png"), "--out", out)
        self.assertEqual(code, 2)
        self.assertFalse(os.path.exists(out))

        code = self.run_cli("fuse", "--ckpt", ckpt, "--a", self.path("ir", "01.png"),
                            "--b", self.path("vis", "02.png"), "--out", out)
        self.assertEqual(code, 2)

        with self.assertRaises(SystemExit) as cm:
            self.run_cli("fuse", "--ckpt", ckpt, "--a", "x", "--b", "y", "--out", out, "--pooling", "median")
        self.assertEqual(cm.exception.code, 2)

    def test_eval_command(self):
        """Test evaluation with an unmatched file"""
        for i in range(1, 4):
            self.random_png(self.path("pairs", "ir", f"0{i}.png"), i)
            self.random_png(self.path("pairs", "vis", f"0{i}.png"), i + 10)
            self.random_png(self.path("fused", f"0{i}.png"), i + 20)
        self.random_png(self.path("pairs", "ir", "04.png"), 4)

        report = self.path("metrics.csv")
        self.assertEqual(self.run_cli("eval", "--pairs", self.path("pairs"), "--fused", self.path("fused"),
                                      "--report", report, "--workers", "2"), 0)
        frame = pd.read_csv(report, dtype={"pair": str})
        self.assertEqual(frame["pair"].tolist(), ["01", "02", "03", "AVERAGE"])
        self.assertIn("Unmatched filename skipped: 04", self.log_output.getvalue())

        with open(report, "rb") as f:
            first = f.read()
        self.run_cli("eval", "--pairs", self.path("pairs"), "--fused", self.path("fused"), "--report", report)
        with open(report, "rb") as f:
            self.assertEqual(f.read(), first)

    def test_eval_empty(self):
        """Test evaluation with nothing to match"""
        self.random_png(self.path("pairs", "ir", "01.png"), 1)
        self.random_png(self.path("pairs", "vis", "01.png"), 2)
        os.makedirs(self.path("fused"))
        code = self.run_cli("eval", "--pairs", self.path("pairs"), "--fused", self.path("fused"),
                            "--report", self.path("metrics.csv"))
        self.assertEqual(code, 2)
        self.assertFalse(os.path.exists(self.path("metrics.csv")))

    def test_ablate_command(self):
        """Test the ablation command end to end with stubbed training"""
        for i in range(1, 3):
            self.random_png(self.path("pairs", "ir", f"0{i}.png"), i)
            self.random_png(self.path("pairs", "vis", f"0{i}.png"), i + 10)

        def fake_train(config, images=None):
            return MagicMock(state=init_network(seed=0, deep_supervision=config.deep_supervision))

        out = self.path("ablation")
        with patch("ablation.train", side_effect=fake_train):
            code = self.run_cli("ablate", "--pairs", self.path("pairs"), "--lambdas", "10,100",
                                "--poolings", "avg,max", "--deep-supervision", "--out", out)
        self.assertEqual(code, 0)
        self.assertEqual(len(pd.read_csv(os.path.join(out, "ablation_lambda.csv"))), 4)
        self.assertEqual(len(pd.read_csv(os.path.join(out, "ablation_deep_supervision.csv"))), 8)

    def test_unexpected_error(self):
        """Test that unexpected failures exit with 1"""
        with patch.dict("main.COMMANDS", {"eval": MagicMock(side_effect=RuntimeError("boom"))}):
            code = self.run_cli("eval", "--pairs", "p", "--fused", "f", "--report", "r.csv")
        self.assertEqual(code, 1)
        self.assertIn("Unexpected error: boom", self.log_output.getvalue())


if __name__ == '__main__':
    unittest.main()
