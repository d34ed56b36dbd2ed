import os
import shutil
import tempfile
import unittest
from datetime import datetime

import pandas as pd

from losses import LossBreakdown
from monitoring import SystemMetrics, TrainingMonitor


class TestMonitoring(unittest.TestCase):
    def setUp(self):
        """Set up test environment"""
        self.test_dir = tempfile.mkdtemp()
        self.test_config = {
            "monitoring_path": os.path.join(self.test_dir, "monitoring"),
            "monitoring": {
                "enabled": True,
                "alert_thresholds": {"cpu_usage": 80, "memory_usage": 85},
            },
        }
        self.monitoring = TrainingMonitor(self.test_config)

    def tearDown(self):
        """Clean up test environment"""
        shutil.rmtree(self.test_dir)

    def test_thresholds_from_config(self):
        """Test alert thresholds are read from the configuration"""
        self.assertEqual(self.monitoring.cpu_threshold, 80)
        self.assertEqual(self.monitoring.memory_threshold, 85)
        self.assertEqual(TrainingMonitor().cpu_threshold, 90)

    def test_capture_system_metrics(self):
        """Test system metrics capture"""
        metrics = self.monitoring.capture_system_metrics(iteration=5)
        self.assertIsInstance(metrics, SystemMetrics)
        self.assertTrue(0 <= metrics.cpu_usage <= 100)
        self.assertTrue(0 <= metrics.memory_usage <= 100)
        self.assertGreater(metrics.process_memory_mb, 0)
        self.assertIn(5, self.monitoring.system_metrics)

    def test_record_loss(self):
        """Test loss history recording"""
        for i in range(1, 4):
            self.monitoring.record_loss(i, LossBreakdown.from_terms(1.0 / i, 0.1, 100))
        history = self.monitoring.history()
        self.assertEqual(list(history.columns), ["iteration", "pixel", "ssim", "total"])
        self.assertEqual(len(history), 3)
        self.assertAlmostEqual(history["total"].iloc[0], 11.0)

    def test_save_loss_history(self):
        """Test loss CSV writing"""
        self.monitoring.record_loss(1, LossBreakdown.from_terms(2.0, 0.5, 10))
        path = os.path.join(self.test_dir, "loss.csv")
        self.monitoring.save_loss_history(path)
        frame = pd.read_csv(path)
        self.assertEqual(frame["total"].tolist(), [7.0])

    def test_save_metrics(self):
        """Test metrics saving"""
        self.assertIsNone(self.monitoring.save_metrics())
        self.monitoring.capture_system_metrics(1)
        path = self.monitoring.save_metrics()
        self.assertTrue(os.path.exists(os.path.join(self.test_config["monitoring_path"], "system_metrics.csv")))
        self.assertEqual(len(pd.read_csv(path)), 1)

    def test_check_alerts(self):
        """Test alert checking"""
        self.assertIsNone(self.monitoring.check_alerts())
        self.monitoring.system_metrics[1] = SystemMetrics(
            cpu_usage=95,
            memory_usage=95,
            process_memory_mb=100.0,
            iteration=1,
            timestamp=datetime.now(),
        )
        self.monitoring.record_loss(1, LossBreakdown.from_terms(float("nan"), 0.1, 100))

        alerts = self.monitoring.check_alerts()
        self.assertIsNotNone(alerts)
        self.assertIn("HIGH CPU USAGE", alerts)
        self.assertIn("HIGH MEMORY USAGE", alerts)
        self.assertIn("NON-FINITE LOSS at iteration 1", alerts)

    def test_generate_report(self):
        """Test report generation"""
        self.monitoring.capture_system_metrics(1)
        self.monitoring.record_loss(1, LossBreakdown.from_terms(1.0, 0.2, 100))
        self.monitoring.record_loss(2, LossBreakdown.from_terms(0.5, 0.1, 100))

        report = self.monitoring.generate_report()
        self.assertIn("System Metrics:", report)
        self.assertIn("Loss:", report)
        self.assertIn("Total loss: 21.0000 -> 10.5000", report)


if __name__ == '__main__':
    unittest.main()
