import logging
import os
from dataclasses import dataclass
from datetime import datetime
from typing import Dict, List, Optional

import numpy as np
import pandas as pd
import psutil

from image_io import atomic_output
from losses import LossBreakdown

LOSS_COLUMNS = ["iteration", "pixel", "ssim", "total"]


@dataclass
class SystemMetrics:
    cpu_usage: float
    memory_usage: float
    process_memory_mb: float
    iteration: int
    timestamp: datetime


class TrainingMonitor:
    """Collects per-iteration losses and periodic system metrics during training."""

    def __init__(self, config: Optional[dict] = None, metrics_dir: Optional[str] = None):
        self.config = config or {}
        self.metrics_dir = metrics_dir or self.config.get("monitoring_path")
        thresholds = self.config.get("monitoring", {}).get("alert_thresholds", {})
        self.cpu_threshold = thresholds.get("cpu_usage", 90)
        self.memory_threshold = thresholds.get("memory_usage", 90)

        self.loss_records: List[dict] = []
        self.system_metrics: Dict[int, SystemMetrics] = {}
        self._process = psutil.Process(os.getpid())

    def record_loss(self, iteration: int, breakdown: LossBreakdown):
        self.loss_records.append({
            "iteration": iteration,
            "pixel": breakdown.pixel,
            "ssim": breakdown.ssim,
            "total": breakdown.total,
        })
        logging.info(
            "Iteration %d: pixel=%.6f ssim=%.6f total=%.6f",
            iteration, breakdown.pixel, breakdown.ssim, breakdown.total,
        )

    def capture_system_metrics(self, iteration: int = 0) -> SystemMetrics:
        """Capture current CPU and memory usage"""
        metrics = SystemMetrics(
            cpu_usage=psutil.cpu_percent(),
            memory_usage=psutil.virtual_memory().percent,
            process_memory_mb=self._process.memory_info().rss / 2 ** 20,
            iteration=iteration,
            timestamp=datetime.now(),
        )
        self.system_metrics[iteration] = metrics
        return metrics

    def history(self) -> pd.DataFrame:
        return pd.DataFrame(self.loss_records, columns=LOSS_COLUMNS)

    def save_loss_history(self, path):
        """Write the loss CSV (iteration, pixel, ssim, total)."""
        with atomic_output(path) as tmp:
            self.history().to_csv(tmp, index=False)
        logging.info("Loss history saved to %s", path)
        return str(path)

    def save_metrics(self):
        """Save system metrics to the monitoring directory"""
        if not self.metrics_dir or not self.system_metrics:
            return None
        os.makedirs(self.metrics_dir, exist_ok=True)
        system_df = pd.DataFrame([
            {
                "iteration": v.iteration,
                "timestamp": v.timestamp.isoformat(),
                "cpu_usage": v.cpu_usage,
                "memory_usage": v.memory_usage,
                "process_memory_mb": v.process_memory_mb,
            }
            for v in self.system_metrics.values()
        ])
        path = os.path.join(self.metrics_dir, "system_metrics.csv")
        with atomic_output(path) as tmp:
            system_df.to_csv(tmp, index=False)
        return path

    def check_alerts(self) -> Optional[str]:
        """Check the latest loss and system metrics for alerts"""
        alerts = []

        if self.loss_records:
            latest = self.loss_records[-1]
            values = [latest["pixel"], latest["ssim"], latest["total"]]
            if not np.isfinite(values).all():
                alerts.append(f"NON-FINITE LOSS at iteration {latest['iteration']}")

        if self.system_metrics:
            latest = list(self.system_metrics.values())[-1]
            if latest.cpu_usage > self.cpu_threshold:
                alerts.append(f"HIGH CPU USAGE: {latest.cpu_usage}%")
            if latest.memory_usage > self.memory_threshold:
                alerts.append(f"HIGH MEMORY USAGE: {latest.memory_usage}%")

        if alerts:
            alert_msg = "\n".join(alerts)
            logging.warning("Training alerts:\n%s", alert_msg)
            return alert_msg
        return None

    def generate_report(self) -> str:
        """Summarize the training run as text"""
        report = ["Training Report", "=" * 50, ""]

        if self.loss_records:
            history = self.history()
            first, last = history.iloc[0], history.iloc[-1]
            report.extend([
                "Loss:",
                f"Iterations: {int(last['iteration'])}",
                f"Total loss: {first['total']:.4f} -> {last['total']:.4f}",
                f"Pixel loss: {first['pixel']:.4f} -> {last['pixel']:.4f}",
                f"SSIM loss: {first['ssim']:.4f} -> {last['ssim']:.4f}",
                "",
            ])

        if self.system_metrics:
            metrics = list(self.system_metrics.values())
            avg_cpu = sum(m.cpu_usage for m in metrics) / len(metrics)
            peak_rss = max(m.process_memory_mb for m in metrics)
            report.extend([
                "System Metrics:",
                f"Average CPU Usage: {avg_cpu:.2f}%",
                f"Peak Process Memory: {peak_rss:.1f} MB",
                "",
            ])

        return "\n".join(report)
