"""
Run metrics in Prometheus text format.
Tracks grid cells by outcome and their wall-clock durations.
"""
import threading
import time
from collections import defaultdict
from pathlib import Path
from typing import Dict, List, Optional

from pydantic import BaseModel


class MetricType:
    COUNTER = "counter"
    GAUGE = "gauge"
    HISTOGRAM = "histogram"


class Metric(BaseModel):
    name: str
    metric_type: str
    help_text: str


DURATION_BUCKETS = (0.1, 0.5, 1.0, 5.0, 10.0, 60.0, 300.0, float("inf"))


class RunMetrics:
    """
    Prometheus-compatible collector for one experiment run.
    Cells report from worker threads, so every mutation takes the lock.
    """

    def __init__(self, namespace: str = "perturblab"):
        self.namespace = namespace
        self.metrics: Dict[str, Metric] = {}
        self.counters: Dict[str, float] = defaultdict(float)
        self.gauges: Dict[str, float] = {}
        self.histograms: Dict[str, List[float]] = defaultdict(list)
        self._lock = threading.Lock()
        self._initialize_metrics()

    def _initialize_metrics(self):
        self.register_counter("cells_started_total", "Grid cells started")
        self.register_counter("cells_completed_total", "Grid cells that ran to the end")
        self.register_counter("cells_diverged_total", "Grid cells stopped by non-finite weights")
        self.register_counter("cells_failed_total", "Grid cells that raised an error, by error_code")
        self.register_gauge("cells_scheduled", "Grid cells in this run")
        self.register_gauge("cells_in_flight", "Grid cells currently running")
        self.register_histogram("cell_duration_seconds", "Wall-clock time per grid cell")

    def _full_name(self, name: str) -> str:
        return f"{self.namespace}_{name}"

    def register_counter(self, name: str, help_text: str):
        self.metrics[name] = Metric(name=name, metric_type=MetricType.COUNTER, help_text=help_text)

    def register_gauge(self, name: str, help_text: str):
        self.metrics[name] = Metric(name=name, metric_type=MetricType.GAUGE, help_text=help_text)

    def register_histogram(self, name: str, help_text: str):
        self.metrics[name] = Metric(name=name, metric_type=MetricType.HISTOGRAM, help_text=help_text)

    def _build_metric_key(self, name: str, labels: Optional[Dict[str, str]]) -> str:
        if not labels:
            return name
        label_str = ",".join(f'{k}="{v}"' for k, v in sorted(labels.items()))
        return f"{name}{{{label_str}}}"

    def _require(self, name: str, metric_type: str) -> None:
        metric = self.metrics.get(name)
        if metric is None or metric.metric_type != metric_type:
            raise KeyError(f"{metric_type} '{name}' is not registered")

    def inc_counter(self, name: str, value: float = 1.0, labels: Optional[Dict[str, str]] = None):
        self._require(name, MetricType.COUNTER)
        with self._lock:
            self.counters[self._build_metric_key(name, labels)] += value

    def set_gauge(self, name: str, value: float):
        self._require(name, MetricType.GAUGE)
        with self._lock:
            self.gauges[name] = value

    def add_gauge(self, name: str, delta: float):
        self._require(name, MetricType.GAUGE)
        with self._lock:
            self.gauges[name] = self.gauges.get(name, 0.0) + delta

    def observe_histogram(self, name: str, value: float):
        self._require(name, MetricType.HISTOGRAM)
        with self._lock:
            self.histograms[name].append(value)

    def counter(self, name: str, labels: Optional[Dict[str, str]] = None) -> float:
        return self.counters.get(self._build_metric_key(name, labels), 0.0)

    def export_prometheus_format(self) -> str:
        lines: List[str] = []
        with self._lock:
            counters = sorted(self.counters.items())
            gauges = sorted(self.gauges.items())
            histograms = sorted(self.histograms.items())

        described = set()
        for key, value in counters + gauges:
            metric_name = key.split("{")[0]
            if metric_name not in described:
                described.add(metric_name)
                metric = self.metrics[metric_name]
                full = self._full_name(metric_name)
                lines.append(f"# HELP {full} {metric.help_text}")
                lines.append(f"# TYPE {full} {metric.metric_type}")
            lines.append(f"{self._full_name(key)} {value}")

        for key, values in histograms:
            if not values:
                continue
            metric_name = key.split("{")[0]
            full = self._full_name(metric_name)
            lines.append(f"# HELP {full} {self.metrics[metric_name].help_text}")
            lines.append(f"# TYPE {full} histogram")
            for bucket in DURATION_BUCKETS:
                le = "+Inf" if bucket == float("inf") else str(bucket)
                lines.append(f'{full}_bucket{{le="{le}"}} {sum(1 for v in values if v <= bucket)}')
            lines.append(f"{full}_sum {sum(values)}")
            lines.append(f"{full}_count {len(values)}")

        return "\n".join(lines) + "\n"

    def write(self, path: Path) -> None:
        Path(path).write_text(self.export_prometheus_format(), encoding="utf-8")


class PerformanceMonitor:
    """Context manager that records elapsed seconds into a histogram."""

    def __init__(self, collector: RunMetrics, metric_name: str):
        self.collector = collector
        self.metric_name = metric_name
        self.start_time: Optional[float] = None
        self.elapsed: Optional[float] = None

    def __enter__(self):
        self.start_time = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        assert self.start_time is not None
        self.elapsed = time.perf_counter() - self.start_time
        self.collector.observe_histogram(self.metric_name, self.elapsed)
