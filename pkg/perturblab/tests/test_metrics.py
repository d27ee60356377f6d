import pytest

from perturblab.services.metrics import PerformanceMonitor, RunMetrics


def test_counters_and_gauges_export():
    metrics = RunMetrics()
    metrics.inc_counter("cells_started_total")
    metrics.inc_counter("cells_started_total")
    metrics.set_gauge("cells_in_flight", 3)

    text = metrics.export_prometheus_format()
    assert "# TYPE perturblab_cells_started_total counter" in text
    assert "perturblab_cells_started_total 2.0" in text
    assert "perturblab_cells_in_flight 3" in text
    assert text.endswith("\n")


def test_histogram_buckets_are_cumulative():
    metrics = RunMetrics()
    for value in (0.05, 0.7, 2.0, 400.0):
        metrics.observe_histogram("cell_duration_seconds", value)

    lines = metrics.export_prometheus_format().splitlines()
    assert 'perturblab_cell_duration_seconds_bucket{le="0.1"} 1' in lines
    assert 'perturblab_cell_duration_seconds_bucket{le="1.0"} 2' in lines
    assert 'perturblab_cell_duration_seconds_bucket{le="300.0"} 3' in lines
    assert 'perturblab_cell_duration_seconds_bucket{le="+Inf"} 4' in lines
    assert "perturblab_cell_duration_seconds_count 4" in lines


def test_labels_are_sorted_into_the_key():
    metrics = RunMetrics()
    metrics.inc_counter("cells_failed_total", labels={"mode": "ctr", "error_code": "io_error"})
    assert metrics.counter("cells_failed_total", {"error_code": "io_error", "mode": "ctr"}) == 1
    assert 'perturblab_cells_failed_total{error_code="io_error",mode="ctr"} 1.0' in (
        metrics.export_prometheus_format()
    )


def test_label_sets_share_one_help_line():
    metrics = RunMetrics()
    metrics.inc_counter("cells_failed_total", labels={"error_code": "io_error"})
    metrics.inc_counter("cells_failed_total", labels={"error_code": "server_error"})
    metrics.inc_counter("cells_failed_total", labels={"error_code": "server_error"})

    lines = metrics.export_prometheus_format().splitlines()
    assert lines.count("# TYPE perturblab_cells_failed_total counter") == 1
    assert 'perturblab_cells_failed_total{error_code="io_error"} 1.0' in lines
    assert 'perturblab_cells_failed_total{error_code="server_error"} 2.0' in lines


def test_unregistered_metric_is_rejected():
    metrics = RunMetrics()
    with pytest.raises(KeyError):
        metrics.inc_counter("nope_total")
    with pytest.raises(KeyError):
        metrics.set_gauge("cells_started_total", 1.0)


def test_performance_monitor_records_elapsed():
    metrics = RunMetrics()
    with PerformanceMonitor(metrics, "cell_duration_seconds") as monitor:
        pass
    assert monitor.elapsed is not None and monitor.elapsed >= 0.0
    assert metrics.histograms["cell_duration_seconds"] == [monitor.elapsed]


def test_write(tmp_path):
    metrics = RunMetrics()
    metrics.inc_counter("cells_completed_total")
    path = tmp_path / "metrics.prom"
    metrics.write(path)
    assert path.read_text() == metrics.export_prometheus_format()
