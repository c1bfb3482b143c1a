"""Report artifacts: CSV/JSON tables and rendered PNG figures."""

import csv
import json

import numpy as np

from castlab.metrics import MetricsReport
from castlab.report import write_ablation_table, write_loss_curve, write_metrics

PNG_MAGIC = b"\x89PNG\r\n\x1a\n"


def _curve():
    return [{"epoch": 0, "lr": 0.001, "train_loss": 2.0, "val_hm": ""},
            {"epoch": 1, "lr": 0.002, "train_loss": 1.5, "val_hm": ""},
            {"epoch": 2, "lr": 0.001, "train_loss": 1.2, "val_hm": 61.5}]


def test_loss_curve_writes_csv_and_png(tmp_path):
    csv_path, png_path = write_loss_curve(_curve(), tmp_path)
    with open(csv_path) as f:
        rows = list(csv.DictReader(f))
    assert len(rows) == 3
    assert float(rows[1]["train_loss"]) == 1.5
    with open(png_path, "rb") as f:
        assert f.read(8) == PNG_MAGIC


def test_loss_curve_without_val_column(tmp_path):
    rows = [{"epoch": 0, "lr": 0.1, "train_loss": 1.0}]
    csv_path, png_path = write_loss_curve(rows, tmp_path, stem="probe")
    assert csv_path.endswith("probe.csv")
    with open(png_path, "rb") as f:
        assert f.read(8) == PNG_MAGIC


def test_ablation_table_artifacts(tmp_path):
    results = [
        {"name": "spatial_only", "learnable_params": 100,
         "appearance_top1": 90.0, "motion_top1": 25.0,
         "harmonic_mean": 39.1, "config_hash": "x"},
        {"name": "cast", "learnable_params": 300,
         "appearance_top1": 91.0, "motion_top1": 95.0,
         "harmonic_mean": 93.0, "config_hash": "x"},
    ]
    json_path, txt_path, png_path = write_ablation_table(results, tmp_path)
    doc = json.load(open(json_path))
    assert [r["name"] for r in doc] == ["spatial_only", "cast"]
    text = open(txt_path).read()
    assert "spatial_only" in text and "93.0000" in text
    with open(png_path, "rb") as f:
        assert f.read(8) == PNG_MAGIC


def test_write_metrics_passes_extras(tmp_path):
    report = MetricsReport.from_predictions(
        {"appearance": np.array([0, 1])}, {"appearance": np.array([0, 1])})
    path = write_metrics(report, tmp_path / "m.json", views="2x2")
    doc = json.load(open(path))
    assert doc["views"] == "2x2"
    assert doc["top1_per_task"]["appearance"] == 100.0
