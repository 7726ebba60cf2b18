import numpy as np
import pytest

from ellipslam.errors import EmptyTable
from ellipslam.simulate import NoiseConfig, StaticArcConfig
from ellipslam.sweep import (
    TrialResult,
    csv_to_rows,
    plot_sweep,
    rows_to_csv,
    run_sweep,
    run_trial,
    summarize,
)


class TestTrials:
    def test_zero_noise_both_methods_succeed(self):
        cfg = StaticArcConfig()
        for method in ("svd", "sphere_refine"):
            r = run_trial(method, cfg, NoiseConfig(), seed=0, trial=0)
            assert r.initialized
            assert r.iou2d > 0.95
            assert r.e_trans < 0.05

    def test_svd_fails_under_heavy_bbox_noise(self):
        cfg = StaticArcConfig()
        fails = 0
        for trial in range(10):
            r = run_trial("svd", cfg, NoiseConfig(bbox_pct=0.04), seed=0, trial=trial)
            fails += not r.initialized or r.iou2d <= 0.5
        assert fails >= 5

    def test_summarize_counts_failures_in_sr(self):
        results = [
            TrialResult("m", 0, 0, True, iou2d=0.9, e_trans=0.1, e_axe=0.1),
            TrialResult("m", 0, 1, True, iou2d=0.4, e_trans=1.0, e_axe=1.0),
            TrialResult("m", 0, 2, False),
        ]
        s = summarize(results)
        assert s["n_trials"] == 3
        assert abs(s["sr"] - 1 / 3) < 1e-12
        assert abs(s["e_trans_mean"] - 0.55) < 1e-12


class TestCsv:
    def test_round_trip(self):
        rows = run_sweep("bbox", [0.0, 0.02], seeds=[0], cfg=StaticArcConfig(ellipsoids_per_seed=2))
        text = rows_to_csv(rows)
        back = csv_to_rows(text)
        assert len(back) == len(rows)
        for a, b in zip(sorted(rows, key=lambda r: (r["method"], r["level"])),
                        sorted(back, key=lambda r: (r["method"], r["level"]))):
            assert a["method"] == b["method"]
            assert abs(a["sr"] - b["sr"]) < 1e-9

    def test_empty_table(self):
        with pytest.raises(EmptyTable):
            csv_to_rows("method,axis,level\n")


class TestPlot:
    def test_series_per_method(self):
        rows = [
            {"method": "svd", "axis": "bbox", "level": 0.0, "n_trials": 1, "sr": 1.0,
             "e_trans_mean": 0.1, "e_trans_std": 0.0, "e_axe_mean": 0.1, "e_axe_std": 0.0,
             "iou2d_mean": 0.9, "iou2d_std": 0.0},
            {"method": "sphere_refine", "axis": "bbox", "level": 0.0, "n_trials": 1, "sr": 1.0,
             "e_trans_mean": 0.2, "e_trans_std": 0.0, "e_axe_mean": 0.2, "e_axe_std": 0.0,
             "iou2d_mean": 0.95, "iou2d_std": 0.0},
        ]
        svg = plot_sweep(rows)
        assert svg.count("<polyline") == 8  # 4 charts x 2 methods
        assert "sphere_refine" in svg and "svd" in svg

    def test_single_row_single_point(self):
        rows = [
            {"method": "svd", "axis": "bbox", "level": 0.02, "n_trials": 1, "sr": 0.5,
             "e_trans_mean": 0.1, "e_trans_std": 0.0, "e_axe_mean": 0.1, "e_axe_std": 0.0,
             "iou2d_mean": 0.9, "iou2d_std": 0.0},
        ]
        svg = plot_sweep(rows)
        assert "<circle" in svg

    def test_empty_rows(self):
        with pytest.raises(EmptyTable):
            plot_sweep([])

    def test_nan_rows_skipped(self):
        rows = [
            {"method": "svd", "axis": "bbox", "level": 0.02, "n_trials": 1, "sr": 0.0,
             "e_trans_mean": float("nan"), "e_trans_std": float("nan"),
             "e_axe_mean": float("nan"), "e_axe_std": float("nan"),
             "iou2d_mean": float("nan"), "iou2d_std": float("nan")},
        ]
        svg = plot_sweep(rows)
        assert svg.startswith("<svg")
