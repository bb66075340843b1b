import json

import numpy as np
import pytest

from netloc.errors import ConfigError
from netloc.evaluation import (
    CellJob,
    ExperimentSpec,
    cell_csv_bytes,
    condition_name,
    export_attention_heatmaps,
    export_threshold_histogram,
    rerun_cell_from_metadata,
    rmse_agents,
    run_noise_table,
    run_timing,
    sweep_anchors,
    sweep_threshold,
)
from netloc.scenario import Scenario
from netloc.train import TrainConfig, train

SMALL_TRAIN = TrainConfig(epochs=3, hidden=16, heads=2, head_dim=6,
                          att_dim=5, score_dim=5)


def small_spec(**kw):
    base = dict(models=("mlp", "gcn"), noise_grid=((0.1, 0.1),),
                seeds=(0, 1), n=30, n_anchors=6, train=SMALL_TRAIN)
    base.update(kw)
    return ExperimentSpec(**base)


class TestRmse:
    def test_perfect(self, small_scene):
        scen, _ = small_scene
        assert rmse_agents(scen.positions, scen) == 0.0

    def test_constant_offset_is_half_meter(self, small_scene):
        scen, _ = small_scene
        pred = scen.positions.copy()
        pred[scen.n_anchors:] += np.array([0.3, 0.4])
        assert rmse_agents(pred, scen) == pytest.approx(0.5, abs=1e-12)

    def test_matches_per_agent_loop(self, mid_scene):
        scen, _ = mid_scene
        pred = np.random.default_rng(1).standard_normal((60, 2))
        per_agent = [
            float(np.sum((pred[i] - scen.positions[i]) ** 2))
            for i in range(scen.n_anchors, 60)
        ]
        loop = float(np.sqrt(np.mean(per_agent)))
        assert abs(rmse_agents(pred, scen) - loop) <= 1e-12


class TestSpecValidation:
    def test_rejects_duplicate_seeds(self):
        with pytest.raises(ConfigError):
            small_spec(seeds=(0, 0))

    def test_rejects_empty_grids(self):
        with pytest.raises(ConfigError):
            small_spec(noise_grid=())

    def test_rejects_unknown_models(self):
        with pytest.raises(ConfigError, match="unknown models"):
            run_noise_table(small_spec(models=("gcn", "ls")))


class TestNoiseTable:
    def test_table_and_outputs(self, tmp_path):
        spec = small_spec()
        table = run_noise_table(spec, out_dir=str(tmp_path))
        cond = condition_name(0.1, 0.1)
        agg = table.aggregate()
        assert ("mlp", cond) in agg and ("gcn", cond) in agg
        assert agg[("gcn", cond)][3] == 2  # both seeds succeeded
        cell = tmp_path / "noise_table" / "gcn" / cond / "seed0.csv"
        meta = tmp_path / "noise_table" / "gcn" / cond / "seed0.meta.json"
        assert cell.exists() and meta.exists()
        assert (tmp_path / "noise_table" / "summary.csv").exists()
        loaded = json.loads(meta.read_text())
        assert loaded["config_hash"] and loaded["code_version"]

    def test_cell_rerun_is_byte_identical(self, tmp_path):
        spec = small_spec(models=("gcn",), seeds=(3,))
        run_noise_table(spec, out_dir=str(tmp_path))
        cond = condition_name(0.1, 0.1)
        cell = tmp_path / "noise_table" / "gcn" / cond / "seed3.csv"
        meta = tmp_path / "noise_table" / "gcn" / cond / "seed3.meta.json"
        assert rerun_cell_from_metadata(meta) == cell.read_bytes()

    def test_failures_recorded_run_continues(self, tmp_path):
        # coarse_threshold too small: agnn2 cells fail, table survives
        bad_train = TrainConfig(epochs=2, hidden=16, heads=2, head_dim=6,
                                att_dim=5, score_dim=5, coarse_threshold=1e-9)
        spec = small_spec(models=("mlp", "agnn2"), seeds=(0,), train=bad_train)
        table = run_noise_table(spec, out_dir=str(tmp_path))
        cond = condition_name(0.1, 0.1)
        assert table.cells[("agnn2", cond, 0)].error is not None
        assert table.cells[("mlp", cond, 0)].error is None
        meta = json.loads((tmp_path / "noise_table" / "agnn2" / cond /
                           "seed0.meta.json").read_text())
        assert "error" in meta

    def test_parallel_jobs_match_serial(self):
        spec = small_spec(models=("gcn",), seeds=(0, 1))
        serial = run_noise_table(spec, jobs=1)
        parallel = run_noise_table(spec, jobs=2)
        for key in serial.cells:
            assert serial.cells[key].rmse == parallel.cells[key].rmse


class TestSweeps:
    def test_threshold_sweep_curve(self, tmp_path):
        spec = small_spec(models=("gcn",), seeds=(0,),
                          threshold_grid=(0.6, 1.2))
        curves = sweep_threshold(spec, out_dir=str(tmp_path))
        cond = condition_name(0.1, 0.1)
        assert [th for th, _, _ in curves[cond]] == [0.6, 1.2]
        assert all(np.isfinite(m) for _, m, _ in curves[cond])
        assert (tmp_path / "threshold_sweep" / "curves.csv").exists()

    def test_anchor_sweep_curves(self, tmp_path):
        spec = small_spec(models=("gcn", "mlp"), seeds=(0,),
                          anchor_grid=(6, 12))
        curves = sweep_anchors(spec, out_dir=str(tmp_path))
        cond = condition_name(0.1, 0.1)
        assert ("gcn", cond) in curves and ("mlp", cond) in curves
        assert [nl for nl, _, _ in curves[("gcn", cond)]] == [6, 12]

    def test_timing_rows(self):
        spec = small_spec(models=("mlp",), seeds=(0,))
        rows = run_timing(spec, n_grid=(20, 40))
        assert [r["n"] for r in rows] == [20, 40]
        assert all(r["seconds"] > 0 for r in rows)
        assert all(r["error"] is None for r in rows)


class TestExports:
    def test_untrained_histogram_spikes_at_half_ceiling(self, small_scene):
        scen, meas = small_scene
        cfg = TrainConfig(epochs=1, hidden=8, heads=2, head_dim=4,
                          att_dim=4, score_dim=4, lr=1e-12)
        trained = train("agnn1", scen, meas, cfg)
        trained.params["alm.raw_thresholds"][:] = 0.0
        counts, edges = export_threshold_histogram(trained, bins=30)
        assert counts.sum() == 24
        spike = np.argmax(counts)
        mid = trained.model.max_range / 2
        assert edges[spike] <= mid <= edges[spike + 1]
        assert counts[spike] == 24  # single spike

    def test_trained_histogram_spreads(self, small_scene, tmp_path):
        scen, meas = small_scene
        cfg = TrainConfig(epochs=25, hidden=8, heads=2, head_dim=6,
                          att_dim=5, score_dim=5, gamma=10.0)
        trained = train("agnn1", scen, meas, cfg)
        from netloc.evaluation import learned_thresholds

        values = learned_thresholds(trained)
        assert values.std() > 0.0
        path = tmp_path / "hist.csv"
        counts, _ = export_threshold_histogram(trained, path=path)
        assert counts.sum() == 24
        assert path.read_text().startswith("bin_low,bin_high,count")

    def test_heatmaps(self, small_scene, tmp_path):
        scen, meas = small_scene
        cfg = TrainConfig(epochs=2, hidden=8, heads=2, head_dim=6,
                          att_dim=5, score_dim=5)
        trained = train("agnn2", scen, meas, cfg)
        rows = export_attention_heatmaps(trained, [3, 7],
                                         path=tmp_path / "heat.csv")
        member3, cutoff3 = rows[3]
        coarse = meas.x[3] <= cfg.coarse_threshold
        assert np.all(member3[~coarse] == 0.0)
        assert member3.min() >= 0.0 and member3.max() <= 1.0
        assert cutoff3.min() >= 0.0
        assert cutoff3.max() <= meas.x[3].max() + 1e-12
        member7, _ = rows[7]
        assert (member3 > 0).sum() != (member7 > 0).sum() or \
            not np.array_equal(member3 > 0, member7 > 0)

    def test_heatmap_invalid_node(self, small_scene):
        scen, meas = small_scene
        cfg = TrainConfig(epochs=1, hidden=8, heads=2, head_dim=4,
                          att_dim=4, score_dim=4)
        trained = train("agnn2", scen, meas, cfg)
        with pytest.raises(ConfigError, match="invalid node id"):
            export_attention_heatmaps(trained, [99])

    def test_histogram_needs_agnn1(self, small_scene):
        scen, meas = small_scene
        cfg = TrainConfig(epochs=1, hidden=8)
        trained = train("mlp", scen, meas, cfg)
        with pytest.raises(ConfigError):
            export_threshold_histogram(trained)
