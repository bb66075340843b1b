import numpy as np
import pytest

from netloc.errors import ConfigError, DataFormatError
from netloc.scenario import (
    MeasurementMatrix,
    NoiseConfig,
    Scenario,
    export_positions_csv,
    generate_scenario,
    load_scenario,
    measure_distances,
    save_scenario,
)

TRIANGLE = np.array([[0.0, 0.0], [3.0, 0.0], [0.0, 4.0]])


def triangle_scene():
    return Scenario(positions=TRIANGLE, n_anchors=1, area=(5.0, 5.0), seed=0)


class TestGenerate:
    def test_paper_scale_in_area(self):
        s = generate_scenario(500, 50, (5.0, 5.0), seed=7)
        assert s.positions.shape == (500, 2)
        assert s.positions.min() >= 0.0 and s.positions.max() <= 5.0
        assert s.n_anchors == 50 and s.n_agents == 450

    def test_minimal_instance(self):
        s = generate_scenario(2, 1, (1.0, 1.0), seed=0)
        assert s.positions.shape == (2, 2)
        assert s.positions.max() <= 1.0
        assert s.n_anchors == 1

    def test_determinism(self):
        a = generate_scenario(500, 50, (5.0, 5.0), seed=7)
        b = generate_scenario(500, 50, (5.0, 5.0), seed=7)
        assert np.array_equal(a.positions, b.positions)
        c = generate_scenario(500, 50, (5.0, 5.0), seed=8)
        assert not np.array_equal(a.positions, c.positions)

    @pytest.mark.parametrize("n,nl,area", [
        (5, 5, (1, 1)), (5, 0, (1, 1)), (1, 0, (1, 1)), (5, 2, (0, 1)),
        (5, 2, (1, -3)),
    ])
    def test_invalid_configs(self, n, nl, area):
        with pytest.raises(ConfigError):
            generate_scenario(n, nl, area, seed=0)


class TestMeasure:
    def test_noiseless_euclidean(self):
        m = measure_distances(triangle_scene(), NoiseConfig(0.0, 0.0), seed=1)
        np.testing.assert_allclose(
            m.x, [[0, 3, 4], [3, 0, 5], [4, 5, 0]], atol=1e-12)
        assert not m.nlos_mask.any()

    def test_degenerate_uniform_bias(self):
        m = measure_distances(
            triangle_scene(), NoiseConfig(0.0, 1.0, 2.0, 2.0), seed=1)
        np.testing.assert_allclose(
            m.x, [[0, 5, 6], [5, 0, 7], [6, 7, 0]], atol=1e-12)
        off = ~np.eye(3, dtype=bool)
        assert m.nlos_mask[off].all()

    def test_nlos_rate_binomial_interval(self):
        # oracle: 95% binomial CI half-width ~ 1.96*sqrt(p(1-p)/trials)
        scen = generate_scenario(500, 50, (5.0, 5.0), seed=7)
        trials = 500 * 499 // 2
        rates = []
        for seed in range(5):
            m = measure_distances(scen, NoiseConfig(0.1, 0.1), seed=seed)
            iu = np.triu_indices(500, 1)
            rates.append(m.nlos_mask[iu].mean())
        assert abs(np.mean(rates) - 0.1) < 0.02
        for r in rates:
            assert abs(r - 0.1) < 1.96 * np.sqrt(0.1 * 0.9 / trials) * 4

    def test_los_noise_variance(self):
        scen = generate_scenario(500, 50, (5.0, 5.0), seed=7)
        m = measure_distances(scen, NoiseConfig(0.1, 0.0), seed=3)
        truth = scen.true_distances()
        iu = np.triu_indices(500, 1)
        resid = (m.x - truth)[iu]
        resid = resid[(m.x[iu] > 0)]  # drop clamped-at-zero entries
        assert abs(resid.var() - 0.1) < 0.01  # within 10% of sigma^2

    def test_symmetry_and_zero_diag_exact(self):
        scen = generate_scenario(50, 5, (5.0, 5.0), seed=2)
        m = measure_distances(scen, NoiseConfig(0.5, 0.3), seed=2)
        assert np.array_equal(m.x, m.x.T)
        assert np.all(np.diag(m.x) == 0.0)
        assert np.array_equal(m.nlos_mask, m.nlos_mask.T)

    def test_measurements_clamped_nonnegative(self):
        scen = generate_scenario(200, 10, (0.5, 0.5), seed=5)
        m = measure_distances(scen, NoiseConfig(4.0, 0.0), seed=5)
        assert m.x.min() >= 0.0
        assert (m.x == 0).sum() > 200  # tiny area + huge noise: clamps happen

    def test_seed_substreams_independent(self):
        # changing the NLOS rate must not perturb the Gaussian stream
        scen = triangle_scene()
        a = measure_distances(scen, NoiseConfig(0.1, 0.0), seed=9)
        b = measure_distances(scen, NoiseConfig(0.1, 1.0, 2.0, 2.0), seed=9)
        np.testing.assert_allclose(b.x[b.nlos_mask] - a.x[b.nlos_mask], 2.0,
                                   atol=1e-12)

    def test_determinism(self):
        scen = generate_scenario(100, 10, (5.0, 5.0), seed=1)
        a = measure_distances(scen, NoiseConfig(0.25, 0.3), seed=4)
        b = measure_distances(scen, NoiseConfig(0.25, 0.3), seed=4)
        assert np.array_equal(a.x, b.x)
        assert np.array_equal(a.nlos_mask, b.nlos_mask)

    def test_invalid_noise_configs(self):
        with pytest.raises(ConfigError):
            NoiseConfig(-0.1, 0.0)
        with pytest.raises(ConfigError):
            NoiseConfig(0.1, 1.5)
        with pytest.raises(ConfigError):
            NoiseConfig(0.1, 0.5, 3.0, 2.0)

    def test_constructor_rejects_asymmetry(self):
        x = np.array([[0.0, 1.0], [2.0, 0.0]])
        with pytest.raises(ConfigError, match="symmetric"):
            MeasurementMatrix(x=x, nlos_mask=np.zeros((2, 2), dtype=bool))


class TestSerialization:
    def test_round_trip_small(self, tmp_path):
        scen = triangle_scene()
        meas = measure_distances(scen, NoiseConfig(0.1, 0.5), seed=3)
        path = tmp_path / "tri.nloc"
        save_scenario(path, scen, meas)
        scen2, meas2 = load_scenario(path)
        assert np.array_equal(scen.positions, scen2.positions)
        assert np.array_equal(meas.x, meas2.x)
        assert np.array_equal(meas.nlos_mask, meas2.nlos_mask)
        assert scen2.n_anchors == 1 and scen2.area == (5.0, 5.0)

    def test_round_trip_paper_scale_bytes(self, tmp_path):
        scen = generate_scenario(500, 50, (5.0, 5.0), seed=7)
        meas = measure_distances(scen, NoiseConfig(0.1, 0.1), seed=7)
        p1, p2 = tmp_path / "a.nloc", tmp_path / "b.nloc"
        save_scenario(p1, scen, meas)
        scen2, meas2 = load_scenario(p1)
        save_scenario(p2, scen2, meas2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_truncated_file_reports_offset(self, tmp_path):
        scen = triangle_scene()
        meas = measure_distances(scen, NoiseConfig(0.0, 0.0), seed=0)
        path = tmp_path / "t.nloc"
        save_scenario(path, scen, meas)
        blob = path.read_bytes()[: len(path.read_bytes()) // 2]
        path.write_bytes(blob)
        with pytest.raises(DataFormatError, match="byte offset") as err:
            load_scenario(path)
        assert err.value.byte_offset is not None

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.nloc"
        path.write_text("NOTLOC v9\n1 1 1 1 1\n")
        with pytest.raises(DataFormatError, match="magic"):
            load_scenario(path)

    def test_asymmetric_payload_names_row_col(self, tmp_path):
        scen = triangle_scene()
        meas = measure_distances(scen, NoiseConfig(0.0, 0.0), seed=0)
        path = tmp_path / "s.nloc"
        save_scenario(path, scen, meas)
        lines = path.read_text().splitlines()
        row = lines[5].split()  # first distance row
        row[1] = "9.25"
        lines[5] = " ".join(row)
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(DataFormatError, match=r"row 0, column 1"):
            load_scenario(path)

    def test_dimension_mismatch(self, tmp_path):
        path = tmp_path / "s.nloc"
        path.write_text("NETLOC v1\n3 1 5 5 0\n0 0\n1 1\n")
        with pytest.raises(DataFormatError, match="position row 2"):
            load_scenario(path)

    def test_positions_csv(self, tmp_path):
        path = tmp_path / "pos.csv"
        export_positions_csv(path, triangle_scene())
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "id,x,y,is_anchor"
        assert len(lines) == 4
        assert lines[1].endswith(",1") and lines[2].endswith(",0")
