"""Generation, persistence, crosstab and plot-data tests."""

import json

import numpy as np
import pytest

from mdlmix import (Dataset, FitConfig, FitResult, GeneratorSpec, GridSpec,
                    MixtureParams, ModelFormatError, TruncationRanges,
                    UnsupportedPlotError, crosstab, default_generator_spec,
                    generate, load_dataset, load_model, plotdata, save_dataset,
                    save_fit_result, save_model, total_bit_cost)


def small_result(rng, data, k=2):
    params = MixtureParams("sqnorm", rng.uniform(0.5, 1.5, k),
                           rng.normal(0, 1, (k, data.n_dim)),
                           rng.uniform(-0.3, 0.3, (k, data.n_dim)))
    ranges = TruncationRanges(np.full(params.n_params, 1e-3))
    cfg = FitConfig(max_components=k)
    q = total_bit_cost(data, params, ranges, mode=cfg.mode)
    return FitResult(params=params, ranges=ranges, q=q, stage_history=[],
                     pruned=[], validity=q.valid, config=cfg)


class TestGenerate:
    def test_empirical_weights(self):
        spec = default_generator_spec(n=10000, seed=3)
        data = generate(spec)
        assert data.n_dim == 2
        # posterior responsibilities under the true mixture average to the
        # component weights exactly, with sub-multinomial variance
        from scipy.stats import norm
        w = np.array([0.8, 0.1, 0.1])
        centers = np.array([[0.0, 0.0], [2.5, 2.5], [-2.5, 2.5]])
        dens = np.stack([
            w[j] * norm.pdf(data.points[:, 0], centers[j, 0], 1.0)
            * norm.pdf(data.points[:, 1], centers[j, 1], 1.0)
            for j in range(3)], axis=1)
        resp = dens / dens.sum(axis=1, keepdims=True)
        np.testing.assert_allclose(resp.mean(axis=0), w, atol=0.02)

    def test_single_row(self):
        data = generate(default_generator_spec(n=1, seed=9))
        assert data.points.shape == (1, 2)
        assert np.all(np.isfinite(data.points))

    def test_seed_determinism(self):
        spec = default_generator_spec(n=50, seed=5)
        np.testing.assert_array_equal(generate(spec).points, generate(spec).points)

    def test_projection(self):
        full = generate(default_generator_spec(n=200, seed=4))
        proj = generate(default_generator_spec(n=200, seed=4, univariate=True))
        assert proj.n_dim == 1
        np.testing.assert_array_equal(proj.points[:, 0], full.points[:, 0])

    def test_spec_validation(self):
        with pytest.raises(ValueError):
            GeneratorSpec(components=[(0.5, [0.0], [1.0])])
        with pytest.raises(ValueError):
            GeneratorSpec(components=[(1.0, [0.0], [-1.0])])


class TestDatasetFiles:
    def test_roundtrip_precision(self, rng, tmp_path):
        data = Dataset(rng.normal(0, 1, (40, 2)) * np.array([1e-7, 1e4]))
        path = tmp_path / "d.csv"
        save_dataset(data, path)
        back = load_dataset(path)
        np.testing.assert_allclose(back.points, data.points, rtol=1e-15)

    def test_comments_ignored(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("# a comment\n1.0,2.0\n3.0,4.0\n")
        data = load_dataset(path)
        assert data.points.shape == (2, 2)


class TestModelFiles:
    def test_save_load_save_byte_identical(self, rng, tmp_path):
        data = Dataset(rng.normal(0, 1, (30, 1)))
        res = small_result(rng, data)
        p1, p2 = tmp_path / "m1.json", tmp_path / "m2.json"
        save_fit_result(p1, res)
        params, ranges, q_doc, mode, prov = load_model(p1)
        save_model(p2, params, TruncationRanges(ranges.values),
                   type("Q", (), q_doc)(), mode=mode, provenance=prov)
        assert p1.read_bytes() == p2.read_bytes()

    def test_negative_width_rejected(self, rng, tmp_path):
        data = Dataset(rng.normal(0, 1, (30, 1)))
        res = small_result(rng, data)
        path = tmp_path / "m.json"
        save_fit_result(path, res)
        doc = json.loads(path.read_text())
        doc["widths"][0][0] = -abs(doc["widths"][0][0])
        path.write_text(json.dumps(doc, indent=2, sort_keys=True))
        with pytest.raises(ModelFormatError):
            load_model(path)

    def test_version_mismatch_rejected(self, rng, tmp_path):
        data = Dataset(rng.normal(0, 1, (30, 1)))
        res = small_result(rng, data)
        path = tmp_path / "m.json"
        save_fit_result(path, res)
        doc = json.loads(path.read_text())
        doc["schema_version"] = 99
        path.write_text(json.dumps(doc))
        with pytest.raises(ModelFormatError):
            load_model(path)

    def test_malformed_rejected(self, tmp_path):
        path = tmp_path / "m.json"
        path.write_text("{not json")
        with pytest.raises(ModelFormatError):
            load_model(path)

    def test_loaded_model_reproduces_cost(self, rng, tmp_path):
        data = Dataset(rng.normal(0, 1, (30, 1)))
        res = small_result(rng, data)
        path = tmp_path / "m.json"
        save_fit_result(path, res)
        params, ranges, q_doc, mode, _ = load_model(path)
        q = total_bit_cost(data, params, ranges, mode=mode)
        assert q.total == pytest.approx(q_doc["total"], rel=1e-10)

    def test_out_of_range_truncation_rejected(self, rng, tmp_path):
        data = Dataset(rng.normal(0, 1, (30, 1)))
        res = small_result(rng, data)
        path = tmp_path / "m.json"
        save_fit_result(path, res)
        doc = json.loads(path.read_text())
        doc["trunc_ranges"][0] = 1.5
        path.write_text(json.dumps(doc))
        with pytest.raises(ModelFormatError):
            load_model(path)


@pytest.fixture(scope="module")
def table_inputs():
    rng = np.random.default_rng(17)
    samples = [Dataset(rng.normal(mu, 1.0, (40, 1))) for mu in (0.0, 0.1, -0.1)]
    fits = [small_result(rng, s, k=1) for s in samples]
    return fits, samples


class TestCrossTable:
    def test_zero_diagonal(self, table_inputs):
        fits, samples = table_inputs
        table = crosstab(fits, samples)
        np.testing.assert_array_equal(np.diag(table.rel_q), 0.0)
        np.testing.assert_array_equal(np.diag(table.rel_entropy), 0.0)

    def test_pure_function(self, table_inputs):
        fits, samples = table_inputs
        t1 = crosstab(fits, samples)
        t2 = crosstab(fits, samples)
        np.testing.assert_array_equal(t1.rel_q, t2.rel_q)
        np.testing.assert_array_equal(t1.rel_entropy, t2.rel_entropy)

    def test_mismatched_lengths(self, table_inputs):
        fits, samples = table_inputs
        with pytest.raises(ValueError):
            crosstab(fits, samples[:-1])

    def test_entropy_finite_where_q_infinite(self, table_inputs):
        fits, samples = table_inputs
        rng = np.random.default_rng(3)
        # an extreme outlier sample invalidates the cost but not the nll
        bad = Dataset(np.vstack([samples[0].points[:39], [[50.0]]]))
        res = small_result(rng, samples[0], k=1)
        wide = FitResult(params=res.params,
                         ranges=TruncationRanges(np.full(res.params.n_params, 0.9)),
                         q=res.q, stage_history=[], pruned=[], validity=True,
                         config=res.config)
        table = crosstab([wide, fits[1]], [bad, samples[1]])
        inf_cells = ~np.isfinite(table.rel_q)
        assert inf_cells.any()
        assert np.all(np.isfinite(table.rel_entropy[inf_cells]))

    def test_text_and_json_forms(self, table_inputs):
        fits, samples = table_inputs
        table = crosstab(fits, samples)
        text = table.to_text()
        assert "relative Q" in text and "relative entropy" in text
        doc = json.loads(table.to_json())
        assert len(doc["rel_q"]) == len(fits)


class TestPlotData:
    def test_1d_grid_integrates_to_one(self, rng, tmp_path):
        data = Dataset(rng.normal(0, 1, (200, 1)))
        res = small_result(rng, data)
        paths = plotdata(res, data, GridSpec(n_points=512),
                         out_prefix=tmp_path / "p")
        table = np.loadtxt(paths["density"], delimiter=",")
        assert table.shape[0] == 512
        integral = np.trapezoid(table[:, 1], table[:, 0])
        assert integral == pytest.approx(1.0, abs=0.01)
        # per-component weighted densities sum to the total
        np.testing.assert_allclose(table[:, 2:].sum(axis=1), table[:, 1],
                                   rtol=1e-9, atol=1e-12)

    def test_default_grid_from_data(self, rng, tmp_path):
        data = Dataset(rng.normal(0, 1, (50, 1)))
        res = small_result(rng, data)
        paths = plotdata(res, data, out_prefix=tmp_path / "p")
        table = np.loadtxt(paths["density"], delimiter=",")
        assert table[:, 0].min() < data.points.min()
        assert table[:, 0].max() > data.points.max()

    def test_2d_raster_shape(self, rng, tmp_path):
        data = Dataset(rng.normal(0, 1, (50, 2)))
        res = small_result(rng, data)
        paths = plotdata(res, data, GridSpec(n_points=128),
                         out_prefix=tmp_path / "p")
        table = np.loadtxt(paths["density"], delimiter=",")
        assert table.shape[0] == 128 * 128
        sample = np.loadtxt(paths["sample"], delimiter=",")
        assert sample.shape == (50, 2)

    def test_3d_unsupported(self, rng, tmp_path):
        data = Dataset(rng.normal(0, 1, (20, 3)))
        res = small_result(rng, data)
        with pytest.raises(UnsupportedPlotError):
            plotdata(res, data, out_prefix=tmp_path / "p")
