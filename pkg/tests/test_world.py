"""Synthetic world: construction, sampling, corruption, correlation and datasets."""

import numpy as np
import pytest

from lpf.core.errors import ConfigError, InsufficientDataError, RangeError
from lpf.core.prob import argmax_label
from lpf.core.rng import stream
from lpf.services.factorizer import bayes_decoder, estimate_factor
from lpf.services.world import (
    WorldConfig,
    build_world,
    corrupt_entity,
    covariance_norms,
    export_entities,
    load_entities,
    make_agg_dataset,
    measure_correlation,
    sample_entity,
)


def _means(entity):
    return np.stack([p.mean for p in entity.evidence])


class TestBuildWorld:
    def test_same_seed_same_first_entity(self):
        a = sample_entity(build_world(WorldConfig(seed=42)), 5, 0)
        b = sample_entity(build_world(WorldConfig(seed=42)), 5, 0)
        assert a.label == b.label
        np.testing.assert_array_equal(_means(a), _means(b))

    def test_mapping_config(self):
        world = build_world({"d": 4, "num_labels": 3})
        assert world.prototypes.shape == (3, 4)

    @pytest.mark.parametrize(
        "bad",
        [{"d": 1}, {"conflict_rate": 1.5}, {"var_low": 0.6, "var_high": 0.5}, {"label_prior": [0.5, 0.5]}, {"colour": 1}],
    )
    def test_invalid_config(self, bad):
        with pytest.raises(ConfigError):
            build_world(bad)

    def test_expected_norm_warning(self, caplog):
        build_world(WorldConfig(var_low=0.1, var_high=5.0))
        assert "exceeds sigma_max" in caplog.text

    def test_prototypes_in_low_dimension(self):
        world = build_world(WorldConfig(d=2, num_labels=3))
        norms = np.linalg.norm(world.prototypes, axis=1)
        np.testing.assert_allclose(norms, world.config.prototype_scale)


class TestSampling:
    def test_single_item(self, world):
        assert sample_entity(world, 1, 0).k == 1

    @pytest.mark.parametrize("K", [0, 6])
    def test_k_out_of_range(self, world, K):
        with pytest.raises(RangeError):
            sample_entity(world, K, 0)

    def test_no_conflict_uses_true_prototype(self):
        world = build_world(WorldConfig(conflict_rate=0.0))
        for i in range(50):
            entity = sample_entity(world, 5, i)
            assert set(entity.sources) == {entity.label}

    def test_full_conflict_uses_wrong_prototypes(self):
        world = build_world(WorldConfig(conflict_rate=1.0))
        for i in range(50):
            entity = sample_entity(world, 5, i)
            assert entity.label not in entity.sources

    def test_shorter_entity_is_prefix(self, world):
        short, long = sample_entity(world, 3, "prefix"), sample_entity(world, 5, "prefix")
        assert short.label == long.label
        np.testing.assert_array_equal(_means(short), _means(long)[:3])

    def test_covariance_norm_regime(self, world):
        norms = covariance_norms(world, 200)
        assert 0.5 <= norms.mean() <= 1.5
        assert norms.max() <= world.config.sigma_max

    def test_low_noise_factors_find_the_label(self):
        world = build_world(WorldConfig(conflict_rate=0.0, correlation=0.0, evidence_noise=0.01))
        decoder = bayes_decoder(world)
        hits, total = 0, 0
        for i in range(200):
            entity = sample_entity(world, 5, i)
            for j, posterior in enumerate(entity.evidence):
                factor = estimate_factor(decoder, posterior, 16, stream(world.seed, "test", i, j))
                hits += argmax_label(factor.dist) == entity.label
                total += 1
        assert hits / total >= 0.99


class TestCorruption:
    def test_zero_fraction_is_identity(self, world):
        entity = sample_entity(world, 5, 0)
        assert corrupt_entity(entity, 0.0, world) is entity

    def test_floor_count(self, world):
        entity = sample_entity(world, 5, 0)
        corrupted = corrupt_entity(entity, 0.5, world, 1)
        changed = np.any(_means(entity) != _means(corrupted), axis=1)
        assert changed.sum() == 2
        assert corrupted.label == entity.label
        for idx in np.flatnonzero(changed):
            assert corrupted.sources[idx] != entity.label

    def test_fraction_out_of_range(self, world):
        with pytest.raises(RangeError):
            corrupt_entity(sample_entity(world, 5, 0), 1.5, world)


class TestCorrelation:
    def test_independent_items(self):
        world = build_world(WorldConfig(correlation=0.0))
        assert abs(measure_correlation(world, 1000)) < 0.05

    def test_shared_jitter(self):
        world = build_world(WorldConfig(correlation=1.0))
        assert measure_correlation(world, 100) > 0.9

    def test_default_level(self, world):
        assert measure_correlation(world, 1000) == pytest.approx(0.12, abs=0.05)

    def test_needs_two_items(self):
        world = build_world(WorldConfig(k_max=1))
        with pytest.raises(InsufficientDataError):
            measure_correlation(world, 50)

    def test_needs_enough_entities(self, world):
        with pytest.raises(RangeError):
            measure_correlation(world, 10)


class TestDatasets:
    def test_sizes(self, world):
        dataset = make_agg_dataset(world, 4200, 900, 5)
        assert len(dataset.train) == 4200
        assert len(dataset.test) == 900

    def test_minimal(self, world):
        dataset = make_agg_dataset(world, 1, 1, 1)
        assert dataset.split("train")[0].k == 1

    def test_deterministic(self, world):
        a, b = make_agg_dataset(world, 5, 5, 3, "x"), make_agg_dataset(world, 5, 5, 3, "x")
        for ea, eb in zip(a.train + a.test, b.train + b.test):
            np.testing.assert_array_equal(_means(ea), _means(eb))

    def test_export_and_reload(self, world, tmp_path):
        entities = [sample_entity(world, 3, i) for i in range(4)]
        path = tmp_path / "entities.jsonl"
        assert export_entities(entities, path) == 4
        loaded = load_entities(path)
        assert [e.label for e in loaded] == [e.label for e in entities]
        np.testing.assert_array_equal(_means(loaded[2]), _means(entities[2]))
        assert loaded[0].sources is None

    def test_bad_record(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"label": 0, "evidence": []}\n', encoding="utf-8")
        with pytest.raises(ConfigError, match="bad.jsonl:1"):
            load_entities(path)
