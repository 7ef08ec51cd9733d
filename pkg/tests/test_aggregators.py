"""SPN, uniform and learned attention aggregation."""

import hypothesis.extra.numpy as npst
import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from conftest import make_factor, make_posterior
from lpf.core.errors import DimensionError, RangeError, SupportError
from lpf.harness.assumptions import closure_battery
from lpf.services.aggregators import (
    attention_weights,
    feature_count,
    init_attention,
    learned_aggregate,
    load_attention,
    robustness_bound,
    save_attention,
    spn_aggregate,
    uniform_aggregate,
)
from lpf.services.factorizer import bayes_decoder, decode
from lpf.services.world import WorldConfig, build_world, sample_entity


@st.composite
def factor_sets(draw, num_labels=3, max_k=6):
    K = draw(st.integers(min_value=1, max_value=max_k))
    raw = draw(
        npst.arrays(
            np.float64,
            (K, num_labels),
            elements=st.floats(min_value=0.01, max_value=1.0, allow_nan=False, allow_infinity=False),
        )
    )
    weights = draw(npst.arrays(np.float64, (K,), elements=st.floats(min_value=0.05, max_value=1.0)))
    probs = raw / raw.sum(axis=1, keepdims=True)
    return [make_factor(p, weight=float(w), source_id=i) for i, (p, w) in enumerate(zip(probs, weights))]


class TestSpn:
    def test_single_factor_identity(self):
        factor = make_factor([0.2, 0.5, 0.3], weight=1.0)
        result = spn_aggregate([factor])
        assert result.dist is factor.dist
        assert result.k_eff == 1.0

    def test_uniform_factors(self):
        factors = [make_factor([1 / 3] * 3, weight=w) for w in (0.2, 0.7, 1.0)]
        np.testing.assert_allclose(spn_aggregate(factors).dist.probs, [1 / 3] * 3, atol=1e-12)

    def test_product_arithmetic(self):
        factors = [make_factor([0.8, 0.1, 0.1]), make_factor([0.1, 0.8, 0.1])]
        expected = np.array([0.08, 0.08, 0.01]) / 0.17
        np.testing.assert_allclose(spn_aggregate(factors).dist.probs, expected, atol=1e-12)

    def test_explicit_weights_override(self):
        factors = [make_factor([0.8, 0.1, 0.1]), make_factor([0.1, 0.8, 0.1])]
        result = spn_aggregate(factors, weights=[1.0, 0.0])
        np.testing.assert_allclose(result.dist.probs, [0.8, 0.1, 0.1], atol=1e-12)

    def test_zero_entry(self):
        with pytest.raises(SupportError):
            spn_aggregate([make_factor([1.0, 0.0, 0.0]), make_factor([0.5, 0.25, 0.25])])

    def test_empty(self):
        with pytest.raises(RangeError):
            spn_aggregate([])

    def test_label_count_mismatch(self):
        with pytest.raises(DimensionError):
            spn_aggregate([make_factor([0.5, 0.5]), make_factor([0.2, 0.3, 0.5])])

    @pytest.mark.property
    @given(factor_sets(), st.randoms(use_true_random=False))
    def test_permutation_invariant(self, factors, rnd):
        shuffled = list(factors)
        rnd.shuffle(shuffled)
        np.testing.assert_array_equal(spn_aggregate(factors).dist.probs, spn_aggregate(shuffled).dist.probs)
        np.testing.assert_array_equal(uniform_aggregate(factors).dist.probs, uniform_aggregate(shuffled).dist.probs)

    @pytest.mark.property
    @given(factor_sets(max_k=5))
    def test_unit_weights_equal_brute_force_product(self, factors):
        product = np.prod(np.stack([f.probs for f in factors]), axis=0)
        result = spn_aggregate(factors, weights=np.ones(len(factors)))
        np.testing.assert_allclose(result.dist.probs, product / product.sum(), atol=1e-9)

    @pytest.mark.property
    @settings(max_examples=1000)
    @given(factor_sets(), st.floats(min_value=0.01, max_value=1.0))
    def test_weight_scale_keeps_argmax(self, factors, u):
        weights = np.array([f.weight for f in factors])
        scores = np.sort(weights[:, None] * np.log(np.stack([f.probs for f in factors])), axis=0).sum(axis=0)
        top = np.sort(scores)
        assume(top[-1] - top[-2] > 1e-9 * (1.0 + np.abs(scores).max()))
        scaled = spn_aggregate(factors, weights=np.minimum(weights * (u / weights.max()), 1.0))
        assert np.argmax(scaled.dist.probs) == np.argmax(spn_aggregate(factors).dist.probs) == np.argmax(scores)

    def test_closure_battery(self):
        assert closure_battery(200, 3, seed=0)


class TestUniform:
    def test_single_factor(self):
        factor = make_factor([0.2, 0.5, 0.3])
        assert uniform_aggregate([factor]).dist is factor.dist

    def test_mixture(self):
        result = uniform_aggregate([make_factor([1.0, 0.0, 0.0]), make_factor([0.0, 1.0, 0.0])])
        np.testing.assert_allclose(result.dist.probs, [0.5, 0.5, 0.0])
        assert result.k_eff == 2.0


class TestRobustnessBound:
    @pytest.mark.parametrize(
        "eps, expected", [(0.05, 0.316), (0.1, 0.632), (0.2, 1.265), (0.3, 1.897), (0.5, 3.162)]
    )
    def test_reference_values(self, eps, expected):
        assert robustness_bound(eps, 1.0, 10, 2.0) == pytest.approx(expected, abs=2e-3)

    def test_no_corruption(self):
        assert robustness_bound(0.0, 1.0, 10) == 0.0

    def test_out_of_range(self):
        with pytest.raises(RangeError):
            robustness_bound(1.5, 1.0, 10)


class TestAttention:
    def test_parameter_count(self, decoder):
        agg = init_attention(decoder)
        assert feature_count(8) == 170
        assert agg.num_params == 2752

    def test_identical_items_share_attention(self, decoder):
        item = make_posterior(np.linspace(-1, 1, 8), np.full(8, 0.3))
        np.testing.assert_allclose(attention_weights(init_attention(decoder), [item] * 4), np.full(4, 0.25))

    def test_single_item(self, decoder, world):
        agg = init_attention(decoder, seed=3)
        entity = sample_entity(world, 1, 0)
        np.testing.assert_array_equal(attention_weights(agg, entity.evidence), [1.0])
        result = learned_aggregate(agg, entity.evidence)
        np.testing.assert_allclose(result.dist.probs, decode(decoder, entity.evidence[0].mean).probs)
        assert result.method == "learned"

    def test_duplicated_evidence(self, decoder, world):
        agg = init_attention(decoder, seed=3)
        item = sample_entity(world, 1, 0).evidence[0]
        single = learned_aggregate(agg, [item]).dist.probs
        np.testing.assert_allclose(learned_aggregate(agg, [item] * 5).dist.probs, single, atol=1e-12)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(min_value=0, max_value=10_000), st.randoms(use_true_random=False))
    def test_permutation_invariant(self, idx, rnd):
        world = build_world(WorldConfig())
        agg = init_attention(bayes_decoder(world), seed=1, init_scale=1.0)
        evidence = list(sample_entity(world, 5, ("perm", idx)).evidence)
        shuffled = list(evidence)
        rnd.shuffle(shuffled)
        a, b = learned_aggregate(agg, evidence), learned_aggregate(agg, shuffled)
        np.testing.assert_array_equal(a.dist.probs, b.dist.probs)
        assert a.k_eff == b.k_eff

    def test_attention_follows_input_order(self, decoder, world):
        agg = init_attention(decoder, seed=1, init_scale=1.0)
        evidence = list(sample_entity(world, 4, 9).evidence)
        alpha = attention_weights(agg, evidence)
        alpha_rev = attention_weights(agg, evidence[::-1])
        np.testing.assert_array_equal(alpha, alpha_rev[::-1])
        assert alpha.sum() == pytest.approx(1.0)

    def test_save_and_load(self, decoder, world, tmp_path):
        agg = init_attention(decoder, seed=5)
        path = tmp_path / "agg.json"
        save_attention(agg, path)
        loaded = load_attention(path)
        np.testing.assert_array_equal(loaded.param_vector(), agg.param_vector())
        evidence = sample_entity(world, 3, 0).evidence
        np.testing.assert_array_equal(
            learned_aggregate(loaded, evidence).dist.probs, learned_aggregate(agg, evidence).dist.probs
        )
