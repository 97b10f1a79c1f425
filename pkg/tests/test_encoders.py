"""Oracle encoders: determinism, normalization, threshold separation."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from graphnav.encoders import (EncoderConfig, OracleEncoder, cosine_similarity,
                               unit)


def make_encoder(seed=0, **kw):
    return OracleEncoder(EncoderConfig(**kw), world_seed=seed)


class TestPrimitives:
    def test_unit_norm(self):
        v = unit(np.array([3.0, 4.0]))
        assert np.isclose(np.linalg.norm(v), 1.0)

    def test_unit_zero_vector(self):
        with pytest.raises(ValueError):
            unit(np.zeros(4))

    def test_cosine_bounds_and_symmetry(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            a, b = rng.standard_normal(8), rng.standard_normal(8)
            s = cosine_similarity(a, b)
            assert -1.0 - 1e-12 <= s <= 1.0 + 1e-12
            assert np.isclose(s, cosine_similarity(b, a))

    def test_cosine_self_is_one(self):
        v = np.arange(1.0, 6.0)
        assert np.isclose(cosine_similarity(v, v), 1.0)

    def test_cosine_dimension_mismatch(self):
        with pytest.raises(ValueError, match="mismatch"):
            cosine_similarity(np.ones(3), np.ones(4))

    def test_cosine_zero_vector(self):
        with pytest.raises(ValueError):
            cosine_similarity(np.zeros(3), np.ones(3))


class TestOracleEncoder:
    def test_noise_free_determinism(self):
        enc = make_encoder(7)
        a = enc.encode_image(12)
        b = enc.encode_image(12)
        assert np.array_equal(a, b)
        assert np.isclose(np.linalg.norm(a), 1.0)

    def test_same_seed_same_anchor_across_instances(self):
        a = make_encoder(7).encode_object(3)
        b = make_encoder(7).encode_object(3)
        assert np.array_equal(a, b)

    def test_different_seed_different_anchor(self):
        a = make_encoder(7).encode_image(3)
        b = make_encoder(8).encode_image(3)
        assert not np.allclose(a, b)

    def test_anchor_independent_of_call_order(self):
        enc1 = make_encoder(7)
        enc1.encode_image(0)
        late = enc1.encode_image(5)
        enc2 = make_encoder(7)
        early = enc2.encode_image(5)
        assert np.array_equal(late, early)

    def test_noisy_views_are_unit_norm(self):
        enc = make_encoder(7)
        rng = np.random.default_rng(1)
        for _ in range(20):
            assert np.isclose(np.linalg.norm(enc.encode_image(4, rng)), 1.0)
            assert np.isclose(np.linalg.norm(enc.encode_object(4, rng)), 1.0)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            EncoderConfig(dim_image=1).validate()
        with pytest.raises(ValueError):
            EncoderConfig(tau_image=1.5).validate()
        with pytest.raises(ValueError):
            EncoderConfig(noise_sigma=-0.1).validate()


class TestThresholdSeparation:
    """Monte-Carlo check that the default noise level keeps same-identity
    views above the match thresholds and distinct identities far below."""

    def test_image_separation(self):
        enc = make_encoder(42)
        rng = np.random.default_rng(2)
        same = [cosine_similarity(enc.encode_image(9, rng), enc.encode_image(9, rng))
                for _ in range(300)]
        diff = [cosine_similarity(enc.encode_image(i, rng), enc.encode_image(i + 1, rng))
                for i in range(300)]
        tau = enc.config.tau_image
        assert min(same) >= tau, "same-cell views must stay above tau_image"
        assert max(diff) < tau, "distinct cells must stay below tau_image"

    def test_object_separation(self):
        enc = make_encoder(42)
        rng = np.random.default_rng(3)
        same = [cosine_similarity(enc.encode_object(9, rng), enc.encode_object(9, rng))
                for _ in range(300)]
        diff = [cosine_similarity(enc.encode_object(i, rng), enc.encode_object(i + 1, rng))
                for i in range(300)]
        tau = enc.config.tau_object
        assert min(same) >= tau
        assert max(diff) < tau

    @given(st.integers(0, 500), st.integers(0, 500))
    @settings(max_examples=60, deadline=None)
    def test_distinct_anchors_nearly_orthogonal(self, i, j):
        enc = make_encoder(11)
        sim = cosine_similarity(enc.encode_image(i), enc.encode_image(j))
        if i == j:
            assert np.isclose(sim, 1.0)
        else:
            assert abs(sim) < enc.config.tau_image
