"""Tests for the poisoning attack generators."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pbfl.attacks import (
    ATTACK_KINDS,
    AttackSpec,
    PoisonContext,
    flip_labels,
    poison,
    select_attackers,
)


def cosine(a, b):
    return float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))


class TestSpecValidation:
    def test_defaults(self):
        spec = AttackSpec()
        assert spec.kind == "none" and spec.attack_ratio == 0.0

    @pytest.mark.parametrize("kind", ATTACK_KINDS)
    def test_all_kinds_construct(self, kind):
        assert AttackSpec(kind=kind).kind == kind

    def test_unknown_kind(self):
        with pytest.raises(ValueError, match="kind"):
            AttackSpec(kind="gradient-eater")

    @pytest.mark.parametrize("ratio", [-0.1, 1.0, 1.5])
    def test_ratio_bounds(self, ratio):
        with pytest.raises(ValueError, match="attack_ratio"):
            AttackSpec(kind="sign-flip", attack_ratio=ratio)

    def test_magnitude_must_be_finite(self):
        with pytest.raises(ValueError, match="magnitude"):
            AttackSpec(kind="sign-flip", magnitude=float("inf"))

    def test_unknown_knowledge_mode(self):
        with pytest.raises(ValueError, match="knowledge"):
            AttackSpec(kind="sign-flip", knowledge="psychic")


class TestSelectAttackers:
    def test_count_rounds_to_nearest(self):
        assert len(select_attackers(10, 0.3, seed=1)) == 3
        assert len(select_attackers(10, 0.25, seed=1)) == 2
        assert len(select_attackers(7, 0.3, seed=1)) == 2

    def test_deterministic_and_sorted(self):
        a = select_attackers(12, 0.4, seed=7)
        b = select_attackers(12, 0.4, seed=7)
        assert a == b == sorted(a)
        assert len(set(a)) == len(a)

    def test_zero_ratio_selects_nobody(self):
        assert select_attackers(8, 0.0, seed=0) == []

    def test_everyone_malicious_is_rejected(self):
        with pytest.raises(ValueError, match="benign"):
            select_attackers(4, 0.9, seed=0)


class TestFlipLabels:
    def test_cyclic_permutation(self):
        y = np.array([0, 1, 2, 2, 0])
        assert np.array_equal(flip_labels(y, 3), [1, 2, 0, 0, 1])

    def test_binary_flip_is_involution(self):
        y = np.array([0, 1, 1, 0])
        assert np.array_equal(flip_labels(flip_labels(y, 2), 2), y)


class TestSignFlip:
    def test_unit_magnitude_inverts_direction(self):
        g = np.array([3.0, -4.0, 0.5])
        out = poison(PoisonContext(own_gradient=g), AttackSpec(kind="sign-flip"))
        assert np.array_equal(out, -g)
        assert cosine(out, g) == pytest.approx(-1.0)

    def test_magnitude_scales(self):
        g = np.array([1.0, 2.0])
        spec = AttackSpec(kind="sign-flip", magnitude=2.5)
        assert np.array_equal(poison(PoisonContext(own_gradient=g), spec), -2.5 * g)

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(min_value=0, max_value=10_000))
    def test_always_antiparallel(self, seed):
        g = np.random.default_rng(seed).normal(size=16)
        out = poison(PoisonContext(own_gradient=g), AttackSpec(kind="sign-flip"))
        assert cosine(out, g) == pytest.approx(-1.0)


class TestLabelFlipPassThrough:
    def test_gradient_is_untouched(self):
        g = np.array([1.0, -2.0, 3.0])
        out = poison(PoisonContext(own_gradient=g), AttackSpec(kind="label-flip"))
        assert np.array_equal(out, g)


class TestAgrTailored:
    def test_zero_magnitude_is_normalized_benign_mean(self):
        sample = np.array([[2.0, 0.0], [0.0, 2.0]])
        spec = AttackSpec(kind="agr-tailored", magnitude=0.0)
        out = poison(PoisonContext(own_gradient=sample[0], sample=sample), spec)
        mean = sample.mean(axis=0)
        assert cosine(out, mean) == pytest.approx(1.0)
        assert np.linalg.norm(out) == pytest.approx(1.0)

    def test_hand_computed_three_client_example(self):
        # sample rows (1,0), (0,1), (1,1): mean = (2/3, 2/3), per-column
        # std = sqrt(2)/3, so the unit deviation is (1/sqrt2, 1/sqrt2) and
        # mean - deviation has two equal negative components; normalizing
        # lands exactly on -(1,1)/sqrt(2).
        sample = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
        spec = AttackSpec(kind="agr-tailored", magnitude=1.0)
        out = poison(PoisonContext(own_gradient=sample[2], sample=sample), spec)
        expected = -np.ones(2) / np.sqrt(2.0)
        assert np.allclose(out, expected, atol=1e-12)

    def test_output_is_unit_norm(self):
        rng = np.random.default_rng(3)
        sample = rng.normal(size=(6, 10))
        spec = AttackSpec(kind="agr-tailored", magnitude=4.0)
        out = poison(PoisonContext(own_gradient=sample[0], sample=sample), spec)
        assert np.linalg.norm(out) == pytest.approx(1.0)

    def test_large_magnitude_opposes_the_deviation_axis(self):
        rng = np.random.default_rng(4)
        sample = rng.normal(size=(8, 12))
        sigma = sample.std(axis=0)
        spec = AttackSpec(kind="agr-tailored", magnitude=100.0)
        out = poison(PoisonContext(own_gradient=sample[0], sample=sample), spec)
        assert cosine(out, -sigma) > 0.99

    def test_constant_sample_keeps_the_mean_direction(self):
        sample = np.tile(np.array([[1.0, 2.0]]), (4, 1))
        spec = AttackSpec(kind="agr-tailored", magnitude=5.0)
        out = poison(PoisonContext(own_gradient=sample[0], sample=sample), spec)
        assert cosine(out, sample[0]) == pytest.approx(1.0)

    def test_missing_sample_is_an_error(self):
        spec = AttackSpec(kind="agr-tailored")
        with pytest.raises(ValueError, match="sample"):
            poison(PoisonContext(own_gradient=np.ones(3)), spec)

    def test_vanishing_craft_is_an_error(self):
        # mean is zero and sigma spans both rows, so magnitude 0 leaves
        # nothing to normalize
        sample = np.array([[1.0, 0.0], [-1.0, 0.0]])
        spec = AttackSpec(kind="agr-tailored", magnitude=0.0)
        with pytest.raises(ValueError, match="vanished"):
            poison(PoisonContext(own_gradient=sample[0], sample=sample), spec)


class TestPoisonDispatch:
    def test_inactive_kind_is_an_error(self):
        with pytest.raises(ValueError, match="active attack"):
            poison(PoisonContext(own_gradient=np.ones(2)), AttackSpec())
