"""Tests for gradient reconstruction from same-noise masked exchanges."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pbfl import fhe, leakage, protocols
from pbfl.transport import Transport


def toy_instance():
    g = np.array([[1.0, 0.0], [0.0, 1.0]])
    y = np.array([0.6, 0.8])
    return g, y


class TestSimulateView:
    def test_toy_difference_is_noise_free(self):
        g, y = toy_instance()
        view = leakage.simulate_leaky_view(g, y, seed=123)
        diff = view.masked_locals - view.masked_global
        expected = np.array([[0.4, -0.8], [-0.6, 0.2]])
        assert np.max(np.abs(diff - expected)) < 1e-12

    def test_gradients_equal_to_global(self):
        y = np.array([0.3, -0.4, 0.5])
        g = np.tile(y, (3, 1))
        view = leakage.simulate_leaky_view(g, y, seed=5)
        assert np.array_equal(view.masked_locals, view.masked_global)

    def test_zero_noise_hook(self):
        g, y = toy_instance()
        view = leakage.simulate_leaky_view(g, y, seed=9, noise_high=0.0)
        assert np.array_equal(view.masked_locals, g)

    def test_masking_hides_values(self):
        g, y = toy_instance()
        view = leakage.simulate_leaky_view(g, y, seed=7)
        assert np.min(np.abs(view.masked_locals - g)) > 1.0

    def test_fresh_noise_across_rows(self):
        g = np.zeros((4, 8))
        y = np.zeros(8)
        view = leakage.simulate_leaky_view(g, y, seed=11)
        rows = view.masked_locals
        for i in range(4):
            for j in range(i + 1, 4):
                assert not np.allclose(rows[i], rows[j])

    def test_dimension_mismatch(self):
        g, _ = toy_instance()
        with pytest.raises(ValueError, match="length"):
            leakage.simulate_leaky_view(g, np.zeros(5), seed=1)
        with pytest.raises(ValueError, match="n >= 2"):
            leakage.simulate_leaky_view(np.zeros((1, 4)), np.zeros(4), seed=1)


class TestDeriveDifferences:
    def test_toy_pairwise(self):
        g, y = toy_instance()
        diffs = leakage.derive_differences(leakage.simulate_leaky_view(g, y, seed=3))
        assert np.max(np.abs(diffs.d_pair[0, 1] - np.array([1.0, -1.0]))) < 1e-12

    def test_identical_gradients_zero(self):
        y = np.array([0.1, 0.2])
        g = np.tile(y, (5, 1))
        diffs = leakage.derive_differences(leakage.simulate_leaky_view(g, y, seed=4))
        assert np.max(np.abs(diffs.d_pair)) < 1e-12

    @given(st.integers(0, 10_000))
    @settings(max_examples=30, deadline=None)
    def test_antisymmetry(self, seed):
        rng = np.random.default_rng(seed)
        n, l = int(rng.integers(2, 8)), int(rng.integers(2, 32))
        g = rng.normal(size=(n, l))
        y = rng.normal(size=l)
        diffs = leakage.derive_differences(
            leakage.simulate_leaky_view(g, y, seed=seed)
        )
        assert np.max(np.abs(diffs.d_pair + diffs.d_pair.transpose(1, 0, 2))) < 1e-12
        assert np.max(np.abs(np.diagonal(diffs.d_pair).T)) < 1e-12
        # consistency: pairwise differences decompose through the global ones
        recon = diffs.d_global[:, None, :] - diffs.d_global[None, :, :]
        assert np.max(np.abs(diffs.d_pair - recon)) < 1e-12


class TestReconstruction:
    def test_anchor_client(self):
        g, y = toy_instance()
        diffs = leakage.derive_differences(leakage.simulate_leaky_view(g, y, seed=8))
        result = leakage.reconstruct_gradients(
            diffs,
            leakage.ANCHOR_CLIENT,
            anchor_value=g[1],
            anchor_index=1,
            ground_truth=g,
        )
        assert np.max(np.abs(result.recovered[0] - np.array([1.0, 0.0]))) < 1e-12
        assert result.max_abs_error < 1e-12

    def test_anchor_global(self):
        g, y = toy_instance()
        diffs = leakage.derive_differences(leakage.simulate_leaky_view(g, y, seed=8))
        result = leakage.reconstruct_gradients(
            diffs, leakage.ANCHOR_GLOBAL, anchor_value=y, ground_truth=g
        )
        assert result.max_abs_error < 1e-12

    def test_anchor_row_is_identity(self):
        g, y = toy_instance()
        diffs = leakage.derive_differences(leakage.simulate_leaky_view(g, y, seed=8))
        result = leakage.reconstruct_gradients(
            diffs, leakage.ANCHOR_CLIENT, anchor_value=g[0], anchor_index=0
        )
        assert np.array_equal(result.recovered[0], g[0])

    def test_anchor_index_out_of_range(self):
        g, y = toy_instance()
        diffs = leakage.derive_differences(leakage.simulate_leaky_view(g, y, seed=8))
        with pytest.raises(ValueError, match="range"):
            leakage.reconstruct_gradients(
                diffs, leakage.ANCHOR_CLIENT, anchor_value=g[0], anchor_index=5
            )
        with pytest.raises(ValueError, match="anchor kind"):
            leakage.reconstruct_gradients(diffs, "psychic", anchor_value=y)

    @given(st.integers(0, 10_000))
    @settings(max_examples=40, deadline=None)
    def test_leakage_completeness(self, seed):
        rng = np.random.default_rng(seed)
        n, l = int(rng.integers(2, 11)), int(rng.integers(2, 65))
        g = rng.normal(size=(n, l))
        y = rng.normal(size=l)
        diffs = leakage.derive_differences(
            leakage.simulate_leaky_view(g, y, seed=seed + 1)
        )
        by_global = leakage.reconstruct_gradients(
            diffs, leakage.ANCHOR_GLOBAL, anchor_value=y, ground_truth=g
        )
        assert by_global.max_abs_error < 1e-12
        a = int(rng.integers(0, n))
        by_client = leakage.reconstruct_gradients(
            diffs,
            leakage.ANCHOR_CLIENT,
            anchor_value=g[a],
            anchor_index=a,
            ground_truth=g,
        )
        assert by_client.max_abs_error < 1e-12

    def test_report_shape(self):
        g, y = toy_instance()
        diffs = leakage.derive_differences(leakage.simulate_leaky_view(g, y, seed=8))
        result = leakage.reconstruct_gradients(
            diffs, leakage.ANCHOR_GLOBAL, anchor_value=y, ground_truth=g
        )
        report = leakage.attack_report(result)
        assert set(report) == {"n", "l", "anchor_kind", "max_abs_error", "recovered_preview"}
        assert report["n"] == 2 and report["l"] == 2


class TestContrastWithEnhancedProtocol:
    def test_reconstruction_fails_against_fresh_masks(self):
        params = fhe.setup("test-tiny")
        km = fhe.keygen(params, seed=30)
        sh1, sh2 = fhe.key_split(km.sk, seed=31)
        s1 = protocols.ServerEndpoint("S1", params, sh1, evk=km.evk, pk=km.pk, seed=32)
        s2 = protocols.ServerEndpoint(
            "S2", params, sh2, pk=km.pk, seed=33, record_views=True
        )
        comp = protocols.SecureComputation(s1, s2, Transport())
        rng = np.random.default_rng(34)
        failures = 0
        trials = 0
        for rep in range(25):
            g = rng.normal(size=(4, params.slot_count))
            g /= np.linalg.norm(g, axis=1, keepdims=True)
            y = rng.normal(size=params.slot_count)
            y /= np.linalg.norm(y)
            ratios = leakage.enhanced_transcript_errors(
                comp, km.pk, g, y, seed=rep * 100
            )
            trials += ratios.shape[0]
            failures += int(np.sum(ratios > 1e3))
        # the fix must defeat reconstruction in at least 99% of trials
        assert failures / trials >= 0.99

    def test_legacy_view_from_wire_protocol_is_attackable(self):
        # end-to-end: run the weakened wire protocol, attack S2's real view
        params = fhe.setup("test-tiny")
        km = fhe.keygen(params, seed=40)
        sh1, sh2 = fhe.key_split(km.sk, seed=41)
        s1 = protocols.ServerEndpoint("S1", params, sh1, evk=km.evk, pk=km.pk, seed=42)
        s2 = protocols.ServerEndpoint("S2", params, sh2, pk=km.pk, seed=43)
        comp = protocols.SecureComputation(s1, s2, Transport())
        rng = np.random.default_rng(44)
        l = params.slot_count
        g = rng.normal(size=(3, l))
        g /= np.linalg.norm(g, axis=1, keepdims=True)
        y = rng.normal(size=l)
        y /= np.linalg.norm(y)
        enc_y = protocols.encrypt_vector(km.pk, y, seed=45)
        for i in range(3):
            enc_g = protocols.encrypt_vector(km.pk, g[i], seed=46 + i)
            comp.legacy_masked_cosine(enc_g, enc_y)
        view = leakage.MaskedExchangeView(
            masked_locals=np.array([v["masked_local"] for v in s2.legacy_views]),
            masked_global=np.array([v["masked_global"] for v in s2.legacy_views]),
            noise_seed=None,
        )
        diffs = leakage.derive_differences(view)
        result = leakage.reconstruct_gradients(
            diffs, leakage.ANCHOR_GLOBAL, anchor_value=y, ground_truth=g
        )
        # decryption noise bounds accuracy here, not the attack algebra
        assert result.max_abs_error < 0.15
        assert np.max(np.abs(result.recovered - g)) < 0.15
