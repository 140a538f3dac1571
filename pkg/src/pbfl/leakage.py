"""Gradient reconstruction from same-noise masked exchanges.

The legacy cosine protocol masks each client's uploaded gradient and the
server's reference gradient with one shared noise row before the helper
server sees them. That reuse is fatal: subtracting the two masked vectors
cancels the noise exactly, and differences across clients do the same, so a
single known anchor (one compromised client's gradient, or the previous
global gradient) pins down every client's gradient to floating-point
accuracy.

This module works on the post-decryption values the helper server observes;
the algebra is independent of the encryption layer. An adapter at the bottom
runs the identical reconstruction pipeline against transcripts of the
enhanced cosine protocol (fresh masks, products masked instead of inputs)
to measure how thoroughly the fix destroys the attack.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ANCHOR_CLIENT = "known-client-gradient"
ANCHOR_GLOBAL = "known-previous-global"

DEFAULT_NOISE_HIGH = 512.0


@dataclass
class MaskedExchangeView:
    """What the helper server sees in one round of the legacy exchange.

    Row i of both matrices was masked with the identical noise row; that
    is the vulnerability under study. The view never contains unmasked
    gradients.
    """

    masked_locals: np.ndarray
    masked_global: np.ndarray
    noise_seed: object

    def __post_init__(self):
        if self.masked_locals.shape != self.masked_global.shape:
            raise ValueError("masked matrices must have identical shape")


@dataclass
class DiffMatrix:
    """Noise-free differences derivable from a masked view alone."""

    d_pair: np.ndarray
    d_global: np.ndarray


@dataclass
class ReconstructionResult:
    recovered: np.ndarray
    anchor_kind: str
    max_abs_error: float


def simulate_leaky_view(
    gradients: np.ndarray,
    prev_global: np.ndarray,
    seed,
    noise_high: float = DEFAULT_NOISE_HIGH,
) -> MaskedExchangeView:
    """Produce the helper server's view of one legacy exchange round.

    Each client row is masked with a fresh noise row drawn uniformly from
    [0, noise_high); the same row masks both that client's gradient and the
    global reference. noise_high = 0 is the degenerate test hook (no mask).
    """
    g = np.asarray(gradients, dtype=np.float64)
    y = np.asarray(prev_global, dtype=np.float64)
    if g.ndim != 2 or g.shape[0] < 2:
        raise ValueError("need an n-by-l gradient matrix with n >= 2")
    if y.shape != (g.shape[1],):
        raise ValueError(
            f"global gradient length {y.shape} does not match l = {g.shape[1]}"
        )
    rng = np.random.default_rng(seed)
    noise = rng.uniform(0.0, noise_high, g.shape) if noise_high > 0 else np.zeros(g.shape)
    return MaskedExchangeView(
        masked_locals=g + noise,
        masked_global=y[None, :] + noise,
        noise_seed=seed,
    )


def derive_differences(view: MaskedExchangeView) -> DiffMatrix:
    """Exact pairwise and client-minus-global differences from masked data."""
    d_global = view.masked_locals - view.masked_global
    d_pair = d_global[:, None, :] - d_global[None, :, :]
    return DiffMatrix(d_pair=d_pair, d_global=d_global)


def reconstruct_gradients(
    diffs: DiffMatrix,
    anchor_kind: str,
    anchor_value: np.ndarray,
    anchor_index: int | None = None,
    ground_truth: np.ndarray | None = None,
) -> ReconstructionResult:
    """Recover every client gradient from the differences plus one anchor.

    anchor_kind selects the identity used: a compromised client's own
    gradient (give its index) or the previous global gradient.
    """
    anchor = np.asarray(anchor_value, dtype=np.float64)
    n = diffs.d_global.shape[0]
    if anchor_kind == ANCHOR_CLIENT:
        if anchor_index is None or not 0 <= anchor_index < n:
            raise ValueError(f"anchor index {anchor_index} out of range for n={n}")
        recovered = diffs.d_pair[:, anchor_index, :] + anchor[None, :]
    elif anchor_kind == ANCHOR_GLOBAL:
        recovered = diffs.d_global + anchor[None, :]
    else:
        raise ValueError(f"unknown anchor kind {anchor_kind!r}")
    err = float("nan")
    if ground_truth is not None:
        err = float(np.max(np.abs(recovered - np.asarray(ground_truth))))
    return ReconstructionResult(
        recovered=recovered, anchor_kind=anchor_kind, max_abs_error=err
    )


def attack_report(result: ReconstructionResult, preview_slots: int = 4) -> dict:
    """JSON-ready summary of a reconstruction."""
    n, l = result.recovered.shape
    return {
        "n": n,
        "l": l,
        "anchor_kind": result.anchor_kind,
        "max_abs_error": result.max_abs_error,
        "recovered_preview": [
            [round(float(v), 6) for v in row[:preview_slots]]
            for row in result.recovered[: min(n, 3)]
        ],
    }


def enhanced_transcript_errors(
    comp,
    pk,
    gradients: np.ndarray,
    prev_global: np.ndarray,
    seed: int = 0,
) -> np.ndarray:
    """Run the reconstruction pipeline against enhanced-protocol transcripts.

    For each client the enhanced cosine protocol is invoked twice on the same
    (gradient, global) pair. The helper server's two decoded views stand in
    for the masked-local / masked-global rows the legacy attack relies on.
    Because every invocation draws fresh masks and masks the slot products
    rather than the inputs, the difference trick leaves mask residue instead
    of cancelling, and recovery fails by orders of magnitude.

    Returns the per-client max-abs reconstruction error divided by the
    gradient scale (largest true product magnitude), so values ≫ 1 mean the
    attack learned nothing.
    """
    from . import fhe, protocols

    g = np.asarray(gradients, dtype=np.float64)
    y = np.asarray(prev_global, dtype=np.float64)
    params = comp.s2.params
    if g.shape[1] > params.slot_count:
        raise ValueError("adapter expects single-chunk gradients")
    if not comp.s2.record_views:
        raise ValueError("S2 endpoint must record views for transcript analysis")

    enc_y = protocols.encrypt_vector(pk, y, seed=seed)
    rows_a, rows_b = [], []
    for i in range(g.shape[0]):
        enc_g = protocols.encrypt_vector(pk, g[i], seed=seed + 1 + i)
        start = len(comp.s2.views)
        comp.esec_cos(enc_g, enc_y)
        comp.esec_cos(enc_g, enc_y)
        decoded = [
            fhe.decode_poly(params, v["coeffs"], v["scale"])[: g.shape[1]]
            for v in comp.s2.views[start:]
        ]
        rows_a.append(decoded[0])
        rows_b.append(decoded[1])

    view = MaskedExchangeView(
        masked_locals=np.array(rows_a),
        masked_global=np.array(rows_b),
        noise_seed=None,
    )
    diffs = derive_differences(view)
    true_products = g * y[None, :]
    ratios = np.empty(g.shape[0])
    for i in range(g.shape[0]):
        rec = reconstruct_gradients(
            diffs,
            ANCHOR_GLOBAL,
            anchor_value=true_products[i],
            ground_truth=true_products,
        )
        scale = max(float(np.max(np.abs(true_products))), 1e-12)
        ratios[i] = float(np.max(np.abs(rec.recovered[i] - true_products[i]))) / scale
    return ratios
