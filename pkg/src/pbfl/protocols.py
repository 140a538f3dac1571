"""Two-server secure computation over the threshold scheme.

Three wire protocols run between server S1 (holds one key share, does the
homomorphic work) and server S2 (holds the other share, completes
decryptions):

esec-judge   squared-norm check. S1 squares every chunk of an encrypted
             gradient, adds a fresh uniform mask polynomial to each square,
             partially decrypts, and ships all (ciphertext, partial) pairs in
             one message. S2 finishes the decryptions, decodes, and replies
             with the scalar sum of every slot value. S1 subtracts the mask
             slot sums it retained; the cleared value is the squared norm.
             Two messages total.

esec-cos     inner product of two encrypted gradients. S1 multiplies the
             gradients chunk by chunk, masks every product with fresh noise,
             homomorphically sums the masked chunks into one ciphertext,
             partially decrypts, and sends the pair. S2 completes and replies
             with the slot sum. S1 demasks. Two messages total.

legacy-cos   a deliberately weakened older construction kept for analysis:
             the *inputs* are masked instead of the products, and one noise
             row is reused across a client's masked gradient and masked
             global reference within an invocation. S2 therefore sees
             same-noise masked plaintext pairs, which is exactly the view the
             leakage module reconstructs gradients from. Four messages total.

Every plaintext value S2 observes inside the two enhanced protocols is
true-value plus fresh uniform noise; S1 only ever observes demasked scalars.
Mask polynomials are never reused; the orchestrator keeps a digest registry
that tests check.
"""

from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from . import fhe, serialize
from .transport import S1_TO_S2, S2_TO_S1, Transport

JUDGE_TOL = 1e-3
COS_EPS = 1e-3

PROTO_JUDGE = "esec-judge"
PROTO_COS = "esec-cos"
PROTO_LEGACY = "legacy-cos"

# Mask coefficients are uniform over a power-of-two range sized so that the
# decoded mask dwarfs the values it hides without risking modular wrap when
# up to eight masked chunks are summed. Expressed as a multiple of the slot
# magnitude the masked object carries at its scale.
MASK_RATIO = {"desk-128bit": 16, "test-tiny": 4096}

# Input-mask magnitude and auxiliary scale for the legacy protocol. The
# masked products S2 re-encrypts must stay inside the modulus, which caps
# how large the slot-space noise can be at the desk parameters.
LEGACY_MASK_HIGH = 8.0
LEGACY_AUX_SCALE = float(2**12)


@dataclass
class EncryptedGradient:
    """A gradient vector of given length, packed into ciphertext chunks."""

    chunks: list
    length: int

    def __post_init__(self):
        if not self.chunks:
            raise ValueError("an encrypted gradient needs at least one chunk")
        params = self.chunks[0].params
        expected = -(-self.length // params.slot_count)
        if expected != len(self.chunks):
            raise ValueError(
                f"length {self.length} needs {expected} chunks, got {len(self.chunks)}"
            )

    @property
    def chunk_count(self) -> int:
        return len(self.chunks)

    @property
    def params(self):
        return self.chunks[0].params


@dataclass
class JudgeVerdict:
    sum: float
    accepted: bool
    tolerance: float


@dataclass
class CosineResult:
    value: float
    chunk_count: int


class ServerEndpoint:
    """One of the two servers: role, key share, and a seeded random stream."""

    def __init__(
        self,
        role: str,
        params: fhe.RingParams,
        key_share: fhe.SecretKeyShare,
        evk: fhe.EvalKey | None = None,
        pk: fhe.PublicKey | None = None,
        seed: int = 0,
        record_views: bool = False,
    ):
        if role not in ("S1", "S2"):
            raise ValueError("role must be 'S1' or 'S2'")
        self.role = role
        self.params = params
        self.key_share = key_share
        self.evk = evk
        self.pk = pk
        self.rng = np.random.default_rng(seed)
        self.record_views = record_views
        self.views: list[dict] = []
        self.legacy_views: list[dict] = []

    def _seed(self) -> int:
        return int(self.rng.integers(0, 2**63))


def _mask_bound(params: fhe.RingParams, scale: float) -> int:
    bits = (
        math.floor(math.log2(scale))
        + round(math.log2(MASK_RATIO[params.preset]))
        - round(math.log2(params.slot_count))
    )
    return 1 << int(bits)


def _scalar_frame(value: float) -> bytes:
    return struct.pack("<d", value)


def _scalar_from(frames: list[bytes]) -> float:
    (value,) = struct.unpack("<d", frames[0])
    return value


class SecureComputation:
    """Orchestrates the wire protocols between a fixed S1/S2 pair."""

    def __init__(self, s1: ServerEndpoint, s2: ServerEndpoint, transport: Transport):
        if s1.role != "S1" or s2.role != "S2":
            raise ValueError("endpoints must be an (S1, S2) pair")
        if s1.key_share.holder_id == s2.key_share.holder_id:
            raise ValueError("servers hold the same key share")
        if s1.evk is None:
            raise ValueError("S1 needs the evaluation key")
        self.s1 = s1
        self.s2 = s2
        self.transport = transport
        self.mask_digests: list[str] = []
        self._digest_set: set[str] = set()

    # -- S1 internals ----------------------------------------------------------

    def _fresh_mask(self, params: fhe.RingParams, scale: float) -> np.ndarray:
        bound = _mask_bound(params, scale)
        coeffs = self.s1.rng.integers(-bound, bound, params.n_f, dtype=np.int64)
        digest = hashlib.sha256(coeffs.tobytes()).hexdigest()
        if digest in self._digest_set:
            raise RuntimeError("mask polynomial reuse detected")
        self._digest_set.add(digest)
        self.mask_digests.append(digest)
        return coeffs

    def _apply_mask(self, ct: fhe.Ciphertext, coeffs: np.ndarray) -> fhe.Ciphertext:
        qb = ct.params.q_basis
        return fhe.Ciphertext(
            ct.params,
            qb.add(ct.c0, qb.from_int64(coeffs)),
            ct.c1,
            ct.scale,
            ct.depth_used,
        )

    def _mask_slot_sum(self, params, coeffs: np.ndarray, scale: float) -> float:
        return float(np.sum(fhe.decode_poly(params, coeffs, scale)))

    # -- S2 handlers -------------------------------------------------------------

    def _s2_sum_slots(self, frames: list[bytes], protocol: str) -> float:
        params = self.s2.params
        total = 0.0
        for i in range(0, len(frames), 2):
            ct = serialize.load(params, frames[i])
            d1 = serialize.load(params, frames[i + 1])
            d2 = fhe.part_dec(self.s2.key_share, ct, seed=self.s2._seed())
            centered = fhe.combine_poly(ct, d1, d2)
            if self.s2.record_views:
                self.s2.views.append(
                    {"protocol": protocol, "coeffs": centered, "scale": ct.scale}
                )
            total += float(np.sum(fhe.decode_poly(params, centered, ct.scale)))
        return total

    # -- enhanced protocols --------------------------------------------------

    def esec_judge(
        self, enc_grad: EncryptedGradient, tolerance: float = JUDGE_TOL
    ) -> JudgeVerdict:
        """Check that the encrypted gradient has squared norm 1."""
        params = enc_grad.params
        inv = self.transport.new_invocation(PROTO_JUDGE)
        frames: list[bytes] = []
        mask_total = 0.0
        for chunk in enc_grad.chunks:
            squared = fhe.mult(self.s1.evk, chunk, chunk)
            mask = self._fresh_mask(params, squared.scale)
            masked = self._apply_mask(squared, mask)
            d1 = fhe.part_dec(self.s1.key_share, masked, seed=self.s1._seed())
            frames.append(serialize.dump(masked))
            frames.append(serialize.dump(d1))
            mask_total += self._mask_slot_sum(params, mask, squared.scale)
        delivered = self.transport.send(
            inv, PROTO_JUDGE, S1_TO_S2, "masked-squares", frames
        )
        total = self._s2_sum_slots(delivered, PROTO_JUDGE)
        reply = self.transport.send(
            inv, PROTO_JUDGE, S2_TO_S1, "slot-sum", [_scalar_frame(total)]
        )
        value = _scalar_from(reply) - mask_total
        return JudgeVerdict(
            sum=value, accepted=abs(value - 1.0) <= tolerance, tolerance=tolerance
        )

    def _cos_exchange(
        self, enc_a: EncryptedGradient, enc_b: EncryptedGradient
    ) -> float:
        if enc_a.chunk_count != enc_b.chunk_count or enc_a.length != enc_b.length:
            raise ValueError(
                f"chunk layout mismatch: {enc_a.chunk_count} chunks of "
                f"{enc_a.length} vs {enc_b.chunk_count} of {enc_b.length}"
            )
        params = enc_a.params
        inv = self.transport.new_invocation(PROTO_COS)
        summed = None
        mask_total = 0.0
        for ca, cb in zip(enc_a.chunks, enc_b.chunks):
            prod = fhe.mult(self.s1.evk, ca, cb)
            mask = self._fresh_mask(params, prod.scale)
            masked = self._apply_mask(prod, mask)
            mask_total += self._mask_slot_sum(params, mask, prod.scale)
            summed = masked if summed is None else fhe.add(summed, masked)
        d1 = fhe.part_dec(self.s1.key_share, summed, seed=self.s1._seed())
        delivered = self.transport.send(
            inv,
            PROTO_COS,
            S1_TO_S2,
            "masked-product-sum",
            [serialize.dump(summed), serialize.dump(d1)],
        )
        total = self._s2_sum_slots(delivered, PROTO_COS)
        reply = self.transport.send(
            inv, PROTO_COS, S2_TO_S1, "slot-sum", [_scalar_frame(total)]
        )
        return _scalar_from(reply) - mask_total

    def esec_cos(
        self, enc_a: EncryptedGradient, enc_b: EncryptedGradient
    ) -> CosineResult:
        """Cosine similarity of two encrypted unit-norm gradients."""
        value = self._cos_exchange(enc_a, enc_b)
        if abs(value) > 1.0 + COS_EPS:
            raise ValueError(
                f"cosine magnitude {value:.6f} exceeds 1; inputs were not unit norm"
            )
        return CosineResult(value=value, chunk_count=enc_a.chunk_count)

    def inner_product(
        self, enc_a: EncryptedGradient, enc_b: EncryptedGradient
    ) -> float:
        """Secure inner product without the unit-norm contract check."""
        return self._cos_exchange(enc_a, enc_b)

    # -- legacy construction ---------------------------------------------------

    def legacy_masked_cosine(
        self, enc_local: EncryptedGradient, enc_global: EncryptedGradient
    ) -> CosineResult:
        """Older 4-message protocol that masks inputs with a shared noise row.

        Kept as the object of study for the leakage module: S2's recorded
        view contains (gradient + r, global + r) plaintext pairs with the
        same r, which lets differences cancel the mask entirely.
        """
        if enc_local.chunk_count != enc_global.chunk_count:
            raise ValueError("chunk layout mismatch between local and global")
        params = enc_local.params
        if self.s2.pk is None:
            raise ValueError("S2 needs the public key for the legacy protocol")
        sc = params.slot_count
        inv = self.transport.new_invocation(PROTO_LEGACY)

        # one noise row for the whole invocation, reused across both inputs
        noise = self.s1.rng.uniform(0.0, LEGACY_MASK_HIGH, enc_local.length)
        frames: list[bytes] = []
        noise_chunks = []
        for j, (cl, cg) in enumerate(zip(enc_local.chunks, enc_global.chunks)):
            r = np.zeros(sc)
            part = noise[j * sc : (j + 1) * sc]
            r[: part.shape[0]] = part
            noise_chunks.append(r)
            pt_r = fhe.encode(params, r, scale=cl.scale)
            masked_l = fhe.add_plain(cl, pt_r)
            masked_g = fhe.add_plain(cg, pt_r)
            d1_l = fhe.part_dec(self.s1.key_share, masked_l, seed=self.s1._seed())
            d1_g = fhe.part_dec(self.s1.key_share, masked_g, seed=self.s1._seed())
            frames += [
                serialize.dump(masked_l),
                serialize.dump(d1_l),
                serialize.dump(masked_g),
                serialize.dump(d1_g),
            ]
        delivered = self.transport.send(
            inv, PROTO_LEGACY, S1_TO_S2, "masked-inputs", frames
        )

        # S2: complete both decryptions per chunk, record the masked rows,
        # multiply them in the clear, re-encrypt the masked products.
        prod_frames: list[bytes] = []
        local_rows, global_rows = [], []
        for i in range(0, len(delivered), 4):
            ct_l = serialize.load(params, delivered[i])
            d1_l = serialize.load(params, delivered[i + 1])
            ct_g = serialize.load(params, delivered[i + 2])
            d1_g = serialize.load(params, delivered[i + 3])
            row_l = fhe.full_dec(
                ct_l, d1_l, fhe.part_dec(self.s2.key_share, ct_l, seed=self.s2._seed())
            )[:sc]
            row_g = fhe.full_dec(
                ct_g, d1_g, fhe.part_dec(self.s2.key_share, ct_g, seed=self.s2._seed())
            )[:sc]
            local_rows.append(row_l)
            global_rows.append(row_g)
            prod_pt = fhe.encode(
                params, row_l * row_g, scale=ct_l.scale * LEGACY_AUX_SCALE
            )
            prod_frames.append(
                serialize.dump(fhe.encrypt(self.s2.pk, prod_pt, seed=self.s2._seed()))
            )
        self.s2.legacy_views.append(
            {
                "invocation_id": inv,
                "masked_local": np.concatenate(local_rows)[: enc_local.length],
                "masked_global": np.concatenate(global_rows)[: enc_local.length],
            }
        )
        delivered2 = self.transport.send(
            inv, PROTO_LEGACY, S2_TO_S1, "masked-products-enc", prod_frames
        )

        # S1: homomorphically remove the mask's contribution, then sum chunks.
        # (g+r)(y+r) - r(g+y) - r^2 = g*y, slot-wise.
        corrected_sum = None
        for j, blob in enumerate(delivered2):
            ct_p = serialize.load(params, blob)
            r = noise_chunks[j]
            both = fhe.add(enc_local.chunks[j], enc_global.chunks[j])
            cross = fhe.mult_poly_plain(
                both, fhe.encode(params, r, scale=LEGACY_AUX_SCALE)
            )
            corrected = fhe.sub(ct_p, cross)
            corrected = fhe.add_plain(
                corrected, fhe.encode(params, -(r * r), scale=corrected.scale)
            )
            corrected_sum = (
                corrected
                if corrected_sum is None
                else fhe.add(corrected_sum, corrected)
            )
        d1 = fhe.part_dec(self.s1.key_share, corrected_sum, seed=self.s1._seed())
        delivered3 = self.transport.send(
            inv,
            PROTO_LEGACY,
            S1_TO_S2,
            "corrected-product",
            [serialize.dump(corrected_sum), serialize.dump(d1)],
        )
        total = self._s2_sum_slots(delivered3, PROTO_LEGACY)
        reply = self.transport.send(
            inv, PROTO_LEGACY, S2_TO_S1, "slot-sum", [_scalar_frame(total)]
        )
        return CosineResult(value=_scalar_from(reply), chunk_count=enc_local.chunk_count)


def encrypt_vector(
    pk: fhe.PublicKey, vec: np.ndarray, seed: int
) -> EncryptedGradient:
    """Chunk a real vector into slot-count pieces and encrypt each chunk."""
    params = pk.params
    v = np.asarray(vec, dtype=np.float64)
    if v.ndim != 1 or v.shape[0] == 0:
        raise ValueError("gradient must be a nonempty 1-d vector")
    sc = params.slot_count
    chunks = []
    for j in range(0, v.shape[0], sc):
        pt = fhe.encode(params, v[j : j + sc])
        chunks.append(fhe.encrypt(pk, pt, seed=seed * 1_000_003 + len(chunks)))
    return EncryptedGradient(chunks=chunks, length=v.shape[0])


def residue_histogram(coeff_arrays: list[np.ndarray], buckets: int = 16) -> np.ndarray:
    """Histogram of coefficient residues modulo `buckets` across arrays."""
    counts = np.zeros(buckets, dtype=np.int64)
    for arr in coeff_arrays:
        counts += np.bincount(np.asarray(arr) % buckets, minlength=buckets)
    return counts


def chi_square_uniform(counts: np.ndarray) -> float:
    """Chi-square statistic of observed counts against the uniform law."""
    counts = np.asarray(counts, dtype=np.float64)
    expected = counts.sum() / counts.shape[0]
    return float(np.sum((counts - expected) ** 2 / expected))
