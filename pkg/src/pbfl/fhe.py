"""Two-trapdoor leveled homomorphic encryption over a negacyclic ring.

Approximate real vectors are packed into the real parts of the canonical
embedding (imaginary slots pinned to zero), giving n_f/2 usable slots per
ciphertext.  The secret key splits additively into two shares; decryption
requires one partial decryption from each holder plus the raw c0 term.
Multiplication relinearizes degree-2 ciphertexts through an evaluation key
lifted to the extended modulus P*q and tracks the scale as delta^2 rather
than rescaling, which keeps every coefficient inside the 56-bit budget for
the unit-norm inputs the protocols feed it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .ring import RnsBasis

_BASIS_CACHE: dict[tuple, RnsBasis] = {}


def _basis(primes: tuple[int, ...], n: int) -> RnsBasis:
    key = (primes, n)
    if key not in _BASIS_CACHE:
        _BASIS_CACHE[key] = RnsBasis(primes, n)
    return _BASIS_CACHE[key]


@dataclass(frozen=True)
class RingParams:
    """Ring, modulus, and noise parameters for one preset."""

    preset: str
    n_f: int
    q_primes: tuple[int, ...]
    p_primes: tuple[int, ...]
    delta: float
    sigma_err: float
    sigma_smudge: float
    secret_weight: int
    plaintext_space: str

    def __post_init__(self):
        if self.n_f & (self.n_f - 1) or self.n_f < 8:
            raise ValueError("n_f must be a power of two >= 8")
        q = math.prod(self.q_primes)
        if self.delta * self.delta >= q:
            raise ValueError("delta^2 must stay below q")
        if self.sigma_smudge < self.sigma_err:
            raise ValueError("sigma_smudge must be at least sigma_err")
        if math.prod(self.p_primes) < q:
            raise ValueError("extended modulus P must be at least q")
        for p in self.q_primes + self.p_primes:
            if (p - 1) % (2 * self.n_f) != 0:
                raise ValueError(f"prime {p} does not support n_f={self.n_f}")

    @property
    def q(self) -> int:
        return math.prod(self.q_primes)

    @property
    def big_p(self) -> int:
        return math.prod(self.p_primes)

    @property
    def slot_count(self) -> int:
        return self.n_f // 2

    @property
    def q_basis(self) -> RnsBasis:
        return _basis(self.q_primes, self.n_f)

    @property
    def full_basis(self) -> RnsBasis:
        return _basis(self.q_primes + self.p_primes, self.n_f)


PRESETS: dict[str, RingParams] = {
    "desk-128bit": RingParams(
        preset="desk-128bit",
        n_f=2048,
        q_primes=(264245249, 264282113),   # product has exactly 56 bits
        p_primes=(536903681, 536924161),
        delta=float(5 * 2**25),            # delta^2 = 25*2^50 keeps 2 bits under q even for dense products
        sigma_err=1.0,
        sigma_smudge=3.0,
        secret_weight=32,
        plaintext_space="approx-reals/delta=5*2^25",
    ),
    "test-tiny": RingParams(
        preset="test-tiny",
        n_f=16,
        q_primes=(97, 193, 257, 449, 577),  # product of small transform-friendly primes
        p_primes=(929, 1153, 1217, 1249),
        delta=float(2**12),
        sigma_err=1.0,
        sigma_smudge=3.0,
        secret_weight=4,
        plaintext_space="approx-reals/delta=2^12",
    ),
}


def setup(preset: str) -> RingParams:
    """Return the validated parameter set for a named preset."""
    try:
        return PRESETS[preset]
    except KeyError:
        raise ValueError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}") from None


# -- encoding ----------------------------------------------------------------


@dataclass
class Plaintext:
    params: RingParams
    res: np.ndarray
    scale: float


def _embedding_twist(n: int) -> np.ndarray:
    return np.exp(-1j * np.pi * np.arange(n) / n)


def encode(params: RingParams, vec: np.ndarray, scale: float | None = None) -> Plaintext:
    """Pack up to slot_count reals into an integer polynomial at the given scale."""
    v = np.asarray(vec, dtype=np.float64)
    if v.ndim != 1 or v.shape[0] > params.slot_count:
        raise ValueError(f"vector must be 1-d with at most {params.slot_count} slots")
    if not np.all(np.isfinite(v)):
        raise ValueError("vector entries must be finite")
    scale = params.delta if scale is None else float(scale)
    n = params.n_f
    z = np.zeros(n, dtype=np.complex128)
    z[: v.shape[0]] = v * scale
    spectrum = np.fft.fft(z)
    coeffs = (2.0 / n) * np.real(_embedding_twist(n) * spectrum)
    rounded = np.rint(coeffs)
    if np.max(np.abs(rounded)) >= math.prod(params.q_primes) / 2:
        raise ValueError("encoded coefficients overflow the ring modulus")
    return Plaintext(params, params.q_basis.from_int64(rounded.astype(np.int64)), scale)


def decode_poly(params: RingParams, centered: np.ndarray, scale: float) -> np.ndarray:
    """Slot values of a centered integer coefficient vector."""
    n = params.n_f
    twisted = centered.astype(np.float64) * np.conj(_embedding_twist(n))
    slots = n * np.fft.ifft(twisted)
    return np.real(slots[: params.slot_count]) / scale


def decode(pt: Plaintext) -> np.ndarray:
    return decode_poly(pt.params, pt.params.q_basis.to_int64(pt.res), pt.scale)


# -- keys ---------------------------------------------------------------------


@dataclass
class PublicKey:
    params: RingParams
    c0: np.ndarray
    c1: np.ndarray
    _ntt0: np.ndarray = field(repr=False, default=None)
    _ntt1: np.ndarray = field(repr=False, default=None)


@dataclass
class EvalKey:
    params: RingParams
    c0: np.ndarray
    c1: np.ndarray
    _ntt0: np.ndarray = field(repr=False, default=None)
    _ntt1: np.ndarray = field(repr=False, default=None)


@dataclass
class SecretKey:
    params: RingParams
    res: np.ndarray


@dataclass
class KeyMaterial:
    params: RingParams
    pk: PublicKey
    evk: EvalKey
    sk: SecretKey


@dataclass
class SecretKeyShare:
    params: RingParams
    holder_id: str
    res: np.ndarray
    _ntt: np.ndarray = field(repr=False, default=None)

    def prepared(self) -> np.ndarray:
        if self._ntt is None and self.params.q_basis.use_ntt:
            self._ntt = self.params.q_basis.ntt(self.res)
        return self._ntt


def _rng(seed) -> np.random.Generator:
    return np.random.default_rng(seed)


def _sample_uniform(basis: RnsBasis, rng: np.random.Generator) -> np.ndarray:
    raw = rng.integers(0, basis.modulus, basis.n, dtype=np.int64)
    return basis.from_int64(raw)


def _sample_gaussian(basis: RnsBasis, rng: np.random.Generator, sigma: float) -> np.ndarray:
    raw = np.rint(rng.normal(0.0, sigma, basis.n)).astype(np.int64)
    return basis.from_int64(raw)


def _sample_sparse_ternary(n: int, weight: int, rng: np.random.Generator) -> np.ndarray:
    coeffs = np.zeros(n, dtype=np.int64)
    idx = rng.choice(n, size=weight, replace=False)
    coeffs[idx] = rng.integers(0, 2, size=weight) * 2 - 1
    return coeffs


def _mul_cached(basis: RnsBasis, a: np.ndarray, cached_ntt, plain: np.ndarray) -> np.ndarray:
    if cached_ntt is not None:
        return basis.mul_prepared(a, cached_ntt)
    return basis.mul(a, plain)


def keygen(params: RingParams, seed) -> KeyMaterial:
    """Full key material: pk = (-a*sk + e, a), evk carries P*sk^2 at modulus P*q."""
    rng = _rng(seed)
    qb, fb = params.q_basis, params.full_basis
    sk_coeffs = _sample_sparse_ternary(params.n_f, params.secret_weight, rng)
    sk_q = qb.from_int64(sk_coeffs)
    sk_f = fb.from_int64(sk_coeffs)

    a = _sample_uniform(qb, rng)
    e = _sample_gaussian(qb, rng, params.sigma_err)
    pk0 = qb.sub(e, qb.mul(a, sk_q))
    pk = PublicKey(params, pk0, a)
    if qb.use_ntt:
        pk._ntt0, pk._ntt1 = qb.ntt(pk0), qb.ntt(a)

    a2 = fb.zeros()
    for i, p in enumerate(fb.primes):
        a2[i] = rng.integers(0, p, params.n_f, dtype=np.int64)
    e2 = _sample_gaussian(fb, rng, params.sigma_err)
    sk_sq = fb.mul(sk_f, sk_f)
    p_sk_sq = fb.scalar_mul(sk_sq, params.big_p)
    evk0 = fb.add(fb.sub(e2, fb.mul(a2, sk_f)), p_sk_sq)
    evk = EvalKey(params, evk0, a2)
    if fb.use_ntt:
        evk._ntt0, evk._ntt1 = fb.ntt(evk0), fb.ntt(a2)

    return KeyMaterial(params, pk, evk, SecretKey(params, sk_q))


def key_split(sk: SecretKey, seed, holders: tuple[str, str] = ("S1", "S2")) -> tuple[SecretKeyShare, SecretKeyShare]:
    """Additive two-way split: share1 + share2 = sk (mod q)."""
    params = sk.params
    rng = _rng(seed)
    share1 = _sample_uniform(params.q_basis, rng)
    share2 = params.q_basis.sub(sk.res, share1)
    return (
        SecretKeyShare(params, holders[0], share1),
        SecretKeyShare(params, holders[1], share2),
    )


# -- ciphertexts ---------------------------------------------------------------


@dataclass
class Ciphertext:
    params: RingParams
    c0: np.ndarray
    c1: np.ndarray
    scale: float
    depth_used: int = 0


@dataclass
class PartialDecryption:
    params: RingParams
    holder_id: str
    res: np.ndarray


def encrypt(pk: PublicKey, pt: Plaintext, seed) -> Ciphertext:
    params = pk.params
    qb = params.q_basis
    rng = _rng(seed)
    u = qb.from_int64(_sample_sparse_ternary(params.n_f, params.secret_weight, rng))
    e0 = _sample_gaussian(qb, rng, params.sigma_err)
    e1 = _sample_gaussian(qb, rng, params.sigma_err)
    c0 = qb.add(qb.add(pt.res, _mul_cached(qb, u, pk._ntt0, pk.c0)), e0)
    c1 = qb.add(_mul_cached(qb, u, pk._ntt1, pk.c1), e1)
    return Ciphertext(params, c0, c1, pt.scale, 0)


def _check_compatible(a: Ciphertext, b) -> None:
    if a.params is not b.params:
        raise ValueError("operands use different parameter sets")
    if not math.isclose(a.scale, b.scale, rel_tol=1e-12):
        raise ValueError(f"scale mismatch: {a.scale} vs {b.scale}")


def add(a: Ciphertext, b: Ciphertext) -> Ciphertext:
    _check_compatible(a, b)
    qb = a.params.q_basis
    return Ciphertext(a.params, qb.add(a.c0, b.c0), qb.add(a.c1, b.c1),
                      a.scale, max(a.depth_used, b.depth_used))


def sub(a: Ciphertext, b: Ciphertext) -> Ciphertext:
    _check_compatible(a, b)
    qb = a.params.q_basis
    return Ciphertext(a.params, qb.sub(a.c0, b.c0), qb.sub(a.c1, b.c1),
                      a.scale, max(a.depth_used, b.depth_used))


def add_plain(a: Ciphertext, pt: Plaintext) -> Ciphertext:
    _check_compatible(a, pt)
    qb = a.params.q_basis
    return Ciphertext(a.params, qb.add(a.c0, pt.res), a.c1, a.scale, a.depth_used)


def mult_plain(a: Ciphertext, scalar: float) -> Ciphertext:
    """Scale by a real scalar quantized to delta; no ciphertext depth is consumed."""
    if not math.isfinite(scalar):
        raise ValueError("scalar must be finite")
    params = a.params
    k = int(round(scalar * params.delta))
    qb = params.q_basis
    return Ciphertext(params, qb.scalar_mul(a.c0, k), qb.scalar_mul(a.c1, k),
                      a.scale * params.delta, a.depth_used)


def mult_poly_plain(a: Ciphertext, pt: Plaintext) -> Ciphertext:
    """Slot-wise product with an encoded plaintext vector; depth is unchanged."""
    if a.params is not pt.params:
        raise ValueError("operands use different parameter sets")
    qb = a.params.q_basis
    return Ciphertext(a.params, qb.mul(a.c0, pt.res), qb.mul(a.c1, pt.res),
                      a.scale * pt.scale, a.depth_used)


def mult(evk: EvalKey, a: Ciphertext, b: Ciphertext) -> Ciphertext:
    """Tensor, then relinearize d2 through evk with rounded division by P."""
    if a.params is not b.params or a.params is not evk.params:
        raise ValueError("operands use different parameter sets")
    if a.depth_used or b.depth_used:
        raise ValueError("multiplicative depth budget (1) exhausted")
    params = a.params
    qb, fb = params.q_basis, params.full_basis

    if qb.use_ntt:
        a0, a1 = qb.ntt(a.c0), qb.ntt(a.c1)
        b0, b1 = (a0, a1) if b is a else (qb.ntt(b.c0), qb.ntt(b.c1))
        pr = qb.prime_arr
        d0 = qb.intt((a0 * b0) % pr)
        d1 = qb.intt(((a0 * b1) % pr + (a1 * b0) % pr) % pr)
        d2 = qb.intt((a1 * b1) % pr)
    else:
        d0 = qb.mul(a.c0, b.c0)
        d1 = qb.add(qb.mul(a.c0, b.c1), qb.mul(a.c1, b.c0))
        d2 = qb.mul(a.c1, b.c1)

    d2_full = fb.from_int64(qb.to_int64(d2))
    t0 = _mul_cached(fb, d2_full, evk._ntt0, evk.c0)
    t1 = _mul_cached(fb, d2_full, evk._ntt1, evk.c1)
    y0 = _rounded_div_p(params, t0)
    y1 = _rounded_div_p(params, t1)
    return Ciphertext(params, qb.add(d0, y0), qb.add(d1, y1), a.scale * b.scale, 1)


def _rounded_div_p(params: RingParams, t: np.ndarray) -> np.ndarray:
    """round(t / P) carried from the extended basis back into the q basis."""
    fb = params.full_basis
    n_q = len(params.q_primes)
    big_p = params.big_p
    half = big_p // 2

    shifted = (t + np.array([half % p for p in fb.primes], dtype=np.int64).reshape(-1, 1)) % fb.prime_arr
    p_basis = _basis(params.p_primes, params.n_f)
    rem = p_basis.to_int64(shifted[n_q:]) % big_p  # value of (t + P/2) mod P, in [0, P)

    out = np.empty((n_q, params.n_f), dtype=np.int64)
    for i, q_i in enumerate(params.q_primes):
        inv_p = pow(big_p % q_i, q_i - 2, q_i)
        out[i] = (((shifted[i] - rem % q_i) % q_i) * inv_p) % q_i
    return out


def part_dec(share: SecretKeyShare, ct: Ciphertext, seed) -> PartialDecryption:
    """Share-holder contribution c1*share_i plus smudging noise."""
    params = share.params
    qb = params.q_basis
    rng = _rng(seed)
    d = _mul_cached(qb, ct.c1, share.prepared(), share.res)
    d = qb.add(d, _sample_gaussian(qb, rng, params.sigma_smudge))
    return PartialDecryption(params, share.holder_id, d)


def combine_poly(ct: Ciphertext, d1: PartialDecryption, d2: PartialDecryption) -> np.ndarray:
    """Centered plaintext polynomial c0 + [m]_1 + [m]_2 (mod q)."""
    if d1.holder_id == d2.holder_id:
        raise ValueError("full decryption needs partials from two distinct holders")
    qb = ct.params.q_basis
    return qb.to_int64(qb.add(ct.c0, qb.add(d1.res, d2.res)))


def full_dec(ct: Ciphertext, d1: PartialDecryption, d2: PartialDecryption) -> np.ndarray:
    return decode_poly(ct.params, combine_poly(ct, d1, d2), ct.scale)


def decrypt_with_sk(sk: SecretKey, ct: Ciphertext) -> np.ndarray:
    """Single-key reference decryption (test oracle only)."""
    qb = sk.params.q_basis
    m = qb.add(ct.c0, qb.mul(ct.c1, sk.res))
    return decode_poly(sk.params, qb.to_int64(m), ct.scale)
