"""Negacyclic polynomial arithmetic in Z_q[X]/(X^n + 1) with an RNS representation.

The composite modulus q is held as a residue number system over word-sized
NTT-friendly primes so every coefficient operation stays inside int64 numpy
arithmetic.  Large rings (n >= 1024) multiply through a negacyclic NTT per
prime; small rings use direct convolution, which doubles as the reference
path for the transform.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import reduce

import numpy as np

# Schoolbook convolution splits one operand when p^2 * n would overflow int64.
_SPLIT_BITS = 14
_NTT_MIN_N = 1024


def _bit_reverse_indices(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n, dtype=np.int64)
    rev = np.zeros(n, dtype=np.int64)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


def _primitive_root(p: int) -> int:
    # factor p-1 once; p is a small word-sized prime
    factors = set()
    m = p - 1
    d = 2
    while d * d <= m:
        while m % d == 0:
            factors.add(d)
            m //= d
        d += 1
    if m > 1:
        factors.add(m)
    for g in range(2, p):
        if all(pow(g, (p - 1) // f, p) != 1 for f in factors):
            return g
    raise ValueError(f"no primitive root found for {p}")


@dataclass(frozen=True)
class PrimeTransform:
    """Negacyclic NTT tables for one prime p ≡ 1 (mod 2n)."""

    p: int
    n: int
    psi_rev: np.ndarray
    ipsi_rev: np.ndarray
    n_inv: int

    @classmethod
    def build(cls, p: int, n: int) -> "PrimeTransform":
        if (p - 1) % (2 * n) != 0:
            raise ValueError(f"prime {p} does not admit a negacyclic transform at n={n}")
        g = _primitive_root(p)
        psi = pow(g, (p - 1) // (2 * n), p)
        if pow(psi, n, p) != p - 1:
            raise ValueError(f"bad 2n-th root for prime {p}")
        rev = _bit_reverse_indices(n)
        powers = np.empty(n, dtype=np.int64)
        acc = 1
        for i in range(n):
            powers[i] = acc
            acc = (acc * psi) % p
        ipsi = pow(psi, p - 2, p)
        ipowers = np.empty(n, dtype=np.int64)
        acc = 1
        for i in range(n):
            ipowers[i] = acc
            acc = (acc * ipsi) % p
        return cls(
            p=p,
            n=n,
            psi_rev=powers[rev].copy(),
            ipsi_rev=ipowers[rev].copy(),
            n_inv=pow(n, p - 2, p),
        )

    def forward(self, a: np.ndarray) -> np.ndarray:
        p, n = self.p, self.n
        b = np.ascontiguousarray(a.reshape(-1, n))
        t = n
        m = 1
        while m < n:
            t //= 2
            b = b.reshape(-1, m, 2, t)
            w = self.psi_rev[m : 2 * m]
            lo = b[:, :, 0, :]
            hi = (b[:, :, 1, :] * w[None, :, None]) % p
            b = np.stack(((lo + hi) % p, (lo - hi) % p), axis=2).reshape(-1, n)
            m *= 2
        return b.reshape(a.shape)

    def inverse(self, a: np.ndarray) -> np.ndarray:
        p, n = self.p, self.n
        b = np.ascontiguousarray(a.reshape(-1, n))
        t = 1
        m = n
        while m > 1:
            h = m // 2
            b = b.reshape(-1, h, 2, t)
            w = self.ipsi_rev[h : 2 * h]
            lo = b[:, :, 0, :]
            hi = b[:, :, 1, :]
            new_hi = ((lo - hi) * w[None, :, None]) % p
            b = np.stack(((lo + hi) % p, new_hi), axis=2).reshape(-1, n)
            t *= 2
            m = h
        return ((b * self.n_inv) % p).reshape(a.shape)


def _conv_negacyclic_mod(a: np.ndarray, b: np.ndarray, p: int, n: int) -> np.ndarray:
    """Direct negacyclic convolution of one residue row, exact in int64."""
    if 2 * (p - 1).bit_length() + n.bit_length() < 62:
        full = np.convolve(a, b)
    else:
        b_lo = b & ((1 << _SPLIT_BITS) - 1)
        b_hi = b >> _SPLIT_BITS
        full = (np.convolve(a, b_lo) + (np.convolve(a, b_hi) % p) * (1 << _SPLIT_BITS)) % p
    head = full[:n] % p
    tail = np.zeros(n, dtype=np.int64)
    tail[: full.shape[0] - n] = full[n:] % p
    return (head - tail) % p


class RnsBasis:
    """Fixed set of primes whose product is the ring modulus."""

    def __init__(self, primes: tuple[int, ...], n: int):
        self.primes = tuple(int(p) for p in primes)
        self.n = int(n)
        self.modulus = reduce(lambda x, y: x * y, self.primes, 1)
        self.prime_arr = np.array(self.primes, dtype=np.int64).reshape(-1, 1)
        self.use_ntt = self.n >= _NTT_MIN_N
        self.transforms = tuple(PrimeTransform.build(p, self.n) for p in self.primes)
        # Garner mixed-radix constants: inv[i] = (p_0*...*p_{i-1})^-1 mod p_i
        self._garner_inv = [0]
        prod = self.primes[0]
        for p in self.primes[1:]:
            self._garner_inv.append(pow(prod % p, p - 2, p))
            prod *= p

    # -- construction -------------------------------------------------------

    def zeros(self) -> np.ndarray:
        return np.zeros((len(self.primes), self.n), dtype=np.int64)

    def from_int64(self, coeffs: np.ndarray) -> np.ndarray:
        """Residues of signed integer coefficients (any int64 array of length n)."""
        return np.asarray(coeffs, dtype=np.int64)[None, :] % self.prime_arr

    def from_object(self, coeffs) -> np.ndarray:
        out = self.zeros()
        for i, p in enumerate(self.primes):
            out[i] = np.array([int(c) % p for c in coeffs], dtype=np.int64)
        return out

    # -- arithmetic ---------------------------------------------------------

    def add(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        return (a + b) % self.prime_arr

    def sub(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        return (a - b) % self.prime_arr

    def neg(self, a: np.ndarray) -> np.ndarray:
        return (-a) % self.prime_arr

    def scalar_mul(self, a: np.ndarray, k: int) -> np.ndarray:
        return (a * (int(k) % self.prime_arr)) % self.prime_arr

    def ntt(self, a: np.ndarray) -> np.ndarray:
        out = np.empty_like(a)
        for i, tr in enumerate(self.transforms):
            out[i] = tr.forward(a[i])
        return out

    def intt(self, a: np.ndarray) -> np.ndarray:
        out = np.empty_like(a)
        for i, tr in enumerate(self.transforms):
            out[i] = tr.inverse(a[i])
        return out

    def pointwise(self, a_ntt: np.ndarray, b_ntt: np.ndarray) -> np.ndarray:
        return (a_ntt * b_ntt) % self.prime_arr

    def mul(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        if self.use_ntt:
            return self.intt(self.pointwise(self.ntt(a), self.ntt(b)))
        return self.mul_schoolbook(a, b)

    def mul_schoolbook(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        out = self.zeros()
        for i, p in enumerate(self.primes):
            out[i] = _conv_negacyclic_mod(a[i], b[i], p, self.n)
        return out

    def mul_prepared(self, a: np.ndarray, b_ntt: np.ndarray) -> np.ndarray:
        if not self.use_ntt:
            return self.mul_schoolbook(a, self.intt(b_ntt))
        return self.intt(self.pointwise(self.ntt(a), b_ntt))

    # -- lifts --------------------------------------------------------------

    def to_int64(self, a: np.ndarray) -> np.ndarray:
        """Centered lift to signed integers in (-q/2, q/2], exact in int64."""
        if self.modulus.bit_length() > 62:
            raise ValueError("modulus too wide for an int64 lift")
        x = a[0].astype(np.int64).copy()
        prod = self.primes[0]
        for i in range(1, len(self.primes)):
            p = self.primes[i]
            t = ((a[i] - x) * self._garner_inv[i]) % p
            x = x + prod * t
            prod *= p
        half = self.modulus // 2
        return np.where(x > half, x - self.modulus, x)

    def to_object(self, a: np.ndarray) -> list:
        """Lift to python integers in [0, modulus); works at any width."""
        x = [int(v) for v in a[0] % self.prime_arr[0, 0]]
        prod = self.primes[0]
        for i in range(1, len(self.primes)):
            p = self.primes[i]
            inv = self._garner_inv[i]
            row = a[i]
            x = [
                xj + prod * (((int(rj) - xj) * inv) % p)
                for xj, rj in zip(x, row)
            ]
            prod *= p
        return x

    def reduce_mod(self, a: np.ndarray, other: "RnsBasis") -> np.ndarray:
        """Residues of this element in another basis (exact via centered lift)."""
        return other.from_int64(self.to_int64(a))


def negacyclic_mul_bruteforce(a, b, n: int, q: int):
    """Python-int schoolbook product mod (X^n + 1, q); the independent oracle."""
    out = [0] * n
    for i in range(n):
        ai = int(a[i])
        if ai == 0:
            continue
        for j in range(n):
            k = i + j
            term = ai * int(b[j])
            if k >= n:
                out[k - n] = (out[k - n] - term) % q
            else:
                out[k] = (out[k] + term) % q
    return [x % q for x in out]
