"""Framed binary encoding for the scheme's key and ciphertext objects.

Every frame starts with the magic bytes ``PBFL``, a format version, a kind
tag, and the ring fingerprint (preset name, degree, modulus width) of the
parameters that produced the object. Loaders check the fingerprint against
the parameters they are given, so a frame can never be deserialized into a
mismatched ring. Polynomial payloads are stored as little-endian 64-bit
limbs of the canonical representative in [0, modulus); ordinary mod-q
objects need one limb per coefficient, the relinearization key (defined
modulo P*q) needs two.
"""

from __future__ import annotations

import struct

import numpy as np

from . import fhe
from .ring import RnsBasis

MAGIC = b"PBFL"
VERSION = 1

KIND_PLAINTEXT = 1
KIND_CIPHERTEXT = 2
KIND_SECRET_KEY = 3
KIND_KEY_SHARE = 4
KIND_PUBLIC_KEY = 5
KIND_EVAL_KEY = 6
KIND_PARTIAL_DEC = 7

_KIND_NAMES = {
    KIND_PLAINTEXT: "plaintext",
    KIND_CIPHERTEXT: "ciphertext",
    KIND_SECRET_KEY: "secret key",
    KIND_KEY_SHARE: "secret key share",
    KIND_PUBLIC_KEY: "public key",
    KIND_EVAL_KEY: "evaluation key",
    KIND_PARTIAL_DEC: "partial decryption",
}

_MASK64 = (1 << 64) - 1


def _limb_count(basis: RnsBasis) -> int:
    return max(1, (basis.modulus.bit_length() + 63) // 64)


def _pack_poly(basis: RnsBasis, res: np.ndarray) -> bytes:
    limbs = _limb_count(basis)
    if limbs == 1:
        centered = basis.to_int64(res)
        vals = np.where(centered < 0, centered + basis.modulus, centered)
        return struct.pack("<B", 1) + vals.astype("<u8").tobytes()
    ints = basis.to_object(res)
    arr = np.zeros((basis.n, limbs), dtype=np.uint64)
    for j, v in enumerate(ints):
        for k in range(limbs):
            arr[j, k] = (v >> (64 * k)) & _MASK64
    return struct.pack("<B", limbs) + arr.astype("<u8").tobytes()


def _unpack_poly(basis: RnsBasis, buf: bytes, off: int) -> tuple[np.ndarray, int]:
    if off >= len(buf):
        raise ValueError("frame truncated inside polynomial header")
    limbs = buf[off]
    off += 1
    if limbs != _limb_count(basis):
        raise ValueError(
            f"polynomial limb width {limbs} does not match the ring modulus"
        )
    nbytes = basis.n * limbs * 8
    if off + nbytes > len(buf):
        raise ValueError("frame truncated inside polynomial payload")
    arr = np.frombuffer(buf, dtype="<u8", count=basis.n * limbs, offset=off)
    off += nbytes
    if limbs == 1:
        vals = arr.astype(np.int64)
        if int(vals.max(initial=0)) >= basis.modulus or int(vals.min(initial=0)) < 0:
            raise ValueError("polynomial coefficient outside [0, modulus)")
        return basis.from_int64(vals), off
    rows = arr.reshape(basis.n, limbs)
    ints = []
    for j in range(basis.n):
        v = 0
        for k in range(limbs):
            v |= int(rows[j, k]) << (64 * k)
        if v >= basis.modulus:
            raise ValueError("polynomial coefficient outside [0, modulus)")
        ints.append(v)
    return basis.from_object(ints), off


def _pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    if len(raw) > 255:
        raise ValueError("string field longer than 255 bytes")
    return struct.pack("<B", len(raw)) + raw


def _unpack_str(buf: bytes, off: int) -> tuple[str, int]:
    if off >= len(buf):
        raise ValueError("frame truncated inside string header")
    length = buf[off]
    off += 1
    if off + length > len(buf):
        raise ValueError("frame truncated inside string payload")
    return buf[off : off + length].decode("utf-8"), off + length


def _header(params: fhe.RingParams, kind: int) -> bytes:
    return (
        MAGIC
        + struct.pack("<HB", VERSION, kind)
        + _pack_str(params.preset)
        + struct.pack("<IH", params.n_f, params.q.bit_length())
    )


def _read_header(data: bytes) -> tuple[int, str, int, int, int]:
    if len(data) < 7 or data[:4] != MAGIC:
        raise ValueError("not a PBFL frame (bad magic)")
    version, kind = struct.unpack_from("<HB", data, 4)
    if version != VERSION:
        raise ValueError(f"unsupported frame version {version}")
    preset, off = _unpack_str(data, 7)
    if off + 6 > len(data):
        raise ValueError("frame truncated inside ring fingerprint")
    n_f, qbits = struct.unpack_from("<IH", data, off)
    return kind, preset, n_f, qbits, off + 6


def _check_ring(params: fhe.RingParams, preset: str, n_f: int, qbits: int) -> None:
    if preset != params.preset or n_f != params.n_f or qbits != params.q.bit_length():
        raise ValueError(
            f"frame was produced under preset {preset!r} (n_f={n_f}, {qbits}-bit q), "
            f"cannot load under {params.preset!r}"
        )


def peek_kind(data: bytes) -> str:
    """Human-readable kind of a frame, without deserializing the payload."""
    kind, _, _, _, _ = _read_header(data)
    if kind not in _KIND_NAMES:
        raise ValueError(f"unknown frame kind {kind}")
    return _KIND_NAMES[kind]


def dump(obj) -> bytes:
    """Serialize any scheme object into a self-describing frame."""
    if isinstance(obj, fhe.Plaintext):
        return (
            _header(obj.params, KIND_PLAINTEXT)
            + struct.pack("<d", obj.scale)
            + _pack_poly(obj.params.q_basis, obj.res)
        )
    if isinstance(obj, fhe.Ciphertext):
        qb = obj.params.q_basis
        return (
            _header(obj.params, KIND_CIPHERTEXT)
            + struct.pack("<dB", obj.scale, obj.depth_used)
            + _pack_poly(qb, obj.c0)
            + _pack_poly(qb, obj.c1)
        )
    if isinstance(obj, fhe.SecretKey):
        return _header(obj.params, KIND_SECRET_KEY) + _pack_poly(
            obj.params.q_basis, obj.res
        )
    if isinstance(obj, fhe.SecretKeyShare):
        return (
            _header(obj.params, KIND_KEY_SHARE)
            + _pack_str(obj.holder_id)
            + _pack_poly(obj.params.q_basis, obj.res)
        )
    if isinstance(obj, fhe.PublicKey):
        qb = obj.params.q_basis
        return (
            _header(obj.params, KIND_PUBLIC_KEY)
            + _pack_poly(qb, obj.c0)
            + _pack_poly(qb, obj.c1)
        )
    if isinstance(obj, fhe.EvalKey):
        fb = obj.params.full_basis
        return (
            _header(obj.params, KIND_EVAL_KEY)
            + _pack_poly(fb, obj.c0)
            + _pack_poly(fb, obj.c1)
        )
    if isinstance(obj, fhe.PartialDecryption):
        return (
            _header(obj.params, KIND_PARTIAL_DEC)
            + _pack_str(obj.holder_id)
            + _pack_poly(obj.params.q_basis, obj.res)
        )
    raise TypeError(f"cannot serialize objects of type {type(obj).__name__}")


def load(params: fhe.RingParams, data: bytes):
    """Deserialize a frame produced by dump under the same ring parameters."""
    kind, preset, n_f, qbits, off = _read_header(data)
    _check_ring(params, preset, n_f, qbits)
    qb = params.q_basis
    if kind == KIND_PLAINTEXT:
        (scale,) = struct.unpack_from("<d", data, off)
        res, off = _unpack_poly(qb, data, off + 8)
        return fhe.Plaintext(params, res, scale)
    if kind == KIND_CIPHERTEXT:
        scale, depth = struct.unpack_from("<dB", data, off)
        c0, off = _unpack_poly(qb, data, off + 9)
        c1, off = _unpack_poly(qb, data, off)
        return fhe.Ciphertext(params, c0, c1, scale, depth)
    if kind == KIND_SECRET_KEY:
        res, off = _unpack_poly(qb, data, off)
        return fhe.SecretKey(params, res)
    if kind == KIND_KEY_SHARE:
        holder, off = _unpack_str(data, off)
        res, off = _unpack_poly(qb, data, off)
        return fhe.SecretKeyShare(params, holder, res)
    if kind == KIND_PUBLIC_KEY:
        c0, off = _unpack_poly(qb, data, off)
        c1, off = _unpack_poly(qb, data, off)
        return fhe.PublicKey(params, c0, c1)
    if kind == KIND_EVAL_KEY:
        fb = params.full_basis
        c0, off = _unpack_poly(fb, data, off)
        c1, off = _unpack_poly(fb, data, off)
        return fhe.EvalKey(params, c0, c1)
    if kind == KIND_PARTIAL_DEC:
        holder, off = _unpack_str(data, off)
        res, off = _unpack_poly(qb, data, off)
        return fhe.PartialDecryption(params, holder, res)
    raise ValueError(f"unknown frame kind {kind}")
