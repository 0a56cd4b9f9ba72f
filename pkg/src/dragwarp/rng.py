"""Seedable counter-based random number generation.

The generator is stateless at its core: word ``i`` of the stream for a 64-bit
``seed`` is

    u64(seed, i) = mix64((seed + (i + 1) * GAMMA) mod 2^64)

where ``GAMMA = 0x9E3779B97F4A7C15`` and ``mix64`` is the SplitMix64
finalizer (xor-shift / multiply rounds with constants 0xBF58476D1CE4E5B9 and
0x94D049BB133111EB).  Any word of any stream can therefore be computed
independently, and a reimplementation in another language reproduces the
streams bit for bit.

Uniform doubles map the top 53 bits into the open interval (0, 1):

    u = ((u64 >> 11) + 0.5) * 2^-53

Normal variates are the inverse normal CDF applied to those uniforms, using
Acklam's rational approximation (relative error below 1.2e-9), so the
uniform-to-normal map is also portable.

Seeds for sub-streams are derived with :func:`derive_seed`, which hashes the
tag sequence with 64-bit FNV-1a and mixes it into the parent seed.
"""

from __future__ import annotations

import numpy as np

_MASK64 = np.uint64(0xFFFFFFFFFFFFFFFF)
_GAMMA = 0x9E3779B97F4A7C15
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


def _mix64(x: np.ndarray) -> np.ndarray:
    x = x.astype(np.uint64)
    x ^= x >> np.uint64(30)
    x *= np.uint64(0xBF58476D1CE4E5B9)
    x ^= x >> np.uint64(27)
    x *= np.uint64(0x94D049BB133111EB)
    x ^= x >> np.uint64(31)
    return x


def raw_words(seed: int, start: int, count: int) -> np.ndarray:
    """Words ``start .. start+count-1`` of the stream for ``seed``."""
    idx = np.arange(start + 1, start + count + 1, dtype=np.uint64)
    base = (np.uint64(seed & 0xFFFFFFFFFFFFFFFF) + idx * np.uint64(_GAMMA)) & _MASK64
    return _mix64(base)


def derive_seed(seed: int, *tags: int | str) -> int:
    """Derive a child seed from ``seed`` and a tag sequence.

    Tags are hashed with FNV-1a, each prefixed by its byte length (8 LE
    bytes) so tag boundaries are unambiguous: strings hash as UTF-8 bytes,
    integers as 8 little-endian bytes.  The digest is xor-folded into the
    parent seed and passed through the SplitMix64 finalizer.
    """
    h = _FNV_OFFSET
    for tag in tags:
        data = tag.encode("utf-8") if isinstance(tag, str) else int(tag).to_bytes(8, "little", signed=True)
        for b in len(data).to_bytes(8, "little") + data:
            h = ((h ^ b) * _FNV_PRIME) & 0xFFFFFFFFFFFFFFFF
    mixed = _mix64(np.array([(seed ^ h) & 0xFFFFFFFFFFFFFFFF], dtype=np.uint64))
    return int(mixed[0])


# Acklam's inverse normal CDF coefficients.
_A = (-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
      1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00)
_B = (-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
      6.680131188771972e+01, -1.328068155288572e+01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
      -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
      3.754408661907416e+00)
_P_LOW = 0.02425


def inverse_normal_cdf(u: np.ndarray) -> np.ndarray:
    """Acklam's approximation of the standard normal quantile, elementwise."""
    u = np.asarray(u, dtype=np.float64)
    out = np.empty_like(u)

    lower = u < _P_LOW
    upper = u > 1.0 - _P_LOW
    mid = ~(lower | upper)

    if np.any(mid):
        q = u[mid] - 0.5
        r = q * q
        num = ((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]
        den = ((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0
        out[mid] = num * q / den

    for region, sign in ((lower, 1.0), (upper, -1.0)):
        if not np.any(region):
            continue
        p = u[region] if sign > 0 else 1.0 - u[region]
        q = np.sqrt(-2.0 * np.log(p))
        num = ((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]
        den = (((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0
        out[region] = sign * num / den

    return out


class CounterRng:
    """Sequential view over one counter-based stream."""

    def __init__(self, seed: int):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self._pos = 0

    def words(self, count: int) -> np.ndarray:
        out = raw_words(self.seed, self._pos, count)
        self._pos += count
        return out

    def uniforms(self, shape) -> np.ndarray:
        n = int(np.prod(shape)) if not np.isscalar(shape) else int(shape)
        w = self.words(n)
        u = ((w >> np.uint64(11)).astype(np.float64) + 0.5) * (2.0 ** -53)
        return u.reshape(shape)

    def normals(self, shape) -> np.ndarray:
        return inverse_normal_cdf(self.uniforms(shape))

    def spawn(self, *tags: int | str) -> "CounterRng":
        return CounterRng(derive_seed(self.seed, *tags))


def normals_for(seed: int, shape) -> np.ndarray:
    """First normal draw of the stream for ``seed``; shape-sized block."""
    return CounterRng(seed).normals(shape)
