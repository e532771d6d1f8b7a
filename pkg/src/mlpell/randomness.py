"""Hierarchical random streams keyed by integer index paths.

Every stream is identified by a 128-bit SipHash-2-4 key.  A root key is
derived from a 64-bit seed; a child key is obtained by absorbing one path
element (zig-zag encoded, domain separated) into the parent key.  Scalar draws
are SipHash outputs of a counter under the stream key, so any draw of any
stream can be recomputed in isolation.

The compiled kernel (``_ckernel.pyx``) mirrors the functions in this module
bit for bit; keep both in sync.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

MASK64 = (1 << 64) - 1

# domain-separation words (second SipHash message word)
ROOT_A = 0x6D6C702D726F6F41
ROOT_B = 0x6D6C702D726F6F42
CHILD_A = 0x6D6C702D63686941
CHILD_B = 0x6D6C702D63686942
POINT_A = 0x6D6C702D706E7441
POINT_B = 0x6D6C702D706E7442
DRAW = 0x6D6C702D64726177
ROOT_K0 = 0x0706050403020100
ROOT_K1 = 0x0F0E0D0C0B0A0908

TWO_M53 = 2.0 ** -53


def _rotl(x: int, b: int) -> int:
    return ((x << b) | (x >> (64 - b))) & MASK64


def _sipround(v0, v1, v2, v3):
    v0 = (v0 + v1) & MASK64
    v1 = _rotl(v1, 13) ^ v0
    v0 = _rotl(v0, 32)
    v2 = (v2 + v3) & MASK64
    v3 = _rotl(v3, 16) ^ v2
    v0 = (v0 + v3) & MASK64
    v3 = _rotl(v3, 21) ^ v0
    v2 = (v2 + v1) & MASK64
    v1 = _rotl(v1, 17) ^ v2
    v2 = _rotl(v2, 32)
    return v0, v1, v2, v3


def siphash24_words(k0: int, k1: int, m0: int, m1: int) -> int:
    """SipHash-2-4 of the 16-byte message ``m0 || m1`` (little endian words)."""
    v0 = k0 ^ 0x736F6D6570736575
    v1 = k1 ^ 0x646F72616E646F6D
    v2 = k0 ^ 0x6C7967656E657261
    v3 = k1 ^ 0x7465646279746573
    for m in (m0, m1):
        v3 ^= m
        v0, v1, v2, v3 = _sipround(v0, v1, v2, v3)
        v0, v1, v2, v3 = _sipround(v0, v1, v2, v3)
        v0 ^= m
    b = 16 << 56
    v3 ^= b
    v0, v1, v2, v3 = _sipround(v0, v1, v2, v3)
    v0, v1, v2, v3 = _sipround(v0, v1, v2, v3)
    v0 ^= b
    v2 ^= 0xFF
    for _ in range(4):
        v0, v1, v2, v3 = _sipround(v0, v1, v2, v3)
    return v0 ^ v1 ^ v2 ^ v3


def zigzag(i: int) -> int:
    """Map a signed 64-bit integer to an unsigned one, injectively."""
    if not -(1 << 63) <= i < (1 << 63):
        raise OverflowError(f"index element {i} outside the signed 64-bit range")
    return ((i << 1) ^ (i >> 63)) & MASK64


@dataclass(frozen=True)
class StreamKey:
    """Seed material for one random stream.

    ``digest`` is the SipHash key ``(k0, k1)``.  Keys are immutable and
    hashable; deriving a child never mutates the parent.
    """

    root_seed: int
    digest: tuple[int, int]

    def child(self, i: int) -> "StreamKey":
        k0, k1 = self.digest
        z = zigzag(i)
        return StreamKey(
            self.root_seed,
            (siphash24_words(k0, k1, z, CHILD_A), siphash24_words(k0, k1, z, CHILD_B)),
        )

    def extend(self, path: Iterable[int]) -> "StreamKey":
        key = self
        for i in path:
            key = key.child(i)
        return key

    def point_stream(self) -> "StreamKey":
        """Key of the sampling stream attached to this index.

        Uses its own domain words so that it never coincides with any
        ``child(i)`` key.
        """
        k0, k1 = self.digest
        return StreamKey(
            self.root_seed,
            (siphash24_words(k0, k1, 0, POINT_A), siphash24_words(k0, k1, 0, POINT_B)),
        )

    def raw(self, counter: int) -> int:
        k0, k1 = self.digest
        return siphash24_words(k0, k1, counter & MASK64, DRAW)

    def uniform(self, counter: int) -> float:
        """Uniform draw in (0, 1]."""
        return ((self.raw(counter) >> 11) + 1) * TWO_M53

    def open_uniform(self, counter: int) -> float:
        """Uniform draw in the open interval (0, 1)."""
        return ((self.raw(counter) >> 11) + 0.5) * TWO_M53

    def numpy_generator(self) -> np.random.Generator:
        """A vectorised generator seeded from this key (no draw accounting)."""
        return np.random.Generator(np.random.Philox(key=list(self.digest)))


def derive_stream(root_seed: int, idx: Sequence[int] = ()) -> StreamKey:
    if not 0 <= root_seed <= MASK64:
        raise ValueError(f"root_seed must be an unsigned 64-bit integer, got {root_seed}")
    root = StreamKey(
        root_seed,
        (
            siphash24_words(ROOT_K0, ROOT_K1, root_seed, ROOT_A),
            siphash24_words(ROOT_K0, ROOT_K1, root_seed, ROOT_B),
        ),
    )
    return root.extend(idx)


@dataclass(frozen=True)
class DrawTally:
    gaussians: int = 0
    exponentials: int = 0

    def __add__(self, other: "DrawTally") -> "DrawTally":
        return DrawTally(self.gaussians + other.gaussians, self.exponentials + other.exponentials)


# Wichura, AS241 (PPND16): inverse standard normal CDF, ~1e-16 relative accuracy.
_A = (3.3871328727963666080e0, 1.3314166789178437745e2, 1.9715909503065514427e3,
      1.3731693765509461125e4, 4.5921953931549871457e4, 6.7265770927008700853e4,
      3.3430575583588128105e4, 2.5090809287301226727e3)
_B = (1.0, 4.2313330701600911252e1, 6.8718700749205790830e2, 5.3941960214247511077e3,
      2.1213794301586595867e4, 3.9307895800092710610e4, 2.8729085735721942674e4,
      5.2264952788528545610e3)
_C = (1.42343711074968357734e0, 4.63033784615654529590e0, 5.76949722146069140550e0,
      3.64784832476320460504e0, 1.27045825245236838258e0, 2.41780725177450611770e-1,
      2.27238449892691845833e-2, 7.74545014278341407640e-4)
_D = (1.0, 2.05319162663775882187e0, 1.67638483018380384940e0, 6.89767334985100004550e-1,
      1.48103976427480074590e-1, 1.51986665636164571966e-2, 5.47593808499534494600e-4,
      1.05075007164441684324e-9)
_E = (6.65790464350110377720e0, 5.46378491116411436990e0, 1.78482653991729133580e0,
      2.96560571828504891230e-1, 2.65321895265761230930e-2, 1.24266094738807843860e-3,
      2.71155556874348757815e-5, 2.01033439929228813265e-7)
_F = (1.0, 5.99832206555887937690e-1, 1.36929880922735805310e-1, 1.48753612908506148525e-2,
      7.86869131145613259100e-4, 1.84631831751005468180e-5, 1.42151175831644588870e-7,
      2.04426310338993978564e-15)


def _horner(c, r):
    return (((((((c[7] * r + c[6]) * r + c[5]) * r + c[4]) * r + c[3]) * r + c[2]) * r
             + c[1]) * r + c[0])


def norm_ppf(p: float) -> float:
    """Inverse standard normal CDF for p in (0, 1)."""
    q = p - 0.5
    if abs(q) <= 0.425:
        r = 0.180625 - q * q
        return q * _horner(_A, r) / _horner(_B, r)
    r = p if q < 0.0 else 1.0 - p
    r = math.sqrt(-math.log(r))
    if r <= 5.0:
        r = r - 1.6
        val = _horner(_C, r) / _horner(_D, r)
    else:
        r = r - 5.0
        val = _horner(_E, r) / _horner(_F, r)
    return -val if q < 0.0 else val


def sample_exponential(key: StreamKey, lam: float) -> tuple[float, DrawTally]:
    """Draw R with P(R >= t) = exp(-lam t) by inversion of counter 0."""
    if not lam > 0.0:
        raise ValueError(f"rate must be positive, got {lam}")
    return -math.log(key.uniform(0)) / lam, DrawTally(0, 1)


def sample_point(x, B, lam: float, key: StreamKey):
    """Draw ``y = x + B W_R`` with R ~ Exp(lam) independent of the Brownian motion W.

    Since W_R given R = r is N(0, r I), this is ``x + sqrt(r) B z`` with z
    standard normal.  Counter 0 feeds the exponential, counters 1..d the
    Gaussians.  Returns ``(y, r, tally)`` with y a list of floats.
    """
    d = B.d
    if len(x) != d:
        raise ValueError(f"point has length {len(x)}, diffusion matrix is {d}x{d}")
    r, _ = sample_exponential(key, lam)
    z = [norm_ppf(key.open_uniform(j + 1)) for j in range(d)]
    sr = math.sqrt(r)
    bz = B.apply_list(z)
    y = [float(x[i]) + sr * bz[i] for i in range(d)]
    return y, r, DrawTally(d, 1)
