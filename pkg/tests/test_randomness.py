import math
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, special, stats

from mlpell import DiffusionMatrix, DrawTally, derive_stream, sample_exponential, sample_point
from mlpell.mlp import compiled_available
from mlpell.randomness import MASK64, norm_ppf, siphash24_words, zigzag

needs_ext = pytest.mark.skipif(not compiled_available(), reason="compiled kernel not built")

M64 = (1 << 64) - 1


def _sip_bytes(key: bytes, msg: bytes) -> int:
    """Byte-oriented SipHash-2-4, written independently of the package."""
    def rotl(x, b):
        return ((x << b) | (x >> (64 - b))) & M64

    def rnd(v):
        v0, v1, v2, v3 = v
        v0 = (v0 + v1) & M64; v1 = rotl(v1, 13) ^ v0; v0 = rotl(v0, 32)
        v2 = (v2 + v3) & M64; v3 = rotl(v3, 16) ^ v2
        v0 = (v0 + v3) & M64; v3 = rotl(v3, 21) ^ v0
        v2 = (v2 + v1) & M64; v1 = rotl(v1, 17) ^ v2; v2 = rotl(v2, 32)
        return [v0, v1, v2, v3]

    k0, k1 = struct.unpack("<QQ", key)
    v = [k0 ^ 0x736F6D6570736575, k1 ^ 0x646F72616E646F6D,
         k0 ^ 0x6C7967656E657261, k1 ^ 0x7465646279746573]
    nb = len(msg) // 8
    for i in range(nb):
        m = struct.unpack("<Q", msg[8 * i:8 * i + 8])[0]
        v[3] ^= m
        v = rnd(rnd(v))
        v[0] ^= m
    tail = msg[8 * nb:] + bytes(8)
    b = ((len(msg) & 0xFF) << 56) | int.from_bytes(tail[:7], "little")
    v[3] ^= b
    v = rnd(rnd(v))
    v[0] ^= b
    v[2] ^= 0xFF
    for _ in range(4):
        v = rnd(v)
    return v[0] ^ v[1] ^ v[2] ^ v[3]


KEY = bytes(range(16))
K0, K1 = struct.unpack("<QQ", KEY)


class TestSipHash:
    def test_published_vectors(self):
        # reference outputs for key 00..0f and messages 00..(len-1)
        assert _sip_bytes(KEY, b"") == 0x726FDB47DD0E0E31
        assert _sip_bytes(KEY, bytes(range(15))) == 0xA129CA6149BE45E5
        assert _sip_bytes(KEY, bytes(range(16))) == 0x3F2ACC7F57C29BDB

    def test_word_form_matches_bytes(self):
        assert siphash24_words(K0, K1, K0, K1) == 0x3F2ACC7F57C29BDB

    @given(st.integers(0, MASK64), st.integers(0, MASK64))
    @settings(max_examples=50)
    def test_word_form_random_messages(self, m0, m1):
        msg = struct.pack("<QQ", m0, m1)
        assert siphash24_words(K0, K1, m0, m1) == _sip_bytes(KEY, msg)


class TestDerivation:
    def test_deterministic(self):
        assert derive_stream(42, [1, 2, 3]) == derive_stream(42, [1, 2, 3])

    def test_sign_injective(self):
        assert derive_stream(42, [1, 2, 3]) != derive_stream(42, [1, 2, -3])

    def test_length_injective(self):
        assert derive_stream(42, [0]) != derive_stream(42, [0, 0])
        assert derive_stream(42, []) != derive_stream(42, [0])

    def test_root_seeds_distinct(self):
        keys = {derive_stream(s).digest for s in range(2000)}
        assert len(keys) == 2000

    @given(st.lists(st.integers(-2**40, 2**40), max_size=5), st.integers(-100, 100))
    @settings(max_examples=50)
    def test_child_is_path_extension(self, path, i):
        assert derive_stream(7, path).child(i) == derive_stream(7, list(path) + [i])

    @given(st.lists(st.integers(-50, 50), max_size=4), st.lists(st.integers(-50, 50), max_size=4))
    @settings(max_examples=100)
    def test_injective_on_paths(self, a, b):
        if a != b:
            assert derive_stream(1, a) != derive_stream(1, b)

    def test_point_stream_separate_from_children(self):
        key = derive_stream(3, [2])
        ps = key.point_stream()
        assert all(ps != key.child(i) for i in range(-20, 21))

    def test_zigzag(self):
        assert [zigzag(i) for i in (0, -1, 1, -2, 2)] == [0, 1, 2, 3, 4]
        with pytest.raises(OverflowError):
            zigzag(2**63)
        with pytest.raises(ValueError):
            derive_stream(-1)

    def test_uniform_ranges(self):
        key = derive_stream(9)
        u = [key.uniform(c) for c in range(2000)]
        ou = [key.open_uniform(c) for c in range(2000)]
        assert min(u) > 0.0 and max(u) <= 1.0
        assert min(ou) > 0.0 and max(ou) < 1.0

    def test_sibling_correlation(self):
        parent = derive_stream(11)
        n = 10_000
        a = np.array([parent.child(i).uniform(0) for i in range(n)])
        b = np.array([parent.child(i).uniform(1) for i in range(n)])
        c = np.array([parent.child(i + 1).uniform(0) for i in range(n)])
        assert abs(np.corrcoef(a, b)[0, 1]) < 4 / math.sqrt(n)
        assert abs(np.corrcoef(a, c)[0, 1]) < 4 / math.sqrt(n)


class TestNormalPpf:
    def test_against_scipy(self):
        p = np.concatenate([np.linspace(1e-12, 1 - 1e-12, 20001), [1e-300, 1e-100, 1e-20]])
        ours = np.array([norm_ppf(float(q)) for q in p])
        ref = special.ndtri(p)
        rel = np.abs(ours - ref) / np.maximum(np.abs(ref), 1e-300)
        mask = np.abs(ref) > 1e-8
        assert np.max(rel[mask]) < 1e-14
        assert np.max(np.abs(ours - ref)[~mask]) < 1e-15

    def test_symmetry_and_known(self):
        assert norm_ppf(0.5) == 0.0
        assert norm_ppf(0.975) == pytest.approx(1.959963984540054, rel=1e-15)
        for p in (2.0**-30, 2.0**-7, 0.25, 0.375):  # 1 - p exact
            assert norm_ppf(p) == pytest.approx(-norm_ppf(1 - p), rel=1e-12)


class TestSamplers:
    def test_exponential_moments(self):
        n = 100_000
        parent = derive_stream(5, [1])
        lam = 2.0
        r = np.array([sample_exponential(parent.child(i), lam)[0] for i in range(n)])
        assert abs(r.mean() - 0.5) <= 3 * 0.5 / math.sqrt(n)
        parent = derive_stream(5, [2])
        r1 = np.array([sample_exponential(parent.child(i), 1.0)[0] for i in range(n)])
        s = math.exp(-1.0)
        assert abs(np.mean(r1 >= 1.0) - s) <= 3 * math.sqrt(s * (1 - s) / n)
        assert np.all(r1 >= 0.0)

    def test_exponential_tally_and_errors(self):
        r, t = sample_exponential(derive_stream(0), 1.0)
        assert t == DrawTally(0, 1)
        with pytest.raises(ValueError):
            sample_exponential(derive_stream(0), 0.0)

    def test_zero_diffusion_is_identity(self):
        B = DiffusionMatrix.scaled_identity(0.0, 3)
        y, r, t = sample_point([1.0, -2.0, 0.5], B, 3.0, derive_stream(1))
        assert y == [1.0, -2.0, 0.5]
        assert t == DrawTally(3, 1)

    def test_draw_order(self):
        key = derive_stream(4, [0])
        B = DiffusionMatrix.diagonal([1.0, 2.0])
        y, r, _ = sample_point([0.0, 0.0], B, 2.0, key)
        assert r == -math.log(key.uniform(0)) / 2.0
        z = [norm_ppf(key.open_uniform(j)) for j in (1, 2)]
        assert y == [math.sqrt(r) * z[0], math.sqrt(r) * 2.0 * z[1]]
        # d only changes the number of Gaussians consumed
        y1, r1, t1 = sample_point([0.0], DiffusionMatrix.scaled_identity(1.0, 1), 2.0, key)
        assert r1 == r and t1 == DrawTally(1, 1)

    def test_tally_additive(self):
        assert DrawTally(2, 1) + DrawTally(3, 4) == DrawTally(5, 5)

    @pytest.mark.parametrize("lam,b", [(2.0, 1.0), (0.5, 3.0)])
    def test_laplace_density_by_quadrature(self, lam, b):
        # density of b W_R: int_0^inf lam e^{-lam t} N(0, b^2 t)(y) dt
        for y in (0.1, 0.7, 2.5):
            val, _ = integrate.quad(lambda t: lam * math.exp(-lam * t)
                                    * math.exp(-y * y / (2 * b * b * t)) / math.sqrt(2 * math.pi * b * b * t),
                                    0, np.inf, limit=200)
            closed = math.sqrt(2 * lam) / (2 * b) * math.exp(-math.sqrt(2 * lam) * y / b)
            assert val == pytest.approx(closed, rel=1e-8)

    @needs_ext
    def test_batch_sampler_parity(self):
        from mlpell._ckernel import child_point_keys, sample_points
        parent = derive_stream(2, [5])
        for B in (DiffusionMatrix.scaled_identity(1.3, 3), DiffusionMatrix.diagonal([1.0, -0.5, 2.0]),
                  DiffusionMatrix.dense([[1.0, 0.2, 0.0], [0.0, 1.0, -0.3], [0.1, 0.0, 0.7]])):
            keys = child_point_keys(*parent.digest, 0, 20)
            x = np.array([0.1, -0.2, 0.3])
            ys = sample_points(keys, x, B, 1.5)
            for i in range(20):
                y, _, _ = sample_point(x.tolist(), B, 1.5, parent.child(i).point_stream())
                assert ys[i].tolist() == y

    @needs_ext
    def test_laplace_marginal_ks(self):
        from mlpell._ckernel import child_point_keys, sample_points
        lam = 2.0
        keys = child_point_keys(*derive_stream(17).digest, 0, 100_000)
        y = sample_points(keys, np.zeros(1), DiffusionMatrix.scaled_identity(1.0, 1), lam)[:, 0]
        res = stats.kstest(y, stats.laplace(scale=1 / math.sqrt(2 * lam)).cdf)
        assert res.pvalue > 0.01

    @needs_ext
    def test_second_moment(self):
        from mlpell._ckernel import child_point_keys, sample_points
        B = DiffusionMatrix.dense([[1.0, 0.5], [0.0, 2.0]])
        lam = 3.0
        keys = child_point_keys(*derive_stream(19).digest, 0, 100_000)
        x = np.array([1.0, -1.0])
        sq = np.sum((sample_points(keys, x, B, lam) - x) ** 2, axis=1)
        target = B.trace_gram() / lam
        assert abs(sq.mean() - target) <= 3 * sq.std(ddof=1) / math.sqrt(sq.size)
