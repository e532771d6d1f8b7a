# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled MLP recursion for builtin nonlinearities.

Mirrors ``_pykernel.PyKernel`` and ``randomness`` operation for operation.
Build with -ffp-contract=off so no fused multiply-adds change the rounding.
"""
from libc.math cimport log, sqrt, exp, sin, cos, atan, isfinite
from libc.stdlib cimport malloc, free
from libc.stdint cimport uint64_t, int64_t
from libc.string cimport memcpy

import numpy as np
cimport numpy as cnp

cnp.import_array()

cdef enum:
    F_CONSTANT = 0
    F_AFFINE = 1
    F_LINEAR = 2
    F_QUADRATIC = 3
    F_MANUFACTURED = 4

cdef enum:
    B_SCALED = 0
    B_DIAG = 1
    B_DENSE = 2

cdef uint64_t CHILD_A = 0x6D6C702D63686941ULL
cdef uint64_t CHILD_B = 0x6D6C702D63686942ULL
cdef uint64_t POINT_A = 0x6D6C702D706E7441ULL
cdef uint64_t POINT_B = 0x6D6C702D706E7442ULL
cdef uint64_t DRAW = 0x6D6C702D64726177ULL
cdef double TWO_M53 = 1.1102230246251565e-16

cdef double[8] PA = [3.3871328727963666080e0, 1.3314166789178437745e2, 1.9715909503065514427e3,
                     1.3731693765509461125e4, 4.5921953931549871457e4, 6.7265770927008700853e4,
                     3.3430575583588128105e4, 2.5090809287301226727e3]
cdef double[8] PB = [1.0, 4.2313330701600911252e1, 6.8718700749205790830e2, 5.3941960214247511077e3,
                     2.1213794301586595867e4, 3.9307895800092710610e4, 2.8729085735721942674e4,
                     5.2264952788528545610e3]
cdef double[8] PC = [1.42343711074968357734e0, 4.63033784615654529590e0, 5.76949722146069140550e0,
                     3.64784832476320460504e0, 1.27045825245236838258e0, 2.41780725177450611770e-1,
                     2.27238449892691845833e-2, 7.74545014278341407640e-4]
cdef double[8] PD = [1.0, 2.05319162663775882187e0, 1.67638483018380384940e0, 6.89767334985100004550e-1,
                     1.48103976427480074590e-1, 1.51986665636164571966e-2, 5.47593808499534494600e-4,
                     1.05075007164441684324e-9]
cdef double[8] PE = [6.65790464350110377720e0, 5.46378491116411436990e0, 1.78482653991729133580e0,
                     2.96560571828504891230e-1, 2.65321895265761230930e-2, 1.24266094738807843860e-3,
                     2.71155556874348757815e-5, 2.01033439929228813265e-7]
cdef double[8] PF = [1.0, 5.99832206555887937690e-1, 1.36929880922735805310e-1, 1.48753612908506148525e-2,
                     7.86869131145613259100e-4, 1.84631831751005468180e-5, 1.42151175831644588870e-7,
                     2.04426310338993978564e-15]


cdef struct Key:
    uint64_t k0
    uint64_t k1


cdef struct Ctx:
    int d
    long long M
    int elliptic
    int fkind
    int bkind
    int target      # 0 bump, 1 cosine-mean
    int psikind     # 0 sin, 1 arctan
    double lam
    double c
    double slope
    double bscale
    double s2
    double amp
    double alpha
    double c4
    double c2
    double nha
    double psiscale
    double lam_m
    double* a
    double* bdiag
    double* bdense
    double* gdiag
    double* work
    long long gauss
    long long expo
    long long fev
    int err
    double err_v
    double err_f
    double* err_x


cdef inline uint64_t rotl(uint64_t x, int b) noexcept nogil:
    return (x << b) | (x >> (64 - b))


cdef inline uint64_t sip24(uint64_t k0, uint64_t k1, uint64_t m0, uint64_t m1) noexcept nogil:
    cdef uint64_t v0 = k0 ^ 0x736F6D6570736575ULL
    cdef uint64_t v1 = k1 ^ 0x646F72616E646F6DULL
    cdef uint64_t v2 = k0 ^ 0x6C7967656E657261ULL
    cdef uint64_t v3 = k1 ^ 0x7465646279746573ULL
    cdef uint64_t msg[3]
    cdef int i, r, rounds
    msg[0] = m0
    msg[1] = m1
    msg[2] = (<uint64_t>16) << 56
    for i in range(3):
        v3 ^= msg[i]
        for r in range(2):
            v0 += v1; v1 = rotl(v1, 13); v1 ^= v0; v0 = rotl(v0, 32)
            v2 += v3; v3 = rotl(v3, 16); v3 ^= v2
            v0 += v3; v3 = rotl(v3, 21); v3 ^= v0
            v2 += v1; v1 = rotl(v1, 17); v1 ^= v2; v2 = rotl(v2, 32)
        v0 ^= msg[i]
    v2 ^= 0xFF
    for r in range(4):
        v0 += v1; v1 = rotl(v1, 13); v1 ^= v0; v0 = rotl(v0, 32)
        v2 += v3; v3 = rotl(v3, 16); v3 ^= v2
        v0 += v3; v3 = rotl(v3, 21); v3 ^= v0
        v2 += v1; v1 = rotl(v1, 17); v1 ^= v2; v2 = rotl(v2, 32)
    return v0 ^ v1 ^ v2 ^ v3


cdef inline Key child(Key key, long long i) noexcept nogil:
    cdef uint64_t z = ((<uint64_t>i) << 1) ^ (<uint64_t>(i >> 63))
    cdef Key out
    out.k0 = sip24(key.k0, key.k1, z, CHILD_A)
    out.k1 = sip24(key.k0, key.k1, z, CHILD_B)
    return out


cdef inline Key point_stream(Key key) noexcept nogil:
    cdef Key out
    out.k0 = sip24(key.k0, key.k1, 0, POINT_A)
    out.k1 = sip24(key.k0, key.k1, 0, POINT_B)
    return out


cdef inline double horner(const double* c, double r) noexcept nogil:
    return (((((((c[7] * r + c[6]) * r + c[5]) * r + c[4]) * r + c[3]) * r + c[2]) * r
             + c[1]) * r + c[0])


cdef double norm_ppf(double p) noexcept nogil:
    cdef double q = p - 0.5
    cdef double r, val
    if (q if q >= 0.0 else -q) <= 0.425:
        r = 0.180625 - q * q
        return q * horner(PA, r) / horner(PB, r)
    r = p if q < 0.0 else 1.0 - p
    r = sqrt(-log(r))
    if r <= 5.0:
        r = r - 1.6
        val = horner(PC, r) / horner(PD, r)
    else:
        r = r - 5.0
        val = horner(PE, r) / horner(PF, r)
    return -val if q < 0.0 else val


cdef void sample_point(Ctx* c, Key key, const double* x, double* y, double* z) noexcept nogil:
    cdef int d = c.d
    cdef int i, j
    cdef uint64_t raw
    cdef double u, r, sr, acc
    raw = sip24(key.k0, key.k1, 0, DRAW)
    u = (<double>((raw >> 11) + 1)) * TWO_M53
    r = -log(u) / c.lam
    for j in range(d):
        raw = sip24(key.k0, key.k1, <uint64_t>(j + 1), DRAW)
        z[j] = norm_ppf(((<double>(raw >> 11)) + 0.5) * TWO_M53)
    sr = sqrt(r)
    if c.bkind == B_SCALED:
        for i in range(d):
            y[i] = x[i] + sr * (c.bscale * z[i])
    elif c.bkind == B_DIAG:
        for i in range(d):
            y[i] = x[i] + sr * (c.bdiag[i] * z[i])
    else:
        for i in range(d):
            acc = 0.0
            for j in range(d):
                acc += c.bdense[i * d + j] * z[j]
            y[i] = x[i] + sr * acc
    c.gauss += d
    c.expo += 1


cdef inline double psi(Ctx* c, double v) noexcept nogil:
    if c.psikind == 0:
        return c.psiscale * sin(v)
    return c.psiscale * atan(v)


cdef double forcing(Ctx* c, const double* x) noexcept nogil:
    cdef int d = c.d
    cdef int i, j
    cdef double q, us, bq, t, ht, sc, sw, ci
    if c.target == 0:
        q = 0.0
        for i in range(d):
            q += x[i] * x[i]
        us = c.amp * exp(-c.alpha * q)
        if c.bkind == B_SCALED:
            bq = c.s2 * q
        elif c.bkind == B_DIAG:
            bq = 0.0
            for i in range(d):
                t = c.bdiag[i] * x[i]
                bq += t * t
        else:
            bq = 0.0
            for j in range(d):
                t = 0.0
                for i in range(d):
                    t += c.bdense[i * d + j] * x[i]
                bq += t * t
        ht = 0.5 * us * (c.c4 * bq - c.c2)
    else:
        sc = 0.0
        sw = 0.0
        for i in range(d):
            ci = cos(x[i])
            sc += ci
            sw += c.gdiag[i] * ci
        us = c.amp * sc / d
        ht = c.nha * sw / d
    return ht - c.lam_m * us + psi(c, us)


cdef double f_eval(Ctx* c, const double* x, double v) noexcept nogil:
    cdef int i
    cdef double s
    if c.fkind == F_CONSTANT:
        return c.c
    elif c.fkind == F_AFFINE:
        return c.slope * v + c.c
    elif c.fkind == F_LINEAR:
        s = 0.0
        for i in range(c.d):
            s += c.a[i] * x[i]
        return s
    elif c.fkind == F_QUADRATIC:
        s = 0.0
        for i in range(c.d):
            s += x[i] * x[i]
        return s
    return c.lam_m * v - psi(c, v) + forcing(c, x)


cdef inline double g_eval(Ctx* c, const double* y, double v) noexcept nogil:
    cdef double out
    if c.elliptic:
        out = c.lam * v - f_eval(c, y, v)
    else:
        out = f_eval(c, y, v)
    c.fev += 1
    if not isfinite(out):
        c.err = 1
        c.err_v = v
        c.err_f = out
        memcpy(c.err_x, y, c.d * sizeof(double))
    return out


cdef double mlp_U(Ctx* c, Key key, int n, const double* x, int depth) noexcept nogil:
    if n == 0:
        return 0.0
    cdef int d = c.d
    cdef double* y = c.work + depth * 2 * d
    cdef double* z = y + d
    cdef double total = 0.0
    cdef double s, val, a, b, fa, fb
    cdef long long Mk, m
    cdef int k, e
    cdef Key kk, km
    for k in range(n):
        Mk = 1
        for e in range(n - k):
            Mk *= c.M
        kk = child(key, k)
        s = 0.0
        m = 1
        while m <= Mk:
            km = child(kk, m)
            sample_point(c, point_stream(km), x, y, z)
            if k == 0:
                val = g_eval(c, y, 0.0)
                if c.err:
                    return 0.0
            else:
                a = mlp_U(c, km, k, y, depth + 1)
                if c.err:
                    return 0.0
                if k - 1 > 0:
                    b = mlp_U(c, child(kk, -m), k - 1, y, depth + 1)
                    if c.err:
                        return 0.0
                else:
                    b = 0.0
                fa = g_eval(c, y, a)
                if c.err:
                    return 0.0
                fb = g_eval(c, y, b)
                if c.err:
                    return 0.0
                val = fa - fb
            s += val
            m += 1
        total += s / (c.lam * <double>Mk)
    return total


FKINDS = {"constant": F_CONSTANT, "affine": F_AFFINE, "linear": F_LINEAR,
          "quadratic-x": F_QUADRATIC, "manufactured": F_MANUFACTURED}
BKINDS = {"scaled-identity": B_SCALED, "diagonal": B_DIAG, "dense": B_DENSE}


cdef class CKernel:
    """Compiled estimator bound to one problem and one M."""

    cdef Ctx base
    cdef double[::1] a_buf, bdiag_buf, bdense_buf, gdiag_buf
    cdef public object problem
    cdef public long long M
    name = "compiled"

    def __init__(self, problem, M):
        f = problem.f
        if f.kind not in FKINDS:
            raise TypeError(f"nonlinearity kind {f.kind!r} is not supported by the compiled kernel")
        B = problem.B
        d = problem.d
        self.problem = problem
        self.M = M
        self.a_buf = np.array(f.a if f.a is not None else np.zeros(d), dtype=np.float64)
        self.bdiag_buf = np.array(B.entries if B.kind == "diagonal" else np.zeros(d),
                                              dtype=np.float64)
        self.bdense_buf = np.array(
            B.entries.reshape(-1) if B.kind == "dense" else np.zeros(1), dtype=np.float64)
        self.gdiag_buf = np.array(B.gram_diagonal(), dtype=np.float64)
        cdef Ctx* c = &self.base
        c.d = d
        c.M = M
        c.elliptic = 1 if problem.variant.value == "ELLIPTIC" else 0
        c.fkind = FKINDS[f.kind]
        c.bkind = BKINDS[B.kind]
        c.lam = problem.lam
        c.c = f.c
        c.slope = f.slope
        c.bscale = B.scale
        c.s2 = B.scale * B.scale
        mf = f.manufactured
        if mf is not None:
            c.target = 0 if mf.target == "gaussian-bump" else 1
            c.psikind = 0 if mf.psi == "sin" else 1
            c.amp = mf.amplitude
            c.alpha = mf.alpha
            c.c4 = mf.c4
            c.c2 = mf.c2
            c.nha = mf.nha
            c.psiscale = mf.psi_scale
            c.lam_m = mf.lam
        c.a = &self.a_buf[0]
        c.bdiag = &self.bdiag_buf[0]
        c.bdense = &self.bdense_buf[0]
        c.gdiag = &self.gdiag_buf[0]

    cdef int _run(self, Key key, int n, const double* x, double* value, long long* counts,
                  double* err_x, double* err_vals) noexcept nogil:
        cdef Ctx c = self.base
        c.work = <double*> malloc((n + 1) * 2 * c.d * sizeof(double))
        if c.work == NULL:
            return -1
        c.gauss = 0
        c.expo = 0
        c.fev = 0
        c.err = 0
        c.err_x = err_x
        value[0] = mlp_U(&c, key, n, x, 0)
        counts[0] = c.gauss
        counts[1] = c.expo
        counts[2] = c.fev
        err_vals[0] = c.err_v
        err_vals[1] = c.err_f
        free(c.work)
        return c.err

    def estimate_many(self, cnp.uint64_t[:, ::1] keys, int n, double[::1] x):
        """Run one estimate per key row ``(k0, k1)``; GIL released throughout.

        Returns ``(values, counts, err_index, err_x, err_v, err_f)`` with
        ``err_index = -1`` when every run finished with finite values.
        """
        cdef Py_ssize_t K = keys.shape[0]
        cdef int d = self.base.d
        if x.shape[0] != d:
            raise ValueError("point dimension mismatch")
        values = np.empty(K, dtype=np.float64)
        counts = np.zeros((K, 3), dtype=np.int64)
        err_x = np.zeros(d, dtype=np.float64)
        err_vals = np.zeros(2, dtype=np.float64)
        cdef double[::1] vv = values
        cdef long long[:, ::1] cc = counts
        cdef double[::1] ex = err_x
        cdef double[::1] ev = err_vals
        cdef Py_ssize_t i
        cdef Py_ssize_t bad = -1
        cdef int rc = 0
        cdef Key key
        with nogil:
            for i in range(K):
                key.k0 = keys[i, 0]
                key.k1 = keys[i, 1]
                rc = self._run(key, n, &x[0], &vv[i], &cc[i, 0], &ex[0], &ev[0])
                if rc != 0:
                    bad = i
                    break
        if rc == -1:
            raise MemoryError("could not allocate kernel workspace")
        return values, counts, bad, err_x, float(err_vals[0]), float(err_vals[1])


def sample_points(cnp.uint64_t[:, ::1] keys, double[::1] x, B, double lam):
    """Batch ``randomness.sample_point`` over point-stream keys (rows k0, k1)."""
    cdef Py_ssize_t K = keys.shape[0]
    cdef Ctx c
    cdef int d = B.d
    if x.shape[0] != d:
        raise ValueError("point dimension mismatch")
    bdiag = np.array(B.entries if B.kind == "diagonal" else np.zeros(d), dtype=np.float64)
    bdense = np.array(B.entries.reshape(-1) if B.kind == "dense" else np.zeros(1),
                                  dtype=np.float64)
    cdef double[::1] bd = bdiag
    cdef double[::1] bx = bdense
    c.d = d
    c.lam = lam
    c.bkind = BKINDS[B.kind]
    c.bscale = B.scale
    c.bdiag = &bd[0]
    c.bdense = &bx[0]
    out = np.empty((K, d), dtype=np.float64)
    zbuf = np.empty(d, dtype=np.float64)
    cdef double[:, ::1] yy = out
    cdef double[::1] zz = zbuf
    cdef Py_ssize_t i
    cdef Key key
    with nogil:
        for i in range(K):
            key.k0 = keys[i, 0]
            key.k1 = keys[i, 1]
            sample_point(&c, key, &x[0], &yy[i, 0], &zz[0])
    return out


def child_point_keys(cnp.uint64_t k0, cnp.uint64_t k1, long long start, Py_ssize_t count):
    """Digests of ``key.child(i).point_stream()`` for i = start, ..., start + count - 1."""
    out = np.empty((count, 2), dtype=np.uint64)
    cdef cnp.uint64_t[:, ::1] o = out
    cdef Key key, ch
    cdef Py_ssize_t j
    key.k0 = k0
    key.k1 = k1
    with nogil:
        for j in range(count):
            ch = point_stream(child(key, start + j))
            o[j, 0] = ch.k0
            o[j, 1] = ch.k1
    return out
