# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled block coordinate descent kernel; mirrors ``_bcd_py.bcd_run``."""
from libc.math cimport sqrt, fabs
from libc.stdlib cimport malloc, free


cdef double _objective(const double[:, ::1] G, const double[::1] c, double zz,
                       const double[::1] alpha, const double[::1] q,
                       const Py_ssize_t[::1] gptr, const Py_ssize_t[::1] gidx,
                       double lam) noexcept nogil:
    cdef Py_ssize_t n = alpha.shape[0], m = gptr.shape[0] - 1
    cdef Py_ssize_t s, k, j
    cdef double lin = 0.0, quad = 0.0, pen = 0.0, acc
    for j in range(n):
        lin += c[j] * alpha[j]
        quad += alpha[j] * q[j]
    for s in range(m):
        acc = 0.0
        for k in range(gptr[s], gptr[s + 1]):
            acc += alpha[gidx[k]] * alpha[gidx[k]]
        pen += sqrt(acc)
    return zz - 2.0 * lin + quad + lam * pen


cdef double _kkt(const double[::1] c, const double[::1] alpha, const double[::1] q,
                 const Py_ssize_t[::1] gptr, const Py_ssize_t[::1] gidx,
                 double lam) noexcept nogil:
    cdef Py_ssize_t m = gptr.shape[0] - 1
    cdef Py_ssize_t s, k, j
    cdef double na, ng, v, worst = 0.0, g, t
    for s in range(m):
        na = 0.0
        ng = 0.0
        for k in range(gptr[s], gptr[s + 1]):
            j = gidx[k]
            na += alpha[j] * alpha[j]
            g = 2.0 * (c[j] - q[j])
            ng += g * g
        na = sqrt(na)
        if na == 0.0:
            v = sqrt(ng) - lam
            if v < 0.0:
                v = 0.0
        else:
            v = 0.0
            for k in range(gptr[s], gptr[s + 1]):
                j = gidx[k]
                t = 2.0 * (c[j] - q[j]) - lam * alpha[j] / na
                v += t * t
            v = sqrt(v)
        if v > worst:
            worst = v
    return worst


def kkt_residual_gram(const double[::1] c, const double[::1] alpha,
                      const double[::1] q, const Py_ssize_t[::1] gptr,
                      const Py_ssize_t[::1] gidx, double lam):
    with nogil:
        r = _kkt(c, alpha, q, gptr, gidx, lam)
    return r


def bcd_run(const double[:, ::1] G, const double[::1] c, double zz,
            double[::1] alpha, double[::1] q,
            const Py_ssize_t[::1] gptr, const Py_ssize_t[::1] gidx,
            const double[::1] lipschitz, double lam, Py_ssize_t max_sweeps,
            double tol, Py_ssize_t inner_iters, double[::1] trace):
    cdef Py_ssize_t n = alpha.shape[0], m = gptr.shape[0] - 1
    cdef Py_ssize_t s, k, kk, j, jj, it, sz, lo, sweeps = 0, maxsz = 1
    cdef double half = 0.5 * lam, nb, nv, shrink, step, na, L, kkt, acc, d
    cdef double *b
    cdef double *a
    cdef double *nxt
    cdef double *old
    for s in range(m):
        if gptr[s + 1] - gptr[s] > maxsz:
            maxsz = gptr[s + 1] - gptr[s]
    b = <double *> malloc(4 * maxsz * sizeof(double))
    if b == NULL:
        raise MemoryError()
    a = b + maxsz
    nxt = a + maxsz
    old = nxt + maxsz
    with nogil:
        trace[0] = _objective(G, c, zz, alpha, q, gptr, gidx, lam)
        kkt = _kkt(c, alpha, q, gptr, gidx, lam)
        while kkt > tol and sweeps < max_sweeps:
            for s in range(m):
                lo = gptr[s]
                sz = gptr[s + 1] - lo
                nb = 0.0
                for k in range(sz):
                    j = gidx[lo + k]
                    old[k] = alpha[j]
                    acc = c[j] - q[j]
                    for kk in range(sz):
                        acc = acc + G[j, gidx[lo + kk]] * alpha[gidx[lo + kk]]
                    b[k] = acc
                    nb += acc * acc
                nb = sqrt(nb)
                if 2.0 * nb <= lam:
                    for k in range(sz):
                        a[k] = 0.0
                elif sz == 1:
                    j = gidx[lo]
                    if b[0] > 0:
                        a[0] = (nb - half) / G[j, j]
                    else:
                        a[0] = -(nb - half) / G[j, j]
                else:
                    L = lipschitz[s]
                    for k in range(sz):
                        a[k] = old[k]
                    for it in range(inner_iters):
                        nv = 0.0
                        for k in range(sz):
                            j = gidx[lo + k]
                            acc = b[k]
                            for kk in range(sz):
                                acc = acc - G[j, gidx[lo + kk]] * a[kk]
                            nxt[k] = a[k] + (2.0 / L) * acc
                            nv += nxt[k] * nxt[k]
                        nv = sqrt(nv)
                        shrink = 0.0
                        if nv > 0.0:
                            shrink = 1.0 - lam / (L * nv)
                        if shrink < 0.0:
                            shrink = 0.0
                        step = 0.0
                        na = 0.0
                        for k in range(sz):
                            nxt[k] = nxt[k] * shrink
                            d = nxt[k] - a[k]
                            step += d * d
                            a[k] = nxt[k]
                            na += a[k] * a[k]
                        if sqrt(step) <= 1e-15 * sqrt(na):
                            break
                for k in range(sz):
                    d = a[k] - old[k]
                    if d != 0.0:
                        jj = gidx[lo + k]
                        for j in range(n):
                            q[j] += G[j, jj] * d
                        alpha[jj] = a[k]
            for j in range(n):
                acc = 0.0
                for k in range(n):
                    acc = acc + G[j, k] * alpha[k]
                q[j] = acc
            sweeps += 1
            trace[sweeps] = _objective(G, c, zz, alpha, q, gptr, gidx, lam)
            kkt = _kkt(c, alpha, q, gptr, gidx, lam)
    free(b)
    return sweeps, kkt
