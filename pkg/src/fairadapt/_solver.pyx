# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled solver kernel. Mirrors ``_solver_py`` operation for operation."""

from libc.stdlib cimport malloc, free
from libc.math cimport fabs

cdef double ARMIJO = 1e-4
cdef double ALPHA_MIN = 1e-12
cdef double ALPHA_MAX = 1e12
cdef int DYKSTRA_MAX_CYCLES = 10000
cdef double DYKSTRA_TOL = 1e-30
cdef double F_EPS = 1e-15


cdef double _objective(int n, double* w, double* v1, double* v0, double* x) nogil:
    cdef double f = 0.0
    cdef int j
    for j in range(n):
        f += w[j] * (v1[j] / x[j] + v0[j] / (1.0 - x[j]))
    return f


cdef void _gradient(int n, double* w, double* v1, double* v0, double* x, double* g) nogil:
    cdef int j
    cdef double a, b
    for j in range(n):
        a = x[j]
        b = 1.0 - a
        g[j] = w[j] * (v0[j] / (b * b) - v1[j] / (a * a))


cdef double _curvature(int n, double* w, double* v1, double* v0, double* x) nogil:
    cdef double h = 0.0
    cdef double a, b, c
    cdef int j
    for j in range(n):
        a = x[j]
        b = 1.0 - a
        c = 2.0 * w[j] * (v1[j] / (a * a * a) + v0[j] / (b * b * b))
        if c > h:
            h = c
    return h


cdef void _project(int n, double* x, double* lo, double* hi, double c1,
                   double* p, double* qa, double* qb) nogil:
    # x holds the point on entry and its projection on exit
    cdef int j, a, b, k, cyc
    cdef int npair = n * (n - 1) // 2
    cdef double u, v, d, change, ua, ub, s, na, nb, da, db
    for j in range(n):
        p[j] = 0.0
    for k in range(npair):
        qa[k] = 0.0
        qb[k] = 0.0
    for cyc in range(DYKSTRA_MAX_CYCLES):
        change = 0.0
        for j in range(n):
            u = x[j] + p[j]
            v = u
            if v < lo[j]:
                v = lo[j]
            elif v > hi[j]:
                v = hi[j]
            p[j] = u - v
            d = v - x[j]
            change += d * d
            x[j] = v
        k = 0
        for a in range(n):
            for b in range(a + 1, n):
                ua = x[a] + qa[k]
                ub = x[b] + qb[k]
                d = ua - ub
                if d > c1:
                    s = 0.5 * (d - c1)
                    na = ua - s
                    nb = ub + s
                elif d < -c1:
                    s = 0.5 * (-c1 - d)
                    na = ua + s
                    nb = ub - s
                else:
                    na = ua
                    nb = ub
                qa[k] = ua - na
                qb[k] = ub - nb
                da = na - x[a]
                db = nb - x[b]
                change += da * da + db * db
                x[a] = na
                x[b] = nb
                k += 1
        if change <= DYKSTRA_TOL:
            break
    for j in range(n):
        if x[j] < lo[j]:
            x[j] = lo[j]
        elif x[j] > hi[j]:
            x[j] = hi[j]


def objective(w, v1, v0, x):
    cdef double f = 0.0
    cdef int j
    for j in range(len(x)):
        f += <double>w[j] * (<double>v1[j] / <double>x[j] + <double>v0[j] / (1.0 - <double>x[j]))
    return f


def project(y, lo, hi, c1):
    cdef int n = len(y)
    cdef int npair = n * (n - 1) // 2
    cdef double* buf = <double*>malloc(sizeof(double) * (4 * n + 2 * npair + 2))
    if buf == NULL:
        raise MemoryError()
    cdef double* x = buf
    cdef double* l = buf + n
    cdef double* h = buf + 2 * n
    cdef double* p = buf + 3 * n
    cdef double* qa = buf + 4 * n
    cdef double* qb = buf + 4 * n + npair + 1
    cdef int j
    try:
        for j in range(n):
            x[j] = y[j]
            l[j] = lo[j]
            h[j] = hi[j]
        _project(n, x, l, h, c1, p, qa, qb)
        return [x[j] for j in range(n)]
    finally:
        free(buf)


def pgd_solve(w, v1, v0, lo, hi, double c1, double tol, int max_iter):
    """Projected gradient with Barzilai-Borwein steps and Armijo backtracking.

    Returns ``(e, iterations, converged)``.
    """
    cdef int n = len(w)
    cdef int npair = n * (n - 1) // 2
    cdef double* buf = <double*>malloc(sizeof(double) * (12 * n + 2 * npair + 2))
    if buf == NULL:
        raise MemoryError()
    cdef double* cw = buf
    cdef double* c_v1 = buf + n
    cdef double* c_v0 = buf + 2 * n
    cdef double* clo = buf + 3 * n
    cdef double* chi = buf + 4 * n
    cdef double* x = buf + 5 * n
    cdef double* g = buf + 6 * n
    cdef double* y = buf + 7 * n
    cdef double* z = buf + 8 * n
    cdef double* gz = buf + 9 * n
    cdef double* p = buf + 10 * n
    cdef double* qa = buf + 12 * n
    cdef double* qb = buf + 12 * n + npair + 1
    cdef int j, it = 0
    cdef bint converged = False
    cdef double f, h, alpha, disp, d, fz, gd, ss, sy, s
    try:
        for j in range(n):
            cw[j] = w[j]
            c_v1[j] = v1[j]
            c_v0[j] = v0[j]
            clo[j] = lo[j]
            chi[j] = hi[j]
        with nogil:
            for j in range(n):
                x[j] = 0.5
                if x[j] < clo[j]:
                    x[j] = clo[j]
                elif x[j] > chi[j]:
                    x[j] = chi[j]
            f = _objective(n, cw, c_v1, c_v0, x)
            _gradient(n, cw, c_v1, c_v0, x, g)
            h = _curvature(n, cw, c_v1, c_v0, x)
            if h <= 0.0:
                converged = True
            else:
                alpha = 1.0 / h
                while it < max_iter:
                    h = _curvature(n, cw, c_v1, c_v0, x)
                    for j in range(n):
                        y[j] = x[j] - g[j] / h
                    _project(n, y, clo, chi, c1, p, qa, qb)
                    disp = 0.0
                    for j in range(n):
                        d = fabs(y[j] - x[j])
                        if d > disp:
                            disp = d
                    if disp < tol:
                        converged = True
                        break
                    it += 1
                    while True:
                        for j in range(n):
                            z[j] = x[j] - alpha * g[j]
                        _project(n, z, clo, chi, c1, p, qa, qb)
                        fz = _objective(n, cw, c_v1, c_v0, z)
                        gd = 0.0
                        for j in range(n):
                            gd += g[j] * (z[j] - x[j])
                        if fz <= f + ARMIJO * gd + F_EPS * fabs(f) or alpha <= ALPHA_MIN:
                            break
                        alpha *= 0.5
                    _gradient(n, cw, c_v1, c_v0, z, gz)
                    ss = 0.0
                    sy = 0.0
                    for j in range(n):
                        s = z[j] - x[j]
                        ss += s * s
                        sy += s * (gz[j] - g[j])
                    for j in range(n):
                        x[j] = z[j]
                        g[j] = gz[j]
                    f = fz
                    if sy > 0.0:
                        alpha = ss / sy
                    else:
                        alpha = 1.0 / _curvature(n, cw, c_v1, c_v0, x)
                    if alpha < ALPHA_MIN:
                        alpha = ALPHA_MIN
                    elif alpha > ALPHA_MAX:
                        alpha = ALPHA_MAX
        return [x[j] for j in range(n)], it, bool(converged)
    finally:
        free(buf)
