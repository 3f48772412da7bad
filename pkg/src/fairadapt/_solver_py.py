"""Pure-Python solver kernel; fallback for the compiled ``_solver`` extension.

Both versions implement the same arithmetic in the same order so that the
compiled and interpreted paths agree to the last bit on ordinary inputs.

Minimizes ``sum_j w_j (v1_j / e_j + v0_j / (1 - e_j))`` subject to
``lo_j <= e_j <= hi_j`` and ``|e_j - e_l| <= c1``.
"""

ARMIJO = 1e-4
ALPHA_MIN = 1e-12
ALPHA_MAX = 1e12
DYKSTRA_MAX_CYCLES = 10000
DYKSTRA_TOL = 1e-30
# objective differences below this relative size are rounding noise
F_EPS = 1e-15


def objective(w, v1, v0, x):
    f = 0.0
    for j in range(len(x)):
        f += w[j] * (v1[j] / x[j] + v0[j] / (1.0 - x[j]))
    return f


def gradient(w, v1, v0, x):
    g = [0.0] * len(x)
    for j in range(len(x)):
        a = x[j]
        b = 1.0 - a
        g[j] = w[j] * (v0[j] / (b * b) - v1[j] / (a * a))
    return g


def curvature(w, v1, v0, x):
    """Largest diagonal Hessian entry at ``x`` (the Hessian is diagonal)."""
    h = 0.0
    for j in range(len(x)):
        a = x[j]
        b = 1.0 - a
        c = 2.0 * w[j] * (v1[j] / (a * a * a) + v0[j] / (b * b * b))
        if c > h:
            h = c
    return h


def project(y, lo, hi, c1):
    """Dykstra's alternating projections onto the box and every pairwise slab."""
    n = len(y)
    x = list(y)
    p = [0.0] * n
    npair = n * (n - 1) // 2
    qa = [0.0] * npair
    qb = [0.0] * npair
    for _ in range(DYKSTRA_MAX_CYCLES):
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
    # slab corrections can nudge a coordinate past its box by rounding only
    for j in range(n):
        if x[j] < lo[j]:
            x[j] = lo[j]
        elif x[j] > hi[j]:
            x[j] = hi[j]
    return x


def pgd_solve(w, v1, v0, lo, hi, c1, tol, max_iter):
    """Projected gradient with Barzilai-Borwein steps and Armijo backtracking.

    Returns ``(e, iterations, converged)``. Starts from the all-1/2 point,
    which every caller guarantees to be feasible.
    """
    n = len(w)
    x = [0.5] * n
    for j in range(n):
        if x[j] < lo[j]:
            x[j] = lo[j]
        elif x[j] > hi[j]:
            x[j] = hi[j]
    f = objective(w, v1, v0, x)
    g = gradient(w, v1, v0, x)
    h = curvature(w, v1, v0, x)
    if h <= 0.0:
        return x, 0, True
    alpha = 1.0 / h
    it = 0
    converged = False
    while it < max_iter:
        h = curvature(w, v1, v0, x)
        y = project([x[j] - g[j] / h for j in range(n)], lo, hi, c1)
        disp = 0.0
        for j in range(n):
            d = abs(y[j] - x[j])
            if d > disp:
                disp = d
        if disp < tol:
            converged = True
            break
        it += 1
        while True:
            z = project([x[j] - alpha * g[j] for j in range(n)], lo, hi, c1)
            fz = objective(w, v1, v0, z)
            gd = 0.0
            for j in range(n):
                gd += g[j] * (z[j] - x[j])
            if fz <= f + ARMIJO * gd + F_EPS * abs(f) or alpha <= ALPHA_MIN:
                break
            alpha *= 0.5
        gz = gradient(w, v1, v0, z)
        ss = 0.0
        sy = 0.0
        for j in range(n):
            s = z[j] - x[j]
            ss += s * s
            sy += s * (gz[j] - g[j])
        x = z
        f = fz
        g = gz
        if sy > 0.0:
            alpha = ss / sy
        else:
            alpha = 1.0 / curvature(w, v1, v0, x)
        if alpha < ALPHA_MIN:
            alpha = ALPHA_MIN
        elif alpha > ALPHA_MAX:
            alpha = ALPHA_MAX
    return x, it, converged
