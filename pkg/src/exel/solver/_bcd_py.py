"""Pure-numpy block coordinate descent kernel (fallback for ``_bcd_core``).

Both kernels share one signature and work in Gram form: with
``G = Phi^T Phi``, ``c = Phi^T z`` and ``q = G alpha`` the partial-residual
correlation of block ``s`` is ``c_s - q_s + G_ss alpha_s``.
"""
import numpy as np


def _objective(zz, c, alpha, q, gptr, gidx, lam):
    pen = 0.0
    for s in range(len(gptr) - 1):
        pen += np.linalg.norm(alpha[gidx[gptr[s]:gptr[s + 1]]])
    return zz - 2.0 * c @ alpha + alpha @ q + lam * pen


def kkt_residual_gram(c, alpha, q, gptr, gidx, lam):
    worst = 0.0
    grad = 2.0 * (c - q)
    for s in range(len(gptr) - 1):
        idx = gidx[gptr[s]:gptr[s + 1]]
        a = alpha[idx]
        na = np.linalg.norm(a)
        if na == 0.0:
            v = max(0.0, np.linalg.norm(grad[idx]) - lam)
        else:
            v = np.linalg.norm(grad[idx] - lam * a / na)
        worst = max(worst, v)
    return worst


def bcd_run(G, c, zz, alpha, q, gptr, gidx, lipschitz, lam, max_sweeps, tol,
            inner_iters, trace):
    """Cyclic sweeps until the KKT residual drops to ``tol``.

    ``alpha`` and ``q`` are updated in place; ``trace[k]`` receives the
    objective after sweep ``k`` (``trace[0]`` is the starting objective).
    Returns ``(sweeps, kkt)``.
    """
    m = len(gptr) - 1
    blocks = [gidx[gptr[s]:gptr[s + 1]] for s in range(m)]
    gram_blocks = [G[np.ix_(b, b)] for b in blocks]
    trace[0] = _objective(zz, c, alpha, q, gptr, gidx, lam)
    kkt = kkt_residual_gram(c, alpha, q, gptr, gidx, lam)
    sweeps = 0
    half = 0.5 * lam
    while kkt > tol and sweeps < max_sweeps:
        for s in range(m):
            idx = blocks[s]
            gss = gram_blocks[s]
            old = alpha[idx]
            b = c[idx] - q[idx] + gss @ old
            nb = np.linalg.norm(b)
            if 2.0 * nb <= lam:
                new = np.zeros_like(old)
            elif len(idx) == 1:
                new = np.sign(b) * (nb - half) / gss[0, 0]
            else:
                L = lipschitz[s]
                a = old.copy()
                for _ in range(inner_iters):
                    v = a + (2.0 / L) * (b - gss @ a)
                    nv = np.linalg.norm(v)
                    shrink = 1.0 - lam / (L * nv) if nv > 0 else 0.0
                    nxt = v * shrink if shrink > 0 else np.zeros_like(v)
                    step = np.linalg.norm(nxt - a)
                    a = nxt
                    if step <= 1e-15 * np.linalg.norm(a):
                        break
                new = a
            delta = new - old
            if np.any(delta != 0.0):
                q += G[:, idx] @ delta
                alpha[idx] = new
        # refresh q to stop drift from incremental updates
        q[:] = G @ alpha
        sweeps += 1
        trace[sweeps] = _objective(zz, c, alpha, q, gptr, gidx, lam)
        kkt = kkt_residual_gram(c, alpha, q, gptr, gidx, lam)
    return sweeps, kkt
