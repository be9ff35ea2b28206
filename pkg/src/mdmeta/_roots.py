"""Vectorized bracketing root finders.

Every routine works on a batch of independent one-dimensional problems. The
objective is called as ``f(x, idx)`` where ``idx`` indexes the rows still
being solved and ``x`` holds one abscissa per selected row, so expensive
objectives only pay for unresolved problems.
"""

from __future__ import annotations

import numpy as np

EPS = np.finfo(float).eps


def brent(f, lo, hi, flo, fhi, xtol, maxiter=100):
    """Brent's zeroin on each row of a batch of sign-changing brackets.

    Rows with ``flo == 0`` or ``fhi == 0`` return that endpoint. Returns
    ``(root, converged, iterations)``.
    """
    a = np.array(lo, dtype=float, copy=True)
    b = np.array(hi, dtype=float, copy=True)
    fa = np.array(flo, dtype=float, copy=True)
    fb = np.array(fhi, dtype=float, copy=True)
    xtol = np.broadcast_to(np.asarray(xtol, dtype=float), a.shape)
    c, fc = a.copy(), fa.copy()
    d = b - a
    e = d.copy()
    iters = np.zeros(a.shape, dtype=int)
    done = (fb == 0)
    hit_a = (fa == 0) & ~done
    b[hit_a], fb[hit_a] = a[hit_a], 0.0
    done |= hit_a
    converged = done.copy()

    for _ in range(maxiter):
        act = np.nonzero(~done)[0]
        if act.size == 0:
            break
        A, B, C = a[act], b[act], c[act]
        FA, FB, FC = fa[act], fb[act], fc[act]
        D, E = d[act], e[act]

        same = np.sign(FB) == np.sign(FC)
        C = np.where(same, A, C)
        FC = np.where(same, FA, FC)
        D = np.where(same, B - A, D)
        E = np.where(same, B - A, E)

        swap = np.abs(FC) < np.abs(FB)
        A = np.where(swap, B, A)
        FA = np.where(swap, FB, FA)
        B, C = np.where(swap, C, B), np.where(swap, A, C)
        FB, FC = np.where(swap, FC, FB), np.where(swap, FA, FC)

        tol1 = 2.0 * EPS * np.abs(B) + 0.5 * xtol[act]
        xm = 0.5 * (C - B)
        fin = (np.abs(xm) <= tol1) | (FB == 0)

        with np.errstate(divide="ignore", invalid="ignore"):
            s = FB / FA
            secant = A == C
            q1 = FA / FC
            r1 = FB / FC
            p = np.where(secant, 2.0 * xm * s, s * (2.0 * xm * q1 * (q1 - r1) - (B - A) * (r1 - 1.0)))
            q = np.where(secant, 1.0 - s, (q1 - 1.0) * (r1 - 1.0) * (s - 1.0))
        q = np.where(p > 0, -q, q)
        p = np.abs(p)
        try_interp = (np.abs(E) >= tol1) & (np.abs(FA) > np.abs(FB))
        accept = try_interp & (2.0 * p < np.minimum(3.0 * xm * q - np.abs(tol1 * q), np.abs(E * q)))
        with np.errstate(divide="ignore", invalid="ignore"):
            step = np.where(accept, p / q, xm)
        E = np.where(accept, D, step)
        D = step

        A, FA = B, FB
        Bn = np.where(np.abs(D) > tol1, B + D, B + np.where(xm > 0, tol1, -tol1))

        # write back finished rows untouched by the step
        a[act], c[act], fa[act], fc[act] = A, C, FA, FC
        d[act], e[act] = D, E
        b[act] = np.where(fin, B, Bn)
        done[act] = fin
        converged[act] = fin

        todo = act[~fin]
        if todo.size:
            fb[todo] = f(b[todo], todo)
            iters[todo] += 1
    return b, converged, iters


def expand_upper(g, lo, glo, hi, cap):
    """Push ``hi`` out by doubling until ``g(hi) <= 0`` (``g(lo) > 0`` assumed).

    ``lo`` follows each unsuccessful ``hi`` so the final bracket is tight.
    Rows that reach ``cap`` without a sign change come back with
    ``found=False``.
    """
    lo = np.array(lo, dtype=float, copy=True)
    glo = np.array(glo, dtype=float, copy=True)
    hi = np.minimum(np.array(hi, dtype=float, copy=True), cap)
    ghi = np.empty_like(hi)
    all_idx = np.arange(hi.size)
    ghi[:] = g(hi, all_idx) if hi.size else ghi
    found = ghi <= 0
    while True:
        act = np.nonzero(~found & (hi < cap))[0]
        if act.size == 0:
            break
        lo[act], glo[act] = hi[act], ghi[act]
        hi[act] = np.minimum(2.0 * hi[act], cap[act] if np.ndim(cap) else cap)
        ghi[act] = g(hi[act], act)
        found[act] = ghi[act] <= 0
    return lo, glo, hi, ghi, found


def golden_max(f, lo, hi, xtol, maxiter=100):
    """Golden-section maximization of each row of ``f`` on ``[lo, hi]``."""
    invphi = (np.sqrt(5.0) - 1.0) / 2.0
    a = np.array(lo, dtype=float, copy=True)
    b = np.array(hi, dtype=float, copy=True)
    idx = np.arange(a.size)
    x1 = b - invphi * (b - a)
    x2 = a + invphi * (b - a)
    f1, f2 = f(x1, idx), f(x2, idx)
    for _ in range(maxiter):
        if np.all((b - a) <= xtol + 4 * EPS * np.abs(b)):
            break
        left = f1 >= f2
        b = np.where(left, x2, b)
        a = np.where(left, a, x1)
        x1_new = np.where(left, b - invphi * (b - a), x2)
        x2_new = np.where(left, x1, a + invphi * (b - a))
        fe = f(np.where(left, x1_new, x2_new), idx)
        f1, f2 = np.where(left, fe, f2), np.where(left, f1, fe)
        x1, x2 = x1_new, x2_new
    converged = (b - a) <= xtol + 4 * EPS * np.abs(b)
    x = np.where(f1 >= f2, x1, x2)
    return x, converged
