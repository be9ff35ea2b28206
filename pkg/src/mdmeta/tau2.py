"""Point estimators of the between-study variance tau^2.

Every estimator runs on a whole batch of datasets at once (studies on the
last axis). For a single dataset the result fields are Python scalars; for a
batch they are arrays with the batch shape.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any

import numpy as np

from ._roots import brent, golden_max
from .errors import ParameterError
from .qstat import as_effect_set, correction, pooled, q_values, weights

METHODS = ("DL", "REML", "MP", "J", "WT", "CDL")
MAXITER = 100
REML_GRID = 48


@dataclass(frozen=True, eq=False)
class Tau2Result:
    method: str
    value: Any
    converged: Any
    iterations: Any
    truncated: Any
    diagnostic: str | None = None


def _pack(method, es, value, converged, iterations, truncated) -> Tau2Result:
    if es.y.ndim == 1:
        conv = bool(converged)
        diag = None if conv else f"{method}: no convergence within {MAXITER} iterations"
        return Tau2Result(method, float(value), conv, int(iterations), bool(truncated), diag)
    return Tau2Result(method, value, converged, iterations, truncated)


def spread(y):
    """Sum of squared deviations about the unweighted mean."""
    return ((y - y.mean(axis=-1, keepdims=True)) ** 2).sum(axis=-1)


def _closed_form(num, den, batch):
    raw = num / den
    value = np.maximum(raw, 0.0)
    ones = np.ones(batch, dtype=bool)
    return value, ones, np.zeros(batch, dtype=int), ~(raw > 0)


# ---------------------------------------------------------------------------
# Kernels
# ---------------------------------------------------------------------------


def dl_kernel(y, v2, S=None):
    K = y.shape[-1]
    w = 1.0 / v2
    mu, W = pooled(y, w)
    Q = (w * (y - mu[..., None]) ** 2).sum(axis=-1)
    target = K - 1.0 if S is None else K - 1.0 + 2.0 * S
    return _closed_form(Q - target, W - (w * w).sum(axis=-1) / W, y.shape[:-1])


def j_kernel(y, v2):
    a = 1.0 / np.sqrt(v2)
    mu, A = pooled(y, a)
    Qa = (a * (y - mu[..., None]) ** 2).sum(axis=-1)
    b = a * (1.0 - a / A[..., None])
    return _closed_form(Qa - (b * v2).sum(axis=-1), b.sum(axis=-1), y.shape[:-1])


def moment_root(y, v2, target_fn):
    """Solve Q(tau2) = target(tau2) with truncation at zero.

    ``target_fn(tau2, idx)`` gives the target for the selected rows and must
    be at least K-1, so Q(t) <= spread/t puts a sign change inside
    [0, spread/(K-1)].
    """
    batch = y.shape[:-1]
    yf, vf = y.reshape(-1, y.shape[-1]), v2.reshape(-1, y.shape[-1])
    n = yf.shape[0]
    K = y.shape[-1]
    g = lambda t, idx: q_values(yf[idx], vf[idx], t) - target_fn(t, idx)
    all_idx = np.arange(n)
    g0 = g(np.zeros(n), all_idx)
    value = np.zeros(n)
    converged = np.ones(n, dtype=bool)
    iters = np.zeros(n, dtype=int)
    truncated = ~(g0 > 0)
    live = np.nonzero(~truncated)[0]
    if live.size:
        hi = spread(yf[live]) / (K - 1.0)
        ghi = g(hi, live)
        sub = lambda t, j: g(t, live[j])
        root, conv, it = brent(sub, np.zeros(live.size), hi, g0[live], ghi, 0.0, MAXITER)
        value[live], converged[live], iters[live] = root, conv, it
    return value.reshape(batch), converged.reshape(batch), iters.reshape(batch), truncated.reshape(batch)


def mp_kernel(y, v2):
    K = y.shape[-1]
    return moment_root(y, v2, lambda t, idx: np.full(np.shape(t), K - 1.0))


def wt_kernel(y, v2, g):
    K = y.shape[-1]
    vf, gf = v2.reshape(-1, K), g.reshape(-1, K)
    return moment_root(y, v2, lambda t, idx: K - 1.0 + 2.0 * correction(vf[idx], gf[idx], t))


def reml_loglik(y, v2, tau2):
    """Restricted log-likelihood without constants."""
    w = weights(v2, tau2)
    mu, W = pooled(y, w)
    Q = (w * (y - mu[..., None]) ** 2).sum(axis=-1)
    return -0.5 * (np.log(v2 + np.asarray(tau2)[..., None]).sum(axis=-1) + np.log(W) + Q)


def reml_score(y, v2, tau2):
    """Derivative of :func:`reml_loglik` in tau2."""
    w = weights(v2, tau2)
    mu, W = pooled(y, w)
    w2 = w * w
    return 0.5 * (-W + w2.sum(axis=-1) / W + (w2 * (y - mu[..., None]) ** 2).sum(axis=-1))


def reml_upper(y, v2):
    """A tau2 beyond which the restricted likelihood is strictly decreasing.

    For t >= 4 K max(v2) every weight lies in [(1 - 1/(4K))/t, 1/t], which
    bounds sum w - sum w^2/W below by (K - 1.25)/t, while the data term is at
    most D/t^2 with D the larger of the sums of squares about min(y), max(y).
    """
    K = y.shape[-1]
    lo = y.min(axis=-1, keepdims=True)
    hi = y.max(axis=-1, keepdims=True)
    D = np.maximum(((y - lo) ** 2).sum(axis=-1), ((y - hi) ** 2).sum(axis=-1))
    return np.maximum(4.0 * K * v2.max(axis=-1), 2.0 * D / (K - 1.25))


def reml_kernel(y, v2):
    """Grid search for the global maximizer, then Brent on the score."""
    batch = y.shape[:-1]
    K = y.shape[-1]
    yf, vf = y.reshape(-1, K), v2.reshape(-1, K)
    n = yf.shape[0]
    top = reml_upper(yf, vf)
    grid = np.concatenate([[0.0], np.geomspace(1e-9, 1.0, REML_GRID)])
    taus = top[:, None] * grid[None, :]
    ll = reml_loglik(yf[:, None, :], vf[:, None, :], taus)
    j = ll.argmax(axis=1)
    rows = np.arange(n)

    value = taus[rows, j]
    converged = np.ones(n, dtype=bool)
    iters = np.zeros(n, dtype=int)
    s0 = reml_score(yf, vf, np.zeros(n))
    truncated = (j == 0) & ~(s0 > 0)
    value[truncated] = 0.0

    todo = np.nonzero(~truncated)[0]
    if todo.size:
        jt = j[todo]
        lo = taus[todo, np.maximum(jt - 1, 0)]
        hi = taus[todo, np.minimum(jt + 1, grid.size - 1)]
        score = lambda t, idx: reml_score(yf[todo[idx]], vf[todo[idx]], t)
        sidx = np.arange(todo.size)
        slo, shi = score(lo, sidx), score(hi, sidx)
        ok = (slo > 0) & (shi < 0)
        k = np.nonzero(ok)[0]
        if k.size:
            sub = lambda t, jj: score(t, k[jj])
            root, conv, it = brent(sub, lo[k], hi[k], slo[k], shi[k], 0.0, MAXITER)
            value[todo[k]], converged[todo[k]], iters[todo[k]] = root, conv, it
        # no sign change in the score (flat likelihood): maximize directly
        k = np.nonzero(~ok)[0]
        if k.size:
            obj = lambda t, jj: reml_loglik(yf[todo[k[jj]]], vf[todo[k[jj]]], t)
            xt = 1e-12 * hi[k]
            value[todo[k]], converged[todo[k]] = golden_max(obj, lo[k], hi[k], xt, MAXITER)
        # a maximizer at the upper grid edge is outside the bracket guarantee
        converged[todo[jt == grid.size - 1]] = False
    # the boundary competes with the interior stationary point
    at_zero = ~truncated & (reml_loglik(yf, vf, np.zeros(n)) >= reml_loglik(yf, vf, value))
    value[at_zero], truncated[at_zero] = 0.0, True
    return value.reshape(batch), converged.reshape(batch), iters.reshape(batch), truncated.reshape(batch)


# ---------------------------------------------------------------------------
# Public API
# ---------------------------------------------------------------------------


def tau2_dl(effects) -> Tau2Result:
    """DerSimonian-Laird: (Q(0) - (K-1)) / (W - W2/W), truncated at 0."""
    es = as_effect_set(effects)
    return _pack("DL", es, *dl_kernel(es.y, es.v2))


def tau2_cdl(effects) -> Tau2Result:
    """DL with the moment-corrected null mean of Q in place of K-1."""
    es = as_effect_set(effects)
    S = correction(es.v2, es.require_g(), np.zeros(es.batch_shape))
    return _pack("CDL", es, *dl_kernel(es.y, es.v2, S))


def tau2_j(effects) -> Tau2Result:
    """Moment estimator of the Q statistic with fixed weights 1/sqrt(v2)."""
    es = as_effect_set(effects)
    return _pack("J", es, *j_kernel(es.y, es.v2))


def tau2_mp(effects) -> Tau2Result:
    """Mandel-Paule: the root of Q(tau2) = K-1."""
    es = as_effect_set(effects)
    return _pack("MP", es, *mp_kernel(es.y, es.v2))


def tau2_wt(effects) -> Tau2Result:
    """Root of Q(tau2) = K-1 + 2 sum w^2 g p^2, the correction term
    re-evaluated at each tau2."""
    es = as_effect_set(effects)
    return _pack("WT", es, *wt_kernel(es.y, es.v2, es.require_g()))


def tau2_reml(effects) -> Tau2Result:
    """Restricted maximum likelihood."""
    es = as_effect_set(effects)
    return _pack("REML", es, *reml_kernel(es.y, es.v2))


ESTIMATORS = {
    "DL": tau2_dl,
    "REML": tau2_reml,
    "MP": tau2_mp,
    "J": tau2_j,
    "WT": tau2_wt,
    "CDL": tau2_cdl,
}


def estimate(effects, method: str) -> Tau2Result:
    try:
        fn = ESTIMATORS[method.upper()]
    except KeyError:
        raise ParameterError(f"unknown tau2 method {method!r}; choose from {', '.join(METHODS)}") from None
    return fn(effects)
