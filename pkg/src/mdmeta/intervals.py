"""Confidence intervals for tau^2: Q-profile, corrected-F profile (WT),
profile likelihood, and the generalized Q-profile intervals with fixed
weights 1/v2 (BJ) and 1/v (J).

Each bound is the root of a function of tau^2 that decreases from a positive
value at the truncation point; bounds are 0 when it is already nonpositive
there and +inf when no sign change is found below the search cap.

The generalized intervals need the CDF of Q_a = sum a_i (y_i - ybar_a)^2,
a linear combination of chi-square(1) variables whose coefficients are the
nonzero eigenvalues of D^(1/2) (I - b b') D^(1/2) with
D = diag(a_i (v2_i + tau2)) and b_i^2 = a_i / sum(a). By the matrix
determinant lemma its Laplace transform is

    prod_i (1 + 2 s d_i)^(-1/2) * (sum_i b_i^2 / (1 + 2 s d_i))^(-1/2),

which is inverted on a Talbot contour without any eigendecomposition.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Any

import numpy as np

from ._roots import brent, expand_upper
from .dist import ChiSqMix, chi2_ppf, chisq_mix_cdf, talbot_cdf
from .errors import DomainError
from .qstat import as_effect_set, correction, fq_quantile, q_values
from .tau2 import MAXITER, reml_kernel, reml_loglik, spread, wt_kernel

log = logging.getLogger(__name__)

METHODS = ("QP", "WT", "PL", "BJ", "J")
CAP_FACTOR = 1e6
EIG_RTOL = 1e-12
# Talbot nodes for the batched quadratic-form CDF: absolute error ~1e-8
QFORM_NODES = 20
# the CDF carries ~1e-9 noise, so its roots stop at this relative width
QFORM_XTOL = 1e-10


@dataclass(frozen=True, eq=False)
class Tau2Interval:
    """Interval for tau^2. ``upper`` is ``inf`` when unresolved below the cap.

    ``lower_truncated``/``upper_truncated`` flag bounds set to 0 because the
    defining equation has no positive root; ``converged`` is False when a
    root solve stopped at its iteration cap or the upper search failed.
    """

    method: str
    lower: Any
    upper: Any
    level: float
    lower_truncated: Any
    upper_truncated: Any
    converged: Any


def _check_level(level):
    level = float(level)
    if not 0.0 < level < 1.0:
        raise DomainError(f"level must lie in (0, 1), got {level!r}")
    return level


def _pack(method, es, level, lo, hi) -> Tau2Interval:
    lower, lt, lc = lo
    upper, ut, uc = hi
    converged = lc & uc
    if es.y.ndim == 1:
        return Tau2Interval(method, float(lower[0]), float(upper[0]), level, bool(lt[0]), bool(ut[0]), bool(converged[0]))
    b = es.batch_shape
    return Tau2Interval(method, lower.reshape(b), upper.reshape(b), level, lt.reshape(b), ut.reshape(b), converged.reshape(b))


def search_cap(y, v2):
    """Upper limit of every bound search, proportional to the data scale."""
    K = y.shape[-1]
    return CAP_FACTOR * np.maximum(v2.max(axis=-1), spread(y) / (K - 1.0))


def decreasing_root(h, lo, hlo, start, cap, rtol=0.0):
    """Root of ``h`` above ``lo`` for rows with ``hlo > 0``.

    ``h`` decreases in tau2. Returns ``(root, truncated, converged)``; rows
    with ``hlo <= 0`` return ``lo`` as truncated, rows without a sign change
    below ``cap`` return ``inf`` and count as not converged. ``rtol`` sets
    the final bracket width relative to its upper end.
    """
    n = lo.size
    root = lo.astype(float).copy()
    truncated = ~(hlo > 0)
    converged = np.ones(n, dtype=bool)
    live = np.nonzero(~truncated)[0]
    if live.size == 0:
        return root, truncated, converged
    sub = lambda t, j: h(t, live[j])
    start = np.maximum(start[live], lo[live])
    blo, bhlo, bhi, bhhi, found = expand_upper(sub, lo[live], hlo[live], start, cap[live])
    root[live[~found]] = np.inf
    converged[live[~found]] = False
    f = np.nonzero(found)[0]
    if f.size:
        r, conv, _ = brent(lambda t, j: sub(t, f[j]), blo[f], bhi[f], bhlo[f], bhhi[f], rtol * bhi[f], MAXITER)
        root[live[f]], converged[live[f]] = r, conv
    return root, truncated, converged


def _flat(es):
    K = es.K
    return es.y.reshape(-1, K), es.v2.reshape(-1, K)


def _q_profile(y, v2, target_fn, start_target, n):
    """Bounds solving Q(t) = target(t) with ``target_fn(t, idx)``."""
    h = lambda t, idx: q_values(y[idx], v2[idx], t) - target_fn(t, idx)
    zero = np.zeros(n)
    h0 = h(zero, np.arange(n))
    start = spread(y) / start_target
    return decreasing_root(h, zero, h0, start, search_cap(y, v2))


# ---------------------------------------------------------------------------
# Q-profile and corrected-F profile
# ---------------------------------------------------------------------------


def ci_qprofile(effects, level: float = 0.95) -> Tau2Interval:
    """Bounds solve Q(t) = chi2_{K-1} quantiles at 1-alpha/2 (lower) and
    alpha/2 (upper)."""
    es = as_effect_set(effects)
    level = _check_level(level)
    y, v2 = _flat(es)
    n, d1 = y.shape[0], es.K - 1.0
    alpha = 1.0 - level
    out = []
    for p in (1.0 - alpha / 2.0, alpha / 2.0):
        target = float(chi2_ppf(p, d1))
        out.append(_q_profile(y, v2, lambda t, idx, c=target: np.full(np.shape(t), c), target, n))
    return _pack("QP", es, level, *out)


def ci_wt(effects, level: float = 0.95) -> Tau2Interval:
    """Q-profile against quantiles of the moment-matched c*F(K-1, f2)
    approximation, with the correction term recomputed at each tau2."""
    es = as_effect_set(effects)
    level = _check_level(level)
    y, v2 = _flat(es)
    g = es.require_g().reshape(y.shape)
    n, d1 = y.shape[0], es.K - 1.0
    alpha = 1.0 - level
    out = []
    for p in (1.0 - alpha / 2.0, alpha / 2.0):
        target = lambda t, idx, p=p: fq_quantile(p, correction(v2[idx], g[idx], t), d1)
        out.append(_q_profile(y, v2, target, float(chi2_ppf(p, d1)), n))
    if log.isEnabledFor(logging.DEBUG):
        # containment of the point estimate is not guaranteed, only reported
        point = wt_kernel(y, v2, g)[0]
        outside = int(np.sum(~((out[0][0] <= point) & (point <= out[1][0]))))
        log.debug("WT point estimate outside its interval in %d of %d datasets", outside, n)
    return _pack("WT", es, level, *out)


# ---------------------------------------------------------------------------
# Profile likelihood
# ---------------------------------------------------------------------------


def ci_pl(effects, level: float = 0.95, tau2_reml=None) -> Tau2Interval:
    """{t : 2 [l_R(t_hat) - l_R(t)] <= chi2_1 quantile at ``level``}."""
    es = as_effect_set(effects)
    level = _check_level(level)
    y, v2 = _flat(es)
    n = y.shape[0]
    if tau2_reml is None:
        tau2_reml = reml_kernel(y, v2)[0]
    that = np.asarray(tau2_reml, dtype=float).reshape(-1)
    crit = float(chi2_ppf(level, 1.0))
    lmax = reml_loglik(y, v2, that)
    dev = lambda t, idx: 2.0 * (lmax[idx] - reml_loglik(y[idx], v2[idx], t))
    all_idx = np.arange(n)

    # lower: deviance falls from dev(0) to 0 on [0, t_hat]
    zero = np.zeros(n)
    d0 = dev(zero, all_idx) - crit
    lower = zero.copy()
    lt = ~((that > 0) & (d0 > 0))
    lc = np.ones(n, dtype=bool)
    live = np.nonzero(~lt)[0]
    if live.size:
        g = lambda t, j: dev(t, live[j]) - crit
        r, conv, _ = brent(g, zero[live], that[live], d0[live], np.full(live.size, -crit), 0.0, MAXITER)
        lower[live], lc[live] = r, conv

    # upper: crit - deviance falls from crit at t_hat
    h = lambda t, idx: crit - dev(t, idx)
    start = that + spread(y) / (y.shape[1] - 1.0) + v2.max(axis=-1)
    upper, ut, uc = decreasing_root(h, that, np.full(n, crit), start, search_cap(y, v2))
    return _pack("PL", es, level, (lower, lt, lc), (upper, ut, uc))


# ---------------------------------------------------------------------------
# Generalized Q-profile (fixed weights)
# ---------------------------------------------------------------------------


def fixed_weight_q(y, a):
    A = a.sum(axis=-1)
    mu = (a * y).sum(axis=-1) / A
    return (a * (y - mu[..., None]) ** 2).sum(axis=-1)


def qform_cdf(q, v2, a, tau2):
    """P(Q_a <= q) when y_i ~ N(mu, v2_i + tau2), batched over rows."""
    q = np.asarray(q, dtype=float)
    tau2 = np.asarray(tau2, dtype=float)
    out = np.zeros(q.shape)
    pos = q > 0
    if not np.any(pos):
        return out
    d = a[pos] * (v2[pos] + tau2[pos, None]) / q[pos, None]
    b2 = a[pos] / a[pos].sum(axis=-1, keepdims=True)

    def log_lt(s):
        z = 1.0 + 2.0 * s[None, None, :] * d[:, :, None]
        return -0.5 * (np.log(z).sum(axis=1) + np.log((b2[:, :, None] / z).sum(axis=1)))

    out[pos] = talbot_cdf(log_lt, QFORM_NODES)
    return out


def qform_eigenvalues(v2, a, tau2):
    """Nonzero eigenvalues of the quadratic form behind Q_a (one dataset)."""
    v2, a = np.asarray(v2, dtype=float), np.asarray(a, dtype=float)
    d = np.sqrt(a * (v2 + tau2))
    b = np.sqrt(a / a.sum())
    M = d[:, None] * (np.eye(a.size) - np.outer(b, b)) * d[None, :]
    lam = np.linalg.eigvalsh(M)
    return lam[lam > EIG_RTOL * lam.max()]


def qform_cdf_eig(q, v2, a, tau2, method="imhof"):
    """Eigenvalue route to :func:`qform_cdf` for a single dataset."""
    lam = qform_eigenvalues(v2, a, tau2)
    return chisq_mix_cdf(ChiSqMix(lam, np.ones(lam.size)), q, method=method)


def _generalized(es, level, a_fn, method):
    level = _check_level(level)
    y, v2 = _flat(es)
    n, d1 = y.shape[0], es.K - 1.0
    a = a_fn(v2)
    q = fixed_weight_q(y, a)
    alpha = 1.0 - level
    cap = search_cap(y, v2)
    amin = a.min(axis=-1)
    avmin = (a * v2).min(axis=-1)
    zero = np.zeros(n)
    F0 = qform_cdf(q, v2, a, zero)
    out = []
    for p in (1.0 - alpha / 2.0, alpha / 2.0):
        h = lambda t, idx, p=p: qform_cdf(q[idx], v2[idx], a[idx], t) - p
        # every nonzero eigenvalue is at least min(a (v2 + t)), so
        # P(Q_a <= q) <= P(chi2_{K-1} <= q / min(a (v2 + t))) <= p beyond this
        start = np.maximum((q / float(chi2_ppf(p, d1)) - avmin) / amin, 0.0)
        start = np.where(start > 0, start, spread(y) / (d1 + 1.0) + v2.max(axis=-1))
        out.append(decreasing_root(h, zero, F0 - p, start, cap, QFORM_XTOL))
    return _pack(method, es, level, *out)


def ci_bj(effects, level: float = 0.95) -> Tau2Interval:
    """Generalized Q-profile with fixed weights 1/v2."""
    return _generalized(as_effect_set(effects), level, lambda v2: 1.0 / v2, "BJ")


def ci_j(effects, level: float = 0.95) -> Tau2Interval:
    """Generalized Q-profile with fixed weights 1/sqrt(v2)."""
    return _generalized(as_effect_set(effects), level, lambda v2: 1.0 / np.sqrt(v2), "J")


INTERVALS = {"QP": ci_qprofile, "WT": ci_wt, "PL": ci_pl, "BJ": ci_bj, "J": ci_j}
