"""Cochran's Q as a function of tau^2 and its corrected moments for mean differences.

The array kernels take ``y``, ``v2`` (and ``g``) with studies on the last
axis and any number of leading batch axes; ``tau2`` broadcasts against the
batch shape. The public functions accept an :class:`EffectSet`, a list of
:class:`StudySummary`, or a list of :class:`EffectRow`.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .dist import chi2_ppf, f_ppf
from .errors import DegenerateMatchError, DomainError, ParameterError, ValidationError
from .study import EffectRow, EffectSet, StudySummary, validate_dataset, welch_g_arrays

log = logging.getLogger(__name__)


def as_effect_set(effects) -> EffectSet:
    """Coerce the accepted dataset representations to an :class:`EffectSet`."""
    if isinstance(effects, EffectSet):
        return effects
    items = list(effects)
    if items and all(isinstance(s, StudySummary) for s in items):
        return validate_dataset(items)
    if items and all(isinstance(r, EffectRow) for r in items):
        return EffectSet(
            y=[r.y for r in items],
            v2=[r.v2 for r in items],
            n_t=[r.n_t for r in items],
            n_c=[r.n_c for r in items],
        )
    if len(items) < 2:
        raise ValidationError(f"insufficient studies: got {len(items)}, need at least 2")
    raise ValidationError("expected an EffectSet or a list of StudySummary / EffectRow")


def _check_tau2(tau2):
    t = np.asarray(tau2, dtype=float)
    if not np.all(t >= 0):
        raise DomainError(f"tau2 must be nonnegative, got {tau2!r}")
    return t


def _scalar(x):
    x = np.asarray(x)
    return float(x) if x.ndim == 0 else x


# ---------------------------------------------------------------------------
# Kernels
# ---------------------------------------------------------------------------


def weights(v2, tau2):
    return 1.0 / (v2 + np.asarray(tau2, dtype=float)[..., None])


def pooled(y, w):
    """Weighted mean and weight total along the last axis."""
    W = w.sum(axis=-1)
    return (w * y).sum(axis=-1) / W, W


def q_values(y, v2, tau2):
    """Q(tau2) for every dataset in the batch."""
    w = weights(v2, tau2)
    mu, _ = pooled(y, w)
    return (w * (y - mu[..., None]) ** 2).sum(axis=-1)


def correction(v2, g, tau2):
    """The moment-correction sum S = sum w^2 g p^2 with weights at tau2."""
    w = weights(v2, tau2)
    W = w.sum(axis=-1, keepdims=True)
    p = 1.0 - w / W
    return (w * w * g * p * p).sum(axis=-1)


def match_f(S, d1):
    """Two-moment F match of Q expressed through the correction sum.

    Returns ``(c, f2, degenerate)``. Writing the match through ``S`` avoids
    cancellation in ``r*d1 - 2 = 2 S (3 d1 - 4 S) / kappa1**2`` as S -> 0.
    Degenerate rows (S = 0 or S >= 3 d1 / 4) get ``c = kappa1/d1`` and
    ``f2 = inf``, standing for Q ~ c*chi2_{d1}.
    """
    S = np.asarray(S, dtype=float)
    d1 = np.asarray(d1, dtype=float)
    k1 = d1 + 2.0 * S
    k2 = 2.0 * d1 + 14.0 * S
    den = 2.0 * S * (3.0 * d1 - 4.0 * S)
    ok = den > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        f2 = (4.0 * d1 * k2 + (2.0 * d1 - 4.0) * k1 * k1) / np.where(ok, den, 1.0)
        c = k1 * (f2 - 2.0) / f2
    f2 = np.where(ok, f2, np.inf)
    c = np.where(ok, c, k1 / d1)
    return c, f2, ~ok


def fq_quantile(p, S, d1):
    """Quantile of the matched distribution of Q: c*F(d1, f2), or c*chi2_{d1}
    for degenerate rows (f2 = inf), which keeps the mean at kappa1."""
    c, f2, degenerate = match_f(S, d1)
    return c * np.where(degenerate, chi2_ppf(p, d1), f_ppf(p, d1, np.where(degenerate, 1.0, f2)))


# ---------------------------------------------------------------------------
# Public API
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class QContext:
    weights: np.ndarray
    W: float
    W2: float
    p: np.ndarray
    pooled_mean: float
    tau2: float
    Q: float


def q_context(effects, tau2: float) -> QContext:
    es = as_effect_set(effects)
    t = float(_check_tau2(tau2))
    w = weights(es.v2, t)
    mu, W = pooled(es.y, w)
    return QContext(weights=w, W=float(W), W2=float((w * w).sum()), p=1.0 - w / W, pooled_mean=float(mu), tau2=t,
                    Q=float((w * (es.y - mu) ** 2).sum()))


def q_statistic(effects, tau2: float = 0.0):
    """Q(tau2) = sum w_i (y_i - mu_hat)^2 with w_i = 1/(v2_i + tau2)."""
    es = as_effect_set(effects)
    return _scalar(q_values(es.y, es.v2, _check_tau2(tau2)))


def welch_g(study: StudySummary) -> float:
    return float(welch_g_arrays(study.var_t, study.n_t, study.var_c, study.n_c))


@dataclass(frozen=True)
class WelchMoments:
    kappa1: float
    kappa2: float
    c: float
    f2: float


def welch_null_moments(effects, tau2: float = 0.0) -> WelchMoments:
    """Corrected mean and variance of Q with weights evaluated at ``tau2``."""
    es = as_effect_set(effects)
    S = float(correction(es.v2, es.require_g(), float(_check_tau2(tau2))))
    d1 = es.K - 1
    k1, k2 = d1 + 2.0 * S, 2.0 * d1 + 14.0 * S
    c, f2, degenerate = match_f(S, d1)
    if degenerate and S > 0:
        log.warning("F moment match is degenerate (S=%.4g, K=%d); using a scaled chi-square", S, es.K)
    return WelchMoments(kappa1=k1, kappa2=k2, c=float(c), f2=float(f2))


def f_approx(kappa1: float, kappa2: float, K: int, fallback: bool = True) -> tuple[float, float]:
    """Scale ``c`` and denominator df ``f2`` so that c*F(K-1, f2) has mean
    ``kappa1`` and variance ``kappa2``.

    When no such F exists (``r*d1 <= 2`` with ``r = kappa2/kappa1**2``) the
    fallback returns ``(kappa1/(K-1), inf)``, read as Q ~ c*chi2_{K-1},
    which keeps the mean. With ``fallback=False`` that case raises instead.
    """
    if not (kappa1 > 0 and kappa2 > 0):
        raise ParameterError("kappa1 and kappa2 must be positive")
    if K < 2:
        raise ParameterError(f"K must be at least 2, got {K}")
    d1 = K - 1.0
    rd1 = kappa2 / kappa1**2 * d1
    if rd1 > 2.0:
        f2 = (4.0 * rd1 + 2.0 * d1 - 4.0) / (rd1 - 2.0)
        if f2 > 4.0 and math.isfinite(f2):
            return kappa1 * (f2 - 2.0) / f2, f2
    if not fallback:
        raise DegenerateMatchError(f"no F distribution matches kappa1={kappa1}, kappa2={kappa2}, K={K}")
    if not math.isclose(rd1, 2.0, rel_tol=1e-12):
        log.warning("F moment match is degenerate (r*d1=%.6g); using a scaled chi-square", rd1)
    return kappa1 / d1, math.inf


def expected_q_alternative(effects, tau2: float) -> float:
    """Approximate E[Q] at between-study variance ``tau2`` with fixed-effect
    weights: kappa1 + tau2 * (W - W2/W)."""
    es = as_effect_set(effects)
    t = float(_check_tau2(tau2))
    w = 1.0 / es.v2
    W = w.sum()
    S = float(correction(es.v2, es.require_g(), 0.0))
    return (es.K - 1) + 2.0 * S + t * (W - (w * w).sum() / W)
