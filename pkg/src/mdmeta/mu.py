"""Point and interval estimators of the overall mean difference mu."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any

import numpy as np

from .dist import norm_ppf, t_ppf
from .errors import DomainError
from .qstat import as_effect_set, pooled, weights

IV_METHODS = ("DL", "REML", "MP", "J", "WT", "CDL")
POINT_METHODS = tuple(f"IV-{m}" for m in IV_METHODS) + ("SSW",)
INTERVAL_METHODS = tuple(f"IV-{m}" for m in IV_METHODS) + ("HKSJ", "HKSJ-WT", "SSW-WT", "SSW-CDL")


@dataclass(frozen=True, eq=False)
class MuResult:
    method: str
    estimate: Any
    variance: Any


@dataclass(frozen=True, eq=False)
class MuInterval:
    """Interval for mu; ``flagged`` marks intervals resting on a t quantile
    with a single degree of freedom (K = 2)."""

    method: str
    center: Any
    lower: Any
    upper: Any
    level: float
    flagged: bool = False


def _check_level(level):
    level = float(level)
    if not 0.0 < level < 1.0:
        raise DomainError(f"level must lie in (0, 1), got {level!r}")
    return level


def _tau2_array(tau2hat, batch):
    t = np.broadcast_to(np.asarray(tau2hat, dtype=float), batch)
    if not np.all(t >= 0):
        raise DomainError("tau2hat must be nonnegative")
    return t


def _out(x, scalar):
    return float(x) if scalar else x


def _interval(method, center, half, level, scalar, flagged=False):
    return MuInterval(method, _out(center, scalar), _out(center - half, scalar), _out(center + half, scalar), level, flagged)


def mu_iv(effects, tau2hat, method: str = "IV") -> MuResult:
    """Inverse-variance weighted mean with weights 1/(v2 + tau2hat) and
    variance 1/sum(weights)."""
    es = as_effect_set(effects)
    t = _tau2_array(tau2hat, es.batch_shape)
    est, W = pooled(es.y, weights(es.v2, t))
    scalar = es.y.ndim == 1
    return MuResult(method, _out(est, scalar), _out(1.0 / W, scalar))


def mu_ssw(effects) -> MuResult:
    """Mean weighted by effective sample sizes n_t n_c / (n_t + n_c).

    The variance field is left at NaN; it depends on tau2 and comes from
    :func:`var_ssw`.
    """
    es = as_effect_set(effects)
    est, _ = pooled(es.y, es.eff_n)
    scalar = es.y.ndim == 1
    return MuResult("SSW", _out(est, scalar), _out(np.full(es.batch_shape, np.nan), scalar))


def var_ssw(effects, tau2hat):
    """sum n~^2 (v2 + tau2hat) / (sum n~)^2."""
    es = as_effect_set(effects)
    t = _tau2_array(tau2hat, es.batch_shape)
    n = es.eff_n
    out = (n * n * (es.v2 + t[..., None])).sum(axis=-1) / n.sum(axis=-1) ** 2
    return _out(out, es.y.ndim == 1)


def ci_mu_z(mu: MuResult, level: float = 0.95) -> MuInterval:
    """estimate +/- z_{1-alpha/2} sqrt(variance)."""
    level = _check_level(level)
    var = np.asarray(mu.variance, dtype=float)
    if np.any(var < 0):
        raise DomainError("variance must be nonnegative")
    half = float(norm_ppf(0.5 + level / 2.0)) * np.sqrt(var)
    return _interval(mu.method, np.asarray(mu.estimate, dtype=float), half, level, np.ndim(mu.estimate) == 0)


def hksj_variance(y, v2, tau2):
    w = weights(v2, tau2)
    center, W = pooled(y, w)
    K = y.shape[-1]
    return center, (w * (y - center[..., None]) ** 2).sum(axis=-1) / ((K - 1.0) * W)


def ci_mu_hksj(effects, tau2hat, level: float = 0.95, method: str = "HKSJ") -> MuInterval:
    """IV mean at tau2hat with variance sum w (y - mu)^2 / ((K-1) sum w) and
    a t_{K-1} quantile."""
    es = as_effect_set(effects)
    level = _check_level(level)
    t = _tau2_array(tau2hat, es.batch_shape)
    center, var = hksj_variance(es.y, es.v2, t)
    half = float(t_ppf(0.5 + level / 2.0, es.K - 1.0)) * np.sqrt(var)
    return _interval(method, center, half, level, es.y.ndim == 1, flagged=es.K == 2)


def ci_mu_ssw_t(effects, tau2hat, level: float = 0.95, method: str = "SSW-WT") -> MuInterval:
    """SSW mean +/- t_{K-1} quantile times sqrt(var_ssw(tau2hat))."""
    es = as_effect_set(effects)
    level = _check_level(level)
    center = np.asarray(mu_ssw(es).estimate)
    var = np.asarray(var_ssw(es, tau2hat))
    half = float(t_ppf(0.5 + level / 2.0, es.K - 1.0)) * np.sqrt(var)
    return _interval(method, center, half, level, es.y.ndim == 1, flagged=es.K == 2)
