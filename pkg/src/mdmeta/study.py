"""Two-arm study summaries and the mean-difference effect derived from them."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import DomainError, ValidationError

MIN_ARM = 2


@dataclass(frozen=True)
class StudySummary:
    """Per-arm size, mean and sample variance of one two-arm study."""

    n_t: int
    mean_t: float
    var_t: float
    n_c: int
    mean_c: float
    var_c: float

    def __post_init__(self):
        problem = _check_study(self)
        if problem is not None:
            field, msg = problem
            raise ValidationError(msg, field=field)


def _check_study(s) -> tuple[str, str] | None:
    for arm in ("t", "c"):
        n = getattr(s, f"n_{arm}")
        if isinstance(n, bool) or not isinstance(n, (int, float, np.integer, np.floating)) or not float(n).is_integer():
            return f"n_{arm}", f"n_{arm} must be an integer, got {n!r}"
        if n < MIN_ARM:
            return f"n_{arm}", f"n_{arm} must be at least {MIN_ARM}, got {n}"
        m = getattr(s, f"mean_{arm}")
        if not math.isfinite(m):
            return f"mean_{arm}", f"mean_{arm} must be finite, got {m!r}"
        v = getattr(s, f"var_{arm}")
        if not (math.isfinite(v) and v > 0):
            return f"var_{arm}", f"var_{arm} must be positive and finite, got {v!r}"
    return None


@dataclass(frozen=True)
class EffectRow:
    """Mean difference ``y``, its unpooled variance ``v2`` and effective size."""

    y: float
    v2: float
    n_t: int
    n_c: int
    eff_n: float


def md_effect(study: StudySummary) -> EffectRow:
    return EffectRow(
        y=study.mean_t - study.mean_c,
        v2=study.var_t / study.n_t + study.var_c / study.n_c,
        n_t=int(study.n_t),
        n_c=int(study.n_c),
        eff_n=study.n_t * study.n_c / (study.n_t + study.n_c),
    )


def welch_g_arrays(var_t, n_t, var_c, n_c):
    """Per-study ``var_t^2/(n_t^2 (n_t-1)) + var_c^2/(n_c^2 (n_c-1))``."""
    var_t, var_c = np.asarray(var_t, float), np.asarray(var_c, float)
    n_t, n_c = np.asarray(n_t, float), np.asarray(n_c, float)
    return var_t**2 / (n_t**2 * (n_t - 1.0)) + var_c**2 / (n_c**2 * (n_c - 1.0))


@dataclass(frozen=True, eq=False)
class EffectSet:
    """Array view of a meta-analysis: one entry per study along the last axis.

    Leading axes, when present, index independent datasets (simulation
    replications) that share the number of studies. ``g`` holds the
    per-study variance-of-variance terms and is ``None`` when arm-level data
    are unavailable; estimators that need it refuse such sets.
    """

    y: np.ndarray
    v2: np.ndarray
    g: np.ndarray | None = None
    n_t: np.ndarray | None = None
    n_c: np.ndarray | None = None

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        v2 = np.broadcast_to(np.asarray(self.v2, dtype=float), y.shape)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "v2", v2)
        for name in ("g", "n_t", "n_c"):
            val = getattr(self, name)
            if val is not None:
                object.__setattr__(self, name, np.broadcast_to(np.asarray(val, dtype=float), y.shape))
        if y.ndim == 0 or y.shape[-1] < 2:
            raise ValidationError("insufficient studies: at least 2 are required")
        if not np.all(np.isfinite(y)):
            raise ValidationError("effects must be finite", field="y")
        if not np.all((v2 > 0) & np.isfinite(v2)):
            raise ValidationError("variances must be positive and finite", field="v2")

    @property
    def K(self) -> int:
        return self.y.shape[-1]

    @property
    def batch_shape(self) -> tuple:
        return self.y.shape[:-1]

    @property
    def eff_n(self) -> np.ndarray:
        if self.n_t is None or self.n_c is None:
            raise ValidationError("arm sizes are required for effective sample sizes", field="n_t")
        return self.n_t * self.n_c / (self.n_t + self.n_c)

    def require_g(self) -> np.ndarray:
        if self.g is None:
            raise ValidationError("arm-level variances are required for this method", field="g")
        return self.g

    def rows(self) -> list[EffectRow]:
        if self.y.ndim != 1:
            raise ValidationError("rows() is defined for a single dataset")
        n_t = self.n_t if self.n_t is not None else np.zeros(self.K)
        n_c = self.n_c if self.n_c is not None else np.zeros(self.K)
        out = []
        for i in range(self.K):
            nt, nc = int(n_t[i]), int(n_c[i])
            eff = nt * nc / (nt + nc) if nt + nc else float("nan")
            out.append(EffectRow(float(self.y[i]), float(self.v2[i]), nt, nc, eff))
        return out

    def __len__(self) -> int:
        return self.K

    @classmethod
    def from_studies(cls, studies: Sequence[StudySummary]) -> "EffectSet":
        return validate_dataset(studies)

    @classmethod
    def from_arrays(cls, y, v2, g=None, n_t=None, n_c=None) -> "EffectSet":
        return cls(y, v2, g, n_t, n_c)


def validate_dataset(studies: Iterable[StudySummary]) -> EffectSet:
    """Check every study and return the dataset as an :class:`EffectSet`."""
    studies = list(studies)
    if len(studies) < 2:
        raise ValidationError(f"insufficient studies: got {len(studies)}, need at least 2")
    for i, s in enumerate(studies):
        problem = _check_study(s)
        if problem is not None:
            field, msg = problem
            raise ValidationError(f"study {i}: {msg}", index=i, field=field)
    rows = [md_effect(s) for s in studies]
    arr = lambda attr: np.array([getattr(s, attr) for s in studies], dtype=float)
    return EffectSet(
        y=np.array([r.y for r in rows]),
        v2=np.array([r.v2 for r in rows]),
        g=welch_g_arrays(arr("var_t"), arr("n_t"), arr("var_c"), arr("n_c")),
        n_t=arr("n_t"),
        n_c=arr("n_c"),
    )


def shift_scale(studies: Sequence[StudySummary], shift: float, scale: float) -> list[StudySummary]:
    """Map every mean to ``scale*m`` and every variance to ``scale**2 * s2``,
    then add ``shift`` to the treatment means only, so each effect becomes
    ``scale*y + shift``."""
    if not (math.isfinite(scale) and scale > 0):
        raise DomainError(f"scale must be positive, got {scale!r}")
    s2 = scale * scale
    return [
        StudySummary(
            n_t=s.n_t,
            mean_t=scale * s.mean_t + shift,
            var_t=s2 * s.var_t,
            n_c=s.n_c,
            mean_c=scale * s.mean_c,
            var_c=s2 * s.var_c,
        )
        for s in studies
    ]
