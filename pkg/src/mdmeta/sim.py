"""Seeded Monte Carlo harness for the bias and coverage study.

Data are generated at summary level: per-arm sample variances are drawn as
sigma^2 chi2(n-1)/(n-1) and the study effect directly as
N(mu, sigma_T^2/n_T + sigma_C^2/n_C + tau^2). Replication ``r`` of a
scenario always draws from the stream ``make_rng(seed, *scenario_key, r)``,
so results do not depend on how replications are split across workers.
Replications are evaluated in fixed-size chunks with every estimator
vectorized over the chunk.
"""

from __future__ import annotations

import hashlib
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import intervals as ci
from . import mu as mumod
from . import tau2 as t2
from .dist import make_rng
from .errors import ConfigError, NumericError, ValidationError
from .qstat import correction
from .study import EffectSet, StudySummary, welch_g_arrays

CHUNK = 1000
THREADS_ENV = "MDMETA_THREADS"

TAU2_METHODS = t2.METHODS
TAU2_CI_METHODS = ("QP", "BJ", "PL", "WT", "J")
MU_METHODS = mumod.POINT_METHODS
MU_CI_METHODS = mumod.INTERVAL_METHODS
MSE_RATIOS = (("SSW", "IV-MP"), ("SSW", "IV-WT"))

ALL_TAGS = (
    tuple(f"tau2.{m}" for m in TAU2_METHODS)
    + tuple(f"tau2ci.{m}" for m in TAU2_CI_METHODS)
    + tuple(f"mu.{m}" for m in MU_METHODS)
    + tuple(f"muci.{m}" for m in MU_CI_METHODS)
)
RATIO_TAGS = tuple(f"mu.{a}/{b}" for a, b in MSE_RATIOS)


# ---------------------------------------------------------------------------
# Scenarios and data generation
# ---------------------------------------------------------------------------


def arm_split(n: int, q: float) -> tuple[int, int]:
    """(n_t, n_c) with n_t = ceil((1 - q) n), n_c = n - n_t."""
    if not 0.0 < q < 1.0:
        raise ValidationError(f"q must lie in (0, 1), got {q!r}", field="q")
    # guard against (1 - q) * n landing a rounding error above an integer
    n_t = math.ceil((1.0 - q) * n - 1e-9)
    return n_t, n - n_t


@dataclass(frozen=True)
class Scenario:
    """One cell of the simulation grid.

    ``sizes`` is either K total study sizes or a shorter pattern that is
    repeated to length K.
    """

    K: int
    sizes: tuple
    q: float
    sigma2_c: float
    sigma2_t: float
    tau2: float
    mu: float = 0.0
    reps: int = 1000
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "sizes", tuple(int(n) for n in self.sizes))
        if self.K < 2:
            raise ValidationError(f"K must be at least 2, got {self.K}", field="K")
        if not self.sizes or self.K % len(self.sizes):
            raise ValidationError(f"size pattern of length {len(self.sizes)} does not divide K={self.K}", field="sizes")
        if min(self.sizes) < 4:
            raise ValidationError("every study size must be at least 4", field="sizes")
        for n in set(self.sizes):
            nt, nc = arm_split(n, self.q)
            if min(nt, nc) < 2:
                raise ValidationError(f"size {n} with q={self.q} leaves an arm below 2", field="q")
        if not (self.sigma2_c > 0 and self.sigma2_t > 0):
            raise ValidationError("within-study variances must be positive", field="sigma2")
        if not self.tau2 >= 0:
            raise ValidationError("tau2 must be nonnegative", field="tau2")
        if not math.isfinite(self.mu):
            raise ValidationError("mu must be finite", field="mu")
        if self.reps < 1:
            raise ValidationError(f"reps must be positive, got {self.reps}", field="reps")

    @property
    def study_sizes(self) -> np.ndarray:
        return np.tile(np.asarray(self.sizes), self.K // len(self.sizes))

    @property
    def equal(self) -> bool:
        return len(set(self.sizes)) == 1

    @property
    def n_label(self) -> str:
        """"20" for equal sizes of 20, "u30" for an unequal pattern averaging 30."""
        if self.equal:
            return str(self.sizes[0])
        return "u" + format(sum(self.sizes) / len(self.sizes), "g")

    def keys(self) -> tuple:
        return (self.K, self.n_label, self.q, self.sigma2_c, self.sigma2_t, self.tau2, self.mu)

    def sort_key(self) -> tuple:
        n = float(self.n_label.lstrip("u"))
        return (self.K, not self.equal, n, self.q, self.sigma2_c, self.sigma2_t, self.tau2, self.mu)

    def stream_key(self) -> tuple[int, int]:
        """Two 32-bit words identifying the scenario independently of reps."""
        text = "|".join(repr(v) for v in (self.K, self.sizes, self.q, self.sigma2_c, self.sigma2_t, self.tau2, self.mu))
        h = hashlib.sha256(text.encode()).digest()
        return int.from_bytes(h[:4], "little"), int.from_bytes(h[4:8], "little")

    def arms(self) -> tuple[np.ndarray, np.ndarray]:
        split = np.array([arm_split(int(n), self.q) for n in self.study_sizes])
        return split[:, 0], split[:, 1]


def replication_rng(sc: Scenario, r: int) -> np.random.Generator:
    return make_rng(sc.seed, *sc.stream_key(), r)


def _draw(sc, rng, n_t, n_c):
    var_t = sc.sigma2_t * rng.chisquare(n_t - 1) / (n_t - 1)
    var_c = sc.sigma2_c * rng.chisquare(n_c - 1) / (n_c - 1)
    sd = np.sqrt(sc.sigma2_t / n_t + sc.sigma2_c / n_c + sc.tau2)
    y = rng.normal(sc.mu, sd)
    return y, var_t, var_c


def generate_dataset(sc: Scenario, rng: np.random.Generator) -> list[StudySummary]:
    """One simulated meta-analysis; each effect is carried as mean_t with mean_c = 0."""
    n_t, n_c = sc.arms()
    y, var_t, var_c = _draw(sc, rng, n_t, n_c)
    return [
        StudySummary(int(n_t[i]), float(y[i]), float(var_t[i]), int(n_c[i]), 0.0, float(var_c[i]))
        for i in range(sc.K)
    ]


def generate_batch(sc: Scenario, start: int, stop: int) -> EffectSet:
    """Replications ``start..stop-1`` stacked as a batched :class:`EffectSet`."""
    n_t, n_c = sc.arms()
    rows = [_draw(sc, replication_rng(sc, r), n_t, n_c) for r in range(start, stop)]
    y, var_t, var_c = (np.array(a) for a in zip(*rows))
    return EffectSet(
        y=y,
        v2=var_t / n_t + var_c / n_c,
        g=welch_g_arrays(var_t, n_t, var_c, n_c),
        n_t=np.broadcast_to(n_t, y.shape),
        n_c=np.broadcast_to(n_c, y.shape),
    )


# ---------------------------------------------------------------------------
# Method selection and evaluation
# ---------------------------------------------------------------------------


def resolve_methods(selectors=None) -> tuple:
    """Expand selectors (exact tags or ``family.*``) into an ordered tag tuple."""
    if selectors is None:
        return ALL_TAGS
    chosen = set()
    for sel in selectors:
        if sel.endswith(".*"):
            fam = sel[:-1]
            hit = [t for t in ALL_TAGS if t.startswith(fam)]
        else:
            hit = [t for t in ALL_TAGS if t == sel]
        if not hit:
            raise ConfigError(f"unknown method selector {sel!r}")
        chosen.update(hit)
    return tuple(t for t in ALL_TAGS if t in chosen)


_MU_NEEDS = {f"IV-{m}": m for m in TAU2_METHODS}
_MUCI_NEEDS = dict(_MU_NEEDS, **{"HKSJ": "DL", "HKSJ-WT": "WT", "SSW-WT": "WT", "SSW-CDL": "CDL"})
_KERNELS = {
    "DL": lambda es: t2.dl_kernel(es.y, es.v2),
    "CDL": lambda es: t2.dl_kernel(es.y, es.v2, correction(es.v2, es.g, np.zeros(es.batch_shape))),
    "J": lambda es: t2.j_kernel(es.y, es.v2),
    "MP": lambda es: t2.mp_kernel(es.y, es.v2),
    "WT": lambda es: t2.wt_kernel(es.y, es.v2, es.g),
    "REML": lambda es: t2.reml_kernel(es.y, es.v2),
}


def _needed_tau2(tags) -> list:
    need = set()
    for tag in tags:
        fam, m = tag.split(".", 1)
        if fam == "tau2":
            need.add(m)
        elif fam == "tau2ci" and m == "PL":
            need.add("REML")
        elif fam == "mu" and m in _MU_NEEDS:
            need.add(_MU_NEEDS[m])
        elif fam == "muci":
            need.add(_MUCI_NEEDS[m])
    return [m for m in TAU2_METHODS if m in need]


def evaluate(es: EffectSet, tags, level: float = 0.95) -> dict:
    """Run the selected methods on a batch; returns ``tag -> dict of arrays``.

    Point records carry ``value``; interval records ``lower`` and ``upper``;
    every record carries ``ok``, False where the estimator (or the tau2
    estimate it depends on) did not converge.
    """
    out = {}
    est = {m: _KERNELS[m](es) for m in _needed_tau2(tags)}
    for tag in tags:
        fam, m = tag.split(".", 1)
        if fam == "tau2":
            out[tag] = {"value": est[m][0], "ok": est[m][1]}
        elif fam == "tau2ci":
            if m == "PL":
                r = ci.ci_pl(es, level, tau2_reml=est["REML"][0])
                ok = r.converged & est["REML"][1]
            else:
                r = ci.INTERVALS[m](es, level)
                ok = r.converged
            out[tag] = {"lower": r.lower, "upper": r.upper, "ok": ok}
        elif fam == "mu":
            if m == "SSW":
                out[tag] = {"value": mumod.mu_ssw(es).estimate, "ok": np.ones(es.batch_shape, bool)}
            else:
                tv, tok = est[_MU_NEEDS[m]][:2]
                out[tag] = {"value": mumod.mu_iv(es, tv).estimate, "ok": tok}
        else:
            tv, tok = est[_MUCI_NEEDS[m]][:2]
            if m.startswith("IV-"):
                r = mumod.ci_mu_z(mumod.mu_iv(es, tv, m), level)
            elif m.startswith("HKSJ"):
                r = mumod.ci_mu_hksj(es, tv, level, m)
            else:
                r = mumod.ci_mu_ssw_t(es, tv, level, m)
            out[tag] = {"lower": r.lower, "upper": r.upper, "ok": tok}
    return out


def run_replication(sc: Scenario, rng: np.random.Generator, tags=None, level: float = 0.95) -> dict:
    """Every selected method on one generated dataset, with hit flags.

    Returns ``tag -> record``; interval records include ``hit`` against the
    scenario's tau2 (for tau2ci) or mu (for muci).
    """
    tags = resolve_methods(tags)
    n_t, n_c = sc.arms()
    y, var_t, var_c = _draw(sc, rng, n_t, n_c)
    es = EffectSet(y[None], (var_t / n_t + var_c / n_c)[None], welch_g_arrays(var_t, n_t, var_c, n_c)[None],
                   n_t[None], n_c[None])
    recs = evaluate(es, tags, level)
    out = {}
    for tag, rec in recs.items():
        r = {k: (bool(v[0]) if k == "ok" else float(v[0])) for k, v in rec.items()}
        if "lower" in r:
            truth = sc.tau2 if tag.startswith("tau2ci") else sc.mu
            r["hit"] = r["lower"] <= truth <= r["upper"]
        out[tag] = r
    return out


# ---------------------------------------------------------------------------
# Aggregation
# ---------------------------------------------------------------------------


@dataclass
class AggregateMetrics:
    """Per-scenario summaries: ``rows[(tag, metric)] = (value, mc_se)``.

    ``mc_se`` is NaN where it is undefined (non-convergence counts).
    """

    scenario: Scenario
    reps: int
    rows: dict = field(default_factory=dict)

    def get(self, tag: str, metric: str) -> float:
        return self.rows[(tag, metric)][0]

    def se(self, tag: str, metric: str) -> float:
        return self.rows[(tag, metric)][1]


def _mean_se(x):
    n = x.size
    if n == 0:
        return math.nan, math.nan
    m = float(np.mean(x))
    return m, (float(np.std(x, ddof=1)) / math.sqrt(n) if n > 1 else math.nan)


def _coverage(hit):
    n = hit.size
    if n == 0:
        return math.nan, math.nan
    p = float(np.mean(hit))
    return p, math.sqrt(p * (1.0 - p) / n)


def ratio_of_means(a, b):
    """mean(a)/mean(b) with a delta-method standard error."""
    A, B = float(np.mean(a)), float(np.mean(b))
    if B == 0.0:
        raise NumericError("zero MSE in the denominator")
    R = A / B
    n = a.size
    if n < 2:
        return R, math.nan
    cov = np.cov(a, b)
    var = (cov[0, 0] - 2.0 * R * cov[0, 1] + R * R * cov[1, 1]) / (B * B * n)
    return R, math.sqrt(max(var, 0.0))


def aggregate(sc: Scenario, recs: dict, reps: int) -> AggregateMetrics:
    out = AggregateMetrics(sc, reps)
    rows = out.rows
    for tag, rec in recs.items():
        fam = tag.split(".", 1)[0]
        ok = np.asarray(rec["ok"], bool)
        if fam in ("tau2", "mu"):
            err = rec["value"][ok] - (sc.tau2 if fam == "tau2" else sc.mu)
            rows[(tag, f"bias_{fam}")] = _mean_se(err)
            if fam == "mu":
                rows[(tag, "mse_mu")] = _mean_se(err * err)
        else:
            truth = sc.tau2 if fam == "tau2ci" else sc.mu
            lo, hi = rec["lower"], rec["upper"]
            # an unbounded interval is a valid answer for coverage
            valid = ok | np.isinf(hi)
            hit = (lo[valid] <= truth) & (truth <= hi[valid])
            rows[(tag, "cov_tau2" if fam == "tau2ci" else "cov_mu")] = _coverage(hit)
            fin = ok & np.isfinite(hi)
            rows[(tag, "width")] = _mean_se(hi[fin] - lo[fin])
        rows[(tag, "nonconverged")] = (float(np.count_nonzero(~ok)), math.nan)
    for a, b in MSE_RATIOS:
        ta, tb = f"mu.{a}", f"mu.{b}"
        if ta in recs and tb in recs:
            both = recs[ta]["ok"] & recs[tb]["ok"]
            ea = (recs[ta]["value"][both] - sc.mu) ** 2
            eb = (recs[tb]["value"][both] - sc.mu) ** 2
            try:
                rows[(f"mu.{a}/{b}", "mse_ratio")] = ratio_of_means(ea, eb) if ea.size else (math.nan, math.nan)
            except NumericError:
                rows[(f"mu.{a}/{b}", "mse_ratio")] = (math.nan, math.nan)
    return out


def mse_ratio(metrics: AggregateMetrics) -> dict:
    """MSE(SSW)/MSE(IV-MP) and MSE(SSW)/MSE(IV-WT) from aggregated MSEs."""
    out = {}
    for a, b in MSE_RATIOS:
        num = metrics.get(f"mu.{a}", "mse_mu")
        den = metrics.get(f"mu.{b}", "mse_mu")
        if den == 0.0:
            raise NumericError(f"MSE of {b} is zero")
        out[f"{a}/{b}"] = num / den
    return out


# ---------------------------------------------------------------------------
# Running
# ---------------------------------------------------------------------------


def worker_count(workers=None) -> int:
    if workers is None:
        env = os.environ.get(THREADS_ENV)
        workers = int(env) if env else 1
    if workers < 1:
        raise ConfigError(f"worker count must be positive, got {workers}")
    return workers


def _run_chunk(args):
    sc, start, stop, tags, level = args
    es = generate_batch(sc, start, stop)
    return evaluate(es, tags, level)


def _merge(parts):
    out = {}
    for tag in parts[0]:
        out[tag] = {k: np.concatenate([p[tag][k] for p in parts]) for k in parts[0][tag]}
    return out


def run_grid(scenarios, tags=None, level: float = 0.95, workers=None, progress=None) -> list[AggregateMetrics]:
    """Run every scenario; chunks fan out over ``workers`` processes.

    ``progress(i, n, scenario)`` is called as each scenario completes.
    """
    tags = resolve_methods(tags)
    scenarios = list(scenarios)
    jobs = []
    for i, sc in enumerate(scenarios):
        for start in range(0, sc.reps, CHUNK):
            jobs.append((i, (sc, start, min(start + CHUNK, sc.reps), tags, level)))
    workers = worker_count(workers)
    pending = {i: [] for i in range(len(scenarios))}
    need = {i: math.ceil(sc.reps / CHUNK) for i, sc in enumerate(scenarios)}
    results = [None] * len(scenarios)

    def collect(i, chunk_no, rec):
        pending[i].append((chunk_no, rec))
        if len(pending[i]) == need[i]:
            parts = [r for _, r in sorted(pending.pop(i), key=lambda x: x[0])]
            results[i] = aggregate(scenarios[i], _merge(parts), scenarios[i].reps)
            if progress is not None:
                progress(sum(r is not None for r in results), len(scenarios), scenarios[i])

    if workers == 1:
        for i, job in jobs:
            collect(i, job[1], _run_chunk(job))
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for (i, job), rec in zip(jobs, pool.map(_run_chunk, [j for _, j in jobs], chunksize=1)):
                collect(i, job[1], rec)
    return results


def run_scenario(sc: Scenario, tags=None, level: float = 0.95, workers=None) -> AggregateMetrics:
    return run_grid([sc], tags, level, workers)[0]
