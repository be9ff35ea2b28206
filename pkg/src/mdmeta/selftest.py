"""Built-in checks run by ``mdmeta selftest``.

Every check is a named function that raises ``AssertionError`` on failure.
Reference values were computed by hand or with independent high-precision
evaluations and are frozen here.
"""

from __future__ import annotations

import math
import time
import traceback

import numpy as np

from . import dist, intervals, mu, qstat, sim, study, tau2

CHECKS = []


def check(fn):
    CHECKS.append(fn)
    return fn


def close(a, b, tol, what=""):
    assert abs(a - b) <= tol, f"{what} {a!r} != {b!r} (tol {tol:g})"


def _toy():
    return [study.StudySummary(2, 1.0, 1.0, 2, 0.0, 1.0), study.StudySummary(2, -1.0, 1.0, 2, 0.0, 1.0)]


@check
def dist_reference_values():
    close(dist.cdf(dist.Normal(0, 1), 1.96), 0.9750021048517795, 1e-12, "Phi(1.96)")
    close(dist.cdf(dist.ChiSquare(2), 2.0), 1 - math.exp(-1), 1e-12, "chi2_2(2)")
    close(dist.quantile(dist.StudentT(4), 0.975), 2.7764451051977987, 1e-9, "t_4 0.975")
    close(dist.quantile(dist.FisherF(1, 1e12), 0.95), 3.841458820694124, 1e-8, "F(1,1e12) 0.95")
    close(dist.quantile(dist.ChiSquare(3.5), 0.3), 1.8037944735550034, 1e-9, "chi2_3.5 0.3")


@check
def dist_quantile_roundtrip():
    specs = [dist.Normal(1, 2), dist.StudentT(2.5), dist.ChiSquare(0.7), dist.FisherF(4, 17.5),
             dist.FisherF(29, 3e7), dist.FisherF(2, math.inf)]
    p = np.linspace(0.01, 0.99, 99)
    for s in specs:
        err = np.max(np.abs(dist.cdf(s, dist.quantile(s, p)) - p))
        assert err <= 1e-9, f"round trip for {s}: {err:.2e}"


@check
def chisq_mixture():
    close(dist.chisq_mix_cdf(dist.ChiSqMix([1, 1], [1, 1]), 2.0), 1 - math.exp(-1), 1e-9, "chi2_2 by mixture")
    close(dist.chisq_mix_cdf(dist.ChiSqMix([2], [3]), 5.0), float(dist.chi2_cdf(2.5, 3)), 1e-9, "scaled term")
    mix = dist.ChiSqMix([1.0, 2.0, 0.3], [1, 2, 1])
    for x in (0.5, 3.0, 9.0):
        a = dist.chisq_mix_cdf(mix, x, "imhof")
        b = dist.chisq_mix_cdf(mix, x, "talbot")
        close(a, b, 1e-8, f"imhof vs talbot at {x}")


@check
def study_effects():
    r = study.md_effect(study.StudySummary(4, 5.0, 4.0, 2, 3.0, 2.0))
    close(r.y, 2.0, 0, "y")
    close(r.v2, 2.0, 1e-15, "v2")
    close(r.eff_n, 8 / 6, 1e-15, "eff_n")
    try:
        study.validate_dataset(_toy()[:1])
    except study.ValidationError:
        pass
    else:
        raise AssertionError("K=1 accepted")


@check
def q_engine_values():
    es = study.EffectSet([0.0, 2.0], [1.0, 1.0])
    close(qstat.q_statistic(es, 0.0), 2.0, 1e-14, "Q(0)")
    close(qstat.q_statistic(es, 1.0), 1.0, 1e-14, "Q(1)")
    m = qstat.welch_null_moments(_toy())
    close(m.kappa1, 1.5, 1e-14, "kappa1")
    close(m.kappa2, 5.5, 1e-14, "kappa2")
    c, f2 = qstat.f_approx(1.5, 5.5, 2)
    close(f2, 17.5, 1e-10, "f2")
    close(c, 1.5 * 15.5 / 17.5, 1e-12, "c")
    # matched moments of c*F(d1, f2)
    d1 = 1.0
    mean = c * f2 / (f2 - 2)
    var = c * c * 2 * f2 * f2 * (d1 + f2 - 2) / (d1 * (f2 - 2) ** 2 * (f2 - 4))
    close(mean, 1.5, 1e-9, "F mean")
    close(var, 5.5, 1e-8, "F variance")


@check
def tau2_estimators():
    es = study.EffectSet([0.0, 2.0], [1.0, 1.0])
    close(tau2.tau2_dl(es).value, 1.0, 1e-14, "DL")
    close(tau2.tau2_mp(es).value, 1.0, 1e-12, "MP")
    close(tau2.tau2_reml(es).value, 1.0, 1e-10, "REML")
    close(tau2.tau2_cdl(_toy()).value, 0.5, 1e-14, "CDL")
    close(tau2.tau2_wt(_toy()).value, math.sqrt(0.5), 1e-12, "WT")
    assert tau2.tau2_dl(study.EffectSet([0.0, 1.0, 2.0], [1.0, 1.0, 1.0])).truncated


@check
def tau2_intervals():
    es = study.EffectSet([0.0, 2.0], [1.0, 1.0])
    qp = intervals.ci_qprofile(es)
    close(qp.upper, 2.0 / float(dist.chi2_ppf(0.025, 1)) - 1.0, 1e-8, "QP upper")
    assert qp.lower == 0.0
    bj = intervals.ci_bj(es)
    close(bj.upper, qp.upper, 1e-6 * qp.upper, "BJ = QP at equal variances")
    pl = intervals.ci_pl(es)
    assert pl.lower <= 1.0 <= pl.upper
    rng = np.random.default_rng(7)
    v2 = rng.uniform(0.1, 2.0, 6)
    for a in (1 / v2, 1 / np.sqrt(v2)):
        for t in (0.0, 0.7):
            x = intervals.qform_cdf(np.array([3.0]), v2[None], a[None], np.array([t]))[0]
            close(x, intervals.qform_cdf_eig(3.0, v2, a, t), 1e-7, "quadratic-form CDF")


@check
def mu_estimators():
    es = study.EffectSet([0.0, 2.0], [1.0, 3.0])
    r = mu.mu_iv(es, 1.0)
    close(r.estimate, 2 / 3, 1e-15, "IV mean")
    close(r.variance, 4 / 3, 1e-15, "IV variance")
    h = mu.ci_mu_hksj(study.EffectSet([0.0, 2.0], [1.0, 1.0]), 1.0)
    close(h.upper - h.center, 12.706204736174696, 1e-8, "HKSJ half-width")
    z = mu.ci_mu_z(mu.MuResult("x", 0.0, 1.0))
    close(z.upper, 1.959963984540054, 1e-12, "z half-width")


@check
def sim_design():
    assert sim.arm_split(20, 0.5) == (10, 10)
    assert sim.arm_split(20, 0.75) == (5, 15)
    assert sim.arm_split(12, 0.75) == (3, 9)
    sc = sim.Scenario(5, (20,), 0.5, 1.0, 2.0, 0.1, reps=200, seed=3)
    a = sim.run_scenario(sc, ["tau2.DL", "muci.HKSJ"])
    b = sim.run_scenario(sc, ["tau2.DL", "muci.HKSJ"])
    assert a.rows == b.rows, "simulation is not deterministic"
    p = a.get("muci.HKSJ", "cov_mu")
    close(a.se("muci.HKSJ", "cov_mu"), math.sqrt(p * (1 - p) / 200), 1e-15, "coverage MC-SE")


def run_selftest(verbose: bool = True) -> bool:
    ok = True
    t0 = time.monotonic()
    for fn in CHECKS:
        try:
            fn()
        except Exception as exc:  # report every failing check by name
            ok = False
            if verbose:
                print(f"FAIL {fn.__name__}: {exc}")
                traceback.print_exc(limit=2)
        else:
            if verbose:
                print(f"pass {fn.__name__}")
    if verbose:
        print(f"{'all checks passed' if ok else 'FAILED'} in {time.monotonic() - t0:.1f}s")
    return ok
