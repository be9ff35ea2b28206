import math

import numpy as np
import pytest

from mdmeta import sim
from mdmeta.errors import ConfigError, NumericError, ValidationError
from mdmeta.study import validate_dataset


def scen(**kw):
    base = dict(K=5, sizes=(20,), q=0.5, sigma2_c=1.0, sigma2_t=2.0, tau2=0.1, mu=0.0, reps=200, seed=7)
    base.update(kw)
    return sim.Scenario(**base)


class TestDesign:
    @pytest.mark.parametrize("n,q,expect", [(20, 0.5, (10, 10)), (20, 0.75, (5, 15)), (12, 0.75, (3, 9)),
                                            (30, 0.5, (15, 15)), (250, 0.75, (63, 187)), (84, 0.75, (21, 63)),
                                            (100, 0.7, (30, 70))])
    def test_arm_split(self, n, q, expect):
        assert sim.arm_split(n, q) == expect

    @pytest.mark.parametrize("q", [0.0, 1.0, -0.5])
    def test_arm_split_range(self, q):
        with pytest.raises(ValidationError):
            sim.arm_split(20, q)

    @pytest.mark.parametrize("kw", [dict(reps=0), dict(K=1), dict(K=7, sizes=(10, 20)), dict(sizes=(3,)),
                                    dict(sigma2_c=0.0), dict(tau2=-0.1), dict(mu=math.inf), dict(q=0.95)])
    def test_invalid_scenarios(self, kw):
        with pytest.raises(ValidationError):
            scen(**kw)

    def test_labels_and_sizes(self):
        sc = scen(K=10, sizes=(12, 16, 18, 20, 84))
        assert sc.n_label == "u30"
        assert list(sc.study_sizes) == [12, 16, 18, 20, 84] * 2
        assert scen().n_label == "20"

    def test_stream_key(self):
        assert scen(reps=10).stream_key() == scen(reps=5000).stream_key()
        assert scen(tau2=0.1).stream_key() != scen(tau2=0.2).stream_key()
        assert scen(mu=0.0).stream_key() != scen(mu=1.0).stream_key()

    def test_scenario_keys_distinguish_seed_independent_fields(self):
        assert scen(seed=1).keys() == scen(seed=2).keys()


class TestGeneration:
    def test_batch_matches_single_datasets(self):
        sc = scen(K=6, sizes=(20, 40), q=0.75)
        batch = sim.generate_batch(sc, 3, 8)
        for j, r in enumerate(range(3, 8)):
            es = validate_dataset(sim.generate_dataset(sc, sim.replication_rng(sc, r)))
            assert np.allclose(es.y, batch.y[j], rtol=1e-15)
            assert np.allclose(es.v2, batch.v2[j], rtol=1e-15)
            assert np.allclose(es.g, batch.g[j], rtol=1e-15)
            assert np.array_equal(es.n_t, batch.n_t[j])

    def test_replications_independent_of_split(self):
        sc = scen()
        a = sim.generate_batch(sc, 0, 300)
        b = sim.generate_batch(sc, 100, 200)
        assert np.array_equal(a.y[100:200], b.y)

    def test_moments(self):
        sc = scen(K=4, sizes=(10, 40), q=0.75, sigma2_c=1.0, sigma2_t=3.0, tau2=0.4, mu=1.5, reps=20000)
        es = sim.generate_batch(sc, 0, sc.reps)
        n_t, n_c = sc.arms()
        true_v = sc.sigma2_t / n_t + sc.sigma2_c / n_c
        R = sc.reps
        assert np.all(np.abs(es.y.mean(0) - 1.5) <= 4 * np.sqrt((true_v + 0.4) / R))
        assert np.allclose(es.y.var(0), true_v + 0.4, rtol=0.05)
        # E[v2] is the true within-study variance
        assert np.all(np.abs(es.v2.mean(0) - true_v) <= 4 * es.v2.std(0) / math.sqrt(R))

    def test_sample_variance_distribution(self):
        sc = scen(K=2, sizes=(12,), q=0.75, sigma2_t=2.0, reps=1)
        n_t, n_c = sc.arms()
        rng = np.random.default_rng(0)
        draws = np.array([sim._draw(sc, rng, n_t, n_c)[1] for _ in range(20000)])
        assert np.allclose(draws.mean(0), 2.0, rtol=0.02)
        assert np.allclose(draws.var(0), 2 * 4.0 / (n_t - 1), rtol=0.06)


def fake_recs(values, ok=None):
    values = np.asarray(values, float)
    return {"value": values, "ok": np.ones(values.size, bool) if ok is None else np.asarray(ok)}


class TestAggregation:
    def test_point_metrics(self):
        sc = scen(tau2=0.5, mu=1.0, reps=4)
        recs = {"tau2.DL": fake_recs([0.4, 0.6, 0.9, 100.0], [True, True, True, False]),
                "mu.SSW": fake_recs([1.0, 2.0, 0.0, 1.0])}
        agg = sim.aggregate(sc, recs, 4)
        assert agg.get("tau2.DL", "bias_tau2") == pytest.approx(0.4 / 3)
        assert agg.se("tau2.DL", "bias_tau2") == pytest.approx(np.std([-0.1, 0.1, 0.4], ddof=1) / math.sqrt(3))
        assert agg.get("tau2.DL", "nonconverged") == 1.0
        assert math.isnan(agg.se("tau2.DL", "nonconverged"))
        assert agg.get("mu.SSW", "bias_mu") == 0.0
        assert agg.get("mu.SSW", "mse_mu") == pytest.approx(0.5)

    def test_interval_metrics(self):
        sc = scen(tau2=0.5, reps=5)
        rec = {"lower": np.array([0.0, 0.6, 0.1, 0.2, 0.0]), "upper": np.array([1.0, 2.0, np.inf, 0.4, 9.0]),
               "ok": np.array([True, True, False, True, False])}
        agg = sim.aggregate(sc, {"tau2ci.QP": rec}, 5)
        # the unbounded interval counts for coverage, the other failure does not
        assert agg.get("tau2ci.QP", "cov_tau2") == pytest.approx(2 / 4)
        assert agg.se("tau2ci.QP", "cov_tau2") == pytest.approx(math.sqrt(0.25 / 4))
        assert agg.get("tau2ci.QP", "width") == pytest.approx((1.0 + 1.4 + 0.2) / 3)
        assert agg.get("tau2ci.QP", "nonconverged") == 2.0

    def test_ratio_of_means_se_is_calibrated(self):
        rng = np.random.default_rng(61)
        ratios, ses = [], []
        for _ in range(400):
            z = rng.normal(size=(300, 2))
            a = (z[:, 0] * 1.3) ** 2
            b = (0.6 * z[:, 0] + 0.8 * z[:, 1]) ** 2
            r, se = sim.ratio_of_means(a, b)
            ratios.append(r)
            ses.append(se)
        assert np.mean(ratios) == pytest.approx(1.69, rel=0.02)
        assert np.mean(ses) == pytest.approx(np.std(ratios, ddof=1), rel=0.1)

    def test_ratio_zero_denominator(self):
        with pytest.raises(NumericError):
            sim.ratio_of_means(np.ones(3), np.zeros(3))

    def test_mse_ratio(self):
        sc = scen(mu=0.0, reps=3)
        recs = {"mu.SSW": fake_recs([1.0, -1.0, 2.0]), "mu.IV-MP": fake_recs([1.0, 1.0, 1.0]),
                "mu.IV-WT": fake_recs([0.0, 0.0, 0.0])}
        agg = sim.aggregate(sc, recs, 3)
        assert agg.get("mu.SSW/IV-MP", "mse_ratio") == pytest.approx(2.0)
        assert math.isnan(agg.get("mu.SSW/IV-WT", "mse_ratio"))
        with pytest.raises(NumericError):
            sim.mse_ratio(agg)
        recs["mu.IV-WT"] = fake_recs([2.0, 0.0, 0.0])
        assert sim.mse_ratio(sim.aggregate(sc, recs, 3)) == {"SSW/IV-MP": pytest.approx(2.0),
                                                             "SSW/IV-WT": pytest.approx(1.5)}


class TestRunning:
    def test_resolve_methods(self):
        assert sim.resolve_methods(["tau2.*"]) == tuple(f"tau2.{m}" for m in sim.TAU2_METHODS)
        assert sim.resolve_methods(["muci.HKSJ", "tau2.DL"]) == ("tau2.DL", "muci.HKSJ")
        with pytest.raises(ConfigError):
            sim.resolve_methods(["tau2.XX"])

    def test_worker_count(self, monkeypatch):
        monkeypatch.delenv(sim.THREADS_ENV, raising=False)
        assert sim.worker_count() == 1
        monkeypatch.setenv(sim.THREADS_ENV, "3")
        assert sim.worker_count() == 3
        assert sim.worker_count(2) == 2
        with pytest.raises(ConfigError):
            sim.worker_count(0)

    def test_deterministic_across_workers_and_chunks(self, monkeypatch):
        scs = [scen(reps=250, tau2=0.0), scen(reps=120, K=10, sizes=(12, 16, 18, 20, 84), q=0.75)]
        tags = ["tau2.*", "tau2ci.QP", "tau2ci.PL", "mu.*", "muci.*"]
        one = sim.run_grid(scs, tags, workers=1)
        monkeypatch.setattr(sim, "CHUNK", 50)
        many = sim.run_grid(scs, tags, workers=3)
        for a, b in zip(one, many):
            assert a.rows.keys() == b.rows.keys()
            for k in a.rows:
                assert a.rows[k] == pytest.approx(b.rows[k], nan_ok=True, rel=1e-12, abs=1e-15), k

    def test_single_replication(self):
        sc = scen()
        rec = sim.run_replication(sc, sim.replication_rng(sc, 0), ["tau2.DL", "tau2ci.QP", "muci.HKSJ"])
        batch = sim.evaluate(sim.generate_batch(sc, 0, 1), ("tau2.DL", "tau2ci.QP", "muci.HKSJ"))
        assert rec["tau2.DL"]["value"] == pytest.approx(batch["tau2.DL"]["value"][0], rel=1e-15)
        assert rec["tau2ci.QP"]["hit"] == bool(batch["tau2ci.QP"]["lower"][0] <= sc.tau2 <= batch["tau2ci.QP"]["upper"][0])

    def test_progress_callback(self):
        seen = []
        sim.run_grid([scen(reps=10), scen(reps=10, tau2=0.2)], ["tau2.DL"],
                     progress=lambda i, n, sc: seen.append((i, n)))
        assert seen == [(1, 2), (2, 2)]

    def test_mp_mean_at_zero_decreases_with_study_size(self):
        means = []
        for n in (20, 40, 100, 250):
            sc = scen(K=10, sizes=(n,), sigma2_t=1.0, tau2=0.0, reps=4000, seed=3)
            agg = sim.run_scenario(sc, ["tau2.MP"])
            means.append((agg.get("tau2.MP", "bias_tau2"), agg.se("tau2.MP", "bias_tau2")))
        assert all(m > 3 * se for m, se in means)
        # each step down is many standard errors wide
        for (a, sa), (b, sb) in zip(means, means[1:]):
            assert a - b > 3 * (sa + sb)
