"""Acceptance criteria 1-8.

Each test collects its sub-checks, prints them, records a one-line detail
for the terminal summary and fails if any sub-check fails.
"""

import json
import math
import time
import warnings

import numpy as np
import pytest

from polaron import cli, clusters as cl, experiments, gibbs, pekar, pekar_process as pp
from polaron.errors import PolaronError, RootNotFoundError

from oracles import brownian_phi_mc, gaussian_mixture_g0

pytestmark = pytest.mark.slow


class Checks:
    def __init__(self, record_property):
        self.items = []
        self.record = record_property
        self.t0 = time.perf_counter()

    def add(self, name, ok, info=""):
        self.items.append((name, bool(ok), info))
        print(f"  [{'ok' if ok else 'FAIL'}] {name} {info}")

    def runtime(self, limit):
        elapsed = time.perf_counter() - self.t0
        self.add(f"runtime < {limit:.0f} s", elapsed < limit, f"{elapsed:.1f} s")

    def finish(self):
        failed = [name for name, ok, _ in self.items if not ok]
        self.record("detail", "all checks ok" if not failed else "failed: " + "; ".join(failed))
        assert not failed, failed


@pytest.fixture
def checks(record_property):
    return Checks(record_property)


def test_criterion_1_variational_solver(checks):
    res = pekar.solve_ground_state()
    bound = 2 / (3 * math.pi)
    checks.add("g0 >= 2/(3 pi)", res.g0 >= bound, f"g0 = {res.g0:.7f}")
    checks.add("virial residual < 1e-3", res.virial_residual < 1e-3, f"{res.virial_residual:.2e}")
    oracle, _ = gaussian_mixture_g0()
    checks.add("Gaussian-mixture oracle within 1%", abs(res.g0 / oracle - 1) < 0.01,
               f"oracle = {oracle:.7f}")
    checks.runtime(60)
    checks.finish()


def test_criterion_2_gaussian_machinery(checks):
    rng = np.random.default_rng(2)
    cases = {1: ([0.0], [1.5], [0.8]),
             2: ([0.0, 1.0], [2.0, 2.5], [0.7, 1.2]),
             3: ([0.0, 0.5, 1.8], [1.0, 2.2, 3.0], [1.1, 0.6, 0.9])}
    for n, (s, t, u) in cases.items():
        exact = cl.gaussian_normalizer(cl.IntervalCluster(s, t), u)
        mc, se = brownian_phi_mc(s, t, u, 10**6, rng)
        checks.add(f"Phi determinant vs MC, n = {n}", abs(mc / exact - 1) < 0.01,
                   f"{exact:.6f} vs {mc:.6f} +- {se:.1e}")
    for ell in (0.5, 1.0, 4.0):
        for mode in ("quad", "mc"):
            F = cl.cluster_weight_F(cl.IntervalCluster([0.0], [ell]), mode=mode).value
            dev = abs(F - math.sqrt(2 / (math.pi * ell)))
            checks.add(f"F single interval ell = {ell} ({mode})", dev < 1e-6, f"dev = {dev:.1e}")
    for x in (0.01, 1.0, 10.0):
        dev = cl.coulomb_gaussian_check(x)
        checks.add(f"Coulomb-Gaussian identity |x| = {x}", dev < 1e-10, f"dev = {dev:.1e}")
    checks.runtime(120)
    checks.finish()


def test_criterion_3_renewal_tilt(checks):
    warnings.simplefilter("ignore", cl.HeavyTailWarning)
    for alpha in (1.0, 4.0):
        sol = cl.solve_lambda(alpha, np.random.default_rng(3), n_clusters=20_000)
        lams = np.linspace(0.0, 4.0 * max(sol.lam, 1.0), 60)
        qs = np.array([sol.ensemble.q(lam).value for lam in lams])
        checks.add(f"q decreasing with shared seeds, alpha = {alpha}", np.all(np.diff(qs) < 0))
    try:
        sol = cl.solve_lambda(8.0, np.random.default_rng(3), n_clusters=20_000)
        checks.add("q(lambda*) = 1 +- 3 stderr at alpha = 8", abs(sol.q.value - 1) <= 3 * sol.q.stderr,
                   f"lambda* = {sol.lam:.4f}, q = {sol.q.value:.4f} +- {sol.q.stderr:.4f}")
    except RootNotFoundError as exc:
        checks.add("q(lambda*) = 1 +- 3 stderr at alpha = 8", False, f"RootNotFoundError: {exc}")
    # the estimator is reliable for alpha <= 4 and contradicts the rigorous bound from alpha = 7 on
    with pytest.raises(RootNotFoundError) as info:
        cl.solve_lambda(16.0, np.random.default_rng(3), n_clusters=20_000)
    checks.add("root-not-found outside the documented range (alpha = 16)", True, str(info.value)[:80])
    checks.runtime(300)
    checks.finish()


def test_criterion_4_variance(checks):
    warnings.simplefilter("ignore", cl.HeavyTailWarning)
    for alpha in (0.5, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 8.0):
        try:
            sol = cl.solve_lambda(alpha, np.random.default_rng(4), n_clusters=20_000)
        except RootNotFoundError:
            print(f"  alpha = {alpha}: not bracketed, skipped")
            continue
        est = cl.sigma2(sol)
        ok = est.value > -3 * est.stderr and est.value <= 1 + 3 * est.stderr and est.value > 0
        checks.add(f"sigma2 in (0, 1], alpha = {alpha}", ok, f"{est.value:.4f} +- {est.stderr:.4f}")
        ens = sol.ensemble
        dominated = all(cl.cluster_end_to_end_variance(cl.IntervalCluster(s, t), u) <= float(t.max() - s.min())
                        for (s, t), u in zip(ens.clusters, ens.us))
        checks.add(f"end-to-end variance <= sigma* for all clusters, alpha = {alpha}", dominated)
    checks.runtime(300)
    checks.finish()


def test_criterion_5_cross_implementation(checks):
    # T = 16 keeps the free-end bias of order 1/(2T) below the statistical error
    params = gibbs.PolaronParams(1.0, 16.0, eta=0.05, delta=0.02)
    chain = gibbs.run_chain(params, 10_000, np.random.default_rng(5), keep_paths=False)
    mc, mc_se, n_eff = gibbs.estimate_sigma2(chain)
    sol = cl.solve_lambda(1.0, np.random.default_rng(55), n_clusters=50_000)
    est = cl.sigma2(sol)
    combined = math.hypot(mc_se, est.stderr)
    checks.add("MCMC sigma2 = cluster sigma2 within 3 combined stderr", abs(mc - est.value) <= 3 * combined,
               f"mcmc {mc:.4f} +- {mc_se:.4f} (n_eff {n_eff:.0f}), cluster {est.value:.4f} +- {est.stderr:.4f}")
    checks.runtime(900)
    checks.finish()


def test_criterion_6_pekar_diffusion(checks, solved):
    rng = np.random.default_rng(6)
    paths = pp.stationary_run(solved.profile, pekar.drift_field(solved.profile), rng, n_chains=4000,
                              n_record=250, record_every=10, dt=1e-3, burn_in=2000)
    l1 = pp.invariant_density_check(paths, solved.profile)
    checks.add("invariant density L1 < 0.05 over 1e6 states", l1 < 0.05, f"L1 = {l1:.4f}")
    gauss = pekar.RadialProfile.gaussian(pekar.RadialGrid(n=2000, r_max=10), math.sqrt(0.5))
    ou = pp.stationary_run(gauss, pp.ou_drift(1.0), rng, n_chains=4000, n_record=250, record_every=10,
                           dt=1e-3, burn_in=2000)
    for lag in (0.5, 1.0, 2.0):
        k = int(round(lag / ou.dt))
        prod = (ou.positions[:, 0] * ou.positions[:, k]).ravel()
        se = prod.std(ddof=1) / math.sqrt(prod.size)
        exact = 0.5 * math.exp(-lag)
        checks.add(f"OU covariance at lag {lag}", abs(prod.mean() - exact) <= 3 * se,
                   f"{prod.mean():.5f} vs {exact:.5f} +- {se:.1e}")
    checks.runtime(180)
    checks.finish()


def test_criterion_7_strong_coupling_trend(checks, solved):
    plan = experiments.SweepPlan(epsilons=[1.0, 0.5, 0.25, 0.125], backends=["cluster"] * 4,
                                 lags=[0.5, 1.0, 2.0], seed=7, n_samples=1500, n_clusters=20_000)
    report = experiments.run_sweep(plan, solved.profile, solved.g0)
    print(report.to_csv())
    checks.add("every epsilon completed", all(r.status == "ok" for r in report.rows))
    for lag in plan.lags:
        ds = [f"{r.distance:.4f}" for r in report.rows if r.lag == lag]
        checks.add(f"distance non-increasing at lag {lag}", report.distance_trend(lag), " ".join(ds))
    gs = [f"{rows[0].g_eps:.4f}" for rows in report.by_epsilon().values()]
    checks.add("g(eps) moves toward g0", report.free_energy_trend(), " ".join(gs) + f" -> {solved.g0:.4f}")
    checks.runtime(3600)
    checks.finish()


SMALL_CONFIGS = {
    "solve-pekar": ["n=400"],
    "sample-pekar": ["drift=ou", "n_chains=200", "n_record=60", "burn_in=200", "lags=0.5"],
    "mcmc-polaron": ["epsilon=1.0", "T=1.0", "n_steps=10000"],
    "cluster-sim": ["alpha=1.0", "horizon=50", "n_clusters=2000"],
    "solve-lambda": ["alpha=1.0", "n_clusters=2000"],
    "sigma2": ["alpha=1.0", "n_clusters=2000"],
    "sweep": ["epsilons=1.0", "backends=cluster", "lags=0.5", "n_samples=1000", "n_permutations=20",
              "n_clusters=2000"],
}


def test_criterion_8_reproducibility(checks, tmp_path, monkeypatch):
    assert set(SMALL_CONFIGS) | {"report"} == set(cli.COMMANDS)
    # relative paths keep the two configs identical
    for run in ("a", "b"):
        (tmp_path / run).mkdir()
        monkeypatch.chdir(tmp_path / run)
        for name, sets in SMALL_CONFIGS.items():
            args = [name, "--seed", "8", "--output", name]
            for item in sets:
                args += ["--set", item]
            assert cli.main(args) == 0, name
        assert cli.main(["report", "--set", "input=sweep", "--output", "report"]) == 0
    for name in cli.COMMANDS:
        a = json.loads((tmp_path / "a" / name / "manifest.json").read_text())
        b = json.loads((tmp_path / "b" / name / "manifest.json").read_text())
        same = a == b and all((tmp_path / "a" / name / f["name"]).read_bytes()
                              == (tmp_path / "b" / name / f["name"]).read_bytes() for f in a["files"])
        checks.add(f"{name} artifacts byte-identical", same, f"{len(a['files'])} files")
    checks.finish()
