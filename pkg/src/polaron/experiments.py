"""Strong-coupling sweep: polaron increment laws against the Pekar process.

For each eps the polaron path is sampled either by path MCMC at (eps, T)
or, at alpha = eps^{-1/2}, by the tilted cluster renewal.  Cluster paths
live in alpha units and are mapped back by w_eps(s) = alpha w_alpha(s /
alpha^2), which turns the alpha-polaron into the eps-polaron.  Increments
at a fixed lag grid are compared with increments of the stationary Pekar
diffusion by energy distance.
"""

from __future__ import annotations

import csv
import io
import json
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import spatial, stats

from . import clusters, gibbs, pekar, pekar_process
from .errors import ConfigurationError, InsufficientSampleError, PolaronError
from .pekar_process import IncrementLaw


def periodize(positions, dt: float, s: float) -> np.ndarray:
    """Periodic extension w_T(s) = n w(T) + w(r) for s = n T + r, 0 <= r < T.

    ``positions`` samples w on [0, T] with spacing ``dt``; w(r) between
    grid points is linearly interpolated.
    """
    pos = np.asarray(positions, dtype=float)
    steps = pos.shape[0] - 1
    T = steps * dt
    n = math.floor(s / T)
    r = s - n * T
    x = r / dt
    k = min(int(math.floor(x)), steps - 1)
    frac = x - k
    inner = (1.0 - frac) * pos[k] + frac * pos[k + 1]
    return n * (pos[-1] - pos[0]) + inner


def empirical_increment_statistics(positions, dt: float, lags, window: float | None = None,
                                   stride: float | None = None, periodic: bool = True,
                                   max_samples: int | None = None) -> dict:
    """Time-averaged laws of w_T(s + t) - w_T(s) for s in [0, window).

    The path is extended periodically past its end, as in the empirical
    increment process.  With ``periodic=False`` only windows that fit in
    the path are used.  ``stride`` (default ``dt``) spaces the start
    times; ``max_samples`` caps the count per lag by widening it.
    Returns {lag: IncrementLaw}.
    """
    pos = np.asarray(positions, dtype=float)
    steps = pos.shape[0] - 1
    span = steps * dt
    window = span if window is None else window
    if window > span + 1e-12:
        raise InsufficientSampleError(f"window {window} exceeds the path span {span}")
    out = {}
    total = pos[-1] - pos[0]
    for lag in lags:
        if lag > window + 1e-12:
            raise InsufficientSampleError(f"lag {lag} exceeds the window {window}")
        lag_steps = int(round(lag / dt))
        if lag_steps < 1 or abs(lag_steps * dt - lag) > 1e-9 * max(1.0, lag):
            raise ConfigurationError(f"lag {lag} is not a multiple of dt = {dt}")
        stride_steps = max(1, int(round((dt if stride is None else stride) / dt)))
        last = int(round(window / dt)) if periodic else int(round(window / dt)) - lag_steps + 1
        if max_samples is not None and last / stride_steps > max_samples:
            stride_steps = int(math.ceil(last / max_samples))
        starts = np.arange(0, max(last, 0), stride_steps)
        if not periodic:
            starts = starts[starts + lag_steps <= steps]
        if starts.size == 0:
            raise InsufficientSampleError(f"no windows of lag {lag} fit in the path")
        ends = starts + lag_steps
        wraps = ends // steps
        ends_mod = ends - wraps * steps
        # an end landing exactly on the period boundary is the path end point
        at_end = (ends_mod == 0) & (wraps > 0)
        wraps = np.where(at_end, wraps - 1, wraps)
        ends_mod = np.where(at_end, steps, ends_mod)
        end_pos = wraps[:, None] * total + pos[ends_mod]
        out[float(lag)] = IncrementLaw(float(lag), end_pos - pos[starts])
    return out


@dataclass
class Comparison:
    lag: float
    distance: float
    stderr: float
    null95: float
    p_value: float
    ks: float
    ks_p_value: float
    n_a: int
    n_b: int


def _energy_from_matrix(D: np.ndarray, ia: np.ndarray, ib: np.ndarray) -> float:
    return float(2.0 * D[np.ix_(ia, ib)].mean() - D[np.ix_(ia, ia)].mean() - D[np.ix_(ib, ib)].mean())


def energy_distance(a, b) -> float:
    """2 E|X - Y| - E|X - X'| - E|Y - Y'| with V-statistic means."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return float(2.0 * spatial.distance.cdist(a, b).mean() - spatial.distance.cdist(a, a).mean()
                 - spatial.distance.cdist(b, b).mean())


def compare_increment_laws(law_a: IncrementLaw, law_b: IncrementLaw, rng: np.random.Generator,
                           n_permutations: int = 100, min_samples: int = 1000,
                           max_samples: int = 2000) -> Comparison:
    """Energy distance and radial KS distance between two increment samples.

    The stderr is the standard deviation of the energy distance under
    random relabelling of the pooled sample, and ``null95`` its 95%
    quantile.  Samples larger than ``max_samples`` are subsampled.
    """
    if abs(law_a.lag - law_b.lag) > 1e-12:
        raise ConfigurationError(f"lags differ: {law_a.lag} vs {law_b.lag}")
    a, b = law_a.increments, law_b.increments
    if min(len(a), len(b)) < min_samples:
        raise InsufficientSampleError(f"need {min_samples} increments per law, got {len(a)} and {len(b)}")
    if len(a) > max_samples:
        a = a[rng.choice(len(a), max_samples, replace=False)]
    if len(b) > max_samples:
        b = b[rng.choice(len(b), max_samples, replace=False)]
    pooled = np.vstack([a, b])
    D = spatial.distance.cdist(pooled, pooled)
    na = len(a)
    idx = np.arange(len(pooled))
    observed = _energy_from_matrix(D, idx[:na], idx[na:])
    null = np.empty(n_permutations)
    for k in range(n_permutations):
        perm = rng.permutation(idx)
        null[k] = _energy_from_matrix(D, perm[:na], perm[na:])
    ks = stats.ks_2samp(np.linalg.norm(a, axis=1), np.linalg.norm(b, axis=1))
    return Comparison(law_a.lag, observed, float(null.std(ddof=1)), float(np.quantile(null, 0.95)),
                      float((1 + np.sum(null >= observed)) / (n_permutations + 1)),
                      float(ks.statistic), float(ks.pvalue), len(a), len(b))


# ---------------------------------------------------------------------------
# Sweep


@dataclass
class SweepPlan:
    """Parameters of a strong-coupling sweep.

    ``backends`` maps each eps to "cluster", "mcmc" or "auto" (cluster
    when the root lambda* is found, MCMC otherwise).  Horizons and step
    sizes for the cluster backend are in eps units.
    """

    epsilons: list = field(default_factory=lambda: [1.0, 0.5, 0.25, 0.125])
    backends: list | None = None
    lags: list = field(default_factory=lambda: [0.5, 1.0, 2.0])
    seed: int = 0
    n_samples: int = 1500
    n_permutations: int = 100
    # cluster backend
    n_clusters: int = 20_000
    dt: float = 0.05
    # mcmc backend
    mcmc_T: float | None = None
    mcmc_steps: int = 10_000
    mcmc_delta: float | None = None
    eta: float = 0.05
    beta: float = 1.0
    free_energy: bool = False
    ti_points: int = 8
    # Pekar reference
    pekar_dt: float = 1e-3
    pekar_burn_in: int = 10_000

    def __post_init__(self):
        eps = [float(e) for e in self.epsilons]
        if not eps or any(e <= 0 for e in eps):
            raise ConfigurationError("epsilons must be positive")
        if any(b >= a for a, b in zip(eps, eps[1:])):
            raise ConfigurationError("epsilons must be strictly decreasing")
        self.epsilons = eps
        if self.backends is None:
            self.backends = ["auto"] * len(eps)
        if len(self.backends) != len(eps):
            raise ConfigurationError("need one backend per epsilon")
        for b in self.backends:
            if b not in ("auto", "cluster", "mcmc"):
                raise ConfigurationError(f"unknown backend {b!r}")
        if self.n_samples < 1000:
            raise ConfigurationError("n_samples must be at least 1000 for the law comparison")
        self.lags = [float(t) for t in self.lags]


@dataclass
class ReportRow:
    epsilon: float
    backend: str
    lag: float
    distance: float
    stderr: float
    sigma2: float
    sigma2_err: float
    g_eps: float
    g_eps_err: float
    status: str


REPORT_COLUMNS = ["epsilon", "backend", "lag", "distance", "stderr", "sigma2", "sigma2_err",
                  "g_eps", "g_eps_err", "status"]


@dataclass
class ComparisonReport:
    rows: list
    g0: float
    metadata: dict
    runtimes: dict = field(default_factory=dict)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(REPORT_COLUMNS)
        for row in self.rows:
            values = asdict(row)
            writer.writerow([repr(v) if isinstance(v, float) else v for v in (values[c] for c in REPORT_COLUMNS)])
        return buf.getvalue()

    def metadata_json(self) -> str:
        payload = dict(self.metadata)
        payload["g0"] = self.g0
        return json.dumps(payload, indent=2, sort_keys=True) + "\n"

    def by_epsilon(self) -> dict:
        out: dict = {}
        for row in self.rows:
            out.setdefault(row.epsilon, []).append(row)
        return out

    def distance_trend(self, lag: float, k: float = 3.0) -> bool:
        """Distances at ``lag`` never rise by more than k combined stderrs as eps decreases."""
        rows = [r for r in self.rows if r.lag == lag and r.status == "ok"]
        return all(b.distance - a.distance <= k * math.hypot(a.stderr, b.stderr)
                   for a, b in zip(rows, rows[1:]))

    def free_energy_trend(self) -> bool:
        """|g(eps) - g0| decreases along the sweep."""
        gs = []
        for eps, rows in self.by_epsilon().items():
            ok = [r for r in rows if r.status == "ok" and math.isfinite(r.g_eps)]
            if ok:
                gs.append(ok[0].g_eps)
        gaps = [abs(g - self.g0) for g in gs]
        return len(gaps) >= 2 and all(b < a for a, b in zip(gaps, gaps[1:]))


def pekar_increment_laws(profile: pekar.RadialProfile, lags, n_samples: int, rng: np.random.Generator,
                         dt: float = 1e-3, burn_in: int = 10_000) -> dict:
    """One increment per chain and lag from stationary Pekar chains."""
    drift = pekar.drift_field(profile)
    record = int(round(max(lags) / dt))
    x0 = pekar_process.sample_stationary_start(profile, rng, size=n_samples)
    run = pekar_process.euler_maruyama(drift, x0, dt, record, rng, burn_in=burn_in)
    out = {}
    for lag in lags:
        k = int(round(lag / dt))
        out[float(lag)] = IncrementLaw(float(lag), run.positions[:, k] - run.positions[:, 0])
    return out


def _cluster_backend(eps: float, plan: SweepPlan, rng: np.random.Generator):
    alpha = eps ** -0.5
    sol = clusters.solve_lambda(alpha, rng, n_clusters=plan.n_clusters)
    s2 = clusters.sigma2(sol)
    g = eps * (alpha + sol.lam)
    g_err = eps * sol.stderr
    # enough eps-time for n_samples windows of the largest lag spaced by that lag
    horizon_eps = max(plan.lags) * (plan.n_samples + 2)
    dt_alpha = plan.dt / alpha**2
    path = clusters.assemble_stationary_polaron(alpha, sol.lam, horizon_eps / alpha**2, rng,
                                                solution=sol, dt=dt_alpha)
    positions = alpha * path.positions
    laws = {}
    for lag in plan.lags:
        laws.update(empirical_increment_statistics(positions, plan.dt, [lag], stride=lag,
                                                   periodic=False, max_samples=plan.n_samples))
    extra = {"alpha": alpha, "lambda": sol.lam, "lambda_stderr": sol.stderr,
             "ess": sol.diagnostics["ess"], "top1_share": sol.diagnostics["top1_share"]}
    return laws, (s2.value, s2.stderr), (g, g_err), extra


def _mcmc_backend(eps: float, plan: SweepPlan, rng: np.random.Generator):
    # horizon and step scale like 1/eps so the kernel is resolved the same way at every eps
    T = plan.mcmc_T if plan.mcmc_T is not None else max(4.0 / eps, 2.0 * max(plan.lags))
    delta = plan.mcmc_delta if plan.mcmc_delta is not None else 0.01 / eps
    params = gibbs.PolaronParams(eps, T, eta=plan.eta * eps**-0.5, delta=delta, beta=plan.beta)
    chain = gibbs.run_chain(params, plan.mcmc_steps, rng, thin=max(1, plan.mcmc_steps // 1000))
    s2, s2_err, _ = gibbs.estimate_sigma2(chain)
    laws = {}
    for lag in plan.lags:
        # increments from the middle half of every stored path, away from the free ends
        incs = []
        lag_steps = int(round(lag / delta))
        lo, hi = params.M // 4, 3 * params.M // 4
        per_path = max(1, int(math.ceil(plan.n_samples / len(chain.samples))))
        starts = np.linspace(lo, hi - lag_steps, per_path).astype(int)
        for g in chain.samples:
            pos = np.vstack([np.zeros(3), np.cumsum(g, axis=0)])
            incs.append(pos[starts + lag_steps] - pos[starts])
        laws[float(lag)] = IncrementLaw(float(lag), np.vstack(incs)[: max(plan.n_samples, 1000)])
    g, g_err = math.nan, math.nan
    if plan.free_energy:
        fe = gibbs.free_energy_thermo_integration(params.with_beta(1.0),
                                                  np.linspace(0.0, 1.0, plan.ti_points), rng,
                                                  n_steps=plan.mcmc_steps)
        g, g_err = fe.g, fe.stderr
    extra = {"T": T, "delta": delta, "eta": params.eta, "acceptance_min": float(chain.acceptance.min()),
             "iact": chain.iact}
    return laws, (s2, s2_err), (g, g_err), extra


def run_sweep(plan: SweepPlan, profile: pekar.RadialProfile | None = None, g0: float | None = None,
              seed_for=None) -> ComparisonReport:
    """Run every eps of the plan and compare with the Pekar increment law.

    ``seed_for(label)`` returns the seed of a named random stream; by
    default streams are derived from ``plan.seed``.  A failing eps is
    recorded as rows with an error status and the sweep continues.
    """
    if seed_for is None:
        from .io import derive_seed
        seed_for = lambda label: derive_seed(plan.seed, 0, label)
    if profile is None:
        solved = pekar.solve_ground_state()
        profile, g0 = solved.profile, solved.g0
    if g0 is None:
        g0 = pekar.pekar_energy(profile)
    runtimes = {}
    t0 = time.perf_counter()
    pekar_laws = pekar_increment_laws(profile, plan.lags, plan.n_samples,
                                      np.random.default_rng(seed_for("pekar")),
                                      dt=plan.pekar_dt, burn_in=plan.pekar_burn_in)
    runtimes["pekar"] = time.perf_counter() - t0
    compare_rng = np.random.default_rng(seed_for("compare"))
    rows, meta_eps = [], {}
    for eps, backend in zip(plan.epsilons, plan.backends):
        rng = np.random.default_rng(seed_for(f"eps={eps!r}"))
        t0 = time.perf_counter()
        chosen = backend
        try:
            if backend in ("cluster", "auto"):
                try:
                    result = _cluster_backend(eps, plan, rng)
                    chosen = "cluster"
                except PolaronError:
                    if backend == "cluster":
                        raise
                    result = _mcmc_backend(eps, plan, rng)
                    chosen = "mcmc"
            else:
                result = _mcmc_backend(eps, plan, rng)
            laws, (s2, s2_err), (g, g_err), extra = result
            for lag in plan.lags:
                cmp = compare_increment_laws(laws[lag], pekar_laws[lag], compare_rng,
                                             n_permutations=plan.n_permutations)
                rows.append(ReportRow(eps, chosen, lag, cmp.distance, cmp.stderr, s2, s2_err,
                                      g, g_err, "ok"))
                extra[f"ks_lag={lag!r}"] = cmp.ks
                extra[f"null95_lag={lag!r}"] = cmp.null95
            meta_eps[repr(eps)] = extra
        except PolaronError as exc:
            for lag in plan.lags:
                rows.append(ReportRow(eps, chosen, lag, math.nan, math.nan, math.nan, math.nan,
                                      math.nan, math.nan, f"error: {type(exc).__name__}: {exc}"))
        runtimes[repr(eps)] = time.perf_counter() - t0
    metadata = {
        "plan": {k: v for k, v in asdict(plan).items()},
        "per_epsilon": meta_eps,
        "note": "increment laws are compared at finitely many lags only",
    }
    return ComparisonReport(rows, g0, metadata, runtimes)
