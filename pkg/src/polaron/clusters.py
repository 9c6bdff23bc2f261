"""Gaussian birth-death cluster representation of the stationary polaron.

Writing 1/|x| = c0 int_0^inf exp(-u^2 |x|^2 / 2) du with c0 = sqrt(2/pi)
turns the Coulomb weight into a mixture of Gaussian weights indexed by
Poisson intervals [s, t] with intensity alpha e^{-(t-s)} ds dt and one
variable u per interval.  Overlapping intervals form clusters (busy periods
of an M/M/inf queue with arrival rate alpha and Exp(1) service), and the
path law becomes a renewal process of dormant Brownian gaps and Gaussian
clusters, tilted by exp(-lambda * length).

Main entry points
-----------------
q_lambda, solve_lambda
    Tilt function and its root lambda*(alpha).
sigma2
    Limiting variance per unit time of the end-to-end displacement.
assemble_stationary_polaron
    A stationary path built from tilted clusters and dormant gaps.
"""

from __future__ import annotations

import csv
import heapq
import io
import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import integrate, linalg

from .errors import (
    ConfigurationError,
    EfficiencyError,
    HeavyTailWarning,
    ModeError,
    NumericalError,
    RootNotFoundError,
    TruncationError,
)

C0 = math.sqrt(2.0 / math.pi)
MAX_INDIVIDUALS = 10**6
# population levels with their own proposal birth rate; larger ones share the last
MAX_LEVEL = 30
PEKAR_TRIAL = 2.0 / (3.0 * math.pi)


# ---------------------------------------------------------------------------
# Coulomb-Gaussian identity and interval process


def coulomb_gaussian_check(x: float) -> float:
    """|c0 int_0^inf exp(-u^2 x^2 / 2) du - 1/x| by adaptive quadrature."""
    x = abs(float(x))
    if x == 0:
        raise ConfigurationError("the Coulomb-Gaussian identity needs |x| > 0")
    value, _ = integrate.quad(lambda u: C0 * math.exp(-0.5 * u * u * x * x), 0.0, math.inf,
                              epsabs=1e-14, epsrel=1e-13, limit=200)
    return abs(value - 1.0 / x)


def poisson_interval_mean(alpha: float, T: float) -> float:
    """Mean number of intervals in [-T, T]: alpha (2T - 1 + e^{-2T})."""
    return alpha * (2.0 * T - 1.0 + math.exp(-2.0 * T))


def sample_poisson_intervals(alpha: float, T: float, rng: np.random.Generator) -> np.ndarray:
    """Poisson intervals with intensity alpha e^{-(t-s)} on -T <= s < t <= T.

    Returns an array of shape (k, 2) with rows (s, t), sorted by s.
    """
    if not (alpha > 0 and T > 0):
        raise ConfigurationError("alpha and T must be positive")
    count = rng.poisson(poisson_interval_mean(alpha, T))
    starts = np.empty(count)
    filled = 0
    while filled < count:
        # s has density proportional to 1 - e^{-(T-s)} <= 1
        cand = rng.uniform(-T, T, size=2 * (count - filled) + 8)
        keep = cand[rng.random(cand.size) < 1.0 - np.exp(-(T - cand))]
        take = min(keep.size, count - filled)
        starts[filled:filled + take] = keep[:take]
        filled += take
    room = T - starts
    # Exp(1) truncated to (0, room] by inversion
    lengths = -np.log1p(-rng.random(count) * -np.expm1(-room))
    lengths = np.minimum(lengths, room)
    out = np.column_stack([starts, starts + lengths])
    return out[np.argsort(out[:, 0], kind="stable")]


# ---------------------------------------------------------------------------
# Clusters


@dataclass(frozen=True, eq=False)
class IntervalCluster:
    """Intervals [s_i, t_i] with a connected union J = [min s, max t]."""

    s: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        s = np.atleast_1d(np.asarray(self.s, dtype=float))
        t = np.atleast_1d(np.asarray(self.t, dtype=float))
        if s.shape != t.shape or s.ndim != 1 or s.size == 0:
            raise ConfigurationError("a cluster needs matching, non-empty s and t arrays")
        if np.any(t <= s):
            raise ConfigurationError("every interval needs s < t")
        order = np.argsort(s, kind="stable")
        s, t = s[order], t[order]
        reach = np.maximum.accumulate(t)
        if np.any(s[1:] > reach[:-1]):
            raise ConfigurationError("intervals do not have a connected union")
        object.__setattr__(self, "s", s)
        object.__setattr__(self, "t", t)

    @classmethod
    def from_pairs(cls, pairs) -> "IntervalCluster":
        arr = np.asarray(pairs, dtype=float).reshape(-1, 2)
        return cls(arr[:, 0], arr[:, 1])

    @property
    def n(self) -> int:
        return self.s.size

    @property
    def start(self) -> float:
        return float(self.s[0])

    @property
    def end(self) -> float:
        return float(self.t.max())

    @property
    def length(self) -> float:
        """|J|, the active time sigma*."""
        return self.end - self.start

    @property
    def lifetimes(self) -> np.ndarray:
        return self.t - self.s

    def breakpoints(self) -> np.ndarray:
        return np.unique(np.concatenate([self.s, self.t]))

    def pieces(self) -> np.ndarray:
        """Lengths of the elementary subintervals between breakpoints."""
        return np.diff(self.breakpoints())

    def incidence(self) -> np.ndarray:
        """A[i, j] = 1 iff elementary piece j lies inside interval i."""
        bp = self.breakpoints()
        left, right = bp[:-1], bp[1:]
        return ((self.s[:, None] <= left[None, :]) & (right[None, :] <= self.t[:, None])).astype(float)

    def shifted(self, offset: float) -> "IntervalCluster":
        return IntervalCluster(self.s + offset, self.t + offset)

    def to_dict(self) -> dict:
        return {"s": [float(v) for v in self.s], "t": [float(v) for v in self.t]}


def decompose_clusters(intervals, window: tuple[float, float] | None = None):
    """Split intervals into clusters with connected unions and the gaps between.

    Touching intervals ([0, 1] and [1, 2]) belong to the same cluster.  With
    ``window = (lo, hi)`` the boundary gaps are included, so there is one
    more gap than clusters; otherwise only the inner gaps are returned.
    """
    arr = np.asarray(intervals, dtype=float).reshape(-1, 2)
    arr = arr[np.argsort(arr[:, 0], kind="stable")]
    clusters: list[IntervalCluster] = []
    groups: list[list[int]] = []
    reach = -math.inf
    for i, (s, t) in enumerate(arr):
        if groups and s <= reach:
            groups[-1].append(i)
            reach = max(reach, t)
        else:
            groups.append([i])
            reach = t
    for g in groups:
        clusters.append(IntervalCluster(arr[g, 0], arr[g, 1]))
    gaps = [clusters[k + 1].start - clusters[k].end for k in range(len(clusters) - 1)]
    if window is not None:
        lo, hi = window
        if not clusters:
            return [hi - lo], []
        gaps = [clusters[0].start - lo] + gaps + [hi - clusters[-1].end]
    return gaps, clusters


@dataclass(frozen=True, eq=False)
class OverlapMatrix:
    C: np.ndarray
    A: np.ndarray
    pieces: np.ndarray


def overlap_matrix(cluster: IntervalCluster, check: bool = True) -> OverlapMatrix:
    """C[i, j] = |[s_i, t_i] cap [s_j, t_j]|, together with A and the pieces.

    ``C = A diag(pieces) A^T`` is verified to 1e-12 when ``check`` is set.
    """
    s, t = cluster.s, cluster.t
    C = np.maximum(0.0, np.minimum(t[:, None], t[None, :]) - np.maximum(s[:, None], s[None, :]))
    A = cluster.incidence()
    ell = cluster.pieces()
    if check:
        rebuilt = (A * ell) @ A.T
        scale = max(1.0, float(np.abs(C).max()))
        if np.abs(rebuilt - C).max() > 1e-12 * scale:
            raise NumericalError("overlap matrix does not factor through the incidence matrix")
    return OverlapMatrix(C, A, ell)


def _overlaps(s: np.ndarray, t: np.ndarray) -> np.ndarray:
    return np.maximum(0.0, np.minimum(t[:, None], t[None, :]) - np.maximum(s[:, None], s[None, :]))


def _scaled_overlap(C: np.ndarray, u: np.ndarray) -> np.ndarray:
    """I + D^{1/2} C D^{1/2} with D = diag(u^2); same determinant as I + C D."""
    M = u[:, None] * C * u[None, :]
    M[np.diag_indices_from(M)] += 1.0
    return M


def _logdet_pd(M: np.ndarray) -> float:
    try:
        L = linalg.cholesky(M, lower=True, check_finite=True)
    except (linalg.LinAlgError, ValueError) as exc:
        raise NumericalError(f"factorization failed: {exc}") from exc
    return 2.0 * float(np.log(np.diag(L)).sum())


def log_gaussian_normalizer(cluster: IntervalCluster, u) -> float:
    u = np.asarray(u, dtype=float)
    if u.shape != (cluster.n,):
        raise ConfigurationError(f"u has shape {u.shape}, cluster has {cluster.n} intervals")
    if np.any(u < 0) or not np.all(np.isfinite(u)):
        raise ConfigurationError("u must be finite and non-negative")
    C = _overlaps(cluster.s, cluster.t)
    value = -1.5 * _logdet_pd(_scaled_overlap(C, u))
    if not math.isfinite(value):
        raise NumericalError("non-finite Gaussian normalizer")
    return value


def gaussian_normalizer(cluster: IntervalCluster, u) -> float:
    """Phi = E exp(-1/2 sum u_i^2 |w(t_i) - w(s_i)|^2) = det(I + C diag(u^2))^{-3/2}."""
    return math.exp(log_gaussian_normalizer(cluster, u))


# ---------------------------------------------------------------------------
# The u-integral F


@dataclass(frozen=True)
class Estimate:
    value: float
    stderr: float

    def as_dict(self) -> dict:
        return {"value": self.value, "stderr": self.stderr}


def single_interval_u_cdf(u, ell: float):
    """CDF of the density sqrt(ell) (1 + ell u^2)^{-3/2} on (0, inf)."""
    u = np.asarray(u, dtype=float)
    return u * math.sqrt(ell) / np.sqrt(1.0 + ell * u * u)


def sample_single_interval_u(ell, rng: np.random.Generator, size=None):
    """Inverse-CDF draws from sqrt(ell) (1 + ell u^2)^{-3/2}."""
    ell = np.asarray(ell, dtype=float)
    p = rng.random(ell.shape if size is None else size)
    return p / np.sqrt(ell * (1.0 - p * p))


def _log_overlap_excess(C: np.ndarray, u: np.ndarray) -> float:
    """log Phi(u) - sum log (1 + ell_i u_i^2)^{-3/2} (>= 0 by Hadamard)."""
    diag = np.diag(C)
    return -1.5 * (_logdet_pd(_scaled_overlap(C, u)) - float(np.log1p(diag * u * u).sum()))


def cluster_weight_F(cluster: IntervalCluster, mode: str = "auto", n_max: int = 3,
                     n_samples: int = 20_000, rng: np.random.Generator | None = None,
                     epsrel: float = 1e-8) -> Estimate:
    """F = c0^n int_{(0, inf)^n} Phi(u) du.

    Parameters
    ----------
    mode : {"auto", "quad", "mc"}
        ``quad`` integrates iteratively after u = v / (1 - v) and is limited
        to ``n <= n_max``; ``mc`` samples u from the product of the
        single-interval marginals, which is exact for n = 1.  ``auto`` picks
        ``quad`` up to ``n_max``.
    """
    n = cluster.n
    if mode == "auto":
        mode = "quad" if n <= n_max else "mc"
    C = _overlaps(cluster.s, cluster.t)
    ell = np.diag(C).copy()
    if mode == "quad":
        if n > n_max:
            raise ModeError(f"quadrature mode handles n <= {n_max}, cluster has n = {n}")

        def integrand(*v):
            v = np.asarray(v)
            u = v / (1.0 - v)
            return math.exp(-1.5 * _logdet_pd(_scaled_overlap(C, u))) / float(np.prod((1.0 - v) ** 2))

        opts = {"epsabs": 0.0, "epsrel": epsrel, "limit": 200}
        value, err = integrate.nquad(integrand, [(0.0, 1.0)] * n, opts=[opts] * n)
        return Estimate(C0**n * value, C0**n * err)
    if mode != "mc":
        raise ModeError(f"unknown mode {mode!r}")
    prefactor = float(np.prod(np.sqrt(2.0 / (math.pi * ell))))
    if n == 1:
        return Estimate(prefactor, 0.0)
    rng = np.random.default_rng() if rng is None else rng
    ratios = np.empty(n_samples)
    for k in range(n_samples):
        ratios[k] = math.exp(_log_overlap_excess(C, sample_single_interval_u(ell, rng)))
    return Estimate(prefactor * float(ratios.mean()),
                    prefactor * float(ratios.std(ddof=1)) / math.sqrt(n_samples))


# ---------------------------------------------------------------------------
# Busy periods


def _busy_period(rng, birth_rates: np.ndarray, draw_lifetime: Callable[[], float],
                 cap: int = MAX_INDIVIDUALS):
    """Discrete-event busy period from one arrival at time 0.

    ``birth_rates[k]`` is the arrival rate while k individuals are alive
    (levels above the last entry share it).  Returns interval arrays and
    the time spent and births made at each level.
    """
    top = birth_rates.size - 1
    occupancy = np.zeros(top + 1)
    births = np.zeros(top + 1)
    first = draw_lifetime()
    s, t = [0.0], [first]
    deaths = [first]
    now = 0.0
    while deaths:
        level = min(len(deaths), top)
        arrival = now + rng.exponential(1.0 / birth_rates[level])
        if arrival < deaths[0]:
            occupancy[level] += arrival - now
            births[level] += 1
            now = arrival
            end = now + draw_lifetime()
            s.append(now)
            t.append(end)
            heapq.heappush(deaths, end)
            if len(s) > cap:
                raise TruncationError(
                    f"busy period exceeded {cap} individuals",
                    diagnostics={"individuals": len(s), "elapsed": now, "alive": len(deaths)})
        else:
            death = heapq.heappop(deaths)
            occupancy[level] += death - now
            now = death
    return np.array(s), np.array(t), occupancy, births


def sample_busy_period(alpha: float, rng: np.random.Generator,
                       cap: int = MAX_INDIVIDUALS) -> IntervalCluster:
    """Busy period of an M/M/inf queue: arrivals at rate alpha, Exp(1) lifetimes."""
    if not alpha > 0:
        raise ConfigurationError(f"alpha must be positive, got {alpha}")
    s, t, _, _ = _busy_period(rng, np.array([alpha, alpha]), lambda: rng.exponential(1.0), cap)
    return IntervalCluster(s, t)


# ---------------------------------------------------------------------------
# Importance sampling of the tilted cluster law


@dataclass
class ClusterProposal:
    """Proposal law for (cluster, u).

    Busy periods with level-dependent arrival rates ``rates[k]`` and
    Gamma(1/2, theta) lifetimes; given the cluster, each u_i is drawn from
    the single-interval marginal.  The Gamma(1/2) lifetimes cancel the
    1/sqrt(ell) singularity of F for short intervals, which makes the
    importance weights square integrable where the plain busy period law
    does not.
    """

    alpha: float
    rates: np.ndarray
    theta: float

    @classmethod
    def default(cls, alpha: float, lam: float) -> "ClusterProposal":
        theta = 1.0 / (1.0 + max(lam, 0.0))
        rate = alpha * math.sqrt(2.0 * theta)
        return cls(alpha, np.full(MAX_LEVEL + 1, rate), theta)

    def draw(self, rng: np.random.Generator, cap: int = MAX_INDIVIDUALS):
        theta = self.theta
        s, t, occ, births = _busy_period(rng, self.rates, lambda: rng.gamma(0.5, theta), cap)
        ell = t - s
        u = sample_single_interval_u(ell, rng)
        alpha = self.alpha
        log_w = (float(births @ np.log(alpha / self.rates)) - float(occ @ (alpha - self.rates))
                 + 0.5 * s.size * math.log(2.0 * theta) + (1.0 / theta - 1.0) * float(ell.sum()))
        if s.size > 1:
            log_w += _log_overlap_excess(_overlaps(s, t), u)
        return s, t, u, log_w, occ, births

    def to_dict(self) -> dict:
        return {"alpha": self.alpha, "rates": [float(r) for r in self.rates], "theta": self.theta}


@dataclass
class ClusterEnsemble:
    """Weighted draws of (cluster, u) shared across lambda.

    The weight of draw i at tilt lambda is

        alpha / (alpha + lambda) * exp(-lambda |J_i| + log_w[i]),

    an unbiased estimate of q(lambda) whose mean over i is the estimator.
    """

    alpha: float
    lengths: np.ndarray
    sizes: np.ndarray
    log_w: np.ndarray
    clusters: list
    us: list
    proposal: ClusterProposal | None = None

    @property
    def size(self) -> int:
        return self.lengths.size

    def log_weights(self, lam: float) -> np.ndarray:
        return math.log(self.alpha / (self.alpha + lam)) - lam * self.lengths + self.log_w

    def weights(self, lam: float) -> np.ndarray:
        return np.exp(self.log_weights(lam))

    def q(self, lam: float) -> Estimate:
        w = self.weights(lam)
        return Estimate(float(w.mean()), float(w.std(ddof=1)) / math.sqrt(w.size))

    def q_slope(self, lam: float) -> float:
        """d q / d lambda at fixed samples."""
        w = self.weights(lam)
        return -float((w * (self.lengths + 1.0 / (self.alpha + lam))).mean())

    def diagnostics(self, lam: float) -> dict:
        w = self.weights(lam)
        total = w.sum()
        top = max(1, int(math.ceil(0.01 * w.size)))
        share = float(np.sort(w)[-top:].sum() / total)
        return {"ess": float(total**2 / (w * w).sum()), "top1_share": share,
                "max_share": float(w.max() / total), "n": int(w.size)}

    def resample(self, lam: float, rng: np.random.Generator, size: int) -> np.ndarray:
        w = self.weights(lam)
        return rng.choice(w.size, size=size, p=w / w.sum())


def draw_ensemble(proposal: ClusterProposal, n_clusters: int, rng: np.random.Generator,
                  keep: bool = True) -> ClusterEnsemble:
    lengths = np.empty(n_clusters)
    sizes = np.empty(n_clusters, dtype=int)
    log_w = np.empty(n_clusters)
    clusters, us = [], []
    for i in range(n_clusters):
        s, t, u, lw, _, _ = proposal.draw(rng)
        lengths[i] = t.max()
        sizes[i] = s.size
        log_w[i] = lw
        if keep:
            clusters.append((s, t))
            us.append(u)
    return ClusterEnsemble(proposal.alpha, lengths, sizes, log_w, clusters, us, proposal)


def adapt_proposal(alpha: float, lam: float, rng: np.random.Generator, n_per_iter: int = 2000,
                   iterations: int = 6, damping: float = 0.5,
                   start: ClusterProposal | None = None) -> ClusterProposal:
    """Cross-entropy fit of the level rates and lifetime scale at tilt lam.

    Each round reweights its draws to the tilted law and moves the
    proposal halfway towards the weighted maximum-likelihood parameters:
    births per unit occupancy at each level, and theta = 2 E[ell] for
    the Gamma(1/2, theta) lifetimes.
    """
    prop = ClusterProposal.default(alpha, lam) if start is None else start
    for _ in range(iterations):
        occ_w = np.zeros(MAX_LEVEL + 1)
        births_w = np.zeros(MAX_LEVEL + 1)
        log_ws, ell_sums, sizes = [], [], []
        records = []
        for _ in range(n_per_iter):
            s, t, _, lw, occ, births = prop.draw(rng)
            log_ws.append(math.log(alpha / (alpha + lam)) - lam * t.max() + lw)
            ell_sums.append(float((t - s).sum()))
            sizes.append(s.size)
            records.append((occ, births))
        log_ws = np.array(log_ws)
        w = np.exp(log_ws - log_ws.max())
        w /= w.sum()
        for wi, (occ, births) in zip(w, records):
            occ_w += wi * occ
            births_w += wi * births
        # levels the weighted sample never reached keep their current rate
        seen = occ_w > 1e-12 * occ_w.sum()
        fitted = np.where(seen, births_w / np.where(seen, occ_w, 1.0), prop.rates)
        fitted = np.clip(fitted, alpha / 10.0, alpha * 10.0)
        rates = (1 - damping) * prop.rates + damping * fitted
        theta_fit = 2.0 * float(w @ np.array(ell_sums)) / float(w @ np.array(sizes))
        theta = (1 - damping) * prop.theta + damping * min(max(theta_fit, 0.05), 5.0)
        prop = ClusterProposal(alpha, rates, theta)
    return prop


def _direct_ensemble(alpha: float, n_clusters: int, rng: np.random.Generator) -> ClusterEnsemble:
    """Plain busy periods with a one-draw u estimate of F for each.

    Unbiased, but the weights have infinite variance: F grows like
    ell^{-1/2} for short single intervals.
    """
    lengths = np.empty(n_clusters)
    sizes = np.empty(n_clusters, dtype=int)
    log_w = np.empty(n_clusters)
    clusters, us = [], []
    for i in range(n_clusters):
        c = sample_busy_period(alpha, rng)
        ell = c.lifetimes
        u = sample_single_interval_u(ell, rng)
        lw = float(np.log(np.sqrt(2.0 / (math.pi * ell))).sum())
        if c.n > 1:
            lw += _log_overlap_excess(_overlaps(c.s, c.t), u)
        lengths[i], sizes[i], log_w[i] = c.length, c.n, lw
        clusters.append((c.s, c.t))
        us.append(u)
    return ClusterEnsemble(alpha, lengths, sizes, log_w, clusters, us, None)


@dataclass
class QEstimate:
    lam: float
    q: float
    stderr: float
    diagnostics: dict
    ensemble: ClusterEnsemble

    @property
    def heavy_tailed(self) -> bool:
        return self.diagnostics["top1_share"] > 0.5


def q_lambda(alpha: float, lam: float, n_clusters: int, rng: np.random.Generator,
             method: str = "importance", proposal: ClusterProposal | None = None) -> QEstimate:
    """Estimate q(lam) = (alpha / (alpha + lam)) E[e^{-lam |J|} F] over busy periods.

    ``method="importance"`` draws from a ``ClusterProposal`` (adapted at
    ``lam`` unless one is given); ``method="direct"`` uses plain busy
    periods.  A ``HeavyTailWarning`` is issued when the top 1% of the
    weights carries more than half of their sum.
    """
    if not (alpha > 0 and lam > -alpha):
        raise ConfigurationError("need alpha > 0 and lam > -alpha")
    if method == "importance":
        if proposal is None:
            proposal = adapt_proposal(alpha, lam, rng)
        ens = draw_ensemble(proposal, n_clusters, rng)
    elif method == "direct":
        ens = _direct_ensemble(alpha, n_clusters, rng)
    else:
        raise ModeError(f"unknown method {method!r}")
    est = ens.q(lam)
    diag = ens.diagnostics(lam)
    out = QEstimate(lam, est.value, est.stderr, diag, ens)
    if out.heavy_tailed:
        warnings.warn(f"q({lam}) weights are heavy tailed: top 1% carries "
                      f"{diag['top1_share']:.0%} of the sum", HeavyTailWarning, stacklevel=2)
    return out


def single_interval_q(alpha: float, lam: float) -> float:
    """Contribution of clusters made of one interval to q(lam).

    A lone interval of length ell occurs with density e^{-ell} e^{-alpha ell}
    and carries F = sqrt(2 / (pi ell)), so the integral is
    sqrt(2) alpha / ((alpha + lam) sqrt(1 + alpha + lam)).
    """
    return math.sqrt(2.0) * alpha / ((alpha + lam) * math.sqrt(1.0 + alpha + lam))


def lambda_lower_bound(alpha: float) -> float:
    """Rigorous lower bound on lambda*(alpha).

    The free energy per unit time alpha + lambda* dominates the Jensen
    value sqrt(2) alpha (the mean interaction under Brownian motion) and
    the Gaussian Pekar trial value 2 alpha^2 / (3 pi).
    """
    return max((math.sqrt(2.0) - 1.0) * alpha, PEKAR_TRIAL * alpha**2 - alpha)


@dataclass
class LambdaSolution:
    alpha: float
    lam: float
    stderr: float
    q: Estimate
    table: list
    ensemble: ClusterEnsemble
    diagnostics: dict = field(default_factory=dict)

    def summary(self) -> dict:
        return {"alpha": self.alpha, "lambda": self.lam, "lambda_stderr": self.stderr,
                "q": self.q.value, "q_stderr": self.q.stderr,
                "diagnostics": self.diagnostics,
                "proposal": None if self.ensemble.proposal is None else self.ensemble.proposal.to_dict()}

    def table_csv(self) -> str:
        return q_table_csv(self.table)


def q_table_csv(rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["lambda", "q", "stderr"])
    for lam, q, se in sorted(rows):
        writer.writerow([repr(float(lam)), repr(float(q)), repr(float(se))])
    return buf.getvalue()


def _bisect(ens: ClusterEnsemble, lo: float, hi: float, tol: float, table: list) -> float:
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        est = ens.q(mid)
        table.append((mid, est.value, est.stderr))
        if est.value > 1.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _expand_upper(ens: ClusterEnsemble, lo: float, alpha: float, table: list,
                  max_doublings: int = 40) -> float:
    step = max(0.25 * alpha, 0.1)
    hi = lo + step
    for _ in range(max_doublings):
        est = ens.q(hi)
        table.append((hi, est.value, est.stderr))
        if est.value < 1.0:
            return hi
        step *= 2.0
        hi = lo + step
    raise RootNotFoundError("q stays above 1 for every lambda tried", table=sorted(table))


def solve_lambda(alpha: float, rng: np.random.Generator, bracket: Sequence[float] | None = None,
                 tol: float = 1e-3, n_clusters: int = 20_000, n_pilot: int = 4000,
                 adapt_iterations: int = 6) -> LambdaSolution:
    """Root of q(lambda) = 1 by bisection with common random numbers.

    One weighted cluster ensemble is reused for every lambda, so the
    estimated q-curve is exactly monotone and the bisection is
    deterministic given the ensemble.  A pilot ensemble adapted at the
    lower end of the bracket locates the root; the final ensemble is
    adapted at the pilot root.

    The default bracket starts at ``lambda_lower_bound(alpha)``; either end
    of ``bracket`` may be None to keep its default.  If the
    estimated q is already below 1 there, the estimator contradicts a
    rigorous bound: the clusters that carry the tilted law are beyond the
    reach of the proposal, and the root is reported as not found.

    Raises
    ------
    RootNotFoundError
        When q - 1 does not change sign on the bracket; ``table`` holds
        the evaluated (lambda, q, stderr) rows.
    """
    if not alpha > 0:
        raise ConfigurationError(f"alpha must be positive, got {alpha}")
    if not tol > 0:
        raise ConfigurationError(f"tol must be positive, got {tol}")
    lower = lambda_lower_bound(alpha)
    lo, hi_user = (None, None) if bracket is None else bracket
    lo = lower if lo is None else float(lo)
    hi_user = None if hi_user is None else float(hi_user)
    if hi_user is not None and not hi_user > lo:
        raise ConfigurationError(f"bracket must be increasing, got {bracket}")

    table: list = []
    proposal = adapt_proposal(alpha, lo, rng, n_per_iter=max(500, n_pilot // 2),
                              iterations=adapt_iterations)
    pilot = draw_ensemble(proposal, n_pilot, rng, keep=False)
    q_lo = pilot.q(lo)
    table.append((lo, q_lo.value, q_lo.stderr))
    if q_lo.value <= 1.0:
        raise RootNotFoundError(
            f"estimated q({lo:.6g}) = {q_lo.value:.4g} <= 1 at the lower end of the bracket "
            f"(alpha = {alpha})", table=sorted(table))
    hi = _expand_upper(pilot, lo, alpha, table) if hi_user is None else hi_user
    guess = _bisect(pilot, lo, hi, max(tol, 1e-3 * (hi - lo)), [])

    proposal = adapt_proposal(alpha, guess, rng, n_per_iter=max(500, n_pilot // 2),
                              iterations=max(2, adapt_iterations // 2), start=proposal)
    ens = draw_ensemble(proposal, n_clusters, rng)
    final_table: list = []
    for end in (lo, hi):
        est = ens.q(end)
        final_table.append((end, est.value, est.stderr))
    if not final_table[0][1] > 1.0 > final_table[1][1]:
        raise RootNotFoundError(
            f"q - 1 has no sign change on [{lo:.6g}, {hi:.6g}] (alpha = {alpha})",
            table=sorted(final_table))
    root = _bisect(ens, lo, hi, tol, final_table)
    q_root = ens.q(root)
    final_table.append((root, q_root.value, q_root.stderr))
    slope = ens.q_slope(root)
    stderr = q_root.stderr / abs(slope) if slope != 0 else math.inf
    diag = ens.diagnostics(root)
    diag["lower_bound"] = lower
    if diag["top1_share"] > 0.5:
        warnings.warn(f"tilted weights at lambda* = {root:.4g} are heavy tailed",
                      HeavyTailWarning, stacklevel=2)
    return LambdaSolution(alpha, root, stderr, q_root, sorted(final_table), ens, diag)


# ---------------------------------------------------------------------------
# Tilted clusters and their Gaussian path laws


def sample_u_given_cluster(cluster: IntervalCluster, rng: np.random.Generator,
                           sweeps: int | None = None, u0=None) -> np.ndarray:
    """Draw u from the density proportional to Phi(cluster, u).

    Coordinate-wise Metropolis: each u_i is proposed afresh from its
    single-interval marginal, so the acceptance ratio only involves the
    overlap correction and a one-interval cluster is sampled exactly.
    Starts at the single-interval medians 1 / sqrt(3 ell_i) and runs
    10 n sweeps by default.
    """
    C = _overlaps(cluster.s, cluster.t)
    ell = np.diag(C).copy()
    n = cluster.n
    u = 1.0 / np.sqrt(3.0 * ell) if u0 is None else np.array(u0, dtype=float)
    sweeps = 10 * n if sweeps is None else sweeps
    if n == 1:
        return sample_single_interval_u(ell, rng)
    current = _log_overlap_excess(C, u)
    for _ in range(sweeps):
        for i in range(n):
            old = u[i]
            u[i] = sample_single_interval_u(ell[i], rng)
            cand = _log_overlap_excess(C, u)
            if math.log(rng.random()) < cand - current:
                current = cand
            else:
                u[i] = old
    return u


@dataclass
class TiltedDraw:
    cluster: IntervalCluster
    u: np.ndarray
    acceptance: float
    bound: float
    bound_violations: int


def sample_tilted_cluster(alpha: float, lam: float, rng: np.random.Generator,
                          weight: Callable[[IntervalCluster, np.random.Generator], float] | None = None,
                          pilot: int = 200, max_proposals: int = 10**5,
                          min_acceptance: float = 1e-4, u_sampler=None) -> TiltedDraw:
    """Rejection sampler for the tilted cluster law.

    Busy periods are accepted with probability e^{-lam |J|} F / M.  F may
    be replaced by any unbiased estimate (the default draws one u from the
    single-interval product law), which leaves the accepted law unchanged
    as long as the estimate stays below M.  M starts at 1.5 times the
    largest value in a pilot run and grows whenever a larger value shows
    up; such violations are counted on the result.  u given the cluster
    comes from ``sample_u_given_cluster`` unless ``u_sampler`` is given.
    """
    if weight is None:
        def weight(cluster, rng):
            ell = cluster.lifetimes
            value = float(np.prod(np.sqrt(2.0 / (math.pi * ell))))
            if cluster.n > 1:
                u = sample_single_interval_u(ell, rng)
                value *= math.exp(_log_overlap_excess(_overlaps(cluster.s, cluster.t), u))
            return value
    u_sampler = sample_u_given_cluster if u_sampler is None else u_sampler

    def tilted(c):
        return math.exp(-lam * c.length) * weight(c, rng)

    bound = 1.5 * max(tilted(sample_busy_period(alpha, rng)) for _ in range(pilot))
    if not bound > 0:
        raise EfficiencyError("pilot weights are all zero")
    violations = 0
    for tries in range(1, max_proposals + 1):
        c = sample_busy_period(alpha, rng)
        value = tilted(c)
        if value > bound:
            violations += 1
            bound = 1.5 * value
        if rng.random() * bound < value:
            return TiltedDraw(c, u_sampler(c, rng), 1.0 / tries, bound, violations)
        if tries >= 1000 and 1.0 / tries < min_acceptance:
            break
    raise EfficiencyError(
        f"rejection acceptance fell below {min_acceptance:g}; use the importance-sampling ensemble")


def _bridge_precision(cluster: IntervalCluster, u: np.ndarray):
    A = cluster.incidence()
    ell = cluster.pieces()
    Lam = (A.T * (u * u)) @ A
    Lam[np.diag_indices_from(Lam)] += 1.0 / ell
    return Lam, A, ell


def gaussian_bridge_increments(cluster: IntervalCluster, u, rng: np.random.Generator) -> np.ndarray:
    """Increments over the elementary pieces under the Gaussian cluster law.

    Per coordinate the increments have density proportional to
    exp(-x^T Lam x / 2) with Lam = diag(1/ell) + A^T diag(u^2) A; the three
    coordinates are independent.  Returns shape (m, 3).
    """
    u = np.asarray(u, dtype=float)
    Lam, _, _ = _bridge_precision(cluster, u)
    try:
        L = linalg.cholesky(Lam, lower=True)
    except linalg.LinAlgError as exc:
        raise NumericalError(f"bridge precision is not positive definite: {exc}") from exc
    z = rng.standard_normal((Lam.shape[0], 3))
    return linalg.solve_triangular(L.T, z, lower=False)


def bridge_log_det(cluster: IntervalCluster, u) -> tuple[float, float]:
    """(log det(I + C diag(u^2)), log det(Lam) + sum log ell); equal in exact arithmetic."""
    u = np.asarray(u, dtype=float)
    C = _overlaps(cluster.s, cluster.t)
    Lam, _, ell = _bridge_precision(cluster, u)
    return _logdet_pd(_scaled_overlap(C, u)), _logdet_pd(Lam) + float(np.log(ell).sum())


def _end_to_end_variance(s: np.ndarray, t: np.ndarray, u: np.ndarray) -> float:
    # Woodbury: 1^T Lam^{-1} 1 = sigma* - q^T (I + D^1/2 C D^1/2)^{-1} q, q = D^1/2 (t - s)
    C = _overlaps(s, t)
    q = u * (t - s)
    L = linalg.cholesky(_scaled_overlap(C, u), lower=True)
    y = linalg.solve_triangular(L, q, lower=True)
    return float(t.max() - s.min()) - float(y @ y)


def cluster_end_to_end_variance(cluster: IntervalCluster, u) -> float:
    """Per-coordinate variance of w(end of J) - w(start of J) under the cluster law.

    Computed as |J| minus a non-negative quadratic form, so the result
    never exceeds |J|.
    """
    u = np.asarray(u, dtype=float)
    try:
        return _end_to_end_variance(cluster.s, cluster.t, u)
    except linalg.LinAlgError as exc:
        raise NumericalError(f"cluster covariance factorization failed: {exc}") from exc


@dataclass
class Sigma2Estimate:
    value: float
    stderr: float
    dormant_fraction: float
    mean_active: float
    mean_active_variance: float

    def summary(self) -> dict:
        return {"sigma2": self.value, "sigma2_stderr": self.stderr,
                "dormant_fraction": self.dormant_fraction, "mean_active": self.mean_active,
                "mean_active_variance": self.mean_active_variance}


def sigma2(solution: LambdaSolution, variance_override: Callable | None = None) -> Sigma2Estimate:
    """Renewal-reward ratio for the variance per unit time.

        sigma^2 = [(alpha+lam)^{-1} + E v(xi, u)] / [(alpha+lam)^{-1} + E |J|]

    with expectations under the tilted cluster law, estimated by
    self-normalized importance weights on the solution's ensemble.  The
    stderr is the delta-method error of the ratio of means and does not
    include the uncertainty of lambda* itself.
    """
    ens = solution.ensemble
    lam = solution.lam
    w = ens.weights(lam)
    w = w / w.mean()
    if variance_override is None:
        v = np.array([_end_to_end_variance(s, t, u) for (s, t), u in zip(ens.clusters, ens.us)])
    else:
        v = np.array([variance_override(s, t, u) for (s, t), u in zip(ens.clusters, ens.us)])
    return _renewal_ratio(1.0 / (ens.alpha + lam), w, v, ens.lengths)


def _renewal_ratio(dormant: float, w: np.ndarray, v: np.ndarray, lengths: np.ndarray) -> Sigma2Estimate:
    x = w * (dormant + v)
    y = w * (dormant + lengths)
    ratio = float(x.mean() / y.mean())
    resid = x - ratio * y
    stderr = float(resid.std(ddof=1) / (math.sqrt(w.size) * y.mean()))
    mean_active = float((w * lengths).mean() / w.mean())
    return Sigma2Estimate(ratio, stderr, dormant / (dormant + mean_active), mean_active,
                          float((w * v).mean() / w.mean()))


# ---------------------------------------------------------------------------
# Stationary path assembly


@dataclass
class MixingConfiguration:
    """Alternating dormant gaps and clusters covering [0, horizon].

    Cluster intervals are stored in absolute time.
    """

    horizon: float
    gaps: list
    clusters: list
    us: list

    def to_json(self) -> str:
        payload = {
            "horizon": self.horizon,
            "gaps": [float(g) for g in self.gaps],
            "clusters": [c.to_dict() for c in self.clusters],
            "u": [[float(x) for x in u] for u in self.us],
        }
        return json.dumps(payload, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "MixingConfiguration":
        data = json.loads(text)
        clusters = [IntervalCluster(c["s"], c["t"]) for c in data["clusters"]]
        return cls(data["horizon"], data["gaps"], clusters, [np.array(u) for u in data["u"]])

    def dormant_time(self) -> float:
        """Time in [0, horizon] not covered by a cluster."""
        covered = sum(max(0.0, min(c.end, self.horizon) - c.start) for c in self.clusters)
        return self.horizon - covered


def ensemble_source(solution: LambdaSolution) -> Callable:
    """Tilted (cluster, u) draws by weighted resampling of the solution's ensemble."""
    ens = solution.ensemble
    w = ens.weights(solution.lam)
    p = w / w.sum()

    def draw(rng):
        i = int(rng.choice(p.size, p=p))
        s, t = ens.clusters[i]
        return IntervalCluster(s, t), ens.us[i]

    return draw


@dataclass
class StationaryPolaron:
    configuration: MixingConfiguration
    dt: float
    positions: np.ndarray

    @property
    def increments(self) -> np.ndarray:
        return np.diff(self.positions, axis=0)


def assemble_stationary_polaron(alpha: float, lam: float, horizon: float, rng: np.random.Generator,
                                source: Callable | None = None, solution: LambdaSolution | None = None,
                                dt: float = 0.01) -> StationaryPolaron:
    """Renewal path on [0, horizon] with positions every ``dt``.

    Dormant gaps are Exp(alpha + lam) and carry Brownian motion; clusters
    come from ``source(rng) -> (IntervalCluster, u)`` (by default the
    resampled ensemble of ``solution``) and carry their Gaussian increments.
    Between breakpoints the path is filled in by Brownian bridges.
    """
    if not horizon > 0 or not dt > 0:
        raise ConfigurationError("horizon and dt must be positive")
    if source is None:
        if solution is None:
            raise ConfigurationError("need a cluster source or a LambdaSolution")
        source = ensemble_source(solution)
    rate = alpha + lam
    gaps, clusters, us = [], [], []
    knots = [0.0]
    jumps = []
    now = 0.0
    while now < horizon:
        gap = rng.exponential(1.0 / rate)
        gaps.append(gap)
        knots.append(now + gap)
        jumps.append(math.sqrt(gap) * rng.standard_normal(3))
        now += gap
        if now >= horizon:
            break
        cluster, u = source(rng)
        cluster = cluster.shifted(now - cluster.start)
        clusters.append(cluster)
        us.append(np.asarray(u, dtype=float))
        inc = gaussian_bridge_increments(cluster, u, rng)
        bp = cluster.breakpoints()
        knots.extend(bp[1:])
        jumps.extend(inc)
        now = cluster.end
    knots = np.array(knots)
    knot_pos = np.vstack([np.zeros(3), np.cumsum(np.array(jumps), axis=0)])
    grid = np.arange(int(math.floor(horizon / dt + 1e-9)) + 1) * dt
    positions = _bridge_fill(knots, knot_pos, grid, rng)
    config = MixingConfiguration(horizon, gaps, clusters, us)
    return StationaryPolaron(config, dt, positions)


def _bridge_fill(knots: np.ndarray, knot_pos: np.ndarray, grid: np.ndarray,
                 rng: np.random.Generator) -> np.ndarray:
    """Brownian bridges between pinned knots, evaluated on ``grid``."""
    times = np.union1d(knots, grid)
    w = np.vstack([np.zeros(3), np.cumsum(np.sqrt(np.diff(times))[:, None]
                                           * rng.standard_normal((times.size - 1, 3)), axis=0)])
    seg = np.clip(np.searchsorted(knots, times, side="right") - 1, 0, knots.size - 2)
    a, b = knots[seg], knots[seg + 1]
    wa = w[np.searchsorted(times, a)]
    wb = w[np.searchsorted(times, b)]
    frac = ((times - a) / (b - a))[:, None]
    path = knot_pos[seg] + frac * (knot_pos[seg + 1] - knot_pos[seg]) + (w - wa) - frac * (wb - wa)
    return path[np.searchsorted(times, grid)]
