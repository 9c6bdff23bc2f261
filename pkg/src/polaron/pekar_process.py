"""Euler-Maruyama sampler for the stationary Pekar diffusion.

The process solves dX = dW + b(|X|) X/|X| dt with b = psi'/psi, whose
invariant density is psi^2.  Chains are simulated as a batch: every array
below has a leading replica axis, and a single chain is the batch of one.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from .errors import ConfigurationError, InsufficientSampleError, NumericalError
from .pekar import RadialProfile

DRIFT_GUARD = 1e-8


@dataclass
class PathSample:
    """Positions of one or more chains on a uniform time grid.

    ``positions`` has shape (n_chains, n + 1, 3).
    """

    dt: float
    positions: np.ndarray

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float)
        if pos.ndim == 2:
            pos = pos[None]
        if pos.ndim != 3 or pos.shape[-1] != 3:
            raise ConfigurationError(f"positions must have shape (chains, n+1, 3), got {pos.shape}")
        if pos.shape[1] < 2:
            raise ConfigurationError("a path sample needs at least one step")
        if not self.dt > 0:
            raise ConfigurationError(f"dt must be positive, got {self.dt}")
        if not np.all(np.isfinite(pos)):
            raise NumericalError("path sample contains non-finite coordinates")
        self.positions = pos

    @property
    def n_steps(self) -> int:
        return self.positions.shape[1] - 1

    @property
    def n_chains(self) -> int:
        return self.positions.shape[0]

    def split(self) -> tuple["PathSample", "PathSample"]:
        """First and second halves in time (sharing the midpoint)."""
        mid = self.n_steps // 2
        return (PathSample(self.dt, self.positions[:, : mid + 1]),
                PathSample(self.dt, self.positions[:, mid:]))


@dataclass
class IncrementLaw:
    lag: float
    increments: np.ndarray

    @property
    def n(self) -> int:
        return len(self.increments)

    def variances(self) -> np.ndarray:
        return self.increments.var(axis=0, ddof=1)

    def variance_stderr(self) -> np.ndarray:
        """Standard error of each coordinate variance (i.i.d. formula)."""
        x = self.increments - self.increments.mean(axis=0)
        return (x**2).std(axis=0, ddof=1) / math.sqrt(self.n)

    def covariance(self) -> np.ndarray:
        return np.cov(self.increments, rowvar=False)

    def radial_histogram(self, bins: int = 30):
        radius = np.linalg.norm(self.increments, axis=1)
        return np.histogram(radius, bins=bins, range=(0.0, float(radius.max()) * (1 + 1e-12)))

    def summary(self) -> dict:
        v = self.variances()
        return {"lag": float(self.lag), "var_x": float(v[0]), "var_y": float(v[1]),
                "var_z": float(v[2]), "n": int(self.n)}

    def summary_json(self) -> str:
        return json.dumps(self.summary(), indent=2, sort_keys=True) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["lag", "dx", "dy", "dz"])
        lag = repr(float(self.lag))
        for dx, dy, dz in self.increments:
            writer.writerow([lag, repr(float(dx)), repr(float(dy)), repr(float(dz))])
        return buf.getvalue()


def _radial_cdf(profile: RadialProfile) -> tuple[np.ndarray, np.ndarray]:
    r = profile.grid.r
    cdf = integrate.cumulative_trapezoid(profile.density(), r, initial=0.0)
    return r, cdf / cdf[-1]


def _inverse_cdf(r: np.ndarray, cdf: np.ndarray, u) -> np.ndarray:
    """Piecewise-linear quantile: the cell with cdf[k-1] < u <= cdf[k] is never flat."""
    u = np.asarray(u, dtype=float)
    k = np.clip(np.searchsorted(cdf, u, side="left"), 1, len(cdf) - 1)
    lo, hi = cdf[k - 1], cdf[k]
    frac = np.where(hi > lo, (u - lo) / np.where(hi > lo, hi - lo, 1.0), 1.0)
    return r[k - 1] + np.clip(frac, 0.0, 1.0) * (r[k] - r[k - 1])


def _uniform_directions(rng: np.random.Generator, size: int) -> np.ndarray:
    z = rng.standard_normal((size, 3))
    return z / np.linalg.norm(z, axis=1, keepdims=True)


def sample_stationary_start(profile: RadialProfile, rng: np.random.Generator,
                            size: int | None = None) -> np.ndarray:
    """Draw from the density psi^2 by inverse CDF on the radius.

    Returns one point of shape (3,) or, with ``size``, an array (size, 3).
    """
    r, cdf = _radial_cdf(profile)
    n = 1 if size is None else int(size)
    radius = _inverse_cdf(r, cdf, rng.random(n))
    points = radius[:, None] * _uniform_directions(rng, n)
    return points[0] if size is None else points


def _drift_step(drift, x: np.ndarray) -> np.ndarray:
    radius = np.linalg.norm(x, axis=-1)
    safe = np.where(radius < DRIFT_GUARD, 1.0, radius)
    scale = np.where(radius < DRIFT_GUARD, 0.0, drift(radius) / safe)
    return scale[..., None] * x


def euler_maruyama(drift, x0, dt: float, n_steps: int, rng: np.random.Generator,
                   record_every: int = 1, burn_in: int = 0) -> PathSample:
    """Euler-Maruyama for dX = dW + b(|X|) X/|X| dt.

    Parameters
    ----------
    drift : callable
        Radial drift b(r), vectorized over arrays of radii.
    x0 : array_like
        Start point (3,) or a batch of starts (n_chains, 3).
    dt : float
        Step size, at most 1e-2.
    n_steps : int
        Number of recorded steps after burn-in.
    record_every : int
        Keep every ``record_every``-th state; the returned sample has
        time step ``dt * record_every``.
    burn_in : int
        Steps simulated and discarded before recording starts.

    Raises
    ------
    NumericalError
        If a coordinate becomes non-finite; ``step`` holds the step index.
    """
    if not 0 < dt <= 1e-2:
        raise ConfigurationError(f"dt must lie in (0, 1e-2], got {dt}")
    if n_steps < 1 or record_every < 1 or burn_in < 0:
        raise ConfigurationError("n_steps and record_every must be >= 1, burn_in >= 0")
    x = np.array(x0, dtype=float)
    single = x.ndim == 1
    x = np.atleast_2d(x).copy()
    sqdt = math.sqrt(dt)
    out = np.empty((x.shape[0], n_steps + 1, 3))
    total = burn_in + n_steps * record_every
    k = 0
    for step in range(total + 1):
        if step >= burn_in and (step - burn_in) % record_every == 0:
            out[:, k] = x
            k += 1
        if step == total:
            break
        x += _drift_step(drift, x) * dt + sqdt * rng.standard_normal(x.shape)
        if not np.isfinite(x.sum()):
            raise NumericalError(f"Euler-Maruyama blew up at step {step + 1}", step=step + 1)
    return PathSample(dt * record_every, out[0] if single else out)


def zero_drift(radius):
    return np.zeros_like(np.asarray(radius, dtype=float))


def ou_drift(theta: float = 1.0):
    """b(r) = -theta r, the drift of a Gaussian profile with variance 1/(2 theta)."""
    return lambda radius: -theta * np.asarray(radius, dtype=float)


def increment_law(paths: PathSample, lag: float, stride: float | None = None,
                  min_samples: int = 100) -> IncrementLaw:
    """Collect X(k*stride + lag) - X(k*stride) over all chains.

    The stride defaults to 5 * lag, long enough for near-independent windows
    once the lag exceeds the decorrelation time.
    """
    steps = lag / paths.dt
    lag_steps = int(round(steps))
    if lag_steps < 1 or abs(steps - lag_steps) > 1e-9 * max(1.0, steps):
        raise ConfigurationError(f"lag {lag} is not a positive multiple of dt={paths.dt}")
    stride = 5.0 * lag if stride is None else stride
    stride_steps = max(1, int(round(stride / paths.dt)))
    starts = np.arange(0, paths.n_steps - lag_steps + 1, stride_steps)
    if starts.size * paths.n_chains < min_samples:
        raise InsufficientSampleError(
            f"only {starts.size * paths.n_chains} increments at lag {lag}, need {min_samples}")
    pos = paths.positions
    inc = pos[:, starts + lag_steps] - pos[:, starts]
    return IncrementLaw(lag=float(lag), increments=inc.reshape(-1, 3))


def _equal_mass_edges(profile: RadialProfile, bins: int) -> np.ndarray:
    r, cdf = _radial_cdf(profile)
    edges = _inverse_cdf(r, cdf, np.linspace(0.0, 1.0, bins + 1))
    edges[-1] = np.inf
    return edges


def invariant_density_check(paths: PathSample, profile: RadialProfile, bins: int = 20) -> float:
    """L1 distance between visited radii and the profile's radial law.

    Bins have equal mass under 4 pi r^2 psi^2, so each carries 1/bins of
    the reference probability; the last bin extends to infinity.
    """
    edges = _equal_mass_edges(profile, bins)
    radius = np.linalg.norm(paths.positions, axis=-1).ravel()
    counts, _ = np.histogram(radius, bins=edges)
    empirical = counts / radius.size
    return float(np.abs(empirical - 1.0 / bins).sum())


def stationary_run(profile: RadialProfile, drift, rng: np.random.Generator,
                   n_chains: int = 10_000, n_record: int = 100, record_every: int = 10,
                   dt: float = 1e-3, burn_in: int = 10_000) -> PathSample:
    """Batch of chains started from psi^2, burnt in, then recorded.

    The defaults record 10^6 states in total.
    """
    x0 = sample_stationary_start(profile, rng, size=n_chains)
    return euler_maruyama(drift, x0, dt, n_record, rng, record_every=record_every, burn_in=burn_in)
