"""Path-space MCMC for the discretized polaron measure.

The reference measure is Brownian motion on [-T, T], stored as M = 2T/delta
i.i.d. N(0, delta I_3) increments.  The target has density e^H with

    H = (beta/2) delta^2 sum_{k != l} eps e^{-eps |t_k - t_l|} V_eta(w(t_k) - w(t_l)),
    V_eta(x) = (eta^2 + |x|^2)^{-1/2},

summed over the M + 1 grid points.  Moves are preconditioned Crank-Nicolson
(pCN) proposals, which leave the reference invariant, so the acceptance
probability is min(1, exp(H' - H)).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numba
import numpy as np
from scipy import fft, integrate, optimize

from .errors import (
    ConfigurationError,
    InsufficientSampleError,
    MixingError,
    SingularityError,
    TruncationError,
)

TARGET_ACCEPTANCE = 0.25


@dataclass(frozen=True)
class PolaronParams:
    """Discretization of the polaron measure.

    ``delta`` defaults to min(0.01, 1 / (10 eps)).
    """

    epsilon: float
    T: float
    eta: float = 0.05
    delta: float | None = None
    beta: float = 1.0

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ConfigurationError(f"epsilon must be positive, got {self.epsilon}")
        if not self.T > 0:
            raise ConfigurationError(f"T must be positive, got {self.T}")
        if self.eta < 0:
            raise ConfigurationError(f"eta must be non-negative, got {self.eta}")
        if not 0 <= self.beta <= 1:
            raise ConfigurationError(f"beta must lie in [0, 1], got {self.beta}")
        if self.delta is None:
            object.__setattr__(self, "delta", min(0.01, 1.0 / (10.0 * self.epsilon)))
        if not self.delta > 0:
            raise ConfigurationError(f"delta must be positive, got {self.delta}")
        ratio = 2.0 * self.T / self.delta
        if abs(ratio - round(ratio)) > 1e-9 * ratio:
            raise ConfigurationError(f"delta = {self.delta} does not divide 2T = {2 * self.T}")

    @property
    def M(self) -> int:
        return int(round(2.0 * self.T / self.delta))

    @property
    def eps_T(self) -> float:
        return self.epsilon * self.T

    def with_beta(self, beta: float) -> "PolaronParams":
        return PolaronParams(self.epsilon, self.T, self.eta, self.delta, beta)

    def kernel(self) -> np.ndarray:
        """Toeplitz kernel eps e^{-eps delta d}, d = 0..M."""
        d = np.arange(self.M + 1)
        return self.epsilon * np.exp(-self.epsilon * self.delta * d)

    def to_dict(self) -> dict:
        return {"epsilon": self.epsilon, "T": self.T, "eta": self.eta,
                "delta": self.delta, "beta": self.beta, "eps_T": self.eps_T}


@dataclass
class DiscretePath:
    """Increments g_1..g_M on a uniform grid; w(-T) = 0."""

    increments: np.ndarray
    delta: float

    def __post_init__(self):
        g = np.asarray(self.increments, dtype=float)
        if g.ndim != 2 or g.shape[1] != 3:
            raise ConfigurationError(f"increments must have shape (M, 3), got {g.shape}")
        if not np.all(np.isfinite(g)):
            raise ConfigurationError("increments must be finite")
        self.increments = g

    @classmethod
    def brownian(cls, params: PolaronParams, rng: np.random.Generator) -> "DiscretePath":
        return cls(math.sqrt(params.delta) * rng.standard_normal((params.M, 3)), params.delta)

    @classmethod
    def zeros(cls, params: PolaronParams) -> "DiscretePath":
        return cls(np.zeros((params.M, 3)), params.delta)

    @property
    def M(self) -> int:
        return self.increments.shape[0]

    def positions(self) -> np.ndarray:
        out = np.zeros((self.M + 1, 3))
        np.cumsum(self.increments, axis=0, out=out[1:])
        return out

    def end_to_end(self) -> np.ndarray:
        return self.increments.sum(axis=0)

    def copy(self) -> "DiscretePath":
        return DiscretePath(self.increments.copy(), self.delta)


@numba.njit(cache=True)
def _pair_sum(pos, kern, eta2):
    n = pos.shape[0]
    total = 0.0
    for k in range(n):
        xk, yk, zk = pos[k, 0], pos[k, 1], pos[k, 2]
        for l in range(k + 1, n):
            dx = pos[l, 0] - xk
            dy = pos[l, 1] - yk
            dz = pos[l, 2] - zk
            total += kern[l - k] / math.sqrt(eta2 + dx * dx + dy * dy + dz * dz)
    return total


@numba.njit(cache=True)
def _block_pair_delta(old, new, a, b, kern, eta2):
    """Change of the pair sum when rows a..b-1 move from ``old`` to ``new``."""
    n = old.shape[0]
    total = 0.0
    for k in range(a, b):
        for l in range(n):
            if l == k or (a <= l < k):
                continue
            w = kern[abs(l - k)]
            dx = new[l, 0] - new[k, 0]
            dy = new[l, 1] - new[k, 1]
            dz = new[l, 2] - new[k, 2]
            vn = 1.0 / math.sqrt(eta2 + dx * dx + dy * dy + dz * dz)
            dx = old[l, 0] - old[k, 0]
            dy = old[l, 1] - old[k, 1]
            dz = old[l, 2] - old[k, 2]
            vo = 1.0 / math.sqrt(eta2 + dx * dx + dy * dy + dz * dz)
            total += w * (vn - vo)
    return total


class Hamiltonian:
    """H for fixed parameters, with the kernel cached."""

    def __init__(self, params: PolaronParams):
        self.params = params
        self.kern = params.kernel()
        self.eta2 = params.eta**2
        self.scale = params.beta * params.delta**2

    def __call__(self, path: DiscretePath) -> float:
        return self.from_positions(path.positions())

    def base(self, positions: np.ndarray) -> float:
        """H at beta = 1."""
        try:
            total = _pair_sum(positions, self.kern, self.eta2)
        except ZeroDivisionError:
            total = math.inf
        if not math.isfinite(total):
            raise SingularityError("coincident path points with eta = 0")
        return self.params.delta**2 * total

    def from_positions(self, positions: np.ndarray) -> float:
        if self.scale == 0:
            return 0.0
        return self.params.beta * self.base(positions)

    def block_delta(self, old: np.ndarray, new: np.ndarray, a: int, b: int) -> float:
        """H(new) - H(old) when only position rows a..b-1 differ."""
        if self.scale == 0:
            return 0.0
        try:
            value = self.scale * _block_pair_delta(old, new, a, b, self.kern, self.eta2)
        except ZeroDivisionError:
            value = math.inf
        if not math.isfinite(value):
            raise SingularityError("coincident path points with eta = 0")
        return value


def hamiltonian(path: DiscretePath, params: PolaronParams) -> float:
    """Discrete Coulomb self-interaction of a path (diagonal excluded)."""
    return Hamiltonian(params)(path)


def constant_path_hamiltonian(params: PolaronParams) -> float:
    """Continuum H of the path w = 0 at beta = 1: (2T - (1 - e^{-2 eps T}) / eps) / eta."""
    L = 2.0 * params.T
    eps = params.epsilon
    return (L + math.expm1(-eps * L) / eps) / params.eta


def pcn_step(path: DiscretePath, params: PolaronParams, rho: float, rng: np.random.Generator,
             h: float | None = None, ham: Hamiltonian | None = None):
    """One full-path pCN move g' = sqrt(1 - rho^2) g + rho xi.

    Returns (path, accepted, H of the returned path).
    """
    if not 0 <= rho <= 1:
        raise ConfigurationError(f"rho must lie in [0, 1], got {rho}")
    ham = Hamiltonian(params) if ham is None else ham
    h = ham(path) if h is None else h
    xi = math.sqrt(params.delta) * rng.standard_normal(path.increments.shape)
    proposal = DiscretePath(math.sqrt(1.0 - rho * rho) * path.increments + rho * xi, path.delta)
    h_new = ham(proposal)
    if math.log(rng.random()) < h_new - h:
        return proposal, True, h_new
    return path, False, h


def frequency_bands(M: int) -> list[tuple[int, int]]:
    """Dyadic bands [0,1), [1,2), [2,4), ... of DCT indices."""
    bands = [(0, 1)]
    lo = 1
    while lo < M:
        hi = min(2 * lo, M)
        bands.append((lo, hi))
        lo = hi
    return bands


class _Sampler:
    """State of a pCN chain mixing three kinds of moves.

    * Band moves apply pCN to one dyadic band of orthonormal DCT
      coefficients of the increments.  Band 0 is the mean increment, i.e.
      the end-to-end displacement, and is updated every sweep; the other
      bands take turns.
    * A full-path pCN move.
    * Block moves apply pCN to the zero-sum part of a run of increments.
      The block's total displacement is kept, so only positions inside
      the block change and H is updated incrementally.

    Each move type keeps its own step size.
    """

    def __init__(self, params: PolaronParams, path: DiscretePath, rng: np.random.Generator,
                 block: int = 64):
        self.params = params
        self.ham = Hamiltonian(params)
        self.rng = rng
        self.g = path.increments.copy()
        self.pos = path.positions()
        self.h = self.ham.from_positions(self.pos)
        self.bands = frequency_bands(params.M)
        self.block = max(2, min(block, params.M))
        self.full_index = len(self.bands)
        self.block_index = len(self.bands) + 1
        self.n_moves = len(self.bands) + 2
        self.log_rho = np.full(self.n_moves, math.log(0.5))
        self.accepted = np.zeros(self.n_moves)
        self.proposed = np.zeros(self.n_moves)
        self.sqd = math.sqrt(params.delta)
        self._next_band = 1

    def _accept(self, dh: float) -> bool:
        return dh >= 0 or math.log(self.rng.random()) < dh

    def _global_move(self, j: int, g_new: np.ndarray) -> bool:
        pos_new = np.zeros_like(self.pos)
        np.cumsum(g_new, axis=0, out=pos_new[1:])
        h_new = self.ham.from_positions(pos_new)
        self.proposed[j] += 1
        if self._accept(h_new - self.h):
            self.g, self.pos, self.h = g_new, pos_new, h_new
            self.accepted[j] += 1
            return True
        return False

    def band_move(self, j: int) -> bool:
        lo, hi = self.bands[j]
        rho = math.exp(self.log_rho[j])
        c = fft.dct(self.g, type=2, norm="ortho", axis=0)
        c[lo:hi] = math.sqrt(1.0 - rho * rho) * c[lo:hi] + rho * self.sqd * self.rng.standard_normal((hi - lo, 3))
        return self._global_move(j, fft.idct(c, type=2, norm="ortho", axis=0))

    def full_move(self) -> bool:
        j = self.full_index
        rho = math.exp(self.log_rho[j])
        xi = self.sqd * self.rng.standard_normal(self.g.shape)
        return self._global_move(j, math.sqrt(1.0 - rho * rho) * self.g + rho * xi)

    def block_move(self, a: int, b: int) -> bool:
        j = self.block_index
        a, b = max(a, 0), min(b, self.params.M)
        if b - a < 2:
            return False
        rho = math.exp(self.log_rho[j])
        seg = self.g[a:b]
        mean = seg.mean(axis=0)
        noise = self.sqd * self.rng.standard_normal(seg.shape)
        noise -= noise.mean(axis=0)
        new_seg = mean + math.sqrt(1.0 - rho * rho) * (seg - mean) + rho * noise
        # positions a+1..b-1 change; pos[b] keeps its value because the block sum is kept
        new_pos = self.pos.copy()
        new_pos[a + 1:b] = self.pos[a] + np.cumsum(new_seg, axis=0)[:-1]
        dh = self.ham.block_delta(self.pos, new_pos, a + 1, b)
        self.proposed[j] += 1
        if self._accept(dh):
            self.g[a:b] = new_seg
            self.pos = new_pos
            self.h += dh
            self.accepted[j] += 1
            return True
        return False

    def sweep(self, adapt_gain: float = 0.0):
        self._step(0, self.band_move(0), adapt_gain)
        self._step(self.full_index, self.full_move(), adapt_gain)
        if len(self.bands) > 1:
            j = self._next_band
            self._step(j, self.band_move(j), adapt_gain)
            self._next_band = j + 1 if j + 1 < len(self.bands) else 1
        offset = int(self.rng.integers(self.block))
        for a in range(offset - self.block, self.params.M, self.block):
            self._step(self.block_index, self.block_move(a, a + self.block), adapt_gain)

    def _step(self, j: int, accepted: bool, gain: float):
        if gain:
            self.log_rho[j] = min(0.0, self.log_rho[j] + gain * (float(accepted) - TARGET_ACCEPTANCE))

    def path(self) -> DiscretePath:
        return DiscretePath(self.g.copy(), self.params.delta)


def integrated_autocorrelation_time(x, c: float = 5.0) -> float:
    """Sokal's self-consistent window estimate of the IACT."""
    x = np.asarray(x, dtype=float)
    n = x.size
    if n < 4 or np.var(x) == 0:
        return 1.0
    y = x - x.mean()
    f = np.fft.rfft(y, n=2 * n)
    acf = np.fft.irfft(f * np.conj(f))[:n]
    acf /= acf[0]
    tau = 2.0 * np.cumsum(acf) - 1.0
    window = np.arange(n) >= c * tau
    m = int(np.argmax(window)) if window.any() else n - 1
    return float(max(tau[m], 1.0))


def batch_means_stderr(x, n_batches: int = 20) -> float:
    x = np.asarray(x, dtype=float)
    size = x.size // n_batches
    if size < 1:
        raise InsufficientSampleError(f"{x.size} values cannot fill {n_batches} batches")
    means = x[: size * n_batches].reshape(n_batches, size).mean(axis=1)
    return float(means.std(ddof=1) / math.sqrt(n_batches))


@dataclass
class ChainResult:
    params: PolaronParams
    samples: np.ndarray
    h_trace: np.ndarray
    base_h: np.ndarray
    end_to_end: np.ndarray
    acceptance: np.ndarray
    rho: np.ndarray
    iact: float
    thin: int
    burn_in: int
    extras: dict = field(default_factory=dict)

    @property
    def E_H(self) -> float:
        return float(self.h_trace.mean())

    @property
    def E_H_stderr(self) -> float:
        return batch_means_stderr(self.h_trace)

    def diagnostics(self) -> dict:
        out = {"acceptance": [float(a) for a in self.acceptance],
               "min_acceptance": float(self.acceptance.min()),
               "rho": [float(r) for r in self.rho], "iact": self.iact,
               "E_H": self.E_H, "E_H_stderr": self.E_H_stderr,
               "n_steps": int(self.h_trace.size), "thin": self.thin, "burn_in": self.burn_in,
               "params": self.params.to_dict()}
        out.update(self.extras)
        return out

    def diagnostics_json(self) -> str:
        return json.dumps(self.diagnostics(), indent=2, sort_keys=True) + "\n"


def run_chain(params: PolaronParams, n_steps: int, rng: np.random.Generator,
              burn_in: int | None = None, thin: int = 10, block: int = 64,
              keep_paths: bool = True, min_steps: int = 10_000,
              init: DiscretePath | None = None) -> ChainResult:
    """Run ``n_steps`` sweeps after an adaptive burn-in.

    During burn-in (default n_steps // 5 sweeps) each move type's step size
    follows a Robbins-Monro recursion towards acceptance 0.25; afterwards
    the step sizes are frozen.  Every ``thin``-th state is stored.

    Raises
    ------
    MixingError
        If some move type accepts less than 1% of its proposals after
        adaptation.
    """
    if n_steps < min_steps:
        raise ConfigurationError(f"n_steps must be at least {min_steps}, got {n_steps}")
    burn_in = n_steps // 5 if burn_in is None else burn_in
    path = DiscretePath.brownian(params, rng) if init is None else init
    sampler = _Sampler(params, path, rng, block=block)
    for k in range(burn_in):
        sampler.sweep(adapt_gain=1.0 / math.sqrt(k + 10.0))
    sampler.accepted[:] = 0
    sampler.proposed[:] = 0
    h_trace = np.empty(n_steps)
    base = np.empty(n_steps)
    ends = np.empty((n_steps, 3))
    samples = []
    beta = params.beta
    for k in range(n_steps):
        sampler.sweep()
        h_trace[k] = sampler.h
        base[k] = sampler.h / beta if beta > 0 else sampler.ham.base(sampler.pos)
        ends[k] = sampler.pos[-1]
        if keep_paths and k % thin == 0:
            samples.append(sampler.g.copy())
    acceptance = sampler.accepted / np.maximum(sampler.proposed, 1)
    result = ChainResult(params, np.array(samples) if keep_paths else np.empty((0, params.M, 3)),
                         h_trace, base, ends, acceptance, np.exp(sampler.log_rho),
                         integrated_autocorrelation_time(h_trace), thin, burn_in)
    if acceptance.min() < 0.01:
        raise MixingError(f"acceptance {acceptance.min():.3g} < 0.01 after adaptation "
                          f"(per move type: {np.round(acceptance, 3).tolist()})")
    return result


def estimate_sigma2(chain: ChainResult, min_effective: int = 50):
    """Variance per unit time of w(T) - w(-T), averaged over coordinates.

    Returns (sigma2, stderr, effective sample size); the stderr is from
    batch means over the chain.
    """
    T = chain.params.T
    y = chain.end_to_end / math.sqrt(2.0 * T)
    x = ((y - y.mean(axis=0)) ** 2).mean(axis=1) * y.shape[0] / (y.shape[0] - 1)
    iact = integrated_autocorrelation_time(x)
    n_eff = x.size / iact
    if n_eff < min_effective:
        raise InsufficientSampleError(f"only {n_eff:.1f} effective samples, need {min_effective}")
    return float(x.mean()), batch_means_stderr(x), float(n_eff)


@dataclass
class FreeEnergyEstimate:
    g: float
    stderr: float
    table: list

    def table_csv(self) -> str:
        lines = ["beta,E_H,stderr"]
        lines += [f"{b!r},{e!r},{s!r}" for b, e, s in self.table]
        return "\n".join(lines) + "\n"


def trapezoid_weights(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    w = np.zeros_like(x)
    if x.size > 1:
        dx = np.diff(x)
        w[:-1] += 0.5 * dx
        w[1:] += 0.5 * dx
    return w


def free_energy_thermo_integration(params: PolaronParams, betas, rng: np.random.Generator,
                                   n_steps: int = 10_000, burn_in: int | None = None,
                                   min_points: int = 8, **chain_kw) -> FreeEnergyEstimate:
    """(2T)^{-1} log Z by thermodynamic integration in beta.

    d log Z(beta) / d beta = E_beta[H_1] with H_1 the beta = 1 Hamiltonian,
    integrated by the trapezoid rule over ``betas``.  The degenerate grid
    [0] returns 0.
    """
    betas = np.asarray(betas, dtype=float)
    if betas.size == 1 and betas[0] == 0:
        return FreeEnergyEstimate(0.0, 0.0, [(0.0, 0.0, 0.0)])
    if betas.size < min_points or betas[0] != 0 or betas[-1] != 1 or np.any(np.diff(betas) <= 0):
        raise ConfigurationError(f"beta grid must increase from 0 to 1 with >= {min_points} points")
    table = []
    for beta in betas:
        chain = run_chain(params.with_beta(float(beta)), n_steps, rng, burn_in=burn_in,
                          keep_paths=False, **chain_kw)
        table.append((float(beta), float(chain.base_h.mean()), batch_means_stderr(chain.base_h)))
    w = trapezoid_weights(betas)
    means = np.array([row[1] for row in table])
    errs = np.array([row[2] for row in table])
    scale = 1.0 / (2.0 * params.T)
    return FreeEnergyEstimate(scale * float(w @ means), scale * float(np.sqrt((w * errs) @ (w * errs))), table)


def free_energy_reweighting(params: PolaronParams, n_paths: int, rng: np.random.Generator):
    """(2T)^{-1} log E_ref[e^H] from i.i.d. Brownian paths.

    Returns (estimate, stderr) with the stderr from the delta method on
    the mean of e^{H - max H}.
    """
    ham = Hamiltonian(params)
    h = np.array([ham(DiscretePath.brownian(params, rng)) for _ in range(n_paths)])
    top = h.max()
    w = np.exp(h - top)
    mean = w.mean()
    scale = 1.0 / (2.0 * params.T)
    est = scale * (top + math.log(mean))
    err = scale * float(w.std(ddof=1) / (math.sqrt(n_paths) * mean))
    return est, err


def empirical_F_epsilon(positions, dt: float, epsilon: float, eta: float = 0.05,
                        min_eps_T: float = 5.0):
    """Trapezoid value of int_0^T' eps e^{-eps r} V_eta(w(r) - w(0)) dr.

    ``positions`` holds w on [0, T'] with spacing ``dt``.  The dropped tail
    is at most e^{-eps T'} / eta, returned as the second value.
    """
    pos = np.asarray(positions, dtype=float)
    if eta <= 0:
        raise SingularityError("the integrand is singular at r = 0 without regularization; use eta > 0")
    span = dt * (pos.shape[0] - 1)
    if epsilon * span < min_eps_T:
        raise TruncationError(f"eps * T' = {epsilon * span:.3g} < {min_eps_T}: tail too large",
                              diagnostics={"eps_T": epsilon * span})
    r = dt * np.arange(pos.shape[0])
    dist2 = ((pos - pos[0]) ** 2).sum(axis=1)
    f = epsilon * np.exp(-epsilon * r) / np.sqrt(eta * eta + dist2)
    return float(integrate.trapezoid(f, dx=dt)), math.exp(-epsilon * span) / eta


def truncation_profile(eta: float, x) -> np.ndarray:
    """Y_eta(x) = 1/|x| - 1/sqrt(eta^2 + |x|^2)."""
    x = np.abs(np.asarray(x, dtype=float))
    if eta == 0:
        return np.zeros_like(x)
    return 1.0 / x - 1.0 / np.sqrt(eta * eta + x * x)


def _phi_scaled(y):
    # phi(y) y^{3/2} with phi(y) = Y_1(y), written to avoid cancellation
    y = np.asarray(y, dtype=float)
    return y**1.5 / (y * np.sqrt(1.0 + y * y) * (np.sqrt(1.0 + y * y) + y))


def truncation_constant() -> float:
    """C* = sup_y Y_1(y) y^{3/2}; Y_eta(x) = phi(x/eta)/eta makes it eta-free."""
    y = np.logspace(-4, 4, 20001)
    k = int(np.argmax(_phi_scaled(y)))
    res = optimize.minimize_scalar(lambda t: -float(_phi_scaled(math.exp(t))),
                                   bracket=(math.log(y[max(k - 1, 0)]), math.log(y[k]),
                                            math.log(y[min(k + 1, y.size - 1)])))
    return float(-res.fun)


def truncation_bound_check(eta: float, x, c_star: float | None = None):
    """Check Y_eta(x) |x|^{3/2} / sqrt(eta) <= C* on a grid of |x|.

    Returns (ok, C*, scaled values).
    """
    if not 0 <= eta <= 1:
        raise ConfigurationError(f"eta must lie in [0, 1], got {eta}")
    x = np.abs(np.asarray(x, dtype=float))
    c_star = truncation_constant() if c_star is None else c_star
    if eta == 0:
        values = np.zeros_like(x)
    else:
        values = truncation_profile(eta, x) * x**1.5 / math.sqrt(eta)
    return bool(np.all(values <= c_star * (1 + 1e-12))), c_star, values


def gaussian_smoothed_power(x: float, sigma: float, power: float = 1.5) -> float:
    """E |x + sigma Z|^{-power} for a standard 3D Gaussian Z (power < 3)."""
    a = abs(float(x))
    c = 1.0 / (sigma * math.sqrt(2.0 * math.pi))
    if a == 0:
        # radial density of |sigma Z|
        f = lambda r: math.sqrt(2.0 / math.pi) * r ** (2.0 - power) / sigma**3 * math.exp(-0.5 * (r / sigma) ** 2)
        value, _ = integrate.quad(f, 0.0, math.inf, epsabs=1e-13, epsrel=1e-12, limit=200)
        return value

    def f(r):
        # (r / a) [phi(r - a) - phi(r + a)], stable for r a << sigma^2
        return c * r ** (1.0 - power) / a * math.exp(-0.5 * ((r - a) / sigma) ** 2) * -math.expm1(-2.0 * r * a / sigma**2)

    pts = [a] if a > 0 else None
    value, _ = integrate.quad(f, 0.0, a + 40 * sigma, points=pts, epsabs=1e-13, epsrel=1e-12, limit=400)
    return value


def gaussian_smoothed_power_at_zero(sigma: float, power: float = 1.5) -> float:
    """Closed form sqrt(2/pi) sigma^{-power} 2^{(1-power)/2} Gamma((3-power)/2)."""
    return (math.sqrt(2.0 / math.pi) * sigma ** (-power) * 2.0 ** ((1.0 - power) / 2.0)
            * math.gamma((3.0 - power) / 2.0))


def sup_at_zero_check(sigma: float, xs, tol: float = 1e-6):
    """Check that the Gaussian smoothing of |y|^{-3/2} peaks at x = 0.

    Returns (ok, value at 0, values on the grid).
    """
    at_zero = gaussian_smoothed_power(0.0, sigma)
    values = np.array([gaussian_smoothed_power(x, sigma) for x in xs])
    return bool(np.all(values <= at_zero + tol)), at_zero, values


def brownian_hamiltonians(params: PolaronParams, n_paths: int, rng: np.random.Generator) -> np.ndarray:
    ham = Hamiltonian(params)
    return np.array([ham(DiscretePath.brownian(params, rng)) for _ in range(n_paths)])


def scaling_identity_check(alpha: float, T: float, n_paths: int, rng: np.random.Generator,
                           delta: float = 0.02, eta: float = 0.05):
    """Mean H under Brownian paths at (eps = 1/alpha^2, horizon alpha^2 T) against alpha times
    the mean at (eps = 1, horizon T).

    The rescaled problem uses step alpha^2 delta and regularization alpha eta,
    under which w'(s) = alpha w(s / alpha^2) maps one discretization onto
    the other.  Returns ((mean, stderr) rescaled, (mean, stderr) of alpha H).
    """
    base = PolaronParams(1.0, T, eta=eta, delta=delta)
    scaled = PolaronParams(1.0 / alpha**2, alpha**2 * T, eta=alpha * eta, delta=alpha**2 * delta)
    h_scaled = brownian_hamiltonians(scaled, n_paths, rng)
    h_base = alpha * brownian_hamiltonians(base, n_paths, rng)
    se = lambda h: float(h.std(ddof=1) / math.sqrt(h.size))
    return (float(h_scaled.mean()), se(h_scaled)), (float(h_base.mean()), se(h_base))
