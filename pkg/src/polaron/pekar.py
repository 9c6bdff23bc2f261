"""Radial solver for the Pekar variational problem.

Maximizes

    E(psi) = \\int\\int psi^2(x) psi^2(y) / |x - y| dx dy - 1/2 ||grad psi||^2

over normalized, rotationally symmetric psi on a uniform radial grid.  The
maximizer is found by a damped self-consistent field iteration: each step
solves the linear radial problem for the ground state of -1/2 Lap - 2 V_psi
with inverse-power iteration on u(r) = r psi(r).
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, linalg

from .errors import (
    ConfigurationError,
    IterationLimitError,
    NormalizationError,
    PositivityError,
)

FOUR_PI = 4.0 * math.pi
NORM_TOL = 1e-8
TAIL_TOL = 1e-6


@dataclass(frozen=True)
class RadialGrid:
    """Uniform radial grid r_i = i*h, i = 0..n, with r_n = r_max."""

    n: int = 2000
    r_max: float = 20.0

    def __post_init__(self):
        if self.n < 100:
            raise ConfigurationError(f"radial grid needs n >= 100 intervals, got {self.n}")
        if not self.r_max > 0:
            raise ConfigurationError(f"r_max must be positive, got {self.r_max}")

    @property
    def h(self) -> float:
        return self.r_max / self.n

    @property
    def r(self) -> np.ndarray:
        return np.linspace(0.0, self.r_max, self.n + 1)


def _radial_integral(grid: RadialGrid, integrand: np.ndarray) -> float:
    """4 pi * trapezoid of r^2 * integrand."""
    return FOUR_PI * float(integrate.trapezoid(grid.r**2 * integrand, dx=grid.h))


@dataclass(frozen=True, eq=False)
class RadialProfile:
    """Radial wave function psi(r_i) >= 0 on a RadialGrid.

    With ``check=True`` (the default) the profile must be L2-normalized to
    1e-8 under the trapezoid rule and must have decayed below 1e-6 at r_max.
    """

    grid: RadialGrid
    values: np.ndarray
    check: bool = field(default=True, repr=False)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != (self.grid.n + 1,):
            raise ConfigurationError(
                f"profile has {values.shape} values, grid has {self.grid.n + 1} nodes"
            )
        object.__setattr__(self, "values", values)
        if self.check:
            if np.any(values < 0) or not np.all(np.isfinite(values)):
                raise NormalizationError("profile values must be finite and non-negative")
            norm = self.norm()
            if abs(norm - 1.0) > NORM_TOL:
                raise NormalizationError(f"profile norm is {norm!r}, expected 1 within {NORM_TOL}")
            if values[-1] > TAIL_TOL:
                raise NormalizationError(
                    f"profile has not decayed at r_max: psi(r_max) = {values[-1]:.3e}"
                )

    @classmethod
    def normalized(cls, grid: RadialGrid, values) -> "RadialProfile":
        values = np.abs(np.asarray(values, dtype=float))
        norm = _radial_integral(grid, values**2)
        if not norm > 0:
            raise NormalizationError("cannot normalize a profile with zero mass")
        return cls(grid, values / math.sqrt(norm))

    @classmethod
    def gaussian(cls, grid: RadialGrid, sigma: float) -> "RadialProfile":
        """psi with psi^2 the density of N(0, sigma^2 I_3)."""
        r = grid.r
        values = (2 * math.pi * sigma**2) ** -0.75 * np.exp(-(r**2) / (4 * sigma**2))
        return cls.normalized(grid, values)

    def norm(self) -> float:
        return _radial_integral(self.grid, self.values**2)

    def density(self) -> np.ndarray:
        """Radial probability density 4 pi r^2 psi(r)^2."""
        return FOUR_PI * self.grid.r**2 * self.values**2

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["r", "psi"])
        for r, psi in zip(self.grid.r, self.values):
            writer.writerow([repr(float(r)), repr(float(psi))])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, check: bool = True) -> "RadialProfile":
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or [c.strip() for c in rows[0]] != ["r", "psi"]:
            raise ConfigurationError("profile CSV must start with header 'r,psi'")
        data = np.array([[float(a), float(b)] for a, b in rows[1:]])
        r = data[:, 0]
        grid = RadialGrid(n=len(r) - 1, r_max=float(r[-1]))
        if not np.allclose(r, grid.r, rtol=0, atol=1e-12 * max(1.0, grid.r_max)):
            raise ConfigurationError("profile CSV radii are not a uniform grid starting at 0")
        return cls(grid, data[:, 1], check=check)


@dataclass(frozen=True, eq=False)
class RadialPotential:
    grid: RadialGrid
    values: np.ndarray


def hartree_potential(profile: RadialProfile) -> RadialPotential:
    """Coulomb potential of the density psi^2 by Newton's shell theorem.

    V(r) = (4 pi / r) int_0^r s^2 psi^2 ds + 4 pi int_r^R s psi^2 ds,
    with V(0) = 4 pi int_0^R s psi^2 ds.
    """
    grid = profile.grid
    if profile.check and abs(profile.norm() - 1.0) > NORM_TOL:
        raise NormalizationError("hartree_potential needs a normalized profile")
    r = grid.r
    rho = profile.values**2
    inner = integrate.cumulative_trapezoid(r**2 * rho, dx=grid.h, initial=0.0)
    outer_cum = integrate.cumulative_trapezoid(r * rho, dx=grid.h, initial=0.0)
    outer = outer_cum[-1] - outer_cum
    values = np.empty_like(r)
    values[1:] = FOUR_PI * (inner[1:] / r[1:] + outer[1:])
    values[0] = FOUR_PI * outer_cum[-1]
    return RadialPotential(grid, values)


@dataclass(frozen=True)
class EnergyParts:
    coulomb: float
    kinetic: float

    @property
    def energy(self) -> float:
        return self.coulomb - 0.5 * self.kinetic

    @property
    def virial_residual(self) -> float:
        return abs(self.coulomb - self.kinetic) / self.kinetic


def energy_parts(profile: RadialProfile) -> EnergyParts:
    """Coulomb self-energy and ||grad psi||^2 of a profile."""
    grid = profile.grid
    if grid.n < 3:
        raise ConfigurationError("finite differences need at least 3 grid intervals")
    potential = hartree_potential(profile)
    coulomb = _radial_integral(grid, profile.values**2 * potential.values)
    dpsi = np.gradient(profile.values, grid.h, edge_order=2)
    kinetic = _radial_integral(grid, dpsi**2)
    return EnergyParts(coulomb, kinetic)


def pekar_energy(profile: RadialProfile) -> float:
    return energy_parts(profile).energy


@dataclass
class SolverResult:
    profile: RadialProfile
    g0: float
    kinetic: float
    potential: float
    virial_residual: float
    iterations: int
    energy_trace: list = field(default_factory=list)
    mixing_trace: list = field(default_factory=list)

    def summary(self) -> dict:
        return {
            "g0": self.g0,
            "kinetic": self.kinetic,
            "potential": self.potential,
            "virial_residual": self.virial_residual,
            "iterations": self.iterations,
        }

    def summary_json(self) -> str:
        return json.dumps(self.summary(), indent=2, sort_keys=True) + "\n"


def _ground_state(grid: RadialGrid, potential: np.ndarray, u0: np.ndarray,
                  tol: float = 1e-13, max_iter: int = 2000):
    """Lowest eigenpair of -1/2 u'' - 2 V u with u(0) = u(R) = 0.

    Inverse-power iteration with a shift below the Gershgorin bound so the
    shifted operator is positive definite and a banded Cholesky factor can be
    reused across iterations.
    """
    h = grid.h
    v = potential[1:-1]
    diag = 1.0 / h**2 - 2.0 * v
    off = -0.5 / h**2
    shift = float(np.min(-2.0 * v)) - 1e-3
    ab = np.empty((2, diag.size))
    ab[0, 0] = 0.0
    ab[0, 1:] = off
    ab[1] = diag - shift
    chol = linalg.cholesky_banded(ab, lower=False)

    x = u0 / np.linalg.norm(u0)
    for it in range(1, max_iter + 1):
        y = linalg.cho_solve_banded((chol, False), x)
        y /= np.linalg.norm(y)
        if y.sum() < 0:
            y = -y
        delta = np.linalg.norm(y - x)
        x = y
        if delta < tol:
            break
    hx = diag * x
    hx[1:] += off * x[:-1]
    hx[:-1] += off * x[1:]
    return float(x @ hx), x


def _profile_from_u(grid: RadialGrid, u_interior: np.ndarray) -> np.ndarray:
    r = grid.r
    psi = np.zeros_like(r)
    psi[1:-1] = u_interior / r[1:-1]
    # psi is even in r: psi(0) from psi(h), psi(2h) to second order
    psi[0] = (4.0 * psi[1] - psi[2]) / 3.0
    return np.abs(psi)


def solve_ground_state(grid: RadialGrid | None = None,
                       init: RadialProfile | None = None,
                       tol: float = 1e-8,
                       mixing: float = 0.5,
                       virial_tol: float = 1e-3,
                       max_iter: int = 500) -> SolverResult:
    """Self-consistent maximization of the Pekar functional.

    Parameters
    ----------
    grid : RadialGrid, optional
        Defaults to ``RadialGrid()`` (n=2000, r_max=20) or ``init.grid``.
    init : RadialProfile, optional
        Starting profile; a Gaussian with sigma = 1 if omitted.
    tol : float
        Stop once the energy changes by less than ``tol`` between iterations.
    mixing : float
        Initial damping m in psi <- normalize((1 - m) psi + m phi).  Halved
        whenever a step would lower the energy by more than ``tol``.
    virial_tol : float
        Required relative virial residual |V - K| / K at exit.  On a grid of
        spacing h the fixed point carries an O(h^2) residual (about 1.6e-5
        for the default grid), so this cannot be tied to ``tol``.

    Convergence needs the energy change below ``tol`` and the L2 change of
    psi below 0.1 * sqrt(tol): the energy is stationary at the maximizer, so its
    change alone only controls the profile to order sqrt(tol).

    Returns
    -------
    SolverResult
        Profile, g0 = E(psi0) and the iteration traces.
    """
    if not tol > 0:
        raise ConfigurationError(f"tol must be positive, got {tol}")
    if not 0 < mixing <= 1:
        raise ConfigurationError(f"mixing must lie in (0, 1], got {mixing}")
    if grid is None:
        grid = init.grid if init is not None else RadialGrid()
    if init is None:
        init = RadialProfile.gaussian(grid, 1.0)
    if init.grid != grid:
        raise ConfigurationError("initial profile lives on a different grid")

    r = grid.r
    psi = init.values.copy()
    profile = RadialProfile.normalized(grid, psi)
    parts = energy_parts(profile)
    energies = [parts.energy]
    mixes = []
    m = mixing
    u = r[1:-1] * profile.values[1:-1]

    for it in range(1, max_iter + 1):
        potential = hartree_potential(profile).values
        _, u = _ground_state(grid, potential, u)
        phi = _profile_from_u(grid, u)
        phi /= math.sqrt(_radial_integral(grid, phi**2))
        while True:
            trial = RadialProfile.normalized(grid, (1 - m) * profile.values + m * phi)
            trial_parts = energy_parts(trial)
            if trial_parts.energy >= energies[-1] - tol or m < 1e-6:
                break
            m *= 0.5
        change = trial_parts.energy - energies[-1]
        step = math.sqrt(_radial_integral(grid, (trial.values - profile.values) ** 2))
        profile, parts = trial, trial_parts
        energies.append(parts.energy)
        mixes.append(m)
        if abs(change) < tol and step < 0.1 * math.sqrt(tol) and parts.virial_residual < virial_tol:
            return SolverResult(profile, parts.energy, parts.kinetic, parts.coulomb,
                                parts.virial_residual, it, energies, mixes)

    raise IterationLimitError(
        f"SCF did not converge in {max_iter} iterations",
        residuals={"energy_change": change, "step": step,
                   "virial_residual": parts.virial_residual},
    )


class RadialDrift:
    """Radial drift b(r) = psi'(r) / psi(r) of a profile.

    Evaluates by linear interpolation between grid nodes and constant
    extrapolation beyond r_max.  The 3D field is b(|x|) x / |x|.
    """

    def __init__(self, r: np.ndarray, b: np.ndarray):
        self.r = np.asarray(r, dtype=float)
        self.b = np.asarray(b, dtype=float)

    def __call__(self, radius):
        return np.interp(radius, self.r, self.b)


def drift_field(profile: RadialProfile, tail_cutoff: float = 1e-10) -> RadialDrift:
    """Logarithmic derivative of psi on the grid.

    Uses second-order differences of log psi, which are exact for Gaussian
    profiles.  Where psi has fallen below ``tail_cutoff * max(psi)`` the
    drift is held at its last value before the cutoff: the solver's Dirichlet
    condition at r_max otherwise produces a boundary layer with drifts of
    order 1e4 that no stationary path ever visits.
    """
    grid = profile.grid
    psi = profile.values
    interior = psi[:-1]
    if np.any(interior <= 0):
        bad = int(np.flatnonzero(interior <= 0)[0])
        raise PositivityError(f"psi must be positive at interior nodes; psi(r_{bad}) = {psi[bad]!r}")
    if psi[-1] > 0:
        b = np.gradient(np.log(psi), grid.h, edge_order=2)
    else:
        b = np.empty_like(psi)
        b[:-1] = np.gradient(np.log(interior), grid.h, edge_order=2)
        b[-1] = b[-2]
    small = np.flatnonzero(psi < tail_cutoff * psi.max())
    if small.size and small[0] > 2:
        b[small[0]:] = b[small[0] - 1]
    return RadialDrift(grid.r, b)
