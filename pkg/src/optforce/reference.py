"""Grid-based 1D reference solutions.

Finite-difference solves of the exponential-cost boundary value problem and
of the mean-first-passage-time equation, plus an independent quadrature
oracle.  The generator used everywhere is the drift-consistent
L = eps d^2/dx^2 - V' d/dx, so the exponential-cost function

    psi_sigma(x) = E^x[exp(-sigma * tau / eps)]

solves  eps^2 psi'' - eps V' psi' = sigma psi  with psi = 1 on the stopping
boundary and a reflecting (zero-derivative) outer boundary, and
F = -eps log psi is the value function of the associated control problem.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad
from scipy.linalg import solve_banded

from .model import Potential, StoppingSet, SimulationDomain


class ReferenceError(RuntimeError):
    """A grid solve produced an unusable solution (wrong sign, singular, ...)."""


class QuadratureError(RuntimeError):
    """Adaptive quadrature failed to reach the requested tolerance."""


@dataclass(frozen=True)
class Grid1D:
    """Uniform 1D grid whose first node sits exactly on the stopping boundary."""

    nodes: np.ndarray
    spacing: float

    def __post_init__(self):
        d = np.diff(self.nodes)
        if not np.allclose(d, self.spacing, rtol=1e-9, atol=1e-12):
            raise ValueError("grid nodes must be uniformly spaced")

    @property
    def lo(self) -> float:
        return float(self.nodes[0])

    @property
    def hi(self) -> float:
        return float(self.nodes[-1])


def build_grid(s: StoppingSet, domain: SimulationDomain, dx: float = 1e-3) -> Grid1D:
    """Grid over [right edge of S, right domain edge] with spacing dx."""
    lo, hi = s.hi, domain.hi
    n = int(round((hi - lo) / dx)) + 1
    if n < 3:
        raise ValueError("grid too coarse for the interval")
    nodes = lo + dx * np.arange(n)
    return Grid1D(nodes=nodes, spacing=float(dx))


@dataclass(frozen=True)
class ReferenceSolution:
    """psi, F = -eps log psi and the MFPT on the grid (right of S)."""

    grid: Grid1D
    psi: np.ndarray | None
    free_energy: np.ndarray | None
    mfpt: np.ndarray | None
    sigma: float

    def interp(self, field: str, x):
        vals = getattr(self, field)
        if vals is None:
            raise ValueError(f"field {field!r} not computed in this solution")
        return np.interp(x, self.grid.nodes, vals)


def _banded_solve(diag, upper, lower, rhs):
    n = diag.size
    ab = np.zeros((3, n))
    ab[1] = diag
    ab[0, 1:] = upper
    ab[2, :-1] = lower
    return solve_banded((1, 1), ab, rhs)


def solve_fk(p: Potential, sigma: float, epsilon: float, grid: Grid1D,
             s: StoppingSet) -> ReferenceSolution:
    """Solve eps^2 psi'' - eps V' psi' = sigma psi, psi(grid.lo) = 1, psi'(hi) = 0.

    Second-order centered differences on the uniform grid, reflecting outer
    boundary via a symmetric ghost node.  Returns psi and F = -eps log psi.
    """
    if sigma < 0:
        raise ReferenceError(f"sigma must be >= 0, got {sigma}")
    if abs(grid.lo - s.hi) > 1e-9:
        raise ValueError("grid must start at the right edge of the stopping set")
    if sigma == 0.0:
        # exp(0) functional: psi is identically one
        ones = np.ones(grid.nodes.size)
        return ReferenceSolution(grid=grid, psi=ones, free_energy=np.zeros_like(ones),
                                 mfpt=None, sigma=0.0)
    x = grid.nodes
    dx = grid.spacing
    n = x.size
    vp = np.asarray(p.gradient(x), dtype=np.float64)
    e2 = epsilon ** 2 / dx ** 2

    diag = np.full(n, -2.0 * e2 - sigma)
    upper = e2 - epsilon * vp[:-1] / (2.0 * dx)      # coefficient of psi_{i+1}, rows 0..n-2
    lower = e2 + epsilon * vp[1:] / (2.0 * dx)       # coefficient of psi_{i-1}, rows 1..n-1
    rhs = np.zeros(n)

    # Dirichlet at the stopping boundary
    diag[0] = 1.0
    upper[0] = 0.0
    rhs[0] = 1.0
    # reflecting outer boundary: ghost psi_n = psi_{n-2}
    diag[-1] = -2.0 * e2 - sigma
    lower[-1] = 2.0 * e2

    psi = _banded_solve(diag, upper, lower, rhs)
    psi[0] = 1.0   # Dirichlet row, exact
    if not np.all(np.isfinite(psi)):
        raise ReferenceError("singular or ill-conditioned boundary value problem")
    if np.any(psi <= 0.0):
        raise ReferenceError("psi <= 0 on the grid; discretization too coarse")
    free_energy = -epsilon * np.log(psi)
    return ReferenceSolution(grid=grid, psi=psi, free_energy=free_energy,
                             mfpt=None, sigma=float(sigma))


def solve_mfpt_pde(p: Potential, epsilon: float, grid: Grid1D, s: StoppingSet,
                   verify_sigma_derivative: bool = False,
                   delta: float = 2e-5) -> np.ndarray:
    """Solve eps m'' - V' m' = -1, m(grid.lo) = 0, m'(hi) = 0; return m per node.

    With verify_sigma_derivative=True the result is cross-checked against the
    derivative route m ~ (F_delta - F_0)/delta, which agrees to first order
    in delta.
    """
    if abs(grid.lo - s.hi) > 1e-9:
        raise ValueError("grid must start at the right edge of the stopping set")
    x = grid.nodes
    dx = grid.spacing
    n = x.size
    vp = np.asarray(p.gradient(x), dtype=np.float64)
    e = epsilon / dx ** 2

    diag = np.full(n, -2.0 * e)
    upper = e - vp[:-1] / (2.0 * dx)
    lower = e + vp[1:] / (2.0 * dx)
    rhs = np.full(n, -1.0)

    diag[0] = 1.0
    upper[0] = 0.0
    rhs[0] = 0.0
    diag[-1] = -2.0 * e
    lower[-1] = 2.0 * e

    m = _banded_solve(diag, upper, lower, rhs)
    m[0] = 0.0   # Dirichlet row, exact
    if not np.all(np.isfinite(m)) or np.any(m[1:] <= 0.0):
        raise ReferenceError("MFPT solve failed (non-finite or negative values)")

    if verify_sigma_derivative:
        # F_0 = 0, so the first-order derivative route is F_delta / delta.
        sol = solve_fk(p, delta, epsilon, grid, s)
        m_alt = sol.free_energy / delta
        scale = max(float(m[-1]), 1.0)
        rel = float(np.max(np.abs(m_alt - m))) / scale
        if rel > 5e-2:
            raise ReferenceError(
                f"sigma-derivative cross-check disagrees (rel {rel:.2e})")
    return m


def solve_reference(p: Potential, sigma: float, epsilon: float, grid: Grid1D,
                    s: StoppingSet) -> ReferenceSolution:
    """psi, F and MFPT on one grid (convenience for the CLI)."""
    sol = solve_fk(p, sigma, epsilon, grid, s)
    m = solve_mfpt_pde(p, epsilon, grid, s)
    return ReferenceSolution(grid=grid, psi=sol.psi, free_energy=sol.free_energy,
                             mfpt=m, sigma=float(sigma))


def mfpt_quadrature_oracle(p: Potential, epsilon: float, x: float,
                           absorb_at: float, reflect_at: float,
                           epsabs: float = 1e-8, epsrel: float = 1e-6) -> float:
    """Mean first passage time by the 1D closed form, adaptive quadrature.

        E[tau](x) = (1/eps) int_a^x e^{V(y)/eps} int_y^b e^{-V(z)/eps} dz dy

    with absorbing boundary a = absorb_at and reflecting boundary b =
    reflect_at.  Independent of the finite-difference solvers.
    """
    a, b = float(absorb_at), float(reflect_at)
    if not (a < x <= b):
        raise ValueError(f"need absorb_at < x <= reflect_at, got {a} < {x} <= {b}")

    def inner(y):
        val, _ = quad(lambda z: np.exp(-float(p.evaluate(z)) / epsilon), y, b,
                      epsabs=epsabs * 1e-3, epsrel=epsrel * 1e-2, limit=300)
        return val

    val, err = quad(lambda y: np.exp(float(p.evaluate(y)) / epsilon) * inner(y),
                    a, x, epsabs=epsabs, epsrel=epsrel, limit=300)
    result = val / epsilon
    if not np.isfinite(result):
        raise QuadratureError(f"quadrature returned non-finite value at x={x}")
    if err > 50.0 * (epsabs + epsrel * abs(val)):
        raise QuadratureError(
            f"quadrature did not converge at x={x}: estimate {val}, error {err}")
    return float(result)
