"""Finite-volume discretization of d/dm d/dS and its smallest eigenvalues.

The generator is discretized on nodes x_0 < ... < x_{N-1} with cell masses
m_i (speed mass of the cell around x_i) and conductances
c_{i+1/2} = 1/(S(x_{i+1}) - S(x_i)):

    (Lf)_i = ( c_{i+1/2} (f_{i+1} - f_i) - c_{i-1/2} (f_i - f_{i-1}) ) / m_i

-L is nonnegative and self-adjoint in the m-weighted inner product; a
similarity transform by sqrt(m_i) turns it into a symmetric tridiagonal
matrix whose extreme eigenvalues are found by Sturm-sequence bisection with
inverse-iteration eigenvectors (LAPACK stebz/stein via scipy).

Truncation of the line is modeled with Neumann (reflecting) ends: the far
boundaries carry negligible speed mass and are non-exit for the processes we
certify, so the reflected surrogate perturbs the low spectrum by a tail-mass
sized amount (checked by window-doubling sensitivity).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.linalg import eigh_tridiagonal

from .errors import ConvergenceFailure, DegenerateFunction, DomainError, QuadratureFailure
from .kac import Side, _check_side, require_certificate
from .model import DiffusionSpec, build_scale, build_speed

__all__ = [
    "NaturalGrid",
    "DiscreteOperator",
    "SpectrumResult",
    "build_grid",
    "build_operator",
    "smallest_eigenvalues",
    "killed_gap",
    "full_line_gap",
    "variational_check",
]


@dataclass(frozen=True, eq=False)
class NaturalGrid:
    """Nodes, cell masses and conductances of the discretized generator."""

    nodes: np.ndarray
    cell_masses: np.ndarray        # m_i > 0, atoms lumped into their cell
    conductances: np.ndarray       # c_{i+1/2}, length len(nodes) - 1
    window_mass: float             # speed mass of the gridded window incl. atoms

    def __post_init__(self):
        if np.any(self.cell_masses <= 0.0):
            raise QuadratureFailure("cell masses must be positive; the window may be too wide "
                                    "for the speed density to be resolvable in double precision")
        if np.any(self.conductances <= 0.0):
            raise QuadratureFailure("conductances must be positive")


def build_grid(spec: DiffusionSpec, size: Optional[int] = None,
               window: Optional[tuple[float, float]] = None) -> NaturalGrid:
    """Uniform-in-x nodes over the (sub)window; cell masses by per-cell Simpson
    quadrature of the speed density plus exact atom lumping."""
    scale = build_scale(spec)
    speed = build_speed(spec)
    size = size or spec.tolerances.spectral_grid
    if size < 3:
        raise DomainError("grid needs at least 3 nodes")
    lo, hi = window if window is not None else scale.window
    wlo, whi = scale.window
    if lo < wlo - 1e-12 * (1 + abs(wlo)) or hi > whi + 1e-12 * (1 + abs(whi)) or not lo < hi:
        raise DomainError(f"grid window ({lo}, {hi}) outside the spec window ({wlo}, {whi})")

    nodes = np.linspace(lo, hi, size)
    h = (hi - lo) / (size - 1)
    edges = np.concatenate(([lo], nodes[:-1] + 0.5 * h, [hi]))
    # per-cell composite Simpson on (left, mid, right); differences of the
    # cumulative M would cancel to zero in the far tails
    left, right = edges[:-1], edges[1:]
    mid = 0.5 * (left + right)
    dl = np.asarray(speed.density(left), dtype=float)
    dm = np.asarray(speed.density(mid), dtype=float)
    dr = np.asarray(speed.density(right), dtype=float)
    masses = (right - left) / 6.0 * (dl + 4.0 * dm + dr)

    for pos, mass in speed.atoms:
        if lo <= pos <= hi and mass > 0:
            idx = int(np.clip(np.searchsorted(edges, pos, side="right") - 1, 0, size - 1))
            masses[idx] += mass

    svals = np.asarray(scale(nodes), dtype=float)
    ds = np.diff(svals)
    if np.any(ds <= 0):
        raise QuadratureFailure("scale not strictly increasing across the grid")
    return NaturalGrid(nodes=nodes, cell_masses=masses, conductances=1.0 / ds,
                       window_mass=float(masses.sum()))


@dataclass(frozen=True, eq=False)
class DiscreteOperator:
    """Tridiagonal action of L with per-end boundary tags."""

    grid: NaturalGrid
    bc: tuple[str, str]            # ("neumann"|"dirichlet") per end
    unknowns: np.ndarray           # indices of grid nodes carrying unknowns

    @property
    def masses(self) -> np.ndarray:
        return self.grid.cell_masses[self.unknowns]

    def _couplings(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(c_left, c_inner, c_right): outer conductances per boundary tag and
        the couplings between consecutive unknowns."""
        c = self.grid.conductances
        i0, i1 = self.unknowns[0], self.unknowns[-1]
        c_inner = c[i0:i1]
        c_left = 0.0 if self.bc[0] == "neumann" else c[i0 - 1]
        c_right = 0.0 if self.bc[1] == "neumann" else c[i1]
        return c_left, c_inner, c_right

    def tridiagonal(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(sub, diag, super) of L restricted to the unknown nodes."""
        c_left, c_inner, c_right = self._couplings()
        m = self.masses
        diag = np.zeros(m.size)
        diag[0] -= c_left / m[0]
        diag[-1] -= c_right / m[-1]
        diag[:-1] -= c_inner / m[:-1]
        diag[1:] -= c_inner / m[1:]
        sup = c_inner / m[:-1]
        sub = c_inner / m[1:]
        return sub, diag, sup

    def apply(self, f: np.ndarray) -> np.ndarray:
        """(Lf) on the unknown nodes; Dirichlet neighbors are zero."""
        f = np.asarray(f, dtype=float)
        sub, diag, sup = self.tridiagonal()
        out = diag * f
        out[:-1] += sup * f[1:]
        out[1:] += sub * f[:-1]
        return out

    def energy(self, f: np.ndarray) -> float:
        """Dirichlet energy sum c (Delta f)^2, including jumps to Dirichlet zeros."""
        f = np.asarray(f, dtype=float)
        c_left, c_inner, c_right = self._couplings()
        e = float(np.sum(c_inner * np.diff(f) ** 2))
        e += float(c_left) * float(f[0]) ** 2
        e += float(c_right) * float(f[-1]) ** 2
        return e

    def symmetrized(self) -> tuple[np.ndarray, np.ndarray]:
        """(diag, offdiag) of the symmetric tridiagonal similar to -L."""
        c_left, c_inner, c_right = self._couplings()
        m = self.masses
        diag = np.zeros(m.size)
        diag[0] += c_left / m[0]
        diag[-1] += c_right / m[-1]
        diag[:-1] += c_inner / m[:-1]
        diag[1:] += c_inner / m[1:]
        off = -c_inner / np.sqrt(m[:-1] * m[1:])
        return diag, off


def build_operator(grid: NaturalGrid, bc: tuple[str, str]) -> DiscreteOperator:
    """Attach boundary tags; a Dirichlet end removes its boundary unknown, a
    Neumann end drops the exterior flux."""
    tags = tuple(bc)
    for tag in tags:
        if tag not in ("neumann", "dirichlet"):
            raise DomainError(f"unknown boundary tag {tag!r}")
    n = grid.nodes.size
    first = 1 if tags[0] == "dirichlet" else 0
    last = n - 2 if tags[1] == "dirichlet" else n - 1
    if last - first + 1 < 2:
        raise DomainError("too few unknowns after removing Dirichlet boundaries")
    return DiscreteOperator(grid=grid, bc=tags, unknowns=np.arange(first, last + 1))


@dataclass(frozen=True, eq=False)
class SpectrumResult:
    """Smallest eigenvalues of -L (ascending) with residuals and metadata."""

    eigenvalues: np.ndarray
    residuals: np.ndarray
    grid_size: int
    bc: tuple[str, str]
    vectors: np.ndarray            # columns, in the m-weighted (original) coordinates
    window: tuple[float, float]

    @property
    def gamma(self) -> float:
        """Spectral gap: second eigenvalue for a conservative (Neumann/Neumann)
        operator whose kernel is the constants, smallest eigenvalue otherwise."""
        if self.bc == ("neumann", "neumann"):
            return float(self.eigenvalues[1])
        return float(self.eigenvalues[0])

    def to_json(self, path=None) -> str:
        payload = {
            "eigenvalues": [float(v) for v in self.eigenvalues],
            "residuals": [float(v) for v in self.residuals],
            "grid_size": self.grid_size,
            "bc": list(self.bc),
            "window": [float(self.window[0]), float(self.window[1])],
            "gamma": self.gamma,
        }
        text = json.dumps(payload, indent=2)
        if path is not None:
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(text)
        return text


def smallest_eigenvalues(op: DiscreteOperator, k: int = 2,
                         residual_rel: float = 1e-10) -> SpectrumResult:
    """k smallest eigenpairs of -L via Sturm bisection plus inverse iteration
    on the mass-symmetrized tridiagonal matrix."""
    if not 1 <= k <= 6:
        raise DomainError("k must be between 1 and 6")
    diag, off = op.symmetrized()
    if k > diag.size:
        raise DomainError("k exceeds the number of unknowns")
    vals, vecs = eigh_tridiagonal(diag, off, select="i", select_range=(0, k - 1))
    scale = float(np.max(np.abs(diag)) + 2.0 * np.max(np.abs(off)))
    residuals = np.empty(k)
    for j in range(k):
        v = vecs[:, j]
        tv = diag * v
        tv[:-1] += off * v[1:]
        tv[1:] += off * v[:-1]
        residuals[j] = float(np.linalg.norm(tv - vals[j] * v) / (scale * np.linalg.norm(v)))
    if np.any(residuals > residual_rel):
        raise ConvergenceFailure(f"eigenpair residuals {residuals} exceed {residual_rel}")
    inv_sqrt_m = 1.0 / np.sqrt(op.masses)
    vectors = vecs * inv_sqrt_m[:, None]
    nodes = op.grid.nodes
    return SpectrumResult(eigenvalues=np.maximum(vals, 0.0), residuals=residuals,
                          grid_size=op.grid.nodes.size, bc=op.bc, vectors=vectors,
                          window=(float(nodes[0]), float(nodes[-1])))


def killed_gap(spec: DiffusionSpec, a: float, side: Side, size: Optional[int] = None,
               k: int = 1) -> SpectrumResult:
    """Smallest Dirichlet eigenvalue of the generator killed at a on one side;
    the far (truncated, non-exit) end is reflected."""
    sgn = _check_side(side)
    require_certificate(spec)
    lo, hi = build_scale(spec).window
    if not lo < a < hi:
        raise DomainError(f"anchor {a} outside the window ({lo}, {hi})")
    if sgn > 0:
        grid = build_grid(spec, size=size, window=(a, hi))
        op = build_operator(grid, ("dirichlet", "neumann"))
    else:
        grid = build_grid(spec, size=size, window=(lo, a))
        op = build_operator(grid, ("neumann", "dirichlet"))
    return smallest_eigenvalues(op, k=max(k, 1),
                                residual_rel=spec.tolerances.eig_residual_rel)


def full_line_gap(spec: DiffusionSpec, size: Optional[int] = None, k: int = 2) -> SpectrumResult:
    """Spectral gap of the conservative generator on the truncated line
    (Neumann both ends); gamma is the second eigenvalue."""
    require_certificate(spec)
    grid = build_grid(spec, size=size)
    op = build_operator(grid, ("neumann", "neumann"))
    return smallest_eigenvalues(op, k=max(k, 2),
                                residual_rel=spec.tolerances.eig_residual_rel)


def variational_check(op: DiscreteOperator, F, mode: str = "poincare") -> float:
    """Rayleigh-type quotient of a test function on the grid.

    mode="poincare" (Neumann/Neumann): m-weighted variance over energy; the
    quotient is at most c_P up to discretization error.  mode="hardy"
    (one Dirichlet end): m-norm squared over energy for F vanishing at the
    killed end; at most the Hardy constant of that half line.
    """
    F = np.asarray(F, dtype=float)
    if F.shape != (op.unknowns.size,):
        raise DomainError(f"F must have one value per unknown node ({op.unknowns.size})")
    energy = op.energy(F)
    m = op.masses
    if mode == "poincare":
        if op.bc != ("neumann", "neumann"):
            raise DomainError("poincare mode needs Neumann boundaries")
        mean = float(np.sum(m * F) / np.sum(m))
        num = float(np.sum(m * (F - mean) ** 2))
    elif mode == "hardy":
        if "dirichlet" not in op.bc:
            raise DomainError("hardy mode needs a Dirichlet end at the anchor")
        num = float(np.sum(m * F ** 2))
    else:
        raise DomainError(f"unknown mode {mode!r}")
    if energy <= 0.0:
        raise DegenerateFunction("test function has zero Dirichlet energy")
    return num / energy
