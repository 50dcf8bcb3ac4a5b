"""Green kernels, the Kac moment recursion, and the moment-series gap estimate.

Moments are kept normalized, mu_n(x) = E_x T^n / n!, so one application of the
Green operator advances the recursion by one order: mu_n = G mu_{n-1}, mu_0 = 1.
The radius of convergence of sum lambda^n mu_n(x) is the exponential-moment
threshold of T, independent of the starting point x ("all or none"), and is
estimated from the stabilized ratios mu_n / mu_{n+1}.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.integrate import cumulative_simpson
from scipy.interpolate import CubicSpline

from .errors import CertificateRequired, DomainError, NotStabilizedWarning, QuadratureFailure
from .model import DiffusionSpec, build_scale, build_speed, certify_recurrence

__all__ = [
    "GreenKernel",
    "MomentTable",
    "CoefficientTable",
    "LambdaEstimate",
    "green_bounded",
    "green_halfline",
    "exit_moments",
    "hitting_moments",
    "coefficient_table",
    "estimate_lambda",
    "jk_apply",
]

Side = str  # "plus" | "minus"


def _check_side(side: Side) -> int:
    if side == "plus":
        return +1
    if side == "minus":
        return -1
    raise DomainError(f"side must be 'plus' or 'minus', got {side!r}")


def require_certificate(spec: DiffusionSpec) -> None:
    cert = certify_recurrence(spec)
    if not cert.passed:
        raise CertificateRequired(
            "half-line quantities need a passing recurrence certificate; got "
            f"diverges=({cert.scale_diverges_left}, {cert.scale_diverges_right}), "
            f"finite_mass={cert.finite_mass}")


@dataclass(frozen=True, eq=False)
class GreenKernel:
    """Occupation kernel of the process killed at the interval boundary."""

    kind: str                      # "bounded" | "upper" | "lower"
    a: float                       # left endpoint (bounded/upper) or -inf
    b: float                       # right endpoint (bounded/lower) or +inf
    scale: Callable

    @classmethod
    def bounded(cls, spec: DiffusionSpec, a: float, b: float) -> "GreenKernel":
        if not a < b:
            raise DomainError("bounded kernel needs a < b")
        return cls(kind="bounded", a=a, b=b, scale=build_scale(spec))

    @classmethod
    def halfline(cls, spec: DiffusionSpec, side: Side, a: float) -> "GreenKernel":
        sgn = _check_side(side)
        if sgn > 0:
            return cls(kind="upper", a=a, b=np.inf, scale=build_scale(spec))
        return cls(kind="lower", a=-np.inf, b=a, scale=build_scale(spec))

    def __call__(self, x, y):
        S = self.scale
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if self.kind == "bounded":
            if np.any(x < self.a) or np.any(x > self.b) or np.any(y < self.a) or np.any(y > self.b):
                raise DomainError(f"arguments outside [{self.a}, {self.b}]")
            sa, sb = float(S(self.a)), float(S(self.b))
            sx, sy = np.asarray(S(x)), np.asarray(S(y))
            lo, hi = np.minimum(sx, sy), np.maximum(sx, sy)
            return (sb - hi) * (lo - sa) / (sb - sa)
        if self.kind == "upper":
            if np.any(x < self.a) or np.any(y < self.a):
                raise DomainError(f"arguments below {self.a}")
            sa = float(S(self.a))
            return np.minimum(np.asarray(S(x)), np.asarray(S(y))) - sa
        if np.any(x > self.b) or np.any(y > self.b):
            raise DomainError(f"arguments above {self.b}")
        sb = float(S(self.b))
        return sb - np.maximum(np.asarray(S(x)), np.asarray(S(y)))


def green_bounded(spec: DiffusionSpec, a: float, b: float, x, y):
    """G(a,b,x,y) on a bounded interval; symmetric, vanishing at the boundary."""
    return GreenKernel.bounded(spec, a, b)(x, y)


def green_halfline(spec: DiffusionSpec, side: Side, a: float, x, xi):
    """Monotone limit of the bounded kernel as the far endpoint goes to infinity."""
    return GreenKernel.halfline(spec, side, a)(x, xi)


class _DenseOperator:
    """Green-operator application on a dense uniform grid.

    The kernel has a kink on the diagonal, but both one-sided pieces are
    products of smooth weights with the integrand, so the application reduces
    to cumulative (prefix/suffix) integrals of smooth functions against the
    speed density plus exact atom sums.
    """

    def __init__(self, spec: DiffusionSpec, lo: float, hi: float, n: Optional[int] = None):
        self.spec = spec
        scale = build_scale(spec)
        speed = build_speed(spec)
        n = n or spec.tolerances.dense_grid
        if n % 2 == 0:
            n += 1
        self.y = np.linspace(lo, hi, n)
        self.h = (hi - lo) / (n - 1)
        self.S = np.asarray(scale(self.y), dtype=float)
        self.mdens = np.asarray(speed.density(self.y), dtype=float)
        if not np.all(np.isfinite(self.S)) or not np.all(np.isfinite(self.mdens)):
            raise QuadratureFailure("non-finite scale or speed density values on the grid")
        atoms = [(p, mass) for p, mass in speed.atoms if lo < p <= hi and mass > 0]
        atoms.sort()
        self.atom_pos = np.array([p for p, _ in atoms])
        self.atom_mass = np.array([m for _, m in atoms])
        self.tail_mass_hi = speed.tail_mass[1]
        self.tail_mass_lo = speed.tail_mass[0]

    def _atom_vals(self, integrand: np.ndarray) -> np.ndarray:
        return np.interp(self.atom_pos, self.y, integrand)

    def prefix(self, integrand: np.ndarray) -> np.ndarray:
        """P(x_i) = int over (lo, x_i] of integrand dm, on the grid."""
        base = cumulative_simpson(integrand * self.mdens, dx=self.h, initial=0.0)
        if len(self.atom_pos):
            vals = self._atom_vals(integrand) * self.atom_mass
            steps = np.concatenate(([0.0], np.cumsum(vals)))
            base = base + steps[np.searchsorted(self.atom_pos, self.y, side="right")]
        return base

    def suffix(self, integrand: np.ndarray) -> np.ndarray:
        """Q(x_i) = int over (x_i, hi] of integrand dm, on the grid."""
        pre = self.prefix(integrand)
        return pre[-1] - pre


def _apply_bounded(op: _DenseOperator, f: np.ndarray) -> np.ndarray:
    sa, sb = op.S[0], op.S[-1]
    P = op.prefix((op.S - sa) * f)
    Q = op.suffix((sb - op.S) * f)
    return ((sb - op.S) * P + (op.S - sa) * Q) / (sb - sa)


def _apply_upper(op: _DenseOperator, f: np.ndarray) -> np.ndarray:
    sa = op.S[0]
    return op.prefix((op.S - sa) * f) + (op.S - sa) * op.suffix(f)


def _apply_lower(op: _DenseOperator, f: np.ndarray) -> np.ndarray:
    sb = op.S[-1]
    pre = op.prefix(f)
    return (sb - op.S) * pre + op.suffix((sb - op.S) * f)


@dataclass(frozen=True, eq=False)
class MomentTable:
    """Normalized moments mu_n(x) = E_x T^n / n! on a grid, rows n = 0..depth.

    Rows are stored as (coefficient, log-scale) pairs so the recursion never
    overflows; ``values`` materializes plain floats (inf past ~1e308).
    """

    grid: np.ndarray
    coeffs: np.ndarray             # shape (depth+1, len(grid))
    logscale: np.ndarray           # shape (depth+1,)
    target: str
    tail_budget: float = 0.0

    @property
    def depth(self) -> int:
        return self.coeffs.shape[0] - 1

    @property
    def values(self) -> np.ndarray:
        with np.errstate(over="ignore"):
            return self.coeffs * np.exp(self.logscale)[:, None]

    def row(self, n: int) -> np.ndarray:
        with np.errstate(over="ignore"):
            return self.coeffs[n] * np.exp(self.logscale[n])

    def ratios(self, column: int) -> np.ndarray:
        """mu_n / mu_{n+1} at one grid point, overflow-safe."""
        c = self.coeffs[:, column]
        with np.errstate(divide="ignore", invalid="ignore"):
            r = c[:-1] / c[1:] * np.exp(self.logscale[:-1] - self.logscale[1:])
        return r

    def to_csv(self, path) -> None:
        vals = self.values
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("x,n,mu_n\n")
            for j, x in enumerate(self.grid):
                for n in range(self.coeffs.shape[0]):
                    fh.write(f"{float(x)!r},{n},{float(vals[n, j])!r}\n")


def _recurse_moments(op: _DenseOperator, apply_fn, depth: int, grid: np.ndarray,
                     target: str, boundary_zero: Optional[int] = None) -> MomentTable:
    """Run mu_n = G mu_{n-1} on the dense grid and sample the requested grid."""
    dense_rows = np.empty((depth + 1, op.y.size))
    logs = np.zeros(depth + 1)
    f = np.ones(op.y.size)
    dense_rows[0] = f
    tail_budget = 0.0
    for n in range(1, depth + 1):
        f = apply_fn(op, f)
        if boundary_zero is not None:
            f[boundary_zero] = 0.0
        if not np.all(np.isfinite(f)):
            raise QuadratureFailure(f"moment recursion produced non-finite values at depth {n}")
        if np.any(f < -1e-12 * max(float(f.max()), 1.0)):
            raise QuadratureFailure(f"moment recursion produced negative values at depth {n}")
        np.maximum(f, 0.0, out=f)
        scale = float(f.max())
        if scale <= 0.0:
            raise QuadratureFailure(f"moment recursion vanished identically at depth {n}")
        f = f / scale
        logs[n] = logs[n - 1] + np.log(scale)
        dense_rows[n] = f
        edge_tail = float(f[-1]) * op.tail_mass_hi + float(f[0]) * op.tail_mass_lo
        tail_budget = max(tail_budget, edge_tail)
    cols = np.vstack([CubicSpline(op.y, dense_rows[n])(grid) for n in range(depth + 1)])
    np.maximum(cols, 0.0, out=cols)
    return MomentTable(grid=np.asarray(grid, dtype=float), coeffs=cols, logscale=logs,
                       target=target, tail_budget=tail_budget)


def exit_moments(spec: DiffusionSpec, a: float, b: float, grid=None, depth: int = 8) -> MomentTable:
    """Normalized moments of the exit time from (a, b) via the Kac recursion."""
    if not a < b:
        raise DomainError("need a < b")
    if grid is None:
        grid = np.linspace(a, b, 23)[1:-1]
    grid = np.asarray(grid, dtype=float)
    if np.any(grid <= a) or np.any(grid >= b):
        raise DomainError("grid points must lie strictly inside (a, b)")
    op = _DenseOperator(spec, a, b)
    return _recurse_moments(op, _apply_bounded, depth, grid, target=f"exit ({a}, {b})")


def hitting_moments(spec: DiffusionSpec, a: float, side: Side, grid=None,
                    depth: int = 8) -> MomentTable:
    """Normalized moments of the hitting time of a, started on the given side."""
    sgn = _check_side(side)
    require_certificate(spec)
    lo, hi = build_scale(spec).window
    if grid is None:
        edge = hi if sgn > 0 else lo
        grid = a + sgn * np.linspace(0.0, abs(edge - a), 23)[1:-1]
    grid = np.asarray(grid, dtype=float)
    if np.any(sgn * (grid - a) <= 0):
        raise DomainError(f"grid points must lie strictly on side {side} of {a}")
    if sgn > 0:
        op = _DenseOperator(spec, a, hi)
        table = _recurse_moments(op, _apply_upper, depth, grid,
                                 target=f"hitting a={a} side plus", boundary_zero=0)
    else:
        op = _DenseOperator(spec, lo, a)
        table = _recurse_moments(op, _apply_lower, depth, grid,
                                 target=f"hitting a={a} side minus", boundary_zero=-1)
    return table


@dataclass(frozen=True)
class CoefficientTable:
    """Exact integer triangle a_{n,l} from the J/K commutation bound."""

    rows: tuple[tuple[int, ...], ...]

    def value(self, n: int, l: int) -> int:
        if n < 0 or l < 0 or l > n or n >= len(self.rows):
            return 0
        return self.rows[n][l]

    def row_sum(self, n: int) -> int:
        return sum(self.rows[n])

    @property
    def depth(self) -> int:
        return len(self.rows) - 1


def coefficient_table(depth: int) -> CoefficientTable:
    """Build the triangle a_{0,0}=1, a_{k+1,l} = sum_{i<=l} a_{k,i}, exact integers."""
    if depth < 0:
        raise ValueError("depth must be nonnegative")
    rows = [(1,)]
    for k in range(depth):
        prev = rows[-1]
        acc = 0
        row = []
        for l in range(k + 2):
            if l < len(prev):
                acc += prev[l]
            row.append(acc)
        rows.append(tuple(row))
    return CoefficientTable(rows=tuple(rows))


@dataclass(frozen=True, eq=False)
class LambdaEstimate:
    """Moment-series estimate of the exponential-moment threshold at one anchor."""

    point: float
    side: Side
    estimate: float
    stabilized: bool
    diagnostics: dict = field(default_factory=dict)

    def to_json(self, path=None) -> str:
        payload = {
            "point": self.point,
            "side": self.side,
            "estimate": self.estimate,
            "stabilized": self.stabilized,
            "diagnostics": self.diagnostics,
        }
        text = json.dumps(payload, indent=2)
        if path is not None:
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(text)
        return text


def _aitken(seq: np.ndarray) -> np.ndarray:
    """Aitken delta-squared acceleration; falls back to the raw value where the
    second difference vanishes."""
    if seq.size < 3:
        return seq.copy()
    r0, r1, r2 = seq[:-2], seq[1:-1], seq[2:]
    denom = r2 - 2.0 * r1 + r0
    small = np.abs(denom) <= 1e-14 * np.maximum(np.abs(r2), 1e-300)
    with np.errstate(divide="ignore", invalid="ignore"):
        acc = r2 - (r2 - r1) ** 2 / denom
    return np.where(small, r2, acc)


def estimate_lambda(spec: DiffusionSpec, a: float, side: Side, xs=None,
                    depth: Optional[int] = None) -> LambdaEstimate:
    """Estimate lambda_a (+/-) as the stabilized limit of mu_n / mu_{n+1}.

    Per starting point the ratio sequence is Aitken-extrapolated; the estimate
    is accepted when the trailing extrapolated values agree to the configured
    relative tolerance and the per-point estimates agree likewise (the
    all-or-none property makes the limit x-independent).
    """
    sgn = _check_side(side)
    tol = spec.tolerances
    depth = depth or tol.ratio_depth
    speed = build_speed(spec)
    if xs is None:
        m_a = float(speed.cumulative(a))
        side_mass = speed.total_mass - m_a if sgn > 0 else m_a
        qs = (0.35, 0.7)
        targets = [m_a + q * side_mass if sgn > 0 else m_a - q * side_mass for q in qs]
        xs = []
        for t in targets:
            q = min(max(t / speed.total_mass, 1e-9), 1.0 - 1e-9)
            xs.append(speed.quantile(q))
        xs = [x for x in xs if sgn * (x - a) > 0]
        if not xs:
            lo, hi = build_scale(spec).window
            edge = hi if sgn > 0 else lo
            xs = [a + sgn * abs(edge - a) * f for f in (0.25, 0.5)]
    xs = np.asarray(sorted(set(float(x) for x in xs)), dtype=float)
    table = hitting_moments(spec, a, side, grid=xs, depth=depth)

    per_x = []
    tails = []
    ratio_seqs = {}
    aitken_seqs = {}
    for j in range(xs.size):
        ratios = table.ratios(j)
        ratios = ratios[np.isfinite(ratios)]
        acc = _aitken(ratios)
        k = min(tol.ratio_tail_len, acc.size)
        tail = acc[-k:]
        per_x.append(float(tail[-1]))
        spread = float(tail.max() - tail.min()) / max(abs(float(np.mean(tail))), 1e-300)
        tails.append(spread)
        ratio_seqs[repr(float(xs[j]))] = [float(v) for v in ratios]
        aitken_seqs[repr(float(xs[j]))] = [float(v) for v in acc]

    per_x_arr = np.array(per_x)
    estimate = float(per_x_arr[-1]) if per_x_arr.size else float("nan")
    cross = float(per_x_arr.max() - per_x_arr.min()) / max(abs(float(per_x_arr.mean())), 1e-300)
    stabilized = bool(max(tails) <= tol.ratio_stab_rel and cross <= tol.ratio_stab_rel)
    if not stabilized:
        warnings.warn(
            f"ratio sequence for a={a} side {side} not stabilized "
            f"(tail spread {max(tails):.3g}, cross-x spread {cross:.3g})",
            NotStabilizedWarning, stacklevel=2)
    estimate = max(estimate, 0.0)
    return LambdaEstimate(
        point=a, side=side, estimate=estimate, stabilized=stabilized,
        diagnostics={
            "per_x": {repr(float(x)): v for x, v in zip(xs, per_x)},
            "tail_spreads": tails,
            "cross_spread": cross,
            "depth": int(depth),
            "tail_budget": table.tail_budget,
            "ratio_sequences": ratio_seqs,
            "aitken_sequences": aitken_seqs,
        })


def jk_apply(spec: DiffusionSpec, which: str, f, a: float, grid=None) -> np.ndarray:
    """Apply J or K on the upper half-line at a.

    Jf(x) = (S(x)-S(a)) * int_(x,inf) f dm ;  Kf(x) = int_(a,x] (S-S(a)) f dm.
    ``f`` is a callable or an array over ``grid`` (defaults to the dense grid,
    returned values align with it).  G = J + K.
    """
    if which not in ("J", "K"):
        raise DomainError("which must be 'J' or 'K'")
    lo, hi = build_scale(spec).window
    op = _DenseOperator(spec, a, hi)
    if callable(f):
        fv = np.asarray(f(op.y), dtype=float)
        if fv.shape != op.y.shape:
            fv = np.broadcast_to(np.asarray(f(op.y), dtype=float), op.y.shape).copy()
    else:
        if grid is None:
            raise DomainError("array-valued f needs its grid")
        fv = np.interp(op.y, np.asarray(grid, dtype=float), np.asarray(f, dtype=float))
    if np.any(fv < 0):
        raise DomainError("J and K are defined for nonnegative f")
    sa = op.S[0]
    if which == "J":
        out = (op.S - sa) * op.suffix(fv)
    else:
        out = op.prefix((op.S - sa) * fv)
    if grid is None:
        return op.y, out
    return np.interp(np.asarray(grid, dtype=float), op.y, out)
