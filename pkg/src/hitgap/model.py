"""Scale function and speed measure of a one-dimensional diffusion.

Normalization
-------------
For SDE coefficients ``dX = b(X) dt + sigma(X) dW`` we take

    S(x)  = int_{x0}^{x} exp( -int_{x0}^{u} 2 b(v)/sigma^2(v) dv ) du
    m'(x) = 2 / ( sigma^2(x) * S'(x) )

so that the generator is ``(sigma^2/2) f'' + b f' = d/dm d/dS``.  With this
choice Brownian motion (``sigma = 1``) on (0, 1) has ``E_x T_{0,1} = x(1-x)``.
Any global rescaling of S is compensated by the inverse rescaling of m; all
quantities computed downstream (hitting moments, spectral gaps, Hardy and
Poincare constants) are invariant under that rescaling.

State spaces
------------
``domain="line"`` means the diffusion lives on all of R and the window is a
numerical truncation: its tails must carry negligible speed mass before the
half-line and full-line analyses are allowed (see RecurrenceCertificate).
``domain="interval"`` means the window *is* the state space (used for
bounded-interval surrogates); half-line quantities are refused for it.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.integrate import cumulative_simpson, solve_ivp

from .errors import ConfigError, InfiniteMass, NonIncreasingScale, QuadratureFailure

__all__ = [
    "Tolerances",
    "DiffusionSpec",
    "ScaleFunction",
    "SpeedMeasure",
    "RecurrenceCertificate",
    "build_scale",
    "build_speed",
    "certify_recurrence",
]


@dataclass(frozen=True)
class Tolerances:
    """Numerical knobs shared across the analysis routes."""

    quad_rel: float = 1e-9            # relative tolerance of cumulative quadratures
    tail_epsilon: float = 1e-10       # admissible speed mass outside the window, relative
    scale_divergence: float = 1e6     # |S(edge)| must exceed this multiple of the central scale
    dense_grid: int = 4001            # quadrature grid size for Green-operator applications
    ratio_depth: int = 40             # moment depth for the exponential-moment estimate
    ratio_stab_rel: float = 5e-3      # accept when the last ratio estimates agree this well
    ratio_tail_len: int = 5           # number of trailing extrapolated ratios compared
    bracket_rel: float = 1e-3         # slack used when checking sandwich inequalities
    eig_residual_rel: float = 1e-10   # eigenpair residual bound, relative to the matrix norm
    spectral_grid: int = 4000         # node count for the discretized generator
    max_window_width: float = 1e5     # give up auto-extending the window past this width
    phi_cap: float = 690.0            # stop integrating where exp(phi) would overflow


def _as_field(f: Callable) -> Callable:
    """Wrap a scalar-or-vector coefficient function into a vectorized one."""

    def g(x):
        x = np.asarray(x, dtype=float)
        out = np.asarray(f(x), dtype=float)
        if out.shape != x.shape:
            out = np.broadcast_to(out, x.shape).copy()
        return out

    return g


@dataclass(frozen=True, eq=False)
class ScaleFunction:
    """Strictly increasing natural-scale coordinate with S(x0) = 0."""

    value: Callable
    density: Callable                 # S'(x) > 0 (absolutely continuous case)
    x0: float
    window: tuple[float, float]
    nodes: np.ndarray
    node_values: np.ndarray

    def __call__(self, x):
        return self.value(x)

    def inverse(self, s: float) -> float:
        """Invert S on the window by bisection (S is strictly increasing)."""
        lo, hi = self.window
        vlo, vhi = float(self.value(lo)), float(self.value(hi))
        if not vlo <= s <= vhi:
            raise ValueError(f"scale value {s} outside [{vlo}, {vhi}]")
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if float(self.value(mid)) < s:
                lo = mid
            else:
                hi = mid
            if hi - lo <= 1e-14 * (1.0 + abs(mid)):
                break
        return 0.5 * (lo + hi)

    def check_monotone(self) -> None:
        if not np.all(np.diff(self.node_values) > 0):
            raise NonIncreasingScale("tabulated scale values are not strictly increasing")


@dataclass(frozen=True, eq=False)
class SpeedMeasure:
    """Speed measure: absolutely continuous density plus optional finite atoms."""

    density: Callable                 # continuous part m'(x) >= 0
    atoms: tuple[tuple[float, float], ...]
    cumulative: Callable              # M(t) = m((-inf, t]), atoms included
    total_mass: float                 # best estimate of m(R): window + tail estimates
    window: tuple[float, float]
    tail_mass: tuple[float, float]    # estimated mass below/above the window

    def mass_above_open(self, x) -> np.ndarray:
        """m(]x, +inf[): total minus M(x); the atom at x (if any) is excluded."""
        return self.total_mass - np.asarray(self.cumulative(x), dtype=float)

    def mass_below_open(self, x) -> np.ndarray:
        """m(]-inf, x[): M(x) minus any atom sitting exactly at x."""
        x = np.asarray(x, dtype=float)
        out = np.asarray(self.cumulative(x), dtype=float)
        for pos, mass in self.atoms:
            out = out - np.where(x == pos, mass, 0.0)
        return out

    def mass_closed(self, a: float, b: float) -> float:
        """m([a, b]) for a <= b, including atoms at both endpoints."""
        if b < a:
            raise ValueError("empty interval")
        val = float(self.cumulative(b)) - float(self.cumulative(a))
        for pos, mass in self.atoms:
            if pos == a:
                val += mass
        return val

    def quantile(self, q: float) -> float:
        """Smallest t with M(t) >= q * total mass, by bisection on the window."""
        if not 0.0 < q < 1.0:
            raise ValueError("quantile level must be in (0, 1)")
        target = q * self.total_mass
        lo, hi = self.window
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if float(self.cumulative(mid)) < target:
                lo = mid
            else:
                hi = mid
            if hi - lo <= 1e-13 * (1.0 + abs(mid)):
                break
        return 0.5 * (lo + hi)


@dataclass(frozen=True)
class RecurrenceCertificate:
    """Numerical evidence for positive recurrence on the chosen window."""

    scale_diverges_left: bool
    scale_diverges_right: bool
    finite_mass: bool
    scale_left: float
    scale_right: float
    tail_mass_left: float
    tail_mass_right: float
    tail_ratio: float
    window: tuple[float, float]

    @property
    def passed(self) -> bool:
        return self.scale_diverges_left and self.scale_diverges_right and self.finite_mass


@dataclass(frozen=True, eq=False)
class DiffusionSpec:
    """A diffusion given by SDE coefficients or directly by (scale, speed).

    Immutable after construction; all derived curves are cached, so instances
    are safe for concurrent read access.
    """

    drift: Optional[Callable] = None
    sigma: Optional[Callable] = None
    scale_value: Optional[Callable] = None
    scale_density: Optional[Callable] = None
    speed_density: Optional[Callable] = None
    x0: float = 0.0
    window: Optional[tuple[float, float]] = None
    domain: str = "line"              # "line" | "interval"
    atoms: tuple[tuple[float, float], ...] = ()
    tolerances: Tolerances = field(default_factory=Tolerances)
    label: str = ""

    def __post_init__(self):
        sde = self.drift is not None or self.sigma is not None
        direct = self.scale_value is not None or self.speed_density is not None
        if sde == direct:
            raise ConfigError("give either SDE coefficients (drift, sigma) or direct (scale, speed)")
        if sde and (self.drift is None or self.sigma is None):
            raise ConfigError("both drift and sigma are required for an SDE spec")
        if direct and (self.scale_value is None or self.speed_density is None):
            raise ConfigError("both scale and speed are required for a direct spec")
        if direct and self.window is None:
            raise ConfigError("direct (scale, speed) specs need an explicit window")
        if self.domain not in ("line", "interval"):
            raise ConfigError(f"unknown domain {self.domain!r}")
        if self.domain == "interval" and self.window is None:
            raise ConfigError("interval-domain specs need an explicit window")
        if self.window is not None and not self.window[0] < self.window[1]:
            raise ConfigError("window must satisfy lo < hi")
        if self.window is not None and not self.window[0] <= self.x0 <= self.window[1]:
            raise ConfigError("reference point x0 must lie inside the window")
        for pos, mass in self.atoms:
            if mass < 0:
                raise ConfigError("atom masses must be nonnegative")

    @classmethod
    def from_sde(cls, drift, sigma, x0: float = 0.0, window=None, domain: str = "line",
                 atoms: Sequence[tuple[float, float]] = (), tolerances: Tolerances = Tolerances(),
                 label: str = "") -> "DiffusionSpec":
        return cls(drift=_as_field(drift), sigma=_as_field(sigma), x0=x0,
                   window=tuple(window) if window is not None else None, domain=domain,
                   atoms=tuple(tuple(a) for a in atoms), tolerances=tolerances, label=label)

    @classmethod
    def from_direct(cls, scale_value, speed_density, scale_density=None, x0: float = 0.0,
                    window=None, domain: str = "line", atoms: Sequence[tuple[float, float]] = (),
                    tolerances: Tolerances = Tolerances(), label: str = "") -> "DiffusionSpec":
        return cls(scale_value=_as_field(scale_value),
                   scale_density=_as_field(scale_density) if scale_density is not None else None,
                   speed_density=_as_field(speed_density), x0=x0,
                   window=tuple(window) if window is not None else None, domain=domain,
                   atoms=tuple(tuple(a) for a in atoms), tolerances=tolerances, label=label)

    @classmethod
    def from_tables(cls, scale_table, speed_table, **kwargs) -> "DiffusionSpec":
        """Tabulated S and speed density; columns (x, value), linear interpolation."""
        sx, sv = (np.asarray(c, dtype=float) for c in scale_table)
        mx, mv = (np.asarray(c, dtype=float) for c in speed_table)
        if not np.all(np.diff(sx) > 0) or not np.all(np.diff(mx) > 0):
            raise ConfigError("table abscissae must be strictly increasing")
        if not np.all(np.diff(sv) > 0):
            raise NonIncreasingScale("tabulated scale values are not strictly increasing")
        if np.any(mv < 0):
            raise ConfigError("speed density table has negative values")
        slopes = np.diff(sv) / np.diff(sx)

        def scale_value(x):
            return np.interp(np.asarray(x, dtype=float), sx, sv)

        def scale_density(x):
            idx = np.clip(np.searchsorted(sx, np.asarray(x, dtype=float), side="right") - 1,
                          0, len(slopes) - 1)
            return slopes[idx]

        def speed_density(x):
            return np.interp(np.asarray(x, dtype=float), mx, mv)

        kwargs.setdefault("window", (float(max(sx[0], mx[0])), float(min(sx[-1], mx[-1]))))
        return cls.from_direct(scale_value, speed_density, scale_density=scale_density, **kwargs)

    def with_window(self, window: tuple[float, float]) -> "DiffusionSpec":
        return dataclasses.replace(self, window=tuple(window))

    @property
    def is_sde(self) -> bool:
        return self.drift is not None


class _Curves:
    """Built scale/speed curves plus tail diagnostics (internal)."""

    def __init__(self, spec: DiffusionSpec, scale: ScaleFunction, speed: SpeedMeasure,
                 tail_infinite: bool, tail_ratio: float):
        self.spec = spec
        self.scale = scale
        self.speed = speed
        self.tail_infinite = tail_infinite
        self.tail_ratio = tail_ratio


def _integrate_sde(spec: DiffusionSpec, lo: float, hi: float):
    """Integrate [phi, S, W] over the window; returns stitched evaluators.

    phi(x) = -int_{x0}^x 2 b / sigma^2,  S' = exp(phi),  W' = 2 exp(-phi)/sigma^2.
    Integration stops early (capped) where phi would overflow exp().
    """
    tol = spec.tolerances
    cap = tol.phi_cap

    def rhs(x, y):
        b = float(spec.drift(x))
        s2 = float(spec.sigma(x)) ** 2
        p = y[0]
        return [-2.0 * b / s2,
                np.exp(min(p, cap + 10.0)),
                2.0 * np.exp(min(-p, cap + 10.0)) / s2]

    def cap_event(x, y):
        return max(abs(y[0]), 1.0) - cap

    cap_event.terminal = True

    sols = {}
    edges = {}
    capped = {}
    for side, end in (("right", hi), ("left", lo)):
        if end == spec.x0:
            sols[side] = None
            edges[side] = spec.x0
            capped[side] = False
            continue
        res = solve_ivp(rhs, (spec.x0, end), [0.0, 0.0, 0.0], method="DOP853",
                        dense_output=True, rtol=1e-12, atol=[1e-14, 1e-14, 1e-15],
                        events=[cap_event])
        if not res.success and res.status != 1:
            raise QuadratureFailure(f"scale/speed integration failed: {res.message}")
        sols[side] = res.sol
        edges[side] = float(res.t[-1])
        capped[side] = res.status == 1
    return sols, edges, capped


def _stitch(sols, x0: float, lo: float, hi: float, component: int):
    left, right = sols["left"], sols["right"]

    def f(x):
        x = np.asarray(x, dtype=float)
        scalar = x.ndim == 0
        xs = np.clip(np.atleast_1d(x).astype(float), lo, hi)
        out = np.empty_like(xs)
        mask = xs < x0
        if mask.any():
            out[mask] = left(xs[mask])[component] if left is not None else 0.0
        if (~mask).any():
            out[~mask] = right(xs[~mask])[component] if right is not None else 0.0
        return float(out[0]) if scalar else out

    return f


def _sigma2(spec: DiffusionSpec):
    def f(x):
        return spec.sigma(x) ** 2
    return f


def _check_sigma_positive(spec: DiffusionSpec, lo: float, hi: float) -> None:
    xs = np.linspace(lo, hi, 257)
    vals = spec.sigma(xs)
    if not np.all(np.isfinite(vals)) or np.any(vals <= 0):
        raise ConfigError("sigma must be finite and strictly positive on the window")


def _tail_estimate(spec: DiffusionSpec, phi_fn, edge: float, direction: int,
                   density_at) -> tuple[float, bool]:
    """Estimate speed mass beyond a window edge by a short extension integral
    plus geometric extrapolation of the density decay; (estimate, infinite?)."""
    width = abs(edge - spec.x0) if edge != spec.x0 else 1.0
    step = max(0.5 * width, 1.0)
    xs = edge + direction * np.linspace(0.0, step, 129)

    def rhs(x, y):
        b = float(spec.drift(x))
        s2 = float(spec.sigma(x)) ** 2
        return [-2.0 * b / s2]

    res = solve_ivp(rhs, (edge, edge + direction * step), [float(phi_fn(edge))],
                    method="DOP853", dense_output=True, rtol=1e-10, atol=1e-12)
    if not res.success:
        return float("inf"), True
    phis = res.sol(xs)[0]
    with np.errstate(over="ignore"):
        dens = 2.0 * np.exp(np.clip(-phis, None, 700.0)) / spec.sigma(xs) ** 2
    ext_mass = float(np.trapezoid(dens, dx=step / 128.0))
    d_edge = float(density_at(edge))
    d_far = float(dens[-1])
    if not np.isfinite(ext_mass) or d_far >= d_edge * 0.999999:
        return float("inf"), True
    ratio = d_far / max(d_edge, 1e-300)
    # extension already holds mass over one step; remaining tail decays at
    # least geometrically with per-step factor <= ratio
    remaining = ext_mass * ratio / max(1.0 - ratio, 1e-12)
    return ext_mass + remaining, False


def _build_from_sde(spec: DiffusionSpec) -> _Curves:
    tol = spec.tolerances
    if spec.window is not None:
        windows = [tuple(spec.window)]
        auto = False
    else:
        windows = []
        half_lo = half_hi = 2.0
        for _ in range(18):
            windows.append((spec.x0 - half_lo, spec.x0 + half_hi))
            half_lo *= 2.0
            half_hi *= 2.0
        auto = True

    last = None
    for lo, hi in windows:
        _check_sigma_positive(spec, lo, hi)
        sols, edges, capped = _integrate_sde(spec, lo, hi)
        lo_eff, hi_eff = edges["left"], edges["right"]
        phi = _stitch(sols, spec.x0, lo_eff, hi_eff, 0)
        S = _stitch(sols, spec.x0, lo_eff, hi_eff, 1)
        W = _stitch(sols, spec.x0, lo_eff, hi_eff, 2)

        def density(x, phi=phi, spec=spec):
            with np.errstate(over="ignore"):
                return 2.0 * np.exp(np.clip(-np.asarray(phi(x)), None, 700.0)) / spec.sigma(x) ** 2

        mass_left = -float(W(lo_eff))
        mass_right = float(W(hi_eff))
        if spec.domain == "interval":
            tail_lo = tail_hi = 0.0
            inf_lo = inf_hi = False
        else:
            # at a capped edge phi hit +/-cap: +cap means the speed density is
            # ~exp(-cap) there (negligible tail), -cap means it is exploding
            if capped["left"]:
                tail_lo, inf_lo = (0.0, False) if float(phi(lo_eff)) > 0 else (float("inf"), True)
            else:
                tail_lo, inf_lo = _tail_estimate(spec, phi, lo_eff, -1, density)
            if capped["right"]:
                tail_hi, inf_hi = (0.0, False) if float(phi(hi_eff)) > 0 else (float("inf"), True)
            else:
                tail_hi, inf_hi = _tail_estimate(spec, phi, hi_eff, +1, density)

        window_mass = mass_left + mass_right
        infinite = inf_lo or inf_hi
        ratio = float("inf") if infinite else (tail_lo + tail_hi) / max(window_mass, 1e-300)
        last = (lo_eff, hi_eff, sols, phi, S, W, density, mass_left, window_mass,
                tail_lo, tail_hi, infinite, ratio)
        if spec.domain == "interval":
            break
        if not auto:
            break
        if not infinite and ratio <= tol.tail_epsilon:
            break
        if hi - lo >= tol.max_window_width:
            break

    (lo_eff, hi_eff, sols, phi, S, W, density, mass_left, window_mass,
     tail_lo, tail_hi, infinite, ratio) = last

    if spec.domain == "interval":
        tail_lo = tail_hi = 0.0
        infinite = False
        ratio = 0.0

    nodes = np.linspace(lo_eff, hi_eff, 513)
    node_values = np.asarray(S(nodes), dtype=float)
    scale = ScaleFunction(value=S, density=lambda x, phi=phi: np.exp(np.asarray(phi(x))),
                          x0=spec.x0, window=(lo_eff, hi_eff),
                          nodes=nodes, node_values=node_values)
    scale.check_monotone()

    atoms = tuple((p, m) for p, m in spec.atoms)
    atom_pos = np.array([p for p, _ in atoms])
    atom_mass = np.array([m for _, m in atoms])
    if atoms and (atom_pos.min() < lo_eff or atom_pos.max() > hi_eff):
        raise ConfigError("atoms must sit inside the window")

    def cumulative(t, W=W, mass_left=mass_left, tail_lo=tail_lo):
        t = np.asarray(t, dtype=float)
        return np.asarray(W(t), dtype=float) + mass_left + tail_lo

    if atoms:
        order = np.argsort(atom_pos)
        apos, amass = atom_pos[order], atom_mass[order]
        acum = np.cumsum(np.concatenate(([0.0], amass)))
        inner = cumulative

        def cumulative(t, inner=inner, apos=apos, acum=acum):
            t = np.asarray(t, dtype=float)
            idx = np.searchsorted(apos, t, side="right")
            return inner(t) + acum[idx]

    total = window_mass + tail_lo + tail_hi + float(atom_mass.sum() if atoms else 0.0)
    speed = SpeedMeasure(density=density, atoms=atoms, cumulative=cumulative,
                         total_mass=total, window=(lo_eff, hi_eff),
                         tail_mass=(tail_lo, tail_hi))
    return _Curves(spec, scale, speed, infinite, ratio)


def _build_from_direct(spec: DiffusionSpec) -> _Curves:
    lo, hi = spec.window
    S = spec.scale_value
    s_x0 = float(S(spec.x0))

    def value(x, S=S, s_x0=s_x0, lo=lo, hi=hi):
        return np.asarray(S(np.clip(np.asarray(x, dtype=float), lo, hi))) - s_x0

    if spec.scale_density is not None:
        density_S = spec.scale_density
    else:
        def density_S(x, S=S, lo=lo, hi=hi):
            x = np.asarray(x, dtype=float)
            h = 1e-6 * (hi - lo)
            return (np.asarray(S(np.minimum(x + h, hi))) - np.asarray(S(np.maximum(x - h, lo)))) / (
                np.minimum(x + h, hi) - np.maximum(x - h, lo))

    grid = np.linspace(lo, hi, 8193)
    dens_vals = np.asarray(spec.speed_density(grid), dtype=float)
    if np.any(dens_vals < 0) or not np.all(np.isfinite(dens_vals)):
        raise QuadratureFailure("speed density must be finite and nonnegative on the window")
    cum = cumulative_simpson(dens_vals, x=grid, initial=0.0)

    atoms = tuple((float(p), float(m)) for p, m in spec.atoms)
    apos = np.array(sorted(p for p, _ in atoms))
    amass = np.array([m for p, m in sorted(atoms)])

    def cumulative(t):
        t = np.asarray(t, dtype=float)
        base = np.interp(np.clip(t, lo, hi), grid, cum)
        if len(apos):
            idx = np.searchsorted(apos, t, side="right")
            base = base + np.cumsum(np.concatenate(([0.0], amass)))[idx]
        return base

    total = float(cum[-1]) + float(amass.sum() if len(amass) else 0.0)
    nodes = np.linspace(lo, hi, 513)
    node_values = np.asarray(value(nodes), dtype=float)
    scale = ScaleFunction(value=value, density=density_S, x0=spec.x0, window=(lo, hi),
                          nodes=nodes, node_values=node_values)
    scale.check_monotone()
    speed = SpeedMeasure(density=spec.speed_density, atoms=atoms, cumulative=cumulative,
                         total_mass=total, window=(lo, hi), tail_mass=(0.0, 0.0))
    # direct specs carry no information beyond the window: tails unknown, and
    # treated as absent for interval domains / direct test measures
    return _Curves(spec, scale, speed, False, 0.0)


@lru_cache(maxsize=128)
def _build(spec: DiffusionSpec) -> _Curves:
    return _build_from_sde(spec) if spec.is_sde else _build_from_direct(spec)


def build_scale(spec: DiffusionSpec) -> ScaleFunction:
    """Construct the scale function S with S(x0) = 0, strictly increasing."""
    return _build(spec).scale


def build_speed(spec: DiffusionSpec) -> SpeedMeasure:
    """Construct the speed measure; raises InfiniteMass if its tails diverge."""
    curves = _build(spec)
    if spec.domain == "line" and curves.tail_infinite:
        raise InfiniteMass("speed measure has divergent tails; diffusion is not positively recurrent")
    return curves.speed


def certify_recurrence(spec: DiffusionSpec) -> RecurrenceCertificate:
    """Evaluate the recurrence flags; a failing certificate is data, not an error."""
    curves = _build(spec)
    scale, speed = curves.scale, curves.speed
    lo, hi = scale.window
    tol = spec.tolerances
    s_lo, s_hi = float(scale(lo)), float(scale(hi))
    central = max(float(scale(0.5 * (spec.x0 + hi))) - 0.0,
                  0.0 - float(scale(0.5 * (spec.x0 + lo))), 1e-300)
    if spec.domain == "interval":
        diverges_left = diverges_right = False
        finite = True
    else:
        diverges_right = s_hi > tol.scale_divergence * central
        diverges_left = -s_lo > tol.scale_divergence * central
        finite = (not curves.tail_infinite) and curves.tail_ratio <= tol.tail_epsilon
    return RecurrenceCertificate(
        scale_diverges_left=bool(diverges_left),
        scale_diverges_right=bool(diverges_right),
        finite_mass=bool(finite),
        scale_left=s_lo, scale_right=s_hi,
        tail_mass_left=speed.tail_mass[0], tail_mass_right=speed.tail_mass[1],
        tail_ratio=curves.tail_ratio, window=(lo, hi))
