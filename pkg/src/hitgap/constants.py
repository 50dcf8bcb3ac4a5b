"""Characteristic constants of the diffusion and the sandwich report.

B_a^+ = sup_{x >= a} m(]x,inf[) (S(x)-S(a)) and its mirror B_a^- control,
within a factor of 4, the exponential-moment thresholds of hitting times, the
optimal Hardy constants of the half lines, and through them the Poincare
constant of the whole line.  This module computes the constants, the
exit-time bounds for bounded intervals, and assembles the cross-route report
with violation flags.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.integrate import cumulative_simpson
from scipy.optimize import minimize_scalar

from .errors import DomainError, WindowExceeded
from .kac import LambdaEstimate, Side, _check_side, require_certificate
from .model import DiffusionSpec, build_scale, build_speed
from .spectral import SpectrumResult

__all__ = [
    "BEntry",
    "BConstants",
    "LambdaBounds",
    "ExitBounds",
    "ScanResult",
    "AnchorReport",
    "ConstantsReport",
    "compute_B",
    "brute_force_B",
    "lambda_bounds",
    "exit_upper_constant",
    "exit_lower_constant",
    "vanishing_lambda_scan",
    "default_anchors",
    "assemble_report",
]


@dataclass(frozen=True)
class BEntry:
    """One-sided supremum of (tail speed mass) x (scale distance to the anchor)."""

    anchor: float
    side: Side
    value: float                  # may be inf
    argmax: float
    infinite: bool
    diagnostics: dict = field(default_factory=dict)


@dataclass(frozen=True)
class BConstants:
    anchor: float
    plus: BEntry
    minus: BEntry


def _b_product(spec: DiffusionSpec, a: float, side: Side):
    """Vectorized x -> m(tail beyond x) * |S(x) - S(a)| on the given side."""
    sgn = _check_side(side)
    scale = build_scale(spec)
    speed = build_speed(spec)
    sa = float(scale(a))

    def product(x):
        x = np.asarray(x, dtype=float)
        if sgn > 0:
            return speed.mass_above_open(x) * (np.asarray(scale(x)) - sa)
        return speed.mass_below_open(x) * (sa - np.asarray(scale(x)))

    return product


def _scan_points(spec: DiffusionSpec, a: float, side: Side, n: int) -> np.ndarray:
    """Coarse scan grid: half uniform in x, half at speed-mass quantiles, so
    both wide flat products and sharply localized ones are seen."""
    sgn = _check_side(side)
    scale = build_scale(spec)
    speed = build_speed(spec)
    lo, hi = scale.window
    edge = hi if sgn > 0 else lo
    uniform = np.linspace(a, edge, n // 2)
    table_x = np.linspace(min(a, edge), max(a, edge), 4097)
    table_m = np.asarray(speed.cumulative(table_x), dtype=float)
    ma, me = float(speed.cumulative(a)), float(speed.cumulative(edge))
    levels = np.linspace(min(ma, me), max(ma, me), n - n // 2)
    # inverse of the nondecreasing M by interpolation on the table
    keep = np.concatenate(([True], np.diff(table_m) > 0))
    quant = np.interp(levels, table_m[keep], table_x[keep])
    pts = np.unique(np.concatenate((uniform, quant)))
    return np.sort(pts) if sgn > 0 else np.sort(pts)[::-1]


def compute_B(spec: DiffusionSpec, a: float, side: Side, scan_size: int = 512) -> BEntry:
    """Supremum search: coarse scan, golden refinement of local maxima, and an
    infinite-product flag when the product is still growing at the window edge."""
    require_certificate(spec)
    sgn = _check_side(side)
    product = _b_product(spec, a, side)

    def search(current: DiffusionSpec, prod) -> tuple[float, float, float, bool, float]:
        pts = _scan_points(current, a, side, scan_size)
        vals = np.asarray(prod(pts), dtype=float)
        order = np.arange(pts.size)  # pts ordered from a toward the edge
        coarse_idx = int(np.argmax(vals))
        coarse_val = float(vals[coarse_idx])
        edge_val = float(vals[-1])
        tail = vals[-5:]
        increasing_at_edge = bool(np.all(np.diff(tail) >= 0)) and edge_val >= coarse_val * (1 - 1e-12)
        lo_i = max(coarse_idx - 1, 0)
        hi_i = min(coarse_idx + 1, pts.size - 1)
        bracket = sorted((float(pts[lo_i]), float(pts[hi_i])))
        if bracket[0] == bracket[1]:
            return coarse_val, float(pts[coarse_idx]), coarse_val, increasing_at_edge, float(np.median(vals))
        stage1 = minimize_scalar(lambda x: -prod(x), bounds=bracket, method="bounded",
                                 options={"xatol": 1e-6 * (abs(bracket[1] - bracket[0]) + 1e-30)})
        stage2 = minimize_scalar(lambda x: -prod(x), bounds=bracket, method="bounded",
                                 options={"xatol": 1e-12 * (abs(bracket[1] - bracket[0]) + 1e-30)})
        v1, v2 = -float(stage1.fun), -float(stage2.fun)
        refined = max(coarse_val, v1, v2)
        argmax = float(stage2.x) if v2 >= coarse_val else float(pts[coarse_idx])
        return refined, argmax, v1, increasing_at_edge, float(np.median(vals))

    refined, argmax, stage1_val, increasing, median = search(spec, product)
    move = abs(refined - stage1_val) / max(abs(refined), 1e-300)
    diagnostics = {"refinement_move": move, "converged": move < 1e-8,
                   "median_product": median, "enlarged_window": False}

    infinite = False
    if increasing:
        if refined > 1e6 * max(median, 1e-300):
            infinite = True
        else:
            # enlarge the window once and retry before declaring divergence
            lo, hi = build_scale(spec).window
            half = 0.5 * (hi - lo)
            wider = spec.with_window((lo - half, hi + half))
            diagnostics["enlarged_window"] = True
            prod2 = _b_product(wider, a, side)
            refined2, argmax2, _, increasing2, median2 = search(wider, prod2)
            if refined2 > refined:
                refined, argmax = refined2, argmax2
            infinite = increasing2
    value = float("inf") if infinite else refined
    return BEntry(anchor=a, side=side, value=value, argmax=argmax,
                  infinite=infinite, diagnostics=diagnostics)


def brute_force_B(spec: DiffusionSpec, a: float, side: Side, n: int = 100_000) -> float:
    """Independent check of compute_B: plain max over a dense uniform grid."""
    sgn = _check_side(side)
    lo, hi = build_scale(spec).window
    edge = hi if sgn > 0 else lo
    xs = np.linspace(a, edge, n)
    vals = np.asarray(_b_product(spec, a, side)(xs), dtype=float)
    return float(vals.max())


@dataclass(frozen=True)
class LambdaBounds:
    """Interval [1/(4B), 1/B] bracketing the exponential-moment threshold."""

    lower: float
    upper: float
    no_upper_constraint: bool = False

    def contains(self, value: float, rel: float = 0.0) -> bool:
        if self.no_upper_constraint:
            return True
        return self.lower * (1 - rel) <= value <= self.upper * (1 + rel)


def lambda_bounds(B: float) -> LambdaBounds:
    """Threshold bracket from a B constant, with the convention 1/inf = 0; a
    vanishing B leaves the threshold unconstrained from above."""
    if B < 0:
        raise DomainError("B must be nonnegative")
    if np.isinf(B):
        return LambdaBounds(lower=0.0, upper=0.0)
    if B == 0.0:
        return LambdaBounds(lower=float("inf"), upper=float("inf"), no_upper_constraint=True)
    return LambdaBounds(lower=1.0 / (4.0 * B), upper=1.0 / B)


def _dense_against_speed(spec: DiffusionSpec, a: float, b: float, weight_fn) -> float:
    """integral over (a,b) of weight(y) dm(y): Simpson on the density plus atoms."""
    speed = build_speed(spec)
    n = spec.tolerances.dense_grid
    if n % 2 == 0:
        n += 1
    ys = np.linspace(a, b, n)
    vals = weight_fn(ys) * np.asarray(speed.density(ys), dtype=float)
    total = float(cumulative_simpson(vals, dx=(b - a) / (n - 1), initial=0.0)[-1])
    for pos, mass in speed.atoms:
        if a < pos < b and mass > 0:
            total += float(weight_fn(np.asarray([pos]))[0]) * mass
    return total


def exit_upper_constant(spec: DiffusionSpec, a: float, b: float) -> float:
    """C with lambda_{a,b} >= 1/C, from the diagonal envelope of the Green kernel."""
    if not a < b:
        raise DomainError("need a < b")
    scale = build_scale(spec)
    sa, sb = float(scale(a)), float(scale(b))

    def weight(y):
        sy = np.asarray(scale(y), dtype=float)
        return (sb - sy) * (sy - sa)

    return _dense_against_speed(spec, a, b, weight) / (sb - sa)


@dataclass(frozen=True)
class ExitBounds:
    """Two-sided bracket for the exit rate lambda_{a,b} of a bounded interval."""

    interval: tuple[float, float]
    inner: tuple[float, float]
    C: float                      # lambda_{a,b} >= 1/C
    kappa1: float
    kappa2: float
    c: float                      # lambda_{a,b} <= 1/c
    inner_mass: float

    @property
    def rate_lower(self) -> float:
        return 1.0 / self.C if self.C > 0 else float("inf")

    @property
    def rate_upper(self) -> float:
        return 1.0 / self.c if self.c > 0 else float("inf")

    @property
    def degenerate(self) -> bool:
        return self.C == 0.0 or self.c == 0.0


def exit_lower_constant(spec: DiffusionSpec, a: float, b: float,
                        a_inner: float, b_inner: float) -> ExitBounds:
    """c from the inner-interval envelope; 1/c is an upper bound on lambda_{a,b}."""
    if not a < a_inner < b_inner < b:
        raise DomainError("need a < a' < b' < b")
    scale = build_scale(spec)
    speed = build_speed(spec)
    sa, sb = float(scale(a)), float(scale(b))
    sai, sbi = float(scale(a_inner)), float(scale(b_inner))
    span = sbi - sai
    kappa1 = (sai - sa) / span
    kappa2 = (sb - sbi) / span
    inner_mass = speed.mass_closed(a_inner, b_inner)
    c = kappa1 * kappa2 / (1.0 + kappa1 + kappa2) * span * inner_mass
    C = exit_upper_constant(spec, a, b)
    return ExitBounds(interval=(a, b), inner=(a_inner, b_inner), C=C,
                      kappa1=kappa1, kappa2=kappa2, c=c, inner_mass=inner_mass)


@dataclass(frozen=True)
class ScanResult:
    """Certified pair (a, b) around x with E_x e^{lambda T_a} = E_x e^{lambda T_b} = inf."""

    x: float
    lam: float
    a: float
    b: float
    inner: tuple[float, float]
    product: float                # (S(b')-S(a')) * m([a',b'])
    threshold: float              # 3/lambda


def vanishing_lambda_scan(spec: DiffusionSpec, x: float, lam: float) -> ScanResult:
    """Find nested intervals with kappa1 = kappa2 = 1 whose scale-mass product
    exceeds 3/lambda, certifying infinite exponential moments at both endpoints.
    The scale span widens geometrically from a tiny fraction of the window."""
    if lam <= 0:
        raise DomainError("lambda must be positive")
    require_certificate(spec)
    scale = build_scale(spec)
    speed = build_speed(spec)
    lo, hi = scale.window
    sx = float(scale(x))
    s_lo, s_hi = float(scale(lo)), float(scale(hi))
    span_max = (2.0 / 3.0) * min(s_hi - sx, sx - s_lo)
    if span_max <= 0:
        raise DomainError("x must lie strictly inside the window")
    threshold = 3.0 / lam
    achieved = 0.0
    delta = span_max * 2.0 ** -60
    while delta <= span_max:
        a_inner = scale.inverse(sx - 0.5 * delta)
        b_inner = scale.inverse(sx + 0.5 * delta)
        product = delta * speed.mass_closed(a_inner, b_inner)
        achieved = max(achieved, product)
        if product > threshold:
            a_outer = scale.inverse(sx - 1.5 * delta)
            b_outer = scale.inverse(sx + 1.5 * delta)
            return ScanResult(x=x, lam=lam, a=a_outer, b=b_outer,
                              inner=(a_inner, b_inner), product=product,
                              threshold=threshold)
        delta *= 2.0
    raise WindowExceeded(
        f"no interval pair inside the window reaches product {threshold}; "
        f"achieved {achieved}", achieved=achieved)


def default_anchors(spec: DiffusionSpec,
                    quantiles: Sequence[float] = (0.10, 0.25, 0.50, 0.75, 0.90)) -> list[float]:
    """Anchor points at speed-measure quantiles."""
    speed = build_speed(spec)
    return [speed.quantile(q) for q in quantiles]


@dataclass(frozen=True)
class AnchorReport:
    anchor: float
    b_plus: float
    b_minus: float
    b_argmax_plus: float
    b_argmax_minus: float
    lambda_bounds_plus: LambdaBounds
    lambda_bounds_minus: LambdaBounds
    lambda_hat_plus: float
    lambda_hat_minus: float
    gamma_plus: float
    gamma_minus: float
    hardy_ok_plus: bool
    hardy_ok_minus: bool
    expmoments_ok_plus: bool
    expmoments_ok_minus: bool
    khasminskii_ok_plus: bool
    khasminskii_ok_minus: bool
    b_gamma_plus: float           # realized product B * gamma, in [1/4, 1] when all holds
    b_gamma_minus: float

    @property
    def hardy_plus(self) -> float:
        return 1.0 / self.gamma_plus

    @property
    def hardy_minus(self) -> float:
        return 1.0 / self.gamma_minus


@dataclass(frozen=True)
class ConstantsReport:
    label: str
    anchors: tuple[AnchorReport, ...]
    gamma: float
    c_p: float
    poincare_lower: float
    poincare_upper: float
    poincare_ok: bool
    finiteness_ok: bool
    violations: tuple[str, ...]
    tolerance: float

    @property
    def ok(self) -> bool:
        return not self.violations

    def to_json(self, path=None) -> str:
        def jf(v):
            v = float(v)
            return v if np.isfinite(v) else ("inf" if v > 0 else "-inf")

        payload = {
            "label": self.label,
            "gamma": jf(self.gamma),
            "c_p": jf(self.c_p),
            "poincare_lower": jf(self.poincare_lower),
            "poincare_upper": jf(self.poincare_upper),
            "poincare_ok": self.poincare_ok,
            "finiteness_ok": self.finiteness_ok,
            "tolerance": self.tolerance,
            "violations": list(self.violations),
            "anchors": [
                {
                    "anchor": r.anchor,
                    "b_plus": jf(r.b_plus), "b_minus": jf(r.b_minus),
                    "b_argmax_plus": r.b_argmax_plus, "b_argmax_minus": r.b_argmax_minus,
                    "lambda_lower_plus": jf(r.lambda_bounds_plus.lower),
                    "lambda_upper_plus": jf(r.lambda_bounds_plus.upper),
                    "lambda_lower_minus": jf(r.lambda_bounds_minus.lower),
                    "lambda_upper_minus": jf(r.lambda_bounds_minus.upper),
                    "lambda_hat_plus": jf(r.lambda_hat_plus),
                    "lambda_hat_minus": jf(r.lambda_hat_minus),
                    "gamma_plus": jf(r.gamma_plus), "gamma_minus": jf(r.gamma_minus),
                    "hardy_plus": jf(r.hardy_plus), "hardy_minus": jf(r.hardy_minus),
                    "hardy_ok_plus": r.hardy_ok_plus, "hardy_ok_minus": r.hardy_ok_minus,
                    "expmoments_ok_plus": r.expmoments_ok_plus,
                    "expmoments_ok_minus": r.expmoments_ok_minus,
                    "khasminskii_ok_plus": r.khasminskii_ok_plus,
                    "khasminskii_ok_minus": r.khasminskii_ok_minus,
                    "b_gamma_plus": jf(r.b_gamma_plus), "b_gamma_minus": jf(r.b_gamma_minus),
                }
                for r in self.anchors
            ],
        }
        text = json.dumps(payload, indent=2)
        if path is not None:
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(text)
        return text

    def to_csv(self, path) -> None:
        cols = ["anchor", "b_plus", "b_minus", "lambda_hat_plus", "lambda_hat_minus",
                "gamma_plus", "gamma_minus", "hardy_plus", "hardy_minus",
                "b_gamma_plus", "b_gamma_minus",
                "hardy_ok_plus", "hardy_ok_minus", "expmoments_ok_plus",
                "expmoments_ok_minus", "khasminskii_ok_plus", "khasminskii_ok_minus"]
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(",".join(cols) + "\n")
            for r in self.anchors:
                vals = [r.anchor, r.b_plus, r.b_minus, r.lambda_hat_plus, r.lambda_hat_minus,
                        r.gamma_plus, r.gamma_minus, r.hardy_plus, r.hardy_minus,
                        r.b_gamma_plus, r.b_gamma_minus,
                        r.hardy_ok_plus, r.hardy_ok_minus, r.expmoments_ok_plus,
                        r.expmoments_ok_minus, r.khasminskii_ok_plus, r.khasminskii_ok_minus]
                fh.write(",".join(repr(float(v)) if not isinstance(v, (bool, np.bool_))
                                  else str(bool(v)) for v in vals) + "\n")


def assemble_report(spec: DiffusionSpec,
                    anchors: Sequence[float],
                    b_entries: dict[tuple[float, Side], BEntry],
                    killed: dict[tuple[float, Side], SpectrumResult],
                    estimates: dict[tuple[float, Side], LambdaEstimate],
                    full_gap: SpectrumResult,
                    khas_rel: float = 0.05) -> ConstantsReport:
    """Join the per-anchor constants with the spectral and moment-series routes
    and flag every bracket violation; violations are data, not errors."""
    tol = spec.tolerances.bracket_rel
    rows = []
    violations = []
    for a in anchors:
        row = {}
        for side in ("plus", "minus"):
            b = b_entries[(a, side)]
            gam = killed[(a, side)].gamma
            lam = estimates[(a, side)].estimate
            A = 1.0 / gam if gam > 0 else float("inf")
            bounds = lambda_bounds(b.value)
            hardy_ok = (b.value * (1 - tol) <= A <= 4.0 * b.value * (1 + tol)) \
                if np.isfinite(b.value) else not np.isfinite(A)
            exp_ok = bounds.contains(lam, rel=tol)
            khas_ok = abs(gam - lam) / max(gam, 1e-300) <= khas_rel
            if not hardy_ok:
                violations.append(f"hardy bracket violated at anchor {a} side {side}: "
                                  f"B={b.value}, A={A}")
            if not exp_ok:
                violations.append(f"exponential-moment bracket violated at anchor {a} "
                                  f"side {side}: lambda={lam}, bounds=({bounds.lower}, {bounds.upper})")
            if not khas_ok:
                violations.append(f"gap/threshold identity violated at anchor {a} side {side}: "
                                  f"gamma={gam}, lambda={lam}")
            row[side] = (b, bounds, lam, gam, hardy_ok, exp_ok, khas_ok)
        bp, bop, lp, gp, hp, ep, kp = row["plus"]
        bm, bom, lm, gm, hm, em, km = row["minus"]
        rows.append(AnchorReport(
            anchor=a,
            b_plus=bp.value, b_minus=bm.value,
            b_argmax_plus=bp.argmax, b_argmax_minus=bm.argmax,
            lambda_bounds_plus=bop, lambda_bounds_minus=bom,
            lambda_hat_plus=lp, lambda_hat_minus=lm,
            gamma_plus=gp, gamma_minus=gm,
            hardy_ok_plus=hp, hardy_ok_minus=hm,
            expmoments_ok_plus=ep, expmoments_ok_minus=em,
            khasminskii_ok_plus=kp, khasminskii_ok_minus=km,
            b_gamma_plus=bp.value * gp, b_gamma_minus=bm.value * gm))

    gamma = full_gap.gamma
    c_p = 1.0 / gamma if gamma > 0 else float("inf")
    hardy_pairs = [(1.0 / r.gamma_plus, 1.0 / r.gamma_minus) for r in rows]
    lower = max(min(p, m) for p, m in hardy_pairs) if hardy_pairs else float("nan")
    upper = min(max(p, m) for p, m in hardy_pairs) if hardy_pairs else float("nan")
    poincare_ok = (c_p >= lower * (1 - tol)) and (c_p <= upper * (1 + tol))
    if not poincare_ok:
        violations.append(f"poincare bracket violated: {lower} <= c_P={c_p} <= {upper}")

    finite_plus = [np.isfinite(b_entries[(a, "plus")].value) for a in anchors]
    finite_minus = [np.isfinite(b_entries[(a, "minus")].value) for a in anchors]
    finiteness_ok = len(set(finite_plus)) <= 1 and len(set(finite_minus)) <= 1
    if not finiteness_ok:
        violations.append("finiteness of B is not all-or-none across anchors")

    return ConstantsReport(
        label=spec.label, anchors=tuple(rows), gamma=gamma, c_p=c_p,
        poincare_lower=lower, poincare_upper=upper, poincare_ok=poincare_ok,
        finiteness_ok=finiteness_ok, violations=tuple(violations), tolerance=tol)
