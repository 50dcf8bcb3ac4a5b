"""Orchestration of the analysis routes: constants, spectral and moment-series
results joined into one report.  Per-anchor work items are independent and run
on a thread pool capped by the HITGAP_THREADS environment variable."""

from __future__ import annotations

import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .constants import assemble_report, compute_B, default_anchors
from .constants import ConstantsReport
from .kac import estimate_lambda, require_certificate
from .model import DiffusionSpec
from .spectral import full_line_gap, killed_gap

__all__ = ["AnalysisResult", "analyze", "worker_count"]


def worker_count() -> int:
    env = os.environ.get("HITGAP_THREADS", "")
    try:
        n = int(env)
    except ValueError:
        n = 0
    if n >= 1:
        return n
    return min(os.cpu_count() or 1, 8)


@dataclass(frozen=True, eq=False)
class AnalysisResult:
    report: ConstantsReport
    anchors: tuple[float, ...]
    estimates: dict
    killed: dict
    b_entries: dict
    full_gap: object
    timings: dict = field(default_factory=dict)


def analyze(spec: DiffusionSpec, anchors: Optional[Sequence[float]] = None,
            quantiles: Sequence[float] = (0.10, 0.25, 0.50, 0.75, 0.90),
            grid_size: Optional[int] = None, depth: Optional[int] = None,
            khas_rel: float = 0.05) -> AnalysisResult:
    """Run the full pipeline: certificate gate, spectral gaps, B constants and
    moment-series thresholds at every anchor, assembled with violation flags."""
    timings = {}
    t0 = time.perf_counter()
    require_certificate(spec)
    if anchors is None:
        anchors = default_anchors(spec, quantiles)
    anchors = [float(a) for a in anchors]
    timings["model"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    full_gap = full_line_gap(spec, size=grid_size)
    timings["spectral_full"] = time.perf_counter() - t0

    jobs = [(a, side) for a in anchors for side in ("plus", "minus")]

    t0 = time.perf_counter()
    with ThreadPoolExecutor(max_workers=worker_count()) as pool:
        b_futs = {key: pool.submit(compute_B, spec, key[0], key[1]) for key in jobs}
        g_futs = {key: pool.submit(killed_gap, spec, key[0], key[1], grid_size) for key in jobs}
        l_futs = {key: pool.submit(estimate_lambda, spec, key[0], key[1], None, depth)
                  for key in jobs}
        b_entries = {key: fut.result() for key, fut in b_futs.items()}
        killed = {key: fut.result() for key, fut in g_futs.items()}
        estimates = {key: fut.result() for key, fut in l_futs.items()}
    timings["anchors"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    report = assemble_report(spec, anchors, b_entries, killed, estimates, full_gap,
                             khas_rel=khas_rel)
    timings["assemble"] = time.perf_counter() - t0
    return AnalysisResult(report=report, anchors=tuple(anchors), estimates=estimates,
                          killed=killed, b_entries=b_entries, full_gap=full_gap,
                          timings=timings)
