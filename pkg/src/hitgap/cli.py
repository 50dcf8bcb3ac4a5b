"""Command-line front end.

Commands: ``analyze`` (full report), ``spectrum`` (spectral route only),
``simulate`` (Monte Carlo route), ``sandwich-check`` (inequality matrix over
one or more configs).  Exit codes: 0 = all checked inequalities hold,
1 = violations found, 2 = usage or config error.  Every output file records
the hash of the run manifest for reproducibility.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

from .config import RunConfig, load_config
from .constants import default_anchors
from .errors import ConfigError, HitgapError
from .kac import Side
from .model import build_scale, build_speed, certify_recurrence
from .montecarlo import simulate_hitting, summary_json
from .pipeline import analyze
from .spectral import build_grid, build_operator, killed_gap, smallest_eigenvalues

_BC_NAMES = {"nn": ("neumann", "neumann"), "dd": ("dirichlet", "dirichlet"),
             "nd": ("neumann", "dirichlet"), "dn": ("dirichlet", "neumann")}


def _manifest(command: str, cfg: RunConfig, outdir: Path, extra: dict) -> dict:
    manifest = {
        "command": command,
        "config": cfg.path,
        "label": cfg.spec.label,
        "tolerances": dataclasses.asdict(cfg.spec.tolerances),
        "output_dir": str(outdir),
        **extra,
    }
    digest = hashlib.sha256(json.dumps(manifest, sort_keys=True).encode()).hexdigest()[:16]
    manifest["manifest_hash"] = digest
    return manifest


def _write_manifest(manifest: dict, outdir: Path, timings: dict) -> None:
    manifest = dict(manifest)
    manifest["timings"] = {k: round(v, 6) for k, v in timings.items()}
    with open(outdir / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)


def _stamp_json(path: Path, text: str, manifest: dict) -> None:
    payload = json.loads(text)
    payload["manifest_hash"] = manifest["manifest_hash"]
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2)


def _stamp_csv(path: Path, manifest: dict) -> None:
    body = path.read_text(encoding="utf-8")
    path.write_text(f"# manifest_hash={manifest['manifest_hash']}\n" + body, encoding="utf-8")


def _outdir(args, cfg: RunConfig) -> Path:
    out = Path(args.out) if args.out else Path(f"{Path(cfg.path).stem}_out")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _anchors(cfg: RunConfig, override: str | None) -> list[float]:
    if override:
        try:
            return [float(v) for v in override.split(",") if v.strip()]
        except ValueError as exc:
            raise ConfigError(f"bad --anchors value: {exc}") from exc
    if cfg.anchor_points is not None:
        return list(cfg.anchor_points)
    return default_anchors(cfg.spec, cfg.anchor_quantiles)


def _cmd_analyze(args) -> int:
    cfg = load_config(args.config)
    outdir = _outdir(args, cfg)
    anchors = _anchors(cfg, args.anchors)
    t0 = time.perf_counter()
    result = analyze(cfg.spec, anchors=anchors, grid_size=args.grid_size)
    timings = dict(result.timings)
    timings["total"] = time.perf_counter() - t0
    manifest = _manifest("analyze", cfg, outdir, {"anchors": anchors,
                                                  "grid_size": args.grid_size})
    report = result.report
    _stamp_json(outdir / "report.json", report.to_json(), manifest)
    report.to_csv(outdir / "report.csv")
    _stamp_csv(outdir / "report.csv", manifest)
    if args.curves:
        _emit_curves(cfg, result, outdir, manifest)
    _write_manifest(manifest, outdir, timings)
    for line in report.violations:
        print(f"VIOLATION: {line}", file=sys.stderr)
    print(f"report written to {outdir} ({'ok' if report.ok else 'violations found'})")
    return 0 if report.ok else 1


def _emit_curves(cfg: RunConfig, result, outdir: Path, manifest: dict) -> None:
    curves = outdir / "curves"
    curves.mkdir(exist_ok=True)
    scale = build_scale(cfg.spec)
    speed = build_speed(cfg.spec)
    lo, hi = scale.window
    for (a, side), est in result.estimates.items():
        tag = f"a{a:+.6g}_{side}"
        xs = np.linspace(a, hi if side == "plus" else lo, 513)
        sa = float(scale(a))
        if side == "plus":
            prod = speed.mass_above_open(xs) * (np.asarray(scale(xs)) - sa)
        else:
            prod = speed.mass_below_open(xs) * (sa - np.asarray(scale(xs)))
        path = curves / f"bproduct_{tag}.csv"
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("x,b_product\n")
            for x, p in zip(xs, prod):
                fh.write(f"{float(x)!r},{float(p)!r}\n")
        _stamp_csv(path, manifest)
        path = curves / f"ratios_{tag}.csv"
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("x,n,ratio\n")
            for xkey, seq in est.diagnostics.get("ratio_sequences", {}).items():
                for n, r in enumerate(seq):
                    fh.write(f"{xkey},{n},{r!r}\n")
        _stamp_csv(path, manifest)


def _cmd_spectrum(args) -> int:
    cfg = load_config(args.config)
    outdir = _outdir(args, cfg)
    if args.anchor is not None:
        side: Side = args.side or "plus"
        result = killed_gap(cfg.spec, args.anchor, side, size=args.grid_size, k=args.k)
    else:
        if args.bc not in _BC_NAMES:
            raise ConfigError(f"--bc must be one of {sorted(_BC_NAMES)}")
        grid = build_grid(cfg.spec, size=args.grid_size)
        op = build_operator(grid, _BC_NAMES[args.bc])
        result = smallest_eigenvalues(op, k=args.k,
                                      residual_rel=cfg.spec.tolerances.eig_residual_rel)
    manifest = _manifest("spectrum", cfg, outdir,
                         {"bc": args.bc, "anchor": args.anchor, "side": args.side,
                          "grid_size": args.grid_size, "k": args.k})
    _stamp_json(outdir / "spectrum.json", result.to_json(), manifest)
    _write_manifest(manifest, outdir, {})
    print(f"eigenvalues: {[float(v) for v in result.eigenvalues]}")
    return 0


def _cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    if cfg.sim is None and (args.start is None or args.to is None):
        raise ConfigError("config has no [simulation] section; give --from and --to")
    sim = cfg.sim
    updates = {}
    for name, value in (("start", args.start), ("target", args.to), ("step", args.step),
                        ("t_max", args.tmax), ("paths", args.paths), ("seed", args.seed),
                        ("crossing", args.crossing)):
        if value is not None:
            updates[name] = value
    if sim is None:
        from .montecarlo import SimConfig
        sim = SimConfig(**updates)
    elif updates:
        sim = dataclasses.replace(sim, **updates)
    outdir = _outdir(args, cfg)
    samples = simulate_hitting(sim, cfg.spec)
    manifest = _manifest("simulate", cfg, outdir, {"sim": dataclasses.asdict(sim)})
    samples.to_csv(outdir / "samples.csv")
    _stamp_csv(outdir / "samples.csv", manifest)
    _stamp_json(outdir / "summary.json", summary_json(samples), manifest)
    ts = np.sort(samples.times)
    surv = 1.0 - np.arange(1, ts.size + 1) / ts.size
    with open(outdir / "survival.csv", "w", encoding="utf-8") as fh:
        fh.write("t,survival\n")
        for t, s in zip(ts, surv):
            fh.write(f"{float(t)!r},{float(s)!r}\n")
    _stamp_csv(outdir / "survival.csv", manifest)
    _write_manifest(manifest, outdir, {})
    mean, stderr = samples.mean_stderr()
    print(f"{samples.times.size} paths, mean T = {mean:.6g} +- {stderr:.2g}, "
          f"{samples.n_censored} censored")
    return 0


def _cmd_sandwich_check(args) -> int:
    bad = 0
    for config in args.configs:
        cfg = load_config(config)
        cert = certify_recurrence(cfg.spec)
        if not cert.passed:
            print(f"{cfg.spec.label}: certificate FAILED "
                  f"(diverges=({cert.scale_diverges_left}, {cert.scale_diverges_right}), "
                  f"finite_mass={cert.finite_mass})")
            bad += 1
            continue
        anchors = _anchors(cfg, args.anchors)
        result = analyze(cfg.spec, anchors=anchors, grid_size=args.grid_size)
        report = result.report
        checks = {
            "hardy": all(r.hardy_ok_plus and r.hardy_ok_minus for r in report.anchors),
            "expmoments": all(r.expmoments_ok_plus and r.expmoments_ok_minus
                              for r in report.anchors),
            "gap-threshold": all(r.khasminskii_ok_plus and r.khasminskii_ok_minus
                                 for r in report.anchors),
            "poincare": report.poincare_ok,
            "finiteness": report.finiteness_ok,
        }
        for name, ok in checks.items():
            print(f"{cfg.spec.label}: {name:13s} {'PASS' if ok else 'FAIL'}")
        if not report.ok:
            bad += 1
    return 0 if bad == 0 else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hitgap",
                                     description="hitting-time and spectral-gap analysis "
                                                 "of one-dimensional diffusions")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", help="full report: constants, spectral and moment routes")
    p.add_argument("config")
    p.add_argument("--anchors", help="comma-separated anchor points overriding the config")
    p.add_argument("--grid-size", type=int, default=None)
    p.add_argument("--curves", action="store_true", help="emit plot-ready curve CSVs")
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_analyze)

    p = sub.add_parser("spectrum", help="spectral route only")
    p.add_argument("config")
    p.add_argument("--bc", default="nn", help="boundary tags: nn, dd, nd or dn")
    p.add_argument("--anchor", type=float, default=None, help="killed-gap anchor")
    p.add_argument("--side", choices=("plus", "minus"), default=None)
    p.add_argument("--grid-size", type=int, default=None)
    p.add_argument("-k", type=int, default=2, help="number of eigenvalues")
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_spectrum)

    p = sub.add_parser("simulate", help="Monte Carlo hitting times")
    p.add_argument("config")
    p.add_argument("--paths", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--from", dest="start", type=float, default=None)
    p.add_argument("--to", type=float, default=None)
    p.add_argument("--step", type=float, default=None)
    p.add_argument("--tmax", dest="tmax", type=float, default=None)
    p.add_argument("--crossing", choices=("bridge", "interpolate"), default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("sandwich-check", help="inequality matrix over one or more configs")
    p.add_argument("configs", nargs="+")
    p.add_argument("--anchors", help="comma-separated anchor points")
    p.add_argument("--grid-size", type=int, default=None)
    p.set_defaults(func=_cmd_sandwich_check)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, HitgapError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
