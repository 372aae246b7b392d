"""Command line interface: ``impopt {synthesize,run,verify,summarize}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .harness import (BUNDLED, ConfigError, _model_for, bundled_config, parse_config,
                      run_experiment, summarize_directory)
from .problems import SpectralBounds, build_stream
from .signals import Polynomial, multi_harmonic_model
from .synthesis import (DEFAULT_GRID, ControllerRealization, EigenInterval, SynthesisFailure,
                        companion_form, eigen_interval, synthesize, tau_select,
                        verify_robust_stability)

log = logging.getLogger("impopt")


def _config_path(value: str) -> Path:
    # bare names refer to bundled configs
    return bundled_config(value) if value in BUNDLED else Path(value)


def _load(args):
    overrides = {"seed": args.seed} if getattr(args, "seed", None) is not None else {}
    if getattr(args, "grid_size", None) is not None:
        overrides["grid_size"] = args.grid_size
    return parse_config(_config_path(args.config), overrides)


def _write_report(real: ControllerRealization, interval: EigenInterval, path: Path):
    rec = real.as_record()
    rec["interval"] = [interval.lo, interval.hi]
    path.write_text(json.dumps(rec, indent=2, sort_keys=True) + "\n")


def cmd_synthesize(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    jobs = []
    if args.config:
        cfg = _load(args)
        stream = build_stream(cfg.stream_params())
        tau = tau_select(stream.bounds)
        interval = eigen_interval(stream.bounds, tau)
        if cfg.control_model == "multi_harmonic":
            for L in cfg.control_harmonics:
                jobs.append((f"imp_L{L}", multi_harmonic_model(cfg.omega, L)))
        else:
            jobs.append(("imp", _model_for(cfg, stream, None)))
        grid = cfg.grid_size
    else:
        if args.model is None or args.bounds is None:
            print("synthesize needs --config, or --model together with --bounds", file=sys.stderr)
            return 2
        bounds = SpectralBounds(*args.bounds)
        tau = tau_select(bounds)
        interval = eigen_interval(bounds, tau)
        coeffs = [float(c) for c in args.model.split(",")]
        jobs.append(("controller", Polynomial(tuple(coeffs))))
        grid = args.grid_size or DEFAULT_GRID
    ok = True
    for label, model in jobs:
        try:
            real = synthesize(model, interval, tau, grid_size=grid)
        except SynthesisFailure as exc:
            print(f"{label}: FAIL {exc}")
            ok = False
            continue
        _write_report(real, interval, out / f"{label}.synthesis.json")
        rep = real.report
        print(f"{label}: PASS tau={tau:.6g} K={np.array2string(real.K, precision=6)} "
              f"margin={real.certificate.margin:.3e} worst_radius={rep.worst_radius:.9f}")
    return 0 if ok else 1


def cmd_run(args) -> int:
    cfg = _load(args)
    out = Path(args.out) / cfg.name
    results = run_experiment(cfg, out)
    print((out / "summary.txt").read_text(), end="")
    return 0 if all(r.status == "ok" for r in results) else 1


def cmd_verify(args) -> int:
    rec = json.loads(Path(args.report).read_text())
    p = Polynomial.internal(rec["internal_model"])
    F, Cc, K = companion_form(p, Polynomial(tuple(rec["K"])) if rec["K"] else None)
    real = ControllerRealization(p, F, Cc, np.asarray(rec["K"], dtype=float), rec["tau"], rec.get("rho", 0.0))
    lo, hi = args.interval if args.interval else rec["interval"]
    rep = verify_robust_stability(real, EigenInterval(lo, hi), args.grid_size or DEFAULT_GRID)
    verdict = "PASS" if rep.passed else "FAIL"
    print(f"{verdict} worst_radius={rep.worst_radius:.12f} at lambda={rep.worst_lambda:.6g} "
          f"(grid {rep.grid_size}, interval [{lo:.6g}, {hi:.6g}])")
    return 0 if rep.passed else 1


def cmd_summarize(args) -> int:
    print(summarize_directory(args.out), end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="impopt", description="Internal-model online optimization experiments")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synthesize", help="design and certify controllers")
    s.add_argument("--config", help="config file or bundled name (" + ", ".join(BUNDLED) + ")")
    s.add_argument("--model", help="internal model coefficients, ascending, comma separated")
    s.add_argument("--bounds", type=float, nargs=4, metavar=("LAM_LO", "LAM_HI", "MU_LO", "MU_HI"))
    s.add_argument("--out", default="out")
    s.add_argument("--seed", type=int)
    s.add_argument("--grid-size", type=int)
    s.set_defaults(func=cmd_synthesize)

    r = sub.add_parser("run", help="run an experiment config")
    r.add_argument("--config", required=True)
    r.add_argument("--out", default="out")
    r.add_argument("--seed", type=int)
    r.add_argument("--grid-size", type=int)
    r.set_defaults(func=cmd_run)

    v = sub.add_parser("verify", help="grid-verify a synthesis report")
    v.add_argument("--report", required=True)
    v.add_argument("--interval", type=float, nargs=2, metavar=("LO", "HI"))
    v.add_argument("--grid-size", type=int)
    v.set_defaults(func=cmd_verify)

    m = sub.add_parser("summarize", help="tabulate asymptotic errors of the traces in a directory")
    m.add_argument("--out", required=True)
    m.set_defaults(func=cmd_summarize)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, KeyError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
