"""Experiment configs, runs and their on-disk artifacts.

A config is a flat ``key = value`` text file with ``#`` comments. Running it
builds one stream, computes the oracle trajectory once, then simulates the
baseline and every control-based variant, writing one CSV trace per algorithm,
one JSON synthesis report per controller, a summary table and a plotting
script.
"""

from __future__ import annotations

import ast
import csv
import json
import logging
import math
import os
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import algorithms as alg
from .problems import OracleError, OracleTrajectory, StreamParams, build_stream, oracle_trajectory
from .signals import Polynomial, SignalKind, internal_model, multi_harmonic_model
from .synthesis import (DEFAULT_GRID, SynthesisFailure, eigen_interval, synthesize,
                        tau_select)

log = logging.getLogger(__name__)

CSV_HEADER = ("k", "err_x", "err_w", "norm_e", "norm_f", "norm_fp", "active_flag")
CONFIG_DIR = Path(__file__).parent / "configs"
BUNDLED = ("eq_sine", "eq_triangle", "ineq_triangle", "timevar", "nonquad")
MODELS = ("signal", "integrator", "double_integrator", "multi_harmonic")
BASELINES = ("primal_dual", "projected_primal_dual", "none")


class ConfigError(ValueError):
    def __init__(self, message: str, key: str | None = None, line: int | None = None,
                 path: str | None = None):
        where = ":".join(str(v) for v in (path, line) if v is not None)
        prefix = f"{where}: " if where else ""
        super().__init__(f"{prefix}{key + ': ' if key else ''}{message}")
        self.key, self.line = key, line


# --- config -----------------------------------------------------------------------------

@dataclass(frozen=True)
class ExperimentConfig:
    name: str = "experiment"
    seed: int = 0
    horizon: int = 1000
    n: int = 10
    p: int = 0
    p_ineq: int = 0
    eig_lo: float = 1.0
    eig_hi: float = 10.0
    sigma_lo: float = 1.0
    sigma_hi: float = 1.0
    omega: float = 1e-4 * math.pi
    b_signal: str = "sine"
    h_signal: str = "sine"
    hp_signal: str = "triangle"
    b_direction: str = "ones"
    h_direction: str = "ones"
    hp_direction: str = "ones"
    time_varying: bool = False
    sparsity: float = 0.1
    nonquad: bool = False
    bound_margin: float = 0.05
    baseline: str = "primal_dual"
    baseline_tuning: str = "grid"
    control_model: str = "signal"
    control_harmonics: tuple[int, ...] = (1,)
    control_rho: tuple[float, ...] = ()
    grid_size: int = DEFAULT_GRID

    def stream_params(self) -> StreamParams:
        return StreamParams(
            seed=self.seed, n=self.n, p=self.p, pp=self.p_ineq,
            eig_lo=self.eig_lo, eig_hi=self.eig_hi,
            sigma_lo=self.sigma_lo, sigma_hi=self.sigma_hi, omega=self.omega,
            b_signal=self.b_signal, h_signal=self.h_signal, hp_signal=self.hp_signal,
            b_direction=self.b_direction, h_direction=self.h_direction,
            hp_direction=self.hp_direction, time_varying=self.time_varying,
            sparsity=self.sparsity, nonquad=self.nonquad, bound_margin=self.bound_margin,
        )


# config keys use dots for grouping; dataclass fields use underscores
_KEY_ALIASES = {
    "baseline.tuning": "baseline_tuning",
    "control.model": "control_model",
    "control.harmonics": "control_harmonics",
    "control.rho": "control_rho",
}
_FIELDS = {f.name: f for f in fields(ExperimentConfig)}


def parse_number(text: str) -> float:
    """Parse a real from a literal or a product/quotient with ``pi`` (``1e-4 pi``, ``pi/2``, ``1/2``)."""
    expr = re.sub(r"(?<=[\w.)])\s+(?=[\w.(])", "*", text.strip())
    try:
        tree = ast.parse(expr, mode="eval")
    except SyntaxError as exc:
        raise ValueError(f"not a number: {text!r}") from exc

    def ev(node):
        if isinstance(node, ast.Expression):
            return ev(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) \
                and not isinstance(node.value, bool):
            return float(node.value)
        if isinstance(node, ast.Name) and node.id == "pi":
            return math.pi
        if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
            v = ev(node.operand)
            return -v if isinstance(node.op, ast.USub) else v
        if isinstance(node, ast.BinOp) and isinstance(node.op, (ast.Mult, ast.Div)):
            a, b = ev(node.left), ev(node.right)
            return a * b if isinstance(node.op, ast.Mult) else a / b
        raise ValueError(f"not a number: {text!r}")

    value = ev(tree)
    if not math.isfinite(value):
        raise ValueError(f"not a finite number: {text!r}")
    return value


def _parse_int(text: str) -> int:
    v = parse_number(text)
    if v != int(v):
        raise ValueError(f"expected an integer, got {text!r}")
    return int(v)


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("true", "yes", "1", "on"):
        return True
    if t in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _convert(name: str, text: str):
    kind = _FIELDS[name].type
    if kind == "int":
        return _parse_int(text)
    if kind == "float":
        return parse_number(text)
    if kind == "bool":
        return _parse_bool(text)
    if kind == "tuple[int, ...]":
        return tuple(_parse_int(t) for t in text.split(",") if t.strip())
    if kind == "tuple[float, ...]":
        return tuple(parse_number(t) for t in text.split(",") if t.strip())
    return text.strip()


def _validate(cfg: ExperimentConfig) -> list[tuple[str, str]]:
    """List of (field, message) constraint violations."""
    bad = []

    def need(cond, name, msg):
        if not cond:
            bad.append((name, msg))

    need(cfg.horizon >= 1, "horizon", "horizon must be ≥ 1")
    need(cfg.n >= 1, "n", "n must be ≥ 1")
    need(cfg.p >= 0, "p", "p must be ≥ 0")
    need(cfg.p_ineq >= 0, "p_ineq", "p_ineq must be ≥ 0")
    need(cfg.p + cfg.p_ineq <= cfg.n, "p", "p + p_ineq must not exceed n")
    need(0 < cfg.eig_lo <= cfg.eig_hi, "eig_lo", "need 0 < eig_lo ≤ eig_hi")
    need(0 < cfg.sigma_lo <= cfg.sigma_hi, "sigma_lo", "need 0 < sigma_lo ≤ sigma_hi")
    need(cfg.omega > 0, "omega", "omega must be > 0")
    need(0 <= cfg.sparsity <= 1, "sparsity", "sparsity must lie in [0, 1]")
    need(0 <= cfg.bound_margin < 1, "bound_margin", "bound_margin must lie in [0, 1)")
    for key in ("b_signal", "h_signal", "hp_signal"):
        need(getattr(cfg, key) in {k.value for k in SignalKind} - {"multi_harmonic"}, key,
             "signal must be one of sine, triangle, constant")
    for key in ("b_direction", "h_direction", "hp_direction"):
        need(getattr(cfg, key) in ("ones", "random"), key, "direction must be ones or random")
    need(cfg.baseline in BASELINES, "baseline", f"baseline must be one of {', '.join(BASELINES)}")
    need(cfg.baseline_tuning in ("grid", "default"), "baseline_tuning",
         "baseline.tuning must be grid or default")
    need(cfg.control_model in MODELS + ("none",), "control_model",
         f"control.model must be one of {', '.join(MODELS + ('none',))}")
    need(all(L >= 1 for L in cfg.control_harmonics) and cfg.control_harmonics, "control_harmonics",
         "control.harmonics must list integers ≥ 1")
    need(all(r >= 0 for r in cfg.control_rho), "control_rho", "control.rho values must be ≥ 0")
    need(cfg.grid_size >= 2, "grid_size", "grid_size must be ≥ 2")
    need(cfg.baseline != "primal_dual" or cfg.p_ineq == 0, "baseline",
         "primal_dual cannot handle inequality constraints; use projected_primal_dual")
    if cfg.control_model == "signal" and cfg.b_signal == "constant" and cfg.p and cfg.h_signal != "constant":
        bad.append(("control_model", "signal model is ambiguous when b and h differ"))
    return bad


def parse_config(path, overrides: dict | None = None) -> ExperimentConfig:
    """Read and validate a config file; errors name the key and its line."""
    path = str(path)
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", path=path) from exc
    values, lines = {}, {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError("expected 'key = value'", line=lineno, path=path)
        key, value = (s.strip() for s in line.split("=", 1))
        name = _KEY_ALIASES.get(key, key)
        if name not in _FIELDS or "." in name:
            raise ConfigError("unknown key", key, lineno, path)
        if name in values:
            raise ConfigError("duplicate key", key, lineno, path)
        try:
            values[name] = _convert(name, value)
        except ValueError as exc:
            raise ConfigError(str(exc), key, lineno, path) from exc
        lines[name] = (key, lineno)
    values.update(overrides or {})
    cfg = ExperimentConfig(**values)
    problems = _validate(cfg)
    if problems:
        name, msg = problems[0]
        key, lineno = lines.get(name, (name, None))
        raise ConfigError(msg, key, lineno, path)
    return cfg


def bundled_config(name: str) -> Path:
    if name not in BUNDLED:
        raise KeyError(f"no bundled config {name!r}; choose from {', '.join(BUNDLED)}")
    return CONFIG_DIR / f"{name}.cfg"


# --- trace I/O --------------------------------------------------------------------------

def _fmt(v) -> str:
    return format(float(v), ".17g")


def write_csv(trace: alg.TrackingTrace, path) -> None:
    """Write the trace with a fixed header, 17 significant digits per value."""
    path = Path(path)
    try:
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_HEADER)
            for k in range(len(trace)):
                w.writerow((k, _fmt(trace.err_x[k]), _fmt(trace.err_w[k]), _fmt(trace.norm_e[k]),
                            _fmt(trace.norm_f[k]), _fmt(trace.norm_fp[k]), int(trace.active[k])))
    except OSError as exc:
        raise OSError(f"cannot write trace {path}: {exc.strerror}") from exc


def read_csv(path) -> dict[str, np.ndarray]:
    """Column arrays of a trace file (the inverse of ``write_csv``)."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != CSV_HEADER:
        raise ValueError(f"{path}: not a trace file (bad header)")
    body = rows[1:]
    out = {}
    for j, name in enumerate(CSV_HEADER):
        col = [r[j] for r in body]
        out[name] = np.array(col, dtype=int if name in ("k", "active_flag") else float)
    return out


# --- experiment ---------------------------------------------------------------------------

@dataclass
class Variant:
    label: str
    algorithm: alg.Algorithm
    model: Polynomial | None = None
    rho: float = 0.0
    harmonics: int | None = None


@dataclass
class RunResult:
    label: str
    algorithm: str
    status: str
    asymptotic_error: float = math.nan
    trace_file: str | None = None
    report_file: str | None = None
    detail: dict = field(default_factory=dict)


def _model_for(cfg: ExperimentConfig, stream, harmonics: int | None) -> Polynomial:
    if cfg.control_model == "integrator":
        return Polynomial.internal((-1.0, 1.0))
    if cfg.control_model == "double_integrator":
        return Polynomial.internal((1.0, -2.0, 1.0))
    if cfg.control_model == "multi_harmonic":
        return multi_harmonic_model(cfg.omega, harmonics)
    return internal_model(stream.b_spec)


def experiment_variants(cfg: ExperimentConfig, stream) -> list[Variant]:
    out = []
    if cfg.baseline != "none":
        out.append(Variant(cfg.baseline, alg.Algorithm(cfg.baseline)))
    if cfg.control_model == "none":
        return out
    imp = alg.Algorithm.IMP_ANTIWINDUP if stream.has_ineq else alg.Algorithm.IMP_EQUALITY
    harmonics = cfg.control_harmonics if cfg.control_model == "multi_harmonic" else (None,)
    rhos = cfg.control_rho or ((1.0,) if stream.has_ineq else (0.0,))
    for L in harmonics:
        for rho in rhos:
            label = "imp"
            if L is not None:
                label += f"_L{L}"
            if cfg.control_rho:
                label += f"_rho{rho:g}"
            out.append(Variant(label, imp, None, rho, L))
    return out


def _workers() -> int:
    env = os.environ.get("IMPOPT_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            log.warning("ignoring non-integer IMPOPT_THREADS=%r", env)
    return os.cpu_count() or 1


def run_experiment(cfg: ExperimentConfig, out_dir, oracle: OracleTrajectory | None = None) -> list[RunResult]:
    """Run every algorithm of ``cfg`` and write traces, reports, summary and plot script.

    ``oracle`` may be passed when the caller already computed the ground truth
    for this config's stream.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stream = build_stream(cfg.stream_params())
    variants = experiment_variants(cfg, stream)
    try:
        if oracle is None:
            oracle = oracle_trajectory(stream, cfg.horizon)
    except OracleError as exc:
        results = [RunResult(v.label, v.algorithm.value, f"oracle failure: {exc}") for v in variants]
        write_summary(cfg, results, out_dir)
        return results

    tau = tau_select(stream.bounds)
    interval = eigen_interval(stream.bounds, tau)
    # one synthesis per internal model; rho does not enter the design
    controllers: dict = {}

    def prepare(v: Variant):
        if v.algorithm in (alg.Algorithm.PRIMAL_DUAL, alg.Algorithm.PROJECTED_PRIMAL_DUAL):
            return None
        key = v.harmonics
        if key not in controllers:
            model = _model_for(cfg, stream, v.harmonics)
            try:
                controllers[key] = synthesize(model, interval, tau, 0.0, cfg.grid_size)
            except SynthesisFailure as exc:
                controllers[key] = exc
        c = controllers[key]
        return c if isinstance(c, SynthesisFailure) else c.with_rho(v.rho)

    prepared = [(v, prepare(v)) for v in variants]

    def execute(item) -> RunResult:
        v, ctrl = item
        res = RunResult(v.label, v.algorithm.value, "ok")
        if isinstance(ctrl, SynthesisFailure):
            res.status = f"synthesis failure: {ctrl}"
            return res
        sizes = None
        if ctrl is None:
            if cfg.baseline_tuning == "grid":
                sizes, _ = alg.tune_step_sizes(stream, cfg.horizon, oracle)
            else:
                sizes = alg.StepSizes.default(stream)
        trace = alg.run(v.algorithm, stream, cfg.horizon, oracle, ctrl=ctrl, sizes=sizes)
        res.asymptotic_error = trace.asymptotic_error()
        res.trace_file = f"{v.label}.csv"
        write_csv(trace, out_dir / res.trace_file)
        if ctrl is not None:
            res.report_file = f"{v.label}.synthesis.json"
            rec = ctrl.as_record()
            rec["interval"] = [interval.lo, interval.hi]
            (out_dir / res.report_file).write_text(json.dumps(rec, indent=2, sort_keys=True) + "\n")
            res.detail = {"K": rec["K"], "lmi_margin": rec["lmi_margin"],
                          "worst_radius": rec["verification"]["worst_radius"]}
        else:
            res.detail = {"alpha": sizes.alpha, "beta": sizes.beta, "gamma": sizes.gamma}
        return res

    with ThreadPoolExecutor(max_workers=min(_workers(), len(prepared) or 1)) as pool:
        results = list(pool.map(execute, prepared))
    write_summary(cfg, results, out_dir)
    emit_plot_script(results, out_dir)
    return results


def format_summary(rows: list[tuple[str, str, float, str]]) -> str:
    lines = [f"{'label':<24} {'algorithm':<24} {'asymptotic_err_x':>18}  status"]
    for label, algorithm, err, status in rows:
        lines.append(f"{label:<24} {algorithm:<24} {err:>18.6e}  {status}")
    return "\n".join(lines) + "\n"


def write_summary(cfg: ExperimentConfig, results: list[RunResult], out_dir: Path) -> None:
    table = format_summary([(r.label, r.algorithm, r.asymptotic_error, r.status) for r in results])
    (out_dir / "summary.txt").write_text(table)
    record = {
        "config": asdict(cfg),
        "metric": "median err_x over the final 10% of the horizon",
        "results": [asdict(r) for r in results],
    }
    (out_dir / "summary.json").write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")


def summarize_directory(out_dir, fraction: float = 0.1) -> str:
    """Summary table rebuilt from the CSV traces in a directory."""
    rows = []
    for path in sorted(Path(out_dir).glob("*.csv")):
        err = read_csv(path)["err_x"]
        if err.size == 0:
            rows.append((path.stem, "-", math.nan, "empty trace"))
            continue
        start = err.size - max(1, int(round(fraction * err.size)))
        rows.append((path.stem, "-", float(np.median(err[start:])), "ok"))
    return format_summary(rows)


_PLOT_TEMPLATE = '''"""Tracking error of each algorithm (semilog). Run from this directory."""
import csv

import matplotlib.pyplot as plt

SERIES = {series}


def load(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [int(r["k"]) for r in rows], [max(float(r["err_x"]), 1e-300) for r in rows]


fig, ax = plt.subplots(figsize=(7, 4))
for label, path in SERIES:
    k, err = load(path)
    ax.semilogy(k, err, label=label, linewidth=0.8)
ax.set_xlabel("k")
ax.set_ylabel("||x_k - x*_k||")
ax.legend()
fig.tight_layout()
fig.savefig("tracking_error.png", dpi=150)
'''


def _legend(label: str) -> str:
    m = re.fullmatch(r"imp_L(\d+)", label)
    if m:
        return f"L = {m.group(1)}"
    m = re.fullmatch(r"imp(?:_L(\d+))?_rho([\d.e+-]+)", label)
    if m:
        return f"control-based, rho = {m.group(2)}"
    return label.replace("_", " ")


def emit_plot_script(results: list[RunResult], out_dir) -> Path:
    """Write a standalone matplotlib script plotting every trace in ``results``."""
    out_dir = Path(out_dir)
    series = []
    for r in results:
        if r.trace_file is None:
            continue
        if not (out_dir / r.trace_file).exists():
            raise FileNotFoundError(f"missing trace file {out_dir / r.trace_file}")
        series.append((_legend(r.label), r.trace_file))
    path = out_dir / "plot_traces.py"
    path.write_text(_PLOT_TEMPLATE.format(series=repr(series)))
    return path
