"""Acceptance criteria.

Each test carries ``@pytest.mark.criterion(n)``; the terminal summary prints one
PASS/FAIL line per criterion. The experiment reproductions run the bundled
configs through the harness once per session and share the outputs.
"""

import math
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pytest

from impopt.algorithms import (Algorithm, init_imp_state, run, step_imp_antiwindup,
                               step_imp_equality)
from impopt.harness import BUNDLED, bundled_config, parse_config, read_csv, run_experiment
from impopt.problems import (OracleTrajectory, QuadraticStream, build_stream, lagrangian_gradients,
                             inequality_oracle, nonquadratic_cost, oracle_trajectory,
                             random_spd, random_with_singular_values)
from impopt.signals import Polynomial, multi_harmonic_model, triang
from impopt.synthesis import (EigenInterval, companion_form, eigen_interval, identity_errors,
                              saddle_matrix, synthesize, tau_select)

from conftest import constant_stream

SINE_OMEGA = 1e-4 * math.pi


@dataclass
class BundledRun:
    cfg: object
    stream: QuadraticStream
    oracle: OracleTrajectory
    out: Path
    results: dict
    elapsed: float

    def err_x(self, label: str) -> np.ndarray:
        return read_csv(self.out / self.results[label].trace_file)["err_x"]


class BundledRuns:
    """Runs each bundled config on first use and caches the outputs."""

    def __init__(self, root: Path):
        self.root = root
        self._cache: dict[str, BundledRun] = {}

    def __getitem__(self, name: str) -> BundledRun:
        if name not in self._cache:
            cfg = parse_config(bundled_config(name))
            t0 = time.perf_counter()
            stream = build_stream(cfg.stream_params())
            oracle = oracle_trajectory(stream, cfg.horizon)
            out = self.root / name
            results = {r.label: r for r in run_experiment(cfg, out, oracle=oracle)}
            self._cache[name] = BundledRun(cfg, stream, oracle, out, results, time.perf_counter() - t0)
        return self._cache[name]


@pytest.fixture(scope="session")
def bundled(tmp_path_factory):
    return BundledRuns(tmp_path_factory.mktemp("bundled"))


# --- 1 --------------------------------------------------------------------------------

@pytest.mark.criterion(1)
def test_saddle_spectrum_suite():
    t0 = time.perf_counter()
    worst_im = worst_out = 0.0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(5, 21))
        p = int(rng.integers(1, 6))
        lo = rng.uniform(0.5, 2.0)
        A = random_spd(rng, n, lo, lo * rng.uniform(2.0, 20.0))
        s_lo = rng.uniform(0.5, 1.5)
        G = random_with_singular_values(rng, p, n, s_lo, s_lo * rng.uniform(1.0, 3.0))
        lam = np.linalg.eigvalsh(A)
        mu = np.linalg.eigvalsh(G @ np.linalg.solve(A, G.T))
        tau = lam[0] / (4 * mu[-1])
        ev = np.linalg.eigvals(saddle_matrix(A, G, tau))
        worst_im = max(worst_im, np.abs(ev.imag).max())
        below = tau * mu[0] - ev.real.min()
        above = ev.real.max() - lam[-1]
        worst_out = max(worst_out, below, above)
    elapsed = time.perf_counter() - t0
    assert worst_im <= 1e-8
    assert worst_out <= 1e-8
    assert elapsed < 10.0


# --- 2 --------------------------------------------------------------------------------

def _models():
    yield Polynomial.internal((-1.0, 1.0))
    yield Polynomial.internal((1.0, -2.0, 1.0))
    yield Polynomial.internal((1.0, -2 * math.cos(SINE_OMEGA), 1.0))
    # multi-harmonic models at the frequency of the time-varying experiments and one other
    for omega in (0.5, 0.3):
        for L in range(1, 7):
            yield multi_harmonic_model(omega, L)


@pytest.mark.criterion(2)
def test_companion_identities():
    rng = np.random.default_rng(7)
    for p in _models():
        c = Polynomial(tuple(rng.standard_normal(p.degree)))
        F, Cc, K = companion_form(p, c)
        e_open, e_closed = identity_errors(F, Cc, K, p, rng, points=20)
        assert e_open <= 1e-9, (str(p), e_open)
        assert e_closed <= 1e-9, (str(p), e_closed)


# --- 3 --------------------------------------------------------------------------------

@pytest.mark.criterion(3)
def test_lmi_certification_on_sine_interval(sine_stream):
    tau = tau_select(sine_stream.bounds)
    interval = eigen_interval(sine_stream.bounds, tau)
    assert interval.lo == pytest.approx(0.025, rel=1e-12)
    assert interval.hi == pytest.approx(10.0, rel=1e-12)
    interval = EigenInterval(0.025, 10.0)
    models = [
        Polynomial.internal((-1.0, 1.0)),
        Polynomial.internal((1.0, -2.0, 1.0)),
        Polynomial.internal((1.0, -2 * math.cos(SINE_OMEGA), 1.0)),
    ]
    t0 = time.perf_counter()
    for p in models:
        real = synthesize(p, interval, 0.25, grid_size=10_000)
        assert real.report.passed and real.report.grid_size == 10_000
        assert real.report.worst_radius <= 1 - 1e-6
        # independent recheck on the same grid
        lam = np.geomspace(0.025, 10.0, 10_000)
        radii = np.abs(np.linalg.eigvals(real.closed_loop(lam))).max(axis=1)
        assert radii.max() <= 1 - 1e-6, (str(p), radii.max())
    assert time.perf_counter() - t0 < 60.0


# --- 4 --------------------------------------------------------------------------------

@pytest.mark.criterion(4)
@pytest.mark.slow
def test_sine_stream_reproduction(bundled):
    run_ = bundled["eq_sine"]
    assert run_.cfg.horizon >= 200_000 and run_.cfg.n == 10
    assert run_.results["imp"].status == "ok" and run_.results["primal_dual"].status == "ok"
    imp = run_.results["imp"].asymptotic_error
    pd = run_.results["primal_dual"].asymptotic_error
    assert math.isfinite(pd)
    assert imp <= 1e-6
    assert pd >= 100 * imp
    assert run_.elapsed < 120.0


# --- 5 --------------------------------------------------------------------------------

def slope_change_steps(omega: float, horizon: int) -> np.ndarray:
    """Steps where the sampled triangle wave bends, plus the onset k = 0."""
    k = np.arange(-1, horizon + 1)
    v = triang(omega * k)
    bend = np.abs(v[2:] - 2 * v[1:-1] + v[:-2]) > 1e-12
    return np.concatenate([[0], np.flatnonzero(bend)])


@pytest.mark.criterion(5)
@pytest.mark.slow
def test_triangle_wave_error_away_from_slope_changes(bundled):
    run_ = bundled["eq_triangle"]
    assert run_.results["imp"].status == "ok"
    err = run_.err_x("imp")
    H = err.size
    period = 2 * math.pi / run_.cfg.omega
    changes = slope_change_steps(run_.cfg.omega, H)
    dist = np.full(H, np.inf)
    k = np.arange(H)
    for c in changes:
        dist = np.minimum(dist, np.abs(k - c))
    far = dist > 0.05 * period
    worst = int(np.argmax(np.where(far, err, -np.inf)))
    assert err[far].max() <= 1e-6, (
        f"err_x = {err[worst]:.3e} at step {worst}, {dist[worst]:.0f} steps from a slope change")


# --- 6 --------------------------------------------------------------------------------

@pytest.mark.criterion(6)
@pytest.mark.slow
def test_antiwindup_benefit(bundled):
    run_ = bundled["ineq_triangle"]
    stream, oracle, H = run_.stream, run_.oracle, run_.cfg.horizon
    tau = tau_select(stream.bounds)
    ctrl = synthesize(Polynomial.internal((1.0, -2.0, 1.0)), eigen_interval(stream.bounds, tau), tau)
    x0 = run(Algorithm.IMP_ANTIWINDUP, stream, H, oracle, ctrl=ctrl.with_rho(0.0))
    x1 = run(Algorithm.IMP_ANTIWINDUP, stream, H, oracle, ctrl=ctrl.with_rho(1.0))
    # the harness traces are the same runs
    assert np.array_equal(x0.err_x, run_.err_x("imp_rho0"))
    assert np.array_equal(x1.err_x, run_.err_x("imp_rho1"))

    period = 2 * math.pi / run_.cfg.omega
    window = int(round(0.2 * period))
    act = oracle.active_any
    onsets = np.flatnonzero(act[1:] & ~act[:-1]) + 1
    assert onsets.size >= 2
    for k in onsets:
        sl = slice(k, min(k + window, H))
        m0, m1 = np.median(x0.err_x[sl]), np.median(x1.err_x[sl])
        assert m1 < m0 and m0 >= 2 * m1, (int(k), m0, m1)

    # steady inactive regime: inactive and a quarter period past the last active-set change
    changes = np.concatenate([[0], np.flatnonzero(oracle.active_changed)])
    since = np.arange(H) - changes[np.searchsorted(changes, np.arange(H), side="right") - 1]
    steady = ~act & (since >= 0.25 * period)
    assert steady.sum() > 0.1 * H
    gap = np.linalg.norm(x0.x[steady] - x1.x[steady], axis=1).max()
    assert gap <= 1e-8, gap


# --- 7 --------------------------------------------------------------------------------

@pytest.mark.criterion(7)
def test_equality_reduction(sine_stream):
    tau = tau_select(sine_stream.bounds)
    ctrl = synthesize(Polynomial.internal((1.0, -2 * math.cos(SINE_OMEGA), 1.0)),
                      eigen_interval(sine_stream.bounds, tau), tau, grid_size=2000)
    aw = ctrl.with_rho(1.0)
    a = init_imp_state(ctrl, sine_stream)
    b = init_imp_state(aw, sine_stream)
    worst = 0.0
    for k in range(10_000):
        a = step_imp_equality(a, ctrl, sine_stream, k)
        b = step_imp_antiwindup(b, aw, sine_stream, k)
        for name in ("z", "y", "x", "w", "e", "f"):
            worst = max(worst, np.abs(getattr(a, name) - getattr(b, name)).max(initial=0.0))
    assert worst == 0.0


# --- 8 --------------------------------------------------------------------------------

@pytest.mark.criterion(8)
@pytest.mark.slow
def test_time_varying_ordering(bundled):
    run_ = bundled["timevar"]
    assert run_.cfg.omega == 0.5
    errs = [run_.results[f"imp_L{L}"].asymptotic_error for L in (1, 2, 3, 6)]
    pd = run_.results["primal_dual"].asymptotic_error
    assert all(a >= b for a, b in zip(errs, errs[1:])), errs
    assert errs[-1] < pd
    assert run_.elapsed < 300.0


# --- 9 --------------------------------------------------------------------------------

@pytest.mark.criterion(9)
def test_logistic_gradient_finite_differences():
    stream = build_stream(parse_config(bundled_config("nonquad")).stream_params())
    rng = np.random.default_rng(3)
    n, h = stream.n, 1e-6
    for _ in range(20):
        k = int(rng.integers(0, 1000))
        x = 3 * rng.standard_normal(n)
        e, _, _ = lagrangian_gradients(stream, k, x, np.zeros(stream.p))
        fd = np.array([(nonquadratic_cost(stream, k, x + h * d) - nonquadratic_cost(stream, k, x - h * d)) / (2 * h)
                       for d in np.eye(n)])
        assert np.linalg.norm(fd - e) <= 1e-6 * np.linalg.norm(e)


@pytest.mark.criterion(9)
@pytest.mark.slow
def test_nonquadratic_ordering(bundled):
    run_ = bundled["nonquad"]
    assert run_.results["imp_L3"].asymptotic_error < run_.results["primal_dual"].asymptotic_error


# --- 10 -------------------------------------------------------------------------------

@pytest.mark.criterion(10)
@pytest.mark.slow
@pytest.mark.parametrize("name", BUNDLED)
def test_oracle_residuals(bundled, name):
    res = bundled[name].oracle.max_residual
    assert res.size == bundled[name].cfg.horizon
    assert res.max() <= 1e-9


def dual_projected_gradient(A, b, G, h, Gp, hp, iters: int):
    """Projected gradient ascent on the inequality multipliers, batched over instances.

    The equality-constrained minimizer x(w') is affine in w', so the dual is a
    concave quadratic -w'Qw'/2 + r'w' over w' >= 0.
    """
    B, n = b.shape
    p = G.shape[1]
    K = np.zeros((B, n + p, n + p))
    K[:, :n, :n] = A
    K[:, :n, n:] = G.transpose(0, 2, 1)
    K[:, n:, :n] = G
    x0 = np.linalg.solve(K, np.concatenate([-b, h], axis=1)[..., None])[:, :n, 0]
    rhs = np.concatenate([Gp.transpose(0, 2, 1), np.zeros((B, p, Gp.shape[1]))], axis=1)
    M = -np.linalg.solve(K, rhs)[:, :n]
    Q = -Gp @ M
    r = np.einsum("bij,bj->bi", Gp, x0) - hp
    eta = 1.0 / np.linalg.eigvalsh(0.5 * (Q + Q.transpose(0, 2, 1)))[:, -1:]
    w = np.zeros_like(hp)
    for _ in range(iters):
        w = np.maximum(w + eta * (r - np.einsum("bij,bj->bi", Q, w)), 0.0)
    x = x0 + np.einsum("bij,bj->bi", M, w)
    return x, w


@pytest.mark.criterion(10)
@pytest.mark.slow
def test_inequality_oracle_against_projected_gradient():
    rng = np.random.default_rng(11)
    streams = [constant_stream(rng, n=8, p=2, pp=3) for _ in range(20)]
    stack = lambda f: np.stack([f(s) for s in streams])
    A, b = stack(lambda s: s.A(0)), stack(lambda s: s.b(0))
    G, h = stack(lambda s: s.G(0)), stack(lambda s: s.h(0))
    Gp, hp = stack(lambda s: s.Gp), stack(lambda s: s.hp(0))
    x_ref, w_ref = dual_projected_gradient(A, b, G, h, Gp, hp, 1_000_000)
    active = 0
    for i, s in enumerate(streams):
        sol = inequality_oracle(s, 0)
        active += len(sol.active_set) > 0
        assert np.abs(sol.x_star - x_ref[i]).max() <= 1e-8, i
        assert np.abs(sol.wp_star - w_ref[i]).max() <= 1e-8, i
    assert 0 < active < 20


# --- 11 -------------------------------------------------------------------------------

@pytest.mark.criterion(11)
@pytest.mark.slow
@pytest.mark.parametrize("name", BUNDLED)
def test_bundled_config_determinism(bundled, name, tmp_path):
    first = bundled[name]
    results = run_experiment(first.cfg, tmp_path)
    files = sorted(r.trace_file for r in results if r.trace_file)
    assert files == sorted(r.trace_file for r in first.results.values() if r.trace_file)
    assert files
    for f in files:
        assert (tmp_path / f).read_bytes() == (first.out / f).read_bytes(), f
