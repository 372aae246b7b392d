"""Online optimization algorithms as explicit step functions.

Two unstructured baselines (primal-dual gradient descent-ascent and its
projected variant) and two internal-model algorithms (equality constraints
only, and with inequality constraints handled by a saturation plus
back-calculation anti-windup). Every stepper maps the state at step k to the
state at step k + 1 and never mutates its input.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace

import numpy as np

from .linalg import kron_apply
from .problems import OracleTrajectory, QuadraticStream, lagrangian_gradients
from .synthesis import ControllerRealization

GRID_PER_DECADE = 9
GRID_RANGE = (1e-4, 1.0)
DIVERGENCE_LIMIT = 1e8


class Algorithm(str, enum.Enum):
    PRIMAL_DUAL = "primal_dual"
    PROJECTED_PRIMAL_DUAL = "projected_primal_dual"
    IMP_EQUALITY = "imp_equality"
    IMP_ANTIWINDUP = "imp_antiwindup"


def proj_nonneg(v) -> np.ndarray:
    return np.maximum(v, 0.0)


@dataclass(frozen=True)
class PdState:
    x: np.ndarray
    w: np.ndarray
    wp: np.ndarray
    alpha: float
    beta: float
    gamma: float


@dataclass(frozen=True)
class ImpState:
    z: np.ndarray
    y: np.ndarray
    yp: np.ndarray
    x: np.ndarray
    w: np.ndarray
    v: np.ndarray
    wp: np.ndarray
    e: np.ndarray
    f: np.ndarray
    fp: np.ndarray


@dataclass(frozen=True)
class StepSizes:
    alpha: float
    beta: float
    gamma: float

    @classmethod
    def default(cls, stream: QuadraticStream) -> "StepSizes":
        """alpha = 2 / (lambda_lo + lambda_hi), beta = gamma = alpha."""
        if stream.bounds is not None:
            lo, hi = stream.bounds.lambda_lo, stream.bounds.lambda_hi
        else:
            ev = np.linalg.eigvalsh(stream.A(0))
            lo, hi = ev[0], ev[-1]
        a = 2.0 / (lo + hi)
        return cls(a, a, a)


@dataclass
class TrackingTrace:
    """Per-step tracking record; row k describes the iterate at step k."""

    algorithm: str
    x: np.ndarray
    x_star: np.ndarray
    err_x: np.ndarray
    err_w: np.ndarray
    norm_e: np.ndarray
    norm_f: np.ndarray
    norm_fp: np.ndarray
    active: np.ndarray  # oracle active set changed at this step
    meta: dict

    def __len__(self) -> int:
        return self.err_x.shape[0]

    def asymptotic_error(self, fraction: float = 0.1) -> float:
        """Median of err_x over the final ``fraction`` of the horizon."""
        H = len(self)
        start = H - max(1, int(round(fraction * H)))
        return float(np.median(self.err_x[start:]))


# --- baselines ------------------------------------------------------------------

def init_pd_state(stream: QuadraticStream, sizes: StepSizes) -> PdState:
    return PdState(np.zeros(stream.n), np.zeros(stream.p), np.zeros(stream.pp),
                   sizes.alpha, sizes.beta, sizes.gamma)


def _check_pd(state: PdState, stream: QuadraticStream):
    if state.x.shape != (stream.n,) or state.w.shape != (stream.p,) or state.wp.shape != (stream.pp,):
        raise ValueError("state dimensions do not match the stream")


def step_primal_dual(state: PdState, stream: QuadraticStream, k: int) -> PdState:
    """Gradient descent in x and ascent in w on the Lagrangian at step k."""
    if stream.has_ineq:
        raise ValueError("primal-dual handles equality constraints only; use the projected variant")
    _check_pd(state, stream)
    e, f, _ = lagrangian_gradients(stream, k, state.x, state.w, state.wp)
    return replace(state, x=state.x - state.alpha * e, w=state.w + state.beta * f)


def step_projected_primal_dual(state: PdState, stream: QuadraticStream, k: int) -> PdState:
    """Primal-dual step with the inequality multipliers projected onto w' >= 0."""
    _check_pd(state, stream)
    e, f, fp = lagrangian_gradients(stream, k, state.x, state.w, state.wp)
    return replace(
        state,
        x=state.x - state.alpha * e,
        w=state.w + state.beta * f,
        wp=proj_nonneg(state.wp + state.gamma * fp),
    )


# --- internal-model algorithms -------------------------------------------------------

def _residuals(ctrl: ControllerRealization, stream: QuadraticStream, k, x, w, v, wp):
    e, f, fp = lagrangian_gradients(stream, k, x, w, wp)
    if stream.has_ineq:
        fp = fp + ctrl.rho * (wp - v)
    return e, f, fp


def init_imp_state(ctrl: ControllerRealization, stream: QuadraticStream) -> ImpState:
    """Zero controller state; residuals evaluated at step 0."""
    m, n, p, pp = ctrl.m, stream.n, stream.p, stream.pp
    x, w, v = np.zeros(n), np.zeros(p), np.zeros(pp)
    wp = proj_nonneg(v)
    e, f, fp = _residuals(ctrl, stream, 0, x, w, v, wp)
    return ImpState(np.zeros(m * n), np.zeros(m * p), np.zeros(m * pp), x, w, v, wp, e, f, fp)


def _check_imp(state: ImpState, ctrl: ControllerRealization, stream: QuadraticStream):
    m = ctrl.m
    if (state.z.shape != (m * stream.n,) or state.y.shape != (m * stream.p,)
            or state.yp.shape != (m * stream.pp,)):
        raise ValueError("controller state dimensions do not match the stream and internal model")


def _integrate(ctrl: ControllerRealization, s: np.ndarray, r: np.ndarray) -> np.ndarray:
    """(F kron I) s + (Cc kron I) r."""
    return kron_apply(ctrl.F, s, r.size) + (ctrl.Cc[:, None] * r).ravel()


def _output(ctrl: ControllerRealization, s: np.ndarray, dim: int) -> np.ndarray:
    """(K kron I) s."""
    return ctrl.K @ s.reshape(ctrl.m, dim)


def _imp_step(state: ImpState, ctrl: ControllerRealization, stream: QuadraticStream, k: int) -> ImpState:
    # states, then outputs, then saturation, then residuals at step k + 1
    z = _integrate(ctrl, state.z, state.e)
    y = _integrate(ctrl, state.y, state.f)
    yp = _integrate(ctrl, state.yp, state.fp)
    x = _output(ctrl, z, stream.n)
    w = -ctrl.tau * _output(ctrl, y, stream.p)
    v = -ctrl.tau * _output(ctrl, yp, stream.pp)
    wp = proj_nonneg(v)
    e, f, fp = _residuals(ctrl, stream, k + 1, x, w, v, wp)
    return ImpState(z, y, yp, x, w, v, wp, e, f, fp)


def step_imp_equality(state: ImpState, ctrl: ControllerRealization, stream: QuadraticStream,
                      k: int) -> ImpState:
    """Internal-model step for equality-constrained streams."""
    if stream.has_ineq:
        raise ValueError("stream has inequality constraints; use step_imp_antiwindup")
    _check_imp(state, ctrl, stream)
    return _imp_step(state, ctrl, stream, k)


def step_imp_antiwindup(state: ImpState, ctrl: ControllerRealization, stream: QuadraticStream,
                        k: int) -> ImpState:
    """Internal-model step with saturated inequality multipliers and back-calculation.

    The inequality residual fed to the controller is G'x - h' + rho (w' - v),
    where v is the unsaturated multiplier and w' = max(v, 0). Without
    inequality constraints this is the equality step exactly.
    """
    _check_imp(state, ctrl, stream)
    return _imp_step(state, ctrl, stream, k)


def output_invariant_error(state: ImpState, ctrl: ControllerRealization, stream: QuadraticStream) -> float:
    """Largest violation of x = (K kron I) z, w = -tau (K kron I) y, v = ..., w' = max(v, 0)."""
    errs = [
        np.abs(state.x - _output(ctrl, state.z, stream.n)).max(initial=0.0),
        np.abs(state.w + ctrl.tau * _output(ctrl, state.y, stream.p)).max(initial=0.0),
        np.abs(state.v + ctrl.tau * _output(ctrl, state.yp, stream.pp)).max(initial=0.0),
        np.abs(state.wp - proj_nonneg(state.v)).max(initial=0.0),
    ]
    return float(max(errs))


# --- runners ----------------------------------------------------------------------------

def _norm(v) -> float:
    return math.sqrt(v @ v)


def run(algorithm: Algorithm | str, stream: QuadraticStream, horizon: int, oracle: OracleTrajectory,
        ctrl: ControllerRealization | None = None, sizes: StepSizes | None = None) -> TrackingTrace:
    """Simulate ``horizon`` steps from the zero state and compare with the oracle.

    The residual norms are those of the signals driving each algorithm: the
    Lagrangian gradients for the baselines, the controller inputs (including
    the anti-windup term) for the internal-model algorithms.
    """
    algorithm = Algorithm(algorithm)
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    if oracle.horizon < horizon:
        raise ValueError(f"oracle covers {oracle.horizon} steps, need {horizon}")
    n, p, pp = stream.n, stream.p, stream.pp
    X = np.empty((horizon, n))
    W = np.empty((horizon, p + pp))
    ne, nf, nfp = np.empty(horizon), np.empty(horizon), np.empty(horizon)
    meta = {"algorithm": algorithm.value}

    if algorithm in (Algorithm.PRIMAL_DUAL, Algorithm.PROJECTED_PRIMAL_DUAL):
        sizes = sizes or StepSizes.default(stream)
        meta.update(alpha=sizes.alpha, beta=sizes.beta, gamma=sizes.gamma)
        step = step_primal_dual if algorithm is Algorithm.PRIMAL_DUAL else step_projected_primal_dual
        st = init_pd_state(stream, sizes)
        for k in range(horizon):
            X[k] = st.x
            W[k, :p], W[k, p:] = st.w, st.wp
            e, f, fp = lagrangian_gradients(stream, k, st.x, st.w, st.wp)
            ne[k], nf[k], nfp[k] = _norm(e), _norm(f), _norm(fp)
            if k + 1 < horizon:
                st = step(st, stream, k)
    else:
        if ctrl is None:
            raise ValueError("internal-model algorithms need a controller realization")
        meta.update(ctrl.as_record())
        step = step_imp_equality if algorithm is Algorithm.IMP_EQUALITY else step_imp_antiwindup
        st = init_imp_state(ctrl, stream)
        for k in range(horizon):
            X[k] = st.x
            W[k, :p], W[k, p:] = st.w, st.wp
            ne[k], nf[k], nfp[k] = _norm(st.e), _norm(st.f), _norm(st.fp)
            if k + 1 < horizon:
                st = step(st, ctrl, stream, k)

    x_star = oracle.x_star[:horizon]
    w_star = np.hstack([oracle.w_star[:horizon], oracle.wp_star[:horizon]])
    with np.errstate(over="ignore", invalid="ignore"):
        err_x = np.linalg.norm(X - x_star, axis=1)
        err_w = np.linalg.norm(W - w_star, axis=1)
    return TrackingTrace(
        algorithm=algorithm.value, x=X, x_star=x_star, err_x=err_x, err_w=err_w,
        norm_e=ne, norm_f=nf, norm_fp=nfp, active=oracle.active_changed[:horizon].copy(), meta=meta,
    )


def step_size_grid(per_decade: int = GRID_PER_DECADE, lo: float = GRID_RANGE[0],
                   hi: float = GRID_RANGE[1]) -> np.ndarray:
    decades = np.log10(hi) - np.log10(lo)
    return np.logspace(np.log10(lo), np.log10(hi), int(round(decades * per_decade)) + 1)


def tune_step_sizes(stream: QuadraticStream, horizon: int, oracle: OracleTrajectory,
                    grid: np.ndarray | None = None, fraction: float = 0.1,
                    samples: int = 2000) -> tuple[StepSizes, float]:
    """Grid search over (alpha, beta) with gamma = beta for the (projected) primal-dual baseline.

    All pairs are simulated together as one batch. The score is the median of
    err_x over the final ``fraction`` of the horizon, estimated on at most
    ``samples`` evenly strided steps; diverging pairs are discarded.
    Returns the best step sizes and their score.
    """
    grid = step_size_grid() if grid is None else np.asarray(grid, dtype=float)
    aa, bb = np.meshgrid(grid, grid, indexing="ij")
    alpha, beta = aa.ravel()[:, None], bb.ravel()[:, None]
    B = alpha.shape[0]
    x = np.zeros((B, stream.n))
    w = np.zeros((B, stream.p))
    wp = np.zeros((B, stream.pp))
    alive = np.ones(B, bool)
    start = horizon - max(1, int(round(fraction * horizon)))
    stride = max(1, (horizon - start) // samples)
    rec = []
    for k in range(horizon):
        if k >= start and (k - start) % stride == 0:
            rec.append(np.linalg.norm(x - oracle.x_star[k], axis=1))
        e, f, fp = lagrangian_gradients(stream, k, x, w, wp)
        x = x - alpha * e
        w = w + beta * f
        if stream.has_ineq:
            wp = proj_nonneg(wp + beta * fp)
        if k % 64 == 0:
            bad = ~(np.isfinite(x).all(axis=1) & (np.abs(x).max(axis=1) < DIVERGENCE_LIMIT))
            if bad.any():
                alive &= ~bad
                x[bad], w[bad], wp[bad] = 0.0, 0.0, 0.0
    score = np.median(np.array(rec), axis=0)
    bad = ~(np.isfinite(x).all(axis=1) & (np.abs(x).max(axis=1) < DIVERGENCE_LIMIT))
    alive &= ~bad
    if not alive.any():
        raise RuntimeError("every step-size pair diverged")
    score = np.where(alive, score, np.inf)
    i = int(np.argmin(score))
    return StepSizes(float(alpha[i, 0]), float(beta[i, 0]), float(beta[i, 0])), float(score[i])
