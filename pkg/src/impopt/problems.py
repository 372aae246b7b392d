"""Online problem streams, Lagrangian gradients and per-step ground truth.

A stream describes

    min_x  1/2 x'A_k x + b_k'x [+ sin(omega k) log(1 + exp(c'x))]
    s.t.   G_k x = h_k,   G' x <= h'_k

with A_k = A1 + sin(omega k) A2 and G_k = G1 + sin(omega k) G2 when the
time-varying parts are present.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.linalg as sla

from . import linalg
from .signals import SignalKind, SignalSpec, eval_signal

KKT_TOL = 1e-9
MAX_ENUM_CONSTRAINTS = 20


class OracleError(RuntimeError):
    """The per-step ground truth could not be computed."""


@dataclass(frozen=True)
class SpectralBounds:
    lambda_lo: float
    lambda_hi: float
    mu_lo: float
    mu_hi: float

    def __post_init__(self):
        if not (0 < self.lambda_lo <= self.lambda_hi):
            raise ValueError(f"need 0 < lambda_lo <= lambda_hi, got {self.lambda_lo}, {self.lambda_hi}")
        if not (0 < self.mu_lo <= self.mu_hi):
            raise ValueError(f"need 0 < mu_lo <= mu_hi, got {self.mu_lo}, {self.mu_hi}")


def bounds_from_singular_values(lambda_lo, lambda_hi, sigma_lo, sigma_hi) -> SpectralBounds:
    """Bounds on eig(G A^-1 G') from eig(A) in [lambda_lo, lambda_hi] and sv(G) in [sigma_lo, sigma_hi]."""
    for name, v in (("lambda_lo", lambda_lo), ("lambda_hi", lambda_hi),
                    ("sigma_lo", sigma_lo), ("sigma_hi", sigma_hi)):
        if not v > 0:
            raise ValueError(f"{name} must be positive, got {v}")
    if lambda_lo > lambda_hi or sigma_lo > sigma_hi:
        raise ValueError("lower bounds must not exceed upper bounds")
    return SpectralBounds(lambda_lo, lambda_hi, sigma_lo**2 / lambda_hi, sigma_hi**2 / lambda_lo)


@dataclass(frozen=True)
class LogisticTerm:
    """sin(omega k) * log(1 + exp(c'x)), with ||c|| = 1."""

    c: np.ndarray
    omega: float

    def __post_init__(self):
        c = np.asarray(self.c, dtype=float).ravel()
        if abs(np.linalg.norm(c) - 1.0) > 1e-12:
            raise ValueError("logistic direction c must have unit norm")
        object.__setattr__(self, "c", c)

    def gain(self, k) -> float:
        return math.sin(self.omega * k)


def sigmoid(s):
    s = np.asarray(s, dtype=float)
    out = np.empty_like(s)
    pos = s >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-s[pos]))
    e = np.exp(s[~pos])
    out[~pos] = e / (1.0 + e)
    return out if out.ndim else float(out)


def softplus(s):
    """log(1 + exp(s)) without overflow."""
    s = np.asarray(s, dtype=float)
    out = np.maximum(s, 0.0) + np.log1p(np.exp(-np.abs(s)))
    return out if out.ndim else float(out)


@dataclass
class QuadraticStream:
    A1: np.ndarray
    b_spec: SignalSpec
    A2: np.ndarray | None = None
    G1: np.ndarray | None = None
    G2: np.ndarray | None = None
    h_spec: SignalSpec | None = None
    Gp: np.ndarray | None = None
    hp_spec: SignalSpec | None = None
    omega: float = 0.0
    nonquad: LogisticTerm | None = None
    bounds: SpectralBounds | None = None
    record: dict = field(default_factory=dict)

    def __post_init__(self):
        self.A1 = linalg.check_symmetric(self.A1)
        n = self.A1.shape[0]
        if self.A2 is not None:
            self.A2 = linalg.check_symmetric(self.A2)
        if self.b_spec.dim != n:
            raise ValueError(f"b direction has length {self.b_spec.dim}, expected {n}")
        if self.G1 is not None:
            self.G1 = np.atleast_2d(np.asarray(self.G1, dtype=float))
            if self.G1.shape[1] != n or self.h_spec is None or self.h_spec.dim != self.G1.shape[0]:
                raise ValueError("equality block dimensions are inconsistent")
        if self.Gp is not None:
            self.Gp = np.atleast_2d(np.asarray(self.Gp, dtype=float))
            if self.Gp.shape[1] != n or self.hp_spec is None or self.hp_spec.dim != self.Gp.shape[0]:
                raise ValueError("inequality block dimensions are inconsistent")
        if (self.A2 is not None or self.G2 is not None) and not self.omega > 0:
            raise ValueError("time-varying matrices need omega > 0")
        stacked = self.constraint_matrix(0)
        if stacked.shape[0] and np.linalg.matrix_rank(stacked) < stacked.shape[0]:
            raise ValueError("stacked constraint matrix is not full row rank")
        if stacked.shape[0] > n:
            raise ValueError("more constraints than variables")

    # --- data at step k -------------------------------------------------
    @property
    def n(self) -> int:
        return self.A1.shape[0]

    @property
    def p(self) -> int:
        return 0 if self.G1 is None else self.G1.shape[0]

    @property
    def pp(self) -> int:
        return 0 if self.Gp is None else self.Gp.shape[0]

    @property
    def has_eq(self) -> bool:
        return self.G1 is not None

    @property
    def has_ineq(self) -> bool:
        return self.Gp is not None

    @property
    def is_quadratic(self) -> bool:
        return self.nonquad is None

    @property
    def static_matrices(self) -> bool:
        return self.A2 is None and self.G2 is None

    def A(self, k) -> np.ndarray:
        if self.A2 is None:
            return self.A1
        return self.A1 + math.sin(self.omega * k) * self.A2

    def G(self, k) -> np.ndarray:
        if self.G1 is None:
            return np.zeros((0, self.n))
        if self.G2 is None:
            return self.G1
        return self.G1 + math.sin(self.omega * k) * self.G2

    def b(self, k) -> np.ndarray:
        return eval_signal(self.b_spec, k)

    def h(self, k) -> np.ndarray:
        return np.zeros(0) if self.h_spec is None else eval_signal(self.h_spec, k)

    def hp(self, k) -> np.ndarray:
        return np.zeros(0) if self.hp_spec is None else eval_signal(self.hp_spec, k)

    def constraint_matrix(self, k) -> np.ndarray:
        blocks = [self.G(k)]
        if self.Gp is not None:
            blocks.append(self.Gp)
        return np.vstack(blocks)

    def check_bounds(self, steps, eps: float = 1e-9) -> None:
        """Verify the declared bounds hold at the given steps."""
        if self.bounds is None:
            raise ValueError("stream declares no bounds")
        bd = self.bounds
        for k in steps:
            ev = linalg.sym_eigenvalues(self.A(k))
            if ev[0] < bd.lambda_lo - eps or ev[-1] > bd.lambda_hi + eps:
                raise AssertionError(f"eig(A_{k}) = [{ev[0]}, {ev[-1]}] outside declared bounds")

    # cached factorization of the equality KKT matrix when nothing but signals vary
    _kkt_lu: tuple | None = field(default=None, init=False, repr=False, compare=False)

    def kkt_matrix(self, k) -> np.ndarray:
        A, G = self.A(k), self.G(k)
        p = G.shape[0]
        return np.block([[A, G.T], [G, np.zeros((p, p))]])

    def static_kkt_lu(self):
        if self._kkt_lu is None:
            M = self.kkt_matrix(0)
            cond = linalg.condition_estimate(M)
            if cond > linalg.COND_LIMIT:
                raise OracleError(
                    f"KKT matrix singular (cond {cond:.2e}): A must be positive definite "
                    "and G full row rank"
                )
            self._kkt_lu = sla.lu_factor(M)
        return self._kkt_lu


# --- gradients and costs -----------------------------------------------------

def lagrangian_gradients(stream: QuadraticStream, k, x, w=None, wp=None):
    """Gradients (e, f, f') of the Lagrangian at step k.

    e = A_k x + b_k + G_k' w + G'' w' (+ sin(omega k) sigmoid(c'x) c),
    f = G_k x - h_k,  f' = G' x - h'_k.  Absent blocks give empty arrays.
    A leading batch axis on x, w, wp is supported.
    """
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != stream.n:
        raise ValueError(f"x has length {x.shape[-1]}, stream has n={stream.n}")
    batch = x.shape[:-1]
    e = x @ stream.A(k).T + stream.b(k)
    if stream.has_eq:
        G = stream.G(k)
        if w is None or np.shape(w)[-1] != stream.p:
            raise ValueError(f"w must have length p={stream.p}")
        e = e + np.asarray(w) @ G
        f = x @ G.T - stream.h(k)
    else:
        f = np.zeros(batch + (0,))
    if stream.has_ineq:
        if wp is None or np.shape(wp)[-1] != stream.pp:
            raise ValueError(f"w' must have length p'={stream.pp}")
        e = e + np.asarray(wp) @ stream.Gp
        fp = x @ stream.Gp.T - stream.hp(k)
    else:
        fp = np.zeros(batch + (0,))
    if stream.nonquad is not None:
        c = stream.nonquad.c
        s = sigmoid(x @ c)
        e = e + stream.nonquad.gain(k) * np.multiply.outer(s, c)
    return e, f, fp


def nonquadratic_cost(stream: QuadraticStream, k, x) -> float:
    if stream.nonquad is None:
        raise ValueError("stream has no logistic term")
    x = np.asarray(x, dtype=float)
    if x.shape != (stream.n,):
        raise ValueError(f"x must have shape ({stream.n},)")
    quad = 0.5 * x @ stream.A(k) @ x + stream.b(k) @ x
    return float(quad + stream.nonquad.gain(k) * softplus(stream.nonquad.c @ x))


# --- oracles -------------------------------------------------------------------

@dataclass
class KktSolution:
    x_star: np.ndarray
    w_star: np.ndarray
    wp_star: np.ndarray
    active_set: tuple[int, ...] = ()


def kkt_residuals(stream: QuadraticStream, k, sol: KktSolution) -> dict[str, float]:
    e, f, fp = lagrangian_gradients(stream, k, sol.x_star, sol.w_star, sol.wp_star)
    out = {
        "stationarity": float(np.abs(e).max(initial=0.0)),
        "primal": float(max(np.abs(f).max(initial=0.0), np.maximum(fp, 0).max(initial=0.0))),
        "dual": float(np.maximum(-sol.wp_star, 0).max(initial=0.0)),
        "complementarity": float(np.abs(sol.wp_star * fp).max(initial=0.0)),
    }
    return out


def _reduced_kkt(stream, k, active) -> np.ndarray:
    A = stream.A(k)
    C = np.vstack([stream.G(k)] + ([stream.Gp[list(active)]] if active else []))
    r = C.shape[0]
    M = np.block([[A, C.T], [C, np.zeros((r, r))]])
    rhs = np.concatenate([-stream.b(k), stream.h(k), stream.hp(k)[list(active)] if active else []])
    return M, rhs


def kkt_equality_oracle(stream: QuadraticStream, k) -> KktSolution:
    """Solve [A G'; G 0] (x; w) = (-b; h) at step k."""
    if not stream.is_quadratic:
        raise OracleError("equality KKT oracle needs a quadratic cost; use newton_oracle")
    n = stream.n
    rhs = np.concatenate([-stream.b(k), stream.h(k)])
    if stream.static_matrices:
        sol = sla.lu_solve(stream.static_kkt_lu(), rhs)
    else:
        try:
            sol = linalg.solve(stream.kkt_matrix(k), rhs)
        except linalg.SingularMatrixError as exc:
            raise OracleError(
                f"step {k}: KKT matrix singular; A_k must be positive definite and "
                f"G_k full row rank ({exc})"
            ) from exc
    return KktSolution(sol[:n], sol[n:], np.zeros(stream.pp))


def _subsets_by_size(pp: int, first=None):
    if first is not None:
        yield tuple(first)
    for size in range(pp + 1):
        for s in itertools.combinations(range(pp), size):
            if first is None or s != tuple(first):
                yield s


def inequality_oracle(stream: QuadraticStream, k, warm_active=None, tol: float = 1e-10) -> KktSolution:
    """Global optimum by active-set enumeration.

    Each subset of inequalities is treated as equalities; the first candidate
    that is primal feasible with nonnegative multipliers is the KKT point, which
    is unique for strongly convex costs with independent constraints. The
    previous step's active set is tried first.
    """
    if not stream.is_quadratic:
        raise OracleError("enumeration oracle needs a quadratic cost")
    if stream.p + stream.pp > MAX_ENUM_CONSTRAINTS:
        raise OracleError(f"p + p' = {stream.p + stream.pp} exceeds enumeration envelope {MAX_ENUM_CONSTRAINTS}")
    if not stream.has_ineq:
        return kkt_equality_oracle(stream, k)
    n, p, pp = stream.n, stream.p, stream.pp
    hp = stream.hp(k)
    for active in _subsets_by_size(pp, warm_active):
        M, rhs = _reduced_kkt(stream, k, active)
        try:
            sol = linalg.solve(M, rhs)
        except linalg.SingularMatrixError:
            continue
        x = sol[:n]
        mult = sol[n + p:]
        scale = 1.0 + np.abs(hp).max(initial=0.0)
        if (stream.Gp @ x - hp).max() > tol * scale or (mult.size and mult.min() < -tol * scale):
            continue
        wp = np.zeros(pp)
        wp[list(active)] = np.maximum(mult, 0.0)
        return KktSolution(x, sol[n:n + p], wp, tuple(active))
    raise OracleError(f"step {k}: no feasible active set (problem infeasible)")


def newton_oracle(stream: QuadraticStream, k, x0=None, w0=None, tol: float = 1e-12,
                  max_iter: int = 50) -> KktSolution:
    """Damped Newton on the equality-constrained KKT system of a smooth cost."""
    if stream.has_ineq:
        raise OracleError("Newton oracle handles equality constraints only")
    n, p = stream.n, stream.p
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    w = np.zeros(p) if w0 is None else np.array(w0, dtype=float)
    A, G = stream.A(k), stream.G(k)

    def resid(x, w):
        e, f, _ = lagrangian_gradients(stream, k, x, w, None)
        return np.concatenate([e, f])

    r = resid(x, w)
    for _ in range(max_iter):
        if np.linalg.norm(r) <= tol:
            break
        H = A
        if stream.nonquad is not None:
            c = stream.nonquad.c
            s = sigmoid(c @ x)
            H = A + stream.nonquad.gain(k) * s * (1 - s) * np.outer(c, c)
        J = np.block([[H, G.T], [G, np.zeros((p, p))]])
        d = np.linalg.solve(J, -r)
        t = 1.0
        base = np.linalg.norm(r)
        while True:
            x_new, w_new = x + t * d[:n], w + t * d[n:]
            r_new = resid(x_new, w_new)
            if np.linalg.norm(r_new) <= (1 - 1e-4 * t) * base or t < 1e-8:
                break
            t *= 0.5
        x, w, r = x_new, w_new, r_new
    else:
        if np.linalg.norm(r) > tol:
            raise OracleError(f"step {k}: Newton oracle did not converge (residual {np.linalg.norm(r):.2e})")
    return KktSolution(x, w, np.zeros(0))


@dataclass
class OracleTrajectory:
    x_star: np.ndarray
    w_star: np.ndarray
    wp_star: np.ndarray
    active: np.ndarray  # (H, p') boolean
    max_residual: np.ndarray  # (H,) worst KKT residual per step

    @property
    def horizon(self) -> int:
        return self.x_star.shape[0]

    @property
    def active_any(self) -> np.ndarray:
        return self.active.any(axis=1) if self.active.shape[1] else np.zeros(self.horizon, bool)

    @property
    def active_changed(self) -> np.ndarray:
        ch = np.zeros(self.horizon, bool)
        if self.active.shape[1]:
            ch[1:] = (self.active[1:] != self.active[:-1]).any(axis=1)
        return ch


def oracle_trajectory(stream: QuadraticStream, horizon: int, check: bool = True) -> OracleTrajectory:
    """Per-step ground truth for steps 0..horizon-1."""
    n, p, pp = stream.n, stream.p, stream.pp
    X = np.empty((horizon, n))
    W = np.empty((horizon, p))
    WP = np.zeros((horizon, pp))
    act = np.zeros((horizon, pp), bool)
    res = np.empty(horizon)
    ks = np.arange(horizon)
    if stream.is_quadratic and not stream.has_ineq and stream.static_matrices:
        # signals enter linearly: one factorization, all right-hand sides at once
        B = eval_signal(stream.b_spec, ks).reshape(horizon, n)
        Hh = eval_signal(stream.h_spec, ks).reshape(horizon, p) if stream.has_eq else np.zeros((horizon, 0))
        sol = sla.lu_solve(stream.static_kkt_lu(), np.hstack([-B, Hh]).T).T
        X[:], W[:] = sol[:, :n], sol[:, n:]
        if check:
            A, G = stream.A1, stream.G(0)
            stat = np.abs(X @ A.T + B + W @ G).max(axis=1)
            prim = np.abs(X @ G.T - Hh).max(axis=1, initial=0.0)
            res[:] = np.maximum(stat, prim)
        else:
            res[:] = 0.0
    else:
        warm = None
        prev = None
        for k in range(horizon):
            if not stream.is_quadratic:
                sol = newton_oracle(stream, k, *(prev if prev else (None, None)))
                prev = (sol.x_star, sol.w_star)
            elif stream.has_ineq:
                sol = inequality_oracle(stream, k, warm_active=warm)
                warm = sol.active_set
            else:
                sol = kkt_equality_oracle(stream, k)
            X[k], W[k] = sol.x_star, sol.w_star
            if pp:
                WP[k] = sol.wp_star
                act[k, list(sol.active_set)] = True
            res[k] = max(kkt_residuals(stream, k, sol).values()) if check else 0.0
    if check and res.max(initial=0.0) > KKT_TOL:
        k = int(np.argmax(res))
        raise OracleError(f"step {k}: oracle KKT residual {res[k]:.3e} exceeds {KKT_TOL}")
    return OracleTrajectory(X, W, WP, act, res)


# --- stream construction --------------------------------------------------------

def random_orthogonal(rng: np.random.Generator, n: int) -> np.ndarray:
    Q, R = np.linalg.qr(rng.standard_normal((n, n)))
    return Q * np.sign(np.diag(R))


def random_spd(rng, n: int, lo: float, hi: float) -> np.ndarray:
    """V diag(lam) V' with lam in [lo, hi], both endpoints attained (n >= 2)."""
    lam = np.concatenate([[lo, hi][: n], rng.uniform(lo, hi, max(n - 2, 0))])
    V = random_orthogonal(rng, n)
    A = (V * lam) @ V.T
    return 0.5 * (A + A.T)


def random_with_singular_values(rng, p: int, n: int, lo: float, hi: float) -> np.ndarray:
    """p x n matrix with singular values in [lo, hi] (orthonormal rows when lo = hi = 1)."""
    if p == 0:
        return np.zeros((0, n))
    s = np.concatenate([[lo, hi][:p], rng.uniform(lo, hi, max(p - 2, 0))])
    U = random_orthogonal(rng, p)
    W = random_orthogonal(rng, n)[:, :p]
    return (U * s) @ W.T


def sparse_ones(rng, shape, density: float, symmetric: bool = False) -> np.ndarray:
    rows, cols = shape
    count = int(round(density * rows * cols))
    M = np.zeros(shape)
    if not symmetric:
        idx = rng.choice(rows * cols, count, replace=False)
        M.flat[idx] = 1.0
        return M
    upper = [(i, j) for i in range(rows) for j in range(i + 1, cols)]
    for q in rng.choice(len(upper), count // 2, replace=False):
        i, j = upper[q]
        M[i, j] = M[j, i] = 1.0
    if count % 2:
        d = rng.integers(rows)
        M[d, d] = 1.0
    return M


@dataclass(frozen=True)
class StreamParams:
    """Seed plus parameters; enough to rebuild a stream bit for bit."""

    seed: int = 0
    n: int = 10
    p: int = 0
    pp: int = 0
    eig_lo: float = 1.0
    eig_hi: float = 10.0
    sigma_lo: float = 1.0
    sigma_hi: float = 1.0
    omega: float = 1e-4 * math.pi
    b_signal: str = "sine"
    h_signal: str = "sine"
    hp_signal: str = "triangle"
    b_amplitude: float = 1.0
    h_amplitude: float = 1.0
    hp_amplitude: float = 1.0
    b_direction: str = "ones"
    h_direction: str = "ones"
    hp_direction: str = "ones"
    time_varying: bool = False
    sparsity: float = 0.1
    nonquad: bool = False
    bound_margin: float = 0.05

    def as_record(self) -> dict:
        return asdict(self)


def _signal(rng, kind, amplitude, direction, dim, omega) -> SignalSpec:
    if direction == "ones":
        vec = np.ones(dim)
    elif direction == "random":
        vec = rng.standard_normal(dim)
    else:
        raise ValueError(f"unknown direction {direction!r}")
    kind = SignalKind(kind)
    return SignalSpec(kind, omega if kind is not SignalKind.CONSTANT else 0.0, amplitude, vec)


def _sampled_bounds(A1, A2, G1, G2, margin, samples=721) -> SpectralBounds:
    lam_lo, lam_hi, mu_lo, mu_hi = np.inf, 0.0, np.inf, 0.0
    for s in np.sin(np.linspace(0.0, 2 * np.pi, samples)):
        A = A1 + (s * A2 if A2 is not None else 0.0)
        ev = np.linalg.eigvalsh(A)
        if ev[0] <= 0:
            raise ValueError("time-varying A_k loses positive definiteness")
        lam_lo, lam_hi = min(lam_lo, ev[0]), max(lam_hi, ev[-1])
        if G1 is not None and G1.shape[0]:
            G = G1 + (s * G2 if G2 is not None else 0.0)
            S = G @ np.linalg.solve(A, G.T)
            mv = np.linalg.eigvalsh(0.5 * (S + S.T))
            mu_lo, mu_hi = min(mu_lo, mv[0]), max(mu_hi, mv[-1])
    if not np.isfinite(mu_lo):
        mu_lo = mu_hi = 1.0
    return SpectralBounds(lam_lo * (1 - margin), lam_hi * (1 + margin),
                          mu_lo * (1 - margin), mu_hi * (1 + margin))


def build_stream(params: StreamParams) -> QuadraticStream:
    """Deterministically generate the experiment stream described by ``params``."""
    rng = np.random.default_rng(params.seed)
    n, p, pp = params.n, params.p, params.pp
    A1 = random_spd(rng, n, params.eig_lo, params.eig_hi)
    # one constraint generator shared by G and G' so that G' can reuse the equality matrix
    Gall = random_with_singular_values(rng, p + pp, n, params.sigma_lo, params.sigma_hi)
    G1 = Gall[:p] if p else None
    Gp = Gall[p:] if pp else None
    om = params.omega
    b_spec = _signal(rng, params.b_signal, params.b_amplitude, params.b_direction, n, om)
    h_spec = _signal(rng, params.h_signal, params.h_amplitude, params.h_direction, p, om) if p else None
    hp_spec = _signal(rng, params.hp_signal, params.hp_amplitude, params.hp_direction, pp, om) if pp else None

    A2 = G2 = None
    if params.time_varying:
        for _ in range(200):
            A2 = sparse_ones(rng, (n, n), params.sparsity, symmetric=True)
            if np.linalg.eigvalsh(A1 - A2)[0] > 0.1 * params.eig_lo and \
                    np.linalg.eigvalsh(A1 + A2)[0] > 0.1 * params.eig_lo:
                break
        else:
            raise ValueError("could not draw a perturbation keeping A_k positive definite")
        if p:
            for _ in range(200):
                G2 = sparse_ones(rng, (p, n), params.sparsity)
                svs = [np.linalg.svd(G1 + s * G2, compute_uv=False)[-1] for s in np.linspace(-1, 1, 41)]
                if min(svs) > 0.1 * params.sigma_lo:
                    break
            else:
                raise ValueError("could not draw a constraint perturbation keeping full row rank")

    nonquad = None
    if params.nonquad:
        c = rng.standard_normal(n)
        nonquad = LogisticTerm(c / np.linalg.norm(c), om)

    C = np.vstack([M for M in (G1, Gp) if M is not None]) if (p or pp) else None
    if params.time_varying:
        bounds = _sampled_bounds(A1, A2, C if G2 is None else G1, G2, params.bound_margin)
    else:
        lam_lo, lam_hi = params.eig_lo, params.eig_hi
        if params.nonquad:
            # logistic curvature sin(.) s(1-s) c c' lies in [-1/4, 1/4]
            lam_lo, lam_hi = lam_lo - 0.25, lam_hi + 0.25
        if C is None:
            bounds = SpectralBounds(lam_lo, lam_hi, 1.0, 1.0)
        elif p and pp:
            sv = np.linalg.svd(C, compute_uv=False)
            bounds = bounds_from_singular_values(lam_lo, lam_hi, sv[-1], sv[0])
        else:
            bounds = bounds_from_singular_values(lam_lo, lam_hi, params.sigma_lo, params.sigma_hi)

    return QuadraticStream(
        A1=A1, A2=A2, b_spec=b_spec, G1=G1, G2=G2, h_spec=h_spec, Gp=Gp, hp_spec=hp_spec,
        omega=om, nonquad=nonquad, bounds=bounds, record=params.as_record(),
    )
