"""Internal-model controller design.

The controller is x = c(z)/p(z) e and w = -tau c(z)/p(z) f, realized in
companion form. p(z) is the internal model of the signals, tau scales the dual
channel so that the closed loop sees real plant gains in a known interval, and
c(z) is chosen through the robust LMI so that F + lam Cc K is Schur stable on
that interval.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import linalg
from .lmi import LmiCertificate, LmiInfeasible, LmiInstance, solve_lmi
from .problems import SpectralBounds
from .signals import Polynomial

STABILITY_SLACK = 1e-6
DEFAULT_GRID = 10_000
IDENTITY_RTOL = 1e-9


class SynthesisFailure(Exception):
    """No stabilizing gain was found for the requested interval."""

    def __init__(self, message: str, ratio: float, cause: Exception | None = None):
        super().__init__(f"{message} (interval ratio {ratio:.4g})")
        self.ratio = ratio
        self.cause = cause


@dataclass(frozen=True)
class EigenInterval:
    lo: float
    hi: float

    def __post_init__(self):
        if not (0 < self.lo <= self.hi):
            raise ValueError(f"need 0 < lo <= hi, got [{self.lo}, {self.hi}]")

    @property
    def ratio(self) -> float:
        return self.hi / self.lo


@dataclass(frozen=True)
class StabilityReport:
    passed: bool
    worst_radius: float
    worst_lambda: float
    grid_size: int
    interval: EigenInterval

    def as_record(self) -> dict:
        return {
            "verdict": "PASS" if self.passed else "FAIL",
            "worst_radius": self.worst_radius,
            "worst_lambda": self.worst_lambda,
            "grid_size": self.grid_size,
            "interval": [self.interval.lo, self.interval.hi],
        }


@dataclass(frozen=True)
class ControllerRealization:
    p: Polynomial
    F: np.ndarray
    Cc: np.ndarray
    K: np.ndarray
    tau: float
    rho: float = 0.0
    certificate: LmiCertificate | None = field(default=None, compare=False)
    report: StabilityReport | None = field(default=None, compare=False)

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if self.rho < 0:
            raise ValueError(f"rho must be nonnegative, got {self.rho}")
        m = self.p.degree
        if self.F.shape != (m, m) or self.Cc.shape != (m,) or self.K.shape != (m,):
            raise ValueError("realization dimensions do not match the internal model")

    @property
    def m(self) -> int:
        return self.p.degree

    @property
    def c(self) -> Polynomial:
        return Polynomial(tuple(self.K))

    def closed_loop(self, lam) -> np.ndarray:
        """F + lam Cc K; an array of lam gives a stack."""
        lam = np.asarray(lam, dtype=float)
        return self.F + lam[..., None, None] * np.outer(self.Cc, self.K)

    def with_rho(self, rho: float) -> "ControllerRealization":
        return ControllerRealization(self.p, self.F, self.Cc, self.K, self.tau, rho,
                                     self.certificate, self.report)

    def as_record(self) -> dict:
        rec = {
            "internal_model": list(self.p.coeffs),
            "tau": self.tau,
            "rho": self.rho,
            "K": self.K.tolist(),
        }
        if self.certificate is not None:
            rec["lmi_margin"] = self.certificate.margin
        if self.report is not None:
            rec["verification"] = self.report.as_record()
        return rec


def companion_form(p: Polynomial, c: Polynomial | None = None):
    """Companion realization (F, Cc, K) of p(z) and the numerator c(z).

    F has ones on the superdiagonal and last row -p_0..-p_{m-1}; Cc is the
    last unit vector; K holds c_0..c_{m-1}, zero padded.
    """
    if not p.is_monic or p.degree < 1:
        raise ValueError("p must be monic with degree >= 1")
    m = p.degree
    F = np.zeros((m, m))
    F[:-1, 1:] = np.eye(m - 1)
    F[-1] = -np.asarray(p.coeffs[:-1])
    Cc = np.zeros(m)
    Cc[-1] = 1.0
    if c is None:
        K = np.zeros(m)
    else:
        if c.degree >= m:
            raise ValueError(f"deg c = {c.degree} must be below deg p = {m} (strictly proper controller)")
        K = c.padded(m)
    return F, Cc, K


def saddle_matrix(A, G, tau: float) -> np.ndarray:
    """[[A, -tau G'], [G, 0]]."""
    A = np.asarray(A, dtype=float)
    G = np.atleast_2d(np.asarray(G, dtype=float))
    p = G.shape[0]
    return np.block([[A, -tau * G.T], [G, np.zeros((p, p))]])


def tau_select(b: SpectralBounds) -> float:
    """Largest dual scaling that keeps the saddle spectrum real for any data within ``b``."""
    if not (b.lambda_lo > 0 and b.mu_hi > 0):
        raise ValueError("spectral bounds must be positive")
    return b.lambda_lo / (4.0 * b.mu_hi)


def eigen_interval(b: SpectralBounds, tau: float) -> EigenInterval:
    """Interval [tau mu_lo, lambda_hi] containing the saddle spectrum."""
    if not tau > 0:
        raise ValueError("tau must be positive")
    if tau > b.lambda_lo / (4.0 * b.mu_hi) + 1e-12:
        raise ValueError(
            f"tau = {tau:.6g} exceeds lambda_lo/(4 mu_hi) = {b.lambda_lo / (4 * b.mu_hi):.6g}; "
            "the saddle matrix is only guaranteed a real spectrum below that value"
        )
    return EigenInterval(tau * b.mu_lo, b.lambda_hi)


def identity_errors(F, Cc, K, p: Polynomial, rng: np.random.Generator, points: int = 20):
    """Worst relative errors of det(lam I - F) = p(lam) and det(lam I - F - mu Cc K) = p(lam) - mu c(lam)."""
    m = F.shape[0]
    c = Polynomial(tuple(K))
    r = rng.uniform(0.5, 2.0, points)
    lam = r * np.exp(1j * rng.uniform(0, 2 * np.pi, points))
    mu = rng.uniform(0.1, 10.0, points)
    I = np.eye(m)
    Fc = F[None] + mu[:, None, None] * np.outer(Cc, K)[None]
    d_open = np.linalg.det(lam[:, None, None] * I - F[None])
    d_closed = np.linalg.det(lam[:, None, None] * I - Fc)
    ref_open = p(lam)
    ref_closed = ref_open - mu * c(lam)
    e1 = np.abs(d_open - ref_open) / np.abs(ref_open)
    e2 = np.abs(d_closed - ref_closed) / np.abs(ref_closed)
    return float(e1.max()), float(e2.max())


def verify_robust_stability(r: ControllerRealization, interval: EigenInterval,
                            grid_size: int = DEFAULT_GRID) -> StabilityReport:
    """Spectral radius of F + lam Cc K on a log grid over the interval (endpoints included)."""
    if grid_size < 2:
        raise ValueError("grid_size must be >= 2")
    lam = np.geomspace(interval.lo, interval.hi, grid_size)
    lam[0], lam[-1] = interval.lo, interval.hi
    radii = np.empty(grid_size)
    for s in range(0, grid_size, 2048):
        radii[s:s + 2048] = linalg.spectral_radii(r.closed_loop(lam[s:s + 2048]))
    i = int(np.argmax(radii))
    return StabilityReport(
        passed=bool(radii[i] <= 1.0 - STABILITY_SLACK),
        worst_radius=float(radii[i]),
        worst_lambda=float(lam[i]),
        grid_size=grid_size,
        interval=interval,
    )


def synthesize(p: Polynomial, interval: EigenInterval, tau: float, rho: float = 0.0,
               grid_size: int = DEFAULT_GRID) -> ControllerRealization:
    """Design c(z) for the internal model p(z) and certify it on ``interval``."""
    p = Polynomial.internal(p.coeffs)
    F, Cc, _ = companion_form(p)
    try:
        cert = solve_lmi(LmiInstance(F, Cc, interval.lo, interval.hi))
    except LmiInfeasible as exc:
        raise SynthesisFailure(
            "no certificate: reduce the interval ratio or change the internal model",
            interval.ratio, exc,
        ) from exc
    K = cert.K
    real = ControllerRealization(p, F, Cc, K, tau, rho, cert)
    report = verify_robust_stability(real, interval, grid_size)
    if not report.passed:
        raise SynthesisFailure(
            f"certified gain failed grid verification (radius {report.worst_radius:.9f} "
            f"at lambda {report.worst_lambda:.4g})",
            interval.ratio,
        )
    return ControllerRealization(p, F, Cc, K, tau, rho, cert, report)
