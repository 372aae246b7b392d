"""Robust-stabilization LMIs over an interval of plant gains.

For a companion pair (F, Cc) and an interval [l_lo, l_hi] we look for
symmetric P_lo, P_hi > 0, a square Q and a row R with

    [ P_i                   F Q + l_i Cc R  ]
    [ (F Q + l_i Cc R)'     Q + Q' - P_i    ]  > 0,    i in {lo, hi}

in which case K = R Q^-1 makes F + l Cc K Schur stable for every l in the
interval. The problem is solved as

    maximize t   s.t.   t I <= Block_i <= I

with a primal log-det barrier method. The upper bound normalizes the blocks,
so t is the certified margin relative to a unit block norm.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from . import linalg

FEASIBILITY_MARGIN = 1e-12
GAP_TOL = 1e-9
MAX_ORDER = 16


class LmiInfeasible(Exception):
    """No certificate with margin above the feasibility threshold was found."""

    def __init__(self, t_star: float, instance: "LmiInstance"):
        super().__init__(
            f"LMI infeasible at tolerance: best margin {t_star:.3e} on interval "
            f"[{instance.l_lo:.4g}, {instance.l_hi:.4g}] (ratio {instance.ratio:.4g})"
        )
        self.t_star = t_star
        self.instance = instance


class LmiNumericalError(RuntimeError):
    """The barrier iteration broke down (not an infeasibility verdict)."""


@dataclass(frozen=True)
class LmiInstance:
    F: np.ndarray
    Cc: np.ndarray
    l_lo: float
    l_hi: float

    def __post_init__(self):
        F = np.asarray(self.F, dtype=float)
        Cc = np.asarray(self.Cc, dtype=float).reshape(-1, 1)
        m = F.shape[0]
        if F.shape != (m, m) or Cc.shape[0] != m:
            raise ValueError("F must be m x m and Cc of length m")
        if m > 1 and (not np.array_equal(F[:-1, 1:], np.eye(m - 1)) or np.any(F[:-1, 0])):
            raise ValueError("F is not in companion form")
        if not (0 < self.l_lo <= self.l_hi):
            raise ValueError(f"need 0 < l_lo <= l_hi, got [{self.l_lo}, {self.l_hi}]")
        object.__setattr__(self, "F", F)
        object.__setattr__(self, "Cc", Cc)

    @property
    def m(self) -> int:
        return self.F.shape[0]

    @property
    def ratio(self) -> float:
        return self.l_hi / self.l_lo


@dataclass(frozen=True)
class LmiCertificate:
    P_lo: np.ndarray
    P_hi: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    margin: float

    @property
    def K(self) -> np.ndarray:
        """Gain row R Q^-1."""
        return np.linalg.solve(self.Q.T, self.R.ravel())


def psd_margin(M) -> float:
    """Smallest eigenvalue of a symmetric matrix."""
    return float(linalg.sym_eigenvalues(M)[0])


def lmi_blocks(inst: LmiInstance, P_lo, P_hi, Q, R) -> tuple[np.ndarray, np.ndarray]:
    R = np.asarray(R, dtype=float).reshape(1, -1)
    out = []
    for P, lam in ((P_lo, inst.l_lo), (P_hi, inst.l_hi)):
        X = inst.F @ Q + lam * inst.Cc @ R
        B = np.block([[P, X], [X.T, Q + Q.T - P]])
        out.append(0.5 * (B + B.T))
    return out[0], out[1]


def certificate_margin(inst: LmiInstance, P_lo, P_hi, Q, R) -> float:
    """Normalized margin min_i lambda_min(B_i) / max_i ||B_i||, recomputed from scratch."""
    blocks = lmi_blocks(inst, P_lo, P_hi, Q, R)
    top = max(np.abs(linalg.sym_eigenvalues(B)).max() for B in blocks)
    return min(psd_margin(B) for B in blocks) / top


# --- barrier solver ------------------------------------------------------------

class _Layout:
    """Maps the decision vector to (P_lo, P_hi, Q, R, t) and the blocks' derivatives."""

    def __init__(self, inst: LmiInstance):
        m = inst.m
        self.m = m
        self.iu = np.triu_indices(m)
        ns = len(self.iu[0])
        self.sl_plo = slice(0, ns)
        self.sl_phi = slice(ns, 2 * ns)
        self.sl_q = slice(2 * ns, 2 * ns + m * m)
        self.sl_r = slice(2 * ns + m * m, 2 * ns + m * m + m)
        self.it = 2 * ns + m * m + m
        self.nv = self.it + 1
        # derivative stacks d Block_i / d theta_j (t excluded: handled separately)
        self.D = [self._derivatives(inst, i) for i in (0, 1)]

    def _derivatives(self, inst, which):
        m, nv = self.m, self.nv
        lam = (inst.l_lo, inst.l_hi)[which]
        D = np.zeros((nv, 2 * m, 2 * m))
        sl_p = self.sl_plo if which == 0 else self.sl_phi
        for j, (a, b) in enumerate(zip(*self.iu)):
            E = np.zeros((m, m))
            E[a, b] = E[b, a] = 1.0
            D[sl_p.start + j, :m, :m] = E
            D[sl_p.start + j, m:, m:] = -E
        for j in range(m * m):
            a, b = divmod(j, m)
            E = np.zeros((m, m))
            E[a, b] = 1.0
            X = inst.F @ E
            D[self.sl_q.start + j, :m, m:] = X
            D[self.sl_q.start + j, m:, :m] = X.T
            D[self.sl_q.start + j, m:, m:] = E + E.T
        for j in range(m):
            E = np.zeros((1, m))
            E[0, j] = 1.0
            X = lam * inst.Cc @ E
            D[self.sl_r.start + j, :m, m:] = X
            D[self.sl_r.start + j, m:, :m] = X.T
        return D

    def unpack(self, theta):
        m = self.m
        P_lo = np.zeros((m, m))
        P_lo[self.iu] = theta[self.sl_plo]
        P_lo = P_lo + np.triu(P_lo, 1).T
        P_hi = np.zeros((m, m))
        P_hi[self.iu] = theta[self.sl_phi]
        P_hi = P_hi + np.triu(P_hi, 1).T
        Q = theta[self.sl_q].reshape(m, m)
        R = theta[self.sl_r].reshape(1, m)
        return P_lo, P_hi, Q, R, theta[self.it]

    def pack(self, P_lo, P_hi, Q, R, t):
        theta = np.zeros(self.nv)
        theta[self.sl_plo] = P_lo[self.iu]
        theta[self.sl_phi] = P_hi[self.iu]
        theta[self.sl_q] = Q.ravel()
        theta[self.sl_r] = np.ravel(R)
        theta[self.it] = t
        return theta

    def blocks(self, theta):
        # blocks are linear in theta (no constant term)
        x = theta.copy()
        x[self.it] = 0.0
        return [np.tensordot(x, D, axes=1) for D in self.D]


def _chol(M):
    try:
        return np.linalg.cholesky(M)
    except np.linalg.LinAlgError:
        return None


def _barrier_terms(layout: _Layout, theta, s):
    """Value, gradient and Hessian of -s t - sum log det(constraint matrices)."""
    t = theta[layout.it]
    I = np.eye(2 * layout.m)
    val = -s * t
    g = np.zeros(layout.nv)
    g[layout.it] = -s
    H = np.zeros((layout.nv, layout.nv))
    for B, D in zip(layout.blocks(theta), layout.D):
        for M, sign in ((B - t * I, 1.0), (I - B, -1.0)):
            L = _chol(M)
            if L is None:
                return None
            val -= 2.0 * np.log(np.diag(L)).sum()
            Li = sla.solve_triangular(L, I, lower=True)
            E = sign * D
            if sign > 0:
                E = E.copy()
                E[layout.it] = -I
            W = Li @ E @ Li.T
            Wf = W.reshape(layout.nv, -1)
            g -= np.trace(W, axis1=1, axis2=2)
            H += Wf @ Wf.T
    return val, g, H


def _newton_direction(H, g):
    d = np.sqrt(np.maximum(np.diag(H), 1e-300))
    Hs = H / np.outer(d, d)
    Hs[np.diag_indices_from(Hs)] += 1e-13
    try:
        c = sla.cho_factor(Hs)
        step = sla.cho_solve(c, -g / d)
    except np.linalg.LinAlgError:
        step = np.linalg.lstsq(Hs, -g / d, rcond=1e-14)[0]
    return step / d


def solve_lmi(inst: LmiInstance, min_margin: float = FEASIBILITY_MARGIN,
              gap_tol: float = GAP_TOL, max_newton: int = 60) -> LmiCertificate:
    """Maximize the normalized margin; return a certificate or raise LmiInfeasible."""
    if inst.m > MAX_ORDER:
        raise ValueError(f"order {inst.m} exceeds {MAX_ORDER}")
    layout = _Layout(inst)
    m = inst.m
    alpha = 0.5 / (1.0 + np.linalg.norm(inst.F, 2))
    I = np.eye(m)
    theta = layout.pack(alpha * I, alpha * I, alpha * I, np.zeros((1, m)), 0.0)
    t0 = min(psd_margin(B) for B in layout.blocks(theta)) - 1.0
    theta[layout.it] = t0

    nu = 4 * 2 * m  # total barrier dimension
    s = nu  # initial duality-gap proxy nu / s = 1
    while True:
        for _ in range(max_newton):
            terms = _barrier_terms(layout, theta, s)
            if terms is None:
                raise LmiNumericalError("iterate left the interior of the LMI cone")
            val, g, H = terms
            d = _newton_direction(H, g)
            if not np.all(np.isfinite(d)):
                raise LmiNumericalError("Newton step is not finite")
            dec = -g @ d
            if dec < 0:
                # rounding made the direction ascent; fall back to scaled gradient
                d = -g / np.maximum(np.diag(H), 1e-300)
                dec = -g @ d
            if dec / 2 <= 1e-12:
                break
            step = 1.0
            while step > 1e-14:
                cand = theta + step * d
                new = _barrier_terms(layout, cand, s)
                if new is not None and new[0] <= val - 0.25 * step * dec:
                    break
                step *= 0.5
            else:
                break  # no further progress at this barrier weight
            theta = cand
            if val - new[0] <= 1e-13 * max(1.0, abs(val)):
                break  # stalled at rounding level
        # Newton may stall once the Hessian is ill-conditioned; the iterate is
        # still strictly feasible, so its t remains a valid lower bound.
        t = theta[layout.it]
        if nu / s < gap_tol:
            break
        if t + nu / s <= min_margin:
            # even the optimistic bound cannot clear the threshold
            break
        s *= 10.0

    P_lo, P_hi, Q, R, t = layout.unpack(theta)
    margin = certificate_margin(inst, P_lo, P_hi, Q, R)
    if not margin > min_margin:
        raise LmiInfeasible(max(margin, t), inst)
    return LmiCertificate(P_lo, P_hi, Q.copy(), R.copy(), margin)
