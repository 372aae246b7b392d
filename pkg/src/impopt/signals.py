"""Time-varying signals and the internal models that generate them.

Signals are evaluated in closed form from the step index, never by running
the generating recurrence, so long horizons do not accumulate drift.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

UNIT_CIRCLE_TOL = 1e-9


class SignalKind(str, enum.Enum):
    SINE = "sine"
    TRIANGLE = "triangle"
    CONSTANT = "constant"
    MULTI_HARMONIC = "multi_harmonic"


@dataclass(frozen=True)
class Polynomial:
    """Real polynomial with ascending coefficients, ``coeffs[i]`` multiplies ``z**i``."""

    coeffs: tuple[float, ...]

    def __post_init__(self):
        c = tuple(float(v) for v in self.coeffs)
        if not c:
            raise ValueError("polynomial needs at least one coefficient")
        if not all(math.isfinite(v) for v in c):
            raise ValueError("polynomial coefficients must be finite")
        object.__setattr__(self, "coeffs", c)

    @property
    def degree(self) -> int:
        return len(self.coeffs) - 1

    @property
    def is_monic(self) -> bool:
        return self.coeffs[-1] == 1.0

    def __call__(self, z):
        # Horner, works for scalars and arrays, real or complex
        acc = np.zeros_like(np.asarray(z), dtype=np.result_type(z, float))
        for c in reversed(self.coeffs):
            acc = acc * z + c
        return acc

    def __mul__(self, other: "Polynomial") -> "Polynomial":
        return Polynomial(tuple(np.convolve(self.coeffs, other.coeffs)))

    def roots(self) -> np.ndarray:
        # np.roots wants descending order
        return np.roots(self.coeffs[::-1])

    def padded(self, length: int) -> np.ndarray:
        """Coefficients zero-padded to ``length`` entries."""
        if len(self.coeffs) > length:
            raise ValueError(f"degree {self.degree} does not fit in {length} coefficients")
        out = np.zeros(length)
        out[: len(self.coeffs)] = self.coeffs
        return out

    @classmethod
    def internal(cls, coeffs) -> "Polynomial":
        """Build an internal-model polynomial, checking it is monic with unit-circle roots."""
        poly = cls(tuple(coeffs))
        if poly.degree < 1:
            raise ValueError("internal model must have degree >= 1")
        if not poly.is_monic:
            raise ValueError(f"internal model must be monic, leading coefficient is {poly.coeffs[-1]}")
        dev = np.abs(np.abs(poly.roots()) - 1.0)
        tol = _root_tolerance(poly)
        if dev.max() > tol:
            raise ValueError(f"internal model has a root off the unit circle (|.|-1 = {dev.max():.3e})")
        return poly

    def __str__(self) -> str:
        terms = []
        for i, c in reversed(list(enumerate(self.coeffs))):
            if c == 0.0:
                continue
            terms.append(f"{c:+.6g}" + ("" if i == 0 else ("*z" if i == 1 else f"*z^{i}")))
        return " ".join(terms) if terms else "0"


def _root_tolerance(poly: Polynomial) -> float:
    """Accuracy of the computed roots of ``poly``.

    A cluster of m roots is determined by the coefficients only to about
    (eps |p|_1)**(1/m), and nearby roots inherit part of that sensitivity.
    The largest m with m computed roots inside a sqrt(tol) neighbourhood sets
    the tolerance.
    """
    r = poly.roots()
    scale = np.finfo(float).eps * np.abs(poly.coeffs).sum()
    for m in range(poly.degree, 0, -1):
        tol = 10 * scale ** (1.0 / m)
        if m == 1 or max(int(np.sum(np.abs(r - z) < math.sqrt(tol))) for z in r) >= m:
            return max(UNIT_CIRCLE_TOL, tol)
    return UNIT_CIRCLE_TOL


@dataclass(frozen=True)
class SignalSpec:
    """Scalar waveform times a fixed direction vector.

    ``harmonics`` is only used by ``MULTI_HARMONIC`` signals, whose waveform is
    ``(1 + sum_l sin(l*omega*k)) / (L + 1)``.
    """

    kind: SignalKind
    omega: float = 0.0
    amplitude: float = 1.0
    direction: np.ndarray = field(default_factory=lambda: np.ones(1))
    harmonics: int = 1

    def __post_init__(self):
        object.__setattr__(self, "kind", SignalKind(self.kind))
        object.__setattr__(self, "direction", np.asarray(self.direction, dtype=float).ravel())
        if self.kind is not SignalKind.CONSTANT and not self.omega > 0:
            raise ValueError(f"{self.kind.value} signal needs omega > 0, got {self.omega}")
        if self.kind is SignalKind.MULTI_HARMONIC and self.harmonics < 1:
            raise ValueError("multi-harmonic signal needs at least one harmonic")

    @property
    def dim(self) -> int:
        return self.direction.size


def triang(t):
    """Triangular wave of period 2*pi with peaks +1 at pi/2 and -1 at 3*pi/2."""
    u = np.asarray(t, dtype=float) / (2 * np.pi)
    out = 4 * np.abs(u - np.floor(u + 0.75) + 0.25) - 1
    return float(out) if np.ndim(out) == 0 else out


def waveform(spec: SignalSpec, k):
    """Scalar waveform value(s) of ``spec`` at step(s) ``k`` (without amplitude)."""
    k = np.asarray(k, dtype=float)
    t = spec.omega * k
    if spec.kind is SignalKind.SINE:
        return np.sin(t)
    if spec.kind is SignalKind.TRIANGLE:
        return triang(t)
    if spec.kind is SignalKind.CONSTANT:
        return np.ones_like(k)
    total = np.ones_like(k)
    for l in range(1, spec.harmonics + 1):
        total = total + np.sin(l * t)
    return total / (spec.harmonics + 1)


def eval_signal(spec: SignalSpec, k) -> np.ndarray:
    """Signal vector at step ``k``; an array of steps gives one row per step."""
    if isinstance(k, (int, np.integer)) and spec.kind is not SignalKind.MULTI_HARMONIC:
        # scalar fast path, used once per simulated step
        if k < 0:
            raise ValueError("step index must be nonnegative")
        t = spec.omega * k
        if spec.kind is SignalKind.SINE:
            wave = math.sin(t)
        elif spec.kind is SignalKind.TRIANGLE:
            wave = triang(t)
        else:
            wave = 1.0
        return (spec.amplitude * wave) * spec.direction
    if np.any(np.asarray(k) < 0):
        raise ValueError("step index must be nonnegative")
    wave = spec.amplitude * np.asarray(waveform(spec, k))
    if wave.ndim == 0:
        return float(wave) * spec.direction
    return np.outer(wave, spec.direction)


def harmonic_factor(omega: float) -> Polynomial:
    """z^2 - 2cos(omega) z + 1."""
    return Polynomial((1.0, -2.0 * math.cos(omega), 1.0))


def multi_harmonic_model(omega: float, harmonics: int) -> Polynomial:
    """(z - 1) * prod_{l=1..L} (z^2 - 2cos(l*omega) z + 1).

    Rejects harmonic sets where some cos(l*omega) = +-1, since the quadratic
    factor then degenerates into a repeated real root.
    """
    if harmonics < 1:
        raise ValueError("need at least one harmonic")
    poly = Polynomial((-1.0, 1.0))
    for l in range(1, harmonics + 1):
        c = math.cos(l * omega)
        if abs(abs(c) - 1.0) < 1e-12:
            raise ValueError(
                f"harmonic {l} of omega={omega} sits at z=+-1 (cos(l*omega)={c:+.1f}); "
                "it would produce a repeated real root"
            )
        poly = poly * harmonic_factor(l * omega)
    return Polynomial.internal(poly.coeffs)


def internal_model(spec: SignalSpec, harmonics: int | None = None) -> Polynomial:
    """Monic polynomial whose roots generate the waveform of ``spec``."""
    if spec.kind is SignalKind.SINE:
        return Polynomial.internal(harmonic_factor(spec.omega).coeffs)
    if spec.kind is SignalKind.TRIANGLE:
        return Polynomial.internal((1.0, -2.0, 1.0))
    if spec.kind is SignalKind.CONSTANT:
        return Polynomial.internal((-1.0, 1.0))
    return multi_harmonic_model(spec.omega, harmonics if harmonics is not None else spec.harmonics)
