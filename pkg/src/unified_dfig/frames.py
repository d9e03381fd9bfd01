"""Space-vector algebra, reference-frame rotations and the per-unit system.

Vectors follow the D-Q convention ``z = z_Q - j z_D``: the Q-axis is the
positive real axis and the D-axis is the negative imaginary axis.  Internally
every vector is a Python ``complex`` with that layout, so ordinary complex
arithmetic (and ``e^{j theta}`` rotations) applies unchanged.

The abc decomposition is amplitude invariant (two-thirds factor): a balanced
set of phase peak ``X`` maps to a vector of magnitude ``X``.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass

SYNCHRONOUS = "synchronous"
STATIONARY = "stationary"
ROTOR = "rotor"

# operator a = e^{j 2 pi / 3}
_A = cmath.exp(2j * math.pi / 3.0)
_A2 = _A * _A

ALIGN_EPS = 1e-9


class FrameError(ValueError):
    """Raised on a binary operation between vectors in different frames."""


class DegenerateReferenceError(ValueError):
    """Raised when aligning to a (numerically) null reference vector."""


def aligned_to(name: str) -> str:
    """Frame tag for axes aligned with the named vector."""
    return f"aligned:{name}"


@dataclass(frozen=True)
class ComplexVector:
    q: float
    d: float
    frame: str = SYNCHRONOUS

    @classmethod
    def from_complex(cls, z: complex, frame: str = SYNCHRONOUS) -> "ComplexVector":
        return cls(z.real, -z.imag, frame)

    def to_complex(self) -> complex:
        return complex(self.q, -self.d)

    @property
    def magnitude(self) -> float:
        return math.hypot(self.q, self.d)

    def _check(self, other: "ComplexVector") -> None:
        if self.frame != other.frame:
            raise FrameError(f"frame mismatch: {self.frame!r} vs {other.frame!r}")

    def __add__(self, other: "ComplexVector") -> "ComplexVector":
        self._check(other)
        return ComplexVector(self.q + other.q, self.d + other.d, self.frame)

    def __sub__(self, other: "ComplexVector") -> "ComplexVector":
        self._check(other)
        return ComplexVector(self.q - other.q, self.d - other.d, self.frame)

    def __neg__(self) -> "ComplexVector":
        return ComplexVector(-self.q, -self.d, self.frame)

    def __mul__(self, k: float) -> "ComplexVector":
        return ComplexVector(self.q * k, self.d * k, self.frame)

    __rmul__ = __mul__


def abc_to_vector(x_a: float, x_b: float, x_c: float, theta_frame: float = 0.0,
                  frame: str = SYNCHRONOUS) -> ComplexVector:
    """Decompose three phase samples into a space vector.

    ``theta_frame`` is the angle of the target frame's Q-axis measured from
    the phase-a axis.  The zero-sequence part ``(x_a + x_b + x_c) / 3`` is
    discarded.
    """
    z_stat = (2.0 / 3.0) * (x_a + _A * x_b + _A2 * x_c)
    return ComplexVector.from_complex(z_stat * cmath.exp(-1j * theta_frame), frame)


def vector_to_abc(z: ComplexVector, theta_frame: float = 0.0) -> tuple[float, float, float]:
    """Project a space vector back onto the three phase axes."""
    z_stat = z.to_complex() * cmath.exp(1j * theta_frame)
    return (z_stat.real, (z_stat * _A2).real, (z_stat * _A).real)


def zero_sequence(x_a: float, x_b: float, x_c: float) -> float:
    return (x_a + x_b + x_c) / 3.0


def rotate(z: ComplexVector, theta: float) -> ComplexVector:
    """Rotate the vector by ``theta`` (counter-clockwise in the complex plane)."""
    return ComplexVector.from_complex(z.to_complex() * cmath.exp(1j * theta), z.frame)


def align_frame(z: ComplexVector, ref: ComplexVector, name: str = "ref",
                eps: float = ALIGN_EPS) -> ComplexVector:
    """Express ``z`` in axes whose Q-axis lies along ``ref``."""
    z._check(ref)
    r = ref.to_complex()
    mag = abs(r)
    if mag < eps:
        raise DegenerateReferenceError(f"cannot align to a vector of magnitude {mag:g}")
    return ComplexVector.from_complex(z.to_complex() * (r.conjugate() / mag), aligned_to(name))


def cross(a: ComplexVector, b: ComplexVector) -> float:
    """Space-vector cross product ``a_Q b_D - a_D b_Q``."""
    a._check(b)
    return a.q * b.d - a.d * b.q


def dot(a: ComplexVector, b: ComplexVector) -> float:
    """Space-vector dot product ``a_Q b_Q + a_D b_D``."""
    a._check(b)
    return a.q * b.q + a.d * b.d


# complex-number kernels used on the simulation hot path

def ccross(a: complex, b: complex) -> float:
    """``cross`` on raw complex vectors (``a_Q b_D - a_D b_Q``)."""
    return a.imag * b.real - a.real * b.imag


def cdot(a: complex, b: complex) -> float:
    return a.real * b.real + a.imag * b.imag


def unit(z: complex) -> complex:
    m = abs(z)
    return z / m if m > 0.0 else 0j


def clamp_magnitude(z: complex, limit: float) -> complex:
    """Scale ``z`` down to ``limit`` keeping its direction."""
    m = abs(z)
    if m > limit:
        return z * (limit / m)
    return z


@dataclass(frozen=True)
class PerUnitBase:
    """Per-unit bases; voltages and currents are phase peak values."""

    v_base: float = 2000.0
    i_base: float = 673.0
    omega_base: float = 2.0 * math.pi * 60.0
    poles: int = 8

    def __post_init__(self) -> None:
        for name in ("v_base", "i_base", "omega_base"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    @property
    def s_base(self) -> float:
        return 1.5 * self.v_base * self.i_base

    @property
    def z_base(self) -> float:
        return self.v_base / self.i_base

    @property
    def flux_base(self) -> float:
        return self.v_base / self.omega_base

    @property
    def torque_base(self) -> float:
        # power base over the mechanical synchronous speed
        return self.s_base * self.poles / (2.0 * self.omega_base)

    def base(self, kind: str) -> float:
        try:
            return {
                "voltage": self.v_base,
                "current": self.i_base,
                "power": self.s_base,
                "impedance": self.z_base,
                "flux": self.flux_base,
                "torque": self.torque_base,
                "speed": self.omega_base,
            }[kind]
        except KeyError:
            raise ValueError(f"unknown per-unit kind {kind!r}") from None


def to_per_unit(x, base: PerUnitBase, kind: str):
    """Divide a scalar, complex or ``ComplexVector`` by the base of ``kind``."""
    b = base.base(kind)
    if isinstance(x, ComplexVector):
        return x * (1.0 / b)
    return x / b


def from_per_unit(x, base: PerUnitBase, kind: str):
    b = base.base(kind)
    if isinstance(x, ComplexVector):
        return x * b
    return x * b
