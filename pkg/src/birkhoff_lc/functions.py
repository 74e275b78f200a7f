"""Device and source function families.

ScalarFunction: the charge/current-controlled device laws.  Three shapes are
supported (polynomial, affine-plus-sinusoid, piecewise-linear table), each on
a closed domain interval, with values, derivatives and an antiderivative that
is exact for polynomials and exact piecewise integration for the others.

TimeFunction: independent-source waveforms with derivatives up to order 2 and
antiderivatives down to order -2 (normalized to vanish, together with the
needed integration constants, at t = 0).

TimeCombo: an exact rational linear combination of TimeFunctions plus a
constant.  These appear wherever the configuration-space construction pushes
source waveforms through rational eliminations.
"""

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence, Tuple

from .errors import DomainError

_DOMAIN_SLACK = 1e-9


def _check_domain(x, lo, hi, what):
    slack = _DOMAIN_SLACK * max(1.0, abs(lo), abs(hi))
    if x < lo - slack or x > hi + slack:
        raise DomainError(f"{what} evaluated at {x!r}, outside domain [{lo}, {hi}]")


class ScalarFunction:
    """Base interface: value, derivative, antiderivative on a closed domain."""

    domain: Tuple[float, float]

    def __call__(self, x: float) -> float:
        raise NotImplementedError

    def deriv(self, x: float) -> float:
        raise NotImplementedError

    def antideriv(self, x: float) -> float:
        """Antiderivative normalized to vanish at the domain-clamped origin."""
        raise NotImplementedError

    def _ref_point(self) -> float:
        lo, hi = self.domain
        return min(max(0.0, lo), hi)

    def sample_nonzero(self, n: int = 257) -> bool:
        """Sampled check that the function never vanishes on its domain."""
        lo, hi = self.domain
        for i in range(n):
            x = lo + (hi - lo) * i / (n - 1) if n > 1 else lo
            if self(x) == 0.0:
                return False
        return True


@dataclass(frozen=True)
class PolynomialFunction(ScalarFunction):
    """p(x) = sum coeffs[k] x^k, coefficients ascending, exact Fractions."""

    coeffs: Tuple[Fraction, ...]
    domain: Tuple[float, float]

    def __call__(self, x):
        _check_domain(x, *self.domain, what="polynomial device law")
        acc = 0.0
        for c in reversed(self.coeffs):
            acc = acc * x + float(c)
        return acc

    def deriv(self, x):
        _check_domain(x, *self.domain, what="polynomial device law")
        acc = 0.0
        for k in range(len(self.coeffs) - 1, 0, -1):
            acc = acc * x + k * float(self.coeffs[k])
        return acc

    def antideriv(self, x):
        _check_domain(x, *self.domain, what="polynomial device law")
        x0 = self._ref_point()

        def raw(t):
            acc = 0.0
            for k in range(len(self.coeffs) - 1, -1, -1):
                acc = acc * t + float(self.coeffs[k]) / (k + 1)
            return acc * t

        return raw(x) - raw(x0)


@dataclass(frozen=True)
class AffineSinusoidFunction(ScalarFunction):
    """f(x) = offset + amplitude * sin(omega x + phase)."""

    offset: float
    amplitude: float
    omega: float
    phase: float
    domain: Tuple[float, float]

    def __call__(self, x):
        _check_domain(x, *self.domain, what="sinusoid device law")
        return self.offset + self.amplitude * math.sin(self.omega * x + self.phase)

    def deriv(self, x):
        _check_domain(x, *self.domain, what="sinusoid device law")
        return self.amplitude * self.omega * math.cos(self.omega * x + self.phase)

    def antideriv(self, x):
        _check_domain(x, *self.domain, what="sinusoid device law")
        x0 = self._ref_point()

        def raw(t):
            return self.offset * t - self.amplitude / self.omega * math.cos(self.omega * t + self.phase)

        return raw(x) - raw(x0)


@dataclass(frozen=True)
class PwlTableFunction(ScalarFunction):
    """Piecewise-linear table; domain is the breakpoint span.

    Evaluation at a breakpoint takes the (continuous) table value; the
    derivative takes the right-hand slope except at the right endpoint.
    """

    points: Tuple[Tuple[float, float], ...]

    @property
    def domain(self):
        return (self.points[0][0], self.points[-1][0])

    def _segment(self, x):
        pts = self.points
        # rightmost segment whose left knot is <= x (right-limit convention)
        for i in range(len(pts) - 1):
            if x < pts[i + 1][0]:
                return i
        return len(pts) - 2

    def __call__(self, x):
        _check_domain(x, *self.domain, what="piecewise-linear device law")
        i = self._segment(x)
        (x0, y0), (x1, y1) = self.points[i], self.points[i + 1]
        return y0 + (y1 - y0) * (x - x0) / (x1 - x0)

    def deriv(self, x):
        _check_domain(x, *self.domain, what="piecewise-linear device law")
        lo, hi = self.domain
        if x >= hi:
            i = len(self.points) - 2
        else:
            i = self._segment(x)
        (x0, y0), (x1, y1) = self.points[i], self.points[i + 1]
        return (y1 - y0) / (x1 - x0)

    def antideriv(self, x):
        _check_domain(x, *self.domain, what="piecewise-linear device law")
        x0 = self._ref_point()
        return self._raw_antideriv(x) - self._raw_antideriv(x0)

    def _raw_antideriv(self, x):
        # exact piecewise-quadratic accumulation from the first knot
        pts = self.points
        acc = 0.0
        for i in range(len(pts) - 1):
            (xa, ya), (xb, yb) = pts[i], pts[i + 1]
            if x <= xa:
                break
            xe = min(x, xb)
            m = (yb - ya) / (xb - xa)
            d = xe - xa
            acc += ya * d + 0.5 * m * d * d
        return acc


# ---------------------------------------------------------------------------
# time functions


class TimeFunction:
    """Source waveform with eval(t, order): order 1,2 = derivatives,
    order -1,-2 = antiderivatives vanishing (with their constants) at t=0."""

    def eval(self, t: float, order: int = 0) -> float:
        raise NotImplementedError

    def is_structurally_zero(self, order: int = 0) -> bool:
        return False


@dataclass(frozen=True)
class ConstantSource(TimeFunction):
    value: Fraction

    def eval(self, t, order=0):
        v = float(self.value)
        if order == 0:
            return v
        if order > 0:
            return 0.0
        if order == -1:
            return v * t
        if order == -2:
            return 0.5 * v * t * t
        raise ValueError(f"unsupported order {order}")

    def is_structurally_zero(self, order=0):
        return self.value == 0 or order > 0


@dataclass(frozen=True)
class SinusoidSource(TimeFunction):
    """amplitude * sin(omega t + phase), omega != 0."""

    amplitude: float
    omega: float
    phase: float

    def eval(self, t, order=0):
        A, w, p = self.amplitude, self.omega, self.phase
        if order >= 0:
            # d^n/dt^n sin(wt+p) = w^n sin(wt + p + n*pi/2)
            return A * w**order * math.sin(w * t + p + order * math.pi / 2)
        if order == -1:
            return -A / w * math.cos(w * t + p) + A / w * math.cos(p)
        if order == -2:
            return (-A / w**2 * math.sin(w * t + p)
                    + A / w**2 * math.sin(p)
                    + A / w * math.cos(p) * t)
        raise ValueError(f"unsupported order {order}")

    def is_structurally_zero(self, order=0):
        return self.amplitude == 0


@dataclass(frozen=True)
class PolynomialSource(TimeFunction):
    """sum coeffs[k] t^k with exact Fraction coefficients."""

    coeffs: Tuple[Fraction, ...]

    def eval(self, t, order=0):
        cs = self._shifted(order)
        acc = 0.0
        for c in reversed(cs):
            acc = acc * t + float(c)
        return acc

    def _shifted(self, order):
        cs = list(self.coeffs)
        for _ in range(max(order, 0)):
            cs = [Fraction(k) * cs[k] for k in range(1, len(cs))]
        for _ in range(max(-order, 0)):
            cs = [Fraction(0)] + [c / (k + 1) for k, c in enumerate(cs)]
        return cs

    def is_structurally_zero(self, order=0):
        return all(c == 0 for c in self.coeffs[max(order, 0):])


@dataclass(frozen=True)
class PwlSource(TimeFunction):
    """Piecewise-linear waveform over (t, v) knots, constant-held outside."""

    points: Tuple[Tuple[float, float], ...]

    def eval(self, t, order=0):
        if order == 0:
            return self._value(t)
        if order == 1:
            return self._slope(t)
        if order >= 2:
            return 0.0
        if order == -1:
            return self._raw_int(t) - self._raw_int(0.0)
        if order == -2:
            f0 = self._raw_int(0.0)
            return (self._raw_int2(t) - self._raw_int2(0.0)) - f0 * t
        raise ValueError(f"unsupported order {order}")

    def _value(self, t):
        pts = self.points
        if t <= pts[0][0]:
            return pts[0][1]
        if t >= pts[-1][0]:
            return pts[-1][1]
        for i in range(len(pts) - 1):
            if t < pts[i + 1][0]:
                (x0, y0), (x1, y1) = pts[i], pts[i + 1]
                return y0 + (y1 - y0) * (t - x0) / (x1 - x0)
        return pts[-1][1]

    def _slope(self, t):
        pts = self.points
        if t < pts[0][0] or t >= pts[-1][0]:
            return 0.0
        for i in range(len(pts) - 1):
            if t < pts[i + 1][0]:
                (x0, y0), (x1, y1) = pts[i], pts[i + 1]
                return (y1 - y0) / (x1 - x0)
        return 0.0

    def _raw_int(self, t):
        # antiderivative of value, referenced at the first knot
        pts = self.points
        t0 = pts[0][0]
        if t <= t0:
            return pts[0][1] * (t - t0)
        acc = 0.0
        for i in range(len(pts) - 1):
            (xa, ya), (xb, yb) = pts[i], pts[i + 1]
            if t <= xa:
                return acc
            xe = min(t, xb)
            m = (yb - ya) / (xb - xa)
            d = xe - xa
            acc += ya * d + 0.5 * m * d * d
        acc += pts[-1][1] * (t - pts[-1][0])
        return acc

    def _raw_int2(self, t):
        # antiderivative of _raw_int, referenced at the first knot
        pts = self.points
        t0 = pts[0][0]
        if t <= t0:
            return 0.5 * pts[0][1] * (t - t0) ** 2
        acc2 = 0.0
        acc1 = 0.0
        for i in range(len(pts) - 1):
            (xa, ya), (xb, yb) = pts[i], pts[i + 1]
            if t <= xa:
                return acc2
            xe = min(t, xb)
            m = (yb - ya) / (xb - xa)
            d = xe - xa
            acc2 += acc1 * d + 0.5 * ya * d * d + m * d**3 / 6.0
            acc1 += ya * d + 0.5 * m * d * d
        d = t - pts[-1][0]
        if d > 0:
            acc2 += acc1 * d + 0.5 * pts[-1][1] * d * d
        return acc2

    def is_structurally_zero(self, order=0):
        if order >= 2:
            return True
        return all(v == 0 for _, v in self.points)


# ---------------------------------------------------------------------------
# rational linear combinations of time functions


class TimeCombo:
    """const + sum coeff_i * (d/dt)^shift_i f_i with exact Fraction coeffs."""

    __slots__ = ("terms", "const")

    def __init__(self, terms=(), const=Fraction(0)):
        self.terms = tuple((Fraction(c), tf, int(s)) for c, tf, s in terms if c != 0)
        self.const = Fraction(const)

    def __call__(self, t, order=0):
        if order == 0:
            acc = float(self.const)
        elif order == -1:
            acc = float(self.const) * t
        elif order == -2:
            acc = 0.5 * float(self.const) * t * t
        elif order > 0:
            acc = 0.0
        else:
            raise ValueError(f"unsupported order {order}")
        for c, tf, s in self.terms:
            acc += float(c) * tf.eval(t, order + s)
        return acc

    def derivative(self):
        return TimeCombo([(c, tf, s + 1) for c, tf, s in self.terms])

    def antiderivative(self):
        terms = [(c, tf, s - 1) for c, tf, s in self.terms]
        if self.const != 0:
            terms.append((self.const, PolynomialSource((Fraction(0), Fraction(1))), 0))
        return TimeCombo(terms)

    def scaled(self, factor):
        factor = Fraction(factor)
        return TimeCombo([(c * factor, tf, s) for c, tf, s in self.terms], self.const * factor)

    def plus(self, other):
        return TimeCombo(self.terms + other.terms, self.const + other.const)

    def is_zero(self):
        return self.const == 0 and all(
            tf.is_structurally_zero(s) for _, tf, s in self.terms
        )


def combo_zero():
    return TimeCombo()


def combo_const(c):
    return TimeCombo((), Fraction(c))


def combo_matvec(m: Sequence[Sequence[Fraction]], combos: Sequence[TimeCombo]):
    """Apply an exact rational matrix to a vector of TimeCombos."""
    out = []
    for row in m:
        acc = TimeCombo()
        for c, combo in zip(row, combos):
            if c != 0:
                acc = acc.plus(combo.scaled(c))
        out.append(acc)
    return out
