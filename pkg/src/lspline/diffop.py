"""Linear differential operators, null-space bases and Wronskians.

An operator of order m acts as

    (L f)(t) = f^(m)(t) + sum_{j<m} w_j(t) f^(j)(t)

with the coefficients w_j either constant, user supplied functions, or
implied by a basis u_1..u_m that L must annihilate.
"""
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import RootFindingFailure, SingularWronskian

TOL_NULL = 1e-8
RCOND_MIN = 1e-12
CLUSTER_TOL = 1e-7
REAL_TOL = 1e-9
MERGE_TOL = 1e-2

_TRIGS = ("none", "cos", "sin")


@dataclass(frozen=True)
class ExpPolyTerm:
    """``scale * t**power * exp(rate*t) * trig(freq*t)``."""

    power: int = 0
    rate: float = 0.0
    trig: str = "none"
    freq: float = 0.0
    scale: float = 1.0

    def __post_init__(self):
        if self.power < 0:
            raise ValueError("power must be non-negative")
        if self.trig not in _TRIGS:
            raise ValueError(f"trig must be one of {_TRIGS}, got {self.trig!r}")
        if self.freq < 0:
            raise ValueError("freq must be non-negative")

    @property
    def key(self):
        return (self.power, self.rate, self.trig, self.freq)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        out = self.scale * np.ones_like(t)
        if self.power:
            out = out * t**self.power
        if self.rate:
            out = out * np.exp(self.rate * t)
        if self.trig == "cos":
            out = out * np.cos(self.freq * t)
        elif self.trig == "sin":
            out = out * np.sin(self.freq * t)
        return out

    def derivative(self):
        """Derivative as a list of terms (product rule on the three factors)."""
        k, a, trig, b, c = self.power, self.rate, self.trig, self.freq, self.scale
        out = []
        if k:
            out.append(ExpPolyTerm(k - 1, a, trig, b, c * k))
        if a:
            out.append(ExpPolyTerm(k, a, trig, b, c * a))
        if trig == "cos" and b:
            out.append(ExpPolyTerm(k, a, "sin", b, -c * b))
        elif trig == "sin" and b:
            out.append(ExpPolyTerm(k, a, "cos", b, c * b))
        return out


@dataclass(frozen=True)
class ExpPolyFunction:
    """A finite sum of :class:`ExpPolyTerm`; closed under differentiation."""

    terms: tuple

    def __post_init__(self):
        object.__setattr__(self, "terms", _merge(self.terms))

    def __call__(self, t):
        return self.evaluate(t, 0)

    def derivative(self):
        return ExpPolyFunction(tuple(d for term in self.terms for d in term.derivative()))

    @lru_cache(maxsize=16)
    def nth_derivative(self, order):
        f = self
        for _ in range(order):
            f = f.derivative()
        return f

    def evaluate(self, t, order=0):
        f = self.nth_derivative(order)
        t = np.asarray(t, dtype=float)
        out = np.zeros_like(t)
        for term in f.terms:
            out = out + term(t)
        return out

    def to_dict(self):
        return [dict(power=s.power, rate=s.rate, trig=s.trig, freq=s.freq, scale=s.scale)
                for s in self.terms]

    @classmethod
    def from_dict(cls, terms):
        return cls(tuple(ExpPolyTerm(**d) for d in terms))


def _merge(terms):
    acc = {}
    for term in terms:
        acc[term.key] = acc.get(term.key, 0.0) + term.scale
    return tuple(ExpPolyTerm(*key, scale=c) for key, c in acc.items() if c != 0.0)


def exp_poly(power=0, rate=0.0, trig="none", freq=0.0, scale=1.0):
    """Shorthand for a single-term :class:`ExpPolyFunction`."""
    return ExpPolyFunction((ExpPolyTerm(power, rate, trig, freq, scale),))


@dataclass(frozen=True)
class CallableFunction:
    """A user function given by its analytic derivatives ``[f, f', f'', ...]``.

    Derivatives beyond those supplied are refused; there is no
    finite-difference fallback.
    """

    derivatives: tuple

    def __init__(self, derivatives: Sequence[Callable]):
        object.__setattr__(self, "derivatives", tuple(derivatives))

    def __call__(self, t):
        return self.evaluate(t, 0)

    def evaluate(self, t, order=0):
        if order >= len(self.derivatives):
            raise ValueError(
                f"derivative of order {order} requested but only "
                f"{len(self.derivatives) - 1} supplied"
            )
        t = np.asarray(t, dtype=float)
        return np.broadcast_to(np.asarray(self.derivatives[order](t), dtype=float), t.shape)


@dataclass(frozen=True)
class NullSpaceBasis:
    functions: tuple
    interval: tuple = (0.0, 1.0)

    def __post_init__(self):
        object.__setattr__(self, "functions", tuple(self.functions))
        a, b = map(float, self.interval)
        if not a < b:
            raise ValueError(f"interval must satisfy a < b, got {self.interval}")
        object.__setattr__(self, "interval", (a, b))
        if not self.functions:
            raise ValueError("basis needs at least one function")

    @property
    def m(self):
        return len(self.functions)

    @property
    def a(self):
        return self.interval[0]

    @property
    def b(self):
        return self.interval[1]

    def values(self, t, order=0):
        """Array of shape ``(m,) + t.shape`` holding u_i^(order)(t)."""
        t = np.asarray(t, dtype=float)
        return np.stack([f.evaluate(t, order) for f in self.functions])

    def with_interval(self, interval):
        return NullSpaceBasis(self.functions, interval)

    def to_dict(self):
        if not all(isinstance(f, ExpPolyFunction) for f in self.functions):
            raise TypeError("only exp-polynomial bases can be serialized")
        return {"m": self.m, "basis": [f.to_dict() for f in self.functions]}


@dataclass(frozen=True)
class LinearOperator:
    """Order-m operator with constant, functional or basis-defined coefficients.

    Use :meth:`constant`, :meth:`from_functions` or :func:`operator_from_basis`
    rather than the raw constructor.
    """

    m: int
    constant_coeffs: Optional[tuple] = None
    coeff_functions: Optional[tuple] = None
    basis: Optional[NullSpaceBasis] = field(default=None, compare=False)

    def __post_init__(self):
        if self.m < 1:
            raise ValueError("operator order must be >= 1")
        given = [x is not None for x in (self.constant_coeffs, self.coeff_functions, self.basis)]
        if sum(given) != 1:
            raise ValueError("exactly one coefficient representation is required")
        if self.constant_coeffs is not None and len(self.constant_coeffs) != self.m:
            raise ValueError(f"expected {self.m} coefficients, got {len(self.constant_coeffs)}")
        if self.coeff_functions is not None and len(self.coeff_functions) != self.m:
            raise ValueError(f"expected {self.m} coefficient functions")
        if self.basis is not None and self.basis.m != self.m:
            raise ValueError("basis size does not match operator order")

    @classmethod
    def constant(cls, coeffs):
        coeffs = tuple(float(c) for c in coeffs)
        return cls(len(coeffs), constant_coeffs=coeffs)

    @classmethod
    def from_functions(cls, funcs):
        funcs = tuple(funcs)
        return cls(len(funcs), coeff_functions=funcs)

    @property
    def is_constant(self):
        return self.constant_coeffs is not None

    def coefficients(self, t):
        """Coefficient values w_j(t), shape ``(m,) + t.shape``."""
        t = np.asarray(t, dtype=float)
        if self.constant_coeffs is not None:
            return np.stack([np.full(t.shape, c) for c in self.constant_coeffs])
        if self.coeff_functions is not None:
            return np.stack([np.broadcast_to(np.asarray(w(t), float), t.shape)
                             for w in self.coeff_functions])
        W = wronskian(self.basis, t)
        rhs = -self.basis.values(t, self.m)
        rhs = np.moveaxis(rhs, 0, -1)[..., None]
        return np.moveaxis(np.linalg.solve(W, rhs)[..., 0], -1, 0)

    def to_dict(self):
        if self.constant_coeffs is not None:
            return {"m": self.m, "coeffs": list(self.constant_coeffs)}
        if self.basis is not None:
            d = self.basis.to_dict()
            d["interval"] = list(self.basis.interval)
            return d
        raise TypeError("operators with callable coefficients cannot be serialized")

    @classmethod
    def from_dict(cls, d):
        m = int(d["m"])
        if "coeffs" in d:
            op = cls.constant(d["coeffs"])
            if op.m != m:
                raise ValueError(f"'m' is {m} but {op.m} coefficients given")
            return op
        if "basis" in d:
            funcs = tuple(ExpPolyFunction.from_dict(f) for f in d["basis"])
            if len(funcs) != m:
                raise ValueError(f"'m' is {m} but {len(funcs)} basis functions given")
            basis = NullSpaceBasis(funcs, tuple(d.get("interval", (0.0, 1.0))))
            return operator_from_basis(basis)
        raise ValueError("operator descriptor needs 'coeffs' or 'basis'")


def preset(name, gamma=None, omega=None):
    """Named operators: ``linear`` (D), ``cubic`` (D^2), ``exp_gamma``
    (D^2 + gamma D) and ``harmonic_omega`` (D^4 + omega^2 D^2)."""
    if name == "linear":
        return LinearOperator.constant([0.0])
    if name == "cubic":
        return LinearOperator.constant([0.0, 0.0])
    if name == "exp_gamma":
        if gamma is None or gamma == 0:
            raise ValueError("exp_gamma needs a nonzero gamma")
        return LinearOperator.constant([0.0, float(gamma)])
    if name == "harmonic_omega":
        if omega is None or omega <= 0:
            raise ValueError("harmonic_omega needs omega > 0")
        return LinearOperator.constant([0.0, 0.0, float(omega) ** 2, 0.0])
    raise ValueError(f"unknown operator preset {name!r}")


# -- characteristic polynomial ------------------------------------------------

def _poly_derivative_coeffs(c, k):
    """Coefficients (highest first) of the k-th derivative of a polynomial."""
    c = np.asarray(c, dtype=complex)
    for _ in range(k):
        c = np.polyder(c)
    return c


def characteristic_roots(coeffs):
    """Distinct roots of ``x^m + sum_j coeffs[j] x^j`` with multiplicities.

    Returns a list of ``(root, multiplicity)`` with real roots as floats
    and one representative (positive imaginary part) per conjugate pair.
    """
    coeffs = [float(c) for c in coeffs]
    m = len(coeffs)
    zero_mult = 0
    while zero_mult < m and coeffs[zero_mult] == 0.0:
        zero_mult += 1
    rest = coeffs[zero_mult:]
    d = len(rest)
    roots = []
    if zero_mult:
        roots.append((0.0, zero_mult))
    if d:
        poly = np.concatenate([[1.0], rest[::-1]])
        companion = np.zeros((d, d))
        companion[1:, :-1] = np.eye(d - 1)
        companion[:, -1] = -np.asarray(rest)
        eig = np.linalg.eigvals(companion)
        for center, mult in _cluster(eig, poly):
            roots.append((_refine(poly, center, mult), mult))
    out = []
    pending = []
    for r, k in roots:
        r = complex(r)
        if abs(r.real) <= REAL_TOL * (1 + abs(r)):
            r = complex(0.0, r.imag)
        if abs(r.imag) <= REAL_TOL * (1 + abs(r)):
            out.append((r.real, k))
        else:
            pending.append((r, k))
    upper = sorted(((r, k) for r, k in pending if r.imag > 0),
                   key=lambda p: (p[0].real, p[0].imag))
    lower = sorted(((r.conjugate(), k) for r, k in pending if r.imag < 0),
                   key=lambda p: (p[0].real, p[0].imag))
    if len(upper) != len(lower):
        raise RootFindingFailure("complex roots do not pair into conjugates")
    for (r1, k1), (r2, k2) in zip(upper, lower):
        if k1 != k2 or abs(r1 - r2) > CLUSTER_TOL * max(1.0, abs(r1)):
            raise RootFindingFailure("complex roots do not pair into conjugates")
        out.append((complex(r1.real, 0.5 * (r1.imag + r2.imag)), k1))
    if sum(k if isinstance(r, float) else 2 * k for r, k in out) != m:
        raise RootFindingFailure("root multiplicities do not sum to the operator order")
    return out


def _cluster(eig, poly=None):
    """Group eigenvalues into (centre, multiplicity).

    Single linkage at CLUSTER_TOL (relative) first. A k-fold root spreads
    the computed eigenvalues by about eps**(1/k), which exceeds that
    tolerance for k >= 3, so nearby groups are then merged when the
    centre of the union is a common root of ``poly`` and its first k-1
    derivatives.
    """
    groups = [[z] for z in eig]
    merged = True
    while merged:
        merged = False
        for i in range(len(groups)):
            for j in range(i + 1, len(groups)):
                if any(abs(x - y) <= CLUSTER_TOL * max(1.0, abs(x), abs(y))
                       for x in groups[i] for y in groups[j]):
                    groups[i] += groups.pop(j)
                    merged = True
                    break
            if merged:
                break
    while poly is not None and len(groups) > 1:
        pairs = sorted(
            (abs(np.mean(g) - np.mean(h)), i, j)
            for i, g in enumerate(groups) for j, h in enumerate(groups) if i < j)
        for dist, i, j in pairs:
            z = np.mean(groups[i] + groups[j])
            if dist > MERGE_TOL * max(1.0, abs(z)):
                continue
            if _is_multiple(poly, z, len(groups[i]) + len(groups[j])):
                groups[i] += groups.pop(j)
                break
        else:
            break
    return [(np.mean(g), len(g)) for g in groups]


def _is_multiple(poly, z, mult):
    for j in range(mult):
        p = _poly_derivative_coeffs(poly, j)
        if abs(np.polyval(p, z)) > 1e-10 * (np.polyval(np.abs(p), abs(z)) + 1.0):
            return False
    return True


def _refine(poly, z, mult, max_iter=50):
    """Newton on the (mult-1)-th derivative, where a mult-fold root is simple."""
    p = _poly_derivative_coeffs(poly, mult - 1)
    dp = np.polyder(p)
    z0 = complex(z)
    last = np.inf
    for _ in range(max_iter):
        dz_den = np.polyval(dp, z)
        if dz_den == 0:
            break
        step = np.polyval(p, z) / dz_den
        if abs(step) >= last:
            # rounding level reached: the step no longer shrinks
            break
        z = z - step
        last = abs(step)
        if last <= 1e-15 * (1 + abs(z)):
            break
    else:
        raise RootFindingFailure(f"Newton refinement of root near {z0} did not converge")
    scale = np.polyval(np.abs(p), abs(z)) + 1.0
    if abs(np.polyval(p, z)) > 1e-10 * scale or abs(z - z0) > 1e-3 * (1 + abs(z0)):
        raise RootFindingFailure(f"root near {z0} failed to refine to tolerance")
    return z


def null_basis_constant(op, interval=(0.0, 1.0)):
    """Real exp-polynomial basis of the null space of a constant-coefficient operator.

    A real root r of multiplicity k contributes t^l e^{rt}, l < k; a
    conjugate pair a +/- ib contributes t^l e^{at} cos(bt) and
    t^l e^{at} sin(bt).
    """
    if not op.is_constant:
        raise ValueError("null_basis_constant needs constant coefficients")
    roots = characteristic_roots(op.constant_coeffs)
    roots.sort(key=lambda rk: (abs(rk[0]), -complex(rk[0]).real, complex(rk[0]).imag))
    funcs = []
    for r, k in roots:
        for l in range(k):
            if isinstance(r, float):
                funcs.append(exp_poly(l, r))
            else:
                funcs.append(exp_poly(l, r.real, "cos", r.imag))
                funcs.append(exp_poly(l, r.real, "sin", r.imag))
    return NullSpaceBasis(tuple(funcs), interval)


def wronskian(basis, t):
    """W(t) with rows indexed by basis function, columns by derivative order.

    Vectorised: ``t`` of shape S gives an array of shape ``S + (m, m)``.
    """
    t = np.asarray(t, dtype=float)
    m = basis.m
    W = np.stack([basis.values(t, j) for j in range(m)], axis=-1)  # (m, *S, m)
    return np.moveaxis(W, 0, -2)


def check_wronskian(basis, t=None, rcond_min=RCOND_MIN):
    """Raise :class:`SingularWronskian` if W is ill-conditioned at ``a`` or at ``t``."""
    pts = np.atleast_1d(basis.a) if t is None else np.append(basis.a, np.ravel(t))
    W = wronskian(basis, pts)
    with np.errstate(divide="ignore", invalid="ignore"):
        rc = 1.0 / np.linalg.cond(W)
    bad = ~(rc >= rcond_min)
    if np.any(bad):
        where = pts[bad][0]
        raise SingularWronskian(
            f"Wronskian reciprocal condition {np.nan_to_num(rc[bad][0]):.3g} < {rcond_min:g} at t={where:g}"
        )


def wronskian_last_row_inverse(basis, t, check=True):
    """Last row (u*_1(t), ..., u*_m(t)) of W(t)^{-1}; shape ``(m,) + t.shape``.

    Solves W(t)' x = e_m rather than inverting W(t).
    """
    t = np.asarray(t, dtype=float)
    if check:
        check_wronskian(basis, t)
    W = wronskian(basis, t)
    e = np.zeros(W.shape[:-1] + (1,))
    e[..., -1, 0] = 1.0
    star = np.linalg.solve(np.swapaxes(W, -1, -2), e)[..., 0]
    return np.moveaxis(star, -1, 0)


def operator_from_basis(basis, check_points=None):
    """Operator with L u_i = 0, coefficients w(t) = -W(t)^{-1} (u_1^(m), ..., u_m^(m))'.

    The Wronskian is checked at ``a`` and, if given, at ``check_points``.
    """
    check_wronskian(basis, check_points)
    return LinearOperator(basis.m, basis=basis)


def apply_operator(op, f, t):
    """(L f)(t) for ``f`` exposing ``evaluate(t, order)``."""
    t = np.asarray(t, dtype=float)
    w = op.coefficients(t)
    out = np.asarray(f.evaluate(t, op.m), dtype=float).copy()
    for j in range(op.m):
        out = out + w[j] * f.evaluate(t, j)
    return out


def basis_for(op, interval=(0.0, 1.0)):
    """Null-space basis of ``op`` on ``interval`` (constant or basis-defined)."""
    if op.basis is not None:
        return op.basis.with_interval(interval)
    if op.is_constant:
        return null_basis_constant(op, interval)
    raise ValueError(
        "operators with general coefficient functions need a user-supplied basis"
    )
