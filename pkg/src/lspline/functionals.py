"""Continuous linear functionals F_j, their representers and the K matrix."""
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import quadrature


@dataclass(frozen=True)
class Functional:
    """Either point evaluation ``mu(t)`` or a weighted integral ``int f mu``.

    For integrals, ``support`` restricts the integration range (defaults to
    the kernel interval); the weight should vanish outside it.
    """

    kind: str
    t: Optional[float] = None
    weight: Optional[Callable] = field(default=None, compare=False)
    support: Optional[tuple] = None

    def __post_init__(self):
        if self.kind == "point":
            if self.t is None:
                raise ValueError("point evaluation needs t")
            object.__setattr__(self, "t", float(self.t))
        elif self.kind == "integral":
            if self.weight is None:
                raise ValueError("integral functional needs a weight function")
        else:
            raise ValueError(f"unknown functional kind {self.kind!r}")

    @property
    def is_point(self):
        return self.kind == "point"

    def limits(self, interval):
        a, b = interval
        if self.support is None:
            return a, b
        lo, hi = self.support
        return max(a, lo), min(b, hi)

    def check(self, interval):
        a, b = interval
        if self.is_point:
            if not a <= self.t <= b:
                raise ValueError(f"evaluation point {self.t} outside [{a}, {b}]")
            return
        lo, hi = self.limits(interval)
        x, _ = quadrature.panel_nodes([lo], [hi])
        if not np.all(np.isfinite(self.weight(x.ravel()))):
            raise ValueError("integral weight is not finite on its support")

    def apply(self, g, interval, tol=quadrature.QUAD_TOL, breakpoints=()):
        """F(g) for a vectorised function ``g``."""
        if self.is_point:
            return float(g(np.array([self.t]))[0])
        lo, hi = self.limits(interval)
        return float(quadrature.integrate(lambda s: self.weight(s) * g(s), lo, hi,
                                          tol=tol, breakpoints=breakpoints))


def point_eval(t):
    return Functional("point", t=t)


def integral(weight, support=None):
    return Functional("integral", weight=weight, support=support)


@dataclass(frozen=True)
class KMatrix:
    entries: np.ndarray
    functionals: tuple

    def __array__(self, dtype=None, copy=None):
        return self.entries if dtype is None else self.entries.astype(dtype)

    @property
    def n(self):
        return self.entries.shape[0]


def representer(fj, k):
    """eta_j(t) = F_j(R1(., t)) as a vectorised function of ``t``."""
    if fj.is_point:
        tj = fj.t
        return lambda t: k.r1(tj, np.asarray(t, float))

    lo, hi = fj.limits(k.interval)

    def eta(t):
        t = np.asarray(t, dtype=float)
        out = np.empty(t.shape)
        for idx in np.ndindex(t.shape):
            ti = float(t[idx])
            out[idx] = quadrature.integrate(
                lambda s: fj.weight(s) * k.r1(s, ti), lo, hi,
                tol=k.quad_tol, breakpoints=(ti,))
        return out

    return eta


def _pair(fj, fk, k):
    if fj.is_point and fk.is_point:
        return float(k.r1(fj.t, fk.t))
    if not fj.is_point and fk.is_point:
        fj, fk = fk, fj
    eta = representer(fj, k)
    if fj.is_point:
        return fk.apply(eta, k.interval, tol=k.quad_tol, breakpoints=(fj.t,))
    lo, hi = fk.limits(k.interval)
    return float(quadrature.integrate(
        lambda t: fk.weight(t) * eta(t), lo, hi, tol=k.quad_tol,
        max_panels=2 * quadrature.MAX_PANELS))


def assemble_k(functionals, k):
    """K[j, l] = F_l(eta_j), symmetrised as (K + K')/2."""
    functionals = tuple(functionals)
    if not functionals:
        raise ValueError("need at least one functional")
    for f in functionals:
        f.check(k.interval)
    n = len(functionals)
    if all(f.is_point for f in functionals):
        pts = np.array([f.t for f in functionals])
        K = k.r1_gram(pts)
    else:
        K = np.empty((n, n))
        for j in range(n):
            for l in range(j, n):
                K[j, l] = K[l, j] = _pair(functionals[j], functionals[l], k)
    return KMatrix(0.5 * (K + K.T), functionals)


def null_design(functionals, basis):
    """T[j, i] = F_j(u_i)."""
    functionals = tuple(functionals)
    if all(f.is_point for f in functionals):
        return basis.values(np.array([f.t for f in functionals])).T.copy()
    T = np.empty((len(functionals), basis.m))
    for j, f in enumerate(functionals):
        for i, u in enumerate(basis.functions):
            T[j, i] = f.apply(lambda s: u.evaluate(s), basis.interval)
    return T
