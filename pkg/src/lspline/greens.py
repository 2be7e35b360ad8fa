"""Green's functions and the reproducing kernels R0, R1 of an operator.

With u_1..u_m a null-space basis and u*(u) the last row of W(u)^{-1},

    G(t, u) = sum_i u_i(t) u*_i(u)     (u <= t, zero otherwise)
    R0(s, t) = u(s)' C u(t),           C = (W(a) W(a)')^{-1}
    R1(s, t) = int_a^min(s,t) G(s, u) G(t, u) du

Three operators (D, D^2, D^2 + gamma D) also have hand-coded kernels,
which the quadrature path is checked against.
"""
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import linalg

from . import quadrature
from .diffop import (
    apply_operator,
    basis_for,
    check_wronskian,
    wronskian,
    wronskian_last_row_inverse,
)
from .errors import BoundaryViolation, SingularWronskian

MATCH_TOL = 1e-12
BOUNDARY_TOL = 1e-8


def assembly_threads():
    """Thread cap for kernel-matrix assembly, from ``LSPLINE_THREADS``."""
    try:
        return max(1, int(os.environ.get("LSPLINE_THREADS", "1")))
    except ValueError:
        return 1


@dataclass(frozen=True)
class GreensFunction:
    basis: object
    check_points: int = 101

    def __post_init__(self):
        a, b = self.basis.interval
        check_wronskian(self.basis, np.linspace(a, b, self.check_points))

    @property
    def interval(self):
        return self.basis.interval

    def star_row(self, u):
        """(u*_1(u), ..., u*_m(u)), shape ``(m,) + u.shape``."""
        return wronskian_last_row_inverse(self.basis, u, check=False)

    def __call__(self, t, u):
        t, u = np.broadcast_arrays(np.asarray(t, float), np.asarray(u, float))
        vals = np.einsum("i...,i...->...", self.basis.values(t), self.star_row(u))
        return np.where(u <= t, vals, 0.0)


def greens_eval(g, t, u):
    return g(t, u)


# -- closed forms ------------------------------------------------------------

def _r1_linear(s, t, a):
    return np.minimum(s, t) - a


def _r0_linear(s, t, a):
    return np.ones(np.broadcast(s, t).shape)


def _r1_cubic(s, t, a):
    # int_a^x (s-u)(t-u) du, x = min(s, t)
    x = np.minimum(s, t)
    return s * t * (x - a) - 0.5 * (s + t) * (x**2 - a**2) + (x**3 - a**3) / 3.0


def _r0_cubic(s, t, a):
    return 1.0 + (s - a) * (t - a)


def _r1_exp(s, t, a, gamma):
    lo = np.minimum(s, t) - a
    hi = np.maximum(s, t) - a
    g = gamma
    g3 = g**3
    return (-1.0 / g3 + lo / g**2 + np.exp(-g * lo) / g3 + np.exp(-g * hi) / g3
            - np.exp(-g * (hi - lo)) / (2 * g3) - np.exp(-g * (lo + hi)) / (2 * g3))


def _r0_exp(s, t, a, gamma):
    g2 = gamma**2
    es = np.exp(-gamma * (s - a))
    et = np.exp(-gamma * (t - a))
    return 1.0 + 1.0 / g2 - et / g2 - es / g2 + es * et / g2


def closed_form_for(op):
    """Registry lookup: ``(name, r0, r1)`` for D, D^2 or D^2 + gamma D, else None."""
    if not op.is_constant:
        return None
    c = op.constant_coeffs
    if op.m == 1 and abs(c[0]) <= MATCH_TOL:
        return "linear", _r0_linear, _r1_linear
    if op.m == 2 and abs(c[0]) <= MATCH_TOL:
        gamma = c[1]
        if abs(gamma) <= MATCH_TOL:
            return "cubic", _r0_cubic, _r1_cubic
        return (
            "exp_gamma",
            lambda s, t, a: _r0_exp(s, t, a, gamma),
            lambda s, t, a: _r1_exp(s, t, a, gamma),
        )
    return None


# -- kernels -----------------------------------------------------------------

@dataclass(frozen=True)
class PenaltyKernel:
    """Reproducing kernels R0 and R1 of an operator on ``[a, b]``."""

    op: object
    basis: object
    greens: GreensFunction
    c_matrix: np.ndarray
    backend: str
    quad_tol: float = quadrature.QUAD_TOL
    name: Optional[str] = None
    _closed: Optional[tuple] = field(default=None, repr=False, compare=False)

    @property
    def interval(self):
        return self.basis.interval

    @property
    def a(self):
        return self.basis.a

    @property
    def m(self):
        return self.basis.m

    def r0(self, s, t):
        s, t = np.broadcast_arrays(np.asarray(s, float), np.asarray(t, float))
        if self.backend == "closed_form":
            return self._closed[0](s, t, self.a)
        us = self.basis.values(s)
        ut = self.basis.values(t)
        return np.einsum("i...,ij,j...->...", us, self.c_matrix, ut)

    def r1(self, s, t):
        """R1 at broadcast ``(s, t)``."""
        s, t = np.broadcast_arrays(np.asarray(s, float), np.asarray(t, float))
        if self.backend == "closed_form":
            return self._closed[1](s, t, self.a)
        return self._r1_table(s, t)

    def r1_direct(self, s, t):
        """R1 by adaptive quadrature of G(s,u) G(t,u), one pair at a time."""
        s, t = np.broadcast_arrays(np.asarray(s, float), np.asarray(t, float))
        out = np.empty(s.shape)
        for idx in np.ndindex(s.shape):
            si, ti = float(s[idx]), float(t[idx])
            x = min(si, ti)
            if x <= self.a:
                out[idx] = 0.0
                continue
            out[idx] = quadrature.integrate(
                lambda u: self.greens(si, u) * self.greens(ti, u),
                self.a, x, tol=self.quad_tol)
        return out

    def star_gram_cumulative(self, x):
        """F(x) = int_a^x u*(u) u*(u)' du for sorted ``x`` (shape ``(len(x), m, m)``)."""
        x = np.asarray(x, dtype=float)
        edges = np.concatenate([[self.a], x])
        m = self.m

        def integrand(u):
            us = self.greens.star_row(u)
            return (us[:, None, :] * us[None, :, :]).reshape(m * m, -1)

        pieces = quadrature.integrate_pieces(
            integrand, edges, tol=self.quad_tol,
            max_panels=max(quadrature.MAX_PANELS, 16 * x.size))
        return np.cumsum(pieces, axis=-1).T.reshape(-1, m, m)

    def _r1_table(self, s, t):
        # R1(s,t) = sum_{r,q} u_r(s) u_q(t) F_rq(min(s,t))
        s, t = np.broadcast_arrays(s, t)
        x = np.minimum(s, t)
        flat = x.ravel()
        uniq, inv = np.unique(np.maximum(flat, self.a), return_inverse=True)
        F = self.star_gram_cumulative(uniq)[inv]
        us = self.basis.values(s.ravel())
        ut = self.basis.values(t.ravel())
        out = np.einsum("in,nij,jn->n", us, F, ut)
        out[flat <= self.a] = 0.0
        return out.reshape(s.shape)

    def r1_gram(self, points, other=None):
        """Matrix [R1(points_i, other_j)], rows assembled in parallel chunks."""
        p = np.asarray(points, dtype=float)
        q = p if other is None else np.asarray(other, dtype=float)
        if self.backend != "closed_form":
            return self._r1_table(p[:, None], q[None, :])
        threads = assembly_threads()
        if threads == 1 or p.size < 256:
            return self.r1(p[:, None], q[None, :])
        out = np.empty((p.size, q.size))
        chunks = np.array_split(np.arange(p.size), threads)

        def fill(rows):
            out[rows] = self.r1(p[rows, None], q[None, :])

        with ThreadPoolExecutor(threads) as ex:
            list(ex.map(fill, chunks))
        return out

    def r0_gram(self, points, other=None):
        p = np.asarray(points, dtype=float)
        q = p if other is None else np.asarray(other, dtype=float)
        return self.r0(p[:, None], q[None, :])


def make_kernel(op, interval=(0.0, 1.0), backend="auto", quad_tol=quadrature.QUAD_TOL,
                check_points=101):
    """Build the :class:`PenaltyKernel` of ``op`` on ``interval``.

    ``backend`` is ``"closed_form"``, ``"quadrature"`` or ``"auto"`` (closed
    form when the operator is in the registry).
    """
    basis = basis_for(op, interval)
    greens = GreensFunction(basis, check_points)
    W = wronskian(basis, basis.a)
    try:
        lu = linalg.lu_factor(W @ W.T, check_finite=True)
    except (linalg.LinAlgError, ValueError) as exc:
        raise SingularWronskian(f"W(a) W(a)' cannot be factored: {exc}") from exc
    C = linalg.lu_solve(lu, np.eye(basis.m))
    C = 0.5 * (C + C.T)
    closed = closed_form_for(op)
    if backend == "auto":
        backend = "closed_form" if closed else "quadrature"
    if backend == "closed_form" and closed is None:
        raise ValueError("no closed-form kernel registered for this operator")
    if backend not in ("closed_form", "quadrature"):
        raise ValueError(f"unknown backend {backend!r}")
    name = closed[0] if closed else None
    return PenaltyKernel(op, basis, greens, C, backend, quad_tol, name,
                         closed[1:] if closed else None)


def kernel_r0(k, s, t):
    return k.r0(s, t)


def kernel_r1(k, s, t):
    return k.r1(s, t)


def verify_greens_identity(g, op, f, grid=None, tol=quadrature.QUAD_TOL):
    """Max over ``grid`` of |f(t) - int_a^t G(t,u) (Lf)(u) du|.

    ``f`` must satisfy f^(j)(a) = 0 for j < m.
    """
    a, b = g.interval
    for j in range(op.m):
        v = float(f.evaluate(np.array(a), j))
        if abs(v) > BOUNDARY_TOL:
            raise BoundaryViolation(f"f^({j})(a) = {v:.3g} is not zero")
    grid = np.linspace(a, b, 21) if grid is None else np.asarray(grid, float)
    worst = 0.0
    for t in grid:
        val = quadrature.integrate(
            lambda u: g(t, u) * apply_operator(op, f, u), a, t, tol=tol)
        worst = max(worst, abs(float(f.evaluate(np.array(t))) - val))
    return worst
