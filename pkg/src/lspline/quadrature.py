"""Adaptive composite Gauss-Legendre quadrature.

The integrand is evaluated on whole arrays of nodes at once, so a
single call handles vector-valued integrands: ``f(x)`` receives a 1-D
array of abscissae and returns an array whose *last* axis matches ``x``.
"""
from functools import lru_cache

import numpy as np

from .errors import QuadratureFailure

QUAD_TOL = 1e-10
MAX_PANELS = 2**14
ORDER = 15


@lru_cache(maxsize=None)
def gauss_legendre(order):
    """Nodes and weights of the ``order``-point rule on [-1, 1]."""
    x, w = np.polynomial.legendre.leggauss(order)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def panel_nodes(lo, hi, order=ORDER):
    """Map the reference rule onto panels ``[lo[i], hi[i]]``.

    Returns ``(nodes, weights)`` with shape ``(n_panels, order)``.
    """
    x, w = gauss_legendre(order)
    lo = np.atleast_1d(np.asarray(lo, dtype=float))
    hi = np.atleast_1d(np.asarray(hi, dtype=float))
    half = 0.5 * (hi - lo)
    mid = 0.5 * (hi + lo)
    return mid[:, None] + half[:, None] * x, half[:, None] * w


def _apply(f, lo, hi, order):
    nodes, weights = panel_nodes(lo, hi, order)
    vals = np.asarray(f(nodes.ravel()), dtype=float)
    vals = vals.reshape(vals.shape[:-1] + nodes.shape)
    return np.sum(vals * weights, axis=-1)


def integrate(f, a, b, tol=QUAD_TOL, max_panels=MAX_PANELS, order=ORDER,
              breakpoints=()):
    """Integrate ``f`` over ``[a, b]`` to absolute tolerance ``tol``.

    Panels are bisected until the difference between the one-panel rule
    and the two-half-panel rule is within the panel's share of ``tol``.
    Interior ``breakpoints`` (kinks, support edges) start as panel edges.

    Raises
    ------
    QuadratureFailure
        If more than ``max_panels`` panels would be needed.
    """
    a = float(a)
    b = float(b)
    if b == a:
        probe = np.asarray(f(np.array([a])), dtype=float)
        return np.zeros(probe.shape[:-1]) if probe.ndim > 1 else 0.0
    sign = 1.0
    if b < a:
        a, b, sign = b, a, -1.0
    cuts = sorted({a, b, *(float(p) for p in breakpoints if a < p < b)})
    pieces = integrate_pieces(f, cuts, tol=tol, max_panels=max_panels, order=order)
    return sign * np.sum(pieces, axis=-1)


def integrate_pieces(f, edges, tol=QUAD_TOL, max_panels=MAX_PANELS, order=ORDER):
    """Adaptive integrals over each interval between consecutive ``edges``.

    ``edges`` must be non-decreasing; the returned array has one entry per
    interval along its last axis. The errors of all pieces together stay
    within ``tol``.
    """
    edges = np.asarray(edges, dtype=float)
    n_pieces = edges.size - 1
    if n_pieces < 1:
        raise ValueError("need at least two edges")
    length = edges[-1] - edges[0]
    lo = edges[:-1].copy()
    hi = edges[1:].copy()
    seg = np.arange(n_pieces)
    live = hi > lo
    lo, hi, seg = lo[live], hi[live], seg[live]
    total = None
    n_done = 0
    span = max(1.0, abs(edges[0]), abs(edges[-1]))
    while lo.size:
        mid = 0.5 * (lo + hi)
        whole = _apply(f, lo, hi, order)
        halves = _apply(f, np.concatenate([lo, mid]), np.concatenate([mid, hi]), order)
        k = lo.size
        halves = halves[..., :k] + halves[..., k:]
        if total is None:
            total = np.zeros(halves.shape[:-1] + (n_pieces,))
        err = np.abs(whole - halves).reshape(-1, k).max(axis=0)
        scale = np.abs(halves).reshape(-1, k).max(axis=0)
        ok = (err <= tol * (hi - lo) / length) | (err <= 1e-15 * scale)
        ok |= (hi - lo) <= 1e-15 * span
        np.add.at(np.moveaxis(total, -1, 0), seg[ok], np.moveaxis(halves[..., ok], -1, 0))
        n_done += int(ok.sum())
        lo, mid, hi, seg = lo[~ok], mid[~ok], hi[~ok], seg[~ok]
        if n_done + 2 * lo.size > max_panels:
            raise QuadratureFailure(
                f"adaptive quadrature on [{edges[0]}, {edges[-1]}] needs more than "
                f"{max_panels} panels"
            )
        lo, hi = np.concatenate([lo, mid]), np.concatenate([mid, hi])
        seg = np.concatenate([seg, seg])
    if total is None:
        probe = np.asarray(f(edges[:1]), dtype=float)
        total = np.zeros(probe.shape[:-1] + (n_pieces,))
    return total


def composite_fixed(f, edges, order=ORDER):
    """Apply a fixed ``order``-point rule on each interval between ``edges``.

    Returns one integral per interval (last axis), no error control.
    """
    edges = np.asarray(edges, dtype=float)
    return _apply(f, edges[:-1], edges[1:], order)
