"""Posterior mean of a zero-mean Gaussian process and its penalised twin.

With Y_j = mu(t_j) + eps_j, mu ~ GP(0, S) and eps_j ~ N(0, sigma^2), the
posterior mean is s(t)' (sigma^2 I + S)^-1 Y. The same curve minimises
||Y - S beta||^2 + sigma^2 beta' S beta over mu = sum beta_j S(t_j, .).
"""
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import linalg

from .errors import SingularGram

PSD_TOL = 1e-10


def brownian_cov(s, t, a=0.0):
    """min(s, t) - a, the R1 kernel of L = D."""
    return np.minimum(s, t) - a


def cubic_cov(s, t, a=0.0):
    """R1 of L = D^2: int_a^min(s,t) (s-u)(t-u) du."""
    x = np.minimum(s, t)
    return s * t * (x - a) - 0.5 * (s + t) * (x**2 - a**2) + (x**3 - a**3) / 3.0


BUILTIN = {"brownian": brownian_cov, "cubic": cubic_cov}


@dataclass(frozen=True)
class GPModel:
    cov: Callable
    noise_var: float

    def __post_init__(self):
        if isinstance(self.cov, str):
            try:
                object.__setattr__(self, "cov", BUILTIN[self.cov])
            except KeyError:
                raise ValueError(f"unknown covariance {self.cov!r}") from None
        if not self.noise_var >= 0:
            raise ValueError("noise variance must be >= 0")
        object.__setattr__(self, "noise_var", float(self.noise_var))

    def gram(self, s, t=None):
        s = np.asarray(s, dtype=float)
        t = s if t is None else np.asarray(t, dtype=float)
        return np.asarray(self.cov(s[:, None], t[None, :]), dtype=float)


def check_psd(gp, points, tol=PSD_TOL):
    """Spot-check symmetry and positive semidefiniteness of S on ``points``."""
    S = gp.gram(points)
    scale = max(1.0, np.abs(S).max())
    if np.abs(S - S.T).max() > tol * scale:
        raise ValueError("covariance is not symmetric on the sample points")
    low = np.linalg.eigvalsh(0.5 * (S + S.T)).min()
    if low < -tol * scale * len(points):
        raise ValueError(f"covariance Gram has eigenvalue {low:.3g} < 0")


def _weights(gp, design, obs):
    design = np.asarray(design, dtype=float).ravel()
    obs = np.asarray(obs, dtype=float).ravel()
    if design.size != obs.size:
        raise ValueError("design and observations differ in length")
    A = gp.gram(design) + gp.noise_var * np.eye(design.size)
    try:
        c = linalg.cho_factor(A, lower=True)
    except linalg.LinAlgError as exc:
        if gp.noise_var > 0:
            raise
        raise SingularGram(f"S is not positive definite: {exc}") from exc
    if gp.noise_var == 0:
        piv = np.diag(c[0]) ** 2
        if piv.min() <= 1e-13 * piv.max():
            raise SingularGram("S is numerically singular")
    return design, linalg.cho_solve(c, obs)


def posterior_mean(gp, design, obs, query):
    """s(t)' (sigma^2 I + S)^-1 Y at each query point."""
    design, w = _weights(gp, design, obs)
    query = np.asarray(query, dtype=float)
    return (gp.gram(query.ravel(), design) @ w).reshape(query.shape)


def penalized_coefficients(gp, design, obs):
    """beta minimising ||Y - S beta||^2 + sigma^2 beta' S beta.

    In the eigenbasis S = V diag(s) V' the objective decouples; each
    coordinate with s_i > 0 is minimised by (V'Y)_i / (s_i + sigma^2) and
    the null directions of S are set to zero (they do not change S beta).
    """
    design = np.asarray(design, dtype=float).ravel()
    obs = np.asarray(obs, dtype=float).ravel()
    S = gp.gram(design)
    s, V = np.linalg.eigh(0.5 * (S + S.T))
    keep = s > 1e-14 * max(s.max(), 0.0)
    coef = np.zeros_like(s)
    coef[keep] = (V[:, keep].T @ obs) / (s[keep] + gp.noise_var)
    return V @ coef


def verify_bayes_equivalence(gp, design, obs, query=None):
    """Max |posterior mean - penalised fit| over ``query`` (default 201 points)."""
    design = np.asarray(design, dtype=float).ravel()
    if query is None:
        lo, hi = design.min(), design.max()
        query = np.linspace(lo, hi, 201)
    beta = penalized_coefficients(gp, design, obs)
    fit = gp.gram(np.asarray(query, float), design) @ beta
    return float(np.max(np.abs(fit - posterior_mean(gp, design, obs, query))))
