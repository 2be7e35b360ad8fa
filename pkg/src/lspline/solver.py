"""Penalised fits over the representer space.

Minimises

    sum_j d_j [Y_j - F_j(mu)]^2 + lambda int (L mu)^2

via mu(t) = sum_i alpha_i u_i(t) + sum_j beta_j eta_j(t), either densely
(O(n^3)) or, for point evaluations at increasing design points, by the
banded reparameterisation beta = Q gamma with Q'T = 0 (O(n)).
"""
import warnings
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy import linalg

from . import quadrature
from .errors import (
    CholeskyFailure,
    DegenerateBlock,
    NonConvergence,
    NotPointEval,
    RankDeficientT,
    SeparationWarning,
    SingularM,
)
from ._banded import banded_lstsq
from .functionals import Functional, assemble_k, null_design, point_eval, representer

BANDED_ORDER = 10
SEPARATION_LOGIT = 30.0


@dataclass(frozen=True)
class FitProblem:
    kernel: object
    functionals: tuple
    y: np.ndarray
    weights: Optional[np.ndarray] = None
    lam: float = 1.0

    def __post_init__(self):
        funcs = tuple(f if isinstance(f, Functional) else point_eval(f) for f in self.functionals)
        object.__setattr__(self, "functionals", funcs)
        y = np.asarray(self.y, dtype=float).ravel()
        object.__setattr__(self, "y", y)
        n = y.size
        if len(funcs) != n:
            raise ValueError(f"{len(funcs)} functionals but {n} observations")
        w = np.ones(n) if self.weights is None else np.asarray(self.weights, float).ravel()
        if w.size != n:
            raise ValueError("weights must have one entry per observation")
        if not np.all(w > 0):
            raise ValueError("weights must be positive")
        object.__setattr__(self, "weights", w)
        if not self.lam >= 0:
            raise ValueError("lambda must be >= 0")
        object.__setattr__(self, "lam", float(self.lam))
        if n < self.kernel.m:
            raise ValueError(f"need at least m={self.kernel.m} observations, got {n}")
        for f in funcs:
            f.check(self.kernel.interval)

    @classmethod
    def from_points(cls, kernel, t, y, weights=None, lam=1.0):
        return cls(kernel, tuple(point_eval(x) for x in np.ravel(t)), y, weights, lam)

    @property
    def n(self):
        return self.y.size

    @property
    def point_eval(self):
        return all(f.is_point for f in self.functionals)

    @property
    def points(self):
        if not self.point_eval:
            raise NotPointEval("problem has non point-evaluation functionals")
        return np.array([f.t for f in self.functionals])

    def design_matrix(self):
        return null_design(self.functionals, self.kernel.basis)

    def k_matrix(self):
        return assemble_k(self.functionals, self.kernel).entries

    def banded_ok(self):
        """Why the banded path does not apply, or None if it does."""
        if not self.point_eval:
            return "functionals are not all point evaluations"
        if self.lam <= 0:
            return "banded path needs lambda > 0"
        t = self.points
        bad = np.nonzero(np.diff(t) <= 0)[0]
        if bad.size:
            return f"design points not strictly increasing at rows {(bad + 1).tolist()}"
        a, b = self.kernel.interval
        if not (a < t[0] and t[-1] < b):
            return "design points must lie strictly inside (a, b)"
        if self.n <= self.kernel.m:
            return "banded path needs n > m"
        return None


@dataclass
class FitResult:
    alpha: np.ndarray
    beta: np.ndarray
    fitted: np.ndarray
    lam: float
    path: str
    kernel: object = field(repr=False)
    functionals: tuple = field(repr=False)
    weights: np.ndarray = field(repr=False)
    y: np.ndarray = field(repr=False)
    penalty: float = 0.0
    df: Optional[float] = None
    history: list = field(default_factory=list, repr=False)
    grad_norm: Optional[float] = None

    @property
    def rss(self):
        r = self.y - self.fitted
        return float(np.sum(self.weights * r**2))

    @property
    def objective(self):
        return self.rss + self.lam * self.penalty

    def __call__(self, t):
        return self.evaluate(t)

    def evaluate(self, t, chunk=2048):
        """mu_hat(t) = sum alpha_i u_i(t) + sum beta_j eta_j(t)."""
        t = np.asarray(t, dtype=float)
        flat = t.ravel()
        out = self.alpha @ self.kernel.basis.values(flat)
        if all(f.is_point for f in self.functionals):
            pts = np.array([f.t for f in self.functionals])
            for lo in range(0, flat.size, chunk):
                sl = slice(lo, lo + chunk)
                out[sl] += self.kernel.r1_gram(flat[sl], pts) @ self.beta
        else:
            for b, f in zip(self.beta, self.functionals):
                out += b * representer(f, self.kernel)(flat)
        return out.reshape(t.shape)

    def to_dict(self):
        return {
            "alpha": self.alpha.tolist(),
            "beta": self.beta.tolist(),
            "fitted": self.fitted.tolist(),
            "lambda": self.lam,
            "df": self.df,
            "objective": self.objective,
        }


def _check_rank(T):
    m = T.shape[1]
    if m and np.linalg.matrix_rank(T) < m:
        raise RankDeficientT(f"T has rank {np.linalg.matrix_rank(T)} < m = {m}")


def _factor_m(M, lam):
    """Cholesky of M when lambda > 0, LU otherwise; returns a solve function."""
    if lam > 0:
        try:
            c = linalg.cho_factor(M, lower=True)
            return lambda b: linalg.cho_solve(c, b)
        except linalg.LinAlgError:
            pass
    with warnings.catch_warnings():
        warnings.simplefilter("error", linalg.LinAlgWarning)
        try:
            lu = linalg.lu_factor(M)
        except (linalg.LinAlgError, linalg.LinAlgWarning) as exc:
            raise SingularM(f"M = K + lambda D^-1 is singular: {exc}") from exc
    if np.min(np.abs(np.diag(lu[0]))) <= 1e-14 * np.max(np.abs(np.diag(lu[0]))):
        raise SingularM("M = K + lambda D^-1 is numerically singular")
    return lambda b: linalg.lu_solve(lu, b)


def solve_dense(p, K=None, T=None, hat=True):
    """alpha = (T'M^-1 T)^-1 T'M^-1 Y and beta = M^-1 (Y - T alpha)."""
    K = p.k_matrix() if K is None else np.asarray(K, dtype=float)
    T = p.design_matrix() if T is None else np.asarray(T, dtype=float)
    _check_rank(T)
    n = p.n
    M = K + np.diag(p.lam / p.weights)
    solve = _factor_m(M, p.lam)
    rhs = np.column_stack([p.y, T]) if T.shape[1] else p.y[:, None]
    sol = solve(rhs)
    My = sol[:, 0]
    MT = sol[:, 1:]
    if T.shape[1]:
        G = T.T @ MT
        alpha = linalg.solve(0.5 * (G + G.T), T.T @ My, assume_a="sym")
    else:
        alpha = np.zeros(0)
    beta = My - MT @ alpha
    fitted = T @ alpha + K @ beta
    df = None
    if hat:
        # A = I - lambda D^-1 P with P = M^-1 - M^-1 T (T'M^-1 T)^-1 T' M^-1
        Minv = solve(np.eye(n))
        if T.shape[1]:
            P = Minv - MT @ linalg.solve(0.5 * (G + G.T), MT.T, assume_a="sym")
        else:
            P = Minv
        df = float(n - p.lam * np.sum(np.diag(P) / p.weights))
    return FitResult(alpha, beta, fitted, p.lam, "dense", p.kernel, p.functionals,
                     p.weights, p.y, penalty=float(beta @ K @ beta), df=df)


# -- banded path -------------------------------------------------------------

@dataclass(frozen=True)
class BandedQ:
    """n x (n-m) matrix with column k supported on rows k..k+m.

    ``q[k]`` holds the m+1 nonzero entries of column k (unit norm).
    """

    q: np.ndarray
    n: int
    m: int

    def dense(self):
        Q = np.zeros((self.n, self.n - self.m))
        for i in range(self.m + 1):
            Q[np.arange(self.n - self.m) + i, np.arange(self.n - self.m)] = self.q[:, i]
        return Q

    def matvec(self, g):
        out = np.zeros(self.n)
        for i in range(self.m + 1):
            out[i:i + self.n - self.m] += self.q[:, i] * g
        return out

    def rmatvec(self, y):
        k = self.n - self.m
        return sum(self.q[:, i] * y[i:i + k] for i in range(self.m + 1))


def build_banded_q(T):
    """q_k = last column of the complete QR factor of rows k..k+m of T."""
    T = np.asarray(T, dtype=float)
    n, m = T.shape
    if n <= m:
        raise DegenerateBlock("banded Q needs n > m")
    idx = np.arange(n - m)[:, None] + np.arange(m + 1)
    blocks = T[idx]
    Qf, R = np.linalg.qr(blocks, mode="complete")
    diag = np.abs(np.diagonal(R[:, :m, :], axis1=1, axis2=2))
    scale = np.linalg.norm(blocks, axis=(1, 2))
    bad = np.nonzero(np.any(diag <= 1e-12 * scale[:, None], axis=1))[0]
    if bad.size:
        k = int(bad[0])
        raise DegenerateBlock(f"rows {k}..{k + m} of T are rank deficient")
    return BandedQ(np.ascontiguousarray(Qf[:, :, -1]), n, m)


def _local_pieces(kernel, t, T, bq, order):
    """Values of g_k(u) = sum_i q_{k,i} G(t_{k+i}, u) at quadrature nodes.

    g_k vanishes outside [t_k, t_{k+m}] (Q'T = 0 kills it below t_k).
    Returns (V, w): V[k, j-1] are g_k's values on piece [t_{k+j-1}, t_{k+j}],
    w[p] the node weights of piece [t_p, t_{p+1}].
    """
    n, m = T.shape
    nodes, w = quadrature.panel_nodes(t[:-1], t[1:], order)
    star = kernel.greens.star_row(nodes)          # (m, n-1, order)
    idx = np.arange(n - m)[:, None] + np.arange(m + 1)
    prod = bq.q[:, :, None] * T[idx]              # (n-m, m+1, m)
    suffix = np.cumsum(prod[:, ::-1], axis=1)[:, ::-1]
    A = suffix[:, 1:, :]                           # (n-m, m, m): j = 1..m
    piece = np.arange(n - m)[:, None] + np.arange(m)   # piece index k+j-1
    V = np.einsum("kjs,skjv->kjv", A, star[:, piece, :])
    return V, w


def _qkq_band_greens(kernel, t, T, bq, order):
    n, m = T.shape
    V, w = _local_pieces(kernel, t, T, bq, order)
    nk = n - m
    piece = np.arange(nk)[:, None] + np.arange(m)
    Wp = w[piece]                                  # (n-m, m, order)
    band = np.zeros((m + 1, nk))
    for d in range(m):
        for j in range(d, m):
            # piece k+j is g_k's j-th and g_{k+d}'s (j-d)-th
            k = np.arange(nk - d)
            band[d, :nk - d] += np.sum(Wp[k, j] * V[k, j] * V[k + d, j - d], axis=-1)
    return band, V, w


def _qdq_band(bq, dinv):
    m, nk = bq.m, bq.n - bq.m
    band = np.zeros((m + 1, nk))
    for d in range(m + 1):
        k = np.arange(nk - d)
        for i in range(d, m + 1):
            band[d, :nk - d] += bq.q[k, i] * bq.q[k + d, i - d] * dinv[k + i]
    return band


def _lsq_rows(p, T, bq, V, w):
    """Rows of B = [B1; B2] with B'B = Q'MQ: B1 from the local Green's
    combinations at quadrature nodes, B2 = sqrt(lambda) D^-1/2 Q."""
    n, m = T.shape
    nk = n - m
    order = w.shape[1]
    bw = m + 1
    v1 = np.zeros((n - 1, order, bw))
    sw = np.sqrt(w)
    for j in range(m):
        pc = np.arange(nk) + j
        v1[pc, :, m - 1 - j] = sw[pc] * V[:, j]
    s1 = np.arange(n - 1) - m + 1
    v2 = np.zeros((n, bw))
    scale = np.sqrt(p.lam / p.weights)
    for l in range(m + 1):
        i = np.arange(nk) + l
        v2[i, m - l] = bq.q[:, l] * scale[i]
    s2 = np.arange(n) - m
    vals = np.concatenate([v1.reshape(-1, bw), v2])
    start = np.concatenate([np.repeat(s1, order), s2])
    for r in np.nonzero(start < 0)[0]:
        sh = -start[r]
        vals[r, :bw - sh] = vals[r, sh:]
        vals[r, bw - sh:] = 0.0
        start[r] = 0
    rhs = np.concatenate([np.zeros((n - 1) * order), p.y * np.sqrt(p.weights / p.lam)])
    return vals, start, rhs


def solve_banded(p, T=None, q=None, order=BANDED_ORDER, method="qr", refine=1):
    """beta = Q (Q'MQ)^-1 Q'Y with the banded system solved in O(n m^2).

    ``method="qr"`` reduces the stacked square-root factor of Q'MQ by
    Givens rotations, giving its banded Cholesky factor without squaring
    the condition number; ``method="cholesky"`` forms the band of Q'MQ and
    factors it directly.  alpha then solves T alpha = Y - M beta.
    ``refine`` steps of iterative refinement reuse the banded factor; the
    residual needs K beta, which is also O(n) (see :func:`_kbeta`).
    """
    why = p.banded_ok()
    if why is not None:
        if not p.point_eval:
            raise NotPointEval(why)
        raise ValueError(why)
    t = p.points
    T = p.kernel.basis.values(t).T if T is None else np.asarray(T, dtype=float)
    _check_rank(T)
    bq = build_banded_q(T) if q is None else q
    n, m = T.shape
    dinv = 1.0 / p.weights
    kband, V, w = _qkq_band_greens(p.kernel, t, T, bq, order)
    if method == "qr":
        gamma, R = banded_lstsq(*_lsq_rows(p, T, bq, V, w), n - m)
        if gamma is None:
            raise CholeskyFailure("Q'MQ is numerically singular")
        # R'R = Q'MQ: upper band storage for the refinement solves
        ab = np.zeros((m + 1, n - m))
        for j in range(m + 1):
            ab[m - j, j:] = R[:n - m - j, j]
        solve = lambda rhs: linalg.cho_solve_banded((ab, False), rhs)
    elif method == "cholesky":
        ab = kband + p.lam * _qdq_band(bq, dinv)
        try:
            chol = linalg.cholesky_banded(ab, lower=True)
        except linalg.LinAlgError as exc:
            raise CholeskyFailure(f"Q'MQ is not positive definite: {exc}") from exc
        solve = lambda rhs: linalg.cho_solve_banded((chol, True), rhs)
        gamma = solve(bq.rmatvec(p.y))
    else:
        raise ValueError(f"unknown method {method!r}")
    beta, alpha, fitted, Kbeta = _banded_finish(p, t, T, bq, gamma, order)
    for _ in range(refine):
        # one step of iterative refinement on M beta + T alpha = Y, T'beta = 0
        r = p.y - T @ alpha - Kbeta - p.lam * dinv * beta
        gamma = gamma + solve(bq.rmatvec(r))
        beta, alpha, fitted, Kbeta = _banded_finish(p, t, T, bq, gamma, order)
    return FitResult(alpha, beta, fitted, p.lam, "banded", p.kernel, p.functionals,
                     p.weights, p.y, penalty=float(beta @ Kbeta))


def _banded_finish(p, t, T, bq, gamma, order):
    beta = bq.matvec(gamma)
    # Q'T = 0 holds to rounding but |gamma| can be large; restore T'beta = 0
    beta -= T @ np.linalg.lstsq(T, beta, rcond=None)[0]
    fitted = p.y - p.lam * beta / p.weights
    Kbeta = _kbeta(p.kernel, t, T, beta, order)
    alpha = np.linalg.lstsq(T, fitted - Kbeta, rcond=None)[0]
    return beta, alpha, fitted, Kbeta


def qmq_band(p, T=None, q=None, order=BANDED_ORDER):
    """Lower band storage of Q'MQ (row d holds the d-th subdiagonal)."""
    t = p.points
    T = p.kernel.basis.values(t).T if T is None else np.asarray(T, dtype=float)
    bq = build_banded_q(T) if q is None else q
    kband, _, _ = _qkq_band_greens(p.kernel, t, T, bq, order)
    return kband + p.lam * _qdq_band(bq, 1.0 / p.weights)


def _kbeta(kernel, t, T, beta, order):
    # (K beta)_i = int G(t_i, u) h(u) du with h(u) = sum_j beta_j G(t_j, u);
    # on (t_{p-1}, t_p], h = u*(u)' B_p with B_p = sum_{j >= p} beta_j T_j
    n, m = T.shape
    a = kernel.a
    edges = np.concatenate([[a], t])
    nodes, w = quadrature.panel_nodes(edges[:-1], edges[1:], order)
    star = kernel.greens.star_row(nodes)           # (m, n, order)
    B = np.cumsum((beta[:, None] * T)[::-1], axis=0)[::-1]   # (n, m)
    F = np.einsum("rpv,spv,pv->prs", star, star, w)           # (n, m, m)
    c = np.cumsum(np.einsum("prs,ps->pr", F, B), axis=0)      # c(t_i), (n, m)
    return np.einsum("is,is->i", T, c)


def choose_path(p):
    return "banded" if p.banded_ok() is None else "dense"


def fit(p, path="auto", **kw):
    """Solve ``p`` by the dense or banded path (``auto`` picks banded when it applies)."""
    if path == "auto":
        path = choose_path(p)
    if path == "dense":
        return solve_dense(p, **kw)
    if path == "banded":
        return solve_banded(p, **kw)
    raise ValueError(f"unknown path {path!r}")


# -- logistic ----------------------------------------------------------------

def _logistic_parts(theta, X, y, d, K, lam, m):
    mu = X @ theta
    z = -y * mu
    loss = float(np.sum(d * np.logaddexp(0.0, z)))
    beta = theta[m:]
    obj = loss + lam * float(beta @ K @ beta)
    sig = 0.5 * (1.0 + np.tanh(0.5 * z))           # sigmoid(z), overflow-free
    grad = X.T @ (d * -y * sig)
    grad[m:] += 2.0 * lam * (K @ beta)
    return obj, grad, mu, sig


def solve_logistic(p, K=None, T=None, max_iter=100, tol=1e-8, max_halvings=30):
    """Penalised logistic fit for labels in {-1, +1} by damped Newton.

    Minimises sum_j d_j log(1 + exp(-Y_j mu(t_j))) + lambda beta'K beta.
    """
    if not p.point_eval:
        raise NotPointEval("logistic fitting supports point evaluations only")
    y = p.y
    if not np.all(np.isin(y, (-1.0, 1.0))):
        raise ValueError("labels must be -1 or +1")
    if p.lam <= 0:
        raise ValueError("logistic fitting needs lambda > 0")
    if np.unique(y).size < 2:
        warnings.warn("only one class present; the null-space fit drifts without bound",
                      SeparationWarning, stacklevel=2)
    K = p.k_matrix() if K is None else np.asarray(K, dtype=float)
    T = p.design_matrix() if T is None else np.asarray(T, dtype=float)
    _check_rank(T)
    m = T.shape[1]
    X = np.hstack([T, K])
    d = p.weights
    theta = np.zeros(m + p.n)
    obj, grad, mu, sig = _logistic_parts(theta, X, y, d, K, p.lam, m)
    history = [obj]
    for _ in range(max_iter):
        if np.max(np.abs(grad)) <= tol:
            break
        h = d * sig * (1.0 - sig)
        H = X.T @ (h[:, None] * X)
        H[m:, m:] += 2.0 * p.lam * K
        step = np.linalg.lstsq(H, -grad, rcond=None)[0]
        scale = 1.0
        for _ in range(max_halvings + 1):
            cand = theta + scale * step
            c_obj, c_grad, c_mu, c_sig = _logistic_parts(cand, X, y, d, K, p.lam, m)
            if c_obj < obj or (c_obj == obj and np.max(np.abs(c_grad)) < np.max(np.abs(grad))):
                break
            scale *= 0.5
        else:
            break
        theta, obj, grad, mu, sig = cand, c_obj, c_grad, c_mu, c_sig
        history.append(obj)
    gnorm = float(np.max(np.abs(grad)))
    if gnorm > tol:
        raise NonConvergence(f"logistic Newton stopped with gradient norm {gnorm:.3g}", gnorm)
    if np.max(np.abs(mu)) > SEPARATION_LOGIT:
        warnings.warn(f"fitted |mu| reaches {np.max(np.abs(mu)):.1f}; data look separable",
                      SeparationWarning, stacklevel=2)
    alpha, beta = theta[:m], theta[m:]
    return FitResult(alpha, beta, mu, p.lam, "logistic", p.kernel, p.functionals, d, y,
                     penalty=float(beta @ K @ beta), history=history, grad_norm=gnorm)


def logistic_objective(p, theta, K=None, T=None):
    """Objective and gradient at ``theta = (alpha, beta)``; for external checks."""
    K = p.k_matrix() if K is None else np.asarray(K, dtype=float)
    T = p.design_matrix() if T is None else np.asarray(T, dtype=float)
    m = T.shape[1]
    obj, grad, _, _ = _logistic_parts(np.asarray(theta, float), np.hstack([T, K]), p.y,
                                      p.weights, K, p.lam, m)
    return obj, grad


# -- smoothing parameter -----------------------------------------------------

def gcv_score(res):
    n = res.y.size
    return n * res.rss / (n - res.df) ** 2


def select_lambda(p, grid):
    """GCV(lambda) = n ||Y - Y_hat||_D^2 / (n - tr A)^2 over ``grid`` (dense path)."""
    grid = [float(g) for g in grid]
    if not grid:
        raise ValueError("lambda grid is empty")
    if any(g <= 0 for g in grid):
        raise ValueError("lambda grid values must be positive")
    K = p.k_matrix()
    T = p.design_matrix()
    table = []
    for lam in grid:
        res = solve_dense(replace(p, lam=lam), K=K, T=T)
        table.append({"lambda": lam, "gcv": gcv_score(res), "df": res.df, "rss": res.rss})
    best = min(table, key=lambda r: r["gcv"])
    return best["lambda"], table
