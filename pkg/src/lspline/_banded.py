"""Row-sequential Givens QR for banded least squares."""
import numba
import numpy as np


@numba.njit(cache=True)
def _accumulate(vals, start, rhs, ncols):
    n_rows, bw = vals.shape
    R = np.zeros((ncols, bw))
    z = np.zeros(ncols)
    v = np.empty(bw)
    for r in range(n_rows):
        for j in range(bw):
            v[j] = vals[r, j]
        rho = rhs[r]
        k0 = start[r]
        for k in range(k0, ncols):
            x = v[0]
            if x != 0.0:
                y = R[k, 0]
                h = np.hypot(y, x)
                c = y / h
                s = x / h
                for j in range(bw):
                    a = R[k, j]
                    b = v[j]
                    R[k, j] = c * a + s * b
                    v[j] = -s * a + c * b
                a = z[k]
                z[k] = c * a + s * rho
                rho = -s * a + c * rho
            # shift v left by one column
            for j in range(bw - 1):
                v[j] = v[j + 1]
            v[bw - 1] = 0.0
            done = True
            for j in range(bw):
                if v[j] != 0.0:
                    done = False
                    break
            if done:
                break
    return R, z


@numba.njit(cache=True)
def _back_substitute(R, z):
    ncols, bw = R.shape
    x = np.zeros(ncols)
    for k in range(ncols - 1, -1, -1):
        acc = z[k]
        for j in range(1, bw):
            if k + j < ncols:
                acc -= R[k, j] * x[k + j]
        x[k] = acc / R[k, 0]
    return x


def banded_lstsq(vals, start, rhs, ncols):
    """Least squares for a matrix given row-wise as ``vals[r]`` placed at
    columns ``start[r] .. start[r] + bw - 1``.

    Rows are processed in order of ``start`` so each one is absorbed into
    an empty row of R after at most a band's width of rotations.

    Returns ``(x, R)`` where ``R[k, j]`` is the (k, k+j) entry of the upper
    triangular factor, i.e. the banded Cholesky factor of the normal matrix.
    """
    vals = np.ascontiguousarray(vals, dtype=np.float64)
    start = np.ascontiguousarray(start, dtype=np.int64)
    rhs = np.ascontiguousarray(rhs, dtype=np.float64)
    order = np.argsort(start, kind="stable")
    vals, start, rhs = vals[order], start[order], rhs[order]
    R, z = _accumulate(vals, start, rhs, ncols)
    diag = np.abs(R[:, 0])
    if np.any(diag <= 1e-13 * max(diag.max(initial=0.0), 1e-300)):
        return None, R
    return _back_substitute(R, z), R
