"""Dense numeric kernel: matrices, stable softmax, thin SVD, top-k, resize.

Matrices are plain ``numpy.ndarray`` objects of dtype float64. Functions that
accept matrices validate shape and finiteness and never modify their inputs.
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimensionError, InvalidInputError, InvalidParameterError

_EPS = np.finfo(np.float64).eps


def as_matrix(x, name="matrix"):
    """Return ``x`` as a finite 2-D float64 array (a copy is not forced)."""
    a = np.asarray(x, dtype=np.float64)
    if a.ndim == 1:
        a = a[None, :]
    if a.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InvalidInputError(f"{name} has non-finite entries")
    return a


def matmul(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def row_softmax(logits):
    """Softmax along the last axis with per-row max subtraction.

    Works for any leading batch shape. NaN entries (which propagate into the
    row max) and rows without a finite entry raise :class:`InvalidInputError`.
    """
    return softmax_(np.array(logits, dtype=np.float64))


def softmax_(x):
    """In-place :func:`row_softmax` on a float64 array owned by the caller."""
    m = x.max(axis=-1, keepdims=True)
    if not np.all(np.isfinite(m)):
        if np.isnan(m).any():
            raise InvalidInputError("softmax input contains NaN")
        raise InvalidInputError("softmax row has no finite entry or contains +inf")
    x -= m
    np.exp(x, out=x)
    x /= x.sum(axis=-1, keepdims=True)
    return x


def scaled_scores(Q, K):
    """``Q K^T / sqrt(d)`` over the last two axes.

    Every attention path goes through here so that equal inputs give
    bit-equal logits whichever path computed them.
    """
    d = Q.shape[-1]
    return (Q * (1.0 / np.sqrt(d))) @ np.swapaxes(K, -1, -2)


@dataclass(frozen=True)
class SvdResult:
    U: np.ndarray
    sigma: np.ndarray
    Vt: np.ndarray

    def reconstruct(self):
        return (self.U * self.sigma) @ self.Vt


def _round_robin(n):
    """Pairings for a round-robin tournament over ``n`` columns.

    Returns a list of ``(I, J)`` index arrays; every unordered pair appears
    exactly once over the rounds and pairs within one round are disjoint.
    """
    players = list(range(n + (n % 2)))
    m = len(players)
    rounds = []
    for _ in range(m - 1):
        I, J = [], []
        for k in range(m // 2):
            i, j = players[k], players[m - 1 - k]
            if i < n and j < n:
                I.append(min(i, j))
                J.append(max(i, j))
        rounds.append((np.array(I, dtype=np.intp), np.array(J, dtype=np.intp)))
        players = [players[0], players[-1]] + players[1:-1]
    return rounds


def _jacobi_columns(a, tol, max_sweeps):
    """One-sided Jacobi: rotate columns of ``a`` until mutually orthogonal.

    Returns ``(W, V)`` with ``a @ V = W`` and ``V`` orthogonal.
    """
    W = a.copy()
    n = W.shape[1]
    V = np.eye(n)
    if n < 2:
        return W, V
    floor = _EPS * float(np.sum(W * W))
    rounds = _round_robin(n)
    for _ in range(max_sweeps):
        rotated = False
        for I, J in rounds:
            if I.size == 0:
                continue
            wi, wj = W[:, I], W[:, J]
            alpha = np.einsum("ij,ij->j", wi, wi)
            beta = np.einsum("ij,ij->j", wj, wj)
            gamma = np.einsum("ij,ij->j", wi, wj)
            act = np.abs(gamma) > tol * np.sqrt(alpha * beta) + floor
            if not act.any():
                continue
            rotated = True
            I, J = I[act], J[act]
            alpha, beta, gamma = alpha[act], beta[act], gamma[act]
            zeta = (beta - alpha) / (2.0 * gamma)
            t = np.where(zeta >= 0, 1.0, -1.0) / (np.abs(zeta) + np.sqrt(1.0 + zeta * zeta))
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = c * t
            wi, wj = W[:, I], W[:, J]
            W[:, I] = c * wi - s * wj
            W[:, J] = s * wi + c * wj
            vi, vj = V[:, I], V[:, J]
            V[:, I] = c * vi - s * vj
            V[:, J] = s * vi + c * vj
        if not rotated:
            break
    return W, V


def _orthonormalize(W, sigma):
    """Gram-Schmidt (twice) on columns of ``W``; null columns get basis vectors."""
    d, m = W.shape
    U = np.zeros((d, m))
    scale = sigma[0] if m and sigma[0] > 0 else 1.0
    for i in range(m):
        w = W[:, i]
        if sigma[i] > scale * 1e3 * _EPS * max(W.shape):
            u = w / sigma[i]
            for _ in range(2):
                u = u - U[:, :i] @ (U[:, :i].T @ u)
            nrm = np.linalg.norm(u)
        else:
            nrm = 0.0
        if nrm < 0.5:
            # numerically null direction: pick the standard basis vector with
            # the largest residual (lowest index on ties)
            basis = np.eye(d)
            resid = basis - U[:, :i] @ (U[:, :i].T @ basis)
            resid = resid - U[:, :i] @ (U[:, :i].T @ resid)
            norms = np.linalg.norm(resid, axis=0)
            u = resid[:, int(np.argmax(norms))]
            nrm = np.linalg.norm(u)
        U[:, i] = u / nrm
    return U


def thin_svd(x, tol=1e-13, max_sweeps=60):
    """Thin SVD ``x = U diag(sigma) Vt`` by one-sided Jacobi.

    ``tol`` is the relative orthogonality threshold between column pairs at
    which rotation stops. Singular values are sorted descending; in every
    column of ``U`` the entry of largest magnitude is made non-negative (lowest
    row index on ties) and ``Vt`` is flipped to match. Singular values at or
    below ``max(D, T) * eps * sigma_1`` are returned as 0.
    """
    a = as_matrix(x, "svd input")
    if a.size == 0:
        raise InvalidInputError("svd input is empty")
    if tol <= 0:
        raise InvalidParameterError("tol must be positive")
    transposed = a.shape[1] > a.shape[0]
    if transposed:
        a = a.T
    W, V = _jacobi_columns(a, tol, max_sweeps)
    sigma = np.linalg.norm(W, axis=0)
    order = np.argsort(-sigma, kind="stable")
    sigma, W, V = sigma[order], W[:, order], V[:, order]
    U = _orthonormalize(W, sigma)
    # numerical rank: values at rounding level are reported as exact zeros
    if sigma.size and sigma[0] > 0:
        sigma = np.where(sigma <= max(a.shape) * _EPS * sigma[0], 0.0, sigma)
    if transposed:
        U, V = V, U
    lead = np.argmax(np.abs(U), axis=0)
    signs = np.where(U[lead, np.arange(U.shape[1])] < 0, -1.0, 1.0)
    U = U * signs
    Vt = (V * signs).T
    return SvdResult(U=np.ascontiguousarray(U), sigma=sigma, Vt=np.ascontiguousarray(Vt))


def top_k_indices(scores, k):
    """Indices of the ``k`` largest scores, sorted ascending; ties go to the lower index."""
    s = np.asarray(scores, dtype=np.float64).ravel()
    if s.size == 0:
        return np.zeros(0, dtype=np.intp)
    if k < 1:
        raise InvalidParameterError("k must be >= 1")
    if k >= s.size:
        return np.arange(s.size)
    idx = np.argsort(-s, kind="stable")[:k]
    return np.sort(idx)


def _nn_index(n_dst, n_src):
    centre = (np.arange(n_dst) + 0.5) * (n_src / n_dst) - 0.5
    # round half down
    idx = np.ceil(centre - 0.5).astype(np.intp)
    return np.clip(idx, 0, n_src - 1)


def nn_resize(src, src_hw, dst_hw):
    """Nearest-neighbour resize of a row-major grid vector.

    ``src_hw`` and ``dst_hw`` are ``(height, width)`` pairs.
    """
    hs, ws = src_hw
    hd, wd = dst_hw
    if min(hs, ws, hd, wd) < 1:
        raise DimensionError("grid sizes must be positive")
    v = np.asarray(src, dtype=np.float64).ravel()
    if v.size != hs * ws:
        raise DimensionError(f"vector of length {v.size} does not match {hs}x{ws} grid")
    if (hs, ws) == (hd, wd):
        return v.copy()
    iy = _nn_index(hd, hs)
    ix = _nn_index(wd, ws)
    return v.reshape(hs, ws)[np.ix_(iy, ix)].ravel()


def read_matrix_csv(path):
    """Read the repo-wide matrix CSV format (header ``rows,cols``)."""
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines:
        raise InvalidInputError(f"{path}: empty file")
    try:
        rows, cols = (int(t) for t in lines[0].split(","))
    except ValueError as exc:
        raise InvalidInputError(f"{path}: bad header {lines[0]!r}") from exc
    body = [ln for ln in lines[1:] if ln.strip()]
    if len(body) != rows:
        raise InvalidInputError(f"{path}: expected {rows} rows, found {len(body)}")
    data = np.empty((rows, cols))
    for r, ln in enumerate(body):
        fields = ln.split(",")
        if len(fields) != cols:
            raise InvalidInputError(f"{path}: row {r + 1} has {len(fields)} fields, expected {cols}")
        try:
            data[r] = [float(f) for f in fields]
        except ValueError as exc:
            raise InvalidInputError(f"{path}: row {r + 1}: {exc}") from exc
    return as_matrix(data, str(path))


def write_matrix_csv(path, m):
    m = np.atleast_2d(np.asarray(m, dtype=np.float64))
    out = [f"{m.shape[0]},{m.shape[1]}"]
    out.extend(",".join(repr(float(v)) for v in row) for row in m)
    Path(path).write_text("\n".join(out) + "\n", encoding="utf-8")
