"""Dense linear algebra used by the factorization code.

Everything works on float64 numpy arrays. Plain arithmetic (matmul, transpose,
norms) is left to numpy; this module adds a deterministic one-sided Jacobi SVD
and the orthonormal-basis least-squares projection used to refit weight
matrices onto a shared basis.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_EPS = np.finfo(np.float64).eps


class SvdConvergenceError(ArithmeticError):
    """Raised when Jacobi sweeps hit the iteration cap."""


@dataclass(frozen=True)
class SvdResult:
    """Thin SVD ``a = u @ diag(sigma) @ v.T``.

    ``u`` is m x k, ``v`` is n x k with k = min(m, n); ``sigma`` is descending.
    """

    u: np.ndarray
    sigma: np.ndarray
    v: np.ndarray

    def reconstruct(self, rank: int | None = None) -> np.ndarray:
        k = len(self.sigma) if rank is None else rank
        return (self.u[:, :k] * self.sigma[:k]) @ self.v[:, :k].T


def _tournament_rounds(n: int) -> list[tuple[np.ndarray, np.ndarray]]:
    # Round-robin pairing: every column pair meets once per sweep, and pairs
    # within a round are disjoint so they can be rotated together.
    players = list(range(n)) + ([-1] if n % 2 else [])
    size = len(players)
    rounds = []
    for _ in range(size - 1):
        p, q = [], []
        for i in range(size // 2):
            a, b = players[i], players[size - 1 - i]
            if a >= 0 and b >= 0:
                p.append(min(a, b))
                q.append(max(a, b))
        rounds.append((np.array(p, dtype=np.intp), np.array(q, dtype=np.intp)))
        players = [players[0], players[-1]] + players[1:-1]
    return rounds


def _jacobi_tall(a: np.ndarray, max_sweeps: int, tol: float) -> tuple[np.ndarray, np.ndarray]:
    """Orthogonalize the columns of ``a`` (m >= n). Returns (work, v)."""
    m, n = a.shape
    work = a.copy()
    v = np.eye(n)
    if n == 1:
        return work, v
    # columns below this squared norm carry only roundoff and are left alone
    floor = (_EPS * np.linalg.norm(a)) ** 2
    rounds = _tournament_rounds(n)
    for _ in range(max_sweeps):
        rotated = False
        for p, q in rounds:
            if p.size == 0:
                continue
            ap, aq = work[:, p], work[:, q]
            alpha = np.einsum("ij,ij->j", ap, ap)
            beta = np.einsum("ij,ij->j", aq, aq)
            gamma = np.einsum("ij,ij->j", ap, aq)
            active = (np.abs(gamma) > tol * np.sqrt(alpha * beta)) & (alpha > floor) & (beta > floor)
            if not active.any():
                continue
            rotated = True
            p, q = p[active], q[active]
            ap, aq = ap[:, active], aq[:, active]
            alpha, beta, gamma = alpha[active], beta[active], gamma[active]
            zeta = (beta - alpha) / (2.0 * gamma)
            sign = np.where(zeta >= 0, 1.0, -1.0)
            t = sign / (np.abs(zeta) + np.sqrt(1.0 + zeta * zeta))
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = c * t
            work[:, p] = c * ap - s * aq
            work[:, q] = s * ap + c * aq
            vp, vq = v[:, p], v[:, q]
            v[:, p] = c * vp - s * vq
            v[:, q] = s * vp + c * vq
        if not rotated:
            return work, v
    raise SvdConvergenceError(
        f"one-sided Jacobi SVD of a {m}x{n} matrix did not converge in {max_sweeps} sweeps"
    )


def _complete_columns(u: np.ndarray, missing: np.ndarray) -> None:
    """Fill columns ``missing`` of ``u`` with an orthonormal completion, in place."""
    m = u.shape[0]
    keep = [j for j in range(u.shape[1]) if j not in set(missing.tolist())]
    basis = [u[:, j] for j in keep]
    candidates = iter(range(m))
    for j in missing:
        for k in candidates:
            e = np.zeros(m)
            e[k] = 1.0
            for _ in range(2):
                for b in basis:
                    e -= (b @ e) * b
            norm = np.linalg.norm(e)
            if norm > 0.5:
                e /= norm
                u[:, j] = e
                basis.append(e)
                break


def svd(a: np.ndarray, *, max_sweeps: int = 60, tol: float = 1e-12) -> SvdResult:
    """Thin singular value decomposition by one-sided Jacobi rotations.

    Output is deterministic: rotation order is fixed and every singular pair
    is signed so that the largest-magnitude entry of its ``v`` column is
    positive. Zero (numerically null) directions get ``u`` columns drawn from
    the standard basis and orthogonalized against the rest.

    Raises:
        ValueError: empty, non-2D, or non-finite input.
        SvdConvergenceError: no convergence within ``max_sweeps`` sweeps.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
        raise ValueError(f"svd needs a non-empty 2-D matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"svd input {a.shape[0]}x{a.shape[1]} has non-finite entries")

    transposed = a.shape[0] < a.shape[1]
    tall = a.T if transposed else a
    work, v = _jacobi_tall(tall, max_sweeps, tol)

    sigma = np.linalg.norm(work, axis=0)
    order = np.argsort(-sigma, kind="stable")
    sigma, work, v = sigma[order], work[:, order], v[:, order]

    smax = sigma[0] if sigma.size else 0.0
    null = sigma <= max(tall.shape) * _EPS * smax if smax > 0 else np.ones_like(sigma, dtype=bool)
    u = np.zeros_like(work)
    u[:, ~null] = work[:, ~null] / sigma[~null]
    if null.any():
        _complete_columns(u, np.flatnonzero(null))

    if transposed:
        u, v = v, u

    # sign convention: largest |v| component of each column is positive
    idx = np.argmax(np.abs(v), axis=0)
    flip = v[idx, np.arange(v.shape[1])] < 0
    u[:, flip] *= -1.0
    v[:, flip] *= -1.0
    return SvdResult(u=u, sigma=sigma, v=v)


def least_squares_project(w_x: np.ndarray, v_r: np.ndarray, *, tol: float = 1e-8) -> np.ndarray:
    """Minimizer of ``||z @ v_r.T - w_x||_F`` for orthonormal ``v_r``, i.e. ``w_x @ v_r``."""
    w_x = np.asarray(w_x, dtype=np.float64)
    v_r = np.asarray(v_r, dtype=np.float64)
    if w_x.ndim != 2 or v_r.ndim != 2 or w_x.shape[1] != v_r.shape[0]:
        raise ValueError(f"cannot project {w_x.shape} onto basis {v_r.shape}")
    gram_err = np.max(np.abs(v_r.T @ v_r - np.eye(v_r.shape[1])))
    if gram_err > tol:
        raise ValueError(f"basis columns are not orthonormal (max deviation {gram_err:.3g})")
    return w_x @ v_r
