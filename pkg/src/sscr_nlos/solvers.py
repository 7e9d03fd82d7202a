"""Generic iterative kernels: conjugate gradient, anchored graph least
squares, soft thresholding and split-Bregman L1 least squares.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .errors import SingularSystem

__all__ = [
    "LinearMap",
    "cg_solve",
    "GraphLS",
    "graph_ls_solve",
    "soft_threshold",
    "l1_ls_bregman",
]


class LinearMap:
    """Matrix-free linear operator with an explicit adjoint.

    Parameters
    ----------
    shape : (rows, cols)
    apply, apply_adjoint : callables on flat vectors
    """

    def __init__(self, shape, apply, apply_adjoint=None):
        self.shape = (int(shape[0]), int(shape[1]))
        self._apply = apply
        self._apply_adjoint = apply_adjoint

    def apply(self, x):
        return self._apply(x)

    def apply_adjoint(self, y):
        if self._apply_adjoint is None:
            raise NotImplementedError("no adjoint registered for this map")
        return self._apply_adjoint(y)

    @classmethod
    def from_matrix(cls, m):
        m = np.asarray(m) if not sp.issparse(m) else m
        return cls(m.shape, lambda x: m @ x, lambda y: m.T @ y)

    def gram(self, shift=0.0):
        """Symmetric PSD map x -> A^T A x + shift * x."""
        n = self.shape[1]

        def apply(x):
            out = self.apply_adjoint(self.apply(x))
            if shift:
                out = out + shift * x
            return out

        return LinearMap((n, n), apply, apply)


def cg_solve(op, b, x0=None, max_iter=100, rel_tol=1e-10, callback=None):
    """Conjugate gradient on a symmetric PSD map ``op x = b``.

    Stops at ``max_iter`` or when ``||b - op x|| / ||b|| <= rel_tol``;
    breakdown of a search direction ends the iteration early. Returns the
    best iterate seen (by residual norm) and the per-iteration relative
    residual history (entry 0 is the initial residual).
    """
    b = np.asarray(b, float).reshape(-1)
    x = np.zeros_like(b) if x0 is None else np.array(x0, float).reshape(-1).copy()
    b_norm = float(np.linalg.norm(b))
    if b_norm == 0.0:
        return np.zeros_like(b), [0.0]
    r = b - np.asarray(op.apply(x), float).reshape(-1)
    p = r.copy()
    rs = float(r @ r)
    history = [np.sqrt(rs) / b_norm]
    best_x, best_res = x.copy(), history[0]
    for k in range(max_iter):
        if history[-1] <= rel_tol:
            break
        ap = np.asarray(op.apply(p), float).reshape(-1)
        pap = float(p @ ap)
        if pap <= 0 or not np.isfinite(pap):
            break  # singular/indefinite direction: keep the best iterate
        alpha = rs / pap
        x = x + alpha * p
        r = r - alpha * ap
        rs_new = float(r @ r)
        history.append(np.sqrt(rs_new) / b_norm)
        if callback is not None:
            callback(x, k + 1)
        if history[-1] < best_res:
            best_res = history[-1]
            best_x = x.copy()
        beta = rs_new / rs
        rs = rs_new
        p = r + beta * p
    return best_x, history


@dataclass
class GraphLS:
    """Anchored least squares on a weighted pixel/voxel graph.

    Minimizes ``sum_i lam_i (u_i - data_i)^2 +
    sum_pairs w (u_i - u_j)^2`` where each undirected pair is stored
    once with its total weight.
    """

    lam: np.ndarray
    data: np.ndarray
    pairs: np.ndarray  # (m, 2) int indices
    pair_w: np.ndarray  # (m,) nonnegative weights

    def __post_init__(self):
        self.lam = np.asarray(self.lam, float).reshape(-1)
        self.data = np.asarray(self.data, float).reshape(-1)
        self.pairs = np.asarray(self.pairs, np.int64).reshape(-1, 2)
        self.pair_w = np.asarray(self.pair_w, float).reshape(-1)
        if self.lam.shape != self.data.shape:
            raise ValueError("lam and data must have the same length")
        if self.pair_w.shape[0] != self.pairs.shape[0]:
            raise ValueError("pair_w must match pairs")
        if (self.lam < 0).any() or (self.pair_w < 0).any():
            raise ValueError("weights must be nonnegative")

    @property
    def num_nodes(self):
        return self.lam.shape[0]

    def objective(self, u):
        u = np.asarray(u, float).reshape(-1)
        fit = float(self.lam @ (u - self.data) ** 2)
        if self.pairs.size:
            diff = u[self.pairs[:, 0]] - u[self.pairs[:, 1]]
            fit += float(self.pair_w @ diff**2)
        return fit

    def system(self):
        """Sparse normal matrix M and right-hand side lam * data."""
        n = self.num_nodes
        if self.pairs.size:
            i, j = self.pairs[:, 0], self.pairs[:, 1]
            w = self.pair_w
            rows = np.concatenate([i, j, i, j])
            cols = np.concatenate([j, i, i, j])
            vals = np.concatenate([-w, -w, w, w])
            m = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
        else:
            m = sp.csr_matrix((n, n))
        m = m + sp.diags(self.lam)
        return m, self.lam * self.data


def graph_ls_solve(problem: GraphLS, tol=1e-12, max_iter=None) -> np.ndarray:
    """Solve the anchored graph least-squares normal system by CG.

    Connected components with no anchor (all ``lam == 0``) cannot be
    determined; they are set to 0 and flagged with a warning. If no node
    anywhere is anchored, raises :class:`SingularSystem`.

    The CG starts from the constant best fit (the lam-weighted mean of
    the anchored data); when the data is constant this initial guess is
    already exact and is returned unchanged.
    """
    n = problem.num_nodes
    anchored = problem.lam > 0
    if not anchored.any():
        raise SingularSystem("no data anchor in the whole graph")

    if problem.pairs.size:
        adj = sp.coo_matrix(
            (np.ones(problem.pairs.shape[0]), (problem.pairs[:, 0], problem.pairs[:, 1])),
            shape=(n, n),
        )
        ncomp, labels = connected_components(adj, directed=False)
    else:
        ncomp, labels = n, np.arange(n)
    anchored_comp = np.zeros(ncomp, bool)
    np.logical_or.at(anchored_comp, labels, anchored)
    live = anchored_comp[labels]
    if not live.all():
        warnings.warn(
            f"{int((~live).sum())} node(s) in unanchored components set to 0",
            stacklevel=2,
        )

    m, b = problem.system()
    mean = float(problem.lam @ problem.data) / float(problem.lam.sum())
    x0 = np.where(live, mean, 0.0)
    if max_iter is None:
        max_iter = max(10 * n, 200)
    x, _ = cg_solve(LinearMap((n, n), lambda v: m @ v), b, x0=x0,
                    max_iter=max_iter, rel_tol=tol)
    if not live.all():
        x = np.where(live, x, 0.0)
    return x


def soft_threshold(x, t):
    """Componentwise ``sign(x) * max(|x| - t, 0)`` for ``t >= 0``."""
    if t < 0:
        raise ValueError("threshold must be nonnegative")
    x = np.asarray(x, float)
    return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)


def l1_ls_bregman(a: LinearMap, tau, s_imp, mu_s, outer_iters=10,
                  cg_max_iter=20, cg_rel_tol=0.005) -> np.ndarray:
    """Split-Bregman solve of ``min ||A u - tau||^2 + s_imp ||u||_1``.

    Starts from the plain conjugate-gradient least-squares solution
    (initialized at the back-projection A^T tau), then alternates the
    soft-threshold shrink at level ``s_imp / (2 mu_s)``, a CG solve of
    ``(A^T A + mu_s I) u = A^T tau + mu_s (v + b)``, and the Bregman
    residual update. Returns the final shrunk iterate v_J. With
    ``s_imp == 0`` the plain least-squares solution is returned directly.
    """
    if s_imp < 0 or mu_s <= 0:
        raise ValueError("need s_imp >= 0 and mu_s > 0")
    tau = np.asarray(tau, float).reshape(-1)
    atb = np.asarray(a.apply_adjoint(tau), float).reshape(-1)
    u, _ = cg_solve(a.gram(), atb, x0=atb, max_iter=cg_max_iter, rel_tol=cg_rel_tol)
    if s_imp == 0:
        return u
    shrink = s_imp / (2.0 * mu_s)
    reg = a.gram(shift=mu_s)
    b = np.zeros_like(u)
    v = np.zeros_like(u)
    for _ in range(outer_iters):
        v = soft_threshold(u - b, shrink)
        u, _ = cg_solve(reg, atb + mu_s * (v + b), x0=u,
                        max_iter=cg_max_iter, rel_tol=cg_rel_tol)
        b = b + v - u
    return v
