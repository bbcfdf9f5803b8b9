"""Truncated eigensystems of graph adjacencies and energy-based rank selection."""

from dataclasses import dataclass

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
from scipy.sparse.linalg import ArpackNoConvergence, eigsh

from . import archive
from .errors import ConvergenceError, DataError
from .graphio import SparseGraph

DENSE_MAX_N = 512


@dataclass(frozen=True)
class EigenSystem:
    """Top-``d`` eigenpairs of one graph.

    ``lambdas`` is sorted descending; column ``k`` of ``vectors`` is the
    eigenvector for ``lambdas[k]``.
    """

    lambdas: np.ndarray
    vectors: np.ndarray

    def __post_init__(self):
        lam = np.asarray(self.lambdas, dtype=np.float64).ravel()
        vec = np.asarray(self.vectors, dtype=np.float64)
        if vec.ndim != 2 or vec.shape[1] != lam.size:
            raise DataError(f"vectors shape {vec.shape} does not match {lam.size} eigenvalues")
        if lam.size > vec.shape[0]:
            raise DataError("rank exceeds ambient dimension")
        object.__setattr__(self, "lambdas", lam)
        object.__setattr__(self, "vectors", vec)

    @property
    def n(self):
        return self.vectors.shape[0]

    @property
    def d(self):
        return self.lambdas.size

    def truncate(self, d):
        return EigenSystem(self.lambdas[:d], self.vectors[:, :d])


def _as_operator(g):
    if isinstance(g, SparseGraph):
        return g.adj
    if sp.issparse(g):
        return sp.csr_matrix(g, dtype=np.float64)
    return np.asarray(g, dtype=np.float64)


def _fix_signs(vectors):
    # largest-magnitude entry of each column made positive; first one wins ties
    idx = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[idx, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


def residuals(g, system):
    """Per-pair residual norms ``||G v_k - lambda_k v_k||``."""
    a = _as_operator(g)
    r = a @ system.vectors - system.vectors * system.lambdas
    return np.linalg.norm(r, axis=0)


def top_eigensystem(g, d, seed=0, method="auto", maxiter=None):
    """The ``d`` algebraically largest eigenpairs of a symmetric graph.

    Parameters
    ----------
    g : SparseGraph, sparse matrix or ndarray
        Symmetric adjacency (normalized or not).
    d : int
        Number of eigenpairs, ``1 <= d <= n``.
    seed : int
        Seeds the Lanczos start vector.
    method : {"auto", "dense", "lanczos"}
        ``auto`` uses a dense solver for ``n <= 512`` or when ``d`` is too
        close to ``n`` for Lanczos, otherwise implicitly restarted Lanczos.
    maxiter : int, optional
        Lanczos restart budget.

    Returns
    -------
    EigenSystem
        Eigenvalues descending; each vector's largest-magnitude entry positive.

    Raises
    ------
    ConvergenceError
        Lanczos did not converge; ``diagnostics`` holds achieved residuals.
    """
    a = _as_operator(g)
    n = a.shape[0]
    if not 1 <= d <= n:
        raise ValueError(f"rank d={d} must lie in [1, {n}]")
    if method == "auto":
        method = "dense" if (n <= DENSE_MAX_N or d >= n - 1) else "lanczos"
    if method == "dense":
        dense = a.toarray() if sp.issparse(a) else a
        lam, vec = la.eigh(dense, subset_by_index=[n - d, n - 1])
    elif method == "lanczos":
        if d >= n - 1:
            raise ValueError("lanczos needs d < n - 1; use method='dense'")
        v0 = np.random.default_rng(seed).standard_normal(n)
        try:
            lam, vec = eigsh(a, k=d, which="LA", v0=v0, tol=0, maxiter=maxiter)
        except ArpackNoConvergence as exc:
            partial = EigenSystem(exc.eigenvalues, exc.eigenvectors)
            raise ConvergenceError(
                f"Lanczos converged {partial.d} of {d} eigenpairs",
                {"lambdas": partial.lambdas.tolist(),
                 "residuals": residuals(a, partial).tolist()}) from None
    else:
        raise ValueError(f"unknown method {method!r}")
    order = np.argsort(-lam, kind="stable")
    return EigenSystem(lam[order], _fix_signs(vec[:, order]))


def full_spectrum(g):
    """All eigenvalues, descending (dense; desk scale only)."""
    a = _as_operator(g)
    dense = a.toarray() if sp.issparse(a) else a
    return la.eigvalsh(dense)[::-1]


def select_rank_by_energy(lambdas_full, coverage, measure="abs", total=None):
    """Smallest ``d`` whose leading eigenvalues cover ``coverage`` of the energy.

    Energy of an eigenvalue is ``|lambda|`` (``measure="abs"``) or
    ``lambda**2`` (``measure="squared"``).  ``lambdas_full`` is taken in the
    given (descending) order.  When only a prefix of the spectrum is known,
    pass the full-spectrum ``total`` energy; for the squared measure that is
    the squared Frobenius norm of the adjacency.
    """
    lam = np.asarray(lambdas_full, dtype=np.float64).ravel()
    if lam.size == 0:
        raise ValueError("empty spectrum")
    if not 0 < coverage <= 1:
        raise ValueError(f"coverage must lie in (0, 1], got {coverage}")
    if measure == "abs":
        energy = np.abs(lam)
    elif measure == "squared":
        energy = lam ** 2
    else:
        raise ValueError(f"unknown energy measure {measure!r}")
    if total is None:
        total = energy.sum()
    if total <= 0:
        return 1
    cum = np.cumsum(energy)
    # relative slack guards exact-arithmetic ties such as 0.8 * 10 == 8
    hit = np.nonzero(cum >= coverage * total * (1 - 1e-12))[0]
    if hit.size == 0:
        raise ValueError("supplied spectrum prefix does not reach the requested coverage")
    return int(hit[0]) + 1


def save_eigensystem(path, system):
    archive.save(path, "eigensystem",
                 {"n": system.n, "d": system.d, "lambdas": system.lambdas.tolist()},
                 {"V": system.vectors})


def load_eigensystem(path):
    header, blobs = archive.load(path, kind="eigensystem")
    return EigenSystem(np.array(header["lambdas"], dtype=np.float64), blobs["V"])
