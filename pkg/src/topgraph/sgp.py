"""Spectral graph products: coupling functions and their eigen-grid tensors.

A spectral graph product of ``J`` graphs has eigenvectors
``v1[i1] (x) ... (x) vJ[iJ]`` and eigenvalues ``kappa(l1[i1], ..., lJ[iJ])``.
Product vertices ``(i1, ..., iJ)`` map to flat indices in row-major order
everywhere in the package.
"""

from dataclasses import dataclass
from functools import reduce
import itertools

import numpy as np

from . import archive
from .errors import DataError

KAPPA_FLOOR = 1e-8
DENSE_MAX_VERTICES = 4096

VARIANTS = ("tensor", "cartesian", "exponential", "flat", "nonparametric")
_ALIASES = {"exp": "exponential"}


@dataclass(frozen=True)
class KappaTensor:
    """Coupling values on the grid of retained eigen-indices.

    ``clamped`` counts entries raised to :data:`KAPPA_FLOOR` when built.
    """

    values: np.ndarray
    clamped: int = 0

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        if not np.all(np.isfinite(v)):
            raise DataError("kappa tensor has non-finite entries")
        if np.any(v < 0):
            raise DataError("kappa tensor has negative entries")
        object.__setattr__(self, "values", v)

    @property
    def dims(self):
        return self.values.shape


@dataclass(frozen=True)
class KappaSpec:
    """Which coupling function to use.

    ``variant`` is one of ``tensor``, ``cartesian``, ``exponential``,
    ``flat`` or ``nonparametric``; the last carries an explicit tensor.
    """

    variant: str
    payload: KappaTensor = None

    def __post_init__(self):
        variant = _ALIASES.get(self.variant.lower(), self.variant.lower())
        if variant not in VARIANTS:
            raise ValueError(f"unknown kappa variant {self.variant!r}")
        if (variant == "nonparametric") != (self.payload is not None):
            raise ValueError("a payload is required for, and only for, nonparametric kappa")
        object.__setattr__(self, "variant", variant)

    @property
    def parametric(self):
        return self.variant != "nonparametric"


def _elementary_symmetric(lams, degree):
    return sum(np.prod(c, axis=0) for c in itertools.combinations(lams, degree))


def kappa_eval(spec, lambdas):
    """Evaluate a parametric coupling at one eigenvalue tuple (or broadcastable arrays).

    The exponential form is ``exp(sum)`` for ``J = 2`` and
    ``exp(l1 l2 + l2 l3 + l1 l3)`` for ``J = 3``.  For ``J = 1`` it is
    ``exp(l1)``.  No clamping happens here.
    """
    if not spec.parametric:
        raise ValueError("nonparametric kappa is index-based; use build_kappa_tensor")
    lams = [np.asarray(l, dtype=np.float64) for l in lambdas]
    J = len(lams)
    if J < 1:
        raise ValueError("need at least one eigenvalue")
    if spec.variant == "tensor":
        out = reduce(np.multiply, lams)
    elif spec.variant == "cartesian":
        out = reduce(np.add, lams)
    elif spec.variant == "flat":
        out = np.ones(np.broadcast_shapes(*(l.shape for l in lams)))
    else:
        if J >= 4:
            raise ValueError("exponential kappa is only defined for J <= 3")
        out = np.exp(_elementary_symmetric(lams, 2) if J == 3 else reduce(np.add, lams))
    return float(out) if out.ndim == 0 else out


def _grid(systems):
    lams = [s.lambdas if hasattr(s, "lambdas") else np.asarray(s, dtype=np.float64)
            for s in systems]
    return np.meshgrid(*lams, indexing="ij")


def raw_kappa_grid(spec, systems):
    """Unclamped coupling values over the eigen-index grid."""
    if not spec.parametric:
        return spec.payload.values.copy()
    return np.asarray(kappa_eval(spec, _grid(systems)), dtype=np.float64).reshape(
        tuple(len(s.lambdas) if hasattr(s, "lambdas") else len(s) for s in systems))


def build_kappa_tensor(spec, systems, floor=KAPPA_FLOOR):
    """Coupling tensor for training, with entries below ``floor`` clamped.

    ``systems`` may be :class:`~topgraph.spectral.EigenSystem` objects or
    plain eigenvalue arrays.  A nonparametric spec returns its payload
    unchanged after a shape check.
    """
    if not spec.parametric:
        dims = tuple(len(s.lambdas) if hasattr(s, "lambdas") else len(s) for s in systems)
        if spec.payload.dims != dims:
            raise DataError(f"kappa payload dims {spec.payload.dims} != eigensystem dims {dims}")
        return spec.payload
    raw = raw_kappa_grid(spec, systems)
    low = raw < floor
    return KappaTensor(np.where(low, floor, raw), clamped=int(low.sum()))


def product_basis(systems):
    """Columns ``(x)_j v_j[:, k_j]`` for all eigen-index tuples, row-major."""
    return reduce(np.kron, [s.vectors for s in systems])


def materialize_sgp_dense(systems_full, spec):
    """Dense adjacency of the spectral graph product (test oracle only).

    Uses the raw coupling values, so negative eigenvalues of the product
    are preserved.
    """
    size = int(np.prod([s.n for s in systems_full]))
    if size > DENSE_MAX_VERTICES:
        raise ValueError(f"product graph has {size} vertices; dense limit is {DENSE_MAX_VERTICES}")
    basis = product_basis(systems_full)
    kappa = raw_kappa_grid(spec, systems_full).ravel()
    return (basis * kappa) @ basis.T


def flat_permutation(dims, perm):
    """Flat-index map from the original product to the one with graphs reordered.

    Returns ``p`` such that ``M_perm == M[np.ix_(p, p)]`` when graph ``k`` of
    the permuted product is graph ``perm[k]`` of the original.
    """
    return np.arange(int(np.prod(dims))).reshape(dims).transpose(perm).ravel()


def save_kappa(path, kappa):
    archive.save(path, "kappa", {"dims": list(kappa.dims), "clamped": kappa.clamped},
                 {"kappa": kappa.values})


def load_kappa(path):
    header, blobs = archive.load(path, kind="kappa")
    return KappaTensor(blobs["kappa"], clamped=header.get("clamped", 0))
