"""Tucker-restricted predictor ``f = alpha x_1 V1 x_2 ... x_J VJ``.

``alpha`` has shape ``(d1, ..., dJ)``; ``Vj`` is the ``nj x dj`` matrix of
retained eigenvectors of graph ``j``.  Scoring one tuple costs
``O(d1 * ... * dJ)`` and never touches a full ``nj``-length vector.
"""

from dataclasses import dataclass, replace
from functools import reduce
import logging

import numpy as np

from . import archive
from .errors import DataError
from .sgp import KAPPA_FLOOR, KappaTensor, raw_kappa_grid
from .spectral import EigenSystem

log = logging.getLogger(__name__)

FULL_MAX_ENTRIES = 10 ** 6


@dataclass(frozen=True)
class Model:
    alpha: np.ndarray
    systems: tuple
    kappa: KappaTensor
    gamma: float
    kappa_variant: str = "nonparametric"

    def __post_init__(self):
        alpha = np.array(self.alpha, dtype=np.float64)
        systems = tuple(self.systems)
        dims = tuple(s.d for s in systems)
        if alpha.shape != dims:
            raise DataError(f"core shape {alpha.shape} != eigensystem ranks {dims}")
        if self.kappa.dims != dims:
            raise DataError(f"kappa shape {self.kappa.dims} != eigensystem ranks {dims}")
        if not self.gamma > 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        if not np.all(np.isfinite(alpha)):
            raise DataError("core tensor has non-finite entries")
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "systems", systems)

    @classmethod
    def zeros(cls, systems, kappa, gamma, kappa_variant="nonparametric"):
        dims = tuple(s.d for s in systems)
        return cls(np.zeros(dims), systems, kappa, gamma, kappa_variant)

    @property
    def order(self):
        return len(self.systems)

    @property
    def dims_n(self):
        return tuple(s.n for s in self.systems)

    @property
    def dims_d(self):
        return self.alpha.shape

    @property
    def factors(self):
        return [s.vectors for s in self.systems]

    def with_alpha(self, alpha):
        return replace(self, alpha=alpha)


def mode_dot(tensor, matrix, mode):
    """Mode-``mode`` product: contracts ``tensor``'s axis with ``matrix``'s columns."""
    out = np.tensordot(tensor, matrix, axes=([mode], [1]))
    return np.moveaxis(out, -1, mode)


def tuple_rows(model, t):
    return [V[i] for V, i in zip(model.factors, t)]


def outer_rows(rows):
    """``rows[0] (x) rows[1] (x) ...`` as a tensor of shape ``(d1, ..., dJ)``."""
    return reduce(np.multiply.outer, rows)


def contract(alpha, rows):
    """``alpha x_1 rows[0] x_2 ... x_J rows[J-1]`` for row vectors."""
    out = alpha
    for r in reversed(rows):
        out = out @ r
    return float(out)


def score_tuple(model, t):
    if len(t) != model.order:
        raise ValueError(f"tuple has {len(t)} indices, model has order {model.order}")
    for i, n in zip(t, model.dims_n):
        if not 0 <= i < n:
            raise IndexError(f"index {i} out of range for size {n}")
    return contract(model.alpha, tuple_rows(model, t))


def score_tuples(model, index, chunk=4096):
    """Vectorized scores for an ``(m, J)`` array of tuples."""
    index = np.asarray(index, dtype=np.int64).reshape(-1, model.order)
    out = np.empty(index.shape[0])
    factors = model.factors
    for lo in range(0, index.shape[0], chunk):
        idx = index[lo:lo + chunk]
        # trailing batch axis B: acc has shape (d1, ..., dj, B)
        acc = np.tensordot(model.alpha, factors[-1][idx[:, -1]], axes=([-1], [1]))
        for j in range(model.order - 2, -1, -1):
            acc = np.einsum("...kb,bk->...b", acc, factors[j][idx[:, j]])
        out[lo:lo + chunk] = acc
    return out


def score_mode(model, partial, mode):
    """Scores of every candidate index along ``mode`` with the other indices fixed.

    ``partial`` is a length-``J`` tuple; its entry at ``mode`` is ignored.
    """
    core = model.alpha
    factors = model.factors
    # contract the fixed modes from the back so axis numbers stay valid
    for j in range(model.order - 1, -1, -1):
        if j != mode:
            core = np.tensordot(core, factors[j][partial[j]], axes=([j], [0]))
    return factors[mode] @ core


def recover_full(model):
    """Dense prediction tensor of shape ``(n1, ..., nJ)`` (desk scale)."""
    size = int(np.prod(model.dims_n, dtype=np.int64))
    if size > FULL_MAX_ENTRIES:
        raise ValueError(f"prediction tensor has {size} entries; limit is {FULL_MAX_ENTRIES}")
    f = model.alpha
    for j, V in enumerate(model.factors):
        f = mode_dot(f, V, j)
    return f


def seminorm_tucker(alpha, kappa):
    """``sum(alpha**2 / kappa)`` over the core grid."""
    values = kappa.values if isinstance(kappa, KappaTensor) else np.asarray(kappa)
    alpha = np.asarray(alpha, dtype=np.float64)
    if alpha.shape != values.shape:
        raise ValueError(f"shape mismatch {alpha.shape} vs {values.shape}")
    return float(np.sum(alpha * alpha / values))


def spectral_coefficients(f, systems_full):
    """All numerators ``f(v1[k1], ..., vJ[kJ])`` via successive mode products."""
    out = np.asarray(f, dtype=np.float64)
    for j, s in enumerate(systems_full):
        out = mode_dot(out, s.vectors.T, j)
    return out


def seminorm_exact(f, systems_full, spec, floor=KAPPA_FLOOR):
    """Product-graph semi-norm of a full prediction tensor.

    Cost is ``O((n1 + ... + nJ) * n1 * ... * nJ)``.  Coupling values below
    ``floor`` are raised to it, matching the training path.
    """
    f = np.asarray(f, dtype=np.float64)
    dims = tuple(s.n for s in systems_full)
    if f.shape != dims:
        raise ValueError(f"tensor shape {f.shape} != graph sizes {dims}")
    if any(s.d != s.n for s in systems_full):
        raise ValueError("exact semi-norm needs full eigensystems (d == n)")
    coef = spectral_coefficients(f, systems_full)
    kappa = raw_kappa_grid(spec, systems_full)
    low = kappa < floor
    if low.any():
        log.info("seminorm_exact: %d coupling values clamped to %g", int(low.sum()), floor)
        kappa = np.where(low, floor, kappa)
    return float(np.sum(coef * coef / kappa))


def save_model(path, model):
    meta = {"J": model.order, "dims_n": list(model.dims_n), "dims_d": list(model.dims_d),
            "gamma": model.gamma, "kappa_spec": model.kappa_variant,
            "kappa_clamped": model.kappa.clamped}
    blobs = {"alpha": model.alpha, "kappa": model.kappa.values}
    for j, s in enumerate(model.systems):
        blobs[f"V{j}"] = s.vectors
        blobs[f"lambda{j}"] = s.lambdas
    archive.save(path, "model", meta, blobs)


def load_model(path):
    header, blobs = archive.load(path, kind="model")
    systems = [EigenSystem(blobs[f"lambda{j}"], blobs[f"V{j}"]) for j in range(header["J"])]
    kappa = KappaTensor(blobs["kappa"], clamped=header.get("kappa_clamped", 0))
    return Model(blobs["alpha"], systems, kappa, header["gamma"], header["kappa_spec"])
