"""Input graphs and tuple sets: parsing, kNN sparsification, normalization.

Edge-list documents are UTF-8 text with one ``i<TAB>j<TAB>w`` record per
line (0-based indices).  Lines starting with ``#`` are comments, except that
a ``# n=<N>`` line declares the vertex count.  Tuple documents hold one
``i1<TAB>...<TAB>iJ`` record per line.
"""

from dataclasses import dataclass, field
import re

import numpy as np
import scipy.sparse as sp

from . import archive
from .errors import DataError

SYMMETRY_TOL = 1e-12
_HEADER_N = re.compile(r"^#\s*n\s*=\s*(\d+)\s*$")


@dataclass(frozen=True)
class SparseGraph:
    """Symmetric, nonnegative weighted adjacency of one object type.

    The adjacency is held as a canonical CSR matrix (sorted indices, no
    duplicates, no explicit zeros).  Self-loops are allowed here; the
    sparsification and normalization steps drop them.
    """

    adj: sp.csr_matrix
    normalized: bool = False

    def __post_init__(self):
        a = sp.csr_matrix(self.adj, dtype=np.float64)
        a.sum_duplicates()
        a.eliminate_zeros()
        a.sort_indices()
        if a.shape[0] != a.shape[1]:
            raise DataError(f"adjacency must be square, got {a.shape}")
        if not np.all(np.isfinite(a.data)):
            raise DataError("adjacency has non-finite weights")
        if np.any(a.data < 0):
            raise DataError("adjacency has negative weights")
        if a.nnz and abs(a - a.T).max() > SYMMETRY_TOL:
            raise DataError("adjacency is not symmetric")
        object.__setattr__(self, "adj", a)

    @property
    def n(self):
        return self.adj.shape[0]

    @property
    def nnz(self):
        return self.adj.nnz

    def edges(self):
        """All stored entries as ``(i, j, w)`` triples, row-major."""
        coo = self.adj.tocoo()
        return list(zip(coo.row.tolist(), coo.col.tolist(), coo.data.tolist()))

    def toarray(self):
        return self.adj.toarray()


@dataclass(frozen=True)
class TupleSet:
    """A deduplicated set of index tuples over a grid of shape ``dims``.

    ``index`` is an ``(m, J)`` int64 array sorted by row-major flat index.
    """

    dims: tuple
    index: np.ndarray
    _flat: frozenset = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        dims = tuple(int(n) for n in self.dims)
        if len(dims) < 1 or any(n < 1 for n in dims):
            raise DataError(f"invalid dims {dims}")
        idx = np.asarray(self.index, dtype=np.int64).reshape(-1, len(dims))
        if idx.size and (np.any(idx < 0) or np.any(idx >= np.array(dims))):
            raise DataError("tuple index out of range")
        flat = np.unique(np.ravel_multi_index(idx.T, dims)) if idx.size else np.empty(0, np.int64)
        idx = np.stack(np.unravel_index(flat, dims), axis=1).astype(np.int64) if flat.size \
            else np.empty((0, len(dims)), np.int64)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "index", idx)
        object.__setattr__(self, "_flat", frozenset(flat.tolist()))

    @classmethod
    def from_tuples(cls, tuples, dims):
        tuples = list(tuples)
        return cls(dims, np.array(tuples, dtype=np.int64).reshape(len(tuples), len(dims)))

    @property
    def order(self):
        return len(self.dims)

    @property
    def grid_size(self):
        return int(np.prod(self.dims, dtype=np.int64))

    @property
    def flat(self):
        return self._flat

    def flat_index(self):
        return np.ravel_multi_index(self.index.T, self.dims) if len(self) else np.empty(0, np.int64)

    def __len__(self):
        return self.index.shape[0]

    def __iter__(self):
        return (tuple(row) for row in self.index.tolist())

    def __contains__(self, t):
        return int(np.ravel_multi_index(tuple(t), self.dims)) in self._flat

    def contains_flat(self, flat):
        return int(flat) in self._flat


def _parse_header_n(text):
    for line in text.splitlines():
        m = _HEADER_N.match(line.strip())
        if m:
            return int(m.group(1))
    return None


def load_edge_list(text, n=None):
    """Parse an edge-list document into a symmetrized :class:`SparseGraph`.

    Each undirected edge may be listed once or in both directions.  ``n``
    overrides a ``# n=<N>`` header; one of the two must be present.
    """
    if n is None:
        n = _parse_header_n(text)
        if n is None:
            raise DataError("vertex count unknown: pass n or add a '# n=<N>' header")
    n = int(n)
    weights = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise DataError(f"expected 'i<TAB>j<TAB>w', got {raw!r}", line=lineno)
        try:
            i, j, w = int(parts[0]), int(parts[1]), float(parts[2])
        except ValueError:
            raise DataError(f"cannot parse {raw!r}", line=lineno) from None
        if not (0 <= i < n and 0 <= j < n):
            raise DataError(f"index out of range for n={n}: ({i}, {j})", line=lineno)
        if not np.isfinite(w) or w < 0:
            raise DataError(f"weight must be finite and nonnegative, got {w}", line=lineno)
        key = (min(i, j), max(i, j))
        prev = weights.get(key)
        if prev is not None and prev != w:
            raise DataError(f"conflicting weights for edge {key}: {prev} vs {w}", line=lineno)
        weights[key] = w
    return graph_from_edges(n, [(i, j, w) for (i, j), w in weights.items()])


def graph_from_edges(n, edges, normalized=False):
    """Build a graph from undirected ``(i, j, w)`` triples, adding mirrors."""
    rows, cols, vals = [], [], []
    for i, j, w in edges:
        rows.append(i)
        cols.append(j)
        vals.append(w)
        if i != j:
            rows.append(j)
            cols.append(i)
            vals.append(w)
    adj = sp.csr_matrix((vals, (rows, cols)), shape=(n, n), dtype=np.float64)
    return SparseGraph(adj, normalized=normalized)


def dump_edge_list(g):
    """Serialize to the edge-list format (upper triangle, ``# n=`` header)."""
    lines = [f"# n={g.n}"]
    coo = sp.triu(g.adj).tocoo()
    order = np.lexsort((coo.col, coo.row))
    for k in order:
        lines.append(f"{int(coo.row[k])}\t{int(coo.col[k])}\t{float(coo.data[k])!r}")
    return "\n".join(lines) + "\n"


def _drop_self_loops(a):
    a = a.tolil(copy=True)
    a.setdiag(0)
    a = a.tocsr()
    a.eliminate_zeros()
    return a


def knn_sparsify(g, fraction):
    """Keep each vertex's ``k = max(1, round(fraction * n))`` heaviest neighbors.

    The kept edges are symmetrized by union: an edge survives when either
    endpoint selects it.  Ties go to the lower neighbor index.  Self-loops
    are not candidates and are dropped.
    """
    if not 0 < fraction <= 1:
        raise ValueError(f"fraction must lie in (0, 1], got {fraction}")
    k = max(1, int(round(fraction * g.n)))
    a = _drop_self_loops(g.adj)
    rows, cols = [], []
    for i in range(g.n):
        lo, hi = a.indptr[i], a.indptr[i + 1]
        nbrs, w = a.indices[lo:hi], a.data[lo:hi]
        if nbrs.size == 0:
            continue
        # primary key descending weight, secondary ascending index
        order = np.lexsort((nbrs, -w))[:k]
        rows.extend([i] * order.size)
        cols.extend(nbrs[order].tolist())
    mask = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=a.shape)
    mask = ((mask + mask.T) > 0).astype(np.float64)
    return SparseGraph(a.multiply(mask).tocsr(), normalized=False)


def symmetric_normalize(g):
    """Return ``D^{-1/2} A D^{-1/2}`` with self-loops removed first.

    Degree-zero vertices keep all-zero rows.
    """
    a = _drop_self_loops(g.adj)
    deg = np.asarray(a.sum(axis=1)).ravel()
    scale = np.zeros_like(deg)
    nz = deg > 0
    scale[nz] = 1.0 / np.sqrt(deg[nz])
    d = sp.diags(scale)
    out = (d @ a @ d).tocsr()
    # exact mirror so symmetry survives rounding
    out = ((out + out.T) * 0.5).tocsr()
    return SparseGraph(out, normalized=True)


def load_tuples(text, dims):
    """Parse a tuple document; duplicates are merged."""
    dims = tuple(int(n) for n in dims)
    rows = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != len(dims):
            raise DataError(f"expected {len(dims)} indices, got {len(parts)}", line=lineno)
        try:
            t = tuple(int(p) for p in parts)
        except ValueError:
            raise DataError(f"cannot parse {raw!r}", line=lineno) from None
        for i, n in zip(t, dims):
            if not 0 <= i < n:
                raise DataError(f"index {i} out of range for dims {dims}", line=lineno)
        rows.append(t)
    return TupleSet.from_tuples(rows, dims)


def dump_tuples(tuples):
    return "".join("\t".join(str(i) for i in t) + "\n" for t in tuples)


def save_graph(path, g):
    coo = g.adj.tocoo()
    archive.save(path, "graph", {"n": g.n, "normalized": bool(g.normalized)},
                 {"rows": coo.row.astype(np.int64), "cols": coo.col.astype(np.int64),
                  "weights": coo.data})


def load_graph(path):
    header, blobs = archive.load(path, kind="graph")
    n = header["n"]
    adj = sp.csr_matrix((blobs["weights"], (blobs["rows"], blobs["cols"])), shape=(n, n))
    return SparseGraph(adj, normalized=header["normalized"])
