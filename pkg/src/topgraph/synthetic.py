"""Planted block problems for smoke tests and demos."""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .graphio import SparseGraph, TupleSet


@dataclass(frozen=True)
class PlantedProblem:
    graphs: list
    blocks: list
    positives: TupleSet

    def aligned_mask(self):
        """Boolean tensor: True where all indices fall in the same block."""
        grids = np.meshgrid(*self.blocks, indexing="ij")
        return np.all([g == grids[0] for g in grids], axis=0)


def sbm_graph(n, n_blocks, p_in, p_out, rng):
    """Unweighted stochastic block model; vertex ``i`` is in block ``i * n_blocks // n``."""
    blocks = np.arange(n) * n_blocks // n
    p = np.where(blocks[:, None] == blocks[None, :], p_in, p_out)
    upper = np.triu(rng.random((n, n)) < p, 1)
    a = (upper | upper.T).astype(np.float64)
    return SparseGraph(sp.csr_matrix(a)), blocks


def planted_blocks(seed, sizes=(60, 60), n_blocks=2, p_in=0.3, p_out=0.02, fraction=0.05):
    """Block-model graphs plus positives sampled from block-aligned tuples.

    A tuple is block-aligned when every index sits in the same block
    number; ``round(fraction * #aligned)`` of them are drawn without
    replacement as positives.
    """
    rng = np.random.default_rng(seed)
    graphs, blocks = [], []
    for n in sizes:
        g, b = sbm_graph(n, n_blocks, p_in, p_out, rng)
        graphs.append(g)
        blocks.append(b)
    problem = PlantedProblem(graphs, blocks, TupleSet(tuple(sizes), np.empty((0, len(sizes)))))
    aligned = np.argwhere(problem.aligned_mask())
    m = max(1, int(round(fraction * len(aligned))))
    pick = aligned[rng.choice(len(aligned), m, replace=False)]
    return PlantedProblem(graphs, blocks, TupleSet(tuple(sizes), pick))
