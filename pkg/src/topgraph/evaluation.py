"""Splits, tuple-completion queries, ranking metrics and the one-class NN baseline.

Metric functions return ``None`` when the metric is undefined for the
input (no relevant items, or no positives / negatives for AUC).
"""

from dataclasses import dataclass
import csv

import numpy as np
from scipy.stats import rankdata

from .errors import DataError
from .graphio import TupleSet


@dataclass(frozen=True)
class Split:
    train: TupleSet
    validation: TupleSet
    test: TupleSet


def make_split(tuples, seed):
    """Shuffle with ``seed`` and cut into thirds (the remainder goes to test)."""
    n = len(tuples)
    if n < 3:
        raise DataError(f"need at least 3 tuples to split, got {n}")
    perm = np.random.default_rng(seed).permutation(n)
    third = n // 3
    parts = np.split(tuples.index[perm], [third, 2 * third])
    return Split(*(TupleSet(tuples.dims, p) for p in parts))


@dataclass(frozen=True)
class CompletionQuery:
    """A tuple with one wildcard mode, e.g. ``(author, ?, venue)``."""

    fixed: tuple
    mode: int

    def __post_init__(self):
        if not 0 <= self.mode < len(self.fixed):
            raise ValueError(f"wildcard mode {self.mode} out of range")
        if sum(i is None for i in self.fixed) != 1 or self.fixed[self.mode] is not None:
            raise ValueError("exactly one wildcard, at position `mode`, is required")

    def complete(self, c):
        t = list(self.fixed)
        t[self.mode] = c
        return tuple(t)


def rank_completions(score, q, exclude, n_candidates=None):
    """Candidates of the wildcard mode sorted by descending score.

    ``score`` is either a callable on full tuples or an array of candidate
    scores.  Candidates whose completed tuple is in ``exclude`` are
    dropped; ties go to the lower index.
    """
    if callable(score):
        if n_candidates is None:
            n_candidates = exclude.dims[q.mode]
        scores = np.array([score(q.complete(c)) for c in range(n_candidates)], dtype=np.float64)
    else:
        scores = np.asarray(score, dtype=np.float64)
    keep = [c for c in range(scores.size) if q.complete(c) not in exclude]
    keep = np.array(keep, dtype=np.int64)
    order = np.lexsort((keep, -scores[keep]))
    return keep[order].tolist()


def average_precision(ranked, relevant):
    relevant = set(relevant)
    if not relevant:
        return None
    hits = 0
    total = 0.0
    for rank, item in enumerate(ranked, start=1):
        if item in relevant:
            hits += 1
            total += hits / rank
    return total / len(relevant)


def map_over_queries(aps):
    vals = [a for a in aps if a is not None]
    return float(np.mean(vals)) if vals else None


def auc(pos_scores, neg_scores):
    """Probability a positive outscores a negative; ties earn half credit."""
    pos = np.asarray(pos_scores, dtype=np.float64).ravel()
    neg = np.asarray(neg_scores, dtype=np.float64).ravel()
    if pos.size == 0 or neg.size == 0:
        return None
    ranks = rankdata(np.concatenate([pos, neg]))
    u = ranks[:pos.size].sum() - pos.size * (pos.size + 1) / 2.0
    return float(u / (pos.size * neg.size))


def hits_at_k(ranked, relevant, k=5):
    relevant = set(relevant)
    if not relevant:
        return None
    return 1.0 if any(item in relevant for item in ranked[:k]) else 0.0


def _with_self_weight(graphs, self_weight):
    mats = []
    for g in graphs:
        a = g.adj.tolil(copy=True)
        if self_weight is not None:
            a.setdiag(self_weight)
        mats.append(a.tocsr())
    return mats


def one_class_nn_score(graphs, O, t, self_weight=None):
    """``max`` over training tuples of the product of per-graph similarities.

    ``self_weight``, when given, overrides every graph's diagonal so a
    tuple is similar to itself.
    """
    if len(O) == 0:
        raise DataError("one-class NN needs at least one training tuple")
    mats = _with_self_weight(graphs, self_weight)
    best = 0.0
    for o in O:
        prod = 1.0
        for a, i, i2 in zip(mats, t, o):
            prod *= a[i, i2]
            if prod == 0.0:
                break
        best = max(best, prod)
    return best


class NearestNeighborScorer:
    """Vectorized one-class NN scores along a wildcard mode."""

    def __init__(self, graphs, O, self_weight=1.0):
        if len(O) == 0:
            raise DataError("one-class NN needs at least one training tuple")
        self.mats = [a.tocsc() for a in _with_self_weight(graphs, self_weight)]
        self.O = O

    def __call__(self, partial, mode):
        n = self.mats[mode].shape[0]
        best = np.zeros(n)
        for o in self.O.index:
            w = 1.0
            for j, a in enumerate(self.mats):
                if j != mode:
                    w *= a[partial[j], o[j]]
            if w == 0.0:
                continue
            col = self.mats[mode][:, o[mode]].toarray().ravel()
            np.maximum(best, w * col, out=best)
        return best


def model_scorer(model):
    from .model import score_mode

    return lambda partial, mode: score_mode(model, partial, mode)


def evaluate_completion(scorer, split, mode):
    """MAP / AUC / Hits@5 for completing ``mode`` on every test query.

    Queries are the distinct test tuples with ``mode`` blanked.  Training
    tuples are removed from each candidate list; test tuples are the
    positives and every other remaining candidate is a negative.

    Returns ``(summary, rows)`` with ``summary`` keys ``map``, ``auc``,
    ``hits_at_5``, ``n_queries`` and one row dict per query.
    """
    T, O = split.test, split.train
    queries = {}
    for t in T:
        key = tuple(None if j == mode else i for j, i in enumerate(t))
        queries.setdefault(key, set()).add(t[mode])
    rows = []
    for key in sorted(queries, key=lambda k: tuple(-1 if i is None else i for i in k)):
        q = CompletionQuery(key, mode)
        partial = tuple(0 if i is None else i for i in key)
        scores = np.asarray(scorer(partial, mode), dtype=np.float64)
        ranked = rank_completions(scores, q, O)
        relevant = queries[key]
        negatives = [c for c in ranked if c not in relevant]
        rows.append({
            "query": "\t".join("?" if i is None else str(i) for i in key),
            "n_relevant": len(relevant),
            "ap": average_precision(ranked, relevant),
            "auc": auc(scores[sorted(relevant)], scores[negatives]),
            "hits_at_5": hits_at_k(ranked, relevant, 5),
        })
    def mean(name):
        vals = [r[name] for r in rows if r[name] is not None]
        return float(np.mean(vals)) if vals else None
    summary = {"map": map_over_queries([r["ap"] for r in rows]), "auc": mean("auc"),
               "hits_at_5": mean("hits_at_5"), "n_queries": len(rows)}
    return summary, rows


def write_query_rows(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["query", "n_relevant", "ap", "auc", "hits_at_5"])
        for r in rows:
            w.writerow([r["query"], r["n_relevant"]] +
                       ["" if r[k] is None else repr(r[k]) for k in ("ap", "auc", "hits_at_5")])
