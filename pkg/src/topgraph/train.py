"""Ranking squared-hinge training of the Tucker core with AdaGrad SGD.

Randomness: ``np.random.SeedSequence(seed).spawn(3)`` gives three
independent streams, used for (0) positive draws, (1) negative draws and
(2) monitoring (sampled loss estimates, validation negatives).  The
monitoring stream is re-created from the same child seed at every
checkpoint so successive estimates use identical samples.
"""

from dataclasses import dataclass
import csv
import logging

import numpy as np

from .errors import ConvergenceError, DataError
from .model import outer_rows, recover_full, score_tuples, seminorm_tucker, tuple_rows
from .sgp import product_basis

log = logging.getLogger(__name__)

EXACT_LOSS_MAX_ENTRIES = 10 ** 6


@dataclass(frozen=True)
class TrainConfig:
    """Knobs for :func:`train`.

    ``loss_sample`` caps the number of pairs used for the monitoring loss
    when the grid is too large for the exact value.  Early stopping is on
    when ``patience`` is set and a validation set is passed to :func:`train`.
    """

    gamma: float = 1.0
    eta0: float = 1.0
    iterations: int = 1000
    seed: int = 0
    batch: int = 1
    eval_every: int = 1000
    loss_sample: int = 100_000
    patience: int = None
    ma_window: int = 3

    def __post_init__(self):
        if not self.gamma > 0 or not self.eta0 > 0:
            raise ValueError("gamma and eta0 must be positive")
        if self.iterations < 0 or self.batch < 1 or self.eval_every < 1:
            raise ValueError("iterations >= 0, batch >= 1 and eval_every >= 1 required")


class AdaGradState:
    """Per-coordinate sum of squared gradients."""

    def __init__(self, shape):
        self.Z = np.zeros(shape)
        self.steps = 0

    def step_sizes(self, eta0):
        out = np.zeros_like(self.Z)
        nz = self.Z > 0
        out[nz] = eta0 / np.sqrt(self.Z[nz])
        return out


def pair_loss_term(f_pos, f_neg):
    margin = max(0.0, 1.0 - (f_pos - f_neg))
    return margin * margin


def rng_streams(seed):
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(3)]


def _negative_flat(observed, size, rng):
    if len(observed) >= size:
        raise DataError("observed tuples saturate the grid; no negatives exist")
    while True:
        flat = int(rng.integers(size))
        if flat not in observed:
            return flat


def sample_negative(O, dims, rng):
    """Uniform draw from the complement of ``O`` by rejection.

    Expected draws per call are ``1 / (1 - |O| / prod(dims))``.
    """
    dims = tuple(dims)
    size = int(np.prod(dims, dtype=np.int64))
    flat = _negative_flat(O.flat, size, rng)
    return tuple(int(i) for i in np.unravel_index(flat, dims))


def _hinge_sums(pos, neg):
    """``sum_{p, q} max(0, 1 - p + q)^2`` via sorting and prefix sums."""
    neg = np.sort(neg)
    c1 = np.concatenate([[0.0], np.cumsum(neg)])
    c2 = np.concatenate([[0.0], np.cumsum(neg * neg)])
    # active negatives: q > p - 1
    start = np.searchsorted(neg, pos - 1.0, side="right")
    k = neg.size - start
    s1 = c1[-1] - c1[start]
    s2 = c2[-1] - c2[start]
    c = 1.0 - pos
    return float(np.sum(k * c * c + 2 * c * s1 + s2))


def full_loss(model, O, neg_sample=None, seed=0):
    """Mean squared hinge over ``O x complement(O)``.

    Exact when ``neg_sample`` is None (the grid must fit in memory);
    otherwise the mean over ``neg_sample`` uniformly drawn pairs from a
    generator seeded with ``seed``.
    """
    if len(O) == 0:
        raise DataError("loss is undefined for an empty positive set")
    size = O.grid_size
    if neg_sample is None:
        scores = recover_full(model).ravel()
        mask = np.ones(size, dtype=bool)
        pos_flat = O.flat_index()
        mask[pos_flat] = False
        neg = scores[mask]
        if neg.size == 0:
            raise DataError("no negatives: positives saturate the grid")
        return _hinge_sums(scores[pos_flat], neg) / (pos_flat.size * neg.size)
    rng = np.random.default_rng(seed)
    pos = O.index[rng.integers(len(O), size=neg_sample)]
    neg_flat = [_negative_flat(O.flat, size, rng) for _ in range(neg_sample)]
    neg = np.stack(np.unravel_index(np.array(neg_flat), O.dims), axis=1)
    delta = score_tuples(model, pos) - score_tuples(model, neg)
    return float(np.mean(np.maximum(0.0, 1.0 - delta) ** 2))


def pair_gradient(model, pos, neg):
    """Loss part of the stochastic gradient for one pair; returns ``(grad, loss_term)``.

    The gradient is ``2 (delta - 1) (outer(pos rows) - outer(neg rows))``
    when ``delta < 1`` and exactly zero otherwise.
    """
    rows_p = tuple_rows(model, pos)
    rows_n = tuple_rows(model, neg)
    phi_p = outer_rows(rows_p)
    phi_n = outer_rows(rows_n)
    alpha = model.alpha
    delta = float(np.vdot(alpha, phi_p) - np.vdot(alpha, phi_n))
    if delta < 1.0:
        return 2.0 * (delta - 1.0) * (phi_p - phi_n), (1.0 - delta) ** 2
    return np.zeros_like(alpha), 0.0


def regularizer_gradient(model):
    return model.gamma * model.alpha / model.kappa.values


def stochastic_gradient(model, pos, neg):
    """Full per-pair gradient of ``loss_term + (gamma / 2) * seminorm``."""
    g, _ = pair_gradient(model, pos, neg)
    return g + regularizer_gradient(model)


def sgd_step(model, state, pos, neg, cfg):
    """One AdaGrad update of ``model.alpha`` in place.

    ``pos`` / ``neg`` are single tuples or equal-length lists of tuples
    (mini-batch; loss gradients are averaged before the ``Z`` update).
    Coordinates whose accumulated ``Z`` is still zero are not moved.
    Returns the (mean) loss term at the pre-update core.
    """
    if pos and isinstance(pos[0], (tuple, list, np.ndarray)):
        pairs = list(zip(pos, neg))
    else:
        pairs = [(pos, neg)]
    grad = np.zeros_like(model.alpha)
    loss = 0.0
    for p, q in pairs:
        g, term = pair_gradient(model, p, q)
        grad += g
        loss += term
    if len(pairs) > 1:
        grad /= len(pairs)
        loss /= len(pairs)
    with np.errstate(over="ignore"):
        grad += regularizer_gradient(model)
    if not np.all(np.isfinite(grad)):
        raise ConvergenceError("non-finite gradient", {
            "step": state.steps, "pos": pos, "neg": neg,
            "alpha_max_abs": float(np.max(np.abs(model.alpha)))})
    with np.errstate(over="ignore"):
        z = state.Z + grad * grad
    if not np.all(np.isfinite(z)):
        raise ConvergenceError("accumulated squared gradient overflowed", {
            "step": state.steps, "pos": pos, "neg": neg,
            "alpha_max_abs": float(np.max(np.abs(model.alpha)))})
    state.Z = z
    nz = state.Z > 0
    model.alpha[nz] -= cfg.eta0 * grad[nz] / np.sqrt(state.Z[nz])
    state.steps += 1
    return loss


def objective(model, O, neg_sample=None, seed=0):
    """``(objective, loss, seminorm)`` for the regularized problem."""
    loss = full_loss(model, O, neg_sample=neg_sample, seed=seed)
    semi = seminorm_tucker(model.alpha, model.kappa)
    return loss + 0.5 * model.gamma * semi, loss, semi


def _validation_auc(model, O, validation, rng, n_neg=2000):
    from .evaluation import auc

    excluded = O.flat | validation.flat
    size = O.grid_size
    if len(excluded) >= size:
        return None
    neg_flat = [_negative_flat(excluded, size, rng) for _ in range(n_neg)]
    neg = np.stack(np.unravel_index(np.array(neg_flat), O.dims), axis=1)
    return auc(score_tuples(model, validation.index), score_tuples(model, neg))


def train(model, O, cfg, validation=None):
    """Run AdaGrad SGD from ``model`` for ``cfg.iterations`` steps.

    Returns ``(model, trace)``; ``trace`` is a list of checkpoint dicts with
    keys ``iter``, ``objective``, ``loss``, ``seminorm`` (and
    ``val_auc`` when a validation set is given).  The input model is not
    modified.
    """
    if len(O) == 0:
        raise DataError("training needs at least one positive tuple")
    if O.dims != model.dims_n:
        raise DataError(f"tuple dims {O.dims} != graph sizes {model.dims_n}")
    work = model.with_alpha(model.alpha.copy())
    state = AdaGradState(work.alpha.shape)
    pos_rng, neg_rng, _ = rng_streams(cfg.seed)
    monitor_seq = np.random.SeedSequence(cfg.seed).spawn(3)[2]
    exact = O.grid_size <= EXACT_LOSS_MAX_ENTRIES
    size = O.grid_size
    index = O.index
    observed = O.flat
    dims = O.dims
    trace = []
    best_ma, stale, window = -np.inf, 0, []

    def checkpoint(it):
        rng = np.random.default_rng(monitor_seq)
        obj, loss, semi = objective(work, O, neg_sample=None if exact else cfg.loss_sample,
                                    seed=int(rng.integers(2 ** 63)))
        row = {"iter": it, "objective": obj, "loss": loss, "seminorm": semi}
        if validation is not None and len(validation):
            row["val_auc"] = _validation_auc(work, O, validation, rng)
        trace.append(row)
        log.debug("iter %d objective %.6g loss %.6g", it, obj, loss)
        return row

    checkpoint(0)
    for it in range(1, cfg.iterations + 1):
        pos = [tuple(index[k]) for k in pos_rng.integers(len(O), size=cfg.batch)]
        neg = [np.unravel_index(_negative_flat(observed, size, neg_rng), dims)
               for _ in range(cfg.batch)]
        if cfg.batch == 1:
            sgd_step(work, state, pos[0], neg[0], cfg)
        else:
            sgd_step(work, state, pos, neg, cfg)
        if it % cfg.eval_every == 0 or it == cfg.iterations:
            row = checkpoint(it)
            if cfg.patience and row.get("val_auc") is not None:
                window = (window + [row["val_auc"]])[-cfg.ma_window:]
                ma = float(np.mean(window))
                if ma > best_ma:
                    best_ma, stale = ma, 0
                else:
                    stale += 1
                    if stale >= cfg.patience:
                        log.info("early stop at iter %d (validation AUC plateau)", it)
                        break
    return work.with_alpha(work.alpha.copy()), trace


def write_trace(path, trace):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iter", "objective", "loss", "seminorm"])
        for row in trace:
            w.writerow([row["iter"], repr(row["objective"]), repr(row["loss"]),
                        repr(row["seminorm"])])


class FullBatchProblem:
    """Exact regularized objective over all of ``O x complement(O)``.

    Desk scale only: materializes the ``prod(n) x prod(d)`` design matrix of
    product eigenvector rows.
    """

    def __init__(self, systems, O, kappa, gamma):
        if O.grid_size > EXACT_LOSS_MAX_ENTRIES:
            raise ValueError("grid too large for the full-batch solver")
        design = product_basis(systems)
        mask = np.ones(O.grid_size, dtype=bool)
        mask[O.flat_index()] = False
        self.phi_pos = design[~mask]
        self.phi_neg = design[mask]
        if self.phi_pos.shape[0] == 0 or self.phi_neg.shape[0] == 0:
            raise DataError("full-batch loss needs at least one positive and one negative")
        self.shape = tuple(s.d for s in systems)
        self.kappa = kappa.values if hasattr(kappa, "values") else np.asarray(kappa)
        self.gamma = gamma
        self.n_pairs = self.phi_pos.shape[0] * self.phi_neg.shape[0]

    def _margins(self, alpha):
        a = alpha.ravel()
        return np.maximum(0.0, 1.0 - (self.phi_pos @ a)[:, None] + (self.phi_neg @ a)[None, :])

    def loss(self, alpha):
        h = self._margins(alpha)
        return float(np.sum(h * h)) / self.n_pairs

    def value(self, alpha):
        return self.loss(alpha) + 0.5 * self.gamma * float(np.sum(alpha * alpha / self.kappa))

    def gradient(self, alpha):
        h = self._margins(alpha)
        g = -2.0 / self.n_pairs * (self.phi_pos.T @ h.sum(axis=1) - self.phi_neg.T @ h.sum(axis=0))
        return g.reshape(self.shape) + self.gamma * alpha / self.kappa

    def loss_curvature(self, scale=None):
        """Largest eigenvalue of the loss Hessian bound, optionally for ``alpha = scale * beta``."""
        p, q = self.phi_pos, self.phi_neg
        sp_, sq = p.sum(axis=0), q.sum(axis=0)
        cross = np.outer(sp_, sq)
        m = q.shape[0] * (p.T @ p) + p.shape[0] * (q.T @ q) - cross - cross.T
        if scale is not None:
            s = np.ravel(scale)
            m = s[:, None] * m * s[None, :]
        return 2.0 / self.n_pairs * np.linalg.eigvalsh(m)[-1]

    def lipschitz(self):
        return self.loss_curvature() + self.gamma / self.kappa.min()

    def strong_convexity(self):
        return self.gamma / self.kappa.max()


def fit_full_batch(model, O, tol=1e-8, max_iter=200_000):
    """Deterministic accelerated gradient descent to ``||grad|| <= tol``.

    Iterates on ``beta = alpha / sqrt(kappa)``, where the regularizer is
    ``(gamma / 2) ||beta||^2``; this keeps the condition number bounded by
    ``1 + curvature / gamma`` however small the coupling entries are.  The
    stopping test uses the gradient with respect to ``alpha``.

    Returns ``(model, info)`` with ``info = {"iterations", "grad_norm", "value"}``.
    """
    prob = FullBatchProblem(model.systems, O, model.kappa, model.gamma)
    s = np.sqrt(prob.kappa)
    L = prob.loss_curvature(s) + prob.gamma
    mu = prob.gamma
    momentum = (np.sqrt(L) - np.sqrt(mu)) / (np.sqrt(L) + np.sqrt(mu))
    x = model.alpha / s
    y = x.copy()
    fx = prob.value(s * x)
    gn = np.inf
    for it in range(1, max_iter + 1):
        x_new = y - s * prob.gradient(s * y) / L
        f_new = prob.value(s * x_new)
        # restart momentum whenever the objective goes up
        if f_new > fx:
            x_new = x - s * prob.gradient(s * x) / L
            f_new = prob.value(s * x_new)
            y = x_new
        else:
            y = x_new + momentum * (x_new - x)
        x, fx = x_new, f_new
        gn = float(np.linalg.norm(prob.gradient(s * x)))
        if gn <= tol:
            return model.with_alpha(s * x), {"iterations": it, "grad_norm": gn, "value": fx}
    raise ConvergenceError(f"full-batch solver did not reach tol={tol}",
                           {"iterations": max_iter, "grad_norm": gn})
