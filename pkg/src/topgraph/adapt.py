"""Data-driven adaptation of the coupling tensor.

The optimal value ``phi(kappa) = min_alpha loss(alpha) + gamma/2 * sum(alpha**2 / kappa)``
is convex in ``kappa``.  We run projected gradient steps on it, keeping
``kappa`` nonincreasing along every axis and on a fixed-mass simplex.
"""

from dataclasses import dataclass, field
import csv
import logging

import numpy as np

from .errors import ConvergenceError
from .model import Model
from .sgp import KAPPA_FLOOR, KappaSpec, KappaTensor, raw_kappa_grid
from .train import TrainConfig, fit_full_batch, objective, train

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class AdaptConfig:
    """Knobs for :func:`adapt_kappa`.

    ``inner_solver`` is ``"sgd"`` (AdaGrad, :func:`topgraph.train.train`) or
    ``"exact"`` (deterministic full-batch descent, desk scale).
    ``direction`` is ``"descent"`` or ``"ascent"``; ``gradient_form`` is
    ``"danskin"`` (``alpha**2``) or ``"literal"`` (``alpha``, compatibility).
    """

    outer_iters: int = 10
    kappa_step: float = 1e-4
    inner: TrainConfig = field(default_factory=TrainConfig)
    dykstra_iters: int = 10_000
    dykstra_tol: float = 1e-10
    pava_tol: float = 1e-10
    inner_solver: str = "sgd"
    exact_tol: float = 1e-8
    direction: str = "descent"
    gradient_form: str = "danskin"
    total: float = 1.0

    def __post_init__(self):
        if self.outer_iters < 0 or not self.kappa_step > 0 or self.dykstra_iters < 1:
            raise ValueError("outer_iters >= 0, kappa_step > 0, dykstra_iters >= 1 required")
        for tol in (self.dykstra_tol, self.pava_tol):
            if not 0 < tol <= 1e-2:
                raise ValueError(f"tolerances must lie in (0, 1e-2], got {tol}")
        if self.inner_solver not in ("sgd", "exact"):
            raise ValueError(f"unknown inner solver {self.inner_solver!r}")
        if self.direction not in ("descent", "ascent"):
            raise ValueError(f"unknown direction {self.direction!r}")
        if self.gradient_form not in ("danskin", "literal"):
            raise ValueError(f"unknown gradient form {self.gradient_form!r}")


def kappa_gradient(alpha_hat, kappa, gamma, form="danskin"):
    """Derivative of the optimal objective value with respect to ``kappa``.

    ``form="danskin"`` gives ``-(gamma/2) * alpha**2 / kappa**2``, the
    derivative of the regularizer at the fixed minimizer.  ``form="literal"``
    gives ``-(gamma/2) * alpha / kappa**2``, kept only for comparison.
    """
    k = kappa.values if isinstance(kappa, KappaTensor) else np.asarray(kappa, dtype=np.float64)
    a = np.asarray(alpha_hat, dtype=np.float64)
    num = a * a if form == "danskin" else a
    return -0.5 * gamma * num / (k * k)


def project_simplex(x, total=1.0):
    """Euclidean projection onto ``{y >= 0, sum(y) = total}`` (sort and threshold)."""
    x = np.asarray(x, dtype=np.float64)
    v = x.ravel()
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - total
    k = np.arange(1, v.size + 1)
    rho = np.nonzero(u - css / k > 0)[0][-1]
    theta = css[rho] / (rho + 1.0)
    return np.maximum(x - theta, 0.0)


def pava_nonincreasing(y):
    """Exact least-squares nonincreasing fit of a 1-D sequence.

    Adjacent violators are pooled into blocks valued at their mean.
    """
    y = np.asarray(y, dtype=np.float64)
    sums, counts = [], []
    for v in y:
        sums.append(v)
        counts.append(1)
        # merge while the newest block exceeds the one before it
        while len(sums) > 1 and sums[-1] * counts[-2] > sums[-2] * counts[-1]:
            s, c = sums.pop(), counts.pop()
            sums[-1] += s
            counts[-1] += c
    return np.repeat(np.array(sums) / np.array(counts), counts)


def _pava_axis(x, axis):
    moved = np.moveaxis(x, axis, -1)
    flat = moved.reshape(-1, moved.shape[-1])
    out = np.empty_like(flat)
    for r in range(flat.shape[0]):
        out[r] = pava_nonincreasing(flat[r])
    return np.moveaxis(out.reshape(moved.shape), -1, axis)


def _dykstra(x, projections, tol, max_iter):
    """Dykstra's cyclic projection onto an intersection of convex sets."""
    y = np.array(x, dtype=np.float64)
    corrections = [np.zeros_like(y) for _ in projections]
    for it in range(1, max_iter + 1):
        prev = y
        for k, proj in enumerate(projections):
            z = y + corrections[k]
            y = proj(z)
            corrections[k] = z - y
        change = float(np.max(np.abs(y - prev))) if y.size else 0.0
        if change < tol:
            return y, True, it
    return y, False, max_iter


def project_monotone(x, tol=1e-10, max_sweeps=10_000, return_info=False):
    """Projection onto tensors nonincreasing along every axis.

    Each sweep runs PAVA on every 1-D chain of axis 0, then axis 1, and so
    on, with Dykstra corrections so the limit is the Euclidean projection
    onto the intersection.  A single axis (``x.ndim == 1``) is exact after
    one sweep.  Stops when a sweep moves no entry by ``tol`` or more.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 0:
        return (x.copy(), {"converged": True, "sweeps": 0}) if return_info else x.copy()
    projs = [lambda z, a=a: _pava_axis(z, a) for a in range(x.ndim)]
    y, ok, sweeps = _dykstra(x, projs, tol, max_sweeps)
    if not ok:
        log.warning("project_monotone: no convergence after %d sweeps", sweeps)
    return (y, {"converged": ok, "sweeps": sweeps}) if return_info else y


def monotone_violation(x):
    """Largest increase along any axis (0 when feasible)."""
    x = np.asarray(x)
    worst = 0.0
    for a in range(x.ndim):
        if x.shape[a] > 1:
            worst = max(worst, float(np.max(np.diff(x, axis=a))))
    return max(worst, 0.0)


def feasibility_violation(x, total=1.0):
    x = np.asarray(x)
    return max(monotone_violation(x), abs(float(x.sum()) - total), max(0.0, -float(x.min())))


def project_constraints(x, cfg=None, floor=KAPPA_FLOOR, strict=False):
    """Project onto the monotone cone intersected with the fixed-mass simplex.

    Dykstra cycles over the per-axis PAVA projections and the simplex
    projection.  The result is then floored at ``floor`` and rescaled to
    the configured mass; both steps preserve monotonicity.
    """
    cfg = cfg or AdaptConfig()
    x = np.asarray(x, dtype=np.float64)
    projs = [lambda z, a=a: _pava_axis(z, a) for a in range(x.ndim)]
    projs.append(lambda z: project_simplex(z, cfg.total))
    y, ok, iters = _dykstra(x, projs, cfg.dykstra_tol, cfg.dykstra_iters)
    if not ok:
        if strict:
            raise ConvergenceError("Dykstra projection hit its iteration bound",
                                   {"iterations": iters, "violation": feasibility_violation(y, cfg.total)})
        log.warning("project_constraints: no convergence after %d iterations", iters)
    y = np.maximum(y, floor)
    y *= cfg.total / y.sum()
    return KappaTensor(y)


def _fit(model, O, cfg):
    if cfg.inner_solver == "exact":
        fitted, _ = fit_full_batch(model, O, tol=cfg.exact_tol)
        return fitted
    fitted, _ = train(model, O, cfg.inner)
    return fitted


def phi_hat(model, O, cfg):
    exact = O.grid_size <= 10 ** 6
    return objective(model, O, neg_sample=None if exact else cfg.inner.loss_sample,
                     seed=cfg.inner.seed)[0]


def adapt_kappa(O, systems, gamma, cfg, initial=None):
    """Alternate inner fits and projected steps on the coupling tensor.

    Parameters
    ----------
    O : TupleSet
        Training positives.
    systems : sequence of EigenSystem
        Truncated eigensystems, one per graph.
    gamma : float
        Regularization strength.
    cfg : AdaptConfig
    initial : array_like, optional
        Starting coupling tensor; defaults to the Cartesian coupling of the
        eigenvalues.  It is projected onto the feasible set before use.

    Returns
    -------
    kappa : KappaTensor
    model : Model
        Fitted at the returned ``kappa``.
    trace : list of dict
        ``outer_iter``, ``phi_hat``, ``feasibility_violation`` per iteration.
    """
    systems = list(systems)
    if initial is None:
        initial = raw_kappa_grid(KappaSpec("cartesian"), systems)
    kappa = project_constraints(initial, cfg)
    model = _fit(Model.zeros(systems, kappa, gamma), O, cfg)
    trace = [{"outer_iter": 0, "phi_hat": phi_hat(model, O, cfg),
              "feasibility_violation": feasibility_violation(kappa.values, cfg.total)}]
    sign = -1.0 if cfg.direction == "descent" else 1.0
    for t in range(1, cfg.outer_iters + 1):
        g = kappa_gradient(model.alpha, kappa, gamma, form=cfg.gradient_form)
        kappa = project_constraints(kappa.values + sign * cfg.kappa_step * g, cfg)
        model = _fit(Model.zeros(systems, kappa, gamma), O, cfg)
        row = {"outer_iter": t, "phi_hat": phi_hat(model, O, cfg),
               "feasibility_violation": feasibility_violation(kappa.values, cfg.total)}
        trace.append(row)
        log.info("adapt %d: phi_hat=%.6g violation=%.2e", t, row["phi_hat"],
                 row["feasibility_violation"])
    return kappa, model, trace


def write_adapt_trace(path, trace):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["outer_iter", "phi_hat", "feasibility_violation"])
        for row in trace:
            w.writerow([row["outer_iter"], repr(row["phi_hat"]), repr(row["feasibility_violation"])])
