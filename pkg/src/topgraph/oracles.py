"""Brute-force reference computations and the desk-scale self-check suites.

Everything here is deliberately naive: dense matrices, active-set
enumeration, finite differences.  These routines exist to check the fast
paths, not to be used in them.
"""

from dataclasses import dataclass
import itertools

import numpy as np
import scipy.sparse as sp

from .adapt import (AdaptConfig, kappa_gradient, project_constraints, project_monotone,
                    project_simplex, feasibility_violation)
from .graphio import SparseGraph, TupleSet
from .model import Model, recover_full, seminorm_exact, seminorm_tucker
from .sgp import KappaSpec, KappaTensor, build_kappa_tensor, flat_permutation, materialize_sgp_dense
from .spectral import top_eigensystem
from .train import fit_full_batch, pair_loss_term, stochastic_gradient

SUITES = ("dense", "seminorm", "gradient", "projection")


# -- reference solvers ------------------------------------------------------

def qp_projection(x, a_ineq=None, b_ineq=None, a_eq=None, b_eq=None, tol=1e-12):
    """Exact ``argmin ||y - x||`` subject to ``a_ineq y <= b_ineq``, ``a_eq y = b_eq``.

    Enumerates every subset of inequalities treated as active, projects
    onto the corresponding affine set, and keeps the closest feasible point.
    Exponential in the number of inequalities; fine below ~14.
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    n = x.size
    a_ineq = np.zeros((0, n)) if a_ineq is None else np.asarray(a_ineq, dtype=np.float64)
    b_ineq = np.zeros(0) if b_ineq is None else np.asarray(b_ineq, dtype=np.float64)
    a_eq = np.zeros((0, n)) if a_eq is None else np.asarray(a_eq, dtype=np.float64)
    b_eq = np.zeros(0) if b_eq is None else np.asarray(b_eq, dtype=np.float64)
    best, best_d = None, np.inf
    m = a_ineq.shape[0]
    for r in range(m + 1):
        for active in itertools.combinations(range(m), r):
            a = np.vstack([a_eq, a_ineq[list(active)]])
            b = np.concatenate([b_eq, b_ineq[list(active)]])
            if a.shape[0]:
                mu = np.linalg.lstsq(a @ a.T, a @ x - b, rcond=None)[0]
                y = x - a.T @ mu
                if np.max(np.abs(a @ y - b)) > 1e-9:
                    continue
            else:
                y = x.copy()
            if m and np.max(a_ineq @ y - b_ineq) > 1e-9:
                continue
            d = float(np.sum((y - x) ** 2))
            if d < best_d - tol:
                best, best_d = y, d
    return best


def simplex_oracle(x, total=1.0):
    x = np.asarray(x, dtype=np.float64)
    n = x.size
    return qp_projection(x, -np.eye(n), np.zeros(n), np.ones((1, n)), [total]).reshape(x.shape)


def monotone_constraint_matrix(shape):
    """Rows ``e_next - e_cur`` for every adjacent pair along every axis."""
    idx = np.arange(int(np.prod(shape))).reshape(shape)
    rows = []
    for axis in range(len(shape)):
        cur = np.delete(idx, -1, axis=axis).ravel()
        nxt = np.delete(idx, 0, axis=axis).ravel()
        for c, t in zip(cur, nxt):
            r = np.zeros(idx.size)
            r[t], r[c] = 1.0, -1.0
            rows.append(r)
    return np.array(rows).reshape(-1, idx.size)


def monotone_oracle(x):
    x = np.asarray(x, dtype=np.float64)
    a = monotone_constraint_matrix(x.shape)
    return qp_projection(x, a, np.zeros(a.shape[0])).reshape(x.shape)


def isotonic_minmax(x):
    """Nonincreasing least-squares fit by the min-max formula, O(n^3)."""
    x = np.asarray(x, dtype=np.float64)
    n = x.size
    csum = np.concatenate([[0.0], np.cumsum(x)])
    out = np.empty(n)
    for i in range(n):
        out[i] = min(max((csum[t + 1] - csum[s]) / (t + 1 - s) for t in range(i, n))
                     for s in range(i + 1))
    return out


def dense_seminorm(f, systems_full, spec):
    """``vec(f)^T P^{-1} vec(f)`` with the product adjacency built densely."""
    p = materialize_sgp_dense(systems_full, spec)
    v = np.asarray(f, dtype=np.float64).ravel()
    return float(v @ np.linalg.solve(p, v))


def central_difference(fun, x, h=1e-5):
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    for k in np.ndindex(x.shape):
        e = np.zeros_like(x)
        e[k] = h
        g[k] = (fun(x + e) - fun(x - e)) / (2 * h)
    return g


def relative_error(a, b):
    a, b = np.asarray(a), np.asarray(b)
    scale = max(np.linalg.norm(a), np.linalg.norm(b), 1e-300)
    return float(np.linalg.norm(a - b) / scale)


# -- random instances -------------------------------------------------------

def random_graph(n, rng, density=0.6, positive_spectrum=False):
    """Random symmetric nonnegative graph; optional diagonal shift makes it positive definite."""
    w = rng.random((n, n)) * (rng.random((n, n)) < density)
    a = np.triu(w, 1)
    a = a + a.T
    if positive_spectrum:
        a = a + np.diag(a.sum(axis=1) + 0.5)
    return SparseGraph(sp.csr_matrix(a))


def full_system(g):
    return top_eigensystem(g, g.n, method="dense")


def random_model(rng, n, d, gamma=0.5, spec="exponential"):
    systems = [top_eigensystem(random_graph(nj, rng), dj, method="dense") for nj, dj in zip(n, d)]
    kappa = build_kappa_tensor(KappaSpec(spec), systems)
    return Model(rng.standard_normal(tuple(d)), systems, kappa, gamma, spec)


# -- suites -----------------------------------------------------------------

@dataclass
class Check:
    suite: str
    name: str
    error: float
    tol: float

    @property
    def passed(self):
        return bool(np.isfinite(self.error) and self.error <= self.tol)

    def as_dict(self):
        return {"suite": self.suite, "name": self.name, "error": self.error,
                "tol": self.tol, "passed": self.passed}


def suite_dense(rng, trials=5):
    out = []
    kron_err = ksum_err = comm_err = eig_err = 0.0
    for _ in range(trials):
        n1, n2 = rng.integers(2, 7, size=2)
        g1, g2 = random_graph(n1, rng), random_graph(n2, rng)
        s = [full_system(g1), full_system(g2)]
        a1, a2 = g1.toarray(), g2.toarray()
        kron_err = max(kron_err, np.max(np.abs(
            materialize_sgp_dense(s, KappaSpec("tensor")) - np.kron(a1, a2))))
        ksum = np.kron(a1, np.eye(n2)) + np.kron(np.eye(n1), a2)
        ksum_err = max(ksum_err, np.max(np.abs(
            materialize_sgp_dense(s, KappaSpec("cartesian")) - ksum)))
        p = materialize_sgp_dense(s, KappaSpec("exponential"))
        expect = np.sort(np.exp(np.add.outer(s[0].lambdas, s[1].lambdas)).ravel())
        eig_err = max(eig_err, np.max(np.abs(np.linalg.eigvalsh(p) - expect)))
    for _ in range(trials):
        dims = tuple(int(k) for k in rng.integers(2, 5, size=3))
        s = [full_system(random_graph(n, rng)) for n in dims]
        for variant in ("tensor", "cartesian", "exponential"):
            m = materialize_sgp_dense(s, KappaSpec(variant))
            for perm in itertools.permutations(range(3)):
                mp = materialize_sgp_dense([s[k] for k in perm], KappaSpec(variant))
                idx = flat_permutation(dims, perm)
                comm_err = max(comm_err, np.max(np.abs(mp - m[np.ix_(idx, idx)])))
    out.append(Check("dense", "kronecker_product", float(kron_err), 1e-8))
    out.append(Check("dense", "kronecker_sum", float(ksum_err), 1e-8))
    out.append(Check("dense", "eigen_consistency", float(eig_err), 1e-6))
    out.append(Check("dense", "commutativity", float(comm_err), 1e-8))
    return out


def suite_seminorm(rng, trials=20):
    worst = 0.0
    dense_worst = 0.0
    for _ in range(trials):
        J = int(rng.integers(2, 4))
        dims = tuple(int(k) for k in rng.integers(2, 6 if J == 3 else 9, size=J))
        s = [full_system(random_graph(n, rng)) for n in dims]
        spec = KappaSpec(("exponential", "flat", "cartesian")[int(rng.integers(3))])
        m = Model(rng.standard_normal(dims), s, build_kappa_tensor(spec, s), 1.0)
        a = seminorm_tucker(m.alpha, m.kappa)
        b = seminorm_exact(recover_full(m), s, spec)
        worst = max(worst, abs(a - b) / max(abs(b), 1e-300))
    for _ in range(trials // 4 or 1):
        gs = [random_graph(int(n), rng, positive_spectrum=True) for n in (4, 5)]
        s = [full_system(g) for g in gs]
        f = rng.standard_normal((4, 5))
        spec = KappaSpec("tensor")
        a = seminorm_exact(f, s, spec)
        b = dense_seminorm(f, s, spec)
        dense_worst = max(dense_worst, abs(a - b) / abs(b))
    return [Check("seminorm", "tucker_vs_mode_product", worst, 1e-8),
            Check("seminorm", "mode_product_vs_dense_inverse", dense_worst, 1e-6)]


def _danskin_instance(rng):
    g = [random_graph(5, rng), random_graph(5, rng)]
    systems = [top_eigensystem(x, 2, method="dense") for x in g]
    O = TupleSet((5, 5), np.argwhere(rng.random((5, 5)) < 0.25).reshape(-1, 2))
    if len(O) == 0:
        O = TupleSet.from_tuples([(0, 0)], (5, 5))
    v = np.abs(rng.standard_normal((2, 2))) + 0.5
    kappa = KappaTensor(v / v.sum())
    return systems, O, kappa


def danskin_check(systems, O, kappa, gamma, rel_step=1e-4, form="danskin"):
    """Max per-coordinate relative error of the analytic kappa-gradient."""
    def phi(kv):
        m = Model.zeros(systems, KappaTensor(kv), gamma)
        return fit_full_batch(m, O, tol=1e-11)[1]["value"]

    m = fit_full_batch(Model.zeros(systems, kappa, gamma), O, tol=1e-11)[0]
    g = kappa_gradient(m.alpha, kappa, gamma, form=form)
    fd = np.zeros_like(g)
    for k in np.ndindex(g.shape):
        h = rel_step * kappa.values[k]
        e = np.zeros_like(g)
        e[k] = h
        fd[k] = (phi(kappa.values + e) - phi(kappa.values - e)) / (2 * h)
    return float(np.max(np.abs(g - fd) / np.maximum(np.abs(fd), 1e-300))), g, fd


def suite_gradient(rng, trials=20):
    worst = 0.0
    for _ in range(trials):
        J = int(rng.integers(1, 4))
        n = tuple(int(k) for k in rng.integers(3, 7, size=J))
        d = tuple(int(rng.integers(1, k + 1)) for k in n)
        m = random_model(rng, n, d)
        m = m.with_alpha(0.3 * m.alpha)
        pos = tuple(int(rng.integers(k)) for k in n)
        neg = tuple(int(rng.integers(k)) for k in n)

        def per_pair(a):
            mm = m.with_alpha(a)
            from .model import score_tuple
            return (pair_loss_term(score_tuple(mm, pos), score_tuple(mm, neg))
                    + 0.5 * mm.gamma * seminorm_tucker(a, mm.kappa))

        worst = max(worst, relative_error(stochastic_gradient(m, pos, neg),
                                          central_difference(per_pair, m.alpha)))
    systems, O, kappa = _danskin_instance(rng)
    dk, _, _ = danskin_check(systems, O, kappa, gamma=0.5)
    return [Check("gradient", "pair_gradient_vs_finite_difference", worst, 1e-5),
            Check("gradient", "danskin_vs_finite_difference", dk, 1e-3)]


def suite_projection(rng, trials=20):
    simplex_err = iso_err = mono_err = idem = feas = 0.0
    cfg = AdaptConfig(dykstra_tol=1e-12, dykstra_iters=100_000)
    for _ in range(trials):
        x = rng.standard_normal(int(rng.integers(1, 6)))
        total = float(rng.uniform(0.5, 2.0))
        p = project_simplex(x, total)
        simplex_err = max(simplex_err, np.max(np.abs(p - simplex_oracle(x, total))))
        idem = max(idem, np.max(np.abs(project_simplex(p, total) - p)))
        y = rng.standard_normal(int(rng.integers(1, 12)))
        q = project_monotone(y)
        iso_err = max(iso_err, np.max(np.abs(q - isotonic_minmax(y))))
        idem = max(idem, np.max(np.abs(project_monotone(q) - q)))
        z = rng.standard_normal((int(rng.integers(1, 4)), int(rng.integers(1, 4))))
        r = project_monotone(z, tol=1e-13, max_sweeps=100_000)
        mono_err = max(mono_err, np.max(np.abs(r - monotone_oracle(z))))
        idem = max(idem, np.max(np.abs(project_monotone(r, tol=1e-13) - r)))
        k = project_constraints(rng.standard_normal((3, 3)), cfg).values
        feas = max(feas, feasibility_violation(k, cfg.total))
        idem = max(idem, np.max(np.abs(project_constraints(k, cfg).values - k)))
    return [Check("projection", "simplex_vs_qp", float(simplex_err), 1e-6),
            Check("projection", "monotone_1d_vs_isotonic", float(iso_err), 1e-10),
            Check("projection", "monotone_2d_vs_qp", float(mono_err), 1e-4),
            Check("projection", "idempotence", float(idem), 1e-8),
            Check("projection", "constraints_feasible", float(feas), 1e-6)]


def run_suites(names=SUITES, seed=0):
    funcs = {"dense": suite_dense, "seminorm": suite_seminorm,
             "gradient": suite_gradient, "projection": suite_projection}
    checks = []
    for name in names:
        checks.extend(funcs[name](np.random.default_rng([seed, SUITES.index(name)])))
    return checks
