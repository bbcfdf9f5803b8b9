"""``topgraph`` command line.

Subcommands: ``graph``, ``eigen``, ``train``, ``adapt``, ``eval``, ``oracle``.
Each writes a JSON run manifest next to its primary output (or to
``--manifest``).  ``--config file.json`` supplies defaults; flags win.

Exit codes: 0 ok, 1 internal error, 2 usage, 3 data error, 4 non-convergence.
"""

import argparse
import hashlib
import json
import logging
import os
import sys

import numpy as np
import scipy

from . import __version__
from .adapt import AdaptConfig, adapt_kappa, write_adapt_trace
from .errors import ConvergenceError, DataError
from .evaluation import (NearestNeighborScorer, evaluate_completion, make_split, model_scorer,
                         write_query_rows)
from .graphio import (_parse_header_n, knn_sparsify, load_edge_list, load_graph,
                      load_tuples, save_graph, symmetric_normalize)
from .model import Model, load_model, save_model
from .sgp import KappaSpec, build_kappa_tensor, load_kappa, raw_kappa_grid, save_kappa
from .spectral import (full_spectrum, load_eigensystem, save_eigensystem, select_rank_by_energy,
                       top_eigensystem)
from .train import TrainConfig, train, write_trace

log = logging.getLogger("topgraph")

EXIT_OK, EXIT_INTERNAL, EXIT_USAGE, EXIT_DATA, EXIT_CONVERGENCE = 0, 1, 2, 3, 4


class UsageError(Exception):
    pass


def _digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(args, inputs, outputs):
    path = args.manifest or (outputs[0] + ".manifest.json")
    config = {k: v for k, v in sorted(vars(args).items())
              if k not in ("func", "manifest", "config", "exit_code", "verbose")}
    manifest = {
        "command": args.command,
        "config": config,
        "inputs": {p: _digest(p) for p in inputs},
        "seed": getattr(args, "seed", None),
        "artifacts": list(outputs),
        "versions": {"topgraph": __version__, "numpy": np.__version__, "scipy": scipy.__version__},
    }
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _read_text(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return fh.read()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from None


def _load_systems(paths):
    return [load_eigensystem(p) for p in paths]


def _load_positive_tuples(args, dims):
    tuples = load_tuples(_read_text(args.tuples), dims)
    if args.split_seed is None:
        return tuples, None
    split = make_split(tuples, args.split_seed)
    return split.train, split


def _kappa_spec(text):
    if text.startswith("file:"):
        return KappaSpec("nonparametric", load_kappa(text[5:]))
    return KappaSpec(text)


def cmd_graph(args):
    text = _read_text(args.input)
    n = args.n if args.n is not None else _parse_header_n(text)
    if n is None:
        raise UsageError("vertex count unknown: pass --n or add a '# n=<N>' header")
    g = load_edge_list(text, n)
    if args.knn_frac is not None:
        g = knn_sparsify(g, args.knn_frac)
    if args.normalize:
        g = symmetric_normalize(g)
    save_graph(args.out, g)
    log.info("graph: n=%d nnz=%d normalized=%s", g.n, g.nnz, g.normalized)
    return [args.input], [args.out]


def cmd_eigen(args):
    g = load_graph(args.graph)
    if (args.rank is None) == (args.energy is None):
        raise UsageError("pass exactly one of --rank or --energy")
    d = args.rank
    if d is None:
        d = select_rank_by_energy(full_spectrum(g), args.energy, measure=args.energy_measure)
    system = top_eigensystem(g, d, seed=args.seed, method=args.method)
    save_eigensystem(args.out, system)
    log.info("eigen: n=%d d=%d", system.n, system.d)
    return [args.graph], [args.out]


def _train_config(args):
    try:
        return TrainConfig(gamma=args.gamma, eta0=args.eta0, iterations=args.iters,
                           seed=args.seed, batch=args.batch, eval_every=args.eval_every)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def cmd_train(args):
    systems = _load_systems(args.eigen)
    O, _ = _load_positive_tuples(args, tuple(s.n for s in systems))
    spec = _kappa_spec(args.kappa)
    kappa = build_kappa_tensor(spec, systems)
    if kappa.clamped:
        log.warning("train: %d kappa entries clamped to the floor", kappa.clamped)
    model = Model.zeros(systems, kappa, args.gamma, spec.variant)
    model, trace = train(model, O, _train_config(args))
    save_model(args.out, model)
    outputs = [args.out]
    if args.trace:
        write_trace(args.trace, trace)
        outputs.append(args.trace)
    inputs = list(args.eigen) + [args.tuples]
    if spec.variant == "nonparametric":
        inputs.append(args.kappa[5:])
    return inputs, outputs


def cmd_adapt(args):
    systems = _load_systems(args.eigen)
    O, _ = _load_positive_tuples(args, tuple(s.n for s in systems))
    try:
        cfg = AdaptConfig(outer_iters=args.outer_iters, kappa_step=args.kappa_step,
                          inner=_train_config(args), dykstra_iters=args.dykstra_iters,
                          dykstra_tol=args.dykstra_tol, pava_tol=args.pava_tol,
                          inner_solver=args.inner_solver, direction=args.direction,
                          gradient_form=args.gradient_form, total=args.mass)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    initial = raw_kappa_grid(_kappa_spec(args.init_kappa), systems)
    kappa, model, trace = adapt_kappa(O, systems, args.gamma, cfg, initial=initial)
    save_kappa(args.out_kappa, kappa)
    save_model(args.out_model, model)
    outputs = [args.out_kappa, args.out_model]
    if args.trace:
        write_adapt_trace(args.trace, trace)
        outputs.append(args.trace)
    return list(args.eigen) + [args.tuples], outputs


def cmd_eval(args):
    inputs = [args.tuples]
    if args.baseline == "nn":
        if not args.graphs:
            raise UsageError("--baseline nn needs --graphs")
        graphs = [load_graph(p) for p in args.graphs]
        dims = tuple(g.n for g in graphs)
        inputs += list(args.graphs)
    else:
        if not args.model:
            raise UsageError("--model is required unless --baseline nn is given")
        model = load_model(args.model)
        dims = model.dims_n
        inputs.append(args.model)
    if not 0 <= args.complete_mode < len(dims):
        raise UsageError(f"--complete-mode must lie in [0, {len(dims) - 1}]")
    split = make_split(load_tuples(_read_text(args.tuples), dims), args.split_seed)
    if args.baseline == "nn":
        scorer = NearestNeighborScorer(graphs, split.train, self_weight=args.self_weight)
    else:
        scorer = model_scorer(model)
    summary, rows = evaluate_completion(scorer, split, args.complete_mode)
    summary["method"] = "nn" if args.baseline == "nn" else "top"
    with open(args.out, "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    outputs = [args.out]
    if args.per_query:
        write_query_rows(args.per_query, rows)
        outputs.append(args.per_query)
    log.info("eval: %s", summary)
    return inputs, outputs


def cmd_oracle(args):
    from .oracles import SUITES, run_suites

    names = SUITES if args.suite == "all" else (args.suite,)
    checks = run_suites(names, seed=args.seed)
    report = {"seed": args.seed, "checks": [c.as_dict() for c in checks],
              "passed": all(c.passed for c in checks)}
    text = json.dumps(report, indent=2, sort_keys=True) + "\n"
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    args.exit_code = EXIT_OK if report["passed"] else EXIT_INTERNAL
    return [], [args.out] if args.out else []


def _add_train_flags(p):
    p.add_argument("--eigen", nargs="+", required=True, help="eigensystem archives, one per graph")
    p.add_argument("--tuples", required=True, help="known positive tuples (TSV)")
    p.add_argument("--split-seed", type=int, default=None,
                   help="train on the first third of a seeded split instead of all tuples")
    p.add_argument("--gamma", type=float, default=1.0)
    p.add_argument("--eta0", type=float, default=1.0)
    p.add_argument("--iters", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--batch", type=int, default=1)
    p.add_argument("--eval-every", type=int, default=1000)


def build_parser():
    parser = argparse.ArgumentParser(prog="topgraph", description=__doc__.split("\n")[0])
    parser.add_argument("--config", help="JSON file of default flag values")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("graph", help="load, sparsify and normalize an edge list")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--knn-frac", type=float, default=None)
    p.add_argument("--normalize", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_graph)

    p = sub.add_parser("eigen", help="truncated eigensystem of a graph archive")
    p.add_argument("--graph", required=True)
    p.add_argument("--rank", type=int, default=None)
    p.add_argument("--energy", type=float, default=None)
    p.add_argument("--energy-measure", choices=("abs", "squared"), default="abs")
    p.add_argument("--method", choices=("auto", "dense", "lanczos"), default="auto")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eigen)

    p = sub.add_parser("train", help="fit the core tensor with AdaGrad SGD")
    _add_train_flags(p)
    p.add_argument("--kappa", default="exponential",
                   help="tensor | cartesian | exp | flat | file:<kappa archive>")
    p.add_argument("--out", required=True)
    p.add_argument("--trace", default=None, help="loss trace CSV")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("adapt", help="adapt a nonparametric kappa tensor")
    _add_train_flags(p)
    p.add_argument("--init-kappa", default="cartesian")
    p.add_argument("--outer-iters", type=int, default=10)
    p.add_argument("--kappa-step", type=float, default=1e-4)
    p.add_argument("--inner-solver", choices=("sgd", "exact"), default="sgd")
    p.add_argument("--direction", choices=("descent", "ascent"), default="descent")
    p.add_argument("--gradient-form", choices=("danskin", "literal"), default="danskin")
    p.add_argument("--dykstra-iters", type=int, default=10_000)
    p.add_argument("--dykstra-tol", type=float, default=1e-10)
    p.add_argument("--pava-tol", type=float, default=1e-10)
    p.add_argument("--mass", type=float, default=1.0, help="total kappa mass")
    p.add_argument("--out-kappa", required=True)
    p.add_argument("--out-model", required=True)
    p.add_argument("--trace", default=None, help="adaptation trace CSV")
    p.set_defaults(func=cmd_adapt)

    p = sub.add_parser("eval", help="tuple-completion metrics on the test split")
    p.add_argument("--model", default=None)
    p.add_argument("--tuples", required=True)
    p.add_argument("--split-seed", type=int, required=True)
    p.add_argument("--complete-mode", type=int, default=1)
    p.add_argument("--baseline", choices=("nn",), default=None)
    p.add_argument("--graphs", nargs="+", default=None, help="graph archives for --baseline nn")
    p.add_argument("--self-weight", type=float, default=1.0)
    p.add_argument("--out", required=True, help="metrics JSON")
    p.add_argument("--per-query", default=None, help="per-query CSV")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("oracle", help="run the desk-scale self-check suites")
    p.add_argument("--suite", choices=("all", "dense", "seminorm", "gradient", "projection"),
                   default="all")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_oracle)

    for p in sub.choices.values():
        p.add_argument("--manifest", default=None, help="run manifest path")
    parser.subcommands = sub.choices
    return parser


def _apply_config(parser, argv):
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return
    with open(known.config) as fh:
        values = {k.replace("-", "_"): v for k, v in json.load(fh).items()}
    for p in parser.subcommands.values():
        p.set_defaults(**values)
        # a config value satisfies a required flag
        for action in p._actions:
            if action.dest in values:
                action.required = False


def _thread_limit():
    limit = os.environ.get("TOPGRAPH_THREADS")
    if not limit:
        return None
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=int(limit))


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        _apply_config(parser, argv)
    except (OSError, ValueError) as exc:
        print(f"topgraph: bad --config: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    limiter = _thread_limit()
    try:
        inputs, outputs = args.func(args)
        if outputs:
            _write_manifest(args, inputs, outputs)
        return getattr(args, "exit_code", EXIT_OK)
    except UsageError as exc:
        print(f"topgraph {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"topgraph {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ConvergenceError as exc:
        print(f"topgraph {args.command}: did not converge: {exc} {exc.diagnostics}",
              file=sys.stderr)
        return EXIT_CONVERGENCE
    except Exception as exc:  # noqa: BLE001 - map everything else to exit 1
        log.exception("internal error")
        print(f"topgraph {args.command}: internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    finally:
        if limiter is not None:
            limiter.unregister()


if __name__ == "__main__":
    sys.exit(main())
