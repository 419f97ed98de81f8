"""Command-line surface.

Subcommands: train, generate, reconstruct, gradcheck, elbo.  Exit codes are
part of the contract: 0 success, 1 usage problems, 2 bad or inconsistent
data, 3 numeric failure.  Output files are written atomically; a failing
command leaves nothing half-written behind.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import io
from .elbo import elbo, elbo_gradients
from .errors import ConfigurationError, DataError, NumericalError
from .latent_prior import TemporalGrid
from .model import pack_state, parameter_blocks, unpack_state
from .oracle import finite_diff_grad
from .predictor import PredictionRequest, ReconstructionTask, generate, metrics, reconstruct
from .trainer import TrainConfig, fit, initialize

EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class _Parser(argparse.ArgumentParser):
    """Same as ArgumentParser but usage failures exit 1, not argparse's 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _apply_threads(count: int | None) -> None:
    """Cap the jit runtime's thread pool; CGPDS_THREADS is the fallback.

    Results never depend on the thread count, so this is purely a resource
    control.  The numpy backend ignores it.
    """
    if count is None:
        raw = os.environ.get("CGPDS_THREADS", "").strip()
        if not raw:
            return
        try:
            count = int(raw)
        except ValueError:
            raise ConfigurationError(f"CGPDS_THREADS must be an integer, got {raw!r}")
    if count < 1:
        raise ConfigurationError("thread count must be at least 1")
    from . import backend
    if backend.BACKEND == "numba":
        import numba
        numba.set_num_threads(min(count, numba.config.NUMBA_NUM_THREADS))


def _read_times(path) -> np.ndarray:
    """Times file: one value per line (first CSV column), optional 't' header."""
    try:
        with open(path, encoding="utf-8-sig") as fh:
            lines = [ln.strip() for ln in fh]
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    cells = [ln.split(",")[0].strip() for ln in lines if ln]
    if cells and cells[0] == "t":
        cells = cells[1:]
    if not cells:
        raise DataError(f"{path}: no time stamps found")
    try:
        times = np.array([float(c) for c in cells])
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from exc
    if not np.all(np.isfinite(times)):
        raise DataError(f"{path}: time stamps must be finite")
    if np.any(np.diff(times) <= 0):
        raise DataError(f"{path}: time stamps must be strictly increasing")
    return times


def _generation_times(args) -> np.ndarray:
    range_given = [args.start is not None, args.stop is not None,
                   args.step is not None]
    if args.times is not None:
        if any(range_given):
            raise ConfigurationError("--times excludes --from/--to/--step")
        return _read_times(args.times)
    if not all(range_given):
        raise ConfigurationError("need either --times or all of --from/--to/--step")
    if args.step <= 0:
        raise ConfigurationError("--step must be positive")
    if args.stop < args.start:
        raise ConfigurationError("--to must not be below --from")
    count = int(np.floor((args.stop - args.start) / args.step + 1e-9)) + 1
    return args.start + args.step * np.arange(count)


def _cmd_train(args) -> int:
    ds = io.load_dataset(args.data)
    state0 = initialize(ds.grid.times, ds.Y, latent_dim=args.latent_dim,
                        num_local=args.num_local, num_inducing=args.inducing,
                        kernel_x=args.kernel_x, seed=args.seed)
    config = TrainConfig(iterations=args.iters, step_size=args.step_size,
                         batch_dims=args.batch_dims, seed=args.seed,
                         freeze_inducing=args.freeze_inducing,
                         convergence_tol=args.tol)
    state, trace = fit(state0, ds.Y, config)
    final = elbo(state, ds.Y).total
    io.save_model(args.out, state, ds.Y, ds.column_names,
                  {"seed": args.seed, "iterations": args.iters,
                   "final_elbo": final})
    io.write_trace(args.trace or args.out + ".trace.csv", trace)
    print(f"final full-batch elbo: {final!r}")
    if trace.aborted:
        print("training aborted on a numeric failure; "
              "the model file holds the best finite state", file=sys.stderr)
        return EXIT_NUMERIC
    if trace.converged:
        print("converged before the iteration limit")
    return 0


def _cmd_generate(args) -> int:
    saved = io.load_model(args.model)
    times = _generation_times(args)
    pred = generate(saved.state, PredictionRequest(TemporalGrid(times)))
    io.write_prediction(args.out, times, pred, saved.column_names)
    print(f"wrote {times.size} rows to {args.out}")
    return 0


def _cmd_reconstruct(args) -> int:
    saved = io.load_model(args.model)
    ds = io.load_dataset(args.data, allow_missing=True)
    if ds.column_names != saved.column_names:
        raise DataError("partial data columns do not match the trained model's")
    task = ReconstructionTask(ds.grid, ds.Y)
    opt = TrainConfig(iterations=args.iters, step_size=args.step_size)
    moments, missing = reconstruct(saved.state, saved.Y, task, opt)
    io.write_reconstruction(args.out, ds.grid.times, moments, missing,
                            saved.column_names)
    print(f"filled {int(missing.sum())} entries, wrote {args.out}")
    if args.truth is not None:
        truth = io.load_dataset(args.truth)
        if truth.Y.shape != ds.Y.shape or not np.array_equal(truth.grid.times,
                                                             ds.grid.times):
            raise DataError("truth file must mirror the partial file's grid and columns")
        result = metrics(moments, truth.Y, missing, np.var(saved.Y, axis=0))
        print(f"rmse over filled entries: {float(result.rmse)!r}")
        for col, value in zip(saved.column_names, result.standardized_mse):
            if np.isfinite(value):
                print(f"standardized mse {col}: {float(value)!r}")
    return 0


def _cmd_gradcheck(args) -> int:
    ds = io.load_dataset(args.data)
    state = initialize(ds.grid.times, ds.Y, latent_dim=args.latent_dim,
                       num_local=args.num_local, num_inducing=args.inducing,
                       kernel_x=args.kernel_x, seed=args.seed)
    _, grad = elbo_gradients(state, ds.Y)

    def value_at(theta):
        return elbo(unpack_state(theta, state), ds.Y).total

    approx = finite_diff_grad(value_at, pack_state(state), step=args.step)
    rel = np.abs(grad - approx) / np.maximum(1.0, np.abs(grad))
    offset = 0
    for name, size in parameter_blocks(state):
        block = rel[offset:offset + size]
        print(f"{name}: max relative error {float(block.max())!r}")
        offset += size
    print(f"max relative error: {float(rel.max())!r}")
    return 0


def _cmd_elbo(args) -> int:
    saved = io.load_model(args.model)
    Y = saved.Y
    if args.data is not None:
        ds = io.load_dataset(args.data)
        if ds.Y.shape != (saved.state.n, saved.state.d):
            raise DataError("data shape does not match the trained model")
        Y = ds.Y
    breakdown = elbo(saved.state, Y)
    print(f"likelihood terms: {float(np.sum(breakdown.per_dim_terms))!r}")
    print(f"kl inducing: {float(breakdown.kl_inducing)!r}")
    print(f"kl latent: {float(breakdown.kl_latent)!r}")
    print(f"elbo: {breakdown.total!r}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cgpds",
                     description="Collaborative multi-output GP dynamical "
                                 "system: train, generate, reconstruct.")
    common = _Parser(add_help=False)
    common.add_argument("--threads", type=int, default=None,
                        help="cap the jit thread pool (default: machine "
                             "parallelism; env CGPDS_THREADS)")
    sub = parser.add_subparsers(dest="command", required=True,
                                parser_class=_Parser)

    tr = sub.add_parser("train", parents=[common],
                        help="fit a model to a CSV dataset")
    tr.add_argument("--data", required=True, help="training CSV (t + D columns)")
    tr.add_argument("--out", required=True, help="model JSON output path")
    tr.add_argument("--latent-dim", type=int, default=2, help="Q (default 2)")
    tr.add_argument("--num-local", type=int, default=2, help="J (default 2)")
    tr.add_argument("--inducing", type=int, default=None,
                    help="M (default min(20, N))")
    tr.add_argument("--kernel-x", default="rbf",
                    choices=["rbf", "periodic", "rbf+periodic"],
                    help="temporal kernel family (default rbf)")
    tr.add_argument("--iters", type=int, default=500,
                    help="gradient steps (default 500)")
    tr.add_argument("--step-size", type=float, default=0.05,
                    help="base step size (default 0.05)")
    tr.add_argument("--batch-dims", type=int, default=None,
                    help="dimensions per stochastic batch (default: all)")
    tr.add_argument("--seed", type=int, default=0, help="RNG seed (default 0)")
    tr.add_argument("--freeze-inducing", action="store_true",
                    help="keep inducing inputs at their initialization")
    tr.add_argument("--tol", type=float, default=0.0,
                    help="relative full-batch improvement below which "
                         "training stops (default 0: run all iterations)")
    tr.add_argument("--trace", default=None,
                    help="trace CSV path (default: <out>.trace.csv)")
    tr.set_defaults(func=_cmd_train)

    ge = sub.add_parser("generate", parents=[common],
                        help="predict new sequences at given times")
    ge.add_argument("--model", required=True, help="trained model JSON")
    ge.add_argument("--out", required=True, help="prediction CSV output path")
    ge.add_argument("--times", default=None,
                    help="file of time stamps (one per line, optional 't' header)")
    ge.add_argument("--from", dest="start", type=float, default=None,
                    help="first time stamp")
    ge.add_argument("--to", dest="stop", type=float, default=None,
                    help="last time stamp (inclusive)")
    ge.add_argument("--step", dest="step", type=float, default=None,
                    help="spacing between time stamps")
    ge.set_defaults(func=_cmd_generate)

    re = sub.add_parser("reconstruct", parents=[common],
                        help="fill missing entries of a partial CSV")
    re.add_argument("--model", required=True, help="trained model JSON")
    re.add_argument("--data", required=True,
                    help="partial CSV; NaN marks a missing cell")
    re.add_argument("--out", required=True,
                    help="filled-values CSV (index written to <out>.index.csv)")
    re.add_argument("--truth", default=None,
                    help="fully observed CSV on the same grid; prints metrics")
    re.add_argument("--iters", type=int, default=500,
                    help="optimization steps (default 500)")
    re.add_argument("--step-size", type=float, default=0.05,
                    help="base step size (default 0.05)")
    re.set_defaults(func=_cmd_reconstruct)

    gc = sub.add_parser("gradcheck", parents=[common],
                        help="compare analytic gradients to finite differences "
                             "on a fresh initialization (small data only)")
    gc.add_argument("--data", required=True, help="training CSV")
    gc.add_argument("--latent-dim", type=int, default=2, help="Q (default 2)")
    gc.add_argument("--num-local", type=int, default=2, help="J (default 2)")
    gc.add_argument("--inducing", type=int, default=None,
                    help="M (default min(20, N))")
    gc.add_argument("--kernel-x", default="rbf",
                    choices=["rbf", "periodic", "rbf+periodic"],
                    help="temporal kernel family (default rbf)")
    gc.add_argument("--seed", type=int, default=0, help="RNG seed (default 0)")
    gc.add_argument("--step", type=float, default=1e-5,
                    help="finite-difference step (default 1e-5)")
    gc.set_defaults(func=_cmd_gradcheck)

    el = sub.add_parser("elbo", parents=[common],
                        help="print the bound and its pieces for a saved model")
    el.add_argument("--model", required=True, help="trained model JSON")
    el.add_argument("--data", default=None,
                    help="evaluate against this CSV instead of the stored data")
    el.set_defaults(func=_cmd_elbo)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse reports usage problems by exiting; keep the return-code
        # contract for in-process callers instead of unwinding past them
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    try:
        _apply_threads(args.threads)
        return args.func(args)
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    raise SystemExit(main())
