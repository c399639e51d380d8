"""Batch command-line front end: train, predict, eval.

Data files are headerless CSV. Features come from ``--data``; labels either
live in their own single-column file (``--labels``) or are one column of the
data file (``--label-col``, 0-based). Model files are versioned JSON with
hyperparameters serialized at 17 significant digits so they round-trip
exactly. All numeric output uses '.' as the decimal point regardless of
locale.

Exit codes: 0 ok, 2 usage or data error, 3 numerical failure.

Thread count comes from ``--threads`` or the ``KERNELGP_NUM_THREADS``
environment variable (the flag wins). Heavy imports happen after thread
setup so BLAS pools pick the setting up.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

MODEL_FORMAT_VERSION = 1
THREADS_ENV_VAR = "KERNELGP_NUM_THREADS"

KERNEL_NAMES = ("gaussian", "matern32", "matern52")


class DataError(Exception):
    """Bad input file or inconsistent shapes; maps to exit code 2."""


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _setup_threads(flag_value):
    n = flag_value
    if n is None:
        env = os.environ.get(THREADS_ENV_VAR, "").strip()
        if env:
            try:
                n = int(env)
            except ValueError:
                raise DataError(f"{THREADS_ENV_VAR} must be an integer, got {env!r}")
    if n is None:
        return
    if n < 1:
        raise DataError("thread count must be >= 1")
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(var, str(n))
    try:
        import numba

        numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))
    except ImportError:
        pass


# -- file I/O ----------------------------------------------------------------


def read_csv_matrix(path: str, expect_cols: int | None = None):
    import numpy as np

    rows = []
    ncols = expect_cols
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from exc
    with fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if ncols is None:
                ncols = len(row)
            if len(row) != ncols:
                raise DataError(
                    f"{path} line {lineno}: expected {ncols} columns, found {len(row)}"
                )
            try:
                rows.append([float(v) for v in row])
            except ValueError:
                raise DataError(f"{path} line {lineno}: non-numeric value in {row!r}")
    if not rows:
        return np.empty((0, ncols or 0))
    return np.array(rows)


def load_dataset(args):
    """Features plus labels per the --labels / --label-col convention."""
    data = read_csv_matrix(args.data)
    if data.shape[0] == 0:
        raise DataError(f"{args.data}: no data rows")
    if args.labels is not None:
        labels = read_csv_matrix(args.labels, expect_cols=1)
        if labels.shape[0] != data.shape[0]:
            raise DataError(
                f"label count {labels.shape[0]} does not match {data.shape[0]} data rows"
            )
        return data, labels[:, 0]
    col = args.label_col
    if col is None:
        raise DataError("labels required: pass --labels FILE or --label-col K")
    if not 0 <= col < data.shape[1]:
        raise DataError(
            f"--label-col {col} out of range: {args.data} has {data.shape[1]} columns"
        )
    import numpy as np

    y = data[:, col]
    x = np.delete(data, col, axis=1)
    if x.shape[1] == 0:
        raise DataError(f"{args.data} has {data.shape[1]} columns; need at least 2 "
                        "when the label is one of them")
    return x, y


def write_model(path: str, kernel_name: str, l: float, f: float, s: float):
    doc = {
        "format_version": MODEL_FORMAT_VERSION,
        "kernel": kernel_name,
        "l": float(_fmt(l)),
        "f": float(_fmt(f)),
        "s": float(_fmt(s)),
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_model(path: str):
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise DataError(f"cannot read model {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid model file: {exc}") from exc
    if doc.get("format_version") != MODEL_FORMAT_VERSION:
        raise DataError(
            f"{path}: unsupported model format version {doc.get('format_version')!r}"
        )
    try:
        kernel = doc["kernel"]
        l, f, s = float(doc["l"]), float(doc["f"]), float(doc["s"])
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"{path}: malformed model file ({exc})") from exc
    if kernel not in KERNEL_NAMES:
        raise DataError(f"{path}: unknown kernel {kernel!r}")
    return kernel, l, f, s


def write_predictions(path, mean, stddev):
    with open(path, "w", newline="") as fh:
        fh.write("mean,stddev\n")
        for m, sd in zip(mean, stddev):
            fh.write(f"{_fmt(m)},{_fmt(sd)}\n")


# -- commands -----------------------------------------------------------------


def cmd_train(args) -> int:
    from kernelgp.kernels import KernelType
    from kernelgp.train import TrainConfig, fit

    x, y = load_dataset(args)
    config = TrainConfig(
        learning_rate=args.lr,
        max_steps=args.max_steps,
        mode=args.mode,
        k_z=args.probes,
        tol=args.tol,
        probe_tol=args.probe_tol,
        max_iter=args.max_iter,
        precond_rank=args.precond_rank,
        rng_seed=args.seed,
        block_size=args.block_size,
    )
    result = fit(KernelType.from_name(args.kernel), x, y, config)
    write_model(args.out, args.kernel, result.params.l, result.params.f, result.params.s)
    history_path = os.path.splitext(args.out)[0] + "_history.csv"
    with open(history_path, "w", newline="") as fh:
        fh.write("step,loss,grad_norm\n")
        for i, (loss, gn) in enumerate(zip(result.loss_history, result.grad_norm_history)):
            fh.write(f"{i},{_fmt(loss)},{_fmt(gn)}\n")
    print(f"loss {_fmt(result.loss_history[-1])}")
    print(f"l {_fmt(result.params.l)}")
    print(f"f {_fmt(result.params.f)}")
    print(f"s {_fmt(result.params.s)}")
    print(f"steps {len(result.loss_history)}")
    print(f"status {result.status.value}")
    return 0


def cmd_predict(args) -> int:
    from kernelgp.gp import predict
    from kernelgp.kernels import KernelType
    from kernelgp.kmat import Hyperparams

    kernel, l, f, s = read_model(args.model)
    x, y = load_dataset(args)
    test = read_csv_matrix(args.test)
    if test.shape[0] == 0:
        with open(args.out, "w", newline="") as fh:
            fh.write("mean,stddev\n")
        return 0
    if test.shape[1] != x.shape[1]:
        raise DataError(
            f"test data has {test.shape[1]} feature columns, training data has {x.shape[1]}"
        )
    pred = predict(
        KernelType.from_name(kernel),
        x,
        y,
        test,
        Hyperparams(l=l, f=f, s=s),
        mode=args.mode,
        tol=args.tol,
        max_iter=args.max_iter,
        precond_rank=args.precond_rank,
        block_size=args.block_size,
    )
    write_predictions(args.out, pred.mean, pred.stddev)
    return 0


def cmd_eval(args) -> int:
    import numpy as np

    from kernelgp import gp, precond
    from kernelgp.kernels import KernelType
    from kernelgp.kmat import Hyperparams, KernelEngine
    from kernelgp.train import RawParams, chain_grads

    raw = None
    if args.raw_params is not None:
        if args.kernel is None:
            raise DataError("--raw-params requires --kernel")
        kernel = args.kernel
        try:
            rho = [float(v) for v in args.raw_params.split(",")]
        except ValueError:
            raise DataError(f"--raw-params must be three comma-separated reals")
        if len(rho) != 3:
            raise DataError("--raw-params must be three comma-separated reals")
        raw = RawParams(*rho)
        params = raw.to_hyperparams()
    else:
        if args.model is None:
            raise DataError("pass --model FILE or --raw-params RL,RF,RS")
        kernel, l, f, s = read_model(args.model)
        params = Hyperparams(l=l, f=f, s=s)

    x, y = load_dataset(args)
    engine = KernelEngine(
        KernelType.from_name(kernel), x, params, block_size=args.block_size
    )
    if args.mode == "exact":
        if args.grad:
            lg = gp.grad_exact(engine, y)
            loss, grads = lg.loss, lg.grads()
        else:
            loss, grads = gp.nlml_exact(engine, y), None
    else:
        probes = gp.ProbeSet.generate(engine.n, args.probes, args.seed)
        pre = precond.build(engine, args.precond_rank)
        lg = gp.nlml_grad_iterative(
            engine,
            y,
            pre,
            probes,
            tol=args.tol,
            max_iter=args.max_iter,
            probe_tol=args.probe_tol,
        )
        loss, grads = lg.loss, (lg.grads() if args.grad else None)

    print(f"loss {_fmt(loss)}")
    if grads is not None:
        if raw is not None:
            rho_grads = chain_grads(raw, grads)
            for name, v in zip(("grad_rho_l", "grad_rho_f", "grad_rho_s"), rho_grads):
                print(f"{name} {_fmt(v)}")
        else:
            for name, v in zip(("grad_l", "grad_f", "grad_s"), grads):
                print(f"{name} {_fmt(v)}")
    if raw is not None:
        # the mapped hyperparameters, so raw-space callers never reimplement
        # the softplus transform
        print(f"l {_fmt(params.l)}")
        print(f"f {_fmt(params.f)}")
        print(f"s {_fmt(params.s)}")
    return 0


# -- parser -------------------------------------------------------------------


def _add_common_data_flags(p):
    p.add_argument("--data", required=True, help="headerless CSV of training features")
    p.add_argument("--labels", help="single-column CSV of training labels")
    p.add_argument("--label-col", type=int, dest="label_col",
                   help="0-based column of --data holding the label")
    p.add_argument("--threads", type=int, default=None,
                   help=f"worker thread cap (overrides {THREADS_ENV_VAR})")


def _add_solver_flags(p):
    p.add_argument("--tol", type=float, default=1e-6, help="relative residual target")
    p.add_argument("--probe-tol", type=float, default=1e-2, dest="probe_tol",
                   help="looser residual target for probe solves")
    p.add_argument("--max-iter", type=int, default=500, dest="max_iter")
    p.add_argument("--precond-rank", type=int, default=None, dest="precond_rank")
    p.add_argument("--block-size", type=int, default=256, dest="block_size")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kernelgp",
        description="Gaussian process regression over CSV datasets",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="fit hyperparameters, write a model file")
    _add_common_data_flags(p_train)
    p_train.add_argument("--kernel", choices=KERNEL_NAMES, default="gaussian")
    p_train.add_argument("--mode", choices=("exact", "iterative"), default="exact")
    p_train.add_argument("--max-steps", type=int, default=100, dest="max_steps")
    p_train.add_argument("--lr", type=float, default=0.1)
    p_train.add_argument("--probes", type=int, default=16)
    _add_solver_flags(p_train)
    p_train.add_argument("--seed", type=int, default=0)
    p_train.add_argument("--out", required=True, help="model file to write (JSON)")
    p_train.set_defaults(func=cmd_train)

    p_pred = sub.add_parser("predict", help="predict mean/stddev at test points")
    _add_common_data_flags(p_pred)
    p_pred.add_argument("--model", required=True)
    p_pred.add_argument("--test", required=True, help="headerless CSV of test features")
    p_pred.add_argument("--mode", choices=("exact", "iterative"), default="exact")
    _add_solver_flags(p_pred)
    p_pred.add_argument("--out", required=True, help="predictions CSV to write")
    p_pred.set_defaults(func=cmd_predict)

    p_eval = sub.add_parser("eval", help="print the loss (and gradient) on a dataset")
    _add_common_data_flags(p_eval)
    p_eval.add_argument("--model")
    p_eval.add_argument("--raw-params", dest="raw_params", metavar="RL,RF,RS",
                        help="unconstrained parameters; softplus-mapped in core, "
                             "gradient reported in the raw space")
    p_eval.add_argument("--kernel", choices=KERNEL_NAMES,
                        help="kernel name (required with --raw-params)")
    p_eval.add_argument("--mode", choices=("exact", "iterative"), default="exact")
    p_eval.add_argument("--grad", action="store_true", help="also print the gradient")
    p_eval.add_argument("--probes", type=int, default=16)
    _add_solver_flags(p_eval)
    p_eval.add_argument("--seed", type=int, default=0)
    p_eval.set_defaults(func=cmd_eval)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _setup_threads(args.threads)
        return args.func(args)
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception:
        from kernelgp.errors import NumericalError, ResourceLimitError

        exc = sys.exc_info()[1]
        if isinstance(exc, ResourceLimitError):
            print(f"error: {exc}", file=sys.stderr)
            return 2
        if isinstance(exc, NumericalError):
            print(f"numerical failure: {exc}", file=sys.stderr)
            return 3
        raise


if __name__ == "__main__":
    sys.exit(main())
