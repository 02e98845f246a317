"""Command-line interface: one executable with task subcommands.

Every run that writes an output file also writes a JSON manifest next to
it (same path plus ".manifest.json") recording the resolved arguments,
the seed, input file digests and library versions, which is enough to
re-create the run bit-exactly.

Exit codes: 0 success, 1 configuration/validation error, 2 runtime or
numeric error.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import os
import sys
import traceback

import numpy as np
import scipy

from . import __version__
from .choiceprob import choice_prob, choice_prob_se
from .dgp import parse_dgp_config, reference_dgp, simulate
from .estimator import (
    CoefficientPath,
    OptimizerConfig,
    default_bandwidth,
    estimate_beta,
    estimate_process,
)
from .exceptions import BqprocError, ConfigurationError
from .kernels import builtin_kernel, validate_moments
from .montecarlo import parse_experiment_config, run_experiment, summarize
from .score import CovariatePoint, load_dataset_csv, save_dataset_csv

__all__ = ["main"]


def _resolve_seed(seed) -> int:
    """Explicit flag wins; BQPROC_SEED is the fallback; default 0."""
    if seed is not None:
        return int(seed)
    env = os.environ.get("BQPROC_SEED", "").strip()
    if env:
        try:
            return int(env)
        except ValueError:
            raise ConfigurationError(
                f"BQPROC_SEED must be an integer, got {env!r}"
            ) from None
    return 0


def _sha256(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _write_manifest(out_path: str, command: str, args: argparse.Namespace,
                    seed, inputs, outputs) -> None:
    resolved = {
        k: v
        for k, v in vars(args).items()
        if k not in ("func", "command") and not callable(v)
    }
    manifest = {
        "command": command,
        "arguments": resolved,
        "seed": seed,
        "inputs": {p: _sha256(p) for p in inputs if p and os.path.exists(p)},
        "outputs": list(outputs),
        "versions": {
            "bqproc": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "python": sys.version.split()[0],
        },
    }
    with open(out_path + ".manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")


def _parse_taus(text: str) -> np.ndarray:
    text = text.strip()
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise ConfigurationError(f"tau grid '{text}' must be lo:hi:count")
        return np.linspace(float(parts[0]), float(parts[1]), int(parts[2]))
    return np.array([float(v) for v in text.split(",")])


def _parse_w(text: str) -> CovariatePoint:
    vals = [float(v) for v in text.split(",")]
    if len(vals) < 2:
        raise ConfigurationError(f"w '{text}' needs z plus at least one x value")
    return CovariatePoint(z=vals[0], x=np.array(vals[1:]))


def _bandwidth(args, n: int) -> float:
    kernel = builtin_kernel(args.kernel)
    if getattr(args, "h", None) is not None:
        if args.h <= 0:
            raise ConfigurationError(f"--h must be positive, got {args.h}")
        return float(args.h)
    return default_bandwidth(n, kernel.order, args.bandwidth_c)


def _opt_config(args, seed: int) -> OptimizerConfig:
    return OptimizerConfig(n_starts=args.n_starts, seed=seed)


# =========================================================================
# subcommand handlers
# =========================================================================


def _cmd_simulate(args) -> int:
    seed = _resolve_seed(args.seed)
    dgp = parse_dgp_config(args.dgp) if args.dgp else reference_dgp()
    data = simulate(dgp, args.n, seed)
    save_dataset_csv(data, args.out)
    _write_manifest(args.out, "simulate", args, seed,
                    [args.dgp] if args.dgp else [], [args.out])
    print(f"wrote {data.n} rows (d={data.d}) to {args.out}")
    return 0


def _cmd_fit(args) -> int:
    seed = _resolve_seed(args.seed)
    data = load_dataset_csv(args.data)
    kernel = builtin_kernel(args.kernel)
    h = _bandwidth(args, data.n)
    s_hat, b_hat, objective, diag = estimate_beta(
        data, args.tau, h, kernel, _opt_config(args, seed)
    )
    path = CoefficientPath(
        taus=np.array([args.tau]),
        s_hat=np.array([s_hat]),
        b_hat=b_hat[None, :],
        objective=np.array([objective]),
        h=h,
        diagnostics=(diag,),
        n=data.n,
        kernel_name=kernel.name,
    )
    path.to_csv(args.out)
    _write_manifest(args.out, "fit", args, seed, [args.data], [args.out])
    coefs = ", ".join(format(v, ".6g") for v in b_hat)
    print(
        f"tau={args.tau}: s_hat={s_hat:+d}, b_hat=({coefs}), "
        f"objective={objective:.6g}, converged={diag.converged}"
    )
    return 0


def _cmd_process(args) -> int:
    seed = _resolve_seed(args.seed)
    data = load_dataset_csv(args.data)
    kernel = builtin_kernel(args.kernel)
    h = _bandwidth(args, data.n)
    taus = _parse_taus(args.taus)
    path = estimate_process(data, taus, h, kernel, _opt_config(args, seed))
    path.to_csv(args.out)
    _write_manifest(args.out, "process", args, seed, [args.data], [args.out])
    n_conv = sum(d.converged for d in path.diagnostics)
    print(
        f"fit {taus.size} quantile levels on n={data.n} (h={h:.6g}); "
        f"{n_conv}/{taus.size} converged; wrote {args.out}"
    )
    return 0


def _cmd_choiceprob(args) -> int:
    path = CoefficientPath.from_csv(
        args.path,
        h=args.h if args.h is not None else float("nan"),
        n=args.n if args.n is not None else 0,
        kernel_name=args.kernel,
    )
    w_points = [_parse_w(text) for text in args.w]
    se_source = None
    inputs = [args.path]
    if args.data and args.dgp:
        raise ConfigurationError("pass at most one of --data and --dgp for the se")
    if args.data:
        se_source = load_dataset_csv(args.data)
        inputs.append(args.data)
    elif args.dgp:
        se_source = parse_dgp_config(args.dgp)
        inputs.append(args.dgp)
    rows = []
    for w in w_points:
        est = choice_prob(path, w, args.a, args.b)
        se = None
        if se_source is not None:
            se = choice_prob_se(path, est, se_source)
        rows.append((w, est, se))
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        d = path.d
        fh.write(
            ",".join(
                ["z"]
                + [f"x_{j + 1}" for j in range(d)]
                + ["p_hat", "tau_w_hat", "se_hat", "n_sign_changes"]
            )
            + "\n"
        )
        for w, est, se in rows:
            cells = [format(w.z, ".17g")]
            cells += [format(v, ".17g") for v in w.x]
            cells += [
                format(est.p_hat, ".17g"),
                format(est.tau_w_hat, ".17g"),
                "" if se is None else format(se, ".17g"),
                str(est.n_sign_changes),
            ]
            fh.write(",".join(cells) + "\n")
    _write_manifest(args.out, "choiceprob", args, None, inputs, [args.out])
    for w, est, se in rows:
        se_text = "n/a" if se is None else format(se, ".4g")
        print(
            f"w=(z={w.z:g}, x={np.array2string(w.x, precision=4)}): "
            f"p_hat={est.p_hat:.6g}, tau_w_hat={est.tau_w_hat:.6g}, "
            f"se={se_text}, sign_changes={est.n_sign_changes}"
        )
    return 0


def _cmd_mc(args) -> int:
    cfg = parse_experiment_config(args.config)
    if args.seed is not None or os.environ.get("BQPROC_SEED", "").strip():
        cfg = dataclasses.replace(cfg, seed=_resolve_seed(args.seed))
    opt = OptimizerConfig(n_starts=args.n_starts, seed=cfg.seed)
    raw = run_experiment(cfg, workers=args.workers, opt=opt)
    raw.to_csv(args.out)
    outputs = [args.out]
    if raw.prob_rows:
        outputs.append(raw.prob_csv_path(args.out))
    summary = summarize(raw, cfg)
    summary.to_csv(args.summary)
    outputs.append(args.summary)
    _write_manifest(args.out, "mc", args, cfg.seed, [args.config], outputs)
    print(
        f"ran {cfg.n_reps} reps x {len(cfg.n_values)} sample sizes "
        f"({raw.n_failures} failures); wrote {', '.join(outputs)}"
    )
    return 0


def _cmd_validate_kernel(args) -> int:
    kernel = builtin_kernel(args.kernel)
    report = validate_moments(kernel, tol=args.tol)
    lines = [("integral", report.integral, "1")]
    lines += [(f"moment_{j}", v, "0") for j, v in sorted(report.moments.items())]
    lines += [
        (f"moment_{report.order}", report.moment_k, "nonzero"),
        (f"abs_moment_{report.order}", report.abs_moment_k, "finite"),
        ("tail_low", report.tail_low, "~0"),
        ("tail_high", report.tail_high, "~0"),
    ]
    if args.out:
        with open(args.out, "w", newline="", encoding="utf-8") as fh:
            fh.write("statistic,value,target\n")
            for name, value, target in lines:
                fh.write(f"{name},{format(value, '.17g')},{target}\n")
            fh.write(f"passed,{int(report.passed)},1\n")
        _write_manifest(args.out, "validate-kernel", args, None, [], [args.out])
    print(f"kernel {kernel.name} (order {kernel.order}), tol {report.tol:g}")
    for name, value, target in lines:
        print(f"  {name:>12}: {value: .3e}  (target {target})")
    if report.passed:
        print("  all moment conditions satisfied")
        return 0
    print(f"  FAILED: {'; '.join(report.failures)}", file=sys.stderr)
    return 2


# =========================================================================
# parser
# =========================================================================


def _build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = argparse.ArgumentParser(
        prog="bqproc",
        description="Smoothed-score quantile estimation for binary response data.",
    )
    parser.add_argument("--version", action="version", version=f"bqproc {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="draw a dataset from a DGP", formatter_class=fmt)
    p.add_argument("--dgp", default=None, help="DGP config file (default: built-in reference design)")
    p.add_argument("--n", type=int, required=True, help="sample size")
    p.add_argument("--seed", type=int, default=None, help="RNG seed (fallback: BQPROC_SEED, then 0)")
    p.add_argument("--out", required=True, help="output dataset CSV")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("fit", help="fit one quantile level", formatter_class=fmt)
    p.add_argument("--data", required=True, help="dataset CSV")
    p.add_argument("--tau", type=float, required=True, help="quantile level in (0,1)")
    p.add_argument("--kernel", default="gauss2", help="kernel name (gauss2 or gauss4)")
    p.add_argument("--h", type=float, default=None, help="bandwidth (default: rate-optimal rule)")
    p.add_argument("--bandwidth-c", type=float, default=1.0, help="constant c in h = c n^(-1/(2k+1))")
    p.add_argument("--n-starts", type=int, default=8, help="optimizer starts per sign")
    p.add_argument("--seed", type=int, default=None, help="optimizer start seed (fallback: BQPROC_SEED)")
    p.add_argument("--out", required=True, help="output coefficient CSV")
    p.set_defaults(func=_cmd_fit)

    p = sub.add_parser("process", help="fit the quantile coefficient path", formatter_class=fmt)
    p.add_argument("--data", required=True, help="dataset CSV")
    p.add_argument("--taus", default="0.2:0.8:61", help="tau grid, lo:hi:count or comma list")
    p.add_argument("--kernel", default="gauss2", help="kernel name (gauss2 or gauss4)")
    p.add_argument("--h", type=float, default=None, help="bandwidth (default: rate-optimal rule)")
    p.add_argument("--bandwidth-c", type=float, default=1.0, help="constant c in h = c n^(-1/(2k+1))")
    p.add_argument("--n-starts", type=int, default=8, help="optimizer starts per sign")
    p.add_argument("--seed", type=int, default=None, help="optimizer start seed (fallback: BQPROC_SEED)")
    p.add_argument("--out", required=True, help="output path CSV")
    p.set_defaults(func=_cmd_process)

    p = sub.add_parser("choiceprob", help="choice probabilities from a fitted path", formatter_class=fmt)
    p.add_argument("--path", required=True, help="coefficient path CSV from 'process'")
    p.add_argument("--w", action="append", required=True,
                   help="covariate point 'z,x1,...,xd' (repeatable)")
    p.add_argument("--a", type=float, default=0.25, help="lower tau endpoint")
    p.add_argument("--b", type=float, default=0.75, help="upper tau endpoint")
    p.add_argument("--data", default=None, help="dataset CSV for the plug-in se (data mode)")
    p.add_argument("--dgp", default=None, help="DGP config for the oracle se")
    p.add_argument("--n", type=int, default=None, help="sample size behind the path (for the se)")
    p.add_argument("--h", type=float, default=None, help="bandwidth behind the path (for the se)")
    p.add_argument("--kernel", default="gauss2", help="kernel behind the path")
    p.add_argument("--out", required=True, help="output CSV")
    p.set_defaults(func=_cmd_choiceprob)

    p = sub.add_parser("mc", help="run a replicated experiment", formatter_class=fmt)
    p.add_argument("--config", required=True, help="experiment config ([dgp] + [experiment])")
    p.add_argument("--out", required=True, help="raw results CSV (p_hat rows go to a sibling file)")
    p.add_argument("--summary", required=True, help="summary statistics CSV")
    p.add_argument("--workers", type=int, default=1, help="parallel worker processes")
    p.add_argument("--n-starts", type=int, default=8, help="optimizer starts per sign")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.set_defaults(func=_cmd_mc)

    p = sub.add_parser("validate-kernel", help="check kernel moment conditions", formatter_class=fmt)
    p.add_argument("--kernel", required=True, help="kernel name (gauss2 or gauss4)")
    p.add_argument("--tol", type=float, default=1e-8, help="moment tolerance")
    p.add_argument("--out", default=None, help="optional report CSV")
    p.set_defaults(func=_cmd_validate_kernel)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 0 for --help and 2 for usage errors; usage
        # problems are validation errors here
        return 0 if exc.code in (0, None) else 1
    try:
        return args.func(args)
    except BqprocError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except Exception:
        traceback.print_exc()
        return 2


if __name__ == "__main__":
    sys.exit(main())
