"""Command-line front end: ``deepmf synth | run | bench | gradcheck``.

Matrices are exchanged as plain comma-separated text, one matrix row per
line, without header, written with 17 significant digits so they parse back
to the same doubles. Every command writes a JSON manifest next to its
outputs. Outputs depend only on the flags: wall-clock timings and
timestamps are added only with ``--timing``.

Exit codes: 0 success, 1 usage/configuration/parse error, 2 numerical
failure (including a failed gradient check), 3 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import datetime
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .bench import DEFAULT_METHODS, VARIANTS, make_cells, run_bench, summarize
from .errors import DimensionError, DomainError, NumericalError, UsageError
from .fpgm import FpgmConfig
from .gradcheck import SIZES, TOLERANCE, check_gradients
from .metrics import evaluate
from .objectives import LossFamily
from .solvers import InitMode, Method, SolverConfig, solve
from .synth import NOISE_LEVELS, SynthConfig, generate_dataset

OUT_ENV = "DEEPMF_OUT"
FLOAT_FMT = "%.17g"

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_IO = 0, 1, 2, 3

_METHOD_LOSS = {Method.LCDMF: LossFamily.LAYER_CENTRIC, Method.DCDMF: LossFamily.DATA_CENTRIC}


# --------------------------------------------------------------------------
# file formats


def write_matrix(path, m) -> None:
    np.savetxt(path, np.atleast_2d(m), fmt=FLOAT_FMT, delimiter=",")


def read_matrix(path) -> np.ndarray:
    """Parse a header-less numeric CSV; errors name the offending line."""
    rows = []
    with open(path, newline="") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                row = [float(tok) for tok in line.split(",")]
            except ValueError:
                raise UsageError(f"{path}:{lineno}: non-numeric entry in {line[:40]!r}") from None
            if rows and len(row) != len(rows[0]):
                raise UsageError(f"{path}:{lineno}: expected {len(rows[0])} columns, got {len(row)}")
            rows.append(row)
    if not rows:
        raise UsageError(f"{path}: empty matrix file")
    m = np.array(rows)
    if not np.all(np.isfinite(m)):
        bad = int(np.argwhere(~np.isfinite(m))[0, 0]) + 1
        raise UsageError(f"{path}: non-finite value in data row {bad}")
    return m


def write_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, allow_nan=True)
        fh.write("\n")


def write_table(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([FLOAT_FMT % v if isinstance(v, float) else v for v in row])


def _stamp(d: dict, timing: bool, t0: float) -> dict:
    if timing:
        d["started"] = datetime.datetime.now(datetime.timezone.utc).isoformat()
        d["wall_seconds"] = time.perf_counter() - t0
    return d


# --------------------------------------------------------------------------
# flag parsing


def _floats(text: str) -> list:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text: str) -> list:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _words(text: str) -> list:
    return [t.strip() for t in text.split(",") if t.strip()]


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _out_dir(args) -> Path:
    out = Path(args.out if args.out is not None else os.environ.get(OUT_ENV, "."))
    out.mkdir(parents=True, exist_ok=True)
    return out


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="deepmf", description="Constrained deep matrix factorization.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--out", help=f"output directory (default: ${OUT_ENV} or the current directory)")
        sp.add_argument("--timing", action="store_true", help="add wall-clock timings and timestamps")

    s = sub.add_parser("synth", help="generate a synthetic two-layer dataset")
    s.add_argument("--n", type=int, default=1000, help="number of data columns")
    s.add_argument("--eps", type=float, default=0.0, help="relative noise level")
    s.add_argument("--alpha", type=float, default=0.05, help="Dirichlet parameter of H1")
    s.add_argument("--seed", type=int, default=0)
    common(s)

    r = sub.add_parser("run", help="factorize a data matrix")
    r.add_argument("--x", required=True, help="data matrix CSV")
    r.add_argument("--method", default="lcdmf", choices=[m.value for m in Method])
    r.add_argument("--loss", choices=["lc", "dc"],
                   help="global loss; must agree with --method when given")
    r.add_argument("--ranks", type=_ints, default=[6, 3])
    r.add_argument("--wcon", type=_words, default=None, help="per-layer constraints on W, e.g. simplex,simplex (one value: all layers)")
    r.add_argument("--hcon", type=_words, default=None, help="per-layer constraints on H, e.g. nonneg,sparse:0.33")
    r.add_argument("--lambda", dest="lambda_tilde", type=_floats, default=[10.0],
                   help="layer weight guesses (broadcast to L-1 values)")
    r.add_argument("--mu", type=float, default=1.0)
    r.add_argument("--minvol", type=_floats, default=None, metavar="KAPPAS",
                   help="per-layer volume penalty guesses; enables minimum-volume terms")
    r.add_argument("--delta", type=float, default=0.1)
    r.add_argument("--no-autoscale", action="store_true", help="use --lambda/--minvol values verbatim")
    r.add_argument("--iters", type=int, default=500, help="outer iterations")
    r.add_argument("--it-in", type=int, default=None,
                   help="initialization sweeps before the global phase (default: a tenth of --iters)")
    r.add_argument("--inner-iters", type=int, default=10, help="FPGM iterations per factor update")
    r.add_argument("--init", default="greedy", choices=[m.value for m in InitMode])
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--truth", type=_words, default=None, help="ground-truth bases W1.csv,W2.csv,...")
    common(r)

    b = sub.add_parser("bench", help="paired-seed MRSA benchmark on synthetic data")
    b.add_argument("--variant", choices=VARIANTS, default="minvol")
    b.add_argument("--methods", type=_words, default=list(DEFAULT_METHODS))
    b.add_argument("--eps", type=_floats, default=list(NOISE_LEVELS), help="noise levels (default: full grid)")
    b.add_argument("--trials", type=int, default=25)
    b.add_argument("--n", type=int, default=1000)
    b.add_argument("--iters", type=int, default=500)
    b.add_argument("--seed", type=int, default=0, help="trial t uses seed SEED + t")
    b.add_argument("--jobs", type=int, default=1, help="worker processes")
    common(b)

    g = sub.add_parser("gradcheck", help="finite-difference check of the analytic gradients")
    g.add_argument("--instances", type=int, default=20)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--with-minvol", action="store_true", help="include volume penalties")
    g.add_argument("--inject-sign-flip", action="store_true", help=argparse.SUPPRESS)
    return p


# --------------------------------------------------------------------------
# commands


def cmd_synth(args) -> int:
    t0 = time.perf_counter()
    cfg = SynthConfig(n=args.n, dirichlet_alpha=args.alpha, epsilon=args.eps, seed=args.seed)
    ds = generate_dataset(cfg)
    out = _out_dir(args)
    files = {}
    for name in ("X", "W1", "H1", "W2", "H2"):
        path = out / f"{name}.csv"
        write_matrix(path, getattr(ds, name))
        files[name] = path.name
    manifest = {"command": "synth", "version": __version__, "config": cfg.to_dict(), "files": files}
    write_json(out / "manifest.json", _stamp(manifest, args.timing, t0))
    print(f"wrote {', '.join(files.values())} to {out}")
    return EXIT_OK


def _layer_list(values):
    # a single entry applies to every layer
    if not values:
        return ()
    return values[0] if len(values) == 1 else tuple(values)


def default_it_in(outer_iters: int) -> int:
    """Initialization budget: a tenth of the outer iterations (50 of 500)."""
    return outer_iters // 10


def _run_config(args) -> SolverConfig:
    method = Method(args.method)
    if args.loss is not None:
        wanted = {"lc": LossFamily.LAYER_CENTRIC, "dc": LossFamily.DATA_CENTRIC}[args.loss]
        if _METHOD_LOSS.get(method) is not wanted:
            raise UsageError(f"--loss {args.loss} does not match --method {method.value}")
    return SolverConfig(
        method=method,
        ranks=tuple(args.ranks),
        w_constraints=_layer_list(args.wcon),
        h_constraints=_layer_list(args.hcon),
        lambda_tilde=tuple(args.lambda_tilde) if len(args.lambda_tilde) != 1 else args.lambda_tilde[0],
        mu=args.mu,
        kappa_tilde=tuple(args.minvol) if args.minvol else None,
        delta=args.delta,
        autoscale=not args.no_autoscale,
        outer_iters=args.iters,
        it_in=default_it_in(args.iters) if args.it_in is None else args.it_in,
        init_mode=args.init,
        seed=args.seed,
        fpgm=FpgmConfig(max_inner_iters=args.inner_iters),
    )


def trace_rows(rep) -> tuple:
    """Header and rows of the per-iteration trace table.

    ``penalized_total`` is left empty before the global phase starts.
    """
    L = rep.stack.depth
    header = (["iter"] + [f"layer_centric_{i + 1}" for i in range(L)]
              + [f"data_centric_{i + 1}" for i in range(L)] + ["penalized_total"])
    start = rep.global_start
    rows = []
    for t in range(rep.layer_centric.shape[0]):
        pen = ""
        if start is not None and start <= t < start + len(rep.penalized_total):
            pen = float(rep.penalized_total[t - start])
        rows.append([t] + [float(v) for v in rep.layer_centric[t]]
                    + [float(v) for v in rep.data_centric[t]] + [pen])
    return header, rows


def cmd_run(args) -> int:
    t0 = time.perf_counter()
    cfg = _run_config(args)
    x = read_matrix(args.x)
    truth = [read_matrix(p) for p in args.truth] if args.truth else None
    rep = solve(x, cfg)
    out = _out_dir(args)
    files = {"report": "report.json", "trace": "trace.csv"}
    header, rows = trace_rows(rep)
    write_table(out / files["trace"], header, rows)
    for i, (w, h) in enumerate(zip(rep.stack.W, rep.stack.H), 1):
        for name, m in ((f"W{i}", w), (f"H{i}", h)):
            write_matrix(out / f"{name}.csv", m)
            files[name] = f"{name}.csv"
    doc = {
        "command": "run",
        "version": __version__,
        "input": {"x": str(args.x), "truth": list(args.truth or [])},
        "solver": rep.to_dict(timing=args.timing),
        "files": files,
    }
    doc["penalized_total"] = doc["solver"]["penalized_total"]
    if truth is not None:
        if len(truth) > rep.stack.depth:
            raise UsageError(f"{len(truth)} truth matrices for a {rep.stack.depth}-layer model")
        doc["metrics"] = evaluate(x, rep.stack, truth).to_dict()
    write_json(out / files["report"], _stamp(doc, args.timing, t0))
    last = rep.layer_centric[-1]
    print(f"{rep.method}: final relative layer-centric errors "
          + " ".join(f"{v:.3e}" for v in last) + f" -> {out}")
    if "metrics" in doc:
        print("matched MRSA per layer: " + " ".join(f"{v:.4f}" for v in doc["metrics"]["mrsa"]))
    return EXIT_OK


def cmd_bench(args) -> int:
    t0 = time.perf_counter()
    cells = make_cells(args.variant, args.methods, args.eps, args.trials, args.seed, args.n, args.iters)
    rows = run_bench(cells, jobs=args.jobs)
    summary = summarize(rows)
    out = _out_dir(args)
    write_table(out / "bench_long.csv", ["method", "epsilon", "trial", "seed", "layer", "mrsa"], rows)
    write_table(out / "bench_summary.csv", ["method", "epsilon", "layer", "mean", "std", "count"], summary)
    manifest = {
        "command": "bench",
        "version": __version__,
        "config": {"variant": args.variant, "methods": list(args.methods), "eps": list(args.eps),
                   "trials": args.trials, "n": args.n, "iters": args.iters, "seed": args.seed},
        "files": {"long": "bench_long.csv", "summary": "bench_summary.csv"},
    }
    write_json(out / "manifest.json", _stamp(manifest, args.timing, t0))
    for method, eps, layer, mean, std, count in summary:
        print(f"{method:7s} eps={eps:<8g} layer {layer}: MRSA {mean:.4f} +- {std:.4f} (n={count})")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    res = check_gradients(args.instances, args.seed, args.with_minvol, args.inject_sign_flip)
    print(f"{args.instances} instances, m={SIZES['m']} n={SIZES['n']} ranks={SIZES['ranks']}, "
          f"minvol={'on' if args.with_minvol else 'off'}")
    for (loss, factor, layer), dev in res.deviations.items():
        flag = "ok" if dev < TOLERANCE else "FAIL"
        print(f"  {loss} d/d{factor}{layer}: max rel deviation {dev:.2e} {flag}")
    if not res.ok:
        (loss, factor, layer), dev = res.worst
        print(f"gradient check failed: loss={loss} factor={factor} layer={layer} "
              f"(deviation {dev:.2e} >= {TOLERANCE:g})", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


COMMANDS = {"synth": cmd_synth, "run": cmd_run, "bench": cmd_bench, "gradcheck": cmd_gradcheck}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return COMMANDS[args.command](args)
    except (UsageError, DomainError, DimensionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
