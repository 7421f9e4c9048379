"""Command-line front end: ``ttreg --task {equiv,nonstat,mqar,bound}``.

Each task writes a comma-separated table with one header row to ``--out``
(stdout by default).  Floats carry 9 significant digits and rows are sorted,
so a fixed set of flags always produces the same bytes.  ``--figure PATH``
additionally renders the table with matplotlib.
"""

import argparse
import csv
import io
import sys

import numpy as np

from ttreg import checks, memory, tasks
from ttreg.batch import batch_ols_prefixes
from ttreg.errors import TTRegError

EXIT_FAIL = 1
EXIT_ERROR = 2

NONSTAT_LAYERS = ("linear_attention_norm", "rls", "nadaraya_watson", "local_linear")
MQAR_LAYERS = ("linear_attention", "rls")
BOUND_TOL = 1e-9


def _int_list(text):
    return [int(x) for x in text.split(",") if x.strip()]


def _name_list(text):
    return [x.strip() for x in text.split(",") if x.strip()]


def build_parser():
    p = argparse.ArgumentParser(prog="ttreg", description=__doc__.splitlines()[0])
    p.add_argument("--task", required=True, choices=("equiv", "nonstat", "mqar", "bound"))
    p.add_argument("--layers", type=_name_list, help="comma list of layer names")
    p.add_argument("--seeds", type=_int_list, help="comma list of integer seeds")
    p.add_argument("--seed", type=int, help="shorthand for a single seed")
    p.add_argument("--P", type=_int_list, help="MQAR pair counts (comma list)")
    p.add_argument(
        "--T", type=_int_list,
        help="nonstat horizon, MQAR context lengths (comma list), or bound rows per instance",
    )
    p.add_argument("--d-model", type=int, help="embedding width (mqar) or key dimension (nonstat, bound)")
    p.add_argument("--embedding", default="auto", choices=("auto", "orthonormal", "cues_only", "gaussian"))
    p.add_argument("--instances", type=int, help="MQAR instances per seed, or bound instances")
    p.add_argument("--rho", type=float, default=0.3)
    p.add_argument("--noise", type=float, default=0.02)
    p.add_argument("--coeff-fast", type=float, default=0.9)
    p.add_argument("--coeff-slow", type=float, default=0.999)
    p.add_argument("--ridge", type=float, default=1e-6)
    p.add_argument("--jitter", type=float, default=tasks.NONSTAT_JITTER)
    p.add_argument("--bandwidth", type=float, default=tasks.NONSTAT_BANDWIDTH)
    p.add_argument("--gamma", type=float, default=tasks.DEFAULT_GAMMA)
    p.add_argument("--out", help="output CSV path (default: stdout)")
    p.add_argument("--figure", help="also render a figure to this path")
    p.add_argument("--perturb", action="store_true", help=argparse.SUPPRESS)
    return p


def _fmt(x):
    if isinstance(x, (float, np.floating)):
        return f"{x:.9g}"
    return str(x)


def render_table(header, rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows([[_fmt(x) for x in row] for row in rows])
    return buf.getvalue()


def _seeds(args, default):
    if args.seed is not None:
        return [args.seed]
    return args.seeds if args.seeds else list(default)


def _layer(args, name):
    return tasks.standard_layer(
        name, ridge=args.ridge, gamma=args.gamma, bandwidth=args.bandwidth, jitter=args.jitter
    )


def cmd_equiv(args):
    rows = []
    ok = True
    for check, dev in checks.run_checks(_seeds(args, range(20)), perturb=args.perturb):
        passed = dev <= check.tolerance
        ok &= passed
        rows.append((check.name, float(dev), float(check.tolerance), "pass" if passed else "FAIL"))
    rows.sort()
    return ("check", "max_deviation", "tolerance", "status"), rows, ok


def cmd_nonstat(args):
    names = args.layers or list(NONSTAT_LAYERS)
    layers = {n: _layer(args, n) for n in names}
    horizon = args.T[0] if args.T else 256
    rows = []
    for seed in _seeds(args, range(20)):
        config = tasks.NonstatConfig(
            key_dim=args.d_model or 64,
            horizon=horizon,
            coeff_fast=args.coeff_fast,
            coeff_slow=args.coeff_slow,
            noise_scale=args.noise,
            rho=args.rho,
            seed=seed,
        )
        keys, targets = tasks.gen_nonstationary(config)
        for name, layer in layers.items():
            losses = tasks.eval_online_loss(layer, keys, targets)
            rows.extend((t, name, seed, float(l)) for t, l in enumerate(losses, start=1))
    rows.sort()
    return ("step", "layer_name", "seed", "loss"), rows, True


def _embedding_kind(args, P, d):
    if args.embedding != "auto":
        return args.embedding
    return "cues_only" if P <= d else "gaussian"


def cmd_mqar(args):
    names = args.layers or list(MQAR_LAYERS)
    layers = {n: _layer(args, n) for n in names}
    d = args.d_model or 64
    seeds = _seeds(args, range(20))
    per_seed = args.instances or 5
    rows = []
    for P in args.P or [64, 128]:
        kind = _embedding_kind(args, P, d)
        for T in args.T or [64, 128, 256, 512, 1024]:
            instances = [
                inst for seed in seeds for inst in tasks.mqar_instances(P, T, d, kind, seed, per_seed)
            ]
            for name, layer in layers.items():
                acc = tasks.eval_recall(layer, instances)
                rows.append((P, T, d, kind, name, float(acc), len(instances)))
    rows.sort()
    header = ("P", "T", "d_model", "embedding_kind", "layer_name", "accuracy", "num_instances")
    return header, rows, True


def cmd_bound(args):
    t = args.T[0] if args.T else 24
    d_k = args.d_model or 6
    d_v = 3
    rows = []
    ok = True
    for seed in _seeds(args, [0]):
        for i in range(args.instances or 100):
            rng = np.random.default_rng([seed, i])
            K = rng.standard_normal((t, d_k))
            V = rng.standard_normal((t, d_v))
            q = rng.standard_normal(d_k)
            bound = memory.norm_bound(K, V, q)
            y = float(np.linalg.norm(batch_ols_prefixes(K, V, 0.0)[-1] @ q))
            ratio = y / bound
            ok &= ratio <= 1.0 + BOUND_TOL
            rows.append((seed, i, y, float(bound), float(ratio)))
    rows.sort()
    # instance ids are contiguous across seeds
    rows = [(n, y, b, r) for n, (_s, _i, y, b, r) in enumerate(rows)]
    return ("instance", "y_norm", "bound", "ratio"), rows, ok


COMMANDS = {"equiv": cmd_equiv, "nonstat": cmd_nonstat, "mqar": cmd_mqar, "bound": cmd_bound}


def _render_figure(args, rows):
    from ttreg import plotting

    if args.task == "nonstat":
        horizon = args.T[0] if args.T else 256
        plotting.plot_nonstat(rows, args.figure, switch_step=horizon // 4)
    elif args.task == "mqar":
        plotting.plot_mqar(rows, args.figure)
    elif args.task == "bound":
        plotting.plot_bound(rows, args.figure)
    else:
        plotting.plot_equiv(rows, args.figure)


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        header, rows, ok = COMMANDS[args.task](args)
    except TTRegError as exc:
        print(f"ttreg: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR
    text = render_table(header, rows)
    try:
        if args.out:
            with open(args.out, "w", newline="") as fh:
                fh.write(text)
        else:
            sys.stdout.write(text)
        if args.figure:
            _render_figure(args, rows)
    except OSError as exc:
        print(f"ttreg: cannot write {exc.filename or args.out}: {exc.strerror}", file=sys.stderr)
        return EXIT_ERROR
    if not ok:
        print(f"ttreg: {args.task} failed its tolerance check", file=sys.stderr)
        return EXIT_FAIL
    return 0


if __name__ == "__main__":
    sys.exit(main())
