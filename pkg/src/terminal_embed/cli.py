"""Command-line entry point: ``terminal-embed <subcommand> ...``.

Subcommands
-----------
width   Monte-Carlo Gaussian width of the unit secants of a data file.
advise  Recommended target dimension from a width or manifold parameters.
embed   Terminal embedding of query points; writes embedded.csv.
bench   Compressive nearest-neighbour sweep; writes sweep.csv and reports.json.

Exit codes: 0 success, 1 infeasible extension program, 2 I/O or format
error, 3 invalid flags.  Every file-producing run also writes
``manifest.json`` (flags, seeds, sha256 of every input and output).
"""
import argparse
import json
import os
import platform
import sys
from pathlib import Path


from . import __version__
from .datasets import SplitSpec, gen_two_manifolds, read_csv, read_idx, split
from .errors import (DomainError, FormatError, InfeasibleError, InsufficientData,
                     TerminalEmbedError)
from .geometry import (ManifoldParams, gaussian_width_mc, manifold_width_bound,
                       target_dimension, unit_secants)
from .harness import DEFAULT_VARIANTS, VARIANTS, run_experiment, write_reports_json, write_sweep_csv
from .jl import load_jl, sample_jl, save_jl
from .persist import save_model, sha256_file, write_embedded_csv
from .seeding import derive_seed, generator_record
from .solver import Objective, PiConvention, SolverConfig, TerminalModel, embed_batch

EXIT_OK, EXIT_INFEASIBLE, EXIT_IO, EXIT_FLAGS = 0, 1, 2, 3


class FlagError(Exception):
    """Flag combination rejected before any computation."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_FLAGS, f"{self.prog}: error: {message}\n")


def default_threads() -> int:
    env = os.environ.get("TERMINAL_EMBED_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise FlagError(f"TERMINAL_EMBED_THREADS={env!r} is not an integer") from None
    return os.cpu_count() or 1


def _int_list(text):
    try:
        vals = [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if not vals or min(vals) < 1:
        raise argparse.ArgumentTypeError("values must be positive integers")
    return vals


def _variant_list(text):
    vals = [t.strip().upper() for t in text.split(",") if t.strip()]
    bad = [v for v in vals if v not in VARIANTS]
    if bad or not vals:
        raise argparse.ArgumentTypeError(f"unknown variant(s) {bad}; choose from {', '.join(VARIANTS)}")
    return vals


def _manifold(text):
    parts = text.split(",")
    if len(parts) not in (3, 4):
        raise argparse.ArgumentTypeError("expected d,tau,vol[,bvol]")
    try:
        d = int(parts[0])
        rest = [float(p) for p in parts[1:]]
    except ValueError:
        raise argparse.ArgumentTypeError(f"cannot parse {text!r}")
    return d, *rest


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="terminal-embed", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("--seed", type=int, default=0, help="root seed for every random substream")
    p.add_argument("--threads", type=int, default=None,
                   help="parallel query solves (default: $TERMINAL_EMBED_THREADS or core count)")
    p.add_argument("--output-dir", type=Path, default=Path("."), help="directory for output files")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    w = sub.add_parser("width", help="Gaussian width of the unit secants of a data set")
    _add_input(w, "--input")
    w.add_argument("--trials", type=int, default=1000)
    w.add_argument("--max-pairs", type=int, default=None, help="subsample pairs beyond this count")
    w.add_argument("--dedup-tol", type=float, default=0.0)

    a = sub.add_parser("advise", help="target dimension for a requested distortion")
    src = a.add_mutually_exclusive_group(required=True)
    src.add_argument("--width", type=float, help="Gaussian width of the unit secants")
    src.add_argument("--manifold", type=_manifold, metavar="d,tau,vol[,bvol]",
                     help="intrinsic dimension, reach, volume, boundary volume")
    a.add_argument("--eps", type=float, required=True)
    a.add_argument("--p", type=float, default=0.01, help="failure probability")
    a.add_argument("--c-prime", type=float, default=1.0,
                   help="distribution constant (uncalibrated placeholder)")

    e = sub.add_parser("embed", help="embed query points with a terminal embedding")
    _add_input(e, "--train")
    e.add_argument("--queries", type=Path, required=True, help="query CSV (same column layout)")
    mat = e.add_mutually_exclusive_group(required=True)
    mat.add_argument("--m", type=int, help="target dimension of a fresh matrix")
    mat.add_argument("--matrix-in", type=Path, help="reuse a saved JLM1 matrix")
    e.add_argument("--matrix-out", type=Path, help="also save the matrix here")
    e.add_argument("--model-out", type=Path, help="directory for matrix + model manifest")
    _add_solver(e)

    b = sub.add_parser("bench", help="classification sweep over variants and m")
    b.add_argument("--dataset", default="two-circles",
                   help="two-circles | csv:PATH | idx:IMAGES,LABELS")
    b.add_argument("--split", type=_int_list, default=[100, 100], metavar="TRAIN,TEST",
                   help="per-class train and test counts")
    b.add_argument("--split-strategy", default="UNIFORM_RANDOM",
                   choices=["UNIFORM_RANDOM", "DOWNSAMPLED_SEQUENCE"])
    b.add_argument("--m-sweep", type=_int_list, default=[5, 10, 20, 40, 80])
    b.add_argument("--variants", type=_variant_list, default=list(DEFAULT_VARIANTS))
    b.add_argument("--trials", type=int, default=1)
    g = b.add_argument_group("two-circles parameters")
    g.add_argument("--dim", type=int, default=50)
    g.add_argument("--n-per-class", type=int, default=200)
    g.add_argument("--radius", type=float, default=1.0)
    g.add_argument("--separation", type=float, default=1.0)
    g.add_argument("--delta", type=float, default=0.05)
    _add_solver(b, variant=False)
    return p


def _add_input(p, flag):
    p.add_argument(flag, type=Path, required=True, help="CSV file or IDX image file")
    p.add_argument("--format", choices=["csv", "idx"], default="csv")
    p.add_argument("--labels", type=Path, help="IDX label file (idx format)")
    p.add_argument("--has-labels", action="store_true", help="CSV rows end with an integer label")


def _add_solver(p, variant=True):
    p.add_argument("--eps", type=float, default=0.1)
    if variant:
        p.add_argument("--variant", default="QUADRATIC", type=str.upper,
                       choices=[o.value for o in Objective])
    p.add_argument("--pi-convention", default="SCALED", type=str.upper,
                   choices=[c.value for c in PiConvention])
    p.add_argument("--max-iter", type=int, default=5000)
    p.add_argument("--tol-feas", type=float, default=1e-6)
    p.add_argument("--max-relax", type=int, default=3)


# ---------------------------------------------------------------------------

def _solver_config(args, objective="QUADRATIC") -> SolverConfig:
    try:
        return SolverConfig(eps=args.eps, objective=getattr(args, "variant", objective),
                            max_iter=args.max_iter, tol_feas=args.tol_feas,
                            max_relax=args.max_relax, pi_convention=args.pi_convention)
    except DomainError as exc:
        raise FlagError(str(exc)) from None


def _load(path, fmt, labels=None, has_labels=False):
    if fmt == "idx":
        if labels is None:
            raise FlagError("--format idx needs --labels")
        return read_idx(path, labels), [path, labels]
    return read_csv(path, has_labels), [path]


def _manifest(args, argv, inputs, outputs, extra=None):
    flags = {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(args).items()}
    doc = {
        "schema": "ter-manifest/1",
        "package_version": __version__,
        "argv": list(argv),
        "flags": flags,
        "seed": args.seed,
        "random": generator_record(),
        "python": platform.python_version(),
        "inputs": {str(p): sha256_file(p) for p in inputs},
        "outputs": {str(p): sha256_file(p) for p in outputs},
    }
    doc.update(extra or {})
    path = args.output_dir / "manifest.json"
    path.write_text(json.dumps(doc, indent=2, default=str) + "\n")
    return path


def cmd_width(args, argv):
    if args.trials < 2:
        raise FlagError("--trials must be >= 2")
    X, _ = _load(args.input, args.format, args.labels, args.has_labels)
    S = unit_secants(X, dedup_tol=args.dedup_tol, max_pairs=args.max_pairs, seed=args.seed)
    w, se = gaussian_width_mc(S, trials=args.trials, seed=args.seed)
    print(json.dumps({"width": w, "std_error": se, "secant_count": len(S),
                      "pairs_used": S.meta["pairs_used"], "subsampled": S.meta["subsampled"]}))
    return EXIT_OK


def cmd_advise(args, argv):
    try:
        if args.width is not None:
            width, source = args.width, "given"
        else:
            width, source = manifold_width_bound(ManifoldParams(*args.manifold)), "manifold_bound"
        m = target_dimension(width, args.eps, args.p, args.c_prime)
    except DomainError as exc:
        raise FlagError(str(exc)) from None
    print(json.dumps({"m_recommended": m, "width": width, "width_source": source,
                      "eps": args.eps, "p": args.p, "c_prime": args.c_prime}))
    return EXIT_OK


def cmd_embed(args, argv):
    cfg = _solver_config(args)
    if args.m is not None and args.m < 1:
        raise FlagError("--m must be >= 1")
    X, train_inputs = _load(args.train, args.format, args.labels, args.has_labels)
    Q = read_csv(args.queries, args.has_labels)
    inputs = train_inputs + [args.queries]
    if args.matrix_in is not None:
        A = load_jl(args.matrix_in)
        inputs.append(args.matrix_in)
    else:
        A = sample_jl(args.m, X.dim, derive_seed(args.seed, f"jl/m={args.m}"))
    model = TerminalModel(X, A, cfg)
    results = embed_batch(model, Q, threads=args.threads)
    out = [write_embedded_csv(results, args.output_dir / "embedded.csv")]
    if args.matrix_out is not None:
        out.append(save_jl(A, args.matrix_out))
    if args.model_out is not None:
        out.append(save_model(model, args.model_out, train_inputs, args.format, args.has_labels))
    failed = [k for k, r in enumerate(results) if r.failed]
    _manifest(args, argv, inputs, out, {
        "jl_seed": A.seed, "m": A.m, "config": cfg.to_dict(),
        "failed_queries": failed,
        "relaxed_queries": sum(r.relaxations > 0 for r in results)})
    if failed:
        print(f"terminal-embed: {len(failed)} of {len(results)} queries infeasible after "
              f"{cfg.max_relax} relaxations; best-effort rows written", file=sys.stderr)
        return EXIT_INFEASIBLE
    return EXIT_OK


def _bench_data(args):
    kind, _, rest = args.dataset.partition(":")
    if kind == "two-circles":
        data = gen_two_manifolds(args.dim, args.n_per_class, args.separation, args.delta,
                                 seed=derive_seed(args.seed, "dataset"), radius=args.radius)
        return data, []
    if kind == "csv" and rest:
        return read_csv(rest, True), [rest]
    if kind == "idx" and rest.count(",") == 1:
        images, labels = rest.split(",")
        return read_idx(images, labels), [images, labels]
    raise FlagError(f"cannot interpret --dataset {args.dataset!r}")


def cmd_bench(args, argv):
    cfg = _solver_config(args)
    if len(args.split) != 2:
        raise FlagError("--split takes TRAIN,TEST")
    if args.trials < 1:
        raise FlagError("--trials must be >= 1")
    spec = SplitSpec(args.split[0], args.split[1], seed=derive_seed(args.seed, "split"),
                     strategy=args.split_strategy)
    data, inputs = _bench_data(args)
    train, test = split(data, spec)
    reports = run_experiment(train, test, args.m_sweep, args.variants, cfg,
                             seed=args.seed, trials=args.trials, threads=args.threads)
    out = [write_sweep_csv(reports, args.output_dir / "sweep.csv"),
           write_reports_json(reports, args.output_dir / "reports.json")]
    _manifest(args, argv, inputs, out, {
        "config": cfg.to_dict(),
        "split": {"train_per_class": spec.train_per_class, "test_per_class": spec.test_per_class,
                  "seed": spec.seed, "strategy": spec.strategy.value},
        "jl_seeds": sorted({r.seeds.get("jl_seed") for r in reports if "jl_seed" in r.seeds}),
        "failed_runs": [f"{r.variant}/m={r.m}/trial={r.trial}" for r in reports if r.error]})
    for r in reports:
        if r.error:
            print(f"terminal-embed: {r.variant} m={r.m} trial={r.trial}: {r.error}", file=sys.stderr)
    if any(r.infeasible_queries for r in reports):
        return EXIT_INFEASIBLE
    return EXIT_OK


COMMANDS = {"width": cmd_width, "advise": cmd_advise, "embed": cmd_embed, "bench": cmd_bench}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        if args.threads is None:
            args.threads = default_threads()
        if args.threads < 1:
            raise FlagError("--threads must be >= 1")
        args.output_dir.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](args, argv)
    except FlagError as exc:
        print(f"terminal-embed: error: {exc}", file=sys.stderr)
        return EXIT_FLAGS
    except InfeasibleError as exc:
        print(f"terminal-embed: infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (FormatError, InsufficientData, OSError) as exc:
        print(f"terminal-embed: {exc}", file=sys.stderr)
        return EXIT_IO
    except TerminalEmbedError as exc:
        print(f"terminal-embed: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
