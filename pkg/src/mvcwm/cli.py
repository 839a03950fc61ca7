"""Command-line interface.

Subcommands
-----------
simulate   draw a dataset from a catalog scenario (or a scenario JSON file)
fit        fit a model over a range of G and write a report
select     same as ``fit``; the G range is mandatory
benchmark  rerun one of the simulation studies and write its tables as CSV
evaluate   ARI and misclassification rate between two label files

Exit status is 0 on success, 1 on usage or input errors and 2 when a fit
fails numerically.  Seeds default to ``$MVCWM_SEED`` (or a fixed constant),
so identical command lines give byte-identical CSV output.

Scenario JSON schema
--------------------
``{"name", "G", "p", "q", "r", "N", "seed", "params": {"pi": [G],
"M": [G][q][r], "PhiX": [G][q][q], "PsiX": [G][r][r], "Bstar": [G][p][1+q],
"PhiY": [G][p][p], "PsiY": [G][r][r]}}`` as written by ``simulate --spec-out``.
"""
import argparse
import csv
import io
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from ._random import default_seed
from .cwm import ECMConfig, ModelKind
from .errors import MvcwmError, NumericalError
from .evaluation import ari, misclassification_rate, select_model
from .io import (
    atomic_write_text, load_dataset, load_labels, model_document, save_dataset,
)
from .sim import FitPlan, ScenarioSpec, generate_dataset, replicate_study, scenario, scenario_catalog

EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL = 0, 1, 2

STUDIES = {
    # name: (scenarios, model kinds, G range, sample sizes, default R, full-study R)
    "sim1-a1": (("A1",), ("cwm",), (1, 5), (200, 500), 10, 100),
    "sim1-b1": (("B1",), ("cwm",), (1, 5), (200, 500), 10, 100),
    "sim2": (("A2", "B2", "C2"), ("cwm", "fmr"), (1, 3), (200,), 10, 30),
    "sim3": (tuple(f"sim3-d{d}-g{g}" for d in (2, 3, 4) for g in (2, 3, 4)),
             ("cwm", "mmn"), (1, 5), (200,), 10, 30),
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def parse_g_range(text):
    """``"1..5"``, ``"4"`` or ``"1,3,5"`` to a sorted tuple of ints."""
    text = text.strip()
    try:
        if ".." in text:
            lo, hi = (int(t) for t in text.split(".."))
            values = range(lo, hi + 1)
        else:
            values = [int(t) for t in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid G range {text!r} (use a..b or a,b,c)")
    values = sorted(set(values))
    if not values or values[0] < 1:
        raise argparse.ArgumentTypeError(f"G range {text!r} must be nonempty and positive")
    return tuple(values)


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated parameters of one ``fit``/``select`` run."""

    data: str
    model_kind: ModelKind = ModelKind.MN_CWM
    G_range: tuple = (1, 2, 3, 4, 5)
    seed: int = field(default_factory=default_seed)
    tol: float = 1e-8
    max_iter: int = 1000
    n_soft_repeats: int = 15
    labels: str = None
    report_dir: str = None
    model_out: str = None

    def __post_init__(self):
        object.__setattr__(self, "model_kind", ModelKind(self.model_kind))
        if not self.G_range:
            raise UsageError("G range must not be empty")
        if not self.tol > 0:
            raise UsageError("tolerance must be positive")
        if self.max_iter < 1 or self.n_soft_repeats < 1:
            raise UsageError("max-iter and soft-repeats must be at least 1")

    @property
    def ecm(self):
        return ECMConfig(tol=self.tol, max_iter=self.max_iter)


# ---------------------------------------------------------------------------
# formatting
# ---------------------------------------------------------------------------

def fmt(value):
    """Fixed CSV formatting: floats at 6 significant digits, None as empty."""
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.6g}"
    return str(value)


def csv_text(header, rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([fmt(v) for v in row])
    return buf.getvalue()


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return str(obj)


def json_text(doc):
    return json.dumps(doc, indent=1, sort_keys=True, default=_json_default) + "\n"


# ---------------------------------------------------------------------------
# fit report
# ---------------------------------------------------------------------------

def coefficient_rows(params):
    """``(component, parameter, row, col, value)`` for every parameter entry (1-based)."""
    rows = []
    names = [n for n in ("M", "PhiX", "PsiX", "Bstar", "PhiY", "PsiY",
                         "mu", "SigmaX", "C", "SigmaY") if hasattr(params, n)]
    for g in range(len(params.pi)):
        rows.append((g + 1, "pi", 1, 1, float(params.pi[g])))
        for name in names:
            A = np.atleast_2d(np.asarray(getattr(params, name)[g]))
            if name == "mu":
                A = A.T
            for i in range(A.shape[0]):
                for j in range(A.shape[1]):
                    rows.append((g + 1, name, i + 1, j + 1, float(A[i, j])))
    return rows


def build_report(config, data, selection):
    """FitReport as a dictionary plus its CSV tables."""
    best = selection.best_fit
    per_g = [(e.G, e.loglik, e.n_params, e.bic, e.spurious, "; ".join(e.reasons),
              "ok" if e.error is None else e.error) for e in selection.per_G]
    strategies = []
    for e in selection.per_G:
        if e.init is None:
            continue
        for row in e.init.report:
            strategies.append((e.G, row["strategy"], row["repeat"] + 1, row["loglik"],
                               row["spurious"], row["status"]))
    sizes = np.bincount(best.labels, minlength=best.G + 1)[1:]
    summary = {
        "data": str(config.data),
        "model_kind": config.model_kind.value,
        "n": data.n,
        "dims": {"p": data.p, "q": data.q, "r": data.r},
        "G_range": list(config.G_range),
        "seed": config.seed,
        "best_G": selection.best_G,
        "loglik": best.loglik,
        "bic": best.bic,
        "n_params": best.n_params,
        "converged": best.converged,
        "iterations": best.iterations,
        "cluster_sizes": sizes.tolist(),
        "warning": selection.warning,
        "per_G": [dict(zip(("G", "loglik", "n_params", "bic", "spurious", "reasons", "status"),
                           row)) for row in per_g],
    }
    if data.labels is not None:
        summary["ari"] = ari(data.labels, best.labels)
        summary["eta_percent"] = misclassification_rate(data.labels, best.labels)
    tables = {
        "selection.csv": csv_text(
            ("G", "loglik", "n_params", "bic", "spurious", "reasons", "status"), per_g),
        "strategies.csv": csv_text(
            ("G", "strategy", "repeat", "loglik", "spurious", "status"), strategies),
        "coefficients.csv": csv_text(
            ("component", "parameter", "row", "col", "value"), coefficient_rows(best.params)),
        "clusters.csv": csv_text(
            ("unit", "label"), [(i + 1, int(l)) for i, l in enumerate(best.labels)]),
    }
    return summary, tables


def run_fit(config, out=None):
    out = out or sys.stdout
    data = load_dataset(config.data, config.labels)
    selection = select_model(data, config.G_range, config.model_kind, config.ecm,
                             seed=config.seed, n_soft_repeats=config.n_soft_repeats)
    summary, tables = build_report(config, data, selection)
    best = selection.best_fit
    model_doc = model_document(best, dims=(data.p, data.q, data.r))
    if config.report_dir:
        outdir = Path(config.report_dir)
        for name, text in tables.items():
            atomic_write_text(outdir / name, text)
        atomic_write_text(outdir / "report.json", json_text(summary))
        atomic_write_text(outdir / "model.json", json_text(model_doc))
    if config.model_out:
        atomic_write_text(config.model_out, json_text(model_doc))

    print(f"model {config.model_kind.value}  n={data.n}  p={data.p} q={data.q} r={data.r}",
          file=out)
    out.write(tables["selection.csv"])
    line = f"best_G = {selection.best_G}  loglik = {fmt(best.loglik)}  BIC = {fmt(best.bic)}"
    if "ari" in summary:
        line += f"  ARI = {fmt(summary['ari'])}  eta = {summary['eta_percent']:.2f}%"
    print(line, file=out)
    if selection.warning:
        print(f"warning: {selection.warning}", file=sys.stderr)
    return summary


# ---------------------------------------------------------------------------
# benchmark studies
# ---------------------------------------------------------------------------

def run_benchmark(study, R=None, full=False, jobs=1, seed=None, out_dir=None,
                  sizes=None, n_soft_repeats=15, progress=None):
    """Run a simulation study; returns ``{file name: CSV text}``.

    Every replicate selects G by BIC over the study's G range.  Tables:
    ``summary.csv`` (mean ARI, mean eta, true-G hits), and for the sim1
    studies ``bias_mse.csv`` (aligned true-G coefficients) and
    ``strategies.csv`` (starts reaching the best log-likelihood).
    """
    if study not in STUDIES:
        raise UsageError(f"unknown study {study!r}; choose from {sorted(STUDIES)}")
    names, kinds, (g_lo, g_hi), default_sizes, default_R, full_R = STUDIES[study]
    R = R if R is not None else (full_R if full else default_R)
    seed = default_seed() if seed is None else seed
    sizes = tuple(sizes) if sizes else default_sizes
    summary, bias_rows, strategy_rows = [], [], []
    for name in names:
        for N in sizes:
            spec = scenario(name, N=N)
            for kind in kinds:
                plan = FitPlan(ModelKind(kind), tuple(range(g_lo, g_hi + 1)), n_soft_repeats)
                res = replicate_study(spec, R, plan, seed=seed, jobs=jobs)
                summary.append((name, N, kind, R, spec.G, res.mean_ari, res.mean_eta,
                                res.true_G_hits, res.n_failed))
                if progress:
                    progress(f"{name} N={N} {kind}: ARI={res.mean_ari:.3f} "
                             f"eta={res.mean_eta:.2f}% hits={res.true_G_hits}/{R}")
                if study.startswith("sim1"):
                    if res.bias is not None:
                        for g in range(spec.G):
                            for i in range(spec.params.Bstar.shape[1]):
                                for j in range(spec.params.Bstar.shape[2]):
                                    bias_rows.append((name, N, g + 1, i + 1, j + 1,
                                                      spec.params.Bstar[g, i, j],
                                                      res.bias[g, i, j], res.mse[g, i, j]))
                    for s in ("soft_random", "kmeans", "matnorm_mixture"):
                        strategy_rows.append((name, N, s, res.strategy_wins.get(s, 0)))
    tables = {"summary.csv": csv_text(
        ("scenario", "N", "model", "R", "true_G", "mean_ari", "mean_eta_percent",
         "true_G_hits", "failed"), summary)}
    if study.startswith("sim1"):
        tables["bias_mse.csv"] = csv_text(
            ("scenario", "N", "component", "row", "col", "truth", "bias", "mse"), bias_rows)
        tables["strategies.csv"] = csv_text(("scenario", "N", "strategy", "best_count"),
                                            strategy_rows)
    if out_dir:
        for fname, text in tables.items():
            atomic_write_text(Path(out_dir) / fname, text)
    return tables


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def build_parser():
    parser = _Parser(prog="mvcwm", description="Matrix-normal cluster-weighted models.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    p = sub.add_parser("simulate", help="draw a dataset from a scenario")
    p.add_argument("scenario", help=f"catalog name ({', '.join(scenario_catalog())}) "
                                    "or a scenario JSON file")
    p.add_argument("--n", type=int, default=None, help="sample size (default: the scenario's)")
    p.add_argument("--seed", type=int, default=None, help="default: $MVCWM_SEED")
    p.add_argument("--out", required=True, help="dataset CSV; labels go to <stem>.labels.csv")
    p.add_argument("--spec-out", help="also write the scenario as JSON")

    for name, hlp in (("fit", "fit a model and select G by BIC"),
                      ("select", "select G by BIC over a range (alias of fit)")):
        p = sub.add_parser(name, help=hlp)
        p.add_argument("data", help="long-format dataset CSV")
        p.add_argument("--model", choices=[k.value for k in ModelKind], default="cwm")
        p.add_argument("--g-range", type=parse_g_range, required=name == "select",
                       default=(1, 2, 3, 4, 5), help="a..b or a,b,c (default 1..5)")
        p.add_argument("--seed", type=int, default=None, help="default: $MVCWM_SEED")
        p.add_argument("--labels", help="true labels (default: <stem>.labels.csv if present)")
        p.add_argument("--report", help="directory for CSV/JSON report files")
        p.add_argument("--save-model", help="write the selected model as JSON")
        p.add_argument("--tol", type=float, default=1e-8, help="relative stopping tolerance")
        p.add_argument("--max-iter", type=int, default=1000)
        p.add_argument("--soft-repeats", type=int, default=15,
                       help="soft random starts per G")

    p = sub.add_parser("benchmark", help="rerun a simulation study")
    p.add_argument("study", choices=sorted(STUDIES))
    p.add_argument("--reps", type=int, default=None, help="replicates per cell (default 10)")
    p.add_argument("--full", action="store_true",
                   help="published replicate counts (100 for sim1, 30 otherwise)")
    p.add_argument("--jobs", type=int, default=1, help="worker processes across replicates")
    p.add_argument("--seed", type=int, default=None, help="default: $MVCWM_SEED")
    p.add_argument("--sizes", default=None, help="comma-separated sample sizes to run")
    p.add_argument("--soft-repeats", type=int, default=15)
    p.add_argument("--out", default=None, help="directory for the CSV tables")

    p = sub.add_parser("evaluate", help="compare predicted and true labels")
    p.add_argument("pred", help="unit,label CSV")
    p.add_argument("truth", help="unit,label CSV")
    p.add_argument("--out", help="write the metrics as JSON")
    return parser


def _cmd_simulate(args):
    src = Path(args.scenario)
    if src.suffix == ".json" and src.exists():
        spec = ScenarioSpec.from_json(src.read_text())
    else:
        try:
            spec = scenario(args.scenario)
        except KeyError as exc:
            raise UsageError(exc.args[0]) from None
    spec = spec.with_(N=args.n if args.n is not None else spec.N,
                      seed=args.seed if args.seed is not None else default_seed())
    data = generate_dataset(spec)
    save_dataset(data, args.out)
    if args.spec_out:
        atomic_write_text(args.spec_out, spec.to_json() + "\n")
    print(f"wrote {spec.N} units of scenario {spec.name} (G={spec.G}, "
          f"p={data.p} q={data.q} r={data.r}) to {args.out}")


def _cmd_fit(args):
    config = ExperimentConfig(
        data=args.data, model_kind=args.model, G_range=args.g_range,
        seed=args.seed if args.seed is not None else default_seed(),
        tol=args.tol, max_iter=args.max_iter, n_soft_repeats=args.soft_repeats,
        labels=args.labels, report_dir=args.report, model_out=args.save_model)
    run_fit(config)


def _cmd_benchmark(args):
    sizes = None
    if args.sizes:
        try:
            sizes = [int(s) for s in args.sizes.split(",")]
        except ValueError:
            raise UsageError(f"invalid --sizes {args.sizes!r}") from None
    if args.jobs < 1:
        raise UsageError("--jobs must be at least 1")
    tables = run_benchmark(args.study, R=args.reps, full=args.full, jobs=args.jobs,
                           seed=args.seed, out_dir=args.out, sizes=sizes,
                           n_soft_repeats=args.soft_repeats,
                           progress=lambda msg: print(msg, file=sys.stderr))
    sys.stdout.write(tables["summary.csv"])


def _cmd_evaluate(args):
    pred = load_labels(args.pred)
    truth = load_labels(args.truth)
    if pred.shape != truth.shape:
        raise UsageError(f"label files cover {pred.size} and {truth.size} units")
    metrics = {"n": int(truth.size), "ari": ari(truth, pred),
               "eta_percent": misclassification_rate(truth, pred)}
    print(f"ARI = {fmt(metrics['ari'])}")
    print(f"eta = {metrics['eta_percent']:.2f}%")
    if args.out:
        atomic_write_text(args.out, json_text(metrics))


_COMMANDS = {
    "simulate": _cmd_simulate,
    "fit": _cmd_fit,
    "select": _cmd_fit,
    "benchmark": _cmd_benchmark,
    "evaluate": _cmd_evaluate,
}


def main(argv=None):
    """Entry point; returns the process exit status."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    if args.command is None:
        parser.print_usage(sys.stderr)
        print("mvcwm: error: a command is required", file=sys.stderr)
        return EXIT_USAGE
    try:
        _COMMANDS[args.command](args)
    except NumericalError as exc:
        print(f"mvcwm: numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (UsageError, MvcwmError, OSError, ValueError) as exc:
        print(f"mvcwm: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
