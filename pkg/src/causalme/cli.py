"""Command-line front end.

Five subcommands cover the artifact workflow: ``simulate`` writes datasets,
``discover`` runs a discovery method on data (or a model in oracle mode),
``assumptions`` audits a model, ``eval`` scores a discovery result against
ground truth, and ``curves`` emits the analytic reference tables.

Every run owns one output directory containing ``manifest.json`` (config,
seed, library versions, input hashes — no timestamps, so identical
invocations produce byte-identical trees), the result files, and a log.
Errors exit with distinct codes (2 config, 3 ambiguity, 4 inconsistency,
5 convergence failure) and leave an ``error.json`` describing the failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .assumptions import check_assumptions, structural_groups
from .errors import AmbiguityError, CausalmeError, ConfigError
from .factor import identifiability_thresholds
from .fixtures import FIXTURES, get_fixture
from .graphs import (Cpdag, Dag, cpdag_of, dag_to_dot, leaf_augmented_cpdag,
                     model_from_json, model_to_json)
from .groups import ESTIMATED_TOLERANCES, Tolerances
from .pipelines import (fa_dpc, fa_dpc_oracle, fa_equvar, fa_equvar_oracle,
                        oica_rgd, oica_rgd_oracle)
from .simulate import (Dataset, analytic_rho12, analytic_rho13_2,
                       read_dataset_csv, sample_observations,
                       write_dataset_csv)

_METHODS = ("fa-equvar", "fa-dpc", "oica-rgd")


# ---------------------------------------------------------------------------
# run directory plumbing


def _file_hash(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def _setup_run(out_dir: str, command: str, params: dict,
               input_paths: dict) -> tuple[Path, logging.Logger]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "tool": "causalme",
        "version": __version__,
        "command": command,
        "params": {k: v for k, v in sorted(params.items())
                   if k not in ("out", "func", "command")},
        "versions": {
            "python": ".".join(map(str, sys.version_info[:3])),
            "numpy": np.__version__,
        },
        "input_hashes": {name: _file_hash(p)
                         for name, p in sorted(input_paths.items())},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2,
                                                  sort_keys=True) + "\n")
    logger = logging.getLogger(f"causalme.run.{id(out)}")
    logger.setLevel(logging.INFO)
    logger.handlers.clear()
    handler = logging.FileHandler(out / "run.log", mode="w")
    handler.setFormatter(logging.Formatter("%(levelname)s %(message)s"))
    logger.addHandler(handler)
    logger.propagate = False
    return out, logger


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _close_log(logger: logging.Logger) -> None:
    for h in list(logger.handlers):
        h.close()
        logger.removeHandler(h)


# ---------------------------------------------------------------------------
# evaluation report


@dataclass(eq=False)
class EvalReport:
    """Structure-recovery metrics for one result against one truth."""

    shd: int
    edge_precision: float
    edge_recall: float
    leaf_accuracy: float | None
    groups_exact: bool | None
    group_jaccard: list | None
    coef_max_abs_error: float | None
    details: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.shd < 0:
            raise ConfigError("shd cannot be negative")
        for v in (self.edge_precision, self.edge_recall):
            if not 0.0 <= v <= 1.0:
                raise ConfigError("precision/recall must lie in [0, 1]")

    def to_json(self) -> dict:
        return {
            "shd": self.shd,
            "edge_precision": self.edge_precision,
            "edge_recall": self.edge_recall,
            "leaf_accuracy": self.leaf_accuracy,
            "groups_exact": self.groups_exact,
            "group_jaccard": self.group_jaccard,
            "coef_max_abs_error": self.coef_max_abs_error,
            "details": self.details,
        }


def _result_cpdag(result: dict, n: int) -> Cpdag:
    if result.get("cpdag") is not None:
        cp = Cpdag.from_json(result["cpdag"])
        if cp.n != n:
            raise ConfigError(f"result has {cp.n} nodes, truth has {n}")
        return cp
    graph = result.get("graph")
    if graph is None:
        # unresolved decomposition: score as an empty graph
        return Cpdag(n=n, directed=frozenset(), undirected=frozenset())
    if graph["n"] != n:
        raise ConfigError(f"result has {graph['n']} nodes, truth has {n}")
    dag = Dag(n, frozenset((u, v) for u, v, _ in graph["edges"]))
    return cpdag_of(dag)


def evaluate(truth_model, result: dict) -> EvalReport:
    """Score a discovery-result JSON object against a ground-truth model.

    Results that report a leaf set are compared against the leaf-augmented
    pattern (edges into known leaves are compelled); everything else against
    the plain equivalence class.
    """
    n = truth_model.sem.dag.n
    if result.get("leaf_set"):
        truth_cpdag = leaf_augmented_cpdag(truth_model.sem.dag)
    else:
        truth_cpdag = cpdag_of(truth_model.sem.dag)
    est_cpdag = _result_cpdag(result, n)
    true_skel = truth_cpdag.skeleton()
    est_skel = est_cpdag.skeleton()
    hit = len(true_skel & est_skel)
    precision = hit / len(est_skel) if est_skel else 1.0
    recall = hit / len(true_skel) if true_skel else 1.0

    leaf_accuracy = None
    reported = result.get("leaf_set")
    if reported:
        true_leaves = {i for i in range(n)
                       if not truth_model.sem.dag.children(i)}
        est_leaves = set(reported)
        leaf_accuracy = sum((i in est_leaves) == (i in true_leaves)
                            for i in range(n)) / n

    groups_exact = None
    jaccard = None
    if result.get("groups") is not None:
        truth_groups = [set(g.members)
                        for g in structural_groups(truth_model.sem.dag)]
        est_groups = [set(g["members"]) for g in result["groups"]["groups"]]
        groups_exact = truth_groups == est_groups
        jaccard = [len(a & b) / len(a | b)
                   for a, b in zip(truth_groups, est_groups)]

    coef_err = None
    graph = result.get("graph")
    if graph is not None and result.get("groups") is not None:
        B = np.zeros((n, n))
        for u, v, w in graph["edges"]:
            B[v, u] = w
        coef_err = float(np.max(np.abs(B - truth_model.sem.B)))

    return EvalReport(
        shd=truth_cpdag.shd(est_cpdag),
        edge_precision=precision,
        edge_recall=recall,
        leaf_accuracy=leaf_accuracy,
        groups_exact=groups_exact,
        group_jaccard=jaccard,
        coef_max_abs_error=coef_err,
        details={"n": n, "true_edges": len(true_skel),
                 "estimated_edges": len(est_skel)},
    )


# ---------------------------------------------------------------------------
# curve tables


def attenuation_table(gammas, rhos) -> tuple[list, list]:
    header = ["gamma", "rho_tilde", "rho12", "rho13_2"]
    rows = [[g, r, analytic_rho12(r, g), analytic_rho13_2(r, g)]
            for r in rhos for g in gammas]
    return header, rows


def threshold_table(n_min: int, n_max: int) -> tuple[list, list]:
    header = ["n", "min_leaf_fraction", "max_factors"]
    rows = []
    for n in range(n_min, n_max + 1):
        phi, c = identifiability_thresholds(n)
        rows.append([n, c, phi])
    return header, rows


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([f"{v:.12g}" if isinstance(v, float) else v
                             for v in row])


def _plot_curves(kind: str, header, rows, png_path: Path) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    if kind == "attenuation":
        data = np.array(rows, dtype=float)
        for r in np.unique(data[:, 1]):
            block = data[data[:, 1] == r]
            ax.plot(block[:, 0], block[:, 2], label=f"corr, base {r:g}")
            ax.plot(block[:, 0], block[:, 3], "--",
                    label=f"partial corr, base {r:g}")
        ax.set_xlabel("noise ratio")
        ax.set_ylabel("observed (partial) correlation")
        ax.legend(fontsize=7)
    else:
        data = np.array(rows, dtype=float)
        ax.plot(data[:, 0], data[:, 1])
        ax.set_xlabel("number of observed variables")
        ax.set_ylabel("minimum leaf fraction")
    fig.tight_layout()
    fig.savefig(png_path, dpi=120)
    plt.close(fig)


# ---------------------------------------------------------------------------
# subcommands


def _load_model(path):
    with open(path) as fh:
        return model_from_json(json.load(fh))


def cmd_simulate(args) -> int:
    if bool(args.fixture) == bool(args.model):
        raise ConfigError("exactly one of --fixture / --model is required")
    inputs = {}
    if args.fixture:
        model = get_fixture(args.fixture)
    else:
        model = _load_model(args.model)
        inputs["model"] = args.model
    out, log = _setup_run(args.out, "simulate", vars(args), inputs)
    data = sample_observations(model, args.n_samples, seed=args.seed,
                               include_latent=args.include_latent)
    model_json = model_to_json(model)
    model_hash = hashlib.sha256(
        json.dumps(model_json, sort_keys=True).encode()).hexdigest()
    data.meta.update({"seed": args.seed, "model_sha256": model_hash})
    write_dataset_csv(out / "data.csv", data)
    if data.latent is not None:
        write_dataset_csv(out / "latent.csv",
                          Dataset(data.latent, data.labels, dict(data.meta)))
    _write_json(out / "model.json", model_json)
    log.info("simulated %d rows x %d columns (seed %d)",
             data.values.shape[0], data.values.shape[1], args.seed)
    _close_log(log)
    return 0


def _tolerances(args) -> Tolerances | None:
    fields = {"ds_rel": args.tol_ds, "group_rel": args.tol_group,
              "coef_tol": args.tol_coef, "ci_tol": args.tol_ci,
              "det_tol": args.tol_det, "recon_tol": args.tol_recon}
    given = {k: v for k, v in fields.items() if v is not None}
    if not given:
        return None
    base = ESTIMATED_TOLERANCES.__dict__ | given
    return Tolerances(**base)


def cmd_discover(args) -> int:
    if args.method not in _METHODS:
        raise ConfigError(f"unknown method {args.method!r}; choose from {_METHODS}")
    if args.oracle:
        if not args.model:
            raise ConfigError("--oracle requires --model")
        inputs = {"model": args.model}
    else:
        if not args.data:
            raise ConfigError("--data is required unless --oracle is given")
        inputs = {"data": args.data}
    out, log = _setup_run(args.out, "discover", vars(args), inputs)
    try:
        result, labels = _run_discover(args, log)
    except CausalmeError as err:
        _write_json(out / "error.json", {
            "error": type(err).__name__,
            "exit_code": err.exit_code,
            "message": str(err),
            "candidates": getattr(err, "candidates", []),
        })
        log.error("%s: %s", type(err).__name__, err)
        _close_log(log)
        raise
    payload = result.to_json()
    payload["method"] = args.method
    _write_json(out / "result.json", payload)
    dot = _result_dot(result, labels)
    if dot is not None:
        (out / "result.dot").write_text(dot)
    log.info("method %s finished", args.method)
    _close_log(log)
    return 0


def _run_discover(args, log):
    leaf = None if args.auto_leaf else args.leaf_count
    if args.oracle:
        model = _load_model(args.model)
        labels = model.sem.dag.labels or None
        if args.method == "fa-equvar":
            return fa_equvar_oracle(model, max_cond=args.max_cond), labels
        if args.method == "fa-dpc":
            return fa_dpc_oracle(model, max_cond=args.max_cond), labels
        return oica_rgd_oracle(model, use_equal_noise=args.equal_noise,
                               max_cond=args.max_cond), labels
    data = read_dataset_csv(args.data)
    labels = list(data.labels) if data.labels else None
    log.info("loaded %d rows x %d columns", *data.values.shape)
    if args.method == "fa-equvar":
        return fa_equvar(data, leaf, ci_tol=args.tol_ci, alpha=args.alpha,
                         max_cond=args.max_cond, det_tol=args.tol_det), labels
    if args.method == "fa-dpc":
        return fa_dpc(data, leaf, ci_tol=args.tol_ci, alpha=args.alpha,
                      max_cond=args.max_cond, det_tol=args.tol_det), labels
    if leaf is None:
        raise ConfigError("oica-rgd requires --leaf-count")
    return oica_rgd(data, leaf, use_equal_noise=args.equal_noise,
                    tol=_tolerances(args), max_cond=args.max_cond,
                    seed=args.seed, strict=args.strict), labels


def _result_dot(result, labels):
    graph = getattr(result, "graph", None)
    if graph is not None:
        return dag_to_dot(graph.dag, graph.B)
    cpdag = getattr(result, "cpdag", None)
    if cpdag is not None:
        return cpdag.to_dot(labels)
    return None


def cmd_assumptions(args) -> int:
    model = _load_model(args.model)
    out, log = _setup_run(args.out, "assumptions", vars(args),
                          {"model": args.model})
    report = check_assumptions(model, max_cond_size=args.max_cond)
    methods = []
    if report.leaf_fraction_ok and report.equal_noise_ok:
        methods.append("fa-equvar")
    if report.leaf_fraction_ok and report.leaf_separability_ok:
        methods.append("fa-dpc")
    if report.fully_identifiable:
        methods.append("oica-rgd")
    gaussian = all(spec.family == "gaussian" for spec in model.noise_specs)
    payload = {
        "report": report.to_json(),
        "applicable_methods": methods,
        "notes": list(report.notes),
    }
    if "oica-rgd" in methods and gaussian:
        payload["caveat"] = ("oica-rgd additionally needs non-Gaussian "
                             "structural noise; this model is all-Gaussian")
    _write_json(out / "report.json", payload)
    log.info("audit complete; applicable methods: %s", ", ".join(methods) or "none")
    _close_log(log)
    return 0


def cmd_eval(args) -> int:
    out, log = _setup_run(args.out, "eval", vars(args),
                          {"truth": args.truth, "result": args.result})
    truth = _load_model(args.truth)
    with open(args.result) as fh:
        result = json.load(fh)
    report = evaluate(truth, result)
    _write_json(out / "eval.json", report.to_json())
    log.info("shd %d precision %.3f recall %.3f", report.shd,
             report.edge_precision, report.edge_recall)
    _close_log(log)
    return 0


def cmd_curves(args) -> int:
    out, log = _setup_run(args.out, "curves", vars(args), {})
    if args.kind == "attenuation":
        gammas = [float(g) for g in args.gamma.split(",")]
        rhos = [float(r) for r in args.rho.split(",")]
        header, rows = attenuation_table(gammas, rhos)
    elif args.kind == "leaf-threshold":
        if args.n_min < 2:
            raise ConfigError("threshold curve needs n >= 2")
        header, rows = threshold_table(args.n_min, args.n_max)
    else:
        raise ConfigError(f"unknown curve kind {args.kind!r}")
    _write_csv(out / "curves.csv", header, rows)
    if args.plot:
        _plot_curves(args.kind, header, rows, out / "curves.png")
        log.info("wrote curves.csv and curves.png (%d rows)", len(rows))
    else:
        log.info("wrote curves.csv (%d rows)", len(rows))
    _close_log(log)
    return 0


# ---------------------------------------------------------------------------
# argument parsing


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="causalme",
        description="Causal discovery under additive measurement error")
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="sample a dataset from a model")
    p_sim.add_argument("--fixture", choices=sorted(FIXTURES),
                       help="built-in model name")
    p_sim.add_argument("--model", help="model JSON path")
    p_sim.add_argument("--n-samples", type=int, required=True)
    p_sim.add_argument("--seed", type=int, default=0)
    p_sim.add_argument("--include-latent", action="store_true",
                       help="also write the noise-free columns")
    p_sim.add_argument("--out", required=True)
    p_sim.set_defaults(func=cmd_simulate)

    p_dis = sub.add_parser("discover", help="run a discovery method")
    p_dis.add_argument("--method", required=True, choices=_METHODS)
    p_dis.add_argument("--data", help="dataset CSV path")
    p_dis.add_argument("--model", help="model JSON path (oracle mode)")
    p_dis.add_argument("--oracle", action="store_true",
                       help="consume a model instead of data")
    group = p_dis.add_mutually_exclusive_group()
    group.add_argument("--leaf-count", type=int)
    group.add_argument("--auto-leaf", action="store_true",
                       help="choose the leaf count by information criterion")
    p_dis.add_argument("--alpha", type=float, default=None,
                       help="use a z-test at this level instead of the "
                            "N-adaptive magnitude cutoff")
    p_dis.add_argument("--equal-noise", action="store_true",
                       help="assume equal measurement-noise magnitudes "
                            "(enables the smallest-variance leaf rule)")
    p_dis.add_argument("--seed", type=int, default=0)
    p_dis.add_argument("--strict", action="store_true",
                       help="treat non-convergence as an error (oica-rgd)")
    p_dis.add_argument("--max-cond", type=int, default=None)
    for name in ("ci", "det", "ds", "group", "coef", "recon"):
        p_dis.add_argument(f"--tol-{name}", type=float, default=None)
    p_dis.add_argument("--out", required=True)
    p_dis.set_defaults(func=cmd_discover)

    p_ass = sub.add_parser("assumptions", help="audit a model")
    p_ass.add_argument("--model", required=True)
    p_ass.add_argument("--max-cond", type=int, default=None)
    p_ass.add_argument("--out", required=True)
    p_ass.set_defaults(func=cmd_assumptions)

    p_eval = sub.add_parser("eval", help="score a result against truth")
    p_eval.add_argument("--truth", required=True, help="model JSON path")
    p_eval.add_argument("--result", required=True, help="result JSON path")
    p_eval.add_argument("--out", required=True)
    p_eval.set_defaults(func=cmd_eval)

    p_cur = sub.add_parser("curves", help="emit analytic reference tables")
    p_cur.add_argument("--kind", required=True,
                       choices=("attenuation", "leaf-threshold"))
    p_cur.add_argument("--gamma", default="0,0.25,0.5,1,2,5",
                       help="comma-separated noise-ratio grid")
    p_cur.add_argument("--rho", default="0.3,0.5,0.7",
                       help="comma-separated base-correlation grid")
    p_cur.add_argument("--n-min", type=int, default=2)
    p_cur.add_argument("--n-max", type=int, default=100)
    p_cur.add_argument("--plot", action="store_true",
                       help="render a PNG next to the CSV")
    p_cur.add_argument("--out", required=True)
    p_cur.set_defaults(func=cmd_curves)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CausalmeError as err:
        print(f"causalme: {type(err).__name__}: {err}", file=sys.stderr)
        return err.exit_code


if __name__ == "__main__":
    sys.exit(main())
