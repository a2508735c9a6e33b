"""Command-line interface: fit, simulate, eval and rank.

Configuration comes from optional flat ``key = value`` files ('#' starts a
comment) with command-line flags taking precedence. Exit codes are the
process-level contract: 0 success/converged, 1 input or configuration
problems, 2 numerical aborts, 3 fit stopped at the sweep limit.
"""

import argparse
import os
import sys
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from . import dataio
from .dataio import DataError, format_number
from .inference import fit
from .model import Hyperparameters, NumericalError, summarize
from .synth import PlantedTruth, generate, score_arrays

EXIT_OK = 0
EXIT_DATA = 1
EXIT_NUMERIC = 2
EXIT_MAX_SWEEPS = 3

FIT_OUTPUTS = (
    "association.tsv",
    "z_posterior.tsv",
    "u_mixed.tsv",
    "basis_mean.tsv",
    "ranked_sets.tsv",
    "elbo_trace.tsv",
    "run_meta",
)


class UsageError(Exception):
    pass


@dataclass(frozen=True)
class RunConfig:
    """Everything a fit run needs; mirrors the command-line flags 1:1."""

    expression: str = None
    labels: str = None
    gmt: str = None
    edges: str = None
    out: str = None
    alpha_a0: float = 1.0
    alpha_b0: float = 1.0
    lambda_s0: float = 1.0
    mu_v0: float = 0.0
    sigma_v0: float = 1.0
    beta_a: float = None
    zeta: float = 0.9
    xi: float = 100.0
    epsilon: float = 0.05
    max_sweeps: int = 1000
    elbo_rel_tol: float = 1e-6
    seed: int = 0
    threads: int = None
    top_m: int = 5
    clamp_known: bool = False

    def hyperparameters(self) -> Hyperparameters:
        threads = self.threads
        if threads is None:
            threads = int(os.environ.get("PATHFACT_THREADS", "1"))
        return Hyperparameters(
            alpha_a0=self.alpha_a0,
            alpha_b0=self.alpha_b0,
            lambda_s0=self.lambda_s0,
            mu_v0=self.mu_v0,
            sigma_v0=self.sigma_v0,
            beta_a=self.beta_a,
            zeta=self.zeta,
            xi=self.xi,
            epsilon=self.epsilon,
            max_sweeps=self.max_sweeps,
            elbo_rel_tol=self.elbo_rel_tol,
            seed=self.seed,
            threads=threads,
        )


_CONFIG_TYPES = {f.name: f.type for f in fields(RunConfig)}
_STR_KEYS = {"expression", "labels", "gmt", "edges", "out"}
_INT_KEYS = {"max_sweeps", "seed", "threads", "top_m"}
_BOOL_KEYS = {"clamp_known"}
_OPTIONAL_KEYS = {"beta_a", "threads"}


def _coerce(key, text):
    text = text.strip()
    if key in _STR_KEYS:
        return text
    if text.lower() == "none" and key in _OPTIONAL_KEYS:
        return None
    if key in _BOOL_KEYS:
        if text.lower() in ("true", "1", "yes"):
            return True
        if text.lower() in ("false", "0", "no"):
            return False
        raise UsageError(f"config key {key!r} expects true/false, got {text!r}")
    try:
        return int(text) if key in _INT_KEYS else float(text)
    except ValueError:
        raise UsageError(f"config key {key!r} has non-numeric value {text!r}")


def parse_config_file(path) -> dict:
    """Flat ``key = value`` settings; '#' starts a comment anywhere."""
    values = {}
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise UsageError(f"cannot read config file: {exc}")
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        key, text = (part.strip() for part in line.split("=", 1))
        if key not in _CONFIG_TYPES:
            raise UsageError(f"{path}:{lineno}: unknown config key {key!r}")
        values[key] = _coerce(key, text)
    return values


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _add_config_flags(parser):
    parser.add_argument("--config", help="flat key = value settings file")
    parser.add_argument("--expression", help="expression matrix TSV")
    parser.add_argument("--labels", help="sample cluster-label TSV")
    parser.add_argument("--gmt", help="gene-set GMT file")
    parser.add_argument("--edges", help="interaction edge list")
    parser.add_argument("--out", help="output directory")
    for name in (
        "alpha-a0",
        "alpha-b0",
        "lambda-s0",
        "mu-v0",
        "sigma-v0",
        "beta-a",
        "zeta",
        "xi",
        "epsilon",
        "elbo-rel-tol",
    ):
        parser.add_argument(f"--{name}", type=float, default=None)
    for name in ("max-sweeps", "seed", "threads", "top-m"):
        parser.add_argument(f"--{name}", type=int, default=None)
    parser.add_argument("--clamp-known", choices=("true", "false"), default=None)


def build_config(args) -> RunConfig:
    config = RunConfig()
    if args.config:
        config = replace(config, **parse_config_file(args.config))
    overrides = {}
    for field in fields(RunConfig):
        value = getattr(args, field.name, None)
        if value is not None:
            overrides[field.name] = (
                value == "true" if field.name in _BOOL_KEYS else value
            )
    return replace(config, **overrides)


def _write(path: Path, text: str):
    path.write_text(text, encoding="utf-8")


def _render_run_meta(config: RunConfig, hyper, data, report) -> str:
    lines = ["# pathfact run metadata; reusable as a --config file"]
    lines.append(
        f"# dims: samples={data.n_samples} features={data.n_features}"
        f" clusters={data.n_clusters} sets={data.n_sets}"
    )
    lines.append("# cluster_order: " + ",".join(data.cluster_ids))
    lines.append("# set_order: " + ",".join(data.set_ids))
    lines.append(f"# status: {report.status} after {report.sweeps} sweep(s)")
    resolved = replace(
        config,
        alpha_a0=hyper.alpha_a0,
        alpha_b0=hyper.alpha_b0,
        beta_a=hyper.beta_a,
        zeta=hyper.zeta,
        xi=hyper.xi,
        epsilon=hyper.epsilon,
        max_sweeps=hyper.max_sweeps,
        elbo_rel_tol=hyper.elbo_rel_tol,
        seed=hyper.seed,
        threads=hyper.threads,
    )
    for field in fields(RunConfig):
        value = getattr(resolved, field.name)
        if value is None:
            text = "none"
        elif isinstance(value, bool):
            text = "true" if value else "false"
        elif isinstance(value, float):
            text = format_number(value)
        else:
            text = str(value)
        lines.append(f"{field.name} = {text}")
    return "\n".join(lines) + "\n"


def cmd_fit(argv) -> int:
    parser = _Parser(prog="pathfact fit", description="fit the factorization model")
    _add_config_flags(parser)
    args = parser.parse_args(argv)
    config = build_config(args)
    for key in ("expression", "labels", "gmt", "edges", "out"):
        if not getattr(config, key):
            raise UsageError(f"missing required setting {key!r}")

    expr = dataio.load_expression(config.expression, config.labels)
    sets = dataio.load_gmt(config.gmt)
    graph = dataio.load_edge_list(config.edges)
    data = dataio.align(expr, sets, graph)
    hyper = config.hyperparameters().resolve(data)

    report = fit(data, hyper)
    result = summarize(
        report.state, data, hyper, top_m=config.top_m, clamp_known=config.clamp_known
    )

    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    _write(
        out / "association.tsv",
        dataio.write_labeled_matrix(
            data.cluster_ids, data.set_ids, result.assoc_mean, corner="cluster"
        ),
    )
    _write(
        out / "z_posterior.tsv",
        dataio.write_labeled_matrix(
            data.feature_ids, data.set_ids, result.z_marginal, corner="feature"
        ),
    )
    _write(
        out / "u_mixed.tsv",
        dataio.write_labeled_matrix(
            data.sample_ids, data.cluster_ids, result.u_mixed, corner="sample"
        ),
    )
    _write(
        out / "basis_mean.tsv",
        dataio.write_labeled_matrix(
            data.feature_ids, data.set_ids, report.state.basis.mean, corner="feature"
        ),
    )
    ranked_lines = ["cluster\trank\tset_id\tscore"]
    for k, cluster in enumerate(data.cluster_ids):
        for rank, (set_id, value) in enumerate(result.ranked[k], start=1):
            ranked_lines.append(f"{cluster}\t{rank}\t{set_id}\t{format_number(value)}")
    _write(out / "ranked_sets.tsv", "\n".join(ranked_lines) + "\n")
    trace_lines = ["sweep\telbo\tpenalty\tobjective"]
    for rec in report.trace.records:
        trace_lines.append(
            f"{rec.sweep}\t{format_number(rec.elbo)}\t{format_number(rec.penalty)}"
            f"\t{format_number(rec.objective)}"
        )
    _write(out / "elbo_trace.tsv", "\n".join(trace_lines) + "\n")
    _write(out / "run_meta", _render_run_meta(config, hyper, data, report))

    print(f"{report.status} after {report.sweeps} sweep(s); outputs in {out}")
    return EXIT_OK if report.converged else EXIT_MAX_SWEEPS


def cmd_simulate(argv) -> int:
    parser = _Parser(prog="pathfact simulate", description="emit a synthetic dataset")
    parser.add_argument("--out", required=True)
    parser.add_argument("--n-samples", type=int, required=True)
    parser.add_argument("--n-clusters", type=int, required=True)
    parser.add_argument("--n-features", type=int, required=True)
    parser.add_argument("--n-sets", type=int, required=True)
    parser.add_argument("--corruption", type=float, default=0.0)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--beta-a", type=float, default=None)
    parser.add_argument("--edge-prob", type=float, default=0.15)
    parser.add_argument("--epsilon", type=float, default=0.05)
    parser.add_argument("--noise-precision", type=float, default=None)
    parser.add_argument("--snr", type=float, default=None)
    parser.add_argument("--min-members", type=int, default=1)
    args = parser.parse_args(argv)

    try:
        data, truth = generate(
            (args.n_samples, args.n_clusters, args.n_features, args.n_sets),
            edge_prob=args.edge_prob,
            beta_a=args.beta_a,
            noise_precision=args.noise_precision,
            snr=args.snr,
            corruption=args.corruption,
            epsilon=args.epsilon,
            seed=args.seed,
            min_members=args.min_members,
        )
    except ValueError as exc:
        raise UsageError(str(exc))

    out = Path(args.out)
    truth_dir = out / "truth"
    truth_dir.mkdir(parents=True, exist_ok=True)

    expr = dataio.LabeledExpression(
        sample_ids=data.sample_ids,
        feature_ids=data.feature_ids,
        matrix=data.X,
        labels=tuple(data.cluster_ids[int(np.argmax(row))] for row in data.U0),
    )
    matrix_text, labels_text = dataio.write_expression(expr)
    _write(out / "expression.tsv", matrix_text)
    _write(out / "labels.tsv", labels_text)
    sets = dataio.GeneSetCollection(
        sets=tuple(
            dataio.GeneSet(
                set_id=sid,
                description=f"synthetic set {r}",
                members=tuple(
                    data.feature_ids[j]
                    for j in range(data.n_features)
                    if data.Z0[j, r]
                ),
            )
            for r, sid in enumerate(data.set_ids)
        )
    )
    _write(out / "sets.gmt", dataio.write_gmt(sets))
    _write(out / "edges.tsv", dataio.write_edge_list(data.graph))

    _write(
        truth_dir / "associations.tsv",
        dataio.write_labeled_matrix(
            data.cluster_ids, data.set_ids, truth.associations, corner="cluster"
        ),
    )
    _write(
        truth_dir / "basis.tsv",
        dataio.write_labeled_matrix(
            data.feature_ids, data.set_ids, truth.basis, corner="feature"
        ),
    )
    _write(
        truth_dir / "membership.tsv",
        dataio.write_labeled_matrix(
            data.feature_ids, data.set_ids, truth.membership, corner="feature"
        ),
    )
    _write(
        truth_dir / "shown_mask.tsv",
        dataio.write_labeled_matrix(
            data.feature_ids, data.set_ids, truth.shown_mask, corner="feature"
        ),
    )
    _write(
        truth_dir / "noiseless_mean.tsv",
        dataio.write_labeled_matrix(
            data.sample_ids, data.feature_ids, truth.noiseless_mean, corner="sample"
        ),
    )
    _write(
        truth_dir / "meta",
        f"noise_precision = {format_number(truth.noise_precision)}\n",
    )
    print(f"synthetic dataset written to {out}")
    return EXIT_OK


def _load_truth(truth_dir: Path) -> PlantedTruth:
    cluster_ids, set_ids, associations = dataio.load_labeled_matrix(
        truth_dir / "associations.tsv"
    )
    feature_ids, _, basis = dataio.load_labeled_matrix(truth_dir / "basis.tsv")
    _, _, membership = dataio.load_labeled_matrix(truth_dir / "membership.tsv")
    _, _, shown = dataio.load_labeled_matrix(truth_dir / "shown_mask.tsv")
    sample_ids, _, mean = dataio.load_labeled_matrix(truth_dir / "noiseless_mean.tsv")
    meta = parse_config_meta(truth_dir / "meta")
    n, k = len(sample_ids), len(cluster_ids)
    onehot = np.zeros((n, k))
    onehot[np.arange(n), np.arange(n) % k] = 1.0
    return PlantedTruth(
        associations=associations,
        basis=basis,
        membership=membership.astype(int),
        shown_mask=shown.astype(int),
        cluster_onehot=onehot,
        noise_precision=meta["noise_precision"],
        noiseless_mean=mean,
    )


def parse_config_meta(path) -> dict:
    values = {}
    for raw in Path(path).read_text(encoding="utf-8").splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, text = (part.strip() for part in line.split("=", 1))
        values[key] = float(text)
    return values


def cmd_eval(argv) -> int:
    parser = _Parser(prog="pathfact eval", description="score a fit against truth")
    parser.add_argument("--fit-dir", required=True)
    parser.add_argument("--truth-dir", required=True)
    parser.add_argument("--top-m", type=int, default=5)
    args = parser.parse_args(argv)
    fit_dir = Path(args.fit_dir)
    truth_dir = Path(args.truth_dir)
    for name in ("association.tsv", "z_posterior.tsv", "u_mixed.tsv", "basis_mean.tsv"):
        if not (fit_dir / name).exists():
            raise UsageError(f"missing fit output {name!r} in {fit_dir}")

    truth = _load_truth(truth_dir)
    cluster_ids, set_ids, assoc = dataio.load_labeled_matrix(fit_dir / "association.tsv")
    _, _, z_post = dataio.load_labeled_matrix(fit_dir / "z_posterior.tsv")
    _, _, u_mixed = dataio.load_labeled_matrix(fit_dir / "u_mixed.tsv")
    _, _, basis_mean = dataio.load_labeled_matrix(fit_dir / "basis_mean.tsv")
    recon = u_mixed @ assoc @ (z_post * basis_mean).T
    metrics = score_arrays(assoc, recon, z_post, basis_mean, truth, args.top_m)

    rows = [
        ("precision_at_m", metrics.precision_at_m),
        ("rmse", metrics.rmse),
        ("mask_auc", metrics.mask_auc),
        ("sign_agreement", metrics.sign_agreement),
    ]
    text = "metric\tvalue\n" + "".join(
        f"{name}\t{format_number(value)}\n" for name, value in rows
    )
    _write(fit_dir / "metrics.tsv", text)
    print(text, end="")
    return EXIT_OK


def cmd_rank(argv) -> int:
    parser = _Parser(prog="pathfact rank", description="re-rank an association matrix")
    parser.add_argument("--association", required=True)
    parser.add_argument("--top-m", type=int, required=True)
    parser.add_argument("--out", default=None, help="defaults next to the input")
    args = parser.parse_args(argv)
    cluster_ids, set_ids, assoc = dataio.load_labeled_matrix(args.association)
    if not 1 <= args.top_m <= len(set_ids):
        raise UsageError(f"top_m must lie in [1, {len(set_ids)}]")
    lines = ["cluster\trank\tset_id\tscore"]
    for k, cluster in enumerate(cluster_ids):
        row = assoc[k]
        order = sorted(range(len(set_ids)), key=lambda j: (-row[j], set_ids[j]))
        for rank, j in enumerate(order[: args.top_m], start=1):
            lines.append(f"{cluster}\t{rank}\t{set_ids[j]}\t{format_number(row[j])}")
    out = Path(args.out) if args.out else Path(args.association).parent / "ranked_sets.tsv"
    _write(out, "\n".join(lines) + "\n")
    print(f"rankings written to {out}")
    return EXIT_OK


COMMANDS = {
    "fit": cmd_fit,
    "simulate": cmd_simulate,
    "eval": cmd_eval,
    "rank": cmd_rank,
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    if not argv or argv[0] in ("-h", "--help"):
        print("usage: pathfact {fit,simulate,eval,rank} [options]")
        print(__doc__)
        return EXIT_OK if argv else EXIT_DATA
    command = argv[0]
    if command not in COMMANDS:
        print(f"unknown command {command!r}; expected one of {sorted(COMMANDS)}", file=sys.stderr)
        return EXIT_DATA
    try:
        return COMMANDS[command](argv[1:])
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
