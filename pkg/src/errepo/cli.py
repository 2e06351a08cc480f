"""Command-line entry point: ``errepo <subcommand> ...``.

Exit status is 0 on success, 1 on a domain error (a JSON object with an
``error`` field goes to stderr) and 2 on a usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import __version__
from .errors import ERError, MissingFile

logger = logging.getLogger("errepo")


def _positive_int(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def _unit_float(text):
    value = float(text)
    if not 0.0 <= value <= 1.0:
        raise argparse.ArgumentTypeError(f"expected a value in [0, 1], got {text}")
    return value


def _add_model_flags(p):
    p.add_argument("--test", choices=["KS", "WD", "PSI", "ks", "wd", "psi"], default="KS",
                   help="distribution test for problem similarity")
    p.add_argument("--b-tot", type=_positive_int, default=1000, help="total labeling budget")
    p.add_argument("--b-min", type=_positive_int, default=50, help="minimum labels per cluster")
    p.add_argument("--batch", type=_positive_int, default=10, help="labels per AL round")
    p.add_argument("--k", type=_positive_int, default=100, help="trees per ensemble")
    p.add_argument("--al", choices=["bootstrap", "supervised"], default="bootstrap")
    p.add_argument("--t-cov", type=_unit_float, default=0.25, help="coverage retrain threshold")
    p.add_argument("--resolution", type=float, default=1.0, help="Leiden modularity resolution")
    p.add_argument("--wd-grid", type=_positive_int, default=101, help="grid points for WD")
    p.add_argument("--psi-bins", type=_positive_int, default=100, help="equal-width bins for PSI")
    p.add_argument("--psi-eps", type=float, default=1e-6, help="PSI smoothing constant")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="errepo", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version",
                        version=f"errepo {__version__} (archive format 1)")
    parser.add_argument("--seed", type=int, default=42, help="root seed for every random stream")
    parser.add_argument("--threads", type=_positive_int, default=os.cpu_count() or 1)
    parser.add_argument("--log-level", default="WARNING",
                        choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="load and validate a dataset manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", help="rewrite the dataset in the canonical layout here")

    p = sub.add_parser("synth", help="generate a synthetic multi-regime corpus")
    p.add_argument("--regimes", type=_positive_int, default=2)
    p.add_argument("--sources", type=_positive_int, default=4, help="sources per regime")
    p.add_argument("--vectors", type=_positive_int, default=500, help="vectors per problem")
    p.add_argument("--match-ratio", type=float, default=0.2)
    p.add_argument("--separation", type=float, default=0.3,
                   help="required mean KS gap between regimes (within-regime gap must stay under half)")
    p.add_argument("--out", required=True)

    p = sub.add_parser("init", help="build a repository from a dataset")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--ratio-init", type=float,
                   help="only use this share of the problems (split by source pair)")
    _add_model_flags(p)

    p = sub.add_parser("solve", help="classify a new problem with a repository")
    p.add_argument("--repo", required=True)
    p.add_argument("--problem", required=True, help="problem CSV in the canonical layout")
    p.add_argument("--strategy", choices=["base", "cov"], default="base")
    p.add_argument("--t-cov", type=_unit_float)
    p.add_argument("--oracle", help="ground-truth CSV (required for --strategy cov)")
    p.add_argument("--predictions", help="write the predictions CSV here")

    p = sub.add_parser("eval", help="run an experiment end to end")
    p.add_argument("--config", help="experiment JSON; flags below are ignored when given")
    p.add_argument("--manifest", help="dataset manifest (or use --config)")
    p.add_argument("--ratio-init", type=float, default=0.5)
    p.add_argument("--strategy", choices=["base", "cov"], default="base")
    p.add_argument("--out", help="write the JSON report here")
    p.add_argument("--unified-baseline", action="store_true",
                   help="also score one model trained on all retained labels")
    _add_model_flags(p)

    p = sub.add_parser("inspect", help="summarise a saved repository")
    p.add_argument("--repo", required=True)
    return parser


def _print_json(doc):
    sys.stdout.write(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _repo_config(args):
    from .repository import RepoConfig

    return RepoConfig(test=args.test.upper(), b_tot=args.b_tot, b_min=args.b_min, batch=args.batch,
                      k=args.k, t_cov=args.t_cov, al=args.al, seed=args.seed,
                      resolution=args.resolution, wd_grid=args.wd_grid, psi_bins=args.psi_bins,
                      psi_eps=args.psi_eps)


def cmd_ingest(args):
    from .core import load_dataset, write_dataset

    ds = load_dataset(args.manifest, threads=args.threads)
    if args.out:
        write_dataset(args.out, ds.manifest.name, ds.problems, ds.oracle)
    _print_json({
        "name": ds.manifest.name,
        "problems": len(ds.problems),
        "pairs": sum(len(p) for p in ds.problems),
        "features": list(ds.manifest.feature_names),
        "labels": len(ds.oracle),
        "matches": ds.oracle.match_count(),
    })


def cmd_synth(args):
    from .core import write_dataset
    from .evaluation import SynthSpec, generate_synthetic

    spec = SynthSpec.default(args.regimes, sources_per_regime=args.sources,
                             vectors_per_problem=args.vectors, match_ratio=args.match_ratio,
                             separation=args.separation, seed=args.seed)
    corpus = generate_synthetic(spec)
    manifest = write_dataset(args.out, f"synthetic-{args.regimes}", corpus.problems, corpus.oracle)
    regimes = {pid: r for pid, r in sorted(corpus.regime_of.items())}
    (Path(args.out) / "regimes.json").write_text(json.dumps(regimes, indent=2, sort_keys=True) + "\n",
                                                 encoding="utf-8")
    _print_json({"manifest": str(manifest), "problems": len(corpus.problems),
                 "pairs": sum(len(p) for p in corpus.problems)})


def cmd_init(args):
    from .core import load_dataset, split_by_source_pair
    from .repository import init_repository, save_repository

    ds = load_dataset(args.manifest, threads=args.threads)
    cfg = _repo_config(args)
    problems, held_out = ds.problems, []
    if args.ratio_init is not None:
        problems, held_out = split_by_source_pair(ds.problems, args.ratio_init, args.seed)
    repo = init_repository(problems, cfg, ds.oracle, threads=args.threads)
    save_repository(repo, args.out)
    _print_json({"repo": str(args.out), "problems": len(problems),
                 "clusters": len(repo.clustering.clusters), "labels_spent": repo.labels_spent,
                 "held_out": [p.id for p in held_out]})


def cmd_solve(args):
    from .core import load_ground_truth, load_problem_csv
    from .repository import load_repository, save_repository, sel_base, sel_cov

    repo = load_repository(args.repo)
    problem = load_problem_csv(args.problem, repo.feature_names)
    if args.strategy == "base":
        report = sel_base(repo, problem)
    else:
        if not args.oracle:
            raise MissingFile("--strategy cov needs --oracle for retraining", path=None)
        repo, report = sel_cov(repo, problem, load_ground_truth(args.oracle), args.t_cov)
        save_repository(repo, args.repo)
    if args.predictions:
        Path(args.predictions).write_text(report.predictions_csv(), encoding="utf-8")
    _print_json(report.to_dict())


def cmd_eval(args):
    from .evaluation import format_table, report_json, run_experiment

    if args.config:
        config = args.config
    elif args.manifest:
        config = {"dataset": args.manifest, "ratio_init": args.ratio_init, "test": args.test.upper(),
                  "b_tot": args.b_tot, "b_min": args.b_min, "batch": args.batch, "k": args.k,
                  "strategy": args.strategy, "t_cov": args.t_cov, "seed": args.seed,
                  "al": args.al, "unified_baseline": args.unified_baseline}
    else:
        raise MissingFile("eval needs --config or --manifest", path=None)
    report = run_experiment(config, threads=args.threads)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(report_json(report), encoding="utf-8")
    sys.stdout.write(format_table(report))


def cmd_inspect(args):
    from .repository import load_repository

    repo = load_repository(args.repo)
    _print_json({
        "version": __version__,
        "problems": len(repo.problems),
        "T": sorted(repo.T),
        "U": sorted(repo.U),
        "labels_spent": repo.labels_spent,
        "config": repo.config.to_dict(),
        "clusters": {
            str(cid): {
                "members": members,
                "has_model": cid in repo.models,
                "retained": len(repo.models[cid].pc) if cid in repo.models else 0,
            }
            for cid, members in sorted(repo.clustering.clusters.items())
        },
        "history": len(repo.history),
        "audit_events": len(repo.audit),
    })


COMMANDS = {"ingest": cmd_ingest, "synth": cmd_synth, "init": cmd_init, "solve": cmd_solve,
            "eval": cmd_eval, "inspect": cmd_inspect}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=args.log_level, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except ERError as e:
        sys.stderr.write(json.dumps(e.to_dict(), sort_keys=True) + "\n")
        return 1
    except FileNotFoundError as e:
        err = MissingFile(str(e), path=getattr(e, "filename", None))
        sys.stderr.write(json.dumps(err.to_dict(), sort_keys=True) + "\n")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
