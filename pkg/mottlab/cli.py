from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import fields
from typing import Any

import numpy as np

from mottlab.artifacts import RunWriter
from mottlab.config import RunConfig
from mottlab.core.chain import build_chain, chain_window
from mottlab.core.env_model import WINDOW_CSV_HEADER, sample_window, window_descriptor, window_rows
from mottlab.core.rate_kernel import JUMP_ROW_CSV_HEADER, RowCache, row_to_dict
from mottlab.core.stats import batch_means
from mottlab.core.tasks import ENV_STREAM, derive_seed
from mottlab.core.walker import ENDPOINT_CSV_HEADER, PATH_CSV_HEADER, run_chain_walkers, run_walkers
from mottlab.errors import MottLabError
from mottlab.experiments import (
    ARRHENIUS_CSV_HEADER,
    EINSTEIN_CSV_HEADER,
    PHASE_CSV_HEADER,
    VECTOR_CSV_HEADER,
    arrhenius_sweep,
    chain_summary,
    classify_regime,
    einstein_report,
    phase_sweep,
    vector_rows,
)

logger = logging.getLogger(__name__)

COMMANDS = ("gen-env", "simulate", "solve", "sweep", "einstein", "classify", "arrhenius")


def load_config(args: argparse.Namespace) -> RunConfig:
    """Config file (or defaults) with every flag that was given applied on top."""
    base = RunConfig.load(args.config) if args.config else RunConfig()
    overrides = {f.name: getattr(args, f.name, None) for f in fields(RunConfig)}
    return base.updated(overrides)


def _env_seed(cfg: RunConfig, k: int = 0) -> int:
    return derive_seed(cfg.seed, ENV_STREAM, k)


def cmd_gen_env(args: argparse.Namespace) -> int:
    cfg = load_config(args)
    window = sample_window(cfg.resolved_model(), tuple(cfg.env_range), cfg.seed)
    # the origin row may need sites beyond env_range; RowCache grows its own copy
    row = RowCache(window, cfg.lam, cfg.eps_tail).row(0)
    with RunWriter(cfg, "gen-env", force=args.force) as run:
        run.write_csv("env.csv", WINDOW_CSV_HEADER, window_rows(window))
        run.write_csv("row_0.csv", JUMP_ROW_CSV_HEADER, row.rows())
        run.write_json("env.json", {**window_descriptor(window), "row_0": row_to_dict(row)})
    print(run.path)
    return 0


def cmd_simulate(args: argparse.Namespace) -> int:
    cfg = load_config(args)
    model = cfg.resolved_model()
    record = "full" if cfg.write_paths else cfg.record
    chain = None
    if cfg.periodic:
        chain = build_chain(chain_window(model, cfg.n_sites, _env_seed(cfg)), cfg.lam, cfg.eps_tail)

    results: list[dict[str, Any]] = []
    endpoints: list[tuple[Any, ...]] = []
    with RunWriter(cfg, "simulate", force=args.force) as run:
        for i, horizon in enumerate(cfg.resolved_horizons()):
            if chain is not None:
                trajs = run_chain_walkers(chain, horizon, cfg.n_walkers, cfg.seed, record=record, jobs=cfg.jobs)
            else:
                trajs = run_walkers(
                    model, cfg.lam, horizon, cfg.n_walkers, cfg.seed,
                    mode=cfg.mode, eps_tail=cfg.eps_tail, record=record, jobs=cfg.jobs,
                )
            endpoints.extend(t.endpoint_row() for t in trajs)
            finals = np.array([t.final_x for t in trajs])
            entry: dict[str, Any] = {
                "horizon": horizon.value,
                "kind": horizon.kind,
                "velocity": batch_means(finals / horizon.value, cfg.n_batches).to_dict(),
            }
            if cfg.lam == 0.0:
                entry["msd_diffusion"] = batch_means(finals**2 / horizon.value, cfg.n_batches).to_dict()
            results.append(entry)
            if cfg.write_paths:
                for k, traj in enumerate(trajs):
                    run.write_csv(f"path_{i}_{k}.csv", PATH_CSV_HEADER, traj.path_rows())
        run.seeds["env_seeds"] = sorted({row[0] for row in endpoints if row[0] != ""})
        run.write_csv("endpoints.csv", ENDPOINT_CSV_HEADER, endpoints)
        run.write_json(
            "simulate.json",
            {"lambda": cfg.lam, "mode": "periodic" if cfg.periodic else cfg.mode, "results": results},
        )
    print(run.path)
    return 0


def cmd_solve(args: argparse.Namespace) -> int:
    cfg = load_config(args)
    env_seed = _env_seed(cfg)
    summary = chain_summary(
        cfg.resolved_model(),
        cfg.n_sites,
        cfg.lam,
        env_seed,
        h=cfg.fd_step,
        eps_tail=cfg.eps_tail,
        rn_lambdas=cfg.lambda_grid,
        rn_p=cfg.rn_p,
        tol=cfg.solver_tol,
        residual_tol=cfg.residual_tol,
    )
    with RunWriter(cfg, "solve", force=args.force) as run:
        run.seeds["env_seed"] = env_seed
        run.write_json("solve.json", summary.record)
        if cfg.write_vectors:
            run.write_csv("vectors.csv", VECTOR_CSV_HEADER, vector_rows(summary))
    print(run.path)
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    cfg = load_config(args)
    sweep = phase_sweep(
        cfg.lam,
        cfg.c_grid,
        cfg.horizons,
        cfg.seed,
        d=cfg.gap_d,
        base=cfg.resolved_model(),
        kind=cfg.kind,
        n_walkers=cfg.n_walkers,
        n_batches=cfg.n_batches,
        eps_tail=cfg.eps_tail,
        jobs=cfg.jobs,
    )
    with RunWriter(cfg, "sweep", force=args.force) as run:
        run.write_json("sweep.json", sweep.to_dict())
        run.write_csv("sweep.csv", PHASE_CSV_HEADER, sweep.table())
    print(run.path)
    return 0


def cmd_classify(args: argparse.Namespace) -> int:
    cfg = load_config(args)
    verdict = classify_regime(cfg.resolved_model(), cfg.lam)
    with RunWriter(cfg, "classify", force=args.force) as run:
        run.write_json("classify.json", verdict.to_dict())
    print(verdict.predicted)
    return 0


def cmd_einstein(args: argparse.Namespace) -> int:
    cfg = load_config(args)
    report = einstein_report(
        cfg.resolved_model(),
        cfg.n_sites,
        cfg.n_environments,
        cfg.fd_step,
        cfg.seed,
        eps_tail=cfg.eps_tail,
        continuity_lambdas=cfg.lambda_grid,
        jobs=cfg.jobs,
    )
    with RunWriter(cfg, "einstein", force=args.force) as run:
        run.seeds["env_seeds"] = [e.env_seed for e in report.environments]
        run.write_json("einstein.json", report.to_dict())
        run.write_csv("einstein.csv", EINSTEIN_CSV_HEADER, report.table())
    print(run.path)
    return 0


def cmd_arrhenius(args: argparse.Namespace) -> int:
    cfg = load_config(args)
    fit = arrhenius_sweep(
        cfg.beta_grid,
        cfg.resolved_model(),
        cfg.n_sites,
        cfg.n_environments,
        cfg.seed,
        eps_tail=cfg.eps_tail,
        jobs=cfg.jobs,
    )
    with RunWriter(cfg, "arrhenius", force=args.force) as run:
        run.write_json("arrhenius.json", fit.to_dict())
        run.write_csv("arrhenius.csv", ARRHENIUS_CSV_HEADER, fit.table())
    print(run.path)
    return 0


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    """--config, --force, --log-level and one override flag per RunConfig key."""
    parser.add_argument("--config", help="Path to a JSON config file")
    parser.add_argument("--force", action="store_true", help="Replace an existing run directory")
    parser.add_argument("--log-level", default="WARNING", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    defaults = RunConfig()
    for f in fields(RunConfig):
        flag = "--" + f.name.replace("_", "-")
        names = [flag, "--out"] if f.name == "out_dir" else [flag]
        default = getattr(defaults, f.name)
        if isinstance(default, bool):
            parser.add_argument(*names, dest=f.name, action=argparse.BooleanOptionalAction, default=None)
        elif isinstance(default, list):
            kind = int if default and isinstance(default[0], int) else float
            parser.add_argument(*names, dest=f.name, nargs="+", type=kind, default=None)
        else:
            parser.add_argument(*names, dest=f.name, type=type(default), default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mottlab", description="1D biased Mott hopping laboratory")
    parser.set_defaults(func=lambda _: parser.print_help() or 0)

    commands = parser.add_subparsers(dest="command")
    handlers = {
        "gen-env": (cmd_gen_env, "Sample an environment window"),
        "simulate": (cmd_simulate, "Simulate walkers and estimate velocity"),
        "solve": (cmd_solve, "Solve the periodized chain"),
        "sweep": (cmd_sweep, "Phase sweep over the gap rate c"),
        "einstein": (cmd_einstein, "Check the Einstein relation"),
        "classify": (cmd_classify, "Predict ballistic or sub-ballistic behaviour"),
        "arrhenius": (cmd_arrhenius, "Fit log D against beta"),
    }
    for name in COMMANDS:
        func, help_text = handlers[name]
        sub = commands.add_parser(name, help=help_text)
        _add_config_flags(sub)
        sub.set_defaults(func=func)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(args, "log_level", "WARNING"), format="%(levelname)s %(name)s: %(message)s")
    try:
        return int(args.func(args))
    except MottLabError as exc:
        print(f"mottlab: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
