"""Command-line entry point: ``redoffload <verb> [options]``.

Exit status is 0 on success, 1 for configuration or input errors and 2 for
runtime failures such as diverging training.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .drl import CostParams, DRLController, TrainSchedule, load_agent, save_agent, train_agent, write_log_csv
from .errors import ConfigError, IntegrityError, OffloadError, SchemaError, TraceValueError
from .evaluation import (ExperimentSpec, cdf_compare, degradation_study, delay_series, read_sweep_csv,
                         tradeoff_sweep, write_cdf_csv, write_decision_csv, write_degradation_csv,
                         write_sweep_csv)
from .features import FeatureCatalog
from .myopic import MyopicController, WindowPredictorConfig, load_predictor, save_predictor, train_predictor
from .sim import (baseline_all, baseline_best_channel, baseline_fixed, baseline_random, rtop_accounting,
                  run_episode, write_result_csv, write_summary_json)
from .trace import (calibrated_config, generate_synthetic, load_synthetic_config, load_trace, save_config,
                    save_trace, trace_stats, write_stats_csv)

log = logging.getLogger("redoffload")

SEGMENTS = ("all", "train", "test")


def _segment(trace, name: str, fraction: float):
    if name == "all":
        return trace
    train, test = trace.split(fraction)
    return train if name == "train" else test


def _catalog(path, train):
    base = FeatureCatalog.load(path) if path else FeatureCatalog.default()
    return base.fit(train)


def _out_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


def cmd_gen(args) -> None:
    if args.config:
        cfg = load_synthetic_config(args.config)
        overrides = {k: v for k, v in (("seed", args.seed), ("n_tasks", args.n_tasks)) if v is not None}
        if overrides:
            cfg = type(cfg).from_dict({**cfg.to_dict(), **overrides})
    else:
        cfg = calibrated_config(n_tasks=args.n_tasks or 12_000, seed=args.seed or 0, n_servers=args.servers)
    save_trace(generate_synthetic(cfg), args.out)
    if args.save_config:
        save_config(cfg, args.save_config)
    log.info("wrote %s", args.out)


def cmd_stats(args) -> None:
    trace = load_trace(args.trace)
    out = _out_dir(args.out_dir)
    write_stats_csv(trace_stats(trace), out / "stats.csv")
    grid, curves = cdf_compare(delay_series(trace), n_points=args.points)
    write_cdf_csv(grid, curves, out / "cdf.csv")


def cmd_train_predictor(args) -> None:
    trace = load_trace(args.trace)
    train = _segment(trace, "train", args.train_fraction)
    catalog = _catalog(args.catalog, train)
    cfg = WindowPredictorConfig(window=args.window, min_exceed=args.min_exceed, delta_star=args.delta_star,
                                epochs=args.epochs, history=args.history, seed=args.seed)
    model = train_predictor(train, catalog, cfg)
    save_predictor(args.out, model)
    log.info("wrote %s", args.out)


def cmd_train_agent(args) -> None:
    trace = load_trace(args.trace)
    train = _segment(trace, "train", args.train_fraction)
    catalog = _catalog(args.catalog, train)
    sched = TrainSchedule(n_steps=args.steps, history=args.history, seed=args.seed,
                          epsilon_decay_steps=args.epsilon_decay or args.steps)
    trained = train_agent(train, catalog, CostParams.default(train.n_servers, args.lam, args.delta_star), sched)
    save_agent(args.out, trained)
    if args.log:
        write_log_csv(trained.log, args.log)
    log.info("wrote %s", args.out)


def _controller(args, trace, train):
    kind = args.controller
    n = trace.n_servers
    if kind == "myopic":
        if not args.checkpoint:
            raise ConfigError("myopic controller needs --checkpoint")
        model = load_predictor(args.checkpoint)
        return MyopicController(model, args.delta), model.catalog, model.config.history
    if kind == "drl":
        if not args.checkpoint:
            raise ConfigError("drl controller needs --checkpoint")
        trained = load_agent(args.checkpoint)
        return DRLController(trained.agent), trained.catalog, trained.schedule.history
    catalog = _catalog(args.catalog, train)
    if kind == "all":
        return baseline_all(n), catalog, args.history
    if kind == "best-rssi":
        return baseline_best_channel(catalog), catalog, args.history
    if kind == "random":
        return baseline_random(n, args.seed), catalog, args.history
    if kind.startswith("fixed:"):
        return baseline_fixed(int(kind.split(":", 1)[1]), n), catalog, args.history
    raise ConfigError(f"unknown controller {kind!r}")


def cmd_simulate(args) -> None:
    trace = load_trace(args.trace)
    train = _segment(trace, "train", args.train_fraction)
    target = _segment(trace, args.segment, args.train_fraction)
    controller, catalog, history = _controller(args, trace, train)
    result = run_episode(target, controller, catalog, args.delta_star, history)
    out = _out_dir(args.out_dir)
    write_result_csv(result, out / "result.csv")
    write_summary_json([result], out / "summary.json")
    write_decision_csv(result, out / "decisions.csv")
    rep = rtop_accounting(result, args.delta)
    print(json.dumps({**result.summary(), "violation_prob": rep.violation_prob,
                      "constraint_satisfied": rep.satisfied}, sort_keys=True))


def cmd_sweep(args) -> None:
    spec = ExperimentSpec.load(args.spec)
    out = _out_dir(args.out_dir or spec.output_dir)
    rows = tradeoff_sweep(spec)
    write_sweep_csv(rows, out / "sweep.csv")
    log.info("wrote %s", out / "sweep.csv")


def cmd_report(args) -> None:
    out = _out_dir(args.out_dir)
    trace = load_trace(args.trace)
    target = _segment(trace, args.segment, args.train_fraction)
    write_stats_csv(trace_stats(target), out / "stats.csv")
    grid, curves = cdf_compare(delay_series(target), n_points=args.points)
    write_cdf_csv(grid, curves, out / "cdf.csv")
    if args.predictor:
        model = load_predictor(args.predictor)
        rows = degradation_study({model.config.window: model}, target, range(args.max_missing + 1))
        write_degradation_csv(rows, out / "degradation.csv")
    if args.sweep:
        means = [r for r in read_sweep_csv(args.sweep) if r.seed == "mean"]
        table = [{"controller": r.controller, "param": r.param, "avg_set_size": r.avg_set_size,
                  "fraction_below": r.fraction_below} for r in means]
        (out / "tradeoff.json").write_text(json.dumps(table, indent=2, sort_keys=True) + "\n")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="redoffload", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="verb", required=True)

    def common_trace(sp, segment=False):
        sp.add_argument("--trace", required=True, help="trace CSV")
        sp.add_argument("--train-fraction", type=float, default=0.8)
        sp.add_argument("--delta-star", type=float, default=0.175)
        sp.add_argument("--history", type=int, default=3)
        sp.add_argument("--catalog", help="feature catalog JSON (defaults to the built-in catalog)")
        sp.add_argument("--seed", type=int, default=0)
        if segment:
            sp.add_argument("--segment", choices=SEGMENTS, default="test")

    sp = sub.add_parser("gen", help="generate a synthetic trace")
    sp.add_argument("--config", help="synthetic config JSON; calibrated defaults otherwise")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--n-tasks", type=int)
    sp.add_argument("--servers", type=int, default=3)
    sp.add_argument("--out", required=True)
    sp.add_argument("--save-config", help="also write the effective config here")
    sp.set_defaults(func=cmd_gen)

    sp = sub.add_parser("stats", help="per-server delay statistics and CDF curves")
    sp.add_argument("--trace", required=True)
    sp.add_argument("--out-dir", required=True)
    sp.add_argument("--points", type=int, default=500)
    sp.set_defaults(func=cmd_stats)

    sp = sub.add_parser("train-predictor", help="train windowed exceedance predictors")
    common_trace(sp)
    sp.add_argument("--window", type=int, default=1)
    sp.add_argument("--min-exceed", type=int)
    sp.add_argument("--epochs", type=int, default=100)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_train_predictor)

    sp = sub.add_parser("train-agent", help="train a double deep Q-learning agent")
    common_trace(sp)
    sp.add_argument("--lam", type=float, default=0.2)
    sp.add_argument("--steps", type=int, default=20_000)
    sp.add_argument("--epsilon-decay", type=int)
    sp.add_argument("--out", required=True)
    sp.add_argument("--log", help="training log CSV")
    sp.set_defaults(func=cmd_train_agent)

    sp = sub.add_parser("simulate", help="replay a trace under one controller")
    common_trace(sp, segment=True)
    sp.add_argument("--controller", required=True,
                    help="all | best-rssi | random | fixed:<n> | myopic | drl")
    sp.add_argument("--checkpoint", help="predictor or agent checkpoint")
    sp.add_argument("--delta", type=float, default=0.1, help="exceedance budget Delta")
    sp.add_argument("--out-dir", required=True)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("sweep", help="run an experiment spec")
    sp.add_argument("--spec", required=True)
    sp.add_argument("--out-dir")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("report", help="CDF, statistics, degradation and tradeoff tables")
    sp.add_argument("--trace", required=True)
    sp.add_argument("--train-fraction", type=float, default=0.8)
    sp.add_argument("--segment", choices=SEGMENTS, default="test")
    sp.add_argument("--points", type=int, default=500)
    sp.add_argument("--predictor", help="predictor checkpoint for the degradation table")
    sp.add_argument("--max-missing", type=int, default=2)
    sp.add_argument("--sweep", help="sweep CSV to summarise")
    sp.add_argument("--out-dir", required=True)
    sp.set_defaults(func=cmd_report)
    return p


CONFIG_ERRORS = (ConfigError, SchemaError, IntegrityError, TraceValueError, FileNotFoundError,
                 json.JSONDecodeError)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except CONFIG_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (OffloadError, FloatingPointError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
