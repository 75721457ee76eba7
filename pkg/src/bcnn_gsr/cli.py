"""Command-line entry point: ``bcnn-gsr <subcommand> [options]``.

Global options come before the subcommand::

    bcnn-gsr --seed 3 --out runs/a bench
    bcnn-gsr --config exp.json train --distribution gmm

On failure a single JSON line ``{"error": ..., "type": ...}`` goes to stderr
and the exit code is 1.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import experiments as ex
from .graph import load_graph, save_graph
from .prior import PriorParams
from .recovery import recover, save_posterior_json
from .recovery import write_trace_csv as write_recovery_trace
from .sensor import ingest_sensor_dataset, write_sensor_fixture
from .signals import (
    add_noise_at_snr,
    load_mask,
    load_signals_csv,
    make_sampling_mask,
    save_mask,
    save_signals_csv,
)
from .training import train_prior
from .training import write_trace_csv as write_train_trace

log = logging.getLogger("bcnn_gsr")


def _config(args) -> ex.ExperimentConfig:
    cfg = ex.ExperimentConfig.load(args.config) if args.config else ex.ExperimentConfig()
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    return cfg


def _single_distribution(args, cfg) -> str:
    return args.distribution or cfg.distributions[0]


def cmd_hyperparam(args, cfg, out: Path) -> list[Path]:
    rows = ex.run_hyperparam_study(cfg)
    path = out / "hyperparam.csv"
    ex.write_csv(path, ex.HYPERPARAM_HEADER, rows)
    return [path]


def cmd_train(args, cfg, out: Path) -> list[Path]:
    if args.signals:
        if not (args.edges and args.coords):
            raise ValueError("--signals needs --edges and --coords")
        g = load_graph(args.edges, args.coords)
        data = load_signals_csv(args.signals)
    else:
        dist = _single_distribution(args, cfg)
        d = ex.DISTRIBUTIONS.index(dist)
        g = ex.make_graph(cfg)
        data = ex.generate_signals(dist, g, cfg.k_train, (cfg.seed, ex._TRAIN, d), cfg.bandwidth)
        # Held-out signals for a later ``recover`` call.
        test = ex.generate_signals(dist, g, cfg.trials, (cfg.seed, ex._TRUTH, d), cfg.bandwidth)
        save_graph(g, out / "edges.txt", out / "coords.txt")
        save_signals_csv(out / "train_signals.csv", data)
        save_signals_csv(out / "test_signals.csv", test)
    result = train_prior(g, data, cfg.train_config(), args.model or cfg.table1_model)
    result.theta.save(out / "prior.json")
    write_train_trace(out / "train_trace.csv", result.trace, timing=args.timing)
    return [out / "prior.json", out / "train_trace.csv"]


def cmd_recover(args, cfg, out: Path) -> list[Path]:
    theta = PriorParams.load(args.prior)
    g = load_graph(args.edges, args.coords)
    truth = None
    if args.truth:
        truth = load_signals_csv(args.truth)[args.index]
    if args.observations:
        if not args.mask:
            raise ValueError("--observations needs --mask")
        mask = load_mask(args.mask)
        y = load_signals_csv(args.observations)[0]
    else:
        if truth is None:
            raise ValueError("give --observations and --mask, or --truth to simulate them")
        m = ex._n_observed(g.n, cfg.sampling_ratios[0])
        mask = make_sampling_mask(g.n, m, (cfg.seed, ex._MASK, args.index))
        y = add_noise_at_snr(mask.sample(truth), cfg.snr_db[0], (cfg.seed, ex._NOISE, args.index)).y
        save_mask(out / "mask.txt", mask)
        save_signals_csv(out / "observations.csv", y)
    res = recover(theta, g, mask, y, cfg.recovery_config(), truth=truth)
    save_signals_csv(out / "x_hat.csv", res.x_hat)
    write_recovery_trace(out / "recovery_trace.csv", res.trace)
    save_posterior_json(out / "posterior.json", res.posterior)
    summary = {"converged": res.converged, "iterations": len(res.trace),
               "sigma_e2": res.noise.sigma_e2}
    if truth is not None:
        summary["nmse"] = ex.nmse(res.x_hat, truth)
    print(json.dumps(summary))
    return [out / "x_hat.csv", out / "recovery_trace.csv"]


def cmd_bench(args, cfg, out: Path) -> list[Path]:
    res = ex.run_recovery_benchmark(cfg)
    ex.write_csv(out / "bench.csv", ex.BENCH_HEADER, res.summary)
    ex.write_csv(out / "bench_trials.csv", ex.TRIALS_HEADER, res.trials)
    return [out / "bench.csv", out / "bench_trials.csv"]


def cmd_variance(args, cfg, out: Path) -> list[Path]:
    if args.distribution:
        cfg = replace(cfg, variance_distribution=args.distribution)
    rows = ex.run_variance_study(cfg, args.trials)
    ex.write_csv(out / "variance.csv", ex.VARIANCE_HEADER, rows)
    return [out / "variance.csv"]


def cmd_ingest(args, cfg, out: Path) -> list[Path]:
    readings, coords = args.readings, args.coords
    if args.make_fixture:
        readings, coords = out / "fixture_readings.txt", out / "fixture_coords.txt"
        write_sensor_fixture(readings, coords, seed=cfg.seed)
    if not (readings and coords):
        raise ValueError("ingest needs --readings and --coords (or --make-fixture)")
    ds = ingest_sensor_dataset(readings, coords, args.policy,
                               cfg.kernel_width, cfg.edge_threshold)
    save_graph(ds.graph, out / "sensor_edges.txt", out / "sensor_coords.txt")
    save_signals_csv(out / "sensor_signals.csv", ds.signals)
    written = [out / "sensor_signals.csv"]
    if args.benchmark:
        full = ingest_sensor_dataset(readings, coords, "all-complete",
                                     cfg.kernel_width, cfg.edge_threshold)
        rows = ex.run_sensor_benchmark(full.graph, full.signals, cfg, trials=args.trials,
                                       k_train=len(ds.signals))
        ex.write_csv(out / "sensor_bench.csv", ex.SENSOR_HEADER, rows)
        written.append(out / "sensor_bench.csv")
    print(json.dumps({"nodes": ds.n, "signals": len(ds.signals)}))
    return written


def cmd_plotdata(args, cfg, out: Path) -> list[Path]:
    return ex.emit_plot_data(args.results, out)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bcnn-gsr", description=__doc__.splitlines()[0])
    p.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    p.add_argument("--config", type=Path, default=None, help="JSON ExperimentConfig")
    p.add_argument("--out", type=Path, default=Path("out"), help="output directory")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    sub.add_parser("hyperparam", help="preset models vs. KLD on GMRF and GMM data")

    t = sub.add_parser("train", help="train a prior on synthetic or supplied signals")
    t.add_argument("--distribution", choices=ex.DISTRIBUTIONS)
    t.add_argument("--model", choices=ex.MODELS)
    t.add_argument("--signals", type=Path, help="training signals CSV")
    t.add_argument("--edges", type=Path)
    t.add_argument("--coords", type=Path)
    t.add_argument("--timing", action="store_true",
                   help="record wall times in train_trace.csv (breaks byte reproducibility)")

    r = sub.add_parser("recover", help="recover one signal with a trained prior")
    r.add_argument("--prior", type=Path, required=True)
    r.add_argument("--edges", type=Path, required=True)
    r.add_argument("--coords", type=Path, required=True)
    r.add_argument("--mask", type=Path)
    r.add_argument("--observations", type=Path, help="CSV with one row of observed values")
    r.add_argument("--truth", type=Path, help="signals CSV; enables NMSE and simulation")
    r.add_argument("--index", type=int, default=0, help="row of --truth to use")

    sub.add_parser("bench", help="NMSE of BCNN-GSR vs GMRF-VB over SNRs and ratios")

    v = sub.add_parser("variance", help="per-node mean and variance over repeated trials")
    v.add_argument("--distribution", choices=ex.DISTRIBUTIONS)
    v.add_argument("--trials", type=int, default=None)

    i = sub.add_parser("ingest", help="load sensor readings into a graph and signals")
    i.add_argument("--readings", type=Path)
    i.add_argument("--coords", type=Path)
    i.add_argument("--policy", default="first-500-complete")
    i.add_argument("--make-fixture", action="store_true",
                   help="write and ingest a synthetic 54-node fixture")
    i.add_argument("--benchmark", action="store_true",
                   help="also compare both recovery methods on a held-out signal")
    i.add_argument("--trials", type=int, default=20)

    pd = sub.add_parser("plotdata", help="reshape a results CSV into plot series")
    pd.add_argument("--results", type=Path, required=True)
    return p


COMMANDS = {
    "hyperparam": cmd_hyperparam,
    "train": cmd_train,
    "recover": cmd_recover,
    "bench": cmd_bench,
    "variance": cmd_variance,
    "ingest": cmd_ingest,
    "plotdata": cmd_plotdata,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(args)
        args.out.mkdir(parents=True, exist_ok=True)
        for path in COMMANDS[args.command](args, cfg, args.out):
            log.info("wrote %s", path)
    except Exception as exc:  # noqa: BLE001 - reported as a machine-readable line
        print(json.dumps({"error": str(exc), "type": type(exc).__name__}), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
