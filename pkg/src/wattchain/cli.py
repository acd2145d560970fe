"""Command-line entry point: run a node, replay a scripted day, import
data, and train/evaluate the solar forecaster."""

from __future__ import annotations

import argparse
import asyncio
import csv
import logging
import sys

import numpy as np

from . import energy_data, forecast
from .config import ConfigInvalid, DataMissing, PortInUse, load_config
from .energy_data import SeriesKind
from .replay import ReplayError, TradeFailed, run_replay


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wattchain",
        description="prosumer energy trading simulator with solar forecasting")
    parser.add_argument("--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one prosumer node")
    p_run.add_argument("--config", required=True, help="node config file")

    p_replay = sub.add_parser("replay", help="replay a scripted trading day on two nodes")
    p_replay.add_argument("--scenario", required=True, help="scenario JSONL file")
    p_replay.add_argument("--config-a", required=True, help="first node config")
    p_replay.add_argument("--config-b", required=True, help="second node config")
    p_replay.add_argument("--factor", type=float, default=None,
                          help="override the nodes' clock acceleration")
    p_replay.add_argument("--report", default=None, help="write a JSON report here")

    p_train = sub.add_parser("train", help="train the solar forecaster")
    p_train.add_argument("--weather", required=True, help="weather CSV")
    p_train.add_argument("--target", required=True, help="generation CSV (targets)")
    p_train.add_argument("--epochs", type=int, default=800)
    p_train.add_argument("--seed", type=int, default=0)
    p_train.add_argument("--batch-size", type=int, default=None)
    p_train.add_argument("--lr", type=float, default=1e-3)
    p_train.add_argument("--layers", default=None,
                         help="comma-separated layer sizes, e.g. 4,256,128,64,1")
    p_train.add_argument("--out", required=True, help="model file to write")

    p_predict = sub.add_parser("predict", help="predict a 5-minute day grid")
    p_predict.add_argument("--model", required=True)
    p_predict.add_argument("--grid", required=True, help="286-step weather day grid CSV")
    p_predict.add_argument("--out", default=None, help="prediction CSV (default stdout)")

    p_metrics = sub.add_parser("metrics", help="compare actual vs predicted values")
    p_metrics.add_argument("--actual", required=True)
    p_metrics.add_argument("--pred", required=True)

    p_import = sub.add_parser("import", help="normalise a power CSV onto a uniform grid")
    p_import.add_argument("--input", required=True)
    p_import.add_argument("--node-id", required=True)
    p_import.add_argument("--kind", required=True, choices=["generation", "consumption"])
    p_import.add_argument("--interval", type=float, default=None,
                          help="resample interval in seconds")
    p_import.add_argument("--out", required=True)
    return parser


def cmd_run(args) -> int:
    from .node import Node

    try:
        config = load_config(args.config)
        node = Node(config)
    except (ConfigInvalid, DataMissing) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    try:
        asyncio.run(node.run())
    except PortInUse as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        pass
    return 0


def cmd_replay(args) -> int:
    try:
        report = run_replay(args.scenario, [args.config_a, args.config_b],
                            factor=args.factor, report_path=args.report)
    except (TradeFailed, ReplayError, ConfigInvalid) as exc:
        print(f"replay failed: {exc}", file=sys.stderr)
        return 1
    print(report.summary())
    return 0 if report.audit_ok else 1


def cmd_train(args) -> int:
    weather = energy_data.load_weather_csv(args.weather)
    target = energy_data.load_power_csv(args.target, node_id="train", kind=SeriesKind.GENERATION)
    dataset, dropped = energy_data.build_dataset(weather, target)
    layers = [int(s) for s in args.layers.split(",")] if args.layers else None
    model = forecast.init_model(layers, seed=args.seed)
    report = forecast.train(model, dataset, epochs=args.epochs,
                            batch_size=args.batch_size, seed=args.seed, lr=args.lr)
    forecast.save_model(model, args.out)
    print(f"rows {len(dataset)} (dropped {dropped}), epochs {report.epochs_run}, "
          f"final train loss {report.train_losses[-1]:.3e}, "
          f"val loss {report.val_losses[-1]:.3e}, {report.wall_time_s:.1f}s")
    print(forecast.format_metrics_table(report.final_metrics))
    print(f"model written to {args.out}")
    return 0


def cmd_predict(args) -> int:
    model = forecast.load_model(args.model)
    grid = energy_data.load_weather_csv(args.grid)
    predictions = forecast.predict_minute_ahead(model, grid)
    lines = [f"{energy_data.format_iso(r.timestamp)},{p:.6g}"
             for r, p in zip(grid, predictions)]
    text = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


def _read_values(path: str) -> np.ndarray:
    """Last column of a CSV as floats; a non-numeric first row is a header."""
    values: list[float] = []
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [row for row in csv.reader(fh) if row]
    if not rows:
        return np.empty(0)
    start = 0
    try:
        float(rows[0][-1])
    except ValueError:
        start = 1
    for row in rows[start:]:
        values.append(float(row[-1]))
    return np.asarray(values)


def cmd_metrics(args) -> int:
    actual = _read_values(args.actual)
    predicted = _read_values(args.pred)
    report = forecast.metrics(actual, predicted)
    print(forecast.format_metrics_table(report))
    return 0


def cmd_import(args) -> int:
    series = energy_data.load_power_csv(args.input, node_id=args.node_id,
                                        kind=SeriesKind(args.kind))
    if args.interval:
        series = energy_data.resample(series, args.interval)
    energy_data.write_power_csv(series, args.out)
    print(f"{len(series.samples)} samples written to {args.out} "
          f"(interval {series.interval_s:g}s)")
    return 0


_COMMANDS = {
    "run": cmd_run,
    "replay": cmd_replay,
    "train": cmd_train,
    "predict": cmd_predict,
    "metrics": cmd_metrics,
    "import": cmd_import,
}


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(message)s",
        stream=sys.stdout)
    try:
        return _COMMANDS[args.command](args)
    except (energy_data.DataError, forecast.ForecastError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
