"""``aerosense`` command line: simulate, build-dataset, train, evaluate, predict,
export-attention.

Exit status is 0 on success, 2 for configuration errors, 3 for data errors
and 4 when training hits a non-finite loss.  Set ``AEROSENSE_LOG`` to a
logging level name (``INFO``, ``DEBUG``) for progress output on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import io
from .baselines import baseline_persistence
from .features import fit_norm_stats, prepare, snapshot_features
from .io import AirspaceSection, ConfigError, DataError, RegionSpec, RunConfig
from .model import AeroSense, load_params, save_params
from .simulator import generate_traffic
from .snapshots import chronological_split, make_dataset, time_grid
from .training import NonFiniteLoss, daypart_eval, evaluate, train

EXIT_CONFIG, EXIT_DATA, EXIT_NONFINITE = 2, 3, 4
SPLITS = ("train", "val", "test")

log = logging.getLogger("aerosense")


def _out(args, fallback: str | None, what: str) -> Path:
    path = args.out or fallback
    if not path:
        raise ConfigError(f"no output path for {what}: pass --out or set it in the config")
    return Path(path)


def _model(path) -> AeroSense:
    try:
        return load_params(path)
    except (OSError, KeyError, ValueError) as exc:
        raise DataError(f"cannot load model {path}: {exc}") from None


def _model_airspace(model: AeroSense, cfg: RunConfig):
    """The airspace a model was trained on, falling back to the run config."""
    stored = getattr(model, "extra", {}).get("airspace")
    if stored is None:
        return cfg.airspace.build()
    stored = dict(stored)
    stored["ap"], stored["ar"] = RegionSpec(**stored["ap"]), RegionSpec(**stored["ar"])
    return AirspaceSection(**stored).build()


def cmd_simulate(args, cfg: RunConfig) -> int:
    out = _out(args, cfg.paths.messages, "messages")
    messages = generate_traffic(cfg.sim.build(args.seed), cfg.airspace.build())
    io.write_messages(messages, out)
    log.info("wrote %d messages to %s", len(messages), out)
    return 0


def cmd_build_dataset(args, cfg: RunConfig) -> int:
    out = _out(args, cfg.paths.dataset_dir, "dataset directory")
    airspace = cfg.airspace.build()
    d = cfg.dataset
    messages = io.read_messages(args.messages)
    end = cfg.sim.duration_s
    grid = time_grid(d.start_s, end - d.horizon_s, d.cadence_s)
    if len(grid) == 0:
        raise DataError("the simulated span is too short for one labeled sample")
    samples = make_dataset(messages, grid, airspace, d.horizon_s, d.delta_s, coverage=(0.0, end))
    parts = chronological_split(samples, d.split)
    if not parts[0]:
        raise DataError("training split is empty")
    stats = fit_norm_stats(snapshot_features(parts[0], airspace))
    out.mkdir(parents=True, exist_ok=True)
    for name, part in zip(SPLITS, parts):
        io.write_dataset(part, out / f"{name}.jsonl")
    io.write_norm_stats(stats, out / "norm_stats.json")
    log.info("wrote %s samples to %s", "/".join(str(len(p)) for p in parts), out)
    return 0


def cmd_train(args, cfg: RunConfig) -> int:
    out = _out(args, cfg.paths.model, "model")
    airspace = cfg.airspace.build()
    stats_path = args.stats or Path(args.train).with_name("norm_stats.json")
    stats = io.read_norm_stats(stats_path)
    tr_states, tr_labels, _ = prepare(io.read_dataset(args.train), airspace, stats)
    va_states, va_labels, _ = prepare(io.read_dataset(args.val), airspace, stats)
    if not tr_states:
        raise DataError(f"{args.train} holds no samples")
    seed = cfg.model.seed if args.seed is None else args.seed
    model = AeroSense(cfg.model.build(), seed=seed, norm_stats=stats)
    result = train(model, (tr_states, tr_labels), (va_states, va_labels), cfg.train.build(args.seed))
    extra = {"airspace": asdict(AirspaceSection.of(airspace)), "best_epoch": result.best_epoch,
             "best_val_loss": result.best_val_loss, "stopped_early": result.stopped_early}
    save_params(model, out, extra)
    io.write_log(result.log, out.with_name(out.stem + ".log.jsonl"))
    log.info("best epoch %d, val loss %.5f", result.best_epoch, result.best_val_loss)
    return 0


def cmd_evaluate(args, cfg: RunConfig) -> int:
    out = _out(args, cfg.paths.reports_dir, "reports directory")
    model = _model(args.model)
    if model.norm_stats is None:
        raise DataError("model file carries no normalization stats")
    airspace = _model_airspace(model, cfg)
    test = io.read_dataset(args.test)
    if not test:
        raise DataError(f"{args.test} holds no samples")
    states, labels, _ = prepare(test, airspace, model.norm_stats)
    pred = model.predict(states)
    results = {"aerosense": evaluate(pred, labels),
               "persistence": evaluate(baseline_persistence(test, airspace), labels)}
    out.mkdir(parents=True, exist_ok=True)
    io.write_metrics_csv(results, out / "metrics.csv")
    io.write_daypart_csv(daypart_eval(pred, labels, [s.t for s in test]), out / "daypart.csv")
    for name, per_region in results.items():
        for region, m in per_region.items():
            print(f"{name:12s} {region}  MAE {m.mae:.4f}  RMSE {m.rmse:.4f}  R2 {m.r2:.4f}")
    return 0


def _normalized_states(model: AeroSense, snapshot, airspace) -> np.ndarray:
    if model.norm_stats is None:
        raise DataError("model file carries no normalization stats")
    states, _, _ = prepare([_Unlabeled(snapshot)], airspace, model.norm_stats)
    return states[0]


class _Unlabeled:
    """Adapter so a bare snapshot passes through :func:`prepare`."""

    def __init__(self, snapshot):
        self.snapshot = snapshot
        self.y_ap = self.y_ar = 0


def cmd_predict(args, cfg: RunConfig) -> int:
    model = _model(args.model)
    airspace = _model_airspace(model, cfg)
    snapshot = io.read_snapshot(args.snapshot, args.index)
    y = model.predict([_normalized_states(model, snapshot, airspace)])[0]
    print(f"{y[0]:.6f} {y[1]:.6f}")
    return 0


def cmd_export_attention(args, cfg: RunConfig) -> int:
    out = _out(args, None, "attention export")
    model = _model(args.model)
    airspace = _model_airspace(model, cfg)
    snapshot = io.read_snapshot(args.snapshot, args.index)
    export = io.attention_export(model, snapshot, airspace)
    out.write_text(json.dumps(export) + "\n", encoding="utf-8")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="aerosense", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name, fn, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--seed", type=int, help="override the configured seed")
        p.add_argument("--out", help="output path")
        p.set_defaults(fn=fn)
        return p

    command("simulate", cmd_simulate, "write a synthetic message stream (JSONL)")
    p = command("build-dataset", cmd_build_dataset, "snapshots, labels, splits and norm stats")
    p.add_argument("messages")
    p = command("train", cmd_train, "fit a model on train/val dataset files")
    p.add_argument("train")
    p.add_argument("val")
    p.add_argument("--stats", help="norm stats file (default: next to the training file)")
    p = command("evaluate", cmd_evaluate, "metrics and daypart CSVs on a dataset file")
    p.add_argument("model")
    p.add_argument("test")
    for name, fn, text in (("predict", cmd_predict, "print predicted AP and AR counts"),
                           ("export-attention", cmd_export_attention, "attention matrices and influence")):
        p = command(name, fn, text)
        p.add_argument("model")
        p.add_argument("snapshot", help="snapshot .json or dataset .jsonl")
        p.add_argument("--index", type=int, default=0, help="sample index within a dataset file")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = os.environ.get("AEROSENSE_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = io.load_config(args.config)
        return args.fn(args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NonFiniteLoss as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NONFINITE
    except (DataError, ValueError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
