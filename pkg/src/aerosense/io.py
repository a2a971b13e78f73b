"""File formats: newline-delimited JSON for bulk data, JSON run configs, CSV reports
and attention exports.

Floats are written with ``repr`` precision by :mod:`json`, so every numeric
field reads back bit-identical.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .features import NormStats, extract_table, normalize
from .geometry import AirspaceConfig, GeoPoint, Region, default_airspace
from .model import AeroSense, ModelConfig
from .simulator import DEFAULT_HOURLY_RATE, NUMERIC_FIELDS, MessageTable, SimConfig
from .snapshots import DEFAULT_CADENCE, DEFAULT_DELTA, DEFAULT_HORIZON, LabeledSample, Snapshot
from .training import DaypartBin, Metrics, TrainConfig, metrics_rows


class ConfigError(ValueError):
    """Malformed or inconsistent run configuration."""


class DataError(ValueError):
    """Unreadable or malformed data file."""


# messages and datasets ------------------------------------------------------------

def _dump_line(fh, obj) -> None:
    fh.write(json.dumps(obj, separators=(",", ":")))
    fh.write("\n")


def iter_jsonl(path) -> Iterable[dict]:
    try:
        with open(path, encoding="utf-8") as fh:
            for n, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    yield json.loads(line)
                except json.JSONDecodeError as exc:
                    raise DataError(f"{path}:{n}: {exc.msg}") from None
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from None


def write_messages(table: MessageTable, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in table.records():
            _dump_line(fh, rec)


def _table(recs: Sequence[dict], where) -> MessageTable:
    try:
        if not recs:
            return MessageTable.empty()
        return MessageTable([str(r["aircraft_id"]) for r in recs],
                            **{n: [float(r[n]) for r in recs] for n in NUMERIC_FIELDS})
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"{where}: bad message record ({exc})") from None


def read_messages(path) -> MessageTable:
    return _table(list(iter_jsonl(path)), path)


def sample_record(s: LabeledSample) -> dict:
    return {"t": s.t, "horizon": s.horizon, "y_ap": s.y_ap, "y_ar": s.y_ar,
            "aircraft": list(s.snapshot.aircraft.records())}


def write_dataset(samples: Sequence[LabeledSample], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in samples:
            _dump_line(fh, sample_record(s))


def snapshot_from_record(rec: dict, where="snapshot") -> Snapshot:
    try:
        return Snapshot(float(rec["t"]), _table(rec.get("aircraft", []), where))
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"{where}: bad snapshot record ({exc})") from None


def read_dataset(path) -> list[LabeledSample]:
    out = []
    for n, rec in enumerate(iter_jsonl(path), start=1):
        where = f"{path}:{n}"
        try:
            out.append(LabeledSample(snapshot_from_record(rec, where), int(rec["y_ap"]),
                                     int(rec["y_ar"]), float(rec["horizon"])))
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"{where}: bad sample ({exc})") from None
    return out


def read_snapshot(path, index: int = 0) -> Snapshot:
    """A snapshot from a ``.json`` object, or line ``index`` of a dataset file."""
    path = Path(path)
    if path.suffix == ".json":
        try:
            return snapshot_from_record(json.loads(path.read_text(encoding="utf-8")), path)
        except OSError as exc:
            raise DataError(f"cannot read {path}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: {exc.msg}") from None
    for n, rec in enumerate(iter_jsonl(path)):
        if n == index:
            return snapshot_from_record(rec, f"{path}:{n + 1}")
    raise DataError(f"{path} has no sample {index}")


def write_snapshot(snapshot: Snapshot, path) -> None:
    Path(path).write_text(json.dumps({"t": snapshot.t, "aircraft": list(snapshot.aircraft.records())}),
                          encoding="utf-8")


# normalization stats, logs, reports ---------------------------------------------------

def write_norm_stats(stats: NormStats, path) -> None:
    Path(path).write_text(stats.dumps() + "\n", encoding="utf-8")


def read_norm_stats(path) -> NormStats:
    try:
        d = json.loads(Path(path).read_text(encoding="utf-8"))
        stats = NormStats.from_dict(d)
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from None
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise DataError(f"{path}: bad normalization stats ({exc})") from None
    if stats.mean.shape != (8,) or stats.std.shape != (8,) or np.any(stats.std <= 0):
        raise DataError(f"{path}: stats need 8 means and 8 positive stds")
    return stats


def write_log(entries: Sequence[dict], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for e in entries:
            _dump_line(fh, e)


def write_metrics_csv(results: dict[str, dict[str, Metrics]], path) -> None:
    rows = metrics_rows(results)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=["model", "region", "mae", "rmse", "r2"])
        w.writeheader()
        w.writerows(rows)


def write_daypart_csv(report: Sequence[DaypartBin], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["interval", "count", "mae_ap", "mae_ar"])
        for b in report:
            ap, ar = (b.mae["AP"], b.mae["AR"]) if b.mae else ("", "")
            w.writerow([b.label, b.count, ap, ar])


# attention export ------------------------------------------------------------------

def attention_export(model: AeroSense, snapshot: Snapshot, airspace: AirspaceConfig) -> dict:
    """Per-head attention among the snapshot's aircraft plus influence scores.

    A head's influence for aircraft j is the attention it receives, i.e. the
    sum of column j of that head's matrix.
    """
    if model.norm_stats is None:
        raise DataError("model file carries no normalization stats")
    x = normalize(extract_table(snapshot.aircraft, snapshot.t, airspace), model.norm_stats)
    enu = snapshot.enu(airspace)
    ids = [str(i) for i in snapshot.aircraft.ids]
    blocks = []
    for b, probs in enumerate(model.attention(x)):
        heads = [{"head": h, "matrix": probs[h].tolist(), "influence": probs[h].sum(axis=0).tolist()}
                 for h in range(probs.shape[0])]
        blocks.append({"block": b, "heads": heads})
    return {"t": snapshot.t, "aircraft_id": ids, "position_km": enu.tolist(), "blocks": blocks}


# run configuration -------------------------------------------------------------------

@dataclass
class RegionSpec:
    footprint_km: list
    alt_band_km: list
    center_km: list

    def build(self, name: str) -> Region:
        return Region(name, np.asarray(self.footprint_km, dtype=float), tuple(self.alt_band_km),
                      np.asarray(self.center_km, dtype=float))

    @classmethod
    def of(cls, r: Region) -> "RegionSpec":
        return cls(r.footprint.tolist(), list(r.alt_band), r.center.tolist())


def _default_region(name: str):
    return lambda: RegionSpec.of(default_airspace().regions[name])


@dataclass
class AirspaceSection:
    origin_lat_deg: float = default_airspace().origin.lat
    origin_lon_deg: float = default_airspace().origin.lon
    origin_alt_m: float = default_airspace().origin.alt
    buffer_km: float = default_airspace().buffer_km
    ap: RegionSpec = field(default_factory=_default_region("AP"))
    ar: RegionSpec = field(default_factory=_default_region("AR"))

    def build(self) -> AirspaceConfig:
        origin = GeoPoint(self.origin_lat_deg, self.origin_lon_deg, self.origin_alt_m)
        return AirspaceConfig(origin, self.ap.build("AP"), self.ar.build("AR"), self.buffer_km)

    @classmethod
    def of(cls, a: AirspaceConfig) -> "AirspaceSection":
        return cls(a.origin.lat, a.origin.lon, a.origin.alt, a.buffer_km,
                   RegionSpec.of(a.ap), RegionSpec.of(a.ar))


@dataclass
class SimSection:
    seed: int = 0
    duration_s: float = 86400.0
    hourly_rate_per_h: list = field(default_factory=lambda: list(DEFAULT_HOURLY_RATE))
    msg_period_s: float = 4.0
    drop_prob: float = 0.1
    kind_mix: list = field(default_factory=lambda: [0.45, 0.35, 0.20])
    receiver_range_km: float = 260.0

    def build(self, seed: int | None = None) -> SimConfig:
        cfg = SimConfig(self.seed if seed is None else seed, self.duration_s,
                        tuple(self.hourly_rate_per_h), self.msg_period_s, self.drop_prob,
                        tuple(self.kind_mix), self.receiver_range_km)
        cfg.validate()
        return cfg


@dataclass
class DatasetSection:
    delta_s: float = DEFAULT_DELTA
    horizon_s: float = DEFAULT_HORIZON
    cadence_s: float = DEFAULT_CADENCE
    start_s: float = 3600.0
    split: list = field(default_factory=lambda: [0.8, 0.1, 0.1])


@dataclass
class ModelSection:
    d_model: int = 128
    n_heads: int = 4
    encoder_hidden: list = field(default_factory=lambda: [64, 128])
    d_hidden: int = 64
    dropout: float = 0.1
    n_blocks: int = 1
    n_max: int = 120
    pooling: str = "sum"
    heads: str = "decoupled"
    use_mask: bool = True
    drop_groups: list = field(default_factory=list)
    seed: int = 0

    def build(self) -> ModelConfig:
        kw = asdict(self)
        kw.pop("seed")
        return ModelConfig(**kw)


@dataclass
class TrainSection:
    lr: float = 3e-4
    batch_size: int = 64
    max_epochs: int = 100
    early_stop_patience_epochs: int = 10
    plateau_patience_epochs: int = 5
    plateau_factor: float = 0.5
    min_delta: float = 1e-8
    huber_delta: float = 1.0
    seed: int = 0

    def build(self, seed: int | None = None) -> TrainConfig:
        return TrainConfig(lr=self.lr, batch_size=self.batch_size, max_epochs=self.max_epochs,
                           early_stop_patience=self.early_stop_patience_epochs,
                           plateau_patience=self.plateau_patience_epochs,
                           plateau_factor=self.plateau_factor, min_delta=self.min_delta,
                           huber_delta=self.huber_delta, seed=self.seed if seed is None else seed)


@dataclass
class PathsSection:
    messages: str | None = None
    dataset_dir: str | None = None
    model: str | None = None
    reports_dir: str | None = None


SECTIONS = {"airspace": AirspaceSection, "sim": SimSection, "dataset": DatasetSection,
            "model": ModelSection, "train": TrainSection, "paths": PathsSection}


@dataclass
class RunConfig:
    airspace: AirspaceSection = field(default_factory=AirspaceSection)
    sim: SimSection = field(default_factory=SimSection)
    dataset: DatasetSection = field(default_factory=DatasetSection)
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainSection = field(default_factory=TrainSection)
    paths: PathsSection = field(default_factory=PathsSection)

    def validate(self) -> None:
        """Build every sub-config once so errors surface before any work starts."""
        try:
            self.airspace.build()
            self.sim.build()
            self.model.build()
            self.train.build()
            d = self.dataset
            for name in ("delta_s", "horizon_s", "cadence_s"):
                if not getattr(d, name) > 0:
                    raise ValueError(f"dataset.{name} must be positive")
            if d.start_s < 0:
                raise ValueError("dataset.start_s must be nonnegative")
            if len(d.split) != 3 or min(d.split) <= 0 or abs(sum(d.split) - 1) > 1e-9:
                raise ValueError("dataset.split must be three positive fractions summing to 1")
        except (ValueError, TypeError) as exc:
            raise ConfigError(str(exc)) from None
        outs = [p for p in (self.paths.messages, self.paths.dataset_dir, self.paths.model,
                            self.paths.reports_dir) if p]
        if len({str(Path(p).resolve()) for p in outs}) != len(outs):
            raise ConfigError("output paths must be distinct")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(d) - set(SECTIONS)
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        parts = {}
        for name, section in SECTIONS.items():
            body = d.get(name, {})
            if not isinstance(body, dict):
                raise ConfigError(f"section {name} must be an object")
            allowed = {f.name for f in fields(section)}
            extra = set(body) - allowed
            if extra:
                raise ConfigError(f"unknown keys in {name}: {sorted(extra)}")
            try:
                if name == "airspace":
                    body = {k: RegionSpec(**v) if k in ("ap", "ar") else v for k, v in body.items()}
                parts[name] = section(**body)
            except TypeError as exc:
                raise ConfigError(f"section {name}: {exc}") from None
        cfg = cls(**parts)
        cfg.validate()
        return cfg


def load_config(path) -> RunConfig:
    if path is None:
        cfg = RunConfig()
        cfg.validate()
        return cfg
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc.msg} at line {exc.lineno}") from None
    try:
        return RunConfig.from_dict(d)
    except (TypeError, AttributeError) as exc:
        raise ConfigError(f"{path}: {exc}") from None


def save_config(cfg: RunConfig, path) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2) + "\n", encoding="utf-8")
