"""Situation-aware per-aircraft state vectors and selective Z-score normalization.

Column layout of the 18-wide state vector::

    0-2   f_l  lat, lon, alt_m
    3-5   f_k  v_gs, v_vs, heading_deg
    6-7   f_c  v_dial, h_dial
    8-13  f_b  d_AP, d_AR, alpha_AP, alpha_AR, I_AP, I_AR
    14-17 f_t  sin/cos hour-of-day, sin/cos minute-of-hour

Only the first eight columns are normalized.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .geometry import AirspaceConfig, approach_factor, boundary_distance, contains, to_enu
from .simulator import AdsbMessage, MessageTable

D_IN = 18
N_NORMALIZED = 8
STD_FLOOR = 1e-6

FEATURE_NAMES = (
    "lat", "lon", "alt", "v_gs", "v_vs", "heading", "v_dial", "h_dial",
    "d_ap", "d_ar", "alpha_ap", "alpha_ar", "in_ap", "in_ar",
    "sin_hour", "cos_hour", "sin_minute", "cos_minute",
)

FEATURE_GROUPS = {
    "f_l": range(0, 3),
    "f_k": range(3, 6),
    "f_c": range(6, 8),
    "f_b": range(8, 14),
    "f_t": range(14, 18),
}


def feature_columns(drop: Iterable[str] = ()) -> np.ndarray:
    """Indices of the columns kept after dropping whole feature groups."""
    drop = set(drop)
    unknown = drop - FEATURE_GROUPS.keys()
    if unknown:
        raise ValueError(f"unknown feature groups: {sorted(unknown)}")
    cols = [i for g, r in FEATURE_GROUPS.items() if g not in drop for i in r]
    return np.array(cols, dtype=int)


def time_features(t) -> np.ndarray:
    """Cyclical hour-of-day and minute-of-hour encoding of ``t`` (seconds since midnight of day 0)."""
    t = np.asarray(t, dtype=float)
    sec_of_day = np.mod(t, 86400.0)
    hour = sec_of_day / 3600.0
    minute = np.mod(sec_of_day, 3600.0) / 60.0
    return np.stack([
        np.sin(2 * np.pi * hour / 24.0), np.cos(2 * np.pi * hour / 24.0),
        np.sin(2 * np.pi * minute / 60.0), np.cos(2 * np.pi * minute / 60.0),
    ], axis=-1)


def extract_table(table: MessageTable, t: float, airspace: AirspaceConfig) -> np.ndarray:
    """Raw (unnormalized) state vectors for every row of ``table``, shape (n, 18)."""
    n = len(table)
    out = np.empty((n, D_IN))
    if n == 0:
        return out
    out[:, 0] = table.lat
    out[:, 1] = table.lon
    out[:, 2] = table.alt
    out[:, 3] = table.v_gs
    out[:, 4] = table.v_vs
    out[:, 5] = table.heading
    out[:, 6] = table.v_dial
    out[:, 7] = table.h_dial
    enu = to_enu(table.geo(), airspace.origin)
    rad = np.radians(table.heading)
    vel = table.v_gs[:, None] * np.column_stack([np.sin(rad), np.cos(rad)])
    out[:, 8] = boundary_distance(airspace.ap, enu)
    out[:, 9] = boundary_distance(airspace.ar, enu)
    out[:, 10] = approach_factor(enu, vel, airspace.ap)
    out[:, 11] = approach_factor(enu, vel, airspace.ar)
    out[:, 12] = contains(airspace.ap, enu)
    out[:, 13] = contains(airspace.ar, enu)
    out[:, 14:] = time_features(t)
    return out


def extract_raw(msg: AdsbMessage, t: float, airspace: AirspaceConfig) -> np.ndarray:
    """State vector of one message, with the time features taken from the snapshot time ``t``."""
    return extract_table(MessageTable.from_messages([msg]), t, airspace)[0]


@dataclass(frozen=True)
class NormStats:
    mean: np.ndarray
    std: np.ndarray

    def to_dict(self) -> dict:
        return {"mean": [float(v) for v in self.mean], "std": [float(v) for v in self.std]}

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        return cls(np.asarray(d["mean"], dtype=float), np.asarray(d["std"], dtype=float))

    def dumps(self) -> str:
        return json.dumps(self.to_dict())


def fit_norm_stats(states: Sequence[np.ndarray] | np.ndarray) -> NormStats:
    """Population mean and std of columns 0-7 over all given aircraft states.

    ``states`` is an (n, 18) array or a sequence of per-snapshot arrays.
    """
    if isinstance(states, np.ndarray):
        x = states
    else:
        parts = [s for s in states if len(s)]
        x = np.concatenate(parts, axis=0) if parts else np.empty((0, D_IN))
    if len(x) == 0:
        raise ValueError("cannot fit normalization statistics on empty data")
    x = x[:, :N_NORMALIZED]
    mean = x.mean(axis=0)
    std = np.maximum(x.std(axis=0), STD_FLOOR)
    return NormStats(mean, std)


def normalize(v: np.ndarray, stats: NormStats) -> np.ndarray:
    """Z-score columns 0-7; columns 8-17 pass through untouched."""
    out = np.array(v, dtype=float, copy=True)
    out[..., :N_NORMALIZED] = (out[..., :N_NORMALIZED] - stats.mean) / stats.std
    return out


def snapshot_features(samples: Sequence, airspace: AirspaceConfig) -> list[np.ndarray]:
    """Raw state arrays, one (N_t, 18) array per sample."""
    return [extract_table(s.snapshot.aircraft, s.snapshot.t, airspace) for s in samples]


def prepare(samples: Sequence, airspace: AirspaceConfig, stats: NormStats | None = None):
    """Normalized state arrays and (n, 2) labels for a list of labeled samples.

    Fits the statistics on ``samples`` when ``stats`` is None and returns
    ``(states, labels, stats)``.
    """
    raw = snapshot_features(samples, airspace)
    if stats is None:
        stats = fit_norm_stats(raw)
    states = [normalize(r, stats) for r in raw]
    labels = np.array([[s.y_ap, s.y_ar] for s in samples], dtype=float).reshape(-1, 2)
    return states, labels, stats
