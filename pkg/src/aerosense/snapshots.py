"""Window-based snapshot construction, flow labels and chronological splits."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .geometry import AirspaceConfig, contains, in_scope, to_enu
from .simulator import MessageTable

DEFAULT_DELTA = 8.0
DEFAULT_HORIZON = 900.0
DEFAULT_CADENCE = 60.0


@dataclass
class Snapshot:
    """Most recent in-scope state of each aircraft seen in ``[t - delta, t]``.

    ``aircraft`` is a :class:`MessageTable` with one row per aircraft, ordered
    by aircraft id.
    """

    t: float
    aircraft: MessageTable

    def __len__(self) -> int:
        return len(self.aircraft)

    def enu(self, airspace: AirspaceConfig) -> np.ndarray:
        return to_enu(self.aircraft.geo(), airspace.origin).reshape(-1, 3)

    def __eq__(self, other) -> bool:
        return isinstance(other, Snapshot) and self.t == other.t and self.aircraft == other.aircraft


@dataclass
class LabeledSample:
    snapshot: Snapshot
    y_ap: int
    y_ar: int
    horizon: float

    @property
    def t(self) -> float:
        return self.snapshot.t

    @property
    def labels(self) -> np.ndarray:
        return np.array([self.y_ap, self.y_ar], dtype=float)


def _latest_per_aircraft(ids: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Row index of the latest message per id, in id order; ties go to the later row."""
    if len(ids) == 0:
        return np.empty(0, dtype=int)
    order = np.lexsort((np.arange(len(t)), t))
    rev = order[::-1]
    _, first = np.unique(ids[rev], return_index=True)
    return rev[first]


def build_snapshot(messages: MessageTable, t: float, airspace: AirspaceConfig,
                   delta: float = DEFAULT_DELTA, presorted: bool | None = None) -> Snapshot:
    """Snapshot at ``t`` from messages stamped in ``[t - delta, t]``.

    Invalid messages and messages outside the scope are skipped before the
    latest-per-aircraft selection.  ``presorted`` skips the time-order check.
    """
    if not delta > 0:
        raise ValueError("delta must be positive")
    if presorted if presorted is not None else messages.is_sorted():
        lo = np.searchsorted(messages.t, t - delta, side="left")
        hi = np.searchsorted(messages.t, t, side="right")
        window = messages[lo:hi]
    else:
        window = messages[(messages.t >= t - delta) & (messages.t <= t)]
    window = window[window.valid_mask()]
    if len(window):
        enu = to_enu(window.geo(), airspace.origin)
        window = window[np.atleast_1d(in_scope(enu, airspace))]
    keep = _latest_per_aircraft(window.codes, window.t)
    return Snapshot(float(t), window[keep])


def count_labels(snapshot: Snapshot, airspace: AirspaceConfig) -> tuple[int, int]:
    """Aircraft counts ``(y_ap, y_ar)`` inside each controlled region."""
    if len(snapshot) == 0:
        return 0, 0
    enu = snapshot.enu(airspace)
    y_ap = int(np.sum(np.atleast_1d(contains(airspace.ap, enu))))
    y_ar = int(np.sum(np.atleast_1d(contains(airspace.ar, enu))))
    return y_ap, y_ar


def make_dataset(messages: MessageTable, t_grid: Sequence[float], airspace: AirspaceConfig,
                 horizon: float = DEFAULT_HORIZON, delta: float = DEFAULT_DELTA,
                 coverage: tuple[float, float] | None = None) -> list[LabeledSample]:
    """One labeled sample per query time; labels come from the snapshot at ``t + horizon``.

    ``coverage`` is the time span the stream describes; by default the span
    of its timestamps.
    """
    if coverage is None:
        coverage = (float(messages.t.min()), float(messages.t.max())) if len(messages) else (0.0, 0.0)
    t_grid = [float(t) for t in t_grid]
    late = [t for t in t_grid if t + horizon > coverage[1] or t < coverage[0]]
    if late:
        raise ValueError(f"{len(late)} query times fall outside coverage {coverage}, first {late[0]}")
    if not messages.is_sorted():
        messages = messages[np.argsort(messages.t, kind="stable")]

    cache: dict[float, Snapshot] = {}

    def snap(t: float) -> Snapshot:
        if t not in cache:
            cache[t] = build_snapshot(messages, t, airspace, delta, presorted=True)
        return cache[t]

    samples = []
    for t in t_grid:
        y_ap, y_ar = count_labels(snap(t + horizon), airspace)
        samples.append(LabeledSample(snap(t), y_ap, y_ar, float(horizon)))
    return samples


def time_grid(start: float, stop: float, cadence: float = DEFAULT_CADENCE) -> np.ndarray:
    """Query times ``start, start + cadence, ...`` not exceeding ``stop``."""
    n = int(math.floor((stop - start) / cadence + 1e-9)) + 1
    return start + cadence * np.arange(max(n, 0))


def split_sizes(n: int, ratios: Sequence[float] = (0.8, 0.1, 0.1)) -> tuple[int, int, int]:
    if len(ratios) != 3 or min(ratios) <= 0 or abs(sum(ratios) - 1) > 1e-9:
        raise ValueError("ratios must be three positive numbers summing to 1")
    n_train = math.floor(ratios[0] * n + 1e-9)
    n_val = math.floor(ratios[1] * n + 1e-9)
    return n_train, n_val, n - n_train - n_val


def chronological_split(samples: Sequence, ratios: Sequence[float] = (0.8, 0.1, 0.1)):
    """Train/val/test by time order; the rounding remainder goes to test."""
    ts = [s.t for s in samples]
    if any(b < a for a, b in zip(ts, ts[1:])):
        raise ValueError("samples must be sorted by time")
    n_train, n_val, _ = split_sizes(len(samples), ratios)
    samples = list(samples)
    return samples[:n_train], samples[n_train:n_train + n_val], samples[n_train + n_val:]
