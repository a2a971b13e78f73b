"""Reference forecasters: persistence and a DLinear-style linear look-back model."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .geometry import AirspaceConfig
from .snapshots import LabeledSample, count_labels


def baseline_persistence(samples: Sequence[LabeledSample], airspace: AirspaceConfig) -> np.ndarray:
    """Predict the future counts as the counts in each sample's own snapshot."""
    return np.array([count_labels(s.snapshot, airspace) for s in samples], dtype=float).reshape(-1, 2)


def moving_average(x: np.ndarray, window: int = 25) -> np.ndarray:
    """Centered moving average along the last axis with edge-replication padding."""
    x = np.asarray(x, dtype=float)
    front = (window - 1) // 2
    back = window - 1 - front
    padded = np.concatenate([np.repeat(x[..., :1], front, axis=-1), x,
                             np.repeat(x[..., -1:], back, axis=-1)], axis=-1)
    c = np.cumsum(np.concatenate([np.zeros(x.shape[:-1] + (1,)), padded], axis=-1), axis=-1)
    return (c[..., window:] - c[..., :-window]) / window


def decompose(x: np.ndarray, window: int = 25) -> tuple[np.ndarray, np.ndarray]:
    trend = moving_average(x, window)
    return trend, x - trend


def flow_series(times: Sequence[float], counts: np.ndarray, step: float = 900.0):
    """Counts observed on the ``step`` grid, as (grid_times, (T, 2) values).

    ``times`` are the instants the counts describe; off-grid entries are
    ignored and the grid must be gap-free.
    """
    times = np.asarray(times, dtype=float)
    counts = np.asarray(counts, dtype=float).reshape(-1, 2)
    on_grid = np.isclose(np.mod(times, step), 0.0) | np.isclose(np.mod(times, step), step)
    t = np.round(times[on_grid] / step) * step
    _, first = np.unique(t, return_index=True)
    t, v = t[first], counts[on_grid][first]
    if len(t) > 1 and not np.allclose(np.diff(t), step):
        raise ValueError("flow series has gaps on the grid")
    return t, v


@dataclass
class LinearLookback:
    """Trend and remainder each mapped to the next value by an affine map.

    Both maps are fitted jointly by least squares on the training windows,
    per region independently; the prediction is the sum of their outputs.
    """

    lookback: int = 96
    window: int = 25
    step: float = 900.0
    coef: list[np.ndarray] = field(default_factory=list)

    def design(self, windows: np.ndarray) -> np.ndarray:
        trend, rest = decompose(windows, self.window)
        return np.concatenate([trend, rest, np.ones((len(windows), 1))], axis=1)

    def windows(self, series: np.ndarray, ends: np.ndarray) -> np.ndarray:
        """Look-back windows whose last element is ``series[end]``."""
        idx = ends[:, None] - self.lookback + 1 + np.arange(self.lookback)[None, :]
        return series[idx]

    def fit(self, series: np.ndarray) -> "LinearLookback":
        """``series`` is (T,) or (T, regions); windows predict the value one step ahead."""
        series = np.asarray(series, dtype=float)
        series = series[:, None] if series.ndim == 1 else series
        ends = np.arange(self.lookback - 1, len(series) - 1)
        if len(ends) == 0:
            raise ValueError(f"need more than {self.lookback} points to fit")
        self.coef = []
        for r in range(series.shape[1]):
            X = self.design(self.windows(series[:, r], ends))
            y = series[ends + 1, r]
            self.coef.append(np.linalg.lstsq(X, y, rcond=None)[0])
        return self

    def predict_windows(self, windows: np.ndarray, region: int = 0) -> np.ndarray:
        return self.design(np.atleast_2d(windows)) @ self.coef[region]

    def predict_series(self, series: np.ndarray) -> np.ndarray:
        """One-step-ahead predictions; entry i forecasts ``series[i + 1]`` (NaN without history)."""
        series = np.asarray(series, dtype=float)
        series = series[:, None] if series.ndim == 1 else series
        out = np.full(series.shape, np.nan)
        ends = np.arange(self.lookback - 1, len(series))
        for r in range(series.shape[1]):
            if len(ends):
                out[ends, r] = self.predict_windows(self.windows(series[:, r], ends), r)
        return out


def baseline_linear_lookback(train: Sequence[LabeledSample], test: Sequence[LabeledSample],
                             lookback: int = 96, step: float = 900.0):
    """Fit on the training flow series and forecast each test sample.

    The series is built from the sample labels placed at ``t + horizon``.
    A test sample at ``t`` uses the ``lookback`` grid values ending at the
    last grid instant not after ``t``.  Returns ``(pred, kept)`` where
    ``kept`` marks test samples with enough history; the rest are NaN.
    """
    everything = list(train) + list(test)
    times = np.array([s.t + s.horizon for s in everything])
    labels = np.array([[s.y_ap, s.y_ar] for s in everything], dtype=float)
    grid_t, grid_v = flow_series(times, labels, step)
    n_train_grid = int(np.sum(grid_t <= max(s.t + s.horizon for s in train)))
    model = LinearLookback(lookback, step=step).fit(grid_v[:n_train_grid])

    pred = np.full((len(test), 2), np.nan)
    for i, s in enumerate(test):
        end = int(np.searchsorted(grid_t, s.t, side="right")) - 1
        if end - lookback + 1 < 0 or end < 0:
            continue
        # the label target is s.t + horizon; iterate one-step forecasts until we reach it
        window = grid_v[end - lookback + 1:end + 1].copy()
        t_last = grid_t[end]
        while t_last + step <= s.t + s.horizon + 1e-9:
            nxt = np.array([model.predict_windows(window[:, r], r)[0] for r in range(2)])
            window = np.vstack([window[1:], nxt])
            t_last += step
        pred[i] = window[-1]
    kept = ~np.isnan(pred).any(axis=1)
    return pred, kept
