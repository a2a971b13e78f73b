"""Persistence and the linear look-back forecaster on a week of simulated flow.

The look-back model only sees the 15-minute count series, so it forecasts the
daily rhythm; persistence copies the current counts.

    python demos/baselines.py
"""

import numpy as np

from aerosense.baselines import baseline_linear_lookback, baseline_persistence, decompose
from aerosense.geometry import default_airspace
from aerosense.simulator import SimConfig, generate_traffic
from aerosense.snapshots import chronological_split, make_dataset, time_grid
from aerosense.training import evaluate

airspace = default_airspace()
duration = 7 * 86400.0
messages = generate_traffic(SimConfig(seed=3, duration=duration), airspace)
samples = make_dataset(messages, time_grid(3600.0, duration - 900.0, 900.0), airspace,
                       coverage=(0.0, duration))
train_s, val_s, test_s = chronological_split(samples)
train_s = train_s + val_s  # no model selection here, so validation joins the fit

# %% the AR series and its trend
ar = np.array([s.y_ar for s in train_s], dtype=float)
trend, rest = decompose(ar)
print(f"AR counts: mean {ar.mean():.1f}, trend range {trend.min():.1f}..{trend.max():.1f}, "
      f"remainder std {rest.std():.2f}")

# %% forecasts
labels = np.array([s.labels for s in test_s])
lookback, kept = baseline_linear_lookback(train_s, test_s, lookback=96)
for name, pred in (("persistence", baseline_persistence(test_s, airspace)), ("lookback", lookback)):
    for region, m in evaluate(pred[kept], labels[kept]).items():
        print(f"{name:12s} {region}  MAE {m.mae:.3f}  RMSE {m.rmse:.3f}")
