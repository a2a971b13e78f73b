"""Simulate two days of traffic, train a small AeroSense model and compare it with
persistence.  Runs in a few minutes.

    python demos/quickstart.py
"""

import numpy as np

from aerosense.baselines import baseline_persistence
from aerosense.features import prepare
from aerosense.geometry import default_airspace
from aerosense.model import AeroSense, ModelConfig
from aerosense.simulator import SimConfig, generate_traffic
from aerosense.snapshots import chronological_split, make_dataset, time_grid
from aerosense.training import TrainConfig, evaluate, train

# %% traffic and snapshots
airspace = default_airspace()
duration = 2 * 86400.0
messages = generate_traffic(SimConfig(seed=1, duration=duration), airspace)
print(f"{len(messages)} messages from {len(np.unique(messages.codes))} aircraft")

samples = make_dataset(messages, time_grid(3600.0, duration - 900.0, 60.0), airspace,
                       coverage=(0.0, duration))
train_s, val_s, test_s = chronological_split(samples)
print(f"samples: {len(train_s)} train, {len(val_s)} val, {len(test_s)} test")
print("largest snapshot:", max(len(s.snapshot) for s in samples), "aircraft")

# %% features and training
x_tr, y_tr, stats = prepare(train_s, airspace)
x_va, y_va, _ = prepare(val_s, airspace, stats)
x_te, y_te, _ = prepare(test_s, airspace, stats)

model = AeroSense(ModelConfig(d_model=16, n_heads=4, encoder_hidden=(32, 32), d_hidden=16),
                  seed=0, norm_stats=stats)
result = train(model, (x_tr, y_tr), (x_va, y_va), TrainConfig(lr=3e-3, max_epochs=25),
               on_epoch=lambda e: print(f"epoch {e['epoch']:2d}  train {e['train_loss']:.3f}"
                                        f"  val {e['val_loss']:.3f}"))

# %% evaluation
for name, pred in (("aerosense", model.predict(x_te)),
                   ("persistence", baseline_persistence(test_s, airspace))):
    for region, m in evaluate(pred, y_te).items():
        print(f"{name:12s} {region}  MAE {m.mae:.3f}  RMSE {m.rmse:.3f}  R2 {m.r2:.3f}")
