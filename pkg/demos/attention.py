"""Train briefly, then print who attends to whom in one busy snapshot.

Influence is the attention an aircraft receives, summed over the rows of one
head's matrix.  Use ``aerosense export-attention`` for a JSON file to plot.

    python demos/attention.py
"""

import numpy as np

from aerosense.features import prepare
from aerosense.geometry import contains, default_airspace
from aerosense.io import attention_export
from aerosense.model import AeroSense, ModelConfig
from aerosense.simulator import SimConfig, generate_traffic
from aerosense.snapshots import chronological_split, make_dataset, time_grid
from aerosense.training import TrainConfig, train

airspace = default_airspace()
duration = 86400.0
messages = generate_traffic(SimConfig(seed=5, duration=duration), airspace)
samples = make_dataset(messages, time_grid(3600.0, duration - 900.0, 120.0), airspace,
                       coverage=(0.0, duration))
tr, va, _ = chronological_split(samples)
x_tr, y_tr, stats = prepare(tr, airspace)
x_va, y_va, _ = prepare(va, airspace, stats)
model = AeroSense(ModelConfig(d_model=16, n_heads=2, encoder_hidden=(32, 32), d_hidden=16),
                  seed=0, norm_stats=stats)
train(model, (x_tr, y_tr), (x_va, y_va), TrainConfig(lr=1e-3, max_epochs=8))

# %% the busiest snapshot
busy = max(samples, key=lambda s: len(s.snapshot)).snapshot
export = attention_export(model, busy, airspace)
pos = np.array(export["position_km"])
where = np.where(contains(airspace.ap, pos), "AP",
                 np.where(contains(airspace.ar, pos), "AR", "buffer"))
for head in export["blocks"][0]["heads"]:
    influence = np.array(head["influence"])
    top = np.argsort(influence)[::-1][:5]
    print(f"head {head['head']}: most attended aircraft")
    for j in top:
        x, y, z = pos[j]
        print(f"  {export['aircraft_id'][j]}  influence {influence[j]:.2f}  "
              f"at ({x:7.1f}, {y:7.1f}) km, {z:4.1f} km up, {where[j]}")
