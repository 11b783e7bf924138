"""Contrastive continuation and the two linear-probe tasks.

Starts from a short reconstruction run, adds the projection head, trains on
reconstruction plus InfoNCE, then probes frozen features for beam selection
and line-of-sight detection next to a raw-channel baseline.

Run: python3 demos/03_contrastive_and_probes.py   (well under a minute on one core)
"""

import numpy as np

from channel_mae import chansynth as cs
from channel_mae import downstream as D
from channel_mae import model as M
from channel_mae import objectives as ob
from channel_mae import patchpipe as pp
from channel_mae import trainer as T

sys_cfg = cs.SystemConfig(n_antennas=16, n_subcarriers=32)
pre = cs.build_dataset(1200, sys_cfg, seed=11, scenario_ids=range(8))
pre.normalization_std = cs.normalization_std(pre.h_low)
train, val = pre.split((0.8, 0.2))
down = cs.build_dataset(1500, sys_cfg, seed=12, scenario_ids=range(8, 12))
down.normalization_std = pre.normalization_std

cfg = M.ModelConfig(d_e=32, L_enc=2, L_dec=1, M_enc=4, M_dec=4, d_c=32,
                    patch=pp.PatchConfig(16, 32, 1, 16))
fast = dict(batch_size=32, lr_max=1e-3, lr_min=1e-5, dtype="float32")
wimae = T.pretrain_wimae(train, val, cfg, T.TrainConfig(epochs=4, **fast)).checkpoint
print("reconstruction pretraining done")

loss = ob.LossConfig()
contra = T.pretrain_contra(train, val, wimae, T.TrainConfig(epochs=2, **fast), loss).checkpoint
held = val.subset(np.arange(128))
for name, ck in (("warm start", M.warm_start(wimae, 0)), ("after training", contra)):
    pos, neg = T.pair_similarity(ck, held, 0.6, 0, loss)
    print(f"{name:>15}: positive-pair cos {pos:.3f}, other-anchor cos {neg:.3f}")

# Frozen features, one linear classifier per task.
rows = []
for label, ck in (("wimae", wimae), ("contrawimae", contra), ("raw", None)):
    beam = D.extract_features(ck, down, "beam" if ck else "raw")
    los = D.extract_features(ck, down, "los" if ck else "raw")
    rows += D.run_beam_probe(beam, down, label, 16, (0.1, 1.0))
    rows += D.run_los_probe(los, down, label, (0.1, 1.0))
print("\ntask\tmodel\tCS\tbudget\tmetric\tvalue")
print(D.format_report(rows), end="")
