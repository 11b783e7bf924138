"""Walk through the data side: synthetic channels, patches, masks and tokens.

Run: python3 demos/01_channels_and_tokens.py
"""

import numpy as np

from channel_mae import chansynth as cs
from channel_mae import patchpipe as pp

# A small antenna x subcarrier grid keeps the printout readable.
cfg = cs.SystemConfig(n_antennas=8, n_subcarriers=32)
sample = cs.make_sample(seed=7, scenario_id=2, config=cfg)
paths = cs.sample_paths(7, 2, cfg)
print(f"paths: {len(paths)}, line of sight: {paths.los}")
print(f"3.5 GHz channel {sample.h_low.shape}, mean power {np.mean(np.abs(sample.h_low) ** 2):.3f}")
print(f"28 GHz channel  {sample.h_high.shape}, mean power {np.mean(np.abs(sample.h_high) ** 2):.4f}")

# Frequency selectivity: magnitude across subcarriers on antenna 0.
print("antenna 0 |h| over subcarriers:")
print(np.round(np.abs(sample.h_low[0]), 2))

# Patches are 1 x 16 here, so each antenna row splits into two patches.
pc = pp.PatchConfig(8, 32, 1, 16)
print(f"\npatch grid {pc.grid}, K={pc.K}, d_p={pc.d_p}")
tok = pp.tokens(sample.h_low, pc)
print("token matrix", tok.shape, "(real tokens first, then imaginary)")

rng = np.random.default_rng(0)
mask = pp.sample_mask(pc.K, 0.6, rng)
print(f"mask ratio 0.6 keeps {mask.visible_count} of {pc.K} patches "
      f"(realized ratio {mask.realized_ratio:.4f})")
print("visible patches:", mask.visible_patches)
print("visible token index I_v:", mask.token_index)

seq = pp.vectorize_visible(pp.partition(sample.h_low, pc), mask)
assert np.array_equal(seq.tokens, tok[seq.index])
print("visible sequence", seq.tokens.shape, "matches the full token matrix at I_v")

# Round trip: tokens back to the complex matrix.
back = pp.reassemble(tok, pc)
print("reassemble(tokens(h)) == h:", np.array_equal(back, sample.h_low))

# A dataset of a few hundred records, written and read back.
ds = cs.build_dataset(300, cfg, seed=1, scenario_ids=range(4))
ds.normalization_std = cs.normalization_std(ds.h_low)
train, val = ds.split((0.8, 0.2))
print(f"\ndataset: {len(ds)} records, LoS share {ds.los.mean():.2f}, "
      f"split {len(train)}/{len(val)}, std {ds.normalization_std:.4f}")
