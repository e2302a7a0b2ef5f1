"""Surprise pipeline walkthrough: deviations, energy operator, shaped rewards.

Run: python demos/04_surprise_energy.py
"""

import math

import numpy as np

from trader.surprise import (SurpriseConfig, SurpriseNet, batch_deviations,
                             mellowmax_energy, shaped_reward)

rng = np.random.default_rng(3)

# Deviations: per-dimension std of state transitions over a batch.
states = rng.random((32, 36))
calm_next = states + 0.001 * rng.standard_normal((32, 36))
wild_next = states + 0.05 * rng.standard_normal((32, 36))
sigma_calm = batch_deviations(states, calm_next)
sigma_wild = batch_deviations(states, wild_next)
print(f"mean deviation: calm batch {sigma_calm.mean():.5f}, "
      f"volatile batch {sigma_wild.mean():.5f}")

# The energy operator is a smooth upper envelope of max.
v = rng.uniform(-2, 2, size=8)
e = mellowmax_energy(v)
print(f"\nenergy(v): max {v.max():.4f} <= {e:.4f} <= max+ln(n) "
      f"{v.max() + math.log(len(v)):.4f}")
print(f"energy([1000, 1000]) = {mellowmax_energy(np.array([1000.0, 1000.0])):.4f} "
      f"(no overflow)")

# Shaping adds the signed, temperature-weighted energy of the surprise
# net's deviation encoding to the extrinsic reward.
net = SurpriseNet(rng=rng)
bonus = SurpriseConfig(beta=0.01, enabled=True, energy_sign=1.0)
penalty = SurpriseConfig(beta=0.01, enabled=True, energy_sign=-1.0)
r = 1.0
print(f"\nextrinsic reward {r}")
for name, cfg, sigma in (("bonus/calm", bonus, sigma_calm),
                         ("bonus/volatile", bonus, sigma_wild),
                         ("penalty/calm", penalty, sigma_calm),
                         ("penalty/volatile", penalty, sigma_wild)):
    print(f"  shaped ({name:<16}) = {shaped_reward(r, sigma, net, cfg):.6f}")
print("the energy sign decides whether volatile transitions are sought or avoided")
