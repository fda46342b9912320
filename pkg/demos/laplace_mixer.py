"""
Frequency split inside the mixer
================================

The mixer sends a fraction of channels through a pooled low-frequency path
(handled by the 2D selective scan) and keeps the residual detail for a
depth-wise conv. Here we take the first mixer of a freshly built model, feed
it a smooth-plus-noise feature map and compare where each branch puts its
spectral energy.
"""

import numpy as np

from tinyvim import Tensor, build_model, no_grad
from tinyvim.laplace import mixer_branches
from tinyvim.spectral import low_freq_energy_ratio, relative_log_amplitude
from tinyvim.ssm import count_ssm_tokens

model = build_model("S", seed=0).eval()
mixer = model.mixers()[0]
print(mixer.cfg)

rng = np.random.default_rng(1)
coarse = rng.normal(size=(1, mixer.cfg.channels, 7, 7))
x = np.repeat(np.repeat(coarse, 8, axis=2), 8, axis=3) + 0.3 * rng.normal(size=(1, mixer.cfg.channels, 56, 56))

with no_grad(), count_ssm_tokens() as tokens:
    parts = mixer_branches(Tensor(x.astype(np.float32)), mixer)
print("tokens through the scan:", tokens, "out of", 56 * 56)

##############################################################################
# Energy within a quarter of the maximum radius

for name in ("x_l", "low_out", "high_out"):
    print(f"{name:9s} low-frequency energy share: {low_freq_energy_ratio(parts[name].data, 0.25):.3f}")

##############################################################################
# Relative log amplitude at the highest frequency bin

for name in ("low_out", "high_out"):
    rep = relative_log_amplitude(parts[name].data)
    print(f"{name:9s} delta log amplitude at f=1: {rep.rla[-1]:+.2f}")
