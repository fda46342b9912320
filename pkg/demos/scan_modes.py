"""
State-space scans three ways
============================

A diagonal SSM can be run as a recurrence or as one long causal
convolution. This script discretizes a small system, runs both forms and
then times the selective (input-dependent) scan at growing lengths.
"""

import numpy as np

from tinyvim.bench import bench_scan, scaling_ratios
from tinyvim.ssm import ssm_conv_apply, ssm_kernel, ssm_scan_sequential, zoh_discretize

rng = np.random.default_rng(0)

##############################################################################
# Discretize a continuous system with zero-order hold

A = -rng.uniform(0.1, 3.0, size=(4, 8))
B = rng.normal(size=(4, 8))
C = rng.normal(size=(4, 8))
A_bar, B_bar = zoh_discretize(A, B, delta=0.05)
print("largest |A_bar|:", np.abs(A_bar).max())

##############################################################################
# Recurrence and convolution give the same outputs

x = rng.normal(size=(256, 4))
y_rec = ssm_scan_sequential(A_bar, B_bar, C, x)
y_conv = ssm_conv_apply(ssm_kernel(A_bar, B_bar, C, len(x)), x)
print("max |recurrence - convolution|:", np.abs(y_rec - y_conv).max())

##############################################################################
# The selective scan costs time linear in the sequence length

rows = bench_scan((512, 1024, 2048), repeats=3, modes=("s6",))
for L, _, sec in rows:
    print(f"L={L:5d}  {sec * 1e3:7.2f} ms")
print("doubling ratios:", [round(r, 2) for r in scaling_ratios(rows)])
