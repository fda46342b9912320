"""
Reparameterize, save, reload
============================

Training-time branches (3x3, 1x1 and identity, each with batch norm) fold
into one depth-wise conv for inference. We fuse a model, check its logits
against the multi-branch version and round-trip the weights through a
TVMW file.
"""

import tempfile
from pathlib import Path

import numpy as np

from tinyvim import Tensor, build_model, count_params, fuse_reparam, load_weights, no_grad, save_weights

model = build_model("S", num_classes=10, seed=3).eval()
x = Tensor(np.random.default_rng(4).normal(size=(2, 3, 96, 96)).astype(np.float32))

with no_grad():
    before = model(x).data
    n_before = count_params(model)
    fuse_reparam(model)
    after = model(x).data
print(f"params {n_before} -> {count_params(model)}")
print("max |fused - unfused| logits:", np.abs(after - before).max())

with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "fused.tvmw"
    save_weights(model, path)
    print("TVMW size:", path.stat().st_size, "bytes")
    clone = fuse_reparam(build_model("S", num_classes=10, seed=99)).eval()
    load_weights(clone, path)
    with no_grad():
        print("reloaded logits identical:", np.array_equal(clone(x).data, after))
