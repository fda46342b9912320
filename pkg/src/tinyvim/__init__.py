"""Hybrid convolution / selective-state-space vision backbone in numpy.

Set ``TINYVIM_THREADS`` before the first import to cap BLAS threads.
"""

import os as _os

if "TINYVIM_THREADS" in _os.environ:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        _os.environ.setdefault(_var, _os.environ["TINYVIM_THREADS"])

from .backbone import (  # noqa: E402
    VARIANTS,
    ModelSpec,
    TinyViM,
    build_model,
    count_macs,
    count_params,
    fuse_reparam,
    toy_spec,
)
from .io import load_weights, read_tvmt, save_weights, write_tvmt  # noqa: E402
from .laplace import LaplaceMixer, MixerConfig, laplace_decompose, mixer_forward, split_channels  # noqa: E402
from .ssm import (  # noqa: E402
    SS2D,
    ScanDirection,
    SsmParams,
    cross_merge,
    cross_scan,
    s6_forward,
    ssm_conv_apply,
    ssm_kernel,
    ssm_scan_sequential,
    zoh_discretize,
)
from .tensor import GradTape, Tensor, backward, default_dtype, no_grad  # noqa: E402

__version__ = "0.1.0"
