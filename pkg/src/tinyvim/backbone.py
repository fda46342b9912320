"""TinyViM backbone: stem, local blocks, TinyViM blocks, patch embeddings, head."""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass, replace

import numpy as np

from . import ops
from .laplace import LaplaceMixer, MixerConfig
from .nn import Conv2d, Linear, Module
from .rep import ConvBN, RepDW3
from .tensor import Tensor, count_macs as _mac_scope, no_grad


@dataclass(frozen=True)
class ModelSpec:
    name: str
    local_blocks: tuple[int, int, int, int]
    tinyvim_blocks: tuple[int, int, int, int]
    dims: tuple[int, int, int, int]
    alphas: tuple[float, ...] = (0.25, 0.5, 0.5, 0.75)
    pool_ratios: tuple[int, ...] = (8, 4, 2, 1)
    ffn_expansion: int = 4
    num_classes: int = 1000
    ssm_expand: int = 3
    d_state: int = 16
    mixer_mode: str = "low-only"

    def __post_init__(self):
        for key in ("local_blocks", "tinyvim_blocks", "dims", "alphas", "pool_ratios"):
            if len(getattr(self, key)) != 4:
                raise ValueError(f"{key} must have one entry per stage")
        if any(b > a for a, b in zip(self.alphas[1:], self.alphas[:-1])):
            raise ValueError("alpha schedule must be non-decreasing across stages")

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "ModelSpec":
        raw = json.loads(text)
        for key in ("local_blocks", "tinyvim_blocks", "dims", "alphas", "pool_ratios"):
            raw[key] = tuple(raw[key])
        return cls(**raw)

    def scaled(self, factor: float, num_classes: int | None = None, **kw) -> "ModelSpec":
        """Same topology with stage widths multiplied by ``factor``."""
        dims = tuple(int(round(d * factor)) for d in self.dims)
        return replace(self, name=f"{self.name}x{factor:g}", dims=dims,
                       num_classes=num_classes or self.num_classes, **kw)


VARIANTS = {
    "S": ModelSpec("S", (2, 2, 7, 5), (1, 1, 2, 1), (48, 64, 168, 224)),
    "B": ModelSpec("B", (3, 2, 8, 4), (1, 1, 2, 1), (48, 96, 192, 384)),
    "L": ModelSpec("L", (3, 3, 10, 5), (1, 1, 2, 1), (64, 128, 384, 512)),
}


def toy_spec(mode: str = "low-only", num_classes: int = 10) -> ModelSpec:
    """TinyViM-S topology with quartered widths for 32x32 inputs."""
    return VARIANTS["S"].scaled(0.25, num_classes=num_classes, mixer_mode=mode)


class FFN(Module):
    def __init__(self, dim: int, expansion: int, rng: np.random.Generator):
        self.fc1 = Conv2d(dim, dim * expansion, 1, rng)
        self.fc2 = Conv2d(dim * expansion, dim, 1, rng)

    def forward(self, x: Tensor) -> Tensor:
        return self.fc2(ops.gelu(self.fc1(x)))


class LocalBlock(Module):
    """Rep3 followed by an FFN with a residual around the FFN."""

    def __init__(self, dim: int, expansion: int, rng: np.random.Generator):
        self.rep = RepDW3(dim, rng)
        self.ffn = FFN(dim, expansion, rng)

    def forward(self, x: Tensor) -> Tensor:
        return local_block(x, self)


def local_block(x: Tensor, block: LocalBlock) -> Tensor:
    r = block.rep(x)
    return ops.add(r, block.ffn(r))


class TinyViMBlock(Module):
    def __init__(self, dim: int, expansion: int, cfg: MixerConfig, rng: np.random.Generator,
                 ssm_expand: int, d_state: int):
        self.mixer = LaplaceMixer(cfg, rng, ssm_expand=ssm_expand, d_state=d_state)
        self.ffn = FFN(dim, expansion, rng)

    def forward(self, x: Tensor) -> Tensor:
        return tinyvim_block(x, self)


def tinyvim_block(x: Tensor, block: TinyViMBlock) -> Tensor:
    x = ops.add(block.mixer(x), x)
    return ops.add(block.ffn(x), x)


class PatchEmbed(Module):
    """Stride-2 Rep depth-wise 3x3, then 1x1 conv + BN to the new width."""

    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator):
        self.down = RepDW3(c_in, rng, stride=2)
        self.proj = ConvBN(c_in, c_out, 1, rng)

    def forward(self, x: Tensor) -> Tensor:
        return self.proj(self.down(x))


class Stem(Module):
    """Two stride-2 3x3 convolutions (each with BN and GeLU)."""

    def __init__(self, c_out: int, rng: np.random.Generator, c_in: int = 3):
        self.conv1 = ConvBN(c_in, c_out // 2, 3, rng, stride=2)
        self.conv2 = ConvBN(c_out // 2, c_out, 3, rng, stride=2)

    def forward(self, x: Tensor) -> Tensor:
        return ops.gelu(self.conv2(ops.gelu(self.conv1(x))))


def stage_layout(local: int, tinyvim: int) -> list[str]:
    """Block order of one stage: TinyViM blocks at the end, extras mid-stage."""
    order = ["local"] * local
    if tinyvim > 1:
        mid = math.ceil(local / 2)
        order[mid:mid] = ["tinyvim"] * (tinyvim - 1)
    return order + ["tinyvim"]


class TinyViM(Module):
    def __init__(self, spec: ModelSpec, rng: np.random.Generator):
        self.spec = spec
        self.stem = Stem(spec.dims[0], rng)
        self.stages: list[list[Module]] = []
        for s in range(4):
            dim = spec.dims[s]
            blocks: list[Module] = []
            if s > 0:
                blocks.append(PatchEmbed(spec.dims[s - 1], dim, rng))
            cfg = MixerConfig(spec.alphas[s], spec.pool_ratios[s], dim, spec.mixer_mode)
            for kind in stage_layout(spec.local_blocks[s], spec.tinyvim_blocks[s]):
                if kind == "local":
                    blocks.append(LocalBlock(dim, spec.ffn_expansion, rng))
                else:
                    blocks.append(TinyViMBlock(dim, spec.ffn_expansion, cfg, rng,
                                               spec.ssm_expand, spec.d_state))
            self.stages.append(blocks)
        self.head = Linear(spec.dims[-1], spec.num_classes, rng)

    def children(self):
        yield "stem", self.stem
        for s, blocks in enumerate(self.stages):
            for i, blk in enumerate(blocks):
                yield f"stages.{s}.{i}", blk
        yield "head", self.head

    def mixers(self) -> list[LaplaceMixer]:
        return [m for m in self.modules() if isinstance(m, LaplaceMixer)]

    def forward_features(self, x: Tensor) -> list[Tensor]:
        feats = []
        x = self.stem(x)
        for blocks in self.stages:
            for blk in blocks:
                x = blk(x)
            feats.append(x)
        return feats

    def forward(self, x: Tensor) -> Tensor:
        return self.head(ops.global_avg_pool(self.forward_features(x)[-1]))


def build_model(variant: str | ModelSpec = "S", num_classes: int | None = None, seed: int = 0,
                **overrides) -> TinyViM:
    """Build a variant by name ('S', 'B', 'L') or from an explicit spec."""
    if isinstance(variant, ModelSpec):
        spec = variant
    else:
        try:
            spec = VARIANTS[str(variant).upper()]
        except KeyError:
            raise ValueError(f"unknown variant {variant!r}; expected one of {sorted(VARIANTS)}") from None
    if num_classes is not None:
        overrides["num_classes"] = num_classes
    if overrides:
        spec = replace(spec, **overrides)
    return TinyViM(spec, np.random.default_rng(seed))


def count_params(model: Module) -> int:
    """Number of learnable scalars."""
    return int(sum(p.size for p in model.parameters()))


def count_macs(model: Module, input_shape=(1, 3, 224, 224)) -> int:
    """Multiply-accumulates of conv, linear and scan ops for one forward pass."""
    was_training = model.training
    model.eval()
    x = Tensor(np.zeros(input_shape, dtype=np.float32))
    try:
        with no_grad(), _mac_scope() as counter:
            model(x)
    finally:
        model.train(was_training)
    return counter.total


def fuse_reparam(model: Module) -> Module:
    """Collapse every reparameterizable unit in place; returns ``model``."""
    fusable = [m for m in model.modules() if isinstance(m, (RepDW3, ConvBN))]
    if fusable and all(m.fused for m in fusable):
        warnings.warn("model already fused; nothing to do", stacklevel=2)
        return model
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for m in fusable:
            m.fuse()
    return model
