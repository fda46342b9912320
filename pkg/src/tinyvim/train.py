"""Toy training loop on the synthetic frequency dataset."""

from __future__ import annotations

import csv
import logging
import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import ops
from .backbone import TinyViM, build_model, toy_spec
from .data import ToyDatasetSpec, make_dataset, split_holdout
from .laplace import MIXER_MODES
from .nn import Module
from .ssm import SsmParams
from .tensor import GradTape, Tensor, no_grad

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    mode: str = "low-only"
    steps: int = 2000
    batch_size: int = 32
    lr: float = 2e-3
    betas: tuple[float, float] = (0.9, 0.999)
    weight_decay: float = 0.05
    warmup: int = 50
    seed: int = 7
    dataset: ToyDatasetSpec = field(default_factory=ToyDatasetSpec)
    eval_batch: int = 100

    def __post_init__(self):
        if self.mode not in MIXER_MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.steps < 0 or self.batch_size <= 0 or self.lr < 0 or self.weight_decay < 0:
            raise ValueError("steps, batch size, lr and weight decay must be non-negative")


class AdamW:
    """Adam with decoupled weight decay (applied to weights with ndim >= 2)."""

    def __init__(self, params: list[Tensor], lr: float, betas=(0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.0):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.wd = weight_decay
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]

    def step(self, lr: float | None = None) -> None:
        lr = self.lr if lr is None else lr
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            update = (m / c1) / (np.sqrt(v / c2) + self.eps)
            if self.wd and p.ndim >= 2:
                update = update + self.wd * p.data
            p.data = (p.data - lr * update).astype(p.dtype)


def cosine_lr(step: int, total: int, base: float, warmup: int) -> float:
    if step < warmup:
        return base * (step + 1) / warmup
    progress = (step - warmup) / max(1, total - warmup)
    return 0.5 * base * (1.0 + math.cos(math.pi * min(1.0, progress)))


@dataclass
class TrainResult:
    losses: list[float]
    train_accuracy: float
    test_accuracy: float
    model: TinyViM
    grad_census: dict[str, bool]

    def write_loss_csv(self, path: str | os.PathLike) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["step", "loss"])
            for i, loss in enumerate(self.losses):
                w.writerow([i, repr(loss)])


def evaluate(model: Module, images: np.ndarray, labels: np.ndarray, batch: int = 100) -> float:
    was = model.training
    model.eval()
    correct = 0
    with no_grad():
        for i in range(0, len(images), batch):
            logits = model(Tensor(images[i:i + batch]))
            correct += int(np.sum(np.argmax(logits.data, axis=1) == labels[i:i + batch]))
    model.train(was)
    return correct / max(1, len(images))


def grad_census(model: Module) -> dict[str, bool]:
    """Parameter name -> whether it holds any nonzero gradient."""
    return {n: p.grad is not None and bool(np.any(p.grad != 0)) for n, p in model.named_parameters()}


def ssm_parameter_names(model: Module) -> set[str]:
    names = set()
    for name, mod in _named_modules(model):
        if isinstance(mod, SsmParams):
            names.update(f"{name}.{n}" for n, _ in mod.named_parameters())
    return names


def _named_modules(model: Module, prefix: str = ""):
    yield prefix.rstrip("."), model
    for name, child in model.children():
        yield from _named_modules(child, prefix + name + ".")


def train_toy(cfg: TrainConfig, model: TinyViM | None = None) -> TrainResult:
    """Train a toy-scale model; deterministic for a given config."""
    images, labels = make_dataset(cfg.dataset)
    (xtr, ytr), (xte, yte) = split_holdout(cfg.dataset, images, labels)
    init_seq, order_seq = np.random.SeedSequence(cfg.seed).spawn(2)
    if model is None:
        spec = toy_spec(cfg.mode, num_classes=cfg.dataset.classes)
        model = build_model(spec, seed=int(init_seq.generate_state(1)[0]))
    model.train()
    params = model.parameters()
    opt = AdamW(params, cfg.lr, cfg.betas, weight_decay=cfg.weight_decay)
    order_rng = np.random.default_rng(order_seq)
    census = {n: False for n, _ in model.named_parameters()}
    losses: list[float] = []
    perm = order_rng.permutation(len(xtr))
    cursor = 0
    for step in range(cfg.steps):
        if cursor + cfg.batch_size > len(perm):
            perm = order_rng.permutation(len(xtr))
            cursor = 0
        idx = perm[cursor:cursor + cfg.batch_size]
        cursor += cfg.batch_size
        model.zero_grad()
        try:
            with GradTape() as tape:
                loss = ops.cross_entropy(model(Tensor(xtr[idx])), ytr[idx])
            tape.backward(loss)
        except FloatingPointError as exc:
            raise RuntimeError(f"training diverged at step {step}: {exc}") from exc
        value = loss.item()
        if not math.isfinite(value):
            raise RuntimeError(f"training diverged at step {step}: loss={value}")
        losses.append(value)
        for n, p in model.named_parameters():
            if not census[n] and p.grad is not None and np.any(p.grad != 0):
                census[n] = True
        opt.step(cosine_lr(step, cfg.steps, cfg.lr, cfg.warmup))
        if step % 100 == 0:
            log.info("step %d loss %.4f", step, value)
    return TrainResult(
        losses=losses,
        train_accuracy=evaluate(model, xtr, ytr, cfg.eval_batch),
        test_accuracy=evaluate(model, xte, yte, cfg.eval_batch),
        model=model,
        grad_census=census,
    )
