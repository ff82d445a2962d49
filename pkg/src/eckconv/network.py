"""A stack of convolution blocks with a global-mean classification head."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from . import geom
from .autograd import Tape, group_mean, linear, smoothed_cross_entropy
from .kernel import uniform_init
from .nn import (AdamState, BlockConfig, adam_step, as_vars, block_forward, cosine_lr,
                 init_block_params, plan_block, scale_augment, stack_plans)

log = logging.getLogger(__name__)


@dataclass
class NetConfig:
    blocks: list = field(default_factory=list)
    num_classes: int = 4
    in_channels: int = 1
    normals: str = "true"
    augment_k: int = 32
    fps_seed: int = 0

    @classmethod
    def build(cls, m=(64, 32, 8), k=(16, 16, 16), radius=(0.35, 0.6, 1.2), channels=(16, 32, 64),
              A: int = 8, d: int = 16, sigma: float = 0.05, residual: bool = True,
              ordering: str = "explicit", encoding: str = "coset", hidden=None,
              normalize: bool = False, num_classes: int = 4, in_channels: int = 1,
              normals: str = "true", augment_k: int = 32, fps_seed: int = 0) -> "NetConfig":
        if not len(m) == len(k) == len(radius) == len(channels):
            raise ValueError("per-block lists m, k, radius, channels must have equal length")
        blocks = []
        c_in = in_channels
        for mi, ki, ri, co in zip(m, k, radius, channels):
            blocks.append(BlockConfig(int(mi), int(ki), float(ri), c_in, int(co), A, d, sigma,
                                      residual, ordering, hidden, normalize, encoding))
            c_in = int(co)
        return cls(blocks, num_classes, in_channels, normals, augment_k, fps_seed)

    def with_blocks(self, **changes) -> "NetConfig":
        return replace(self, blocks=[replace(b, **changes) for b in self.blocks])


def init_params(cfg: NetConfig, seed: int = 0) -> tuple[dict, dict]:
    rng = np.random.default_rng(seed)
    params, states = {}, {}
    for i, b in enumerate(cfg.blocks):
        p, s = init_block_params(b, rng, f"block{i}")
        params.update(p)
        states.update(s)
    c_last = cfg.blocks[-1].c_out if cfg.blocks else cfg.in_channels
    params["head.weight"] = uniform_init(rng, (cfg.num_classes, c_last), c_last)
    params["head.bias"] = np.zeros(cfg.num_classes)
    return params, states


def cloud_normals(cloud: geom.PointCloud, cfg: NetConfig) -> np.ndarray:
    if cfg.normals == "augment":
        return geom.augment_cosets(cloud.coords, min(cfg.augment_k, len(cloud)))
    if cloud.normals is None:
        raise ValueError("cloud has no normals; use normals='augment'")
    return cloud.normals


def plan_cloud(cloud: geom.PointCloud, cfg: NetConfig) -> list:
    x, n = cloud.coords, cloud_normals(cloud, cfg)
    plans = []
    for b in cfg.blocks:
        p = plan_block(x, n, b, cfg.fps_seed)
        plans.append(p)
        x, n = p.coords, p.normals
    return plans


def forward_features(tape: Tape, params: dict, states: dict, cfg: NetConfig, plans: list,
                     n_points: list, training: bool = True):
    """Run every block over a batch of planned clouds; returns the last
    block's features, stacked over clouds."""
    feats = np.ones((sum(n_points), cfg.in_channels))
    sizes = list(n_points)
    for i, b in enumerate(cfg.blocks):
        stacked = stack_plans([p[i] for p in plans], sizes)
        feats = block_forward(tape, params, feats, stacked, b, f"block{i}", states, training)
        sizes = [b.m] * len(plans)
    return feats


def forward_logits(tape: Tape, params: dict, states: dict, cfg: NetConfig, plans: list,
                   n_points: list, training: bool = True):
    feats = forward_features(tape, params, states, cfg, plans, n_points, training)
    pooled = group_mean(tape, feats, len(plans))
    return linear(tape, pooled, params["head.weight"], params["head.bias"])


def loss_and_grads(params: dict, states: dict, cfg: NetConfig, plans: list, n_points: list,
                   labels, epsilon: float = 0.2) -> tuple[float, dict]:
    tape = Tape()
    P = as_vars(params)
    logits = forward_logits(tape, P, states, cfg, plans, n_points, training=True)
    loss = smoothed_cross_entropy(tape, logits, labels, epsilon)
    tape.backward(loss)
    grads = {k: (v.grad if v.grad is not None else np.zeros_like(v.value)) for k, v in P.items()}
    return float(loss.value), grads


def predict(params: dict, states: dict, cfg: NetConfig, clouds, batch_size: int = 32,
            plans=None) -> np.ndarray:
    plans = [plan_cloud(c, cfg) for c in clouds] if plans is None else plans
    tape = Tape(enabled=False)
    out = []
    for s in range(0, len(clouds), batch_size):
        chunk = plans[s:s + batch_size]
        n = [len(c) for c in clouds[s:s + batch_size]]
        out.append(forward_logits(tape, params, states, cfg, chunk, n, training=False).value)
    return np.concatenate(out) if out else np.zeros((0, cfg.num_classes))


def evaluate(params: dict, states: dict, cfg: NetConfig, batch, batch_size: int = 32, plans=None) -> float:
    if len(batch) == 0:
        return float("nan")
    logits = predict(params, states, cfg, batch.clouds, batch_size, plans)
    return float(np.mean(np.argmax(logits, axis=1) == batch.labels))


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 16
    lr_max: float = 1e-4
    lr_min: float = 1e-6
    label_smoothing: float = 0.2
    beta1: float = 0.9
    seed: int = 0
    scale_augment: bool = False


def train(cfg: NetConfig, tcfg: TrainConfig, train_batch, params=None, states=None,
          on_epoch=None) -> tuple[dict, dict, list]:
    """Adam with a per-epoch cosine learning rate.

    Geometry plans are built once per cloud unless scale augmentation is on.
    Returns ``(params, states, history)``; ``history`` holds mean loss per epoch.
    """
    if params is None:
        params, states = init_params(cfg, tcfg.seed)
    rng = np.random.default_rng(tcfg.seed + 1)
    opt = AdamState(beta1=tcfg.beta1)
    cached = None if tcfg.scale_augment else [plan_cloud(c, cfg) for c in train_batch.clouds]
    history = []
    n = len(train_batch)
    for epoch in range(tcfg.epochs):
        lr = cosine_lr(epoch, tcfg.epochs, tcfg.lr_max, tcfg.lr_min)
        order = rng.permutation(n)
        losses = []
        for s in range(0, n, tcfg.batch_size):
            idx = order[s:s + tcfg.batch_size]
            if len(idx) < 2:
                continue
            if cached is None:
                clouds = [scale_augment(train_batch.clouds[i], rng)[0] for i in idx]
                plans = [plan_cloud(c, cfg) for c in clouds]
            else:
                clouds = [train_batch.clouds[i] for i in idx]
                plans = [cached[i] for i in idx]
            loss, grads = loss_and_grads(params, states, cfg, plans, [len(c) for c in clouds],
                                         train_batch.labels[idx], tcfg.label_smoothing)
            adam_step(opt, params, grads, lr)
            losses.append(loss)
        history.append(float(np.mean(losses)) if losses else float("nan"))
        log.info("epoch %d lr %.3g loss %.4f", epoch, lr, history[-1])
        if on_epoch is not None:
            on_epoch(epoch, history[-1], params, states)
    return params, states, history
