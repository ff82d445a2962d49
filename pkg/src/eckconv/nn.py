"""Convolution blocks, feature propagation and training utilities."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import geom
from .autograd import (BatchNormState, Tape, Var, add, batchnorm, concat, gather_rows, gelu,
                       linear, reshape, scatter_rows, value_of, weighted_rows)
from .coset import encode_pairs, encode_raw_offsets, gaussian_embedding
from .kernel import CoefficientNet, coeff_forward, eckconv, init_bases, uniform_init

ENCODINGS = ("coset", "raw")


@dataclass
class BlockConfig:
    m: int
    k: int
    radius: float
    c_in: int
    c_out: int
    A: int = 22
    d: int = 64
    sigma: float = 0.05
    residual: bool = False
    ordering: str = "explicit"
    hidden: tuple | None = None
    normalize: bool = False
    encoding: str = "coset"

    def __post_init__(self):
        if min(self.m, self.k, self.c_in, self.c_out, self.A, self.d) < 1:
            raise ValueError("block counts must all be >= 1")
        if self.radius <= 0 or self.sigma <= 0:
            raise ValueError("radius and sigma must be > 0")
        if self.encoding not in ENCODINGS:
            raise ValueError(f"encoding must be one of {ENCODINGS}")

    @property
    def hidden_dims(self) -> tuple:
        return (6 * self.d, 6 * self.d) if self.hidden is None else tuple(self.hidden)


# -- geometry plans ----------------------------------------------------------

@dataclass
class BlockPlan:
    """Everything a block needs that depends only on geometry.

    Index arrays address rows of the (possibly batched) input feature matrix.
    ``positions`` are flat ``m * k + slot`` offsets of valid neighbor slots,
    aligned with the rows of ``embedding``.
    """

    centroids: np.ndarray
    neighbors: np.ndarray
    counts: np.ndarray
    positions: np.ndarray
    embedding: np.ndarray
    coords: np.ndarray
    normals: np.ndarray

    @property
    def mask(self) -> np.ndarray:
        return self.neighbors >= 0

    @property
    def num_centroids(self) -> int:
        return len(self.centroids)


def plan_block(coords, normals, cfg: BlockConfig, fps_seed: int = 0, centroids=None) -> BlockPlan:
    """Farthest point sampling, ball query and neighbor encoding for one cloud.

    ``centroids`` overrides sampling with an explicit index list.
    """
    x = np.asarray(coords, dtype=np.float64)
    n = np.asarray(normals, dtype=np.float64)
    if cfg.m > len(x):
        raise ValueError(f"cannot take m={cfg.m} centroids from {len(x)} points")
    cidx = geom.farthest_point_sampling(x, cfg.m, fps_seed) if centroids is None else np.asarray(centroids, dtype=np.intp)
    nbr, counts = geom.ball_query_padded(x[cidx], x, cfg.radius, cfg.k)
    rows, slots = np.nonzero(nbr >= 0)
    j = nbr[rows, slots]
    if cfg.encoding == "coset":
        params = encode_pairs(x[cidx][rows], n[cidx][rows], x[j], n[j], cfg.radius, check=False)
        emb = gaussian_embedding(params, cfg.d, cfg.sigma)
    else:
        u = encode_raw_offsets(x[cidx][rows], x[j], cfg.radius)
        emb = gaussian_embedding(u, cfg.d, cfg.sigma, normalized=True)
    return BlockPlan(cidx, nbr, counts, rows * cfg.k + slots, emb, x[cidx], n[cidx])


def stack_plans(plans: list[BlockPlan], n_inputs: list[int]) -> BlockPlan:
    """Concatenate per-cloud plans, shifting indices into the stacked input."""
    offsets = np.concatenate([[0], np.cumsum(n_inputs)[:-1]])
    pos_off = 0
    cents, nbrs, pos = [], [], []
    for p, off in zip(plans, offsets):
        cents.append(p.centroids + off)
        nbrs.append(np.where(p.neighbors >= 0, p.neighbors + off, -1))
        pos.append(p.positions + pos_off)
        pos_off += p.neighbors.size
    return BlockPlan(
        np.concatenate(cents), np.concatenate(nbrs), np.concatenate([p.counts for p in plans]),
        np.concatenate(pos), np.concatenate([p.embedding for p in plans]),
        np.concatenate([p.coords for p in plans]), np.concatenate([p.normals for p in plans]),
    )


# -- parameters --------------------------------------------------------------

def init_block_params(cfg: BlockConfig, rng: np.random.Generator | int | None = 0,
                      prefix: str = "block") -> tuple[dict, dict]:
    """Fresh parameter arrays and batch-norm running statistics for one block."""
    rng = np.random.default_rng(rng)
    net = CoefficientNet.init(3 * cfg.d, cfg.A, cfg.hidden_dims, rng)
    params = net.named_params(f"{prefix}.coeff")
    params[f"{prefix}.bases"] = init_bases(cfg.A, cfg.c_in, cfg.c_out, rng)
    params[f"{prefix}.bn.gamma"] = np.ones(cfg.c_out)
    params[f"{prefix}.bn.beta"] = np.zeros(cfg.c_out)
    states = {f"{prefix}.bn": BatchNormState.fresh(cfg.c_out)}
    if cfg.residual:
        params[f"{prefix}.res.weight"] = uniform_init(rng, (cfg.c_out, cfg.c_in), cfg.c_in)
        params[f"{prefix}.res_bn.gamma"] = np.ones(cfg.c_out)
        params[f"{prefix}.res_bn.beta"] = np.zeros(cfg.c_out)
        states[f"{prefix}.res_bn"] = BatchNormState.fresh(cfg.c_out)
    return params, states


def as_vars(params: dict) -> dict:
    return {k: v if isinstance(v, Var) else Var(v, name=k) for k, v in params.items()}


def block_forward(tape: Tape, params: dict, feats, plan: BlockPlan, cfg: BlockConfig,
                  prefix: str = "block", states: dict | None = None, training: bool = True) -> Var:
    """Gather, convolve, normalize, activate.

    With ``cfg.residual`` the centroid features go through a bias-free
    linear map and their own batch norm, and are added to the normalized
    convolution output before the activation.
    """
    states = {} if states is None else states
    mask = plan.mask
    M, k = plan.neighbors.shape
    f_nbr = gather_rows(tape, feats, plan.neighbors, mask)
    net = CoefficientNet.from_params(params, f"{prefix}.coeff")
    omega_valid = coeff_forward(net, plan.embedding, tape)
    omega = scatter_rows(tape, omega_valid, plan.positions, M * k)
    omega = reshape(tape, omega, (M, k, cfg.A))
    conv = eckconv(tape, f_nbr, omega, params[f"{prefix}.bases"], cfg.ordering,
                   counts=plan.counts, normalize=cfg.normalize)
    h = batchnorm(tape, conv, params[f"{prefix}.bn.gamma"], params[f"{prefix}.bn.beta"],
                  states.get(f"{prefix}.bn"), training)
    if cfg.residual:
        f_cnt = gather_rows(tape, feats, plan.centroids)
        r = linear(tape, f_cnt, params[f"{prefix}.res.weight"])
        r = batchnorm(tape, r, params[f"{prefix}.res_bn.gamma"], params[f"{prefix}.res_bn.beta"],
                      states.get(f"{prefix}.res_bn"), training)
        h = add(tape, h, r)
    return gelu(tape, h)


def eckconv_block(cloud: geom.PointCloud, cfg: BlockConfig, params: dict, tape: Tape | None = None,
                  feats=None, fps_seed: int = 0, centroids=None, prefix: str = "block",
                  states: dict | None = None, training: bool = True):
    """Run one block on a single cloud.

    Returns the centroid cloud (coordinates and normals of the sampled
    points, features filled with the output values) and the output feature
    ``Var`` for further taping.
    """
    if cloud.normals is None:
        raise ValueError("the block needs normals (true or augmented)")
    tape = Tape(enabled=False) if tape is None else tape
    plan = plan_block(cloud.coords, cloud.normals, cfg, fps_seed, centroids)
    feats = cloud.features if feats is None else feats
    out = block_forward(tape, params, feats, plan, cfg, prefix, states, training)
    return geom.PointCloud(plan.coords, plan.normals, out.value), out


def residual_block(cloud, cfg: BlockConfig, params: dict, tape: Tape | None = None, **kw):
    if not cfg.residual:
        raise ValueError("residual_block needs cfg.residual=True")
    return eckconv_block(cloud, cfg, params, tape, **kw)


# -- feature propagation -----------------------------------------------------

def propagation_weights(fine_coords, coarse_coords, K: int) -> tuple[np.ndarray, np.ndarray]:
    """K-NN indices into the coarse cloud and normalized inverse-square weights.

    A fine point sitting exactly on a coarse point takes that point's feature
    alone.
    """
    fine = np.asarray(fine_coords, dtype=np.float64).reshape(-1, 3)
    coarse = np.asarray(coarse_coords, dtype=np.float64).reshape(-1, 3)
    idx = geom.knn(fine, coarse, K)
    d2 = np.sum((fine[:, None, :] - coarse[idx]) ** 2, axis=-1)
    w = np.zeros_like(d2)
    hit = d2 == 0.0
    exact = hit.any(axis=1)
    first_hit = np.argmax(hit, axis=1)
    w[exact, first_hit[exact]] = 1.0
    inv = 1.0 / d2[~exact]
    w[~exact] = inv / inv.sum(axis=1, keepdims=True)
    return idx, w


def feature_propagation(fine_coords, fine_feats, coarse_coords, coarse_feats, K: int,
                        tape: Tape | None = None) -> Var:
    """Interpolate coarse features onto fine points and append them.

    Output rows are ``[fine_feature, interpolated_feature]``; pass
    ``fine_feats=None`` to get only the interpolated part.
    """
    tape = Tape(enabled=False) if tape is None else tape
    idx, w = propagation_weights(fine_coords, coarse_coords, K)
    up = weighted_rows(tape, coarse_feats, idx, w)
    if fine_feats is None:
        return up
    return concat(tape, [fine_feats, up], axis=-1)


# -- optimization --------------------------------------------------------------

@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(state: AdamState, params: dict, grads: dict, lr: float) -> dict:
    """One bias-corrected Adam update, applied to ``params`` in place."""
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        m = state.m.setdefault(name, np.zeros_like(p))
        v = state.v.setdefault(name, np.zeros_like(p))
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params


def cosine_lr(epoch: float, total_epochs: float, lr_max: float = 1e-4, lr_min: float = 1e-6) -> float:
    if total_epochs <= 0:
        return lr_max
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + np.cos(np.pi * epoch / total_epochs))


def scale_augment(cloud: geom.PointCloud, rng: np.random.Generator | int | None = None,
                  lo: float = 2.0 / 3.0, hi: float = 1.5, normals: str = "exact"):
    """Independent per-axis rescaling of the coordinates.

    Normals follow the inverse-transpose of the scaling and are renormalized
    (``normals="exact"``), or are re-derived from the scaled coordinates with
    :func:`geom.augment_cosets` (``normals="augment"``). Returns the new cloud
    and the sampled factors.
    """
    rng = np.random.default_rng(rng)
    s = rng.uniform(lo, hi, size=3) if hi > lo else np.full(3, float(lo))
    coords = cloud.coords * s
    nrm = cloud.normals
    if nrm is not None:
        if normals == "augment":
            nrm = geom.augment_cosets(coords, min(32, len(coords)))
        else:
            nrm = nrm / s
            nrm = nrm / np.linalg.norm(nrm, axis=1, keepdims=True)
    return geom.PointCloud(coords, nrm, cloud.features.copy()), s
