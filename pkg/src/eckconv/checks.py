"""Invariance and finite-difference audits shared by the CLI and the tests."""

from __future__ import annotations

from typing import Callable

import numpy as np

from . import geom
from .autograd import (Tape, Var, batchnorm, gelu, linear, smoothed_cross_entropy, value_of)
from .coset import encode_pairs
from .data import ShapeSpec, sample_shape
from .kernel import CoefficientNet, coeff_forward, conv_forward
from .network import NetConfig, forward_features, init_params, plan_cloud
from .nn import BlockConfig, block_forward, feature_propagation, init_block_params, plan_block


# -- invariance ---------------------------------------------------------------

def _transform(rng, rotation: bool, translation_bound: float) -> geom.RigidTransform:
    T = geom.random_se3(rng, translation_bound)
    return T if rotation else geom.RigidTransform(np.eye(3), T.translation)


def _moved(cloud: geom.PointCloud, T: geom.RigidTransform, rotate_normals: bool) -> geom.PointCloud:
    normals = T.apply_vectors(cloud.normals) if rotate_normals else cloud.normals.copy()
    return geom.PointCloud(T.apply_points(cloud.coords), normals, cloud.features.copy())


def random_neighbor_pairs(rng, count: int, radius: float = 1.0):
    x = rng.uniform(-1, 1, size=(count, 3))
    n = rng.standard_normal((count, 3))
    n /= np.linalg.norm(n, axis=1, keepdims=True)
    step = rng.standard_normal((count, 3))
    step *= (radius * rng.uniform(0, 1, size=(count, 1)) ** (1 / 3)) / np.linalg.norm(step, axis=1, keepdims=True)
    ni = rng.standard_normal((count, 3))
    ni /= np.linalg.norm(ni, axis=1, keepdims=True)
    return x, n, x + step, ni


def coset_deviation(n_transforms: int = 1000, seed: int = 0, translation_bound: float = 10.0,
                    rotate_normals: bool = True, rotation: bool = True) -> float:
    """Max |encode(T pair) - encode(pair)| over random pairs and motions."""
    rng = np.random.default_rng(seed)
    x, n, xi, ni = random_neighbor_pairs(rng, n_transforms)
    ref = encode_pairs(x, n, xi, ni, 1.0)
    worst = 0.0
    for j in range(n_transforms):
        T = _transform(rng, rotation, translation_bound)
        nn_, nni = (T.apply_vectors(n[j]), T.apply_vectors(ni[j])) if rotate_normals else (n[j], ni[j])
        got = encode_pairs(T.apply_points(x[j]), nn_, T.apply_points(xi[j]), nni, 1.0, check=False)
        worst = max(worst, float(np.max(np.abs(got - ref[j]))))
    return worst


def harness_cloud(n_points: int = 256, seed: int = 0, kind: str = "torus") -> geom.PointCloud:
    return sample_shape(ShapeSpec(kind, n_points, noise_sigma=0.01, seed=seed))


def layer_deviation(cfg: BlockConfig | None = None, n_transforms: int = 100, seed: int = 0,
                    translation_bound: float = 10.0, rotate_normals: bool = True,
                    rotation: bool = True, n_points: int = 256) -> float:
    """One block on a cloud vs the same block on moved copies (FPS seed fixed)."""
    cfg = cfg or BlockConfig(64, 16, 0.35, 1, 16, A=8, d=16, residual=True)
    rng = np.random.default_rng(seed)
    cloud = harness_cloud(n_points, seed)
    params, _ = init_block_params(cfg, rng)
    feats = np.ones((len(cloud), cfg.c_in))
    tape = Tape(enabled=False)

    def run(c):
        plan = plan_block(c.coords, c.normals, cfg)
        return block_forward(tape, params, feats, plan, cfg).value

    ref = run(cloud)
    worst = 0.0
    for _ in range(n_transforms):
        T = _transform(rng, rotation, translation_bound)
        worst = max(worst, float(np.max(np.abs(run(_moved(cloud, T, rotate_normals)) - ref))))
    return worst


def network_deviation(cfg: NetConfig | None = None, n_transforms: int = 100, seed: int = 0,
                      translation_bound: float = 10.0, rotate_normals: bool = True,
                      rotation: bool = True, n_points: int = 256) -> float:
    """Output features of a freshly initialized network under random motions."""
    cfg = cfg or NetConfig.build()
    rng = np.random.default_rng(seed)
    cloud = harness_cloud(n_points, seed)
    params, states = init_params(cfg, seed)
    tape = Tape(enabled=False)

    def run(c):
        return forward_features(tape, params, states, cfg, [plan_cloud(c, cfg)], [len(c)]).value

    ref = run(cloud)
    worst = 0.0
    for _ in range(n_transforms):
        T = _transform(rng, rotation, translation_bound)
        worst = max(worst, float(np.max(np.abs(run(_moved(cloud, T, rotate_normals)) - ref))))
    return worst


def equivariance_report(net_cfg: NetConfig | None = None, n_coset: int = 1000, n_layer: int = 100,
                        n_network: int = 100, seed: int = 0, translation_bound: float = 10.0,
                        rotate_normals: bool = True, rotation: bool = True,
                        tolerance: float = 1e-6, n_points: int = 256) -> dict:
    net_cfg = net_cfg or NetConfig.build()
    kw = dict(seed=seed, translation_bound=translation_bound, rotate_normals=rotate_normals, rotation=rotation)
    levels = {
        "coset": coset_deviation(n_coset, **kw),
        "layer": layer_deviation(net_cfg.blocks[0], n_layer, n_points=n_points, **kw),
        "network": network_deviation(net_cfg, n_network, n_points=n_points, **kw),
    }
    return {"max_deviation": levels, "tolerance": tolerance,
            "passed": all(v <= tolerance for v in levels.values())}


# -- gradient checks -----------------------------------------------------------

def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    """``max|a - n| / max(max|a|, max|n|, floor)`` for one tensor.

    The floor keeps gradients that are zero up to rounding (e.g. a branch
    flattened by batch norm) from reporting pure noise as relative error.
    """
    scale = max(np.max(np.abs(analytic), initial=0.0), np.max(np.abs(numeric), initial=0.0), floor)
    return float(np.max(np.abs(analytic - numeric), initial=0.0) / scale)


def gradcheck(fn: Callable, inputs: dict, h: float = 1e-6, seed: int = 0) -> dict:
    """Compare tape gradients of ``fn(tape, **vars)`` with central differences.

    A fixed random projection turns non-scalar outputs into a scalar.
    Returns the relative error per input.
    """
    inputs = {k: np.array(v, dtype=np.float64) for k, v in inputs.items()}
    probe = fn(Tape(enabled=False), **inputs)
    r = np.random.default_rng(seed + 7919).standard_normal(value_of(probe).shape)

    tape = Tape()
    vars_ = {k: Var(v.copy(), name=k) for k, v in inputs.items()}
    out = fn(tape, **vars_)
    tape.backward(out, r)

    def objective(values):
        return float(np.sum(r * value_of(fn(Tape(enabled=False), **values))))

    errors = {}
    for name, x in inputs.items():
        numeric = np.zeros_like(x)
        for i in range(x.size):
            old = x.flat[i]
            x.flat[i] = old + h
            fp = objective(inputs)
            x.flat[i] = old - h
            fm = objective(inputs)
            x.flat[i] = old
            numeric.flat[i] = (fp - fm) / (2 * h)
        analytic = vars_[name].grad
        analytic = np.zeros_like(x) if analytic is None else analytic
        errors[name] = relative_error(analytic, numeric)
    return errors


def _case_linear(rng):
    return (lambda t, x, W, b: linear(t, x, W, b),
            dict(x=rng.standard_normal((5, 4)), W=rng.standard_normal((3, 4)), b=rng.standard_normal(3)))


def _case_gelu(rng):
    return lambda t, x: gelu(t, x), dict(x=rng.standard_normal((6, 3)) * 2)


def _case_batchnorm(rng):
    return (lambda t, x, g, b: batchnorm(t, x, g, b),
            dict(x=rng.standard_normal((7, 3)), g=rng.uniform(0.5, 1.5, 3), b=rng.standard_normal(3)))


def _case_coeff_net(rng):
    net = CoefficientNet.init(6, 3, (5, 4), rng)
    arrays = net.named_params("c")

    def fn(t, emb, **p):
        return coeff_forward(CoefficientNet.from_params(p, "c"), emb, t)

    return fn, dict(emb=rng.uniform(0, 1, (4, 6)), **arrays)


def _case_conv(ordering):
    def case(rng):
        K, A, ci, co = 5, 3, 4, 2
        mask = np.ones(K, bool)
        mask[-1] = rng.uniform() < 0.5

        def fn(t, feats, omegas, bases):
            y = conv_forward(ordering, feats, omegas, bases, t, mask=mask)
            return t.nodes[-1].output if t.enabled else y

        return fn, dict(feats=rng.standard_normal((K, ci)), omegas=rng.standard_normal((K, A)),
                        bases=rng.standard_normal((A, co, ci)))
    return case


def _case_residual(rng):
    cfg = BlockConfig(8, 6, 0.6, 3, 4, A=3, d=3, hidden=(8, 8), residual=True)
    cloud = harness_cloud(24, int(rng.integers(1 << 30)), kind="sphere")
    plan = plan_block(cloud.coords, cloud.normals, cfg)
    params, _ = init_block_params(cfg, rng)

    def fn(t, feats, **p):
        return block_forward(t, p, feats, plan, cfg)

    return fn, dict(feats=rng.standard_normal((24, 3)), **params)


def _case_feature_propagation(rng):
    fine = rng.standard_normal((9, 3))
    coarse = rng.standard_normal((4, 3))

    def fn(t, fine_feats, coarse_feats):
        return feature_propagation(fine, fine_feats, coarse, coarse_feats, 3, t)

    return fn, dict(fine_feats=rng.standard_normal((9, 2)), coarse_feats=rng.standard_normal((4, 3)))


def _case_loss(rng):
    labels = rng.integers(0, 5, size=4)
    return (lambda t, logits: smoothed_cross_entropy(t, logits, labels, 0.2),
            dict(logits=rng.standard_normal((4, 5))))


def _case_network(rng):
    cfg = NetConfig.build(m=(32, 8), k=(8, 8), radius=(0.5, 1.0), channels=(4, 6), A=3, d=3,
                          hidden=(6, 6), num_classes=3)
    cloud = harness_cloud(64, int(rng.integers(1 << 30)))
    plans = [plan_cloud(cloud, cfg)]
    params, _ = init_params(cfg, int(rng.integers(1 << 30)))
    label = np.array([int(rng.integers(3))])

    def fn(t, **p):
        from .network import forward_logits
        logits = forward_logits(t, p, {}, cfg, plans, [64])
        return smoothed_cross_entropy(t, logits, label, 0.2)

    return fn, params


GRADCHECK_CASES = {
    "linear": _case_linear,
    "gelu": _case_gelu,
    "batchnorm": _case_batchnorm,
    "coeff_net": _case_coeff_net,
    "conv_explicit": _case_conv("explicit"),
    "conv_implicit": _case_conv("implicit"),
    "residual_block": _case_residual,
    "feature_propagation": _case_feature_propagation,
    "loss": _case_loss,
    "network": _case_network,
}


def gradcheck_report(ops=None, seeds: int = 20, h: float = 1e-6, seed: int = 0,
                     tolerance: float = 1e-4, network_seeds: int = 2) -> dict:
    """Max relative error per op over ``seeds`` random instances each.

    The whole-network case is expensive and uses ``network_seeds`` instead.
    """
    ops = list(GRADCHECK_CASES) if ops is None else list(ops)
    errors = {}
    for op in ops:
        if op not in GRADCHECK_CASES:
            raise ValueError(f"unknown gradcheck op {op!r}")
        worst = 0.0
        n = network_seeds if op == "network" else seeds
        for s in range(n):
            rng = np.random.default_rng([seed, s, len(op)])
            fn, inputs = GRADCHECK_CASES[op](rng)
            worst = max(worst, max(gradcheck(fn, inputs, h, seed + s).values(), default=0.0))
        errors[op] = worst
    return {"max_relative_error": errors, "h": h, "tolerance": tolerance,
            "passed": all(v <= tolerance for v in errors.values())}
