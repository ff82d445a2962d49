"""The coordinate-based kernel: coefficient network, anchor bases, and the
two equivalent contraction orders of the convolution sum.

For a neighborhood with features ``f`` (K, C_in), per-neighbor coefficients
``omega`` (K, A) and bases ``W`` (A, C_out, C_in) both orders compute

    y = sum_i (sum_j omega_ij W_j) f_i            # implicit: kernel per neighbor
      = sum_j W_j (sum_i omega_ij f_i)            # explicit: bases applied last

They differ in what the backward pass has to build. The single-neighborhood
functions here are instrumented: the tape counts every scalar they retain for
the backward pass plus every product tensor materialized while assembling the
coefficient gradient, so the counts can be checked against closed forms.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .autograd import Tape, Var, gelu, linear, value_of

ORDERINGS = ("explicit", "implicit")


def uniform_init(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(max(fan_in, 1))
    return rng.uniform(-bound, bound, size=shape)


@dataclass
class CoefficientNet:
    """MLP from an embedding (width ``3d``) to ``A`` unbounded coefficients.

    Hidden layers use GELU; the last layer is linear.
    """

    layers: list = field(default_factory=list)

    @classmethod
    def init(cls, in_dim: int, A: int, hidden: Iterable[int] | None = None,
             rng: np.random.Generator | int | None = 0) -> "CoefficientNet":
        rng = np.random.default_rng(rng)
        hidden = (2 * in_dim, 2 * in_dim) if hidden is None else tuple(hidden)
        dims = (in_dim, *hidden, A)
        layers = [(uniform_init(rng, (o, i), i), uniform_init(rng, (o,), i))
                  for i, o in zip(dims[:-1], dims[1:])]
        return cls(layers)

    @property
    def in_dim(self) -> int:
        return value_of(self.layers[0][0]).shape[1]

    @property
    def out_dim(self) -> int:
        return value_of(self.layers[-1][0]).shape[0]

    def num_params(self) -> int:
        return sum(value_of(W).size + value_of(b).size for W, b in self.layers)

    def named_params(self, prefix: str = "coeff") -> dict:
        out = {}
        for i, (W, b) in enumerate(self.layers):
            out[f"{prefix}.{i}.weight"] = W
            out[f"{prefix}.{i}.bias"] = b
        return out

    @classmethod
    def from_params(cls, params: dict, prefix: str = "coeff") -> "CoefficientNet":
        layers = []
        i = 0
        while f"{prefix}.{i}.weight" in params:
            layers.append((params[f"{prefix}.{i}.weight"], params[f"{prefix}.{i}.bias"]))
            i += 1
        return cls(layers)


def coeff_forward(net: CoefficientNet, emb, tape: Tape | None = None) -> Var:
    """Coefficients ``omega`` for a batch of embeddings ``(..., 3d) -> (..., A)``."""
    tape = Tape(enabled=False) if tape is None else tape
    e = value_of(emb)
    if e.shape[-1] != net.in_dim:
        raise ValueError(f"embedding width {e.shape[-1]} != network input {net.in_dim}")
    h = emb
    last = len(net.layers) - 1
    for i, (W, b) in enumerate(net.layers):
        h = linear(tape, h, W, b)
        if i < last:
            h = gelu(tape, h)
    return h


def init_bases(A: int, c_in: int, c_out: int, rng: np.random.Generator | int | None = 0) -> np.ndarray:
    rng = np.random.default_rng(rng)
    return uniform_init(rng, (A, c_out, c_in), A * c_in)


# -- single neighborhood, instrumented -------------------------------------

def _check_shapes(f, w, W):
    if f.ndim != 2 or w.ndim != 2 or W.ndim != 3:
        raise ValueError("expected feats (K, C_in), omegas (K, A), bases (A, C_out, C_in)")
    if f.shape[0] != w.shape[0] or w.shape[1] != W.shape[0] or f.shape[1] != W.shape[2]:
        raise ValueError(f"inconsistent shapes {f.shape}, {w.shape}, {W.shape}")


def _prepare(feats, omegas, bases, mask):
    vars_ = [x if isinstance(x, Var) else Var(x) for x in (feats, omegas, bases)]
    f, w, W = (v.value for v in vars_)
    _check_shapes(f, w, W)
    keep = None if mask is None else np.flatnonzero(np.asarray(mask, dtype=bool))
    if keep is not None:
        f, w = f[keep], w[keep]
    return vars_, f, w, W, keep


def _expand(keep, n, g):
    if keep is None:
        return g
    out = np.zeros((n, g.shape[1]))
    out[keep] = g
    return out


def conv_forward_implicit(feats, omegas, bases, tape: Tape | None = None,
                          mask=None, normalize: bool = False) -> np.ndarray:
    """Per-neighbor kernels ``kappa_i = sum_j omega_ij W_j`` applied then summed.

    Rows excluded by ``mask`` take no part (and are not counted).
    """
    tape = Tape(enabled=False) if tape is None else tape
    (fv, wv, Wv), f, w, W, keep = _prepare(feats, omegas, bases, mask)
    K, (A, Co, Ci) = len(f), W.shape
    scale = 1.0 / K if normalize and K else 1.0
    kappa = np.einsum("ka,aoc->koc", w, W)
    y = scale * np.einsum("koc,kc->o", kappa, f)
    tape.count(flop_forward=2 * K * A * Co * Ci + 2 * K * Co * Ci)

    def backward(g):
        g = g * scale
        # coefficient gradient from the per-neighbor products W_j f_i
        prods = W[None, :, :, :] * f[:, None, None, :]
        tape.count(scalars=prods.size)
        gw = np.einsum("kaoc,o->ka", prods, g)
        gW = np.einsum("ka,o,kc->aoc", w, g, f)
        gf = np.einsum("koc,o->kc", kappa, g)
        tape.count(flop_backward=K * A * Co * Ci + 2 * K * A * Co * Ci + 2 * K * A * Co * Ci + 2 * K * Co * Ci)
        return _expand(keep, len(fv.value), gf), _expand(keep, len(wv.value), gw), gW

    tape.record("eckconv_implicit", (fv, wv, Wv), y, backward, saved=(w, f))
    return y


def conv_forward_explicit(feats, omegas, bases, tape: Tape | None = None,
                          mask=None, normalize: bool = False) -> np.ndarray:
    """Coefficient-weighted neighbor sums ``s_j`` first, bases applied last."""
    tape = Tape(enabled=False) if tape is None else tape
    (fv, wv, Wv), f, w, W, keep = _prepare(feats, omegas, bases, mask)
    K, (A, Co, Ci) = len(f), W.shape
    scale = 1.0 / K if normalize and K else 1.0
    s = np.einsum("ka,kc->ac", w, f)
    y = scale * np.einsum("aoc,ac->o", W, s)
    tape.count(flop_forward=2 * K * A * Ci + 2 * A * Co * Ci)

    def backward(g):
        g = g * scale
        basis_prods = W * g[None, :, None]
        u = basis_prods.sum(axis=1)                     # (A, Ci) = W_j^T g
        feat_prods = f[:, None, :] * u[None, :, :]
        tape.count(scalars=basis_prods.size + feat_prods.size)
        gw = feat_prods.sum(axis=2)
        gW = g[None, :, None] * s[:, None, :]
        gf = w @ u
        tape.count(flop_backward=2 * A * Co * Ci + 2 * K * A * Ci + 2 * K * A * Ci + A * Co * Ci)
        return _expand(keep, len(fv.value), gf), _expand(keep, len(wv.value), gw), gW

    tape.record("eckconv_explicit", (fv, wv, Wv), y, backward, saved=(w, f, s))
    return y


def conv_forward(ordering: str, feats, omegas, bases, tape: Tape | None = None, **kw) -> np.ndarray:
    if ordering == "explicit":
        return conv_forward_explicit(feats, omegas, bases, tape, **kw)
    if ordering == "implicit":
        return conv_forward_implicit(feats, omegas, bases, tape, **kw)
    raise ValueError(f"unknown ordering {ordering!r}")


def conv_backward(ordering: str, tape: Tape, upstream) -> dict:
    """Backpropagate ``upstream`` (C_out,) through the last recorded conv node.

    Returns gradients for ``feats``, ``omegas`` and ``bases``. Anything
    recorded before the conv (e.g. the coefficient network) also receives
    gradients, so parameter ``Var`` objects there end up with ``.grad`` set.
    """
    convs = [n for n in tape.nodes if n.op.startswith("eckconv_")]
    if not convs:
        raise RuntimeError("tape holds no convolution")
    node = convs[-1]
    if node.op != f"eckconv_{ordering}":
        raise RuntimeError(f"tape was recorded with {node.op!r}, not the {ordering} ordering")
    for n in tape.nodes:
        for v in n.inputs:
            if isinstance(v, Var):
                v.grad = None
    tape.backward(node.output, upstream)
    fv, wv, Wv = node.inputs
    return {"feats": fv.grad, "omegas": wv.grad, "bases": Wv.grad}


# -- batched over centroids (used by the network layers) --------------------

def eckconv(tape: Tape, feats, omegas, bases, ordering: str = "explicit",
            counts=None, normalize: bool = False) -> Var:
    """Convolution over ``M`` padded neighborhoods.

    ``feats`` (M, K, C_in) and ``omegas`` (M, K, A) must already be zero on
    padded slots. ``counts`` (M,) is only needed when ``normalize`` is set.
    """
    f, w, W = value_of(feats), value_of(omegas), value_of(bases)
    if f.shape[:2] != w.shape[:2] or w.shape[2] != W.shape[0] or f.shape[2] != W.shape[2]:
        raise ValueError(f"inconsistent shapes {f.shape}, {w.shape}, {W.shape}")
    if normalize:
        scale = 1.0 / np.maximum(np.asarray(counts, dtype=np.float64), 1.0)
    else:
        scale = np.ones(f.shape[0])

    if ordering == "explicit":
        s = np.einsum("mka,mkc->mac", w, f)
        y = np.einsum("aoc,mac->mo", W, s) * scale[:, None]

        def backward(g):
            g = g * scale[:, None]
            u = np.einsum("mo,aoc->mac", g, W)
            return (np.einsum("mka,mac->mkc", w, u),
                    np.einsum("mkc,mac->mka", f, u),
                    np.einsum("mo,mac->aoc", g, s))

        saved = (w, f, s)
    elif ordering == "implicit":
        kappa = np.einsum("mka,aoc->mkoc", w, W)
        y = np.einsum("mkoc,mkc->mo", kappa, f) * scale[:, None]

        def backward(g):
            g = g * scale[:, None]
            prods = np.einsum("aoc,mkc->mkao", W, f)
            return (np.einsum("mkoc,mo->mkc", kappa, g),
                    np.einsum("mkao,mo->mka", prods, g),
                    np.einsum("mka,mo,mkc->aoc", w, g, f))

        saved = (w, f, kappa)
    else:
        raise ValueError(f"unknown ordering {ordering!r}")

    def backward_inputs(g):
        gf, gw, gW = backward(g)
        return (gf if isinstance(feats, Var) else None,
                gw if isinstance(omegas, Var) else None,
                gW if isinstance(bases, Var) else None)

    return tape.record(f"eckconv_{ordering}", (feats, omegas, bases), y, backward_inputs, saved=saved)


# -- cost model --------------------------------------------------------------

@dataclass(frozen=True)
class StorageCounters:
    saved_intermediate_scalars: int
    flop_forward: int
    flop_backward: int


def dominant_cost(ordering: str, A: int, K: int, c_in: int, c_out: int) -> int:
    """Leading storage term of the coefficient-gradient assembly."""
    if ordering == "implicit":
        return A * K * c_in * c_out
    if ordering == "explicit":
        return A * (K * c_in + c_in * c_out)
    raise ValueError(f"unknown ordering {ordering!r}")


def counter_model(ordering: str, A: int, K: int, c_in: int, c_out: int) -> int:
    """Exact scalar count the instrumented single-neighborhood pass reports.

    Tape-retained arrays (omegas, features, and for the explicit order the
    sums ``s_j``) plus the product tensors materialized for the coefficient
    gradient.
    """
    retained = K * A + K * c_in + (A * c_in if ordering == "explicit" else 0)
    return retained + dominant_cost(ordering, A, K, c_in, c_out)


def run_instrumented(ordering: str, A: int, K: int, c_in: int, c_out: int,
                     rng: np.random.Generator | int | None = 0,
                     dtype=np.float64) -> tuple[StorageCounters, float]:
    """One forward+backward on a random neighborhood; returns counters and
    the backward wall time in milliseconds."""
    rng = np.random.default_rng(rng)
    f = rng.standard_normal((K, c_in)).astype(dtype)
    w = rng.standard_normal((K, A)).astype(dtype)
    W = rng.standard_normal((A, c_out, c_in)).astype(dtype)
    g = rng.standard_normal(c_out).astype(dtype)
    tape = Tape()
    conv_forward(ordering, f, w, W, tape)
    t0 = time.perf_counter()
    conv_backward(ordering, tape, g)
    wall = (time.perf_counter() - t0) * 1e3
    return StorageCounters(tape.saved_scalars, tape.flop_forward, tape.flop_backward), wall


def parse_sweep(text: str) -> list[tuple[int, int, int, int]]:
    """``"A=1,22,K=32,cin=64,cout=64"``-style lists -> cartesian product.

    Accepts either a single comma list per key (``A=1,22``) separated by
    the next ``key=``, or ``;`` separators.
    """
    import itertools
    import re

    keys = {"a": "A", "k": "K", "cin": "cin", "cout": "cout"}
    found = {}
    for key, vals in re.findall(r"([A-Za-z]+)\s*=\s*([0-9,\s]+)", text):
        name = keys.get(key.lower())
        if name is None:
            raise ValueError(f"unknown sweep key {key!r}")
        found[name] = [int(v) for v in vals.replace(" ", "").split(",") if v]
    missing = {"A", "K", "cin", "cout"} - found.keys()
    if missing:
        raise ValueError(f"sweep is missing {sorted(missing)}")
    return list(itertools.product(found["A"], found["K"], found["cin"], found["cout"]))


def measure_costs(sweep: Iterable[tuple[int, int, int, int]],
                  orderings: Iterable[str] = ("implicit", "explicit"),
                  repeats: int = 5, seed: int = 0, dtype=np.float64) -> list[dict]:
    """Counters and median backward wall time per (ordering, sweep point)."""
    sweep = list(sweep)
    if not sweep:
        raise ValueError("empty sweep")
    rows = []
    for A, K, ci, co in sweep:
        for ordering in orderings:
            walls = []
            for r in range(max(repeats, 1)):
                counters, wall = run_instrumented(ordering, A, K, ci, co, rng=seed + r, dtype=dtype)
                walls.append(wall)
            rows.append({
                "ordering": ordering, "A": A, "K": K, "cin": ci, "cout": co,
                "saved_scalars": counters.saved_intermediate_scalars,
                "flop_fwd": counters.flop_forward, "flop_bwd": counters.flop_backward,
                "wall_ms": float(np.median(walls)),
            })
    return rows


def fitted_constants(rows: list[dict]) -> dict[str, np.ndarray]:
    """Per ordering, ``saved_scalars / dominant_cost`` at every row."""
    out: dict[str, list] = {}
    for r in rows:
        dom = dominant_cost(r["ordering"], r["A"], r["K"], r["cin"], r["cout"])
        out.setdefault(r["ordering"], []).append(r["saved_scalars"] / dom)
    return {k: np.array(v) for k, v in out.items()}


COUNTER_COLUMNS = ("ordering", "A", "K", "cin", "cout", "saved_scalars", "flop_fwd", "flop_bwd", "wall_ms")


def write_counters_csv(rows: list[dict], path) -> None:
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=COUNTER_COLUMNS)
        writer.writeheader()
        for r in rows:
            writer.writerow({k: (f"{r[k]:.4f}" if k == "wall_ms" else r[k]) for k in COUNTER_COLUMNS})
