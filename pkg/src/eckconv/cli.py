"""Command line: ``eckconv <command> [--config PATH] [--seed N] [--out PATH] [--set key=value ...]``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import checks, data, geom, kernel
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ConfigError, RunConfig, load_config
from .coset import encode_pairs
from .network import NetConfig, TrainConfig, evaluate, train
from .pointio import load_points

log = logging.getLogger("eckconv")


def net_config(cfg: RunConfig, num_classes: int | None = None) -> NetConfig:
    return NetConfig.build(
        m=cfg.m, k=cfg.k, radius=cfg.radius, channels=cfg.channels, A=cfg.A, d=cfg.d,
        sigma=cfg.sigma, residual=cfg.residual, ordering=cfg.ordering, encoding=cfg.encoding,
        hidden=cfg.hidden or None, normalize=cfg.normalize,
        num_classes=len(cfg.classes) if num_classes is None else num_classes,
        normals=cfg.normals, augment_k=cfg.augment_k, fps_seed=cfg.fps_seed,
    )


def _emit(report: dict, cfg: RunConfig, out, summary_rows) -> None:
    report = {"command": report.pop("command"), "config_hash": cfg.digest(), **report}
    text = json.dumps(report, indent=2, sort_keys=False)
    if out:
        Path(out).write_text(text + "\n")
    else:
        print(text)
    width = max((len(str(k)) for k, _ in summary_rows), default=0)
    for k, v in summary_rows:
        print(f"{k:<{width}}  {v}", file=sys.stderr)


def _fmt(v):
    return f"{v:.3e}" if isinstance(v, float) else str(v)


# -- commands -----------------------------------------------------------------

def cmd_gen(cfg: RunConfig, args) -> int:
    root = Path(args.out or cfg.data_dir or "dataset")
    train_b, test_b = data.make_dataset(cfg.classes, cfg.per_class, cfg.seed, cfg.test_per_class,
                                        cfg.n_points, cfg.noise)
    rotated = data.rotated_copy(test_b, cfg.seed + 1)
    data.write_dataset(train_b, root / "train")
    data.write_dataset(test_b, root / "test")
    data.write_dataset(rotated, root / "test_rotated")
    with open(root / "test_rotated" / "transforms.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index"] + [f"r{i}{j}" for i in range(3) for j in range(3)] + ["tx", "ty", "tz"])
        for i, T in enumerate(rotated.transforms):
            w.writerow([i, *(f"{v:.17g}" for v in T.rotation.ravel()), *(f"{v:.17g}" for v in T.translation)])
    print(f"wrote {len(train_b)} train / {len(test_b)} test clouds to {root}", file=sys.stderr)
    return 0


def cmd_encode(cfg: RunConfig, args) -> int:
    cloud = load_points(args.input)
    if cloud.normals is None:
        cloud = geom.PointCloud(cloud.coords, geom.augment_cosets(cloud.coords, min(cfg.augment_k, len(cloud))))
    centroids = [int(c) for c in args.centroids.split(",") if c.strip()]
    radius = args.radius if args.radius is not None else cfg.radius[0]
    k = args.k if args.k is not None else cfg.k[0]
    lists = geom.ball_query(cloud.coords[centroids], cloud.coords, radius, k)
    fh = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(fh)
        w.writerow(["centroid", "neighbor", "beta", "rbar", "zbar"])
        for c, nl in zip(centroids, lists):
            if not nl.neighbor_indices:
                continue
            j = np.asarray(nl.neighbor_indices)
            p = encode_pairs(cloud.coords[c], cloud.normals[c], cloud.coords[j], cloud.normals[j], radius)
            for jj, (b, r, z) in zip(j, p):
                w.writerow([c, int(jj), f"{b:.17g}", f"{r:.17g}", f"{z:.17g}"])
    finally:
        if fh is not sys.stdout:
            fh.close()
    return 0


def cmd_check_equiv(cfg: RunConfig, args) -> int:
    report = checks.equivariance_report(
        net_config(cfg), cfg.equiv_coset_transforms, cfg.equiv_layer_transforms,
        cfg.equiv_network_transforms, cfg.seed, cfg.equiv_translation_bound,
        cfg.equiv_rotate_normals, cfg.equiv_rotation, cfg.tol_equiv, cfg.n_points)
    rows = [(f"max deviation [{k}]", _fmt(v)) for k, v in report["max_deviation"].items()]
    rows.append(("tolerance", _fmt(cfg.tol_equiv)))
    rows.append(("result", "PASS" if report["passed"] else "FAIL"))
    _emit({"command": "check-equiv", **report}, cfg, args.out, rows)
    return 0 if report["passed"] else 1


def cmd_gradcheck(cfg: RunConfig, args) -> int:
    ops = list(cfg.gradcheck_ops)
    if ops == ["all"]:
        ops = None
    report = checks.gradcheck_report(ops, cfg.gradcheck_seeds, cfg.gradcheck_h, cfg.seed,
                                     cfg.tol_gradcheck, cfg.gradcheck_network_seeds)
    rows = [(op, _fmt(v)) for op, v in report["max_relative_error"].items()]
    rows.append(("result", "PASS" if report["passed"] else "FAIL"))
    _emit({"command": "gradcheck", **report}, cfg, args.out, rows)
    return 0 if report["passed"] else 1


def bench_verdict(rows: list[dict], tol_constant: float, tol_wall: float) -> dict:
    exact = all(r["saved_scalars"] == kernel.counter_model(r["ordering"], r["A"], r["K"], r["cin"], r["cout"])
                for r in rows)
    spread = {}
    for ordering, c in kernel.fitted_constants(rows).items():
        mid = float(np.mean(c))
        spread[ordering] = float(np.max(np.abs(c / mid - 1.0)))
    walls = {}
    for r in rows:
        walls.setdefault((r["A"], r["K"], r["cin"], r["cout"]), {})[r["ordering"]] = r["wall_ms"]
    ratios = [w["explicit"] / w["implicit"] for w in walls.values() if len(w) == 2 and w["implicit"] > 0]
    worst_ratio = max(ratios, default=0.0)
    return {
        "counters_exact": exact,
        "constant_spread": spread,
        "worst_wall_ratio_explicit_over_implicit": worst_ratio,
        "passed": exact and all(v <= tol_constant for v in spread.values())
        and (not ratios or worst_ratio <= 1.0 + tol_wall),
    }


def cmd_bench(cfg: RunConfig, args) -> int:
    sweep = kernel.parse_sweep(args.sweep or cfg.sweep)
    ordering = args.ordering or cfg.bench_ordering
    orderings = ("implicit", "explicit") if ordering == "both" else (ordering,)
    rows = kernel.measure_costs(sweep, orderings, cfg.bench_repeats, cfg.seed)
    out = args.out or "counters.csv"
    kernel.write_counters_csv(rows, out)
    verdict = bench_verdict(rows, cfg.tol_bench_constant, cfg.tol_bench_wall)
    summary = [("rows", len(rows)), ("csv", out)] + [(k, _fmt(v) if not isinstance(v, dict) else
                                                        ", ".join(f"{a}={_fmt(b)}" for a, b in v.items()))
                                                     for k, v in verdict.items()]
    for k, v in summary:
        print(f"{k:<42}  {v}", file=sys.stderr)
    return 0 if verdict["passed"] else 1


def _datasets(cfg: RunConfig):
    if cfg.data_dir:
        root = Path(cfg.data_dir)
        if not root.exists():
            raise ConfigError(f"data_dir {root} does not exist")
        k = len(cfg.classes)
        return (data.read_dataset(root / "train", k), data.read_dataset(root / "test", k),
                data.read_dataset(root / "test_rotated", k))
    train_b, test_b = data.make_dataset(cfg.classes, cfg.per_class, cfg.seed, cfg.test_per_class,
                                        cfg.n_points, cfg.noise)
    return train_b, test_b, data.rotated_copy(test_b, cfg.seed + 1)


def _metrics(params, states, ncfg, test_b, rot_b) -> dict:
    acc_i = evaluate(params, states, ncfg, test_b)
    acc_r = evaluate(params, states, ncfg, rot_b)
    return {"accuracy_unrotated": acc_i, "accuracy_rotated": acc_r, "gap": abs(acc_i - acc_r)}


def _metric_verdict(cfg, metrics) -> bool:
    return (metrics["accuracy_unrotated"] >= cfg.tol_min_accuracy
            and metrics["accuracy_rotated"] >= cfg.tol_min_accuracy
            and metrics["gap"] <= cfg.tol_max_gap)


def cmd_train(cfg: RunConfig, args) -> int:
    train_b, test_b, rot_b = _datasets(cfg)
    ncfg = net_config(cfg, train_b.num_classes)
    tcfg = TrainConfig(cfg.epochs, cfg.batch_size, cfg.lr_max, cfg.lr_min, cfg.label_smoothing,
                       cfg.beta1, cfg.seed, cfg.scale_augment)
    params, states, history = train(ncfg, tcfg, train_b)
    ckpt = args.checkpoint or cfg.checkpoint
    save_checkpoint(ckpt, params, states)
    metrics = _metrics(params, states, ncfg, test_b, rot_b)
    passed = _metric_verdict(cfg, metrics)
    rows = [(k, f"{v:.4f}") for k, v in metrics.items()] + [("checkpoint", ckpt),
                                                           ("result", "PASS" if passed else "FAIL")]
    _emit({"command": "train", "loss_history": history, "checkpoint": str(ckpt), **metrics,
           "passed": passed}, cfg, args.out, rows)
    return 0 if passed else 1


def cmd_eval(cfg: RunConfig, args) -> int:
    ckpt = Path(args.checkpoint or cfg.checkpoint)
    if not ckpt.exists():
        raise ConfigError(f"checkpoint {ckpt} does not exist")
    params, states = load_checkpoint(ckpt)
    _, test_b, rot_b = _datasets(cfg)
    ncfg = net_config(cfg, test_b.num_classes)
    metrics = _metrics(params, states, ncfg, test_b, rot_b)
    passed = _metric_verdict(cfg, metrics)
    rows = [(k, f"{v:.4f}") for k, v in metrics.items()] + [("result", "PASS" if passed else "FAIL")]
    _emit({"command": "eval", "checkpoint": str(ckpt), **metrics, "passed": passed}, cfg, args.out, rows)
    return 0 if passed else 1


COMMANDS = {
    "gen": cmd_gen,
    "encode": cmd_encode,
    "check-equiv": cmd_check_equiv,
    "gradcheck": cmd_gradcheck,
    "bench": cmd_bench,
    "train": cmd_train,
    "eval": cmd_eval,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value config file")
    common.add_argument("--seed", type=int, help="overrides the seed key")
    common.add_argument("--out", help="output path (report, CSV, dataset directory)")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="eckconv", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("gen", parents=[common], help="write a synthetic dataset")
    p = sub.add_parser("encode", parents=[common], help="neighbor encodings as CSV")
    p.add_argument("--input", required=True)
    p.add_argument("--centroids", required=True, help="comma-separated point indices")
    p.add_argument("--radius", type=float)
    p.add_argument("--k", type=int)
    sub.add_parser("check-equiv", parents=[common], help="rigid-motion invariance audit")
    sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient audit")
    p = sub.add_parser("bench", parents=[common], help="storage counters for both orderings")
    p.add_argument("--sweep")
    p.add_argument("--ordering", choices=("both", "explicit", "implicit"))
    for name in ("train", "eval"):
        p = sub.add_parser(name, parents=[common], help=f"{name} the toy classifier")
        p.add_argument("--checkpoint")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "encode" and not Path(args.input).exists():
            raise ConfigError(f"input {args.input} does not exist")
        cfg = load_config(args.config, args.overrides, args.seed)
        return COMMANDS[args.command](cfg, args)
    except (ValueError, OSError) as exc:
        print(f"eckconv: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
