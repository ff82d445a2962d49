"""Line-based ``key=value`` run configuration with named presets."""

from __future__ import annotations

import hashlib
from pathlib import Path


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _list(item):
    def parse(s: str) -> tuple:
        return tuple(item(p) for p in s.replace(" ", "").split(",") if p)
    return parse


def _choice(*options):
    def parse(s: str) -> str:
        v = s.strip()
        if v not in options:
            raise ValueError(f"expected one of {options}, got {v!r}")
        return v
    return parse


# name -> (parser, default text)
SCHEMA = {
    "preset": (str, ""),
    "seed": (int, "0"),
    # data
    "classes": (_list(str), "sphere,cube,torus,cylinder"),
    "per_class": (int, "100"),
    "test_per_class": (int, "50"),
    "n_points": (int, "256"),
    "noise": (float, "0.01"),
    "data_dir": (str, ""),
    # model
    "m": (_list(int), "64,32,8"),
    "k": (_list(int), "16,16,16"),
    "radius": (_list(float), "0.35,0.6,1.2"),
    "channels": (_list(int), "16,32,64"),
    "A": (int, "8"),
    "d": (int, "16"),
    "sigma": (float, "0.05"),
    "hidden": (_list(int), ""),
    "residual": (_bool, "true"),
    "ordering": (_choice("explicit", "implicit"), "explicit"),
    "encoding": (_choice("coset", "raw"), "coset"),
    "normals": (_choice("true", "augment"), "true"),
    "augment_k": (int, "32"),
    "normalize": (_bool, "false"),
    "fps_seed": (int, "0"),
    # training
    "epochs": (int, "12"),
    "batch_size": (int, "16"),
    "lr_max": (float, "1e-4"),
    "lr_min": (float, "1e-6"),
    "label_smoothing": (float, "0.2"),
    "beta1": (float, "0.9"),
    "scale_augment": (_bool, "false"),
    "checkpoint": (str, "model.eckc"),
    # equivariance harness
    "equiv_coset_transforms": (int, "1000"),
    "equiv_layer_transforms": (int, "100"),
    "equiv_network_transforms": (int, "100"),
    "equiv_translation_bound": (float, "10"),
    "equiv_rotate_normals": (_bool, "true"),
    "equiv_rotation": (_bool, "true"),
    # gradcheck
    "gradcheck_ops": (_list(str), "all"),
    "gradcheck_seeds": (int, "20"),
    "gradcheck_network_seeds": (int, "2"),
    "gradcheck_h": (float, "1e-6"),
    # bench
    "sweep": (str, "A=11,22,K=16,32,cin=32,64,cout=32,64"),
    "bench_ordering": (_choice("both", "explicit", "implicit"), "both"),
    "bench_repeats": (int, "5"),
    # tolerances
    "tol_equiv": (float, "1e-6"),
    "tol_gradcheck": (float, "1e-4"),
    "tol_bench_constant": (float, "0.2"),
    "tol_bench_wall": (float, "0.1"),
    "tol_min_accuracy": (float, "0.95"),
    "tol_max_gap": (float, "0.005"),
}

PRESETS = {
    "default": {},
    "full": {"A": "22", "d": "64", "k": "32,32,32"},
    "broken-normals": {"equiv_rotate_normals": "false"},
    "translation-only": {"equiv_rotation": "false", "tol_equiv": "1e-12"},
    "raw-offsets": {"encoding": "raw"},
    "smoke": {"per_class": "8", "test_per_class": "4", "epochs": "1", "n_points": "128",
              "m": "32,16,4", "equiv_coset_transforms": "50", "equiv_layer_transforms": "3",
              "equiv_network_transforms": "3", "gradcheck_seeds": "2", "gradcheck_network_seeds": "1",
              "sweep": "A=2,4,K=4,cin=4,cout=4", "bench_repeats": "1"},
}


class ConfigError(ValueError):
    pass


def parse_lines(text: str, source: str = "<config>") -> dict:
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        s = line.split("#", 1)[0].strip()
        if not s:
            continue
        if "=" not in s:
            raise ConfigError(f"{source}:{lineno}: expected key=value")
        key, value = (p.strip() for p in s.split("=", 1))
        out[key] = value
    return out


class RunConfig(dict):
    """Parsed settings; also keeps the raw text form for hashing."""

    def __init__(self, values: dict, raw: dict):
        super().__init__(values)
        self.raw = raw

    def __getattr__(self, name):
        try:
            return self[name]
        except KeyError:
            raise AttributeError(name) from None

    def digest(self) -> str:
        text = "\n".join(f"{k}={self.raw[k]}" for k in sorted(self.raw))
        return hashlib.sha256(text.encode()).hexdigest()[:16]


def load_config(path=None, overrides=(), seed: int | None = None) -> RunConfig:
    """Defaults, then the named preset, then the file, then ``key=value`` overrides."""
    explicit = {}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file {p} does not exist")
        explicit.update(parse_lines(p.read_text(), str(p)))
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = (s.strip() for s in item.split("=", 1))
        explicit[key] = value
    if seed is not None:
        explicit["seed"] = str(seed)
    unknown = sorted(set(explicit) - set(SCHEMA))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    raw = {k: default for k, (_, default) in SCHEMA.items()}
    preset = explicit.get("preset", "")
    if preset:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; known: {', '.join(PRESETS)}")
        raw.update(PRESETS[preset])
    raw.update(explicit)
    values = {}
    for key, text in raw.items():
        parser = SCHEMA[key][0]
        try:
            values[key] = parser(text)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {exc}") from None
    return RunConfig(values, raw)
