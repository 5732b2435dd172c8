"""JSON run configuration, dotted overrides, scene specs and run manifests.

Precedence is command-line override > config file > built-in default.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from . import __version__
from .errors import ConfigError
from .mdt import MdtConfig, default_subsets
from .network import AngularConfig, NetworkConfig
from .training import Layer, SceneSpec, two_layer_scene

# ``None`` for branches means "the default 5x5 subsets".
DEFAULTS: dict[str, Any] = {
    "seed": 0,
    "network": {
        "U": 5,
        "V": 5,
        "r": 2,
        "C": 48,
        "N_a": 16,
        "leaky_slope": 0.2,
        "mdt": {"N_b": None, "C_D": 96, "C_QK": 48, "branches": None},
        "angular": {"C_QK": 48, "C_V": 96},
    },
    "train": {
        "steps": 500,
        "lr": 2e-4,
        "lr_drop_step": None,
        "lr_after": 2e-5,
        "batch_size": 1,
        "patch": 32,
        "log_every": 10,
    },
    "gradcheck": {"H": 8, "W": 8, "samples": 200, "h": 1e-3, "tol": 1e-4},
}

LEAF_KEYS = {"network.mdt.branches"}

PRESETS: dict[str, dict] = {
    "paper": {},
    "toy": {
        "network": {
            "U": 3, "V": 3, "r": 2, "C": 8, "N_a": 1,
            "mdt": {"N_b": 2, "C_D": 16, "C_QK": 8, "branches": [[[0, 0], [0, 2], [2, 0], [2, 2]], [[1, 1]]]},
            "angular": {"C_QK": 8, "C_V": 16},
        },
    },
    # the small 5x5 network used for the learning demonstration
    "demo": {
        "network": {"C": 16, "N_a": 2, "mdt": {"C_D": 32, "C_QK": 16}, "angular": {"C_QK": 16, "C_V": 32}},
    },
}


def _merge(base: dict, update: dict, prefix: str = "") -> None:
    for key, value in update.items():
        path = f"{prefix}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key '{path}'")
        if isinstance(base[key], dict) and path not in LEAF_KEYS:
            if not isinstance(value, dict):
                raise ConfigError(f"config key '{path}' must be a table")
            _merge(base[key], value, path + ".")
        else:
            base[key] = value


def parse_override(text: str) -> tuple[list[str], Any]:
    """``"network.C=16"`` -> ``(["network", "C"], 16)``; values are JSON, else plain strings."""
    key, sep, raw = text.partition("=")
    if not sep or not key:
        raise ConfigError(f"override '{text}' is not of the form key=value")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip().split("."), value


def _nest(keys: list[str], value: Any) -> dict:
    out: Any = value
    for k in reversed(keys):
        out = {k: out}
    return out


@dataclass
class RunConfig:
    """Resolved settings for one command."""

    raw: dict
    network: NetworkConfig

    @property
    def seed(self) -> int:
        return int(self.raw["seed"])

    @property
    def train(self) -> dict:
        return self.raw["train"]

    @property
    def gradcheck(self) -> dict:
        return self.raw["gradcheck"]


def build_network(net: dict) -> NetworkConfig:
    m = net["mdt"]
    branches = m["branches"]
    try:
        if branches is None:
            branches = default_subsets(net["U"], net["V"])
        n_b = m["N_b"] if m["N_b"] is not None else len(branches)
        mdt = MdtConfig(N_b=n_b, C=net["C"], C_D=m["C_D"], C_QK=m["C_QK"], branches=branches)
        angular = AngularConfig(**net["angular"])
        return NetworkConfig(
            U=net["U"], V=net["V"], r=net["r"], C=net["C"], N_a=net["N_a"],
            mdt=mdt, angular=angular, leaky_slope=net["leaky_slope"],
        )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"network: {exc}") from None


def load_config(
    path: str | Path | None = None, overrides=(), seed: int | None = None, preset: str = "paper"
) -> RunConfig:
    raw = copy.deepcopy(DEFAULTS)
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset '{preset}' (choose from {', '.join(PRESETS)})")
    _merge(raw, copy.deepcopy(PRESETS[preset]))
    if path is not None:
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: malformed JSON ({exc.msg} at line {exc.lineno})") from None
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be an object")
        _merge(raw, data)
    for item in overrides:
        keys, value = parse_override(item)
        _merge(raw, _nest(keys, value))
    if seed is not None:
        raw["seed"] = seed
    network = build_network(raw["network"])
    raw["network"] = network.to_dict()
    return RunConfig(raw, network)


def load_scene(path: str | Path) -> SceneSpec:
    """Scene file: either a full layer list or ``{"two_layer": {...}}`` shorthand."""
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: malformed JSON ({exc.msg} at line {exc.lineno})") from None
    return scene_from_dict(data)


def scene_from_dict(data: dict) -> SceneSpec:
    if not isinstance(data, dict):
        raise ConfigError("scene spec must be an object")
    if "two_layer" in data:
        extra = set(data) - {"two_layer"}
        if extra:
            raise ConfigError(f"unknown scene key '{sorted(extra)[0]}'")
        allowed = {"d_back", "d_front", "size", "seed", "max_freq", "softness"}
        bad = set(data["two_layer"]) - allowed
        if bad:
            raise ConfigError(f"unknown scene key 'two_layer.{sorted(bad)[0]}'")
        return two_layer_scene(**data["two_layer"])
    allowed = {"layers", "H", "W", "U", "V", "seed"}
    bad = set(data) - allowed
    if bad:
        raise ConfigError(f"unknown scene key '{sorted(bad)[0]}'")
    if "layers" not in data:
        raise ConfigError("scene spec needs 'layers' or 'two_layer'")
    layers = []
    for i, layer in enumerate(data["layers"]):
        bad = set(layer) - {"disparity", "texture", "mask"}
        if bad:
            raise ConfigError(f"unknown scene key 'layers.{i}.{sorted(bad)[0]}'")
        if "disparity" not in layer:
            raise ConfigError(f"scene key 'layers.{i}.disparity' is required")
        layers.append(Layer(
            disparity=float(layer["disparity"]),
            texture=[tuple(t) for t in layer.get("texture", [])],
            mask=None if layer.get("mask") is None else tuple(layer["mask"]),
        ))
    return SceneSpec(layers=layers, **{k: v for k, v in data.items() if k != "layers"})


def manifest_path(output: str | Path) -> Path:
    """``out_dir/manifest.json`` for directories, ``<file>.manifest.json`` for single files."""
    output = Path(output)
    return output / "manifest.json" if output.is_dir() else output.with_name(output.name + ".manifest.json")


def file_digest(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(output: str | Path, command: str, config: dict | None = None, inputs=(), **extra) -> Path:
    """Record what produced ``output``. No timestamps, so reruns are byte-identical."""
    body: dict[str, Any] = {"tool": "lfmdt", "version": __version__, "command": command}
    if config is not None:
        body["config"] = config
    if inputs:
        body["inputs"] = {str(p): file_digest(p) for p in inputs}
    body.update(extra)
    path = manifest_path(output)
    path.write_text(json.dumps(body, indent=2, sort_keys=True, default=str) + "\n")
    return path
