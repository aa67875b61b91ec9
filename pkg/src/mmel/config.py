"""Flat ``key = value`` run configuration with dotted namespaces.

Recognised namespaces are ``data``, ``network``, ``train``, ``scoring`` and
``paths``; a bare ``seed`` sets both ``data.seed`` and ``train.seed``.
Lines starting with ``#`` are comments. Unknown keys are rejected. If the
environment variable ``MMEL_CONFIG`` names a file, it is loaded first and
the explicit file overrides it.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

from .datagen import SynthesisSpec
from .errors import ContractViolation
from .network import NetworkSpec, TrainConfig
from .scoring import ScoringConfig

ENV_VAR = "MMEL_CONFIG"
PATH_KEYS = ("train_file", "checkpoint", "out_dir")
NETWORK_KEYS = ("hidden_dims", "latent_dim", "curvature", "clip_radius", "activation")


class ConfigError(ContractViolation):
    pass


@dataclass(frozen=True)
class RunConfig:
    data: SynthesisSpec = field(default_factory=SynthesisSpec)
    network: dict = field(default_factory=dict)
    train: TrainConfig = field(default_factory=TrainConfig)
    scoring: ScoringConfig = field(default_factory=ScoringConfig)
    paths: dict = field(default_factory=dict)

    def network_spec(self, input_dim: int, num_classes: int) -> NetworkSpec:
        return NetworkSpec(input_dim=input_dim, num_classes=num_classes, **self.network)

    def to_text(self) -> str:
        lines = []
        for section in ("data", "train", "scoring"):
            for f in dataclasses.fields(getattr(self, section)):
                lines.append(f"{section}.{f.name} = {_format(getattr(getattr(self, section), f.name))}")
        defaults = NetworkSpec(1, 1)
        for key in NETWORK_KEYS:
            lines.append(f"network.{key} = {_format(self.network.get(key, getattr(defaults, key)))}")
        for key in sorted(self.paths):
            lines.append(f"paths.{key} = {self.paths[key]}")
        return "\n".join(lines) + "\n"


def _format(value) -> str:
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return str(value)


def _convert(raw: str, default, where: str):
    try:
        if isinstance(default, bool):
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            return tuple(int(v) for v in raw.split(",") if v.strip())
        return raw
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {raw!r} as {type(default).__name__}") from None


def parse_config(text: str, base: RunConfig | None = None, source: str = "<config>") -> RunConfig:
    cfg = base or RunConfig()
    updates = {"data": {}, "train": {}, "scoring": {}}
    network = dict(cfg.network)
    paths = dict(cfg.paths)
    net_defaults = NetworkSpec(1, 1)
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        where = f"{source}:{lineno}"
        if "=" not in stripped:
            raise ConfigError(f"{where}: expected 'key = value'")
        key, _, raw = stripped.partition("=")
        key, raw = key.strip(), raw.strip()
        if key == "seed":
            seed = _convert(raw, 0, where)
            updates["data"]["seed"] = seed
            updates["train"]["seed"] = seed
            continue
        section, _, name = key.partition(".")
        if section in updates:
            obj = getattr(cfg, section)
            names = {f.name for f in dataclasses.fields(obj)}
            if name not in names:
                raise ConfigError(f"{where}: unknown key {key!r}")
            updates[section][name] = _convert(raw, getattr(obj, name), where)
        elif section == "network":
            if name not in NETWORK_KEYS:
                raise ConfigError(f"{where}: unknown key {key!r}")
            network[name] = _convert(raw, getattr(net_defaults, name), where)
        elif section == "paths":
            if name not in PATH_KEYS:
                raise ConfigError(f"{where}: unknown key {key!r}")
            paths[name] = raw
        else:
            raise ConfigError(f"{where}: unknown key {key!r}")
    try:
        return RunConfig(
            data=replace(cfg.data, **updates["data"]),
            network=network,
            train=replace(cfg.train, **updates["train"]),
            scoring=replace(cfg.scoring, **updates["scoring"]),
            paths=paths,
        )
    except ContractViolation as exc:
        raise ConfigError(f"{source}: {exc}") from None


def load_config(path=None, overrides=()) -> RunConfig:
    """Defaults, then $MMEL_CONFIG, then ``path``, then ``key=value`` overrides."""
    cfg = RunConfig()
    env = os.environ.get(ENV_VAR)
    if env:
        cfg = parse_config(Path(env).read_text(), cfg, env)
    if path is not None:
        cfg = parse_config(Path(path).read_text(), cfg, str(path))
    if overrides:
        cfg = parse_config("\n".join(overrides), cfg, "<overrides>")
    return cfg
