"""Scenario configuration: YAML loading with line/field diagnostics."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import yaml

SUITES = ("geometry", "mesh-spectral", "markov-rp", "perturbation", "massive-sewing",
          "massless-cft", "limit-oracle", "mu-scan")

TOP_LEVEL = {"suite", "seed", "resolution", "d", "mu", "degree", "tolerances", "output", "format", "params"}


class ConfigError(ValueError):
    """Invalid scenario configuration; the message names the line and field."""


@dataclass
class Scenario:
    suite: str
    seed: int = 0
    resolution: int | None = None
    d: float | None = None
    mu: float | None = None
    degree: int | None = None
    tolerances: dict = field(default_factory=dict)
    output: str | None = None
    format: str = "json"
    params: dict = field(default_factory=dict)

    def tol(self, name: str, default: float) -> float:
        return float(self.tolerances.get(name, default))

    def get(self, name: str, default=None):
        value = getattr(self, name, None) if name in TOP_LEVEL else None
        if value is None:
            value = self.params.get(name, default)
        return value


def _mark(node) -> str:
    return f"line {node.start_mark.line + 1}"


def _scalar(node, kind, where, source):
    if not isinstance(node, yaml.ScalarNode):
        raise ConfigError(f"{source}: {_mark(node)}: field '{where}' must be a scalar")
    value = yaml.safe_load(node.value) if node.tag != "tag:yaml.org,2002:str" else node.value
    try:
        if kind is int:
            if isinstance(value, bool) or int(value) != value:
                raise ValueError
            return int(value)
        if kind is float:
            if isinstance(value, bool):
                raise ValueError
            return float(value)
        return str(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{source}: {_mark(node)}: field '{where}' must be {kind.__name__}, got {node.value!r}") from None


def parse_scenario(text: str, source: str = "<config>") -> Scenario:
    """Parse a YAML scenario, reporting the offending line and field on error."""
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"line {mark.line + 1}" if mark is not None else "unknown line"
        raise ConfigError(f"{source}: {where}: YAML syntax error: {getattr(exc, 'problem', exc)}") from None
    if root is None:
        raise ConfigError(f"{source}: empty configuration")
    if not isinstance(root, yaml.MappingNode):
        raise ConfigError(f"{source}: {_mark(root)}: top level must be a mapping")
    values = {}
    for key_node, val_node in root.value:
        key = key_node.value
        if key not in TOP_LEVEL:
            raise ConfigError(f"{source}: {_mark(key_node)}: unknown field '{key}'")
        if key in values:
            raise ConfigError(f"{source}: {_mark(key_node)}: duplicate field '{key}'")
        if key in ("seed", "resolution", "degree"):
            values[key] = _scalar(val_node, int, key, source)
        elif key in ("d", "mu"):
            values[key] = _scalar(val_node, float, key, source)
        elif key in ("suite", "output", "format"):
            values[key] = _scalar(val_node, str, key, source)
        elif key == "tolerances":
            if not isinstance(val_node, yaml.MappingNode):
                raise ConfigError(f"{source}: {_mark(val_node)}: field 'tolerances' must be a mapping")
            tols = {}
            for k, v in val_node.value:
                t = _scalar(v, float, f"tolerances.{k.value}", source)
                if not t > 0:
                    raise ConfigError(f"{source}: {_mark(v)}: field 'tolerances.{k.value}' must be positive")
                tols[k.value] = t
            values[key] = tols
        else:
            if not isinstance(val_node, yaml.MappingNode):
                raise ConfigError(f"{source}: {_mark(val_node)}: field 'params' must be a mapping")
            values[key] = yaml.safe_load(yaml.serialize(val_node))
        node_line = _mark(val_node)
        _validate_field(key, values[key], f"{source}: {node_line}")
    if "suite" not in values:
        raise ConfigError(f"{source}: missing field 'suite'")
    return Scenario(**values)


def _validate_field(key, value, where):
    if key == "suite" and value not in SUITES:
        raise ConfigError(f"{where}: field 'suite' must be one of {', '.join(SUITES)}; got {value!r}")
    if key == "format" and value not in ("json", "csv", "text"):
        raise ConfigError(f"{where}: field 'format' must be json, csv or text")
    if key == "seed" and not 0 <= value < 2 ** 64:
        raise ConfigError(f"{where}: field 'seed' must be an unsigned 64-bit integer")
    if key == "resolution" and value < 8:
        raise ConfigError(f"{where}: field 'resolution' must be at least 8")
    if key in ("d", "mu") and not value > 0:
        raise ConfigError(f"{where}: field '{key}' must be positive")
    if key == "degree" and not 0 <= value <= 4:
        raise ConfigError(f"{where}: field 'degree' must lie in 0..4")


def load_scenario(path) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read configuration ({exc.strerror})") from None
    return parse_scenario(text, str(path))
