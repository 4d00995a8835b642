"""TOML run configs, ``key=value`` overrides and run manifests."""

from __future__ import annotations

import hashlib
import json
import re
import subprocess
from pathlib import Path

import tomli
import tomli_w

from .errors import ConfigError
from .trainer import TrainConfig

CONFIG_SCHEMA = "growlab.config/1"
ABLATION_SCHEMA = "growlab.ablation/1"


def _locate(text: str, key: str) -> int | None:
    pat = re.compile(rf'^\s*"?{re.escape(key)}"?\s*=')
    for n, line in enumerate(text.splitlines(), 1):
        if pat.match(line):
            return n
    return None


def _diagnose(path: str, text: str, exc: Exception, keys) -> ConfigError:
    msg = str(exc)
    for key in keys:
        if re.search(rf"\b{re.escape(key)}\b", msg):
            line = _locate(text, key)
            if line is not None:
                return ConfigError(f"{path}:{line}: {msg}")
    return ConfigError(f"{path}: {msg}")


def parse_override(item: str) -> tuple[list[str], object]:
    """``"a.b=1.5"`` -> ``(["a", "b"], 1.5)``; the value is read as a TOML literal."""
    if "=" not in item:
        raise ConfigError(f"override {item!r} is not of the form key=value")
    key, raw = item.split("=", 1)
    key = key.strip()
    try:
        value = tomli.loads(f"v = {raw.strip()}")["v"]
    except tomli.TOMLDecodeError:
        value = raw.strip()
    return key.split("."), value


def apply_overrides(doc: dict, overrides) -> dict:
    doc = json.loads(json.dumps(doc))
    for item in overrides or ():
        path, value = parse_override(item)
        node = doc
        for part in path[:-1]:
            node = node.setdefault(part, {})
        node[path[-1]] = value
    return doc


def read_toml(path) -> tuple[dict, str]:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        return tomli.loads(text), text
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def config_from_doc(doc: dict) -> TrainConfig:
    doc = dict(doc)
    schema = doc.pop("schema", CONFIG_SCHEMA)
    if schema != CONFIG_SCHEMA:
        raise ConfigError(f"unsupported config schema {schema!r}")
    try:
        return TrainConfig.from_dict(doc)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path, overrides=()) -> TrainConfig:
    doc, text = read_toml(path)
    doc = apply_overrides(doc, overrides)
    try:
        return config_from_doc(doc)
    except ConfigError as exc:
        raise _diagnose(str(path), text, exc, list(doc) + list(TrainConfig.__dataclass_fields__)) from exc


def config_to_toml(cfg: TrainConfig) -> str:
    return tomli_w.dumps({"schema": CONFIG_SCHEMA, **cfg.to_dict()})


def config_hash(cfg: TrainConfig) -> str:
    """SHA-256 of the canonical JSON form; independent of key order."""
    blob = json.dumps(cfg.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def revision() -> str | None:
    try:
        out = subprocess.run(["git", "rev-parse", "--short", "HEAD"], capture_output=True, text=True, timeout=5,
                             cwd=Path(__file__).resolve().parent)
    except (OSError, subprocess.SubprocessError):
        return None
    return out.stdout.strip() or None if out.returncode == 0 else None


def load_ablation(path, overrides=()) -> dict:
    """Ablation grid: base TrainConfig keys plus ``[[cells]]`` tables."""
    doc, text = read_toml(path)
    doc = apply_overrides(doc, overrides)
    schema = doc.pop("schema", ABLATION_SCHEMA)
    if schema != ABLATION_SCHEMA:
        raise ConfigError(f"{path}: unsupported ablation schema {schema!r}")
    cells = doc.pop("cells", [])
    if not cells:
        line = _locate(text, "cells")
        raise ConfigError(f"{path}{':' + str(line) if line else ''}: ablation grid is empty")
    for cell in cells:
        if "algorithm" not in cell:
            raise ConfigError(f"{path}: every cell needs an algorithm")
    return {"base": doc, "cells": cells}
