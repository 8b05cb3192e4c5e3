"""JSON configuration documents.

A document picks a calibrated base configuration with ``preset`` (A-D,
default A) and overrides any field of the link, run and forecast sections.
Unknown keys are rejected; missing keys keep the base value. Serializing a
parsed document writes every field, so parse -> serialize -> parse is
lossless. Field names carry their unit: ``_s``, ``_w``, ``_km``,
``_cps``, ``_deg`` and so on; unsuffixed numbers are dimensionless.
"""

from __future__ import annotations

import dataclasses
import enum
import hashlib
import json
import types
import typing
from dataclasses import dataclass, field, replace
from functools import lru_cache
from pathlib import Path
from typing import Any

from .errors import ConfigError, DomainError
from .forecast import IMPROVED_SUPPRESSION, TWO_PHOTON_CONTRAST, EfficiencyUpgrades, TrapModel, improved_trap
from .linkmodel import LinkConfig
from .presets import CONFIG_LABELS, preset
from .simengine import DEFAULT_ANGLES, RunConfig

SCHEMA_VERSION = "1"


@dataclass(frozen=True)
class RunSection:
    target_events: int | None = 11335
    target_duration_s: float | None = None
    atom_angles_deg: tuple[float, ...] = DEFAULT_ANGLES
    angle_weights: tuple[int, ...] | None = None
    photon_bases: tuple[str, ...] = ("HV", "DA")
    seed: int = 0
    block_size: int = 2048
    max_duration_s: float | None = None


@dataclass(frozen=True)
class ForecastSection:
    improved_suppression: float = IMPROVED_SUPPRESSION
    two_photon_contrast: float = TWO_PHOTON_CONTRAST
    upgrade_detector_efficiency: float | None = 0.85
    no_mems_switch: bool = True
    link_drift_penalty: float = 1.0


@dataclass(frozen=True)
class ConfigDocument:
    schema_version: str = SCHEMA_VERSION
    preset: str = "A"
    link: LinkConfig = field(default_factory=lambda: preset("A"))
    run: RunSection = field(default_factory=RunSection)
    forecast: ForecastSection = field(default_factory=ForecastSection)

    def run_config(self, seed: int | None = None, events: int | None = None) -> RunConfig:
        r = self.run
        target_events, target_duration = r.target_events, r.target_duration_s
        if events is not None:
            target_events, target_duration = events, None
        try:
            return RunConfig(
                link=self.link,
                configuration_label=self.preset,
                target_events=target_events,
                target_duration_s=target_duration,
                atom_angles=r.atom_angles_deg,
                angle_weights=r.angle_weights,
                photon_bases=r.photon_bases,
                seed=r.seed if seed is None else seed,
                block_size=r.block_size,
                max_duration_s=r.max_duration_s,
            )
        except ValueError as exc:
            raise ConfigError(f"run: {exc}") from None

    def traps(self) -> tuple[TrapModel, TrapModel]:
        f = self.forecast
        up = EfficiencyUpgrades(f.upgrade_detector_efficiency, f.no_mems_switch)
        try:
            cur = TrapModel("current", self.link.decoherence, up, f.link_drift_penalty)
            imp = improved_trap(self.link, f.improved_suppression)
        except DomainError as exc:
            raise ConfigError(f"forecast: {exc}") from None
        return cur, replace(imp, efficiency_upgrades=up, link_drift_penalty=f.link_drift_penalty)


@lru_cache(maxsize=None)
def _hints(cls) -> dict[str, Any]:
    return typing.get_type_hints(cls)


def _coerce(value: Any, tp: Any, path: str) -> Any:
    origin = typing.get_origin(tp)
    if origin in (typing.Union, types.UnionType):
        args = typing.get_args(tp)
        if value is None:
            if type(None) in args:
                return None
            raise ConfigError(f"{path}: null not allowed")
        errors = []
        for a in args:
            if a is type(None):
                continue
            try:
                return _coerce(value, a, path)
            except ConfigError as exc:
                errors.append(str(exc))
        raise ConfigError(errors[0] if errors else f"{path}: invalid value")
    if value is None:
        raise ConfigError(f"{path}: null not allowed")
    if origin is tuple:
        args = typing.get_args(tp)
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{path}: expected a list")
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_coerce(v, args[0], f"{path}[{i}]") for i, v in enumerate(value))
        if len(value) != len(args):
            raise ConfigError(f"{path}: expected {len(args)} entries, got {len(value)}")
        return tuple(_coerce(v, a, f"{path}[{i}]") for i, (v, a) in enumerate(zip(value, args)))
    if dataclasses.is_dataclass(tp):
        raise ConfigError(f"{path}: expected an object")
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected true/false, got {value!r}")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
        return value
    if isinstance(tp, type) and issubclass(tp, enum.Enum):
        try:
            return tp(value)
        except ValueError:
            raise ConfigError(f"{path}: {value!r} is not one of {[m.value for m in tp]}") from None
    raise ConfigError(f"{path}: unsupported field type {tp!r}")


def _merge(base: Any, data: Any, path: str) -> Any:
    """Return ``base`` with the fields in ``data`` replaced."""
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'document'}: expected an object")
    names = {f.name for f in dataclasses.fields(base)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{path + ': ' if path else ''}unknown key(s) {unknown}; allowed: {sorted(names)}")
    hints = _hints(type(base))
    changes = {}
    for key, value in data.items():
        sub = f"{path}.{key}" if path else key
        current = getattr(base, key)
        if dataclasses.is_dataclass(current) and not isinstance(current, type):
            changes[key] = _merge(current, value, sub)
        else:
            changes[key] = _coerce(value, hints[key], sub)
    try:
        return replace(base, **changes)
    except ValueError as exc:
        raise ConfigError(f"{path or 'document'}: {exc}") from None


def _plain(obj: Any) -> Any:
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: _plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, enum.Enum):
        return obj.value
    if isinstance(obj, (tuple, list)):
        return [_plain(v) for v in obj]
    if isinstance(obj, float):
        return float(obj)
    return obj


def from_dict(data: dict) -> ConfigDocument:
    if not isinstance(data, dict):
        raise ConfigError("document: expected a JSON object")
    version = data.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"schema_version: unsupported {version!r}; expected {SCHEMA_VERSION!r}")
    label = data.get("preset", "A")
    if label not in CONFIG_LABELS:
        raise ConfigError(f"preset: {label!r} is not one of {list(CONFIG_LABELS)}")
    base = ConfigDocument(preset=label, link=preset(label))
    doc = _merge(base, data, "")
    doc.run_config()  # validate the run section early
    return doc


def to_dict(doc: ConfigDocument) -> dict:
    return _plain(doc)


def dumps(doc: ConfigDocument) -> str:
    return json.dumps(to_dict(doc), indent=2, sort_keys=False) + "\n"


def loads(text: str, source: str = "<string>") -> ConfigDocument:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    try:
        return from_dict(data)
    except ConfigError as exc:
        raise ConfigError(f"{source}: {exc}") from None


def load(path: str | Path | None) -> ConfigDocument:
    """Read a document; ``None`` gives the defaults."""
    if path is None:
        return ConfigDocument()
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"{p}: cannot read config ({exc.strerror})") from None
    return loads(text, str(p))


def config_hash(doc: ConfigDocument) -> str:
    canon = json.dumps(to_dict(doc), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()
