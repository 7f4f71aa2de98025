"""YAML run configurations: scene, camera, drift and analysis settings.

A configuration file looks like::

    scene:
      grid_width: 96
      grid_height: 32
      normalization_alpha: 0.005
      excitation: {kind: uniform, peak: 1.0}
      emitter: {decay_rate: 0.1, two_photon_prob: 0.22, brightness_coeff: 20}
      objects:
        - {center: [12, 12], m: 1, psf_sigma: 1.0}
        - {center: [30, 12], emitters: [{brightness_coeff: 18}, {}]}
    camera: {image_offset_b: [48, 0], gate: {gate_width: 10}}
    drift: {kind: none}
    simulation: {seed: 42, frames: 1000000}
    analysis: {baseline_lag: 1, gates: [10, 15, 20, 30, 40]}

Per-object emitter entries override the scene-level ``emitter`` defaults;
``m`` repeats the defaults m times.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Any, Dict, Optional

import yaml

from .core_model import EmitterParams, GateConfig
from .errors import ConfigurationError, ValidationError
from .sim_engine import CameraConfig, DriftModel, ExcitationField, ObjectSpec, SceneSpec


@dataclass
class RunConfig:
    scene: Optional[SceneSpec] = None
    camera: CameraConfig = field(default_factory=CameraConfig)
    drift: DriftModel = field(default_factory=DriftModel)
    simulation: Dict[str, Any] = field(default_factory=dict)
    analysis: Dict[str, Any] = field(default_factory=dict)
    hbt: Dict[str, Any] = field(default_factory=dict)


def _build(cls, data, where: str):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigurationError(f"{where}: expected a mapping, got {type(data).__name__}")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigurationError(f"{where}: unknown field(s) {', '.join(unknown)}")
    try:
        return cls(**data)
    except ValidationError as exc:
        raise ConfigurationError(f"{where}: {exc}") from None
    except TypeError as exc:
        raise ConfigurationError(f"{where}: {exc}") from None


def emitter_from_dict(data, where: str = "emitter", defaults: Optional[dict] = None
                      ) -> EmitterParams:
    merged = dict(defaults or {})
    merged.update(data or {})
    return _build(EmitterParams, merged, where)


def object_from_dict(data, defaults: dict, where: str) -> ObjectSpec:
    if not isinstance(data, dict):
        raise ConfigurationError(f"{where}: expected a mapping")
    data = dict(data)
    if "center" not in data:
        raise ConfigurationError(f"{where}: missing field center")
    m = data.pop("m", None)
    emitters = data.pop("emitters", None)
    if emitters is None:
        count = 1 if m is None else m
        if not isinstance(count, int) or count < 1:
            raise ConfigurationError(f"{where}.m: must be a positive integer")
        emitters = [{}] * count
    elif m is not None and m != len(emitters):
        raise ConfigurationError(f"{where}: m={m} disagrees with {len(emitters)} emitters")
    data["emitters"] = tuple(emitter_from_dict(e, f"{where}.emitters[{j}]", defaults)
                             for j, e in enumerate(emitters))
    return _build(ObjectSpec, data, where)


def scene_from_dict(data) -> SceneSpec:
    if not isinstance(data, dict):
        raise ConfigurationError("scene: expected a mapping")
    data = dict(data)
    defaults = data.pop("emitter", None) or {}
    objects = data.pop("objects", None)
    if not objects:
        raise ConfigurationError("scene.objects: at least one object is required")
    data["objects"] = tuple(object_from_dict(o, defaults, f"scene.objects[{i}]")
                            for i, o in enumerate(objects))
    data["excitation"] = _build(ExcitationField, data.get("excitation"), "scene.excitation")
    return _build(SceneSpec, data, "scene")


def camera_from_dict(data) -> CameraConfig:
    data = dict(data or {})
    data["gate"] = _build(GateConfig, data.get("gate"), "camera.gate")
    return _build(CameraConfig, data, "camera")


def drift_from_dict(data) -> DriftModel:
    return _build(DriftModel, data, "drift")


def config_from_dict(data) -> RunConfig:
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigurationError("top level: expected a mapping")
    allowed = {"scene", "camera", "drift", "simulation", "analysis", "hbt"}
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise ConfigurationError(f"top level: unknown section(s) {', '.join(unknown)}")
    cfg = RunConfig()
    if data.get("scene") is not None:
        cfg.scene = scene_from_dict(data["scene"])
    cfg.camera = camera_from_dict(data.get("camera"))
    cfg.drift = drift_from_dict(data.get("drift"))
    for name in ("simulation", "analysis", "hbt"):
        section = data.get(name) or {}
        if not isinstance(section, dict):
            raise ConfigurationError(f"{name}: expected a mapping")
        setattr(cfg, name, dict(section))
    return cfg


def load_config(path) -> RunConfig:
    """Parse a YAML configuration; errors name the line or the offending field."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f" at line {mark.line + 1}, column {mark.column + 1}" if mark else ""
        raise ConfigurationError(f"{path}: YAML syntax error{where}: "
                                 f"{getattr(exc, 'problem', exc)}") from None
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc.strerror}") from None
    return config_from_dict(data)


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def config_to_dict(cfg: RunConfig) -> dict:
    out = {"camera": _plain(dataclasses.asdict(cfg.camera)),
           "drift": _plain(dataclasses.asdict(cfg.drift))}
    if cfg.scene is not None:
        out["scene"] = _plain(dataclasses.asdict(cfg.scene))
    for name in ("simulation", "analysis", "hbt"):
        if getattr(cfg, name):
            out[name] = _plain(getattr(cfg, name))
    return out


def save_config(cfg: RunConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(config_to_dict(cfg), fh, sort_keys=True)


def scene_from_metadata(metadata: dict) -> Optional[SceneSpec]:
    """Rebuild the simulated scene recorded in a stack's metadata, if any."""
    scene = metadata.get("scene")
    return scene_from_dict(scene) if scene else None


def camera_from_metadata(metadata: dict) -> Optional[CameraConfig]:
    cam = metadata.get("camera")
    return camera_from_dict(cam) if cam else None
