"""JSON run configuration.

Shape::

    {
      "model": "palm-540b" | {"preset": "palm-540b", ...overrides} | {...all fields},
      "chip": "tpu-v4" | {"peak_flops": ..., "hbm_bytes": ..., "hbm_bw": ..., "interconnect_bw": ...},
      "torus": {"x": 4, "y": 4, "z": 4},
      "workload": {"batch": 64, "input_len": 2048, "gen_len": 64},
      "options": {"alpha": 0.0, "include_attention_flops": false}
    }

Every section is optional; unknown keys anywhere are rejected.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from .collectives import TPU_V4, ChipSpec, Torus
from .cost_engine import OverlapPolicy
from .model import ModelConfig, Workload, get_preset

CHIPS = {"tpu-v4": TPU_V4}
SECTIONS = ("model", "chip", "torus", "workload", "options")
OPTION_KEYS = ("alpha", "include_attention_flops")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig | None = None
    chip: ChipSpec = TPU_V4
    torus: Torus | None = None
    workload: Workload | None = None
    overlap: OverlapPolicy = OverlapPolicy()
    include_attention_flops: bool = False

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {}
        if self.model is not None:
            d["model"] = self.model.to_dict()
        d["chip"] = dataclasses.asdict(self.chip)
        if self.torus is not None:
            d["torus"] = {"x": self.torus.x, "y": self.torus.y, "z": self.torus.z}
        if self.workload is not None:
            d["workload"] = self.workload.to_dict()
        d["options"] = {"alpha": self.overlap.alpha, "include_attention_flops": self.include_attention_flops}
        return d


def _reject_unknown(section: str, data: dict[str, Any], allowed) -> None:
    unknown = sorted(set(data) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown keys in {section!r}: {', '.join(unknown)}")


def _model(raw: Any) -> ModelConfig:
    if isinstance(raw, str):
        return get_preset(raw)
    if not isinstance(raw, dict):
        raise ConfigError("'model' must be a preset name or an object")
    if "preset" in raw:
        base = get_preset(raw["preset"]).to_dict()
        overrides = {k: v for k, v in raw.items() if k != "preset"}
        _reject_unknown("model", overrides, base)
        base.update(overrides)
        return ModelConfig.from_dict(base)
    return ModelConfig.from_dict(raw)


def _chip(raw: Any) -> ChipSpec:
    if isinstance(raw, str):
        if raw not in CHIPS:
            raise ConfigError(f"unknown chip {raw!r}; known chips: {', '.join(CHIPS)}")
        return CHIPS[raw]
    if not isinstance(raw, dict):
        raise ConfigError("'chip' must be a chip name or an object")
    fields = [f.name for f in dataclasses.fields(ChipSpec)]
    _reject_unknown("chip", raw, fields)
    missing = [f for f in fields if f not in raw]
    if missing:
        raise ConfigError(f"missing chip keys: {', '.join(missing)}")
    return ChipSpec(**{k: float(v) for k, v in raw.items()})


def parse_config(data: Any) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    _reject_unknown("config", data, SECTIONS)
    try:
        kwargs: dict[str, Any] = {}
        if "model" in data:
            kwargs["model"] = _model(data["model"])
        if "chip" in data:
            kwargs["chip"] = _chip(data["chip"])
        if "torus" in data:
            raw = data["torus"]
            if not isinstance(raw, dict):
                raise ConfigError("'torus' must be an object")
            _reject_unknown("torus", raw, ("x", "y", "z"))
            kwargs["torus"] = Torus(raw.get("x", 1), raw.get("y", 1), raw.get("z", 1))
        if "workload" in data:
            if not isinstance(data["workload"], dict):
                raise ConfigError("'workload' must be an object")
            kwargs["workload"] = Workload.from_dict(data["workload"])
        if "options" in data:
            raw = data["options"]
            if not isinstance(raw, dict):
                raise ConfigError("'options' must be an object")
            _reject_unknown("options", raw, OPTION_KEYS)
            kwargs["overlap"] = OverlapPolicy(float(raw.get("alpha", 0.0)))
            kwargs["include_attention_flops"] = bool(raw.get("include_attention_flops", False))
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        msg = exc.args[0] if exc.args else str(exc)
        raise ConfigError(str(msg)) from exc
    return RunConfig(**kwargs)


def loads_config(text: str) -> RunConfig:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    return parse_config(data)


def load_config(path: str | Path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    return loads_config(text)
