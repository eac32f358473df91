# services/presets.py
from dataclasses import dataclass
from typing import List, Optional, Tuple
import json
import os
from pathlib import Path
from functools import lru_cache

from services.errors import ConfigError
from services.flows import Flow, logistic_interval_flow, torus_translation_flow

DEFAULT_PRESETS = os.path.join(os.path.dirname(os.path.dirname(__file__)), "data", "flow_presets.json")


@dataclass(frozen=True)
class FlowPreset:
    name: str
    kind: str  # "torus" | "logistic"
    k: int
    group_scale: float
    base: Tuple[float, ...]
    notes: str = ""


@lru_cache(maxsize=4)
def load_presets(path: str = DEFAULT_PRESETS) -> List[FlowPreset]:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"Flow presets file not found: {p}")
    raw = json.loads(p.read_text(encoding="utf-8"))
    presets: List[FlowPreset] = []
    for f in raw.get("flows", []):
        presets.append(
            FlowPreset(
                name=f["name"],
                kind=f["kind"],
                k=int(f["k"]),
                group_scale=float(f["group_scale"]),
                base=tuple(float(v) for v in f["base"]),
                notes=f.get("notes", ""),
            )
        )
    return presets


def preset_names(path: str = DEFAULT_PRESETS) -> List[str]:
    return [p.name for p in load_presets(path)]


def get_preset(name: str, path: str = DEFAULT_PRESETS) -> FlowPreset:
    for p in load_presets(path):
        if p.name == name:
            return p
    raise ConfigError(f"unknown flow '{name}' (known: {', '.join(preset_names(path))})")


def build_flow(name: str, group_scale: Optional[float] = None, path: str = DEFAULT_PRESETS) -> Flow:
    """Flow for a preset name; group_scale overrides the preset's torus scale."""
    preset = get_preset(name, path)
    if preset.kind == "torus":
        return torus_translation_flow(preset.k, preset.group_scale if group_scale is None else float(group_scale))
    if preset.kind == "logistic":
        return logistic_interval_flow()
    raise ConfigError(f"preset '{name}' has unknown kind '{preset.kind}'")
