import argparse
import os
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

from dotenv import dotenv_values, load_dotenv
from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator

from services.errors import ConfigError, LipEmbedError
from services.experiments import RUNNERS, execute
from services.presets import preset_names
from services.runlog import log_event

# -----------------------------
# Env
# -----------------------------
load_dotenv()

DEFAULT_OUT = os.getenv("LIPEMBED_OUTPUT_DIR", "out")


# -----------------------------
# Parsing helpers
# -----------------------------
def _sanitize_value(v: Optional[str]) -> Optional[str]:
    if v is None:
        return None
    # trim and collapse internal whitespace (paste artifacts)
    v = v.strip()
    return " ".join(v.split())


def _sanitize_key(k: str) -> str:
    return k.strip().replace("-", "_")


def _try_parse_vector(text: str) -> Optional[List[float]]:
    """Return [x1, x2, ...] if text looks like '0.1,0.2'."""
    if not isinstance(text, str) or not text.strip():
        return None
    try:
        return [float(part.strip()) for part in text.split(",")]
    except ValueError:
        return None


# -----------------------------
# Models
# -----------------------------
class ExperimentConfig(BaseModel):
    subcommand: str
    flow: str = "torus2"
    scale: Optional[float] = None
    base: Optional[List[float]] = None

    # embed-borel
    points: int = 50
    m_max: int = 20
    eq_trials: int = 100

    seed: int = 42

    # main-lemma / embed-topo
    a: float = 1.0
    delta: float = 0.4
    # Cap on cover elements; the cover fit decides the actual count.
    M: Optional[int] = None
    amplitude: float = 0.03
    cover_ratio: float = 0.9
    bwidth: Optional[float] = None
    edge_gap_ratio: Optional[float] = None
    states: int = 50
    trials: int = 1000
    match_tol: float = 1e-6
    w_tol: Optional[float] = None
    pool: int = 64
    quad_points: int = 9
    corrupt_period: int = 2
    a_samples: int = 100
    bc_samples: int = 20
    g1_eq_trials: int = 20

    # mcshane / mollify
    anchor_sets: int = 50
    max_anchors: int = 40
    k: int = 2
    mollify_inputs: int = 20
    mollify_quad_points: int = 9

    # verify
    inputs: List[str] = Field(default_factory=list)
    tau: float = 1.0
    slack: float = 0.0

    out: str = DEFAULT_OUT
    plot: bool = False

    @field_validator("subcommand")
    @classmethod
    def known_subcommand(cls, v: str) -> str:
        if v not in RUNNERS:
            raise ValueError(f"unknown subcommand '{v}' (known: {', '.join(sorted(RUNNERS))})")
        return v

    @field_validator("flow")
    @classmethod
    def known_flow(cls, v: str) -> str:
        names = preset_names()
        if v not in names:
            raise ValueError(f"unknown flow '{v}' (known: {', '.join(names)})")
        return v

    @field_validator("base", mode="before")
    @classmethod
    def parse_base(cls, v: Any):
        if isinstance(v, str):
            parsed = _try_parse_vector(v)
            if parsed is None:
                raise ValueError(f"base must look like '0.1,0.2', got {v!r}")
            return parsed
        if isinstance(v, (int, float)):
            return [float(v)]
        return v

    @field_validator("inputs", mode="before")
    @classmethod
    def parse_inputs(cls, v: Any):
        if isinstance(v, str):
            return [p.strip() for p in v.split(",") if p.strip()]
        return v

    @field_validator("a", "match_tol", "scale", "bwidth", "w_tol", "edge_gap_ratio", "tau")
    @classmethod
    def positive(cls, v: Optional[float]) -> Optional[float]:
        if v is not None and not v > 0:
            raise ValueError("must be positive")
        return v

    @field_validator("points", "states", "trials", "eq_trials", "g1_eq_trials", "a_samples", "bc_samples", "anchor_sets", "mollify_inputs", "M", "m_max", "corrupt_period")
    @classmethod
    def at_least_one(cls, v: Optional[int]) -> Optional[int]:
        if v is not None and v < 1:
            raise ValueError("must be at least 1")
        return v

    @model_validator(mode="after")
    def check_ranges(self) -> "ExperimentConfig":
        if not (0.0 < self.delta < 1.0):
            raise ValueError("delta must lie in (0,1)")
        if not (0.0 < self.amplitude <= 0.5):
            raise ValueError("amplitude must lie in (0,1/2]")
        if not (0.0 < self.cover_ratio < 1.0):
            raise ValueError("cover_ratio must lie in (0,1)")
        if self.slack < 0:
            raise ValueError("slack must be nonnegative")
        if self.k not in (1, 2):
            raise ValueError("k must be 1 or 2")
        if self.quad_points < 5 or self.mollify_quad_points < 5:
            raise ValueError("quadrature needs at least 5 points per axis")
        if self.pool < 2 or self.points < 2:
            raise ValueError("pool and points need at least 2 states")
        if self.max_anchors < 2:
            raise ValueError("max_anchors must be at least 2")
        if self.subcommand == "verify" and not self.inputs:
            raise ValueError("verify needs at least one input")
        return self


# -----------------------------
# Config assembly
# -----------------------------
def load_config_file(path: str) -> Dict[str, str]:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"Config file not found: {p}")
    raw = dotenv_values(p)
    return {_sanitize_key(k): _sanitize_value(v) for k, v in raw.items() if v is not None}


def build_config(subcommand: str, config_path: Optional[str] = None, overrides: Optional[Dict[str, Any]] = None) -> ExperimentConfig:
    """Defaults, then the config file, then flags."""
    merged: Dict[str, Any] = {}
    if config_path:
        merged.update(load_config_file(config_path))
    merged.update({k: v for k, v in (overrides or {}).items() if v is not None})
    merged["subcommand"] = subcommand
    try:
        return ExperimentConfig(**merged)
    except ValidationError as e:
        first = e.errors()[0]
        where = ".".join(str(p) for p in first.get("loc", ())) or "config"
        raise ConfigError(f"invalid config ({where}): {first.get('msg')}")


# -----------------------------
# Run
# -----------------------------
def run(config: ExperimentConfig) -> int:
    log_event({"event": "run_started", "subcommand": config.subcommand, "flow": config.flow, "seed": config.seed})
    try:
        result = execute(config)
    except (LipEmbedError, FileNotFoundError) as e:
        print(f"❌ {e}", file=sys.stderr)
        log_event({"event": "run_finished", "subcommand": config.subcommand, "exit": 2, "error": type(e).__name__})
        return 2

    failed = [r for r in result.rows if not r.passed]
    for r in failed:
        print(f"❌ {r.check_id}: {r.property} (value={r.value!r}, threshold={r.threshold!r})", file=sys.stderr)
    code = 1 if failed else 0
    report = Path(config.out) / config.subcommand / "report.csv"
    if code == 0:
        print(f"✅ {config.subcommand}: {len(result.rows)} checks passed -> {report}")
    log_event({
        "event": "run_finished",
        "subcommand": config.subcommand,
        "exit": code,
        "checks": len(result.rows),
        "failed": [r.check_id for r in failed],
        "artifacts": len(result.artifacts),
    })
    return code


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(description="Lipschitz embedding experiments for flows.")
    ap.add_argument("subcommand", choices=sorted(RUNNERS))
    ap.add_argument("inputs", nargs="*", help="verify: grid function CSVs or directories")
    ap.add_argument("--config", help="key=value experiment file")
    ap.add_argument("--flow")
    ap.add_argument("--scale", type=float)
    ap.add_argument("--base", help="base point, e.g. '0.1,0.1'")
    ap.add_argument("--points", type=int)
    ap.add_argument("--seed", type=int)
    ap.add_argument("--a", type=float)
    ap.add_argument("--delta", type=float)
    ap.add_argument("--M", type=int, help="cap on cover elements")
    ap.add_argument("--amplitude", type=float)
    ap.add_argument("--bwidth", type=float)
    ap.add_argument("--trials", type=int)
    ap.add_argument("--states", type=int)
    ap.add_argument("--k", type=int)
    ap.add_argument("--tau", type=float)
    ap.add_argument("--slack", type=float)
    ap.add_argument("--out")
    ap.add_argument("--plot", action="store_true", default=None)
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _parser().parse_args(argv)
    overrides = {k: v for k, v in vars(args).items() if k not in ("subcommand", "config", "inputs")}
    if args.inputs:
        overrides["inputs"] = list(args.inputs)
    try:
        cfg = build_config(args.subcommand, args.config, overrides)
    except (ConfigError, FileNotFoundError) as e:
        print(f"❌ {e}", file=sys.stderr)
        return 2
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
