"""Experiment configuration: nested sections mirroring each module's
config, JSON round-trip, and the seed-derivation scheme.

One global seed drives everything through named sub-seeds (regime,
sampling, training init/shuffle, ensemble members), so component-level
reproducibility only needs the config file.
"""

from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .osse import NadirConfig, OIConfig, RegimeConfig, SamplingConfig, SwathConfig
from .serialization import read_json, write_json
from .training import TrainConfig, derive_seed


class ConfigError(ValueError):
    """Invalid configuration: maps to CLI exit code 2."""


PAPER_PROTOCOL_NOTE = (
    "paper protocol dates: train 2013-02-04..2013-09-30, "
    "val 2013-01-01..2013-02-02, test 2012-10-22..2012-12-02; "
    "desk-scale day-index windows below follow the same layout"
)


@dataclass
class GridConfig:
    days: int = 60
    rows: int = 64
    cols: int = 64
    cell_deg: float = 0.05
    dt_days: float = 1.0


@dataclass
class WindowsConfig:
    """Half-open day-index ranges; must be pairwise disjoint."""

    train: tuple[int, int] = (14, 48)
    val: tuple[int, int] = (48, 60)
    test: tuple[int, int] = (0, 14)

    def check_disjoint(self) -> None:
        names = ["train", "val", "test"]
        spans = [self.train, self.val, self.test]
        for a in range(len(spans)):
            for b in range(a + 1, len(spans)):
                lo = max(spans[a][0], spans[b][0])
                hi = min(spans[a][1], spans[b][1])
                if lo < hi:
                    raise ConfigError(
                        f"windows overlap: {names[a]}={spans[a]} and {names[b]}={spans[b]}"
                    )


@dataclass
class EnsembleConfig:
    n_members: int = 3
    member_seeds: list[int] | None = None  # default: derived from the global seed


@dataclass
class ExperimentConfig:
    seed: int = 0
    out_dir: str = "runs/exp"
    notes: str = PAPER_PROTOCOL_NOTE
    grid: GridConfig = field(default_factory=GridConfig)
    regime: RegimeConfig = field(default_factory=RegimeConfig)
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    oi: OIConfig = field(default_factory=OIConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    windows: WindowsConfig = field(default_factory=WindowsConfig)
    ensemble: EnsembleConfig = field(default_factory=EnsembleConfig)

    def resolve_seeds(self) -> "ExperimentConfig":
        """Propagate the global seed into the per-component seed fields."""
        cfg = dataclasses.replace(self)
        cfg.regime = dataclasses.replace(self.regime, seed=derive_seed(self.seed, "regime"))
        cfg.sampling = dataclasses.replace(self.sampling, seed=derive_seed(self.seed, "sampling"))
        cfg.train = dataclasses.replace(self.train, seed=derive_seed(self.seed, "train"))
        if cfg.ensemble.member_seeds is None:
            cfg.ensemble = dataclasses.replace(
                self.ensemble,
                member_seeds=[
                    derive_seed(self.seed, f"member{i}") for i in range(self.ensemble.n_members)
                ],
            )
        return cfg

    def member_count(self) -> int:
        if self.ensemble.member_seeds is not None:
            return len(self.ensemble.member_seeds)
        return self.ensemble.n_members


# ---------------------------------------------------------------------------
# dict/JSON round trip

def to_dict(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: to_dict(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, (list, tuple)):
        return [to_dict(v) for v in obj]
    return obj


def _resolve(tp):
    origin = typing.get_origin(tp)
    if origin is typing.Union or str(origin) == "types.UnionType":
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        return args[0] if args else tp
    return tp


def from_dict(cls, d: dict):
    if not isinstance(d, dict):
        raise ConfigError(f"expected a mapping for {cls.__name__}, got {type(d).__name__}")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(d) - names
    if unknown:
        raise ConfigError(f"unknown config keys for {cls.__name__}: {sorted(unknown)}")
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name not in d:
            continue
        v = d[f.name]
        tp = _resolve(hints[f.name])
        if dataclasses.is_dataclass(tp) and v is not None:
            kwargs[f.name] = from_dict(tp, v)
        elif typing.get_origin(tp) is tuple and v is not None:
            kwargs[f.name] = tuple(v)
        else:
            kwargs[f.name] = v
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {cls.__name__}: {exc}") from exc


def save_config(path: Path, cfg: ExperimentConfig) -> None:
    write_json(path, to_dict(cfg))


def load_config(path: Path) -> ExperimentConfig:
    try:
        raw = read_json(path)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except ValueError as exc:
        raise ConfigError(f"config file is not valid JSON: {path}: {exc}") from exc
    return from_dict(ExperimentConfig, raw)


# ---------------------------------------------------------------------------
# flat key access (CLI flags map 1:1 to config keys)

def flat_items(cfg, prefix: str = "") -> list[tuple[str, object]]:
    out = []
    for f in dataclasses.fields(cfg):
        v = getattr(cfg, f.name)
        key = f"{prefix}{f.name}"
        if dataclasses.is_dataclass(v):
            out.extend(flat_items(v, key + "."))
        else:
            out.append((key, v))
    return out


def set_flat(cfg_dict: dict, dotted: str, raw: str) -> None:
    """Apply one 'section.key=value' override onto a config dict."""
    parts = dotted.split(".")
    node = cfg_dict
    for p in parts[:-1]:
        if p not in node or not isinstance(node[p], dict):
            raise ConfigError(f"unknown config section {dotted!r}")
        node = node[p]
    leaf = parts[-1]
    if leaf not in node:
        raise ConfigError(f"unknown config key {dotted!r}")
    node[leaf] = _parse_literal(raw, node[leaf])


def _parse_literal(raw: str, current):
    if isinstance(current, bool):
        if raw.lower() in ("1", "true", "yes"):
            return True
        if raw.lower() in ("0", "false", "no"):
            return False
        raise ConfigError(f"expected a boolean, got {raw!r}")
    if isinstance(current, int) and not isinstance(current, bool):
        return int(raw)
    if isinstance(current, float):
        return float(raw)
    if isinstance(current, (list, tuple)) or current is None:
        if raw.lower() in ("none", "null"):
            return None
        vals = [v for v in raw.split(",") if v != ""]
        try:
            return [int(v) if v.strip().lstrip("-").isdigit() else float(v) for v in vals]
        except ValueError:
            return vals
    return raw
