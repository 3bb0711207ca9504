"""Run configuration: versioned JSON, unknown keys rejected with line numbers."""

from __future__ import annotations

import json
import re
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

SCHEMA = "hmfstrat/1"


class ConfigError(ValueError):
    pass


@dataclass
class TrajectoryConfig:
    source: str = "analytic"
    kind: str = "static_cone"
    params: dict = field(default_factory=dict)
    n_cells: int = 32
    length: float = 2.0
    t_end: float = 0.1
    sigma: float = 0.25
    record_every: int = 4
    modes: int = 2
    amplitude: float = 0.6


@dataclass
class ScaleConfig:
    gamma: float = 0.25
    q: int = 1
    delta: float = 1.0
    beta: int = 3
    n_s: int = 12
    n_sigma: int = 12


@dataclass
class StrataConfig:
    eta: float = 0.02
    j: list = field(default_factory=lambda: [2])
    radii: list = field(default_factory=lambda: [0.125, 0.0625, 0.03125, 0.015625])
    R: float = 0.25
    window_w: int = 9
    window_wt: int = 9


@dataclass
class DictionaryConfig:
    n_planes: int = 64
    refine_rounds: int = 3
    refine_step: float = 0.2
    cone_ks: list = field(default_factory=lambda: [2, 3])
    shrink_ks: list = field(default_factory=lambda: [3, 4, 5, 6])
    T_steps: int = 17


@dataclass
class CloudConfig:
    kind: str = "lattice"
    center: list | None = None
    extent: float = 0.25
    count: int = 5
    times: list = field(default_factory=lambda: [0.0])


@dataclass
class RegularityConfig:
    R_max: float = 1.0
    r_min: float = 1e-3
    tol: float = 0.02


@dataclass
class EnergyConfig:
    radius: float = 0.25
    n_space: int = 32
    n_time: int = 8


@dataclass
class VerifyConfig:
    cover: bool = True
    minkowski: bool = True
    cone_split: bool = True
    tube_cells: int = 32
    slope_slack: float = 0.5


@dataclass
class RunConfig:
    m: int = 3
    n: int = 2
    seed: int = 0
    trajectory: TrajectoryConfig = field(default_factory=TrajectoryConfig)
    scale: ScaleConfig = field(default_factory=ScaleConfig)
    strata: StrataConfig = field(default_factory=StrataConfig)
    dictionary: DictionaryConfig = field(default_factory=DictionaryConfig)
    cloud: CloudConfig = field(default_factory=CloudConfig)
    regularity: RegularityConfig = field(default_factory=RegularityConfig)
    energies: EnergyConfig = field(default_factory=EnergyConfig)
    verify: VerifyConfig = field(default_factory=VerifyConfig)

    def to_dict(self) -> dict:
        return {"schema": SCHEMA, **asdict(self)}


SECTIONS = ("trajectory", "scale", "strata", "dictionary", "cloud", "regularity", "energies", "verify")


def _line_of(text: str, key: str, after: int = 0) -> int:
    pattern = re.compile(r'"' + re.escape(key) + r'"\s*:')
    mt = pattern.search(text, after)
    if mt is None:
        return 0
    return text.count("\n", 0, mt.start()) + 1


def _offset_of(text: str, key: str) -> int:
    mt = re.search(r'"' + re.escape(key) + r'"\s*:', text)
    return 0 if mt is None else mt.start()


def _typed(value, default, where: str):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false")
        return value
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number")
        return float(value)
    if isinstance(default, str) and not isinstance(value, str):
        raise ConfigError(f"{where}: expected a string")
    if isinstance(default, list) and not isinstance(value, list):
        raise ConfigError(f"{where}: expected a list")
    if isinstance(default, dict) and not isinstance(value, dict):
        raise ConfigError(f"{where}: expected an object")
    return value


def _build(cls, data: dict, text: str, prefix: str, start: int):
    obj = cls()
    names = {f.name for f in fields(cls)}
    for key, value in data.items():
        if key not in names:
            raise ConfigError(f"line {_line_of(text, key, start)}: unknown key {prefix}{key!r}")
        where = f"line {_line_of(text, key, start)}: {prefix}{key}"
        setattr(obj, key, _typed(value, getattr(obj, key), where))
    return obj


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}: line {exc.lineno}: invalid JSON ({exc.msg})") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{source}: top level must be an object")
    if data.get("schema") != SCHEMA:
        raise ConfigError(f"{source}: line {_line_of(text, 'schema')}: schema must be {SCHEMA!r}")
    cfg = RunConfig()
    for key, value in data.items():
        if key == "schema":
            continue
        line = _line_of(text, key)
        if key in SECTIONS:
            if not isinstance(value, dict):
                raise ConfigError(f"{source}: line {line}: section {key!r} must be an object")
            try:
                setattr(cfg, key, _build(type(getattr(cfg, key)), value, text, key + ".", _offset_of(text, key)))
            except ConfigError as exc:
                raise ConfigError(f"{source}: {exc}") from None
        elif key in ("m", "n", "seed"):
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigError(f"{source}: line {line}: {key} must be an integer")
            setattr(cfg, key, value)
        else:
            raise ConfigError(f"{source}: line {line}: unknown key {key!r}")
    cfg._text = text
    try:
        validate(cfg)
    except ConfigError as exc:
        raise ConfigError(f"{source}: {exc}") from None
    return cfg


def validate(cfg: RunConfig) -> None:
    def at(section: str, key: str) -> str:
        text = getattr(cfg, "_text", None)
        if text is None:
            return f"{section}.{key}"
        return f"line {_line_of(text, key, _offset_of(text, section))}: {section}.{key}"

    if not 1 <= cfg.m <= 4:
        raise ConfigError(f"m must satisfy 1 <= m <= 4 (got {cfg.m})")
    if cfg.n < 1:
        raise ConfigError(f"n must be at least 1 (got {cfg.n})")
    sc = cfg.scale
    if not 0 < sc.gamma < 0.5:
        raise ConfigError(f"{at('scale', 'gamma')} violates 0<γ<1/2 (got {sc.gamma})")
    if sc.q < 0 or sc.beta < 1 or sc.delta <= 0:
        raise ConfigError(f"{at('scale', 'beta')}: need q >= 0, beta >= 1, delta > 0")
    st = cfg.strata
    if st.eta <= 0:
        raise ConfigError(f"{at('strata', 'eta')} must be positive")
    if not st.radii or any(not 0 < r <= st.R for r in st.radii):
        raise ConfigError(f"{at('strata', 'radii')}: radii must lie in (0, R]")
    if cfg.trajectory.source not in ("analytic", "simulated"):
        raise ConfigError(f"{at('trajectory', 'source')} must be 'analytic' or 'simulated'")
    if cfg.cloud.kind not in ("lattice", "random", "axis"):
        raise ConfigError(f"{at('cloud', 'kind')} must be one of lattice, random, axis")
    if cfg.cloud.count < 1:
        raise ConfigError(f"{at('cloud', 'count')} must be positive")


def load_config(path) -> RunConfig:
    path = Path(path)
    return parse_config(path.read_text(), str(path))
