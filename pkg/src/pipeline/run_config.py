"""
Run configuration: nested dataclasses with JSON load/save and validation.

Validation errors carry ``<file>:<line>:`` prefixes pointing at the offending key.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Any, Dict, List, Optional, Tuple, Union

from config.settings import (
    CFL_POLICY,
    CONTROL_SHAPES,
    CROSS_ARM_HALF_LENGTH,
    CROSS_ARM_HALF_WIDTH,
    OUTPUT_DIR,
    POD_ELL,
    POD_RANK_TOL,
    SEED,
    SNAPSHOT_SOURCE,
    TIMING_REPEATS,
    U_A,
    U_B,
    U_DESIRED,
    VTK_STRIDE,
)
from src.control.control_vector import BoxBounds
from src.control.shapes import SHAPE_REGISTRY
from src.mesh.adaptive_mesh import MeshSettings
from src.optimization.cost import CostWeights
from src.optimization.projected_gradient import OptimizerSettings
from src.solvers.state_solver import CHParams
from src.utils.errors import ConfigError
from src.utils.helpers import save_json

SNAPSHOT_SOURCES = ("desired", "desired+state")
INITIAL_SHAPES = ("cross", "constant", "noise")
CFL_POLICIES = ("warn", "abort")


@dataclass(frozen=True)
class ControlSettings:
    shapes: List[str] = field(default_factory=lambda: list(CONTROL_SHAPES))
    u_a: Union[float, List[float]] = U_A
    u_b: Union[float, List[float]] = U_B
    initial_value: float = 0.0
    control_file: Optional[str] = None

    def __post_init__(self):
        unknown = [s for s in self.shapes if s not in SHAPE_REGISTRY]
        if unknown or not self.shapes:
            raise ValueError(f"unknown or empty control shapes {self.shapes}")
        self.bounds()

    def bounds(self) -> BoxBounds:
        return BoxBounds(self.u_a, self.u_b)


@dataclass(frozen=True)
class PODSettings:
    ell: int = POD_ELL
    ell_d: Optional[int] = None
    snapshot_source: str = SNAPSHOT_SOURCE
    rank_tol: float = POD_RANK_TOL
    basis_dir: Optional[str] = None

    def __post_init__(self):
        if self.ell < 0:
            raise ValueError(f"ell must be >= 0, got {self.ell}")
        if self.ell_d is not None and self.ell_d < 1:
            raise ValueError(f"ell_d must be >= 1, got {self.ell_d}")
        if self.snapshot_source not in SNAPSHOT_SOURCES:
            raise ValueError(f"snapshot_source must be one of {SNAPSHOT_SOURCES}")
        if self.rank_tol <= 0.0:
            raise ValueError(f"rank_tol must be > 0, got {self.rank_tol}")

    @property
    def deim_size(self) -> int:
        return self.ell if self.ell_d is None else self.ell_d


@dataclass(frozen=True)
class TargetSettings:
    initial_shape: str = "cross"
    initial_value: float = 1.0
    noise_amplitude: float = 0.05
    u_desired: float = U_DESIRED
    arm_half_length: float = CROSS_ARM_HALF_LENGTH
    arm_half_width: float = CROSS_ARM_HALF_WIDTH

    def __post_init__(self):
        if self.initial_shape not in INITIAL_SHAPES:
            raise ValueError(f"initial_shape must be one of {INITIAL_SHAPES}")
        if not 0.0 < self.arm_half_width <= self.arm_half_length < 0.5:
            raise ValueError("cross arms need 0 < half_width <= half_length < 0.5")


@dataclass(frozen=True)
class OutputSettings:
    directory: str = OUTPUT_DIR
    vtk_stride: int = VTK_STRIDE
    cfl_policy: str = CFL_POLICY
    seed: int = SEED
    timing_repeats: int = TIMING_REPEATS

    def __post_init__(self):
        if self.vtk_stride < 0:
            raise ValueError(f"vtk_stride must be >= 0, got {self.vtk_stride}")
        if self.cfl_policy not in CFL_POLICIES:
            raise ValueError(f"cfl_policy must be one of {CFL_POLICIES}")
        if self.timing_repeats < 1:
            raise ValueError(f"timing_repeats must be >= 1, got {self.timing_repeats}")


SECTIONS: Dict[str, type] = {
    "model": CHParams,
    "cost": CostWeights,
    "control": ControlSettings,
    "mesh": MeshSettings,
    "optimizer": OptimizerSettings,
    "pod": PODSettings,
    "targets": TargetSettings,
    "output": OutputSettings,
}

# fields that accept JSON null
_NULLABLE = {("mesh", "h_min_guard"), ("pod", "ell_d"), ("pod", "basis_dir"),
             ("control", "control_file")}
# nullable path fields
_PATHS = {("control", "control_file"), ("pod", "basis_dir")}
# fields that accept a number or a list of numbers
_NUMBER_OR_LIST = {("control", "u_a"), ("control", "u_b")}


@dataclass(frozen=True)
class RunConfig:
    model: CHParams = field(default_factory=CHParams)
    cost: CostWeights = field(default_factory=CostWeights)
    control: ControlSettings = field(default_factory=ControlSettings)
    mesh: MeshSettings = field(default_factory=MeshSettings)
    optimizer: OptimizerSettings = field(default_factory=OptimizerSettings)
    pod: PODSettings = field(default_factory=PODSettings)
    targets: TargetSettings = field(default_factory=TargetSettings)
    output: OutputSettings = field(default_factory=OutputSettings)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, data: Dict[str, Any], source: str = "<config>",
                  text: Optional[str] = None) -> "RunConfig":
        if not isinstance(data, dict):
            raise ConfigError(f"{source}:1: top level must be an object")
        unknown = [k for k in data if k not in SECTIONS]
        if unknown:
            raise ConfigError(f"{source}:{_line_of(text, unknown[0])}: unknown section '{unknown[0]}'")
        built = {}
        for name, klass in SECTIONS.items():
            built[name] = _build_section(name, klass, data.get(name, {}), source, text)
        return cls(**built)

    def with_overrides(self, **sections) -> "RunConfig":
        return replace(self, **sections)


def _line_of(text: Optional[str], key: str, section: Optional[str] = None) -> int:
    if not text:
        return 1
    start = 0
    if section is not None:
        pos = text.find(f'"{section}"')
        start = pos if pos >= 0 else 0
    pos = text.find(f'"{key}"', start)
    if pos < 0:
        pos = start
    return text.count("\n", 0, pos) + 1


def _coerce(section: str, name: str, value: Any, default: Any, where: str) -> Any:
    if value is None:
        if (section, name) in _NULLABLE:
            return None
        raise ConfigError(f"{where}: '{section}.{name}' must not be null")
    if (section, name) in _NUMBER_OR_LIST:
        if isinstance(value, list):
            if not value or not all(_is_number(v) for v in value):
                raise ConfigError(f"{where}: '{section}.{name}' must be a number or list of numbers")
            return [float(v) for v in value]
        if not _is_number(value):
            raise ConfigError(f"{where}: '{section}.{name}' must be a number or list of numbers")
        return float(value)
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: '{section}.{name}' must be true or false")
        return value
    if isinstance(default, int) and (section, name) not in _NULLABLE:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: '{section}.{name}' must be an integer, got {value!r}")
        return value
    if isinstance(default, float) or (section, name) == ("mesh", "h_min_guard"):
        if not _is_number(value):
            raise ConfigError(f"{where}: '{section}.{name}' must be a number, got {value!r}")
        return float(value)
    if isinstance(default, str) or (section, name) in _PATHS:
        if not isinstance(value, str):
            raise ConfigError(f"{where}: '{section}.{name}' must be a string, got {value!r}")
        return value
    if isinstance(default, list):
        if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
            raise ConfigError(f"{where}: '{section}.{name}' must be a list of strings")
        return list(value)
    if (section, name) == ("pod", "ell_d"):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: '{section}.{name}' must be an integer or null")
        return value
    return value


def _is_number(v: Any) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _build_section(section: str, klass: type, values: Any, source: str,
                   text: Optional[str]):
    where = f"{source}:{_line_of(text, section)}"
    if not isinstance(values, dict):
        raise ConfigError(f"{where}: section '{section}' must be an object")
    defaults = klass()
    names = {f.name for f in fields(klass)}
    kwargs = {}
    for key, value in values.items():
        line_where = f"{source}:{_line_of(text, key, section)}"
        if key not in names:
            raise ConfigError(f"{line_where}: unknown key '{section}.{key}'")
        kwargs[key] = _coerce(section, key, value, getattr(defaults, key), line_where)
    try:
        return klass(**kwargs)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{where}: invalid '{section}' settings: {exc}") from exc


def load_config(path: Optional[str]) -> RunConfig:
    """Read a JSON run config; None gives the defaults."""
    if path is None:
        return RunConfig()
    if not os.path.exists(path):
        raise ConfigError(f"{path}:0: config file not found")
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}: invalid JSON: {exc.msg}") from exc
    return RunConfig.from_dict(data, source=path, text=text)


def save_config(cfg: RunConfig, path: str) -> str:
    save_json(cfg.to_dict(), path)
    return path


def config_summary(cfg: RunConfig) -> List[Tuple[str, str]]:
    m = cfg.model
    return [
        ("Time grid", f"T={m.T:g}, dt={m.dt:g}, N_t={m.n_steps}"),
        ("Model", f"b={m.b:g}, sigma={m.sigma:g}, eps={m.epsilon:g}"),
        ("Cost", f"beta1={cfg.cost.beta1:g}, beta2={cfg.cost.beta2:g}, gamma={cfg.cost.gamma:g}"),
        ("Controls", f"{cfg.control.shapes} in [{cfg.control.u_a}, {cfg.control.u_b}]"),
        ("Mesh", f"root level {cfg.mesh.root_level}, adapt={'on' if cfg.mesh.adapt else 'off'}"),
    ]
