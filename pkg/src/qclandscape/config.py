"""Run configuration for the command-line front end.

Matrices are nested lists whose entries are real numbers or [re, im]
pairs.  Unknown keys are rejected everywhere.
"""

from __future__ import annotations

import json
import zlib
from pathlib import Path
from typing import Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from .errors import ConfigError

Entry = Union[float, tuple[float, float]]
Matrix = list[list[Entry]]
Vector = list[Entry]


def to_array(data) -> np.ndarray:
    """Decode a validated matrix (lists for nesting, tuples for [re, im]) into a complex array."""

    def conv(x):
        if isinstance(x, tuple):
            return complex(x[0], x[1])
        if isinstance(x, list):
            return [conv(v) for v in x]
        return complex(x)

    return np.array(conv(data), dtype=complex)


def encode_matrix(a: np.ndarray) -> list:
    a = np.asarray(a)
    if a.ndim == 0:
        v = complex(a)
        return v.real if v.imag == 0 else [v.real, v.imag]
    return [encode_matrix(x) for x in a]


class _Model(BaseModel):
    model_config = ConfigDict(extra="forbid")


class SystemConfig(_Model):
    h0: Optional[Matrix] = None
    dipoles: Optional[list[Matrix]] = None
    horizon: Optional[float] = None
    benchmark: Optional[Literal["eight_level", "dipole_swap", "five_level_track", "resonant_two_level", "pauli", "ladder"]] = None
    levels: Optional[int] = None

    @field_validator("horizon")
    @classmethod
    def _positive(cls, v):
        if v is not None and not v > 0:
            raise ValueError("horizon must be positive")
        return v


class FieldConfig(_Model):
    kind: Literal["zeros", "constant", "random", "values", "file"] = "zeros"
    steps: int = Field(100, ge=1)
    channels: Optional[int] = None
    value: Union[float, list[float]] = 0.0
    amplitude: float = 0.1
    bandwidth: float = 5.0
    modes: int = Field(8, ge=1)
    values: Optional[list[list[float]]] = None
    path: Optional[str] = None
    shape: Optional[list[float]] = None


class ObjectiveConfig(_Model):
    kind: Literal["observable", "gate"] = "observable"
    rho0: Optional[Matrix] = None
    psi0: Optional[Vector] = None
    theta: Optional[Matrix] = None
    w: Optional[Matrix] = None


class TopologyBlock(_Model):
    case: Optional[Literal["nondegenerate", "projector_pair", "gate"]] = None
    n: Optional[int] = None


class FlowBlock(_Model):
    s_max: float = Field(5.0, gt=0)
    steps: int = Field(500, ge=1)
    method: Literal["rk4", "lie_euler"] = "rk4"
    u0: Union[Literal["random", "identity"], Matrix] = "random"


class OptimizeBlock(_Model):
    max_steps: int = Field(500, ge=1)
    tol: float = Field(1e-6, gt=0)
    penalty: float = Field(0.0, ge=0)
    initial_step: float = Field(1.0, gt=0)
    target: Optional[float] = None
    hessian: bool = False


class FreeConfig(_Model):
    kind: Literal["zero", "fluence_min", "fluence_max", "random_null"] = "zero"
    delta_s: float = Field(1.0, gt=0)
    seed: Optional[int] = None
    amplitude: float = 1.0


class DmorphBlock(_Model):
    mode: Literal["level_set", "morph", "track"] = "level_set"
    free: FreeConfig = FreeConfig()
    s_steps: int = Field(50, ge=1)
    tolerance: Optional[float] = None
    level: Optional[float] = None
    track_amplitude: float = 0.2
    path: Literal["fixed", "linear", "quarter_circle"] = "fixed"
    end_system: Optional[SystemConfig] = None
    hessian_every: int = Field(0, ge=0)


class TrackBlock(_Model):
    target: Union[Literal["random"], Matrix] = "random"
    s_steps: int = Field(40, ge=1)
    tolerance: float = Field(1e-3, gt=0)
    regularization: Optional[float] = None
    condition_cap: float = 1e8


class RankBlock(_Model):
    depth_cap: int = Field(12, ge=1)


class OracleBlock(_Model):
    kind: Literal["three_level", "trilinear"] = "three_level"
    T: float = Field(1.0, gt=0)
    theta: float = 2 * np.pi
    J: float = Field(1.0, gt=0)


class OpenBlock(_Model):
    rho_s: Matrix
    rho_e: Matrix
    theta: Matrix
    flows: int = Field(0, ge=0)
    s_max: float = Field(60.0, gt=0)
    steps: int = Field(1200, ge=1)


class RunConfig(_Model):
    system: Optional[SystemConfig] = None
    field: Optional[FieldConfig] = None
    objective: Optional[ObjectiveConfig] = None
    topology: Optional[TopologyBlock] = None
    flow: Optional[FlowBlock] = None
    optimize: Optional[OptimizeBlock] = None
    dmorph: Optional[DmorphBlock] = None
    track: Optional[TrackBlock] = None
    rank: Optional[RankBlock] = None
    oracle: Optional[OracleBlock] = None
    open: Optional[OpenBlock] = None
    seed: int = 0
    output: str = "qcl_out"

    def canonical_json(self) -> str:
        return json.dumps(self.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    """Parse JSON text; errors carry line/column or the offending field path."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    try:
        return RunConfig.model_validate(raw)
    except ValidationError as exc:
        lines = []
        for err in exc.errors():
            loc = ".".join(str(p) for p in err["loc"])
            lines.append(f"{source}: field '{loc}': {err['msg']}")
        raise ConfigError("\n".join(lines)) from None


def load_config(path: str | Path) -> RunConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {p}: {exc}") from None
    return parse_config(text, str(p))


def substream(seed: int, label: str) -> np.random.Generator:
    """Independent generator for one module, derived from the run seed and a label."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), zlib.crc32(label.encode())]))
