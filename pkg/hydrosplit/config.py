"""
Run configuration documents for the command-line interface.

A RunConfig is a JSON document validated by pydantic. Unknown keys are
rejected, every field carries an explicit default, and dumping a parsed
config gives the same document back.
"""

import json
from pathlib import Path
from typing import List, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError as PydanticValidationError, field_validator

from .exceptions import ConfigError, HydrosplitException
from .mesh import Bathymetry, NodalBathymetry, SurfaceDomainSpec
from .models import (
    Coupling,
    CoriolisMode,
    DataSampling,
    ElementPair,
    InitMode,
    SchemeConfig,
    SolverConfig,
    SolverMethod,
    Variant,
)
from .verification import StudyTemplate


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", use_enum_values=False)


class DepthSection(_Section):
    """Linear depth d0 + dx·x + dy·y, or nodal depths on a grid.

    ``grid[j][i]`` is the depth at vertex (i, j) of a regular grid over the
    polygon's bounding box; when given, the linear coefficients are unused.
    """

    d0: float = 1.0
    dx: float = 0.0
    dy: float = 0.0
    grid: Optional[List[List[float]]] = None

    @field_validator("grid")
    @classmethod
    def _rectangular(cls, value):
        if value is None:
            return value
        if len(value) < 2 or len({len(row) for row in value}) != 1 or len(value[0]) < 2:
            raise ValueError("depth grid must be a rectangular array of at least 2 x 2 values")
        return value


class DomainSection(_Section):
    polygon: List[List[float]] = Field(
        default_factory=lambda: [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]
    )
    depth: DepthSection = Field(default_factory=DepthSection)

    @field_validator("polygon")
    @classmethod
    def _pairs(cls, value):
        if any(len(v) != 2 for v in value):
            raise ValueError("polygon vertices must be [x, y] pairs")
        return value


class MeshSection(_Section):
    target_h: float = Field(default=0.25, gt=0)
    layers: int = Field(default=4, ge=1)
    level: int = Field(default=0, ge=0)


class SpacesSection(_Section):
    element: ElementPair = ElementPair.TAYLOR_HOOD


class SchemeSection(_Section):
    variant: Variant = Variant.R
    coriolis: CoriolisMode = CoriolisMode.NONE
    nu: float = Field(default=1.0, gt=0)
    f_cor: float = 0.0
    T: float = Field(default=0.5, gt=0)
    M: int = Field(default=8, ge=0)
    data_sampling: DataSampling = DataSampling.POINTWISE
    averaging_points: int = Field(default=2, ge=1)
    init: InitMode = InitMode.INTERPOLATION


class SolverSection(_Section):
    method: SolverMethod = SolverMethod.MONOLITHIC_DIRECT
    tol: float = Field(default=1e-12, gt=0)
    max_iter: int = Field(default=5000, ge=1)
    rho: float = Field(default=1.0, gt=0)
    gamma: float = Field(default=1.0, gt=0)

    def to_solver(self) -> SolverConfig:
        return SolverConfig(
            method=self.method, tol=self.tol, max_iter=self.max_iter, rho=self.rho, gamma=self.gamma
        )


class SolversSection(_Section):
    substep0: SolverSection = Field(default_factory=SolverSection)
    substep1: SolverSection = Field(default_factory=SolverSection)
    substep2: SolverSection = Field(default_factory=SolverSection)


class OutputsSection(_Section):
    dir: str = "out"
    ledger: bool = True
    fields: bool = True
    checkpoints: int = Field(default=0, ge=0)


class StudySection(_Section):
    levels: List[int] = Field(default_factory=lambda: [0, 1, 2])
    coupling: Coupling = Coupling.K_EQ_H2


class RunConfig(_Section):
    """Complete run description (see ``hydrosplit --print-config``)."""

    domain: DomainSection = Field(default_factory=DomainSection)
    mesh: MeshSection = Field(default_factory=MeshSection)
    spaces: SpacesSection = Field(default_factory=SpacesSection)
    scheme: SchemeSection = Field(default_factory=SchemeSection)
    solvers: SolversSection = Field(default_factory=SolversSection)
    outputs: OutputsSection = Field(default_factory=OutputsSection)
    study: StudySection = Field(default_factory=StudySection)
    seed: Optional[int] = Field(default=None, ge=0)

    def domain_spec(self) -> SurfaceDomainSpec:
        d = self.domain.depth
        polygon = np.array(self.domain.polygon, dtype=float)
        if d.grid is None:
            depth = Bathymetry(d0=d.d0, dx=d.dx, dy=d.dy)
        else:
            bounds = SurfaceDomainSpec(polygon_vertices=polygon).bounds
            depth = NodalBathymetry.on_grid(bounds, d.grid)
        return SurfaceDomainSpec(polygon_vertices=polygon, depth=depth)

    def scheme_config(self) -> SchemeConfig:
        s = self.scheme
        return SchemeConfig(
            variant=s.variant,
            coriolis=s.coriolis,
            nu=s.nu,
            f_cor=s.f_cor,
            T=s.T,
            M=s.M,
            data_sampling=s.data_sampling,
            averaging_points=s.averaging_points,
            init=s.init,
            substep0=self.solvers.substep0.to_solver(),
            substep1=self.solvers.substep1.to_solver(),
            substep2=self.solvers.substep2.to_solver(),
        )

    def study_template(self) -> StudyTemplate:
        return StudyTemplate(
            domain=self.domain_spec(),
            target_h=self.mesh.target_h,
            layers=self.mesh.layers,
            pair=self.spaces.element,
            scheme=self.scheme_config(),
        )

    def dump(self) -> str:
        """Canonical JSON text (two-space indent, trailing newline)."""
        return json.dumps(self.model_dump(mode="json"), indent=2) + "\n"


def parse_config(text: str) -> RunConfig:
    """Parse and validate a JSON config document.

    Raises:
        ConfigError: On JSON syntax errors (with line and column) or schema
            violations.
    """
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"Malformed JSON: {exc.msg}", line=exc.lineno, column=exc.colno)
    if not isinstance(data, dict):
        raise ConfigError("Config document must be a JSON object")
    try:
        cfg = RunConfig.model_validate(data)
    except PydanticValidationError as exc:
        first = exc.errors()[0]
        where = ".".join(str(p) for p in first.get("loc", ()))
        raise ConfigError(f"Invalid config at '{where}': {first.get('msg')}")
    try:
        cfg.domain_spec()
        cfg.scheme_config()
    except HydrosplitException as exc:
        raise ConfigError(f"Invalid config: {exc}")
    return cfg


def load_config(path: Optional[Union[str, Path]]) -> RunConfig:
    """Config from ``path``, or the defaults when ``path`` is None."""
    if path is None:
        return RunConfig()
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"Cannot read config {path}: {exc.strerror}")
    return parse_config(text)
