"""YAML experiment files: schemas, loading with line diagnostics, and object builders."""
from __future__ import annotations

import hashlib
import json
import math
from pathlib import Path
from typing import Annotated, Literal, Union

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, TypeAdapter, ValidationError, field_validator

from . import blackhole, critsolve, density, geometry, izhc, lattice
from .errors import ConfigError

Number = Union[float, int]
ComplexLike = Union[float, int, str, list[float]]


def to_complex(v):
    if isinstance(v, (list, tuple)):
        if len(v) != 2:
            raise ValueError("complex numbers are written [re, im]")
        return complex(float(v[0]), float(v[1]))
    if isinstance(v, str):
        return complex(v.replace(" ", "").replace("i", "j"))
    return complex(v)


class Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", populate_by_name=True)


class GridRange(Strict):
    start: float
    stop: float
    num: int = Field(ge=1)
    spacing: Literal["log", "linear"] = "log"

    def values(self):
        if self.spacing == "log":
            if self.start <= 0 or self.stop <= 0:
                raise ConfigError("log-spaced grids need positive bounds")
            return np.logspace(math.log10(self.start), math.log10(self.stop), self.num).tolist()
        return np.linspace(self.start, self.stop, self.num).tolist()


LGrid = Union[float, list[float], GridRange]


def grid_values(v):
    if isinstance(v, GridRange):
        return v.values()
    if isinstance(v, list):
        if not v:
            raise ConfigError("L grid is empty")
        return [float(x) for x in v]
    return [float(v)]


class BodySpec(Strict):
    kind: Literal["ball", "ellipsoid", "custom"]
    dim: int | None = Field(default=None, ge=1)
    matrix: list[list[float]] | None = None
    gauge: str | None = None
    extent: list[float] | None = None

    def build(self, seed=0):
        if self.kind == "ball":
            if self.dim is None:
                raise ConfigError("ball needs dim", field="dim")
            return lattice.StarBody.ball(self.dim)
        if self.kind == "ellipsoid":
            if self.matrix is None:
                raise ConfigError("ellipsoid needs matrix", field="matrix")
            return lattice.StarBody.ellipsoid(np.array(self.matrix, dtype=float))
        if self.dim is None or self.gauge is None:
            raise ConfigError("custom body needs dim and gauge", field="gauge")
        return lattice.StarBody.custom(self.dim, self.gauge, extent=self.extent, seed=seed)


class ObservableSpec(Strict):
    kind: Literal["constant", "coordinate_ratio", "cone_indicator", "expression"] = "constant"
    value: float = 1.0
    index: int = 0
    direction: list[float] | None = None
    half_angle: float | None = None
    expr: str | None = None

    def build(self, dim, seed=0):
        if self.kind == "constant":
            return lattice.RadialObservable.constant(dim, self.value)
        if self.kind == "coordinate_ratio":
            return lattice.RadialObservable.coordinate_ratio(dim, self.index)
        if self.kind == "cone_indicator":
            if self.direction is None or self.half_angle is None:
                raise ConfigError("cone_indicator needs direction and half_angle", field="direction")
            return lattice.RadialObservable.cone_indicator(dim, self.direction, self.half_angle)
        if self.expr is None:
            raise ConfigError("expression observable needs expr", field="expr")
        return lattice.RadialObservable.expression(dim, self.expr, seed=seed)


class ModelSpec(Strict):
    kind: Literal["flat", "projective", "custom"] = "flat"
    m: int = Field(default=1, ge=1)
    N: int = Field(default=1, ge=1)
    potential: str | None = None
    grad: list[str] | None = None
    hess: list[list[str]] | None = None
    curvature: list[list[str]] | None = None

    def build(self, seed=0):
        if self.kind == "flat":
            return geometry.FlatModel(self.m)
        if self.kind == "projective":
            return geometry.ProjectiveModel(self.m, self.N)
        if self.potential is None:
            raise ConfigError("custom model needs potential", field="potential")
        return geometry.CustomModel(self.m, self.potential, self.grad, self.hess, self.curvature, seed=seed)


class SectionSpec(Strict):
    terms: list[list] | None = None
    expr: str | None = None
    scale: float = 1.0

    def build(self, m):
        if (self.terms is None) == (self.expr is None):
            raise ConfigError("a section needs exactly one of terms or expr", field="terms")
        if self.terms is not None:
            return geometry.PolySection.from_records(m, self.terms)
        return geometry.ExprSection(m, self.expr, self.scale)


class FamilySpec(Strict):
    m: int = Field(default=1, ge=1)
    basis: list[SectionSpec] = Field(min_length=1)
    qform: list[list[float]]

    def build(self):
        return critsolve.SectionFamily([s.build(self.m) for s in self.basis], np.array(self.qform, dtype=float))


class RegionSpec(Strict):
    kind: Literal["ball", "box"] = "ball"
    m: int = Field(default=1, ge=1)
    radius: float | None = Field(default=None, ge=0)
    re: list[float] | None = None
    im: list[float] | None = None

    def build(self):
        if self.kind == "ball":
            if self.radius is None:
                raise ConfigError("ball region needs radius", field="radius")
            return critsolve.Region.ball(self.radius, self.m)
        if self.re is None or self.im is None or len(self.re) != 2 or len(self.im) != 2:
            raise ConfigError("box region needs re: [lo, hi] and im: [lo, hi]", field="re")
        return critsolve.Region.box(self.re[0], self.re[1], self.im[0], self.im[1], self.m)


class EnsembleSpec(Strict):
    h21: int = Field(ge=0)
    F: list[list[list[ComplexLike]]] | None = None
    random_seed: int | None = None
    qform: list[list[float]] | None = None
    covariance: list[list[float]] | None = None

    def build(self):
        if self.qform is not None and self.covariance is not None:
            raise ConfigError("give at most one of qform and covariance", field="qform")
        if self.F is not None:
            y = density.YukawaData(self.h21, tuple(np.array([[to_complex(v) for v in row] for row in f])
                                                   for f in self.F))
        elif self.random_seed is not None:
            if self.qform is None and self.covariance is None:
                return density.HessianEnsemble.random(self.h21, self.random_seed)
            y = density.YukawaData.random(self.h21, self.random_seed)
        elif self.h21 == 0:
            y = density.YukawaData(0)
        else:
            raise ConfigError("ensemble needs F or random_seed", field="F")
        if self.covariance is not None:
            return density.HessianEnsemble.from_covariance(y, np.array(self.covariance, dtype=float))
        if self.qform is not None:
            return density.HessianEnsemble.from_qform(y, np.array(self.qform, dtype=float))
        return density.HessianEnsemble.from_qform(y, density.gram(density.hessian_basis(y)))


class Common(Strict):
    seed: int = 0
    workers: int = Field(default=1, ge=1)
    out: str


class LatticeScan(Common):
    command: Literal["lattice-scan"]
    body: BodySpec
    observable: ObservableSpec = ObservableSpec()
    L: LGrid
    leading_method: Literal["quadrature", "monte-carlo"] = "quadrature"
    leading_samples: int = Field(default=200_000, ge=2)
    fit: bool = True


class DensityCheck(Strict):
    samples: int = Field(default=2000, ge=10)
    seed: int = 0


class VacuaCount(Common):
    command: Literal["vacua-count"]
    family: FamilySpec
    model: ModelSpec = ModelSpec()
    L: LGrid
    region: RegionSpec
    grid_density: float = Field(default=2.0, ge=2)
    bound: BodySpec | None = None
    bound_L: float | None = None
    density: DensityCheck | None = None


class DensityCompare(Common):
    command: Literal["density-compare"]
    ensemble: EnsembleSpec
    samples: int = Field(default=100_000, ge=density.MIN_SAMPLES)
    forms: list[Literal["gaussian", "indicator"]] = ["gaussian", "indicator"]


class IzhcEval(Common):
    command: Literal["izhc-eval"]
    ensemble: EnsembleSpec
    m: Literal[1, 2]
    eps: list[float] = list(izhc.DEFAULT_SCHEDULE)
    eps_prime: list[float] = list(izhc.DEFAULT_SCHEDULE)
    haar: int = Field(default=32, ge=2)
    xi_max: float = 2e3
    panel_nodes: int = Field(default=10, ge=2)
    tol: float = 2e-2


class BhMoment(Common):
    command: Literal["bh-moment"]
    b3: Union[int, list[int]]
    form: Literal["indicator", "gaussian"] = "gaussian"
    method: Literal["closed-form", "quadrature", "monte-carlo"] = "closed-form"
    samples: int = Field(default=1_000_000, ge=blackhole.MIN_SAMPLES)
    volWP: float = Field(default=1.0, gt=0)
    L: float | None = Field(default=None, gt=0)
    formal: bool = False

    @field_validator("b3")
    @classmethod
    def _b3_list(cls, v):
        return v if isinstance(v, list) else [v]


class PlotData(Common):
    command: Literal["plotdata"]
    csv: str
    kind: Literal["loglog-residual", "ratio-vs-L", "trace"]


Experiment = Annotated[
    Union[LatticeScan, VacuaCount, DensityCompare, IzhcEval, BhMoment, PlotData],
    Field(discriminator="command"),
]
_adapter = TypeAdapter(Experiment)
COMMANDS = ("lattice-scan", "vacua-count", "density-compare", "izhc-eval", "bh-moment", "plotdata")


# ---------------------------------------------------------------- loading


def _child(node, key):
    if isinstance(node, yaml.MappingNode):
        return next(((k, v) for k, v in node.value if k.value == key), (None, None))
    if isinstance(node, yaml.SequenceNode) and isinstance(key, int) and 0 <= key < len(node.value):
        return None, node.value[key]
    return None, None


def _node_line(node, path):
    """1-based line of the YAML node at ``path``, or of the deepest ancestor / key that exists."""
    line = node.start_mark.line + 1
    for key in path:
        key_node, node = _child(node, key)
        if node is None:
            return key_node.start_mark.line + 1 if key_node is not None else line
        line = (key_node or node).start_mark.line + 1
    return line


def _clean_loc(data, loc, keep_last):
    """Drop pydantic's union-member tags, keeping only components that address the document."""
    out, cur = [], data
    for i, p in enumerate(loc):
        if isinstance(cur, dict) and p in cur:
            out.append(p)
            cur = cur[p]
        elif isinstance(cur, list) and isinstance(p, int) and 0 <= p < len(cur):
            out.append(p)
            cur = cur[p]
        elif keep_last and i == len(loc) - 1 and isinstance(p, str) and isinstance(cur, dict):
            out.append(p)
    return out


def read_yaml(text, source="<config>"):
    try:
        data = yaml.safe_load(text)
        node = yaml.compose(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"{source}: invalid YAML: {exc}", line=mark.line + 1 if mark else None) from None
    return data, node


def _schema_error(exc, data, node, source, skip):
    # Union members each report an error; the one addressing the deepest path is the informative one.
    cands = [(_clean_loc(data, list(e["loc"])[skip:], e["type"] in ("missing", "extra_forbidden")), e)
             for e in exc.errors()]
    loc, err = max(cands, key=lambda c: len(c[0]))
    field = ".".join(str(p) for p in loc) or "<root>"
    line = _node_line(node, loc) if node is not None else None
    where = f"{source}:{line}" if line else source
    return ConfigError(f"{where}: field '{field}': {err['msg']}", field=field, line=line)


def validate(data, node=None, source="<config>"):
    """Validate a mapping against the experiment schema; errors name the field and line."""
    if not isinstance(data, dict):
        raise ConfigError(f"{source}: top level must be a mapping")
    if data.get("command") not in COMMANDS:
        raise ConfigError(f"{source}: command must be one of {', '.join(COMMANDS)}", field="command",
                          line=_node_line(node, ["command"]) if node is not None else None)
    try:
        return _adapter.validate_python(data)
    except ValidationError as exc:
        raise _schema_error(exc, data, node, source, 1) from None


def validate_part(model_cls, data, node=None, source="<file>"):
    """Validate one object document (body, family, model, ensemble, ...)."""
    if not isinstance(data, dict):
        raise ConfigError(f"{source}: top level must be a mapping")
    try:
        return model_cls.model_validate(data)
    except ValidationError as exc:
        raise _schema_error(exc, data, node, source, 0) from None


def load(path):
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    data, node = read_yaml(text, str(path))
    return validate(data, node, str(path))


def load_part(path):
    """Load a sub-document (body, family, model, ensemble, ...) as plain data plus its YAML node."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    return read_yaml(text, str(path))


def dump(cfg):
    return cfg.model_dump(mode="json", exclude_none=True)


def to_yaml(cfg):
    return yaml.safe_dump(dump(cfg), sort_keys=True)


def config_hash(cfg):
    blob = json.dumps(dump(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()
