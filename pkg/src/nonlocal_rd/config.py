"""Run configuration: a YAML document validated before anything is computed."""
from __future__ import annotations

import csv
import math
from pathlib import Path
from typing import Any, Literal, Optional, Union

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, PrivateAttr, ValidationError, field_validator, model_validator

from . import reactions as R
from .experiments import constant_profile, cosine_mode, gaussian_bump, random_uniform
from .grid import Grid, build_grid
from .integrate import SolverConfig, SystemSpec
from .kernels import KernelSpec, assemble_operator
from .operators import Local, Nonlocal


class ConfigError(ValueError):
    """Invalid configuration; ``str()`` is a user-facing message with line numbers when known."""


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class GridSection(_Section):
    dim: Literal[1, 2] = 2
    extents: list[float] = [2.0, 1.0]
    counts: list[int] = [101, 51]

    @model_validator(mode="after")
    def _lengths(self):
        if len(self.extents) != self.dim or len(self.counts) != self.dim:
            raise ValueError(f"extents and counts need {self.dim} entries")
        if any(e <= 0 for e in self.extents):
            raise ValueError("extents must be positive")
        if any(c < 3 for c in self.counts):
            raise ValueError("counts must be at least 3")
        return self


class KernelSection(_Section):
    shape: Literal["gaussian", "truncated_gaussian", "bump", "uniform", "constant"] = "gaussian"
    eps: float = Field(1.0, gt=0)
    cutoff: Optional[float] = Field(None, gt=0)
    value: float = Field(1.0, gt=0)
    scale_index: Optional[float] = Field(None, gt=0)
    normalization: Literal["raw", "unit_mass"] = "raw"
    distance_weighted: bool = False
    storage: Literal["auto", "dense", "matrix_free"] = "auto"

    def spec(self) -> KernelSpec:
        return KernelSpec(self.shape, eps=self.eps, cutoff=self.cutoff, value=self.value,
                          scale_index=self.scale_index, normalization=self.normalization,
                          distance_weighted=self.distance_weighted)


class Term(_Section):
    component: int = Field(ge=1)
    coef: float
    exponents: list[int]

    @field_validator("exponents")
    @classmethod
    def _nonneg(cls, v):
        if any(e < 0 for e in v):
            raise ValueError("exponents must be nonnegative")
        return v


class ReactionSection(_Section):
    name: str = "gray_scott"
    params: dict[str, float] = {}
    m: Optional[int] = Field(None, ge=1)
    terms: Optional[list[Term]] = None
    qbal_weights: Optional[list[float]] = None
    balanced: bool = False
    intsum_matrix: Optional[list[list[float]]] = None
    intsum_bound: Optional[float] = None
    poly_degree: Optional[int] = None

    @model_validator(mode="after")
    def _known(self):
        if self.name == "custom":
            if self.m is None or self.terms is None:
                raise ValueError("a custom reaction needs m and terms")
            for t in self.terms:
                if t.component > self.m or len(t.exponents) != self.m:
                    raise ValueError(f"term {t.model_dump()} does not fit m={self.m}")
        elif self.name not in R.BUILTINS and self.name not in ("zero", "linear_decay", "damped_source"):
            raise ValueError(f"unknown reaction {self.name!r}")
        return self

    def build(self) -> R.ReactionSystem:
        p = dict(self.params)
        try:
            if self.name == "custom":
                terms = [(t.component - 1, t.coef, t.exponents) for t in self.terms]
                meta = {k: getattr(self, k) for k in ("qbal_weights", "intsum_matrix", "intsum_bound", "poly_degree")}
                meta = {k: v for k, v in meta.items() if v is not None}
                if "qbal_weights" in meta:
                    meta["qbal_weights"] = tuple(meta["qbal_weights"])
                if "intsum_matrix" in meta:
                    meta["intsum_matrix"] = tuple(tuple(r) for r in meta["intsum_matrix"])
                return R.polynomial(self.m, terms, name="custom", balanced=self.balanced, **meta)
            if self.name == "zero":
                return R.zero_reaction(int(p.pop("m", 1)), **p)
            if self.name == "linear_decay":
                return R.linear_decay(p.pop("lam", 1.0), int(p.pop("m", 1)), **p)
            if self.name == "damped_source":
                m = int(p.pop("m", 1))
                return R.damped_source(p.pop("K", 1.0), p.pop("alpha", 1.0), m, **p)
            return R.BUILTINS[self.name](**p)
        except TypeError as exc:
            raise ValueError(f"bad parameters for reaction {self.name!r}: {exc}") from None


class ModeSection(_Section):
    type: Literal["nonlocal", "local"]
    d: Optional[float] = None
    D: Optional[float] = None

    @model_validator(mode="after")
    def _coef(self):
        key = "d" if self.type == "nonlocal" else "D"
        other = "D" if key == "d" else "d"
        val = getattr(self, key)
        if getattr(self, other) is not None:
            raise ValueError(f"a {self.type} mode takes '{key}', not '{other}'")
        if val is None:
            raise ValueError(f"a {self.type} mode needs '{key}'")
        if not (math.isfinite(val) and val > 0):
            raise ValueError(f"diffusivity '{key}' must be positive, got {val}")
        return self

    @property
    def coefficient(self) -> float:
        return self.d if self.type == "nonlocal" else self.D


class InitialSection(_Section):
    profile: Literal["gaussian_bump", "constant", "csv", "random_uniform", "cosine"] = "gaussian_bump"
    center: Optional[list[float]] = None
    width: float = Field(0.1, gt=0)
    amplitude: float = Field(1.0, ge=0)
    value: float = Field(1.0, ge=0)
    path: Optional[str] = None
    column: Optional[str] = None
    seed: int = 0
    low: float = Field(0.0, ge=0)
    high: float = Field(1.0, ge=0)
    mode: int = Field(1, ge=0)
    axis: int = Field(0, ge=0, le=1)
    mean: float = 1.0

    @model_validator(mode="after")
    def _args(self):
        if self.profile == "csv" and not self.path:
            raise ValueError("a csv profile needs 'path'")
        if self.profile == "cosine" and self.amplitude > self.mean:
            raise ValueError("cosine profile would be negative: amplitude exceeds mean")
        if self.profile == "random_uniform" and self.high < self.low:
            raise ValueError("high must be at least low")
        return self

    def build(self, grid: Grid, component: int, base: Path) -> np.ndarray:
        if self.profile == "gaussian_bump":
            return gaussian_bump(grid, self.center, self.width, self.amplitude)
        if self.profile == "constant":
            return constant_profile(grid, self.value)
        if self.profile == "random_uniform":
            return random_uniform(grid, self.seed, self.low, self.high)
        if self.profile == "cosine":
            return cosine_mode(grid, self.mode, self.axis, self.mean, self.amplitude)
        return _read_profile_csv(base / self.path, self.column or f"u_{component + 1}", grid.n_nodes)


def _read_profile_csv(path: Path, column: str, n: int) -> np.ndarray:
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise ConfigError(f"initial.path: cannot read {path}: {exc.strerror}") from None
    if not rows or column not in rows[0]:
        raise ConfigError(f"initial.path: {path} has no column {column!r}")
    if len(rows) != n:
        raise ConfigError(f"initial.path: {path} has {len(rows)} rows, grid has {n} nodes")
    return np.array([float(r[column]) for r in rows])


class SolverSection(_Section):
    scheme: Literal["explicit_euler", "implicit_bdf2"] = "explicit_euler"
    t_end: float = Field(2.0, gt=0)
    dt: Optional[float] = Field(None, gt=0)
    cfl_fraction: float = Field(0.9, gt=0, le=1)
    cfl_rule: Literal["von_neumann", "cell_area"] = "von_neumann"
    newton_tol: float = Field(1e-8, gt=0)
    newton_max_iter: int = Field(25, ge=1)
    krylov_rtol: float = Field(1e-8, gt=0)
    negativity_tol: float = Field(1e-10, gt=0)
    blowup_value: float = Field(1e12, gt=0)
    snapshot_stride: int = Field(0, ge=0)
    diagnostics_stride: int = Field(1, ge=0)
    lp_orders: list[int] = [2]
    dissipation: bool = True
    allow_unstable_dt: bool = False
    audit: bool = False

    @field_validator("lp_orders")
    @classmethod
    def _orders(cls, v):
        if any(p < 2 for p in v):
            raise ValueError("lp orders must be at least 2")
        return v

    def build(self) -> SolverConfig:
        kw = self.model_dump(exclude={"t_end", "audit"})
        kw["lp_orders"] = tuple(kw["lp_orders"])
        return SolverConfig(**kw)


class ExperimentSection(_Section):
    j_list: list[float] = [1.0, 2.0, 4.0, 8.0]
    eps_schedule: Union[None, Literal["inverse"], list[float]] = None

    @model_validator(mode="after")
    def _ascending(self):
        j = self.j_list
        if not j or any(x <= 0 for x in j) or any(b <= a for a, b in zip(j, j[1:])):
            raise ValueError("j_list must be positive and strictly increasing")
        if isinstance(self.eps_schedule, list) and len(self.eps_schedule) != len(j):
            raise ValueError("eps_schedule list must match j_list")
        return self


class OutputSection(_Section):
    dir: Optional[str] = None
    label: str = "run"


class RunConfig(_Section):
    grid: GridSection = GridSection()
    kernel: KernelSection = KernelSection()
    reaction: ReactionSection = ReactionSection()
    modes: list[ModeSection] = [ModeSection(type="nonlocal", d=0.1), ModeSection(type="nonlocal", d=0.01)]
    initial: Union[InitialSection, list[InitialSection]] = [InitialSection(), InitialSection(amplitude=0.5)]
    solver: SolverSection = SolverSection()
    experiment: ExperimentSection = ExperimentSection()
    output: OutputSection = OutputSection()
    _base: Path = PrivateAttr(default_factory=lambda: Path("."))

    def initial_list(self, m: int) -> list[InitialSection]:
        if isinstance(self.initial, InitialSection):
            return [self.initial] * m
        return list(self.initial)


# ------------------------------------------------------------ loading


def _locate(node, loc) -> Optional[int]:
    """1-based line of the YAML node addressed by a validation ``loc`` path."""
    line = None
    for key in loc:
        if node is None:
            break
        line = node.start_mark.line + 1
        if isinstance(node, yaml.MappingNode):
            nxt = None
            for k, v in node.value:
                if k.value == key:
                    nxt, line = v, k.start_mark.line + 1
                    break
            node = nxt
        elif isinstance(node, yaml.SequenceNode) and isinstance(key, int):
            node = node.value[key] if key < len(node.value) else None
            if node is not None:
                line = node.start_mark.line + 1
        else:
            # union tags and similar; stay on the current node
            continue
    return line


def _format_errors(exc: ValidationError, root, source: str, overridden: set) -> str:
    lines = []
    for err in exc.errors():
        loc = tuple(x for x in err["loc"] if not (isinstance(x, str) and ("[" in x or x in ("function-after",))))
        name = ".".join(str(x) for x in loc) or "<root>"
        where = ""
        if any(name == o or name.startswith(o + ".") or o.startswith(name + ".") for o in overridden):
            where = " (from --override)"
        elif root is not None:
            ln = _locate(root, loc)
            if ln is not None:
                where = f" (line {ln})"
        lines.append(f"{source}: {name}{where}: {err['msg']}")
    return "\n".join(lines)


def _set_path(doc: dict, dotted: str, value: Any):
    parts = dotted.split(".")
    cur = doc
    for k, part in enumerate(parts[:-1]):
        key: Any = int(part) if part.isdigit() else part
        if isinstance(cur, list):
            cur = cur[key]
            continue
        if key not in cur or cur[key] is None:
            cur[key] = [] if parts[k + 1].isdigit() else {}
        cur = cur[key]
    last: Any = int(parts[-1]) if parts[-1].isdigit() else parts[-1]
    cur[last] = value


def apply_overrides(doc: dict, overrides) -> set:
    done = set()
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, raw = item.split("=", 1)
        key = key.strip()
        try:
            value = yaml.safe_load(raw)
        except yaml.YAMLError:
            value = raw
        try:
            _set_path(doc, key, value)
        except (IndexError, KeyError, TypeError, ValueError):
            raise ConfigError(f"override {key!r} does not address a config entry") from None
        done.add(key)
    return done


def parse_config(text: str, source: str = "<config>", overrides=None) -> RunConfig:
    try:
        root = yaml.compose(text)
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f" (line {mark.line + 1})" if mark is not None else ""
        raise ConfigError(f"{source}{where}: invalid YAML: {getattr(exc, 'problem', exc)}") from None
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise ConfigError(f"{source}: top level must be a mapping")
    overridden = apply_overrides(doc, overrides)
    try:
        return RunConfig.model_validate(doc)
    except ValidationError as exc:
        raise ConfigError(_format_errors(exc, root, source, overridden)) from None


def load_config(path, overrides=None) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config: {exc.strerror}") from None
    cfg = parse_config(text, str(path), overrides)
    cfg._base = path.parent
    return cfg


def defaulted_fields(model: BaseModel, prefix: str = "") -> list[tuple[str, Any]]:
    """Every parameter that took its default value, as ``(dotted.name, value)``."""
    out = []
    for name in type(model).model_fields:
        value = getattr(model, name)
        key = f"{prefix}{name}"
        if name not in model.model_fields_set:
            out.append((key, _plain(value)))
        elif isinstance(value, BaseModel):
            out += defaulted_fields(value, key + ".")
        elif isinstance(value, list) and value and isinstance(value[0], BaseModel):
            for k, item in enumerate(value):
                out += defaulted_fields(item, f"{key}.{k}.")
    return out


def _plain(value):
    if isinstance(value, BaseModel):
        return value.model_dump()
    if isinstance(value, list):
        return [_plain(v) for v in value]
    return value


# ------------------------------------------------------------ building


def build_system(cfg: RunConfig, base: Optional[Path] = None) -> SystemSpec:
    base = base if base is not None else cfg._base
    try:
        grid = build_grid(cfg.grid.dim, cfg.grid.extents, cfg.grid.counts)
        reaction = cfg.reaction.build()
        if len(cfg.modes) != reaction.m:
            raise ConfigError(f"modes: {len(cfg.modes)} entries for a {reaction.m}-component reaction")
        inits = cfg.initial_list(reaction.m)
        if len(inits) != reaction.m:
            raise ConfigError(f"initial: {len(inits)} profiles for a {reaction.m}-component reaction")
        op = None
        modes = []
        for mode in cfg.modes:
            if mode.type == "nonlocal":
                if op is None:
                    op = assemble_operator(grid, cfg.kernel.spec(), storage=cfg.kernel.storage)
                modes.append(Nonlocal(mode.d, op))
            else:
                modes.append(Local(mode.D))
        U0 = np.stack([p.build(grid, i, base) for i, p in enumerate(inits)])
        return SystemSpec(grid, reaction, tuple(modes), U0, cfg.solver.t_end)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
