"""
Run configuration: one JSON document per run, `schema: 1`.

Model keys sit at the top level (`states`, `Q`, `g`, `c`, `utility`, or
`alpha`, `c`, `utility` for a house config); everything else lives in optional
sections. Defaults are resolved here so the echoed config reproduces the run.
"""
import json
import logging
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from src.core.entities.grid import TimeGrid
from src.core.entities.house import HouseModel
from src.core.entities.model import CtmcModel, StoppingProblem
from src.core.entities.utility import UtilityFamily, UtilitySpec
from src.core.errors import ErrorCode, StoppingError, ValidationFailure
from src.core.use_cases.grid_solver import default_grid
from src.core.use_cases.house_selling import build_house_model
from src.core.use_cases.model_core import build_problem, validate_model

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1

StateRef = Union[int, str]


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class UtilityConfig(_Section):
    family: UtilityFamily
    gamma: Optional[float] = None
    p: Optional[float] = None
    d: float = 0.0

    def to_spec(self) -> UtilitySpec:
        return UtilitySpec(family=self.family, gamma=self.gamma, p=self.p, d=self.d)

    @model_validator(mode="after")
    def _check(self) -> "UtilityConfig":
        try:
            self.to_spec()
        except ValidationError as e:
            raise ValueError(e.errors()[0]["msg"]) from None
        return self


class GridConfig(_Section):
    t_max: Optional[float] = Field(None, gt=0)
    dt: Optional[float] = Field(None, gt=0)
    refine: bool = False


class SolverConfig(_Section):
    tol: float = Field(1e-9, gt=0)
    max_iter: int = Field(1000, ge=1)
    n: int = Field(10, ge=0)


class ExpConfig(_Section):
    gamma: Optional[float] = Field(None, gt=0)
    tol: float = Field(1e-12, gt=0)
    max_iter: int = Field(100000, ge=1)
    n: Optional[int] = Field(None, ge=0)
    polish: bool = True
    oracle: bool = False
    oracle_cap: int = Field(15, ge=1)


class PoissonConfig(_Section):
    model_config = ConfigDict(extra="forbid", populate_by_name=True)

    lam: float = Field(..., alias="lambda", gt=0)
    i_max: int = Field(..., ge=1)
    g: List[float]


class OlaConfig(_Section):
    t: float = Field(0.0, ge=0)
    method: Literal["analytic", "grid"] = "analytic"
    exclude: List[int] = Field(default_factory=list)
    poisson: Optional[PoissonConfig] = None


class SimulationConfig(_Section):
    i0: StateRef = 0
    n_paths: int = Field(100000, ge=2)
    seed: int = Field(0, ge=0)
    n_jumps: Optional[int] = Field(None, ge=1)
    block_size: int = Field(4096, ge=1)
    sampler: Literal["embedded", "uniformized"] = "embedded"
    rate: Optional[float] = Field(None, gt=0)
    rule: Literal["optimal", "immediate"] = "optimal"
    n_list: List[int] = Field(default_factory=lambda: [1, 2, 4, 8, 16, 32])
    tail_paths: int = Field(20000, ge=2)
    calibration_repeats: int = Field(0, ge=0)
    dump_paths: bool = False


class CompareConfig(_Section):
    u: UtilityConfig
    w: UtilityConfig
    stochastic: bool = True
    exp_stop_sets: bool = True
    i0: StateRef = 0
    n_paths: int = Field(10000, ge=2)
    seed: int = Field(0, ge=0)


class RunConfig(_Section):
    schema_version: Literal[1] = Field(SCHEMA_VERSION, alias="schema")
    states: Optional[List[str]] = None
    Q: Optional[List[List[float]]] = None
    g: Optional[List[float]] = None
    alpha: Optional[List[float]] = None
    offers: Optional[List[float]] = None
    c: float
    utility: Optional[UtilityConfig] = None
    t0: float = Field(0.0, ge=0)
    threads: Optional[int] = Field(None, ge=1)
    grid: GridConfig = Field(default_factory=GridConfig)
    solver: SolverConfig = Field(default_factory=SolverConfig)
    exp: ExpConfig = Field(default_factory=ExpConfig)
    ola: OlaConfig = Field(default_factory=OlaConfig)
    simulation: SimulationConfig = Field(default_factory=SimulationConfig)
    compare: Optional[CompareConfig] = None

    model_config = ConfigDict(extra="forbid", populate_by_name=True)

    @model_validator(mode="after")
    def _model_keys(self) -> "RunConfig":
        if self.alpha is None and (self.Q is None or self.g is None):
            raise ValueError("either Q and g, or alpha (house config), is required")
        if self.alpha is not None and self.Q is not None:
            raise ValueError("give Q and g, or alpha, not both")
        return self

    @property
    def is_house(self) -> bool:
        return self.alpha is not None

    def echo(self) -> Dict[str, Any]:
        return self.model_dump(mode="json", by_alias=True)


@dataclass
class LoadedConfig:
    """A validated config together with the objects built from it."""
    config: RunConfig
    model: CtmcModel
    grid: TimeGrid
    problem: Optional[StoppingProblem] = None
    house: Optional[HouseModel] = None

    @property
    def threads(self) -> int:
        return int(self.config.threads)

    def require_problem(self) -> StoppingProblem:
        if self.problem is None:
            raise ValidationFailure(ErrorCode.SCHEMA_ERROR, "this command needs a utility",
                                    {"pointer": "/utility"})
        return self.problem


def _pointer(loc) -> str:
    parts = [str(p) for p in loc if p != "__root__"]
    return "/" + "/".join(parts)


def _schema_error(exc: ValidationError) -> ValidationFailure:
    errors = exc.errors()
    first = errors[0]
    pointer = _pointer(first["loc"])
    issues = [{"pointer": _pointer(e["loc"]), "message": e["msg"]} for e in errors]
    return ValidationFailure(ErrorCode.SCHEMA_ERROR, f"{pointer}: {first['msg']}",
                             {"pointer": pointer, "errors": issues})


def _default_threads() -> int:
    env = os.getenv("STOPPING_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            logger.warning(f"ignoring STOPPING_THREADS={env!r}")
    return os.cpu_count() or 1


def read_document(source: Union[str, Path, Dict[str, Any]]) -> Dict[str, Any]:
    if isinstance(source, dict):
        return source
    path = Path(source)
    try:
        text = path.read_text()
    except OSError as e:
        raise ValidationFailure(ErrorCode.SCHEMA_ERROR, f"cannot read {path}: {e}", {"pointer": ""})
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ValidationFailure(ErrorCode.SCHEMA_ERROR, f"{path} is not valid JSON: {e}",
                                {"pointer": "", "line": e.lineno, "column": e.colno})
    if not isinstance(doc, dict):
        raise ValidationFailure(ErrorCode.SCHEMA_ERROR, "top level must be a JSON object", {"pointer": ""})
    return doc


def _build_model(cfg: RunConfig):
    try:
        if cfg.is_house:
            house = build_house_model(cfg.alpha, cfg.c, cfg.offers)
            return house.model, house
        return validate_model(cfg.Q, cfg.g, cfg.c, cfg.states), None
    except StoppingError as e:
        if e.code in (ErrorCode.VALIDATION_ERROR, ErrorCode.SCHEMA_ERROR):
            raise
        # the defect code travels as the cause
        raise ValidationFailure(ErrorCode.VALIDATION_ERROR, e.message,
                                {"cause": e.code.value, **e.details}) from e


def _check_state_refs(cfg: RunConfig, model: CtmcModel) -> None:
    refs = [("/simulation/i0", cfg.simulation.i0)]
    if cfg.compare is not None:
        refs.append(("/compare/i0", cfg.compare.i0))
    refs.extend((f"/ola/exclude/{k}", s) for k, s in enumerate(cfg.ola.exclude))
    for pointer, ref in refs:
        try:
            model.index(ref)
        except ValidationFailure as e:
            raise ValidationFailure(ErrorCode.SCHEMA_ERROR, f"{pointer}: {e.message}",
                                    {"pointer": pointer, **e.details}) from e


def parse_config(
source: Union[str, Path, Dict[str, Any]]) -> LoadedConfig:
    """
    Validate a run config (file path or already-decoded dict), build the model
    and problem, and write every resolved default back into the config.
    """
    doc = read_document(source)
    try:
        cfg = RunConfig.model_validate(doc)
    except ValidationError as e:
        raise _schema_error(e) from e

    model, house = _build_model(cfg)
    _check_state_refs(cfg, model)
    problem = build_problem(model, cfg.utility.to_spec(), cfg.t0) if cfg.utility else None

    grid_problem = problem
    if grid_problem is None and cfg.compare is not None:
        grid_problem = build_problem(model, cfg.compare.u.to_spec(), cfg.t0)
    if grid_problem is not None:
        grid = default_grid(grid_problem, cfg.grid.dt, cfg.grid.t_max)
    else:
        grid = TimeGrid.covering(cfg.grid.t_max or 1.0, cfg.grid.dt or 1e-3)

    resolved_exp = cfg.exp
    if resolved_exp.gamma is None and cfg.utility is not None and cfg.utility.family == UtilityFamily.EXPONENTIAL:
        resolved_exp = resolved_exp.model_copy(update={"gamma": cfg.utility.gamma})
    sim = cfg.simulation
    if sim.n_jumps is None:
        sim = sim.model_copy(update={"n_jumps": 50 * model.m})
    if sim.sampler == "uniformized" and sim.rate is None:
        sim = sim.model_copy(update={"rate": float(model.q.max())})
    cfg = cfg.model_copy(update={
        "grid": cfg.grid.model_copy(update={"t_max": grid.t_max, "dt": grid.dt}),
        "exp": resolved_exp,
        "simulation": sim,
        "threads": cfg.threads or _default_threads(),
    })
    logger.info(f"loaded config: m={model.m}, grid t_max={grid.t_max:g} dt={grid.dt:g}, threads={cfg.threads}")
    return LoadedConfig(config=cfg, model=model, grid=grid, problem=problem, house=house)
