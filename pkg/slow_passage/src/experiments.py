"""Experiment configuration and the runner that writes CSV and JSON artifacts."""

import csv
import json
import logging
import math
from enum import Enum
from pathlib import Path
from typing import Any, Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from slow_passage import __version__
from slow_passage.errors import AdmissibilityError
from slow_passage.models import (
    DkModel,
    ModifiedDkModel,
    SlowFastModel,
    ThreeRegionModel,
    ThreeRegionParams,
    descriptor_adapter,
    dk_eigen_orders,
    dk_fold_points,
)
from slow_passage.pwl.constants import ModelKind
from slow_passage.pwl.flow import integrate
from slow_passage.pwl.manifolds import attracting_manifold
from slow_passage.src import connection as conn
from slow_passage.src import wayinout
from slow_passage.utils.constants import DEFAULT_DELTA, DK_A, DK_B, DK_ETA, PLATEAU_FLATNESS
from slow_passage.utils.general import format_number

logger = logging.getLogger(__name__)

Command = Literal["simulate", "wayinout", "delay-sweep", "connect", "classify", "precision-table"]

TRAJECTORY_COLUMNS = ("t", "x", "y", "z", "region")
WAYINOUT_COLUMNS = ("z_in", "z_out", "t_exit", "residual")
SWEEP_COLUMNS = ("epsilon", "z_d", "lower", "upper", "fit")


class ExperimentConfig(BaseModel):
    """Everything one CLI invocation needs; round-trips through JSON unchanged."""

    model_config = ConfigDict(frozen=True)

    command: Command
    kind: ModelKind
    params: dict[str, float] = {}
    delta: float = Field(default=DEFAULT_DELTA, gt=0.0)
    z_grid: list[float] | None = None
    eps_grid: list[float] | None = None
    precisions: list[float] | None = None
    work_precision: float | None = Field(default=None, gt=0.0)
    budget: float | None = Field(default=None, gt=0.0)
    flatness: float = Field(default=PLATEAU_FLATNESS, gt=0.0)
    t_max: float | None = Field(default=None, gt=0.0)
    dt: float = Field(default=0.1, gt=0.0)
    initial_state: tuple[float, float, float] | None = None
    quiet_min_duration: float = Field(default=50.0, gt=0.0)
    out: str = "."

    @field_validator("z_grid", "eps_grid", "precisions")
    @classmethod
    def _non_empty(cls, value: list[float] | None) -> list[float] | None:
        if value is not None and not value:
            raise ValueError("grids must not be empty")
        return value

    @field_validator("eps_grid", "precisions")
    @classmethod
    def _positive(cls, value: list[float] | None) -> list[float] | None:
        if value is not None and any(not v > 0 for v in value):
            raise ValueError("eps values and precisions must be positive")
        return value

    @model_validator(mode="after")
    def _required(self) -> "ExperimentConfig":
        needs = {"wayinout": self.z_grid, "delay-sweep": self.eps_grid, "precision-table": self.precisions}
        if self.command in needs and needs[self.command] is None:
            raise ValueError(f"{self.command} needs its grid")
        return self

    def require(self, *names: str) -> list[float]:
        missing = [name for name in names if name not in self.params]
        if missing:
            raise AdmissibilityError(f"{self.command} on {self.kind.value} needs {', '.join(missing)}")
        return [self.params[name] for name in names]

    def model(self) -> SlowFastModel:
        """Model descriptor built from the parameters; three-region slopes are solved when omitted."""
        values = dict(self.params)
        if self.kind is ModelKind.THREE_REGION and not {"m", "k"} <= values.keys():
            return ThreeRegionModel.from_boundaries(*self.require("rho", "mu", "epsilon"))
        return descriptor_adapter.validate_python({"kind": self.kind.value, **values})


def _plain(value: Any) -> Any:
    # JSON-ready copy: enums by value, non-finite floats as null
    if isinstance(value, BaseModel):
        return _plain(value.model_dump())
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, dict):
        return {str(key): _plain(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(item) for item in value]
    if isinstance(value, np.ndarray):
        return _plain(value.tolist())
    if isinstance(value, (np.floating, float)):
        return float(value) if math.isfinite(value) else None
    if isinstance(value, np.integer):
        return int(value)
    return value


def write_json(path: Path, data: dict[str, Any]) -> Path:
    path.write_text(json.dumps(_plain(data), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def write_csv(path: Path, columns: tuple[str, ...], rows: list[tuple[Any, ...]]) -> Path:
    with path.open("w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([item if isinstance(item, str) else format_number(item) for item in row])
    return path


def _report(config: ExperimentConfig, **content: Any) -> dict[str, Any]:
    return {"version": __version__, "command": config.command, "kind": config.kind, "params": config.params, **content}


def _simulate(config: ExperimentConfig, out: Path) -> list[Path]:
    system = config.model().build()
    start = config.initial_state or tuple(attracting_manifold(system).base)
    t_max = config.t_max or 3.0 / system.epsilon
    trajectory = integrate(system, start, t_max, dt_sample=config.dt)
    samples = trajectory.samples if trajectory.samples is not None else np.empty((0, 4))
    rows = [(*row, region) for row, region in zip(samples.tolist(), trajectory.sample_regions, strict=True)]
    return [
        write_csv(out / "trajectory.csv", TRAJECTORY_COLUMNS, rows),
        write_json(
            out / "report.json",
            _report(
                config,
                initial_state=start,
                t_max=t_max,
                events=trajectory.events,
                terminated_by=trajectory.terminated_by,
                burst_alternations=wayinout.burst_alternations(trajectory, config.quiet_min_duration),
            ),
        ),
    ]


def _wayinout(config: ExperimentConfig, out: Path) -> list[Path]:
    system = config.model().build()
    curve = wayinout.way_in_way_out(system, config.delta, config.z_grid or [], config.work_precision, config.budget)
    rows = [(p.z_in, p.z_out, p.t_exit, p.residual) for p in curve.points]
    report: dict[str, Any] = {"dropped": curve.dropped, "references": curve.references}
    if len(curve.points) >= 10:
        report["asymptote"] = wayinout.asymptote_fit(curve, config.flatness)
        if system.kind is ModelKind.THREE_REGION:
            report["seeded_offset"] = wayinout.seeded_offset(system)
    if system.kind is ModelKind.BUFFER:
        report["buffer"] = wayinout.buffer_levels(system)
    return [
        write_csv(out / "wayinout.csv", WAYINOUT_COLUMNS, rows),
        write_json(out / "report.json", _report(config, delta=config.delta, **report)),
    ]


def _delay_sweep(config: ExperimentConfig, out: Path) -> list[Path]:
    sweep = wayinout.delay_vs_epsilon(config.model(), config.eps_grid or [], config.delta)
    rows = [(r.epsilon, r.z_d, r.lower, r.upper, r.fit) for r in sweep.rows]
    return [
        write_csv(out / "delay_sweep.csv", SWEEP_COLUMNS, rows),
        write_json(
            out / "report.json",
            _report(config, u1=sweep.u1, u2=sweep.u2, relative_residual=sweep.relative_residual),
        ),
    ]


def _connect(config: ExperimentConfig, out: Path) -> list[Path]:
    p = config.params
    result: dict[str, Any]
    match config.kind:
        case ModelKind.THREE_REGION:
            rho, mu, eps = config.require("rho", "mu", "epsilon")
            solution = conn.solve_three_region(rho, mu, eps)
            result = {"solution": solution, "sign_relations": conn.sign_relations(rho, mu, eps)}
        case ModelKind.BUFFER:
            a, eps = config.require("a", "epsilon")
            result = {"solution": conn.solve_buffer_connection(a, eps), "seed_jacobian": conn.buffer_seed_jacobian(a)}
        case ModelKind.DK:
            model = config.model()
            assert isinstance(model, DkModel)
            result = {"solution": conn.dk_connection_test(model)}
        case ModelKind.MODIFIED_DK:
            s, rho, eps = config.require("s", "rho", "epsilon")
            shot = conn.modified_dk_shoot(
                eps,
                p.get("eta", DK_ETA),
                p.get("I", 0.0),
                guess=(s, rho),
                a=p.get("a", DK_A),
                b=p.get("b", DK_B),
                eta1=p.get("eta1"),
            )
            result = {"solution": shot}
        case _:
            raise AdmissibilityError(f"no connection problem for {config.kind.value} systems")
    return [write_json(out / "connection.json", _report(config, **result))]


def _classify(config: ExperimentConfig, out: Path) -> list[Path]:
    model = config.model()
    result: dict[str, Any]
    if config.kind is ModelKind.TWO_REGION:
        result = {"hopf": conn.classify_two_region(*config.require("m", "k"))}
    elif isinstance(model, ThreeRegionParams):
        result = {"hopf": conn.classify_hopf_like(model)}
    elif isinstance(model, DkModel):
        result = {"fold_points": dk_fold_points(model), "eigen_orders": dk_eigen_orders(model)}
        if not isinstance(model, ModifiedDkModel):
            result["equilibrium"] = model.equilibrium
    else:
        raise AdmissibilityError(f"no classification for {config.kind.value} systems")
    return [write_json(out / "report.json", _report(config, **result))]


def _precision_table(config: ExperimentConfig, out: Path) -> list[Path]:
    system = config.model().build()
    rows = wayinout.precision_diagnosis(system, config.precisions or [], config.delta, config.z_grid)
    return [write_json(out / "report.json", _report(config, precision_table=rows))]


RUNNERS = {
    "simulate": _simulate,
    "wayinout": _wayinout,
    "delay-sweep": _delay_sweep,
    "connect": _connect,
    "classify": _classify,
    "precision-table": _precision_table,
}


def run(config: ExperimentConfig) -> list[Path]:
    """Run one experiment and return the artifacts it wrote.

    Identical configurations produce byte-identical files.
    """
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    logger.info(f"Running {config.command} on a {config.kind.value} system into {out}")
    return RUNNERS[config.command](config, out)
