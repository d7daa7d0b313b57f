"""
Pydantic models for experiment configuration and reports.
"""
from typing import Dict, List, Literal, Optional, Tuple, Union

from pydantic import BaseModel, Field, field_validator, model_validator


class LawSpec(BaseModel):
    """Jump-rate law: ``pareto`` (a, b), ``discrete`` (atoms) or ``empirical`` (file)."""
    kind: Literal["pareto", "discrete", "empirical"]
    a: Optional[float] = None
    b: Optional[float] = None
    atoms: Optional[List[Tuple[float, float]]] = None
    file: Optional[str] = None

    @model_validator(mode="after")
    def check_fields(self):
        if self.kind == "pareto" and (self.a is None or self.b is None):
            raise ValueError("pareto law needs a and b")
        if self.kind == "discrete" and not self.atoms:
            raise ValueError("discrete law needs a non-empty atoms list")
        if self.kind == "empirical" and not self.file:
            raise ValueError("empirical law needs a file")
        return self


class ProfileBlockSpec(BaseModel):
    y_lo: float
    y_hi: float
    atoms: List[Tuple[float, float]]


class PdeGridSpec(BaseModel):
    y_min: float = 0.02
    y_max: float = 0.95
    n_y: int = 200
    t_min: float = 0.05
    t_max: float = 3.0
    n_t: int = 200


class Tolerances(BaseModel):
    quad: float = 1.0e-10
    root: float = 1.0e-13
    z_threshold: float = 4.0
    ks_alpha: Optional[float] = None
    finite_n_slack: float = 2.0
    pde_h: float = 5.0e-3
    pde_margin: Optional[float] = None
    inject_error: float = 0.0


class OutputSpec(BaseModel):
    dir: str = "results"
    format: Literal["csv", "json"] = "csv"


class ExperimentConfig(BaseModel):
    """Validated experiment description."""
    name: str = "experiment"
    law: LawSpec
    rate_mode: Literal["quantile", "iid"] = "quantile"
    method: Literal["snapshot", "events"] = "snapshot"
    burn_in: Optional[float] = Field(default=None, gt=0.0)
    profile: Union[Literal["fresh"], List[ProfileBlockSpec]] = "fresh"
    n_list: List[int]
    t_grid: List[float]
    x_grid: List[float]
    reps: int = Field(ge=1)
    seed: int = 0
    pde_grid: PdeGridSpec = PdeGridSpec()
    tolerances: Tolerances = Tolerances()
    output: OutputSpec = OutputSpec()

    @field_validator("n_list", "t_grid", "x_grid")
    @classmethod
    def strictly_increasing(cls, values, info):
        if not values:
            raise ValueError(f"{info.field_name} must not be empty")
        if any(b <= a for a, b in zip(values, values[1:])):
            raise ValueError(f"{info.field_name} must be strictly increasing")
        return values

    @field_validator("n_list")
    @classmethod
    def positive_counts(cls, values):
        if any(n < 1 for n in values):
            raise ValueError("n_list entries must be >= 1")
        return values

    @field_validator("t_grid")
    @classmethod
    def non_negative_times(cls, values):
        if values[0] < 0.0:
            raise ValueError("t_grid entries must be >= 0")
        return values

    @field_validator("x_grid")
    @classmethod
    def unit_fractions(cls, values):
        if values[0] <= 0.0 or values[-1] >= 1.0:
            raise ValueError("x_grid entries must lie in (0, 1)")
        return values


class Record(BaseModel):
    """One analytic/empirical comparison."""
    quantity: str
    n: int
    t: Optional[float] = None
    x: Optional[float] = None
    analytic: Union[float, str]
    empirical: Union[float, str]
    std_error: Optional[float] = None
    ks_distance: Optional[float] = Field(default=None, ge=0.0, le=1.0)
    threshold: Optional[float] = None
    passed: bool


class ReportMetadata(BaseModel):
    name: str
    seed: int
    runtime_seconds: float
    version: str
    z_threshold: float
    records: int


class ExperimentReport(BaseModel):
    """Outcome of ``compare``: per-record verdicts and run metadata."""
    metadata: ReportMetadata
    records: List[Record] = []
    scalars: Dict[str, Union[float, str]] = {}

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.records)
