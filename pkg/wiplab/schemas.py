from datetime import datetime
from enum import Enum
from typing import Any, Dict, List, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator

from wiplab.fastslow import Diffusion, Drift
from wiplab.maps import MapKind, MapModel
from wiplab.observables import ObservableSpec, center
from wiplab.rng import SEED_MAX


class ExperimentKind(str, Enum):
    CLT = "clt"
    WIP_RATE = "wip-rate"
    DECOMP_CHECK = "decomp-check"
    VNK_SCALING = "vnk-scaling"
    FASTSLOW_RATE = "fastslow-rate"
    PROKHOROV_SELFTEST = "prokhorov-selftest"
    RATE_TABLE = "rate-table"
    COUPLING = "coupling"
    RETURN_TAIL = "return-tail"


def _listify(value):
    if value is None or isinstance(value, (list, tuple)):
        return value
    return [value]


class Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class MapConfig(Section):
    kind: MapKind = MapKind.DOUBLING
    gamma: Optional[float] = None

    def to_model(self) -> MapModel:
        return MapModel(self.kind, self.gamma)


class ObservableConfig(Section):
    kind: str = "x"
    theta: Optional[float] = None
    coeffs: List[float] = Field(default_factory=list)

    @field_validator("coeffs", mode="before")
    @classmethod
    def wrap_scalar(cls, value):
        return _listify(value)

    def to_spec(self, map: Optional[MapModel] = None) -> ObservableSpec:
        """The observable, centered under ``map`` when one is given."""
        spec = ObservableSpec(self.kind, self.theta, tuple(self.coeffs))
        return center(spec, map) if map is not None else spec


class ScalesConfig(Section):
    n: List[int] = Field(default_factory=list)
    eps: List[float] = Field(default_factory=list)
    gamma: List[float] = Field(default_factory=list)

    @field_validator("n", "eps", "gamma", mode="before")
    @classmethod
    def wrap_scalar(cls, value):
        return _listify(value)


class EnsembleConfig(Section):
    size: int = 4096
    projection_dim: int = 8
    chunk: int = 64


class TransferConfig(Section):
    grid: Optional[int] = None
    terms: Optional[int] = None
    correlation_terms: int = 40
    samples: int = 100_000
    batch_length: int = 2**12


class AnalysisConfig(Section):
    q: float = 2.0
    starts: int = 64
    include_wip: bool = False
    tail_samples: int = 10**6
    inducing_pairs: int = 1000
    kubilius_paths: int = 256


class SelftestConfig(Section):
    instances: int = 500
    max_atoms: int = 6
    dims: List[int] = Field(default_factory=lambda: [1, 2, 4])

    @field_validator("dims", mode="before")
    @classmethod
    def wrap_scalar(cls, value):
        return _listify(value)


class DriftConfig(Section):
    mean: str = "zero"
    kappa: float = 1.0
    coupling: str = "zero"
    c0: float = 1.0
    w: Optional[ObservableConfig] = None
    perturbation: str = "zero"
    e0: float = 1.0

    def to_drift(self, map: Optional[MapModel] = None) -> Drift:
        w = self.w.to_spec(map) if self.w is not None else None
        return Drift(self.mean, self.kappa, self.coupling, self.c0, w, self.perturbation, self.e0)


class DiffusionConfig(Section):
    kind: str = "one"
    beta0: float = 1.0
    beta1: float = 0.0

    def to_diffusion(self) -> Diffusion:
        return Diffusion(self.kind, self.beta0, self.beta1)


class DeclaredConstants(Section):
    """Bounds the configuration claims for its drift on |x| <= x_bound."""

    drift_bound: Optional[float] = None
    lipschitz: Optional[float] = None
    perturbation: Optional[float] = None


class FastSlowSettings(Section):
    xi: float = 0.0
    drift: DriftConfig = Field(default_factory=DriftConfig)
    diffusion: DiffusionConfig = Field(default_factory=DiffusionConfig)
    x_bound: float = 10.0
    max_steps: int = 2**22
    declared: DeclaredConstants = Field(default_factory=DeclaredConstants)


class ExperimentConfig(Section):
    experiment: ExperimentKind
    seed: int = Field(default=0, ge=0, le=SEED_MAX)
    output: str = "out"
    map: MapConfig = Field(default_factory=MapConfig)
    observable: ObservableConfig = Field(default_factory=ObservableConfig)
    scales: ScalesConfig = Field(default_factory=ScalesConfig)
    ensemble: EnsembleConfig = Field(default_factory=EnsembleConfig)
    transfer: TransferConfig = Field(default_factory=TransferConfig)
    analysis: AnalysisConfig = Field(default_factory=AnalysisConfig)
    selftest: SelftestConfig = Field(default_factory=SelftestConfig)
    fastslow: FastSlowSettings = Field(default_factory=FastSlowSettings)


class RunManifest(BaseModel):
    experiment: str
    seed: int
    config: Dict[str, Any]
    version: str
    started_at: datetime
    wall_clock: float
    rows: Dict[str, int]
    digest: str
    output: str


class RunRead(BaseModel):
    model_config = ConfigDict(from_attributes=True)

    id: int
    experiment: str
    seed: str
    version: str
    wall_clock: float
    digest: str
    output: str
    created_at: datetime


class PaginatedRuns(BaseModel):
    items: List[RunRead]
    total: int
    page: int
    per_page: int


class WipRateRead(BaseModel):
    # None stands for p = inf
    p: Optional[float]
    r: float
    r1: float
    lambda2: float
    coupling: float


class HomogRateRead(BaseModel):
    p: Optional[float]
    exponent: float
    log_power: Optional[float]


class LsvRateRead(BaseModel):
    gamma: float
    wip: float
    homog: float
    log_free: bool
    log_power: float


class ValidationResult(BaseModel):
    violations: List[str]
