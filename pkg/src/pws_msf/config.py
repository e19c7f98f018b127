"""Run configuration: a single JSON document validated with pydantic.

Precedence, lowest first: built-in defaults, the JSON file, command-line flags.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Optional, Union

import numpy as np
from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    PositiveFloat,
    PositiveInt,
    ValidationError,
    model_validator,
)

from .agent import AgentModel, get_model
from .errors import ConfigError
from .network import NetworkTopology, build_topology, edges_to_adjacency

GALVANETTO_E = [[0.0, 0.0], [1.0, 0.0]]


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ModelSpec(_Strict):
    name: str
    params: dict[str, float] = Field(default_factory=dict)


class TopologySpec(_Strict):
    adjacency: Optional[list[list[float]]] = None
    edges: Optional[list[tuple[int, int]]] = None
    n_nodes: Optional[PositiveInt] = None
    file: Optional[str] = None

    @model_validator(mode="after")
    def _one_source(self):
        given = [k for k in ("adjacency", "edges", "file") if getattr(self, k) is not None]
        if len(given) != 1:
            raise ValueError("topology needs exactly one of 'adjacency', 'edges', 'file'")
        return self


class SigmaRange(_Strict):
    min: float = Field(ge=0)
    max: float = Field(ge=0)
    steps: PositiveInt

    @model_validator(mode="after")
    def _ordered(self):
        if self.max < self.min:
            raise ValueError("sigma.max must not be below sigma.min")
        return self


class Tolerances(_Strict):
    orbit: PositiveFloat = 1e-10
    match: PositiveFloat = 1e-8
    b_identity: PositiveFloat = 1e-12
    saltation: PositiveFloat = 1e-12


class OrbitOptions(_Strict):
    x0: list[float] = Field(default_factory=lambda: [0.0, 0.0])
    max_laps: PositiveInt = 50
    max_time: PositiveFloat = 1e4
    skeleton: Optional[str] = None


class SimulateOptions(_Strict):
    periods: PositiveFloat = 50.0
    perturbation: float = Field(default=1e-2, ge=0)
    step: Optional[PositiveFloat] = None
    sample_every: PositiveInt = 10


class ValidateOptions(_Strict):
    check_b_identity: Optional[bool] = None
    # test hook: perturbs every saltation matrix so the checks must fail
    corrupt_saltation: bool = False


class RunConfig(_Strict):
    model: ModelSpec
    topology: TopologySpec = Field(default_factory=lambda: TopologySpec(adjacency=[[0, 1], [1, 0]]))
    E: list[list[float]] = Field(default_factory=lambda: [r[:] for r in GALVANETTO_E])
    sigma: Union[float, list[float], SigmaRange] = 0.0
    step: PositiveFloat = 1e-3
    tolerances: Tolerances = Field(default_factory=Tolerances)
    out: str = "out"
    orbit: OrbitOptions = Field(default_factory=OrbitOptions)
    simulate: SimulateOptions = Field(default_factory=SimulateOptions)
    validate_: ValidateOptions = Field(default_factory=ValidateOptions, alias="validate")

    model_config = ConfigDict(extra="forbid", populate_by_name=True)

    @model_validator(mode="after")
    def _sigma_nonnegative(self):
        vals = self.sigma if isinstance(self.sigma, list) else [self.sigma]
        if any(isinstance(v, (int, float)) and v < 0 for v in vals):
            raise ValueError("sigma must be non-negative")
        if isinstance(self.sigma, list) and not self.sigma:
            raise ValueError("sigma list must not be empty")
        return self

    # -- derived objects ----------------------------------------------------

    def sigma_grid(self) -> list[float]:
        s = self.sigma
        if isinstance(s, SigmaRange):
            if s.steps == 1:
                return [float(s.min)]
            return [float(v) for v in np.linspace(s.min, s.max, s.steps)]
        if isinstance(s, list):
            return [float(v) for v in s]
        return [float(s)]

    def build_model(self) -> AgentModel:
        try:
            return get_model(self.model.name, **self.model.params)
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"model: {exc}") from None

    def adjacency(self, base_dir: Path | None = None) -> np.ndarray:
        t = self.topology
        if t.adjacency is not None:
            return np.array(t.adjacency, dtype=float)
        if t.edges is not None:
            return edges_to_adjacency(t.edges, t.n_nodes)
        path = Path(t.file)
        if not path.is_absolute() and base_dir is not None:
            path = base_dir / path
        try:
            data = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"topology.file: {exc}") from None
        if isinstance(data, dict):
            if "adjacency" in data:
                return np.array(data["adjacency"], dtype=float)
            if "edges" in data:
                return edges_to_adjacency(data["edges"], data.get("n_nodes"))
            raise ConfigError("topology.file: expected 'adjacency' or 'edges'")
        return np.array(data, dtype=float)

    def build_topology(self, sigma: float = 0.0, base_dir: Path | None = None) -> NetworkTopology:
        return build_topology(self.adjacency(base_dir), self.E, sigma)

    def canonical_json(self) -> str:
        return json.dumps(self.model_dump(mode="json", by_alias=True), sort_keys=True,
                          separators=(",", ":"))

    def sha256(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()


def load_config(path: str | Path | None, overrides: dict | None = None) -> RunConfig:
    """Read ``path`` (if any), apply ``overrides`` and validate.

    Raises :class:`ConfigError` with the offending field names on failure.
    """
    data: dict = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
    for key, value in (overrides or {}).items():
        data[key] = value
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        msg = "; ".join(f"{'.'.join(str(p) for p in e['loc']) or '<root>'}: {e['msg']}"
                        for e in exc.errors())
        raise ConfigError(f"invalid config: {msg}") from None
