"""
JSON run documents: parsing, defaults and validation.

A document has the sections model, bath, decomposition, hierarchy,
integrator, stochastic (optional) and output. Validation errors name the
offending field with its dotted path, e.g. ``hierarchy.depth``.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional

from bath import DEFAULT_MATSUBARA_TERMS
from operators import DEFAULT_INITIAL_STATE, MODEL_PARAMS, OBSERVABLE_NAMES
from stochastic import CONVOLUTION_METHODS

_LOGGER = logging.getLogger(__name__)

# ======================== Defaults =========================
DEFAULT_DT = 1e-3
DEFAULT_RECORD_STRIDE = 10
DEFAULT_TOL = 1e-4
DEFAULT_OBSERVABLES = ["sigma_z"]
DEFAULT_STOCHASTIC_DT = 0.01
DEFAULT_STOCHASTIC_STRIDE = 10
DEFAULT_SEED = 0
BATH_PARAMS = {"ohmic_drude": ("chi", "omega_c"), "lorentz": ("gamma", "lambda", "omega_0")}
INITIAL_STATES = ("excited", "ground", "plus", "mixed")
# ===========================================================


class ConfigError(ValueError):
    """Run document could not be used."""


class ParseError(ConfigError):
    def __init__(self, message: str, line: int = 0, column: int = 0):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column


class ValidationError(ConfigError):
    def __init__(self, field_name: str, message: str = "invalid value"):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass
class ModelSpec:
    kind: str
    params: Dict[str, float]
    initial_state: str


@dataclass
class BathSpec:
    kind: str
    params: Dict[str, float]
    beta: float


@dataclass
class HierarchySpec:
    depth: Optional[int] = None
    depth_schedule: Optional[List[int]] = None
    tol: float = DEFAULT_TOL


@dataclass
class IntegratorSpec:
    t_final: float
    dt: float = DEFAULT_DT
    record_stride: int = DEFAULT_RECORD_STRIDE


@dataclass
class StochasticSpec:
    n_traj: int
    seed: int = DEFAULT_SEED
    dt: float = DEFAULT_STOCHASTIC_DT
    record_stride: int = DEFAULT_STOCHASTIC_STRIDE
    convolution: str = "direct"


@dataclass
class OutputSpec:
    path: Optional[str] = None
    observables: List[str] = field(default_factory=lambda: list(DEFAULT_OBSERVABLES))


@dataclass
class RunSpec:
    model: ModelSpec
    bath: BathSpec
    hierarchy: HierarchySpec
    integrator: IntegratorSpec
    matsubara_terms: int = DEFAULT_MATSUBARA_TERMS
    stochastic: Optional[StochasticSpec] = None
    output: OutputSpec = field(default_factory=OutputSpec)

    def to_dict(self) -> Dict[str, Any]:
        """Canonical document form; parse_config(json.dumps(spec.to_dict())) round-trips."""
        doc: Dict[str, Any] = {
            "model": {
                "kind": self.model.kind,
                "params": dict(self.model.params),
                "initial_state": self.model.initial_state,
            },
            "bath": {
                "kind": self.bath.kind,
                "params": dict(self.bath.params),
                "beta": "inf" if math.isinf(self.bath.beta) else self.bath.beta,
            },
            "decomposition": {"matsubara_terms": self.matsubara_terms},
            "hierarchy": {"tol": self.hierarchy.tol},
            "integrator": {
                "dt": self.integrator.dt,
                "t_final": self.integrator.t_final,
                "record_stride": self.integrator.record_stride,
            },
            "output": {"path": self.output.path, "observables": list(self.output.observables)},
        }
        if self.hierarchy.depth is not None:
            doc["hierarchy"]["depth"] = self.hierarchy.depth
        else:
            doc["hierarchy"]["depth_schedule"] = list(self.hierarchy.depth_schedule or [])
        if self.stochastic is not None:
            doc["stochastic"] = {
                "n_traj": self.stochastic.n_traj,
                "seed": self.stochastic.seed,
                "dt": self.stochastic.dt,
                "record_stride": self.stochastic.record_stride,
                "convolution": self.stochastic.convolution,
            }
        return doc


# ----------------------------------------------------------------------------
# Field readers
# ----------------------------------------------------------------------------


def _section(doc: Dict[str, Any], name: str, required: bool = True) -> Dict[str, Any]:
    value = doc.get(name)
    if value is None:
        if required:
            raise ValidationError(name, "section is required")
        return {}
    if not isinstance(value, dict):
        raise ValidationError(name, "must be an object")
    return value


def _number(section: Dict[str, Any], path: str, key: str, default: Optional[float] = None) -> float:
    value = section.get(key, default)
    if value is None:
        raise ValidationError(f"{path}.{key}", "is required")
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValidationError(f"{path}.{key}", f"must be a number, got {value!r}")
    if not math.isfinite(value):
        raise ValidationError(f"{path}.{key}", "must be finite")
    return float(value)


def _positive(section: Dict[str, Any], path: str, key: str, default: Optional[float] = None) -> float:
    value = _number(section, path, key, default)
    if value <= 0:
        raise ValidationError(f"{path}.{key}", f"must be positive, got {value}")
    return value


def _integer(section: Dict[str, Any], path: str, key: str, default: Optional[int] = None, minimum: int = 0) -> int:
    value = section.get(key, default)
    if value is None:
        raise ValidationError(f"{path}.{key}", "is required")
    if isinstance(value, bool) or not isinstance(value, int):
        raise ValidationError(f"{path}.{key}", f"must be an integer, got {value!r}")
    if value < minimum:
        raise ValidationError(f"{path}.{key}", f"must be >= {minimum}, got {value}")
    return value


def _string(section: Dict[str, Any], path: str, key: str, default: Optional[str] = None) -> str:
    value = section.get(key, default)
    if value is None:
        raise ValidationError(f"{path}.{key}", "is required")
    if not isinstance(value, str):
        raise ValidationError(f"{path}.{key}", f"must be a string, got {value!r}")
    return value


def _params(section: Dict[str, Any], path: str, required: tuple) -> Dict[str, float]:
    raw = section.get("params", {})
    if not isinstance(raw, dict):
        raise ValidationError(f"{path}.params", "must be an object")
    params = {}
    for key in required:
        params[key] = _number(raw, f"{path}.params", key)
    for key, value in raw.items():
        if key not in params:
            params[key] = _number(raw, f"{path}.params", key)
    return params


def _beta(section: Dict[str, Any]) -> float:
    value = section.get("beta")
    if value is None:
        raise ValidationError("bath.beta", "is required (a positive number or \"inf\")")
    if isinstance(value, str):
        if value.strip().lower() in ("inf", "infinity"):
            return math.inf
        raise ValidationError("bath.beta", f"must be a positive number or \"inf\", got {value!r}")
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not value > 0:
        raise ValidationError("bath.beta", f"must be a positive number or \"inf\", got {value!r}")
    return float(value)


# ----------------------------------------------------------------------------
# Document parsing
# ----------------------------------------------------------------------------


def _parse_model(doc: Dict[str, Any]) -> ModelSpec:
    section = _section(doc, "model")
    kind = _string(section, "model", "kind")
    if kind not in MODEL_PARAMS:
        raise ValidationError("model.kind", f"unknown model {kind!r}; expected one of {sorted(MODEL_PARAMS)}")
    params = _params(section, "model", MODEL_PARAMS[kind])
    state = _string(section, "model", "initial_state", DEFAULT_INITIAL_STATE[kind])
    if state not in INITIAL_STATES:
        raise ValidationError("model.initial_state", f"expected one of {INITIAL_STATES}, got {state!r}")
    return ModelSpec(kind=kind, params=params, initial_state=state)


def _parse_bath(doc: Dict[str, Any]) -> BathSpec:
    section = _section(doc, "bath")
    kind = _string(section, "bath", "kind")
    if kind not in BATH_PARAMS:
        raise ValidationError("bath.kind", f"unknown spectral density {kind!r}; expected one of {sorted(BATH_PARAMS)}")
    params = _params(section, "bath", BATH_PARAMS[kind])
    for key in BATH_PARAMS[kind]:
        if params[key] <= 0:
            raise ValidationError(f"bath.params.{key}", f"must be positive, got {params[key]}")
    return BathSpec(kind=kind, params=params, beta=_beta(section))


def _parse_hierarchy(doc: Dict[str, Any]) -> HierarchySpec:
    section = _section(doc, "hierarchy")
    has_depth = "depth" in section
    has_schedule = "depth_schedule" in section
    if has_depth == has_schedule:
        raise ValidationError("hierarchy.depth", "exactly one of depth / depth_schedule must be given")
    tol = _positive(section, "hierarchy", "tol", DEFAULT_TOL)
    if has_depth:
        return HierarchySpec(depth=_integer(section, "hierarchy", "depth"), tol=tol)

    schedule = section["depth_schedule"]
    if not isinstance(schedule, list) or len(schedule) < 2:
        raise ValidationError("hierarchy.depth_schedule", "must be a list of at least two depths")
    for k, depth in enumerate(schedule):
        if isinstance(depth, bool) or not isinstance(depth, int) or depth < 0:
            raise ValidationError(f"hierarchy.depth_schedule[{k}]", f"must be a non-negative integer, got {depth!r}")
    if any(b <= a for a, b in zip(schedule, schedule[1:])):
        raise ValidationError("hierarchy.depth_schedule", "must be strictly increasing")
    return HierarchySpec(depth_schedule=list(schedule), tol=tol)


def _parse_integrator(doc: Dict[str, Any]) -> IntegratorSpec:
    section = _section(doc, "integrator")
    t_final = _number(section, "integrator", "t_final")
    if t_final < 0:
        raise ValidationError("integrator.t_final", f"must be non-negative, got {t_final}")
    return IntegratorSpec(
        t_final=t_final,
        dt=_positive(section, "integrator", "dt", DEFAULT_DT),
        record_stride=_integer(section, "integrator", "record_stride", DEFAULT_RECORD_STRIDE, minimum=1),
    )


def _parse_stochastic(doc: Dict[str, Any]) -> Optional[StochasticSpec]:
    section = _section(doc, "stochastic", required=False)
    if not section:
        return None
    n_traj = _integer(section, "stochastic", "n_traj", minimum=0)
    if n_traj < 2:
        raise ValidationError("stochastic.n_traj", f"must be >= 2, got {n_traj}")
    convolution = _string(section, "stochastic", "convolution", "direct")
    if convolution not in CONVOLUTION_METHODS:
        raise ValidationError("stochastic.convolution", f"expected one of {CONVOLUTION_METHODS}, got {convolution!r}")
    return StochasticSpec(
        n_traj=n_traj,
        seed=_integer(section, "stochastic", "seed", DEFAULT_SEED),
        dt=_positive(section, "stochastic", "dt", DEFAULT_STOCHASTIC_DT),
        record_stride=_integer(section, "stochastic", "record_stride", DEFAULT_STOCHASTIC_STRIDE, minimum=1),
        convolution=convolution,
    )


def _parse_output(doc: Dict[str, Any]) -> OutputSpec:
    section = _section(doc, "output", required=False)
    path = section.get("path")
    if path is not None and not isinstance(path, str):
        raise ValidationError("output.path", "must be a string")
    observables = section.get("observables", list(DEFAULT_OBSERVABLES))
    if not isinstance(observables, list) or not observables:
        raise ValidationError("output.observables", "must be a non-empty list")
    for k, name in enumerate(observables):
        if name not in OBSERVABLE_NAMES:
            raise ValidationError(f"output.observables[{k}]", f"unknown observable {name!r}")
    return OutputSpec(path=path, observables=list(observables))


def parse_config(text: str) -> RunSpec:
    """
    Parse and validate a JSON run document.

    Raises:
        ParseError: malformed JSON (with line and column)
        ValidationError: a field is missing or invalid (with its dotted path)
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, exc.lineno, exc.colno) from exc
    if not isinstance(doc, dict):
        raise ParseError("top level must be an object", 1, 1)

    decomposition = _section(doc, "decomposition", required=False)
    spec = RunSpec(
        model=_parse_model(doc),
        bath=_parse_bath(doc),
        hierarchy=_parse_hierarchy(doc),
        integrator=_parse_integrator(doc),
        matsubara_terms=_integer(decomposition, "decomposition", "matsubara_terms", DEFAULT_MATSUBARA_TERMS),
        stochastic=_parse_stochastic(doc),
        output=_parse_output(doc),
    )
    _LOGGER.debug("Parsed run spec: %s", spec)
    return spec


def load_config(path: Path) -> RunSpec:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    return parse_config(text)
