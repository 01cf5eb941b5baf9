"""Declarative experiment configuration.

A single JSON document describes an end-to-end experiment: the grid,
coefficient expressions, modality, boundary traces, noise, solver
policy, and the study to run.  The document is validated against the
schema shipped with the package before any compute starts, with unknown
keys rejected, so a typo fails fast instead of silently running a
different experiment.

The builders here turn validated sections into library objects.  They
are deliberately dumb: every piece of physics lives in the modules they
call into.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources

import jsonschema

from .admissibility import Thresholds
from .errors import ConfigurationError
from .forward import CoefficientSet, SolverSettings
from .grids import Grid, ScalarField, SymTensorField, VectorField, sym_size
from .phantoms import materialize_scalar, materialize_sym, materialize_vector, parse
from .synthesis import (
    BoundaryTrace,
    Modality,
    NoiseSpec,
    compatible_traces,
    default_traces,
)

__all__ = [
    "ExperimentConfig",
    "load_config",
    "parse_config",
    "validate_document",
]

_SCHEMA = None


def _schema() -> dict:
    global _SCHEMA
    if _SCHEMA is None:
        text = resources.files("hiplab").joinpath("config_schema.json").read_text()
        _SCHEMA = json.loads(text)
    return _SCHEMA


def validate_document(doc: dict) -> None:
    """Check a raw configuration document against the shipped schema.

    Schema violations and unknown keys raise a configuration error that
    names the offending path.  Cross-field requirements the schema
    cannot express (matching grid arity, modality parameters, study
    parameters) are checked here as well.
    """
    validator = jsonschema.Draft7Validator(_schema())
    problems = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if problems:
        first = problems[0]
        where = "/".join(str(p) for p in first.absolute_path) or "<root>"
        raise ConfigurationError(f"config schema: {first.message} (at {where})", stage="config")

    grid = doc["grid"]
    if len(grid["bounds"]) != len(grid["shape"]):
        raise ConfigurationError(
            f"grid bounds describe {len(grid['bounds'])} axes but shape has "
            f"{len(grid['shape'])}",
            stage="config",
        )
    for ax, (lo, hi) in enumerate(grid["bounds"]):
        if not hi > lo:
            raise ConfigurationError(
                f"grid axis {ax} has degenerate interval [{lo}, {hi}]", stage="config"
            )
    dim = len(grid["shape"])

    coeffs = doc["coefficients"]
    if isinstance(coeffs["a"], list) and len(coeffs["a"]) != sym_size(dim):
        raise ConfigurationError(
            f"matrix diffusion needs {sym_size(dim)} component expressions "
            f"in {dim}d, got {len(coeffs['a'])}",
            stage="config",
        )
    if "b" in coeffs and len(coeffs["b"]) != dim:
        raise ConfigurationError(
            f"drift needs {dim} component expressions, got {len(coeffs['b'])}",
            stage="config",
        )
    for src in _expressions_of(doc):
        parse(src)

    modality = doc["modality"]
    name = modality["name"]
    if name in ("qpat", "qtat") and "gamma" not in modality:
        raise ConfigurationError(f"modality {name} needs a gamma expression", stage="config")
    if name == "generic" and "weight" not in modality:
        raise ConfigurationError("generic modality needs a weight expression", stage="config")
    if name != "generic" and "weight" in modality:
        raise ConfigurationError(f"modality {name} does not take a weight", stage="config")
    if name in ("elastography", "generic") and "gamma" in modality:
        raise ConfigurationError(f"modality {name} does not take a gamma", stage="config")

    traces = doc.get("traces", "default")
    if isinstance(traces, dict) and "count" in traces and "expressions" in traces:
        raise ConfigurationError(
            "traces take either a count or explicit expressions, not both",
            stage="config",
        )

    study = doc["study"]
    kind = study["type"]
    if kind == "convergence":
        levels = study.get("levels")
        if levels is None or len(levels) < 3:
            raise ConfigurationError(
                "a convergence study needs at least 3 refinement levels",
                stage="config",
            )
        if sorted(set(levels)) != list(levels):
            raise ConfigurationError(
                "refinement levels must be strictly increasing", stage="config"
            )
    if kind == "noise-sweep":
        amps = study.get("amplitudes")
        if amps is None or len(amps) < 3 or 0.0 not in amps:
            raise ConfigurationError(
                "a noise sweep needs at least 3 amplitudes including 0",
                stage="config",
            )
        if "noise" not in doc:
            raise ConfigurationError(
                "a noise sweep needs a noise section for the base spec",
                stage="config",
            )
    if kind != "convergence" and "levels" in study:
        raise ConfigurationError("levels only apply to convergence studies", stage="config")
    if kind != "noise-sweep" and (
        "amplitudes" in study or "correlation_length" in study
    ):
        raise ConfigurationError(
            "amplitudes and correlation_length only apply to noise sweeps",
            stage="config",
        )


def _expressions_of(doc: dict) -> list[str]:
    out = []
    coeffs = doc["coefficients"]
    a = coeffs["a"]
    out.extend([a] if isinstance(a, str) else a)
    out.extend(coeffs.get("b", []))
    if "c" in coeffs:
        out.append(coeffs["c"])
    for key in ("gamma", "weight"):
        if key in doc["modality"]:
            out.append(doc["modality"][key])
    traces = doc.get("traces", "default")
    if isinstance(traces, dict):
        out.extend(traces.get("expressions", []))
    return out


@dataclass(frozen=True)
class ExperimentConfig:
    """A validated configuration document plus builders for its parts.

    The raw document is kept verbatim so reports can echo exactly what
    was asked for.  ``grid_for`` takes an optional per-axis vertex count
    so convergence studies can rebuild the same box at each level.
    """

    doc: dict

    @property
    def seed(self) -> int:
        return int(self.doc.get("seed", 0))

    @property
    def dim(self) -> int:
        return len(self.doc["grid"]["shape"])

    @property
    def study_type(self) -> str:
        return self.doc["study"]["type"]

    @property
    def output(self) -> str | None:
        return self.doc.get("output")

    def grid_for(self, points: int | None = None) -> Grid:
        spec = self.doc["grid"]
        bounds = tuple(tuple(float(v) for v in b) for b in spec["bounds"])
        if points is None:
            shape = tuple(int(n) for n in spec["shape"])
        else:
            shape = (int(points),) * len(bounds)
        return Grid(bounds=bounds, shape=shape)

    def coefficients(self, grid: Grid) -> CoefficientSet:
        spec = self.doc["coefficients"]
        a_spec = spec["a"]
        if isinstance(a_spec, str):
            scale = materialize_scalar(a_spec, grid)
            a = SymTensorField(
                grid, SymTensorField.identity(grid).values * scale.values[..., None]
            )
        else:
            a = materialize_sym(a_spec, grid)
        if "b" in spec:
            b = materialize_vector(spec["b"], grid)
        else:
            b = VectorField.zero(grid)
        if "c" in spec:
            c = materialize_scalar(spec["c"], grid)
        else:
            c = ScalarField.constant(grid, 0.0)
        return CoefficientSet(a=a, b=b, c=c)

    def modality(self, grid: Grid) -> Modality:
        spec = self.doc["modality"]
        name = spec["name"]
        if name == "elastography":
            return Modality.elastography()
        if name == "qpat":
            return Modality.qpat(materialize_scalar(spec["gamma"], grid))
        if name == "qtat":
            return Modality.qtat(materialize_scalar(spec["gamma"], grid))
        return Modality.generic(materialize_scalar(spec["weight"], grid))

    def traces(self, grid: Grid, coeffs: CoefficientSet) -> list[BoundaryTrace]:
        spec = self.doc.get("traces", "default")
        if spec == "default":
            return default_traces(grid)
        if "expressions" in spec:
            out = [BoundaryTrace.from_expression(grid, e) for e in spec["expressions"]]
        else:
            out = default_traces(grid, count=spec.get("count"))
        if spec.get("corner_compatible", False):
            out = compatible_traces(coeffs, out)
        return out

    def noise(self) -> NoiseSpec | None:
        spec = self.doc.get("noise")
        return None if spec is None else self._noise_from(spec)

    def _noise_from(self, spec: dict) -> NoiseSpec:
        return NoiseSpec(
            amplitude=float(spec["amplitude"]),
            correlation_length=float(spec.get("correlation_length", 0.1)),
            seed=int(spec.get("seed", self.seed)),
        )

    def solver(self) -> SolverSettings:
        spec = self.doc.get("solver", {})
        kwargs = {}
        if "method" in spec:
            kwargs["method"] = spec["method"]
        if "tolerance" in spec:
            kwargs["tolerance"] = float(spec["tolerance"])
        if "max_iterations" in spec:
            kwargs["max_iterations"] = int(spec["max_iterations"])
        return SolverSettings(**kwargs)

    def thresholds(self) -> Thresholds:
        spec = self.doc.get("thresholds", {})
        kwargs = {k: float(v) for k, v in spec.items()}
        return Thresholds(**kwargs)

    @property
    def recon_mode(self) -> str:
        return self.doc.get("reconstruction", {}).get("mode", "matrix")

    @property
    def margin(self) -> int:
        return int(self.doc.get("reconstruction", {}).get("margin", 2))


def parse_config(doc: dict) -> ExperimentConfig:
    """Validate an in-memory document and wrap it."""
    if not isinstance(doc, dict):
        raise ConfigurationError("config document must be a JSON object", stage="config")
    validate_document(doc)
    return ExperimentConfig(doc=doc)


def load_config(path: str) -> ExperimentConfig:
    """Read, validate, and wrap a configuration file."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}", stage="config")
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config {path} is not valid JSON: {exc}", stage="config")
    return parse_config(doc)
