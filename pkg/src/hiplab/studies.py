"""End-to-end experiment drivers.

Three study types share one pipeline (synthesize, audit, reconstruct,
resolve, compare):

* ``run_single``: one grid, errors against ground truth;
* ``run_convergence``: the same experiment over a ladder of grids,
  with fitted orders per recovered quantity;
* ``run_noise_sweep``: one grid, a ladder of noise amplitudes, errors
  against the noiseless reconstruction and the empirical
  error-to-data-perturbation ratios.

Every driver returns a JSON-ready report dict and, given an output
directory, writes ``report.json`` plus a CSV table with frozen columns.
Reports never contain timestamps or absolute paths: identical config
and seeds produce byte-identical output files.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass

import numpy as np

from . import gauge
from .admissibility import check as check_admissibility
from .config import ExperimentConfig
from .errors import ConfigurationError, DegeneracyError
from .forward import BoundaryTrace, CoefficientSet, SolverSettings
from .grids import (
    Grid,
    ScalarField,
    SymTensorField,
    VectorField,
    divergence,
    sym_inv,
    sym_matvec,
    write_field,
)
from .metrics import ErrorMetrics, error_norms
from .recon import NormalizedCoefficients, reconstruct
from .synthesis import MeasurementSet, NoiseSpec, add_noise, synthesize

__all__ = [
    "PipelineResult",
    "run_pipeline",
    "resolve_measurements",
    "fitted_order",
    "run_single",
    "run_convergence",
    "run_noise_sweep",
    "SCHEMA_VERSION",
]

SCHEMA_VERSION = 1

# columns are frozen; downstream tooling may rely on them
SINGLE_COLUMNS = [
    "study",
    "quantity",
    "points",
    "c0",
    "c1",
    "c2",
    "c0_rel",
    "c1_rel",
    "c2_rel",
    "region_fraction",
]
CONVERGENCE_COLUMNS = [
    "study",
    "quantity",
    "points",
    "spacing",
    "c0_rel",
    "c1_rel",
    "c2_rel",
    "order",
]
NOISE_COLUMNS = [
    "study",
    "quantity",
    "amplitude",
    "delta_h_c2",
    "err_c0",
    "err_c1",
    "ratio",
]


def _fmt(value) -> str:
    """Shortest round-trip text for a cell; deterministic across runs."""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _write_csv(path: str, columns: list[str], rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(row[c]) for c in columns])


def _write_report(path: str, report: dict) -> None:
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True, allow_nan=True)
        fh.write("\n")


def _metrics_dict(em: ErrorMetrics) -> dict:
    return {
        "c0": em.c0,
        "c1": em.c1,
        "c2": em.c2,
        "c0_rel": em.c0_rel,
        "c1_rel": em.c1_rel,
        "c2_rel": em.c2_rel,
        "region_fraction": em.region_fraction,
    }


def resolve_measurements(
    ms: MeasurementSet,
    tri: gauge.InvariantTriple,
    coeffs: CoefficientSet,
    settings: SolverSettings | None = None,
) -> gauge.ResolvedCoefficients:
    """Run the modality resolver with anchors taken from ground truth.

    The resolvers consume boundary data the experiment is entitled to
    (boundary values of the amplitude or of the weight ratio, and for
    the generic modality one known functional of ``a^{-1} b``); in a
    synthetic study those all come from the phantom itself.
    """
    grid = ms.grid
    dim = grid.dim
    h1 = ms.functionals[0]
    B = gauge.amplitude_of(coeffs.a)
    name = ms.modality
    if name == "elastography":
        return gauge.resolve_elastography(
            tri, h1, BoundaryTrace(grid, B.values), settings
        )
    if name == "qpat":
        rho = B.values / (ms.gamma.values * coeffs.c.values)
        return gauge.resolve_qpat(
            tri,
            h1,
            ms.gamma,
            BoundaryTrace(grid, rho),
            BoundaryTrace(grid, B.values),
            settings,
        )
    if name == "qtat":
        # d = gamma Im(c) conj(u_1); on the boundary u_1 is the first trace
        d_bnd = (
            ms.gamma.values
            * coeffs.c.values.imag
            * np.conj(ms.traces[0].values)
        )
        return gauge.resolve_qtat(
            tri, h1, BoundaryTrace(grid, B.values / d_bnd), settings
        )
    inv_drift = VectorField(
        grid, sym_matvec(sym_inv(coeffs.a.values, dim), coeffs.b.values, dim)
    )
    constraint = gauge.GaugeConstraint(kind="divergence", value=divergence(inv_drift))
    ratio = B.values / ms.weight.values
    return gauge.resolve_generic(
        tri, h1, constraint, BoundaryTrace(grid, ratio), settings
    )


@dataclass
class PipelineResult:
    """Everything one end-to-end run produced."""

    grid: Grid
    coeffs: CoefficientSet
    ms: MeasurementSet
    admissibility: dict
    nc: NormalizedCoefficients
    resolved: gauge.ResolvedCoefficients | None
    quantities: dict
    truths: dict
    flags: np.ndarray
    metrics: dict


def _quantity_table(
    cfg: ExperimentConfig,
    ms: MeasurementSet,
    coeffs: CoefficientSet,
    nc: NormalizedCoefficients,
    resolved: gauge.ResolvedCoefficients | None,
) -> tuple[dict, dict]:
    """Recovered fields and their ground-truth references, by name."""
    grid = ms.grid
    dim = grid.dim
    if cfg.recon_mode == "scalar":
        return {"drift": nc.drift}, {"drift": coeffs.b}
    quantities = {"ahat": nc.diffusion}
    truths = {"ahat": gauge.shape_of(coeffs.a)}
    name = ms.modality
    if name == "elastography":
        quantities.update(a=resolved.a, amplitude=resolved.amplitude, c=resolved.c)
        truths.update(
            a=coeffs.a, amplitude=gauge.amplitude_of(coeffs.a), c=coeffs.c
        )
    elif name == "qpat":
        quantities.update(amplitude=resolved.amplitude, c=resolved.c)
        truths.update(amplitude=gauge.amplitude_of(coeffs.a), c=coeffs.c)
    elif name == "qtat":
        quantities.update(gamma=resolved.gamma)
        truths.update(gamma=ms.gamma)
    else:
        quantities.update(inv_drift=resolved.fields["drift_combination"])
        truths.update(
            inv_drift=VectorField(
                grid,
                sym_matvec(sym_inv(coeffs.a.values, dim), coeffs.b.values, dim),
            )
        )
    return quantities, truths


def run_pipeline(
    cfg: ExperimentConfig,
    grid: Grid | None = None,
    ms: MeasurementSet | None = None,
) -> PipelineResult:
    """Synthesize, audit, reconstruct, resolve, and measure one run.

    Passing a prebuilt measurement set skips the forward solves; the
    phantom is still materialized (on the data grid) for anchors and
    error metrics.
    """
    if grid is None:
        grid = cfg.grid_for() if ms is None else ms.grid
    coeffs = cfg.coefficients(grid)
    settings = cfg.solver()
    if ms is None:
        modality = cfg.modality(grid)
        traces = cfg.traces(grid, coeffs)
        ms = synthesize(coeffs, modality, traces, settings)
        noise = cfg.noise()
        if noise is not None:
            ms = add_noise(ms, noise)

    report = check_admissibility(ms, thresholds=cfg.thresholds(), margin=cfg.margin)
    if not report.passed:
        failing = [e.name for e in report.entries if not e.passed]
        raise DegeneracyError(
            "admissibility audit failed; rejecting regions: " + ", ".join(failing),
            stage="admissibility",
        )

    nc = reconstruct(ms, mode=cfg.recon_mode, margin=cfg.margin)
    resolved = None
    flags = nc.degenerate.copy()
    if cfg.recon_mode == "matrix":
        tri = gauge.invariant_triple(nc, ms.functionals[0])
        resolved = resolve_measurements(ms, tri, coeffs, settings)
        flags = flags | resolved.flags

    quantities, truths = _quantity_table(cfg, ms, coeffs, nc, resolved)
    mask = grid.interior(cfg.margin)
    metrics = {
        name: _metrics_dict(
            error_norms(quantities[name], truths[name], mask=mask, exclude=flags)
        )
        for name in sorted(quantities)
    }
    return PipelineResult(
        grid=grid,
        coeffs=coeffs,
        ms=ms,
        admissibility=report.to_dict(),
        nc=nc,
        resolved=resolved,
        quantities=quantities,
        truths=truths,
        flags=flags,
        metrics=metrics,
    )


def _dump_fields(result: PipelineResult, directory: str) -> list[str]:
    os.makedirs(directory, exist_ok=True)
    named = {}
    for j, h in enumerate(result.ms.functionals):
        named[f"h{j + 1}"] = h
    named["alpha_hat"] = result.nc.diffusion
    named["beta"] = result.nc.drift
    named["quality"] = result.nc.quality
    if result.resolved is not None:
        for attr in ("a", "b", "c", "weight", "amplitude", "gamma"):
            fld = getattr(result.resolved, attr)
            if fld is not None:
                named[f"resolved_{attr}"] = fld
        for key, fld in result.resolved.fields.items():
            named[f"aux_{key}"] = fld
    written = []
    for name in sorted(named):
        path = os.path.join(directory, name + ".field")
        write_field(named[name], path)
        written.append(name + ".field")
    return written


def run_single(
    cfg: ExperimentConfig,
    out_dir: str | None = None,
    dump_intermediates: bool = False,
    ms: MeasurementSet | None = None,
) -> dict:
    """One experiment on the configured grid, measured against truth."""
    result = run_pipeline(cfg, ms=ms)
    points = int(result.grid.shape[0])
    report = {
        "schema_version": SCHEMA_VERSION,
        "study": "single",
        "config": cfg.doc,
        "admissibility": result.admissibility,
        "gauge": None
        if result.resolved is None
        else result.resolved.report.to_dict(),
        "flagged_fraction": float(np.count_nonzero(result.flags))
        / float(np.prod(result.grid.shape)),
        "metrics": result.metrics,
    }
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        rows = [
            {"study": "single", "quantity": name, "points": points, **m}
            for name, m in result.metrics.items()
        ]
        _write_csv(os.path.join(out_dir, "metrics.csv"), SINGLE_COLUMNS, rows)
        if dump_intermediates:
            report["fields"] = _dump_fields(result, os.path.join(out_dir, "fields"))
        _write_report(os.path.join(out_dir, "report.json"), report)
    return report


def fitted_order(spacings, errors) -> float:
    """Least-squares slope of log(error) against log(spacing).

    Returns NaN when the sequence is not strictly decreasing with the
    spacing (stalls and rounding-floor plateaus have no meaningful
    order).
    """
    err = np.asarray(errors, dtype=float)
    if (
        err.size < 2
        or not np.all(np.isfinite(err))
        or np.any(err <= 0)
        or np.any(np.diff(err) >= 0)
    ):
        return float("nan")
    slope = np.polyfit(np.log(np.asarray(spacings, dtype=float)), np.log(err), 1)[0]
    return float(slope)


def run_convergence(cfg: ExperimentConfig, out_dir: str | None = None) -> dict:
    """The configured experiment over a refinement ladder, with orders."""
    study = cfg.doc["study"]
    levels = study.get("levels")
    if levels is None or len(levels) < 3:
        raise ConfigurationError(
            "a convergence study needs at least 3 refinement levels", stage="studies"
        )

    per_level = []
    spacings = []
    for points in levels:
        grid = cfg.grid_for(points)
        result = run_pipeline(cfg, grid)
        spacings.append(float(max(grid.spacing)))
        per_level.append(result.metrics)

    quantities = sorted(per_level[0])
    orders = {}
    warnings = []
    rows = []
    for name in quantities:
        errs = [m[name]["c0_rel"] for m in per_level]
        order = fitted_order(spacings, errs)
        if np.isnan(order):
            if not all(np.isfinite(e) for e in errs):
                warnings.append(
                    f"{name}: relative error undefined (vanishing reference), "
                    "order reported as NaN"
                )
            elif max(errs) < 1e-9:
                warnings.append(
                    f"{name}: errors at rounding level, no order to fit"
                )
            else:
                warnings.append(
                    f"{name}: error sequence not monotone, order reported as NaN"
                )
        orders[name] = order
        for points, h, m in zip(levels, spacings, per_level):
            rows.append(
                {
                    "study": "convergence",
                    "quantity": name,
                    "points": points,
                    "spacing": h,
                    "c0_rel": m[name]["c0_rel"],
                    "c1_rel": m[name]["c1_rel"],
                    "c2_rel": m[name]["c2_rel"],
                    "order": order,
                }
            )

    report = {
        "schema_version": SCHEMA_VERSION,
        "study": "convergence",
        "config": cfg.doc,
        "levels": list(levels),
        "spacings": spacings,
        "errors": {
            name: [m[name]["c0_rel"] for m in per_level] for name in quantities
        },
        "orders": orders,
        "warnings": warnings,
    }
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        _write_csv(
            os.path.join(out_dir, "convergence.csv"), CONVERGENCE_COLUMNS, rows
        )
        _write_report(os.path.join(out_dir, "report.json"), report)
    return report


def run_noise_sweep(cfg: ExperimentConfig, out_dir: str | None = None) -> dict:
    """Reconstruction error against injected data perturbation size.

    Every amplitude reuses one clean synthesis and one noise seed, so
    the sweep isolates amplitude scaling: the injected field is the
    same random draw at every level, only its size changes.  Errors are
    measured against the noiseless reconstruction, and each quantity
    reports the ratio of its error to the discrete-C2 size of the data
    perturbation, plus the spread of that ratio over the sweep.
    """
    study = cfg.doc["study"]
    amplitudes = study.get("amplitudes")
    if amplitudes is None or len(amplitudes) < 3 or 0.0 not in amplitudes:
        raise ConfigurationError(
            "a noise sweep needs at least 3 amplitudes including 0",
            stage="studies",
        )
    base = cfg.noise()
    if base is None:
        raise ConfigurationError(
            "a noise sweep needs a noise section for the base spec",
            stage="studies",
        )
    corr = float(study.get("correlation_length", base.correlation_length))

    grid = cfg.grid_for()
    coeffs = cfg.coefficients(grid)
    modality = cfg.modality(grid)
    traces = cfg.traces(grid, coeffs)
    settings = cfg.solver()
    clean = synthesize(coeffs, modality, traces, settings)
    mask = grid.interior(cfg.margin)

    def reconstruct_quantities(ms: MeasurementSet):
        report = check_admissibility(
            ms, thresholds=cfg.thresholds(), margin=cfg.margin
        )
        if not report.passed:
            failing = [e.name for e in report.entries if not e.passed]
            raise DegeneracyError(
                "admissibility audit failed; rejecting regions: "
                + ", ".join(failing),
                stage="admissibility",
            )
        nc = reconstruct(ms, mode=cfg.recon_mode, margin=cfg.margin)
        resolved = None
        flags = nc.degenerate.copy()
        if cfg.recon_mode == "matrix":
            tri = gauge.invariant_triple(nc, ms.functionals[0])
            resolved = resolve_measurements(ms, tri, coeffs, settings)
            flags = flags | resolved.flags
        quantities, _ = _quantity_table(cfg, ms, coeffs, nc, resolved)
        return quantities, flags

    levels = sorted(float(a) for a in amplitudes)
    baseline = None
    baseline_flags = None
    rows = []
    table = []
    for eps in levels:
        spec = NoiseSpec(amplitude=eps, correlation_length=corr, seed=base.seed)
        noisy = add_noise(clean, spec)
        delta = max(
            error_norms(hn, hc, mask=mask).c2
            for hn, hc in zip(noisy.functionals, clean.functionals)
        )
        quantities, flags = reconstruct_quantities(noisy)
        if eps == 0.0:
            baseline, baseline_flags = quantities, flags
        entry = {"amplitude": eps, "delta_h_c2": delta, "quantities": {}}
        for name in sorted(quantities):
            em = error_norms(
                quantities[name],
                baseline[name],
                mask=mask,
                exclude=flags | baseline_flags,
            )
            ratio = em.c0 / delta if delta > 0 else 0.0
            entry["quantities"][name] = {
                "err_c0": em.c0,
                "err_c1": em.c1,
                "ratio": ratio,
            }
            rows.append(
                {
                    "study": "noise-sweep",
                    "quantity": name,
                    "amplitude": eps,
                    "delta_h_c2": delta,
                    "err_c0": em.c0,
                    "err_c1": em.c1,
                    "ratio": ratio,
                }
            )
        table.append(entry)

    spreads = {}
    for name in sorted(baseline):
        ratios = [
            e["quantities"][name]["ratio"] for e in table if e["amplitude"] > 0
        ]
        positive = [r for r in ratios if r > 0]
        spreads[name] = (
            max(positive) / min(positive) if positive else float("nan")
        )

    report = {
        "schema_version": SCHEMA_VERSION,
        "study": "noise-sweep",
        "config": cfg.doc,
        "correlation_length": corr,
        "seed": base.seed,
        "table": table,
        "ratio_spread": spreads,
    }
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        _write_csv(os.path.join(out_dir, "noise_sweep.csv"), NOISE_COLUMNS, rows)
        _write_report(os.path.join(out_dir, "report.json"), report)
    return report
