"""Gauge structure of the reconstructed coefficients.

Write ``a = B^2 ahat`` with ``det(ahat) = 1``.  The ratio pipeline
delivers the normalized pair (``ahat`` and a matching vector
coefficient); combining it with the reference functional ``H_1``
yields the invariant pair

    shape:  ahat
    drift invariant:  G = b/B^2 + 2 ahat grad ln(B/d)
      computed from data as (beta - div ahat) - 2 ahat grad H_1 / H_1,

and, once the weight ratio ``B/d`` is pinned by a modality assumption,
the scalar invariant

    q = div(ahat grad v) / v  with  v = H_1 B / d = B u_1,

which relates to the coefficients, for vanishing first-order term, by
``q = div(ahat grad B)/B - c/B^2``.  Counting functions: the invariants
carry ``dim(dim+3)/2`` scalar degrees of freedom while ``(a, b, c, d)``
carry two more, so every resolution report states the two-function gauge
family that remains.

Each modality resolver integrates the drift invariant to a logarithm
(a least-squares Poisson solve whose Dirichlet anchor comes from known
boundary values), then eliminates the remaining coefficients:

* elastography (``d = 1``, ``b = 0``): everything is determined;
* qpat (``b = 0``, ``d = gamma c``, ``gamma`` known): a linear elliptic
  solve recovers ``B``, then ``c``;
* qtat (``b = 0``, ``d = gamma Im(c) conj(u_1)``, ``a`` real):
  ``gamma`` is determined where ``Im q`` is bounded away from zero;
  ``(B, c)`` remain a gauge pair;
* generic drift: one known functional of ``a^{-1} b`` (its divergence
  or one component) pins ``B/d`` and ``a^{-1} b``; ``(B, c, d)`` remain
  a gauge pair.

Vertices where the pointwise null space was degenerate are carried
along as flags; derivative and solve plumbing substitutes the identity
shape there so the elliptic solves stay well posed, and reports count
the substitutions.  Metrics should exclude flagged vertices.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ConfigurationError,
    PositivityError,
    ReconstructionAbort,
)
from .forward import BoundaryTrace, CoefficientSet, SolverSettings, solve_dirichlet
from .grids import (
    Grid,
    InteriorMask,
    ScalarField,
    SymTensorField,
    VectorField,
    consistent_rings,
    curl,
    divergence,
    gradient,
    hessian,
    sym_det,
    sym_dot,
    sym_identity,
    sym_inv,
    sym_matvec,
    tensor_divergence,
)
from .recon import NormalizedCoefficients, functional_budget

__all__ = [
    "amplitude_of",
    "shape_of",
    "InvariantTriple",
    "GaugeReport",
    "ResolvedCoefficients",
    "GaugeConstraint",
    "invariant_triple",
    "integrate_gradient",
    "resolve_elastography",
    "resolve_qpat",
    "resolve_qtat",
    "resolve_generic",
    "gauge_equivalent",
    "dimension_audit",
]

# fraction of trusted interior allowed to be degenerate before aborting
MASKED_FRACTION_LIMIT = 0.5

# relative floor on |Im q| below which the qtat division is refused
QTAT_IMAG_FLOOR = 1e-8


def amplitude_of(a: SymTensorField) -> ScalarField:
    """Scalar amplitude ``B = det(a)^(1/(2 dim))`` of an SPD matrix field."""
    dim = a.grid.dim
    det = sym_det(a.values, dim)
    return ScalarField(a.grid, np.power(det, 1.0 / (2 * dim)))


def shape_of(a: SymTensorField) -> SymTensorField:
    """Determinant-one part ``a / det(a)^(1/dim)``."""
    dim = a.grid.dim
    det = sym_det(a.values, dim)
    return SymTensorField(a.grid, a.values / np.power(det, 1.0 / dim)[..., None])


def dimension_audit(dim: int) -> dict:
    """Function count behind the two-parameter gauge statement."""
    budget = functional_budget(dim)
    return {
        "invariant_functions": budget,
        "coefficient_functions": budget + 2,
        "gauge_functions": 2,
        "statement": (
            f"{budget} reconstructed invariant functions determine the "
            f"{budget + 2} coefficient functions (a, b, c, d) up to a "
            "two-function gauge family"
        ),
    }


@dataclass
class InvariantTriple:
    """Shape, drift invariant, and (once gauged) scalar invariant."""

    shape: SymTensorField
    vector_invariant: VectorField
    scalar_invariant: ScalarField | None
    mask: InteriorMask
    degenerate: np.ndarray
    masked_fraction: float


@dataclass
class GaugeReport:
    """What a resolver pinned down and what freedom remains."""

    modality: str
    residual_gauge: str
    dimension_audit: dict
    masked_fraction: float
    curl_residual: float | None = None
    extras: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {
            "modality": self.modality,
            "residual_gauge": self.residual_gauge,
            "dimension_audit": dict(self.dimension_audit),
            "masked_fraction": self.masked_fraction,
            "curl_residual": self.curl_residual,
        }
        out.update(
            {k: v for k, v in self.extras.items() if isinstance(v, (int, float, str))}
        )
        return out


@dataclass
class ResolvedCoefficients:
    """Resolver output; fields the modality cannot determine stay None."""

    report: GaugeReport
    a: SymTensorField | None = None
    b: VectorField | None = None
    c: ScalarField | None = None
    weight: ScalarField | None = None
    amplitude: ScalarField | None = None
    gamma: ScalarField | None = None
    flags: np.ndarray | None = None
    fields: dict = field(default_factory=dict)


@dataclass
class GaugeConstraint:
    """Known functional of ``a^{-1} b`` that pins the weight ratio.

    ``kind`` is ``"divergence"`` (the value of ``div(a^{-1} b)``) or
    ``"component"`` (the value of component ``axis`` of ``a^{-1} b``).
    """

    kind: str
    value: ScalarField
    axis: int | None = None

    def __post_init__(self):
        if self.kind not in ("divergence", "component"):
            raise ConfigurationError(f"unknown constraint kind {self.kind!r}")
        if self.kind == "component":
            if self.axis is None or not (0 <= self.axis < self.value.grid.dim):
                raise ConfigurationError("component constraint needs a valid axis")


def _fill_shape(shape: SymTensorField, degenerate: np.ndarray) -> SymTensorField:
    """Identity-substitute flagged vertices so derivatives stay finite."""
    if not np.any(degenerate):
        return shape
    vals = shape.values.copy()
    vals[degenerate] = sym_identity(shape.grid.dim)
    return SymTensorField(shape.grid, vals)


def invariant_triple(
    nc: NormalizedCoefficients, h1: ScalarField
) -> InvariantTriple:
    """Drift invariant from the normalized pair and the reference functional.

    The scalar invariant is left unset; it only becomes well defined
    after a modality assumption pins the weight ratio ``B/d``.
    """
    grid = nc.diffusion.grid
    inside = nc.mask.flags
    n_inside = max(int(np.count_nonzero(inside)), 1)
    frac = float(np.count_nonzero(nc.degenerate & inside)) / n_inside
    if frac > MASKED_FRACTION_LIMIT:
        raise ReconstructionAbort(
            f"{frac:.1%} of the trusted interior is degenerate "
            f"(limit {MASKED_FRACTION_LIMIT:.0%})",
            stage="gauge",
        )
    shape = _fill_shape(nc.diffusion, nc.degenerate)
    # the outer rows of the normalized pair come from one-sided stencils
    # and carry different truncation constants than the interior; any
    # derivative taken across them (div below, or the potential solve
    # later) would turn that kink into a non-converging band artifact
    shape = SymTensorField(grid, consistent_rings(shape.values, grid))
    drift_vals = nc.drift.values
    if np.any(nc.degenerate):
        drift_vals = drift_vals.copy()
        drift_vals[nc.degenerate] = 0.0
    drift_vals = consistent_rings(drift_vals, grid)
    grad_h1 = gradient(h1)
    log_grad = grad_h1.values / h1.values[..., None]
    g_vals = (
        drift_vals
        - tensor_divergence(shape).values
        - 2.0 * sym_matvec(shape.values, log_grad, grid.dim)
    )
    if np.any(nc.degenerate):
        g_vals = g_vals.copy()
        g_vals[nc.degenerate] = np.nan
        g_vals[nc.degenerate] = 0.0  # keep solves finite; vertices stay flagged
    return InvariantTriple(
        shape=shape,
        vector_invariant=VectorField(grid, g_vals),
        scalar_invariant=None,
        mask=nc.mask,
        degenerate=nc.degenerate,
        masked_fraction=frac,
    )


def _jacobian_magnitude(F: VectorField) -> np.ndarray:
    grid = F.grid
    acc = np.zeros(grid.shape)
    for comp in range(grid.dim):
        for ax, h in enumerate(grid.spacing):
            d = np.gradient(F.values[..., comp], h, axis=ax, edge_order=2)
            acc += np.abs(d) ** 2
    return np.sqrt(acc)


def integrate_gradient(
    F: VectorField,
    anchor: BoundaryTrace,
    mask: InteriorMask,
    settings: SolverSettings | None = None,
) -> tuple[ScalarField, float]:
    """Least-squares potential of an approximate gradient field.

    Solves ``lap psi = div F`` with the Dirichlet anchor, the normal
    equation of minimizing ``|grad psi - F|^2``.  Also returns the
    relative interior curl of ``F``, the size of its non-gradient part
    against its Jacobian scale.
    """
    grid = F.grid
    ident = CoefficientSet(
        a=SymTensorField.identity(grid),
        b=VectorField.zero(grid),
        c=ScalarField.constant(grid, 0.0),
    )
    # the outer rings of F carry one-sided-stencil error constants; the
    # solve would spread their kink into interior curvature of psi
    F = VectorField(grid, consistent_rings(F.values, grid))
    psi = solve_dirichlet(ident, anchor, source=divergence(F), settings=settings)
    rot = curl(F)
    rot_mag = np.abs(rot.values) if grid.dim == 2 else rot.magnitude()
    jac = _jacobian_magnitude(F)
    inside = mask.flags
    top = float(np.max(rot_mag[inside])) if np.any(inside) else 0.0
    scale = float(np.max(jac[inside])) if np.any(inside) else 0.0
    rel = top / max(scale, np.finfo(float).tiny)
    return psi, rel


def _shape_applied_laplacian(shape: SymTensorField, f: ScalarField) -> ScalarField:
    """``div(ahat grad f)`` expanded as ``ahat : D^2 f + div(ahat) . grad f``."""
    dim = f.grid.dim
    hess = hessian(f)
    grad = gradient(f)
    vals = sym_dot(shape.values, hess.values, dim) + np.sum(
        tensor_divergence(shape).values * grad.values, axis=-1
    )
    return ScalarField(f.grid, vals)


def _scalar_invariant(
    shape: SymTensorField, h1: ScalarField, weight_ratio: np.ndarray
) -> tuple[ScalarField, ScalarField]:
    """``v = H_1 (B/d)`` and ``q = div(ahat grad v)/v``."""
    v = ScalarField(h1.grid, h1.values * weight_ratio)
    num = _shape_applied_laplacian(shape, v)
    q = ScalarField(h1.grid, num.values / v.values)
    return v, q


def _half_inverse_shape(tri: InvariantTriple) -> VectorField:
    """``F = (1/2) ahat^{-1} G``, the gradient of the log weight ratio
    when the drift vanishes."""
    grid = tri.shape.grid
    inv = sym_inv(tri.shape.values, grid.dim)
    vals = 0.5 * sym_matvec(inv, tri.vector_invariant.values, grid.dim)
    return VectorField(grid, vals)


def _log_anchor(anchor: BoundaryTrace, what: str) -> BoundaryTrace:
    vals = anchor.values
    if np.any(np.abs(vals) == 0.0):
        raise ConfigurationError(f"{what} anchor vanishes; cannot take its log")
    return BoundaryTrace(anchor.grid, np.log(vals))


def resolve_elastography(
    tri: InvariantTriple,
    h1: ScalarField,
    amplitude_anchor: BoundaryTrace,
    settings: SolverSettings | None = None,
) -> ResolvedCoefficients:
    """Full resolution under ``d = 1``, ``b = 0``.

    The drift invariant reduces to ``2 ahat grad ln B``; integrating it
    with the boundary amplitude pins ``B``, and the scalar invariant
    then yields ``c = B div(ahat grad B) - B^2 q``.
    """
    grid = tri.shape.grid
    F = _half_inverse_shape(tri)
    psi, curl_rel = integrate_gradient(
        F, _log_anchor(amplitude_anchor, "amplitude"), tri.mask, settings
    )
    B = ScalarField(grid, np.exp(psi.values))
    if float(np.min(B.values.real)) <= 0.0:
        raise PositivityError("recovered amplitude is not positive", stage="gauge")
    v, q = _scalar_invariant(tri.shape, h1, B.values)
    shape_lap_B = _shape_applied_laplacian(tri.shape, B)
    c = ScalarField(
        grid, B.values * shape_lap_B.values - B.values**2 * q.values
    )
    a = SymTensorField(grid, B.values[..., None] ** 2 * tri.shape.values)
    report = GaugeReport(
        modality="elastography",
        residual_gauge=(
            "none: the unit weight and vanishing drift pin both gauge "
            "functions, so (a, c) are determined"
        ),
        dimension_audit=dimension_audit(grid.dim),
        masked_fraction=tri.masked_fraction,
        curl_residual=curl_rel,
    )
    return ResolvedCoefficients(
        report=report,
        a=a,
        b=VectorField.zero(grid),
        c=c,
        weight=ScalarField.constant(grid, 1.0),
        amplitude=B,
        flags=tri.degenerate.copy(),
        fields={"scalar_invariant": q, "gauged_reference": v},
    )


def resolve_qpat(
    tri: InvariantTriple,
    h1: ScalarField,
    gamma: ScalarField,
    ratio_anchor: BoundaryTrace,
    amplitude_anchor: BoundaryTrace,
    settings: SolverSettings | None = None,
) -> ResolvedCoefficients:
    """Resolution under ``b = 0``, ``d = gamma c`` with known ``gamma``.

    Integrating the drift invariant pins ``rho = B / (gamma c)``; the
    scalar invariant then closes a linear elliptic equation for the
    amplitude, ``div(ahat grad B) - q B = 1 / (gamma rho)``, solved with
    the known boundary amplitude.
    """
    grid = tri.shape.grid
    F = _half_inverse_shape(tri)
    psi, curl_rel = integrate_gradient(
        F, _log_anchor(ratio_anchor, "weight ratio"), tri.mask, settings
    )
    rho = np.exp(psi.values)
    v, q = _scalar_invariant(tri.shape, h1, rho)

    shape_real = SymTensorField(grid, tri.shape.values.real.astype(np.complex128))
    coeffs = CoefficientSet(
        a=shape_real,
        b=VectorField.zero(grid),
        c=ScalarField(grid, -q.values),
    )
    source = ScalarField(grid, 1.0 / (gamma.values * rho))
    B = solve_dirichlet(coeffs, amplitude_anchor, source=source, settings=settings)
    if float(np.min(B.values.real)) <= 0.0:
        raise PositivityError(
            "recovered amplitude is not positive", stage="gauge"
        )
    c = ScalarField(grid, B.values / (gamma.values * rho))
    a = SymTensorField(grid, B.values[..., None] ** 2 * tri.shape.values)
    weight = ScalarField(grid, gamma.values * c.values)
    report = GaugeReport(
        modality="qpat",
        residual_gauge=(
            "none: known gamma and boundary anchors pin both gauge "
            "functions, so (B, c) are determined"
        ),
        dimension_audit=dimension_audit(grid.dim),
        masked_fraction=tri.masked_fraction,
        curl_residual=curl_rel,
    )
    return ResolvedCoefficients(
        report=report,
        a=a,
        b=VectorField.zero(grid),
        c=c,
        weight=weight,
        amplitude=B,
        gamma=gamma.copy(),
        flags=tri.degenerate.copy(),
        fields={"scalar_invariant": q, "weight_ratio": ScalarField(grid, rho)},
    )


def resolve_qtat(
    tri: InvariantTriple,
    h1: ScalarField,
    ratio_anchor: BoundaryTrace,
    settings: SolverSettings | None = None,
    imag_floor: float = QTAT_IMAG_FLOOR,
) -> ResolvedCoefficients:
    """Resolution under ``b = 0``, ``d = gamma Im(c) conj(u_1)``, real ``a``.

    The weight ratio ``B/d`` is complex; integrating the drift invariant
    recovers it and hence ``v = B u_1``.  With real ``a`` the imaginary
    part of the scalar invariant is ``-Im(c)/B^2`` while
    ``|H_1| / |v|^2 = gamma Im(c) / B^2``, so ``gamma`` follows by
    division wherever ``Im q`` is bounded away from zero.  Vertices with
    ``|Im q| < imag_floor * max|Im q|`` are flagged and left undefined.
    ``(B, c)`` stay a gauge pair; the reported representative
    ``B = 1, c = -q`` reproduces the invariant pair exactly.
    """
    grid = tri.shape.grid
    F = _half_inverse_shape(tri)
    psi, curl_rel = integrate_gradient(
        F, _log_anchor(ratio_anchor, "weight ratio"), tri.mask, settings
    )
    ratio = np.exp(psi.values)
    v, q = _scalar_invariant(tri.shape, h1, ratio)

    kappa = ScalarField(grid, h1.values / np.abs(v.values) ** 2)
    im_q = q.values.imag
    inside = tri.mask.flags
    scale = float(np.max(np.abs(im_q[inside]))) if np.any(inside) else 0.0
    flags = np.abs(im_q) < imag_floor * max(scale, np.finfo(float).tiny)
    gamma_vals = np.where(flags, np.nan, -kappa.values.real / np.where(flags, 1.0, im_q))
    gamma = ScalarField(grid, gamma_vals.astype(np.complex128))

    c_repr = ScalarField(grid, -q.values)
    report = GaugeReport(
        modality="qtat",
        residual_gauge=(
            "(B, c) remain a gauge pair constrained by the invariant pair "
            "(gamma Im(c)/B^2, q); representative B = 1, c = -q attached"
        ),
        dimension_audit=dimension_audit(grid.dim),
        masked_fraction=tri.masked_fraction,
        curl_residual=curl_rel,
        extras={
            "flagged_fraction": float(np.count_nonzero(flags & inside))
            / max(int(np.count_nonzero(inside)), 1)
        },
    )
    return ResolvedCoefficients(
        report=report,
        b=VectorField.zero(grid),
        gamma=gamma,
        flags=flags | tri.degenerate,
        fields={
            "scalar_invariant": q,
            "modality_invariant": kappa,
            "weight_ratio": ScalarField(grid, ratio),
            "amplitude_representative": ScalarField.constant(grid, 1.0),
            "c_representative": c_repr,
        },
    )


def resolve_generic(
    tri: InvariantTriple,
    h1: ScalarField,
    constraint: GaugeConstraint,
    ratio_anchor: BoundaryTrace,
    settings: SolverSettings | None = None,
) -> ResolvedCoefficients:
    """Resolution with an arbitrary weight and one known drift functional.

    With ``w = ahat^{-1} G = a^{-1} b + 2 grad ln(B/d)``, a known
    divergence of ``a^{-1} b`` closes a Poisson equation for the log
    weight ratio, and a known component closes a line integration along
    that axis.  Both pin ``B/d`` and hence ``a^{-1} b`` and the scalar
    invariant; ``(B, c, d)`` remain a gauge family.  The attached
    representative (``B = 1``) reproduces the data functionals exactly.
    """
    grid = tri.shape.grid
    dim = grid.dim
    inv = sym_inv(tri.shape.values, dim)
    w = consistent_rings(sym_matvec(inv, tri.vector_invariant.values, dim), grid)
    w_field = VectorField(grid, w)
    curl_rel = None
    if constraint.kind == "divergence":
        div_w = divergence(w_field)
        src = ScalarField(grid, 0.5 * (div_w.values - constraint.value.values))
        ident = CoefficientSet(
            a=SymTensorField.identity(grid),
            b=VectorField.zero(grid),
            c=ScalarField.constant(grid, 0.0),
        )
        psi = solve_dirichlet(
            ident,
            _log_anchor(ratio_anchor, "weight ratio"),
            source=src,
            settings=settings,
        )
        log_ratio = psi.values
    else:
        from scipy.integrate import cumulative_trapezoid

        axis = constraint.axis
        integrand = 0.5 * (w[..., axis] - constraint.value.values)
        acc = cumulative_trapezoid(
            integrand, dx=grid.spacing[axis], axis=axis, initial=0.0
        )
        anchor_log = np.log(ratio_anchor.values)
        low = [slice(None)] * dim
        low[axis] = slice(0, 1)
        log_ratio = acc + anchor_log[tuple(low)]

    ratio = np.exp(log_ratio)
    grad_log = gradient(ScalarField(grid, log_ratio))
    drift_combo = VectorField(grid, w - 2.0 * grad_log.values)
    v, q = _scalar_invariant(tri.shape, h1, ratio)

    if constraint.kind == "divergence":
        resid_field = divergence(drift_combo).values - constraint.value.values
    else:
        resid_field = drift_combo.values[..., constraint.axis] - constraint.value.values
    inside = tri.mask.flags
    scale = float(np.max(np.abs(constraint.value.values[inside]))) + 1.0
    constraint_residual = float(np.max(np.abs(resid_field[inside]))) / scale

    # representative with unit amplitude: reproduces H_1 identically
    b_repr = VectorField(
        grid, sym_matvec(tri.shape.values, drift_combo.values, dim)
    )
    c_repr = ScalarField(
        grid,
        -q.values - np.sum(b_repr.values * gradient(v).values, axis=-1) / v.values,
    )
    d_repr = ScalarField(grid, 1.0 / ratio)
    report = GaugeReport(
        modality="generic",
        residual_gauge=(
            "(B, c, d) remain a gauge family constrained by the pair "
            "(B/d, q); representative with B = 1 attached"
        ),
        dimension_audit=dimension_audit(dim),
        masked_fraction=tri.masked_fraction,
        curl_residual=curl_rel,
        extras={"constraint_residual": constraint_residual},
    )
    return ResolvedCoefficients(
        report=report,
        flags=tri.degenerate.copy(),
        fields={
            "scalar_invariant": q,
            "weight_ratio": ScalarField(grid, ratio),
            "drift_combination": drift_combo,
            "amplitude_representative": ScalarField.constant(grid, 1.0),
            "shape_representative": tri.shape.copy(),
            "b_representative": b_repr,
            "c_representative": c_repr,
            "weight_representative": d_repr,
        },
    )


def _truth_triple(coeffs: CoefficientSet, weight: ScalarField):
    """Invariant triple evaluated directly from known coefficients."""
    grid = coeffs.grid
    dim = grid.dim
    B = amplitude_of(coeffs.a)
    shape = shape_of(coeffs.a)
    ratio = ScalarField(grid, B.values / weight.values)
    grad_ratio = gradient(ratio)
    log_grad = grad_ratio.values / ratio.values[..., None]
    G = VectorField(
        grid,
        coeffs.b.values / B.values[..., None] ** 2
        + 2.0 * sym_matvec(shape.values, log_grad, dim),
    )
    shape_lap_B = _shape_applied_laplacian(shape, B)
    Q = ScalarField(
        grid, shape_lap_B.values / B.values - coeffs.c.values / B.values**2
    )
    return shape, G, Q


def gauge_equivalent(
    first: tuple[CoefficientSet, ScalarField],
    second: tuple[CoefficientSet, ScalarField],
    tol: float = 1e-8,
    margin: int = 2,
) -> tuple[bool, dict]:
    """Decide whether two coefficient sets share the invariant triple.

    Each argument is ``(coefficients, weight)``.  The shape and drift
    invariants are always compared; the scalar invariant is compared in
    the drift-free reduction ``div(ahat grad B)/B - c/B^2`` and is
    skipped (reported as None) when either set carries a drift, since
    it is then only defined jointly with the drift data.
    """
    (ca, wa), (cb, wb) = first, second
    grid = ca.grid
    if not grid.compatible(cb.grid):
        raise ConfigurationError("coefficient sets live on different grids")
    inside = grid.interior(margin).flags
    shape_a, g_a, q_a = _truth_triple(ca, wa)
    shape_b, g_b, q_b = _truth_triple(cb, wb)

    def rel(diff, scale):
        top = float(np.max(diff[inside]))
        s = float(np.max(scale[inside]))
        return top / max(s, np.finfo(float).tiny)

    res = {
        "shape": rel(
            SymTensorField(grid, shape_a.values - shape_b.values).magnitude(),
            shape_a.magnitude(),
        ),
        "drift_invariant": rel(
            VectorField(grid, g_a.values - g_b.values).magnitude(),
            np.maximum(g_a.magnitude(), 1.0),
        ),
    }
    drift_free = (
        float(np.max(np.abs(ca.b.values))) <= 1e-12
        and float(np.max(np.abs(cb.b.values))) <= 1e-12
    )
    if drift_free:
        res["scalar_invariant"] = rel(
            np.abs(q_a.values - q_b.values),
            np.maximum(np.abs(q_a.values), 1.0),
        )
    else:
        res["scalar_invariant"] = None
    res["dimension_audit"] = dimension_audit(grid.dim)
    checked = [v for k, v in res.items() if isinstance(v, float)]
    return all(v <= tol for v in checked), res
