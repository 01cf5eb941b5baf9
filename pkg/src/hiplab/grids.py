"""Tensor-product grids, field containers, and discrete calculus.

Conventions used throughout the package:

* Grids are vertex-centered tensor products of uniformly spaced 1-D axes
  over a rectangular box, in dimension 2 or 3.  Point ``(i0, i1, ...)``
  sits at ``lo_k + i_k * h_k``; arrays are C-ordered with the last axis
  fastest, so ``values[i0, i1]`` addresses the point directly.
* Scalar fields store ``complex128`` values of shape ``grid.shape``.
  Vector fields append a component axis of length ``dim``.  Symmetric
  matrix fields store the upper triangle in the fixed component order

      dim 2:  (00, 11, 01)
      dim 3:  (00, 11, 22, 12, 02, 01)

  so a symmetric matrix costs ``dim*(dim+1)/2`` scalars per point.
* First derivatives use centered differences with second-order one-sided
  closures at the boundary (``numpy.gradient`` with ``edge_order=2``).
  Pure second derivatives use the 3-point interior stencil and a 4-point
  one-sided closure; both are exact on quadratics.  Mixed second
  derivatives compose two first-derivative passes, which commute exactly,
  so discrete Hessians are symmetric by construction.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import GridError

__all__ = [
    "Grid",
    "ScalarField",
    "VectorField",
    "SymTensorField",
    "InteriorMask",
    "sym_pairs",
    "sym_size",
    "sym_to_full",
    "full_to_sym",
    "sym_identity",
    "sym_matvec",
    "sym_trace",
    "sym_det",
    "sym_inv",
    "sym_dot",
    "gradient",
    "hessian",
    "laplacian",
    "divergence",
    "tensor_divergence",
    "curl",
    "consistent_rings",
    "write_field",
    "read_field",
]

# upper-triangle component order per dimension
_SYM_PAIRS = {
    2: ((0, 0), (1, 1), (0, 1)),
    3: ((0, 0), (1, 1), (2, 2), (1, 2), (0, 2), (0, 1)),
}


def sym_pairs(dim: int) -> tuple[tuple[int, int], ...]:
    """Index pairs ``(i, j)`` stored for a symmetric matrix in ``dim`` d."""
    try:
        return _SYM_PAIRS[dim]
    except KeyError:
        raise GridError(f"unsupported dimension {dim}; expected 2 or 3")


def sym_size(dim: int) -> int:
    """Number of stored components of a symmetric ``dim x dim`` matrix."""
    return dim * (dim + 1) // 2


@dataclass(frozen=True)
class Grid:
    """Uniform vertex-centered grid on a rectangular box.

    Parameters
    ----------
    bounds : tuple of (lo, hi) pairs, one per axis.
    shape : number of vertices per axis, at least 5 each.
    """

    bounds: tuple[tuple[float, float], ...]
    shape: tuple[int, ...]

    def __post_init__(self):
        bounds = tuple((float(lo), float(hi)) for lo, hi in self.bounds)
        shape = tuple(int(s) for s in self.shape)
        object.__setattr__(self, "bounds", bounds)
        object.__setattr__(self, "shape", shape)
        if len(bounds) not in (2, 3):
            raise GridError(f"dimension must be 2 or 3, got {len(bounds)}")
        if len(shape) != len(bounds):
            raise GridError(
                f"shape {shape} does not match {len(bounds)} bounded axes"
            )
        for ax, ((lo, hi), s) in enumerate(zip(bounds, shape)):
            if not (np.isfinite(lo) and np.isfinite(hi)) or hi <= lo:
                raise GridError(f"axis {ax}: invalid bounds ({lo}, {hi})")
            if s < 5:
                raise GridError(f"axis {ax}: need at least 5 points, got {s}")

    @property
    def dim(self) -> int:
        return len(self.shape)

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple(
            (hi - lo) / (s - 1) for (lo, hi), s in zip(self.bounds, self.shape)
        )

    @property
    def num_points(self) -> int:
        return int(np.prod(self.shape))

    def axes(self) -> tuple[np.ndarray, ...]:
        """1-D coordinate arrays, one per axis."""
        return tuple(
            np.linspace(lo, hi, s) for (lo, hi), s in zip(self.bounds, self.shape)
        )

    def meshgrid(self) -> tuple[np.ndarray, ...]:
        """Full coordinate arrays of shape ``self.shape`` (ij indexing)."""
        return tuple(np.meshgrid(*self.axes(), indexing="ij"))

    def boundary_mask(self) -> np.ndarray:
        """Boolean array, True at points lying on any face of the box."""
        mask = np.zeros(self.shape, dtype=bool)
        for ax in range(self.dim):
            sl = [slice(None)] * self.dim
            sl[ax] = 0
            mask[tuple(sl)] = True
            sl[ax] = -1
            mask[tuple(sl)] = True
        return mask

    def interior(self, margin: int = 2) -> "InteriorMask":
        """Mask of points at least ``margin`` steps away from every face."""
        if margin < 1:
            raise GridError(f"interior margin must be >= 1, got {margin}")
        if any(2 * margin >= s for s in self.shape):
            raise GridError(
                f"margin {margin} leaves no interior on shape {self.shape}"
            )
        flags = np.zeros(self.shape, dtype=bool)
        core = tuple(slice(margin, s - margin) for s in self.shape)
        flags[core] = True
        return InteriorMask(grid=self, margin=margin, flags=flags)

    def compatible(self, other: "Grid") -> bool:
        return self.bounds == other.bounds and self.shape == other.shape


@dataclass(frozen=True)
class InteriorMask:
    """Points on which pointwise reconstruction output is trusted."""

    grid: Grid
    margin: int
    flags: np.ndarray

    @property
    def fraction(self) -> float:
        return float(np.count_nonzero(self.flags)) / self.grid.num_points

    def intersect(self, extra: np.ndarray) -> "InteriorMask":
        return InteriorMask(self.grid, self.margin, self.flags & extra)


def _coerce(values, grid: Grid, comps: int | None, what: str) -> np.ndarray:
    arr = np.asarray(values, dtype=np.complex128)
    want = grid.shape if comps is None else grid.shape + (comps,)
    if arr.shape != want:
        raise GridError(f"{what}: expected shape {want}, got {arr.shape}")
    return np.ascontiguousarray(arr)


@dataclass
class ScalarField:
    """Complex scalar samples on a grid."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        self.values = _coerce(self.values, self.grid, None, "scalar field")

    @classmethod
    def constant(cls, grid: Grid, value: complex) -> "ScalarField":
        return cls(grid, np.full(grid.shape, value, dtype=np.complex128))

    def copy(self) -> "ScalarField":
        return ScalarField(self.grid, self.values.copy())

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.values)))


@dataclass
class VectorField:
    """Complex vector samples; trailing axis holds the ``dim`` components."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        self.values = _coerce(self.values, self.grid, self.grid.dim, "vector field")

    @classmethod
    def zero(cls, grid: Grid) -> "VectorField":
        return cls(grid, np.zeros(grid.shape + (grid.dim,), dtype=np.complex128))

    def copy(self) -> "VectorField":
        return VectorField(self.grid, self.values.copy())

    def component(self, k: int) -> np.ndarray:
        return self.values[..., k]

    def magnitude(self) -> np.ndarray:
        return np.sqrt(np.sum(np.abs(self.values) ** 2, axis=-1))


@dataclass
class SymTensorField:
    """Complex symmetric-matrix samples in upper-triangle storage."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        self.values = _coerce(
            self.values, self.grid, sym_size(self.grid.dim), "symmetric field"
        )

    @classmethod
    def identity(cls, grid: Grid) -> "SymTensorField":
        vals = np.zeros(grid.shape + (sym_size(grid.dim),), dtype=np.complex128)
        vals[..., : grid.dim] = 1.0
        return cls(grid, vals)

    def copy(self) -> "SymTensorField":
        return SymTensorField(self.grid, self.values.copy())

    def entry(self, i: int, j: int) -> np.ndarray:
        pairs = sym_pairs(self.grid.dim)
        key = (min(i, j), max(i, j))
        return self.values[..., pairs.index(key)]

    def full(self) -> np.ndarray:
        return sym_to_full(self.values, self.grid.dim)

    def magnitude(self) -> np.ndarray:
        """Pointwise Frobenius norm (off-diagonal entries counted twice)."""
        dim = self.grid.dim
        w = np.ones(sym_size(dim))
        w[dim:] = 2.0
        return np.sqrt(np.sum(w * np.abs(self.values) ** 2, axis=-1))


def sym_to_full(values: np.ndarray, dim: int) -> np.ndarray:
    """Expand ``(..., m)`` upper-triangle storage to ``(..., dim, dim)``."""
    pairs = sym_pairs(dim)
    out = np.zeros(values.shape[:-1] + (dim, dim), dtype=values.dtype)
    for k, (i, j) in enumerate(pairs):
        out[..., i, j] = values[..., k]
        out[..., j, i] = values[..., k]
    return out


def full_to_sym(mat: np.ndarray, dim: int) -> np.ndarray:
    """Compress ``(..., dim, dim)`` symmetric matrices to triangle storage.

    The strict lower triangle is ignored; no symmetry check is performed.
    """
    pairs = sym_pairs(dim)
    out = np.zeros(mat.shape[:-2] + (len(pairs),), dtype=mat.dtype)
    for k, (i, j) in enumerate(pairs):
        out[..., k] = mat[..., i, j]
    return out


def sym_identity(dim: int) -> np.ndarray:
    vals = np.zeros(sym_size(dim), dtype=np.complex128)
    vals[:dim] = 1.0
    return vals


def sym_matvec(sym: np.ndarray, vec: np.ndarray, dim: int) -> np.ndarray:
    """Pointwise matrix-vector product ``A v`` in triangle storage."""
    full = sym_to_full(sym, dim)
    return np.einsum("...ij,...j->...i", full, vec)


def sym_trace(sym: np.ndarray, dim: int) -> np.ndarray:
    return np.sum(sym[..., :dim], axis=-1)


def sym_det(sym: np.ndarray, dim: int) -> np.ndarray:
    if dim == 2:
        a, b, c = sym[..., 0], sym[..., 1], sym[..., 2]
        return a * b - c * c
    if dim == 3:
        a, b, c = sym[..., 0], sym[..., 1], sym[..., 2]
        d, e, f = sym[..., 3], sym[..., 4], sym[..., 5]
        return a * (b * c - d * d) - f * (f * c - d * e) + e * (f * d - b * e)
    raise GridError(f"unsupported dimension {dim}")


def sym_inv(sym: np.ndarray, dim: int) -> np.ndarray:
    """Pointwise inverse, staying in triangle storage."""
    det = sym_det(sym, dim)
    if dim == 2:
        a, b, c = sym[..., 0], sym[..., 1], sym[..., 2]
        out = np.empty_like(sym)
        out[..., 0] = b / det
        out[..., 1] = a / det
        out[..., 2] = -c / det
        return out
    a, b, c = sym[..., 0], sym[..., 1], sym[..., 2]
    d, e, f = sym[..., 3], sym[..., 4], sym[..., 5]
    out = np.empty_like(sym)
    out[..., 0] = (b * c - d * d) / det
    out[..., 1] = (a * c - e * e) / det
    out[..., 2] = (a * b - f * f) / det
    out[..., 3] = (e * f - a * d) / det
    out[..., 4] = (f * d - e * b) / det
    out[..., 5] = (e * d - f * c) / det
    return out


def sym_dot(x: np.ndarray, y: np.ndarray, dim: int) -> np.ndarray:
    """Pointwise trace pairing ``tr(X Y)`` of two symmetric matrices."""
    w = np.ones(sym_size(dim))
    w[dim:] = 2.0
    return np.sum(w * x * y, axis=-1)


# ---------------------------------------------------------------------------
# discrete calculus


def _axis_gradients(values: np.ndarray, grid: Grid) -> list[np.ndarray]:
    grads = np.gradient(values, *grid.spacing, edge_order=2)
    if grid.dim == 1:
        return [grads]
    return list(grads)


def gradient(f: ScalarField) -> VectorField:
    """Second-order gradient (centered interior, one-sided boundary)."""
    parts = _axis_gradients(f.values, f.grid)
    return VectorField(f.grid, np.stack(parts, axis=-1))


def _second_diff(values: np.ndarray, axis: int, h: float) -> np.ndarray:
    """Pure second derivative along one axis, exact on quadratics.

    Interior uses the 3-point stencil; each face uses the one-sided
    4-point closure (2, -5, 4, -1)/h^2 which is also second order.
    """
    v = np.moveaxis(values, axis, 0)
    out = np.empty_like(v)
    out[1:-1] = (v[:-2] - 2.0 * v[1:-1] + v[2:]) / h**2
    out[0] = (2.0 * v[0] - 5.0 * v[1] + 4.0 * v[2] - v[3]) / h**2
    out[-1] = (2.0 * v[-1] - 5.0 * v[-2] + 4.0 * v[-3] - v[-4]) / h**2
    return np.moveaxis(out, 0, axis)


def hessian(f: ScalarField) -> SymTensorField:
    """Second-order discrete Hessian in triangle storage.

    Mixed entries compose two first-derivative passes along distinct
    axes; the passes commute exactly so the result is symmetric.
    """
    grid = f.grid
    h = grid.spacing
    out = np.empty(grid.shape + (sym_size(grid.dim),), dtype=np.complex128)
    first = {}
    for k, (i, j) in enumerate(sym_pairs(grid.dim)):
        if i == j:
            out[..., k] = _second_diff(f.values, i, h[i])
        else:
            if j not in first:
                first[j] = np.gradient(f.values, h[j], axis=j, edge_order=2)
            out[..., k] = np.gradient(first[j], h[i], axis=i, edge_order=2)
    return SymTensorField(grid, out)


def laplacian(f: ScalarField) -> ScalarField:
    """Sum of pure second derivatives."""
    grid = f.grid
    acc = np.zeros(grid.shape, dtype=np.complex128)
    for ax, h in enumerate(grid.spacing):
        acc += _second_diff(f.values, ax, h)
    return ScalarField(grid, acc)


def divergence(F: VectorField) -> ScalarField:
    grid = F.grid
    acc = np.zeros(grid.shape, dtype=np.complex128)
    for ax, h in enumerate(grid.spacing):
        acc += np.gradient(F.values[..., ax], h, axis=ax, edge_order=2)
    return ScalarField(grid, acc)


def tensor_divergence(A: SymTensorField) -> VectorField:
    """Row-wise divergence ``(div A)_i = sum_j d_j A_ij``."""
    grid = A.grid
    full = A.full()
    out = np.zeros(grid.shape + (grid.dim,), dtype=np.complex128)
    for i in range(grid.dim):
        for j, h in enumerate(grid.spacing):
            out[..., i] += np.gradient(full[..., i, j], h, axis=j, edge_order=2)
    return VectorField(grid, out)


def curl(F: VectorField):
    """Rotation of a vector field.

    Returns a scalar field in dimension 2 (``d0 F1 - d1 F0``) and a
    vector field in dimension 3.
    """
    grid = F.grid
    h = grid.spacing

    def d(comp, ax):
        return np.gradient(F.values[..., comp], h[ax], axis=ax, edge_order=2)

    if grid.dim == 2:
        return ScalarField(grid, d(1, 0) - d(0, 1))
    vals = np.stack(
        [d(2, 1) - d(1, 2), d(0, 2) - d(2, 0), d(1, 0) - d(0, 1)], axis=-1
    )
    return VectorField(grid, vals)


def consistent_rings(values: np.ndarray, grid: Grid, rings: int = 2) -> np.ndarray:
    """Rebuild the outer rings of a derived field by inward extrapolation.

    Fields produced by differentiating grid data carry larger truncation
    constants on the one-sided boundary rows than in the centered interior,
    so their error profile has a kink across the outer rings.  Any further
    derivative, or an elliptic solve fed by one, amplifies that kink into
    an O(1) artifact confined to a band of fixed cell width.  Replacing the
    rings by per-axis quadratic extrapolation from the centered rows keeps
    the error profile smooth without touching the interior values.

    ``values`` may carry trailing component axes; leading axes must match
    ``grid.shape``.  Axes too short to supply source rows are left alone.
    """
    out = np.array(values, copy=True)
    for ax in range(grid.dim):
        n = grid.shape[ax]
        deg = min(2, n - 2 * rings - 1)
        if deg < 1:
            continue
        src = np.arange(rings, rings + deg + 1)
        vander = np.vander(src.astype(float), deg + 1, increasing=True)
        sub = np.moveaxis(out, ax, 0)
        for t in range(rings):
            for lo_t, lo_s in ((t, src), (n - 1 - t, n - 1 - src)):
                moments = np.vander(
                    np.array([float(t)]), deg + 1, increasing=True
                )[0]
                weights = np.linalg.solve(vander.T, moments)
                sub[lo_t] = np.tensordot(weights, sub[lo_s], axes=(0, 0))
    return out


# ---------------------------------------------------------------------------
# field files: raw little-endian complex128 payload plus a JSON sidecar

_KINDS = {"scalar": None, "vector": "dim", "symtensor": "sym"}


def _kind_of(fld) -> str:
    if isinstance(fld, ScalarField):
        return "scalar"
    if isinstance(fld, VectorField):
        return "vector"
    if isinstance(fld, SymTensorField):
        return "symtensor"
    raise GridError(f"not a field: {type(fld).__name__}")


def write_field(fld, path: str) -> None:
    """Write a field as raw ``<c16`` bytes plus ``path + '.json'`` sidecar.

    The payload is the C-ordered value array: grid points in lexicographic
    order, trailing component axis (if any) fastest, each value stored as
    a little-endian (real, imag) float64 pair.
    """
    grid = fld.grid
    kind = _kind_of(fld)
    payload = np.ascontiguousarray(fld.values, dtype="<c16")
    with open(path, "wb") as fh:
        fh.write(payload.tobytes())
    sidecar = {
        "schema_version": 1,
        "kind": kind,
        "dim": grid.dim,
        "bounds": [list(b) for b in grid.bounds],
        "shape": list(grid.shape),
    }
    with open(path + ".json", "w") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_field(path: str):
    """Read a field written by :func:`write_field`; bit-exact round trip."""
    sidecar_path = path + ".json"
    if not os.path.exists(sidecar_path):
        raise GridError(f"missing sidecar {sidecar_path}")
    with open(sidecar_path) as fh:
        meta = json.load(fh)
    for key in ("kind", "dim", "bounds", "shape"):
        if key not in meta:
            raise GridError(f"sidecar {sidecar_path} lacks '{key}'")
    kind = meta["kind"]
    if kind not in _KINDS:
        raise GridError(f"unknown field kind '{kind}'")
    grid = Grid(
        bounds=tuple(tuple(b) for b in meta["bounds"]),
        shape=tuple(meta["shape"]),
    )
    comps = {"scalar": 1, "vector": grid.dim, "symtensor": sym_size(grid.dim)}[kind]
    raw = np.fromfile(path, dtype="<c16")
    if raw.size != grid.num_points * comps:
        raise GridError(
            f"{path}: expected {grid.num_points * comps} values, got {raw.size}"
        )
    if kind == "scalar":
        return ScalarField(grid, raw.reshape(grid.shape))
    shape = grid.shape + (comps,)
    cls = VectorField if kind == "vector" else SymTensorField
    return cls(grid, raw.reshape(shape))
