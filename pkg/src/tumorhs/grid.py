"""Uniform cell-centered grids in 1D/2D with second-order discrete operators.

Cell centers sit at lo + (i + 1/2)h, so the box faces lie exactly at the
domain boundary.  Boundary conditions enter through one layer of ghost
cells: a Dirichlet value v at the face gives ghost = 2v - interior (linear
extrapolation through the face), Neumann-zero mirrors the interior cell.
With Dirichlet ghosts the Laplacian matrix is symmetric, so the discrete
integration-by-parts identities hold to roundoff against the face-based
gradient energy (dirichlet_energy below); the centered-difference gradient
is kept separate for the monitors, which only need O(h^2) consistency.

Space integrals use the midpoint rule (cell value times h^d), space-time
accumulations the left-endpoint rule in time, matching the first-order time
stepper.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

__all__ = [
    "Grid",
    "Field",
    "BoundaryCondition",
    "dirichlet",
    "NEUMANN_ZERO",
    "DIRICHLET_ZERO",
    "TestFunction",
    "laplacian",
    "gradient",
    "grad_norm_sq",
    "dirichlet_energy",
    "second_diff",
    "integral",
    "lp_norm",
    "lp_spacetime",
]


@dataclass(frozen=True)
class BoundaryCondition:
    kind: str  # "dirichlet" | "neumann"
    value: float = 0.0


def dirichlet(value: float) -> BoundaryCondition:
    return BoundaryCondition("dirichlet", float(value))


DIRICHLET_ZERO = dirichlet(0.0)
NEUMANN_ZERO = BoundaryCondition("neumann")


@dataclass(frozen=True)
class Grid:
    """Uniform box [lo, hi]^d split into n cells per axis (same n and h on each)."""

    dim: int
    lo: float
    hi: float
    n: int

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError(f"dim must be 1 or 2, got {self.dim}")
        if self.n < 8:
            raise ValueError(f"at least 8 cells per axis required, got {self.n}")
        if not self.hi > self.lo:
            raise ValueError("hi must exceed lo")

    @classmethod
    def symmetric(cls, dim: int, L: float, n: int) -> "Grid":
        return cls(dim=dim, lo=-float(L), hi=float(L), n=int(n))

    @property
    def h(self) -> float:
        return (self.hi - self.lo) / self.n

    @property
    def shape(self) -> tuple:
        return (self.n,) * self.dim

    @property
    def cell_volume(self) -> float:
        return self.h ** self.dim

    @cached_property
    def axis_centers(self) -> np.ndarray:
        return self.lo + (np.arange(self.n) + 0.5) * self.h

    @cached_property
    def coords(self) -> tuple:
        """Cell-center coordinate arrays, one per axis, broadcast to grid shape."""
        if self.dim == 1:
            return (self.axis_centers,)
        return tuple(np.meshgrid(self.axis_centers, self.axis_centers, indexing="ij"))

    @cached_property
    def radius(self) -> np.ndarray:
        """Distance of each cell center from the origin."""
        r2 = sum(x * x for x in self.coords)
        return np.sqrt(r2)

    def contains_ball(self, radius: float, margin_cells: int = 1) -> bool:
        """True if the ball B_radius(0) fits inside the box with a cell margin."""
        half = min(-self.lo, self.hi)
        return radius + margin_cells * self.h <= half

    def zeros(self) -> np.ndarray:
        return np.zeros(self.shape)


@dataclass
class Field:
    """One scalar value per cell of a grid."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape:
            raise ValueError(
                f"field shape {self.values.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field contains non-finite values")

    def copy(self) -> "Field":
        return Field(self.grid, self.values.copy())

    def to_csv(self, path) -> None:
        """One row per cell: coordinates then value."""
        g = self.grid
        cols = [np.ravel(c) for c in g.coords] + [np.ravel(self.values)]
        header = ",".join([f"x{i}" for i in range(g.dim)] + ["value"])
        np.savetxt(path, np.column_stack(cols), delimiter=",", header=header,
                   comments="", fmt="%.17g")


# ---------------------------------------------------------------------------
# ghost-cell extension and stencils (ndarray level; Field wrappers below)
# ---------------------------------------------------------------------------

def _extend(v: np.ndarray, bc: BoundaryCondition) -> np.ndarray:
    """Pad with one ghost layer per axis according to the boundary condition."""
    ext = np.pad(v, 1, mode="edge")
    dim = v.ndim
    for ax in range(dim):
        lo_ghost = [slice(1, -1)] * dim
        lo_in = [slice(1, -1)] * dim
        hi_ghost = [slice(1, -1)] * dim
        hi_in = [slice(1, -1)] * dim
        lo_ghost[ax], lo_in[ax] = 0, 1
        hi_ghost[ax], hi_in[ax] = -1, -2
        if bc.kind == "dirichlet":
            ext[tuple(lo_ghost)] = 2.0 * bc.value - ext[tuple(lo_in)]
            ext[tuple(hi_ghost)] = 2.0 * bc.value - ext[tuple(hi_in)]
        elif bc.kind == "neumann":
            ext[tuple(lo_ghost)] = ext[tuple(lo_in)]
            ext[tuple(hi_ghost)] = ext[tuple(hi_in)]
        else:
            raise ValueError(f"unknown boundary kind {bc.kind!r}")
    return ext


def _shift(ext: np.ndarray, ax: int, off: int) -> np.ndarray:
    """View of the extended array shifted by off cells along ax (interior shape)."""
    sl = [slice(1, -1)] * ext.ndim
    sl[ax] = slice(1 + off, ext.shape[ax] - 1 + off)
    return ext[tuple(sl)]


def laplacian_array(v: np.ndarray, h: float, bc: BoundaryCondition) -> np.ndarray:
    ext = _extend(v, bc)
    out = np.zeros_like(v)
    for ax in range(v.ndim):
        out += _shift(ext, ax, 1) - 2.0 * v + _shift(ext, ax, -1)
    return out / (h * h)


def gradient_array(v: np.ndarray, h: float, bc: BoundaryCondition) -> tuple:
    ext = _extend(v, bc)
    return tuple((_shift(ext, ax, 1) - _shift(ext, ax, -1)) / (2.0 * h)
                 for ax in range(v.ndim))


def second_diff_array(v: np.ndarray, i: int, j: int, h: float,
                      bc: BoundaryCondition) -> np.ndarray:
    """Centered second difference d^2/dx_i dx_j; mixed terms by nested first differences."""
    if i == j:
        ext = _extend(v, bc)
        return (_shift(ext, i, 1) - 2.0 * v + _shift(ext, i, -1)) / (h * h)
    gi = gradient_array(v, h, bc)[i]
    return gradient_array(gi, h, bc)[j]


def laplacian(f: Field, bc: BoundaryCondition) -> Field:
    """3-point (1D) / 5-point (2D) second-order Laplacian with ghost-cell bc."""
    return Field(f.grid, laplacian_array(f.values, f.grid.h, bc))


def gradient(f: Field, bc: BoundaryCondition) -> tuple:
    """Centered-difference gradient, one Field per axis."""
    return tuple(Field(f.grid, g) for g in gradient_array(f.values, f.grid.h, bc))


def grad_norm_sq(f: Field, bc: BoundaryCondition) -> Field:
    comps = gradient_array(f.values, f.grid.h, bc)
    return Field(f.grid, sum(g * g for g in comps))


def second_diff(f: Field, i: int, j: int, bc: BoundaryCondition) -> Field:
    return Field(f.grid, second_diff_array(f.values, i, j, f.grid.h, bc))


def dirichlet_energy_array(v: np.ndarray, h: float) -> float:
    """Face-based form of int |grad f|^2 for Dirichlet-zero f.

    Interior faces contribute (df/h)^2 * h^d; boundary faces see the value 0
    at distance h/2, contributing (2 f/h)^2 * h^d / 2.  This is the unique
    form for which integral(f * laplacian(f)) = -dirichlet_energy(f) holds to
    roundoff with the ghost-cell Laplacian above.
    """
    hd = h ** v.ndim
    total = 0.0
    for ax in range(v.ndim):
        d = np.diff(v, axis=ax) / h
        total += float(np.sum(d * d)) * hd
        lo = np.take(v, 0, axis=ax)
        hi = np.take(v, -1, axis=ax)
        total += (float(np.sum(lo * lo)) + float(np.sum(hi * hi))) * (2.0 * hd / (h * h))
    return total


def dirichlet_energy(f: Field) -> float:
    return dirichlet_energy_array(f.values, f.grid.h)


# ---------------------------------------------------------------------------
# quadrature
# ---------------------------------------------------------------------------

def integral(f) -> float:
    """Midpoint rule: sum of cell values times h^d."""
    if isinstance(f, Field):
        return float(np.sum(f.values)) * f.grid.cell_volume
    raise TypeError("integral expects a Field; use integral_array for raw values")


def integral_array(v: np.ndarray, h: float) -> float:
    return float(np.sum(v)) * h ** v.ndim


def lp_norm(f: Field, q: float) -> float:
    """(int |f|^q)^(1/q) with the midpoint rule."""
    if q < 1:
        raise ValueError("exponent q >= 1 required")
    return float(np.sum(np.abs(f.values) ** q) * f.grid.cell_volume) ** (1.0 / q)


def lp_spacetime(fields, q: float, dts) -> float:
    """(sum_k sum_cells |f_k|^q h^d dt_k)^(1/q), left-endpoint rule in time.

    fields is a sequence of Fields (or ndarrays sharing a grid passed as
    Fields); dts holds the interval dt_k attached to snapshot k.
    """
    if q < 1:
        raise ValueError("exponent q >= 1 required")
    dts = np.asarray(dts, dtype=float)
    if len(dts) != len(fields):
        raise ValueError("one dt per field required")
    total = 0.0
    for f, dt in zip(fields, dts):
        total += float(np.sum(np.abs(f.values) ** q)) * f.grid.cell_volume * dt
    return total ** (1.0 / q)


# ---------------------------------------------------------------------------
# compactly supported space-time test bump
# ---------------------------------------------------------------------------

def _bump(s: np.ndarray) -> np.ndarray:
    """Mollifier profile exp(-1/(1-s^2)) for |s| < 1, zero outside."""
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    inside = np.abs(s) < 1.0
    si = s[inside]
    out[inside] = np.exp(-1.0 / (1.0 - si * si))
    return out


def _bump_deriv(s: np.ndarray) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    inside = np.abs(s) < 1.0
    si = s[inside]
    om = 1.0 - si * si
    out[inside] = np.exp(-1.0 / om) * (-2.0 * si / (om * om))
    return out


@dataclass(frozen=True)
class TestFunction:
    """Space-time bump zeta(x,t) = phi(|x - center|/radius) * phi((t - t_center)/t_halfwidth).

    phi is the standard mollifier profile, so zeta >= 0 is smooth and both
    zeta and its time derivative vanish identically outside the declared
    window.  center is a tuple with one entry per axis.
    """

    __test__ = False  # named for the weak-formulation role; not a test class

    center: tuple
    radius: float
    t_center: float
    t_halfwidth: float

    def __post_init__(self):
        if self.radius <= 0 or self.t_halfwidth <= 0:
            raise ValueError("radius and t_halfwidth must be positive")

    def check_support(self, grid: Grid, T: float) -> None:
        for c in self.center:
            if not (grid.lo < c - self.radius and c + self.radius < grid.hi):
                raise ValueError("test function support is not strictly inside the box")
        if not (0.0 < self.t_center - self.t_halfwidth
                and self.t_center + self.t_halfwidth < T):
            raise ValueError("test function support is not strictly inside (0, T)")

    def _s_space(self, grid: Grid) -> np.ndarray:
        r2 = sum((x - c) ** 2 for x, c in zip(grid.coords, self.center))
        return np.sqrt(r2) / self.radius

    def _s_time(self, t: float) -> float:
        return (t - self.t_center) / self.t_halfwidth

    def value(self, grid: Grid, t: float) -> np.ndarray:
        return _bump(self._s_space(grid)) * float(_bump(self._s_time(t)))

    def dt(self, grid: Grid, t: float) -> np.ndarray:
        tp = float(_bump_deriv(self._s_time(t))) / self.t_halfwidth
        return _bump(self._s_space(grid)) * tp

    def grad(self, grid: Grid, t: float) -> tuple:
        """Analytic spatial gradient, one array per axis."""
        s = self._s_space(grid)
        dphi = _bump_deriv(s) / self.radius
        tv = float(_bump(self._s_time(t)))
        r = s * self.radius
        safe_r = np.where(r > 0.0, r, 1.0)
        out = []
        for x, c in zip(grid.coords, self.center):
            unit = np.where(r > 0.0, (x - c) / safe_r, 0.0)
            out.append(dphi * unit * tv)
        return tuple(out)

    def sup_norms(self, grid: Grid, times) -> tuple:
        """Measured (|zeta|_inf, |dt zeta|_inf) over grid nodes and given times."""
        zmax = max(float(np.max(self.value(grid, t))) for t in times)
        dtmax = max(float(np.max(np.abs(self.dt(grid, t)))) for t in times)
        return zmax, dtmax
