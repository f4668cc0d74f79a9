"""Uniform grids, sampled fields and the finite-difference calculus on them.

All fields live on a cubic collocated grid spanning [-L, L]^3. Derivatives use
second-order central differences in the interior and second-order one-sided
stencils on the boundary faces, so linear fields are differentiated exactly
everywhere.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Union

import numpy as np
import scipy.sparse as sp

__all__ = [
    "Grid3",
    "ScalarField",
    "VectorField",
    "SpinorField",
    "gradient",
    "curl",
    "divergence",
    "grad_tensor_norm2",
    "integrate",
    "field_energy",
    "lp_norm_power",
    "inner",
    "norm",
    "interior_mask",
    "derivative_matrix",
    "curl_matrix",
    "save_checkpoint",
    "load_checkpoint",
]

MAGIC = "MPLAB1"


@dataclass(frozen=True)
class Grid3:
    """Cubic grid with ``n`` nodes per axis on ``[-L, L]^3``.

    Parameters
    ----------
    n : int
        Points per axis, at least 8.
    L : float
        Half width of the box.
    """

    n: int
    L: float

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 8:
            raise ValueError(f"grid needs n >= 8 integer points per axis, got {self.n}")
        if not (np.isfinite(self.L) and self.L > 0):
            raise ValueError(f"box half width must be positive, got {self.L}")
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "L", float(self.L))

    @property
    def a(self) -> float:
        return 2.0 * self.L / (self.n - 1)

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.n, self.n, self.n)

    @property
    def size(self) -> int:
        return self.n**3

    @property
    def cell_volume(self) -> float:
        return self.a**3

    @property
    def axis(self) -> np.ndarray:
        """Node coordinates along one axis, ``-L + i a``."""
        return -self.L + self.a * np.arange(self.n)

    def mesh(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        x = self.axis
        return np.meshgrid(x, x, x, indexing="ij")

    def radius(self) -> np.ndarray:
        X, Y, Z = self.mesh()
        return np.sqrt(X * X + Y * Y + Z * Z)

    @functools.cached_property
    def weights(self) -> np.ndarray:
        """Trapezoidal quadrature weights (already multiplied by a^3)."""
        w = np.full(self.n, self.a)
        w[0] = w[-1] = 0.5 * self.a
        return w[:, None, None] * w[None, :, None] * w[None, None, :]

    def sample(self, func: Callable, kind: str = "scalar"):
        """Sample ``func(X, Y, Z)`` on the nodes and wrap it in a field."""
        values = func(*self.mesh())
        return _FIELD_KINDS[kind](self, values)


def _freeze(values, shape, dtype) -> np.ndarray:
    arr = np.array(np.broadcast_to(np.asarray(values, dtype=dtype), shape), dtype=dtype)
    if not np.all(np.isfinite(arr)):
        raise ValueError("field values must be finite")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class ScalarField:
    """Real value per node."""

    grid: Grid3
    values: np.ndarray = field(repr=False)

    kind = "scalar"

    def __post_init__(self):
        object.__setattr__(self, "values", _freeze(self.values, self.grid.shape, float))

    def positive_part(self) -> "ScalarField":
        return ScalarField(self.grid, np.maximum(self.values, 0.0))

    def __add__(self, other):
        other = other.values if isinstance(other, ScalarField) else other
        return ScalarField(self.grid, self.values + other)

    def __sub__(self, other):
        other = other.values if isinstance(other, ScalarField) else other
        return ScalarField(self.grid, self.values - other)

    def __mul__(self, s):
        return ScalarField(self.grid, self.values * s)

    __rmul__ = __mul__

    def __neg__(self):
        return ScalarField(self.grid, -self.values)


@dataclass(frozen=True, eq=False)
class VectorField:
    """Three real components per node, stored as shape ``(3, n, n, n)``."""

    grid: Grid3
    values: np.ndarray = field(repr=False)

    kind = "vector"

    def __post_init__(self):
        object.__setattr__(self, "values", _freeze(self.values, (3,) + self.grid.shape, float))

    @classmethod
    def zeros(cls, grid: Grid3) -> "VectorField":
        return cls(grid, np.zeros((3,) + grid.shape))

    def flat(self) -> np.ndarray:
        return self.values.reshape(-1)

    def magnitude2(self) -> np.ndarray:
        return np.sum(self.values**2, axis=0)

    def __add__(self, other):
        other = other.values if isinstance(other, VectorField) else other
        return VectorField(self.grid, self.values + other)

    def __sub__(self, other):
        other = other.values if isinstance(other, VectorField) else other
        return VectorField(self.grid, self.values - other)

    def __mul__(self, s):
        return VectorField(self.grid, self.values * s)

    __rmul__ = __mul__

    def __neg__(self):
        return VectorField(self.grid, -self.values)


@dataclass(frozen=True, eq=False)
class SpinorField:
    """Two complex components per node, stored as shape ``(2, n, n, n)``."""

    grid: Grid3
    values: np.ndarray = field(repr=False)

    kind = "spinor"

    def __post_init__(self):
        object.__setattr__(self, "values", _freeze(self.values, (2,) + self.grid.shape, complex))

    def norm(self) -> float:
        return norm(self)

    def normalized(self) -> "SpinorField":
        return SpinorField(self.grid, self.values / self.norm())

    def density(self) -> np.ndarray:
        return np.sum(np.abs(self.values) ** 2, axis=0)


_FIELD_KINDS = {"scalar": ScalarField, "vector": VectorField, "spinor": SpinorField}
AnyField = Union[ScalarField, VectorField, SpinorField]


def _same_grid(*fields: AnyField) -> Grid3:
    grid = fields[0].grid
    for f in fields[1:]:
        if f.grid != grid:
            raise ValueError("fields live on different grids")
    return grid


# ----------------------------------------------------------------- calculus

def _d(values: np.ndarray, a: float, axis: int) -> np.ndarray:
    return np.gradient(values, a, axis=axis, edge_order=2)


def gradient(f: ScalarField) -> VectorField:
    a = f.grid.a
    return VectorField(f.grid, np.stack([_d(f.values, a, j) for j in range(3)]))


def curl(A: VectorField) -> VectorField:
    """Central-difference curl with one-sided second-order boundary stencils."""
    a = A.grid.a
    Ax, Ay, Az = A.values
    return VectorField(A.grid, np.stack([
        _d(Az, a, 1) - _d(Ay, a, 2),
        _d(Ax, a, 2) - _d(Az, a, 0),
        _d(Ay, a, 0) - _d(Ax, a, 1),
    ]))


def divergence(A: VectorField) -> ScalarField:
    a = A.grid.a
    return ScalarField(A.grid, sum(_d(A.values[j], a, j) for j in range(3)))


def integrate(values: np.ndarray, grid: Grid3) -> float:
    """Trapezoidal integral of node values over the box."""
    return float(np.sum(grid.weights * values))


def field_energy(B: VectorField, beta: float) -> float:
    """``beta * int |B|^2`` over the box.

    Raises
    ------
    ValueError
        If ``beta`` is negative.
    """
    if beta < 0:
        raise ValueError(f"field coupling must be non-negative, got {beta}")
    if beta == 0:
        return 0.0
    return beta * integrate(B.magnitude2(), B.grid)


def lp_norm_power(f: ScalarField, p: float) -> float:
    """``int [f]_+^p`` over the box."""
    if p <= 0:
        raise ValueError(f"exponent must be positive, got {p}")
    return integrate(np.maximum(f.values, 0.0) ** p, f.grid)


def grad_tensor_norm2(A: VectorField, mask: np.ndarray | None = None) -> float:
    """``int |grad (x) A|^2``, the sum of squares of all nine partial derivatives.

    With ``mask`` the sum runs over the selected nodes with uniform weight a^3.
    """
    a = A.grid.a
    total = np.zeros(A.grid.shape)
    for i in range(3):
        for j in range(3):
            total += _d(A.values[j], a, i) ** 2
    if mask is None:
        return integrate(total, A.grid)
    return float(np.sum(total[mask])) * a**3


def inner(phi: SpinorField | np.ndarray, psi: SpinorField | np.ndarray, grid: Grid3 | None = None) -> complex:
    """``<phi, psi> = a^3 sum conj(phi) psi`` (antilinear in the first slot)."""
    if grid is None:
        grid = _same_grid(phi, psi)
    u = getattr(phi, "values", phi)
    v = getattr(psi, "values", psi)
    return complex(np.vdot(u, v)) * grid.cell_volume


def norm(psi: SpinorField | np.ndarray, grid: Grid3 | None = None) -> float:
    grid = grid or psi.grid
    v = getattr(psi, "values", psi)
    return float(np.sqrt(np.vdot(v, v).real * grid.cell_volume))


def interior_mask(grid: Grid3, margin: int = 1) -> np.ndarray:
    """Boolean mask of nodes at least ``margin`` layers away from every face."""
    m = np.zeros(grid.shape, dtype=bool)
    sl = slice(margin, grid.n - margin)
    m[sl, sl, sl] = True
    return m


# ------------------------------------------------------ sparse representations

@functools.lru_cache(maxsize=16)
def _diff_1d(n: int, a: float) -> sp.csr_matrix:
    D = sp.lil_matrix((n, n))
    for i in range(1, n - 1):
        D[i, i - 1] = -0.5
        D[i, i + 1] = 0.5
    D[0, 0:3] = [-1.5, 2.0, -0.5]
    D[n - 1, n - 3:n] = [0.5, -2.0, 1.5]
    return (D / a).tocsr()


@functools.lru_cache(maxsize=16)
def derivative_matrix(grid: Grid3, axis: int) -> sp.csr_matrix:
    """Sparse matrix of the node derivative along ``axis`` (C-order flattening)."""
    I = sp.identity(grid.n, format="csr")
    D = _diff_1d(grid.n, grid.a)
    ops = [I, I, I]
    ops[axis] = D
    return sp.kron(sp.kron(ops[0], ops[1]), ops[2], format="csr")


@functools.lru_cache(maxsize=16)
def curl_matrix(grid: Grid3) -> sp.csr_matrix:
    """Sparse curl acting on a flattened ``(3, n, n, n)`` vector field."""
    Dx, Dy, Dz = (derivative_matrix(grid, j) for j in range(3))
    return sp.bmat([[None, -Dz, Dy], [Dz, None, -Dx], [-Dy, Dx, None]], format="csr")


# -------------------------------------------------------------- checkpoints

def _node_major(f: AnyField) -> np.ndarray:
    if f.kind == "scalar":
        return f.values.reshape(-1)
    if f.kind == "vector":
        return np.moveaxis(f.values, 0, -1).reshape(-1)
    comps = np.moveaxis(f.values, 0, -1)  # (..., 2) complex
    return np.stack([comps.real, comps.imag], axis=-1).reshape(-1)


def save_checkpoint(f: AnyField, path: str | Path) -> None:
    """Write ``f`` as a header line followed by little-endian float64 data."""
    header = f"{MAGIC} {f.kind} {f.grid.n} {f.grid.L!r}\n".encode("ascii")
    data = _node_major(f).astype("<f8").tobytes()
    Path(path).write_bytes(header + data)


def load_checkpoint(path: str | Path) -> AnyField:
    raw = Path(path).read_bytes()
    end = raw.index(b"\n")
    magic, kind, n, L = raw[:end].decode("ascii").split()
    if magic != MAGIC or kind not in _FIELD_KINDS:
        raise ValueError(f"not a field checkpoint: {raw[:end]!r}")
    grid = Grid3(int(n), float(L))
    data = np.frombuffer(raw[end + 1:], dtype="<f8").astype(float)
    if kind == "scalar":
        values = data.reshape(grid.shape)
    elif kind == "vector":
        values = np.moveaxis(data.reshape(grid.shape + (3,)), -1, 0)
    else:
        pairs = data.reshape(grid.shape + (2, 2))
        values = np.moveaxis(pairs[..., 0] + 1j * pairs[..., 1], -1, 0)
    return _FIELD_KINDS[kind](grid, values)


def header_fields(path: str | Path) -> tuple[str, int, float]:
    with open(path, "rb") as fh:
        magic, kind, n, L = fh.readline().decode("ascii").split()
    if magic != MAGIC:
        raise ValueError("bad checkpoint header")
    return kind, int(n), float(L)

