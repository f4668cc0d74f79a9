"""Gauge-covariant lattice magnetic Schrödinger and Pauli operators.

The kinetic operator ``(-i h grad + A)^2`` is discretized with Peierls link
phases: the hop from ``x`` to ``x + a e_j`` carries ``exp(i theta_j(x))`` with
``theta_j(x) = (a/h) * (A_j(x) + A_j(x + a e_j)) / 2``. Wavefunctions vanish
outside the grid (Dirichlet). The Pauli operator adds the Zeeman term
``h sigma . B``.

The magnetic field seen by the lattice is the plaquette flux: the circulation
of the link phases around each elementary square, times ``h / a^2``. Averaged
to the nodes it feeds the Zeeman term. Because it is built from the links
alone, it is exactly invariant under lattice gauge transforms, and it agrees
with ``curl A`` to second order for smooth ``A``.

Operators are ``H = T - V``: the potential enters with a minus sign, so a
positive ``V`` is attractive.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .fields import Grid3, ScalarField, SpinorField, VectorField

__all__ = [
    "PAULI",
    "LinkPhases",
    "HamiltonianSpec",
    "apply",
    "hermiticity_check",
    "dirac_apply",
    "dirichlet_sine_mode",
    "dirichlet_sine_eigenvalue",
    "plaquette_flux",
    "lattice_field",
    "lattice_curl_matrices",
    "lattice_field_energy",
]

PAULI = np.array([
    [[0, 1], [1, 0]],
    [[0, -1j], [1j, 0]],
    [[1, 0], [0, -1]],
], dtype=complex)

_KINDS = {"S": "S", "schrodinger": "S", "schroedinger": "S", "P": "P", "pauli": "P"}


def normalize_kind(kind: str) -> str:
    try:
        return _KINDS[kind if len(kind) == 1 else kind.lower()]
    except KeyError:
        raise ValueError(f"unknown operator kind {kind!r}; use 'S' or 'P'") from None


def _axis_slices(j: int) -> tuple[tuple, tuple]:
    lo = [slice(None)] * 3
    hi = [slice(None)] * 3
    lo[j] = slice(0, -1)
    hi[j] = slice(1, None)
    return tuple(lo), tuple(hi)


@dataclass(frozen=True, eq=False)
class LinkPhases:
    """Peierls phases on the links of a grid.

    ``theta[j]`` has ``n - 1`` entries along axis ``j`` and ``n`` along the
    others; entry ``x`` belongs to the link ``x -> x + a e_j``.
    """

    grid: Grid3
    theta: tuple = field(repr=False)

    def __post_init__(self):
        n = self.grid.n
        thetas = []
        for j, t in enumerate(self.theta):
            shape = [n, n, n]
            shape[j] = n - 1
            t = np.array(t, dtype=float)
            if t.shape != tuple(shape):
                raise ValueError(f"link array {j} has shape {t.shape}, expected {tuple(shape)}")
            if not np.all(np.isfinite(t)):
                raise ValueError("link phases must be finite")
            t.flags.writeable = False
            thetas.append(t)
        object.__setattr__(self, "theta", tuple(thetas))

    @classmethod
    def zero(cls, grid: Grid3) -> "LinkPhases":
        n = grid.n
        return cls(grid, (np.zeros((n - 1, n, n)), np.zeros((n, n - 1, n)), np.zeros((n, n, n - 1))))

    @classmethod
    def from_vector_potential(cls, A: VectorField, h: float) -> "LinkPhases":
        """Midpoint-averaged phases ``(a/h) (A_j(x) + A_j(x+e_j)) / 2``."""
        scale = A.grid.a / h
        thetas = []
        for j in range(3):
            lo, hi = _axis_slices(j)
            Aj = A.values[j]
            thetas.append(scale * 0.5 * (Aj[lo] + Aj[hi]))
        return cls(A.grid, tuple(thetas))

    def gauge(self, eta: ScalarField, h: float) -> "LinkPhases":
        """Phases after the lattice gauge transform generated by ``eta``.

        The transformed operator is unitarily equivalent to the original via
        ``psi -> exp(-i eta / h) psi``.
        """
        thetas = []
        for j in range(3):
            lo, hi = _axis_slices(j)
            thetas.append(self.theta[j] + (eta.values[hi] - eta.values[lo]) / h)
        return LinkPhases(self.grid, tuple(thetas))


@dataclass(frozen=True, eq=False)
class HamiltonianSpec:
    """Everything needed to assemble ``T_h(A) - V``.

    Parameters
    ----------
    kind : {'S', 'P'}
        Schrödinger (scalar) or Pauli (two-component) operator.
    h : float
        Semiclassical parameter.
    V : ScalarField
        Potential; enters the operator as ``-V``.
    A : VectorField, optional
        Vector potential. ``None`` means ``A = 0``.
    links : LinkPhases, optional
        Explicit link phases; overrides those derived from ``A``.
    zeeman : VectorField, optional
        Explicit magnetic field for the Pauli term; defaults to the
        node-averaged plaquette flux of the links.
    """

    kind: str
    h: float
    V: ScalarField
    A: VectorField | None = None
    links: LinkPhases | None = None
    zeeman: VectorField | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", normalize_kind(self.kind))
        if not self.h > 0:
            raise ValueError(f"h must be positive, got {self.h}")
        grid = self.V.grid
        for other in (self.A, self.links, self.zeeman):
            if other is not None and other.grid != grid:
                raise ValueError("V, A, links and zeeman field must share one grid")
        if self.links is None:
            links = (LinkPhases.from_vector_potential(self.A, self.h) if self.A is not None
                     else LinkPhases.zero(grid))
            object.__setattr__(self, "links", links)
        if self.zeeman is None and self.kind == "P":
            object.__setattr__(self, "zeeman", lattice_field(self.links, self.h))

    @property
    def grid(self) -> Grid3:
        return self.V.grid

    @property
    def components(self) -> int:
        return 2 if self.kind == "P" else 1

    @property
    def dim(self) -> int:
        return self.components * self.grid.size

    @property
    def hop(self) -> float:
        """Hopping amplitude ``(h/a)^2``."""
        return (self.h / self.grid.a) ** 2

    def gauge_transformed(self, eta: ScalarField) -> "HamiltonianSpec":
        """Lattice gauge transform acting exactly on the link phases."""
        return HamiltonianSpec(self.kind, self.h, self.V, links=self.links.gauge(eta, self.h))

    def with_potential(self, V: ScalarField) -> "HamiltonianSpec":
        return HamiltonianSpec(self.kind, self.h, V, A=self.A, links=self.links, zeeman=self.zeeman)

    @functools.cached_property
    def matrix(self) -> sp.csr_matrix:
        """Sparse matrix of the operator (component-major ordering for Pauli)."""
        return _assemble(self)

    def shape_state(self, vec: np.ndarray) -> np.ndarray:
        """Reshape a flat vector to ``(components, n, n, n)``."""
        return vec.reshape((self.components,) + self.grid.shape)


def _kinetic_matrix(links: LinkPhases, t: float) -> sp.csr_matrix:
    grid = links.grid
    idx = np.arange(grid.size).reshape(grid.shape)
    rows, cols, vals = [], [], []
    for j in range(3):
        lo, hi = _axis_slices(j)
        r = idx[lo].ravel()
        c = idx[hi].ravel()
        w = -t * np.exp(1j * links.theta[j].ravel())
        rows += [r, c]
        cols += [c, r]
        vals += [w, np.conj(w)]
    rows.append(idx.ravel())
    cols.append(idx.ravel())
    vals.append(np.full(grid.size, 6.0 * t, dtype=complex))
    M = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(grid.size, grid.size))
    return M.tocsr()


def _assemble(spec: HamiltonianSpec) -> sp.csr_matrix:
    T = _kinetic_matrix(spec.links, spec.hop)
    Vd = sp.diags(spec.V.values.ravel().astype(complex))
    H = T - Vd
    if spec.kind == "S":
        return H.tocsr()
    Bx, By, Bz = (spec.h * b.ravel() for b in spec.zeeman.values)
    return sp.bmat([
        [H + sp.diags(Bz + 0j), sp.diags(Bx - 1j * By)],
        [sp.diags(Bx + 1j * By), H - sp.diags(Bz + 0j)],
    ], format="csr")


def _as_components(spec: HamiltonianSpec, psi) -> np.ndarray:
    values = np.asarray(getattr(psi, "values", psi), dtype=complex)
    shape = (spec.components,) + spec.grid.shape
    if values.shape == spec.grid.shape and spec.components == 1:
        values = values[None]
    if values.shape != shape:
        raise ValueError(f"state of shape {values.shape} does not match operator shape {shape}")
    return values


def _kinetic_apply(links: LinkPhases, psi: np.ndarray, t: float) -> np.ndarray:
    out = 6.0 * t * psi
    for j in range(3):
        lo, hi = _axis_slices(j)
        phase = np.exp(1j * links.theta[j])
        lo_c = (Ellipsis,) + lo
        hi_c = (Ellipsis,) + hi
        out[lo_c] -= t * phase * psi[hi_c]
        out[hi_c] -= t * np.conj(phase) * psi[lo_c]
    return out


def apply(spec: HamiltonianSpec, psi):
    """Apply ``T_h(A) - V`` to a state without assembling a matrix.

    Parameters
    ----------
    spec : HamiltonianSpec
    psi : SpinorField, ndarray
        A complex array of shape ``(n, n, n)`` for Schrödinger, or a
        ``SpinorField`` / ``(2, n, n, n)`` array for Pauli.

    Returns
    -------
    Same type and shape as ``psi``.
    """
    comps = _as_components(spec, psi)
    out = _kinetic_apply(spec.links, comps, spec.hop) - spec.V.values * comps
    if spec.kind == "P":
        Bx, By, Bz = spec.h * spec.zeeman.values
        up, dn = comps
        out[0] += Bz * up + (Bx - 1j * By) * dn
        out[1] += (Bx + 1j * By) * up - Bz * dn
    if isinstance(psi, SpinorField):
        return SpinorField(spec.grid, out)
    return out.reshape(np.shape(getattr(psi, "values", psi)))


def hermiticity_check(spec: HamiltonianSpec, trials: int = 4, seed: int = 0) -> float:
    """Largest relative asymmetry ``|<phi,H psi> - conj(<psi,H phi>)| / (|phi||psi|)``."""
    if trials < 1:
        raise ValueError("need at least one trial")
    rng = np.random.default_rng(seed)
    shape = (spec.components,) + spec.grid.shape
    worst = 0.0
    for _ in range(trials):
        psi, phi = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape) for _ in range(2))
        a = np.vdot(phi, apply(spec, psi))
        b = np.vdot(psi, apply(spec, phi))
        worst = max(worst, abs(a - np.conj(b)) / (np.linalg.norm(phi) * np.linalg.norm(psi)))
    return float(worst)


def dirac_apply(links: LinkPhases, psi: SpinorField, h: float) -> SpinorField:
    """``sigma . (-i h D) psi`` with the covariant central difference.

    ``D_j psi(x) = (e^{i theta_j(x)} psi(x+e_j) - e^{-i theta_j(x-e_j)} psi(x-e_j)) / (2a)``,
    with ``psi = 0`` outside the grid.
    """
    a = links.grid.a
    out = np.zeros_like(psi.values)
    for j in range(3):
        lo, hi = _axis_slices(j)
        phase = np.exp(1j * links.theta[j])
        Dpsi = np.zeros_like(psi.values)
        Dpsi[(Ellipsis,) + lo] += phase * psi.values[(Ellipsis,) + hi]
        Dpsi[(Ellipsis,) + hi] -= np.conj(phase) * psi.values[(Ellipsis,) + lo]
        Dpsi *= -1j * h / (2.0 * a)
        out += np.einsum("ab,b...->a...", PAULI[j], Dpsi)
    return SpinorField(psi.grid, out)


def dirichlet_sine_mode(grid: Grid3, modes: tuple[int, int, int]) -> np.ndarray:
    """Discrete Dirichlet eigenvector ``prod_j sin(pi m_j (i_j + 1) / (n + 1))``."""
    i = np.arange(grid.n) + 1
    s = [np.sin(np.pi * m * i / (grid.n + 1)) for m in modes]
    return s[0][:, None, None] * s[1][None, :, None] * s[2][None, None, :]


def dirichlet_sine_eigenvalue(grid: Grid3, modes: tuple[int, int, int], h: float) -> float:
    """Eigenvalue of the free lattice operator on :func:`dirichlet_sine_mode`."""
    return float((h / grid.a) ** 2 * sum(2.0 * (1.0 - np.cos(np.pi * m / (grid.n + 1))) for m in modes))


# ------------------------------------------------------------ lattice field

# (j, k, l): plaquettes spanned by axes j, k carry the l component of B
_PLANES = ((1, 2, 0), (2, 0, 1), (0, 1, 2))


def _shift(j: int) -> tuple:
    sl = [slice(None)] * 3
    sl[j] = slice(1, None)
    return tuple(sl)


def _trim(j: int) -> tuple:
    sl = [slice(None)] * 3
    sl[j] = slice(0, -1)
    return tuple(sl)


def plaquette_flux(links: LinkPhases) -> tuple[np.ndarray, ...]:
    """Oriented phase circulation around every plaquette, one array per component.

    Component ``l`` lives on the squares spanned by the two other axes
    ``(j, k)`` in right-handed order:
    ``theta_j(x) + theta_k(x + e_j) - theta_j(x + e_k) - theta_k(x)``.
    """
    out = [None, None, None]
    for j, k, l in _PLANES:
        tj, tk = links.theta[j], links.theta[k]
        out[l] = tj[_trim(k)] + tk[_shift(j)] - tj[_shift(k)] - tk[_trim(j)]
    return tuple(out)


def _plaquettes_to_nodes(P: np.ndarray, j: int, k: int, grid: Grid3) -> np.ndarray:
    total = np.zeros(grid.shape)
    count = np.zeros(grid.shape)
    for dj in (0, 1):
        for dk in (0, 1):
            sl = [slice(None)] * 3
            sl[j] = slice(dj, dj + grid.n - 1)
            sl[k] = slice(dk, dk + grid.n - 1)
            total[tuple(sl)] += P
            count[tuple(sl)] += 1
    return total / count


def lattice_field(links: LinkPhases, h: float) -> VectorField:
    """Node magnetic field: plaquette flux ``h Phi / a^2`` averaged over adjacent plaquettes."""
    grid = links.grid
    flux = plaquette_flux(links)
    B = np.zeros((3,) + grid.shape)
    for j, k, l in _PLANES:
        B[l] = _plaquettes_to_nodes(flux[l], j, k, grid)
    return VectorField(grid, B * (h / grid.a**2))


@functools.lru_cache(maxsize=8)
def lattice_curl_matrices(grid: Grid3):
    """Sparse maps from nodal ``A`` (flattened ``(3, n, n, n)``) to the lattice field.

    Returns
    -------
    plaq : csr_matrix
        ``A -> B`` on plaquettes (concatenated components ``l = 0, 1, 2``).
    weights : ndarray
        Volume weight of each plaquette (area times trapezoid thickness).
    to_nodes : csr_matrix
        Plaquette values -> node averages, shape ``(3 N, n_plaquettes)``.
    """
    n, a = grid.n, grid.a
    N = grid.size
    idx = np.arange(N).reshape(grid.shape)
    thick = np.full(n, a)
    thick[0] = thick[-1] = 0.5 * a
    rows, cols, vals = [], [], []
    wts = []
    node_rows, node_cols, node_vals = [], [], []
    offset = 0
    for j, k, l in _PLANES:
        shape = [n, n, n]
        shape[j] = shape[k] = n - 1
        pid = offset + np.arange(np.prod(shape)).reshape(shape)
        base = idx[tuple(slice(0, s) for s in shape)]
        ej = np.zeros(3, dtype=int)
        ej[j] = 1
        ek = np.zeros(3, dtype=int)
        ek[k] = 1
        strides = np.array([n * n, n, 1])
        sj, sk = int(ej @ strides), int(ek @ strides)
        # each plaquette edge is a link average of two nodal values, halved
        for comp, start, sign in ((j, 0, 1.0), (k, sj, 1.0), (j, sk, -1.0), (k, 0, -1.0)):
            step = sj if comp == j else sk
            for node in (base + start, base + start + step):
                rows.append(pid.ravel())
                cols.append(comp * N + node.ravel())
                vals.append(np.full(pid.size, 0.5 * sign / a))
        tl = np.ones(shape)
        tl *= thick.reshape([n if d == l else 1 for d in range(3)])[tuple(slice(0, s) for s in shape)]
        wts.append((a * a * tl).ravel())
        # averaging to nodes
        for dj in (0, 1):
            for dk in (0, 1):
                nodes = base + dj * sj + dk * sk
                node_rows.append(l * N + nodes.ravel())
                node_cols.append(pid.ravel())
        offset += pid.size
    plaq = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(offset, 3 * N)).tocsr()
    nr, nc = np.concatenate(node_rows), np.concatenate(node_cols)
    counts = np.bincount(nr, minlength=3 * N).astype(float)
    to_nodes = sp.coo_matrix((1.0 / counts[nr], (nr, nc)), shape=(3 * N, offset)).tocsr()
    return plaq, np.concatenate(wts), to_nodes


def lattice_field_energy(A: VectorField, beta: float) -> float:
    """``beta * sum_plaquettes w |B_plaquette|^2``, exact for constant fields."""
    if beta < 0:
        raise ValueError(f"field coupling must be non-negative, got {beta}")
    plaq, w, _ = lattice_curl_matrices(A.grid)
    B = plaq @ A.flat()
    return float(beta * np.sum(w * B * B))
