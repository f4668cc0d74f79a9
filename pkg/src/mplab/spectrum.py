"""Negative spectra, spectral projectors, densities and currents."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import ArpackNoConvergence, LinearOperator, eigsh

from .fields import Grid3, ScalarField, VectorField
from .hamiltonian import HamiltonianSpec, LinkPhases, _axis_slices, lattice_curl_matrices

__all__ = [
    "DENSE_LIMIT",
    "NegativeSpectrum",
    "SpectralProjector",
    "negative_spectrum",
    "density",
    "spin_density",
    "current",
    "link_currents",
    "trace_derivative",
    "weyl_count_estimate",
]

# Matrices up to this dimension are diagonalized densely.
DENSE_LIMIT = 1024


@dataclass(frozen=True, eq=False)
class SpectralProjector:
    """Orthonormal eigenvectors spanning the occupied (negative) subspace.

    ``vectors`` has shape ``(k, components, n, n, n)`` and is normalized in
    ``L^2``: ``a^3 sum |phi|^2 = 1``.
    """

    grid: Grid3
    kind: str
    eigenvalues: np.ndarray
    vectors: np.ndarray = field(repr=False)

    @property
    def count(self) -> int:
        return len(self.eigenvalues)

    def gram(self) -> np.ndarray:
        flat = self.vectors.reshape(self.count, -1)
        return flat.conj() @ flat.T * self.grid.cell_volume

    @classmethod
    def from_states(cls, grid: Grid3, kind: str, states, eigenvalues=None) -> "SpectralProjector":
        """Wrap explicit (already orthonormal) states, e.g. for tests."""
        comps = 2 if kind == "P" else 1
        vecs = np.array([np.asarray(getattr(s, "values", s), dtype=complex).reshape((comps,) + grid.shape)
                         for s in states])
        ev = np.zeros(len(vecs)) if eigenvalues is None else np.asarray(eigenvalues, dtype=float)
        return cls(grid, kind, ev, vecs)


@dataclass(frozen=True, eq=False)
class NegativeSpectrum:
    """Eigenvalues of ``H`` below ``threshold`` and their shifted sum."""

    eigenvalues: np.ndarray
    threshold: float
    sum_negative: float
    count: int
    converged: bool
    residual_max: float
    ambiguous: bool
    residuals: np.ndarray = field(repr=False)
    projector: SpectralProjector | None = field(default=None, repr=False)
    method: str = "arpack"

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["index", "eigenvalue", "residual"])
            for i, (lam, r) in enumerate(zip(self.eigenvalues, self.residuals)):
                w.writerow([i, repr(float(lam)), repr(float(r))])


def weyl_count_estimate(spec: HamiltonianSpec, threshold: float = 0.0) -> float:
    """Phase-space estimate of the number of eigenvalues below ``threshold``."""
    W = np.maximum(spec.V.values + threshold, 0.0)
    vol = np.sum(W**1.5) * spec.grid.cell_volume
    return spec.components * vol / (6.0 * np.pi**2 * spec.h**3)


def _dense(H: sp.csr_matrix):
    w, v = np.linalg.eigh(H.toarray())
    return w, v


def _arpack(H: sp.csr_matrix, k: int, tol: float, v0: np.ndarray):
    ncv = min(H.shape[0], max(2 * k + 1, k + 24))
    try:
        w, v = eigsh(H, k=k, which="SA", tol=tol, ncv=ncv, v0=v0, maxiter=20 * H.shape[0])
        ok = True
    except ArpackNoConvergence as exc:
        w, v, ok = exc.eigenvalues, exc.eigenvectors, False
    order = np.argsort(w, kind="stable")
    return w[order], v[:, order], ok


def _deflate(H, w, v, ok, tol, v0, rounds: int = 8):
    """Recover negative eigenvalues missed by a single-vector Krylov run.

    Found negative eigenpairs are lifted to ``+1`` by a low-rank update and
    the smallest eigenvalues of the deflated operator are searched again;
    exact degeneracies (spin copies, symmetric partners) show up there.
    """
    dim = H.shape[0]
    for _ in range(rounds):
        neg = w < 0
        Q, lam = v[:, neg], w[neg]
        if Q.shape[1] >= dim - 3:
            break
        shift = 1.0 - lam

        def mv(x, Q=Q, shift=shift):
            x = np.asarray(x).reshape(-1)
            return H @ x + Q @ (shift * (Q.conj().T @ x))

        op = LinearOperator((dim, dim), matvec=mv, dtype=np.result_type(H.dtype, Q.dtype))
        k = max(2, min(8, dim - Q.shape[1] - 2))
        w2, v2, ok2 = _arpack(op, k, 0.1 * tol, v0)
        miss = w2 < 0
        if not np.any(miss):
            break
        # orthogonalize the recovered vectors against the known subspace
        extra = v2[:, miss] - Q @ (Q.conj().T @ v2[:, miss])
        extra, _ = np.linalg.qr(extra)
        sub = extra.conj().T @ (H @ extra)
        we, ve = np.linalg.eigh((sub + sub.conj().T) / 2)
        w = np.concatenate([w, we])
        v = np.concatenate([v, extra @ ve], axis=1)
        ok = ok and ok2
        order = np.argsort(w, kind="stable")
        w, v = w[order], v[:, order]
    return w, v, ok


def _spin_blocks(spec: HamiltonianSpec, H):
    """The two diagonal blocks when the Pauli matrix does not couple the spins."""
    if spec.kind != "P" or np.any(spec.zeeman.values[:2]):
        return None
    half = H.shape[0] // 2
    H = H.tocsr()
    return H[:half, :half], H[half:, half:]


def _lowest(H, k: int, tol: float, dense_limit: int):
    """Eigenpairs of ``H`` up to the first non-negative one (all of them if dense)."""
    dim = H.shape[0]
    if sp.issparse(H) and not np.any(H.data.imag):
        H = H.real.tocsr()  # trivial links: real symmetric arithmetic is about 4x cheaper
    if dim <= dense_limit:
        w, v = _dense(H)
        return (*_trim_above(w, v), True, "dense")
    k = max(2, min(k, dim - 2))
    # a generic start vector: symmetric ones miss parity partners and spin copies
    rng = np.random.default_rng(0)
    v0 = rng.standard_normal(dim)
    if np.iscomplexobj(H.data):
        v0 = v0 + 1j * rng.standard_normal(dim)
    v0 /= np.linalg.norm(v0)
    while True:
        w, v, ok = _arpack(H, k, 0.1 * tol, v0)
        if len(w) and (w[-1] >= 0 or k >= dim - 2):
            break
        k = min(dim - 2, max(2 * k, k + 16))
    w, v, ok = _deflate(H, w, v, ok, tol, v0)
    return (*_trim_above(w, v), ok, "arpack")


def _trim_above(w, v):
    """Keep the negative eigenpairs and the first non-negative one."""
    m = int(np.searchsorted(w, 0.0)) + 1
    return w[:m], v[:, :m]


def negative_spectrum(
    spec: HamiltonianSpec,
    tol: float = 1e-9,
    threshold: float = 0.0,
    dense_limit: int = DENSE_LIMIT,
    k0: int | None = None,
    vectors: bool = True,
) -> NegativeSpectrum:
    """All eigenvalues of ``spec`` below ``threshold``, with multiplicity.

    Sparse problems use implicitly restarted Lanczos for the smallest
    eigenvalues, enlarging the requested count until one eigenvalue at or
    above the threshold is found, so every negative eigenvalue is captured.

    Parameters
    ----------
    spec : HamiltonianSpec
    tol : float
        Target residual scale; an eigenpair counts as converged when
        ``|H v - lam v| <= tol * (|lam| + 1)``.
    threshold : float
        Spectral cut ``mu``; the reported sum is ``sum (lam - mu)_-``.
    dense_limit : int
        Use a dense eigensolver at or below this dimension.
    k0 : int, optional
        Initial number of eigenvalues requested; defaults to a phase-space
        estimate.
    vectors : bool
        Whether to keep the eigenvectors as a :class:`SpectralProjector`.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    H = spec.matrix
    dim = H.shape[0]
    if threshold:
        H = H - threshold * sp.identity(dim, format="csr")
    k = k0 or int(np.ceil(1.3 * weyl_count_estimate(spec, threshold))) + 6
    blocks = _spin_blocks(spec, H)
    if blocks is None:
        w, v, ok, method = _lowest(H, k, tol, dense_limit)
    else:
        # B_x = B_y = 0: the Pauli matrix is diag(S + h B_z, S - h B_z)
        half = dim // 2
        parts = [_lowest(b, k // 2 + 3, tol, dense_limit) for b in blocks]
        w = np.concatenate([p[0] for p in parts])
        v = np.zeros((dim, len(w)), dtype=complex)
        v[:half, :len(parts[0][0])] = parts[0][1]
        v[half:, len(parts[0][0]):] = parts[1][1]
        ok = parts[0][2] and parts[1][2]
        method = parts[0][3] + "/spin-blocks"
        order = np.argsort(w, kind="stable")
        w, v = w[order], v[:, order]
    above = w[w >= 0]
    keep = w < 0
    w, v = w[keep], v[:, keep]
    if len(w):
        res = np.linalg.norm(H @ v - v * w, axis=0)
    else:
        res = np.zeros(0)
    converged = ok and bool(np.all(res <= tol * (np.abs(w) + 1)))
    # eigenvalues hugging the cut on either side make the trace non-smooth
    ambiguous = bool(np.any(np.abs(w) < 10 * tol)) or bool(len(above) and above[0] < 10 * tol)
    projector = None
    if vectors:
        grid = spec.grid
        vecs = v.T.reshape((len(w), spec.components) + grid.shape) / np.sqrt(grid.cell_volume)
        projector = SpectralProjector(grid, spec.kind, w + threshold, vecs)
    return NegativeSpectrum(
        eigenvalues=w + threshold,
        threshold=threshold,
        sum_negative=float(np.sum(w)),
        count=len(w),
        converged=converged,
        residual_max=float(res.max()) if len(res) else 0.0,
        ambiguous=ambiguous,
        residuals=res,
        projector=projector,
        method=method,
    )


# ------------------------------------------------------------ observables

def density(P: SpectralProjector) -> ScalarField:
    """Spin-traced one-body density ``sum_j |phi_j(x)|^2``."""
    return ScalarField(P.grid, np.sum(np.abs(P.vectors) ** 2, axis=(0, 1)))


def spin_density(P: SpectralProjector) -> VectorField:
    """``sum_j phi_j^dagger sigma phi_j`` at every node (Pauli projectors only)."""
    if P.kind != "P":
        raise ValueError("spin density needs a two-component projector")
    up, dn = P.vectors[:, 0], P.vectors[:, 1]
    cross = np.sum(np.conj(up) * dn, axis=0)
    sz = np.sum(np.abs(up) ** 2 - np.abs(dn) ** 2, axis=0)
    return VectorField(P.grid, np.stack([2 * cross.real, 2 * cross.imag, sz]))


def link_currents(P: SpectralProjector, links: LinkPhases) -> tuple[np.ndarray, ...]:
    """``sum_j Im(e^{i theta} conj(phi_j(x)) phi_j(x+e))`` on every link.

    Multiplied by ``2 (h/a)^2 a^3`` this is the derivative of the kinetic
    trace with respect to the link phase.
    """
    out = []
    for j in range(3):
        lo, hi = _axis_slices(j)
        lo_c, hi_c = (Ellipsis,) + lo, (Ellipsis,) + hi
        prod = np.sum(np.conj(P.vectors[lo_c]) * P.vectors[hi_c], axis=(0, 1))
        out.append(np.imag(np.exp(1j * links.theta[j]) * prod))
    return tuple(out)


def _links_to_nodes(q: tuple[np.ndarray, ...], grid: Grid3) -> np.ndarray:
    """Scatter link values to both endpoint nodes (adjoint of midpoint averaging)."""
    out = np.zeros((3,) + grid.shape)
    for j in range(3):
        lo, hi = _axis_slices(j)
        out[(j,) + lo] += q[j]
        out[(j,) + hi] += q[j]
    return out


def trace_derivative(P: SpectralProjector, spec: HamiltonianSpec) -> np.ndarray:
    """Derivative of ``sum_j <phi_j, H phi_j>`` with respect to nodal ``A``.

    This is the Hellmann–Feynman derivative of the occupied eigenvalue sum.
    The link phases depend on ``A`` through midpoint averaging and the Zeeman
    field through the node-averaged plaquette flux. Returns an array of shape
    ``(3, n, n, n)``.
    """
    grid = P.grid
    a = grid.a
    q = link_currents(P, spec.links)
    # d theta / d A(node) = a / (2h) for both endpoints of a link
    dK = 2.0 * spec.hop * grid.cell_volume * (a / (2.0 * spec.h)) * _links_to_nodes(q, grid)
    if spec.kind == "P":
        s = spin_density(P).values.reshape(-1) * grid.cell_volume
        plaq, _, to_nodes = lattice_curl_matrices(grid)
        dK += spec.h * (plaq.T @ (to_nodes.T @ s)).reshape((3,) + grid.shape)
    return dK


def current(P: SpectralProjector, spec: HamiltonianSpec) -> VectorField:
    """Current density ``J = -(1 / (2 a^3)) d tr / dA``.

    For smooth states this is ``-sum_j Re[conj(phi_j) (-i h grad + A) phi_j]``
    plus, for Pauli, the spin term ``-(h/2) curl s`` (``s`` the spin density).
    """
    if P.grid != spec.grid or P.kind != spec.kind:
        raise ValueError("projector does not match the operator")
    if spec.A is None and spec.kind == "P" and np.any(spec.zeeman.values):
        raise ValueError("current needs the vector potential behind the Zeeman field")
    dK = trace_derivative(P, spec)
    return VectorField(P.grid, -dK / (2.0 * P.grid.cell_volume))

