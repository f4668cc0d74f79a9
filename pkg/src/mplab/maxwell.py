"""Total energy over vector potentials, its gradient, and the minimizer.

The energy is ``tr(T_h(A) - V)_- + beta * int |curl A|^2``. Its gradient with
respect to the nodal vector potential follows from the Hellmann–Feynman
theorem: ``g = 2 beta curl^T curl A - 2 J`` where ``J`` is the current of the
occupied states. Stationarity ``g = 0`` is the discrete Maxwell equation.
"""

from __future__ import annotations

import csv
import functools
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.fft import dctn, idctn

from .fields import (
    Grid3,
    ScalarField,
    SpinorField,
    VectorField,
    _diff_1d,
    curl,
    derivative_matrix,
    divergence,
    gradient,
)
from .hamiltonian import HamiltonianSpec, lattice_curl_matrices, lattice_field_energy, normalize_kind
from .spectrum import NegativeSpectrum, negative_spectrum, trace_derivative

__all__ = [
    "CURRENT_COUPLING",
    "EnergyReport",
    "MinimizerConfig",
    "total_energy",
    "energy_gradient",
    "energy_and_gradient",
    "maxwell_residual",
    "minimize_energy",
    "coulomb_project",
    "coulomb_adjoint",
    "gauge_transform",
    "constant_field_potential",
    "random_smooth_field",
    "write_log",
]

# g = 2 beta curl curl A - CURRENT_COUPLING * J; fixed by the finite-difference audit
CURRENT_COUPLING = 2.0

LOG_COLUMNS = ("iter", "total", "trace_negative", "field_energy", "step", "grad_norm", "flags")


@dataclass
class EnergyReport:
    """Energy split into its spectral and field parts.

    ``log`` holds one dict per minimizer step with the keys of
    :data:`LOG_COLUMNS`.
    """

    trace_negative: float
    field_energy: float
    total: float
    beta: float
    h: float
    kappa: float
    eigenvalues: np.ndarray = field(repr=False)
    converged: bool = True
    ambiguous: bool = False
    log: list = field(default_factory=list, repr=False)
    spectrum: NegativeSpectrum | None = field(default=None, repr=False)
    maxwell_residual: float = float("nan")


@dataclass
class MinimizerConfig:
    """Settings for :func:`minimize_energy`.

    Attributes
    ----------
    max_iters : int
        Cap on accepted steps.
    grad_tol : float
        Stop when ``|g| <= grad_tol * (|2 beta curl curl A| + |2 J|)``.
    abs_tol : float
        Absolute floor on ``|g|`` (L2 norm).
    initial_step : float
        Largest nodal change of ``A`` on the first (steepest descent) step.
    shrink : float
        Backtracking factor.
    armijo : float
        Sufficient-decrease constant.
    max_backtracks : int
        Trial steps per iteration before giving up.
    history : int
        Number of L-BFGS correction pairs.
    coulomb : bool
        Keep iterates divergence free (seed and every search direction are
        projected).
    seed : str or VectorField
        ``'zero'``, ``'constant'``, ``'random'`` or an explicit field.
    seed_amplitude : float
        Field strength for the ``'constant'`` and ``'random'`` seeds.
    rng_seed : int
    solver_tol : float
        Tolerance handed to the eigensolver.
    precondition : bool
        Use ``(2 beta (-Laplacian) + shift)^{-1}`` (Neumann, via DCT) as the
        initial inverse Hessian of L-BFGS.
    precond_shift : float
        The ``shift`` above; roughly the curvature of the trace term.
    """

    max_iters: int = 60
    grad_tol: float = 1e-3
    abs_tol: float = 1e-10
    initial_step: float = 0.05
    shrink: float = 0.5
    armijo: float = 1e-4
    max_backtracks: int = 30
    history: int = 8
    coulomb: bool = False
    seed: object = "zero"
    seed_amplitude: float = 0.1
    rng_seed: int = 0
    solver_tol: float = 1e-10
    precondition: bool = True
    precond_shift: float = 0.05

    def __post_init__(self):
        if self.grad_tol <= 0 or self.abs_tol <= 0 or self.solver_tol <= 0:
            raise ValueError("tolerances must be positive")
        if not 0 < self.shrink < 1:
            raise ValueError("shrink factor must lie in (0, 1)")
        if self.max_iters < 0 or self.history < 1:
            raise ValueError("max_iters must be >= 0 and history >= 1")


# ------------------------------------------------------------------ helpers

def constant_field_potential(grid: Grid3, B) -> VectorField:
    """Symmetric gauge ``A = B x r / 2`` for a constant field ``B``."""
    B = np.asarray(B, dtype=float)
    X, Y, Z = grid.mesh()
    r = np.stack([X, Y, Z])
    return VectorField(grid, 0.5 * np.cross(B, r, axis=0))


def _envelope(grid: Grid3, radius: float) -> np.ndarray:
    r2 = grid.radius() ** 2 / radius**2
    out = np.zeros(grid.shape)
    inside = r2 < 1
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - r2[inside]))
    return out


def random_smooth_field(grid: Grid3, amplitude: float = 1.0, seed: int = 0, modes: int = 4,
                        radius: float | None = None, divergence_free: bool = False) -> VectorField:
    """Smooth random vector field with compact support inside the box.

    A few random Fourier modes times a C-infinity bump of the given radius
    (default ``0.7 L``). With ``divergence_free`` the curl of such a field is
    returned instead.
    """
    rng = np.random.default_rng(seed)
    radius = radius or 0.7 * grid.L
    X, Y, Z = grid.mesh()
    env = _envelope(grid, radius)
    vals = np.zeros((3,) + grid.shape)
    for c in range(3):
        for _ in range(modes):
            k = rng.normal(scale=1.5 / radius, size=3)
            phase = rng.uniform(0, 2 * np.pi)
            vals[c] += rng.normal() * np.cos(k[0] * X + k[1] * Y + k[2] * Z + phase)
    F = VectorField(grid, vals * env)
    if divergence_free:
        F = curl(F)
    scale = np.abs(F.values).max()
    return F * (amplitude / scale) if scale > 0 else F


def _seed_field(grid: Grid3, config: MinimizerConfig) -> VectorField:
    seed = config.seed
    if isinstance(seed, VectorField):
        return seed
    if seed == "zero":
        return VectorField.zeros(grid)
    if seed == "constant":
        return constant_field_potential(grid, (0.0, 0.0, config.seed_amplitude))
    if seed == "random":
        return random_smooth_field(grid, config.seed_amplitude, config.rng_seed, divergence_free=True)
    raise ValueError(f"unknown seed {seed!r}")


# ------------------------------------------------------------------- energy

def _spec(kind, h, V, A) -> HamiltonianSpec:
    return HamiltonianSpec(kind, h, V, A)


def total_energy(kind: str, beta: float, h: float, V: ScalarField, A: VectorField | None = None,
                 tol: float = 1e-10, **solver) -> EnergyReport:
    """``tr(T_h(A) - V)_- + beta int |curl A|^2``.

    The field energy uses the lattice (plaquette) field, the same field the
    link phases and the Zeeman term see. ``beta = inf`` is the non-magnetic
    problem: ``A`` is ignored and set to 0.
    """
    kind = normalize_kind(kind)
    if not (beta > 0):
        raise ValueError(f"beta must be positive (or inf), got {beta}")
    if np.isinf(beta) or A is None:
        A = None
    ns = negative_spectrum(_spec(kind, h, V, A), tol=tol, **solver)
    fe = 0.0 if A is None else lattice_field_energy(A, beta)
    return EnergyReport(
        trace_negative=ns.sum_negative,
        field_energy=fe,
        total=ns.sum_negative + fe,
        beta=beta,
        h=h,
        kappa=beta * h,
        eigenvalues=ns.eigenvalues,
        converged=ns.converged,
        ambiguous=ns.ambiguous,
        spectrum=ns,
    )


def _field_derivative(A: VectorField, beta: float) -> np.ndarray:
    """Derivative of the lattice field energy with respect to nodal A."""
    grid = A.grid
    plaq, w, _ = lattice_curl_matrices(grid)
    B = plaq @ A.flat()
    return (2.0 * beta * (plaq.T @ (w * B))).reshape((3,) + grid.shape)


def energy_and_gradient(kind: str, beta: float, h: float, V: ScalarField, A: VectorField,
                        tol: float = 1e-10, **solver) -> tuple[EnergyReport, VectorField, dict]:
    """Energy report, L2 gradient and its two parts.

    Returns
    -------
    report : EnergyReport
    g : VectorField
        ``(1/a^3) dE/dA``.
    parts : dict
        ``'field'`` (``2 beta curl^T curl A``) and ``'current'`` (``J``) as arrays.
    """
    report = total_energy(kind, beta, h, V, A, tol=tol, **solver)
    grid = V.grid
    vol = grid.cell_volume
    spec = _spec(normalize_kind(kind), h, V, A)
    field_part = _field_derivative(A, beta) / vol
    if report.spectrum.count:
        J = -trace_derivative(report.spectrum.projector, spec) / (2.0 * vol)
    else:
        J = np.zeros_like(field_part)
    g = field_part - CURRENT_COUPLING * J
    return report, VectorField(grid, g), {"field": field_part, "current": J}


def energy_gradient(kind: str, beta: float, h: float, V: ScalarField, A: VectorField,
                    tol: float = 1e-10, **solver) -> VectorField:
    """L2 gradient ``2 beta curl curl A - 2 J`` of the total energy.

    Raises
    ------
    RuntimeError
        If an eigenvalue sits within ``10 tol`` of the cut, where the trace
        is not differentiable.
    """
    report, g, _ = energy_and_gradient(kind, beta, h, V, A, tol=tol, **solver)
    if report.ambiguous:
        raise RuntimeError("eigenvalue at the spectral cut: gradient is unreliable")
    return g


def _l2(values: np.ndarray, grid: Grid3) -> float:
    return float(np.sqrt(np.sum(values**2) * grid.cell_volume))


def maxwell_residual(parts: dict, grid: Grid3) -> float:
    """``|2 beta curl curl A - c_J J| / |c_J J|`` in L2."""
    cj = CURRENT_COUPLING * parts["current"]
    denom = _l2(cj, grid)
    return _l2(parts["field"] - cj, grid) / denom if denom > 0 else float("inf")


# ---------------------------------------------------------------- minimizer

def _neumann_preconditioner(grid: Grid3, beta: float, shift: float):
    """``v -> (2 beta (-Laplacian) + shift)^{-1} v`` per component, Neumann faces."""
    k = np.arange(grid.n)
    lam1 = 2.0 * (1.0 - np.cos(np.pi * k / (grid.n - 1))) / grid.a**2
    lam = lam1[:, None, None] + lam1[None, :, None] + lam1[None, None, :]
    denom = 2.0 * beta * lam + shift

    def apply(v: np.ndarray) -> np.ndarray:
        comps = v.reshape((3,) + grid.shape)
        out = np.empty_like(comps)
        for c in range(3):
            out[c] = idctn(dctn(comps[c], type=1) / denom, type=1)
        return out.reshape(-1)

    return apply


def _lbfgs_direction(G: np.ndarray, pairs: list, precond=None) -> np.ndarray:
    precond = precond or (lambda v: v)
    q = G.copy()
    alphas = []
    for s, y in reversed(pairs):
        rho = 1.0 / np.dot(y, s)
        alpha = rho * np.dot(s, q)
        q -= alpha * y
        alphas.append((rho, alpha))
    s, y = pairs[-1]
    Py = precond(y)
    q = precond(q) * (np.dot(s, y) / np.dot(y, Py))
    for (s, y), (rho, alpha) in zip(pairs, reversed(alphas)):
        q += (alpha - rho * np.dot(y, q)) * s
    return -q


def minimize_energy(kind: str, beta: float, h: float, V: ScalarField,
                    config: MinimizerConfig | None = None, **solver) -> tuple[VectorField, EnergyReport]:
    """Minimize the total energy over ``A`` with preconditioned L-BFGS.

    Steps are accepted only on sufficient decrease of the energy itself
    (never on gradient information alone), which keeps the iteration
    monotone across eigenvalue crossings; the returned ``A`` is therefore
    the best one seen. With ``config.coulomb`` the search runs over
    ``A = P u`` with ``P`` the Coulomb projection, using the reduced
    gradient ``P^T g``. The report's ``log`` lists every accepted step and
    ``report.converged`` tells whether the gradient test was met.
    """
    config = config or MinimizerConfig()
    grid = V.grid
    vol = grid.cell_volume
    kind = normalize_kind(kind)
    if np.isinf(beta):
        report = total_energy(kind, beta, h, V, None, tol=config.solver_tol, **solver)
        report.log.append(_log_row(0, report, 0.0, 0.0, "noninteracting"))
        return VectorField.zeros(grid), report

    shape = (3,) + grid.shape
    if config.coulomb:
        def lift(u):
            return coulomb_project(VectorField(grid, u.reshape(shape))).flat()

        def reduce(G):
            return coulomb_adjoint(VectorField(grid, G.reshape(shape))).flat()
    else:
        def lift(u):
            return u

        def reduce(G):
            return G

    def evaluate(x):
        rep, g, parts = energy_and_gradient(kind, beta, h, V, VectorField(grid, x.reshape(shape)),
                                            tol=config.solver_tol, **solver)
        scale = _l2(parts["field"], grid) + _l2(CURRENT_COUPLING * parts["current"], grid)
        return rep, reduce(g.values.reshape(-1) * vol), parts, scale

    precond = (_neumann_preconditioner(grid, beta, config.precond_shift)
               if config.precondition else (lambda v: v))

    def steepest(G):
        d = -precond(G)
        return d * (config.initial_step / np.abs(d).max())

    def done(G, scale):
        gnorm = _l2(G / vol, grid)
        return gnorm <= config.grad_tol * scale or gnorm <= config.abs_tol

    x = lift(_seed_field(grid, config).flat().copy())
    rep, G, parts, scale = evaluate(x)
    log = [_log_row(0, rep, 0.0, _l2(G / vol, grid), "ambiguous" if rep.ambiguous else "")]
    pairs: list = []
    converged = done(G, scale)
    for it in range(1, config.max_iters + 1):
        if converged:
            break
        d = _lbfgs_direction(G, pairs, precond) if pairs and not rep.ambiguous else steepest(G)
        slope = float(np.dot(G, d))
        if slope >= 0:
            pairs.clear()
            d = steepest(G)
            slope = float(np.dot(G, d))
        dx = lift(d)
        step = 1.0
        accepted = None
        for _ in range(config.max_backtracks):
            trial = x + step * dx
            t_rep, t_G, t_parts, t_scale = evaluate(trial)
            if t_rep.total <= rep.total + config.armijo * step * slope:
                accepted = (trial, t_rep, t_G, t_parts, t_scale)
                break
            step *= config.shrink
        if accepted is None:
            log.append(_log_row(it, rep, 0.0, _l2(G / vol, grid), "line-search-failed"))
            break
        trial, t_rep, t_G, t_parts, t_scale = accepted
        s_vec, y_vec = step * d, t_G - G
        if np.dot(s_vec, y_vec) > 1e-12 * np.linalg.norm(s_vec) * np.linalg.norm(y_vec):
            pairs.append((s_vec, y_vec))
            if len(pairs) > config.history:
                pairs.pop(0)
        x = trial
        rep, G, parts, scale = t_rep, t_G, t_parts, t_scale
        converged = done(G, scale)
        log.append(_log_row(it, rep, step, _l2(G / vol, grid), "ambiguous" if rep.ambiguous else ""))
    rep.log = log
    rep.converged = bool(converged and rep.converged)
    rep.maxwell_residual = maxwell_residual(parts, grid) if rep.spectrum.count else 0.0
    return VectorField(grid, x.reshape(shape)), rep


def _log_row(it, rep: EnergyReport, step, gnorm, flags) -> dict:
    return {"iter": it, "total": rep.total, "trace_negative": rep.trace_negative,
            "field_energy": rep.field_energy, "step": step, "grad_norm": gnorm, "flags": flags}


def write_log(report: EnergyReport, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=LOG_COLUMNS)
        w.writeheader()
        for row in report.log:
            w.writerow({k: (repr(float(v)) if isinstance(v, float) else v) for k, v in row.items()})


# ------------------------------------------------------------ gauge toolkit

@functools.lru_cache(maxsize=8)
def _poisson_factors(n: int, a: float):
    # div(grad eta) on interior nodes with eta = 0 on the boundary is a
    # Kronecker sum of one 1-D matrix; diagonalize that matrix once.
    D = _diff_1d(n, a).toarray()
    M = (D @ D)[1:-1, 1:-1]
    lam, S = np.linalg.eig(M)
    if np.abs(lam.imag).max() > 1e-8 * np.abs(lam).max():
        raise RuntimeError("Poisson operator has complex spectrum")
    S = S.real
    return lam.real, S, np.linalg.inv(S)


def _poisson_solve(rhs: np.ndarray, grid: Grid3) -> np.ndarray:
    lam, S, Si = _poisson_factors(grid.n, grid.a)
    y = np.einsum("ia,jb,kc,abc->ijk", Si, Si, Si, rhs, optimize=True)
    y /= lam[:, None, None] + lam[None, :, None] + lam[None, None, :]
    return np.einsum("ia,jb,kc,abc->ijk", S, S, S, y, optimize=True)


def coulomb_project(A: VectorField) -> VectorField:
    """Remove the gradient part of ``A``: return ``A - grad eta`` with zero divergence.

    ``eta`` vanishes on the boundary and solves ``div grad eta = div A`` at
    every interior node, using the same central stencils as
    :func:`~mplab.fields.divergence`, so the returned field is divergence
    free on the interior to round-off and its curl is unchanged.
    """
    grid = A.grid
    rhs = divergence(A).values[1:-1, 1:-1, 1:-1]
    eta = np.zeros(grid.shape)
    eta[1:-1, 1:-1, 1:-1] = _poisson_solve(rhs, grid)
    out = A - gradient(ScalarField(grid, eta))
    resid = np.abs(divergence(out).values[1:-1, 1:-1, 1:-1]).max()
    if resid > 1e-8 * max(1.0, np.abs(rhs).max()):
        raise RuntimeError(f"Poisson solve left divergence {resid:.3e}")
    return out


def coulomb_adjoint(G: VectorField) -> VectorField:
    """Transpose of :func:`coulomb_project` as a linear map (for reduced gradients)."""
    grid = G.grid
    lam, S, Si = _poisson_factors(grid.n, grid.a)
    flat = G.flat()
    # grad^T restricted to interior nodes
    r = sum(derivative_matrix(grid, j).T @ flat[j * grid.size:(j + 1) * grid.size] for j in range(3))
    r = r.reshape(grid.shape)[1:-1, 1:-1, 1:-1]
    y = np.einsum("ai,bj,ck,abc->ijk", S, S, S, r, optimize=True)
    y /= lam[:, None, None] + lam[None, :, None] + lam[None, None, :]
    z = np.einsum("ai,bj,ck,abc->ijk", Si, Si, Si, y, optimize=True)
    eta = np.zeros(grid.shape)
    eta[1:-1, 1:-1, 1:-1] = z
    div_t = np.concatenate([derivative_matrix(grid, j).T @ eta.reshape(-1) for j in range(3)])
    return VectorField(grid, (flat - div_t).reshape((3,) + grid.shape))


def gauge_transform(A: VectorField, eta: ScalarField, psi: SpinorField | None, h: float):
    """``(A + grad eta, exp(-i eta / h) psi)``.

    The pair describes the same physics. On the lattice the equivalence is
    exact when ``eta`` is at most quadratic in each coordinate (then central
    differences reproduce the link differences exactly); for general
    ``eta`` use :meth:`HamiltonianSpec.gauge_transformed`, which acts on the
    link phases directly.
    """
    A2 = A + gradient(eta)
    if psi is None:
        return A2, None
    phase = np.exp(-1j * eta.values / h)
    if isinstance(psi, SpinorField):
        return A2, SpinorField(psi.grid, phase * psi.values)
    return A2, phase * np.asarray(psi)
