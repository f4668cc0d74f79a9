"""Explicit Pauli zero modes and the trial states built from them.

The zero modes pull back a two-dimensional flux profile through the Hopf map
``Phi(x) = 2 (x3 + i(|x|^2/4 - 1)) / (x1 + i x2)``. A radial profile ``g`` on
the plane with ``(2 pi)^-1 int g omega = m + 1/2`` yields a spinor ``psi``
decaying like ``|x|^(-m-1)`` whose magnetic field has compact support. All
evaluators here work in units with ``h = 1`` at unit length scale ("natural
coordinates"); semiclassical states are obtained by scaling.

Point arrays carry the Cartesian components on the first axis, shape
``(3, ...)``, like :class:`VectorField` values.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate
from scipy.interpolate import CubicSpline

from .fields import Grid3, ScalarField, SpinorField, VectorField, curl, field_energy, gradient, interior_mask
from .hamiltonian import PAULI, LinkPhases, dirac_apply

__all__ = [
    "FluxProfile",
    "ZeroModeFamily",
    "Recovery",
    "TrialState",
    "PackedProjector",
    "ProbeReport",
    "hopf_map",
    "hopf_jacobian",
    "log_potential",
    "area_density",
    "build_zero_mode",
    "loss_yau_mode",
    "recover_vector_potential",
    "zero_mode_residual",
    "cutoff",
    "cutoff_derivative",
    "build_trial_state",
    "trial_family",
    "decay_index",
    "PackedCube",
    "calibrate_kappa2",
    "pack_trial_projector",
    "instability_probe",
]

PROBE_RADII = (10.0, 20.0, 40.0, 80.0)
# polar angles of the decay probes; the x3 axis is avoided because modes with
# m >= 2 vanish there identically
PROBE_ANGLES = (np.pi / 4, np.pi / 3, np.pi / 2, 2 * np.pi / 3)


def _points(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[0] != 3:
        raise ValueError("points need their three coordinates on the first axis")
    return x


# ------------------------------------------------------------------ profile

def area_density(s):
    """Density of the reference area form ``omega = (1/4)(1 + |z|^2/4)^-2 dx dy``."""
    s = np.asarray(s, dtype=float)
    return 0.25 / (1.0 + 0.25 * s * s) ** 2


def _bump(t):
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    inside = np.abs(t) < 1.0
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - t[inside] ** 2))
    return out


@dataclass(frozen=True, eq=False)
class FluxProfile:
    """Radial bump ``g(z) = amplitude * exp(1 - 1/(1 - (|z|/radius)^2))``.

    The amplitude is fixed by ``(2 pi)^-1 int g omega = m + 1/2``. The
    enclosed flux ``M(s) = int_{|z|<s} g omega`` and the outer logarithmic
    moment ``T(s) = int_{|z|>s} ln|z|^2 g omega / (2 pi)`` are tabulated once,
    which gives the logarithmic potential of ``g omega`` in closed form
    (Newton's theorem for radial measures).

    Parameters
    ----------
    m : int
        Decay index, at least 1.
    radius : float
        Support radius ``r_g`` of the bump.
    """

    m: int
    radius: float = 3.0
    amplitude: float = field(init=False)
    _tables: tuple = field(init=False, repr=False)

    def __post_init__(self):
        if int(self.m) != self.m or self.m < 1:
            raise ValueError("decay index m must be a positive integer")
        if not self.radius > 0 or not np.isfinite(self.radius):
            raise ValueError("profile radius must be positive and finite")
        rg = float(self.radius)
        unit, _ = integrate.quad(lambda r: _bump(r / rg) * area_density(r) * 2 * np.pi * r, 0.0, rg,
                                 epsabs=1e-14, epsrel=1e-13, limit=200)
        amp = 2 * np.pi * (self.m + 0.5) / unit
        object.__setattr__(self, "amplitude", amp)
        s = rg * (0.5 - 0.5 * np.cos(np.linspace(0.0, np.pi, 8001)))
        dens = amp * _bump(s / rg) * area_density(s)
        enclosed = integrate.cumulative_simpson(2 * np.pi * s * dens, x=s, initial=0.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            logw = np.where(s > 0, np.log(s * s) * s * dens, 0.0)
        cum = integrate.cumulative_simpson(logw, x=s, initial=0.0)
        outer = cum[-1] - cum
        object.__setattr__(self, "_tables", (CubicSpline(s, enclosed), CubicSpline(s, outer),
                                             float(enclosed[-1])))

    def g(self, s):
        """Profile value at ``|z| = s``."""
        return self.amplitude * _bump(np.asarray(s, dtype=float) / self.radius)

    def density(self, s):
        """Density of ``g omega`` with respect to ``dx dy``."""
        return self.g(s) * area_density(s)

    def flux(self) -> float:
        """``(2 pi)^-1 int g omega`` by adaptive quadrature."""
        val, _ = integrate.quad(lambda r: self.density(r) * 2 * np.pi * r, 0.0, self.radius,
                                epsabs=1e-14, epsrel=1e-13, limit=200)
        return val / (2 * np.pi)

    def enclosed(self, s):
        """``M(s) = int_{|z|<s} g omega``."""
        s = np.asarray(s, dtype=float)
        spline, _, total = self._tables
        return np.where(s >= self.radius, total, spline(np.minimum(s, self.radius)))

    def outer_moment(self, s):
        """``T(s) = int_{|z|>s} ln|z|^2 g omega / (2 pi)``."""
        s = np.asarray(s, dtype=float)
        _, spline, _ = self._tables
        return np.where(s >= self.radius, 0.0, spline(np.minimum(s, self.radius)))

    def potential(self, s):
        """``pi^-1 int ln|z - z'|^2 g(z') omega(z')`` at ``|z| = s``."""
        s = np.asarray(s, dtype=float)
        with np.errstate(divide="ignore"):
            lg = np.where(s > 0, np.log(np.where(s > 0, s * s, 1.0)), 0.0)
        return (self.enclosed(s) * lg + 2 * np.pi * self.outer_moment(s)) / np.pi

    def f(self, s):
        """Planar zero-mode amplitude ``(1/2)(4 + s^2)^(3/4) exp(-potential/4)``."""
        s = np.asarray(s, dtype=float)
        return 0.5 * (4.0 + s * s) ** 0.75 * np.exp(-0.25 * self.potential(s))

    def log_slope(self, s):
        """``f'(s) / (s f(s))``, finite at ``s = 0``."""
        s = np.asarray(s, dtype=float)
        small = s < 1e-6
        ss = np.where(small, 1.0, s)
        ratio = np.where(small, np.pi * self.density(0.0), self.enclosed(ss) / (ss * ss))
        return 1.5 / (4.0 + s * s) - ratio / (2 * np.pi)


def log_potential(profile: FluxProfile, z: complex, density=None, tol: float = 1e-11) -> float:
    """Logarithmic potential ``pi^-1 int ln|z - z'|^2 mu(z')`` by 2-D adaptive quadrature.

    Parameters
    ----------
    profile : FluxProfile
    z : complex
        Evaluation point.
    density : callable, optional
        Radial density ``mu(|z'|)`` with respect to ``dx dy``. Defaults to the
        net density ``(g - 1) omega``, whose total flux is ``2 pi m``.
    tol : float
        Absolute tolerance of each nested quadrature.
    """
    if density is None:
        def density(r):
            return profile.density(r) - area_density(r)
    z = complex(z)
    rz, az = abs(z), np.angle(z)

    def ring(r):
        # angular average of ln|z - r e^{it}|^2; log singular only at r = |z|
        fn = lambda t: np.log(rz * rz + r * r - 2 * rz * r * np.cos(t - az) + 1e-300)
        pts = [az % (2 * np.pi)] if abs(r - rz) < 1e-12 * max(1.0, rz) else None
        val, _ = integrate.quad(fn, 0.0, 2 * np.pi, points=pts, epsabs=tol, limit=200)
        return val

    def radial(r):
        return ring(r) * density(r) * r

    breaks = sorted({0.0, rz, profile.radius} - {np.inf})
    total = 0.0
    for lo, hi in zip(breaks[:-1], breaks[1:]):
        if hi > lo:
            total += integrate.quad(radial, lo, hi, epsabs=tol, limit=200)[0]
    total += integrate.quad(radial, breaks[-1], np.inf, epsabs=tol, limit=400)[0]
    return total / np.pi


# ------------------------------------------------------------------ Hopf map

def hopf_map(x):
    """Stereographic Hopf map ``2 (x3 + i(|x|^2/4 - 1)) / (x1 + i x2)``.

    Points on the ``x3`` axis map to complex infinity.
    """
    x = _points(x)
    num = 2.0 * (x[2] + 1j * (0.25 * np.sum(x * x, axis=0) - 1.0))
    den = x[0] + 1j * x[1]
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(den == 0, complex(np.inf, 0.0), num / np.where(den == 0, 1.0, den))
    return complex(out) if out.ndim == 0 else out


def hopf_jacobian(x) -> np.ndarray:
    """Complex partial derivatives ``d Phi / d x_j``, shape ``(3, ...)``."""
    x = _points(x)
    num = 2.0 * (x[2] + 1j * (0.25 * np.sum(x * x, axis=0) - 1.0))
    den = x[0] + 1j * x[1]
    dnum = (1j * x[0], 1j * x[1], 2.0 + 1j * x[2])
    dden = (1.0, 1j, 0.0)
    return np.stack([(dnum[j] * den - num * dden[j]) / den**2 for j in range(3)])


# ------------------------------------------------------------ zero modes

def _spin_frame(x):
    """Unnormalized ``(1 + (i/2) sigma . x) (1, 0)^T`` and its derivatives."""
    up = 1.0 + 0.5j * x[2]
    dn = 0.5j * (x[0] + 1j * x[1])
    eta = np.stack([up, dn])
    z = np.zeros_like(up)
    deta = np.stack([np.stack([z, 0.5j + z]), np.stack([z, -0.5 + z]), np.stack([0.5j + z, z])])
    return eta, deta


def _spin(psi):
    """``psi^dagger sigma psi`` for spinors of shape ``(2, ...)``."""
    cross = np.conj(psi[0]) * psi[1]
    return np.stack([2 * cross.real, 2 * cross.imag, np.abs(psi[0]) ** 2 - np.abs(psi[1]) ** 2])


@dataclass(frozen=True, eq=False)
class ZeroModeFamily:
    """Analytic zero mode ``psi`` of ``sigma . (-i grad + A)`` and its fields.

    ``psi(x) = (1 + |y|^2/4)^(-3/2) f(|Phi(y)|) (1 + (i/2) sigma . y) (1, 0)^T``
    with ``y = x / scale``. ``profile=None`` stands for the constant profile
    ``g = 3`` (``m = 1``), for which ``f`` is constant and the mode is the
    classical Loss–Yau state. The mode is not normalized.

    Modes with ``m >= 2`` vanish to order ``m - 1`` on the ``x3`` axis. They
    carry the phase ``((x1 + i x2)/rho)^(m-1)``, which puts the vector
    potential in the gauge where it stays bounded near the axis.
    """

    m: int
    profile: FluxProfile | None = None
    scale: float = 1.0
    norm2: float = field(init=False, repr=False)
    decay_constant: float = field(init=False)

    def __post_init__(self):
        if self.profile is not None and self.profile.m != self.m:
            raise ValueError("profile decay index does not match m")
        if self.profile is None and self.m != 1:
            raise ValueError("the constant profile carries m = 1")
        object.__setattr__(self, "norm2", self.scale**3 * _natural_norm2(self))
        object.__setattr__(self, "decay_constant", self._decay_constant())

    @property
    def radius(self) -> float:
        """Support radius of the planar profile (``inf`` for the constant profile)."""
        return np.inf if self.profile is None else self.profile.radius

    @property
    def support_radius(self) -> float:
        """Radius of the smallest ball around 0 containing the magnetic field."""
        if self.profile is None:
            return np.inf
        # |Phi| <= r_g  <=>  (1 + r^2/4)^2 <= (1 + r_g^2/4) rho^2, and rho <= r
        c = math.sqrt(1.0 + 0.25 * self.profile.radius**2)
        return self.scale * 2.0 * (c + math.sqrt(c * c - 1.0))

    # natural-coordinate evaluators -------------------------------------
    def _amplitude(self, y):
        s = np.abs(hopf_map(y)) if self.profile is not None else None
        r2 = np.sum(y * y, axis=0)
        conf = (1.0 + 0.25 * r2) ** -1.5
        if self.profile is None:
            return conf, s
        return conf * self.profile.f(s), s

    def _winding(self, y):
        # (x1 + i x2)^(m-1) / rho^(m-1): removes the vortex line on the x3 axis
        if self.m == 1:
            return 1.0, None
        rho2 = y[0] ** 2 + y[1] ** 2
        with np.errstate(invalid="ignore", divide="ignore"):
            u = (y[0] + 1j * y[1]) / np.sqrt(rho2)
            dphase = np.stack([-y[1] / rho2, y[0] / rho2, np.zeros_like(rho2)])
        u = np.where(rho2 > 0, u, 1.0)
        dphase = np.where(rho2 > 0, dphase, 0.0)
        return u ** (self.m - 1), 1j * (self.m - 1) * dphase

    def _psi_nat(self, y):
        amp, _ = self._amplitude(y)
        eta, _ = _spin_frame(y)
        phase, _ = self._winding(y)
        return amp * phase * eta

    def _grad_nat(self, y):
        r2 = np.sum(y * y, axis=0)
        q = 1.0 + 0.25 * r2
        eta, deta = _spin_frame(y)
        if self.profile is None:
            amp = q**-1.5
            dlog = np.stack([-0.75 * y[j] / q for j in range(3)])
        else:
            phi = hopf_map(y)
            s = np.abs(phi)
            amp = q**-1.5 * self.profile.f(s)
            k = self.profile.log_slope(s)
            with np.errstate(invalid="ignore"):
                J = hopf_jacobian(y)
                ds = np.real(np.conj(phi) * J)  # s * grad s
            ds = np.where(np.isfinite(ds), ds, 0.0)
            dlog = np.stack([-0.75 * y[j] / q + k * ds[j] for j in range(3)])
        phase, dphase = self._winding(y)
        if dphase is not None:
            dlog = dlog + dphase
        return amp * phase * np.stack([dlog[j] * eta + deta[j] for j in range(3)])

    def _potential_nat(self, y):
        psi = self._psi_nat(y)
        dpsi = self._grad_nat(y)
        dens = np.sum(np.abs(psi) ** 2, axis=0)
        ds = np.stack([2 * np.real(np.einsum("a...,lab,b...->l...", np.conj(psi), PAULI, dpsi[j]))
                       for j in range(3)])  # ds[j][l] = d_j s_l
        curl_s = np.stack([ds[1][2] - ds[2][1], ds[2][0] - ds[0][2], ds[0][1] - ds[1][0]])
        cur = np.imag(np.sum(np.conj(psi)[None] * dpsi, axis=1))
        with np.errstate(invalid="ignore", divide="ignore"):
            return -(cur + 0.5 * curl_s) / dens

    def _field_nat(self, y):
        r2 = np.sum(y * y, axis=0)
        eta, _ = _spin_frame(y)
        w = _spin(eta) / np.sum(np.abs(eta) ** 2, axis=0)
        g = 3.0 if self.profile is None else self.profile.g(np.abs(hopf_map(y)))
        return -g * (1.0 + 0.25 * r2) ** -2 * w

    # physical evaluators ------------------------------------------------
    def psi(self, x) -> np.ndarray:
        """Spinor values, shape ``(2, ...)``."""
        return self._psi_nat(_points(x) / self.scale)

    def grad_psi(self, x) -> np.ndarray:
        """``d psi / d x_j`` stacked on the first axis, shape ``(3, 2, ...)``."""
        return self._grad_nat(_points(x) / self.scale) / self.scale

    def xi(self, x) -> np.ndarray:
        """Unit spinor field ``(1 + |x|^2/4)^(-1/2) (1 + (i/2) sigma . x) (1, 0)^T``."""
        x = _points(x)
        eta, _ = _spin_frame(x)
        return eta / np.sqrt(1.0 + 0.25 * np.sum(x * x, axis=0))

    def phi(self, x):
        return hopf_map(_points(x) / self.scale)

    def vector_potential(self, x, h: float = 1.0) -> np.ndarray:
        """Vector potential making ``psi`` a zero mode of ``sigma . (-i h grad + A)``.

        Obtained pointwise from ``A = -h (Im(psi^dag grad psi) + curl(psi^dag sigma psi)/2) / |psi|^2``.
        Undefined (``nan``) exactly on the ``x3`` axis when ``m >= 2``.
        """
        return h * self._potential_nat(_points(x) / self.scale) / self.scale

    def magnetic_field(self, x, h: float = 1.0) -> np.ndarray:
        """``curl A = -g(|Phi|) (1 + |x|^2/4)^-2 w`` with ``w`` the spin direction of ``psi``."""
        return h * self._field_nat(_points(x) / self.scale) / self.scale**2

    def dirac_residual(self, x, h: float = 1.0) -> np.ndarray:
        """Pointwise ``sigma . (-i h grad + A) psi`` from the analytic derivatives."""
        x = _points(x)
        psi, dpsi, A = self.psi(x), self.grad_psi(x), self.vector_potential(x, h)
        out = np.zeros_like(psi)
        for j in range(3):
            out += np.einsum("ab,b...->a...", PAULI[j], -1j * h * dpsi[j] + A[j] * psi)
        return out

    def sample(self, grid: Grid3) -> SpinorField:
        """Unnormalized grid samples of ``psi``."""
        return SpinorField(grid, self.psi(np.stack(grid.mesh())))

    def decay_products(self, radii=PROBE_RADII, angles=PROBE_ANGLES) -> np.ndarray:
        """``|psi(x)| |x|^(m+1)`` on probe rays, shape ``(len(angles), len(radii))``."""
        r = np.asarray(radii, dtype=float)[None, :]
        t = np.asarray(angles, dtype=float)[:, None]
        x = np.stack(np.broadcast_arrays(r * np.sin(t), 0.0 * r * t, r * np.cos(t)))
        mag = np.sqrt(np.sum(np.abs(self.psi(x)) ** 2, axis=0))
        return mag * r ** (self.m + 1)

    def decay_spread(self, radii=PROBE_RADII, angles=PROBE_ANGLES) -> float:
        """Largest relative change of ``sup_rays |psi| |x|^(m+1)`` between consecutive radii."""
        sup = self.decay_products(radii, angles).max(axis=0)
        return float(np.max(np.abs(sup[:-1] / sup[1:] - 1.0)))

    def _decay_constant(self) -> float:
        return float(self.decay_products().max())

    def manifest(self) -> str:
        rg = "inf" if self.profile is None else repr(float(self.profile.radius))
        return f"ZM m={self.m} r_g={rg} C={self.decay_constant:.6g}"


def build_zero_mode(m: int, profile: FluxProfile | None = None, scale: float = 1.0,
                    radii=PROBE_RADII, tolerance: float = 0.10) -> ZeroModeFamily:
    """Assemble the zero mode with decay index ``m`` and certify its decay.

    The certificate requires ``sup |psi(x)| |x|^(m+1)`` over the probe rays
    to change by at most ``tolerance`` between consecutive probe radii.

    Raises
    ------
    ValueError
        If the profile is not normalized to ``m + 1/2``.
    RuntimeError
        If the decay certificate fails.
    """
    if profile is None:
        profile = FluxProfile(m)
    if abs(profile.flux() - (m + 0.5)) > 1e-8:
        raise ValueError("flux profile is not normalized to m + 1/2")
    fam = ZeroModeFamily(m, profile, scale)
    spread = fam.decay_spread(radii)
    if not spread <= tolerance:
        raise RuntimeError(f"decay |psi| ~ |x|^-{m + 1} not certified: spread {spread:.3g}")
    return fam


def loss_yau_mode(scale: float = 0.5) -> ZeroModeFamily:
    """Constant-profile mode; the default scale gives ``(1+|x|^2)^(-3/2) (1 + i sigma.x)(1,0)^T``."""
    return ZeroModeFamily(1, None, scale)


# ----------------------------------------------------- axisymmetric quadrature

@functools.lru_cache(maxsize=32)
def _legendre(n: int):
    return np.polynomial.legendre.leggauss(n)


def _gauss(lo: float, hi: float, n: int):
    t, w = _legendre(n)
    return 0.5 * (hi - lo) * t + 0.5 * (hi + lo), 0.5 * (hi - lo) * w


def _radial_nodes(breaks, per: int):
    rs, ws = [], []
    for lo, hi in zip(breaks[:-1], breaks[1:]):
        r, w = _gauss(lo, hi, per)
        rs.append(r)
        ws.append(w)
    return np.concatenate(rs), np.concatenate(ws)


def _sphere_quadrature(fn, breaks, per: int = 48, nang: int = 96, tail: float = 4.0):
    """``int fn(x) dx`` for axisymmetric ``fn`` on R^3 (spherical Gauss rule).

    The last radial interval ``[breaks[-1], inf)`` is mapped by ``r = b / u``.
    """
    r, wr = _radial_nodes(list(breaks), per)
    u, wu = _gauss(0.0, 1.0, per)
    b = breaks[-1]
    r = np.concatenate([r, b / u])
    wr = np.concatenate([wr, wu * b / u**2])
    t, wt = _gauss(0.0, np.pi, nang)
    R, T = np.meshgrid(r, t, indexing="ij")
    x = np.stack([R * np.sin(T), np.zeros_like(R), R * np.cos(T)])
    vals = fn(x)
    return float(np.sum(vals * (2 * np.pi * R**2 * np.sin(T)) * wr[:, None] * wt[None, :]))


def _natural_breaks(fam: ZeroModeFamily):
    if fam.profile is None:
        return [0.0, 1.0, 4.0, 16.0]
    rb = fam.support_radius / fam.scale
    lo = 4.0 / rb
    return [0.0, 0.5 * lo, lo, 2.0, 0.5 * (2.0 + rb), rb, 2 * rb, 8 * rb]


def _natural_norm2(fam: ZeroModeFamily) -> float:
    """``int |psi|^2`` at scale 1."""
    f = lambda y: np.sum(np.abs(fam._psi_nat(y)) ** 2, axis=0)
    return _sphere_quadrature(f, _natural_breaks(fam))


@functools.lru_cache(maxsize=32)
def _natural_field_energy(fam: ZeroModeFamily) -> float:
    f = lambda y: np.sum(fam._field_nat(y) ** 2, axis=0)
    return _sphere_quadrature(f, _natural_breaks(fam), per=64, nang=160)


# ------------------------------------------------------- grid recovery

@dataclass(frozen=True, eq=False)
class Recovery:
    """Vector potential recovered from sampled spinor data.

    ``excluded`` marks nodes where ``|psi|^2`` fell below the threshold; the
    potential is set to zero there and ``residual`` ignores them.
    """

    A: VectorField
    residual: float
    excluded: np.ndarray = field(repr=False)

    @property
    def excluded_count(self) -> int:
        return int(self.excluded.sum())


def zero_mode_residual(psi: SpinorField, A: VectorField, h: float = 1.0, margin: int = 2,
                       mask: np.ndarray | None = None) -> float:
    """``|sigma . (-i h D_A) psi| / |psi|`` with the lattice covariant difference.

    Only nodes at least ``margin`` layers from the boundary are counted, so
    the zero continuation outside the box does not pollute the measurement.
    """
    links = LinkPhases.from_vector_potential(A, h)
    out = dirac_apply(links, psi, h).values
    keep = interior_mask(psi.grid, margin)
    if mask is not None:
        keep = keep & mask
    num = np.sum(np.abs(out[:, keep]) ** 2)
    den = np.sum(np.abs(psi.values[:, keep]) ** 2)
    return float(np.sqrt(num / den))


def recover_vector_potential(psi: SpinorField, h: float = 1.0, threshold: float = 1e-10,
                             margin: int = 2) -> Recovery:
    """Vector potential for which the sampled ``psi`` is (nearly) a zero mode.

    Uses ``A = -h (Im(psi^dag grad psi) + curl(psi^dag sigma psi) / 2) / |psi|^2``
    with grid derivatives, which solves ``sigma . (-i h grad + A) psi = 0``
    pointwise whenever a solution exists. For ``psi = e^{i phi} c`` it
    returns ``-h grad phi``.

    Parameters
    ----------
    psi : SpinorField
    h : float
    threshold : float
        Nodes with ``|psi|^2 < threshold * max |psi|^2`` are excluded.
    margin : int
        Boundary layers ignored by the residual.
    """
    grid = psi.grid
    v = psi.values
    dens = np.sum(np.abs(v) ** 2, axis=0)
    excluded = dens < threshold * dens.max()
    safe = np.where(excluded, 1.0, dens)
    s = _spin(v)
    curl_s = curl(VectorField(grid, s)).values
    phase = np.stack([_phase_gradient(v, safe, grid, j) for j in range(3)])
    A = np.where(excluded, 0.0, -h * (phase + 0.5 * curl_s / safe))
    A = VectorField(grid, A)
    res = zero_mode_residual(psi, A, h, margin, mask=~_grow(excluded))
    return Recovery(A, res, excluded)


def _grid_derivative(values: np.ndarray, grid: Grid3, axis: int) -> np.ndarray:
    return np.gradient(values, grid.a, axis=axis, edge_order=2)


def _phase_gradient(v: np.ndarray, dens: np.ndarray, grid: Grid3, axis: int) -> np.ndarray:
    """``Im(psi^dag d_j psi) / |psi|^2`` from the phases of neighbouring overlaps.

    In the interior this is ``(arg <psi(x), psi(x+e)> + arg <psi(x-e), psi(x)>) / (2a)``,
    second-order accurate and exact for ``psi = e^{i k.x} c``, so the
    recovered links reproduce a linear pure gauge exactly. The boundary
    layers use one-sided derivatives.
    """
    d = np.stack([_grid_derivative(v[c], grid, axis) for c in range(2)])
    out = np.imag(np.sum(np.conj(v) * d, axis=0)) / dens
    lo, hi = [slice(None)] * 3, [slice(None)] * 3
    lo[axis], hi[axis] = slice(0, -1), slice(1, None)
    lo, hi = tuple(lo), tuple(hi)
    link = np.angle(np.sum(np.conj(v[(slice(None),) + lo]) * v[(slice(None),) + hi], axis=0))
    mid = [slice(None)] * 3
    mid[axis] = slice(1, -1)
    out[tuple(mid)] = (link[hi] + link[lo]) / (2 * grid.a)
    return out


def _grow(mask: np.ndarray) -> np.ndarray:
    out = mask.copy()
    for j in range(3):
        out |= np.roll(mask, 1, axis=j) | np.roll(mask, -1, axis=j)
    return out


# ------------------------------------------------------------ trial states

def _smooth_step(t):
    """C-infinity step: 0 for ``t <= 0``, 1 for ``t >= 1``."""
    t = np.clip(np.asarray(t, dtype=float), 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore"):
        a = np.where(t > 0, np.exp(-1.0 / np.where(t > 0, t, 1.0)), 0.0)
        b = np.where(t < 1, np.exp(-1.0 / np.where(t < 1, 1.0 - t, 1.0)), 0.0)
    return a / (a + b)


def cutoff(s):
    """Radial cutoff ``chi(s) = zeta(2(1 - s))``: 1 on ``s <= 1/2``, 0 on ``s >= 1``."""
    return _smooth_step(2.0 * (1.0 - np.asarray(s, dtype=float)))


def cutoff_derivative(s):
    """``chi'(s)``, computed analytically."""
    t = np.clip(2.0 * (1.0 - np.asarray(s, dtype=float)), 0.0, 1.0)
    inside = (t > 0) & (t < 1)
    tt = np.where(inside, t, 0.5)
    a, b = np.exp(-1.0 / tt), np.exp(-1.0 / (1.0 - tt))
    da, db = a / tt**2, -b / (1.0 - tt) ** 2
    dz = (da * b - a * db) / (a + b) ** 2
    return np.where(inside, -2.0 * dz, 0.0)


# integral of chi'(r)^2 r^2 over that of chi(r)^2 r^2 (fallback state)
@functools.lru_cache(maxsize=1)
def _cutoff_ratio() -> float:
    r, w = _radial_nodes([0.0, 0.5, 1.0], 200)
    return float(np.sum(w * cutoff_derivative(r) ** 2 * r * r) / np.sum(w * cutoff(r) ** 2 * r * r))


def _angular_mass(fam: ZeroModeFamily, r: np.ndarray, nang: int = 96) -> np.ndarray:
    """``r^2 int |psi|^2 dOmega / int |psi|^2`` for the natural-scale mode."""
    t, wt = _gauss(0.0, np.pi, nang)
    R, T = np.meshgrid(r, t, indexing="ij")
    x = np.stack([R * np.sin(T), np.zeros_like(R), R * np.cos(T)])
    dens = np.sum(np.abs(fam._psi_nat(x)) ** 2, axis=0)
    return (2 * np.pi * R**2 * np.sin(T) * dens) @ wt / (fam.norm2 / fam.scale**3)


def _cutoff_integrals(fam: ZeroModeFamily, ratio: float, per: int = 64):
    """Leakage ``1 - N^2`` and ``int chi'(ratio |y|)^2 |psi|^2`` for the unit-norm mode."""
    lo, hi = 0.5 / ratio, 1.0 / ratio
    r, w = _gauss(lo, hi, per)
    q = _angular_mass(fam, r)
    leak_in = np.sum(w * (1.0 - cutoff(ratio * r) ** 2) * q)
    kin = np.sum(w * cutoff_derivative(ratio * r) ** 2 * q)
    u, wu = _gauss(0.0, 1.0, per)
    qt = _angular_mass(fam, hi / u)
    leak_out = np.sum(wu * hi / u**2 * qt)
    return float(leak_in + leak_out), float(kin)


@functools.lru_cache(maxsize=16)
def trial_family(m: int, radius: float = 3.0) -> ZeroModeFamily:
    """Natural-scale zero mode used by trial states (decay certified from radius 20)."""
    return build_zero_mode(m, FluxProfile(m, radius), radii=(20.0, 40.0, 80.0, 160.0))


def decay_index(delta: float) -> int:
    """Smallest ``m`` with ``1/(2m) <= delta``."""
    if not 0 < delta <= 0.5:
        raise ValueError("delta must lie in (0, 1/2]")
    return max(1, math.ceil(1.0 / (2.0 * delta) - 1e-9))


@dataclass(frozen=True, eq=False)
class TrialState:
    """Low-energy normalized state supported in the ball ``|x - center| < R``.

    In the zero-mode regime (``beta R <= tau``) the state is the cut-off,
    rescaled zero mode ``chi(|x|/R) l^(-3/2) psi(x/l) / N`` with potential
    ``(h/l) A(x/l)``. Otherwise it is the plain cutoff ``chi(|x|/R)`` with
    ``A = 0``. ``kinetic`` and ``field`` are
    ``int |sigma . (-i h grad + A) psi|^2`` and ``beta int |B|^2``.
    """

    R: float
    ell: float
    delta: float
    beta: float
    h: float
    center: np.ndarray
    m: int
    regime: str
    norm2: float
    kinetic: float
    field: float
    family: ZeroModeFamily | None = field(default=None, repr=False)

    @property
    def energy(self) -> float:
        return self.kinetic + self.field

    @property
    def constant(self) -> float:
        """``energy * R^(1+delta) / (h^2 beta^(1-delta))``, the implied ``C_delta``."""
        return self.energy * self.R ** (1 + self.delta) / (self.h**2 * self.beta ** (1 - self.delta))

    def _local(self, x):
        return _points(x) - np.asarray(self.center, dtype=float).reshape((3,) + (1,) * (np.ndim(x) - 1))

    def psi(self, x) -> np.ndarray:
        y = self._local(x)
        chi = cutoff(np.sqrt(np.sum(y * y, axis=0)) / self.R)
        if self.family is None:
            vol = 4 * np.pi * self.R**3 * self.norm2
            return np.stack([chi, 0 * chi]).astype(complex) / np.sqrt(vol)
        fam = self.family
        amp = chi * self.ell**-1.5 / np.sqrt(self.norm2 * fam.norm2)
        return amp * fam.psi(y / self.ell)

    def vector_potential(self, x) -> np.ndarray:
        y = self._local(x)
        if self.family is None:
            return np.zeros_like(y)
        return self.family.vector_potential(y / self.ell, self.h) / self.ell

    def magnetic_field(self, x) -> np.ndarray:
        y = self._local(x)
        if self.family is None:
            return np.zeros_like(y)
        return self.family.magnetic_field(y / self.ell, self.h) / self.ell**2

    def sample(self, grid: Grid3) -> tuple[SpinorField, VectorField, VectorField]:
        """Grid samples ``(psi, A, B)``; ``psi`` is renormalized on the grid."""
        x = np.stack(grid.mesh())
        psi = SpinorField(grid, self.psi(x)).normalized()
        A = np.nan_to_num(self.vector_potential(x))
        return psi, VectorField(grid, A), VectorField(grid, self.magnetic_field(x))


def build_trial_state(delta: float, beta: float, h: float, R: float, center=(0.0, 0.0, 0.0),
                      tau: float = 0.1, ell: float | None = None, profile_radius: float = 3.0) -> TrialState:
    """Localized Pauli trial state with energy of order ``h^2 beta^(1-delta) R^(-1-delta)``.

    The decay index is the smallest ``m`` with ``1/(2m) <= delta`` and the
    mode scale is ``l = (R / r_B) (beta R / tau)^(1/(2m))``, where ``r_B`` is
    the support radius of the natural-scale field, so that the field stays
    inside the ball and ``l <= R/2``. For ``beta R > tau`` the state falls
    back to ``A = 0`` with energy ``c h^2 / R^2``. Energies use the identity
    ``sigma . (-i h grad + A)(chi psi) = -i h (sigma . grad chi) psi`` for a
    zero mode ``psi``.

    Raises
    ------
    ValueError
        For non-positive parameters or an explicit ``ell > R/2``.
    """
    if min(beta, h, R) <= 0 or tau <= 0:
        raise ValueError("beta, h, R and tau must be positive")
    m = decay_index(delta)
    center = np.asarray(center, dtype=float).copy()
    center.setflags(write=False)
    if beta * R > tau and ell is None:
        k = _cutoff_ratio()
        return TrialState(R, 0.0, delta, beta, h, center, m, "fallback", 1.0, h * h * k / R**2, 0.0)
    fam = trial_family(m, profile_radius)
    rb = fam.support_radius
    if ell is None:
        ell = R / rb * (beta * R / tau) ** (1.0 / (2 * m))
    if ell > 0.5 * R:
        raise ValueError(f"mode scale {ell:g} exceeds R/2 = {0.5 * R:g}")
    leak, kin = _cutoff_integrals(fam, ell / R)
    norm2 = 1.0 - leak
    kinetic = h * h * kin / (R * R * norm2)
    fld = beta * h * h * _natural_field_energy(fam) / ell
    return TrialState(R, ell, delta, beta, h, center, m, "zero-mode", norm2, kinetic, fld, fam)


# ------------------------------------------------------------- packing

def _radius_law(kappa2: float, h: float, kappa: float, vmin, delta: float):
    return kappa2 * h * kappa ** ((1 - delta) / (1 + delta)) * np.asarray(vmin, dtype=float) ** (-1 / (1 + delta))


@functools.lru_cache(maxsize=8)
def calibrate_kappa2(eps: float, tau: float = 0.1, margin: float = 1e-3) -> float:
    """Smallest ball-radius constant giving per-ball energy ``<= -V_min / 2``.

    The ratio ``(kinetic + field) / V_min`` of a ball depends only on
    ``u = beta R``, so the reference set is a dense grid of ``u`` covering
    both regimes (plus the regime boundary). Bisection in ``log kappa2``.
    """
    delta = eps / (3 - eps)
    us = np.concatenate([np.logspace(-10, 2, 25), [tau, tau * (1 + 1e-9)]])

    def worst(k2):
        # V = 1, h = 1: R = k2 kappa^a, u = beta R = kappa R
        out = 0.0
        for u in us:
            kappa = (u / k2) ** ((1 + delta) / 2)
            R = float(_radius_law(k2, 1.0, kappa, 1.0, delta))
            out = max(out, build_trial_state(delta, kappa, 1.0, R, tau=tau).energy)
        return out

    lo, hi = math.log(1e-3), math.log(1e9)
    for _ in range(45):
        mid = 0.5 * (lo + hi)
        if worst(math.exp(mid)) <= 0.5:
            hi = mid
        else:
            lo = mid
    return math.exp(hi) * (1 + margin)


@dataclass(frozen=True, eq=False)
class PackedCube:
    """One strong cube with ``per_axis^3`` identical disjoint balls."""

    corner: np.ndarray
    side: float
    v_min: float
    per_axis: int
    state: TrialState

    @property
    def count(self) -> int:
        return self.per_axis**3

    @property
    def ball_energy(self) -> float:
        """Upper bound on ``<psi, (T - V) psi> + beta int |B|^2`` for each ball."""
        return self.state.energy - self.v_min

    def centers(self) -> np.ndarray:
        """Ball centers, shape ``(count, 3)``."""
        step = self.side / self.per_axis
        k = (np.arange(self.per_axis) + 0.5) * step
        g = np.stack(np.meshgrid(k, k, k, indexing="ij"), axis=-1).reshape(-1, 3)
        return g + self.corner


@dataclass(frozen=True, eq=False)
class PackedProjector:
    """Trial projector ``sum_i |psi_i><psi_i|`` over balls packed into strong cubes.

    Iterates as ``(A, states, upper_bound)``: ``states`` holds one template
    state per strong cube (every ball of a cube is its translate),
    ``upper_bound`` is ``sum_i (energy_i - V_min,i)``, a certified bound on
    the total energy because the balls are disjoint and ``V >= V_min`` on
    each cube. ``fallback`` is ``"weyl"`` when no cube was strong; the bound
    is then the phase-space value for ``A = 0``.
    """

    A: VectorField
    cubes: list
    upper_bound: float
    beta: float
    h: float
    eps: float
    kappa2: float
    weak: int
    fallback: str | None = None

    @property
    def states(self) -> list:
        return [c.state for c in self.cubes]

    @property
    def count(self) -> int:
        return int(sum(c.count for c in self.cubes))

    def __iter__(self):
        return iter((self.A, self.states, self.upper_bound))

    def evaluate(self) -> float:
        """Re-sum the per-ball energies (equals ``upper_bound``)."""
        return float(math.fsum(c.count * c.ball_energy for c in self.cubes))


def pack_trial_projector(V: ScalarField, beta: float, h: float, eps: float,
                         kappa2: float | None = None, tau: float = 0.1) -> PackedProjector:
    """Upper-bound construction: pack localized trial states into cubes of side ``sqrt(h)``.

    Cubes with ``V_min <= sqrt(h) |grad V|_inf`` are skipped. In the others
    balls of radius ``R = kappa2 h kappa^((1-delta)/(1+delta)) V_min^(-1/(1+delta))``
    (``kappa = beta h``, ``delta = eps/(3 - eps)``) are packed on a cubic
    lattice, ``floor(sqrt(h) / (2R))`` per axis.

    Parameters
    ----------
    V : ScalarField
        Sampled potential; the grid must place nodes in every cube.
    beta, h : float
    eps : float
        In ``(0, 1/3)``.
    kappa2 : float, optional
        Ball-radius constant; calibrated from ``eps`` when omitted.
    """
    if not 0 < eps < 1 / 3:
        raise ValueError("eps must lie in (0, 1/3)")
    if beta <= 0 or h <= 0:
        raise ValueError("beta and h must be positive")
    delta = eps / (3 - eps)
    kappa2 = calibrate_kappa2(eps, tau) if kappa2 is None else float(kappa2)
    grid = V.grid
    side = math.sqrt(h)
    ncube = int(math.floor(2 * grid.L / side + 1e-12))
    if ncube < 1:
        raise ValueError("box smaller than one cube")
    if grid.a > side:
        raise ValueError("grid too coarse: cubes contain no nodes")
    ax = grid.axis
    gradV = float(np.sqrt(gradient(V).magnitude2()).max())
    thresh = side * gradV
    kappa = beta * h
    cubes, weak = [], 0
    templates: dict = {}
    for idx in np.ndindex(ncube, ncube, ncube):
        corner = -grid.L + side * np.asarray(idx, dtype=float)
        sel = [np.nonzero((ax >= c - 1e-12) & (ax <= c + side + 1e-12))[0] for c in corner]
        block = V.values[np.ix_(*sel)]
        vmin = float(block.min())
        if vmin <= thresh or vmin <= 0:
            weak += 1
            continue
        R = float(_radius_law(kappa2, h, kappa, vmin, delta))
        k = int(math.floor(side / (2 * R) + 1e-12))
        if k < 1:
            weak += 1
            continue
        key = round(vmin, 15)
        if key not in templates:
            templates[key] = build_trial_state(delta, beta, h, R, tau=tau)
        cubes.append(PackedCube(corner, side, vmin, k, templates[key]))
    if not cubes:
        from .bounds import weyl_value
        A = VectorField.zeros(grid)
        return PackedProjector(A, [], weyl_value(V, "P") / h**3, beta, h, eps, kappa2, weak, "weyl")
    ub = float(math.fsum(c.count * c.ball_energy for c in cubes))
    A = _packed_potential(grid, cubes)
    return PackedProjector(A, cubes, ub, beta, h, eps, kappa2, weak)


def _packed_potential(grid: Grid3, cubes: list) -> VectorField:
    """Sample of the packed vector potential: each ball's potential inside that ball, zero elsewhere.

    Outside the balls the trial field vanishes, so the potential there is a
    pure gauge, chosen to be zero; this sample is diagnostic only.
    """
    x = np.stack(grid.mesh()).reshape(3, -1)
    out = np.zeros_like(x)
    if not cubes:
        return VectorField(grid, out.reshape((3,) + grid.shape))
    side = cubes[0].side
    cell = np.floor((x + grid.L) / side).astype(np.int64)
    nc = int(cell.max()) + 2
    key = (cell[0] * nc + cell[1]) * nc + cell[2]
    order = np.argsort(key, kind="stable")
    skey = key[order]
    for c in cubes:
        st = c.state
        if st.family is None:
            continue
        ci = np.floor((c.corner + grid.L) / side + 0.5).astype(np.int64)
        k0 = (ci[0] * nc + ci[1]) * nc + ci[2]
        lo, hi = np.searchsorted(skey, [k0, k0 + 1])
        if hi == lo:
            continue
        idx = order[lo:hi]
        step = side / c.per_axis
        rel = (x[:, idx] - c.corner[:, None]) / step
        k = np.clip(np.floor(rel), 0, c.per_axis - 1)
        local = x[:, idx] - (c.corner[:, None] + (k + 0.5) * step)
        hit = np.sum(local**2, axis=0) < st.R**2
        if hit.any():
            out[:, idx[hit]] = np.nan_to_num(st.vector_potential(local[:, hit] + st.center[:, None]))
    return VectorField(grid, out.reshape((3,) + grid.shape))


# ------------------------------------------------------ instability probe

@dataclass(frozen=True, eq=False)
class ProbeReport:
    """Energies of scaled zero modes in ``V = c/|x|`` and the fitted ``1/l`` law.

    ``e(l) = kinetic + field - potential``; the fit is ``e = slope / l + offset``.
    ``C1 = field l / (beta h^2)`` and ``C2 = potential l / c`` are averaged over
    ``l``; ``critical_c = beta h^2 C1 / C2`` is where the slope changes sign.
    """

    c: float
    beta: float
    h: float
    ells: np.ndarray
    energies: np.ndarray
    kinetic: np.ndarray
    field: np.ndarray
    potential: np.ndarray
    slope: float
    offset: float
    r2: float
    C1: float
    C2: float

    @property
    def critical_c(self) -> float:
        return self.beta * self.h**2 * self.C1 / self.C2

    @property
    def poor_fit(self) -> bool:
        return not self.r2 >= 0.99

    @property
    def sign(self) -> int:
        return int(np.sign(self.slope))


def _linear_fit(x, y):
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    slope, offset = np.polyfit(x, y, 1)
    pred = slope * x + offset
    ss = np.sum((y - y.mean()) ** 2)
    r2 = 1.0 - np.sum((y - pred) ** 2) / ss if ss > 0 else 1.0
    return float(slope), float(offset), float(r2)


def instability_probe(c: float, beta: float, h: float, ells=(1.0, 1.25, 1.5, 1.75, 2.0),
                      grid: Grid3 | None = None, family: ZeroModeFamily | None = None) -> ProbeReport:
    """Trial energies of the scaled Loss–Yau mode in the Coulomb potential ``c/|x|``.

    For each scale ``l`` the mode ``l^(-3/2) psi(x/l)`` with potential
    ``(h/l) A(x/l)`` is sampled on ``grid`` and normalized there. The kinetic
    term uses the analytic derivatives (it vanishes for a zero mode), the
    potential is capped at ``c/a`` at the origin, and the field energy uses
    trapezoidal quadrature.
    """
    if beta < 0 or h <= 0 or c < 0:
        raise ValueError("need beta >= 0, h > 0 and c >= 0")
    grid = grid or Grid3(48, 8.0)
    family = family or loss_yau_mode()
    x = np.stack(grid.mesh())
    r = grid.radius()
    coul = np.minimum(1.0 / np.where(r > 0, r, grid.a), 1.0 / grid.a)
    ells = np.asarray(ells, dtype=float)
    kin, fld, pot = [], [], []
    for ell in ells:
        y = x / ell
        psi = family.psi(y)
        nrm = np.sqrt(np.sum(np.abs(psi) ** 2) * grid.cell_volume)
        res = family.dirac_residual(y, h) / ell  # sigma.(-ih grad_x + A_l) psi(x/l)
        kin.append(float(np.sum(np.abs(res) ** 2) * grid.cell_volume) / nrm**2)
        pot.append(float(np.sum(coul * np.sum(np.abs(psi) ** 2, axis=0)) * grid.cell_volume) / nrm**2)
        B = family.magnetic_field(y, h) / ell**2
        fld.append(field_energy(VectorField(grid, B), beta) if beta > 0 else 0.0)
    kin, fld, pot = map(np.asarray, (kin, fld, pot))
    energies = kin + fld - c * pot
    slope, offset, r2 = _linear_fit(1.0 / ells, energies)
    C1 = float(np.mean(fld * ells)) / (beta * h * h) if beta > 0 else float(
        np.mean([field_energy(VectorField(grid, family.magnetic_field(x / e, h) / e**2), 1.0) * e
                 for e in ells])) / h**2
    C2 = float(np.mean(pot * ells))
    return ProbeReport(c, beta, h, ells, energies, kin, fld, c * pot, slope, offset, r2, C1, C2)
