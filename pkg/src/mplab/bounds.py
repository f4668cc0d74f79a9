"""Closed-form evaluators of the semiclassical bounds and the inequality checks.

Universal constants that are not known explicitly are set to 1; the
inequality checks extract the smallest constant that makes the sampled
instances hold.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .fields import ScalarField, VectorField, lp_norm_power, field_energy
from .hamiltonian import normalize_kind

__all__ = [
    "BoundReport",
    "StructuralTerms",
    "weyl_value",
    "weyl_constant",
    "lieb_thirring_rhs",
    "stability_lower",
    "oscillator_levels",
    "oscillator_trace",
    "oscillator_trace_closed_form",
    "OSCILLATOR_THRESHOLD",
    "CLOSED_FORM_WINDOW",
    "check_lt_constant",
    "fit_power",
    "write_reports",
]

# spectral cut of the confined oscillator and the B range of its closed form
OSCILLATOR_THRESHOLD = 2.5
CLOSED_FORM_WINDOW = (0.0, 4.0 / 3.0)


@dataclass(frozen=True)
class StructuralTerms:
    """The two terms of a two-term bound (constants set to 1) and their sum."""

    first: float
    second: float

    @property
    def total(self) -> float:
        return self.first + self.second


@dataclass(frozen=True)
class BoundReport:
    """One inequality instance ``lhs >= rhs``.

    ``empirical_C`` is the smallest constant multiplying the structural
    right-hand side that keeps the inequality true (``nan`` if not
    applicable). ``details`` holds per-sample reports for aggregated checks.
    """

    name: str
    lhs: float
    rhs: float
    empirical_C: float = float("nan")
    flags: tuple = ()
    details: tuple = field(default=(), repr=False)

    @property
    def satisfied(self) -> bool:
        return bool(self.lhs >= self.rhs)

    def row(self) -> dict:
        return {"name": self.name, "lhs": repr(float(self.lhs)), "rhs": repr(float(self.rhs)),
                "empirical_C": repr(float(self.empirical_C)), "satisfied": str(self.satisfied).lower()}


def write_reports(reports, path: str | Path) -> None:
    """CSV with columns ``name,lhs,rhs,empirical_C,satisfied``."""
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["name", "lhs", "rhs", "empirical_C", "satisfied"])
        w.writeheader()
        for rep in reports:
            w.writerow(rep.row())


# ------------------------------------------------------------- semiclassics

def weyl_constant(kind: str) -> float:
    """Phase-space constant: ``1/(15 pi^2)`` per spin state."""
    return (2.0 if normalize_kind(kind) == "P" else 1.0) / (15.0 * math.pi**2)


def weyl_value(V: ScalarField, kind: str = "P") -> float:
    """``-c int [V]_+^(5/2)`` with ``c = 2/(15 pi^2)`` (Pauli) or ``1/(15 pi^2)`` (Schrödinger)."""
    return -weyl_constant(kind) * lp_norm_power(V, 2.5)


def lieb_thirring_rhs(V: ScalarField, B: VectorField, h: float) -> StructuralTerms:
    """Magnetic Lieb–Thirring structure with unit constants.

    ``first = -h^-3 int [V]_+^(5/2)`` and
    ``second = -(h^-2 int |B|^2)^(3/4) (int [V]_+^4)^(1/4)``.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    first = -lp_norm_power(V, 2.5) / h**3
    b2 = field_energy(B, 1.0)
    second = -((b2 / h**2) ** 0.75) * lp_norm_power(V, 4.0) ** 0.25
    return StructuralTerms(first, second)


def stability_lower(V: ScalarField, beta: float, h: float) -> StructuralTerms:
    """Lower-bound structure for ``h^3 E`` with unit constants.

    ``first = -int [V]_+^(5/2)``, ``second = -(beta h)^-3 int [V]_+^4``.
    """
    if beta <= 0 or h <= 0:
        raise ValueError("beta and h must be positive")
    return StructuralTerms(-lp_norm_power(V, 2.5), -lp_norm_power(V, 4.0) / (beta * h) ** 3)


# ------------------------------------------------------------- oscillator

def _levels(B: float, nmax: int) -> np.ndarray:
    n = np.arange(nmax + 1)
    n1, n2, n3 = np.meshgrid(n, n, n, indexing="ij")
    return ((n1 + n2 + 1) * math.sqrt(1 + B * B) + n3 + 0.5 + (n1 - n2) * B).ravel()


def oscillator_levels(B: float, count: int) -> np.ndarray:
    """Lowest ``count`` levels ``(n1+n2+1) sqrt(1+B^2) + n3 + 1/2 + (n1-n2) B``, with multiplicity.

    These are the eigenvalues of ``(-i grad + A)^2 + |x|^2/4`` for the
    constant field ``B e3``.
    """
    if B < 0:
        raise ValueError("B must be non-negative")
    if count < 1:
        return np.zeros(0)
    gap = math.sqrt(1 + B * B) - B  # smallest growth per unit index
    nmax = 4
    while True:
        lv = np.sort(_levels(B, nmax))
        # every level with some index > nmax is at least (nmax + 1) gap + 1/2
        if len(lv) >= count and lv[count - 1] < (nmax + 1) * gap + 0.5:
            return lv[:count]
        nmax *= 2


def oscillator_trace(B: float, threshold: float = OSCILLATOR_THRESHOLD) -> float:
    """``sum (e - threshold)_-`` over all levels, from the level list."""
    k = 8
    while True:
        lv = oscillator_levels(B, k)
        if lv[-1] >= threshold:
            return float(np.sum(np.minimum(lv - threshold, 0.0)))
        k *= 2


def oscillator_trace_closed_form(B: float) -> float:
    """``3 sqrt(1+B^2) - 4 - B`` inside its validity window, else the level sum.

    For ``0 <= B <= 4/3`` exactly the levels ``(0,0,0)`` and ``(0,1,0)`` lie
    below ``5/2``.
    """
    lo, hi = CLOSED_FORM_WINDOW
    if lo <= B <= hi:
        return 3 * math.sqrt(1 + B * B) - 4 - B
    return oscillator_trace(B)


# ------------------------------------------------------- Lieb–Thirring suite

def check_lt_constant(samples, traces) -> BoundReport:
    """Smallest constant ``C`` with ``trace >= C * (first + second)`` on every sample.

    Parameters
    ----------
    samples : sequence of (V, B, h)
    traces : sequence of float
        Computed ``tr(H)_-`` for the matching operators.

    Samples with a non-negative trace hold for every ``C >= 0`` and are
    flagged ``trivial``.
    """
    if len(samples) != len(traces):
        raise ValueError("samples and traces differ in length")
    details, cs, pairs = [], [], []
    for i, ((V, B, h), tr) in enumerate(zip(samples, traces)):
        rhs = lieb_thirring_rhs(V, B, h).total
        flags = ()
        if tr >= 0 or rhs >= 0:
            c, flags = 0.0, ("trivial",)
        else:
            c = tr / rhs
        cs.append(c)
        pairs.append((float(tr), rhs))
        details.append(BoundReport(f"lieb-thirring[{i}]", float(tr), float(c * rhs), c, flags))
    C = max(cs) if cs else float("nan")
    # aggregated instance: the smallest slack trace - C * rhs over all samples,
    # held against a round-off allowance (the extremal sample has slack ~ 0)
    slack = min((tr - C * rhs for tr, rhs in pairs), default=0.0)
    allowance = -1e-12 * max((abs(tr) for tr, _ in pairs), default=0.0)
    return BoundReport("lieb-thirring", slack, allowance, C, (), tuple(details))


def fit_power(x, y) -> tuple[float, float]:
    """Least-squares slope of ``log y`` against ``log x`` and the fit ``R^2``."""
    lx, ly = np.log(np.asarray(x, dtype=float)), np.log(np.asarray(y, dtype=float))
    slope, icpt = np.polyfit(lx, ly, 1)
    pred = slope * lx + icpt
    ss = np.sum((ly - ly.mean()) ** 2)
    r2 = 1.0 - np.sum((ly - pred) ** 2) / ss if ss > 0 else 1.0
    return float(slope), float(r2)
