"""Scenario files: a flat ``key = value`` schema with dotted sections.

Grammar (one entry per line)::

    # comment (also allowed after a value)
    experiment = weyl_convergence
    seed = 7
    [potential]                  # section header: prefixes the keys below
    family = bump                # potential.family
    grid.n = 24, 32, 48          # comma separated values form a list
    output.figures = true

Values are parsed as int, float, ``true``/``false`` or bare strings; a value
with a comma becomes a list. ``[]`` resets the section prefix.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..fields import Grid3, ScalarField

__all__ = [
    "Scenario",
    "ScenarioError",
    "EXPERIMENTS",
    "POTENTIAL_FAMILIES",
    "parse_scenario",
    "load_scenario",
    "make_potential",
]

EXPERIMENTS = (
    "weyl_convergence",
    "kappa_scaling",
    "paramagnetism",
    "gauge_suite",
    "instability_probe",
    "oscillator",
    "zero_modes",
    "hellmann_feynman",
    "lieb_thirring",
)

POTENTIAL_FAMILIES = ("harmonic", "bump", "coulomb_cutoff")


class ScenarioError(ValueError):
    """Malformed scenario text or inconsistent settings."""


def _atom(text: str):
    t = text.strip()
    low = t.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    if low in ("inf", "+inf", "infinity"):
        return math.inf
    try:
        return int(t)
    except ValueError:
        pass
    try:
        return float(t)
    except ValueError:
        return t


def _value(text: str):
    if "," in text:
        return [_atom(p) for p in text.split(",") if p.strip()]
    return _atom(text)


def parse_scenario(text: str) -> dict:
    """Parse scenario text into a flat ``{dotted.key: value}`` dict."""
    out: dict = {}
    prefix = ""
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            name = line[1:-1].strip()
            prefix = f"{name}." if name else ""
            continue
        if "=" not in line:
            raise ScenarioError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        if not key or not val:
            raise ScenarioError(f"line {lineno}: empty key or value")
        key = prefix + key
        if key in out:
            raise ScenarioError(f"line {lineno}: duplicate key {key!r}")
        out[key] = _value(val)
    return out


def _section(flat: dict, name: str) -> dict:
    pre = name + "."
    return {k[len(pre):]: v for k, v in flat.items() if k.startswith(pre)}


def _as_list(v) -> list:
    return list(v) if isinstance(v, (list, tuple)) else [v]


@dataclass
class Scenario:
    """A parsed scenario.

    Attributes
    ----------
    experiment : str
        One of :data:`EXPERIMENTS`.
    potential : dict
        ``family`` plus the family parameters.
    grid : dict
        ``n`` (int or list, one per sweep row) and ``L``.
    sweep : dict
        Sweep lists (``h``, ``beta``, ``kappa``, ``c``, ...); every value is a
        non-empty list.
    solver : dict
        Tolerances and iteration caps.
    output : dict
        Output options (``prefix``, ``figures``).
    seed : int
    params : dict
        Remaining experiment-specific keys (section ``params``).
    text : str
        The source text, echoed into every output header.
    """

    experiment: str
    potential: dict = field(default_factory=dict)
    grid: dict = field(default_factory=dict)
    sweep: dict = field(default_factory=dict)
    solver: dict = field(default_factory=dict)
    output: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)
    seed: int = 0
    text: str = ""

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ScenarioError(f"unknown experiment {self.experiment!r}; choose from {EXPERIMENTS}")
        for k, v in list(self.sweep.items()):
            v = _as_list(v)
            if not v:
                raise ScenarioError(f"sweep list {k!r} is empty")
            self.sweep[k] = v
        if self.potential and self.potential.get("family") not in POTENTIAL_FAMILIES:
            raise ScenarioError(f"unknown potential family {self.potential.get('family')!r}")
        self.seed = int(self.seed)

    @classmethod
    def from_flat(cls, flat: dict, text: str = "") -> "Scenario":
        known = {"experiment", "seed"}
        sections = ("potential", "grid", "sweep", "solver", "output", "params")
        for k in flat:
            if k not in known and k.split(".", 1)[0] not in sections:
                raise ScenarioError(f"unknown key {k!r}")
        if "experiment" not in flat:
            raise ScenarioError("missing 'experiment'")
        return cls(experiment=str(flat["experiment"]), seed=flat.get("seed", 0), text=text,
                   **{s: _section(flat, s) for s in sections})

    def with_seed(self, seed: int) -> "Scenario":
        return Scenario(self.experiment, dict(self.potential), dict(self.grid),
                        {k: list(v) for k, v in self.sweep.items()}, dict(self.solver),
                        dict(self.output), dict(self.params), int(seed), self.text)

    def grid_sizes(self, rows: int) -> list[int]:
        """Grid size per sweep row (a single ``n`` is broadcast)."""
        ns = [int(v) for v in _as_list(self.grid.get("n", 24))]
        if len(ns) == 1:
            ns = ns * rows
        if len(ns) != rows:
            raise ScenarioError(f"grid.n has {len(ns)} entries for {rows} sweep rows")
        return ns

    def make_grid(self, n: int | None = None) -> Grid3:
        n = int(_as_list(self.grid.get("n", 24))[0]) if n is None else int(n)
        return Grid3(n, float(self.grid.get("L", 6.0)))

    def header(self) -> list[str]:
        """Comment lines reproducing the effective scenario."""
        lines = [f"experiment = {self.experiment}", f"seed = {self.seed}"]
        for name in ("potential", "grid", "sweep", "solver", "output", "params"):
            for k, v in getattr(self, name).items():
                vs = ", ".join(map(str, v)) if isinstance(v, list) else str(v)
                lines.append(f"{name}.{k} = {vs}")
        return lines


def load_scenario(path: str | Path, seed: int | None = None) -> Scenario:
    """Read a scenario file; ``seed`` (if given) overrides the file's seed."""
    text = Path(path).read_text()
    sc = Scenario.from_flat(parse_scenario(text), text)
    return sc if seed is None else sc.with_seed(seed)


def make_potential(spec: dict, grid: Grid3, scale: float = 1.0) -> ScalarField:
    """Sample a named potential family on ``grid``.

    ``harmonic``: ``offset - stiffness |x|^2`` (defaults 5/2 and 1/4).
    ``bump``: ``amplitude [1 - sum (x_i / r_i)^2]_+^power`` with
    ``radius`` (scalar or three semi-axes) and ``power`` (default 2).
    ``coulomb_cutoff``: ``[c/|x| - 1]_+`` with ``c`` (default 1); the node at
    the origin uses ``|x| = a/2``.
    ``scale`` multiplies the result.
    """
    family = spec.get("family")
    X, Y, Z = grid.mesh()
    if family == "harmonic":
        off = float(spec.get("offset", 2.5))
        k = float(spec.get("stiffness", 0.25))
        vals = off - k * (X * X + Y * Y + Z * Z)
    elif family == "bump":
        amp = float(spec.get("amplitude", 1.0))
        radii = _as_list(spec.get("radius", 1.0))
        if len(radii) == 1:
            radii = radii * 3
        if len(radii) != 3 or min(radii) <= 0:
            raise ScenarioError("bump radius needs one or three positive values")
        p = float(spec.get("power", 2.0))
        q = 1.0 - ((X / radii[0]) ** 2 + (Y / radii[1]) ** 2 + (Z / radii[2]) ** 2)
        vals = amp * np.maximum(q, 0.0) ** p
    elif family == "coulomb_cutoff":
        c = float(spec.get("c", 1.0))
        r = np.maximum(np.sqrt(X * X + Y * Y + Z * Z), 0.5 * grid.a)
        vals = np.maximum(c / r - 1.0, 0.0)
    else:
        raise ScenarioError(f"unknown potential family {family!r}")
    return ScalarField(grid, scale * vals)
