"""CSV tables with a scenario header, the assertion report and figures rendered from the CSVs."""

from __future__ import annotations

import csv
import io
import math
from pathlib import Path

import numpy as np

from .results import ExperimentResult

__all__ = ["write_result", "read_table", "render_figures"]


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def _header(result: ExperimentResult) -> str:
    return "".join(f"# {line}\n" for line in result.scenario.header())


def write_result(result: ExperimentResult, out: str | Path, figures: bool = True) -> dict:
    """Write every table as ``<experiment>_<table>.csv``, ``assertions.csv`` and ``report.md``.

    Returns a dict of the written paths.
    """
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    prefix = str(result.scenario.output.get("prefix", result.experiment))
    paths = {}
    for t in result.tables:
        p = out / f"{prefix}_{t.name}.csv"
        with open(p, "w", newline="") as fh:
            fh.write(_header(result))
            w = csv.DictWriter(fh, fieldnames=list(t.columns), extrasaction="ignore")
            w.writeheader()
            for r in t.rows:
                w.writerow({k: _fmt(r.get(k, "")) for k in t.columns})
        paths[t.name] = p
    p = out / f"{prefix}_assertions.csv"
    with open(p, "w", newline="") as fh:
        fh.write(_header(result))
        w = csv.DictWriter(fh, fieldnames=["claim", "passed", "value", "limit", "seed"])
        w.writeheader()
        for a in result.assertions:
            w.writerow({**a.row(), "seed": result.scenario.seed})
    paths["assertions"] = p
    figs = render_figures(result.experiment, paths, out, prefix) if figures else []
    lines = [f"# {result.experiment}", "", f"seed: {result.scenario.seed}", "",
             "| claim | passed | value | limit |", "|---|---|---|---|"]
    for a in result.assertions:
        lines.append(f"| {a.claim} | {'PASS' if a.passed else 'FAIL'} | {a.value:.6g} | {a.limit} |")
    if result.notes:
        lines += ["", *[f"- {n}" for n in result.notes]]
    if figs:
        lines += ["", *[f"![{f.stem}]({f.name})" for f in figs]]
    lines += ["", f"overall: {'PASS' if result.passed else 'FAIL'}", ""]
    p = out / f"{prefix}_report.md"
    p.write_text("\n".join(lines))
    paths["report"] = p
    return paths


def read_table(path: str | Path) -> dict:
    """Read a CSV written by :func:`write_result` into ``{column: array}``.

    Numeric columns become float arrays, others stay as lists of strings.
    """
    text = "".join(line for line in Path(path).read_text().splitlines(True) if not line.startswith("#"))
    rows = list(csv.DictReader(io.StringIO(text)))
    out = {}
    for k in (rows[0].keys() if rows else []):
        vals = [r[k] for r in rows]
        try:
            out[k] = np.array([float(v) if v != "" else math.nan for v in vals])
        except ValueError:
            out[k] = vals
    return out


# ------------------------------------------------------------------- figures

def _plots():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def _save(fig, out: Path, name: str) -> Path:
    p = out / f"{name}.png"
    fig.tight_layout()
    fig.savefig(p, dpi=110)
    return p


def render_figures(experiment: str, paths: dict, out: str | Path, prefix: str) -> list[Path]:
    """Render the figures of one experiment from its CSV files."""
    plt = _plots()
    out = Path(out)
    figs = []
    draw = _DRAW.get(experiment)
    if draw is None:
        return figs
    for name, fig in draw(paths, plt):
        figs.append(_save(fig, out, f"{prefix}_{name}"))
        plt.close(fig)
    return figs


def _weyl(paths, plt):
    t = read_table(paths["weyl"])
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.loglog(t["h"], t["gap"], "o-", label="minimized")
    ax.loglog(t["h"], t["gap_A0"], "s--", label="A = 0")
    ax.axhline(0.1, color="gray", lw=0.8)
    ax.set_xlabel("h")
    ax.set_ylabel("relative gap to phase-space value")
    ax.legend()
    yield "gap", fig


def _kappa(paths, plt):
    t = read_table(paths["kappa"])
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.loglog(t["kappa"], -t["upper_bound"], "o-", label="-upper bound")
    ax.loglog(t["kappa"], -t["scaled_lower"], "s--", label="-C x structural lower")
    s, c = np.polyfit(np.log(t["kappa"]), np.log(-t["upper_bound"]), 1)
    ax.loglog(t["kappa"], np.exp(c) * t["kappa"] ** s, ":", label=f"fit slope {s:.3f}")
    ax.set_xlabel("kappa = beta h")
    ax.legend()
    yield "slope", fig


def _para(paths, plt):
    t = read_table(paths["paramagnetism"])
    fig, (a1, a2) = plt.subplots(1, 2, figsize=(9, 4))
    a1.semilogx(t["beta"], t["B_opt"], "o-", label="discrete")
    a1.semilogx(t["beta"], t["B_analytic"], "s--", label="closed form")
    a1.set_xlabel("beta")
    a1.set_ylabel("optimal B")
    a1.legend()
    a2.semilogx(t["beta"], t["total"], "o-", label="total")
    a2.semilogx(t["beta"], t["nonmagnetic"], "k--", label="non-magnetic")
    a2.set_xlabel("beta")
    a2.legend()
    yield "optimum", fig


def _gauge(paths, plt):
    t = read_table(paths["gauge"])
    fig, ax = plt.subplots(figsize=(7, 4))
    vals = np.maximum(np.abs(t["value"]), 1e-18)
    ax.barh(range(len(vals)), np.log10(vals))
    ax.set_yticks(range(len(vals)))
    ax.set_yticklabels(t["check"], fontsize=7)
    ax.set_xlabel("log10 deviation")
    yield "checks", fig


def _probe(paths, plt):
    t = read_table(paths["probe"])
    fig, ax = plt.subplots(figsize=(5, 4))
    keys = sorted(set(zip(t["beta"], t["h"])))
    for b, h in keys:
        m = (t["beta"] == b) & (t["h"] == h)
        ax.plot(t["c_ratio"][m], t["slope"][m] / (b * h * h), "o-", label=f"beta={b:g}, h={h:g}")
    ax.axhline(0, color="gray", lw=0.8)
    ax.set_xlabel("c / (beta h^2)")
    ax.set_ylabel("slope / (beta h^2)")
    ax.legend()
    yield "slope", fig


def _osc(paths, plt):
    t = read_table(paths["levels"])
    fig, ax = plt.subplots(figsize=(5, 4))
    for B in sorted(set(t["B"])):
        m = t["B"] == B
        ax.plot(t["index"][m], t["exact"][m], "k_", ms=14)
        ax.plot(t["index"][m], t["computed"][m], "o", label=f"B={B:g}")
    ax.set_xlabel("level index")
    ax.set_ylabel("eigenvalue")
    ax.legend()
    yield "levels", fig


def _zero(paths, plt):
    t = read_table(paths["residual"])
    fig, ax = plt.subplots(figsize=(5, 4))
    for mode in sorted(set(t["mode"])):
        m = np.array([x == mode for x in t["mode"]])
        ax.loglog(t["a"][m], t["residual"][m], "o-", label=mode)
    ax.set_xlabel("grid spacing")
    ax.set_ylabel("relative Dirac residual")
    ax.legend()
    yield "residual", fig
    d = read_table(paths["decay"])
    fig, ax = plt.subplots(figsize=(5, 4))
    for mm in sorted(set(d["m"])):
        m = d["m"] == mm
        ax.semilogx(d["radius"][m], d["sup_product"][m], "o-", label=f"m={int(mm)}")
    ax.set_xlabel("|x|")
    ax.set_ylabel("sup |psi| |x|^(m+1)")
    ax.legend()
    yield "decay", fig


def _hf(paths, plt):
    t = read_table(paths["gradient"])
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.semilogy(t["direction"], t["rel_err"], "o")
    ax.axhline(1e-4, color="gray", lw=0.8)
    ax.set_xlabel("direction")
    ax.set_ylabel("relative error")
    yield "gradient", fig
    m = read_table(paths["minimizer"])
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.semilogy(m["iter"], m["grad_norm"], "-")
    ax.set_xlabel("iteration")
    ax.set_ylabel("gradient norm")
    yield "minimizer", fig


def _lt(paths, plt):
    t = read_table(paths["samples"])
    fig, ax = plt.subplots(figsize=(5, 4))
    for n in sorted(set(t["grid_n"])):
        m = t["grid_n"] == n
        ax.loglog(-(t["first"][m] + t["second"][m]), -t["trace"][m], "o", ms=3, label=f"n={int(n)}")
    ax.set_xlabel("-(first + second)")
    ax.set_ylabel("-trace")
    ax.legend()
    yield "samples", fig
    d = read_table(paths["deficit"])
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.loglog(d["field_integral"], d["deficit"], "o-")
    ax.set_xlabel("int |B|^2")
    ax.set_ylabel("trace deficit")
    yield "deficit", fig


_DRAW = {
    "weyl_convergence": _weyl,
    "kappa_scaling": _kappa,
    "paramagnetism": _para,
    "gauge_suite": _gauge,
    "instability_probe": _probe,
    "oscillator": _osc,
    "zero_modes": _zero,
    "hellmann_feynman": _hf,
    "lieb_thirring": _lt,
}
