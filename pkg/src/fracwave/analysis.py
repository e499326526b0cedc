"""Discrete norms, refinement-rate computation, and result tables.

Error measures
--------------
``norms`` returns the discrete L2 norm, the first-difference seminorm over
all M half-points, and the full H1 norm of a boundary-zero grid function.
The solver tracks running maxima of all three over every time level.  The
reference convergence tables this package reproduces print the maximum L2
error (their own labeling notwithstanding; reproduction to print precision
settles which measure was used), so ladder tables expose that as ``E1``
with the H1 companion carried alongside.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "NormTriple",
    "ConvergenceReport",
    "norms",
    "rate_ladder",
    "fit_exponent",
    "scaling_report",
    "CSV_HEADER",
    "format_csv_rows",
]

CSV_HEADER = ("direction,case,alphas,lambdas,tau,h,E1,rate,backend,"
              "n_exp_total,stored_reals,wall_ms")


@dataclass(frozen=True)
class NormTriple:
    """Discrete L2, H1-seminorm, and H1 norm of one grid function."""

    l2: float
    semi_h1: float
    h1: float


def norms(u: np.ndarray, h: float) -> NormTriple:
    """Norms of a boundary-zero grid function given at nodes 0..M.

    ``l2**2 = h * sum_interior u_i**2``; the seminorm squares forward
    differences over all M half-points.  ``h1 = sqrt(l2^2 + semi^2)``.
    """
    u = np.asarray(u, dtype=float)
    l2sq = h * float(np.sum(u[1:-1] ** 2))
    dv = np.diff(u) / h
    semsq = h * float(np.sum(dv**2))
    return NormTriple(l2=math.sqrt(l2sq), semi_h1=math.sqrt(semsq),
                      h1=math.sqrt(l2sq + semsq))


def rate_ladder(errors) -> list:
    """log2 ratios of successive errors from a halving refinement ladder."""
    errors = [float(e) for e in errors]
    if len(errors) < 2:
        raise ValueError("need at least two ladder entries")
    if any(e <= 0 for e in errors):
        raise ValueError("ladder errors must be positive")
    return [math.log2(a / b) for a, b in zip(errors, errors[1:])]


def fit_exponent(sizes, values) -> float:
    """Least-squares slope of log(values) against log(sizes)."""
    x = np.log(np.asarray(sizes, dtype=float))
    y = np.log(np.asarray(values, dtype=float))
    slope, _ = np.polyfit(x, y, 1)
    return float(slope)


@dataclass
class ConvergenceReport:
    """One refinement study: ladder rows plus identifying metadata."""

    direction: str                 # "temporal" | "spatial"
    case: str
    alphas: tuple
    lambdas: tuple
    backend: str
    eps_rule: str
    entries: list = field(default_factory=list)

    def add(self, tau: float, h: float, e1: float, e1_h1: float,
            n_exp_total: int, stored_reals: int, wall_ms: float) -> None:
        self.entries.append({
            "tau": tau, "h": h, "E1": e1, "E1_h1": e1_h1,
            "n_exp_total": n_exp_total, "stored_reals": stored_reals,
            "wall_ms": wall_ms,
        })

    @property
    def errors(self) -> list:
        return [row["E1"] for row in self.entries]

    @property
    def rates(self) -> list:
        """First entry has no predecessor; None marks it."""
        if len(self.entries) < 2:
            return [None] * len(self.entries)
        return [None] + rate_ladder(self.errors)

    def csv_rows(self) -> list:
        rows = []
        for row, rate in zip(self.entries, self.rates):
            rows.append({
                "direction": self.direction,
                "case": self.case,
                "alphas": "|".join(f"{a:g}" for a in self.alphas),
                "lambdas": "|".join(f"{l:g}" for l in self.lambdas),
                "tau": row["tau"],
                "h": row["h"],
                "E1": row["E1"],
                "rate": rate,
                "backend": self.backend,
                "n_exp_total": row["n_exp_total"],
                "stored_reals": row["stored_reals"],
                "wall_ms": row["wall_ms"],
            })
        return rows

    def text_table(self) -> str:
        """Aligned table in the layout of the reference ladders."""
        label = "tau" if self.direction == "temporal" else "h"
        lines = [
            f"case={self.case}  alphas={self.alphas}  lambdas={self.lambdas}  "
            f"backend={self.backend}  eps_rule={self.eps_rule}",
            f"{label:>12s} {'E1':>14s} {'Rate':>10s}",
        ]
        for row, rate in zip(self.entries, self.rates):
            step = row["tau"] if self.direction == "temporal" else row["h"]
            rate_s = "*" if rate is None else f"{rate:.4f}"
            lines.append(f"{_frac(step):>12s} {row['E1']:>14.4e} {rate_s:>10s}")
        return "\n".join(lines)


def _frac(x: float) -> str:
    inv = 1.0 / x
    if abs(inv - round(inv)) < 1e-9:
        return f"1/{int(round(inv))}"
    return f"{x:.6g}"


def _sci(x) -> str:
    if x is None:
        return "*"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{float(x):.4e}"


def format_csv_rows(rows, include_wall: bool = True) -> str:
    """Serialize result rows under the fixed header, 5 significant digits."""
    lines = [CSV_HEADER]
    for row in rows:
        lines.append(",".join([
            row["direction"],
            str(row["case"]),
            row["alphas"],
            row["lambdas"],
            _sci(row["tau"]),
            _sci(row["h"]),
            _sci(row["E1"]),
            _sci(row["rate"]),
            row["backend"],
            str(row["n_exp_total"]),
            str(row["stored_reals"]),
            _sci(row["wall_ms"]) if include_wall else "*",
        ]))
    return "\n".join(lines) + "\n"


def scaling_report(ladder_results: dict) -> dict:
    """Fit work/memory growth of both backends over an N ladder.

    ``ladder_results`` maps backend name to a list of dicts with keys
    ``N``, ``work``, ``stored_reals``, ``wall_s`` (ascending N).  Returns
    fitted exponents of work against N per backend, the memory trend, and
    the end-to-end speedup at the largest N.
    """
    out = {}
    for backend, rows in ladder_results.items():
        ns = [r["N"] for r in rows]
        out[backend] = {
            "N": ns,
            "work": [r["work"] for r in rows],
            "stored_reals": [r["stored_reals"] for r in rows],
            "wall_s": [r["wall_s"] for r in rows],
            "work_exponent": fit_exponent(ns, [r["work"] for r in rows]),
        }
    if "fast" in ladder_results and "direct" in ladder_results:
        f_last = ladder_results["fast"][-1]
        d_last = ladder_results["direct"][-1]
        out["speedup_at_largest_N"] = d_last["wall_s"] / f_last["wall_s"]
    return out
