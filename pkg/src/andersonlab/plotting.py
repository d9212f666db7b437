"""SVG figures for the report tables.

Tables are mappings column -> 1d array.  Kinds and their required columns:

``dos``      E, rho (optional nu)
``profile``  x, observed, theory (optional stderr, drawn as a band)
``trend``    lam, value (optional theory)

Output is byte-reproducible: fixed hash salt and no date stamp.
"""

from __future__ import annotations

import io

import matplotlib

matplotlib.use("Agg")
from matplotlib import rcParams  # noqa: E402
from matplotlib.figure import Figure  # noqa: E402
import numpy as np  # noqa: E402

rcParams["svg.hashsalt"] = "andersonlab"

_REQUIRED = {"dos": ("E", "rho"), "profile": ("x", "observed", "theory"), "trend": ("lam", "value")}


def _columns(table, kind):
    if kind not in _REQUIRED:
        raise ValueError(f"unknown plot kind {kind!r}; choose from {sorted(_REQUIRED)}")
    if not table:
        raise ValueError("empty table")
    missing = [c for c in _REQUIRED[kind] if c not in table]
    if missing:
        raise ValueError(f"{kind} plot needs columns {missing}")
    cols = {k: np.asarray(v, dtype=float) for k, v in table.items()}
    n = len(cols[_REQUIRED[kind][0]])
    if n == 0:
        raise ValueError("empty table")
    if any(len(v) != n for v in cols.values()):
        raise ValueError("table columns differ in length")
    return cols


def emit_plot(table, kind: str, path=None, log: bool = False, title: str | None = None) -> str:
    """Render ``table`` as an SVG document; also written to ``path`` if given."""
    cols = _columns(table, kind)
    fig = Figure(figsize=(5.0, 3.6))
    ax = fig.add_subplot()
    if kind == "dos":
        ax.plot(cols["E"], cols["rho"], label="rho(E)")
        if "nu" in cols:
            ax.plot(cols["E"], cols["nu"], "--", label="nu(E)")
        ax.set_xlabel("E")
    elif kind == "profile":
        x = cols["x"]
        ax.plot(x, cols["observed"], "o-", ms=3, label="observed")
        ax.plot(x, cols["theory"], "-", label="theory")
        if "stderr" in cols:
            lo, hi = cols["observed"] - 2 * cols["stderr"], cols["observed"] + 2 * cols["stderr"]
            ax.fill_between(x, lo, hi, alpha=0.25, label="2 SE")
        ax.set_xlabel("x")
    else:
        ax.plot(cols["lam"], cols["value"], "o-", label="measured")
        if "theory" in cols:
            ax.plot(cols["lam"], cols["theory"], "--", label="theory")
        ax.set_xlabel("lambda")
    if log:
        ax.set_yscale("log")
        if kind == "trend":
            ax.set_xscale("log")
    if title:
        ax.set_title(title)
    ax.legend(fontsize=8)
    fig.tight_layout()
    buf = io.StringIO()
    fig.savefig(buf, format="svg", metadata={"Date": None})
    svg = buf.getvalue()
    if path is not None:
        with open(path, "w") as fh:
            fh.write(svg)
    return svg
