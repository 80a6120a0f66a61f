"""Deterministic SVG figures from metric and budget CSV files.

Figures render with the Agg backend, a pinned SVG hash salt, and no embedded
timestamps, so the same inputs always produce the same bytes.
"""
from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

matplotlib.rcParams["svg.hashsalt"] = "ldp-gradtrack"


def _read_csv(csv_path) -> tuple[list[str], list[dict]]:
    with open(csv_path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise ValueError(f"{csv_path}: empty file")
        rows = list(reader)
    if not rows:
        raise ValueError(f"{csv_path}: no data rows")
    return list(reader.fieldnames), rows


def _save(fig, out_path) -> None:
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path, format="svg", metadata={"Date": None})
    plt.close(fig)


def render_metrics(csv_path, out_path, columns: list[str] | None = None,
                   loglog: bool = False) -> None:
    """Plot selected metric columns against the round index.

    If an "algorithm" column is present, each (algorithm, column) pair gets
    its own curve.  Non-finite values are skipped; with loglog the round-0
    row is dropped.
    """
    fields, rows = _read_csv(csv_path)
    if "round" not in fields:
        raise ValueError(f'{csv_path}: missing "round" column')
    skip = {"round", "agent", "algorithm"}
    if columns is None:
        columns = [c for c in fields if c not in skip]
    else:
        missing = [c for c in columns if c not in fields]
        if missing:
            raise ValueError(f"{csv_path}: missing columns {missing}; have {fields}")
    groups = sorted({r.get("algorithm", "") for r in rows})
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for group in groups:
        sub = [r for r in rows if r.get("algorithm", "") == group]
        t = [int(r["round"]) for r in sub]
        for col in columns:
            vals = [float(r[col]) for r in sub]
            pairs = [(tt, v) for tt, v in zip(t, vals)
                     if (tt >= 1 or not loglog) and v == v and abs(v) != float("inf")]
            if not pairs:
                continue
            label = f"{group}: {col}" if group else col
            ax.plot([p[0] for p in pairs], [p[1] for p in pairs], label=label)
    if loglog:
        ax.set_xscale("log")
        ax.set_yscale("log")
    ax.set_xlabel("round")
    ax.legend(fontsize=8)
    ax.grid(True, alpha=0.3)
    _save(fig, out_path)


def render_budget_growth(csv_path, out_path) -> None:
    """Plot worst-agent cumulative budget components against the horizon."""
    fields, rows = _read_csv(csv_path)
    for col in ("T", "eps_s", "eps_theta"):
        if col not in fields:
            raise ValueError(f"{csv_path}: missing column {col!r}; have {fields}")
    T = [int(float(r["T"])) for r in rows]
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for col in ("eps_s", "eps_theta"):
        ax.plot(T, [float(r[col]) for r in rows], marker="o", label=col)
    ax.set_xlabel("horizon T")
    ax.set_ylabel("cumulative budget bound")
    ax.legend(fontsize=8)
    ax.grid(True, alpha=0.3)
    _save(fig, out_path)
