"""Figure rendering from the simulation CLI's CSV/JSON outputs.

The CSV is the source of truth: rendering never recomputes science numbers
except the moment-exponent re-fit, which is a cross-check required to agree
with the CSV's value. Figures are deterministic (fixed style, no wall-clock
content).
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

KINDS = ("moment-loglog", "transport-slope", "convergence-curve",
         "histogram2d", "audit-ratio")

STYLE = {
    "figure.figsize": (6.0, 4.5),
    "figure.dpi": 110,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.size": 10,
}


class SchemaError(ValueError):
    """Input file does not match the documented CSV schema."""


@dataclass
class FigureSpec:
    kind: str
    inputs: list
    output: str
    style: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SchemaError(f"unknown figure kind {self.kind!r}; expected one of {KINDS}")
        if isinstance(self.inputs, str):
            self.inputs = [self.inputs]
        if not self.inputs:
            raise SchemaError("figure spec needs at least one input file")

    @classmethod
    def from_json(cls, path) -> "FigureSpec":
        with open(path) as fh:
            d = json.load(fh)
        try:
            return cls(kind=d["kind"], inputs=d["inputs"], output=d["output"],
                       style=d.get("style", {}))
        except KeyError as exc:
            raise SchemaError(f"figure spec missing field {exc}")


def read_csv(path, required_columns):
    if not os.path.exists(path):
        raise SchemaError(f"input not found: {path}")
    with open(path) as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise SchemaError(f"{path}: empty CSV (no header)")
        for col in required_columns:
            if col not in reader.fieldnames:
                raise SchemaError(f"{path}: missing column {col!r}")
        rows = list(reader)
    if not rows:
        raise SchemaError(f"{path}: no data rows")
    return rows


def _f(row, col):
    try:
        return float(row[col])
    except (TypeError, ValueError):
        return math.nan


def refit_moment_exponent(rows):
    """Re-fit of the p-exponent from the moments table, replicating the
    producer's convention: Kish-reliable rows when at least two exist,
    otherwise all positive rows; least squares over the upper half."""
    pts = [(float(r["p"]), float(r["value"]), r.get("reliable", "") == "True")
           for r in rows if r["experiment"] == "moments" and r["p"] != ""]
    ok = [(p, v) for p, v, rel in pts if rel and v > 0]
    if len(ok) < 2:
        ok = [(p, v) for p, v, _ in pts if v > 0]
    if len(ok) < 2:
        raise SchemaError("moments CSV has fewer than two usable norm rows")
    ok = ok[max(0, len(ok) // 2 - 1):]
    x = np.log([p for p, _ in ok])
    y = np.log([v for _, v in ok])
    xm, ym = x.mean(), y.mean()
    slope = float(np.dot(x - xm, y - ym) / np.dot(x - xm, x - xm))
    return slope, ok


def render_moment_loglog(spec: FigureSpec, ax):
    rows = read_csv(spec.inputs[0], ["experiment", "p", "value", "ci_lo", "ci_hi"])
    norms = [(float(r["p"]), float(r["value"]))
             for r in rows if r["experiment"] == "moments" and r["p"] != ""]
    beta_rows = [r for r in rows if r["experiment"] == "beta_hat"]
    if not norms or not beta_rows:
        raise SchemaError("moments CSV needs 'moments' rows and a 'beta_hat' row")
    beta_csv = float(beta_rows[0]["value"])
    refit, fit_pts = refit_moment_exponent(rows)
    if abs(refit - beta_csv) > 1e-3:
        raise SchemaError(f"re-fit exponent {refit:.6f} deviates from CSV "
                          f"beta_hat {beta_csv:.6f} by more than 1e-3")
    p, v = zip(*norms)
    ax.loglog(p, v, "o-", label="empirical p-norm")
    p0, v0 = fit_pts[0]
    pref = np.array([min(p), max(p)])
    ax.loglog(pref, v0 * (pref / p0) ** beta_csv, "--",
              label=f"fitted slope {beta_csv:.3f}")
    ax.set_xlabel("p")
    ax.set_ylabel("masked derivative p-norm")
    ax.set_title(f"moment growth (beta = {beta_csv:.3f})")
    ax.legend()
    return {"beta_csv": beta_csv, "beta_refit": refit}


def render_transport_slope(spec: FigureSpec, ax):
    rows = read_csv(spec.inputs[0],
                    ["experiment", "t", "shrink", "kind", "value", "count"])
    base = {r["shrink"]: float(r["value"]) for r in rows if r["kind"] == "base"}
    times = sorted({float(r["t"]) for r in rows if r["kind"] == "image"})
    drew = 0
    for t in times:
        if t == 0.0 and len(times) > 1:
            continue
        xs, ys = [], []
        for r in rows:
            if r["kind"] == "image" and float(r["t"]) == t:
                mu_a = base.get(r["shrink"], 0.0)
                mu_i = float(r["value"])
                if mu_a > 0 and mu_i > 0:
                    xs.append(mu_a)
                    ys.append(mu_i)
        if xs:
            ax.loglog(xs, ys, "o-", label=f"t = {t}")
            drew += 1
    if not drew:
        raise SchemaError("transport CSV has no positive image/base pairs to plot")
    # reference slopes (1 - eps)/4 through the largest base point
    xs_all = [float(r["value"]) for r in rows if r["kind"] == "base" and float(r["value"]) > 0]
    x1 = max(xs_all)
    xref = np.array([min(xs_all), x1])
    for eps in (0.0, 0.5):
        s = (1 - eps) / 4
        ax.loglog(xref, x1 ** (1 - s) * xref**s, ":",
                  label=f"reference slope {(1 - eps) / 4:.3g}")
    ax.set_xlabel("mu(A)")
    ax.set_ylabel("mu(flow image of A)")
    ax.set_title("measure transport under shrinking sets")
    ax.legend()
    return {"times": times}


def render_convergence_curve(spec: FigureSpec, ax):
    rows = read_csv(spec.inputs[0], ["experiment", "seed", "N", "value"])
    seeds = sorted({r["seed"] for r in rows})
    for seed in seeds:
        pts = sorted((int(r["N"]), float(r["value"]))
                     for r in rows if r["seed"] == seed)
        ax.loglog([p[0] for p in pts], [p[1] for p in pts], "o-",
                  label=f"seed {seed}")
    ax.set_xlabel("truncation level N")
    ax.set_ylabel("sup_t H^sigma distance to reference flow")
    ax.set_title("truncated-flow convergence")
    ax.legend()
    return {"seeds": seeds}


def render_histogram2d(spec: FigureSpec, ax):
    rows = read_csv(spec.inputs[0], ["experiment", "x_lo", "y_lo", "value"])
    xs = np.array(sorted({float(r["x_lo"]) for r in rows}))
    ys = np.array(sorted({float(r["y_lo"]) for r in rows}))
    grid = np.zeros((len(xs), len(ys)))
    xi = {v: i for i, v in enumerate(xs)}
    yi = {v: i for i, v in enumerate(ys)}
    for r in rows:
        grid[xi[float(r["x_lo"])], yi[float(r["y_lo"])]] = float(r["value"])
    dx = xs[1] - xs[0] if len(xs) > 1 else 1.0
    dy = ys[1] - ys[0] if len(ys) > 1 else 1.0
    extent = (xs[0], xs[-1] + dx, ys[0], ys[-1] + dy)
    ax.imshow(grid.T, origin="lower", extent=extent, aspect="auto",
              cmap="viridis")
    sigma_sq = spec.style.get("sigma_sq")
    if sigma_sq is None and len(spec.inputs) > 1:
        with open(spec.inputs[1]) as fh:
            side = json.load(fh)
        var = side.get("sigma_sq")
        if isinstance(var, dict) and var:
            sigma_sq = float(list(var.values())[0])
    if sigma_sq:
        # closed-form stationary complex Gaussian density contours
        gx = np.linspace(extent[0], extent[1], 80)
        gy = np.linspace(extent[2], extent[3], 80)
        mx, my = np.meshgrid(gx, gy)
        dens = np.exp(-(mx**2 + my**2) / sigma_sq) / (math.pi * sigma_sq)
        ax.contour(mx, my, dens, levels=5, colors="w", linewidths=0.8)
    ax.set_xlabel("Re u(t0, x0)")
    ax.set_ylabel("Im u(t0, x0)")
    ax.set_title("pointwise law")
    return {"bins": (len(xs), len(ys)), "overlay": bool(sigma_sq)}


def render_audit_ratio(spec: FigureSpec, ax):
    rows = read_csv(spec.inputs[0], ["family", "shell", "max_ratio", "bound"])
    families = sorted({r["family"] for r in rows})
    for fam in families:
        pts = sorted((float(r["shell"]), float(r["max_ratio"]))
                     for r in rows if r["family"] == fam)
        ax.plot([p[0] for p in pts], [p[1] for p in pts], "o-", label=fam)
    ax.set_xscale("log", base=2)
    ax.axhline(8.0, color="k", linestyle=":", label="acceptance bound 8")
    ax.set_xlabel("dyadic shell")
    ax.set_ylabel("count / bound")
    ax.set_title("constrained lattice counting audit")
    ax.legend(fontsize=7)
    return {"families": families}


_RENDERERS = {
    "moment-loglog": render_moment_loglog,
    "transport-slope": render_transport_slope,
    "convergence-curve": render_convergence_curve,
    "histogram2d": render_histogram2d,
    "audit-ratio": render_audit_ratio,
}


def render(spec: FigureSpec) -> dict:
    """Render one figure; returns a small info dict (cross-check values)."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        try:
            info = _RENDERERS[spec.kind](spec, ax)
            fig.tight_layout()
            out_dir = os.path.dirname(os.path.abspath(spec.output))
            os.makedirs(out_dir, exist_ok=True)
            fig.savefig(spec.output, metadata=_clean_metadata(spec.output))
        finally:
            plt.close(fig)
    info["output"] = spec.output
    return info


def _clean_metadata(path):
    # keep raster/vector outputs free of wall-clock metadata
    if path.endswith(".png"):
        return {"Software": "plotkit"}
    if path.endswith(".svg"):
        return {"Date": None}
    return None
