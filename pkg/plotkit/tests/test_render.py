import csv
import json
import os
import subprocess
import sys

import pytest

from plotkit import FigureSpec, SchemaError, refit_moment_exponent, render


def write_csv(path, fieldnames, rows):
    with open(path, "w", newline="") as fh:
        wr = csv.DictWriter(fh, fieldnames=fieldnames)
        wr.writeheader()
        wr.writerows(rows)


@pytest.fixture
def moments_csv(tmp_path):
    path = tmp_path / "moments.csv"
    fields = ["experiment", "p", "value", "ci_lo", "ci_hi", "kish_ess", "reliable"]
    rows = [{"experiment": "moments", "p": p, "value": 2.0 * p**0.5,
             "ci_lo": "", "ci_hi": "", "kish_ess": 1000, "reliable": "True"}
            for p in (2, 4, 8, 16, 32)]
    # producer convention: upper-half fit of the reliable rows -> exactly 0.5
    rows.append({"experiment": "beta_hat", "p": "", "value": 0.5,
                 "ci_lo": 0.45, "ci_hi": 0.55, "kish_ess": "", "reliable": ""})
    write_csv(path, fields, rows)
    return str(path)


def test_moment_loglog_renders_and_refits(tmp_path, moments_csv):
    out = str(tmp_path / "m.png")
    info = render(FigureSpec("moment-loglog", [moments_csv], out))
    assert os.path.exists(out)
    assert abs(info["beta_refit"] - info["beta_csv"]) <= 1e-3


def test_moment_refit_mismatch_rejected(tmp_path, moments_csv):
    rows = list(csv.DictReader(open(moments_csv)))
    for r in rows:
        if r["experiment"] == "beta_hat":
            r["value"] = "0.9"
    write_csv(moments_csv, list(rows[0].keys()), rows)
    with pytest.raises(SchemaError):
        render(FigureSpec("moment-loglog", [moments_csv], str(tmp_path / "x.png")))


def test_empty_csv_schema_error(tmp_path):
    path = tmp_path / "empty.csv"
    path.write_text("")
    with pytest.raises(SchemaError):
        render(FigureSpec("moment-loglog", [str(path)], str(tmp_path / "x.png")))


def test_missing_column_named(tmp_path):
    path = tmp_path / "bad.csv"
    write_csv(path, ["experiment", "p"], [{"experiment": "moments", "p": 2}])
    with pytest.raises(SchemaError) as err:
        render(FigureSpec("moment-loglog", [str(path)], str(tmp_path / "x.png")))
    assert "value" in str(err.value)


def test_unknown_kind_rejected(tmp_path):
    with pytest.raises(SchemaError):
        FigureSpec("pie", ["x.csv"], str(tmp_path / "x.png"))


def test_transport_slope(tmp_path):
    path = tmp_path / "transport.csv"
    fields = ["experiment", "t", "shrink", "kind", "value", "count", "ci_lo", "ci_hi"]
    rows = []
    for shrink, base in ((1.0, 0.04), (0.5, 0.01), (0.25, 0.0025)):
        rows.append({"experiment": "transport", "t": 0.0, "shrink": shrink,
                     "kind": "base", "value": base, "count": int(base * 10000),
                     "ci_lo": 0, "ci_hi": 1})
        rows.append({"experiment": "transport", "t": 0.5, "shrink": shrink,
                     "kind": "image", "value": base**0.3, "count": 10,
                     "ci_lo": 0, "ci_hi": 1})
    write_csv(path, fields, rows)
    out = str(tmp_path / "t.png")
    info = render(FigureSpec("transport-slope", [str(path)], out))
    assert os.path.exists(out) and 0.5 in info["times"]


def test_convergence_curve(tmp_path):
    path = tmp_path / "conv.csv"
    write_csv(path, ["experiment", "seed", "N", "value"],
              [{"experiment": "convergence", "seed": 1, "N": n, "value": 1.0 / n}
               for n in (4, 8, 16)])
    info = render(FigureSpec("convergence-curve", [str(path)], str(tmp_path / "c.png")))
    assert info["seeds"] == ["1"]


def test_histogram2d_with_overlay(tmp_path):
    path = tmp_path / "hist.csv"
    rows = [{"experiment": "pointwise_hist", "x_lo": x / 4, "y_lo": y / 4,
             "value": (4 - abs(x)) * (4 - abs(y))}
            for x in range(-4, 4) for y in range(-4, 4)]
    write_csv(path, ["experiment", "x_lo", "y_lo", "value"], rows)
    out = str(tmp_path / "h.png")
    info = render(FigureSpec("histogram2d", [str(path)], out,
                             style={"sigma_sq": 1.5}))
    assert info["overlay"] is True


def test_audit_ratio(tmp_path):
    path = tmp_path / "count.csv"
    write_csv(path, ["family", "n", "K", "shell", "max_count", "bound", "max_ratio",
                     "argmax_kappa"],
              [{"family": "n2_unit", "n": 2, "K": "unit", "shell": s,
                "max_count": 2, "bound": 1, "max_ratio": 2.0, "argmax_kappa": 0}
               for s in (2, 4, 8)])
    info = render(FigureSpec("audit-ratio", [str(path)], str(tmp_path / "a.png")))
    assert info["families"] == ["n2_unit"]


def test_cli_roundtrip(tmp_path, moments_csv):
    spec = {"kind": "moment-loglog", "inputs": [moments_csv],
            "output": str(tmp_path / "cli.png")}
    spec_path = tmp_path / "spec.json"
    spec_path.write_text(json.dumps(spec))
    proc = subprocess.run([sys.executable, "-m", "plotkit.cli", "render",
                           "--spec", str(spec_path)],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert os.path.exists(spec["output"])


def test_cli_schema_error_exit_code(tmp_path):
    path = tmp_path / "empty.csv"
    path.write_text("")
    spec_path = tmp_path / "spec.json"
    spec_path.write_text(json.dumps({"kind": "moment-loglog", "inputs": [str(path)],
                                     "output": str(tmp_path / "x.png")}))
    proc = subprocess.run([sys.executable, "-m", "plotkit.cli", "render",
                           "--spec", str(spec_path)],
                          capture_output=True, text=True)
    assert proc.returncode == 2


def test_refit_convention_matches_producer():
    # same rule as the producer: reliable rows if >= 2, upper half, LS
    rows = [{"experiment": "moments", "p": str(p), "value": str(3.0 * p**0.7),
             "reliable": "True"} for p in (2.0, 4.0, 8.0, 16.0)]
    slope, pts = refit_moment_exponent(rows)
    assert slope == pytest.approx(0.7, abs=1e-12)
    assert len(pts) >= 2
