"""Command-line entry point.

One executable exposing the package operations as subcommands, driven by a
JSON config with dotted-path overrides. Outputs are written atomically
(temp file + rename); every output directory receives a manifest
sufficient to rerun the job. Exit codes: 2 bad configuration, 3
enumeration budget exceeded, 4 integration blowup, 1 anything else.
"""

from __future__ import annotations

import argparse
import copy
import csv
import datetime
import io
import json
import os
import subprocess
import sys
import time

import numpy as np

from .errors import BudgetExceededError, IntegrationBlowupError, ParameterError
from .params import ModelParams
from . import lattice, randomfield, resonance, energetics, dynamics, experiments

DEFAULT_CONFIG = {
    "params": {"d": 1, "s": 10.0, "sigma": 8.4, "N": 4, "delta0": 0.6,
               "theta": 0.3, "R": 10.0},
    "sampler": {"n_low": 4, "n_tail": 16, "master_seed": 20240817, "stream_id": 0},
    "flow": {"dt": 1e-3, "t_end": 1.0, "integrator": "IFRK4", "monitor_every": 100,
             "with_energy": False},
    "mc": {"ensemble_size": 10000, "p_grid": [2, 3, 4, 6, 8, 12, 16, 24, 32, 48, 64],
           "t_grid": [0.5], "bootstrap": 200, "dt": 1e-3},
    "sample": {"count": 16},
    "decompose": {"direct": False, "pairings": True},
    "audit": {"counting": {"shell_max": 16, "families": "default"},
              "psi_bound": {"kmax": 20, "s_values": [2, 10]},
              "psi_corrector": {"kmax": 60},
              "chaos": {"degrees": [1, 2, 5], "form": "power"},
              "dual_path": {"levels": [2, 3], "seeds": [42, 43]}},
    "transport": {"conditions": [[[1], 0.2]], "cap_radius": 10.0,
                  "shrink_factors": [1.0, 0.5, 0.25]},
    "weights": {"n_list": [2, 4, 8, 16], "n_ref": 32, "p_list": [2.0]},
    "convergence": {"n_list": [4, 8, 16, 32], "n_ref": 64, "t": 1.0, "seeds": [42]},
    "pointwise": {"t0": 0.0, "x0": [0.0], "bins": 40},
    "budget": 1.0e9,
    "threads": 1,
}


def log_line(level: str, msg: str, **extra):
    rec = {"level": level, "ts": datetime.datetime.now(datetime.timezone.utc).isoformat(),
           "msg": msg}
    rec.update(extra)
    print(json.dumps(rec), file=sys.stderr)


def atomic_write(path: str, data: str | bytes):
    mode = "wb" if isinstance(data, bytes) else "w"
    tmp = f"{path}.tmp-{os.getpid()}"
    with open(tmp, mode) as fh:
        fh.write(data)
    os.replace(tmp, path)


def write_json(path: str, payload):
    atomic_write(path, json.dumps(payload, indent=2, default=_json_default))


def _json_default(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, complex):
        return {"re": obj.real, "im": obj.imag}
    raise TypeError(f"not JSON serializable: {type(obj)}")


def write_csv(path: str, fieldnames, rows):
    buf = io.StringIO()
    wr = csv.DictWriter(buf, fieldnames=fieldnames, lineterminator="\n")
    wr.writeheader()
    for row in rows:
        wr.writerow({k: _fmt(row.get(k, "")) for k in fieldnames})
    atomic_write(path, buf.getvalue())


def _fmt(v):
    if isinstance(v, (np.floating, np.integer)):
        v = v.item()
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, complex):
        return f"{v.real!r}{'+' if v.imag >= 0 else '-'}{abs(v.imag)!r}j"
    return v


def git_describe() -> str:
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty"],
                             capture_output=True, text=True, timeout=10,
                             cwd=os.path.dirname(os.path.abspath(__file__)))
        if out.returncode == 0:
            return out.stdout.strip()
    except Exception:
        pass
    return "unknown"


def write_manifest(outdir: str, cfg: dict, command: str, wall: float, extra=None):
    payload = {"command": command, "config": cfg, "git": git_describe(),
               "wall_time": wall, "prng_algo": randomfield.PRNG_ALGO,
               "created": datetime.datetime.now(datetime.timezone.utc).isoformat()}
    if extra:
        payload.update(extra)
    write_json(os.path.join(outdir, "manifest.json"), payload)


def set_dotted(cfg: dict, key: str, raw: str):
    node = cfg
    parts = key.split(".")
    for p in parts[:-1]:
        node = node.setdefault(p, {})
    try:
        val = json.loads(raw)
    except json.JSONDecodeError:
        val = raw
    node[parts[-1]] = val


def load_config(args) -> dict:
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if args.config:
        with open(args.config) as fh:
            user = json.load(fh)
        _merge(cfg, user)
    for kv in args.set or []:
        if "=" not in kv:
            raise ParameterError(f"--set expects key=value, got {kv!r}")
        k, v = kv.split("=", 1)
        set_dotted(cfg, k, v)
    if args.seed is not None:
        cfg["sampler"]["master_seed"] = args.seed
        cfg["mc"]["master_seed"] = args.seed
    if args.budget is not None:
        cfg["budget"] = float(args.budget)
    if args.threads is not None:
        cfg["threads"] = args.threads
    return cfg


def _merge(base: dict, update: dict):
    for k, v in update.items():
        if isinstance(v, dict) and isinstance(base.get(k), dict):
            _merge(base[k], v)
        else:
            base[k] = v


def model_params(cfg) -> ModelParams:
    try:
        return ModelParams.from_dict(cfg["params"])
    except ParameterError:
        raise
    except Exception as exc:
        raise ParameterError(f"bad params section: {exc}")


def sampler_spec(cfg, params) -> randomfield.SamplerSpec:
    s = cfg["sampler"]
    return randomfield.SamplerSpec(params, int(s["n_low"]), int(s["n_tail"]),
                                   int(s["master_seed"]), int(s.get("stream_id", 0)))


def mc_config(cfg) -> experiments.MCConfig:
    m = cfg["mc"]
    return experiments.MCConfig(
        ensemble_size=int(m["ensemble_size"]), p_grid=tuple(m["p_grid"]),
        t_grid=tuple(m.get("t_grid", [0.5])), R=float(cfg["params"]["R"]),
        n_low=int(cfg["sampler"]["n_low"]), n_tail=int(cfg["sampler"]["n_tail"]),
        master_seed=int(m.get("master_seed", cfg["sampler"]["master_seed"])),
        stream_id=int(m.get("stream_id", 0)), bootstrap=int(m.get("bootstrap", 200)),
        dt=float(m.get("dt", 1e-3)))


def _load_state(path) -> lattice.SpectralField:
    if not os.path.exists(path):
        raise ParameterError(f"input state not found: {path}")
    if path.endswith(".json"):
        with open(path) as fh:
            return lattice.field_from_json(fh.read())
    return lattice.load_field(path)


# ---------------------------------------------------------------------------
# subcommands

def cmd_sample(cfg, outdir):
    params = model_params(cfg)
    spec = sampler_spec(cfg, params)
    fields = randomfield.sample_ensemble(spec, int(cfg["sample"]["count"]))
    randomfield.save_ensemble(outdir, spec, fields)
    rep = randomfield.covariance_report(fields, params.s) if len(fields) >= 2 else None
    if rep:
        write_json(os.path.join(outdir, "covariance.json"), rep)
    print(f"wrote {len(fields)} samples to {outdir}")
    return {"count": len(fields)}


def cmd_evolve(cfg, outdir, state_path):
    params = model_params(cfg)
    u = _load_state(state_path)
    f = cfg["flow"]
    rec = dynamics.evolve(u, params, dynamics.FlowConfig(
        dt=float(f["dt"]), t_end=float(f["t_end"]), integrator=f["integrator"],
        monitor_every=int(f["monitor_every"]), with_energy=bool(f.get("with_energy")),
        keep_snapshots=bool(f.get("checkpoints", True))))
    fields = ["time", "mass", "hamiltonian_N", "h_sigma_norm"]
    if rec.e_sN:
        fields.append("e_sN")
    write_csv(os.path.join(outdir, "trajectory.csv"), fields, rec.rows())
    for i, snap in enumerate(rec.snapshots):
        atomic_write(os.path.join(outdir, f"checkpoint_{i:04d}.spf"),
                     lattice.field_to_bytes(snap))
    atomic_write(os.path.join(outdir, "state_final.spf"),
                 lattice.field_to_bytes(rec.final))
    print(f"evolved to t={f['t_end']}: mass drift "
          f"{abs(rec.mass[-1] - rec.mass[0]) / abs(rec.mass[0]):.3e}")
    return {"rows": len(rec.times)}


def cmd_energy(cfg, outdir, state_path, full=False):
    params = model_params(cfg)
    u = _load_state(state_path)
    rep = energetics.q_total(u, params,
                             with_pairings=bool(full and cfg["decompose"]["pairings"]),
                             with_direct=bool(full and cfg["decompose"]["direct"]),
                             budget=float(cfg["budget"]))
    name = "decomposition.json" if full else "energy.json"
    write_json(os.path.join(outdir, name), rep.to_json_dict())
    print(f"E_sN = {rep.e_sN:.12g}, R_sN = {rep.r_sN:.12g}, Q_sN = {rep.q_sN:.12g}")
    if rep.identities:
        worst = max(rep.identities.values())
        print(f"worst identity residual: {worst:.3e}")
    return {"q_sN": rep.q_sN}


def cmd_audit(cfg, outdir, which):
    params = model_params(cfg)
    budget = float(cfg["budget"])
    if which == "counting":
        shell_max = int(cfg["audit"]["counting"]["shell_max"])
        rows = []
        shells = 2
        levels = []
        while shells <= shell_max:
            levels.append(shells)
            shells *= 2
        k_choices = {"zero": [0, 0, 0], "unit": [1, 0, 0], "skew": [3, 2, 1]}
        for n, iota in ((2, (1, -1)), (3, (1, -1, 1))):
            for kname, K in k_choices.items():
                for lv in levels:
                    fam = resonance.counting_audit_family(
                        n, [lv] * n, iota, np.array(K[:3]), d=3, budget=budget)
                    rows.append({"family": f"n{n}_{kname}", "n": n, "K": kname,
                                 "shell": lv, "max_count": fam["max_count"],
                                 "bound": fam["bound"], "max_ratio": fam["max_ratio"],
                                 "argmax_kappa": fam["argmax_kappa"]})
        write_csv(os.path.join(outdir, "counting_audit.csv"),
                  ["family", "n", "K", "shell", "max_count", "bound", "max_ratio",
                   "argmax_kappa"], rows)
        worst = max(r["max_ratio"] for r in rows)
        hand = resonance.counting_audit(2, [4, 4], (1, -1), np.array([1, 0, 0]), 1, d=3)
        write_json(os.path.join(outdir, "counting_summary.json"),
                   {"rows": rows, "max_ratio": worst, "hand_case": hand})
        print(f"counting audit: {len(rows)} families, max ratio {worst:.3f}, "
              f"hand case count={hand['count']} bound={hand['bound']}")
        return {"max_ratio": worst}
    if which == "psi-bound":
        out = {}
        for s in cfg["audit"]["psi_bound"]["s_values"]:
            res = resonance.psi_bound_audit(1, int(cfg["audit"]["psi_bound"]["kmax"]),
                                            float(s), budget=budget)
            out[str(s)] = res
            print(f"psi bound s={s}: max ratio {res['max_ratio']:.4f} over {res['rows']} rows")
        write_json(os.path.join(outdir, "psi_bound.json"), out)
        return {"max_ratio": max(v["max_ratio"] for v in out.values())}
    if which == "psi-corrector":
        kmax = int(cfg["audit"]["psi_corrector"]["kmax"])
        out = {w: energetics.corrector_audit(params, kmax, w)
               for w in ("psi", "psi_tilde")}
        for w, res in out.items():
            print(f"corrector {w}: max audited ratio {res['max_ratio']:.4f} "
                  f"({res['rows']} rows)")
        write_json(os.path.join(outdir, "psi_corrector.json"), out)
        return {k: v["max_ratio"] for k, v in out.items()}
    if which == "chaos":
        mc = mc_config(cfg)
        a = cfg["audit"]["chaos"]
        rows, full = [], {}
        for nd in a["degrees"]:
            rep = experiments.chaos_audit(int(nd), mc, form=a.get("form", "power"))
            full[str(nd)] = rep
            rows.append({"experiment": "chaos", "degree": nd, "form": rep["form"],
                         "value": rep["beta_tail"], "ci_lo": "", "ci_hi": "",
                         "beta_plugin": rep["beta_plugin"],
                         "ratio_p4_p2": rep["ratio_p4_p2"]})
            print(f"chaos n={nd}: tail exponent {rep['beta_tail']:.3f} "
                  f"(target {nd/2:.1f}), p4/p2 ratio {rep['ratio_p4_p2']:.4f}")
        write_csv(os.path.join(outdir, "chaos_audit.csv"),
                  ["experiment", "degree", "form", "value", "ci_lo", "ci_hi",
                   "beta_plugin", "ratio_p4_p2"], rows)
        write_json(os.path.join(outdir, "chaos_audit.json"), full)
        return {"degrees": a["degrees"]}
    if which == "dual-path":
        dp = cfg["audit"]["dual_path"]
        rows = []
        for seed in dp["seeds"]:
            for N in dp["levels"]:
                p = params.replace(N=int(N))
                spec = randomfield.SamplerSpec(p, int(N), int(N), int(seed))
                u = randomfield.sample_mu_s(spec)
                w = lattice.weighted_field(u, p)
                r1g = energetics.part_R1(w, p)
                r1d = energetics.part_R1(w, p, method="direct", budget=budget)
                r2g = energetics.part_R2(w, p)
                r2d = energetics.part_R2(w, p, method="direct", budget=budget)
                rows.append({"seed": seed, "N": N,
                             "rel_err_r1": abs(r1g - r1d) / (1 + abs(r1d)),
                             "rel_err_r2": abs(r2g - r2d) / (1 + abs(r2d))})
                print(f"dual path seed={seed} N={N}: "
                      f"r1 {rows[-1]['rel_err_r1']:.3e}  r2 {rows[-1]['rel_err_r2']:.3e}")
        write_csv(os.path.join(outdir, "dual_path.csv"),
                  ["seed", "N", "rel_err_r1", "rel_err_r2"], rows)
        write_json(os.path.join(outdir, "dual_path.json"), {"rows": rows})
        return {"max_rel_err": max(max(r["rel_err_r1"], r["rel_err_r2"]) for r in rows)}
    raise ParameterError(f"unknown audit {which!r}")


def cmd_mc(cfg, outdir, which):
    params = model_params(cfg)
    mc = mc_config(cfg)
    if which == "moments":
        rep = experiments.moment_growth(params, mc)
        if rep.get("status") == "empty_ball":
            write_json(os.path.join(outdir, "moments.json"), rep)
            print("empty ball: no samples inside the norm cutoff")
            return rep
        rows = [{"experiment": "moments", "p": r["p"], "value": r["norm"],
                 "ci_lo": "", "ci_hi": "", "kish_ess": r["kish_ess"],
                 "reliable": r["reliable"]} for r in rep["table"]]
        rows.append({"experiment": "beta_hat", "p": "", "value": rep["beta_hat"],
                     "ci_lo": rep["beta_ci"][0], "ci_hi": rep["beta_ci"][1],
                     "kish_ess": "", "reliable": ""})
        write_csv(os.path.join(outdir, "moments.csv"),
                  ["experiment", "p", "value", "ci_lo", "ci_hi", "kish_ess", "reliable"],
                  rows)
        write_json(os.path.join(outdir, "moments.json"), rep)
        print(f"beta_hat = {rep['beta_hat']:.4f}  CI [{rep['beta_ci'][0]:.4f}, "
              f"{rep['beta_ci'][1]:.4f}]  ball fraction {rep['ball_fraction']:.3f}")
        return {"beta_hat": rep["beta_hat"]}
    if which == "weights":
        wcfg = cfg["weights"]
        rep = experiments.weight_integrability(params, wcfg["n_list"],
                                               wcfg["p_list"], mc,
                                               n_ref=wcfg.get("n_ref"))
        rows = [{"experiment": "weight_estimate", "N": e["N"], "p": "",
                 "value": e["log_estimate"], "ci_lo": e["log_ci_lo"],
                 "ci_hi": e["log_ci_hi"]} for e in rep["estimates"]]
        rows += [{"experiment": "weight_distance", "N": d["N"], "p": d["p"],
                  "value": d["log_density_distance"], "ci_lo": "", "ci_hi": ""}
                 for d in rep["distances"]]
        write_csv(os.path.join(outdir, "weights.csv"),
                  ["experiment", "N", "p", "value", "ci_lo", "ci_hi"], rows)
        write_json(os.path.join(outdir, "weights.json"), rep)
        print("log-estimates:", {e["N"]: round(e["log_estimate"], 2) for e in rep["estimates"]})
        return {"n_ref": rep["n_ref"]}
    if which == "transport":
        tcfg = cfg["transport"]
        base = experiments.CylinderSet(
            conditions=[(tuple(c[0]), float(c[1])) for c in tcfg["conditions"]],
            cap_radius=float(tcfg["cap_radius"]))
        rep = experiments.measure_transport(params, base, mc.t_grid, mc,
                                            shrink_factors=tuple(tcfg["shrink_factors"]))
        write_csv(os.path.join(outdir, "transport.csv"),
                  ["experiment", "t", "shrink", "kind", "value", "count",
                   "ci_lo", "ci_hi"],
                  [{"experiment": "transport", "t": r["t"], "shrink": r["shrink"],
                    "kind": r["kind"], "value": r["estimate"], "count": r["count"],
                    "ci_lo": r["ci_lo"], "ci_hi": r["ci_hi"]} for r in rep["rows"]])
        write_json(os.path.join(outdir, "transport.json"), rep)
        print("transport slopes:", rep["slopes"])
        return {"slopes": rep["slopes"]}
    if which == "pointwise-law":
        pcfg = cfg["pointwise"]
        rep = experiments.pointwise_law(params, float(pcfg["t0"]), pcfg["x0"], mc,
                                        bins=int(pcfg.get("bins", 40)))
        write_json(os.path.join(outdir, "pointwise.json"), rep)
        rows = []
        h = rep["histogram"]
        for i, xe in enumerate(h["x_edges"][:-1]):
            for j, ye in enumerate(h["y_edges"][:-1]):
                rows.append({"experiment": "pointwise_hist", "x_lo": xe, "y_lo": ye,
                             "value": h["counts"][i][j]})
        write_csv(os.path.join(outdir, "pointwise_hist.csv"),
                  ["experiment", "x_lo", "y_lo", "value"], rows)
        print(f"two-sample KS p-values: re {rep['ks_two_sample']['re'][1]:.3f}, "
              f"im {rep['ks_two_sample']['im'][1]:.3f}; max atom {rep['max_atom']:.2e}")
        return {"max_atom": rep["max_atom"]}
    if which == "convergence":
        ccfg = cfg["convergence"]
        rows, payload = [], []
        for seed in ccfg["seeds"]:
            spec = randomfield.SamplerSpec(params, int(cfg["sampler"]["n_low"]),
                                           int(ccfg["n_ref"]), int(seed))
            u = randomfield.sample_mu_s(spec)
            rep = dynamics.convergence_study(u, params, ccfg["n_list"],
                                             float(ccfg["t"]), params.sigma,
                                             dt=float(cfg["flow"]["dt"]),
                                             n_ref=int(ccfg["n_ref"]))
            payload.append({"seed": seed, "study": rep})
            for row in rep["table"]:
                rows.append({"experiment": "convergence", "seed": seed, "N": row["N"],
                             "value": row["sup_distance"],
                             "sup_h_sigma": row["sup_h_sigma"]})
            print(f"seed {seed}: sup distances "
                  f"{[round(r['sup_distance'], 6) for r in rep['table']]}")
        write_csv(os.path.join(outdir, "convergence.csv"),
                  ["experiment", "seed", "N", "value", "sup_h_sigma"], rows)
        write_json(os.path.join(outdir, "convergence.json"), {"runs": payload})
        return {"seeds": ccfg["seeds"]}
    raise ParameterError(f"unknown mc experiment {which!r}")


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="torusnls")
    ap.add_argument("--config", help="JSON config file")
    ap.add_argument("--set", action="append", metavar="KEY=VALUE",
                    help="dotted-path config override")
    ap.add_argument("--out", default="out", help="output directory")
    ap.add_argument("--seed", type=int, help="master seed override")
    ap.add_argument("--threads", type=int, help="worker threads")
    ap.add_argument("--budget", type=float, help="enumeration budget")
    sub = ap.add_subparsers(dest="command", required=True)
    sub.add_parser("sample")
    p_ev = sub.add_parser("evolve")
    p_ev.add_argument("state")
    p_en = sub.add_parser("energy")
    p_en.add_argument("state")
    p_de = sub.add_parser("decompose")
    p_de.add_argument("state")
    p_au = sub.add_parser("audit")
    p_au.add_argument("which", choices=["counting", "psi-bound", "psi-corrector",
                                        "chaos", "dual-path"])
    p_mc = sub.add_parser("mc")
    p_mc.add_argument("which", choices=["moments", "weights", "transport",
                                        "pointwise-law", "convergence"])
    args = ap.parse_args(argv)

    t0 = time.perf_counter()
    try:
        cfg = load_config(args)
        if cfg.get("threads", 1) > 1:
            try:
                import numba
                numba.set_num_threads(int(cfg["threads"]))
            except Exception:
                pass
        os.makedirs(args.out, exist_ok=True)
        log_line("info", f"start {args.command}", out=args.out)
        if args.command == "sample":
            extra = cmd_sample(cfg, args.out)
        elif args.command == "evolve":
            extra = cmd_evolve(cfg, args.out, args.state)
        elif args.command == "energy":
            extra = cmd_energy(cfg, args.out, args.state, full=False)
        elif args.command == "decompose":
            extra = cmd_energy(cfg, args.out, args.state, full=True)
        elif args.command == "audit":
            extra = cmd_audit(cfg, args.out, args.which)
        elif args.command == "mc":
            extra = cmd_mc(cfg, args.out, args.which)
        else:
            raise ParameterError(f"unknown command {args.command!r}")
        write_manifest(args.out, cfg, args.command, time.perf_counter() - t0,
                       {"result": extra})
        log_line("info", f"done {args.command}", wall=time.perf_counter() - t0)
        return 0
    except ParameterError as exc:
        _emit_error(args, "config", str(exc), 2)
        return 2
    except BudgetExceededError as exc:
        _emit_error(args, "budget", str(exc), 3)
        return 3
    except IntegrationBlowupError as exc:
        _emit_error(args, "blowup", str(exc), 4)
        return 4


def _emit_error(args, kind: str, message: str, code: int):
    payload = {"error": kind, "message": message, "exit_code": code}
    log_line("error", message, error=kind, exit_code=code)
    try:
        os.makedirs(args.out, exist_ok=True)
        write_json(os.path.join(args.out, "error.json"), payload)
    except Exception:
        pass


if __name__ == "__main__":
    sys.exit(main())
