import json
import os

import numpy as np
import pytest

from torusnls.cli import main
from torusnls.lattice import SpectralField, field_to_bytes


def run(args):
    return main(args)


@pytest.fixture
def state_file(tmp_path):
    u = SpectralField.single_mode(1, 3, (1,), 0.4 + 0.1j)
    path = tmp_path / "state.spf"
    path.write_bytes(field_to_bytes(u))
    return str(path)


def test_sample_writes_ensemble_and_manifest(tmp_path):
    out = str(tmp_path / "ens")
    code = run(["--out", out, "--seed", "7", "--set", "sample.count=3",
                "--set", "sampler.n_tail=4", "sample"])
    assert code == 0
    names = sorted(os.listdir(out))
    assert "manifest.json" in names and "covariance.json" in names
    assert sum(n.endswith(".spf") for n in names) == 3
    manifest = json.loads((tmp_path / "ens" / "manifest.json").read_text())
    assert manifest["config"]["sampler"]["master_seed"] == 7
    assert "prng_algo" in manifest


def test_energy_and_decompose(tmp_path, state_file):
    out = str(tmp_path / "en")
    assert run(["--out", out, "--set", "params.N=3", "energy", state_file]) == 0
    rep = json.loads((tmp_path / "en" / "energy.json").read_text())
    # single mode: correction vanishes, derivative vanishes
    assert rep["r_sN"] == 0.0
    assert rep["q_sN"] == 0.0
    out2 = str(tmp_path / "de")
    assert run(["--out", out2, "--set", "params.N=2",
                "--set", "decompose.direct=true", "decompose", state_file]) == 0
    rep2 = json.loads((tmp_path / "de" / "decomposition.json").read_text())
    assert max(rep2["identities"].values()) < 1e-10
    assert rep2["remainder_split"]["R1"]["slot_principal_counts"][0] > 0


def test_evolve_round_trip_and_idempotence(tmp_path, state_file):
    out1 = str(tmp_path / "e1")
    out2 = str(tmp_path / "e2")
    args = ["--set", "flow.t_end=0.05", "--set", "params.N=3", "evolve", state_file]
    assert run(["--out", out1] + args) == 0
    assert run(["--out", out2] + args) == 0
    b1 = (tmp_path / "e1" / "trajectory.csv").read_bytes()
    b2 = (tmp_path / "e2" / "trajectory.csv").read_bytes()
    assert b1 == b2
    assert (tmp_path / "e1" / "state_final.spf").exists()


def test_config_error_exit_code(tmp_path, state_file):
    code = run(["--out", str(tmp_path / "bad"), "--set", "params.theta=0.9",
                "energy", state_file])
    assert code == 2
    err = json.loads((tmp_path / "bad" / "error.json").read_text())
    assert err["error"] == "config"


def test_budget_error_exit_code(tmp_path, state_file):
    # the raw-enumeration path checks its visit budget unconditionally
    code = run(["--out", str(tmp_path / "b"), "--budget", "10",
                "--set", "params.N=3", "--set", "decompose.direct=true",
                "decompose", state_file])
    assert code == 3


def test_missing_state_exit_code(tmp_path):
    code = run(["--out", str(tmp_path / "m"), "energy",
                str(tmp_path / "nothere.spf")])
    assert code == 2


def test_blowup_exit_code(tmp_path):
    u = SpectralField.single_mode(1, 3, (1,), 40.0)
    path = tmp_path / "big.spf"
    path.write_bytes(field_to_bytes(u))
    code = run(["--out", str(tmp_path / "bl"), "--set", "flow.dt=0.05",
                "--set", "flow.t_end=1.0", "--set", "params.N=3",
                "evolve", str(path)])
    assert code == 4


def test_config_file_and_override(tmp_path, state_file):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"params": {"N": 2}}))
    out = str(tmp_path / "c")
    assert run(["--config", str(cfg), "--out", out, "energy", state_file]) == 0
    manifest = json.loads((tmp_path / "c" / "manifest.json").read_text())
    assert manifest["config"]["params"]["N"] == 2


def test_audit_dual_path_cli(tmp_path):
    out = str(tmp_path / "dp")
    code = run(["--out", out, "--set", 'audit.dual_path.levels=[2]',
                "--set", 'audit.dual_path.seeds=[42]', "audit", "dual-path"])
    assert code == 0
    rows = (tmp_path / "dp" / "dual_path.csv").read_text().splitlines()
    assert rows[0] == "seed,N,rel_err_r1,rel_err_r2"
    assert len(rows) == 2


def test_mc_pointwise_cli(tmp_path):
    out = str(tmp_path / "pw")
    code = run(["--out", out, "--set", "mc.ensemble_size=200",
                "--set", "sampler.n_tail=4", "--set", "params.N=2",
                "mc", "pointwise-law"])
    assert code == 0
    assert (tmp_path / "pw" / "pointwise.json").exists()
    assert (tmp_path / "pw" / "pointwise_hist.csv").exists()


def test_mc_weights_cli(tmp_path):
    out = str(tmp_path / "w")
    code = run(["--out", out, "--set", "mc.ensemble_size=300",
                "--set", "sampler.n_tail=8", "--set", "params.N=4",
                "--set", "weights.n_list=[2,4]", "--set", "weights.n_ref=8",
                "--set", "mc.bootstrap=10", "mc", "weights"])
    assert code == 0
    rows = (tmp_path / "w" / "weights.csv").read_text().splitlines()
    assert rows[0] == "experiment,N,p,value,ci_lo,ci_hi"
    assert any("weight_distance" in r for r in rows)


def test_mc_convergence_and_transport_cli(tmp_path):
    out = str(tmp_path / "cv")
    assert run(["--out", out, "--set", "convergence.n_list=[2,4]",
                "--set", "convergence.n_ref=8", "--set", "convergence.t=0.05",
                "--set", "convergence.seeds=[3]", "--set", "flow.dt=0.005",
                "mc", "convergence"]) == 0
    assert (tmp_path / "cv" / "convergence.csv").exists()
    out2 = str(tmp_path / "tp")
    assert run(["--out", out2, "--set", "params.N=2",
                "--set", "sampler.n_tail=4", "--set", "mc.ensemble_size=200",
                "--set", "mc.t_grid=[0.05]", "--set", "mc.dt=0.005",
                "mc", "transport"]) == 0
    assert (tmp_path / "tp" / "transport.csv").exists()


def test_decompose_matches_golden(tmp_path):
    import pathlib
    fx = pathlib.Path(__file__).parent / "fixtures"
    out = str(tmp_path / "g")
    code = run(["--out", out, "--set", "params.N=3", "decompose",
                str(fx / "seed42_d1_n3.spf")])
    assert code == 0
    got = json.loads((tmp_path / "g" / "decomposition.json").read_text())
    golden = json.loads((fx / "seed42_d1_n3_golden.json").read_text())
    assert abs(got["q_sN"] - golden["q_sN"]) <= 1e-10 * abs(golden["q_sN"])
    for name, ref in golden["parts"].items():
        gv = got["parts"][name]
        scale = max(abs(complex(ref["re"], ref["im"])), 1.0)
        assert abs(complex(gv["re"], gv["im"]) - complex(ref["re"], ref["im"])) \
            <= 1e-10 * scale, name
    assert max(got["identities"].values()) <= 1e-10
