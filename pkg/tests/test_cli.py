import json
import shutil
from pathlib import Path

import numpy as np
import pytest

from backcontract.cli import main
from backcontract.config import load_config
from backcontract.pipeline import write_profile
from backcontract.profile import TailProfile

STAGES = ["profile", "rates", "backward", "chains", "report"]

SMALL_QUADRATIC = """
seed = 7
lambda = 0.35

[system]
kind = "quadratic"
a = 2.0

[horizons]
orbit = 40
tree_depth = 10
forward_extra = 30

[samples]
tails = 100000
roots = 6
triples = 2000
chains = 4000
"""


def write_config(tmp_path: Path, text: str, name: str = "exp.toml") -> Path:
    path = tmp_path / name
    path.write_text(text)
    return path


def run(config: Path, out: Path, *stages, threads: int = 1) -> list[int]:
    return [main([s, "--config", str(config), "--out", str(out), "--threads", str(threads)])
            for s in stages]


def snapshot(out: Path) -> dict[str, bytes]:
    files = {}
    for p in sorted(out.rglob("*")):
        if not p.is_file():
            continue
        data = p.read_bytes()
        if p.name == "report.json":
            rep = json.loads(data)
            rep.pop("generated_at")
            data = json.dumps(rep, sort_keys=True).encode()
        files[str(p.relative_to(out))] = data
    return files


# --- exit codes ------------------------------------------------------------------

def test_missing_seed_exits_2(tmp_path):
    cfg = write_config(tmp_path, SMALL_QUADRATIC.replace("seed = 7\n", ""))
    assert run(cfg, tmp_path / "out", "profile") == [2]


def test_unknown_key_and_missing_file_exit_2(tmp_path):
    cfg = write_config(tmp_path, SMALL_QUADRATIC + "\nbogus = 1\n")
    assert run(cfg, tmp_path / "out", "profile") == [2]
    assert run(tmp_path / "absent.toml", tmp_path / "out", "profile") == [2]
    assert main(["profile"]) == 2


def test_seed_flag_supplies_missing_seed(tmp_path):
    cfg = write_config(tmp_path, SMALL_QUADRATIC.replace("seed = 7\n", ""))
    assert main(["profile", "--config", str(cfg), "--out", str(tmp_path / "o"), "--seed", "3"]) == 0
    assert json.loads((tmp_path / "o" / "tailclass.json").read_text())["seed"] == 3


def plant(tmp_path: Path, gamma_tail) -> tuple[Path, Path]:
    cfg_path = write_config(tmp_path, SMALL_QUADRATIC)
    out = tmp_path / "planted"
    cfg = load_config(cfg_path, out=str(out))
    write_profile(cfg, TailProfile.from_tail(gamma_tail))
    return cfg_path, out


def test_planted_heavy_polynomial_tail_exits_3(tmp_path):
    n = np.arange(1, 201, dtype=float)
    cfg, out = plant(tmp_path, n ** -1.5)
    assert json.loads((out / "tailclass.json").read_text())["regime"] == "POLYNOMIAL"
    assert run(cfg, out, "rates") == [3]


def test_planted_stretched_tail_gives_stretched_rate(tmp_path):
    n = np.arange(1, 201, dtype=float)
    cfg, out = plant(tmp_path, np.exp(-0.3 * np.sqrt(n)))
    assert run(cfg, out, "rates") == [0]
    rate = json.loads((out / "rates.json").read_text())["b"]
    assert rate["family"] == "stretched"
    assert rate["tau"] == pytest.approx(0.5, rel=0.1)
    assert rate["c"] > 0


def test_planted_exponential_tail_gives_exp_rate(tmp_path):
    n = np.arange(1, 201, dtype=float)
    cfg, out = plant(tmp_path, np.exp(-0.4 * n))
    assert run(cfg, out, "rates") == [0]
    rate = json.loads((out / "rates.json").read_text())["b"]
    assert rate["family"] == "exp" and rate["c"] > 0


def test_uncertified_custom_rate_exits_3(tmp_path):
    text = SMALL_QUADRATIC + '\n[rates]\nfamily = "custom"\nvalues = ' + str([2, 3, 7] + [7] * 50) + "\n"
    cfg = write_config(tmp_path, text)
    out = tmp_path / "out"
    assert run(cfg, out, "profile", "rates") == [0, 0]
    assert json.loads((out / "rates.json").read_text())["certified_submultiplicative"] is False
    assert run(cfg, out, "chains") == [3]
    assert run(cfg, out, "backward") == [3]


def test_node_cap_exceeded_exits_2(tmp_path):
    text = SMALL_QUADRATIC.replace("tree_depth = 10", "tree_depth = 12\nnode_cap = 1000")
    cfg = write_config(tmp_path, text)
    out = tmp_path / "out"
    assert run(cfg, out, "profile", "rates", "backward") == [0, 0, 2]


def test_partial_pipeline_report_exits_2(tmp_path):
    cfg = write_config(tmp_path, SMALL_QUADRATIC)
    out = tmp_path / "out"
    assert run(cfg, out, "profile", "rates") == [0, 0]
    assert run(cfg, out, "report") == [2]


# --- pipeline outputs -------------------------------------------------------------

def test_doubling_pipeline_all_pass(tmp_path):
    text = """
seed = 2024
lambda = 0.5
[system]
kind = "doubling"
[horizons]
orbit = 40
tree_depth = 8
[samples]
tails = 5000
roots = 10
triples = 2000
chains = 2000
"""
    cfg = write_config(tmp_path, text)
    out = tmp_path / "out"
    assert run(cfg, out, *STAGES) == [0] * 5
    rep = json.loads((out / "report.json").read_text())
    assert rep["all_passed"]
    assert json.loads((out / "tailclass.json").read_text())["regime"] == "TRIVIAL"
    back = json.loads((out / "backward_fit.json").read_text())
    assert back["fraction_beta_ok"] == 1.0
    assert all(r["beta"] == pytest.approx(np.log(2), abs=1e-9) for r in back["per_root"])
    # per-root files and the CSV layout
    sigma = (out / "backward" / "root_000" / "sigma.csv").read_text().splitlines()
    assert sigma[0] == "n,node_count,sigma_log,argmin_branch_id"
    assert len(sigma) == 1 + 9
    tails = (out / "tails.csv").read_text().splitlines()
    assert tails[0] == "n,mu_hat,gamma_tail,stderr"
    chains = (out / "chains.csv").read_text().splitlines()
    assert chains[0] == "sample_index,u_value,chain_length,censored"


def test_quadratic_pipeline_report_has_per_criterion_booleans(tmp_path):
    cfg = write_config(tmp_path, SMALL_QUADRATIC)
    out = tmp_path / "out"
    assert run(cfg, out, *STAGES) == [0] * 5
    rep = json.loads((out / "report.json").read_text())
    assert rep["checks"] and all(isinstance(c["passed"], bool) for c in rep["checks"])
    assert rep["provenance"]["config"]["seed"] == 7
    assert rep["provenance"]["config"]["tree_depth"] == 10
    tower = json.loads((out / "tower.json").read_text())
    assert tower["concatenation"]["violations"] == 0


def test_stage_rerun_is_idempotent(tmp_path):
    cfg = write_config(tmp_path, SMALL_QUADRATIC)
    out = tmp_path / "out"
    run(cfg, out, *STAGES)
    before = snapshot(out)
    run(cfg, out, "rates")
    assert snapshot(out) == before


def test_determinism_across_thread_counts(tmp_path):
    cfg = write_config(tmp_path, SMALL_QUADRATIC)
    snaps = []
    out = tmp_path / "out"  # same path every time: the resolved config records it
    for threads in (1, 2, 8):
        shutil.rmtree(out, ignore_errors=True)
        assert run(cfg, out, *STAGES, threads=threads) == [0] * 5
        snaps.append(snapshot(out))
    assert snaps[0] == snaps[1] == snaps[2]
