import json

import numpy as np
import pytest

from gaussplit import __version__
from gaussplit.cli import main
from gaussplit.decompose import general_decompose, make_plan_thinning
from gaussplit.linalg import Dense, read_matrix_csv, write_matrix_csv


@pytest.fixture
def data(tmp_path):
    X = np.random.default_rng(0).standard_normal((5, 3)) * 10.0 ** np.arange(-3, 0)
    path = tmp_path / "x.csv"
    write_matrix_csv(path, X, header=["a", "b", "c"])
    return X, path


def _comments(path):
    return [ln for ln in path.read_text().splitlines() if ln.startswith("#")]


@pytest.mark.parametrize("plan", [
    '{"kind": "thinning", "eps": [0.2, 0.3, 0.5]}',
    '{"kind": "fission"}',
    '{"kind": "sample_split", "sizes": [2, 3]}',
    '{"kind": "info_preserving", "sizes": [3, 2]}',
    '{"kind": "dependent", "q_col": [0.6, 0.8]}',
])
def test_decompose_reconstruct_round_trip(tmp_path, data, plan):
    X, path = data
    out = tmp_path / "folds"
    assert main(["decompose", "-s", f"input={path}", "-s", f"plan={plan}", "--seed", "3", "-o", str(out)]) == 0
    meta = json.loads((out / "plan.json").read_text())
    assert meta["version"] == __version__ and meta["config"]["seed"] == 3
    assert any("config:" in c for c in _comments(out / "fold_1.csv"))
    rec = tmp_path / "rec"
    assert main(["reconstruct", "-s", f"plan_file={out / 'plan.json'}", "-o", str(rec)]) == 0
    Xr = read_matrix_csv(rec / "reconstructed.csv")
    assert np.abs(Xr - X).max() <= 1e-12


def test_identity_plan_returns_input(tmp_path, data):
    X, path = data
    out = tmp_path / "o"
    assert main(["decompose", "-s", f"input={path}", "-s", 'plan={"kind": "identity"}', "-o", str(out)]) == 0
    np.testing.assert_array_equal(read_matrix_csv(out / "fold_1.csv"), X)
    assert not (out / "fold_2.csv").exists()


def test_thinning_matches_library(tmp_path):
    rng = np.random.default_rng(1)
    Sigma = np.array([[2.0, 0.5, 0.0], [0.5, 1.0, 0.2], [0.0, 0.2, 1.5]])
    X = rng.multivariate_normal(np.zeros(3), Sigma, size=4)
    path = tmp_path / "x.csv"
    write_matrix_csv(path, X)
    cfg = tmp_path / "cfg.toml"
    cfg.write_text(f'input = "{path}"\nseed = 9\nsigma_prime = {{kind = "dense", matrix = {Sigma.tolist()}}}\n'
                   '[plan]\nkind = "thinning"\neps = [0.5, 0.5]\n')
    assert main(["decompose", "-c", str(cfg), "-o", str(tmp_path / "o")]) == 0
    fs = general_decompose(X, make_plan_thinning([0.5, 0.5], 4), Dense(Sigma), seed=9)
    for k in range(2):
        np.testing.assert_array_equal(read_matrix_csv(tmp_path / "o" / f"fold_{k + 1}.csv"), fs.folds[k])


def test_seed_env_and_determinism(tmp_path, data, monkeypatch):
    X, path = data
    monkeypatch.setenv("GAUSSPLIT_SEED", "42")
    args = ["decompose", "-s", f"input={path}", "-s", 'plan={"kind": "fission"}']
    assert main(args + ["-o", str(tmp_path / "a")]) == 0
    assert main(args + ["-o", str(tmp_path / "b")]) == 0
    assert json.loads((tmp_path / "a" / "plan.json").read_text())["config"]["seed"] == 42
    for name in ("fold_1.csv", "fold_2.csv"):
        A = read_matrix_csv(tmp_path / "a" / name)
        np.testing.assert_array_equal(A, read_matrix_csv(tmp_path / "b" / name))
    assert main(args + ["--seed", "1", "-o", str(tmp_path / "c")]) == 0
    assert not np.array_equal(read_matrix_csv(tmp_path / "c" / "fold_2.csv"), read_matrix_csv(tmp_path / "a" / "fold_2.csv"))


def test_process_decompose(tmp_path):
    vals = tmp_path / "v.csv"
    write_matrix_csv(vals, np.array([[1.0, 2.0, 3.0, 4.0]]))
    out = tmp_path / "o"
    args = ["decompose", "-s", f"input={vals}", "-s", "index_set=[0.0, 0.5, 1.0, 1.5]",
            "-s", 'kernel_prime={"kind": "squared_exponential", "variance": 1.0, "lengthscale": 0.4}',
            "-s", 'plan={"kind": "dependent", "q_col": [0.6, 0.8]}', "-o", str(out)]
    assert main(args) == 0
    M = read_matrix_csv(out / "folds.csv")
    assert M.shape == (4, 3)
    np.testing.assert_array_equal(M[:, 0], [0.0, 0.5, 1.0, 1.5])
    assert main(["reconstruct", "-s", f"plan_file={out / 'plan.json'}", "-o", str(tmp_path / "r")]) == 0
    np.testing.assert_allclose(read_matrix_csv(tmp_path / "r" / "reconstructed.csv"), [[1.0, 2.0, 3.0, 4.0]],
                               atol=1e-12)


def test_simulate_command(tmp_path):
    out = tmp_path / "sim"
    args = ["simulate", "-s", "a=4", "-s", "b=10", "-s", "replicates=3", "-s", "omega=[0.0, 0.9]",
            "-s", "rho=0.5", "--seed", "5", "-o", str(out)]
    assert main(args) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["config"]["params"]["a"] == 4 and len(summary["cells"]) == 6
    assert summary["failures"] == 0
    first = (out / "replicates.csv").read_text()
    assert first.startswith("# gaussplit")
    assert main(args) == 0
    assert (out / "replicates.csv").read_text() == first


def test_validate_clusters_command(tmp_path):
    rng = np.random.default_rng(2)
    from gaussplit.casestudy import block_truth
    from gaussplit.inference import MatrixNormalModel
    X = MatrixNormalModel(block_truth((3, 3), 0.8), 0.5, 60).sample(rng)
    path = tmp_path / "x.csv"
    write_matrix_csv(path, X)
    out = tmp_path / "vc"
    assert main(["validate-clusters", "-s", f"data={path}", "-o", str(out)]) == 0
    curve = read_matrix_csv(out / "curve.csv")
    assert curve.shape == (6, 2)
    summary = json.loads((out / "summary.json").read_text())
    assert summary["h_hat"] == curve[np.argmax(curve[:, 1]), 0]
    assert read_matrix_csv(out / "clusters.csv").shape == (6, 2)

    out2 = tmp_path / "exp"
    assert main(["validate-clusters", "-s", "sizes=[3, 3]", "-s", "replicates=4", "-o", str(out2)]) == 0
    assert json.loads((out2 / "summary.json").read_text())["replicates"] == 4


def test_fisher_report_command(tmp_path, capsys):
    out = tmp_path / "f"
    assert main(["fisher-report", "-s", "Sigma=[[2.0, 0.0], [0.0, 1.0]]", "-s", "q1=0.6", "-o", str(out)]) == 0
    rep = json.loads((out / "fisher.json").read_text())["report"]
    # mean information in fold 1 with Sigma' = I: q1^2 (q1^2 Sigma + (1 - q1^2) I)^-1
    M = 0.36 * np.diag([2.0, 1.0]) + 0.64 * np.eye(2)
    np.testing.assert_allclose(rep["I1_theta"], 0.36 * np.linalg.inv(M), atol=1e-12)
    assert "theta[0]" in capsys.readouterr().out
    out2 = tmp_path / "g"
    assert main(["fisher-report", "-s", "Sigma=[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]",
                 "-s", "covariance_model=compound_symmetry", "-s", "gamma=0.5", "-o", str(out2)]) == 0
    tuned = json.loads((out2 / "fisher.json").read_text())["tuned"]
    assert tuned["sigma_prime"] == pytest.approx(1.0, abs=1e-5)


@pytest.mark.parametrize("args", [
    ["decompose"],
    ["decompose", "-s", "input=/nonexistent.csv"],
    ["decompose", "-s", "input=x.csv", "-s", "bogus=1"],
    ["simulate", "-s", "rho=1.5"],
    ["simulate", "-s", "preset=huge"],
    ["fisher-report", "-s", "Sigma=[[1.0]]"],
    ["reconstruct", "-s", "plan_file=/nonexistent.json"],
    ["decompose", "--seed", "-1", "-s", "input=x.csv"],
])
def test_config_errors_exit_2(tmp_path, args):
    assert main(args + ["-o", str(tmp_path / "o")]) == 2


def test_impossible_split_is_config_error(tmp_path):
    path = tmp_path / "x.csv"
    write_matrix_csv(path, np.array([[1.0, 2.0]]))
    assert main(["decompose", "-s", f"input={path}", "-s", 'plan={"kind": "sample_split", "sizes": [1, 1]}',
                 "-o", str(tmp_path / "o")]) == 2


def test_numerical_failure_exit_3(tmp_path):
    path = tmp_path / "x.csv"
    write_matrix_csv(path, np.array([[1.0, 2.0]]))
    bad = '{"kind": "dense", "matrix": [[1.0, 2.0], [2.0, 1.0]]}'
    assert main(["decompose", "-s", f"input={path}", "-s", f"sigma_prime={bad}", "-o", str(tmp_path / "o")]) == 3


def test_config_file_sections(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"seed": 4, "simulate": {"a": 3, "b": 6, "replicates": 2, "methods": ["c"]}}))
    out = tmp_path / "o"
    assert main(["simulate", "-c", str(cfg), "-o", str(out)]) == 0
    s = json.loads((out / "summary.json").read_text())
    assert s["config"]["seed"] == 4 and s["config"]["params"]["methods"] == ["c"]
