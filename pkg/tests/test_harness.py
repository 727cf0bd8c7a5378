import json
import os

import numpy as np
import pytest

from cfpc import SimConfig, cli, harness, netgen, policy
from cfpc.errors import ConfigError


def small_eval_cfg():
    return SimConfig(L=4, K=3, M=2, N_assoc=2, tau_p=3)


@pytest.fixture(scope="module")
def small_dataset():
    cfg = small_eval_cfg()
    return cfg, netgen.generate_dataset(cfg, 6, seed=77)


# -- evaluate -------------------------------------------------------------------


def test_evaluate_single_method_stats_ordering(small_dataset):
    cfg, snaps = small_dataset
    report = harness.evaluate(snaps, ["epa"], cfg)
    s = report.stats["epa"]
    assert s["min_se"] <= s["mean_se"] <= s["max_se"]
    assert report.per_ue["epa"].shape == (6, 3)


def test_evaluate_unknown_method_rejected(small_dataset):
    cfg, snaps = small_dataset
    with pytest.raises(ConfigError, match="unknown methods"):
        harness.evaluate(snaps, ["epa", "magic"], cfg)


def test_evaluate_policy_requires_checkpoint(small_dataset):
    cfg, snaps = small_dataset
    with pytest.raises(ConfigError, match="checkpoint"):
        harness.evaluate(snaps, ["policy"], cfg)


def test_evaluate_policy_and_mmf_dominance(small_dataset):
    cfg, snaps = small_dataset
    params = policy.init_params(8, 3, (4, 2, 1), seed=0)
    report = harness.evaluate(snaps, ["epa", "fpa", "lozano", "mmf", "policy"],
                              cfg, checkpoint_params=params, nu=-0.5, theta=0.5)
    for m in ("epa", "fpa", "lozano", "policy"):
        assert np.all(report.minima["mmf"] >= report.minima[m] - 1e-3)
    assert report.oracle_converged >= 0


def test_evaluate_k_mismatched_checkpoint_runs(small_dataset):
    # model dimensions are independent of K: a checkpoint trained anywhere runs
    cfg, snaps = small_dataset
    params = policy.init_params(8, 3, (4, 2, 1), seed=1)
    report = harness.evaluate(snaps, ["policy"], cfg, checkpoint_params=params)
    assert report.per_ue["policy"].shape == (6, 3)


# -- artifacts ------------------------------------------------------------------


def test_report_roundtrip_and_cdf(tmp_path, small_dataset):
    cfg, snaps = small_dataset
    report = harness.evaluate(snaps, ["epa", "fpa"], cfg, nu=0.5)
    paths = harness.write_report(report, tmp_path, cfg)

    mat = harness.read_per_ue_csv(paths["per_ue_epa"])
    np.testing.assert_array_equal(mat, report.per_ue["epa"])  # exact round-trip

    summary = harness.read_summary_csv(paths["summary"])
    for col in ("mean_se", "min_se", "max_se"):
        assert summary["epa"][col] == pytest.approx(report.stats["epa"][col], rel=1e-5)
    # summary is recomputable from the stored matrix
    assert np.float64(mat.min(axis=1).mean()) == pytest.approx(
        summary["epa"]["min_se"], rel=1e-5
    )

    cdf = harness.read_cdf_csv(paths["cdf_epa"])
    assert np.all(np.diff(cdf[:, 0]) >= 0)
    assert np.all(np.diff(cdf[:, 1]) > 0)
    assert cdf[-1, 1] == 1.0

    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["config"]["K"] == 3
    assert manifest["config_fingerprint"] == cfg.fingerprint()


def test_report_byte_identical_across_runs(tmp_path, small_dataset):
    cfg, snaps = small_dataset
    r1 = harness.evaluate(snaps, ["epa"], cfg)
    r2 = harness.evaluate(snaps, ["epa"], cfg)
    d1, d2 = tmp_path / "a", tmp_path / "b"
    harness.write_report(r1, d1, cfg)
    harness.write_report(r2, d2, cfg)
    for name in ("summary.csv", "per_ue_se_epa.csv", "minse_cdf_epa.csv"):
        assert (d1 / name).read_bytes() == (d2 / name).read_bytes()


def test_worker_count_env(monkeypatch):
    monkeypatch.setenv("CFPC_THREADS", "1")
    assert harness.worker_count() == 1
    monkeypatch.setenv("CFPC_THREADS", "zebra")
    with pytest.raises(ConfigError):
        harness.worker_count()


def test_tune_and_report(small_dataset):
    cfg, snaps = small_dataset
    tuned = harness.tune_and_report(snaps[:3], cfg, [-0.5, 0.0, 0.5], [0.0, 0.5, 1.0])
    assert tuned["nu"] in (-0.5, 0.0, 0.5)
    assert tuned["theta"] in (0.0, 0.5, 1.0)
    assert len(tuned["nu_scores"]) == 3


# -- CLI ------------------------------------------------------------------------


def run_cli(*argv):
    return cli.main(list(argv))


def test_cli_generate_and_header(tmp_path, capsys):
    out = tmp_path / "d.cfpc"
    code = run_cli("generate", "--out", str(out), "--count", "4", "--seed", "5",
                   "--k", "3", "--l", "4", "--n-assoc", "2")
    assert code == 0
    header, snaps = netgen.load_dataset(out)
    assert header["count"] == 4 and header["K"] == 3
    assert "beta percentiles" in capsys.readouterr().out


def test_cli_generate_empty_and_determinism(tmp_path):
    a, b = tmp_path / "a.cfpc", tmp_path / "b.cfpc"
    assert run_cli("generate", "--out", str(a), "--count", "0") == 0
    header, snaps = netgen.load_dataset(a)
    assert header["count"] == 0 and snaps == []
    assert run_cli("generate", "--out", str(b), "--count", "0") == 0


def test_cli_eval_pipeline(tmp_path):
    data = tmp_path / "d.cfpc"
    run_cli("generate", "--out", str(data), "--count", "3", "--seed", "2",
            "--k", "3", "--l", "4", "--n-assoc", "2")
    ckpt = tmp_path / "m.cfpm"
    policy.save_checkpoint(ckpt, policy.init_params(8, 3, (4, 2, 1), seed=0))
    out_dir = tmp_path / "report"
    code = run_cli("eval", "--dataset", str(data), "--methods", "epa,policy",
                   "--checkpoint", str(ckpt), "--out-dir", str(out_dir),
                   "--k", "3", "--l", "4", "--n-assoc", "2")
    assert code == 0
    assert (out_dir / "summary.csv").exists()
    assert (out_dir / "minse_cdf_policy.csv").exists()


def test_cli_tune_writes_json(tmp_path):
    data = tmp_path / "d.cfpc"
    run_cli("generate", "--out", str(data), "--count", "3", "--seed", "2",
            "--k", "3", "--l", "4", "--n-assoc", "2")
    out = tmp_path / "tuned.json"
    code = run_cli("tune", "--dataset", str(data), "--out", str(out),
                   "--nu-grid=-0.5,0,0.5", "--theta-grid", "0,1",
                   "--k", "3", "--l", "4", "--n-assoc", "2")
    assert code == 0
    tuned = json.loads(out.read_text())
    assert "nu" in tuned and "theta" in tuned


def test_cli_complexity_prints_paper_numbers(capsys):
    assert run_cli("complexity") == 0
    out = capsys.readouterr().out
    assert "549985" in out
    assert "1.1001 MFLOPs" in out
    assert "35.2 MFLOPs" in out
    assert "2.10 MiB" in out


def test_cli_exit_code_config_error(tmp_path):
    missing = tmp_path / "nope.cfpc"
    code = run_cli("train", "--dataset", str(missing), "--out", str(tmp_path / "x"))
    assert code == 2


def test_cli_exit_code_corrupt_checkpoint(tmp_path):
    ckpt = tmp_path / "bad.cfpm"
    policy.save_checkpoint(ckpt, policy.init_params(4, 3, (2, 1), seed=0))
    blob = bytearray(ckpt.read_bytes())
    blob[-1] ^= 0xFF
    ckpt.write_bytes(bytes(blob))
    assert run_cli("complexity", "--checkpoint", str(ckpt)) == 3


def test_cli_train_smoke(tmp_path):
    data = tmp_path / "d.cfpc"
    run_cli("generate", "--out", str(data), "--count", "8", "--seed", "3",
            "--k", "2", "--l", "4", "--m", "2", "--n-assoc", "2")
    ckpt = tmp_path / "m.cfpm"
    log = tmp_path / "log.csv"
    cfg_file = tmp_path / "cfg.json"
    cfg_file.write_text(json.dumps({
        "sim": {"L": 4, "K": 2, "M": 2, "N_assoc": 2},
        "train": {"hidden": 8, "head_dims": [4, 2, 1], "epochs": 1,
                  "batch_size": 4, "val_count": 2},
    }))
    code = run_cli("train", "--config", str(cfg_file), "--dataset", str(data),
                   "--out", str(ckpt), "--log", str(log))
    assert code == 0
    params = policy.load_checkpoint(ckpt)
    assert params.H == 8
    assert log.exists()
