import json
import os

import numpy as np
import pytest

from covx.cli import main
from covx.config import canonical_hash, load_config, with_defaults


def small_config(tmp_path, **stage_overrides):
    cfg = {
        "seed": 3,
        "variates": ["Hs", "WS", "Tp"],
        "covariates": [{"name": "Direction", "periodic": True}, {"name": "Season", "periodic": True}],
        "stage1": {"simulate": {"truth": "package:synthetic_truth.json", "n": 900}},
        "stage2": {"edges": [[0, 120, 240], [0, 180]]},
        "stage3": {"n_resamples": 3, "roughness": 1.0, "return_periods": [50]},
        "stage4": {"roughness": 1.0, "n_conditional": 300},
        "stage5": {"n_simulate": 5000, "n_lock": 500, "n_angles": 36, "grid": 40, "subsets": ["omni", [0, 1]]},
    }
    for k, v in stage_overrides.items():
        cfg[k] = v
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg))
    return path


def artifact_bytes(workdir):
    out = {}
    for root, _, files in os.walk(workdir):
        for f in files:
            if f.endswith((".json", ".csv")):
                p = os.path.join(root, f)
                out[os.path.relpath(p, workdir)] = open(p, "rb").read()
    return out


@pytest.fixture(scope="module")
def run(tmp_path_factory):
    base = tmp_path_factory.mktemp("cli")
    cfg = small_config(base)
    assert main(["run-all", "--config", str(cfg), "--workdir", str(base / "w")]) == 0
    return cfg, base / "w"


def test_run_all_writes_artifacts(run):
    _, w = run
    for name in ["peaks.csv", "partition.json", "allocation.csv", "marginal_Hs.json", "ensemble/index.json",
                 "ensemble_summary.csv", "ht.json", "conditional_return.csv", "lock_points.json",
                 "contours_omni_WS.csv", "contours_omni_WS.svg", "contours_bins0-1_WS.csv"] + \
            [f"stage{k}_summary.json" for k in range(1, 6)]:
        assert (w / name).exists(), name
    s3 = json.loads((w / "stage3_summary.json").read_text())
    assert s3["tau_intervals"][0] == [0.7, 0.9]
    for r in range(3):
        body = json.loads((w / "ensemble" / f"resample_{r:04d}.json").read_text())
        assert all(0.7 <= t <= 0.9 for t in body["tau"])
    s1 = json.loads((w / "stage1_summary.json").read_text())
    assert s1["seed"] == 3 and len(s1["config_hash"]) == 64


def test_rerun_is_byte_identical(run, tmp_path):
    cfg, w = run
    assert main(["run-all", "--config", str(cfg), "--workdir", str(tmp_path / "w2"), "--jobs", "2"]) == 0
    a, b = artifact_bytes(w), artifact_bytes(tmp_path / "w2")
    assert a.keys() == b.keys()
    assert [k for k in a if a[k] != b[k]] == []


def test_stage_rerun_idempotent(run):
    cfg, w = run
    before = artifact_bytes(w)
    assert main(["stage2", "--config", str(cfg), "--workdir", str(w)]) == 0
    after = artifact_bytes(w)
    assert before == after


def test_schema_error_exit_code(tmp_path, capsys):
    path = tmp_path / "bad.json"
    cfg = json.loads(small_config(tmp_path).read_text())
    cfg["stage3"]["n_resamples"] = 0
    path.write_text(json.dumps(cfg))
    assert main(["stage1", "--config", str(path), "--workdir", str(tmp_path / "w")]) == 2
    assert "/stage3/n_resamples" in capsys.readouterr().err


def test_missing_artifacts_exit_code(tmp_path, capsys):
    cfg = small_config(tmp_path)
    assert main(["stage3", "--config", str(cfg), "--workdir", str(tmp_path / "empty")]) == 3
    assert "stage 1" in capsys.readouterr().err


def test_hash_mismatch_warns(run, tmp_path):
    cfg, w = run
    other = json.loads(cfg.read_text())
    other["stage2"]["edges"] = [[0, 120, 240], [0, 180]]
    other["stage3"]["n_resamples"] = 2
    p = tmp_path / "other.json"
    p.write_text(json.dumps(other))
    work = tmp_path / "w"
    assert main(["stage1", "--config", str(cfg), "--workdir", str(work)]) == 0
    with pytest.warns(UserWarning, match="different config"):
        assert main(["stage2", "--config", str(p), "--workdir", str(work)]) == 0
    s2 = json.loads((work / "stage2_summary.json").read_text())
    assert s2["stale_upstream"] == [1]


def test_simulate_and_init(tmp_path, capsys):
    assert main(["init", str(tmp_path / "ex")]) == 0
    out = tmp_path / "peaks.csv"
    assert main(["simulate", "--truth", str(tmp_path / "ex" / "synthetic_truth.json"), "--n", "50",
                 "--seed", "4", "--out", str(out)]) == 0
    arr = np.loadtxt(out, delimiter=",", skiprows=1)
    assert arr.shape == (50, 5)
    assert main(["simulate", "--truth", str(tmp_path / "missing.json"), "--n", "5"]) == 3


def test_config_defaults_and_hash(tmp_path):
    path = small_config(tmp_path)
    cfg, h, _ = load_config(path)
    assert cfg["stage3"]["tau_intervals"] == [[0.7, 0.9]] * 3
    assert cfg["stage5"]["return_period"] == 100.0
    raw = json.loads(path.read_text())
    assert h == canonical_hash(raw)
    assert canonical_hash(dict(reversed(list(raw.items())))) == h
    raw["stage2"]["edges"] = [[0]]
    with pytest.raises(Exception) as e:
        with_defaults(raw)
    assert e.value.pointer == "/stage2/edges"
