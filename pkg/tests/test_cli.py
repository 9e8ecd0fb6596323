import hashlib
import json

import pytest

from cli import EXIT_MISSING, EXIT_OK, EXIT_USAGE, main


@pytest.fixture(autouse=True)
def no_env_config(monkeypatch):
    monkeypatch.delenv("CPSOR_CONFIG", raising=False)


def generate(out, *extra):
    return main(["generate", "--out", str(out), "--episodes", "1", "--scenarios", "1,2",
                 "--emotions", "anger,fright", "--duration", "3", "--trigger-time", "1", *extra])


def test_generate_writes_a_dataset(tmp_path):
    assert generate(tmp_path / "data") == EXIT_OK
    assert len(list((tmp_path / "data").glob("*.csv"))) == 4
    assert len(json.loads((tmp_path / "data" / "manifest.json").read_text())["configs"]) == 4


def test_generate_nothing(tmp_path):
    assert main(["generate", "--out", str(tmp_path), "--episodes", "0"]) == EXIT_OK
    assert not list(tmp_path.glob("*.csv"))


def test_generate_then_discretize(tmp_path):
    data = tmp_path / "data"
    assert generate(data) == EXIT_OK
    assert main(["discretize", "--dataset", str(data)]) == EXIT_OK
    assert (data / "frames").is_dir()


def test_invalid_option_value(tmp_path):
    assert main(["generate", "--out", str(tmp_path), "--scenarios", "5"]) == EXIT_USAGE


def test_usage_errors_exit_with_one(tmp_path):
    with pytest.raises(SystemExit) as e:
        main(["plot", "metrics", "--out", str(tmp_path / "x"), "--format", "png"])
    assert e.value.code == EXIT_USAGE
    with pytest.raises(SystemExit) as e:
        main(["no-such-command"])
    assert e.value.code == EXIT_USAGE


def test_cognitive_ablation_without_dbn(tmp_path):
    data = tmp_path / "data"
    assert generate(data) == EXIT_OK
    assert main(["ablate", "--dataset", str(data), "--variants", "cp", "--out", str(tmp_path / "abl")]) \
        == EXIT_MISSING


def test_missing_metric_report(tmp_path):
    assert main(["plot", "metrics", "--out", str(tmp_path / "bars.svg")]) == EXIT_MISSING


def test_config_file(tmp_path):
    missing = tmp_path / "none.json"
    assert main(["--config", str(missing), "generate", "--out", str(tmp_path)]) == EXIT_MISSING

    bad = tmp_path / "bad.json"
    bad.write_text("{")
    assert main(["--config", str(bad), "generate", "--out", str(tmp_path)]) == EXIT_USAGE

    good = tmp_path / "run.json"
    good.write_text(json.dumps({"generate": {"episodes": 1, "scenarios": [3], "emotions": ["NEUTRAL"],
                                             "duration": 3.0, "trigger_time": 1.0}}))
    assert main(["--config", str(good), "generate", "--out", str(tmp_path / "data")]) == EXIT_OK
    assert len(list((tmp_path / "data").glob("*.csv"))) == 1


def run_pipeline(root):
    data, dbn = root / "data", root / "dbn"
    assert main(["generate", "--out", str(data), "--episodes", "1", "--scenarios", "1,2,3,4",
                 "--emotions", "anger,fright", "--duration", "6", "--trigger-time", "2", "--seed", "5"]) == EXIT_OK
    assert main(["discretize", "--dataset", str(data)]) == EXIT_OK
    assert main(["learn-dbn", "--dataset", str(data), "--out", str(dbn), "--restarts", "2", "--seed", "1"]) == EXIT_OK
    for variant in ("p", "cpsor"):
        assert main(["train", "--dataset", str(data), "--dbn-dir", str(dbn), "--variant", variant,
                     "--out", str(root / f"{variant}.weights"), "--all-train", "--epochs", "2",
                     "--batch-size", "8", "--train-seed", "3"]) == EXIT_OK
    assert main(["eval", "--weights", str(root / "cpsor.weights"), "--dataset", str(data), "--dbn-dir", str(dbn),
                 "--horizons", "0.5,1.0", "--out", str(root / "metrics.csv")]) == EXIT_OK
    assert main(["compare-dbn", "--dataset", str(data), "--dbn-dir", str(dbn),
                 "--out", str(root / "comparison")]) == EXIT_OK
    return {str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.mark.slow
def test_pipeline_is_reproducible(tmp_path):
    first = run_pipeline(tmp_path / "first")
    second = run_pipeline(tmp_path / "second")
    assert "dbn/sor.dbn" in first and "metrics.csv" in first and "comparison/dbn_bic.csv" in first
    assert first == second
