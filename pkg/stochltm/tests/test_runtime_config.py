import pytest

from stochltm.scripts.runtime_config import RuntimeConfig, load_runtime_config


def test_runtime_config_defaults():
    cfg = load_runtime_config({})
    assert cfg == RuntimeConfig()
    assert cfg.replications == 1000
    assert cfg.log_level == "INFO"


def test_runtime_config_reads_environment():
    cfg = load_runtime_config(
        {
            "STOCHLTM_WORKERS": "4",
            "STOCHLTM_SEED": "17",
            "STOCHLTM_REPLICATIONS": "250",
            "STOCHLTM_OUTPUT_DIR": "/tmp/runs",
            "STOCHLTM_LOG_LEVEL": "debug",
        }
    )
    assert cfg.workers == 4
    assert cfg.seed == 17
    assert cfg.replications == 250
    assert cfg.output_dir == "/tmp/runs"
    assert cfg.log_level == "DEBUG"


def test_runtime_config_uses_process_environment(monkeypatch):
    monkeypatch.setenv("STOCHLTM_SEED", "3")
    monkeypatch.delenv("STOCHLTM_WORKERS", raising=False)
    cfg = load_runtime_config(use_dotenv=False)
    assert cfg.seed == 3
    assert cfg.workers == 1


def test_runtime_config_rejects_bad_values():
    with pytest.raises(ValueError):
        load_runtime_config({"STOCHLTM_WORKERS": "0"})
    with pytest.raises(ValueError):
        load_runtime_config({"STOCHLTM_SEED": "abc"})
    with pytest.raises(ValueError):
        load_runtime_config({"STOCHLTM_LOG_LEVEL": "loud"})
