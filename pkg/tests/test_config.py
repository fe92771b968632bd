import os
from pathlib import Path

import pytest

from cimf.sdk.config import CimfConfig, CimfOptions

ENV_VARS = (
    "CIMF_STORE_ROOT", "CIMF_SANDBOX_ROOT", "CIMF_KEEP_SANDBOX", "CIMF_WORKERS", "CIMF_STEP_TIMEOUT",
    "CIMF_MAX_ACTIVE_RUNS", "CIMF_TOKEN", "CIMF_HOST", "CIMF_PORT", "CIMF_LOG_LEVEL",
)


@pytest.fixture
def clean_env(monkeypatch):
    for name in ENV_VARS:
        monkeypatch.delenv(name, raising=False)
    return monkeypatch


class TestBuilder:
    def test_fluent_options(self, tmp_path):
        config = (
            CimfOptions.builder()
            .store_root(tmp_path / "store")
            .sandbox_root(tmp_path / "boxes")
            .keep_sandbox()
            .workers(3)
            .step_timeout(30)
            .max_active_runs(2)
            .token("t0k3n")
            .listen("0.0.0.0", 9090)
            .log_level("DEBUG")
            .build()
        )

        assert config.store_root == tmp_path / "store"
        assert config.sandbox_root == tmp_path / "boxes"
        assert config.keep_sandbox is True
        assert (config.workers, config.step_timeout, config.max_active_runs) == (3, 30, 2)
        assert config.token == "t0k3n"
        assert (config.host, config.port, config.log_level) == ("0.0.0.0", 9090, "DEBUG")

    @pytest.mark.parametrize("configure", [
        lambda b: b.workers(0),
        lambda b: b.step_timeout(0),
    ])
    def test_invalid_values(self, configure):
        with pytest.raises(ValueError):
            configure(CimfOptions.builder()).build()

    def test_defaults(self):
        config = CimfConfig()
        assert config.store_root == Path.cwd() / "cimf_store"
        assert config.sandbox_root is None
        assert config.workers >= 1
        assert config.token is None


class TestFromEnv:
    def test_environment_overrides(self, clean_env, tmp_path):
        clean_env.setenv("CIMF_STORE_ROOT", str(tmp_path / "env-store"))
        clean_env.setenv("CIMF_KEEP_SANDBOX", "yes")
        clean_env.setenv("CIMF_WORKERS", "5")
        clean_env.setenv("CIMF_STEP_TIMEOUT", "12.5")
        clean_env.setenv("CIMF_TOKEN", "abc")
        clean_env.setenv("CIMF_PORT", "8181")
        config = CimfConfig.from_env(dotenv=False)

        assert config.store_root == tmp_path / "env-store"
        assert config.keep_sandbox is True
        assert config.workers == 5
        assert config.step_timeout == 12.5
        assert config.token == "abc"
        assert config.port == 8181

    def test_unset_environment_keeps_defaults(self, clean_env):
        config = CimfConfig.from_env(dotenv=False)
        assert config.token is None
        assert config.port == 8080
        assert config.max_active_runs == 8

    def test_dotenv_file(self, clean_env, tmp_path):
        (tmp_path / ".env").write_text("CIMF_MAX_ACTIVE_RUNS=3\n", encoding="utf-8")
        clean_env.setattr(os, "environ", dict(os.environ))
        clean_env.chdir(tmp_path)
        assert CimfConfig.from_env().max_active_runs == 3
