"""
Configuration classes for the CIMF engine and gateway.
"""

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import psutil
from dotenv import find_dotenv, load_dotenv


def _default_workers() -> int:
    return psutil.cpu_count(logical=True) or 1


def _env_bool(value: Optional[str]) -> bool:
    return (value or "").strip().lower() in {"1", "true", "yes", "on"}


@dataclass
class CimfConfig:
    """
    Configuration for a CIMF deployment.
    """

    # Storage
    store_root: Path = field(default_factory=lambda: Path.cwd() / "cimf_store")
    sandbox_root: Optional[Path] = None  # None = system temp dir
    keep_sandbox: bool = False

    # Execution
    workers: int = field(default_factory=_default_workers)
    step_timeout: float = 600.0  # seconds
    max_active_runs: int = 8

    # Gateway
    token: Optional[str] = None
    host: str = "127.0.0.1"
    port: int = 8080
    inline_threshold: int = 256  # bytes

    log_level: str = "INFO"

    def __post_init__(self):
        self.store_root = Path(self.store_root)
        if self.sandbox_root is not None:
            self.sandbox_root = Path(self.sandbox_root)
        if self.workers < 1:
            raise ValueError(f"workers must be >= 1, got {self.workers}")
        if self.step_timeout <= 0:
            raise ValueError(f"step_timeout must be > 0, got {self.step_timeout}")

    @classmethod
    def from_env(cls, dotenv: bool = True) -> 'CimfConfig':
        """
        Build a configuration from CIMF_* environment variables.

        Args:
            dotenv: Whether to load a `.env` file first

        Returns:
            A CimfConfig with environment overrides applied
        """
        if dotenv:
            try:
                load_dotenv(find_dotenv(usecwd=True))
            except Exception:
                pass

        env = os.environ
        kwargs = {}
        if env.get("CIMF_STORE_ROOT"):
            kwargs["store_root"] = Path(env["CIMF_STORE_ROOT"])
        if env.get("CIMF_SANDBOX_ROOT"):
            kwargs["sandbox_root"] = Path(env["CIMF_SANDBOX_ROOT"])
        if env.get("CIMF_KEEP_SANDBOX"):
            kwargs["keep_sandbox"] = _env_bool(env["CIMF_KEEP_SANDBOX"])
        if env.get("CIMF_WORKERS"):
            kwargs["workers"] = int(env["CIMF_WORKERS"])
        if env.get("CIMF_STEP_TIMEOUT"):
            kwargs["step_timeout"] = float(env["CIMF_STEP_TIMEOUT"])
        if env.get("CIMF_MAX_ACTIVE_RUNS"):
            kwargs["max_active_runs"] = int(env["CIMF_MAX_ACTIVE_RUNS"])
        if env.get("CIMF_TOKEN"):
            kwargs["token"] = env["CIMF_TOKEN"]
        if env.get("CIMF_HOST"):
            kwargs["host"] = env["CIMF_HOST"]
        if env.get("CIMF_PORT"):
            kwargs["port"] = int(env["CIMF_PORT"])
        if env.get("CIMF_LOG_LEVEL"):
            kwargs["log_level"] = env["CIMF_LOG_LEVEL"]
        return cls(**kwargs)


@dataclass
class CimfOptions:
    """
    Builder pattern for creating CIMF configurations.
    """

    _config: CimfConfig = field(default_factory=CimfConfig)

    def store_root(self, path) -> 'CimfOptions':
        """Set the object store root directory."""
        self._config.store_root = Path(path)
        return self

    def sandbox_root(self, path) -> 'CimfOptions':
        """Set the parent directory for step sandboxes."""
        self._config.sandbox_root = Path(path)
        return self

    def keep_sandbox(self, enabled: bool = True) -> 'CimfOptions':
        """Keep step sandboxes after execution (debugging)."""
        self._config.keep_sandbox = enabled
        return self

    def workers(self, count: int) -> 'CimfOptions':
        """Set the number of concurrent step workers."""
        self._config.workers = count
        return self

    def step_timeout(self, seconds: float) -> 'CimfOptions':
        """Set the default per-step wall-clock limit."""
        self._config.step_timeout = seconds
        return self

    def max_active_runs(self, count: int) -> 'CimfOptions':
        """Set how many runs may execute at once before submit is refused."""
        self._config.max_active_runs = count
        return self

    def token(self, token: str) -> 'CimfOptions':
        """Set the static bearer token for admin endpoints."""
        self._config.token = token
        return self

    def listen(self, host: str, port: int) -> 'CimfOptions':
        """Set the gateway listen address."""
        self._config.host = host
        self._config.port = port
        return self

    def log_level(self, level: str) -> 'CimfOptions':
        self._config.log_level = level
        return self

    def build(self) -> CimfConfig:
        """Build the final configuration."""
        self._config.__post_init__()
        return self._config

    @classmethod
    def builder(cls) -> 'CimfOptions':
        """Create a new CimfOptions builder."""
        return cls()
