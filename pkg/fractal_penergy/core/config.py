import os
from pathlib import Path
from typing import Any

from dotenv import load_dotenv


def _load_env() -> None:
    """Load environment variables from a .env at repo root if present."""
    repo_root = Path(__file__).resolve().parents[2]
    env_path = repo_root / ".env"
    if env_path.exists():
        load_dotenv(env_path)
    else:
        load_dotenv()  # fallback to default search


_load_env()


def _env_bool(name: str, default: str) -> bool:
    return os.environ.get(name, default).lower() == "true"


class Settings:
    """Runtime configuration for solvers, scans, cache and logging."""

    def __init__(self) -> None:
        self.env: str = os.environ.get("APP_ENV", "local")
        self.data_dir: Path = Path(
            os.environ.get("DATA_DIR", Path.cwd() / "storage")
        ).resolve()
        self.cache_dir: Path = Path(
            os.environ.get("CACHE_DIR", self.data_dir / "cache")
        ).resolve()
        self.out_dir: Path = Path(
            os.environ.get("OUT_DIR", self.data_dir / "out")
        ).resolve()
        self.log_dir: Path = self.data_dir / "logs"
        self.log_level: str = os.environ.get("LOG_LEVEL", "INFO").upper()
        self.log_to_file: bool = _env_bool("LOG_TO_FILE", "false")
        self.log_file: Path = Path(
            os.environ.get("LOG_FILE", self.log_dir / "penergy.log")
        ).resolve()
        self.cache_enabled: bool = _env_bool("CACHE_ENABLED", "true")

        self.seed: int = int(os.environ.get("SEED", "0"))
        self.jobs: int = int(os.environ.get("JOBS", "1"))
        self.max_level: int = int(os.environ.get("MAX_LEVEL", "6"))

        self.solver_tol_kkt: float = float(os.environ.get("SOLVER_TOL_KKT", "1e-9"))
        self.solver_tol_energy: float = float(
            os.environ.get("SOLVER_TOL_ENERGY", "1e-8")
        )
        self.solver_max_stages: int = int(os.environ.get("SOLVER_MAX_STAGES", "40"))
        self.solver_eps_start: float = float(
            os.environ.get("SOLVER_EPS_START", "1e-2")
        )
        self.solver_eps_final: float = float(
            os.environ.get("SOLVER_EPS_FINAL", "1e-10")
        )
        self.solver_direct_max: int = int(
            os.environ.get("SOLVER_DIRECT_MAX", "50000")
        )
        self.disparity_restarts: int = int(
            os.environ.get("DISPARITY_RESTARTS", "32")
        )

    @property
    def results_path(self) -> Path:
        return self.cache_dir / "results.jsonl"

    def ensure_dirs(self) -> None:
        """Create required directories if they do not exist."""
        self.data_dir.mkdir(parents=True, exist_ok=True)
        self.cache_dir.mkdir(parents=True, exist_ok=True)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        if self.log_to_file:
            self.log_dir.mkdir(parents=True, exist_ok=True)

    def model_dump(self) -> dict[str, Any]:
        return {
            "env": self.env,
            "data_dir": str(self.data_dir),
            "cache_dir": str(self.cache_dir),
            "out_dir": str(self.out_dir),
            "log_dir": str(self.log_dir),
            "log_level": self.log_level,
            "log_to_file": self.log_to_file,
            "log_file": str(self.log_file),
            "cache_enabled": self.cache_enabled,
            "seed": self.seed,
            "jobs": self.jobs,
            "max_level": self.max_level,
            "solver_tol_kkt": self.solver_tol_kkt,
            "solver_tol_energy": self.solver_tol_energy,
            "solver_max_stages": self.solver_max_stages,
            "solver_eps_start": self.solver_eps_start,
            "solver_eps_final": self.solver_eps_final,
            "solver_direct_max": self.solver_direct_max,
            "disparity_restarts": self.disparity_restarts,
        }


settings = Settings()
