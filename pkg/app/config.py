"""
Configuration management for Team Strength Studio

Defaults come from the environment (optionally a .env file), can be
overridden by a JSON config file, and finally by command-line flags.
"""
import json
import logging
import os
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Any, Dict, Optional

from dotenv import load_dotenv
from rich.logging import RichHandler

from .errors import ConfigError

# Load environment variables
load_dotenv()


class Config:
    """Application configuration"""

    # Base paths
    BASE_DIR = Path(__file__).parent.parent
    OUTPUT_DIR = Path(os.getenv("OUTPUT_DIR", str(BASE_DIR / "output")))

    # Model size
    STRENGTH_STATES = int(os.getenv("STRENGTH_STATES", 4))
    GOAL_CAP = int(os.getenv("GOAL_CAP", 4))

    # Dirichlet pseudocounts
    C_TRANSITION = float(os.getenv("C_TRANSITION", 87))
    C_GOAL = float(os.getenv("C_GOAL", 236))

    # Ingest
    SEASON_GAP_DAYS = int(os.getenv("SEASON_GAP_DAYS", 45))

    # Training
    BP_CYCLES = int(os.getenv("BP_CYCLES", 20))
    MAX_ITERATIONS = int(os.getenv("MAX_ITERATIONS", 100))
    RESTARTS = int(os.getenv("RESTARTS", 8))
    SEED = int(os.getenv("SEED", 0))
    CONVERGENCE_TOL = float(os.getenv("CONVERGENCE_TOL", 1e-6))
    WEEKLY_ITERS = int(os.getenv("WEEKLY_ITERS", 10))
    THREADS = int(os.getenv("THREADS", 1))

    LOG_LEVEL = os.getenv("LOG_LEVEL", "INFO")

    @classmethod
    def ensure_directories(cls, output_dir: Optional[Path] = None):
        """Create the output directory if it doesn't exist"""
        directory = Path(output_dir) if output_dir else cls.OUTPUT_DIR
        directory.mkdir(parents=True, exist_ok=True)
        return directory


def setup_logging(level: str = Config.LOG_LEVEL) -> None:
    """Route library logging through rich."""
    logging.basicConfig(
        level=level.upper(),
        format="%(message)s",
        datefmt="[%X]",
        handlers=[RichHandler(rich_tracebacks=False, show_path=False)],
        force=True,
    )


@dataclass
class RunConfig:
    """Everything one CLI command needs, after layering file and flags."""

    command: str = ""
    input_path: Optional[str] = None
    model_path: Optional[str] = None
    output_dir: str = str(Config.OUTPUT_DIR)
    num_strength_states: int = Config.STRENGTH_STATES
    goal_cap: int = Config.GOAL_CAP
    c_transition: float = Config.C_TRANSITION
    c_goal: float = Config.C_GOAL
    season_gap_days: int = Config.SEASON_GAP_DAYS
    strict: bool = True
    max_iterations: int = Config.MAX_ITERATIONS
    restarts: int = Config.RESTARTS
    seed: int = Config.SEED
    bp_cycles: int = Config.BP_CYCLES
    convergence_tol: float = Config.CONVERGENCE_TOL
    monotonicity_tol: float = 1e-9
    emission_solver_iters: int = 500
    damping: float = 0.0
    split_week: Optional[int] = None
    split_date: Optional[str] = None
    weekly_iters: int = Config.WEEKLY_ITERS
    threads: int = Config.THREADS
    log_level: str = Config.LOG_LEVEL
    schema: Optional[Dict[str, str]] = None

    _POSITIVE = (
        "num_strength_states", "goal_cap", "c_transition", "c_goal", "season_gap_days",
        "max_iterations", "restarts", "bp_cycles", "convergence_tol", "monotonicity_tol",
        "emission_solver_iters", "weekly_iters", "threads",
    )

    @classmethod
    def from_sources(
        cls,
        command: str,
        config_file: Optional[str] = None,
        overrides: Optional[Dict[str, Any]] = None,
    ) -> "RunConfig":
        """
        Build a RunConfig: Config defaults < JSON file < explicit flags.

        Flags whose value is None are treated as "not given".
        """
        run = cls(command=command)
        known = {f.name for f in fields(cls)}

        if config_file:
            path = Path(config_file)
            if not path.exists():
                raise ConfigError(f"config file not found: {path}")
            try:
                data = json.loads(path.read_text(encoding="utf-8"))
            except json.JSONDecodeError as e:
                raise ConfigError(f"config file {path} is not valid JSON: {e}")
            if not isinstance(data, dict):
                raise ConfigError(f"config file {path} must hold a JSON object")
            unknown = sorted(set(data) - known)
            if unknown:
                raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
            run = replace(run, **data)

        given = {k: v for k, v in (overrides or {}).items() if v is not None}
        unknown = sorted(set(given) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        return replace(run, **given)

    def validate(self, require_input: bool = False, require_model: bool = False) -> "RunConfig":
        """Check the invariants of RunConfig; raises ConfigError."""
        for name in self._POSITIVE:
            value = getattr(self, name)
            if value is None or value <= 0:
                raise ConfigError(f"{name} must be positive, got {value!r}")
        if self.num_strength_states < 2:
            raise ConfigError("num_strength_states must be at least 2")
        if not 0.0 <= self.damping < 1.0:
            raise ConfigError(f"damping must lie in [0, 1), got {self.damping}")
        if require_input:
            if not self.input_path:
                raise ConfigError("an input match CSV is required (--input)")
            if not Path(self.input_path).exists():
                raise ConfigError(f"input file not found: {self.input_path}")
        if require_model:
            if not self.model_path:
                raise ConfigError("a model file is required (--model)")
            if not Path(self.model_path).exists():
                raise ConfigError(f"model file not found: {self.model_path}")
        try:
            Config.ensure_directories(Path(self.output_dir))
        except OSError as e:
            raise ConfigError(f"output directory {self.output_dir} is not writable: {e}")
        return self

    def cardinalities(self):
        from .domain import Cardinalities

        return Cardinalities(num_strength_states=self.num_strength_states, num_goal_states=self.goal_cap + 1)

    def train_config(self):
        from .trainer import TrainConfig

        return TrainConfig(
            max_iterations=self.max_iterations,
            restarts=self.restarts,
            seed=self.seed,
            bp_cycles=self.bp_cycles,
            convergence_tol=self.convergence_tol,
            monotonicity_tol=self.monotonicity_tol,
            emission_solver_iters=self.emission_solver_iters,
            damping=self.damping,
            threads=self.threads,
        )
