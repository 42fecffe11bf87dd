"""
Configuration management for the bundle adjustment solvers and benchmark runs
"""

import os
from dataclasses import dataclass, field, fields, asdict, replace
from pathlib import Path
from typing import Dict, Any, List, Optional, Tuple
import numpy as np
import yaml
from dotenv import load_dotenv

from src.core.errors import ConfigError

# Load environment variables from .env file
load_dotenv()

BACKENDS = ("sqrt_ba", "explicit_sc")
PRECISIONS = ("single", "double")
FORCING_MODES = ("adaptive", "constant")
QR_METHODS = ("givens", "householder")


def default_thread_count() -> int:
    """Thread count from SQRTBA_THREADS, falling back to 1"""
    raw = os.getenv("SQRTBA_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError(f"SQRTBA_THREADS must be an integer, got '{raw}'")


def _load_mapping(path: str) -> Dict[str, Any]:
    with open(path, 'r') as f:
        data = yaml.safe_load(f) or {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a key-value mapping")
    return data


def _pick(cls, data: Dict[str, Any]) -> Dict[str, Any]:
    """Keep the keys that belong to dataclass `cls`; complain about unknown ones."""
    names = {f.name for f in fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    return dict(data)


@dataclass(frozen=True)
class PreprocessConfig:
    """Deterministic BAL preprocessing settings"""

    sigma: float = 1e-2
    seed: int = 0
    z_min: float = 1e-8
    normalize: bool = True

    def validate(self) -> bool:
        if self.sigma < 0:
            raise ConfigError("sigma must be non-negative")
        return True


@dataclass(frozen=True)
class SolverConfig:
    """Levenberg-Marquardt and linear solver settings for one solver run"""

    backend: str = "sqrt_ba"
    precision: str = "double"

    # Outer loop
    max_outer_iterations: int = 50
    function_tolerance: float = 1e-6
    gradient_tolerance: float = 0.0  # 0 disables the gradient test
    initial_lambda: float = 1e-4
    min_lambda: float = 1e-16
    max_lambda: float = 1e16
    min_relative_decrease: float = 0.0  # accept when gain ratio exceeds this

    # Damping diagonal clamps for D^2 = diag(J^T J)
    min_diagonal: float = 1e-12
    max_diagonal: float = 1e32

    # Inner PCG loop
    cg_max_iterations: int = 500
    forcing_mode: str = "adaptive"
    eta_max: float = 0.1

    # Landmark marginalization
    qr_method: str = "givens"
    rank_tolerance: float = 1e-12

    huber_delta: float = 1.0
    thread_count: int = field(default_factory=default_thread_count)
    seed: int = 0
    memory_limit_bytes: int = 0

    @property
    def dtype(self):
        return np.float32 if self.precision == "single" else np.float64

    @property
    def solver_id(self) -> str:
        return f"{self.backend}-{32 if self.precision == 'single' else 64}"

    @classmethod
    def from_file(cls, path: str) -> "SolverConfig":
        """Load configuration from a YAML key-value file"""
        return cls(**_pick(cls, _load_mapping(path)))

    @classmethod
    def from_env(cls) -> "SolverConfig":
        """Load configuration from environment variables"""
        return cls()

    def with_overrides(self, **overrides) -> "SolverConfig":
        """Copy with the non-None overrides applied"""
        updates = {k: v for k, v in overrides.items() if v is not None}
        return replace(self, **_pick(type(self), updates))

    def to_dict(self) -> Dict[str, Any]:
        """Convert configuration to dictionary"""
        return asdict(self)

    def validate(self) -> bool:
        """Validate configuration"""
        if self.backend not in BACKENDS:
            raise ConfigError(f"backend must be one of {BACKENDS}, got '{self.backend}'")
        if self.precision not in PRECISIONS:
            raise ConfigError(f"precision must be one of {PRECISIONS}, got '{self.precision}'")
        if self.forcing_mode not in FORCING_MODES:
            raise ConfigError(f"forcing_mode must be one of {FORCING_MODES}")
        if self.qr_method not in QR_METHODS:
            raise ConfigError(f"qr_method must be one of {QR_METHODS}")
        for name in ("max_outer_iterations", "cg_max_iterations", "thread_count"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        for name in ("initial_lambda", "huber_delta", "eta_max", "min_lambda", "max_lambda"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.function_tolerance < 0 or self.gradient_tolerance < 0:
            raise ConfigError("tolerances must be non-negative")
        if not self.min_lambda <= self.initial_lambda <= self.max_lambda:
            raise ConfigError("initial_lambda must lie within [min_lambda, max_lambda]")
        if self.memory_limit_bytes < 0:
            raise ConfigError("memory_limit_bytes must be non-negative")
        return True


@dataclass(frozen=True)
class ProfileConfig:
    """Performance profile settings"""

    taus: Tuple[float, ...] = (1e-1, 1e-2, 1e-3)
    alpha_points: int = 64
    alpha_max: float = 32.0

    def validate(self) -> bool:
        if not self.taus:
            raise ConfigError("at least one tau is required")
        if any(not 0 < t < 1 for t in self.taus):
            raise ConfigError("every tau must lie in (0, 1)")
        if self.alpha_points < 2 or self.alpha_max <= 1:
            raise ConfigError("alpha grid needs >= 2 points and alpha_max > 1")
        return True


@dataclass
class RunManifest:
    """Problems x solver configurations to run, and where to put the results"""

    problems: List[str] = field(default_factory=list)
    solvers: List[SolverConfig] = field(default_factory=list)
    output_dir: str = "./results"
    seed: int = 0
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)

    @classmethod
    def from_file(cls, path: str) -> "RunManifest":
        """
        Load a manifest from YAML.

        Keys: problems, output_dir, seed, preprocess (mapping), solver (mapping of
        shared SolverConfig fields), backends and precisions (lists spanning the matrix).
        """
        data = _load_mapping(path)
        shared = _pick(SolverConfig, data.get("solver", {}) or {})
        backends = data.get("backends", [shared.get("backend", "sqrt_ba")])
        precisions = data.get("precisions", [shared.get("precision", "double")])
        seed = int(data.get("seed", 0))
        preprocess = PreprocessConfig(**{"seed": seed, **_pick(PreprocessConfig, data.get("preprocess", {}) or {})})
        solvers = [
            SolverConfig(**{**shared, "backend": b, "precision": p, "seed": seed})
            for b in backends for p in precisions
        ]
        return cls(
            problems=list(data.get("problems", [])),
            solvers=solvers,
            output_dir=str(data.get("output_dir", "./results")),
            seed=seed,
            preprocess=preprocess,
        )

    def validate(self) -> bool:
        if not self.problems:
            raise ConfigError("manifest lists no problems")
        if not self.solvers:
            raise ConfigError("manifest lists no solver configurations")
        ids = [s.solver_id for s in self.solvers]
        if len(set(ids)) != len(ids):
            raise ConfigError(f"duplicate solver ids in manifest: {ids}")
        for solver in self.solvers:
            solver.validate()
        self.preprocess.validate()
        Path(self.output_dir).mkdir(parents=True, exist_ok=True)
        return True
