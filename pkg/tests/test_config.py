import pytest
import yaml

from src.core.config import PreprocessConfig, ProfileConfig, RunManifest, SolverConfig
from src.core.errors import ConfigError, MemoryBudgetExceeded
from src.core.memory import MemoryTracker
from src.core.parallel import parallel_map, tree_reduce


def test_solver_defaults():
    cfg = SolverConfig(thread_count=1)
    assert cfg.initial_lambda == 1e-4
    assert cfg.max_outer_iterations == 50
    assert cfg.function_tolerance == 1e-6
    assert cfg.cg_max_iterations == 500
    assert cfg.huber_delta == 1.0
    assert cfg.solver_id == "sqrt_ba-64"
    assert SolverConfig(precision="single", backend="explicit_sc").solver_id == "explicit_sc-32"
    assert cfg.validate()


@pytest.mark.parametrize("overrides", [
    dict(backend="ceres"),
    dict(precision="half"),
    dict(max_outer_iterations=0),
    dict(initial_lambda=-1.0),
    dict(function_tolerance=-1e-6),
    dict(initial_lambda=1e20),
    dict(forcing_mode="fixed"),
    dict(memory_limit_bytes=-1),
])
def test_invalid_solver_config(overrides):
    with pytest.raises(ConfigError):
        SolverConfig(thread_count=1, **overrides).validate()


def test_with_overrides_skips_none():
    cfg = SolverConfig(thread_count=1).with_overrides(max_outer_iterations=None, huber_delta=2.0)
    assert cfg.max_outer_iterations == 50
    assert cfg.huber_delta == 2.0
    with pytest.raises(ConfigError):
        cfg.with_overrides(unknown_key=1)


def test_solver_config_from_file(tmp_path):
    path = tmp_path / "solver.yaml"
    path.write_text(yaml.safe_dump({"backend": "explicit_sc", "precision": "single", "max_outer_iterations": 7}))
    cfg = SolverConfig.from_file(str(path))
    assert (cfg.backend, cfg.precision, cfg.max_outer_iterations) == ("explicit_sc", "single", 7)
    path.write_text(yaml.safe_dump({"max_iters": 7}))
    with pytest.raises(ConfigError):
        SolverConfig.from_file(str(path))


def test_thread_count_from_environment(monkeypatch):
    monkeypatch.setenv("SQRTBA_THREADS", "3")
    assert SolverConfig().thread_count == 3
    monkeypatch.setenv("SQRTBA_THREADS", "many")
    with pytest.raises(ConfigError):
        SolverConfig()


def test_manifest_from_file(tmp_path):
    path = tmp_path / "manifest.yaml"
    path.write_text(yaml.safe_dump({
        "problems": ["a.txt", "b.txt.bz2"],
        "output_dir": str(tmp_path / "out"),
        "seed": 5,
        "backends": ["sqrt_ba", "explicit_sc"],
        "precisions": ["single", "double"],
        "solver": {"max_outer_iterations": 10, "thread_count": 1},
        "preprocess": {"sigma": 0.0},
    }))
    manifest = RunManifest.from_file(str(path))
    assert len(manifest.solvers) == 4
    assert {s.solver_id for s in manifest.solvers} == {"sqrt_ba-32", "sqrt_ba-64", "explicit_sc-32", "explicit_sc-64"}
    assert all(s.max_outer_iterations == 10 and s.seed == 5 for s in manifest.solvers)
    assert manifest.preprocess == PreprocessConfig(sigma=0.0, seed=5)
    assert manifest.validate()
    assert (tmp_path / "out").is_dir()


def test_manifest_rejects_duplicates_and_empty():
    with pytest.raises(ConfigError):
        RunManifest(problems=[], solvers=[SolverConfig(thread_count=1)]).validate()
    cfg = SolverConfig(thread_count=1)
    with pytest.raises(ConfigError):
        RunManifest(problems=["a"], solvers=[cfg, cfg]).validate()


def test_profile_config():
    assert ProfileConfig().validate()
    with pytest.raises(ConfigError):
        ProfileConfig(taus=(1.5,)).validate()
    with pytest.raises(ConfigError):
        ProfileConfig(taus=()).validate()


def test_memory_tracker():
    tracker = MemoryTracker(limit_bytes=100)
    tracker.allocate("a", 60)
    tracker.allocate("a", 80)
    assert tracker.current_bytes == 80
    with pytest.raises(MemoryBudgetExceeded):
        tracker.allocate("b", 30)
    tracker.release("a")
    tracker.allocate("b", 30)
    assert tracker.current_bytes == 30
    assert tracker.peak_bytes == 80
    with pytest.raises(ValueError):
        MemoryTracker(-1)


def test_parallel_map_keeps_order():
    assert parallel_map(lambda x: x * x, list(range(10)), n_jobs=3) == [x * x for x in range(10)]
    assert parallel_map(lambda x: x + 1, [1, 2], n_jobs=1) == [2, 3]


def test_tree_reduce():
    assert tree_reduce([1, 2, 3, 4, 5]) == 15
    assert tree_reduce([7]) == 7
    with pytest.raises(ValueError):
        tree_reduce([])
