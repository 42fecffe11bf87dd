"""
BAL problem files: parsing, serialization and the deterministic preprocessing
(gauge normalization, perturbation, observation filtering) applied before solving.

File layout:

    <n_cameras> <n_points> <n_observations>
    <camera_index> <point_index> <x> <y>          (n_observations lines)
    <camera parameters>                           (9 per camera)
    <point coordinates>                           (3 per point)

Camera parameters are angle-axis rotation (3), translation (3), focal, k1, k2.
"""

import bz2
import gzip
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Dict, Any, Iterator, Optional, TextIO, Tuple

import numpy as np

from src.core.config import PreprocessConfig
from src.core.errors import BalFormatError, DegenerateProblemError
from src.core.logging import get_logger
from src.geometry.projection import CAMERA_DIM, POINT_DIM, CameraParams, depths, rotation_matrices

logger = get_logger(__name__)

GAUGE_MAD = 100.0


def _readonly(a: np.ndarray, dtype) -> np.ndarray:
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Observation:
    """Landmark `landmark_index` observed in camera `camera_index` at `pixel`"""

    camera_index: int
    landmark_index: int
    pixel: np.ndarray


@dataclass(frozen=True, eq=False)
class BaProblem:
    """Cameras, landmarks and observations of one bundle adjustment problem (immutable)"""

    cameras: np.ndarray          # (n_p, 9)
    points: np.ndarray           # (n_l, 3)
    camera_indices: np.ndarray   # (n_r,)
    point_indices: np.ndarray    # (n_r,)
    pixels: np.ndarray           # (n_r, 2)
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "cameras", _readonly(np.reshape(self.cameras, (-1, CAMERA_DIM)), np.float64))
        object.__setattr__(self, "points", _readonly(np.reshape(self.points, (-1, POINT_DIM)), np.float64))
        object.__setattr__(self, "camera_indices", _readonly(self.camera_indices, np.int64))
        object.__setattr__(self, "point_indices", _readonly(self.point_indices, np.int64))
        object.__setattr__(self, "pixels", _readonly(np.reshape(self.pixels, (-1, 2)), np.float64))
        n_r = self.pixels.shape[0]
        if self.camera_indices.shape != (n_r,) or self.point_indices.shape != (n_r,):
            raise ValueError("observation arrays must all have n_observations entries")
        if n_r and (self.camera_indices.min() < 0 or self.camera_indices.max() >= self.n_cameras):
            raise ValueError("camera index out of range")
        if n_r and (self.point_indices.min() < 0 or self.point_indices.max() >= self.n_points):
            raise ValueError("landmark index out of range")

    @property
    def n_cameras(self) -> int:
        return self.cameras.shape[0]

    @property
    def n_points(self) -> int:
        return self.points.shape[0]

    @property
    def n_observations(self) -> int:
        return self.pixels.shape[0]

    def camera(self, i: int) -> CameraParams:
        return CameraParams.from_vector(self.cameras[i])

    def observation(self, o: int) -> Observation:
        return Observation(int(self.camera_indices[o]), int(self.point_indices[o]), self.pixels[o].copy())

    def observation_counts(self) -> np.ndarray:
        """Number of observations k_j of every landmark"""
        return np.bincount(self.point_indices, minlength=self.n_points)

    @cached_property
    def landmark_order(self) -> np.ndarray:
        """Observation ids grouped by landmark (stable, so original order inside a group)"""
        return np.argsort(self.point_indices, kind="stable")

    @cached_property
    def landmark_offsets(self) -> np.ndarray:
        """landmark_order[offsets[j]:offsets[j+1]] are the observations of landmark j"""
        return np.concatenate([[0], np.cumsum(self.observation_counts())])

    def landmark_observations(self, j: int) -> np.ndarray:
        return self.landmark_order[self.landmark_offsets[j]:self.landmark_offsets[j + 1]]

    def with_parameters(self, cameras: np.ndarray, points: np.ndarray) -> "BaProblem":
        return BaProblem(cameras, points, self.camera_indices, self.point_indices, self.pixels, self.name)

    def with_update(self, delta_cameras: np.ndarray, delta_points: np.ndarray) -> "BaProblem":
        """New problem with additive parameter increments (angle-axis included)"""
        return self.with_parameters(
            self.cameras + np.reshape(delta_cameras, self.cameras.shape),
            self.points + np.reshape(delta_points, self.points.shape),
        )


def _tokens(stream: TextIO, start_line: int) -> Iterator[Tuple[str, int]]:
    for line_no, line in enumerate(stream, start=start_line):
        for token in line.split():
            yield token, line_no


def parse_bal(text_stream: TextIO, name: str = "") -> BaProblem:
    """
    Parse a BAL problem from a text stream.

    Args:
        text_stream: Readable text stream positioned at the header
        name: Problem id stored on the result

    Returns:
        BaProblem with the exact counts from the header, observation order preserved

    Raises:
        BalFormatError: malformed header, index out of range, truncated body or trailing data
    """
    header = ""
    line_no = 0
    for line_no, header in enumerate(text_stream, start=1):
        if header.strip():
            break
    parts = header.split()
    if len(parts) != 3:
        raise BalFormatError("header must be '<n_cameras> <n_points> <n_observations>'", line_no or 1)
    try:
        n_p, n_l, n_r = (int(p) for p in parts)
    except ValueError:
        raise BalFormatError(f"non-integer header '{header.strip()}'", line_no)
    if n_p <= 0 or n_l <= 0 or n_r < 0:
        raise BalFormatError(f"invalid counts in header '{header.strip()}'", line_no)

    camera_indices = np.empty(n_r, dtype=np.int64)
    point_indices = np.empty(n_r, dtype=np.int64)
    pixels = np.empty((n_r, 2), dtype=np.float64)

    o = 0
    last_line = line_no
    while o < n_r:
        raw = text_stream.readline()
        last_line += 1
        if not raw:
            raise BalFormatError(f"truncated body: expected {n_r} observations, found {o}", last_line)
        if not raw.strip():
            continue
        fields = raw.split()
        if len(fields) != 4:
            raise BalFormatError(f"observation line needs 4 fields, got {len(fields)}", last_line)
        try:
            cam, lm = int(fields[0]), int(fields[1])
            x, y = float(fields[2]), float(fields[3])
        except ValueError:
            raise BalFormatError(f"cannot parse observation '{raw.strip()}'", last_line)
        if not 0 <= cam < n_p:
            raise BalFormatError(f"camera index {cam} out of range [0, {n_p})", last_line)
        if not 0 <= lm < n_l:
            raise BalFormatError(f"landmark index {lm} out of range [0, {n_l})", last_line)
        camera_indices[o], point_indices[o] = cam, lm
        pixels[o] = (x, y)
        o += 1

    n_values = CAMERA_DIM * n_p + POINT_DIM * n_l
    values = np.empty(n_values, dtype=np.float64)
    i = 0
    token_line = last_line
    for token, token_line in _tokens(text_stream, last_line + 1):
        if i >= n_values:
            raise BalFormatError("trailing data after the last landmark", token_line)
        try:
            values[i] = float(token)
        except ValueError:
            raise BalFormatError(f"cannot parse number '{token}'", token_line)
        i += 1
    if i < n_values:
        raise BalFormatError(f"truncated body: expected {n_values} parameter values, found {i}", token_line + 1)

    cameras = values[:CAMERA_DIM * n_p].reshape(n_p, CAMERA_DIM)
    points = values[CAMERA_DIM * n_p:].reshape(n_l, POINT_DIM)
    logger.info(f"Parsed BAL problem '{name}': {n_p} cameras, {n_l} landmarks, {n_r} observations")
    return BaProblem(cameras, points, camera_indices, point_indices, pixels, name)


def write_bal(problem: BaProblem, stream: TextIO):
    """Serialize a problem in BAL layout with round-trip float precision"""
    stream.write(f"{problem.n_cameras} {problem.n_points} {problem.n_observations}\n")
    for cam, lm, (x, y) in zip(problem.camera_indices, problem.point_indices, problem.pixels):
        stream.write(f"{cam} {lm} {float(x)!r} {float(y)!r}\n")
    for value in problem.cameras.ravel():
        stream.write(f"{float(value)!r}\n")
    for value in problem.points.ravel():
        stream.write(f"{float(value)!r}\n")


def problem_name(path) -> str:
    name = Path(path).name
    for suffix in (".bz2", ".gz", ".txt"):
        if name.endswith(suffix):
            name = name[: -len(suffix)]
    return name


def load_problem(path: str) -> BaProblem:
    """Read a plain, gzip- or bzip2-compressed BAL file"""
    path = str(path)
    if path.endswith(".gz"):
        opener = gzip.open
    elif path.endswith(".bz2"):
        opener = bz2.open
    else:
        opener = open
    logger.info(f"Loading BAL problem from {path}")
    with opener(path, "rt") as f:
        return parse_bal(f, name=problem_name(path))


def normalize_gauge(problem: BaProblem) -> BaProblem:
    """
    Center the landmark cloud on its per-axis median and scale it so that the
    median L1 distance to that center equals 100.

    Camera translations follow the similarity (t' = s (t + R m)), which leaves
    all reprojection residuals unchanged. A degenerate cloud (MAD = 0) is only
    centered.
    """
    if problem.n_points == 0:
        raise DegenerateProblemError("cannot normalize a problem without landmarks")
    median = np.median(problem.points, axis=0)
    centered = problem.points - median
    mad = float(np.median(np.abs(centered).sum(axis=1)))
    if mad == 0.0 or not np.isfinite(mad):
        logger.warning(f"Degenerate landmark cloud in '{problem.name}' (MAD = {mad}); no rescale applied")
        scale = 1.0
    else:
        scale = GAUGE_MAD / mad

    R = rotation_matrices(problem.cameras[:, 0:3])
    cameras = problem.cameras.copy()
    cameras[:, 3:6] = scale * (cameras[:, 3:6] + R @ median)
    logger.debug(f"Gauge normalization: median {median}, MAD {mad}, scale {scale}")
    return problem.with_parameters(cameras, scale * centered)


def camera_centers(cameras: np.ndarray) -> np.ndarray:
    """World position c = -R^T t of each camera"""
    R = rotation_matrices(cameras[:, 0:3])
    return -np.einsum("nji,nj->ni", R, cameras[:, 3:6])


def perturb(problem: BaProblem, sigma: float, seed: int) -> BaProblem:
    """
    Add iid N(0, sigma^2) noise to landmark positions and camera centers.

    Computed in double precision from numpy's seeded generator, so every solver
    sees the same perturbed problem. Orientations and intrinsics are untouched.
    """
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    if sigma == 0:
        return problem
    rng = np.random.default_rng(seed)
    points = problem.points + rng.normal(0.0, sigma, size=problem.points.shape)
    centers = camera_centers(problem.cameras) + rng.normal(0.0, sigma, size=(problem.n_cameras, 3))
    R = rotation_matrices(problem.cameras[:, 0:3])
    cameras = problem.cameras.copy()
    cameras[:, 3:6] = -np.einsum("nij,nj->ni", R, centers)
    return problem.with_parameters(cameras, points)


def filter_observations(problem: BaProblem, z_min: float = 1e-8) -> BaProblem:
    """
    Drop observations with camera-frame depth <= z_min, then landmarks left with
    fewer than two observations (and their observations) and cameras left with
    none, until stable. Survivors are reindexed densely in their original order.

    Raises:
        DegenerateProblemError: nothing is left
    """
    obs_depth = depths(problem.cameras[problem.camera_indices], problem.points[problem.point_indices])
    keep = obs_depth > z_min
    n_behind = int((~keep).sum())

    while True:
        counts = np.bincount(problem.point_indices[keep], minlength=problem.n_points)
        sparse = (counts < 2)[problem.point_indices] & keep
        if not sparse.any():
            break
        keep &= ~sparse

    if not keep.any():
        raise DegenerateProblemError(f"no observations left in '{problem.name}' after filtering")

    used_points = np.zeros(problem.n_points, dtype=bool)
    used_points[problem.point_indices[keep]] = True
    used_cameras = np.zeros(problem.n_cameras, dtype=bool)
    used_cameras[problem.camera_indices[keep]] = True
    point_map = np.cumsum(used_points) - 1
    camera_map = np.cumsum(used_cameras) - 1

    logger.info(
        f"Filtered '{problem.name}': {n_behind} observations behind z_min, "
        f"{problem.n_observations - int(keep.sum())} observations and "
        f"{problem.n_points - int(used_points.sum())} landmarks removed, "
        f"{problem.n_cameras - int(used_cameras.sum())} cameras removed"
    )
    if keep.all() and used_points.all() and used_cameras.all():
        return problem
    return BaProblem(
        problem.cameras[used_cameras],
        problem.points[used_points],
        camera_map[problem.camera_indices[keep]],
        point_map[problem.point_indices[keep]],
        problem.pixels[keep],
        problem.name,
    )


def preprocess(problem: BaProblem, config: Optional[PreprocessConfig] = None) -> BaProblem:
    """Gauge normalization, perturbation and filtering, in that order"""
    config = config or PreprocessConfig()
    config.validate()
    if config.normalize:
        problem = normalize_gauge(problem)
    problem = perturb(problem, config.sigma, config.seed)
    return filter_observations(problem, config.z_min)


def problem_summary(problem: BaProblem) -> Dict[str, Any]:
    """Size and density indicators: observations per camera and per landmark"""
    counts = problem.observation_counts()
    return {
        "problem": problem.name,
        "cameras": problem.n_cameras,
        "landmarks": problem.n_points,
        "observations": problem.n_observations,
        "obs_per_cam": problem.n_observations / problem.n_cameras,
        "obs_per_lm_mean": float(counts.mean()),
        "obs_per_lm_std": float(counts.std()),
        "obs_per_lm_max": int(counts.max()),
    }
