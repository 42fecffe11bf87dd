"""
Dense landmark blocks and their in-place QR marginalization.

One block stores everything one landmark with k observations contributes to
the linearized problem:

    rows 0 .. 2k-1      observation rows (cameras in ascending order)
    rows 2k .. 2k+2     landmark damping rows (zero unless damped)
    cols 0 .. 9k-1      pose Jacobian, one 9-column slice per observation
    cols 9k .. 9k+2     landmark Jacobian
    col  9k+3           residual

Marginalization applies Givens rotations to whole rows, so afterwards the top
three rows hold [Q1^T J_p | R1 | Q1^T r] and the remaining rows
[Q2^T J_p | 0 | Q2^T r]. Damping folds sqrt(lambda) D_l into R1 with six more
rotations, which are stored so they can be undone when LM backtracks.

The kernels work on stacks of equally sized blocks (leading batch axis); a
single block is the batch-of-one case. `BlockStore` keeps every block of a
problem, bucketed by k.
"""
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Tuple

import numpy as np

from src.bal.dataset import BaProblem
from src.core.errors import BlockStateError, DegenerateProblemError, RankDeficiencyError
from src.core.logging import get_logger
from src.core.memory import MemoryTracker
from src.core.parallel import parallel_map
from src.geometry.projection import CAMERA_DIM, POINT_DIM, linearize_batch

logger = get_logger(__name__)

DAMPING_ROTATIONS = 6


class BlockState(str, Enum):
    LINEARIZED = "linearized"
    MARGINALIZED = "marginalized"
    MARGINALIZED_DAMPED = "marginalized_damped"


@dataclass(frozen=True)
class GivensRotation:
    """Rotation in the plane of rows (row_j, row_i) that zeroes an entry of row_i"""

    row_i: int
    row_j: int
    c: float
    s: float


def block_shape(k: int) -> Tuple[int, int]:
    return 2 * k + 3, CAMERA_DIM * k + POINT_DIM + 1


def block_bytes(k: int, itemsize: int) -> int:
    rows, cols = block_shape(k)
    return rows * cols * itemsize


def landmark_block_bytes(counts: np.ndarray, itemsize: int) -> int:
    """Total storage of all landmark blocks: sum_j (2k_j + 3)(9k_j + 4) * itemsize"""
    k = np.asarray(counts, dtype=np.int64)
    return int(np.sum((2 * k + 3) * (CAMERA_DIM * k + 4)) * itemsize)


def damping_schedule(k: int) -> List[Tuple[int, int]]:
    """(pivot row, eliminated row) of the six damping rotations, in application order"""
    d = 2 * k
    return [(0, d), (1, d + 1), (1, d), (2, d + 2), (2, d + 1), (2, d)]


def givens_coeffs(a_jj, a_ij):
    """
    Cosine and sine of the rotation that zeroes a_ij against pivot a_jj.

    c = a_jj / hypot, s = a_ij / hypot; the identity when a_ij is already zero.
    Accepts scalars or arrays.
    """
    a_jj = np.asarray(a_jj)
    a_ij = np.asarray(a_ij)
    zero = a_ij == 0
    rho = np.hypot(a_jj, a_ij)
    safe = np.where(zero, 1, rho)
    c = np.where(zero, 1, a_jj / safe).astype(rho.dtype)
    s = np.where(zero, 0, a_ij / safe).astype(rho.dtype)
    if c.ndim == 0:
        return float(c), float(s)
    return c, s


def _rotate(storage: np.ndarray, j: int, i: int, c: np.ndarray, s: np.ndarray):
    """rows (j, i) <- (c r_j + s r_i, -s r_j + c r_i) for every block in the stack"""
    rj = storage[:, j, :].copy()
    ri = storage[:, i, :]
    c = c[:, None]
    s = s[:, None]
    storage[:, j, :] = c * rj + s * ri
    storage[:, i, :] = c * ri - s * rj


def marginalize_givens(storage: np.ndarray, k: int):
    """Upper-triangularize the landmark columns: left to right, bottom to top"""
    lc = CAMERA_DIM * k
    for col in range(POINT_DIM):
        for i in range(2 * k - 1, col, -1):
            c, s = givens_coeffs(storage[:, col, lc + col], storage[:, i, lc + col])
            _rotate(storage, col, i, c, s)
            storage[:, i, lc + col] = 0


def marginalize_householder(storage: np.ndarray, k: int):
    """Same factorization with three Householder reflections per block"""
    lc = CAMERA_DIM * k
    n = 2 * k
    for col in range(POINT_DIM):
        x = storage[:, col:n, lc + col].astype(storage.dtype, copy=True)
        norm = np.linalg.norm(x, axis=1)
        alpha = -np.where(x[:, 0] >= 0, 1, -1) * norm
        v = x
        v[:, 0] -= alpha
        vnorm2 = np.einsum("mi,mi->m", v, v)
        beta = np.where(vnorm2 > 0, 2 / np.where(vnorm2 > 0, vnorm2, 1), 0).astype(storage.dtype)
        sub = storage[:, col:n, :]
        w = np.einsum("mi,mic->mc", v, sub)
        sub -= beta[:, None, None] * v[:, :, None] * w[:, None, :]
        storage[:, col + 1:n, lc + col] = 0


def apply_damping_kernel(storage: np.ndarray, k: int, sqrt_lambda_d: np.ndarray) -> np.ndarray:
    """
    Write sqrt(lambda) D_l into the damping rows and eliminate it.

    Returns:
        (m, 6, 2) array of (c, s) per rotation, ordered like damping_schedule(k)
    """
    lc = CAMERA_DIM * k
    d = 2 * k
    for col in range(POINT_DIM):
        storage[:, d + col, lc + col] = sqrt_lambda_d[:, col]
    rotations = np.empty((storage.shape[0], DAMPING_ROTATIONS, 2), dtype=storage.dtype)
    for n, (j, i) in enumerate(damping_schedule(k)):
        c, s = givens_coeffs(storage[:, j, lc + j], storage[:, i, lc + j])
        _rotate(storage, j, i, c, s)
        storage[:, i, lc + j] = 0
        rotations[:, n, 0] = c
        rotations[:, n, 1] = s
    return rotations


def undo_damping_kernel(storage: np.ndarray, k: int, rotations: np.ndarray):
    """Apply the transposed rotations in reverse order, then clear the damping rows"""
    schedule = damping_schedule(k)
    for n in range(DAMPING_ROTATIONS - 1, -1, -1):
        j, i = schedule[n]
        _rotate(storage, j, i, rotations[:, n, 0], -rotations[:, n, 1])
    storage[:, 2 * k:, :] = 0


def back_substitute_kernel(storage: np.ndarray, k: int, delta_xp: np.ndarray) -> np.ndarray:
    """
    Landmark increments -R1^-1 (Q1^T r + Q1^T J_p dx_p) for a stack of blocks.

    Args:
        delta_xp: (m, 9k) pose increments gathered per block
    """
    lc = CAMERA_DIM * k
    R = storage[:, :POINT_DIM, lc:lc + POINT_DIM]
    rhs = storage[:, :POINT_DIM, lc + POINT_DIM] + np.einsum("mrc,mc->mr", storage[:, :POINT_DIM, :lc], delta_xp)
    x = np.empty_like(rhs)
    with np.errstate(divide="ignore", invalid="ignore"):
        x[:, 2] = rhs[:, 2] / R[:, 2, 2]
        x[:, 1] = (rhs[:, 1] - R[:, 1, 2] * x[:, 2]) / R[:, 1, 1]
        x[:, 0] = (rhs[:, 0] - R[:, 0, 1] * x[:, 1] - R[:, 0, 2] * x[:, 2]) / R[:, 0, 0]
    return -x


def rank_deficient(storage: np.ndarray, k: int, jl_max: np.ndarray, tolerance: float) -> np.ndarray:
    """Blocks whose R1 has a diagonal entry below tolerance * max|J_l|"""
    lc = CAMERA_DIM * k
    diag = np.abs(np.stack([storage[:, c, lc + c] for c in range(POINT_DIM)], axis=1))
    return (diag < (tolerance * jl_max)[:, None]).any(axis=1) | (jl_max == 0)


def _marginalize(storage: np.ndarray, k: int, method: str):
    if method == "givens":
        marginalize_givens(storage, k)
    elif method == "householder":
        marginalize_householder(storage, k)
    else:
        raise ValueError(f"unknown QR method '{method}'")


# --------------------------------------------------------------------------
# Single landmark block
# --------------------------------------------------------------------------

@dataclass(eq=False)
class LandmarkBlock:
    """Dense storage of one landmark's Jacobians and residuals"""

    landmark_index: int
    pose_indices: np.ndarray
    storage: np.ndarray
    state: BlockState = BlockState.LINEARIZED
    damping_rotations: List[GivensRotation] = field(default_factory=list)
    rank_deficient: bool = False

    @property
    def k(self) -> int:
        return len(self.pose_indices)

    @property
    def memory_bytes(self) -> int:
        return self.storage.size * self.storage.itemsize

    @property
    def pose_jacobian(self) -> np.ndarray:
        return self.storage[:, :CAMERA_DIM * self.k]

    @property
    def landmark_jacobian(self) -> np.ndarray:
        lc = CAMERA_DIM * self.k
        return self.storage[:, lc:lc + POINT_DIM]

    @property
    def residual(self) -> np.ndarray:
        return self.storage[:, CAMERA_DIM * self.k + POINT_DIM]

    def _require(self, *states: BlockState):
        if self.state not in states:
            raise BlockStateError(
                f"landmark {self.landmark_index}: block is {self.state.value}, "
                f"expected {' or '.join(s.value for s in states)}"
            )


def linearize(problem: BaProblem, landmark_index: int, huber_delta: float, dtype=np.float64) -> LandmarkBlock:
    """
    Build the linearized block of one landmark.

    Raises:
        DegenerateProblemError: fewer than two observations
        ProjectionError: an observation has zero depth
    """
    obs = problem.landmark_observations(landmark_index)
    obs = obs[np.argsort(problem.camera_indices[obs], kind="stable")]
    k = len(obs)
    if k < 2:
        raise DegenerateProblemError(f"landmark {landmark_index} has {k} observation(s), need at least 2")
    lin = linearize_batch(
        problem.cameras[problem.camera_indices[obs]],
        problem.points[problem.point_indices[obs]],
        problem.pixels[obs],
        huber_delta,
        problem.camera_indices[obs],
        problem.point_indices[obs],
    )
    storage = np.zeros(block_shape(k), dtype=dtype)
    lc = CAMERA_DIM * k
    for n in range(k):
        rows = slice(2 * n, 2 * n + 2)
        storage[rows, CAMERA_DIM * n:CAMERA_DIM * (n + 1)] = lin.jac_cam[n]
        storage[rows, lc:lc + POINT_DIM] = lin.jac_point[n]
        storage[rows, lc + POINT_DIM] = lin.residuals[n]
    return LandmarkBlock(landmark_index, problem.camera_indices[obs].copy(), storage)


def marginalize(block: LandmarkBlock, method: str = "givens", rank_tolerance: float = 1e-12) -> LandmarkBlock:
    """
    QR-marginalize the landmark in place.

    A numerically rank-deficient R1 sets `block.rank_deficient`; such blocks are
    left out of the reduced system by the callers.
    """
    block._require(BlockState.LINEARIZED)
    k = block.k
    jl_max = np.abs(block.storage[:2 * k, CAMERA_DIM * k:CAMERA_DIM * k + POINT_DIM]).max()
    stack = block.storage[None]
    _marginalize(stack, k, method)
    block.rank_deficient = bool(rank_deficient(stack, k, np.array([jl_max]), rank_tolerance)[0])
    if block.rank_deficient:
        logger.warning(f"Landmark {block.landmark_index}: rank-deficient landmark Jacobian")
    block.state = BlockState.MARGINALIZED
    return block


def apply_landmark_damping(block: LandmarkBlock, lmbda: float, D_l_diag) -> LandmarkBlock:
    """Fold sqrt(lambda) * D_l into the marginalized block with six stored rotations"""
    block._require(BlockState.MARGINALIZED)
    if lmbda < 0:
        raise ValueError(f"damping must be non-negative, got {lmbda}")
    values = np.sqrt(lmbda) * np.asarray(D_l_diag, dtype=np.float64)
    rotations = apply_damping_kernel(block.storage[None], block.k, values[None].astype(block.storage.dtype))
    block.damping_rotations = [
        GivensRotation(row_i=i, row_j=j, c=float(rotations[0, n, 0]), s=float(rotations[0, n, 1]))
        for n, (j, i) in enumerate(damping_schedule(block.k))
    ]
    block.state = BlockState.MARGINALIZED_DAMPED
    return block


def undo_landmark_damping(block: LandmarkBlock) -> LandmarkBlock:
    """Restore the undamped marginalized block"""
    block._require(BlockState.MARGINALIZED_DAMPED)
    rotations = np.array([[[g.c, g.s] for g in block.damping_rotations]], dtype=block.storage.dtype)
    undo_damping_kernel(block.storage[None], block.k, rotations)
    block.damping_rotations = []
    block.state = BlockState.MARGINALIZED
    return block


def back_substitute(block: LandmarkBlock, delta_xp) -> np.ndarray:
    """
    Landmark increment for pose increments gathered for this block.

    Args:
        delta_xp: (9k,) pose increments of the block's observing cameras, in block order

    Raises:
        RankDeficiencyError: the block's R1 is singular
    """
    block._require(BlockState.MARGINALIZED, BlockState.MARGINALIZED_DAMPED)
    if block.rank_deficient and block.state == BlockState.MARGINALIZED:
        raise RankDeficiencyError(f"landmark {block.landmark_index}: R1 is rank deficient")
    delta_xp = np.asarray(delta_xp, dtype=block.storage.dtype).reshape(1, CAMERA_DIM * block.k)
    return back_substitute_kernel(block.storage[None], block.k, delta_xp)[0]


def gather_poses(delta_xp: np.ndarray, pose_indices: np.ndarray) -> np.ndarray:
    """Slice the full (9 n_p) pose increment down to a block's observing cameras"""
    return np.reshape(delta_xp, (-1, CAMERA_DIM))[pose_indices].reshape(-1)


# --------------------------------------------------------------------------
# All blocks of a problem
# --------------------------------------------------------------------------

@dataclass(eq=False)
class BlockBucket:
    """Landmark blocks sharing the same observation count k, stacked"""

    k: int
    landmarks: np.ndarray        # (m,)
    observations: np.ndarray     # (m, k) observation ids, cameras ascending
    pose_indices: np.ndarray     # (m, k)
    storage: np.ndarray          # (m, 2k+3, 9k+4)
    damping_rotations: Optional[np.ndarray] = None   # (m, 6, 2)
    rank_deficient: Optional[np.ndarray] = None      # (m,)
    _pose_columns: Optional[np.ndarray] = None

    @property
    def size(self) -> int:
        return self.landmarks.shape[0]

    @property
    def pose_columns(self) -> np.ndarray:
        """(m, 9k) global pose column of every pose column of every block"""
        if self._pose_columns is None:
            self._pose_columns = (
                CAMERA_DIM * self.pose_indices[:, :, None] + np.arange(CAMERA_DIM)
            ).reshape(self.size, CAMERA_DIM * self.k)
        return self._pose_columns


class BlockStore:
    """
    Every landmark block of a problem, bucketed by observation count.

    The bucket layout depends only on the observation graph, which is fixed
    during optimization, so the store is built once per problem and refilled
    at every linearization.
    """

    def __init__(self, problem: BaProblem, dtype=np.float64, tracker: Optional[MemoryTracker] = None,
                 n_jobs: int = 1, name: str = "landmark_blocks"):
        counts = problem.observation_counts()
        if problem.n_points == 0 or counts.min() < 2:
            raise DegenerateProblemError("every landmark needs at least two observations")
        self.n_cameras = problem.n_cameras
        self.n_points = problem.n_points
        self.dtype = np.dtype(dtype)
        self.n_jobs = n_jobs
        self.tracker = tracker
        self.name = name
        self.state: Optional[BlockState] = None
        self.scaled = False
        self.scaled_column_sq: Optional[np.ndarray] = None
        self.lmbda: Optional[float] = None

        order = np.lexsort((problem.camera_indices, problem.point_indices))
        offsets = np.concatenate([[0], np.cumsum(counts)])
        self.buckets: List[BlockBucket] = []
        for k in np.unique(counts):
            k = int(k)
            landmarks = np.flatnonzero(counts == k)
            observations = order[offsets[landmarks][:, None] + np.arange(k)]
            self.buckets.append(BlockBucket(
                k=k,
                landmarks=landmarks,
                observations=observations,
                pose_indices=problem.camera_indices[observations],
                storage=np.zeros((len(landmarks),) + block_shape(k), dtype=self.dtype),
            ))
        self.memory_bytes = sum(b.storage.nbytes for b in self.buckets)
        if tracker is not None:
            tracker.allocate(name, self.memory_bytes)
        logger.info(
            f"Landmark blocks: {self.n_points} blocks in {len(self.buckets)} buckets, "
            f"{self.memory_bytes} bytes ({self.dtype.name})"
        )

    def release(self):
        if self.tracker is not None:
            self.tracker.release(self.name)

    def _require(self, *states):
        if self.state not in states:
            current = self.state.value if self.state else "empty"
            raise BlockStateError(f"block store is {current}, expected {' or '.join(s.value for s in states)}")

    def _map(self, fn):
        return parallel_map(fn, self.buckets, self.n_jobs)

    def linearize(self, problem: BaProblem, huber_delta: float):
        """Evaluate residuals and Jacobians (in double) and write them into the blocks"""
        lin = linearize_batch(
            problem.cameras[problem.camera_indices],
            problem.points[problem.point_indices],
            problem.pixels,
            huber_delta,
            problem.camera_indices,
            problem.point_indices,
        )

        def fill(bucket: BlockBucket):
            k = bucket.k
            lc = CAMERA_DIM * k
            bucket.storage.fill(0)
            for n in range(k):
                obs = bucket.observations[:, n]
                rows = slice(2 * n, 2 * n + 2)
                bucket.storage[:, rows, CAMERA_DIM * n:CAMERA_DIM * (n + 1)] = lin.jac_cam[obs]
                bucket.storage[:, rows, lc:lc + POINT_DIM] = lin.jac_point[obs]
                bucket.storage[:, rows, lc + POINT_DIM] = lin.residuals[obs]
            bucket.damping_rotations = None
            bucket.rank_deficient = None

        self._map(fill)
        self.state = BlockState.LINEARIZED
        self.scaled = False
        self.scaled_column_sq = None
        self.lmbda = None

    def column_norms_sq(self) -> Tuple[np.ndarray, np.ndarray]:
        """Squared column norms of the full Jacobian, (n_p, 9) and (n_p, 3), in double"""
        self._require(BlockState.LINEARIZED)
        pose = np.zeros((self.n_cameras, CAMERA_DIM))
        point = np.zeros((self.n_points, POINT_DIM))
        for bucket in self.buckets:
            k = bucket.k
            lc = CAMERA_DIM * k
            block_rows = bucket.storage[:, :2 * k, :lc + POINT_DIM].astype(np.float64)
            col_sq = np.einsum("mrc,mrc->mc", block_rows, block_rows)
            np.add.at(pose, bucket.pose_indices.reshape(-1), col_sq[:, :lc].reshape(-1, CAMERA_DIM))
            point[bucket.landmarks] = col_sq[:, lc:]
        return pose, point

    def scale_columns(self, pose_scale: np.ndarray, point_scale: np.ndarray):
        """Multiply Jacobian columns in place; pose_scale (n_p, 9), point_scale (n_l, 3)"""
        self._require(BlockState.LINEARIZED)
        if self.scaled:
            raise BlockStateError("Jacobian columns are already scaled")

        def scale(bucket: BlockBucket):
            k = bucket.k
            lc = CAMERA_DIM * k
            ps = pose_scale[bucket.pose_indices].reshape(bucket.size, lc).astype(self.dtype)
            bucket.storage[:, :, :lc] *= ps[:, None, :]
            ls = point_scale[bucket.landmarks].astype(self.dtype)
            bucket.storage[:, :, lc:lc + POINT_DIM] *= ls[:, None, :]

        self._map(scale)
        self.scaled = True

    def gradient(self) -> np.ndarray:
        """J^T r of the current (possibly scaled) Jacobian, poses then landmarks, in double"""
        self._require(BlockState.LINEARIZED)
        g_pose = np.zeros((self.n_cameras, CAMERA_DIM))
        g_point = np.zeros((self.n_points, POINT_DIM))
        for bucket in self.buckets:
            k = bucket.k
            lc = CAMERA_DIM * k
            rows = bucket.storage[:, :2 * k, :].astype(np.float64)
            g = np.einsum("mrc,mr->mc", rows[:, :, :lc + POINT_DIM], rows[:, :, lc + POINT_DIM])
            np.add.at(g_pose, bucket.pose_indices.reshape(-1), g[:, :lc].reshape(-1, CAMERA_DIM))
            g_point[bucket.landmarks] = g[:, lc:]
        return np.concatenate([g_pose.ravel(), g_point.ravel()])

    def marginalize(self, method: str = "givens", rank_tolerance: float = 1e-12) -> int:
        """
        Marginalize every landmark in place.

        Returns:
            Number of rank-deficient blocks; their storage is zeroed so they drop
            out of the reduced system until the next linearization.
        """
        self._require(BlockState.LINEARIZED)

        def run(bucket: BlockBucket) -> int:
            k = bucket.k
            lc = CAMERA_DIM * k
            jl_max = np.abs(bucket.storage[:, :2 * k, lc:lc + POINT_DIM]).max(axis=(1, 2)).astype(np.float64)
            _marginalize(bucket.storage, k, method)
            bucket.rank_deficient = rank_deficient(bucket.storage, k, jl_max, rank_tolerance)
            bucket.storage[bucket.rank_deficient] = 0
            return int(bucket.rank_deficient.sum())

        n_deficient = sum(self._map(run))
        if n_deficient:
            logger.warning(f"{n_deficient} rank-deficient landmark(s) excluded from this iteration")
        self.state = BlockState.MARGINALIZED
        return n_deficient

    def apply_damping(self, lmbda: float, point_damping_sq: np.ndarray):
        """
        Damp every landmark with sqrt(lambda * D_l^2).

        Args:
            point_damping_sq: (n_l, 3) diagonal of D_l^2
        """
        self._require(BlockState.MARGINALIZED)
        if lmbda < 0:
            raise ValueError(f"damping must be non-negative, got {lmbda}")

        def run(bucket: BlockBucket):
            values = np.sqrt(lmbda * point_damping_sq[bucket.landmarks]).astype(self.dtype)
            bucket.damping_rotations = apply_damping_kernel(bucket.storage, bucket.k, values)

        self._map(run)
        self.state = BlockState.MARGINALIZED_DAMPED
        self.lmbda = lmbda

    def undo_damping(self):
        self._require(BlockState.MARGINALIZED_DAMPED)

        def run(bucket: BlockBucket):
            undo_damping_kernel(bucket.storage, bucket.k, bucket.damping_rotations)
            bucket.damping_rotations = None

        self._map(run)
        self.state = BlockState.MARGINALIZED
        self.lmbda = None

    def back_substitute(self, delta_xp: np.ndarray) -> np.ndarray:
        """Landmark increments (n_l * 3) for the full pose increment (n_p * 9)"""
        self._require(BlockState.MARGINALIZED, BlockState.MARGINALIZED_DAMPED)
        poses = np.asarray(delta_xp, dtype=self.dtype).reshape(self.n_cameras, CAMERA_DIM)
        out = np.zeros((self.n_points, POINT_DIM), dtype=self.dtype)

        def run(bucket: BlockBucket):
            gathered = poses[bucket.pose_indices].reshape(bucket.size, CAMERA_DIM * bucket.k)
            dx = back_substitute_kernel(bucket.storage, bucket.k, gathered)
            dx[bucket.rank_deficient] = 0
            out[bucket.landmarks] = dx

        self._map(run)
        return out.ravel()

    def block(self, landmark_index: int) -> LandmarkBlock:
        """Copy of one landmark's block (for inspection and tests)"""
        for bucket in self.buckets:
            hit = np.flatnonzero(bucket.landmarks == landmark_index)
            if hit.size:
                b = int(hit[0])
                state = self.state or BlockState.LINEARIZED
                rotations = []
                if bucket.damping_rotations is not None:
                    rotations = [
                        GivensRotation(row_i=i, row_j=j, c=float(bucket.damping_rotations[b, n, 0]),
                                       s=float(bucket.damping_rotations[b, n, 1]))
                        for n, (j, i) in enumerate(damping_schedule(bucket.k))
                    ]
                deficient = bool(bucket.rank_deficient[b]) if bucket.rank_deficient is not None else False
                return LandmarkBlock(landmark_index, bucket.pose_indices[b].copy(), bucket.storage[b].copy(),
                                     state, rotations, deficient)
        raise IndexError(f"no block for landmark {landmark_index}")

    def bucket_sizes(self) -> Dict[int, int]:
        return {b.k: b.size for b in self.buckets}
