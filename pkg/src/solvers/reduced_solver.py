"""
Reduced camera system of the square-root solver.

The marginalized blocks already hold Q2^T J_p and Q2^T r in rows 3.. of every
block, so the reduced Hessian H_pp = sum_j (Q2^T J_p)^T (Q2^T J_p) + lambda D_p^2
is never formed: PCG only needs products with it, computed as two sparse
matrix-vector products per bucket of blocks.
"""
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
import scipy.sparse as sp

from src.bal.dataset import BaProblem
from src.core.config import SolverConfig
from src.core.logging import get_logger
from src.core.memory import MemoryTracker
from src.core.parallel import parallel_map, tree_reduce
from src.geometry.projection import CAMERA_DIM, POINT_DIM
from src.solvers.landmark_block import BlockBucket, BlockState, BlockStore
from src.solvers.lm_optimizer import LinearizationInfo, ProblemBackend, StepProposal
from src.solvers.pcg import CgStats, CgTermination, forcing_tolerance, solve_pcg

logger = get_logger(__name__)

__all__ = [
    "Preconditioner", "ReducedSystem", "compute_column_scaling", "damping_diagonal",
    "compute_preconditioner", "multiply_hpp", "reduced_rhs", "build_reduced_system",
    "forcing_tolerance", "solve_pcg", "CgStats", "CgTermination", "SqrtBaBackend",
]


@dataclass(eq=False)
class Preconditioner:
    """Inverted 9x9 diagonal blocks of the damped reduced Hessian"""

    inverse_blocks: np.ndarray          # (n_p, 9, 9)
    indefinite: bool = False
    failed_cameras: Tuple[int, ...] = ()

    def apply(self, r: np.ndarray) -> np.ndarray:
        n_p = self.inverse_blocks.shape[0]
        return np.einsum("nij,nj->ni", self.inverse_blocks, r.reshape(n_p, CAMERA_DIM)).ravel()


def invert_diagonal_blocks(blocks: np.ndarray) -> Preconditioner:
    """
    Cholesky-check and invert a stack of symmetric 9x9 blocks.

    A block that is not positive definite marks the whole system indefinite.
    """
    try:
        np.linalg.cholesky(blocks)
    except np.linalg.LinAlgError:
        failed = []
        for i, block in enumerate(blocks):
            try:
                np.linalg.cholesky(block)
            except np.linalg.LinAlgError:
                failed.append(i)
        logger.warning(f"Preconditioner: {len(failed)} camera block(s) not positive definite")
        return Preconditioner(np.zeros_like(blocks), indefinite=True, failed_cameras=tuple(failed))
    return Preconditioner(np.linalg.inv(blocks))


def compute_column_scaling(store: BlockStore) -> np.ndarray:
    """
    Jacobi scaling s_c = 1 / (1 + |J_c|), applied in place to every block.

    Must run on freshly linearized blocks, before marginalization.

    Returns:
        (9 n_p + 3 n_l,) scale vector, poses first
    """
    pose_sq, point_sq = store.column_norms_sq()
    pose_scale = 1.0 / (1.0 + np.sqrt(pose_sq))
    point_scale = 1.0 / (1.0 + np.sqrt(point_sq))
    store.scale_columns(pose_scale, point_scale)
    # squared norms of the scaled columns, kept for the damping diagonal
    store.scaled_column_sq = np.concatenate([(pose_sq * pose_scale ** 2).ravel(),
                                             (point_sq * point_scale ** 2).ravel()])
    return np.concatenate([pose_scale.ravel(), point_scale.ravel()])


def damping_diagonal(column_sq: np.ndarray, min_diagonal: float, max_diagonal: float) -> np.ndarray:
    """D^2 = diag(J^T J), clamped"""
    return np.clip(column_sq, min_diagonal, max_diagonal)


def _bucket_operator(bucket: BlockBucket, n_cameras: int) -> sp.csr_matrix:
    """(2k m) x (9 n_p) sparse view of the Q2^T J_p rows of a bucket"""
    k, m = bucket.k, bucket.size
    lc = CAMERA_DIM * k
    rows = 2 * k * m
    data = np.ascontiguousarray(bucket.storage[:, POINT_DIM:, :lc]).reshape(-1)
    indices = np.broadcast_to(bucket.pose_columns[:, None, :], (m, 2 * k, lc)).reshape(-1)
    indptr = np.arange(0, rows * lc + 1, lc)
    return sp.csr_matrix((data, indices, indptr), shape=(rows, CAMERA_DIM * n_cameras))


def _bucket_residual(bucket: BlockBucket) -> np.ndarray:
    lc = CAMERA_DIM * bucket.k
    return np.ascontiguousarray(bucket.storage[:, POINT_DIM:, lc + POINT_DIM]).reshape(-1)


def compute_preconditioner(store: BlockStore, lmbda: float, pose_damping_sq: np.ndarray) -> Preconditioner:
    """
    Block-Jacobi preconditioner: per camera, sum over blocks of the 9x9 Gram
    matrix of its pose columns in Q2^T J_p, plus lambda D_p^2.
    """
    n_p = store.n_cameras
    blocks = np.zeros((n_p, CAMERA_DIM, CAMERA_DIM), dtype=store.dtype)
    for bucket in store.buckets:
        k, m = bucket.k, bucket.size
        A = bucket.storage[:, POINT_DIM:, :CAMERA_DIM * k].reshape(m, 2 * k, k, CAMERA_DIM)
        gram = np.einsum("mrki,mrkj->mkij", A, A)
        np.add.at(blocks, bucket.pose_indices.reshape(-1), gram.reshape(-1, CAMERA_DIM, CAMERA_DIM))
    idx = np.arange(CAMERA_DIM)
    blocks[:, idx, idx] += (lmbda * pose_damping_sq.reshape(n_p, CAMERA_DIM)).astype(store.dtype)
    return invert_diagonal_blocks(blocks)


def multiply_hpp(operators: List[sp.csr_matrix], pose_damping: np.ndarray, v: np.ndarray,
                 n_jobs: int = 1) -> np.ndarray:
    """
    H_pp v = sum_buckets A^T (A v) + (sqrt(lambda) D_p)^2 v without forming H_pp.

    Args:
        operators: Per-bucket sparse Q2^T J_p
        pose_damping: sqrt(lambda) * D_p diagonal
        v: Pose-space vector
    """
    partial = parallel_map(lambda A: A.T @ (A @ v), operators, n_jobs)
    return tree_reduce(partial) + pose_damping * pose_damping * v


def reduced_rhs(operators: List[sp.csr_matrix], residuals: List[np.ndarray], n_jobs: int = 1) -> np.ndarray:
    """Reduced gradient b_p = sum_j (Q2^T J_p)^T Q2^T r"""
    return tree_reduce(parallel_map(lambda pair: pair[0].T @ pair[1], list(zip(operators, residuals)), n_jobs))


@dataclass(eq=False)
class ReducedSystem:
    """Damped reduced camera system, ready for PCG"""

    operators: List[sp.csr_matrix]
    residuals: List[np.ndarray]
    pose_damping: np.ndarray
    preconditioner: Preconditioner
    rhs: np.ndarray
    n_jobs: int = 1

    @property
    def size(self) -> int:
        return self.rhs.shape[0]

    def multiply(self, v: np.ndarray) -> np.ndarray:
        return multiply_hpp(self.operators, self.pose_damping, v, self.n_jobs)

    def precondition(self, r: np.ndarray) -> np.ndarray:
        return self.preconditioner.apply(r)

    def to_dense(self) -> np.ndarray:
        """Explicit H_pp, for small problems and checks only"""
        dense = np.zeros((self.size, self.size), dtype=self.rhs.dtype)
        for A in self.operators:
            dense += (A.T @ A).toarray()
        dense[np.diag_indices(self.size)] += self.pose_damping * self.pose_damping
        return dense


def build_reduced_system(store: BlockStore, lmbda: float, pose_damping_sq: np.ndarray,
                         n_jobs: int = 1) -> ReducedSystem:
    """
    Collect the reduced rows of damped (or, for lambda = 0, undamped) blocks.

    Args:
        store: Marginalized blocks; damped with the same lambda unless lambda = 0
        lmbda: Damping lambda
        pose_damping_sq: D_p^2 diagonal (9 n_p)
    """
    store._require(BlockState.MARGINALIZED, BlockState.MARGINALIZED_DAMPED)
    operators = [_bucket_operator(b, store.n_cameras) for b in store.buckets]
    residuals = [_bucket_residual(b) for b in store.buckets]
    pose_damping = np.sqrt(lmbda * pose_damping_sq).astype(store.dtype)
    return ReducedSystem(
        operators=operators,
        residuals=residuals,
        pose_damping=pose_damping,
        preconditioner=compute_preconditioner(store, lmbda, pose_damping_sq),
        rhs=reduced_rhs(operators, residuals, n_jobs).astype(store.dtype),
        n_jobs=n_jobs,
    )


class SqrtBaBackend(ProblemBackend):
    """
    Square-root LM backend.

    Linearization, column scaling and QR marginalization happen once per
    accepted step; each damping value only folds the landmark damping into the
    blocks (undoing the previous one first), rebuilds the reduced operator and
    runs PCG.
    """

    def __init__(self, problem: BaProblem, config: SolverConfig, tracker: Optional[MemoryTracker] = None):
        super().__init__(problem, config, tracker)
        self.store = BlockStore(problem, config.dtype, self.tracker, config.thread_count)
        self.scaling: Optional[np.ndarray] = None
        self.gradient: Optional[np.ndarray] = None
        self.damping_sq: Optional[np.ndarray] = None

    @property
    def n_pose(self) -> int:
        return CAMERA_DIM * self.problem.n_cameras

    def linearize(self) -> LinearizationInfo:
        cfg = self.config
        self.store.linearize(self.problem, cfg.huber_delta)
        self.scaling = compute_column_scaling(self.store)
        self.gradient = self.store.gradient()
        self.damping_sq = damping_diagonal(self.store.scaled_column_sq, cfg.min_diagonal, cfg.max_diagonal)
        excluded = self.store.marginalize(cfg.qr_method, cfg.rank_tolerance)
        return LinearizationInfo(
            gradient_norm=float(np.linalg.norm(self.gradient)),
            gradient_max_norm=float(np.max(np.abs(self.gradient / self.scaling))),
            excluded_landmarks=excluded,
        )

    def solve(self, lmbda: float, forcing_tolerance: float) -> StepProposal:
        if self.store.state == BlockState.MARGINALIZED_DAMPED:
            self.store.undo_damping()
        if lmbda > 0:
            self.store.apply_damping(lmbda, self.damping_sq[self.n_pose:].reshape(-1, POINT_DIM))
        system = build_reduced_system(self.store, lmbda, self.damping_sq[:self.n_pose], self.config.thread_count)
        if system.preconditioner.indefinite:
            return StepProposal(np.zeros_like(self.scaling), 0.0, indefinite=True)

        delta_p, stats = solve_pcg(system, system.rhs, forcing_tolerance, self.config.cg_max_iterations)
        if stats.termination_reason == CgTermination.INDEFINITE:
            return StepProposal(np.zeros_like(self.scaling), 0.0, stats, indefinite=True)
        delta_l = self.store.back_substitute(delta_p)
        scaled = np.concatenate([delta_p, delta_l]).astype(np.float64)
        model = self.model_decrease(scaled, self.gradient, lmbda, self.damping_sq)
        return StepProposal(scaled * self.scaling, model, stats)

    def release(self):
        self.store.release()
