"""
Explicit Schur complement baseline.

Forms the normal equations block by block (camera 9x9, camera-landmark 9x3,
landmark 3x3), eliminates the landmarks through the block-diagonal H_ll and
stores the reduced camera matrix in block-sparse (BSR) form. The camera-pair
layout of that matrix only depends on which cameras share landmarks, so it is
computed once per problem in `CoVisibilityPattern`; every damping value then
redoes the reduction into the same layout.
"""
from dataclasses import dataclass
from typing import List, Optional

import numpy as np
import scipy.sparse as sp

from src.bal.dataset import BaProblem
from src.core.config import SolverConfig
from src.core.errors import SingularBlockError
from src.core.logging import get_logger
from src.core.memory import MemoryTracker
from src.core.parallel import parallel_map, tree_reduce
from src.geometry.projection import CAMERA_DIM, POINT_DIM, evaluate_observations
from src.solvers.lm_optimizer import LinearizationInfo, ProblemBackend, StepProposal
from src.solvers.pcg import CgTermination, solve_pcg
from src.solvers.reduced_solver import Preconditioner, damping_diagonal, invert_diagonal_blocks

logger = get_logger(__name__)

PAIR_CHUNK = 16384
ASSEMBLY_CHUNK = 65536


class CoVisibilityPattern:
    """
    Block layout of the reduced camera matrix.

    Upper-triangular camera pairs (i <= j) that share a landmark, plus every
    diagonal block, in row-major order; each (observation a, observation b)
    pair of a landmark is mapped to the block it contributes to.
    """

    def __init__(self, problem: BaProblem):
        n_p = problem.n_cameras
        self.n_cameras = n_p
        counts = problem.observation_counts()
        order = np.lexsort((problem.camera_indices, problem.point_indices))
        offsets = np.concatenate([[0], np.cumsum(counts)])
        cams = problem.camera_indices

        first, second = [], []
        for k in np.unique(counts):
            k = int(k)
            if k == 0:
                continue
            landmarks = np.flatnonzero(counts == k)
            obs = order[offsets[landmarks][:, None] + np.arange(k)]
            a, b = np.triu_indices(k)
            first.append(obs[:, a].ravel())
            second.append(obs[:, b].ravel())
            # a camera observing a landmark twice contributes both orders to its diagonal block
            strict = a < b
            oa, ob = obs[:, a[strict]].ravel(), obs[:, b[strict]].ravel()
            twin = cams[oa] == cams[ob]
            first.append(ob[twin])
            second.append(oa[twin])
        first = np.concatenate(first) if first else np.empty(0, dtype=np.int64)
        second = np.concatenate(second) if second else np.empty(0, dtype=np.int64)

        pair_keys = cams[first] * n_p + cams[second]
        diag_keys = np.arange(n_p) * (n_p + 1)
        keys = np.unique(np.concatenate([pair_keys, diag_keys]))
        self.block_rows = keys // n_p
        self.block_cols = keys % n_p
        self.diagonal = np.searchsorted(keys, diag_keys)

        pair_order = np.argsort(pair_keys, kind="stable")
        self.pair_first = first[pair_order]
        self.pair_second = second[pair_order]
        self.pair_block = np.searchsorted(keys, pair_keys[pair_order])

        # mirror the strict upper triangle for the full symmetric BSR matrix
        strict = np.flatnonzero(self.block_rows < self.block_cols)
        rows = np.concatenate([self.block_rows, self.block_cols[strict]])
        cols = np.concatenate([self.block_cols, self.block_rows[strict]])
        self.source = np.concatenate([np.arange(len(keys)), strict])
        self.transposed = np.concatenate([np.zeros(len(keys), dtype=bool), np.ones(len(strict), dtype=bool)])
        full_order = np.lexsort((cols, rows))
        self.source = self.source[full_order]
        self.transposed = self.transposed[full_order]
        self.indices = cols[full_order]
        self.indptr = np.concatenate([[0], np.cumsum(np.bincount(rows, minlength=n_p))])
        logger.info(f"Co-visibility pattern: {len(keys)} upper blocks, {len(self.pair_first)} observation pairs")

    @property
    def n_blocks(self) -> int:
        return len(self.block_rows)

    def to_bsr(self, upper: np.ndarray) -> sp.bsr_matrix:
        """Symmetric BSR matrix from the upper-triangular blocks"""
        data = upper[self.source]
        data[self.transposed] = np.swapaxes(data[self.transposed], 1, 2)
        size = CAMERA_DIM * self.n_cameras
        return sp.bsr_matrix((data, self.indices, self.indptr), shape=(size, size))


@dataclass(eq=False)
class HessianBlocks:
    """Block entries of J^T J and J^T r"""

    h_pp: np.ndarray                # (n_p, 9, 9)
    h_pl: np.ndarray                # (n_r, 9, 3), one per observation
    h_ll: np.ndarray                # (n_l, 3, 3)
    b_p: np.ndarray                 # (n_p, 9)
    b_l: np.ndarray                 # (n_l, 3)
    camera_indices: np.ndarray
    point_indices: np.ndarray
    pattern: CoVisibilityPattern
    h_ll_inverse: Optional[np.ndarray] = None     # damped, set by schur_reduce

    @property
    def n_cameras(self) -> int:
        return self.h_pp.shape[0]

    @property
    def n_points(self) -> int:
        return self.h_ll.shape[0]

    @property
    def dtype(self):
        return self.h_pp.dtype

    def diagonal(self) -> np.ndarray:
        """diag(H), poses then landmarks"""
        return np.concatenate([
            np.diagonal(self.h_pp, axis1=1, axis2=2).ravel(),
            np.diagonal(self.h_ll, axis1=1, axis2=2).ravel(),
        ])

    def gradient(self) -> np.ndarray:
        return np.concatenate([self.b_p.ravel(), self.b_l.ravel()]).astype(np.float64)

    @property
    def memory_bytes(self) -> int:
        return sum(a.nbytes for a in (self.h_pp, self.h_pl, self.h_ll, self.b_p, self.b_l))


@dataclass(eq=False)
class ReducedHessian:
    """Damped reduced camera matrix H_pp - H_pl H_ll^-1 H_lp and its right-hand side"""

    matrix: sp.bsr_matrix
    rhs: np.ndarray
    diagonal_blocks: np.ndarray
    preconditioner: Preconditioner

    def multiply(self, v: np.ndarray) -> np.ndarray:
        return self.matrix @ v

    def precondition(self, r: np.ndarray) -> np.ndarray:
        return self.preconditioner.apply(r)

    def to_dense(self) -> np.ndarray:
        return self.matrix.toarray()

    @property
    def memory_bytes(self) -> int:
        return self.matrix.data.nbytes


def _partial_blocks(jc: np.ndarray, jl: np.ndarray, r: np.ndarray, cams: np.ndarray, pts: np.ndarray,
                    n_cameras: int, n_points: int) -> np.ndarray:
    """One observation chunk's share of (h_pp, h_ll, b_p, b_l), packed into a flat vector"""
    h_pp = np.zeros((n_cameras, CAMERA_DIM, CAMERA_DIM), dtype=jc.dtype)
    h_ll = np.zeros((n_points, POINT_DIM, POINT_DIM), dtype=jc.dtype)
    b_p = np.zeros((n_cameras, CAMERA_DIM), dtype=jc.dtype)
    b_l = np.zeros((n_points, POINT_DIM), dtype=jc.dtype)
    np.add.at(h_pp, cams, np.einsum("nri,nrj->nij", jc, jc))
    np.add.at(h_ll, pts, np.einsum("nri,nrj->nij", jl, jl))
    np.add.at(b_p, cams, np.einsum("nri,nr->ni", jc, r))
    np.add.at(b_l, pts, np.einsum("nri,nr->ni", jl, r))
    return np.concatenate([h_pp.ravel(), h_ll.ravel(), b_p.ravel(), b_l.ravel()])


def assemble_hessian(problem: BaProblem, huber_delta: float, dtype=np.float64,
                     pattern: Optional[CoVisibilityPattern] = None, n_jobs: int = 1,
                     chunk_size: int = ASSEMBLY_CHUNK) -> HessianBlocks:
    """
    Accumulate J^T J and J^T r per block from the robustified Jacobians.

    Jacobians are evaluated in double and cast to `dtype` before the products.
    Observations are split into chunks of `chunk_size`; chunks are accumulated in
    parallel and summed with tree_reduce, so the result depends on chunk_size but
    not on n_jobs.
    """
    lin = evaluate_observations(problem, huber_delta)
    jc = lin.jac_cam.astype(dtype)
    jl = lin.jac_point.astype(dtype)
    r = lin.residuals.astype(dtype)
    cams, pts = problem.camera_indices, problem.point_indices
    n_p, n_l = problem.n_cameras, problem.n_points

    starts = range(0, max(problem.n_observations, 1), chunk_size)
    partials = parallel_map(
        lambda s: _partial_blocks(jc[s:s + chunk_size], jl[s:s + chunk_size], r[s:s + chunk_size],
                                  cams[s:s + chunk_size], pts[s:s + chunk_size], n_p, n_l),
        list(starts), n_jobs,
    )
    flat = tree_reduce(partials)
    sizes = np.cumsum([n_p * CAMERA_DIM * CAMERA_DIM, n_l * POINT_DIM * POINT_DIM, n_p * CAMERA_DIM])
    h_pp, h_ll, b_p, b_l = np.split(flat, sizes)
    h_pl = np.einsum("nri,nrj->nij", jc, jl)
    return HessianBlocks(
        h_pp.reshape(n_p, CAMERA_DIM, CAMERA_DIM), h_pl, h_ll.reshape(n_l, POINT_DIM, POINT_DIM),
        b_p.reshape(n_p, CAMERA_DIM), b_l.reshape(n_l, POINT_DIM), cams, pts, pattern or CoVisibilityPattern(problem),
    )


def scale_hessian(h: HessianBlocks) -> np.ndarray:
    """
    Jacobi scaling s = 1 / (1 + sqrt(diag H)) applied to every block in place.

    Returns:
        (9 n_p + 3 n_l,) scale vector, poses first
    """
    pose_diag = np.diagonal(h.h_pp, axis1=1, axis2=2).astype(np.float64)
    point_diag = np.diagonal(h.h_ll, axis1=1, axis2=2).astype(np.float64)
    s_pose = (1.0 / (1.0 + np.sqrt(pose_diag))).astype(h.dtype)
    s_point = (1.0 / (1.0 + np.sqrt(point_diag))).astype(h.dtype)
    h.h_pp *= s_pose[:, :, None] * s_pose[:, None, :]
    h.h_ll *= s_point[:, :, None] * s_point[:, None, :]
    h.h_pl *= s_pose[h.camera_indices][:, :, None] * s_point[h.point_indices][:, None, :]
    h.b_p *= s_pose
    h.b_l *= s_point
    return np.concatenate([s_pose.ravel(), s_point.ravel()]).astype(np.float64)


def _damped_inverse(h: HessianBlocks, lmbda: float, point_damping_sq: np.ndarray) -> np.ndarray:
    idx = np.arange(POINT_DIM)
    damped = h.h_ll.copy()
    damped[:, idx, idx] += (lmbda * point_damping_sq.reshape(-1, POINT_DIM)).astype(h.dtype)
    try:
        np.linalg.cholesky(damped)
    except np.linalg.LinAlgError:
        for j, block in enumerate(damped):
            try:
                np.linalg.cholesky(block)
            except np.linalg.LinAlgError:
                raise SingularBlockError(j)
    return np.linalg.inv(damped)


def schur_reduce(h: HessianBlocks, lmbda: float, damping_sq: np.ndarray) -> ReducedHessian:
    """
    Damp H with lambda D^2 and eliminate the landmarks.

    The damped H_ll inverse is kept on `h` for back substitution.

    Args:
        h: Assembled (and scaled) Hessian blocks
        lmbda: Damping lambda
        damping_sq: D^2 diagonal, poses then landmarks

    Raises:
        SingularBlockError: a damped H_ll block is not positive definite
    """
    n_pose = CAMERA_DIM * h.n_cameras
    pattern = h.pattern
    h_inv = _damped_inverse(h, lmbda, damping_sq[n_pose:])
    h.h_ll_inverse = h_inv

    # Y_o = H_pl[o] H_ll^-1 for every observation
    Y = np.einsum("nij,njk->nik", h.h_pl, h_inv[h.point_indices])

    upper = np.zeros((pattern.n_blocks, CAMERA_DIM, CAMERA_DIM), dtype=h.dtype)
    idx = np.arange(CAMERA_DIM)
    diag = h.h_pp.copy()
    diag[:, idx, idx] += (lmbda * damping_sq[:n_pose].reshape(-1, CAMERA_DIM)).astype(h.dtype)
    upper[pattern.diagonal] = diag
    for start in range(0, len(pattern.pair_block), PAIR_CHUNK):
        stop = start + PAIR_CHUNK
        a = pattern.pair_first[start:stop]
        b = pattern.pair_second[start:stop]
        blocks = pattern.pair_block[start:stop]
        contrib = np.einsum("nik,njk->nij", Y[a], h.h_pl[b])
        heads = np.concatenate([[0], np.flatnonzero(np.diff(blocks)) + 1])
        upper[blocks[heads]] -= np.add.reduceat(contrib, heads, axis=0)

    rhs = h.b_p.copy()
    np.add.at(rhs, h.camera_indices, -np.einsum("nik,nk->ni", Y, h.b_l[h.point_indices]))

    diagonal_blocks = upper[pattern.diagonal]
    return ReducedHessian(
        matrix=pattern.to_bsr(upper),
        rhs=rhs.ravel(),
        diagonal_blocks=diagonal_blocks,
        preconditioner=invert_diagonal_blocks(diagonal_blocks),
    )


def sc_back_substitute(h: HessianBlocks, delta_xp: np.ndarray) -> np.ndarray:
    """dx_l = -H_ll^-1 (b_l + H_lp dx_p), with the damped inverse of the last reduction"""
    if h.h_ll_inverse is None:
        raise ValueError("schur_reduce must run before back substitution")
    dxp = np.asarray(delta_xp, dtype=h.dtype).reshape(-1, CAMERA_DIM)
    coupled = h.b_l.copy()
    np.add.at(coupled, h.point_indices, np.einsum("nij,ni->nj", h.h_pl, dxp[h.camera_indices]))
    return -np.einsum("nij,nj->ni", h.h_ll_inverse, coupled).ravel()


def detect_indefinite(reduced: ReducedHessian, seed: int = 0, max_iters: int = 50) -> bool:
    """
    True when the reduced matrix shows negative curvature: a diagonal block
    fails Cholesky, or PCG trial solves (on the right-hand side and on a random
    vector) meet a direction with p^T H p <= 0.
    """
    if reduced.preconditioner.indefinite:
        return True
    rng = np.random.default_rng(seed)
    trials: List[np.ndarray] = [reduced.rhs, rng.standard_normal(reduced.rhs.shape).astype(reduced.rhs.dtype)]
    for rhs in trials:
        if not np.any(rhs):
            continue
        _, stats = solve_pcg(reduced, rhs, 1e-12, max_iters)
        if stats.termination_reason == CgTermination.INDEFINITE:
            return True
    return False


class ExplicitScBackend(ProblemBackend):
    """LM backend over the explicit Schur complement; the reduction is redone for every damping value"""

    def __init__(self, problem: BaProblem, config: SolverConfig, tracker: Optional[MemoryTracker] = None):
        super().__init__(problem, config, tracker)
        self.pattern = CoVisibilityPattern(problem)
        self.hessian: Optional[HessianBlocks] = None
        self.scaling: Optional[np.ndarray] = None
        self.gradient: Optional[np.ndarray] = None
        self.damping_sq: Optional[np.ndarray] = None

    def linearize(self) -> LinearizationInfo:
        cfg = self.config
        self.hessian = assemble_hessian(self.problem, cfg.huber_delta, cfg.dtype, self.pattern, cfg.thread_count)
        self.scaling = scale_hessian(self.hessian)
        self.gradient = self.hessian.gradient()
        self.damping_sq = damping_diagonal(self.hessian.diagonal().astype(np.float64),
                                           cfg.min_diagonal, cfg.max_diagonal)
        self.tracker.allocate("hessian_blocks", self.hessian.memory_bytes)
        return LinearizationInfo(
            gradient_norm=float(np.linalg.norm(self.gradient)),
            gradient_max_norm=float(np.max(np.abs(self.gradient / self.scaling))),
        )

    def solve(self, lmbda: float, forcing_tolerance: float) -> StepProposal:
        try:
            reduced = schur_reduce(self.hessian, lmbda, self.damping_sq)
        except SingularBlockError as e:
            logger.warning(str(e))
            return StepProposal(np.zeros_like(self.scaling), 0.0, indefinite=True)
        self.tracker.allocate("reduced_camera_matrix", reduced.memory_bytes)
        if reduced.preconditioner.indefinite:
            return StepProposal(np.zeros_like(self.scaling), 0.0, indefinite=True)

        delta_p, stats = solve_pcg(reduced, reduced.rhs, forcing_tolerance, self.config.cg_max_iterations)
        if stats.termination_reason == CgTermination.INDEFINITE:
            return StepProposal(np.zeros_like(self.scaling), 0.0, stats, indefinite=True)
        delta_l = sc_back_substitute(self.hessian, delta_p)
        scaled = np.concatenate([delta_p, delta_l]).astype(np.float64)
        model = self.model_decrease(scaled, self.gradient, lmbda, self.damping_sq)
        return StepProposal(scaled * self.scaling, model, stats)

    def release(self):
        self.tracker.release("hessian_blocks")
        self.tracker.release("reduced_camera_matrix")
