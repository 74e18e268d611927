"""Pose transfer between skeletons of different proportions.

The solver searches local joint rotations (six-number parameterization) of
the target skeleton so its world joint positions and orientations match a
source pose. Position residuals are height-normalized per skeleton, so a
uniformly scaled clone of the source is matched exactly by copying the
source rotations. Descent is plain gradient descent with Armijo
backtracking; gradients come from the autodiff tape.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nncore as nn
from .errors import DataError, NumericError
from .kinematics import (
    JointStates,
    Pose,
    Skeleton,
    axis_angle_to_rot6d,
    matrix_to_axis_angle,
    rot6d_to_matrix,
)


@dataclass
class RetargetProblem:
    source: JointStates
    target: Skeleton
    correspondence: np.ndarray | None = None  # target joint -> source joint
    w_pos: float = 1.0
    w_rot: float = 0.5
    max_iters: int = 1000
    tol: float = 1e-6
    source_height: float | None = None  # defaults to the target height

    def __post_init__(self):
        J = self.target.joint_count
        if self.correspondence is None:
            self.correspondence = np.arange(J)
        self.correspondence = np.asarray(self.correspondence, dtype=np.int64)
        if self.correspondence.shape != (J,):
            raise DataError("correspondence must map every target joint")
        if self.w_pos < 0 or self.w_rot < 0 or (self.w_pos == 0 and self.w_rot == 0):
            raise DataError("weights must be >= 0 and not both zero")


@dataclass
class RetargetResult:
    pose: Pose
    objective: float
    iterations: int
    converged: bool
    initial_objective: float = 0.0
    trace: list = None  # objective value after each accepted step


# -- differentiable objective --------------------------------------------------


def _gram_schmidt_t(r6: nn.Tensor) -> nn.Tensor:
    """[J, 6] six-number params -> [J, 3, 3] rotation matrices, on the tape."""
    a1 = r6[:, 0:3]
    a2 = r6[:, 3:6]
    b1 = a1 / _norm(a1)
    proj = (b1 * a2).sum(axis=1, keepdims=True)
    r = a2 - proj * b1
    b2 = r / _norm(r)
    b3 = _cross_rows(b1, b2)
    J = r6.shape[0]
    cols = [b.reshape((J, 3, 1)) for b in (b1, b2, b3)]
    return nn.concat(cols, axis=2)


def _norm(x: nn.Tensor) -> nn.Tensor:
    return nn.tsqrt((x * x).sum(axis=1, keepdims=True) + 1e-12)


def _cross_rows(a: nn.Tensor, b: nn.Tensor) -> nn.Tensor:
    ax, ay, az = a[:, 0], a[:, 1], a[:, 2]
    bx, by, bz = b[:, 0], b[:, 1], b[:, 2]
    parts = [
        (ay * bz - az * by),
        (az * bx - ax * bz),
        (ax * by - ay * bx),
    ]
    return nn.concat([p.reshape((a.shape[0], 1)) for p in parts], axis=1)


def _fk_tensors(skel: Skeleton, locals_t: nn.Tensor):
    """FK where locals_t is [J, 3, 3] on the tape; returns per-joint position
    and orientation tensor lists."""
    J = skel.joint_count
    orient = [None] * J
    pos = [None] * J
    orient[0] = locals_t[0]
    pos[0] = nn.Tensor(np.zeros((3, 1)))
    for j in range(1, J):
        p = skel.parents[j]
        offset = nn.Tensor(skel.offsets[j].reshape(3, 1))
        pos[j] = pos[p] + nn.matmul(orient[p], offset)
        orient[j] = nn.matmul(orient[p], locals_t[j])
    return pos, orient


def _geo_sq_from_relative(rel: nn.Tensor) -> nn.Tensor:
    """Squared geodesic angle from a relative rotation matrix, smooth at 0."""
    tr = rel[0, 0] + rel[1, 1] + rel[2, 2]
    x = (tr - 1.0) * 0.5
    return _acos_sq(x)


def _acos_sq(x: nn.Tensor) -> nn.Tensor:
    """arccos(clip(x))^2 with a finite gradient at x -> 1 and bounded at -1."""
    data = np.clip(x.data, -1.0 + 1e-12, 1.0)
    theta = np.arccos(data)
    out = theta * theta
    sin_theta = np.sqrt(np.maximum(1.0 - data * data, 1e-14))
    # d(theta^2)/dx = -2 theta / sin(theta); series limit -2 as theta -> 0
    grad = np.where(theta < 1e-6, -2.0, -2.0 * theta / sin_theta)

    def back(g):
        return (g * grad,)

    t = nn.Tensor(out)
    if x.requires_grad:
        t.requires_grad = True
        t._parents = (x,)
        t._backward = back
    return t


def objective_tensor(problem: RetargetProblem, params6d: nn.Tensor) -> nn.Tensor:
    """Height-normalized position error plus squared geodesic orientation
    error, summed over corresponding joints."""
    skel = problem.target
    h_t = skel.height()
    h_s = problem.source_height if problem.source_height is not None else h_t
    locals_t = _gram_schmidt_t(params6d)
    pos, orient = _fk_tensors(skel, locals_t)
    total = nn.Tensor(0.0)
    for j in range(skel.joint_count):
        src = problem.correspondence[j]
        if problem.w_pos > 0:
            target_pos = nn.Tensor(problem.source.positions[src].reshape(3, 1) / h_s)
            d = pos[j] * (1.0 / h_t) - target_pos
            total = total + problem.w_pos * (d * d).sum()
        if problem.w_rot > 0:
            src_R = nn.Tensor(problem.source.orientations[src].T)
            rel = nn.matmul(src_R, orient[j])
            total = total + problem.w_rot * _geo_sq_from_relative(rel)
    return total


def pose_to_params(pose: Pose) -> np.ndarray:
    """[J, 6] parameter block: root first, then body joints."""
    rows = [axis_angle_to_rot6d(pose.root)]
    rows += [axis_angle_to_rot6d(a) for a in pose.body]
    return np.stack(rows)


def params_to_pose(params: np.ndarray) -> Pose:
    mats = [rot6d_to_matrix(row) for row in params]
    root = matrix_to_axis_angle(mats[0])
    body = np.stack([matrix_to_axis_angle(m) for m in mats[1:]])
    return Pose(body, root)


def objective(problem: RetargetProblem, candidate: Pose) -> float:
    if candidate.body.shape[0] != problem.target.joint_count - 1:
        raise DataError("candidate pose does not match the target skeleton")
    return float(objective_tensor(problem, nn.Tensor(pose_to_params(candidate))).data)


def objective_and_grad(problem: RetargetProblem,
                       params: np.ndarray) -> tuple[float, np.ndarray]:
    t = nn.Tensor(params.copy(), requires_grad=True)
    val = objective_tensor(problem, t)
    val.backward()
    grad = t.grad if t.grad is not None else np.zeros_like(params)
    return float(val.data), grad


def _reproject(params: np.ndarray) -> np.ndarray:
    """Snap each six-number row back to canonical (orthonormal-column) form.

    The objective reads rotations through Gram-Schmidt, so this leaves its
    value unchanged up to rounding while removing gauge drift in the raw
    columns that would otherwise degrade descent conditioning.
    """
    return np.stack([matrix_to_rot6d(rot6d_to_matrix(row)) for row in params])


def solve(problem: RetargetProblem, init: Pose) -> RetargetResult:
    """Gradient descent with Armijo backtracking on the six-number rotation
    parameters; the trial step starts from the Barzilai-Borwein estimate of
    the previous accepted move, and parameters are re-canonicalized after
    every step."""
    params = pose_to_params(init)
    value, grad = objective_and_grad(problem, params)
    if not np.isfinite(value):
        raise NumericError(f"non-finite objective at the initial point ({value})")
    initial_value = value
    trace = [value]
    step = 1.0
    converged = float(np.linalg.norm(grad)) < problem.tol
    iters = 0
    prev_params = None
    prev_grad = None
    while not converged and iters < problem.max_iters:
        iters += 1
        if prev_grad is not None:
            dp = params - prev_params
            dg = grad - prev_grad
            dgdg = float((dg * dg).sum())
            if dgdg > 1e-300:
                step = float(np.clip(abs((dp * dg).sum()) / dgdg, 1e-12, 1e6))
        gn2 = float((grad * grad).sum())
        accepted = False
        trial_step = step
        for _ in range(60):
            trial = params - trial_step * grad
            trial_value = float(objective_tensor(problem, nn.Tensor(trial)).data)
            if np.isfinite(trial_value) and trial_value <= value - 1e-4 * trial_step * gn2:
                accepted = True
                break
            trial_step *= 0.5
        if not accepted:
            break
        prev_params, prev_grad = params, grad
        params = _reproject(trial)
        value, grad = objective_and_grad(problem, params)
        trace.append(value)
        if not np.isfinite(value):
            raise NumericError("objective became non-finite during descent")
        if float(np.linalg.norm(grad)) < problem.tol:
            converged = True
    return RetargetResult(
        pose=params_to_pose(params),
        objective=value,
        iterations=iters,
        converged=converged,
        initial_objective=initial_value,
        trace=trace,
    )
