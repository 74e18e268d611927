"""Rotation representations, conversions, and forward kinematics.

Rotations are exchanged in four forms: axis-angle (3 floats, axis scaled by
angle), rotation matrix, unit quaternion (w, x, y, z), and the continuous
six-number form holding the first two matrix columns. All functions are pure.
"""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources

import numpy as np

from .errors import DataError, DegenerateRotationError

DEGENERACY_EPS = 1e-8
ORTHONORMAL_TOL = 1e-6


# -- six-number continuous form ------------------------------------------


def rot6d_to_matrix(r6) -> np.ndarray:
    """Gram-Schmidt the two stored columns into a proper rotation matrix."""
    r6 = np.asarray(r6, dtype=np.float64)
    if r6.shape != (6,):
        raise DataError(f"expected 6 values, got shape {r6.shape}")
    a1, a2 = r6[:3], r6[3:]
    n1 = np.linalg.norm(a1)
    if n1 < DEGENERACY_EPS:
        raise DegenerateRotationError("first column is numerically zero")
    b1 = a1 / n1
    residual = a2 - np.dot(b1, a2) * b1
    n2 = np.linalg.norm(residual)
    if n2 < DEGENERACY_EPS:
        raise DegenerateRotationError("columns are numerically parallel")
    b2 = residual / n2
    b3 = np.cross(b1, b2)
    return np.stack([b1, b2, b3], axis=1)


def matrix_to_rot6d(R) -> np.ndarray:
    R = _check_rotation(R)
    return np.concatenate([R[:, 0], R[:, 1]])


def rot6d_validity(r6) -> float:
    """How far the raw columns are from forming a rotation: ||M^T M - I||_F^2
    with M = [a1, a2, a1 x a2]. Zero iff the columns are orthonormal."""
    r6 = np.asarray(r6, dtype=np.float64)
    a1, a2 = r6[:3], r6[3:]
    M = np.stack([a1, a2, np.cross(a1, a2)], axis=1)
    gram = M.T @ M - np.eye(3)
    return float(np.sum(gram * gram))


# -- axis-angle -----------------------------------------------------------


def axis_angle_to_matrix(aa) -> np.ndarray:
    aa = np.asarray(aa, dtype=np.float64)
    theta = np.linalg.norm(aa)
    K = np.array(
        [[0.0, -aa[2], aa[1]], [aa[2], 0.0, -aa[0]], [-aa[1], aa[0], 0.0]]
    )
    if theta < 1e-8:
        # second-order series keeps the round-trip exact near zero
        return np.eye(3) + K + 0.5 * (K @ K)
    s = np.sin(theta) / theta
    c = (1.0 - np.cos(theta)) / (theta * theta)
    return np.eye(3) + s * K + c * (K @ K)


def matrix_to_axis_angle(R) -> np.ndarray:
    R = _check_rotation(R)
    cos_theta = np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)
    theta = np.arccos(cos_theta)
    if theta < 1e-8:
        return np.zeros(3)
    if np.pi - theta < 1e-6:
        # near 180 degrees the off-diagonal formula degenerates; recover the
        # axis from the dominant diagonal of (R + I) / 2
        A = (R + np.eye(3)) / 2.0
        i = int(np.argmax(np.diag(A)))
        axis = np.empty(3)
        axis[i] = np.sqrt(max(A[i, i], 0.0))
        for j in range(3):
            if j != i:
                axis[j] = A[i, j] / axis[i]
        axis /= np.linalg.norm(axis)
        return axis * theta
    axis = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    axis /= 2.0 * np.sin(theta)
    return axis * theta


def canonicalize_axis_angle(aa) -> np.ndarray:
    """Wrap the encoded angle into [0, pi], flipping the axis if needed."""
    aa = np.asarray(aa, dtype=np.float64)
    theta = np.linalg.norm(aa)
    if theta < 1e-12:
        return np.zeros(3)
    axis = aa / theta
    wrapped = np.fmod(theta, 2.0 * np.pi)
    if wrapped > np.pi:
        return -axis * (2.0 * np.pi - wrapped)
    return axis * wrapped


def axis_angle_to_rot6d(aa) -> np.ndarray:
    return matrix_to_rot6d(axis_angle_to_matrix(aa))


def rot6d_to_axis_angle(r6) -> np.ndarray:
    return matrix_to_axis_angle(rot6d_to_matrix(r6))


# -- quaternions ------------------------------------------------------------


def quat_to_matrix(q) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    q = q / np.linalg.norm(q)
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def matrix_to_quat(R) -> np.ndarray:
    R = _check_rotation(R)
    tr = np.trace(R)
    if tr > 0:
        s = np.sqrt(tr + 1.0) * 2.0
        q = np.array(
            [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s,
             (R[1, 0] - R[0, 1]) / s]
        )
    else:
        i = int(np.argmax(np.diag(R)))
        j, k = (i + 1) % 3, (i + 2) % 3
        s = np.sqrt(max(R[i, i] - R[j, j] - R[k, k] + 1.0, 0.0)) * 2.0
        q = np.empty(4)
        q[0] = (R[k, j] - R[j, k]) / s
        q[1 + i] = 0.25 * s
        q[1 + j] = (R[j, i] + R[i, j]) / s
        q[1 + k] = (R[k, i] + R[i, k]) / s
    return q / np.linalg.norm(q)


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniform random rotation matrix via a normalized Gaussian quaternion."""
    q = rng.standard_normal(4)
    return quat_to_matrix(q)


# -- distances ----------------------------------------------------------------


def geodesic_distance(R1, R2) -> float:
    R1 = _check_rotation(R1)
    R2 = _check_rotation(R2)
    cos_theta = np.clip((np.trace(R1.T @ R2) - 1.0) / 2.0, -1.0, 1.0)
    return float(np.arccos(cos_theta))


def _check_rotation(R) -> np.ndarray:
    R = np.asarray(R, dtype=np.float64)
    if R.shape != (3, 3):
        raise DataError(f"expected 3x3 matrix, got shape {R.shape}")
    err = np.abs(R.T @ R - np.eye(3)).max()
    if err > ORTHONORMAL_TOL or np.linalg.det(R) < 0.0:
        raise DataError(f"matrix is not a rotation (orthonormality error {err:.2e})")
    return R


# -- batched helpers (hot paths in scoring and datagen) -----------------------


def axis_angles_to_matrices(aa: np.ndarray) -> np.ndarray:
    """Vectorized Rodrigues over [..., 3] axis-angles."""
    aa = np.asarray(aa, dtype=np.float64)
    theta = np.linalg.norm(aa, axis=-1)
    ax, ay, az = aa[..., 0], aa[..., 1], aa[..., 2]
    zero = np.zeros_like(ax)
    K = np.stack(
        [
            np.stack([zero, -az, ay], axis=-1),
            np.stack([az, zero, -ax], axis=-1),
            np.stack([-ay, ax, zero], axis=-1),
        ],
        axis=-2,
    )
    # coefficients on the unnormalized generator: sin(t)/t and (1-cos t)/t^2
    s = np.sinc(theta / np.pi)
    small = theta < 1e-8
    denom = np.where(small, 1.0, theta) ** 2
    c = np.where(small, 0.5, (1.0 - np.cos(theta)) / denom)
    eye = np.broadcast_to(np.eye(3), K.shape)
    return eye + s[..., None, None] * K + c[..., None, None] * (K @ K)


def relative_angles(Ra: np.ndarray, Rb: np.ndarray) -> np.ndarray:
    """Geodesic angle between stacks of rotation matrices [..., 3, 3]."""
    tr = np.einsum("...ij,...ij->...", Ra, Rb)
    return np.arccos(np.clip((tr - 1.0) / 2.0, -1.0, 1.0))


# -- skeleton and poses --------------------------------------------------------

BODY_JOINTS = 21


@dataclass
class Skeleton:
    names: list[str]
    parents: np.ndarray  # int, parent precedes child, root has -1
    offsets: np.ndarray  # [J, 3] meters, parent-local

    def __post_init__(self):
        self.parents = np.asarray(self.parents, dtype=np.int64)
        self.offsets = np.asarray(self.offsets, dtype=np.float64)
        J = len(self.names)
        if self.parents.shape != (J,) or self.offsets.shape != (J, 3):
            raise DataError("skeleton field shapes disagree")
        roots = np.flatnonzero(self.parents < 0)
        if len(roots) != 1 or roots[0] != 0:
            raise DataError("skeleton must have exactly one root at index 0")
        for j in range(1, J):
            if not 0 <= self.parents[j] < j:
                raise DataError(f"parent of joint {j} must precede it")

    @property
    def joint_count(self) -> int:
        return len(self.names)

    def height(self) -> float:
        """Max pairwise joint distance in the rest pose."""
        rest = forward_kinematics(self, Pose.identity(self.joint_count - 1))
        p = rest.positions
        diff = p[:, None, :] - p[None, :, :]
        return float(np.sqrt((diff * diff).sum(-1)).max())


@dataclass
class Pose:
    """Local joint rotations: per-body-joint axis-angle plus root axis-angle."""

    body: np.ndarray  # [J-1, 3]
    root: np.ndarray  # [3]

    def __post_init__(self):
        self.body = np.asarray(self.body, dtype=np.float64)
        self.root = np.asarray(self.root, dtype=np.float64)
        if self.body.ndim != 2 or self.body.shape[1] != 3 or self.root.shape != (3,):
            raise DataError("pose field shapes disagree")

    @classmethod
    def identity(cls, body_joints: int = BODY_JOINTS) -> "Pose":
        return cls(np.zeros((body_joints, 3)), np.zeros(3))

    def canonical(self) -> "Pose":
        body = np.stack([canonicalize_axis_angle(a) for a in self.body])
        return Pose(body, canonicalize_axis_angle(self.root))

    def body_rot6d(self) -> np.ndarray:
        """[J-1, 6] continuous representation of the body rotations."""
        return np.stack([axis_angle_to_rot6d(a) for a in self.body])

    def root_rot6d(self) -> np.ndarray:
        return axis_angle_to_rot6d(self.root)


@dataclass
class JointStates:
    positions: np.ndarray  # [J, 3] world
    orientations: np.ndarray  # [J, 3, 3] world


def forward_kinematics(skel: Skeleton, pose: Pose,
                       root_translation=(0.0, 0.0, 0.0)) -> JointStates:
    J = skel.joint_count
    if pose.body.shape[0] != J - 1:
        raise DataError(
            f"pose has {pose.body.shape[0]} body joints, skeleton expects {J - 1}"
        )
    locals_ = np.empty((J, 3, 3))
    locals_[0] = axis_angle_to_matrix(pose.root)
    for j in range(1, J):
        locals_[j] = axis_angle_to_matrix(pose.body[j - 1])
    pos = np.empty((J, 3))
    orient = np.empty((J, 3, 3))
    pos[0] = np.asarray(root_translation, dtype=np.float64)
    orient[0] = locals_[0]
    for j in range(1, J):
        p = skel.parents[j]
        pos[j] = pos[p] + orient[p] @ skel.offsets[j]
        orient[j] = orient[p] @ locals_[j]
    return JointStates(pos, orient)


# -- skeleton file io -----------------------------------------------------------


def load_skeleton_text(text: str) -> Skeleton:
    rows = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 6:
            raise DataError(f"skeleton line {lineno}: expected 6 fields")
        try:
            idx = int(parts[0])
            parent = int(parts[1])
            offset = [float(v) for v in parts[3:6]]
        except ValueError as e:
            raise DataError(f"skeleton line {lineno}: {e}") from None
        rows.append((idx, parent, parts[2], offset))
    rows.sort(key=lambda r: r[0])
    if [r[0] for r in rows] != list(range(len(rows))):
        raise DataError("skeleton joint indices must be 0..J-1 without gaps")
    return Skeleton(
        names=[r[2] for r in rows],
        parents=np.array([r[1] for r in rows]),
        offsets=np.array([r[3] for r in rows]),
    )


def load_skeleton(path) -> Skeleton:
    with open(path, "r", encoding="utf-8") as fh:
        return load_skeleton_text(fh.read())


def save_skeleton(path, skel: Skeleton) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# index parent name ox oy oz\n")
        for j in range(skel.joint_count):
            ox, oy, oz = skel.offsets[j]
            fh.write(f"{j} {skel.parents[j]} {skel.names[j]} {ox:.9g} {oy:.9g} {oz:.9g}\n")


def default_skeleton() -> Skeleton:
    text = resources.files("posescene").joinpath("data/skeleton_default.txt").read_text()
    return load_skeleton_text(text)
