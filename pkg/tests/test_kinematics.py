import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from posescene import kinematics as kin
from posescene.errors import DataError, DegenerateRotationError


def rotations(seed: int, n: int):
    rng = np.random.default_rng(seed)
    return [kin.random_rotation(rng) for _ in range(n)]


def test_rot6d_identity_columns():
    R = kin.rot6d_to_matrix([1, 0, 0, 0, 1, 0])
    assert np.allclose(R, np.eye(3))


def test_rot6d_z_rotation():
    R = kin.rot6d_to_matrix([0, 1, 0, -1, 0, 0])
    expected = kin.axis_angle_to_matrix([0, 0, np.pi / 2])
    assert np.allclose(R, expected)


def test_rot6d_gram_schmidt_normalizes_scale():
    R = kin.rot6d_to_matrix([2, 0, 0, 0, 3, 0])
    assert np.allclose(R, np.eye(3))


def test_rot6d_degenerate_inputs():
    with pytest.raises(DegenerateRotationError):
        kin.rot6d_to_matrix([0, 0, 0, 0, 1, 0])
    with pytest.raises(DegenerateRotationError):
        kin.rot6d_to_matrix([1, 0, 0, 2, 0, 0])


def test_rot6d_round_trip_thousand():
    for R in rotations(0, 1000):
        back = kin.rot6d_to_matrix(kin.matrix_to_rot6d(R))
        assert np.abs(back - R).max() < 1e-9


def test_gram_schmidt_invariances():
    rng = np.random.default_rng(1)
    for R in rotations(2, 50):
        r6 = kin.matrix_to_rot6d(R)
        scale = rng.uniform(0.1, 5.0)
        shear = rng.uniform(-2.0, 2.0)
        perturbed = r6.copy()
        perturbed[:3] *= scale
        perturbed[3:] += shear * perturbed[:3] / scale
        assert np.abs(kin.rot6d_to_matrix(perturbed) - R).max() < 1e-9


def test_axis_angle_z90_rodrigues():
    R = kin.axis_angle_to_matrix([0, 0, np.pi / 2])
    assert np.allclose(R, [[0, -1, 0], [1, 0, 0], [0, 0, 1]], atol=1e-12)


def test_identity_matrix_to_axis_angle():
    assert np.allclose(kin.matrix_to_axis_angle(np.eye(3)), np.zeros(3))


def test_axis_angle_round_trips():
    for R in rotations(3, 300):
        aa = kin.matrix_to_axis_angle(R)
        assert np.linalg.norm(aa) <= np.pi + 1e-9
        back = kin.axis_angle_to_matrix(aa)
        assert kin.geodesic_distance(back, R) < 1e-7


def test_axis_angle_near_pi():
    for axis in ([1.0, 0, 0], [0, 1.0, 0], [0.6, -0.8, 0]):
        axis = np.asarray(axis) / np.linalg.norm(axis)
        R = kin.axis_angle_to_matrix(axis * (np.pi - 1e-9))
        aa = kin.matrix_to_axis_angle(R)
        # axis sign is ambiguous at pi
        assert min(np.linalg.norm(aa - axis * np.pi),
                   np.linalg.norm(aa + axis * np.pi)) < 1e-5


def test_non_orthonormal_rejected():
    with pytest.raises(DataError):
        kin.matrix_to_axis_angle(np.eye(3) * 1.5)
    with pytest.raises(DataError):
        kin.geodesic_distance(np.eye(3), np.full((3, 3), 0.5))


def test_canonicalize_wraps_angle():
    aa = kin.canonicalize_axis_angle([0, 0, 3 * np.pi / 2])
    assert np.allclose(aa, [0, 0, -np.pi / 2])
    assert np.allclose(kin.canonicalize_axis_angle([0, 0, 0.5]), [0, 0, 0.5])


def test_geodesic_self_zero():
    for R in rotations(4, 20):
        assert kin.geodesic_distance(R, R) < 1e-6


def test_geodesic_half_turn():
    Rz_pi = kin.axis_angle_to_matrix([0, 0, np.pi])
    assert np.isclose(kin.geodesic_distance(np.eye(3), Rz_pi), np.pi)


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=30, deadline=None)
def test_geodesic_symmetry(seed):
    rng = np.random.default_rng(seed)
    R1, R2 = kin.random_rotation(rng), kin.random_rotation(rng)
    assert np.isclose(kin.geodesic_distance(R1, R2), kin.geodesic_distance(R2, R1))


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=30, deadline=None)
def test_quat_matrix_round_trip(seed):
    rng = np.random.default_rng(seed)
    R = kin.random_rotation(rng)
    back = kin.quat_to_matrix(kin.matrix_to_quat(R))
    assert np.abs(back - R).max() < 1e-9


def test_batched_rodrigues_matches_scalar():
    rng = np.random.default_rng(5)
    aa = rng.normal(0, 1.0, size=(40, 3))
    aa[0] = 0.0
    batch = kin.axis_angles_to_matrices(aa)
    for i in range(len(aa)):
        assert np.abs(batch[i] - kin.axis_angle_to_matrix(aa[i])).max() < 1e-12


def test_relative_angles_matches_geodesic():
    Rs = np.stack(rotations(6, 10))
    Qs = np.stack(rotations(7, 10))
    angles = kin.relative_angles(Rs, Qs)
    for i in range(10):
        assert np.isclose(angles[i], kin.geodesic_distance(Rs[i], Qs[i]))


# -- forward kinematics -------------------------------------------------------


def chain(offsets):
    J = len(offsets)
    return kin.Skeleton(
        names=[f"j{i}" for i in range(J)],
        parents=np.arange(-1, J - 1),
        offsets=np.asarray(offsets, dtype=float),
    )


def test_fk_identity_sums_offsets():
    skel = chain([[0, 0, 0], [1, 0, 0], [0, 2, 0], [0, 0, 3]])
    states = kin.forward_kinematics(skel, kin.Pose.identity(3))
    assert np.allclose(states.positions[-1], [1, 2, 3])
    assert np.allclose(states.orientations, np.eye(3))


def test_fk_two_bone_elbow():
    L1, L2 = 0.7, 0.4
    skel = chain([[0, 0, 0], [L1, 0, 0], [L2, 0, 0]])
    pose = kin.Pose(np.array([[0, 0, np.pi / 2], [0, 0, 0]]), np.zeros(3))
    states = kin.forward_kinematics(skel, pose)
    assert np.allclose(states.positions[1], [L1, 0, 0])
    assert np.allclose(states.positions[2], [L1, L2, 0])


def test_fk_offsets_scale_linearly():
    skel = kin.default_skeleton()
    rng = np.random.default_rng(8)
    pose = kin.Pose(rng.normal(0, 0.4, (21, 3)), rng.normal(0, 0.2, 3))
    states = kin.forward_kinematics(skel, pose)
    doubled = kin.Skeleton(skel.names, skel.parents, skel.offsets * 2.0)
    states2 = kin.forward_kinematics(doubled, pose)
    assert np.allclose(states2.positions, states.positions * 2.0)
    assert np.allclose(states2.orientations, states.orientations)


def test_fk_root_equivariance():
    skel = kin.default_skeleton()
    rng = np.random.default_rng(9)
    body = rng.normal(0, 0.3, (21, 3))
    root = np.array([0.2, 0.5, -0.1])
    pre = kin.axis_angle_to_matrix([0.4, -0.2, 0.7])
    base = kin.forward_kinematics(skel, kin.Pose(body, root))
    rotated_root = kin.matrix_to_axis_angle(pre @ kin.axis_angle_to_matrix(root))
    turned = kin.forward_kinematics(skel, kin.Pose(body, rotated_root))
    assert np.allclose(turned.positions, base.positions @ pre.T, atol=1e-9)
    assert np.allclose(turned.orientations, pre @ base.orientations, atol=1e-9)


def test_fk_joint_count_mismatch():
    skel = kin.default_skeleton()
    with pytest.raises(DataError):
        kin.forward_kinematics(skel, kin.Pose.identity(5))


def test_default_skeleton_shape():
    skel = kin.default_skeleton()
    assert skel.joint_count == 22
    assert skel.parents[0] == -1
    assert (skel.parents[1:] < np.arange(1, 22)).all()
    assert 1.0 < skel.height() < 2.5


def test_skeleton_file_round_trip(tmp_path):
    skel = kin.default_skeleton()
    path = tmp_path / "skel.txt"
    kin.save_skeleton(path, skel)
    loaded = kin.load_skeleton(path)
    assert loaded.names == skel.names
    assert np.array_equal(loaded.parents, skel.parents)
    assert np.allclose(loaded.offsets, skel.offsets)


def test_skeleton_file_rejects_malformed(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("0 -1 root 0 0\n")
    with pytest.raises(DataError):
        kin.load_skeleton(path)


def test_skeleton_parent_order_enforced():
    with pytest.raises(DataError):
        kin.Skeleton(["a", "b"], np.array([1, -1]), np.zeros((2, 3)))
