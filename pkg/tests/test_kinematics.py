import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ringtrack.kinematics import (
    InvalidRangeError,
    JointLimitError,
    RingSpec,
    RobotModel,
    Transform,
    all_lidar_poses,
    forward_kinematics,
    lidar_pose,
    link_segments,
    observation_to_world,
    ring_local_frames,
    rot_z,
)

FREE = dict(joint_low=[-math.pi] * 6, joint_high=[math.pi] * 6)


def model_from_rows(rows, base_z=0.0):
    return RobotModel(np.array(rows, dtype=float), base_in_world=Transform(np.eye(3), [0, 0, base_z]), **FREE)


def random_q(model, rng):
    return rng.uniform(model.joint_low, model.joint_high)


def random_rotation(rng):
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] *= -1
    return q


angles6 = st.lists(st.floats(-math.pi, math.pi), min_size=6, max_size=6)


# --- Transform ------------------------------------------------------------------

def test_compose_with_identity_is_exact():
    rng = np.random.default_rng(0)
    t = Transform(random_rotation(rng), rng.normal(size=3))
    for c in (t @ Transform.identity(), Transform.identity() @ t):
        assert np.allclose(c.matrix(), t.matrix(), atol=1e-12, rtol=0)


def test_composition_is_associative():
    rng = np.random.default_rng(1)
    a, b, c = (Transform(random_rotation(rng), rng.normal(size=3)) for _ in range(3))
    assert np.allclose(((a @ b) @ c).matrix(), (a @ (b @ c)).matrix(), atol=1e-12)


def test_inverse_and_rigidity():
    rng = np.random.default_rng(2)
    t = Transform(random_rotation(rng), rng.normal(size=3))
    assert t.is_rigid()
    assert np.allclose((t @ t.inverse()).matrix(), np.eye(4), atol=1e-12)
    assert not Transform(np.diag([1.0, 1.0, -1.0])).is_rigid()


# --- forward kinematics -----------------------------------------------------------

def test_pure_prismatic_offset():
    rows = np.zeros((6, 4))
    rows[0, 2] = 0.1
    links = forward_kinematics(model_from_rows(rows), np.zeros(6))
    assert np.allclose(links[0].translation, [0, 0, 0.1], atol=1e-15)


def test_identity_chain_gives_base_everywhere():
    model = model_from_rows(np.zeros((6, 4)), base_z=0.3)
    for t in forward_kinematics(model, np.zeros(6)):
        assert np.allclose(t.matrix(), model.base_in_world.matrix(), atol=1e-15)


def test_single_revolute_joint_hand_evaluated():
    rows = np.zeros((6, 4))
    rows[0, 0] = 0.5
    q = np.array([math.pi / 2, 0, 0, 0, 0, 0])
    link1 = forward_kinematics(model_from_rows(rows), q)[0]
    # Rz(pi/2) Tx(0.5): origin at (0, 0.5, 0), x axis along world +y.
    assert np.allclose(link1.translation, [0.0, 0.5, 0.0], atol=1e-12)
    assert np.allclose(link1.rotation, [[0, -1, 0], [1, 0, 0], [0, 0, 1]], atol=1e-12)


def test_ur10_default_pose_matches_hand_product(robot):
    # q = 0 for the UR10 table: reach along -x, shoulder/wrist offsets along y and z.
    links = forward_kinematics(robot, np.zeros(6))
    a = [0, -0.612, -0.5723, 0, 0, 0]
    d = [0.1273, 0, 0, 0.163941, 0.1157, 0.0922]
    # Frame 1 = Rx(pi/2) at height d1; later planar links add along x, d4 along -y (z1 = -y world),
    # d5 along z after Rx(pi/2), d6 along -y after Rx(-pi/2).
    expected_6 = np.array([a[1] + a[2], -(d[3] + d[5]), d[0] - d[4]])
    assert np.allclose(links[5].translation, expected_6, atol=1e-12)
    assert np.allclose(links[2].translation, [a[1] + a[2], 0, d[0]], atol=1e-12)


def test_joint_limit_error_names_joint(robot):
    q = np.zeros(6)
    q[1] = 0.5   # joint 2 upper limit is 0
    with pytest.raises(JointLimitError, match="joint 2"):
        forward_kinematics(robot, q)


@settings(max_examples=60, deadline=None)
@given(angles6)
def test_every_link_transform_is_rigid(q):
    model = model_from_rows(np.column_stack([[0, -0.612, -0.5723, 0, 0, 0],
                                             [math.pi / 2, 0, 0, math.pi / 2, -math.pi / 2, 0],
                                             [0.1273, 0, 0, 0.163941, 0.1157, 0.0922], np.zeros(6)]))
    for t in forward_kinematics(model, q):
        assert t.is_rigid(1e-9)


def test_forward_kinematics_is_lipschitz(robot):
    rng = np.random.default_rng(3)
    reach = robot.reach()
    eps = 5e-7
    for _ in range(50):
        q = random_q(robot, rng)
        q = np.clip(q, robot.joint_low + eps, robot.joint_high - eps)
        base = np.array([t.translation for t in forward_kinematics(robot, q)])
        for j in range(6):
            dq = q.copy()
            dq[j] += eps
            moved = np.array([t.translation for t in forward_kinematics(robot, dq)])
            assert np.max(np.linalg.norm(moved - base, axis=1)) < reach * eps


def test_link_segments_connect_frame_origins(robot):
    q = random_q(robot, np.random.default_rng(4))
    seg = link_segments(robot, q)
    links = forward_kinematics(robot, q)
    assert seg.shape == (6, 2, 3)
    assert np.allclose(seg[0, 0], robot.base_in_world.translation)
    for i in range(6):
        assert np.allclose(seg[i, 1], links[i].translation)
        if i:
            assert np.allclose(seg[i, 0], seg[i - 1, 1])


def test_base_must_sit_on_world_origin():
    with pytest.raises(ValueError):
        RobotModel(np.zeros((6, 4)), base_in_world=Transform(np.eye(3), [0.1, 0, 0]), **FREE)


# --- lidar poses ---------------------------------------------------------------

def test_units_1_and_9_are_antipodal(robot):
    ring = RingSpec(3, 0.08)
    q = random_q(robot, np.random.default_rng(5))
    p1 = lidar_pose(robot, q, ring, 1).translation
    p9 = lidar_pose(robot, q, ring, 9).translation
    link = forward_kinematics(robot, q)[2].translation
    assert math.isclose(np.linalg.norm(p1 - p9), 0.16, abs_tol=1e-12)
    assert np.allclose((p1 + p9) / 2, link, atol=1e-12)


def test_zero_radius_ring_collapses_positions_not_directions(robot):
    ring = RingSpec(2, 0.0)
    q = random_q(robot, np.random.default_rng(6))
    poses = [lidar_pose(robot, q, ring, j) for j in range(1, 17)]
    link = forward_kinematics(robot, q)[1].translation
    dirs = np.array([p.rotation[:, 0] for p in poses])
    for p in poses:
        assert np.allclose(p.translation, link, atol=1e-12)
    assert len({tuple(np.round(d, 9)) for d in dirs}) == 16


def test_unit_5_on_link_2_hand_evaluated():
    rows = np.zeros((6, 4))
    rows[0] = [0.0, math.pi / 2, 0.1, 0.0]
    rows[1] = [0.4, 0.0, 0.0, 0.0]
    model = model_from_rows(rows)
    pose = lidar_pose(model, np.zeros(6), RingSpec(2, 0.05), 5)
    # Link 2 frame: Rx(pi/2) at (0.4, 0, 0.1). Its axis is local +x; the ring's
    # azimuth zero is local +z and unit 5 (azimuth 90 deg) sits along local -y,
    # which Rx(pi/2) maps to world -z.
    assert np.allclose(pose.translation, [0.4, 0.0, 0.05], atol=1e-12)
    assert np.allclose(pose.rotation[:, 0], [0.0, 0.0, -1.0], atol=1e-12)


def test_azimuths_are_evenly_spaced_and_sense_outward(robot):
    for link in (2, 3, 4):
        rot, off = ring_local_frames(robot, RingSpec(link, 0.07))
        axis = rot[0][:, 2]
        radial = rot[:, :, 0]
        assert np.allclose(off, 0.07 * radial)
        assert np.allclose(radial @ axis, 0.0, atol=1e-12)
        cosines = np.einsum("ij,ij->i", radial, np.roll(radial, -1, axis=0))
        assert np.allclose(cosines, math.cos(2 * math.pi / 16), atol=1e-12)
        for r in rot:
            assert np.allclose(r.T @ r, np.eye(3), atol=1e-12) and np.isclose(np.linalg.det(r), 1.0)


def test_ring_is_rigid_on_its_link(robot, rings):
    rng = np.random.default_rng(7)
    for ring in rings:
        rot, off = ring_local_frames(robot, ring)
        for _ in range(5):
            q = random_q(robot, rng)
            link = forward_kinematics(robot, q)[ring.link_index - 1]
            for j in (1, 7, 16):
                rel = link.inverse() @ lidar_pose(robot, q, ring, j)
                assert np.allclose(rel.rotation, rot[j - 1], atol=1e-12)
                assert np.allclose(rel.translation, off[j - 1], atol=1e-12)


def test_vectorized_poses_match_single_poses(robot, rings):
    q = random_q(robot, np.random.default_rng(8))
    poses = all_lidar_poses(robot, q, rings)
    assert len(poses) == 48
    for k, ring in enumerate(rings):
        for j in (1, 16):
            single = lidar_pose(robot, q, ring, j)
            assert np.allclose(poses[16 * k + j - 1].matrix(), single.matrix(), atol=1e-12)


def test_bad_unit_index(robot):
    with pytest.raises(IndexError):
        lidar_pose(robot, np.zeros(6), RingSpec(2, 0.05), 17)
    with pytest.raises(IndexError):
        lidar_pose(robot, np.zeros(6), RingSpec(2, 0.05), 0)


# --- observation_to_world ---------------------------------------------------------

def test_observation_identity_pose():
    assert np.allclose(observation_to_world(Transform.identity(), 1.0), [1, 0, 0])


def test_observation_rotated_pose():
    assert np.allclose(observation_to_world(Transform(rot_z(math.pi / 2)), 1.0), [0, 1, 0], atol=1e-15)


@pytest.mark.parametrize("r", [0.0, -0.1, 2.0001])
def test_observation_range_checked(r):
    with pytest.raises(InvalidRangeError):
        observation_to_world(Transform.identity(), r)


def test_observation_distance_is_range(robot, rings):
    rng = np.random.default_rng(9)
    for _ in range(100):
        pose = Transform(random_rotation(rng), rng.normal(size=3))
        r = rng.uniform(1e-6, 2.0)
        assert math.isclose(np.linalg.norm(observation_to_world(pose, r) - pose.translation), r, abs_tol=1e-12)
    for _ in range(10):
        for pose in all_lidar_poses(robot, random_q(robot, rng), rings):
            r = rng.uniform(1e-6, 2.0)
            assert abs(np.linalg.norm(observation_to_world(pose, r) - pose.translation) - r) < 1e-9
