import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.spatial.transform import Rotation

from errors import DegenerateGeometryError
from estimation import AxisEstimate
from scene import JointSpec, JointType
from trajectory import (
    TrajectoryParams,
    TrajectoryPlan,
    default_goal,
    ee_orientation_chain,
    part_deviation,
    plan_full_pose,
    plan_prismatic,
    plan_revolute,
    rodrigues,
)

unit_axes = (
    st.tuples(*[st.floats(min_value=-1.0, max_value=1.0)] * 3)
    .map(np.array)
    .filter(lambda v: np.linalg.norm(v) > 0.1)
    .map(lambda v: v / np.linalg.norm(v))
)
angles = st.floats(min_value=-2 * np.pi, max_value=2 * np.pi)


class TestRodrigues:
    @given(unit_axes, angles)
    @settings(max_examples=100, deadline=None)
    def test_matches_rotation_vector(self, omega, phi):
        expected = Rotation.from_rotvec(omega * phi).as_matrix()
        np.testing.assert_allclose(rodrigues(omega, phi), expected, atol=1e-12)

    @given(unit_axes, angles)
    @settings(max_examples=100, deadline=None)
    def test_is_a_rotation(self, omega, phi):
        R = rodrigues(omega, phi)
        np.testing.assert_allclose(R @ R.T, np.eye(3), atol=1e-12)
        assert np.linalg.det(R) == pytest.approx(1.0, abs=1e-12)

    def test_fixes_the_axis(self):
        omega = np.array([1.0, 2.0, 2.0]) / 3.0
        np.testing.assert_allclose(rodrigues(omega, 0.8) @ omega, omega, atol=1e-15)

    def test_zero_axis(self):
        with pytest.raises(DegenerateGeometryError):
            rodrigues([0.0, 0.0, 0.0], 1.0)


class TestPlanRevolute:
    def test_quarter_turn(self):
        plan = plan_revolute([1.0, 0.0, 0.0], [0.0, 0.0, 1.0], [0.0, 0.0, 0.0], TrajectoryParams(K=4))
        assert plan.K == 4
        assert plan.kind is JointType.REVOLUTE
        np.testing.assert_array_equal(plan.waypoints[0], [1.0, 0.0, 0.0])
        np.testing.assert_allclose(plan.waypoints[-1], [0.0, 1.0, 0.0], atol=1e-15)
        np.testing.assert_allclose(plan.waypoints[2], [np.sqrt(0.5), np.sqrt(0.5), 0.0], atol=1e-15)

    @given(unit_axes, st.floats(min_value=0.1, max_value=3.0), st.integers(min_value=1, max_value=40))
    @settings(max_examples=50, deadline=None)
    def test_waypoints_stay_on_circle(self, omega, phi_goal, K):
        origin = np.array([0.2, -0.1, 0.4])
        p = origin + np.cross(omega, [0.3, 0.7, -0.2]) + 0.5 * omega
        if np.linalg.norm(np.cross(omega, p - origin)) < 1e-3:
            return
        plan = plan_revolute(p, omega, origin, TrajectoryParams(K=K, phi_goal=phi_goal))
        rel = plan.waypoints - origin
        along = rel @ omega
        radial = np.linalg.norm(rel - np.outer(along, omega), axis=1)
        np.testing.assert_allclose(along, along[0], atol=1e-12)
        np.testing.assert_allclose(radial, radial[0], atol=1e-12)
        steps = np.linalg.norm(np.diff(plan.waypoints, axis=0), axis=1)
        np.testing.assert_allclose(steps, steps[0], atol=1e-12)

    def test_contact_on_axis(self):
        with pytest.raises(DegenerateGeometryError):
            plan_revolute([0.0, 0.0, 5.0], [0.0, 0.0, 1.0], [0.0, 0.0, 0.0], TrajectoryParams())

    def test_zero_goal_angle(self):
        with pytest.raises(DegenerateGeometryError):
            plan_revolute([1.0, 0.0, 0.0], [0.0, 0.0, 1.0], [0.0, 0.0, 0.0], TrajectoryParams(phi_goal=0.0))


class TestPlanPrismatic:
    def test_straight_line(self):
        plan = plan_prismatic([1.0, 1.0, 1.0], [0.0, -2.0, 0.0], TrajectoryParams(K=5, l_goal=0.5))
        expected = np.column_stack([np.ones(6), 1.0 - np.linspace(0.0, 0.5, 6), np.ones(6)])
        np.testing.assert_allclose(plan.waypoints, expected, atol=1e-15)
        assert plan.kind is JointType.PRISMATIC

    def test_zero_flow(self):
        with pytest.raises(DegenerateGeometryError):
            plan_prismatic([0.0, 0.0, 0.0], [0.0, 0.0, 0.0], TrajectoryParams())

    def test_k_must_be_positive(self):
        with pytest.raises(ValueError):
            TrajectoryParams(K=0)


class TestOrientation:
    def test_chain_is_powers_of_step(self):
        omega = np.array([0.0, 0.0, 1.0])
        params = TrajectoryParams(K=8, phi_goal=np.pi / 2)
        chain = ee_orientation_chain(np.eye(3), omega, params)
        assert chain.shape == (9, 3, 3)
        np.testing.assert_array_equal(chain[0], np.eye(3))
        for i, R in enumerate(chain):
            np.testing.assert_allclose(R, rodrigues(omega, i * np.pi / 16), atol=1e-13)

    def test_full_pose_revolute(self):
        estimate = AxisEstimate((0.0, 0.0, 1.0), (0.0, 0.0, 0.0), JointType.REVOLUTE, 10)
        plan = plan_full_pose([1.0, 0.0, 0.0], np.eye(3), estimate, TrajectoryParams(K=2))
        quats = plan.quaternions()
        assert quats.shape == (3, 4)
        np.testing.assert_allclose(quats[0], [1.0, 0.0, 0.0, 0.0], atol=1e-15)
        np.testing.assert_allclose(quats[-1], [np.cos(np.pi / 4), 0.0, 0.0, np.sin(np.pi / 4)], atol=1e-12)
        assert np.all(quats[:, 0] >= 0.0)

    def test_full_pose_prismatic_keeps_orientation(self):
        estimate = AxisEstimate((1.0, 0.0, 0.0), (0.0, 0.0, 0.0), JointType.PRISMATIC, 10)
        plan = plan_full_pose([0.0, 0.0, 0.0], np.eye(3), estimate, TrajectoryParams(K=3))
        np.testing.assert_array_equal(plan.orientations, np.tile(np.eye(3), (4, 1, 1)))

    def test_plan_without_orientations_reports_identity(self):
        plan = TrajectoryPlan(np.zeros((3, 3)), JointType.PRISMATIC)
        np.testing.assert_array_equal(plan.quaternions(), [[1.0, 0.0, 0.0, 0.0]] * 3)

    def test_orientation_count_must_match(self):
        with pytest.raises(ValueError):
            TrajectoryPlan(np.zeros((3, 3)), JointType.REVOLUTE, np.tile(np.eye(3), (2, 1, 1)))


class TestGoalAndDeviation:
    def test_default_goal_overshoots_upper_limit(self):
        joint = JointSpec(JointType.REVOLUTE, (0, 0, 1), (0, 0, 0), 0.0, 2.0)
        assert default_goal(joint, 0.0) == pytest.approx(2.2)
        assert default_goal(joint, 1.5) == pytest.approx(0.7)

    def test_deviation_zero_for_exact_estimate(self, door_scene):
        joint = door_scene.target_joint
        estimate = AxisEstimate(joint.axis_direction, joint.axis_origin, JointType.REVOLUTE, 1)
        points = door_scene.closed_cloud[0][door_scene.target_indices]
        assert part_deviation(points, estimate, joint, 0.5) == pytest.approx(0.0, abs=1e-12)

    def test_deviation_grows_with_origin_offset(self, door_scene):
        joint = door_scene.target_joint
        points = door_scene.closed_cloud[0][door_scene.target_indices]
        near = AxisEstimate(joint.axis_direction, joint.origin + [0.0, 0.01, 0.0], JointType.REVOLUTE, 1)
        far = AxisEstimate(joint.axis_direction, joint.origin + [0.0, 0.1, 0.0], JointType.REVOLUTE, 1)
        assert 0.0 < part_deviation(points, near, joint, 0.5) < part_deviation(points, far, joint, 0.5)
