"""
Trajectory synthesis from an axis estimate.

Revolute plans rotate the contact point about the estimated axis with
Rodrigues' formula; prismatic plans translate it along the estimated
direction. For revolute plans the end-effector orientation is carried along
by repeatedly applying the per-step rotation.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation

import config
from errors import DegenerateGeometryError
from scene import JointType

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrajectoryParams:
    K: int = config.DEFAULT_K
    phi_goal: float = np.pi / 2
    l_goal: float = 0.3

    def __post_init__(self):
        if int(self.K) < 1:
            raise ValueError(f"K must be >= 1, got {self.K}")
        object.__setattr__(self, "K", int(self.K))


@dataclass(frozen=True, eq=False)
class TrajectoryPlan:
    waypoints: np.ndarray
    kind: JointType
    orientations: np.ndarray = None

    def __post_init__(self):
        waypoints = np.array(self.waypoints, dtype=float).reshape(-1, 3)
        waypoints.setflags(write=False)
        object.__setattr__(self, "waypoints", waypoints)
        object.__setattr__(self, "kind", JointType(self.kind))
        if self.orientations is not None:
            orientations = np.array(self.orientations, dtype=float).reshape(-1, 3, 3)
            orientations.setflags(write=False)
            if len(orientations) != len(waypoints):
                raise ValueError(
                    f"{len(orientations)} orientations for {len(waypoints)} waypoints"
                )
            object.__setattr__(self, "orientations", orientations)

    @property
    def K(self):
        return len(self.waypoints) - 1

    def quaternions(self):
        """Orientations as (w, x, y, z) unit quaternions; identity when absent."""
        if self.orientations is None:
            quats = np.zeros((len(self.waypoints), 4))
            quats[:, 0] = 1.0
            return quats
        xyzw = Rotation.from_matrix(self.orientations).as_quat()
        wxyz = np.roll(xyzw, 1, axis=1)
        wxyz[wxyz[:, 0] < 0] *= -1.0
        return wxyz


def _skew(w):
    return np.array([
        [0.0, -w[2], w[1]],
        [w[2], 0.0, -w[0]],
        [-w[1], w[0], 0.0],
    ])


def rodrigues(omega, phi):
    """
    Rotation matrix for angle phi about the unit axis omega.

    R(φ) = I + sin φ [ω]× + (1 − cos φ)[ω]×²

    Raises:
        DegenerateGeometryError: If omega is (near) zero
    """
    w = np.asarray(omega, dtype=float)
    norm = float(np.linalg.norm(w))
    if norm <= config.DEGENERATE_EPS:
        raise DegenerateGeometryError("rotation axis has zero length")
    k = _skew(w / norm)
    return np.eye(3) + np.sin(phi) * k + (1.0 - np.cos(phi)) * (k @ k)


def default_goal(joint, q):
    """Remaining travel to the upper limit plus a margin of the full range."""
    return (joint.limit_upper - q) + config.GOAL_MARGIN * joint.span


def _distance_to_line(p, origin, omega):
    rel = p - origin
    return float(np.linalg.norm(rel - (rel @ omega) * omega))


def plan_revolute(p, omega, origin, params):
    """
    Rotate the contact point about the estimated axis in K equal steps.

    Args:
        p: Contact point
        omega: Estimated axis direction
        origin: Estimated point on the axis
        params: TrajectoryParams; phi_goal is the total rotation

    Returns:
        TrajectoryPlan: K+1 waypoints, the first equal to p

    Raises:
        DegenerateGeometryError: If p lies on the axis or phi_goal is zero
    """
    p = np.asarray(p, dtype=float)
    origin = np.asarray(origin, dtype=float)
    w = np.asarray(omega, dtype=float)
    w = w / np.linalg.norm(w)
    if _distance_to_line(p, origin, w) <= config.DEGENERATE_EPS:
        raise DegenerateGeometryError("contact point lies on the rotation axis")
    if params.phi_goal == 0:
        raise DegenerateGeometryError("revolute plans need a non-zero goal angle")
    rel = p - origin
    waypoints = [p.copy()]
    for i in range(1, params.K + 1):
        waypoints.append(rodrigues(w, (i / params.K) * params.phi_goal) @ rel + origin)
    return TrajectoryPlan(np.array(waypoints), JointType.REVOLUTE)


def plan_prismatic(p, f_p, params):
    """Translate the contact point by l_goal along the normalised flow in K equal steps."""
    p = np.asarray(p, dtype=float)
    f = np.asarray(f_p, dtype=float)
    norm = float(np.linalg.norm(f))
    if norm <= config.DEGENERATE_EPS:
        raise DegenerateGeometryError("prismatic plans need a non-zero flow")
    if params.l_goal == 0:
        raise DegenerateGeometryError("prismatic plans need a non-zero goal distance")
    direction = f / norm
    steps = np.arange(params.K + 1) / params.K
    return TrajectoryPlan(p + np.outer(steps * params.l_goal, direction), JointType.PRISMATIC)


def ee_orientation_chain(q_0, omega, params):
    """
    End-effector orientations along a revolute plan.

    The per-step rotation R(φ_g / K) is applied on the left K times, so
    orientation i is R(φ_g / K)^i · q_0.
    """
    step = rodrigues(omega, params.phi_goal / params.K)
    chain = [np.array(q_0, dtype=float)]
    for _ in range(params.K):
        chain.append(step @ chain[-1])
    return np.array(chain)


def plan_full_pose(p, q_0, estimate, params):
    """Positions and orientations for the contact under the estimated articulation."""
    if estimate.articulation_type is JointType.PRISMATIC:
        plan = plan_prismatic(p, estimate.omega, params)
        orientations = np.repeat(np.asarray(q_0, dtype=float)[None], len(plan.waypoints), axis=0)
    else:
        plan = plan_revolute(p, estimate.omega, estimate.point, params)
        orientations = ee_orientation_chain(q_0, estimate.omega, params)
    return TrajectoryPlan(plan.waypoints, plan.kind, orientations)


def transform_points(points, omega, origin, kind, amount):
    """Move points rigidly by `amount` about (revolute) or along (prismatic) an axis."""
    points = np.asarray(points, dtype=float)
    omega = np.asarray(omega, dtype=float)
    if JointType(kind) is JointType.PRISMATIC:
        return points + amount * omega / np.linalg.norm(omega)
    return (points - origin) @ rodrigues(omega, amount).T + origin


def part_deviation(points, estimate, joint, amount):
    """
    Mean distance between part points moved by the estimated and the true articulation.

    Zero when the estimate matches the joint; grows as the predicted motion
    leaves the hinge.
    """
    predicted = transform_points(points, estimate.omega, estimate.point, estimate.articulation_type, amount)
    actual = transform_points(points, joint.omega, joint.origin, joint.joint_type, amount)
    return float(np.mean(np.linalg.norm(predicted - actual, axis=1)))
