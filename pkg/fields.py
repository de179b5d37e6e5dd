"""Ground-truth Articulation Flow and Articulation Projection fields."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

import config
from errors import ArticulationError, DegenerateGeometryError
from scene import JointType

logger = logging.getLogger(__name__)


def _readonly(array, dtype=float):
    out = np.array(array, dtype=dtype)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class DenseFields:
    """Per-point flow f_p and projection r_p; both are zero where mask is false."""

    flow: np.ndarray
    projection: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "flow", _readonly(self.flow).reshape(-1, 3))
        object.__setattr__(self, "projection", _readonly(self.projection).reshape(-1, 3))
        object.__setattr__(self, "mask", _readonly(self.mask, dtype=bool))
        if not (len(self.flow) == len(self.projection) == len(self.mask)):
            raise ValueError(
                f"field arrays differ in length: flow={len(self.flow)}, "
                f"projection={len(self.projection)}, mask={len(self.mask)}"
            )

    def __len__(self):
        return len(self.mask)

    @property
    def stacked(self):
        """Per-point concatenation f ⊕ r, shape (N, 6)."""
        return np.hstack([self.flow, self.projection])

    @classmethod
    def zeros(cls, mask):
        n = len(mask)
        return cls(np.zeros((n, 3)), np.zeros((n, 3)), mask)


def gt_articulation_projection(obs, joint):
    """
    Vector from each masked point to its nearest point on the joint axis.

    Computes r_p = (ω ωᵀ − I)(p − v) on masked points and zero elsewhere.
    """
    omega, origin = joint.omega, joint.origin
    rel = obs.points - origin
    proj = np.outer(rel @ omega, omega) - rel
    proj[~obs.mask] = 0.0
    return proj


def gt_articulation_flow(obs, joint):
    """
    Direction of motion of each masked point under an infinitesimal opening.

    Prismatic joints move every point along ω. Revolute joints move p along
    ω × (p − v), normalised by the largest such speed among masked points, so
    the point farthest from the axis has unit flow.

    Args:
        obs: Observation whose mask selects the articulated part
        joint: JointSpec of that part

    Returns:
        ndarray: (N, 3) flow, zero off the mask

    Raises:
        DegenerateGeometryError: Revolute part whose masked points all lie on the axis
    """
    flow = np.zeros((len(obs), 3))
    mask = obs.mask
    if not mask.any():
        return flow
    omega = joint.omega
    if joint.joint_type is JointType.PRISMATIC:
        flow[mask] = omega
        return flow
    velocity = np.cross(omega, obs.points[mask] - joint.origin)
    speeds = np.linalg.norm(velocity, axis=1)
    # argmax keeps the lowest index among ties
    r_max = speeds[int(np.argmax(speeds))]
    if r_max <= config.DEGENERATE_EPS:
        raise DegenerateGeometryError(
            f"joint '{joint.name}': every masked point lies on the rotation axis"
        )
    flow[mask] = velocity / r_max
    return flow


def gt_fields(obs, joint):
    return DenseFields(gt_articulation_flow(obs, joint), gt_articulation_projection(obs, joint), obs.mask)


def field_error(predicted, truth):
    """
    Mean squared L2 error of the concatenated fields.

    Args:
        predicted: DenseFields
        truth: DenseFields over the same points

    Returns:
        float: mean over points of ||(f ⊕ r)_pred − (f ⊕ r)_true||²
    """
    if len(predicted) != len(truth):
        raise ArticulationError(f"field lengths differ: {len(predicted)} vs {len(truth)}")
    diff = predicted.stacked - truth.stacked
    return float(np.mean(np.sum(diff * diff, axis=1)))
