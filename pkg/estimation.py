"""
Articulation axis inference from dense flow and projection fields.

Each usable point p yields an axis estimate: the direction from the cross
product of its (optionally Gram-Schmidt corrected) projection and its flow,
and the origin p + r̃_p. Estimates are aggregated over the segmentation mask
by a sign-aligned mean.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import StrEnum
from typing import NamedTuple

import numpy as np

import config
from errors import DegenerateGeometryError, EstimationError
from scene import JointType

logger = logging.getLogger(__name__)


class ClassifierMode(StrEnum):
    ORACLE = "oracle"
    HEURISTIC = "heuristic"


@dataclass(frozen=True)
class AxisEstimate:
    direction: tuple
    origin: tuple
    articulation_type: JointType
    support_count: int

    def __post_init__(self):
        direction = np.asarray(self.direction, dtype=float)
        if abs(np.linalg.norm(direction) - 1.0) > 1e-9:
            raise ValueError(f"axis direction must be a unit vector, got {tuple(direction)}")
        if self.support_count < 1:
            raise ValueError(f"support_count must be >= 1, got {self.support_count}")
        object.__setattr__(self, "direction", tuple(float(c) for c in direction))
        object.__setattr__(self, "origin", tuple(float(c) for c in np.asarray(self.origin, dtype=float)))
        object.__setattr__(self, "articulation_type", JointType(self.articulation_type))

    @property
    def omega(self):
        return np.array(self.direction)

    @property
    def point(self):
        return np.array(self.origin)

    def flipped(self):
        return AxisEstimate(tuple(-self.omega), self.origin, self.articulation_type, self.support_count)


class Correction(NamedTuple):
    vector: np.ndarray
    applied: bool


def gram_schmidt_correct(f_p, r_p):
    """
    Remove the component of r_p along f_p.

    Args:
        f_p: Flow vector at the point
        r_p: Projection vector at the point

    Returns:
        Correction: corrected vector and whether the correction was applied;
        near-zero flow leaves r_p unchanged with applied=False
    """
    f = np.asarray(f_p, dtype=float)
    r = np.asarray(r_p, dtype=float)
    ff = float(f @ f)
    if np.sqrt(ff) <= config.DEGENERATE_EPS:
        return Correction(r.copy(), False)
    return Correction(r - (float(r @ f) / ff) * f, True)


def _correct_rows(flow, proj):
    ff = np.einsum("ij,ij->i", flow, flow)
    rf = np.einsum("ij,ij->i", proj, flow)
    usable = np.sqrt(ff) > config.DEGENERATE_EPS
    scale = np.zeros_like(ff)
    scale[usable] = rf[usable] / ff[usable]
    return proj - scale[:, None] * flow


def _pointwise_axes(points, flow, proj, use_gs):
    """Per-row axis directions and origins; rows with degenerate cross products are flagged unusable."""
    corrected = _correct_rows(flow, proj) if use_gs else proj
    cross = np.cross(corrected, flow)
    norms = np.linalg.norm(cross, axis=1)
    usable = norms > config.DEGENERATE_EPS
    omegas = np.zeros_like(cross)
    omegas[usable] = cross[usable] / norms[usable, None]
    origins = points + corrected
    # opening convention: (ω̂ × (p − v̂)) · f ≥ 0
    opening = np.einsum("ij,ij->i", np.cross(omegas, points - origins), flow)
    omegas[opening < 0] *= -1.0
    return omegas, origins, usable


def estimate_axis_pointwise(p, f_p, r_p, use_gs=True):
    """
    Axis direction and origin implied by a single point.

    Returns:
        tuple: (ω̂_p, v̂_p) as 3-vectors, ω̂_p oriented so that rotating p by a
        positive angle moves it along f_p

    Raises:
        DegenerateGeometryError: If ||r̃_p × f_p|| is below the degenerate threshold
    """
    omegas, origins, usable = _pointwise_axes(
        np.atleast_2d(np.asarray(p, dtype=float)),
        np.atleast_2d(np.asarray(f_p, dtype=float)),
        np.atleast_2d(np.asarray(r_p, dtype=float)),
        use_gs,
    )
    if not usable[0]:
        raise DegenerateGeometryError("point is on the axis or its flow is parallel to its projection")
    return omegas[0], origins[0]


def _unit_mean(vectors):
    mean = vectors.mean(axis=0)
    norm = float(np.linalg.norm(mean))
    if norm <= config.DEGENERATE_EPS:
        raise EstimationError("per-point axis directions cancel out")
    return mean / norm


def aggregate_axis(obs, fields, articulation_type, use_gs=True, use_mask=True):
    """
    Average per-point axis estimates over the segmentation mask.

    Revolute: per-point directions are aligned to the lowest-index usable
    point before averaging; the origin is the mean of p + r̃_p. The averaged
    direction is finally oriented so that the summed opening test over the
    supporting points is non-negative. Prismatic: the direction is the
    normalised mean flow and the origin is the centroid of the selection.

    Args:
        obs: Observation
        fields: DenseFields over obs
        articulation_type: JointType to estimate
        use_gs: Apply Gram-Schmidt correction to projections
        use_mask: Restrict to masked points; otherwise every point takes part

    Returns:
        AxisEstimate

    Raises:
        EstimationError: If no point supports an estimate
    """
    articulation_type = JointType(articulation_type)
    select = fields.mask if use_mask else np.ones(len(fields), dtype=bool)
    points = obs.points[select]
    flow = fields.flow[select]
    proj = fields.projection[select]

    if articulation_type is JointType.PRISMATIC:
        usable = np.linalg.norm(flow, axis=1) > config.DEGENERATE_EPS
        if not usable.any():
            raise EstimationError("no point with non-zero flow to estimate a prismatic axis")
        direction = _unit_mean(flow[usable])
        centroid = obs.points[fields.mask].mean(axis=0) if fields.mask.any() else points[usable].mean(axis=0)
        return AxisEstimate(direction, centroid, articulation_type, int(usable.sum()))

    omegas, origins, usable = _pointwise_axes(points, flow, proj, use_gs)
    if not usable.any():
        raise EstimationError("no non-degenerate point to estimate a revolute axis")
    omegas, origins = omegas[usable], origins[usable]
    reference = omegas[0]
    omegas = np.where((omegas @ reference < 0)[:, None], -omegas, omegas)
    direction = _unit_mean(omegas)
    origin = origins.mean(axis=0)
    opening = np.cross(direction, points[usable] - origin)
    if float(np.einsum("ij,ij->", opening, flow[usable])) < 0:
        direction = -direction
    logger.debug("revolute estimate from %d of %d points", int(usable.sum()), len(points))
    return AxisEstimate(direction, origin, articulation_type, int(usable.sum()))


def flow_similarity(flow):
    """
    Magnitude-aware mean pairwise similarity of flow vectors.

    Equals the mean pairwise cosine when every vector has unit norm and
    drops below it when norms vary, as they do across a rotating part.
    """
    flow = np.asarray(flow, dtype=float)
    flow = flow[np.linalg.norm(flow, axis=1) > config.DEGENERATE_EPS]
    n = len(flow)
    if n < 2:
        return 1.0
    total = flow.sum(axis=0)
    squares = float(np.einsum("ij,ij->", flow, flow))
    return float((total @ total - squares) / ((n - 1) * squares))


def classify_articulation(obs, fields, mode=ClassifierMode.ORACLE, joint=None):
    """
    Decide whether the masked part is revolute or prismatic.

    Oracle mode reads the joint type of the scene; heuristic mode calls the
    part prismatic when the masked flows are near-identical.
    """
    mode = ClassifierMode(mode)
    if mode is ClassifierMode.ORACLE:
        if joint is None:
            raise ValueError("oracle classification needs the scene joint")
        return joint.joint_type
    similarity = flow_similarity(fields.flow[fields.mask])
    logger.debug("heuristic classifier: flow similarity %.6f", similarity)
    return JointType.PRISMATIC if similarity > config.PRISMATIC_SIMILARITY else JointType.REVOLUTE


def axis_errors(estimate, joint):
    """
    Angular error of the direction and point-to-line distance of the origin.

    Only the axis line is identifiable, so the direction error ignores sign.
    """
    omega = joint.omega
    cos = min(1.0, abs(float(estimate.omega @ omega)))
    angle = float(np.arccos(cos))
    # arccos loses precision near 1; use the cross-product norm there
    angle = min(angle, float(np.arcsin(min(1.0, np.linalg.norm(np.cross(estimate.omega, omega))))))
    rel = estimate.point - joint.origin
    distance = float(np.linalg.norm(rel - (rel @ omega) * omega))
    return angle, distance
