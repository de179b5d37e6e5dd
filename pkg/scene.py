"""
Kinematic scene model for articulated objects.

A scene is a static base made of box primitives plus child parts, each
attached to the base by exactly one revolute or prismatic joint. Scenes are
read from and written to a small URDF subset, sampled into a fixed
closed-state point cloud, posed by joint value and rendered into partial
observations.
"""

from __future__ import annotations

import logging
import xml.etree.ElementTree as ET
from dataclasses import dataclass
from enum import StrEnum
from functools import cached_property
from typing import NamedTuple

import numpy as np
from scipy.spatial.transform import Rotation

import config
from errors import JointLimitError, SceneParseError

logger = logging.getLogger(__name__)


class JointType(StrEnum):
    REVOLUTE = "revolute"
    PRISMATIC = "prismatic"


def _unit(vector, what):
    arr = np.asarray(vector, dtype=float).reshape(3)
    norm = float(np.linalg.norm(arr))
    if not np.isfinite(norm) or norm <= config.DEGENERATE_EPS:
        raise ValueError(f"{what} must be a non-zero 3-vector, got {tuple(arr)}")
    # Already-unit vectors are kept bit-exact so serialization round-trips
    if abs(norm - 1.0) <= 1e-12:
        return arr
    return arr / norm


def _as_tuple(vector):
    return tuple(float(c) for c in np.asarray(vector, dtype=float).reshape(3))


def _frozen(array, dtype=float):
    out = np.array(array, dtype=dtype)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class JointSpec:
    """
    One joint of a scene.

    Joint values grow in the opening direction: ``limit_lower`` is closed and
    ``limit_upper`` is fully open. The axis origin is expressed in the world
    frame at the closed state.
    """

    joint_type: JointType
    axis_direction: tuple
    axis_origin: tuple
    limit_lower: float
    limit_upper: float
    name: str = "joint"
    parent: str = "base"

    def __post_init__(self):
        object.__setattr__(self, "joint_type", JointType(self.joint_type))
        direction = _unit(self.axis_direction, f"axis of joint '{self.name}'")
        object.__setattr__(self, "axis_direction", _as_tuple(direction))
        object.__setattr__(self, "axis_origin", _as_tuple(self.axis_origin))
        object.__setattr__(self, "limit_lower", float(self.limit_lower))
        object.__setattr__(self, "limit_upper", float(self.limit_upper))
        if not np.all(np.isfinite(self.axis_origin + (self.limit_lower, self.limit_upper))):
            raise ValueError(f"joint '{self.name}' needs a finite origin and limits, got {self.axis_origin}")
        if not self.limit_lower < self.limit_upper:
            raise ValueError(
                f"joint '{self.name}' needs limit_lower < limit_upper, "
                f"got [{self.limit_lower}, {self.limit_upper}]"
            )

    @property
    def omega(self):
        return np.array(self.axis_direction)

    @property
    def origin(self):
        return np.array(self.axis_origin)

    @property
    def span(self):
        return self.limit_upper - self.limit_lower

    def check(self, q):
        """Raise JointLimitError if q lies outside the joint limits."""
        if not (self.limit_lower - config.LIMIT_EPS <= q <= self.limit_upper + config.LIMIT_EPS):
            raise JointLimitError(
                f"q={q} outside limits [{self.limit_lower}, {self.limit_upper}] of joint '{self.name}'"
            )

    def clamp(self, q):
        return float(min(max(q, self.limit_lower), self.limit_upper))

    def opening_fraction(self, q):
        return (q - self.limit_lower) / self.span


@dataclass(frozen=True)
class PartGeometry:
    """Axis-aligned box in the world frame at the closed state."""

    name: str
    center: tuple
    size: tuple
    sample_count: int = config.DEFAULT_SAMPLE_COUNT

    def __post_init__(self):
        object.__setattr__(self, "center", _as_tuple(self.center))
        object.__setattr__(self, "size", _as_tuple(self.size))
        if not np.all(np.isfinite(self.center + self.size)):
            raise ValueError(f"box of part '{self.name}' must be finite, got center {self.center} size {self.size}")
        if any(s <= 0 for s in self.size):
            raise ValueError(f"box size of part '{self.name}' must be positive, got {self.size}")
        if int(self.sample_count) < 1:
            raise ValueError(f"sample_count of part '{self.name}' must be >= 1, got {self.sample_count}")
        object.__setattr__(self, "sample_count", int(self.sample_count))


class ChildPart(NamedTuple):
    part_id: str
    geometry: PartGeometry
    joint: JointSpec


@dataclass(frozen=True)
class ArticulatedScene:
    """
    Static base geometry plus independently jointed child parts.

    The closed-state point cloud is sampled once per scene from
    ``sample_seed``: base parts first, then child parts, each in declaration
    order.
    """

    name: str
    base_parts: tuple
    child_parts: tuple
    target_part: str
    sample_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "base_parts", tuple(self.base_parts))
        object.__setattr__(self, "child_parts", tuple(ChildPart(*c) for c in self.child_parts))
        names = [g.name for g in self.base_parts] + [c.part_id for c in self.child_parts]
        if len(set(names)) != len(names):
            raise ValueError(f"scene '{self.name}' has duplicate part names: {names}")
        base_names = {g.name for g in self.base_parts}
        for child in self.child_parts:
            if child.geometry.name != child.part_id:
                raise ValueError(f"child part id '{child.part_id}' does not match its geometry name")
            if child.joint.parent not in base_names:
                raise ValueError(
                    f"joint '{child.joint.name}' parent '{child.joint.parent}' is not a base part"
                )
        if self.target_part not in {c.part_id for c in self.child_parts}:
            raise ValueError(f"target part '{self.target_part}' is not a jointed child of scene '{self.name}'")

    @property
    def target(self):
        return next(c for c in self.child_parts if c.part_id == self.target_part)

    @property
    def target_joint(self):
        return self.target.joint

    @property
    def parts(self):
        return list(self.base_parts) + [c.geometry for c in self.child_parts]

    @cached_property
    def closed_cloud(self):
        """Closed-state points and their part ids, sampled deterministically."""
        chunks, ids = [], []
        for k, geom in enumerate(self.parts):
            seed = int(np.random.SeedSequence([self.sample_seed, k]).generate_state(1)[0])
            chunks.append(sample_part_points(geom, seed))
            ids.extend([geom.name] * geom.sample_count)
        return _frozen(np.vstack(chunks)), _frozen(ids, dtype=object)

    @cached_property
    def target_indices(self):
        return np.flatnonzero(self.closed_cloud[1] == self.target_part)


@dataclass(frozen=True, eq=False)
class Observation:
    """Posed surface points with the target-part mask and provenance indices."""

    points: np.ndarray
    mask: np.ndarray
    source_part: np.ndarray
    config_q: float
    point_index: np.ndarray = None

    def __post_init__(self):
        points = _frozen(self.points).reshape(-1, 3)
        n = len(points)
        point_index = np.arange(n) if self.point_index is None else self.point_index
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "mask", _frozen(self.mask, dtype=bool))
        object.__setattr__(self, "source_part", _frozen(self.source_part, dtype=object))
        object.__setattr__(self, "point_index", _frozen(point_index, dtype=int))
        object.__setattr__(self, "config_q", float(self.config_q))
        if n < 1:
            raise ValueError("an observation needs at least one point")
        if not (len(self.mask) == len(self.source_part) == len(self.point_index) == n):
            raise ValueError(
                f"observation arrays differ in length: points={n}, mask={len(self.mask)}, "
                f"source_part={len(self.source_part)}, point_index={len(self.point_index)}"
            )

    def __len__(self):
        return len(self.points)

    @property
    def masked_count(self):
        return int(self.mask.sum())


@dataclass(frozen=True)
class OcclusionModel:
    """I.i.d. dropout of target points that grows with the opening fraction."""

    base_dropout: float = 0.0
    opening_coupled_dropout: float = 0.0
    seed: int = 0

    def __post_init__(self):
        for field_name in ("base_dropout", "opening_coupled_dropout"):
            value = getattr(self, field_name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{field_name} must be in [0, 1], got {value}")
        if self.base_dropout + self.opening_coupled_dropout > 1.0 + 1e-12:
            raise ValueError("base_dropout + opening_coupled_dropout must not exceed 1")

    def dropout_at(self, fraction):
        return self.base_dropout + self.opening_coupled_dropout * fraction


def sample_part_points(geom, seed):
    """
    Sample points uniformly over the surface of a box.

    Face counts are drawn from a multinomial weighted by face area, so the
    density is uniform over the whole surface.

    Args:
        geom: PartGeometry to sample
        seed: Integer seed; equal seeds give identical point lists

    Returns:
        ndarray: (sample_count, 3) surface points
    """
    rng = np.random.default_rng(seed)
    center = np.array(geom.center)
    half = np.array(geom.size) / 2.0
    sx, sy, sz = geom.size
    # faces ordered -x, +x, -y, +y, -z, +z
    areas = np.array([sy * sz, sy * sz, sx * sz, sx * sz, sx * sy, sx * sy])
    counts = rng.multinomial(geom.sample_count, areas / areas.sum())
    points = []
    for face, count in enumerate(counts):
        axis, sign = divmod(face, 2)
        pts = center + rng.uniform(-1.0, 1.0, size=(count, 3)) * half
        pts[:, axis] = center[axis] + (half[axis] if sign else -half[axis])
        points.append(pts)
    return np.vstack(points)


def pose_part_points(joint, points, q):
    """Move closed-state points of a part to joint value q."""
    joint.check(q)
    points = np.asarray(points, dtype=float)
    displacement = q - joint.limit_lower
    if displacement == 0.0:
        return points.copy()
    if joint.joint_type is JointType.PRISMATIC:
        return points + displacement * joint.omega
    rotation = Rotation.from_rotvec(joint.omega * displacement)
    return rotation.apply(points - joint.origin) + joint.origin


def pose_points(scene, q):
    """
    Pose the scene's point cloud at target joint value q.

    Args:
        scene: ArticulatedScene
        q: Target joint value within limits

    Returns:
        tuple: (points ndarray (N, 3), part_ids ndarray (N,))
    """
    points, ids = scene.closed_cloud
    posed = points.copy()
    idx = scene.target_indices
    posed[idx] = pose_part_points(scene.target_joint, points[idx], q)
    return posed, ids


def render_observation(scene, q, occ):
    """
    Render an observation of the scene at q with seeded target-part dropout.

    Every target point is dropped independently with probability
    ``base_dropout + opening_coupled_dropout * opening_fraction``. Base
    points are always visible. If all target points are dropped the
    observation has an empty mask and callers must handle it.
    """
    points, ids = pose_points(scene, q)
    target = ids == scene.target_part
    p_drop = occ.dropout_at(scene.target_joint.opening_fraction(q))
    rng = np.random.default_rng(occ.seed)
    keep = np.ones(len(points), dtype=bool)
    keep[target] = rng.random(int(target.sum())) >= p_drop
    if not keep[target].any():
        logger.debug("scene %s: all target points occluded at q=%.4f", scene.name, q)
    return Observation(
        points=points[keep],
        mask=target[keep],
        source_part=ids[keep],
        config_q=q,
        point_index=np.flatnonzero(keep),
    )


# ---------------------------------------------------------------------------
# URDF-subset parsing and serialization
# ---------------------------------------------------------------------------

_ALLOWED_CHILDREN = {
    "robot": {"link", "joint", "target"},
    "link": {"visual"},
    "visual": {"origin", "geometry"},
    "geometry": {"box"},
    "joint": {"origin", "axis", "limit", "parent", "child"},
}


def _describe(elem):
    name = elem.get("name") or elem.get("link")
    return f"<{elem.tag} name='{name}'>" if name else f"<{elem.tag}>"


def _check_children(elem, strict):
    allowed = _ALLOWED_CHILDREN.get(elem.tag, set())
    for child in elem:
        if child.tag not in allowed:
            message = f"unknown element <{child.tag}> inside {_describe(elem)}"
            if strict:
                raise SceneParseError(message)
            logger.warning("%s (ignored, lenient mode)", message)


def _floats(text, count, where):
    try:
        values = [float(v) for v in (text or "").split()]
    except ValueError:
        raise SceneParseError(f"{where}: expected {count} numbers, got '{text}'")
    if len(values) != count:
        raise SceneParseError(f"{where}: expected {count} numbers, got '{text}'")
    return values


def _require(elem, path, where):
    found = elem.find(path)
    if found is None:
        raise SceneParseError(f"{where}: missing <{path}>")
    return found


def _parse_link(elem, strict):
    name = elem.get("name")
    if not name:
        raise SceneParseError("<link> without a name attribute")
    where = f"<link name='{name}'>"
    _check_children(elem, strict)
    visual = _require(elem, "visual", where)
    _check_children(visual, strict)
    geometry = _require(visual, "geometry", where)
    _check_children(geometry, strict)
    box = _require(geometry, "box", where)
    size = _floats(box.get("size"), 3, f"{where} box size")
    origin = visual.find("origin")
    center = _floats(origin.get("xyz"), 3, f"{where} origin") if origin is not None else [0.0, 0.0, 0.0]
    try:
        sample_count = int(elem.get("sample_count", config.DEFAULT_SAMPLE_COUNT))
        return PartGeometry(name=name, center=center, size=size, sample_count=sample_count)
    except ValueError as exc:
        raise SceneParseError(f"{where}: {exc}") from exc


def _parse_joint(elem, strict):
    name = elem.get("name", "")
    where = f"<joint name='{name}'>"
    _check_children(elem, strict)
    kind = elem.get("type")
    if kind not in {t.value for t in JointType}:
        raise SceneParseError(f"{where}: unknown joint type '{kind}'")
    parent = _require(elem, "parent", where).get("link")
    child = _require(elem, "child", where).get("link")
    if not parent or not child:
        raise SceneParseError(f"{where}: <parent> and <child> need a link attribute")
    origin = elem.find("origin")
    axis_origin = _floats(origin.get("xyz"), 3, f"{where} origin") if origin is not None else [0.0, 0.0, 0.0]
    axis = elem.find("axis")
    axis_xyz = _floats(axis.get("xyz"), 3, f"{where} axis") if axis is not None else [1.0, 0.0, 0.0]
    if np.linalg.norm(axis_xyz) <= config.DEGENERATE_EPS:
        raise SceneParseError(f"{where}: zero-length axis vector")
    limit = elem.find("limit")
    if limit is None or limit.get("lower") is None or limit.get("upper") is None:
        raise SceneParseError(f"{where}: movable joint is missing <limit lower upper>")
    lower = _floats(limit.get("lower"), 1, f"{where} limit lower")[0]
    upper = _floats(limit.get("upper"), 1, f"{where} limit upper")[0]
    try:
        joint = JointSpec(
            joint_type=kind, axis_direction=axis_xyz, axis_origin=axis_origin,
            limit_lower=lower, limit_upper=upper, name=name, parent=parent,
        )
    except ValueError as exc:
        raise SceneParseError(f"{where}: {exc}") from exc
    return child, joint


def parse_scene(text, strict=True):
    """
    Parse URDF-subset XML into an ArticulatedScene.

    Args:
        text: XML document text
        strict: Raise on unknown elements instead of logging a warning

    Returns:
        ArticulatedScene: Scene with normalized joint axes

    Raises:
        SceneParseError: On malformed XML, unknown joint types, zero axes,
            missing limits, unknown elements (strict) or broken structure
    """
    try:
        root = ET.fromstring(text)
    except ET.ParseError as exc:
        raise SceneParseError(f"malformed scene XML: {exc}") from exc
    if root.tag != "robot":
        raise SceneParseError(f"expected <robot> root element, got <{root.tag}>")
    name = root.get("name")
    if not name:
        raise SceneParseError("<robot> without a name attribute")
    _check_children(root, strict)

    links, joints, target = {}, [], None
    for elem in root:
        if elem.tag == "link":
            geom = _parse_link(elem, strict)
            if geom.name in links:
                raise SceneParseError(f"duplicate <link name='{geom.name}'>")
            links[geom.name] = geom
        elif elem.tag == "joint":
            joints.append(_parse_joint(elem, strict))
        elif elem.tag == "target":
            target = elem.get("link")

    child_names = [child for child, _ in joints]
    if len(set(child_names)) != len(child_names):
        raise SceneParseError("a child link is attached by more than one joint")
    base = [g for n, g in links.items() if n not in child_names]
    base_names = {g.name for g in base}
    children = []
    for child, joint in joints:
        if child not in links:
            raise SceneParseError(f"<joint name='{joint.name}'>: unknown child link '{child}'")
        if joint.parent not in base_names:
            raise SceneParseError(
                f"<joint name='{joint.name}'>: parent '{joint.parent}' is not a base link "
                "(only depth-1 chains are supported)"
            )
        children.append(ChildPart(child, links[child], joint))
    if target is None:
        raise SceneParseError("missing <target link=...> element")
    if target not in child_names:
        raise SceneParseError(f"<target link='{target}'>: not a jointed child link")

    try:
        sample_seed = int(root.get("sample_seed", "0"))
    except ValueError as exc:
        raise SceneParseError(f"<robot name='{name}'>: bad sample_seed") from exc
    logger.debug("parsed scene %s: %d base parts, %d jointed parts", name, len(base), len(children))
    return ArticulatedScene(
        name=name, base_parts=base, child_parts=children, target_part=target, sample_seed=sample_seed,
    )


def _fmt(values):
    return " ".join(repr(float(v)) for v in values)


def _link_element(geom):
    link = ET.Element("link", name=geom.name, sample_count=str(geom.sample_count))
    visual = ET.SubElement(link, "visual")
    ET.SubElement(visual, "origin", xyz=_fmt(geom.center))
    geometry = ET.SubElement(visual, "geometry")
    ET.SubElement(geometry, "box", size=_fmt(geom.size))
    return link


def serialize_scene(scene):
    """Write a scene back to the URDF subset; floats are written round-trip exact."""
    root = ET.Element("robot", name=scene.name, sample_seed=str(scene.sample_seed))
    for geom in scene.base_parts:
        root.append(_link_element(geom))
    for child in scene.child_parts:
        root.append(_link_element(child.geometry))
    for child in scene.child_parts:
        joint = child.joint
        elem = ET.SubElement(root, "joint", name=joint.name, type=joint.joint_type.value)
        ET.SubElement(elem, "parent", link=joint.parent)
        ET.SubElement(elem, "child", link=child.part_id)
        ET.SubElement(elem, "origin", xyz=_fmt(joint.axis_origin))
        ET.SubElement(elem, "axis", xyz=_fmt(joint.axis_direction))
        ET.SubElement(elem, "limit", lower=repr(joint.limit_lower), upper=repr(joint.limit_upper))
    ET.SubElement(root, "target", link=scene.target_part)
    ET.indent(root)
    return ET.tostring(root, encoding="unicode") + "\n"


# ---------------------------------------------------------------------------
# Scene generation
# ---------------------------------------------------------------------------

DOOR_THICKNESS = 0.02
HINGES = ("left", "right", "bottom")


def _cabinet(rng, sample_count):
    width = rng.uniform(0.5, 0.9)
    depth = rng.uniform(0.4, 0.6)
    height = rng.uniform(0.5, 1.0)
    base = PartGeometry("cabinet", (0.0, 0.0, height / 2), (width, depth, height), sample_count)
    return base, width, depth, height


def make_door_scene(name, rng, sample_count=config.DEFAULT_SAMPLE_COUNT, hinge=None):
    """
    Cabinet with a front door hinged on one of its edges.

    The axis sign is chosen so that increasing q swings the door outward.
    The upper limit is drawn uniformly from [pi/2, pi].
    """
    base, width, depth, height = _cabinet(rng, sample_count)
    hinge = hinge or HINGES[int(rng.integers(len(HINGES)))]
    door = PartGeometry(
        "door",
        (0.0, -depth / 2 - DOOR_THICKNESS / 2, height / 2),
        (width, DOOR_THICKNESS, height),
        sample_count,
    )
    if hinge == "left":
        axis, origin = (0.0, 0.0, -1.0), (-width / 2, -depth / 2, 0.0)
    elif hinge == "right":
        axis, origin = (0.0, 0.0, 1.0), (width / 2, -depth / 2, 0.0)
    else:
        axis, origin = (1.0, 0.0, 0.0), (0.0, -depth / 2, 0.0)
    joint = JointSpec(
        JointType.REVOLUTE, axis, origin, 0.0, rng.uniform(np.pi / 2, np.pi),
        name="door_hinge", parent="cabinet",
    )
    return ArticulatedScene(
        name=name, base_parts=[base], child_parts=[ChildPart("door", door, joint)],
        target_part="door", sample_seed=int(rng.integers(2**31 - 1)),
    )


def make_drawer_scene(name, rng, sample_count=config.DEFAULT_SAMPLE_COUNT):
    """Cabinet with a drawer that slides out of its front face; travel drawn from [0.2, 0.5] m."""
    base, width, depth, height = _cabinet(rng, sample_count)
    center = (0.0, -depth / 2 + 0.45 * depth, 0.6 * height)
    drawer = PartGeometry("drawer", center, (0.8 * width, 0.9 * depth, 0.25 * height), sample_count)
    joint = JointSpec(
        JointType.PRISMATIC, (0.0, -1.0, 0.0), center, 0.0, rng.uniform(0.2, 0.5),
        name="drawer_slide", parent="cabinet",
    )
    return ArticulatedScene(
        name=name, base_parts=[base], child_parts=[ChildPart("drawer", drawer, joint)],
        target_part="drawer", sample_seed=int(rng.integers(2**31 - 1)),
    )


def generate_scenes(count, seed, sample_count=config.DEFAULT_SAMPLE_COUNT):
    """Alternate door (even index) and drawer (odd index) scenes from one seeded stream."""
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    rng = np.random.default_rng(seed)
    scenes = []
    for i in range(count):
        if i % 2 == 0:
            scenes.append(make_door_scene(f"scene_{i:03d}_door", rng, sample_count))
        else:
            scenes.append(make_drawer_scene(f"scene_{i:03d}_drawer", rng, sample_count))
    return scenes
