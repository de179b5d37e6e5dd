"""
Closed-loop articulation policy in a kinematic world, and the evaluation harness around it.

One rollout grasps the max-flow point of the target part and opens it by
repeatedly re-observing, re-estimating the articulation axis, planning a
K-step trajectory from the current contact and executing its first H steps.
The per-step flow-following baseline and the open-loop variant share the
same world model and metrics.
"""

from __future__ import annotations

import hashlib
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from enum import StrEnum
from typing import NamedTuple

import numpy as np
import pandas as pd
from tqdm import tqdm

import config
from errors import DegenerateGeometryError, NoContactError
from estimation import ClassifierMode, aggregate_axis, classify_articulation
from predictors import build_predictor
from scene import JointType, pose_part_points, render_observation
from trajectory import TrajectoryParams, default_goal, plan_full_pose

logger = logging.getLogger(__name__)


class PolicyKind(StrEnum):
    MPC = "flowbotpp"
    FLOW_FOLLOWING = "af_only"
    OPEN_LOOP = "no_mpc"


@dataclass(frozen=True)
class PolicyParams:
    H: int = config.DEFAULT_H
    K: int = config.DEFAULT_K
    phi_goal: float = None
    l_goal: float = None
    max_steps: int = config.DEFAULT_MAX_STEPS
    use_gs: bool = True
    use_mask: bool = True
    classifier_mode: ClassifierMode = ClassifierMode.ORACLE
    policy_kind: PolicyKind = PolicyKind.MPC
    replan: bool = True

    def __post_init__(self):
        object.__setattr__(self, "policy_kind", PolicyKind(self.policy_kind))
        object.__setattr__(self, "classifier_mode", ClassifierMode(self.classifier_mode))
        if self.policy_kind is PolicyKind.OPEN_LOOP:
            # the open-loop policy is the MPC policy executing its whole first plan
            object.__setattr__(self, "H", self.K)
            object.__setattr__(self, "replan", False)
        if self.K < 1:
            raise ValueError(f"K must be >= 1, got {self.K}")
        if self.H < 1:
            raise ValueError(f"H must be >= 1, got {self.H}")
        if self.policy_kind is PolicyKind.MPC and self.H > self.K:
            raise ValueError(f"H must not exceed K, got H={self.H}, K={self.K}")
        if self.max_steps < 1:
            raise ValueError(f"max_steps must be >= 1, got {self.max_steps}")

    @property
    def label(self):
        if self.policy_kind is PolicyKind.MPC and not self.use_gs:
            return "ap_only"
        return str(self.policy_kind)


@dataclass(frozen=True)
class WorldState:
    """Kinematic world: the scene at joint value q, with the gripper holding one cloud point."""

    scene: object
    q: float
    contact_id: int

    def __post_init__(self):
        self.scene.target_joint.check(self.q)

    @property
    def contact_position(self):
        closed = self.scene.closed_cloud[0][self.contact_id]
        return pose_part_points(self.scene.target_joint, closed[None], self.q)[0]


def step_world(world, target):
    """
    Move the held part as far as the joint allows toward a target contact position.

    Components of the target the joint cannot realise are projected away.

    Args:
        world: WorldState
        target: Desired contact position

    Returns:
        WorldState: with the new joint value, clamped to the limits
    """
    joint = world.scene.target_joint
    omega = joint.omega
    p = world.contact_position
    target = np.asarray(target, dtype=float)
    if joint.joint_type is JointType.PRISMATIC:
        dq = float((target - p) @ omega)
    else:
        a = joint.origin + float((p - joint.origin) @ omega) * omega
        u = p - a
        w = target - a
        u = u - (u @ omega) * omega
        w = w - (w @ omega) * omega
        dq = float(np.arctan2(omega @ np.cross(u, w), u @ w))
    return replace(world, q=joint.clamp(world.q + dq))


def select_contact(obs, flow):
    """
    Index (into obs) of the masked point with the largest flow norm.

    Raises:
        NoContactError: If the mask is empty
    """
    candidates = np.flatnonzero(obs.mask)
    if len(candidates) == 0:
        raise NoContactError("no masked point to grasp")
    norms = np.linalg.norm(np.asarray(flow)[candidates], axis=1)
    # argmax keeps the lowest index among ties
    return int(candidates[int(np.argmax(norms))])


@dataclass(frozen=True, eq=False)
class RolloutResult:
    q_trace: tuple
    contact_index: int
    normalized_distance: float
    success: bool
    steps_executed: int
    replan_count: int
    step_increments: tuple
    q_init: float
    q_goal: float
    contact_trace: np.ndarray = None
    first_plan: object = None
    policy: str = str(PolicyKind.MPC)
    joint_type: JointType = JointType.REVOLUTE

    def __post_init__(self):
        object.__setattr__(self, "q_trace", tuple(float(q) for q in self.q_trace))
        object.__setattr__(self, "step_increments", tuple(float(d) for d in self.step_increments))
        expected = normalized_distance(self.q_trace[-1], self.q_init, self.q_goal)
        if abs(expected - self.normalized_distance) > 1e-12:
            raise ValueError(
                f"normalized_distance {self.normalized_distance} does not match the trace ({expected})"
            )
        if self.success != (self.normalized_distance <= config.SUCCESS_DELTA):
            raise ValueError(f"success={self.success} contradicts normalized_distance={self.normalized_distance}")
        if len(self.step_increments) != self.steps_executed:
            raise ValueError(f"{len(self.step_increments)} increments for {self.steps_executed} steps")

    @classmethod
    def from_trace(cls, q_trace, q_init, q_goal, **kwargs):
        distance = normalized_distance(q_trace[-1], q_init, q_goal)
        return cls(
            q_trace=q_trace,
            normalized_distance=distance,
            success=distance <= config.SUCCESS_DELTA,
            q_init=q_init,
            q_goal=q_goal,
            **kwargs,
        )

    @property
    def q_end(self):
        return self.q_trace[-1]

    @property
    def dq_variance(self):
        return float(np.var(self.step_increments)) if self.step_increments else 0.0


def normalized_distance(q_end, q_init, q_goal):
    return abs(q_end - q_goal) / abs(q_goal - q_init)


class _Counter:
    """Consecutive-event counter for the termination rules."""

    def __init__(self, patience):
        self.patience = patience
        self.count = 0

    def update(self, event):
        self.count = self.count + 1 if event else 0
        return self.count >= self.patience


@dataclass
class _Episode:
    scene: object
    world: WorldState
    q_trace: list = field(default_factory=list)
    increments: list = field(default_factory=list)
    contacts: list = field(default_factory=list)

    def execute(self, target):
        before = self.world.q
        self.world = step_world(self.world, target)
        self.q_trace.append(self.world.q)
        self.increments.append(self.world.q - before)
        self.contacts.append(self.world.contact_position)

    @property
    def steps(self):
        return len(self.increments)


def _goal_params(params, joint, q):
    phi = params.phi_goal if params.phi_goal is not None else default_goal(joint, q)
    length = params.l_goal if params.l_goal is not None else default_goal(joint, q)
    return TrajectoryParams(K=params.K, phi_goal=phi, l_goal=length)


def _flow_at_contact(obs, fields, contact_id, position):
    """Predicted flow at the contact, or at the nearest visible masked point when it is hidden."""
    visible = np.flatnonzero(obs.mask)
    if len(visible) == 0:
        return None
    at_contact = visible[obs.point_index[visible] == contact_id]
    if len(at_contact):
        return fields.flow[at_contact[0]]
    nearest = visible[int(np.argmin(np.linalg.norm(obs.points[visible] - position, axis=1)))]
    return fields.flow[nearest]


def run_policy(scene, predictor, occ, params):
    """
    Open the target part of a scene with the selected policy.

    The articulation type is classified once from the first observation and
    the gripper attaches to the max-flow point. Every replan t renders a new
    observation with occlusion seed ``occ.seed + t`` and asks the predictor
    for fields. MPC plans from the true contact position and sends the
    first ``min(H, remaining)`` waypoints to step_world as targets.

    Termination: the goal is reached within 1e-6, max_steps waypoints have
    been executed, three consecutive replans moved the joint by less than
    1e-8, or three consecutive replans had no usable observation.

    Args:
        scene: ArticulatedScene
        predictor: callable (scene, obs, step) -> DenseFields
        occ: OcclusionModel
        params: PolicyParams

    Returns:
        RolloutResult
    """
    joint = scene.target_joint
    q_init, q_goal = joint.limit_lower, joint.limit_upper
    label = params.label

    obs = render_observation(scene, q_init, occ)
    fields = predictor(scene, obs, 0)
    try:
        local = select_contact(obs, fields.flow)
    except NoContactError:
        logger.info("scene %s: target part fully occluded at start, no contact", scene.name)
        return RolloutResult.from_trace(
            [q_init], q_init, q_goal, contact_index=-1, steps_executed=0, replan_count=0,
            step_increments=[], contact_trace=np.full((1, 3), np.nan), policy=label, joint_type=joint.joint_type,
        )

    contact_id = int(obs.point_index[local])
    articulation = classify_articulation(obs, fields, params.classifier_mode, joint)
    episode = _Episode(scene, WorldState(scene, q_init, contact_id))
    episode.q_trace.append(q_init)
    episode.contacts.append(episode.world.contact_position)
    logger.debug("scene %s: contact %d, articulation %s", scene.name, contact_id, articulation)

    if params.policy_kind is PolicyKind.FLOW_FOLLOWING:
        goal0 = _goal_params(params, joint, q_init)
        if articulation is JointType.REVOLUTE:
            p = episode.world.contact_position
            radius = np.linalg.norm(np.cross(joint.omega, p - joint.origin))
            epsilon = goal0.phi_goal / params.K * radius
        else:
            epsilon = goal0.l_goal / params.K

    stalls = _Counter(config.STALL_PATIENCE)
    failures = _Counter(config.STALL_PATIENCE)
    first_plan = None
    prev_direction = None
    t = 0
    while True:
        if episode.world.q >= q_goal - config.GOAL_TOLERANCE or episode.steps >= params.max_steps:
            break
        if t >= 4 * params.max_steps:
            logger.warning("scene %s: replan guard hit after %d replans", scene.name, t)
            break
        if t > 0:
            obs = render_observation(scene, episode.world.q, replace(occ, seed=occ.seed + t))
            fields = predictor(scene, obs, t)
        q_before = episode.world.q
        position = episode.world.contact_position
        remaining = params.max_steps - episode.steps
        t += 1

        if params.policy_kind is PolicyKind.FLOW_FOLLOWING:
            flow = _flow_at_contact(obs, fields, contact_id, position)
            if failures.update(flow is None):
                break
            if flow is not None:
                norm = np.linalg.norm(flow)
                step = epsilon * flow / norm if norm > config.DEGENERATE_EPS else np.zeros(3)
                episode.execute(position + step)
        else:
            try:
                estimate = aggregate_axis(obs, fields, articulation, params.use_gs, params.use_mask)
                if prev_direction is not None and estimate.omega @ prev_direction < 0:
                    estimate = estimate.flipped()
                goal = _goal_params(params, joint, episode.world.q)
                plan = plan_full_pose(position, np.eye(3), estimate, goal)
            except DegenerateGeometryError as e:
                logger.debug("scene %s replan %d: %s", scene.name, t, e)
                if failures.update(True):
                    break
                continue
            failures.update(False)
            if first_plan is None:
                first_plan = plan
            logger.info(
                "scene %s replan %d: q=%.4f support=%d", scene.name, t, episode.world.q, estimate.support_count
            )
            for waypoint in plan.waypoints[1 : min(params.H, remaining) + 1]:
                episode.execute(waypoint)
                if episode.world.q >= q_goal - config.GOAL_TOLERANCE:
                    break
            # the sign anchor follows only estimates that opened the part
            if episode.world.q - q_before > config.STALL_DQ:
                prev_direction = estimate.omega
            if not params.replan:
                break

        if stalls.update(abs(episode.world.q - q_before) < config.STALL_DQ):
            logger.debug("scene %s: stalled at q=%.4f", scene.name, episode.world.q)
            break

    return RolloutResult.from_trace(
        episode.q_trace, q_init, q_goal,
        contact_index=contact_id,
        steps_executed=episode.steps,
        replan_count=t,
        step_increments=episode.increments,
        contact_trace=np.array(episode.contacts),
        first_plan=first_plan,
        policy=label,
        joint_type=joint.joint_type,
    )


def trace_frame(result):
    """Per-step trace table; row 0 is the initial state with dq = 0."""
    contacts = np.asarray(result.contact_trace).reshape(-1, 3)
    return pd.DataFrame(
        {
            "step": np.arange(len(result.q_trace)),
            "q": result.q_trace,
            "dq": (0.0,) + result.step_increments,
            "contact_x": contacts[:, 0],
            "contact_y": contacts[:, 1],
            "contact_z": contacts[:, 2],
        }
    )[config.TRACE_HEADER]


def opening_profile(result, joint, steps=config.PROFILE_STEPS):
    """
    Opening fraction and angular acceleration per step, over a fixed number of steps.

    Traces shorter than ``steps`` hold their last joint value; longer traces
    are cut. Acceleration is the second difference of q starting from rest.
    """
    q = np.array(result.q_trace[: steps + 1])
    q = np.concatenate([q, np.full(steps + 1 - len(q), q[-1])])
    accel = np.diff(q, n=2, prepend=q[0], append=q[-1])
    return pd.DataFrame(
        {
            "step": np.arange(steps + 1),
            "opening_fraction": [joint.opening_fraction(v) for v in q],
            "angular_accel": accel,
        }
    )


def derive_seed(base_seed, scene_name, params, trial):
    """Deterministic 60-bit seed for one (scene, params, trial) cell."""
    payload = {
        "base_seed": int(base_seed),
        "scene": scene_name,
        "policy": params.label,
        "params": asdict(params),
        "trial": int(trial),
    }
    digest = hashlib.sha256(json.dumps(payload, sort_keys=True, default=str).encode()).hexdigest()
    return int(digest[:15], 16)


class Evaluation(NamedTuple):
    metrics: pd.DataFrame
    summary: pd.DataFrame
    profile: pd.DataFrame


def _noise_label(noise):
    if noise is None:
        return "exact"
    if isinstance(noise, str):
        return noise
    return "custom"


def _with_seed(noise, seed):
    if noise is None or isinstance(noise, str):
        return noise
    return replace(noise, seed=seed)


def _run_cell(scene, noise, occ, params, trial, base_seed):
    seed = derive_seed(base_seed, scene.name, params, trial)
    predictor = build_predictor(_with_seed(noise, seed), seed=seed)
    start = time.perf_counter()
    result = run_policy(scene, predictor, replace(occ, seed=seed), params)
    wall_ms = (time.perf_counter() - start) * 1000.0
    joint = scene.target_joint
    row = {
        "scene": scene.name,
        "policy": params.label,
        "H": params.H,
        "use_gs": params.use_gs,
        "use_mask": params.use_mask,
        "noise_preset": _noise_label(noise),
        "trial": trial,
        "seed": seed,
        "norm_dist": result.normalized_distance,
        "success": result.success,
        "steps": result.steps_executed,
        "replans": result.replan_count,
        "dq_var": result.dq_variance,
        "wall_ms": wall_ms,
        "joint_type": str(joint.joint_type),
        "final_open": joint.opening_fraction(result.q_end),
    }
    profile = opening_profile(result, joint)
    profile["policy"] = params.label
    profile["H"] = params.H
    profile["joint_type"] = str(joint.joint_type)
    return row, profile


def summarize(metrics, by_type=False):
    """
    Aggregate metrics per policy configuration.

    Args:
        metrics: Metrics table from evaluate
        by_type: Also split by joint type

    Returns:
        DataFrame: mean normalized distance, success rate, mean Δq variance,
        mean final opening and mean wall-clock per group
    """
    keys = ["policy", "H", "use_gs", "use_mask"] + (["joint_type"] if by_type else [])
    summary = (
        metrics.groupby(keys, sort=True)
        .agg(
            mean_norm_dist=("norm_dist", "mean"),
            success_rate=("success", "mean"),
            mean_dq_var=("dq_var", "mean"),
            mean_final_open=("final_open", "mean"),
            mean_wall_ms=("wall_ms", "mean"),
            rollouts=("trial", "size"),
        )
        .reset_index()
    )
    return summary


def evaluate(scenes, noise, occ, grid, trials, base_seed, workers=1, progress=False):
    """
    Run every (scene, params, trial) cell of an evaluation grid.

    Args:
        scenes: Non-empty list of ArticulatedScene
        noise: Noise preset name, NoiseModel, or None for exact fields
        occ: OcclusionModel; its seed is replaced per cell
        grid: List of PolicyParams
        trials: Trials per (scene, params)
        base_seed: Seed all cell seeds are derived from
        workers: Number of threads; results do not depend on it
        progress: Show a progress bar

    Returns:
        Evaluation: metrics sorted by (scene, policy, H, use_gs, use_mask, trial),
        summary from summarize, and the mean opening profile per (policy, H)
    """
    if not scenes:
        raise ValueError("evaluate needs at least one scene")
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    if not grid:
        raise ValueError("evaluate needs at least one policy configuration")

    cells = [(scene, params, trial) for scene in scenes for params in grid for trial in range(trials)]

    def run(cell):
        scene, params, trial = cell
        return _run_cell(scene, noise, occ, params, trial, base_seed)

    logger.info("evaluating %d rollouts on %d scenes", len(cells), len(scenes))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outputs = list(tqdm(pool.map(run, cells), total=len(cells), desc="rollouts", disable=not progress))
    else:
        outputs = [run(cell) for cell in tqdm(cells, desc="rollouts", disable=not progress)]

    metrics = pd.DataFrame([row for row, _ in outputs])
    metrics = metrics.sort_values(["scene", "policy", "H", "use_gs", "use_mask", "trial"], kind="stable")
    metrics = metrics.reset_index(drop=True)
    profile = (
        pd.concat([p for _, p in outputs], ignore_index=True)
        .groupby(["policy", "H", "step"], sort=True)[["opening_fraction", "angular_accel"]]
        .mean()
        .reset_index()
    )
    return Evaluation(metrics, summarize(metrics), profile)


def h_sweep_grid(values, base=None):
    """
    Policy grid for a horizon sweep such as "1,3,5,7,9,nompc".

    Raises:
        ValueError: For entries that are neither positive integers nor "nompc"
    """
    base = base or PolicyParams()
    grid = []
    for token in str(values).split(","):
        token = token.strip().lower()
        if token in ("nompc", "no_mpc"):
            grid.append(replace(base, policy_kind=PolicyKind.OPEN_LOOP))
        else:
            try:
                horizon = int(token)
            except ValueError:
                raise ValueError(f"invalid H-sweep entry '{token}', expected an integer or 'nompc'")
            grid.append(replace(base, H=horizon, policy_kind=PolicyKind.MPC))
    return grid
