"""
Field predictors: the boundary where dense flow and projection fields enter the pipeline.

Three sources are provided. The exact oracle computes ground truth, the noisy
oracle perturbs it with a seeded error model, and replay reads fields written
by an external model.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np
from scipy.spatial.transform import Rotation

import config
import data_handler
from errors import FieldsFormatError
from fields import DenseFields, gt_fields

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class NoiseModel:
    """
    Per-point error model for predicted fields.

    flow_sigma is the scale (radians) of a half-normal rotation of each flow
    vector, proj_sigma the relative magnitude noise of each projection and
    proj_bias_deg a fixed tilt of each projection toward its flow.
    proj_shrink_sigma scales one shrinkage shared by every projection of a
    prediction: all projections are multiplied by 1 - min(|N(0, sigma)|, 0.95),
    drawn again for every prediction. It moves the recovered axis toward the part.
    occlusion_flip_gain reverses flow vectors with probability proportional
    to the hidden share of the target part.
    """

    flow_sigma: float = 0.0
    proj_sigma: float = 0.0
    proj_bias_deg: float = 0.0
    proj_shrink_sigma: float = 0.0
    occlusion_flip_gain: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if min(self.flow_sigma, self.proj_sigma, self.proj_shrink_sigma) < 0:
            raise ValueError(
                f"noise sigmas must be >= 0, got flow_sigma={self.flow_sigma}, "
                f"proj_sigma={self.proj_sigma}, proj_shrink_sigma={self.proj_shrink_sigma}"
            )
        if not 0.0 <= self.proj_bias_deg < 90.0:
            raise ValueError(f"proj_bias_deg must be in [0, 90), got {self.proj_bias_deg}")
        if not 0.0 <= self.occlusion_flip_gain <= 1.0:
            raise ValueError(f"occlusion_flip_gain must be in [0, 1], got {self.occlusion_flip_gain}")

    @property
    def is_exact(self):
        return (
            self.flow_sigma == 0
            and self.proj_sigma == 0
            and self.proj_bias_deg == 0
            and self.proj_shrink_sigma == 0
            and self.occlusion_flip_gain == 0
        )

    @classmethod
    def from_preset(cls, name, seed=0):
        if name not in config.NOISE_PRESETS:
            raise ValueError(f"unknown noise preset '{name}', choose from {sorted(config.NOISE_PRESETS)}")
        return cls(seed=seed, **(config.NOISE_PRESETS[name] or {}))


def predict_exact(scene, obs):
    return gt_fields(obs, scene.target_joint)


def _random_perpendicular(rng, vectors):
    """One uniformly random unit vector perpendicular to each row."""
    units = vectors / np.linalg.norm(vectors, axis=1, keepdims=True)
    axes = rng.normal(size=vectors.shape)
    axes -= np.einsum("ij,ij->i", axes, units)[:, None] * units
    norms = np.linalg.norm(axes, axis=1, keepdims=True)
    # a draw parallel to the vector has probability zero; fall back to any perpendicular
    bad = norms[:, 0] <= config.DEGENERATE_EPS
    if bad.any():
        fallback = np.cross(units[bad], np.eye(3)[np.argmin(np.abs(units[bad]), axis=1)])
        axes[bad] = fallback
        norms[bad] = np.linalg.norm(fallback, axis=1, keepdims=True)
    return axes / norms


def predict_noisy(scene, obs, noise):
    """
    Ground-truth fields perturbed by a seeded NoiseModel.

    Only masked points are perturbed, so off-mask entries stay exactly zero.
    All random draws come from one generator seeded by ``noise.seed`` in a
    fixed order, so equal inputs give bit-identical fields.

    Args:
        scene: ArticulatedScene the observation was rendered from
        obs: Observation
        noise: NoiseModel

    Returns:
        DenseFields
    """
    truth = predict_exact(scene, obs)
    if noise.is_exact or not obs.mask.any():
        return truth

    rng = np.random.default_rng(noise.seed)
    mask = obs.mask
    n = int(mask.sum())
    flow = truth.flow[mask].copy()
    proj = truth.projection[mask].copy()
    moving = np.linalg.norm(flow, axis=1) > config.DEGENERATE_EPS

    angles = np.abs(rng.normal(0.0, noise.flow_sigma, size=n)) if noise.flow_sigma > 0 else np.zeros(n)
    if noise.flow_sigma > 0 and moving.any():
        axes = _random_perpendicular(rng, flow[moving])
        flow[moving] = Rotation.from_rotvec(axes * angles[moving, None]).apply(flow[moving])

    hidden = 1.0 - obs.masked_count / scene.target.geometry.sample_count
    flips = rng.random(n) < noise.occlusion_flip_gain * max(hidden, 0.0)
    flow[flips] *= -1.0

    scale = 1.0 + rng.normal(0.0, noise.proj_sigma, size=n) if noise.proj_sigma > 0 else np.ones(n)
    if noise.proj_bias_deg > 0 and moving.any():
        direction = flow[moving] / np.linalg.norm(flow[moving], axis=1, keepdims=True)
        tilt = np.tan(np.radians(noise.proj_bias_deg)) * np.linalg.norm(proj[moving], axis=1)
        proj[moving] = proj[moving] + tilt[:, None] * direction
    proj *= scale[:, None]
    if noise.proj_shrink_sigma > 0:
        shrink = min(abs(rng.normal(0.0, noise.proj_shrink_sigma)), config.MAX_PROJ_SHRINK)
        proj *= 1.0 - shrink

    logger.debug(
        "noisy fields: %d masked points, %d flipped (hidden fraction %.3f)", n, int(flips.sum()), hidden
    )
    out_flow = np.zeros_like(truth.flow)
    out_proj = np.zeros_like(truth.projection)
    out_flow[mask] = flow
    out_proj[mask] = proj
    return DenseFields(out_flow, out_proj, mask)


def predict_replay(path, expected_count=None):
    """Fields read back from a fields CSV, validated against the expected point count."""
    _, fields = data_handler.read_fields_csv(path, expected_count=expected_count)
    return fields


class ExactPredictor:
    label = "exact"

    def __call__(self, scene, obs, step=0):
        return predict_exact(scene, obs)


class NoisyPredictor:
    """Noisy oracle drawing an independent seed for every replan index."""

    def __init__(self, noise, label="noisy"):
        self.noise = noise
        self.label = label

    def __call__(self, scene, obs, step=0):
        seed = int(np.random.SeedSequence([self.noise.seed, step]).generate_state(1)[0])
        return predict_noisy(scene, obs, replace(self.noise, seed=seed))


class ReplayPredictor:
    """Serves the same recorded fields for every call; the observation must match in size."""

    label = "replay"

    def __init__(self, path):
        self.path = path
        self.fields = predict_replay(path)

    def __call__(self, scene, obs, step=0):
        if len(self.fields) != len(obs):
            raise FieldsFormatError(
                f"{self.path}: recorded fields have {len(self.fields)} points, observation has {len(obs)}"
            )
        return self.fields


def build_predictor(noise=None, seed=0):
    """
    Predictor for a preset name, a NoiseModel or None (exact).

    Args:
        noise: preset name from config.NOISE_PRESETS, NoiseModel, or None
        seed: Seed used when noise is a preset name

    Returns:
        callable: predictor(scene, obs, step) -> DenseFields
    """
    if noise is None:
        return ExactPredictor()
    if isinstance(noise, str):
        label = noise
        noise = NoiseModel.from_preset(noise, seed=seed)
    else:
        label = "custom"
    if noise.is_exact:
        return ExactPredictor()
    return NoisyPredictor(noise, label=label)
