"""Shared fixtures: small reference scenes and observations."""

import numpy as np
import pytest

from scene import OcclusionModel, make_door_scene, make_drawer_scene, parse_scene, render_observation

MINIMAL_DOOR = """
<robot name="minimal_door" sample_seed="3">
  <link name="cabinet">
    <visual>
      <origin xyz="0 0 0.5"/>
      <geometry><box size="0.6 0.5 1.0"/></geometry>
    </visual>
  </link>
  <link name="door" sample_count="200">
    <visual>
      <origin xyz="0 -0.26 0.5"/>
      <geometry><box size="0.6 0.02 1.0"/></geometry>
    </visual>
  </link>
  <joint name="hinge" type="revolute">
    <parent link="cabinet"/>
    <child link="door"/>
    <origin xyz="0.3 -0.25 0"/>
    <axis xyz="0 0 2"/>
    <limit lower="0" upper="1.5"/>
  </joint>
  <target link="door"/>
</robot>
"""


@pytest.fixture
def minimal_door_text():
    return MINIMAL_DOOR


@pytest.fixture
def door_scene():
    return make_door_scene("door_ref", np.random.default_rng(7), sample_count=300, hinge="right")


@pytest.fixture
def bottom_door_scene():
    return make_door_scene("door_bottom", np.random.default_rng(11), sample_count=300, hinge="bottom")


@pytest.fixture
def drawer_scene():
    return make_drawer_scene("drawer_ref", np.random.default_rng(7), sample_count=300)


@pytest.fixture
def minimal_door():
    return parse_scene(MINIMAL_DOOR)


@pytest.fixture
def door_obs(door_scene):
    joint = door_scene.target_joint
    return render_observation(door_scene, joint.limit_lower + 0.4, OcclusionModel())


@pytest.fixture
def drawer_obs(drawer_scene):
    joint = drawer_scene.target_joint
    return render_observation(drawer_scene, joint.limit_lower + 0.1, OcclusionModel())
