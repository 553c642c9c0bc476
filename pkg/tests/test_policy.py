import math

import numpy as np
import pytest
from scipy import stats

from legpress.geom import PointCloud, RigidTransform, apply_transform, rot_z, rotation_exp
from legpress.policy import (
    ActorMap,
    CriticMap,
    GoalSpec,
    NoPlanError,
    ObjectCentricAction,
    flow_baseline,
    goal_flow,
    load_maps,
    planning_baseline,
    random_location_baseline,
    save_maps,
    select_greedy,
    select_softmax,
)
from legpress.sensing import full_scan
from legpress.simworld import Box, SimObject, rest_pose_on_ground


def make_box_obj(dims=(0.08, 0.08, 0.08), xy=(0.0, 0.0), yaw=0.0):
    shape = Box(dims)
    obj = SimObject.from_shape(shape, RigidTransform.identity())
    obj.pose = rest_pose_on_ground(shape, xy=xy, yaw=yaw)
    return obj


def observed(obj, n=400, seed=0):
    return full_scan(obj, n, seed)


# -- selection ---------------------------------------------------------------


def test_greedy_single_point_single_channel():
    a = ActorMap(np.array([[[0.1, 0.0, 0.0]]]))
    c = CriticMap(np.array([[-1.0]]))
    act = select_greedy(a, c)
    assert act.contact_index == 0
    assert act.leg == "front_left"


def test_greedy_picks_max_q():
    a = ActorMap(np.arange(9, dtype=float).reshape(3, 1, 3))
    c = CriticMap(np.array([[-5.0], [-1.0], [-3.0]]))
    act = select_greedy(a, c)
    assert act.contact_index == 1
    assert np.allclose(act.motion_params, [3.0, 4.0, 5.0])


def test_greedy_two_channels_right_leg():
    n = 10
    q = np.full((n, 2), -10.0)
    q[7, 1] = -0.5
    a = ActorMap(np.zeros((n, 2, 3)))
    c = CriticMap(q)
    act = select_greedy(a, c)
    assert act.contact_index == 7
    assert act.leg == "front_right"


def test_greedy_tie_breaks_lowest_index_then_left():
    q = np.full((4, 2), -3.0)
    a = ActorMap(np.zeros((4, 2, 3)))
    act = select_greedy(a, CriticMap(q))
    assert act.contact_index == 0
    assert act.leg == "front_left"


def test_greedy_permutation_invariance():
    rng = np.random.default_rng(80)
    n = 50
    q = rng.uniform(-20.0, 0.0, size=(n, 2))
    m = rng.normal(size=(n, 2, 3))
    act = select_greedy(ActorMap(m), CriticMap(q))
    perm = rng.permutation(n)
    act_p = select_greedy(ActorMap(m[perm]), CriticMap(q[perm]))
    assert perm[act_p.contact_index] == act.contact_index
    assert np.array_equal(act_p.motion_params, act.motion_params)


def test_greedy_invariant_to_constant_q_shift():
    rng = np.random.default_rng(81)
    q = rng.uniform(-19.0, -1.0, size=(30, 1))
    m = rng.normal(size=(30, 1, 3))
    a1 = select_greedy(ActorMap(m), CriticMap(q))
    a2 = select_greedy(ActorMap(m), CriticMap(q + 0.9))
    assert a1.contact_index == a2.contact_index


def test_softmax_uniform_when_equal():
    c = CriticMap(np.full((5, 1), -2.0))
    counts = np.zeros(5)
    for s in range(10000):
        idx, _ = select_softmax(c, 0.1, seed=s)
        counts[idx] += 1
    # 3 sigma band around uniform
    expected = 2000.0
    sigma = math.sqrt(10000 * 0.2 * 0.8)
    assert np.all(np.abs(counts - expected) < 3 * sigma)


def test_softmax_tiny_temperature_matches_greedy():
    rng = np.random.default_rng(82)
    q = rng.uniform(-20.0, -1.0, size=(20, 1))
    best = int(np.argmax(q))
    hits = 0
    for s in range(10000):
        idx, _ = select_softmax(CriticMap(q), 1e-6, seed=s)
        hits += idx == best
    assert hits >= 9990


def test_softmax_large_gap_never_picks_bad():
    c = CriticMap(np.array([[0.0], [-20.0]]))
    # p(bad) = exp(-200) analytically, far below 1e-10
    for s in range(10000):
        idx, _ = select_softmax(c, 0.1, seed=s)
        assert idx == 0


def test_softmax_determinism_per_seed():
    c = CriticMap(np.random.default_rng(83).uniform(-20, 0, size=(40, 2)))
    assert select_softmax(c, 0.1, seed=5) == select_softmax(c, 0.1, seed=5)


# -- goal flow ----------------------------------------------------------------


def test_goal_flow_identity_zero():
    cloud = PointCloud(np.random.default_rng(84).normal(size=(50, 3)))
    _, mean = goal_flow(cloud, cloud)
    assert mean == 0.0


def test_goal_flow_translation_exact():
    cloud = PointCloud(np.random.default_rng(85).normal(size=(50, 3)))
    t = RigidTransform(np.eye(3), [0.15, 0.0, 0.0])
    _, mean = goal_flow(cloud, apply_transform(t, cloud))
    assert abs(mean - 0.15) < 1e-12


def test_goal_flow_rotation_matches_brute_force_and_closed_form():
    # circle cloud about its centroid: mean flow = 2 sin(theta/2) * radius
    n, r, theta = 256, 0.2, 0.7
    ang = np.linspace(0, 2 * math.pi, n, endpoint=False)
    pts = np.column_stack([r * np.cos(ang), r * np.sin(ang), np.zeros(n)])
    cloud = PointCloud(pts + np.array([0.4, -0.2, 0.1]))
    t = RigidTransform.rotation_about(rot_z(theta), cloud.centroid)
    goal = apply_transform(t, cloud)
    flow, mean = goal_flow(cloud, goal)
    brute = np.mean([np.linalg.norm(goal.points[i] - cloud.points[i]) for i in range(n)])
    assert abs(mean - brute) < 1e-15
    assert abs(mean - 2.0 * math.sin(theta / 2.0) * r) < 1e-9


def test_goal_flow_size_mismatch_rejected():
    a = PointCloud(np.zeros((5, 3)))
    b = PointCloud(np.zeros((6, 3)))
    with pytest.raises(ValueError):
        goal_flow(a, b)


def test_success_threshold_iff_reward():
    # success (mean flow < 0.03) iff reward > -0.03
    rng = np.random.default_rng(86)
    cloud = PointCloud(rng.normal(scale=0.05, size=(100, 3)))
    for _ in range(50):
        t = RigidTransform(rotation_exp(rng.normal(scale=0.1, size=3)),
                           rng.normal(scale=0.03, size=3))
        _, mean = goal_flow(cloud, apply_transform(t, cloud))
        assert (mean < 0.03) == (-mean > -0.03)


# -- baselines ------------------------------------------------------------------


def push_goal(obj, dxy):
    d = np.array([dxy[0], dxy[1], 0.0])
    return GoalSpec.from_cloud(RigidTransform(np.eye(3), d), observed(obj))


def flip_goal(obj, direction_y=-1.0):
    # 90 degree flip about the x axis: top travels toward direction_y
    angle = math.copysign(math.pi / 2.0, -direction_y)
    R = np.array([[1.0, 0, 0],
                  [0, math.cos(angle), -math.sin(angle)],
                  [0, math.sin(angle), math.cos(angle)]])
    t = RigidTransform.rotation_about(R, obj.pose.translation)
    return GoalSpec.from_cloud(t, observed(obj))


def test_planning_push_contact_on_back_face():
    obj = make_box_obj()
    cloud = observed(obj)
    goal = push_goal(obj, (0.15, 0.0))
    act = planning_baseline(cloud, goal, obj)
    contact = cloud.points[act.contact_index]
    # center of the -x face: x at the face, y,z near the centroid
    assert contact[0] < obj.pose.translation[0] - 0.03
    assert abs(contact[1] - obj.pose.translation[1]) < 0.02
    assert abs(contact[2] - obj.pose.translation[2]) < 0.02
    # motion points +x with a downward pitch
    m = act.motion_params
    assert m[0] > 0
    assert m[2] < 0
    assert abs(m[1]) < 1e-9
    assert abs(-m[2] / m[0] - math.tan(math.radians(16.0))) < 1e-9


def test_planning_flip_contact_top_edge():
    obj = make_box_obj()
    cloud = observed(obj)
    goal = flip_goal(obj, direction_y=-1.0)  # top travels toward -y
    act = planning_baseline(cloud, goal, obj)
    contact = cloud.points[act.contact_index]
    # top edge of the +y face (the side opposite the flip direction)
    assert contact[2] > obj.pose.translation[2] + 0.03
    assert contact[1] > obj.pose.translation[1] + 0.03
    # motion horizontal toward -y
    m = act.motion_params
    assert m[1] < 0
    assert abs(m[2]) < 1e-9


def test_planning_flip_then_push_decomposition():
    obj = make_box_obj()
    cloud = observed(obj)
    d = np.array([0.12, 0.03, 0.0])
    angle = math.pi / 2.0
    R = np.array([[1.0, 0, 0],
                  [0, math.cos(angle), -math.sin(angle)],
                  [0, math.sin(angle), math.cos(angle)]])
    rel = RigidTransform(R, d - R @ obj.pose.translation + obj.pose.translation)
    goal = GoalSpec.from_cloud(rel, cloud)
    act = planning_baseline(cloud, goal, obj)
    # flip executes first: horizontal motion, top-edge contact
    assert abs(act.motion_params[2]) < 1e-9
    assert cloud.points[act.contact_index][2] > obj.pose.translation[2] + 0.03


def test_planning_no_plan_for_zero_goal():
    obj = make_box_obj()
    cloud = observed(obj)
    goal = GoalSpec.from_cloud(RigidTransform.identity(), cloud)
    with pytest.raises(NoPlanError):
        planning_baseline(cloud, goal, obj)


def test_flow_baseline_pure_translation_everywhere():
    obj = make_box_obj()
    cloud = observed(obj)
    goal = push_goal(obj, (0.15, 0.0))
    flow, _ = goal_flow(cloud, goal.goal_cloud)
    assert np.allclose(flow, [0.15, 0.0, 0.0])
    act = flow_baseline(cloud, goal, obj)
    assert np.allclose(act.motion_params, [0.15, 0.0, 0.0])


def test_flow_baseline_flip_matches_rigid_motion():
    obj = make_box_obj()
    cloud = observed(obj)
    goal = flip_goal(obj)
    act = flow_baseline(cloud, goal, obj)
    i = act.contact_index
    expect = goal.goal_cloud.points[i] - cloud.points[i]
    assert np.max(np.abs(act.motion_params - expect)) < 1e-9


def test_flow_baseline_rotation_equivariance():
    obj = make_box_obj()
    cloud = observed(obj)
    goal = push_goal(obj, (0.12, -0.04))
    act = flow_baseline(cloud, goal, obj)
    R = rot_z(0.6)
    w = RigidTransform(R, np.zeros(3))
    obj2 = make_box_obj()
    obj2.pose = RigidTransform(R @ obj.pose.rotation, R @ obj.pose.translation)
    cloud2 = apply_transform(w, cloud)
    rel2 = RigidTransform(R @ goal.relative_transform.rotation @ R.T,
                          R @ goal.relative_transform.translation)
    goal2 = GoalSpec.from_cloud(rel2, cloud2)
    act2 = flow_baseline(cloud2, goal2, obj2)
    assert np.max(np.abs(act2.motion_params - R @ act.motion_params)) < 1e-9


def test_random_location_single_point():
    cloud = PointCloud([[0.1, 0.2, 0.3]])
    goal = GoalSpec.from_cloud(RigidTransform(np.eye(3), [0.1, 0, 0]), cloud)
    act = random_location_baseline(cloud, goal, seed=1)
    assert act.contact_index == 0


def test_random_location_uniformity_chi_square():
    obj = make_box_obj()
    cloud = observed(obj, n=400)
    goal = push_goal(obj, (0.1, 0.0))
    counts = np.zeros(400)
    for s in range(10000):
        act = random_location_baseline(cloud, goal, seed=s)
        counts[act.contact_index] += 1
    chi2 = float(np.sum((counts - 25.0) ** 2 / 25.0))
    assert chi2 < stats.chi2.ppf(0.99, df=399)


def test_random_location_deterministic_per_seed():
    obj = make_box_obj()
    cloud = observed(obj)
    goal = push_goal(obj, (0.1, 0.0))
    a = random_location_baseline(cloud, goal, seed=42)
    b = random_location_baseline(cloud, goal, seed=42)
    assert a.contact_index == b.contact_index
    assert np.array_equal(a.motion_params, b.motion_params)


# -- map interchange ---------------------------------------------------------------


def test_maps_roundtrip(tmp_path):
    rng = np.random.default_rng(87)
    actor = ActorMap(rng.normal(size=(25, 2, 3)))
    critic = CriticMap(rng.uniform(-20, 0, size=(25, 2)))
    path = tmp_path / "maps.txt"
    save_maps(actor, critic, str(path))
    a2, c2 = load_maps(str(path))
    assert np.array_equal(a2.motion_params, actor.motion_params)
    assert np.array_equal(c2.q_values, critic.q_values)
    # selection is identical through the roundtrip
    s1 = select_greedy(actor, critic)
    s2 = select_greedy(a2, c2)
    assert s1.contact_index == s2.contact_index
    assert s1.leg == s2.leg
    assert np.array_equal(s1.motion_params, s2.motion_params)


def test_critic_clamp_enforced():
    with pytest.raises(ValueError):
        CriticMap(np.array([[1.0]]))
    with pytest.raises(ValueError):
        CriticMap(np.array([[-25.0]]))
