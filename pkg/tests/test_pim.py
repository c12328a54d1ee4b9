import numpy as np
import pytest

from safeinsert.geometry import Pose
from safeinsert.pim import (
    Belief,
    BeliefCollapse,
    ComponentSpec,
    DefectModel,
    PimParams,
    condition_on_failure,
    feasible,
    infer_goal,
    init_belief,
    random_retry_goal,
    synthetic_tcomp,
)

GOAL = Pose.from_xyz(-0.865, -0.164, 0.34)


def brute_feasible(spec, pose, goal):
    """Per-pin distance check written out longhand."""
    dx = pose.t[0] - goal.t[0]
    dy = pose.t[1] - goal.t[1]
    for (px, py), (bx, by) in zip(spec.pin_positions(), spec.defect_offsets):
        pin = (px + bx + dx, py + by + dy)
        hole = (px, py)
        if np.hypot(pin[0] - hole[0], pin[1] - hole[1]) > spec.clearance:
            return False
    return True


def test_spec_defaults():
    s = ComponentSpec()
    assert s.n_pins == 8 and s.clearance == pytest.approx(0.0002)
    assert np.allclose(s.pin_positions().mean(axis=0), 0.0)
    with pytest.raises(ValueError):
        ComponentSpec(pin_radius=0.0005, hole_radius=0.0005)
    with pytest.raises(ValueError):
        s.defect_offsets[0, 0] = 1.0


def test_feasible_examples():
    s = ComponentSpec()
    assert feasible(s, GOAL, GOAL)
    assert not feasible(s, GOAL.offset(dx=0.0003), GOAL)
    assert feasible(s, GOAL.offset(dx=0.00019), GOAL)


def test_bent_pin_against_brute_force():
    d = np.zeros((8, 2))
    d[2] = [0.00015, 0.0]
    s = ComponentSpec().with_defects(d)
    for dx in np.linspace(-0.0004, 0.0004, 81):
        for dy in (-0.0001, 0.0, 0.00005):
            p = GOAL.offset(dx=dx, dy=dy)
            assert feasible(s, p, GOAL) == brute_feasible(s, p, GOAL)
    # shifting against the bend recentres the bent pin and keeps the rest within clearance
    assert feasible(s, GOAL.offset(dx=-0.00007), GOAL)


def test_random_specs_against_brute_force(rng):
    dm = DefectModel(p_defect=0.5)
    for _ in range(200):
        s = ComponentSpec().with_defects(dm.sample(rng, 1, 8)[0])
        p = GOAL.offset(*rng.uniform(-0.0004, 0.0004, 2))
        assert feasible(s, p, GOAL) == brute_feasible(s, p, GOAL)


def test_defect_model(rng):
    d = DefectModel().sample(rng, 4000, 8)
    assert np.max(np.linalg.norm(d, axis=2)) <= 0.00045
    frac = np.mean(np.any(d != 0, axis=2))
    assert abs(frac - 0.15) < 0.01


def test_params_validation():
    with pytest.raises(ValueError):
        PimParams(n_pop=5, n_elite=10)
    with pytest.raises(ValueError):
        PimParams(n_smp=0)


def test_init_belief_degenerate():
    p = PimParams(sigma_x=0.0, sigma_y=0.0, n_smp=20)
    b = init_belief(p, GOAL, DefectModel(p_defect=0.0), seed=0)
    assert np.all(b.goals == GOAL.t[:2]) and not np.any(b.defects)
    assert np.allclose(b.weights, 1 / 20)


def test_init_belief_spread():
    b = init_belief(PimParams(n_smp=1000, sigma_x=0.0003, sigma_y=0.0003), GOAL, DefectModel(), seed=1)
    sd = b.goals.std(axis=0)
    assert np.all(np.abs(sd - 0.0003) < 0.15 * 0.0003)


def test_init_belief_deterministic():
    a = init_belief(PimParams(), GOAL, DefectModel(), seed=5)
    b = init_belief(PimParams(), GOAL, DefectModel(), seed=5)
    assert np.array_equal(a.goals, b.goals) and np.array_equal(a.defects, b.defects)


def test_condition_vacuous():
    b = init_belief(PimParams(n_smp=200), GOAL, DefectModel(), seed=2)
    c = condition_on_failure(b, GOAL.offset(dx=0.01))
    assert np.array_equal(c.weights, b.weights) and np.array_equal(c.goals, b.goals)
    assert len(c.history) == 1


def test_condition_collapse():
    p = PimParams(sigma_x=0.0, sigma_y=0.0, n_smp=10)
    b = init_belief(p, GOAL, DefectModel(p_defect=0.0), seed=0)
    with pytest.raises(BeliefCollapse):
        condition_on_failure(b, GOAL)
    with pytest.raises(BeliefCollapse):
        condition_on_failure(Belief(**{**b.__dict__, "rng": None}), GOAL)


def two_hypotheses():
    goals = np.array([[0.0, 0.0], [0.001, 0.0]])
    defects = np.zeros((2, 8, 2))
    return Belief(goals, defects, np.array([0.5, 0.5]), 0.0, 0.0, Pose(), 0.0002, DefectModel(), [], None)


def test_condition_two_hypotheses():
    b = condition_on_failure(two_hypotheses(), Pose())
    assert list(b.weights) == [0.0, 1.0]
    goal, prob = infer_goal(b, PimParams(n_gen=10, n_pop=20, n_elite=5, sigma0=0.0005), seed=0)
    assert prob == 1.0
    assert np.linalg.norm(goal.t[:2] - [0.001, 0.0]) <= 0.0002


def test_condition_zeroes_feasible_weights(rng):
    b = init_belief(PimParams(n_smp=300), GOAL, DefectModel(), seed=3)
    b.rng = None
    x = GOAL.offset(dx=0.0001)
    was = b.feasible_at(x.t[:2])
    c = condition_on_failure(b, x)
    assert np.all(c.weights[was] == 0.0)
    assert c.weights.sum() == pytest.approx(1.0)


def test_refill_yields_consistent_samples():
    b = init_belief(PimParams(n_smp=300), GOAL, DefectModel(), seed=4)
    c = condition_on_failure(b, GOAL)
    c = condition_on_failure(c, GOAL.offset(dx=0.0002))
    assert c.n == 300
    for xy in c.history:
        assert not np.any(c.feasible_at(xy))
    assert np.allclose(c.weights, 1 / 300)


def test_infer_single_hypothesis():
    goals = np.array([[0.0004, -0.0002]])
    b = Belief(goals, np.zeros((1, 8, 2)), np.ones(1), 0.0, 0.0, Pose(), 0.0002, DefectModel(), [], None)
    goal, prob = infer_goal(b, PimParams(), seed=0)
    assert prob == 1.0
    assert np.linalg.norm(goal.t[:2] - goals[0]) <= 0.0002


def test_infer_zero_noise_returns_perceived():
    p = PimParams(sigma_x=0.0, sigma_y=0.0)
    b = init_belief(p, GOAL, DefectModel(p_defect=0.0), seed=0)
    goal, prob = infer_goal(b, p, seed=3)
    assert np.array_equal(goal.t, GOAL.t) and prob == 1.0


def test_max_prob_is_recomputable():
    p = PimParams(n_smp=400)
    b = init_belief(p, GOAL, DefectModel(), seed=6)
    b = condition_on_failure(b, GOAL)
    goal, prob = infer_goal(b, p, seed=1)
    direct = np.sum(b.weights[b.feasible_at(goal.t[:2])])
    assert 0.0 <= prob <= 1.0 and prob == pytest.approx(direct, abs=1e-12)
    assert goal.t[2] == GOAL.t[2] and np.array_equal(goal.r, GOAL.r)


def test_infer_deterministic():
    p = PimParams(n_smp=200)
    b = init_belief(p, GOAL, DefectModel(), seed=8)
    assert np.array_equal(infer_goal(b, p, 4)[0].vector(), infer_goal(b, p, 4)[0].vector())


def test_infer_near_grid_optimum():
    p = PimParams(n_smp=300)
    grid = np.arange(-0.001, 0.001 + 1e-12, 0.00005)
    G = np.array([[x, y] for x in grid for y in grid])
    for seed in range(3):
        b = init_belief(p, GOAL, DefectModel(), seed=seed)
        b = condition_on_failure(b, GOAL)
        _, prob = infer_goal(b, p, seed)
        best = b.success_probability(GOAL.t[:2] + G).max()
        assert best - prob <= 0.05


def test_belief_csv(tmp_path):
    b = init_belief(PimParams(n_smp=5), GOAL, DefectModel(), seed=0)
    b.write_csv(tmp_path / "b.csv")
    rows = (tmp_path / "b.csv").read_text().splitlines()
    assert rows[0].split(",")[:3] == ["goal_x", "goal_y", "d0_x"] and rows[0].endswith("weight")
    assert len(rows) == 6


def test_random_retry_and_tcomp(rng):
    g = random_retry_goal(GOAL, 0.0003, 0.0003, rng)
    assert g.t[2] == GOAL.t[2] and not np.array_equal(g.t, GOAL.t)
    assert synthetic_tcomp(PimParams(), 2e-6) == pytest.approx(2e-6 * 500 * 50 * 10)
