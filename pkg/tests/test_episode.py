import numpy as np
import pytest

from safeinsert.episode import PIM, RANDOM, RetryPolicy, run_abstract_task, run_episode
from safeinsert.geometry import Pose
from safeinsert.occt import OcctParams
from safeinsert.pim import PimParams
from safeinsert.sia import FAIL, SUCCESS, SiaParams, check_log
from safeinsert.simenv import EnvConfig, TaskInstance, sample_task

CLEAN = EnvConfig(defect_prob=0.0, noise_x=0.0, noise_y=0.0)
TRUE = Pose.from_xyz(-0.865, -0.164, 0.34)


def episode(task, env=CLEAN, seed=0, **kw):
    from safeinsert.kinematics import reference_arm

    return run_episode(task, reference_arm(), OcctParams(), SiaParams(**kw), PimParams(), env, seed=seed)


def test_clean_task_succeeds_first_try():
    res = episode(sample_task(CLEAN, 0))
    assert res.stats.outcome == SUCCESS
    assert res.stats.attempts == 1 and res.stats.collisions == 0 and res.stats.max_force == 0.0
    assert check_log(res.log, res.stats).ok
    assert res.stats.t_insert > 0


def test_biased_goal_with_bent_pin_recovers():
    d = np.zeros((8, 2))
    d[5] = [0.0, 0.00015]
    spec = CLEAN.nominal_spec().with_defects(d)
    task = TaskInstance(spec, TRUE, TRUE.offset(dx=0.0003), seed=7)
    res = episode(task, env=EnvConfig(), seed=7)
    assert res.stats.outcome == SUCCESS
    assert 2 <= res.stats.attempts <= 6
    assert any(e.get("to") == "Safe" for e in res.log)
    assert res.stats.max_force <= 20.0
    assert check_log(res.log, res.stats).ok


def test_uninsertable_component_fails():
    d = np.zeros((8, 2))
    d[0] = [0.00045, 0.0]
    d[7] = [-0.00045, 0.0]
    task = TaskInstance(CLEAN.nominal_spec().with_defects(d), TRUE, TRUE, seed=3)
    assert not any(task.feasible_at(TRUE.offset(dx=x)) for x in np.linspace(-0.001, 0.001, 401))
    res = episode(task, env=EnvConfig(), seed=3, max_failures=5)
    assert res.stats.outcome == FAIL
    assert res.stats.reason in ("trial cap", "belief collapse", "low success probability")
    assert check_log(res.log, res.stats).ok


def test_episode_determinism():
    t = sample_task(EnvConfig(), 21)
    a, b = episode(t, env=EnvConfig(), seed=21), episode(t, env=EnvConfig(), seed=21)
    assert a.stats == b.stats and a.log == b.log
    assert np.array_equal(a.executed.q, b.executed.q)


def test_reference_delay():
    res = episode(sample_task(CLEAN, 1))
    # the arm cannot move before the first reference has cleared one tick of delay
    q = res.executed.q
    moved = np.flatnonzero(np.any(np.abs(q - q[0]) > 0, axis=1))
    assert res.executed.times[moved[0]] > CLEAN.tick * CLEAN.delay_ticks


def test_abstract_task_paths():
    t = sample_task(CLEAN, 2)
    o = run_abstract_task(t, PimParams(), CLEAN, PIM)
    assert o.success and o.attempts == 1
    r = run_abstract_task(t, PimParams(), CLEAN, RANDOM)
    assert r.success and r.attempts == 1 and r.t_comp == 0.0
    bad = TaskInstance(t.spec, t.true_goal, t.true_goal.offset(dx=0.0004), 2)
    o = run_abstract_task(bad, PimParams(), CLEAN, PIM, max_trials=20, success_prob_threshold=0.0)
    assert o.success and o.attempts > 1 and o.t_comp > 0.0


def test_retry_policy_validation():
    with pytest.raises(ValueError):
        RetryPolicy("grid", PimParams(), CLEAN, sample_task(CLEAN, 0), 0)
