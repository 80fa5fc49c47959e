import numpy as np
import pytest
from scipy import stats

from pinchlift.curriculum import (AnnealStage, ObservabilityMode, RandomizationConfig,
                                  cf_pose_update_due, make_episode, make_phase_config,
                                  randomize_domain, sample_contact_frames)
from pinchlift.grasp import force_closure_check
from pinchlift.rewards import Phase
from pinchlift.world import DEFAULT_BOX, SMALL_BOX, PayloadShape, spawn_scene


def test_phase_configs():
    p1 = make_phase_config(1)
    assert (p1.phase, p1.episode_length, p1.command_pool, p1.payload_mass, p1.leg_motion_penalty_active) == \
        (Phase.PINCH, 7.0, "zero", 100.0, True)
    p2 = make_phase_config(2)
    assert p2.episode_length == 14.0 and p2.payload_mass == (0.1, 2.0)
    assert not make_phase_config(3).leg_motion_penalty_active
    with pytest.raises(ValueError):
        make_phase_config(4)


def test_randomize_domain():
    fixed = RandomizationConfig(mass_range=(1.0, 1.0), friction_range=(0.7, 0.7))
    d = randomize_domain(fixed, 0)
    assert d.mass == 1.0 and d.mu == 0.7
    a = randomize_domain(RandomizationConfig(), 3).as_dict()
    b = randomize_domain(RandomizationConfig(), 3).as_dict()
    assert a == b
    rng = np.random.default_rng(0)
    cfg = RandomizationConfig(pulse_rate=0.0)
    m = np.array([randomize_domain(cfg, rng).mass for _ in range(10000)])
    assert m.min() >= 0.1 and m.max() <= 2.0
    assert stats.kstest((m - 0.1) / 1.9, "uniform").statistic < 0.02
    with pytest.raises(ValueError):
        RandomizationConfig(mass_range=(2.0, 1.0))


def test_cf_update_due():
    plus = ObservabilityMode("cf_plus")
    assert all(cf_pose_update_due(plus, t, int(t * 50)) for t in (0.0, 3.0, 12.0))
    init = ObservabilityMode("cf_init", AnnealStage.HZ0)
    assert cf_pose_update_due(init, 1.0, 50)
    assert not cf_pose_update_due(init, 3.0, 150)
    five = ObservabilityMode("cf_init", "5hz")
    due = [cf_pose_update_due(five, k / 50, k) for k in range(100, 200)]
    assert sum(due) == 10
    quarter = ObservabilityMode("cf_init", 0.25)
    due = [cf_pose_update_due(quarter, k / 50, k) for k in range(100, 700)]
    assert sum(due) == 3
    with pytest.raises(ValueError):
        ObservabilityMode("cf_sometimes")


def test_sample_contact_frames():
    rng = np.random.default_rng(0)
    faces = []
    for _ in range(30):
        frames = sample_contact_frames(SMALL_BOX, 2, rng)
        assert force_closure_check(frames, 0.8)
        faces.append(tuple(sorted(round(f.yaw, 2) for f in frames)))
    # adjacent faces never close at mu = 0.8, so accepted pairs are opposing
    long_pair = (round(-np.pi / 2, 2), round(np.pi / 2, 2))
    short_pair = (0.0, round(np.pi, 2))
    assert faces.count(long_pair) + faces.count(short_pair) == 30
    assert faces.count(long_pair) >= faces.count(short_pair)
    with pytest.raises(ValueError):
        sample_contact_frames(SMALL_BOX, 1, rng)
    cyl = PayloadShape("cylinder", (0.3, 0.6))
    assert force_closure_check(sample_contact_frames(cyl, 3, rng, mu=0.5), 0.5)


def test_episode_reproducible():
    a = make_episode(11, 3, DEFAULT_BOX, 4, eval_commands=True, arrangement="sampled")
    b = make_episode(11, 3, DEFAULT_BOX, 4, eval_commands=True, arrangement="sampled")
    assert a.header() == b.header()
    wa, wb = spawn_scene(a.scene, a.spawn_seed), spawn_scene(b.scene, b.spawn_seed)
    assert np.array_equal(wa.base_pos, wb.base_pos)
    c = make_episode(12, 3, DEFAULT_BOX, 4, eval_commands=True)
    assert c.header() != a.header()


def test_phase_command_pools():
    p1 = make_episode(0, 1, SMALL_BOX, 2)
    assert np.all(p1.command.as_array() == 0) and p1.draw.mass == 100.0
    for s in range(10):
        e = make_episode(s, 2, SMALL_BOX, 2)
        assert np.all(e.command.v_pl == 0) and e.command.omega_pl == 0
