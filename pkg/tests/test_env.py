import math

import numpy as np
import pytest

from hideseek import env as E
from hideseek import geometry as g
from hideseek.env import Action

BASIC = E.get_variant("basic")
ONE_BOX = g.WorldMap((g.Obstacle(-0.5, -1.0, 0.5, 1.0),), map_id="one-box")


def test_action_indices():
    assert [a.value for a in Action] == [0, 1, 2, 3, 4]
    assert [a.name for a in Action] == ["FORWARD", "BACKWARD", "TURN_LEFT", "TURN_RIGHT", "STILL"]


@pytest.mark.parametrize(
    "name, hs, acc, stoch_seek, stoch_map, vis",
    [
        ("basic", 2.0, False, False, False, False),
        ("fasterhider", 2.0, True, False, False, False),
        ("slowerhider", 1.0, False, False, False, False),
        ("stochasticseeker", 2.0, False, True, False, False),
        ("stochasticmaps+stochasticseeker", 2.0, False, True, True, False),
        ("visibilityreward", 2.0, False, False, False, True),
        ("visibilityreward+faster", 2.0, True, False, False, True),
    ],
)
def test_presets(name, hs, acc, stoch_seek, stoch_map, vis):
    v = E.get_variant(name)
    assert (v.hider_speed, v.hider_accelerates, v.seeker_speed) == (hs, acc, 1.5)
    assert (v.seeker_stochastic, v.stochastic_maps, v.visibility_reward) == (stoch_seek, stoch_map, vis)


def test_unknown_variant_rejected():
    with pytest.raises(E.UnknownVariant):
        E.get_variant("nosuchthing")
    with pytest.raises(E.UnknownVariant):
        E.get_variant("basic", flying=True)


def test_reset_facing_and_separation():
    st = E.place_agents(BASIC, g.EMPTY_MAP, (-3, 0), (3, 0))
    assert st.hider.heading == 0.0
    assert st.seeker.heading == pytest.approx(math.pi)
    for seed in range(50):
        s = E.reset(BASIC, seed)
        assert math.hypot(s.hider.x - s.seeker.x, s.hider.y - s.seeker.y) >= 2.0
        assert g.disc_free(s.hider.x, s.hider.y, 0.25, s.world)
        assert g.disc_free(s.seeker.x, s.seeker.y, 0.25, s.world)
        to_seeker = math.atan2(s.seeker.y - s.hider.y, s.seeker.x - s.hider.x)
        assert abs(g.wrap_pi(s.hider.heading - to_seeker)) < 1e-12


def test_reset_deterministic_and_maps_vary():
    a, b = E.reset(BASIC, 9), E.reset(BASIC, 9)
    assert a.to_dict() == b.to_dict()
    v = E.get_variant("stochasticmaps+stochasticseeker")
    maps = {E.reset(v, s).world for s in range(20)}
    assert len(maps) >= 19


def test_forward_and_turn_kinematics():
    st = E.place_agents(BASIC, g.EMPTY_MAP, (0, 0), (5, 5), hider_heading=0.0)
    st.seeker_memory.mode = "patrol"
    E.tick(st, Action.FORWARD)
    assert st.hider.x == pytest.approx(0.04) and st.hider.y == pytest.approx(0.0)
    E.tick(st, Action.TURN_LEFT)
    assert st.hider.heading == pytest.approx(math.radians(2.4))
    assert st.hider.heading == pytest.approx(0.0419, abs=1e-4)
    E.tick(st, Action.TURN_RIGHT)
    E.tick(st, Action.TURN_RIGHT)
    assert st.hider.heading == pytest.approx(2 * math.pi - math.radians(2.4))


def test_acceleration_caps_and_resets():
    v = E.get_variant("fasterhider")
    st = E.place_agents(v, g.EMPTY_MAP, (-6, -6), (6, 6), hider_heading=math.pi / 4)
    for _ in range(50):
        E.tick(st, Action.FORWARD)
    assert st.hider.speed == pytest.approx(4.0)
    E.tick(st, Action.FORWARD)
    assert st.hider.speed == 4.0
    E.tick(st, Action.STILL)
    assert st.hider.speed == 2.0


def test_catch_distance():
    st = E.place_agents(BASIC, g.EMPTY_MAP, (0, 0), (0.49, 0))
    assert E.check_catch(st)
    st.seeker.x = 0.51
    assert not E.check_catch(st)
    st.seeker.x = 0.0
    assert E.check_catch(st)


def test_tick_and_step_after_done_raise():
    st = E.place_agents(BASIC, g.EMPTY_MAP, (0, 0), (0.3, 0))
    st.done = True
    with pytest.raises(E.EnvError):
        E.tick(st, Action.STILL)
    with pytest.raises(E.EnvError):
        E.step(st, Action.STILL)


def test_step_rewards():
    st = E.place_agents(BASIC, g.EMPTY_MAP, (-6, -6), (6, 6))
    res = E.step(st, Action.STILL)
    assert res.reward == 0.001 and not res.done and st.tick == 6

    st = E.place_agents(BASIC, g.EMPTY_MAP, (0, 0), (0.6, 0))
    res = E.step(st, Action.STILL)
    assert res.reward == -1.0 and res.done and res.caught
    assert st.tick < 6

    v = E.get_variant("visibilityreward")
    st = E.place_agents(v, g.EMPTY_MAP, (-6, -6), (6, 6), seeker_heading=math.pi / 4)
    res = E.step(st, Action.STILL)
    assert not res.visual.H and res.reward == pytest.approx(0.002)


def test_hider_reward_table():
    vis = E.get_variant("visibilityreward")
    assert E.hider_reward(False, True, BASIC) == 0.001
    assert E.hider_reward(False, True, vis) == pytest.approx(0.0)
    assert E.hider_reward(False, False, vis) == pytest.approx(0.002)
    assert E.hider_reward(True, False, vis) == -1.0
    assert E.hider_reward(True, True, BASIC) == -1.0


def test_visual_state_examples():
    st = E.place_agents(BASIC, g.EMPTY_MAP, (-3, 0), (3, 0))
    assert tuple(E.visual_state(st)) == (True, True, False)
    st = E.place_agents(BASIC, ONE_BOX, (-3, 0), (3, 0))
    assert tuple(E.visual_state(st)) == (False, False, True)
    # hider behind the seeker, both heading east
    st = E.place_agents(BASIC, g.EMPTY_MAP, (-3, 0), (0, 0), hider_heading=0.0, seeker_heading=0.0)
    vs = E.visual_state(st)
    assert vs.S and not vs.H


def test_state_index_labels():
    assert E.STATE_LABELS[0] == "S,H,O" and E.STATE_LABELS[7] == "¬S,¬H,¬O"
    assert sorted({E.state_index(s, h, o) for s in (0, 1) for h in (0, 1) for o in (0, 1)}) == list(range(8))
    assert E.STATE_LABELS[E.state_index(True, False, True)] == "S,¬H,O"


def _random_episode(variant, seed, action_seed):
    st = E.reset(variant, seed)
    rng = np.random.default_rng(action_seed)
    out = []
    while not st.done:
        res = E.step(st, int(rng.integers(5)))
        out.append((res.reward, res.done, tuple(res.visual), st.hider.x, st.hider.y,
                    st.seeker.x, st.seeker.y, st.tick))
    return st, out


def test_episode_determinism_and_accounting():
    for v in (BASIC, E.get_variant("stochasticmaps+stochasticseeker")):
        a, tr_a = _random_episode(v, 5, 6)
        b, tr_b = _random_episode(v, 5, 6)
        assert tr_a == tr_b and a.to_dict() == b.to_dict()
    st, tr = _random_episode(BASIC, 3, 4)
    total = sum(r for r, *_ in tr)
    living = len(tr) - (1 if st.caught else 0)
    assert total == pytest.approx(0.001 * living - (1.0 if st.caught else 0.0))
    assert st.caught or st.decision_step == 1000


def test_done_iff_caught_or_time_limit():
    st = E.place_agents(BASIC, g.EMPTY_MAP, (-6, -6), (6, 6))
    st.decision_step = 999
    st.seeker_memory.mode = "patrol"
    res = E.step(st, Action.STILL)
    assert res.done and not res.caught and st.decision_step == 1000


def test_random_action_ticks_collision_free():
    """10^5 ticks of random actions across variants; speed and displacement invariants."""
    rng = np.random.default_rng(0)
    ticks = 0
    seed = 0
    while ticks < 100_000:
        v = E.get_variant(["basic", "fasterhider", "stochasticmaps+stochasticseeker"][seed % 3])
        st = E.reset(v, seed)
        seed += 1
        while not st.done and ticks < 100_000:
            a = int(rng.integers(5))
            x0, y0 = st.hider.x, st.hider.y
            for _ in range(E.ACTION_REPEAT):
                E.tick(st, a)
                ticks += 1
                for ag in (st.hider, st.seeker):
                    assert g.disc_clearance(ag.x, ag.y, 0.25, st.world) >= -1e-9
                if v.hider_accelerates:
                    assert v.hider_speed <= st.hider.speed <= 4.0
                else:
                    assert st.hider.speed == v.hider_speed
                if st.done:
                    break
            st.decision_step += 1
            if st.decision_step >= E.MAX_DECISION_STEPS:
                st.done = True
            vmax = 4.0 if v.hider_accelerates else v.hider_speed
            assert math.hypot(st.hider.x - x0, st.hider.y - y0) <= 6 * vmax / 50 + 1e-9
    assert ticks >= 100_000


def test_tick_count_tracks_decision_steps():
    st = E.reset(BASIC, 1)
    while not st.done:
        E.step(st, Action.TURN_LEFT)
        if not st.done:
            assert st.tick == 6 * st.decision_step


def test_env_state_round_trip():
    st = E.reset(E.get_variant("stochasticseeker"), 2)
    for _ in range(5):
        E.step(st, Action.FORWARD)
    clone = E.EnvState.from_dict(st.to_dict())
    for _ in range(30):
        if st.done:
            break
        ra, rb = E.step(st, Action.TURN_LEFT), E.step(clone, Action.TURN_LEFT)
        assert np.array_equal(ra.observation, rb.observation) and ra.reward == rb.reward
    assert st.to_dict() == clone.to_dict()
