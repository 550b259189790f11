import math

import numpy as np
import pytest

from hideseek import env as E
from hideseek import geometry as g
from hideseek import render as R
from hideseek.geometry import Pose


@pytest.mark.parametrize("d, h", [(1.0, 64), (2.0, 32), (16.0, 4), (0.5, 64), (3.0, 21)])
def test_column_height(d, h):
    assert R.column_height(d) == h


@pytest.mark.parametrize("d", [0.0, -1.0])
def test_column_height_rejects_nonpositive(d):
    with pytest.raises(ValueError):
        R.column_height(d)


def test_ray_angles_span():
    a = R.ray_angles(0.0)
    assert len(a) == 64
    assert a[0] == pytest.approx(math.radians(60 - 0.9375))
    assert a[-1] == pytest.approx(-math.radians(60 - 0.9375))
    assert np.all(np.diff(a) < 0)


def test_opponent_dead_ahead():
    # disc surface at 2.0 from the viewer
    obs = R.render_view(Pose(0, 0, 0), g.EMPTY_MAP, opponent=(2.25, 0.0))
    ch1 = obs[1]
    lit = np.flatnonzero(ch1.any(axis=0))
    assert 31 in lit and 32 in lit
    col = ch1[:, 31]
    assert np.count_nonzero(col) == 32
    assert np.flatnonzero(col)[0] == 16
    assert col.max() == pytest.approx(0.9, abs=1e-3)


def test_odd_column_extra_pixel_on_top():
    obs = R.render_hits(np.full(64, 3.0), np.full(64, g.KIND_WALL))
    rows = np.flatnonzero(obs[0][:, 0])
    assert len(rows) == 21
    above = np.sum(rows < 32)
    assert above == 11 and len(rows) - above == 10


def test_empty_view_channels():
    obs = R.render_view(Pose(0, 0, 0), g.EMPTY_MAP, opponent=(-3.0, 0.0))
    assert obs.shape == (3, 64, 64) and obs.dtype == np.float32
    assert not obs[1].any()
    assert obs[0].any()
    assert np.all((obs >= 0) & (obs <= 1))


def test_occluded_opponent_invisible():
    w = g.WorldMap((g.Obstacle(1.0, -1.0, 2.0, 1.0),))
    obs = R.render_view(Pose(0, 0, 0), w, opponent=(4.0, 0.0))
    assert not obs[1].any()


def test_depth_channel_full_height():
    obs = R.render_view(Pose(1, 2, 0.3), g.canonical_map(), opponent=(-2.0, 1.0))
    assert np.all(obs[2] == obs[2][0:1, :])
    d, _ = R.cast_view(Pose(1, 2, 0.3), g.canonical_map(), (-2.0, 1.0))
    assert obs[2][0] == pytest.approx(np.clip(1 - d / 20, 0, 1), abs=1e-6)


def test_monotone_in_distance():
    d = np.linspace(0.3, 19.0, 64)
    obs = R.render_hits(d, np.full(64, g.KIND_OBSTACLE))
    heights = np.count_nonzero(obs[0], axis=0)
    shade = obs[0].max(axis=0)
    assert np.all(np.diff(heights) <= 0)
    assert np.all(np.diff(shade) <= 0)


def test_render_pure():
    st = E.reset(E.get_variant("basic"), 4)
    a = R.render(st, "hider")
    b = R.render(st, "hider")
    assert a.tobytes() == b.tobytes()
    s = R.render(st, "seeker")
    assert s.shape == (3, 64, 64)
    with pytest.raises(ValueError):
        R.render(st, "referee")


def test_render_matches_visibility():
    rng = np.random.default_rng(8)
    w = g.canonical_map()
    checked = 0
    while checked < 300:
        p = rng.uniform(-6.75, 6.75, 2)
        q = rng.uniform(-6.75, 6.75, 2)
        if not (g.disc_free(*p, 0.25, w) and g.disc_free(*q, 0.25, w)):
            continue
        if not 0.5 < float(np.hypot(*(q - p))) <= 12:
            continue
        viewer = Pose(p[0], p[1], rng.uniform(0, 2 * math.pi))
        obs = R.render_view(viewer, w, opponent=q)
        assert bool(obs[1].any()) == g.can_see(viewer, q, w)
        checked += 1


def test_rim_past_corner_not_drawn():
    # centre hidden behind the box corner, upper rim geometrically in view
    w = g.WorldMap((g.Obstacle(2.0, -1.0, 3.0, 0.02),))
    viewer = Pose(0.0, 0.0, 0.0)
    q = (5.0, 0.0)
    assert not g.can_see(viewer, q, w)
    _, kind = g.cast_rays(viewer.position, R.ray_angles(0.0), w, q)
    assert (kind == g.KIND_OPPONENT).any()
    assert not R.render_view(viewer, w, opponent=q)[1].any()


def test_rim_outside_fov_not_drawn():
    viewer = Pose(0.0, 0.0, 0.0)
    q = (2.0 * math.cos(math.radians(64)), 2.0 * math.sin(math.radians(64)))
    assert not R.render_view(viewer, g.EMPTY_MAP, opponent=q)[1].any()


def test_visible_centre_between_rays_still_drawn():
    # at distance 18 the disc is narrower than the ray spacing and falls in a gap
    viewer = Pose(-6.7, -6.7, math.pi / 4)
    off = 1.05 * math.radians(120 / 64)
    q = (-6.7 + 18 * math.cos(math.pi / 4 + off), -6.7 + 18 * math.sin(math.pi / 4 + off))
    assert g.can_see(viewer, q, g.EMPTY_MAP)
    _, kind = g.cast_rays(viewer.position, R.ray_angles(viewer.heading), g.EMPTY_MAP, q)
    assert not (kind == g.KIND_OPPONENT).any()
    dist, kind = R.cast_view(viewer, g.EMPTY_MAP, q)
    assert np.flatnonzero(kind == g.KIND_OPPONENT).tolist() == [30]
    assert dist[30] == pytest.approx(18 - 0.25)


def test_ppm_header():
    obs = R.render_view(Pose(0, 0, 0), g.EMPTY_MAP)
    data = R.to_ppm(obs)
    assert data.startswith(b"P6\n64 64\n255\n")
    assert len(data) == len(b"P6\n64 64\n255\n") + 64 * 64 * 3
