"""Simulator, camera, rasterizer, event-injection, and dataset tests."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from permaphys import scenesim as ss
from permaphys.scenesim.dataset import render_video
from permaphys.scenesim.events import SimVideo
from permaphys.scenesim.raster import ball_to_raster
from permaphys.scenesim.world import Ball


def make_video(config: ss.WorldConfig) -> SimVideo:
    frames = ss.simulate(config)
    cam = ss.Camera.make(config.tilt_deg, config.resolution)
    return SimVideo(config, cam, frames)


class TestSimulate:
    def test_equilibrium_ball_at_rest(self):
        cfg = ss.WorldConfig(n_balls=1, seed=3)
        frames = ss.simulate(cfg)
        ball = frames[0].balls[0].copy()
        ball.vel[:] = 0.0
        ball.pos[2] = ball.radius
        state = ss.WorldState3D([ball], [])
        cur = state
        for _ in range(30):
            cur = ss.step_world(cur)
            assert np.array_equal(cur.balls[0].pos, state.balls[0].pos)
            assert np.array_equal(cur.balls[0].vel, state.balls[0].vel)

    def test_head_on_equal_balls_exchange_velocities(self):
        b1 = Ball(np.array([80.0, 100.0, 20.0]), np.array([10.0, 0.0, 0.0]), 20.0,
                  np.zeros(3))
        b2 = Ball(np.array([120.0, 100.0, 20.0]), np.array([-10.0, 0.0, 0.0]), 20.0,
                  np.zeros(3))
        ss.resolve_ball_ball(b1, b2)
        assert np.allclose(b1.vel, [-10.0, 0.0, 0.0])
        assert np.allclose(b2.vel, [10.0, 0.0, 0.0])

    @given(st.integers(min_value=0, max_value=10_000))
    @settings(max_examples=30, deadline=None)
    def test_ball_ball_conserves_momentum_and_energy(self, seed):
        rng = np.random.default_rng(seed)
        mk = lambda: Ball(rng.uniform(50, 150, 3), rng.uniform(-20, 20, 3),
                          rng.uniform(10, 40), np.zeros(3))
        b1, b2 = mk(), mk()
        p_before = b1.mass * b1.vel + b2.mass * b2.vel
        ke_before = 0.5 * b1.mass * b1.vel @ b1.vel + 0.5 * b2.mass * b2.vel @ b2.vel
        ss.resolve_ball_ball(b1, b2)
        p_after = b1.mass * b1.vel + b2.mass * b2.vel
        ke_after = 0.5 * b1.mass * b1.vel @ b1.vel + 0.5 * b2.mass * b2.vel @ b2.vel
        assert np.max(np.abs(p_after - p_before)) / max(np.max(np.abs(p_before)), 1.0) < 1e-9
        assert abs(ke_after - ke_before) / max(ke_before, 1.0) < 1e-9

    @pytest.mark.parametrize("seed", [1, 7, 23])
    def test_energy_drift_below_one_percent(self, seed):
        cfg = ss.WorldConfig(n_balls=5, n_boxes=1, seed=seed)
        frames = ss.simulate(cfg)
        e0 = ss.total_energy(frames[0])
        for f in frames:
            assert abs(ss.total_energy(f) - e0) / e0 < 0.01

    def test_deterministic_per_seed(self):
        cfg = ss.WorldConfig(n_balls=4, n_boxes=2, seed=11)
        a = ss.simulate(cfg)
        b = ss.simulate(cfg)
        for fa, fb in zip(a, b):
            for ba, bb in zip(fa.balls, fb.balls):
                assert ba.pos.tobytes() == bb.pos.tobytes()
                assert ba.vel.tobytes() == bb.vel.tobytes()

    def test_balls_stay_inside_walls(self):
        cfg = ss.WorldConfig(n_balls=6, seed=19)
        for f in ss.simulate(cfg):
            for b in f.balls:
                # reflections happen after penetration; allow a substep of slack
                assert -8 <= b.pos[0] <= 208 and -8 <= b.pos[1] <= 208

    def test_config_validation(self):
        with pytest.raises(ValueError):
            ss.WorldConfig(n_balls=0)
        with pytest.raises(ValueError):
            ss.WorldConfig(n_balls=7)
        with pytest.raises(ValueError):
            ss.WorldConfig(n_boxes=3)
        with pytest.raises(ValueError):
            ss.WorldConfig(tilt_deg=0.0)


class TestCamera:
    def test_top_view_affine_in_xy(self):
        cam = ss.Camera.make(90, 64)
        pts = np.array([[0.0, 0.0, 15.0], [200.0, 0.0, 15.0], [100.0, 50.0, 15.0]])
        px, py, d = cam.project_points(pts)
        s = 64 / 200
        assert np.allclose(px, pts[:, 0] * s - 0.5)
        assert np.allclose(py, pts[:, 1] * s - 0.5)
        assert np.allclose(d, 400.0 - pts[:, 2])

    @pytest.mark.parametrize("tilt", [90, 45, 25, 15])
    def test_backprojection_roundtrip(self, tilt):
        cam = ss.Camera.make(tilt, 64)
        rng = np.random.default_rng(tilt)
        for _ in range(20):
            p = rng.uniform([5, 5, 5], [195, 195, 80])
            px, py, d = cam.project_points(p[None])
            back = cam.backproject(float(px[0]), float(py[0]), float(d[0]))
            assert np.max(np.abs(back - p)) < 1e-6

    def test_far_ball_smaller_at_tilt(self):
        cam = ss.Camera.make(25, 64)
        near = np.array([100.0, 40.0, 20.0])   # camera sits at negative y
        far = np.array([100.0, 160.0, 20.0])
        assert cam.apparent_radius(far, 20.0) < cam.apparent_radius(near, 20.0)

    def test_floor_inside_frame_all_tilts(self):
        for tilt in (45, 25, 15):
            cam = ss.Camera.make(tilt, 64)
            corners = np.array([[0, 0, 0], [200, 0, 0], [0, 200, 0], [200, 200, 0]],
                               dtype=float)
            px, py, _ = cam.project_points(corners)
            assert px.min() >= -0.5 and px.max() <= 63.5
            assert py.min() >= -0.5 and py.max() <= 63.5


class TestRasterize:
    def test_single_ball_area_close_to_disc(self):
        cfg = ss.WorldConfig(n_balls=1, seed=2)
        ball = Ball(np.array([100.0, 100.0, 30.0]), np.zeros(3), 30.0, np.zeros(3))
        cam = ss.Camera.make(90, 64)
        obs = ss.rasterize([ball_to_raster(ball, cam)], None, cam, np.array([1]))
        r_px = 30.0 * 64 / 200
        expected = np.pi * r_px ** 2
        assert abs(int(obs.visible_px[1]) - expected) / expected < 0.05

    def test_overlap_carries_nearer_id(self):
        cam = ss.Camera.make(90, 64)
        low = Ball(np.array([100.0, 100.0, 20.0]), np.zeros(3), 20.0, np.zeros(3))
        high = Ball(np.array([105.0, 100.0, 60.0]), np.zeros(3), 20.0, np.zeros(3))
        obs = ss.rasterize([ball_to_raster(low, cam), ball_to_raster(high, cam)],
                           None, cam, np.array([1, 2]))
        # overlap pixels: both discs cover; the higher ball is nearer to a top camera
        jj, ii = np.meshgrid(np.arange(64), np.arange(64))
        s = 64 / 200
        in_low = (jj - (100 * s - 0.5)) ** 2 + (ii - (100 * s - 0.5)) ** 2 <= (20 * s) ** 2
        in_high = (jj - (105 * s - 0.5)) ** 2 + (ii - (100 * s - 0.5)) ** 2 <= (20 * s) ** 2
        overlap = in_low & in_high
        assert overlap.any()
        assert np.all(obs.mask[overlap] == 2)

    def test_empty_scene(self):
        cam = ss.Camera.make(90, 32)
        obs = ss.rasterize([], None, cam, np.array([], dtype=int))
        assert np.all(obs.mask == 0)
        assert np.allclose(obs.depth, cam.floor_depth_map())

    def test_mask_depth_consistency(self):
        cfg = ss.WorldConfig(n_balls=4, n_boxes=1, occluder=True, seed=13)
        video = make_video(cfg)
        observations, _ = render_video(video, np.random.default_rng(1))
        for obs in observations[::7]:
            covered = obs.mask > 0
            assert np.all(obs.depth[covered] <= cam_floor(video)[covered] + 1e-9)

    def test_occluder_coverage_quarter_of_frame(self):
        cfg = ss.WorldConfig(n_balls=1, occluder=True, seed=21)
        video = make_video(cfg)
        observations, _ = render_video(video, np.random.default_rng(2))
        total = 64 * 64
        mid = observations[len(observations) // 2]
        frac = int(mid.visible_px[mid.occluder_id]) / total
        assert 0.20 <= frac <= 0.30


def cam_floor(video: SimVideo) -> np.ndarray:
    return video.camera.floor_depth_map()


class TestInjection:
    def test_disappear_visible_drops_mask(self):
        video = make_video(ss.WorldConfig(n_balls=2, seed=31))
        inj = ss.inject_impossible(video, "disappear", "visible",
                                   np.random.default_rng(0))
        t_e, ball = inj.event["t_e"], inj.event["ball"]
        observations, rows = render_video(inj, np.random.default_rng(1))
        before = rows[t_e - 1]["objects"][ball]
        after = rows[t_e]["objects"][ball]
        assert before["visible_px"] > 0
        assert after["visible_px"] == 0 and after["removed"]

    def test_teleport_occluded_displacement(self):
        video = make_video(ss.WorldConfig(n_balls=2, occluder=True, seed=8))
        inj = ss.inject_impossible(video, "teleport", "occluded",
                                   np.random.default_rng(5))
        ev = inj.event
        assert ev["displacement"] >= 40.0
        t_e, ball = ev["t_e"], ev["ball"]
        jump = np.linalg.norm(
            np.array(inj.frames[t_e].balls[ball].pos[:2])
            - np.array(video.frames[t_e].balls[ball].pos[:2]))
        assert jump >= 40.0
        observations, rows = render_video(inj, np.random.default_rng(1))
        # hidden at the jump, visible somewhere before and after
        assert rows[t_e]["objects"][ball]["visible_px"] == 0
        assert any(r["objects"][ball]["visible_px"] > 0 for r in rows[:t_e])
        assert any(r["objects"][ball]["visible_px"] > 0 for r in rows[t_e + 1:])

    def test_shape_change_swaps_silhouette(self):
        video = make_video(ss.WorldConfig(n_balls=1, seed=17))
        inj = ss.inject_impossible(video, "shape_change", "visible",
                                   np.random.default_rng(3))
        t_e = inj.event["t_e"]
        assert inj.frames[t_e].balls[inj.event["ball"]].shape == "cube"
        assert video.frames[t_e].balls[inj.event["ball"]].shape == "ball"

    def test_possible_control_has_no_event(self):
        video = make_video(ss.WorldConfig(n_balls=2, seed=4))
        assert video.event is None

    def test_occluded_requires_occluder(self):
        video = make_video(ss.WorldConfig(n_balls=2, occluder=False, seed=4))
        with pytest.raises(ss.InjectionError):
            ss.inject_impossible(video, "disappear", "occluded",
                                 np.random.default_rng(0))


@pytest.fixture(scope="module")
def small_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("ds")
    spec = ss.GenSpec(resolution=48, seed=99, max_balls=3)
    counts = {"renderer": 2, "dynamics": 2, "eval": 2, "plaus_pairs": 1}
    manifest = ss.make_dataset(spec, counts, root)
    return root, spec, counts, manifest


class TestDataset:

    def test_counts(self, small_dataset):
        _, _, _, manifest = small_dataset
        split_counts = {}
        for e in manifest["videos"]:
            split_counts[e["split"]] = split_counts.get(e["split"], 0) + 1
        assert split_counts == {"renderer": 2, "dynamics": 2, "eval": 2, "plaus": 12}

    def test_regeneration_bitwise_identical(self, small_dataset, tmp_path):
        root, spec, counts, _ = small_dataset
        ss.make_dataset(spec, counts, tmp_path / "again")
        assert ss.dataset_hash(root) == ss.dataset_hash(tmp_path / "again")

    def test_pairs_share_scene(self, small_dataset):
        root, _, _, _ = small_dataset
        pairs = ss.list_pairs(root)
        assert len(pairs) == 6
        for event, pos_dir, neg_dir in pairs:
            pos = ss.load_video(pos_dir)
            neg = ss.load_video(neg_dir)
            assert pos.meta["seed"] == neg.meta["seed"]
            assert pos.meta["event"] is None and neg.meta["event"] == event
            t = 1  # pre-event frames share ground truth world positions
            assert t < event["t_e"]
            for ro, rn in zip(pos.states[t]["objects"], neg.states[t]["objects"]):
                assert ro["world"] == rn["world"]

    def test_roundtrip_masks_and_depth(self, small_dataset):
        root, _, _, manifest = small_dataset
        vd = ss.load_video(root / manifest["videos"][0]["name"])
        assert vd.masks.shape == (30, 48, 48)
        assert vd.depths.shape == (30, 48, 48)
        assert vd.masks.dtype == np.uint8
        for row in vd.states:
            for obj in row["objects"]:
                if obj["visible_px"] > 0:
                    assert (vd.masks[row["t"]] == obj["mask_id"]).sum() == obj["visible_px"]

    def test_ids_shuffled_per_frame(self, small_dataset):
        root, _, _, manifest = small_dataset
        name = next(e["name"] for e in manifest["videos"] if e["split"] == "dynamics")
        vd = ss.load_video(root / name)
        if vd.meta["n_objects"] < 2:
            pytest.skip("needs at least two objects to observe shuffling")
        perms = [tuple(o["mask_id"] for o in row["objects"]) for row in vd.states]
        assert len(set(perms)) > 1
