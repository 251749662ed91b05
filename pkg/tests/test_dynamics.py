"""Dynamics tests: prediction structure, Taylor update, loss oracles."""

import numpy as np
import pytest

from permaphys import autodiff as ad
from permaphys import dynamics as dyn
from permaphys.dynamics.model import POS, TAU, VEL


def random_states(n, seed=0):
    rng = np.random.default_rng(seed)
    s = np.zeros((n, 16))
    s[:, POS] = rng.uniform(10, 190, (n, 3))
    s[:, VEL] = rng.uniform(-8, 8, (n, 3))
    s[:, 6] = rng.uniform(3, 13, n)
    s[:, 7] = 1.0
    s[:, 10:13] = rng.uniform(0, 1, (n, 3))
    return s


def randomized_net(seed=1, scale=0.1):
    params = dyn.init_params(dyn.DynamicsConfig(seed=seed))
    rng = np.random.default_rng(seed)
    for t in params.values():
        t.data[:] = rng.uniform(-scale, scale, t.data.shape)
    return dyn.RecIntNet(params, dyn.StateScaler.identity(), dyn.DynamicsConfig())


class TestPredict:
    def test_single_object_ignores_relation_net(self):
        net_a = randomized_net(seed=1)
        net_b = randomized_net(seed=1)
        rng = np.random.default_rng(9)
        for name, t in net_b.params.items():
            if name.startswith("rel."):
                t.data[:] = rng.uniform(-5, 5, t.data.shape)
        s = random_states(1, seed=4)
        dv_a, tau_a = net_a.predict_np(s)
        dv_b, tau_b = net_b.predict_np(s)
        assert np.array_equal(dv_a, dv_b)
        assert np.array_equal(tau_a, tau_b)

    def test_permutation_equivariance(self):
        net = randomized_net(seed=2)
        s = random_states(5, seed=5)
        dv, tau = net.predict_np(s)
        perm = np.array([3, 1, 4, 0, 2])
        dv_p, tau_p = net.predict_np(s[perm])
        assert np.max(np.abs(dv[perm] - dv_p)) < 1e-9
        assert np.max(np.abs(tau[perm] - tau_p)) < 1e-9

    def test_zero_init_final_layers_give_zero_outputs(self):
        params = dyn.init_params(dyn.DynamicsConfig(seed=7))
        net = dyn.RecIntNet(params, dyn.StateScaler.identity(), dyn.DynamicsConfig())
        dv, tau = net.predict_np(random_states(4, seed=6))
        assert np.all(dv == 0.0)
        assert np.all(tau == 0.0)

    def test_variable_object_count_contract(self):
        """A net exercised with few objects stays finite and shaped at N=6."""
        net = randomized_net(seed=3)
        for n in (2, 4):
            net.predict_np(random_states(n, seed=n))
        dv, tau = net.predict_np(random_states(6, seed=8))
        assert dv.shape == (6, 3) and tau.shape == (6, 3)
        assert np.all(np.isfinite(dv)) and np.all(np.isfinite(tau))


class TestStep:
    def test_zero_acceleration_is_linear(self):
        s = random_states(3, seed=1)
        out = dyn.step(ad.constant(s), ad.constant(np.zeros((3, 3))),
                       ad.constant(np.zeros((3, 3)))).data
        assert np.allclose(out[:, POS], s[:, POS] + s[:, VEL])
        assert np.allclose(out[:, VEL], s[:, VEL])

    def test_taylor_formula(self):
        s = np.zeros((1, 16))
        s[0, POS] = [5.0, 5.0, 5.0]
        d_v = np.array([[2.0, 0.0, 0.0]])
        out = dyn.step(ad.constant(s), ad.constant(d_v),
                       ad.constant(np.zeros((1, 3)))).data
        assert np.allclose(out[0, POS], [6.0, 5.0, 5.0])
        assert np.allclose(out[0, VEL], [2.0, 0.0, 0.0])

    def test_two_chained_steps(self):
        s = random_states(2, seed=3)
        zero = ad.constant(np.zeros((2, 3)))
        one = dyn.step(ad.constant(s), zero, zero)
        two = dyn.step(one, zero, zero).data
        assert np.allclose(two[:, POS], s[:, POS] + 2 * s[:, VEL])

    def test_intrinsics_carried(self):
        s = random_states(2, seed=4)
        out = dyn.step(ad.constant(s), ad.constant(np.ones((2, 3))),
                       ad.constant(np.full((2, 3), 0.5))).data
        assert np.allclose(out[:, 6:13], s[:, 6:13])
        assert np.allclose(out[:, TAU], 0.5)


class TestRollout:
    def test_zero_network_linear_30_frames(self):
        params = dyn.init_params(dyn.DynamicsConfig(seed=0))
        for t in params.values():
            t.data[:] = 0.0
        net = dyn.RecIntNet(params, dyn.StateScaler.identity(), dyn.DynamicsConfig())
        s0 = random_states(4, seed=11)
        roll = net.rollout_np(s0, 30)
        for t in (1, 10, 30):
            assert np.max(np.abs(roll[t][:, POS] - (s0[:, POS] + t * s0[:, VEL]))) < 1e-9

    def test_length_one_equals_single_step(self):
        net = randomized_net(seed=4)
        s0 = random_states(3, seed=12)
        roll = net.rollout_np(s0, 1)
        single = net.step_np(s0, np.ones(3, dtype=bool))
        assert np.array_equal(roll[1], single)

    def test_tau_fed_forward(self):
        net = randomized_net(seed=5)
        s0 = random_states(2, seed=13)
        roll = net.rollout_np(s0, 3)
        assert not np.allclose(roll[2][:, TAU], 0.0)


class TestNLL:
    def test_zero_at_perfect_prediction(self):
        p = np.random.default_rng(0).uniform(0, 10, (4, 3))
        loss = dyn.nll_loss(ad.constant(p), ad.constant(np.zeros((4, 3))),
                            p, np.ones(4))
        assert loss.item() == 0.0

    def test_stationary_point_at_log_err_squared(self):
        e = 0.7
        pred = ad.constant(np.full((1, 3), e))
        target = np.zeros((1, 3))
        w = np.ones(1)
        tau_star = np.log(e * e)
        grads = []
        for delta in (-1e-3, 1e-3):
            tau = ad.Tensor(np.full((1, 3), tau_star + delta), requires_grad=True)
            dyn.nll_loss(pred, tau, target, w).backward()
            grads.append(tau.grad[0, 0])
        assert grads[0] < 0 < grads[1]
        tau = ad.Tensor(np.full((1, 3), tau_star), requires_grad=True)
        dyn.nll_loss(pred, tau, target, w).backward()
        assert abs(tau.grad[0, 0]) < 1e-12

    def test_matches_scalar_reference(self):
        rng = np.random.default_rng(3)
        pred = rng.uniform(-5, 5, (5, 3))
        target = rng.uniform(-5, 5, (5, 3))
        tau = rng.uniform(-1, 1, (5, 3))
        w = (rng.uniform(0, 1, 5) > 0.3).astype(float)
        got = dyn.nll_loss(ad.constant(pred), ad.constant(tau), target, w).item()
        ref = 0.0
        for i in range(5):
            row = 0.0
            for a in range(3):
                err = pred[i, a] - target[i, a]
                row += err * err / np.exp(tau[i, a]) + tau[i, a]
            ref += row * w[i]
        ref /= max(w.sum(), 1.0)
        assert abs(got - ref) < 1e-12

    def test_occluded_rows_contribute_zero(self):
        rng = np.random.default_rng(4)
        pred = rng.uniform(-5, 5, (3, 3))
        tau = rng.uniform(-1, 1, (3, 3))
        target = rng.uniform(-5, 5, (3, 3))
        w_all = np.array([1.0, 0.0, 1.0])
        got = dyn.nll_loss(ad.constant(pred), ad.constant(tau), target, w_all).item()
        w_only = np.array([1.0, 1.0])
        keep = [0, 2]
        ref = dyn.nll_loss(ad.constant(pred[keep]), ad.constant(tau[keep]),
                           target[keep], w_only).item()
        assert abs(got - ref) < 1e-12

    def test_gradient_matches_fd(self):
        rng = np.random.default_rng(5)
        pred = ad.Tensor(rng.uniform(-2, 2, (4, 3)), requires_grad=True)
        tau = ad.Tensor(rng.uniform(-1, 1, (4, 3)), requires_grad=True)
        target = rng.uniform(-2, 2, (4, 3))
        w = np.ones(4)
        err = ad.max_grad_error(lambda: dyn.nll_loss(pred, tau, target, w),
                                [pred, tau], rng)
        assert err < 1e-5


class TestBaselines:
    def test_linear_near_zero_on_straight_path(self):
        s0 = random_states(1, seed=20)
        roll = dyn.linear_rollout(s0, 10)
        gt = s0[:, POS] + 10 * s0[:, VEL]
        assert np.allclose(roll[10][:, POS], gt)

    def test_linear_error_grows_after_bounce(self):
        from permaphys import scenesim as ss
        from permaphys.scenesim.world import Ball, WorldState3D

        ball = Ball(np.array([20.0, 100.0, 15.0]), np.array([-10.0, 0.0, 0.0]),
                    15.0, np.zeros(3))
        state = WorldState3D([ball], [])
        frames = [state]
        for _ in range(10):
            frames.append(ss.step_world(frames[-1]))
        cam = ss.Camera.make(90, 64)
        gt_px = [cam.project_points(f.balls[0].pos[None]) for f in frames]
        s0 = np.zeros((1, 16))
        s0[0, POS] = [gt_px[1][0][0], gt_px[1][1][0], gt_px[1][2][0]]
        s0[0, VEL] = s0[0, POS] - [gt_px[0][0][0], gt_px[0][1][0], gt_px[0][2][0]]
        roll = dyn.linear_rollout(s0, 9)
        errs = []
        for h in range(1, 10):
            gt = np.array([gt_px[1 + h][0][0], gt_px[1 + h][1][0], gt_px[1 + h][2][0]])
            errs.append(float(np.linalg.norm(roll[h][0, POS] - gt)))
        # the ball bounces off the wall at x=15 within a few frames
        assert errs[-1] > errs[0] + 1.0

    def test_mlp_padding_and_shapes(self):
        params = dyn.init_mlp_params(seed=0)
        mlp = dyn.MLPBaseline(params, dyn.StateScaler.identity())
        s = random_states(3, seed=21)
        out = mlp.step_np(s, np.ones(3, dtype=bool))
        assert out.shape == (3, 16)
        # zero-init final layer: identical to the linear prior
        assert np.allclose(out[:, POS], s[:, POS] + s[:, VEL])


class TestTrainingData:
    def test_video_state_array_and_sequences(self, tmp_path):
        from permaphys import scenesim as ss
        from permaphys.dynamics.train import seed_states, video_state_array
        from permaphys.scenesim.dataset import load_video

        spec = ss.GenSpec(resolution=48, seed=31, max_balls=3, max_boxes=1,
                          frames=12)
        ss.make_dataset(spec, {"dynamics": 2}, tmp_path)
        from permaphys.scenesim.dataset import list_split

        vd = load_video(list_split(tmp_path, "dynamics")[0])
        v = video_state_array(vd)
        assert v.states.shape[0] == 12
        # velocity convention: backward difference of positions
        assert np.allclose(v.states[3, :, VEL],
                           v.states[3, :, POS] - v.states[2, :, POS])
        seeds = seed_states(v, 0)
        assert np.allclose(seeds[:, TAU], 0.0)

    def test_short_sequences_rejected(self, tmp_path):
        import json

        from permaphys.autodiff import ContractError
        from permaphys.dynamics.train import DynamicsTrainConfig, train_dynamics

        (tmp_path / "dataset.json").write_text(json.dumps({"videos": []}))
        with pytest.raises(ContractError):
            train_dynamics(tmp_path, DynamicsTrainConfig(epochs=1))
