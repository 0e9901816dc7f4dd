import numpy as np
import pytest

from safefleet import nn
from safefleet.barrier import (BarrierModel, CbfTrainConfig, advance_contexts,
                               annotate_unlabeled, best_safe_control, cbf_loss,
                               discrete_lie_derivative, _gated_argmax)
from safefleet.data import features_from_context
from safefleet.dynamics import predict_next_batch, zero_dynamics
from safefleet.ood import RejectionModel
from safefleet.world import DT, candidate_controls, make_platform

FREIGHT_DYN = zero_dynamics(make_platform("freight", 1.0))
CANDS = candidate_controls(1.0)


def constant_barrier(task, value, in_dim):
    """Net that outputs `value` for every input."""
    net = nn.Mlp([in_dim, 4, 1], out_activation="identity", seed=0)
    net.zero_output()
    net.biases[-1][0] = value
    return BarrierModel(net=net, task=task)


def accept_all_rejection(in_dim):
    """Two-score net pinned far above both thresholds."""
    net = nn.Mlp([in_dim, 4, 2], out_activation="sigmoid", seed=0)
    net.zero_output()
    net.biases[-1][:] = 10.0  # sigmoid(10) ~ 1
    return RejectionModel(net=net, c=0.25)


def reject_all_rejection(in_dim):
    net = nn.Mlp([in_dim, 4, 2], out_activation="sigmoid", seed=0)
    net.zero_output()
    net.biases[-1][:] = -10.0
    return RejectionModel(net=net, c=0.25)


def distance_barrier():
    """Static-task barrier B = |relative obstacle position|_1 proxy: here a
    linear form w . features, handy for exact-value assertions."""
    net = nn.Mlp([5, 1], out_activation="identity", seed=0)
    net.weights[0][:] = np.array([[1.0, 1.0, 0.0, 0.0, 0.0]])
    net.biases[0][:] = 0.0
    return BarrierModel(net=net, task="static")


class TestAdvanceContexts:
    def test_static_obstacle_fixed_and_robot_advances(self):
        ctx = np.array([[0.0, 0.0, 0.0, 1.0, 0.0, 3.0, 4.0]])
        u = np.array([[1.0, 0.0]])
        out = advance_contexts("static", ctx, u, FREIGHT_DYN)
        assert out.shape == (1, 1, 7)
        assert np.allclose(out[0, 0, 5:7], [3.0, 4.0])
        want = predict_next_batch(FREIGHT_DYN, ctx[:, 0:5], u)[0]
        assert np.allclose(out[0, 0, 0:5], want)

    def test_dynamic_history_shifts_with_constant_velocity(self):
        # pedestrian history (1,0), (1.1,0), (1.2,0): velocity 1 m/s in +x
        ctx = np.array([[0, 0, 0, 0, 0, 1.0, 0.0, 1.1, 0.0, 1.2, 0.0]])
        out = advance_contexts("dynamic", ctx, np.array([[0.0, 0.0]]), FREIGHT_DYN)
        assert np.allclose(out[0, 0, 5:11], [1.1, 0.0, 1.2, 0.0, 1.3, 0.0])

    def test_multirobot_other_coasts(self):
        ctx = np.array([[0, 0, 0, 0, 0, 2.0, 0.0, 0.0, 1.0, 0.0]])
        out = advance_contexts("multirobot", ctx, np.array([[0.0, 0.0]]), FREIGHT_DYN)
        # other robot at (2,0) heading 0 with v=1: advances 0.1 in x
        assert np.allclose(out[0, 0, 5:10], [2.1, 0.0, 0.0, 1.0, 0.0])

    def test_unknown_task_rejected(self):
        with pytest.raises(ValueError):
            advance_contexts("aerial", np.zeros((1, 7)), np.zeros((1, 2)), FREIGHT_DYN)


class TestLieDerivative:
    def test_constant_barrier_gives_zero(self):
        b = constant_barrier("static", 0.5, 5)
        ctx = np.array([4.0, 4.0, 0.0, 1.0, 0.0, 6.0, 4.0])
        assert discrete_lie_derivative(b, FREIGHT_DYN, ctx, (1.0, 0.0)) == pytest.approx(0.0)

    def test_linear_barrier_arithmetic(self):
        # B = (obs_x - x) + (obs_y - y); driving +x at 1 m/s: dB = -0.1, lie = -1
        b = distance_barrier()
        ctx = np.array([0.0, 0.0, 0.0, 1.0, 0.0, 3.0, 0.0])
        lie = discrete_lie_derivative(b, FREIGHT_DYN, ctx, (1.0, 0.0))
        assert lie == pytest.approx(-1.0)

    def test_forward_difference_definition(self):
        b = distance_barrier()
        ctx = np.array([0.0, 0.0, 0.0, 1.0, 0.0, 3.0, 0.0])
        feats_now = features_from_context("static", ctx[None, :])
        b_now = b.value(feats_now)[0]
        lie = discrete_lie_derivative(b, FREIGHT_DYN, ctx, (1.0, 0.0))
        # reconstruct B(next) = B(now) + lie*dt
        assert b_now + lie * DT == pytest.approx(2.9)


class TestGatedArgmax:
    def test_ties_resolve_to_smallest_index(self):
        b = np.array([[1.0, 1.0, 0.5]])
        gate = np.ones((1, 3), bool)
        assert _gated_argmax(b, gate)[0] == 0

    def test_gate_restriction(self):
        b = np.array([[3.0, 2.0, 1.0]])
        gate = np.array([[False, True, True]])
        assert _gated_argmax(b, gate)[0] == 1

    def test_empty_gate_falls_back_unrestricted(self):
        b = np.array([[1.0, 5.0, 3.0]])
        gate = np.zeros((1, 3), bool)
        assert _gated_argmax(b, gate)[0] == 1


class TestBestSafeControl:
    CTX = np.array([4.0, 4.0, 0.0, 0.5, 0.0, 6.0, 4.0])

    def test_singleton_candidate_set(self):
        b = distance_barrier()
        rej = accept_all_rejection(5)
        u = best_safe_control(b, FREIGHT_DYN, rej, self.CTX, np.array([[0.3, 0.4]]))
        assert np.allclose(u, [0.3, 0.4])

    def test_scale_invariance(self):
        b = distance_barrier()
        b2 = distance_barrier()
        b2.net.weights[0] *= 2.0
        rej = accept_all_rejection(5)
        u1 = best_safe_control(b, FREIGHT_DYN, rej, self.CTX, CANDS)
        u2 = best_safe_control(b2, FREIGHT_DYN, rej, self.CTX, CANDS)
        assert np.allclose(u1, u2)

    def test_rejected_gate_falls_back_to_unrestricted_argmax(self):
        b = distance_barrier()
        u_open = best_safe_control(b, FREIGHT_DYN, accept_all_rejection(5), self.CTX, CANDS)
        u_shut = best_safe_control(b, FREIGHT_DYN, reject_all_rejection(5), self.CTX, CANDS)
        assert np.allclose(u_open, u_shut)  # all-or-nothing gates agree

    def test_empty_candidates_rejected(self):
        with pytest.raises(ValueError):
            best_safe_control(distance_barrier(), FREIGHT_DYN, accept_all_rejection(5),
                              self.CTX, np.empty((0, 2)))


class TestAnnotateUnlabeled:
    CTXS = np.array([[4.0, 4.0, 0.0, 0.5, 0.0, 6.0, 4.0],
                     [2.0, 2.0, 1.0, 0.2, 0.1, 2.5, 2.0]])

    def test_positive_barrier_promotes_all(self):
        b = constant_barrier("static", 1.0, 5)
        promoted, demoted = annotate_unlabeled(self.CTXS, b, FREIGHT_DYN,
                                               accept_all_rejection(5), CANDS)
        assert promoted.all() and not demoted.any()

    def test_negative_barrier_demotes_all(self):
        b = constant_barrier("static", -1.0, 5)
        promoted, demoted = annotate_unlabeled(self.CTXS, b, FREIGHT_DYN,
                                               accept_all_rejection(5), CANDS)
        assert demoted.all() and not promoted.any()

    def test_ood_gate_blocks_promotion(self):
        b = constant_barrier("static", 1.0, 5)
        promoted, demoted = annotate_unlabeled(self.CTXS, b, FREIGHT_DYN,
                                               reject_all_rejection(5), CANDS)
        assert demoted.all()

    def test_matches_exhaustive_enumeration(self):
        b = distance_barrier()
        rej = accept_all_rejection(5)
        promoted, _ = annotate_unlabeled(self.CTXS, b, FREIGHT_DYN, rej, CANDS)
        from safefleet.barrier import successor_features
        for i, ctx in enumerate(self.CTXS):
            feats = successor_features("static", ctx[None, :], CANDS, FREIGHT_DYN)[0]
            want = bool((b.value(feats) >= 0.0).any())
            assert bool(promoted[i]) == want


class TestCbfLoss:
    def test_perfect_separation_zero_loss(self):
        # B = (obs_x - x) - 2: safe contexts at distance > 2, unsafe below,
        # feasibility satisfied by the stop candidate (B constant under it)
        net = nn.Mlp([5, 1], out_activation="identity", seed=0)
        net.weights[0][:] = np.array([[1.0, 0.0, 0.0, 0.0, 0.0]])
        net.biases[0][:] = -2.0
        b = BarrierModel(net=net, task="static")
        safe_ctx = np.array([[0.0, 0.0, 0.0, 0.0, 0.0, 5.0, 0.0]])
        safe_feats = features_from_context("static", safe_ctx)
        unsafe_feats = np.array([[1.0, 0.0, 0.0, 0.0, 0.0]])  # B = -1
        cfg = CbfTrainConfig(candidates=CANDS)
        loss = cbf_loss(b, safe_feats, safe_ctx, unsafe_feats, FREIGHT_DYN,
                        accept_all_rejection(5), cfg, margin=0.0)
        assert loss == pytest.approx(0.0, abs=1e-9)

    def test_zero_barrier_zero_loss_at_zero_margin(self):
        b = constant_barrier("static", 0.0, 5)
        safe_ctx = np.array([[0.0, 0.0, 0.0, 0.0, 0.0, 5.0, 0.0]])
        safe_feats = features_from_context("static", safe_ctx)
        unsafe_feats = np.array([[1.0, 0.0, 0.0, 0.0, 0.0]])
        cfg = CbfTrainConfig(candidates=CANDS)
        loss = cbf_loss(b, safe_feats, safe_ctx, unsafe_feats, FREIGHT_DYN,
                        accept_all_rejection(5), cfg, margin=0.0)
        assert loss == pytest.approx(0.0, abs=1e-12)

    def test_margin_activates_sign_hinges(self):
        b = constant_barrier("static", 0.0, 5)
        safe_ctx = np.array([[0.0, 0.0, 0.0, 0.0, 0.0, 5.0, 0.0]])
        safe_feats = features_from_context("static", safe_ctx)
        unsafe_feats = np.array([[1.0, 0.0, 0.0, 0.0, 0.0]])
        cfg = CbfTrainConfig(candidates=CANDS)
        loss = cbf_loss(b, safe_feats, safe_ctx, unsafe_feats, FREIGHT_DYN,
                        accept_all_rejection(5), cfg, margin=0.1)
        assert loss == pytest.approx(0.2)  # 0.1 from each sign term

    def test_empty_sets_rejected(self):
        b = constant_barrier("static", 0.0, 5)
        cfg = CbfTrainConfig(candidates=CANDS)
        with pytest.raises(ValueError):
            cbf_loss(b, np.empty((0, 5)), np.empty((0, 7)), np.ones((1, 5)),
                     FREIGHT_DYN, accept_all_rejection(5), cfg)


class TestConfig:
    def test_gamma_dt_contraction_required(self):
        with pytest.raises(ValueError):
            CbfTrainConfig(gamma=10.0, candidates=CANDS, dt=0.1)
        with pytest.raises(ValueError):
            CbfTrainConfig(gamma=0.0, candidates=CANDS)
        with pytest.raises(ValueError):
            CbfTrainConfig(candidates=np.empty((0, 2)))
        with pytest.raises(ValueError):
            CbfTrainConfig(candidates=CANDS, margin=-0.1)


class TestTrainedBarriers(object):
    def test_sign_accuracies_from_report(self, training_report):
        for task, rep in training_report["tasks"].items():
            assert rep["safe_sign_accuracy"] >= 0.95, task
            assert rep["unsafe_sign_accuracy"] >= 0.95, task
