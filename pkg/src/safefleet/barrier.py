"""Neural control barrier function learning.

Per task (static / dynamic / multirobot) a scalar net is trained so that its
zero-superlevel set separates safe from unsafe samples while a discrete
forward-invariance term keeps the best candidate control inside the set:

    loss = mean relu(-B(x)) over safe
         + mean relu(B(x)) over unsafe
         + mean relu(-(B(x') - B(x))/dt - gamma*B(x)) over safe,

where x' follows the learned dynamics under the candidate that maximizes
B(x') among successors passing the OOD gate.  Unlabeled samples are
re-annotated every epoch against the current barrier: promoted to safe when
some control reaches a successor that is both non-negative under B and
in-distribution, demoted to unsafe for that epoch otherwise.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nn
from .data import (CONTEXT_DIMS, FEATURE_DIMS, LABEL_SAFE, LABEL_UNLABELED,
                   LABEL_UNSAFE, features_from_context)
from .dynamics import DynamicsModel, predict_next_batch
from .ood import RejectionModel, is_in_distribution_batch
from .world import DT, coast_step_batch


@dataclass
class BarrierModel:
    net: nn.Mlp      # feature_dim -> hidden -> 1, identity output
    task: str

    def value(self, features) -> np.ndarray:
        out = self.net.forward(np.atleast_2d(features))
        return out[:, 0]


@dataclass
class CbfTrainConfig:
    gamma: float = 1.0             # class-K slope, 1/s; alpha(b) = gamma*b
    candidates: np.ndarray = None  # (C, 2) discrete control set
    dt: float = DT
    epochs: int = 60
    lr: float = 1e-3
    batch_size: int = 256
    seed: int = 0
    hidden: tuple = (32, 32)
    holdout_frac: float = 0.1
    margin: float = 0.1   # hinge margin on the sign terms; keeps B from collapsing to ~0

    def __post_init__(self):
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if self.margin < 0:
            raise ValueError("margin must be non-negative")
        if self.gamma * self.dt >= 1:
            raise ValueError("gamma*dt must be < 1 for a contractive target")
        if self.candidates is None or len(self.candidates) == 0:
            raise ValueError("candidate set must be non-empty")
        self.candidates = np.asarray(self.candidates, dtype=float)


def advance_contexts(task: str, contexts: np.ndarray, controls: np.ndarray,
                     dyn: DynamicsModel) -> np.ndarray:
    """One-step successors: (N, D) contexts x (M, 2) controls -> (N, M, D).

    The controlled robot follows the learned dynamics; the static obstacle is
    fixed, the pedestrian history shifts forward under a constant-velocity
    extrapolation, and the other robot coasts at its current velocities.
    """
    C = np.atleast_2d(np.asarray(contexts, dtype=float))
    U = np.atleast_2d(np.asarray(controls, dtype=float))
    n, m = len(C), len(U)
    dt = dyn.dt
    states = np.repeat(C[:, 0:5], m, axis=0)
    ctrls = np.tile(U, (n, 1))
    next_states = predict_next_batch(dyn, states, ctrls).reshape(n, m, 5)
    out = np.empty((n, m, C.shape[1]))
    out[:, :, 0:5] = next_states
    if task == "static":
        out[:, :, 5:7] = C[:, None, 5:7]
    elif task == "dynamic":
        vel = (C[:, 9:11] - C[:, 5:7]) / (2.0 * dt)
        p_next = C[:, 9:11] + vel * dt
        out[:, :, 5:7] = C[:, None, 7:9]
        out[:, :, 7:9] = C[:, None, 9:11]
        out[:, :, 9:11] = p_next[:, None, :]
    elif task == "multirobot":
        other_next = coast_step_batch(C[:, 5:10], dt)
        out[:, :, 5:10] = other_next[:, None, :]
    else:
        raise ValueError(f"unknown task {task!r}")
    return out


def successor_features(task: str, contexts: np.ndarray, controls: np.ndarray,
                       dyn: DynamicsModel) -> np.ndarray:
    """(N, M, feature_dim) features of the one-step successors."""
    succ = advance_contexts(task, contexts, controls, dyn)
    n, m, d = succ.shape
    return features_from_context(task, succ.reshape(n * m, d)).reshape(n, m, -1)


def discrete_lie_derivative(barrier: BarrierModel, dyn: DynamicsModel,
                            context: np.ndarray, control, dt: float = DT) -> float:
    """(B(x') - B(x)) / dt for a single raw context under one control."""
    ctx = np.asarray(context, dtype=float)
    feats_now = features_from_context(barrier.task, ctx[None, :])
    feats_next = successor_features(barrier.task, ctx[None, :],
                                    np.asarray(control, dtype=float)[None, :], dyn)[0]
    b_now = barrier.value(feats_now)[0]
    b_next = barrier.value(feats_next)[0]
    return float((b_next - b_now) / dt)


def _gated_argmax(b_succ: np.ndarray, gate: np.ndarray) -> np.ndarray:
    """Row-wise argmax of b_succ restricted to gated candidates, ungated fallback.

    Ties resolve to the smallest candidate index (canonical ordering).
    """
    masked = np.where(gate, b_succ, -np.inf)
    has_any = gate.any(axis=1)
    choice = np.where(has_any, np.argmax(masked, axis=1), np.argmax(b_succ, axis=1))
    return choice


def best_safe_control(barrier: BarrierModel, dyn: DynamicsModel, rej: RejectionModel,
                      context: np.ndarray, candidates: np.ndarray) -> np.ndarray:
    """The control whose successor has the highest barrier value among
    in-distribution successors; falls back to the unrestricted argmax when the
    gate rejects every candidate."""
    candidates = np.asarray(candidates, dtype=float)
    if len(candidates) == 0:
        raise ValueError("candidate set must be non-empty")
    feats = successor_features(barrier.task, np.asarray(context)[None, :], candidates, dyn)[0]
    b_succ = barrier.value(feats)[None, :]
    gate = is_in_distribution_batch(rej, feats)[None, :]
    j = _gated_argmax(b_succ, gate)[0]
    return candidates[j]


def annotate_unlabeled(contexts: np.ndarray, barrier: BarrierModel, dyn: DynamicsModel,
                       rej: RejectionModel, candidates: np.ndarray):
    """Split unlabeled contexts into (promoted-safe mask, demoted-unsafe mask).

    A sample is promoted iff some candidate reaches a successor with B >= 0
    that is also in-distribution.
    """
    contexts = np.atleast_2d(contexts)
    if len(contexts) == 0:
        return np.zeros(0, bool), np.zeros(0, bool)
    feats = successor_features(barrier.task, contexts, candidates, dyn)
    n, m, fdim = feats.shape
    flat = feats.reshape(n * m, fdim)
    b = barrier.net.forward(flat)[:, 0].reshape(n, m)
    gate = is_in_distribution_batch(rej, flat).reshape(n, m)
    promoted = ((b >= 0.0) & gate).any(axis=1)
    return promoted, ~promoted


def cbf_loss(barrier: BarrierModel, safe_feats, safe_ctx, unsafe_feats,
             dyn: DynamicsModel, rej: RejectionModel, cfg: CbfTrainConfig,
             margin: float = 0.0) -> float:
    """Full-batch value of the training loss (no gradients).

    With margin = 0 this is the plain three-term hinge; training uses
    cfg.margin > 0 on the two sign terms so the zero level set lands between
    the classes instead of collapsing onto whichever side is denser.
    """
    safe_feats = np.atleast_2d(safe_feats)
    unsafe_feats = np.atleast_2d(unsafe_feats)
    if len(safe_feats) == 0 or len(unsafe_feats) == 0:
        raise ValueError("safe and unsafe sets must be non-empty")
    b_s = barrier.value(safe_feats)
    b_u = barrier.value(unsafe_feats)
    succ = successor_features(barrier.task, safe_ctx, cfg.candidates, dyn)
    n, m, fdim = succ.shape
    flat = succ.reshape(n * m, fdim)
    b_succ = barrier.net.forward(flat)[:, 0].reshape(n, m)
    gate = is_in_distribution_batch(rej, flat).reshape(n, m)
    j = _gated_argmax(b_succ, gate)
    b_next = b_succ[np.arange(n), j]
    lie = (b_next - b_s) / cfg.dt
    feas = np.maximum(-lie - cfg.gamma * b_s, 0.0)
    return float(np.maximum(margin - b_s, 0.0).mean()
                 + np.maximum(margin + b_u, 0.0).mean()
                 + feas.mean())


def train_cbf(task: str, samples, dyn: DynamicsModel, rej: RejectionModel,
              cfg: CbfTrainConfig):
    """Alternate unlabeled annotation and gradient epochs.

    Returns (BarrierModel, report) where report carries the loss curve and
    held-out sign accuracies on the original safe/unsafe labels.
    """
    feats_s, ctx_s = _collect(samples, LABEL_SAFE, task)
    feats_u, _ = _collect(samples, LABEL_UNSAFE, task)
    feats_n, ctx_n = _collect(samples, LABEL_UNLABELED, task)
    if len(feats_s) == 0 or len(feats_u) == 0:
        raise ValueError("need both safe and unsafe labeled samples")

    rng = np.random.default_rng(cfg.seed)
    hold_s = _holdout_mask(len(feats_s), cfg.holdout_frac, rng)
    hold_u = _holdout_mask(len(feats_u), cfg.holdout_frac, rng)
    held = {"safe": feats_s[hold_s], "unsafe": feats_u[hold_u]}
    feats_s, ctx_s = feats_s[~hold_s], ctx_s[~hold_s]
    feats_u = feats_u[~hold_u]

    net = nn.Mlp([FEATURE_DIMS[task], *cfg.hidden, 1], out_activation="identity", seed=cfg.seed)
    pool = np.vstack([feats_s, feats_u]) if len(feats_u) else feats_s
    mu, sd = pool.mean(axis=0), pool.std(axis=0)
    net.set_input_scaler(mu, np.where(sd > 1e-8, sd, 1.0))
    barrier = BarrierModel(net=net, task=task)

    # successor features and OOD gates are barrier-independent: precompute once
    succ_s = successor_features(task, ctx_s, cfg.candidates, dyn)
    gate_s = _gate_of(rej, succ_s)
    if len(ctx_n):
        succ_n = successor_features(task, ctx_n, cfg.candidates, dyn)
        gate_n = _gate_of(rej, succ_n)
    else:
        succ_n = np.empty((0,) + succ_s.shape[1:])
        gate_n = np.empty((0, succ_s.shape[1]), bool)

    params = net.parameters()
    opt = nn.Adam(params, lr=cfg.lr)
    curve = []
    n_cand = len(cfg.candidates)
    for _ in range(cfg.epochs):
        # soft re-annotation against the current barrier
        if len(ctx_n):
            flat = succ_n.reshape(-1, succ_n.shape[2])
            b_n = net.forward(flat)[:, 0].reshape(len(ctx_n), n_cand)
            promoted = ((b_n >= 0.0) & gate_n).any(axis=1)
        else:
            promoted = np.zeros(0, bool)
        ep_safe_feats = np.vstack([feats_s, feats_n[promoted]]) if promoted.any() else feats_s
        ep_succ = np.vstack([succ_s, succ_n[promoted]]) if promoted.any() else succ_s
        ep_gate = np.vstack([gate_s, gate_n[promoted]]) if promoted.any() else gate_s
        ep_unsafe = np.vstack([feats_u, feats_n[~promoted]]) if (~promoted).any() else feats_u

        ns, nu = len(ep_safe_feats), len(ep_unsafe)
        order_s = rng.permutation(ns)
        order_u = rng.permutation(nu)
        n_batches = max(1, ns // cfg.batch_size)
        bs_u = max(1, nu // n_batches)
        losses = []
        for b in range(n_batches):
            si = order_s[b * cfg.batch_size:(b + 1) * cfg.batch_size]
            ui = order_u[b * bs_u:(b + 1) * bs_u]
            if len(si) == 0 or len(ui) == 0:
                continue
            loss = _batch_step(net, opt, params, ep_safe_feats[si], ep_succ[si],
                               ep_gate[si], ep_unsafe[ui], cfg)
            if not np.isfinite(loss):
                raise nn.TrainingDiverged(f"CBF loss became {loss}")
            losses.append(loss)
        curve.append(float(np.mean(losses)))

    report = {
        "loss_curve": curve,
        "safe_sign_accuracy": float(np.mean(barrier.value(held["safe"]) >= 0.0))
        if len(held["safe"]) else float("nan"),
        "unsafe_sign_accuracy": float(np.mean(barrier.value(held["unsafe"]) < 0.0))
        if len(held["unsafe"]) else float("nan"),
        "held_safe": held["safe"],
        "held_unsafe": held["unsafe"],
    }
    return barrier, report


def _batch_step(net, opt, params, xs, succ, gate, xu, cfg):
    """One mini-batch gradient step on the three-term loss."""
    bs, n_cand, fdim = succ.shape
    bu = len(xu)
    flat = succ.reshape(bs * n_cand, fdim)
    b_succ = net.forward(flat)[:, 0].reshape(bs, n_cand)
    j = _gated_argmax(b_succ, gate)
    chosen = succ[np.arange(bs), j]

    stacked = np.vstack([xs, xu, chosen])
    out, cache = net.forward_cached(stacked)
    b_s = out[:bs, 0]
    b_u = out[bs:bs + bu, 0]
    b_next = out[bs + bu:, 0]

    lie = (b_next - b_s) / cfg.dt
    feas = -lie - cfg.gamma * b_s
    eps = cfg.margin
    loss = (np.maximum(eps - b_s, 0.0).mean() + np.maximum(eps + b_u, 0.0).mean()
            + np.maximum(feas, 0.0).mean())

    dY = np.zeros_like(out)
    dY[:bs, 0] -= (b_s < eps).astype(float) / bs                     # safe hinge
    dY[bs:bs + bu, 0] += (b_u > -eps).astype(float) / bu             # unsafe hinge
    active = (feas > 0).astype(float) / bs                           # feasibility hinge
    dY[:bs, 0] += active * (1.0 / cfg.dt - cfg.gamma)
    dY[bs + bu:, 0] -= active / cfg.dt
    dWs, dbs = net.backward(cache, dY)
    opt.step(params, dWs + dbs)
    return float(loss)


def _collect(samples, label, task):
    chosen = [s for s in samples if s.label == label]
    if not chosen:
        return (np.empty((0, FEATURE_DIMS[task])), np.empty((0, CONTEXT_DIMS[task])))
    return np.stack([s.features for s in chosen]), np.stack([s.context for s in chosen])


def _holdout_mask(n, frac, rng):
    mask = np.zeros(n, bool)
    k = int(n * frac)
    if k:
        mask[rng.choice(n, size=k, replace=False)] = True
    return mask


def _gate_of(rej, succ):
    n, m, fdim = succ.shape
    if n == 0:
        return np.empty((0, m), bool)
    return is_in_distribution_batch(rej, succ.reshape(n * m, fdim)).reshape(n, m)
