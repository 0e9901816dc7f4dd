"""Out-of-distribution rejection model.

Two bounded scores per input; a point counts as in-distribution only when
score1 > c and score2 > 1 - c.  Trained discriminatively against synthetic
negatives drawn uniformly from an inflated bounding box of the labeled data.

The two heads are independent sigmoids rather than a normalized pair: with
scores summing to one the two-inequality predicate is unsatisfiable for any
c in (0, 0.5), so independent bounded scores are the only reading under
which the thresholds mean anything.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn


@dataclass
class RejectionModel:
    net: nn.Mlp       # feature_dim -> hidden -> 2, sigmoid output
    c: float          # rejection threshold in (0, 0.5)

    def __post_init__(self):
        if not (0.0 < self.c < 0.5):
            raise ValueError("rejection threshold must lie in (0, 0.5)")


def inflated_bounds(features: np.ndarray, factor: float = 1.5):
    """Per-dim (lo, hi) of the data bounding box scaled by `factor` about its center."""
    lo = features.min(axis=0)
    hi = features.max(axis=0)
    width = hi - lo
    if np.any(width <= 0):
        bad = np.where(width <= 0)[0]
        raise ValueError(f"degenerate (zero-width) feature dims: {bad.tolist()}")
    center = (lo + hi) / 2.0
    half = width * factor / 2.0
    return center - half, center + half


def train_ood(features: np.ndarray, c: float, hidden=(32, 32), seed: int = 0,
              config: nn.TrainConfig | None = None, negatives_per_positive: float = 1.0,
              positive_weight: float = 2.0) -> RejectionModel:
    """Fit the two-score discriminator on labeled-data features."""
    features = np.asarray(features, dtype=float)
    if len(features) < 500:
        raise ValueError(f"need >= 500 in-distribution samples, got {len(features)}")
    config = config or nn.TrainConfig(lr=2e-3, batch_size=128, epochs=40, seed=seed)
    rng = np.random.default_rng(seed)
    lo, hi = inflated_bounds(features)
    n_neg = int(len(features) * negatives_per_positive)
    negatives = rng.uniform(lo, hi, size=(n_neg, features.shape[1]))

    X = np.vstack([features, negatives])
    Y = np.vstack([np.ones((len(features), 2)), np.zeros((n_neg, 2))])
    W = np.vstack([np.full((len(features), 2), positive_weight), np.ones((n_neg, 2))])

    net = nn.Mlp([features.shape[1], *hidden, 2], out_activation="sigmoid", seed=seed)
    mu, sd = X.mean(axis=0), X.std(axis=0)
    net.set_input_scaler(mu, np.where(sd > 1e-8, sd, 1.0))

    order = rng.permutation(len(X))
    X, Y, W = X[order], Y[order], W[order]

    def weighted_bce(pred, target):
        # targets carry the class weight in their sign-free companion array via closure
        return nn.bce_loss(pred, target, weights=w_batch)

    # manual batch loop so per-sample weights follow the shuffle
    params = net.parameters()
    opt = nn.Adam(params, lr=config.lr)
    run_rng = np.random.default_rng(config.seed)
    for _ in range(config.epochs):
        perm = run_rng.permutation(len(X))
        for start in range(0, len(X), config.batch_size):
            idx = perm[start:start + config.batch_size]
            w_batch = W[idx]
            pred, cache = net.forward_cached(X[idx])
            loss, dpred = weighted_bce(pred, Y[idx])
            if not np.isfinite(loss):
                raise nn.TrainingDiverged(f"OOD training loss became {loss}")
            dWs, dbs = net.backward(cache, dpred)
            opt.step(params, dWs + dbs)
    return RejectionModel(net=net, c=c)


def scores(model: RejectionModel, x) -> np.ndarray:
    return model.net.forward(x)


def is_in_distribution_batch(model: RejectionModel, X: np.ndarray) -> np.ndarray:
    s = model.net.forward(np.atleast_2d(X))
    return (s[:, 0] > model.c) & (s[:, 1] > 1.0 - model.c)


def is_in_distribution(model: RejectionModel, x) -> bool:
    x = np.asarray(x, dtype=float)
    if x.shape != (model.net.in_dim,):
        raise ValueError(f"expected feature vector of length {model.net.in_dim}")
    return bool(is_in_distribution_batch(model, x[None, :])[0])


def accepts(score1: float, score2: float, c: float) -> bool:
    """The literal two-inequality predicate on raw scores."""
    return score1 > c and score2 > 1.0 - c
