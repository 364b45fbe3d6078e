"""Training loop for the hint predictor.

Minibatches are drawn with class-balanced weighted sampling (positives and
negatives near 50/50 per batch), optimized with adaptive-moment gradient
descent and decoupled weight decay, while an exponential moving average of
the weights is maintained; the returned model is the EMA snapshot with the
best validation loss. Everything is driven by one seeded generator, so two
runs with the same seed produce identical loss curves and artifacts.
"""

from __future__ import annotations

import math
import warnings

import numpy as np

from .features import FEATURE_NAMES, HashedNgramEmbedder, Mode, Standardizer
from .labeling import LabeledExample
from .predictor import (
    DropoutMasks,
    PredictorConfig,
    TrainedModel,
    dataset_fingerprint,
    forward_batch,
    init_params,
    loss_total,
    sigmoid,
)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


def feature_matrix(examples: list[LabeledExample], mode: Mode) -> np.ndarray:
    rows = []
    for ex in examples:
        if mode == Mode.PROACTIVE:
            rows.append([float(ex.q_len)])
        else:
            if ex.avg_entropy is None or ex.avg_output_len is None:
                raise ValueError(
                    f"example {ex.query.id!r} lacks SLM sample statistics; relabel with reactive_samples > 0"
                )
            rows.append([float(ex.q_len), ex.avg_entropy, ex.avg_output_len])
    return np.asarray(rows, dtype=np.float64)


def class_balance_probabilities(y: np.ndarray) -> np.ndarray:
    """Per-example sampling probabilities weighting each class equally.

    Falls back to uniform sampling (with a warning) when one class is empty.
    """
    n = len(y)
    n_pos = int(y.sum())
    if n_pos == 0 or n_pos == n:
        warnings.warn("dataset has a single class; falling back to uniform sampling", stacklevel=2)
        return np.full(n, 1.0 / n)
    weights = np.where(y > 0.5, 1.0 / n_pos, 1.0 / (n - n_pos))
    return weights / weights.sum()


def adamw_step(params, grads, state, lr: float, weight_decay: float) -> None:
    state["t"] += 1
    t = state["t"]
    for key, g in grads.items():
        m = state["m"][key] = ADAM_BETA1 * state["m"][key] + (1 - ADAM_BETA1) * g
        v = state["v"][key] = ADAM_BETA2 * state["v"][key] + (1 - ADAM_BETA2) * (g * g)
        m_hat = m / (1 - ADAM_BETA1**t)
        v_hat = v / (1 - ADAM_BETA2**t)
        params[key] -= lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
        if "_w" in key:  # decoupled decay on weight matrices only, not biases
            params[key] -= lr * weight_decay * params[key]


def update_ema(shadow: dict, params: dict, decay: float) -> None:
    for key in params:
        shadow[key] = decay * shadow[key] + (1.0 - decay) * params[key]


def evaluate_split(params, xf, xe, y, r, cfg: PredictorConfig) -> dict:
    yhat, rhat = forward_batch(params, xf, xe, masks=None)
    loss, _ = loss_total(params, xf, xe, y, r, cfg.lambda_weight, cfg.huber_delta)
    hint_acc = float(((sigmoid(yhat) >= 0.5) == (y > 0.5)).mean())
    pos = y > 0.5
    size_mae = float(np.abs(rhat[pos] - r[pos]).mean()) if pos.any() else 0.0
    return {"loss": float(loss), "hint_acc": hint_acc, "size_mae_log": size_mae}


def train(
    train_examples: list[LabeledExample],
    val_examples: list[LabeledExample],
    cfg: PredictorConfig,
    embedder: HashedNgramEmbedder | None = None,
    verbose: bool = False,
) -> TrainedModel:
    if not train_examples or not val_examples:
        raise ValueError("training needs non-empty train and validation splits")
    mode = Mode(cfg.mode)
    if embedder is None:
        embedder = HashedNgramEmbedder(dim=cfg.embedding_dim)
    if embedder.dim != cfg.embedding_dim:
        raise ValueError("embedder dimension must match config embedding_dim")

    xf_train_raw = feature_matrix(train_examples, mode)
    xf_val_raw = feature_matrix(val_examples, mode)
    standardizer = Standardizer.fit(xf_train_raw)
    xf_train = standardizer.transform(xf_train_raw)
    xf_val = standardizer.transform(xf_val_raw)

    xe_train = np.stack([embedder.embed(e.query.text) for e in train_examples])
    xe_val = np.stack([embedder.embed(e.query.text) for e in val_examples])
    y_train = np.array([1.0 if e.y else 0.0 for e in train_examples])
    y_val = np.array([1.0 if e.y else 0.0 for e in val_examples])
    r_train = np.array([e.r for e in train_examples])
    r_val = np.array([e.r for e in val_examples])

    rng = np.random.default_rng(cfg.seed)
    params = init_params(cfg, rng)
    shadow = {k: v.copy() for k, v in params.items()}
    state = {"t": 0, "m": {k: np.zeros_like(v) for k, v in params.items()}, "v": {k: np.zeros_like(v) for k, v in params.items()}}
    probs = class_balance_probabilities(y_train)

    n = len(train_examples)
    steps_per_epoch = max(1, math.ceil(n / cfg.batch_size))
    best_val = float("inf")
    best_params = {k: v.copy() for k, v in shadow.items()}
    history: list[dict] = []

    for epoch in range(cfg.epochs):
        epoch_losses = []
        for _ in range(steps_per_epoch):
            idx = rng.choice(n, size=min(cfg.batch_size, n), replace=True, p=probs)
            xf_b, xe_b, y_b, r_b = xf_train[idx], xe_train[idx], y_train[idx], r_train[idx]
            masks = DropoutMasks.sample(len(idx), cfg.fused_dim, cfg.head_hidden, cfg.dropout_rate, rng)
            loss, grads = loss_total(params, xf_b, xe_b, y_b, r_b, cfg.lambda_weight, cfg.huber_delta, masks=masks)
            adamw_step(params, grads, state, cfg.learning_rate, cfg.weight_decay)
            update_ema(shadow, params, cfg.ema_decay)
            epoch_losses.append(loss)

        val_metrics = evaluate_split(shadow, xf_val, xe_val, y_val, r_val, cfg)
        history.append(
            {
                "epoch": epoch,
                "train_loss": float(np.mean(epoch_losses)),
                "val_loss": val_metrics["loss"],
                "val_hint_acc": val_metrics["hint_acc"],
                "val_size_mae_log": val_metrics["size_mae_log"],
            }
        )
        if verbose:
            print(
                f"[train] epoch={epoch} train_loss={history[-1]['train_loss']:.4f} "
                f"val_loss={val_metrics['loss']:.4f} val_hint_acc={val_metrics['hint_acc']:.3f}"
            )
        if val_metrics["loss"] < best_val:
            best_val = val_metrics["loss"]
            best_params = {k: v.copy() for k, v in shadow.items()}

    return TrainedModel(
        config=cfg,
        params=best_params,
        standardizer=standardizer,
        embedder_config=embedder.config(),
        fingerprint=dataset_fingerprint(list(train_examples) + list(val_examples)),
        val_loss=best_val,
        history=history,
    )
