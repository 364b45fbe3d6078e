"""Two-stage hint predictor: a fused embedding+feature MLP with a binary
hint-classification head and a log-size regression head.

The network is small enough that forward, loss, and gradients are written
out explicitly in numpy; gradient correctness is pinned against central
finite differences in the test suite. The joint objective is

    L = lambda * mean(BCE(hint logit, y)) + (1 - lambda) * mean_+(SmoothL1(r_hat - r))

with the size term averaged over positive examples only (it is undefined
when no hint is needed). Inference averages the hint logit over several
independent dropout masks to reduce its variance; the size head is always
evaluated without dropout.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .core import Query, SchemaError
from .features import (
    FEATURE_NAMES,
    HashedNgramEmbedder,
    Mode,
    Standardizer,
    embedder_from_config,
    extract_features,
)

MODEL_SCHEMA = "shepherd-model/1"
LOGIT_CLAMP = 30.0

PARAM_KEYS = (
    "feat_w",
    "feat_b",
    "hint_w1",
    "hint_b1",
    "hint_w2",
    "hint_b2",
    "size_w1",
    "size_b1",
    "size_w2",
    "size_b2",
)


@dataclass(frozen=True)
class PredictorConfig:
    mode: Mode = Mode.PROACTIVE
    embedding_dim: int = 256
    fusion_dim: int = 32
    head_hidden: int = 64
    dropout_rate: float = 0.2
    multisample_passes: int = 8
    lambda_weight: float = 0.5
    huber_delta: float = 1.0
    learning_rate: float = 1e-3
    weight_decay: float = 0.01
    epochs: int = 40
    batch_size: int = 32
    ema_decay: float = 0.999
    seed: int = 0

    def __post_init__(self):
        if not (0.0 <= self.lambda_weight <= 1.0):
            raise ValueError("lambda_weight must be in [0, 1]")
        if not (0.0 <= self.dropout_rate < 1.0):
            raise ValueError("dropout_rate must be in [0, 1)")

    @property
    def feature_dim(self) -> int:
        return len(FEATURE_NAMES[Mode(self.mode)])

    @property
    def fused_dim(self) -> int:
        return self.embedding_dim + self.fusion_dim


@dataclass(frozen=True)
class Prediction:
    hint_logit: float
    hint_prob: float
    size_log: float


def sigmoid(x):
    return np.where(x >= 0, 1.0 / (1.0 + np.exp(-x)), np.exp(x) / (1.0 + np.exp(x)))


def init_params(cfg: PredictorConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    f, g, h, u = cfg.feature_dim, cfg.fusion_dim, cfg.head_hidden, cfg.fused_dim

    def w(fan_in, shape):
        return rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)

    return {
        "feat_w": w(f, (f, g)),
        "feat_b": np.zeros(g),
        "hint_w1": w(u, (u, h)),
        "hint_b1": np.zeros(h),
        "hint_w2": w(h, (h, 1)),
        "hint_b2": np.zeros(1),
        "size_w1": w(u, (u, h)),
        "size_b1": np.zeros(h),
        "size_w2": w(h, (h, 1)),
        "size_b2": np.zeros(1),
    }


@dataclass
class DropoutMasks:
    """Inverted-dropout masks for one forward pass (ones == no dropout)."""

    hint_u: np.ndarray
    hint_h: np.ndarray
    size_u: np.ndarray
    size_h: np.ndarray

    @classmethod
    def ones(cls, n: int, fused_dim: int, hidden: int) -> "DropoutMasks":
        return cls(
            hint_u=np.ones((n, fused_dim)),
            hint_h=np.ones((n, hidden)),
            size_u=np.ones((n, fused_dim)),
            size_h=np.ones((n, hidden)),
        )

    @classmethod
    def sample(cls, n: int, fused_dim: int, hidden: int, rate: float, rng: np.random.Generator) -> "DropoutMasks":
        if rate <= 0:
            return cls.ones(n, fused_dim, hidden)
        keep = 1.0 - rate

        def mask(shape):
            return (rng.random(shape) < keep).astype(np.float64) / keep

        return cls(hint_u=mask((n, fused_dim)), hint_h=mask((n, hidden)), size_u=mask((n, fused_dim)), size_h=mask((n, hidden)))


def _fuse(params: dict, xf: np.ndarray, xe: np.ndarray):
    g_pre = xf @ params["feat_w"] + params["feat_b"]
    g = np.maximum(g_pre, 0.0)
    u = np.concatenate([xe, g], axis=1)
    return g_pre, g, u


def _head(u: np.ndarray, w1, b1, w2, b2, mask_u, mask_h):
    u_d = u * mask_u
    h_pre = u_d @ w1 + b1
    h = np.maximum(h_pre, 0.0)
    h_d = h * mask_h
    out = (h_d @ w2 + b2)[:, 0]
    return out, (u_d, h_pre, h, h_d)


def forward_batch(
    params: dict,
    xf: np.ndarray,
    xe: np.ndarray,
    masks: DropoutMasks | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Hint logits and size predictions for a batch (no dropout when
    masks is None)."""
    n = xf.shape[0]
    if masks is None:
        masks = DropoutMasks.ones(n, xe.shape[1] + params["feat_b"].shape[0], params["hint_b1"].shape[0])
    _, _, u = _fuse(params, xf, xe)
    yhat, _ = _head(u, params["hint_w1"], params["hint_b1"], params["hint_w2"], params["hint_b2"], masks.hint_u, masks.hint_h)
    rhat, _ = _head(u, params["size_w1"], params["size_b1"], params["size_w2"], params["size_b2"], masks.size_u, masks.size_h)
    return yhat, rhat


def hint_logits_multisample(
    params: dict,
    xf: np.ndarray,
    xe: np.ndarray,
    passes: int,
    dropout_rate: float,
    rng: np.random.Generator,
) -> np.ndarray:
    """Average the hint logit over `passes` independent dropout masks."""
    n = xf.shape[0]
    fused = xe.shape[1] + params["feat_b"].shape[0]
    hidden = params["hint_b1"].shape[0]
    _, _, u = _fuse(params, xf, xe)
    total = np.zeros(n)
    for _ in range(max(1, passes)):
        masks = DropoutMasks.sample(n, fused, hidden, dropout_rate, rng)
        logits, _ = _head(
            u, params["hint_w1"], params["hint_b1"], params["hint_w2"], params["hint_b2"], masks.hint_u, masks.hint_h
        )
        total += logits
    return total / max(1, passes)


def predict_batch(
    params: dict,
    xf: np.ndarray,
    xe: np.ndarray,
    cfg: PredictorConfig,
    rng: np.random.Generator | None = None,
) -> list[Prediction]:
    """Multisample hint probabilities plus plain size predictions.

    Logits are clamped to +/-30 before the sigmoid so probabilities stay in
    the open interval. The default rng is seeded, keeping serving
    deterministic for identical inputs.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    logits = hint_logits_multisample(params, xf, xe, cfg.multisample_passes, cfg.dropout_rate, rng)
    _, rhat = forward_batch(params, xf, xe, masks=None)
    logits = np.clip(logits, -LOGIT_CLAMP, LOGIT_CLAMP)
    probs = sigmoid(logits)
    return [Prediction(float(z), float(p), float(r)) for z, p, r in zip(logits, probs, rhat)]


def smooth_l1(z: np.ndarray, delta: float) -> np.ndarray:
    az = np.abs(z)
    return np.where(az < delta, 0.5 * z * z, delta * (az - 0.5 * delta))


def smooth_l1_grad(z: np.ndarray, delta: float) -> np.ndarray:
    return np.where(np.abs(z) < delta, z, delta * np.sign(z))


def bce_with_logits(z: np.ndarray, y: np.ndarray) -> np.ndarray:
    return np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))


def loss_total(
    params: dict,
    xf: np.ndarray,
    xe: np.ndarray,
    y: np.ndarray,
    r: np.ndarray,
    lambda_weight: float,
    huber_delta: float = 1.0,
    masks: DropoutMasks | None = None,
) -> tuple[float, dict[str, np.ndarray]]:
    """Joint loss and analytic gradients for a batch.

    `y` is the 0/1 hint indicator, `r` the log-size target (ignored for
    negatives). Gradients are exact for the given dropout masks.
    """
    n = xf.shape[0]
    if n == 0:
        raise ValueError("loss needs a non-empty batch")
    if masks is None:
        masks = DropoutMasks.ones(n, xe.shape[1] + params["feat_b"].shape[0], params["hint_b1"].shape[0])

    g_pre, g, u = _fuse(params, xf, xe)
    yhat, hint_cache = _head(
        u, params["hint_w1"], params["hint_b1"], params["hint_w2"], params["hint_b2"], masks.hint_u, masks.hint_h
    )
    rhat, size_cache = _head(
        u, params["size_w1"], params["size_b1"], params["size_w2"], params["size_b2"], masks.size_u, masks.size_h
    )

    pos = y > 0.5
    n_pos = int(pos.sum())
    bce = bce_with_logits(yhat, y)
    loss = lambda_weight * float(bce.mean())
    residual = rhat - r
    if n_pos > 0:
        loss += (1.0 - lambda_weight) * float(smooth_l1(residual[pos], huber_delta).mean())

    d_yhat = lambda_weight * (sigmoid(yhat) - y) / n
    d_rhat = np.zeros(n)
    if n_pos > 0 and lambda_weight < 1.0:
        d_rhat[pos] = (1.0 - lambda_weight) * smooth_l1_grad(residual[pos], huber_delta) / n_pos

    grads = {k: np.zeros_like(v) for k, v in params.items()}

    def head_backward(d_out: np.ndarray, cache, w1_key: str, w2_key: str, mask_u, mask_h) -> np.ndarray:
        u_d, h_pre, h, h_d = cache
        d_out2 = d_out[:, None]
        grads[w2_key] += h_d.T @ d_out2
        grads[w2_key.replace("w", "b")] += d_out2.sum(axis=0)
        d_h = (d_out2 @ params[w2_key].T) * mask_h
        d_h_pre = d_h * (h_pre > 0)
        grads[w1_key] += u_d.T @ d_h_pre
        grads[w1_key.replace("w", "b")] += d_h_pre.sum(axis=0)
        return (d_h_pre @ params[w1_key].T) * mask_u

    d_u = head_backward(d_yhat, hint_cache, "hint_w1", "hint_w2", masks.hint_u, masks.hint_h)
    d_u += head_backward(d_rhat, size_cache, "size_w1", "size_w2", masks.size_u, masks.size_h)

    d_g = d_u[:, xe.shape[1] :]
    d_g_pre = d_g * (g_pre > 0)
    grads["feat_w"] += xf.T @ d_g_pre
    grads["feat_b"] += d_g_pre.sum(axis=0)
    return loss, grads


@dataclass
class TrainedModel:
    """A trained predictor plus everything needed to reproduce its inputs:
    frozen standardization stats, the embedding provider config, and a
    fingerprint of the training data."""

    config: PredictorConfig
    params: dict[str, np.ndarray]
    standardizer: Standardizer
    embedder_config: dict
    fingerprint: str = ""
    val_loss: float = float("nan")
    history: list[dict] = field(default_factory=list)

    def __post_init__(self):
        self._embedder = embedder_from_config(self.embedder_config)

    @property
    def mode(self) -> Mode:
        return Mode(self.config.mode)

    def predict_arrays(self, xf_raw: np.ndarray, texts: list[str], rng=None) -> list[Prediction]:
        xf = self.standardizer.transform(xf_raw)
        xe = np.stack([self._embedder.embed(t) for t in texts])
        return predict_batch(self.params, xf, xe, self.config, rng=rng)

    def predict(self, query: Query, slm_samples=None, rng=None) -> Prediction:
        fv = extract_features(query, slm_samples, self.mode)
        xf_raw = fv.to_array(self.mode)[None, :]
        return self.predict_arrays(xf_raw, [query.text], rng=rng)[0]

    def save(self, path: str | Path) -> None:
        payload = {
            "schema": MODEL_SCHEMA,
            "config": {**self.config.__dict__, "mode": self.config.mode.value},
            "params": {k: v.tolist() for k, v in self.params.items()},
            "standardizer": self.standardizer.to_json(),
            "embedder": self.embedder_config,
            "fingerprint": self.fingerprint,
            "val_loss": self.val_loss,
            "history": self.history,
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path: str | Path) -> "TrainedModel":
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
        if payload.get("schema") != MODEL_SCHEMA:
            raise SchemaError(f"expected schema {MODEL_SCHEMA!r}, got {payload.get('schema')!r}")
        cfg_data = dict(payload["config"])
        cfg_data["mode"] = Mode(cfg_data["mode"])
        config = PredictorConfig(**cfg_data)
        params = {k: np.asarray(v, dtype=np.float64) for k, v in payload["params"].items()}
        missing = set(PARAM_KEYS) - set(params)
        if missing:
            raise SchemaError(f"model artifact missing parameters: {sorted(missing)}")
        return cls(
            config=config,
            params=params,
            standardizer=Standardizer.from_json(payload["standardizer"]),
            embedder_config=payload["embedder"],
            fingerprint=payload.get("fingerprint", ""),
            val_loss=payload.get("val_loss", float("nan")),
            history=payload.get("history", []),
        )


def dataset_fingerprint(examples) -> str:
    """Stable digest of (id, n_star) pairs identifying the training data."""
    blob = json.dumps(sorted((e.query.id, e.n_star) for e in examples)).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()
