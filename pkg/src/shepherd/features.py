"""Feature extraction and text embedding for the hint predictor.

Proactive policies see only the query, so their feature vector is the query
token length alone. Reactive policies additionally see statistics of the K
sampled SLM responses: average entropy and average output length.

Per-sample entropy is -mean(token logprob) when logprob traces are
available. When any sample lacks a trace, the whole set falls back to a
disagreement proxy: the fraction of samples whose extracted answer differs
from the modal answer.
"""

from __future__ import annotations

import hashlib
from collections import Counter
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .backends import GenerationResult
from .core import Query, extract_answer


class Mode(str, Enum):
    PROACTIVE = "proactive"
    REACTIVE = "reactive"


FEATURE_NAMES = {
    Mode.PROACTIVE: ("query_token_len",),
    Mode.REACTIVE: ("query_token_len", "avg_entropy", "avg_output_len"),
}


@dataclass(frozen=True)
class FeatureVector:
    query_token_len: int
    avg_entropy: float | None = None
    avg_output_len: float | None = None

    def to_array(self, mode: Mode) -> np.ndarray:
        if mode == Mode.PROACTIVE:
            return np.array([float(self.query_token_len)], dtype=np.float64)
        if self.avg_entropy is None or self.avg_output_len is None:
            raise ValueError("reactive features require SLM sample statistics")
        return np.array(
            [float(self.query_token_len), self.avg_entropy, self.avg_output_len],
            dtype=np.float64,
        )


def modal_answer(answers: list[str]) -> str:
    """Most frequent answer; ties break toward the earliest occurrence."""
    if not answers:
        raise ValueError("no answers to vote over")
    counts = Counter(answers)
    best = max(counts.values())
    for a in answers:
        if counts[a] == best:
            return a
    raise AssertionError("unreachable")


def summarize_slm_samples(query: Query, samples: list[GenerationResult]) -> tuple[float, float]:
    """(avg_entropy, avg_output_len) over K sampled SLM responses."""
    if not samples:
        raise ValueError("reactive feature extraction needs at least one SLM sample")
    avg_output_len = float(np.mean([len(s.tokens) for s in samples]))
    if all(s.token_logprobs for s in samples):
        entropies = [-float(np.mean(s.token_logprobs)) for s in samples]
        avg_entropy = float(np.mean(entropies))
    else:
        answers = [extract_answer(s.text, query.task_kind) for s in samples]
        mode_ans = modal_answer(answers)
        avg_entropy = sum(1 for a in answers if a != mode_ans) / len(answers)
    return avg_entropy, avg_output_len


def extract_features(query: Query, slm_samples: list[GenerationResult] | None, mode: Mode) -> FeatureVector:
    q_len = len(query.prompt)
    if mode == Mode.PROACTIVE:
        return FeatureVector(query_token_len=q_len)
    if not slm_samples:
        raise ValueError("reactive mode requires SLM samples")
    avg_entropy, avg_output_len = summarize_slm_samples(query, slm_samples)
    return FeatureVector(query_token_len=q_len, avg_entropy=avg_entropy, avg_output_len=avg_output_len)


class HashedNgramEmbedder:
    """Deterministic hashed bag of character n-grams, L2-normalized.

    A self-contained stand-in for a pretrained text encoder; any provider
    with the same interface (name, dim, embed) can replace it.
    """

    def __init__(self, dim: int = 256, n_min: int = 3, n_max: int = 5):
        if dim <= 0:
            raise ValueError("embedding dim must be positive")
        self.dim = dim
        self.n_min = n_min
        self.n_max = n_max

    @property
    def name(self) -> str:
        return "hashed-ngram"

    def config(self) -> dict:
        return {"name": self.name, "dim": self.dim, "n_min": self.n_min, "n_max": self.n_max}

    def embed(self, text: str) -> np.ndarray:
        vec = np.zeros(self.dim, dtype=np.float64)
        if not text:
            return vec
        for n in range(self.n_min, self.n_max + 1):
            if len(text) < n:
                continue
            for i in range(len(text) - n + 1):
                gram = text[i : i + n]
                h = int.from_bytes(hashlib.blake2b(gram.encode("utf-8"), digest_size=8).digest(), "big")
                idx = h % self.dim
                sign = 1.0 if (h >> 62) & 1 == 0 else -1.0
                vec[idx] += sign
        norm = np.linalg.norm(vec)
        if norm > 0:
            vec /= norm
        return vec


def embedder_from_config(config: dict) -> HashedNgramEmbedder:
    name = config.get("name")
    if name != "hashed-ngram":
        raise ValueError(f"unknown embedding provider {name!r}")
    return HashedNgramEmbedder(
        dim=int(config.get("dim", 256)),
        n_min=int(config.get("n_min", 3)),
        n_max=int(config.get("n_max", 5)),
    )


DEFAULT_EMBEDDER_CONFIG = {"name": "hashed-ngram", "dim": 256, "n_min": 3, "n_max": 5}


@dataclass(frozen=True)
class Standardizer:
    """Per-feature mean/std learned on the training split and frozen."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, x: np.ndarray) -> "Standardizer":
        mean = x.mean(axis=0)
        std = x.std(axis=0)
        std = np.where(std < 1e-8, 1.0, std)
        return cls(mean=mean, std=std)

    def transform(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mean) / self.std

    def to_json(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_json(cls, data: dict) -> "Standardizer":
        return cls(mean=np.asarray(data["mean"], dtype=np.float64), std=np.asarray(data["std"], dtype=np.float64))
