"""Stroke-to-character decoding.

A predicted stroke sequence is rectified against the lexicon; one-to-one
sequences emit their character directly, while confusable sequences are
resolved by comparing the pooled query features against a bank of clean
support-sample features, picking the most similar candidate. Support
images are rendered fresh from the lexicon and never come from training
data.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import records
from .glyphgen import RenderConfig, render_support
from .lexicon import ConfusableSet, Lexicon, exact_lookup, rectify
from .model import EncoderConfig, ModelParams, encode
from .numerics import Tensor

METRICS = ("euclidean", "cosine")


class MatchError(ValueError):
    """Bad metric inputs or a bank that cannot serve a candidate set."""


@dataclass
class SupportBank:
    """Pooled support feature vectors per character, one per font variant."""

    vectors: dict[str, list[np.ndarray]] = field(default_factory=dict)

    def __contains__(self, char_id: str) -> bool:
        return char_id in self.vectors

    def __len__(self) -> int:
        return len(self.vectors)

    def variants(self, char_id: str) -> list[np.ndarray]:
        try:
            return self.vectors[char_id]
        except KeyError:
            raise MatchError(f"support bank has no character {char_id!r}") from None


@dataclass(frozen=True)
class Trace:
    """How a prediction was resolved: rectification state and emission path."""

    rectification: str  # "exact" | "rectified"
    emission: str  # "direct" | "matched"

    def __str__(self):
        return f"{self.rectification},{self.emission}"


def pool_features(feature_map) -> np.ndarray:
    """Global average over spatial positions, one value per channel."""
    data = feature_map.data if isinstance(feature_map, Tensor) else np.asarray(feature_map)
    if data.ndim != 3:
        raise MatchError(f"expected (H, W, C) feature map, got shape {data.shape}")
    return data.mean(axis=(0, 1)).astype(np.float32)


def similarity(x1: np.ndarray, x2: np.ndarray, metric: str) -> float:
    """Similarity score: ``1 - ||x1 - x2||`` or the cosine of the angle."""
    x1 = np.asarray(x1, np.float64)
    x2 = np.asarray(x2, np.float64)
    if x1.shape != x2.shape:
        raise MatchError(f"dimension mismatch: {x1.shape} vs {x2.shape}")
    if metric == "euclidean":
        return float(1.0 - np.linalg.norm(x1 - x2))
    if metric == "cosine":
        n1 = np.linalg.norm(x1)
        n2 = np.linalg.norm(x2)
        if n1 == 0.0 or n2 == 0.0:
            raise MatchError("cosine similarity undefined for a zero vector")
        return float(np.dot(x1, x2) / (n1 * n2))
    raise MatchError(f"unknown metric {metric!r}; expected one of {METRICS}")


def build_support_bank(
    char_ids: list[str],
    lexicon: Lexicon,
    params: ModelParams,
    enc: EncoderConfig,
    render_cfg: RenderConfig,
    variants: tuple[int, ...] = (0, 1),
) -> SupportBank:
    """Encode clean support renderings of ``char_ids`` with frozen params.

    Call with the union of confusable candidates only; one-to-one
    characters never need stored features.
    """
    bank = SupportBank()
    for char_id in sorted(set(char_ids)):
        entry = lexicon.entry(char_id)
        vecs = []
        for v in variants:
            fmap = encode(render_support(entry, v, render_cfg), params, enc)
            vecs.append(pool_features(fmap))
        bank.vectors[char_id] = vecs
    return bank


def match_confusable(
    feature_map, candidates: list[str], bank: SupportBank, metric: str
) -> str:
    """Most similar candidate per the averaged support-variant scores.

    Ties break to the lower char_id; a single candidate short-circuits
    without touching the bank.
    """
    if not candidates:
        raise MatchError("empty candidate list")
    if len(candidates) == 1:
        return candidates[0]
    query = pool_features(feature_map)
    best_id = None
    best_score = -np.inf
    for char_id in sorted(candidates):
        scores = [similarity(query, v, metric) for v in bank.variants(char_id)]
        mean_score = float(np.mean(scores))
        if mean_score > best_score:
            best_id, best_score = char_id, mean_score
    return best_id


def stroke_to_character(
    p: str,
    lexicon: Lexicon,
    confusable: ConfusableSet,
    feature_map,
    bank: SupportBank,
    metric: str,
) -> tuple[str, Trace]:
    """Full test-time pipeline from a predicted stroke sequence to a character."""
    p_rec, distance = rectify(lexicon, p)
    rect = "exact" if distance == 0 else "rectified"
    if p_rec in confusable:
        winner = match_confusable(feature_map, list(confusable.candidates(p_rec)), bank, metric)
        return winner, Trace(rect, "matched")
    (char_id,) = exact_lookup(lexicon, p_rec)
    return char_id, Trace(rect, "direct")


def save_bank(bank: SupportBank, path: str | Path) -> None:
    tensors = {}
    for char_id, vecs in sorted(bank.vectors.items()):
        for i, v in enumerate(vecs):
            tensors[f"{char_id}/{i}"] = v
    records.write_records(path, tensors)


def load_bank(path: str | Path) -> SupportBank:
    bank = SupportBank()
    for name, arr in records.read_records(path).items():
        char_id, _, idx = name.rpartition("/")
        if not char_id or not idx.isdigit():
            raise records.RecordError(f"{path}: bad bank tensor name {name!r}")
        bank.vectors.setdefault(char_id, []).append(arr)
    return bank
