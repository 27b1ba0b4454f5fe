"""Zero-shot split protocols, CACC scoring, and experiment orchestration.

Splits follow the first-m / last-k class protocol and the radical
frequency protocol; evaluation restricts the lexicon to the candidate set
(union of train and test classes), decodes every test sample, resolves
characters through rectification and support matching, and reports CACC
with a per-trace breakdown.
"""

from __future__ import annotations

import math
import time
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .glyphgen import RenderConfig, load_manifest, load_sample
from .lexicon import Lexicon, LexiconError, build_confusable_set, rectify
from .matcher import build_support_bank, stroke_to_character
from .model import (
    AdadeltaState,
    DecoderConfig,
    EncoderConfig,
    ModelParams,
    apply_adadelta,
    char_head_logits,
    encode,
    greedy_decode,
    init_params,
    train_step,
)
from .numerics import Tape, add, cross_entropy, scale

# per-n radical thresholds used at full scale; desk alphabets scale these
FULL_SCALE_THRESHOLDS = (50, 40, 30, 20, 10)
FULL_SCALE_CLASSES = 3755


class ProtocolError(ValueError):
    """Invalid split parameters or a hygiene violation."""


@dataclass
class SplitSpec:
    kind: str  # char_zero_shot | radical_zero_shot | seen | cross_alphabet
    train_classes: list[str]
    test_classes: list[str]
    seed: int = 0
    params: dict = field(default_factory=dict)


@dataclass
class ExperimentResult:
    kind: str
    metric: str
    cacc: float
    n_test: int
    n_candidates: int
    n_train_classes: int
    n_test_classes: int
    trace_counts: dict[str, int]
    confusions: list[tuple[str, str, int]]
    config_echo: dict[str, str]
    seed: int
    wall_clock_seconds: float = 0.0
    # populated on request only; never serialized
    predictions: list[tuple[str, str]] | None = None
    candidates: list[str] | None = None


def char_zero_shot_split(ordered_chars: list[str], m: int, test_count: int) -> SplitSpec:
    """First ``m`` classes train, last ``test_count`` classes test."""
    if m < 0 or test_count < 1:
        raise ProtocolError("need m >= 0 and test_count >= 1")
    if m + test_count > len(ordered_chars):
        raise ProtocolError(
            f"m={m} plus test_count={test_count} overlaps on {len(ordered_chars)} classes"
        )
    return SplitSpec(
        kind="char_zero_shot",
        train_classes=list(ordered_chars[:m]),
        test_classes=list(ordered_chars[-test_count:]),
        params={"m": m, "test_count": test_count},
    )


def radical_zero_shot_split(lexicon: Lexicon, n: int) -> SplitSpec:
    """Characters containing any radical rarer than ``n`` become the test set.

    Radical frequency counts one occurrence per (character, radical) pair.
    Characters without radical data stay in the training set.
    """
    if n < 1:
        raise ProtocolError("threshold n must be >= 1")
    if not any(e.radicals for e in lexicon.entries):
        raise LexiconError("lexicon carries no radical data")
    freq: Counter[str] = Counter()
    for e in lexicon.entries:
        for r in set(e.radicals):
            freq[r] += 1
    train, test = [], []
    for e in lexicon.entries:
        if any(freq[r] < n for r in set(e.radicals)):
            test.append(e.char_id)
        else:
            train.append(e.char_id)
    return SplitSpec("radical_zero_shot", train, test, params={"n": n})


def seen_split(chars: list[str]) -> SplitSpec:
    return SplitSpec("seen", list(chars), list(chars))


def cross_alphabet_split(lexicon_b: Lexicon) -> SplitSpec:
    """Evaluation-only split over a second alphabet; nothing trains on it."""
    ids = [e.char_id for e in lexicon_b.entries]
    return SplitSpec("cross_alphabet", [], ids)


def scaled_radical_thresholds(alphabet_size: int) -> list[int]:
    """Full-scale per-n thresholds scaled to a desk alphabet, floored at 1."""
    factor = alphabet_size / FULL_SCALE_CLASSES
    return [max(1, math.ceil(b * factor)) for b in FULL_SCALE_THRESHOLDS]


def build_candidate_set(split: SplitSpec, mode: str = "union") -> list[str]:
    """Candidate classes for evaluation; the union reading is the default.

    The intersection reading would leave zero-shot evaluation without its
    test classes, so it exists only for explicit comparison runs.
    """
    train, test = set(split.train_classes), set(split.test_classes)
    if mode == "union":
        return sorted(train | test)
    if mode == "intersection":
        return sorted(train & test)
    raise ProtocolError(f"unknown candidate mode {mode!r}")


def cacc(predictions: list[str], golds: list[str]) -> float:
    """Character accuracy: exact matches over total."""
    if len(predictions) != len(golds):
        raise ProtocolError(f"length mismatch: {len(predictions)} vs {len(golds)}")
    if not predictions:
        raise ProtocolError("empty prediction list")
    hits = sum(1 for p, g in zip(predictions, golds) if p == g)
    return hits / len(predictions)


def seen_character_fallback(
    p_rec: str,
    confusable,
    stroke_result: str,
    feature_map,
    char_head_params: ModelParams,
    class_list: list[str],
) -> str:
    """Overrule confusable-sequence results with the character head's argmax."""
    if p_rec not in confusable:
        return stroke_result
    logits = char_head_logits(feature_map, char_head_params)
    if logits.data.shape[0] != len(class_list):
        raise ProtocolError(
            f"character head covers {logits.data.shape[0]} classes, list has {len(class_list)}"
        )
    return class_list[int(np.argmax(logits.data))]


@dataclass
class TrainConfig:
    steps: int = 600
    batch_size: int = 32
    seed: int = 0
    weight_decay: float = 1e-4
    head_steps: int = 200  # seen-setting character head


@dataclass
class ModelConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)


Sample = tuple[np.ndarray, str]  # image, char_id


def load_samples(data_dir: str | Path, allowed: set[str] | None = None) -> list[Sample]:
    manifest_path = Path(data_dir)
    if manifest_path.is_dir():
        manifest_path = manifest_path / "manifest.tsv"
    manifest = load_manifest(manifest_path)
    out = []
    for row in manifest.rows:
        if allowed is None or row.char_id in allowed:
            out.append((load_sample(manifest_path, row), row.char_id))
    return out


def audit_split_hygiene(split: SplitSpec, data_dir: str | Path, role: str) -> None:
    """Refuse data whose rows leak across the split.

    Training data for zero-shot kinds must contain no test-class rows;
    test data must contain only test-class rows.
    """
    manifest_path = Path(data_dir)
    if manifest_path.is_dir():
        manifest_path = manifest_path / "manifest.tsv"
    manifest = load_manifest(manifest_path)
    zero_shot = split.kind in ("char_zero_shot", "radical_zero_shot", "cross_alphabet")
    train_set, test_set = set(split.train_classes), set(split.test_classes)
    for row in manifest.rows:
        if role == "train":
            if row.split_tag == "test":
                raise ProtocolError(f"training data contains test-tagged row {row.sample_id}")
            if zero_shot and row.char_id in test_set and row.char_id not in train_set:
                raise ProtocolError(
                    f"zero-shot hygiene violation: training row {row.sample_id} "
                    f"has test class {row.char_id}"
                )
        elif role == "test":
            if row.char_id not in test_set:
                raise ProtocolError(
                    f"test data row {row.sample_id} has non-test class {row.char_id}"
                )


def train_model(
    samples: list[Sample],
    lexicon: Lexicon,
    train_config: TrainConfig,
    model_config: ModelConfig,
    char_classes: int = 0,
    progress=None,
) -> tuple[ModelParams, AdadeltaState, list[float]]:
    """Seeded Adadelta training over shuffled minibatches; returns the loss curve."""
    params = init_params(
        model_config.encoder, model_config.decoder, train_config.seed, char_classes
    )
    state = AdadeltaState(weight_decay=train_config.weight_decay)
    losses: list[float] = []
    if train_config.steps <= 0 or not samples:
        return params, state, losses
    labeled = [(img, lexicon.entry(cid).strokes) for img, cid in samples]
    rng = np.random.default_rng([train_config.seed, 0x7E57])
    order: list[int] = []
    for step in range(train_config.steps):
        if len(order) < train_config.batch_size:
            order = list(rng.permutation(len(labeled)))
        take, order = order[: train_config.batch_size], order[train_config.batch_size :]
        batch = [labeled[i] for i in take]
        loss, state = train_step(batch, params, state, model_config.encoder, model_config.decoder)
        losses.append(loss)
        if progress is not None:
            progress(step + 1, loss)
    return params, state, losses


def train_char_head(
    params: ModelParams,
    samples: list[Sample],
    class_list: list[str],
    train_config: TrainConfig,
    model_config: ModelConfig,
) -> None:
    """Fit only the final linear layer on frozen pooled encoder features."""
    index = {c: i for i, c in enumerate(class_list)}
    feats = []
    for img, cid in samples:
        fmap = encode(img, params, model_config.encoder)
        feats.append((fmap, index[cid]))
    head = {"head.w": params["head.w"], "head.b": params["head.b"]}
    state = AdadeltaState()
    rng = np.random.default_rng([train_config.seed, 0x4EAD])
    order: list[int] = []
    for _ in range(train_config.head_steps):
        if len(order) < train_config.batch_size:
            order = list(rng.permutation(len(feats)))
        take, order = order[: train_config.batch_size], order[train_config.batch_size :]
        for p in head.values():
            p.grad = None
        with Tape() as tape:
            total = None
            for i in take:
                fmap, target = feats[i]
                step_loss = cross_entropy(char_head_logits(fmap, params), target)
                total = step_loss if total is None else add(total, step_loss)
            tape.backward(scale(total, 1.0 / len(take)))
        apply_adadelta(head, state)


def evaluate_model(
    lexicon: Lexicon,
    candidates: list[str],
    test_samples: list[Sample],
    params: ModelParams,
    model_config: ModelConfig,
    metric: str,
    support_config: RenderConfig | None = None,
    workers: int = 1,
    use_char_head: bool = False,
    class_list: list[str] | None = None,
) -> tuple[list[str], list[str], list[tuple[str, str]], int]:
    """Decode every test sample against the candidate-restricted lexicon.

    Returns predictions, golds, per-sample traces, and the confusable-bank
    size. Evaluation is pure per sample, so any worker count gives the
    same result.
    """
    if not test_samples:
        raise ProtocolError("no test samples")
    sub = lexicon.restrict(candidates)
    confusable = build_confusable_set(sub)
    support_cfg = support_config or RenderConfig(seed=0)
    bank = build_support_bank(
        confusable.all_char_ids(), sub, params, model_config.encoder, support_cfg
    )

    def eval_one(sample: Sample) -> tuple[str, str, tuple[str, str]]:
        img, gold_char = sample
        fmap = encode(img, params, model_config.encoder)
        p, _, _ = greedy_decode(fmap, params, model_config.decoder)
        pred, trace = stroke_to_character(p, sub, confusable, fmap, bank, metric)
        if use_char_head:
            p_rec, _ = rectify(sub, p)
            pred = seen_character_fallback(p_rec, confusable, pred, fmap, params, class_list)
        return pred, gold_char, (trace.rectification, trace.emission)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(eval_one, test_samples))
    else:
        rows = [eval_one(s) for s in test_samples]
    preds = [r[0] for r in rows]
    golds = [r[1] for r in rows]
    traces = [r[2] for r in rows]
    return preds, golds, traces, len(bank)


def _trace_counts(traces: list[tuple[str, str]]) -> dict[str, int]:
    counts = {k: 0 for k in ("exact_direct", "exact_matched", "rectified_direct", "rectified_matched")}
    for rect, emit in traces:
        counts[f"{rect}_{emit}"] += 1
    return counts


def _confusion_summary(preds, golds, top: int = 10) -> list[tuple[str, str, int]]:
    miss = Counter((g, p) for p, g in zip(preds, golds) if p != g)
    ranked = sorted(miss.items(), key=lambda kv: (-kv[1], kv[0]))
    return [(g, p, c) for (g, p), c in ranked[:top]]


def run_experiment(
    lexicon: Lexicon,
    split: SplitSpec,
    train_data: str | Path,
    test_data: str | Path,
    train_config: TrainConfig,
    model_config: ModelConfig,
    metric: str = "cosine",
    support_config: RenderConfig | None = None,
    workers: int = 1,
    candidate_mode: str = "union",
    collect_predictions: bool = False,
) -> tuple[ExperimentResult, ModelParams]:
    """Train on the split's training classes and evaluate the test classes."""
    started = time.perf_counter()
    audit_split_hygiene(split, train_data, "train")
    audit_split_hygiene(split, test_data, "test")
    train_samples = load_samples(train_data, allowed=set(split.train_classes))
    test_samples = load_samples(test_data, allowed=set(split.test_classes))
    if train_config.steps > 0 and not train_samples:
        raise ProtocolError("no training samples for the split's training classes")

    candidates = build_candidate_set(split, candidate_mode)
    seen_kind = split.kind == "seen"
    params, _, _ = train_model(
        train_samples, lexicon, train_config, model_config,
        char_classes=len(candidates) if seen_kind else 0,
    )
    if seen_kind and train_config.head_steps > 0 and train_samples:
        train_char_head(params, train_samples, candidates, train_config, model_config)

    preds, golds, traces, bank_size = evaluate_model(
        lexicon, candidates, test_samples, params, model_config, metric,
        support_config=support_config, workers=workers,
        use_char_head=seen_kind and train_config.head_steps > 0,
        class_list=candidates if seen_kind else None,
    )
    result = ExperimentResult(
        kind=split.kind,
        metric=metric,
        cacc=cacc(preds, golds),
        n_test=len(test_samples),
        n_candidates=len(candidates),
        n_train_classes=len(split.train_classes),
        n_test_classes=len(split.test_classes),
        trace_counts=_trace_counts(traces),
        confusions=_confusion_summary(preds, golds),
        config_echo={
            "channels": str(model_config.encoder.channels),
            "num_blocks": str(model_config.encoder.num_blocks),
            "d_model": str(model_config.decoder.d_model),
            "heads": str(model_config.decoder.heads),
            "layers": str(model_config.decoder.layers),
            "steps": str(train_config.steps),
            "batch_size": str(train_config.batch_size),
            "bank_size": str(bank_size),
            **{k: str(v) for k, v in split.params.items()},
        },
        seed=train_config.seed,
        wall_clock_seconds=time.perf_counter() - started,
        predictions=list(zip(preds, golds)) if collect_predictions else None,
        candidates=candidates if collect_predictions else None,
    )
    return result, params


def cross_alphabet_eval(
    params: ModelParams,
    lexicon_b: Lexicon,
    split_b: SplitSpec,
    metric: str,
    test_data: str | Path,
    model_config: ModelConfig,
    support_config: RenderConfig | None = None,
    workers: int = 1,
) -> ExperimentResult:
    """Evaluate frozen params on a second alphabet's candidates and supports."""
    started = time.perf_counter()
    audit_split_hygiene(split_b, test_data, "test")
    test_samples = load_samples(test_data, allowed=set(split_b.test_classes))
    candidates = build_candidate_set(split_b)
    preds, golds, traces, bank_size = evaluate_model(
        lexicon_b, candidates, test_samples, params, model_config, metric,
        support_config=support_config, workers=workers,
    )
    return ExperimentResult(
        kind=split_b.kind,
        metric=metric,
        cacc=cacc(preds, golds),
        n_test=len(test_samples),
        n_candidates=len(candidates),
        n_train_classes=len(split_b.train_classes),
        n_test_classes=len(split_b.test_classes),
        trace_counts=_trace_counts(traces),
        confusions=_confusion_summary(preds, golds),
        config_echo={"bank_size": str(bank_size)},
        seed=split_b.seed,
        wall_clock_seconds=time.perf_counter() - started,
    )


RESULT_CSV_HEADER = (
    "kind,metric,n_train_classes,n_test_classes,n_candidates,n_test,cacc,"
    "exact_direct,exact_matched,rectified_direct,rectified_matched,seed"
)


def result_to_csv_row(r: ExperimentResult) -> str:
    t = r.trace_counts
    return ",".join(
        [
            r.kind,
            r.metric,
            str(r.n_train_classes),
            str(r.n_test_classes),
            str(r.n_candidates),
            str(r.n_test),
            f"{r.cacc:.6f}",
            str(t["exact_direct"]),
            str(t["exact_matched"]),
            str(t["rectified_direct"]),
            str(t["rectified_matched"]),
            str(r.seed),
        ]
    )


def result_to_text(r: ExperimentResult) -> str:
    """Key=value block for diffing; timing is deliberately excluded."""
    lines = [
        f"kind={r.kind}",
        f"metric={r.metric}",
        f"cacc={r.cacc:.6f}",
        f"n_test={r.n_test}",
        f"n_candidates={r.n_candidates}",
        f"n_train_classes={r.n_train_classes}",
        f"n_test_classes={r.n_test_classes}",
        f"seed={r.seed}",
    ]
    lines += [f"config.{k}={v}" for k, v in sorted(r.config_echo.items())]
    lines.append("[trace]")
    lines += [f"{k}={v}" for k, v in sorted(r.trace_counts.items())]
    lines.append("[confusions]")
    lines += [f"{g}\t{p}\t{c}" for g, p, c in r.confusions]
    return "\n".join(lines) + "\n"
