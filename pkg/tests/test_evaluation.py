import random

import numpy as np
import pytest

from strokezs.alphabet import synthetic_alphabet
from strokezs.evaluation import (
    ExperimentResult,
    ModelConfig,
    ProtocolError,
    SplitSpec,
    TrainConfig,
    audit_split_hygiene,
    build_candidate_set,
    cacc,
    char_zero_shot_split,
    cross_alphabet_eval,
    cross_alphabet_split,
    radical_zero_shot_split,
    result_to_csv_row,
    result_to_text,
    run_experiment,
    scaled_radical_thresholds,
    seen_character_fallback,
    seen_split,
)
from strokezs.glyphgen import RenderConfig, generate_dataset
from strokezs.lexicon import CharacterEntry, Lexicon, LexiconError, build_confusable_set
from strokezs.model import DecoderConfig, EncoderConfig, encode, init_params

TINY_MODEL = ModelConfig(
    encoder=EncoderConfig(channels=8, num_blocks=1),
    decoder=DecoderConfig(d_model=16, heads=2, layers=1, max_len=16),
)


class TestCharZeroShotSplit:
    def test_first_m_last_k(self):
        chars = [f"c{i}" for i in range(1, 11)]
        split = char_zero_shot_split(chars, m=5, test_count=3)
        assert split.train_classes == ["c1", "c2", "c3", "c4", "c5"]
        assert split.test_classes == ["c8", "c9", "c10"]
        assert not set(split.train_classes) & set(split.test_classes)

    def test_reference_m_values(self):
        chars = [f"c{i:04d}" for i in range(3755)]
        for m in (500, 1000, 1500, 2000, 2755):
            split = char_zero_shot_split(chars, m=m, test_count=1000)
            assert len(split.train_classes) == m
            assert len(split.test_classes) == 1000
            assert not set(split.train_classes) & set(split.test_classes)

    def test_overlap_rejected(self):
        with pytest.raises(ProtocolError):
            char_zero_shot_split([f"c{i}" for i in range(10)], m=8, test_count=3)


class TestRadicalZeroShotSplit:
    def test_hand_counted(self):
        lex = Lexicon(
            [
                CharacterEntry("A", "A", "1", ("r1", "r2")),
                CharacterEntry("B", "B", "2", ("r1",)),
                CharacterEntry("C", "C", "3", ("r2", "r3")),
            ]
        )
        split = radical_zero_shot_split(lex, n=2)
        assert split.test_classes == ["C"]
        assert split.train_classes == ["A", "B"]

    def test_n_one_empty_test(self):
        lex = Lexicon([CharacterEntry("A", "A", "1", ("r1",))])
        assert radical_zero_shot_split(lex, n=1).test_classes == []

    def test_partition_is_exhaustive(self):
        entries = synthetic_alphabet(120, seed=8)
        lex = Lexicon(entries)
        split = radical_zero_shot_split(lex, n=3)
        ids = {e.char_id for e in entries}
        assert set(split.train_classes) | set(split.test_classes) == ids
        assert not set(split.train_classes) & set(split.test_classes)

    def test_monotone_training_growth(self):
        lex = Lexicon(synthetic_alphabet(150, seed=9))
        prev = None
        for n in sorted(scaled_radical_thresholds(150), reverse=True):
            train = set(radical_zero_shot_split(lex, n).train_classes)
            if prev is not None:
                assert prev <= train  # smaller n keeps at least these classes
            prev = train
        assert len(radical_zero_shot_split(lex, 10).train_classes) >= len(
            radical_zero_shot_split(lex, 50).train_classes
        )

    def test_requires_radical_data(self):
        lex = Lexicon([CharacterEntry("A", "A", "1")])
        with pytest.raises(LexiconError):
            radical_zero_shot_split(lex, n=2)

    def test_scaled_thresholds(self):
        assert scaled_radical_thresholds(3755) == [50, 40, 30, 20, 10]
        assert all(t >= 1 for t in scaled_radical_thresholds(10))
        assert scaled_radical_thresholds(300) == [4, 4, 3, 2, 1]


class TestCandidateSet:
    def test_union(self):
        split = SplitSpec("char_zero_shot", ["a", "b", "c"], ["c", "d"])
        assert build_candidate_set(split) == ["a", "b", "c", "d"]

    def test_seen_is_same_set(self):
        split = seen_split(["b", "a"])
        assert build_candidate_set(split) == ["a", "b"]

    def test_full_coverage_case(self):
        chars = [f"c{i:04d}" for i in range(3755)]
        split = char_zero_shot_split(chars, m=2755, test_count=1000)
        assert build_candidate_set(split) == sorted(chars)

    def test_intersection_mode(self):
        split = SplitSpec("seen", ["a", "b"], ["b", "c"])
        assert build_candidate_set(split, mode="intersection") == ["b"]


class TestCacc:
    def test_three_of_four(self):
        assert cacc(["a", "b", "c", "x"], ["a", "b", "c", "d"]) == 0.75

    def test_all_correct(self):
        assert cacc(["a", "b"], ["a", "b"]) == 1.0

    def test_shuffle_fixed_points(self):
        rnd = random.Random(3)
        golds = [f"c{i}" for i in range(40)]
        preds = golds[:]
        rnd.shuffle(preds)
        fixed = sum(1 for p, g in zip(preds, golds) if p == g)
        assert cacc(preds, golds) == fixed / 40

    def test_errors(self):
        with pytest.raises(ProtocolError):
            cacc(["a"], ["a", "b"])
        with pytest.raises(ProtocolError):
            cacc([], [])


class TestSeenFallback:
    def setup_method(self):
        self.lex = Lexicon(
            [CharacterEntry("A", "A", "12"), CharacterEntry("B", "B", "12"), CharacterEntry("C", "C", "3")]
        )
        self.conf = build_confusable_set(self.lex)
        self.classes = ["A", "B", "C"]
        self.params = init_params(
            TINY_MODEL.encoder, TINY_MODEL.decoder, seed=0, char_classes=3
        )
        rng = np.random.default_rng(1)
        self.fmap = encode(rng.uniform(-1, 1, (8, 8, 3)).astype(np.float32), self.params, TINY_MODEL.encoder)

    def test_one_to_one_passthrough(self):
        out = seen_character_fallback("3", self.conf, "C", self.fmap, self.params, self.classes)
        assert out == "C"

    def test_saturated_head_wins(self):
        self.params["head.w"].data[:] = 0.0
        self.params["head.b"].data[:] = np.array([0.0, 50.0, 0.0], np.float32)
        out = seen_character_fallback("12", self.conf, "A", self.fmap, self.params, self.classes)
        assert out == "B"

    def test_argmax_matches_scan(self):
        from strokezs.model import char_head_logits

        logits = char_head_logits(self.fmap, self.params).data
        best, best_v = None, None
        for i, v in enumerate(logits):
            if best_v is None or v > best_v:
                best, best_v = i, float(v)
        out = seen_character_fallback("12", self.conf, "A", self.fmap, self.params, self.classes)
        assert out == self.classes[best]

    def test_dimension_mismatch(self):
        with pytest.raises(ProtocolError):
            seen_character_fallback("12", self.conf, "A", self.fmap, self.params, ["A", "B"])


@pytest.fixture(scope="module")
def tiny_world(tmp_path_factory):
    """A 24-char alphabet with datasets and a briefly trained experiment."""
    base = tmp_path_factory.mktemp("world")
    entries = synthetic_alphabet(24, seed=17, confusable_fraction=0.15)
    lex = Lexicon(entries)
    ids = [e.char_id for e in entries]
    split = char_zero_shot_split(ids, m=16, test_count=8)
    train_cfg = RenderConfig(seed=100)
    test_cfg = RenderConfig(seed=200)
    generate_dataset(lex, split.train_classes, 3, train_cfg, base / "train", split_tag="train")
    generate_dataset(lex, split.test_classes, 3, test_cfg, base / "test", split_tag="test")
    return {"base": base, "lex": lex, "ids": ids, "split": split}


class TestRunExperiment:
    def test_mechanics_and_determinism(self, tiny_world):
        w = tiny_world
        tc = TrainConfig(steps=6, batch_size=4, seed=3)
        r1, params1 = run_experiment(
            w["lex"], w["split"], w["base"] / "train", w["base"] / "test", tc, TINY_MODEL
        )
        r2, _ = run_experiment(
            w["lex"], w["split"], w["base"] / "train", w["base"] / "test", tc, TINY_MODEL
        )
        assert result_to_text(r1) == result_to_text(r2)
        assert 0.0 <= r1.cacc <= 1.0
        assert sum(r1.trace_counts.values()) == r1.n_test == 24
        assert r1.n_candidates == 24

    def test_predictions_within_candidates(self, tiny_world):
        from strokezs.evaluation import evaluate_model, load_samples

        w = tiny_world
        tc = TrainConfig(steps=0, batch_size=4, seed=5)
        candidates = build_candidate_set(w["split"])
        params = init_params(TINY_MODEL.encoder, TINY_MODEL.decoder, seed=5)
        samples = load_samples(w["base"] / "test", set(w["split"].test_classes))
        preds, golds, traces, _ = evaluate_model(
            w["lex"], candidates, samples, params, TINY_MODEL, "cosine"
        )
        assert all(p in set(candidates) for p in preds)
        assert len(traces) == len(samples)

    def test_workers_equivalence(self, tiny_world):
        from strokezs.evaluation import evaluate_model, load_samples

        w = tiny_world
        candidates = build_candidate_set(w["split"])
        params = init_params(TINY_MODEL.encoder, TINY_MODEL.decoder, seed=6)
        samples = load_samples(w["base"] / "test", set(w["split"].test_classes))
        one = evaluate_model(w["lex"], candidates, samples, params, TINY_MODEL, "cosine", workers=1)
        four = evaluate_model(w["lex"], candidates, samples, params, TINY_MODEL, "cosine", workers=4)
        assert one[0] == four[0] and one[2] == four[2]

    def test_hygiene_violation_detected(self, tiny_world, tmp_path):
        w = tiny_world
        # training data that includes a test class
        bad_dir = tmp_path / "bad_train"
        generate_dataset(
            w["lex"], w["split"].train_classes + w["split"].test_classes[:1], 1,
            RenderConfig(seed=7), bad_dir, split_tag="train",
        )
        with pytest.raises(ProtocolError, match="hygiene"):
            audit_split_hygiene(w["split"], bad_dir, "train")
        with pytest.raises(ProtocolError):
            run_experiment(
                w["lex"], w["split"], bad_dir, w["base"] / "test",
                TrainConfig(steps=1, batch_size=2, seed=1), TINY_MODEL,
            )

    def test_cross_alphabet_identity(self, tiny_world, tmp_path):
        w = tiny_world
        # candidate sets coincide when the split covers the whole alphabet
        split = char_zero_shot_split(w["ids"], m=16, test_count=8)
        tc = TrainConfig(steps=4, batch_size=4, seed=9)
        result, params = run_experiment(
            w["lex"], split, w["base"] / "train", w["base"] / "test", tc, TINY_MODEL
        )
        cross = SplitSpec("cross_alphabet", [], sorted(w["ids"]))
        # test rows outside the original test classes are absent by construction
        other = cross_alphabet_eval(
            params, w["lex"], cross, "cosine", w["base"] / "test", TINY_MODEL
        )
        assert other.cacc == result.cacc
        assert other.trace_counts == result.trace_counts

    def test_seen_setting_with_head(self, tiny_world, tmp_path):
        w = tiny_world
        seen = seen_split(w["split"].train_classes)
        result, _ = run_experiment(
            w["lex"], seen, w["base"] / "train", w["base"] / "train",
            TrainConfig(steps=4, batch_size=4, seed=11, head_steps=4), TINY_MODEL,
        )
        assert sum(result.trace_counts.values()) == result.n_test

    def test_serialization_forms(self, tiny_world):
        result = ExperimentResult(
            kind="char_zero_shot", metric="cosine", cacc=0.5, n_test=10,
            n_candidates=20, n_train_classes=12, n_test_classes=8,
            trace_counts={"exact_direct": 6, "exact_matched": 2, "rectified_direct": 1, "rectified_matched": 1},
            confusions=[("a", "b", 3)], config_echo={"steps": "5"}, seed=1,
            wall_clock_seconds=123.4,
        )
        text = result_to_text(result)
        assert "cacc=0.500000" in text and "wall" not in text
        row = result_to_csv_row(result)
        assert row.split(",")[6] == "0.500000"
        assert "123.4" not in row


class TestCrossAlphabetSplit:
    def test_shape(self):
        lex = Lexicon(synthetic_alphabet(10, seed=2))
        split = cross_alphabet_split(lex)
        assert split.kind == "cross_alphabet"
        assert split.train_classes == []
        assert len(split.test_classes) == 10
