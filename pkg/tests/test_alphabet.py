import pytest

from strokezs.alphabet import MAX_CANDIDATES_PER_SEQUENCE, disjoint_alphabet, synthetic_alphabet
from strokezs.lexicon import Lexicon, build_confusable_set, one_to_n_histogram


class TestSyntheticAlphabet:
    def test_deterministic(self):
        a = synthetic_alphabet(50, seed=1)
        b = synthetic_alphabet(50, seed=1)
        assert a == b
        assert a != synthetic_alphabet(50, seed=2)

    def test_ids_unique_and_ordered(self):
        entries = synthetic_alphabet(30, seed=3)
        ids = [e.char_id for e in entries]
        assert ids == sorted(ids) and len(set(ids)) == 30

    def test_valid_lexicon_with_radicals(self):
        entries = synthetic_alphabet(100, seed=4)
        lex = Lexicon(entries)  # validates sequences and uniqueness
        assert all(len(e.radicals) == 2 for e in entries)
        assert len(lex) == 100

    def test_contains_confusables(self):
        entries = synthetic_alphabet(300, seed=20, confusable_fraction=0.08)
        conf = build_confusable_set(Lexicon(entries))
        assert len(conf) >= 5

    def test_candidate_cap(self):
        entries = synthetic_alphabet(500, seed=6, confusable_fraction=0.5)
        hist = one_to_n_histogram(Lexicon(entries))
        assert max(hist) <= MAX_CANDIDATES_PER_SEQUENCE

    def test_size_validation(self):
        with pytest.raises(ValueError):
            synthetic_alphabet(0, seed=1)


class TestDisjointAlphabet:
    def test_sequences_disjoint(self):
        base = Lexicon(synthetic_alphabet(200, seed=7))
        other = disjoint_alphabet(80, seed=8, avoid=base)
        assert len(other) == 80
        assert all(e.strokes not in base.index for e in other)
        ids = [e.char_id for e in other]
        assert len(set(ids)) == 80 and all(i.startswith("k") for i in ids)
