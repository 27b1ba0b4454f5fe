import numpy as np
import pytest

from strokezs import records
from strokezs.alphabet import synthetic_alphabet
from strokezs.glyphgen import (
    RenderConfig,
    generate_dataset,
    load_manifest,
    load_sample,
    plan_layout,
    render_glyph,
    render_support,
    sample_seed,
)
from strokezs.lexicon import CharacterEntry, Lexicon, LexiconError


class TestPlanLayout:
    def test_reading_order_centers(self):
        spec = plan_layout("12345")
        assert len(spec.primitives) == 5
        centers = []
        for _, pts in spec.primitives:
            xs = [p[0] for p in pts]
            ys = [p[1] for p in pts]
            centers.append(((min(ys) + max(ys)) / 2, (min(xs) + max(xs)) / 2))
        assert centers == sorted(centers)

    def test_deterministic(self):
        assert plan_layout("3142") == plan_layout("3142")

    def test_empty_rejected(self):
        with pytest.raises(LexiconError):
            plan_layout("")

    def test_coordinates_in_unit_square(self):
        for seq in ("1", "5", "12345", "5" * 9, "1234512345"):
            for _, pts in plan_layout(seq).primitives:
                for x, y in pts:
                    assert 0.0 <= x <= 1.0 and 0.0 <= y <= 1.0

    def test_turning_has_two_segments(self):
        (code, pts), = plan_layout("5").primitives
        assert code == 5 and len(pts) == 3


class TestRenderGlyph:
    def setup_method(self):
        self.cfg = RenderConfig(seed=11)
        self.spec = plan_layout("125")

    def test_range_invariant(self):
        img = render_glyph(self.spec, self.cfg, 42)
        assert img.shape == (32, 32, 3)
        assert img.dtype == np.float32
        assert img.min() >= -1.0 and img.max() <= 1.0

    def test_deterministic(self):
        a = render_glyph(self.spec, self.cfg, 42)
        b = render_glyph(self.spec, self.cfg, 42)
        assert np.array_equal(a, b)

    def test_jitter_free_seeds_identical_noise_differs(self):
        quiet = RenderConfig(
            seed=11, jitter_translate=0, jitter_rotate=0, jitter_thickness=0, noise_std=0
        )
        a = render_glyph(self.spec, quiet, 1)
        b = render_glyph(self.spec, quiet, 2)
        assert np.array_equal(a, b)
        noisy = RenderConfig(
            seed=11, jitter_translate=0, jitter_rotate=0, jitter_thickness=0, noise_std=0.05
        )
        c = render_glyph(self.spec, noisy, 1)
        d = render_glyph(self.spec, noisy, 2)
        assert not np.array_equal(c, d)

    def test_has_ink(self):
        img = render_glyph(self.spec, self.cfg.without_jitter(), 0)
        assert (img < 0).any()  # strokes are dark on the light background

    def test_config_validation(self):
        with pytest.raises(ValueError):
            RenderConfig(image_size=8)
        with pytest.raises(ValueError):
            RenderConfig(noise_std=-0.1)


class TestRenderSupport:
    def test_variants_differ(self):
        entry = CharacterEntry("A", "A", "123")
        cfg = RenderConfig(seed=0)
        v0 = render_support(entry, 0, cfg)
        v1 = render_support(entry, 1, cfg)
        assert not np.array_equal(v0, v1)

    def test_deterministic_and_shape(self):
        entry = CharacterEntry("A", "A", "123")
        cfg = RenderConfig(seed=123)
        a = render_support(entry, 0, cfg)
        b = render_support(entry, 0, cfg)
        assert np.array_equal(a, b)
        assert a.shape == (32, 32, 3)

    def test_bad_variant(self):
        with pytest.raises(ValueError):
            render_support(CharacterEntry("A", "A", "1"), 2, RenderConfig())


class TestGenerateDataset:
    def setup_method(self):
        entries = synthetic_alphabet(10, seed=3)
        self.lex = Lexicon(entries)
        self.chars = [e.char_id for e in entries]

    def test_counts_and_files(self, tmp_path):
        cfg = RenderConfig(seed=7)
        man = generate_dataset(self.lex, self.chars, 5, cfg, tmp_path / "d")
        assert len(man) == 50
        for row in man.rows:
            assert (tmp_path / "d" / row.path).exists()
        ids = [r.sample_id for r in man.rows]
        assert len(set(ids)) == len(ids)

    def test_regeneration_byte_identical(self, tmp_path):
        cfg = RenderConfig(seed=7)
        generate_dataset(self.lex, self.chars[:3], 2, cfg, tmp_path / "a")
        generate_dataset(self.lex, self.chars[:3], 2, cfg, tmp_path / "b")
        for row in load_manifest(tmp_path / "a" / "manifest.tsv").rows:
            a = (tmp_path / "a" / row.path).read_bytes()
            b = (tmp_path / "b" / row.path).read_bytes()
            assert a == b
        assert (tmp_path / "a" / "manifest.tsv").read_bytes() == (
            tmp_path / "b" / "manifest.tsv"
        ).read_bytes()

    def test_unknown_char_id(self, tmp_path):
        with pytest.raises(LexiconError, match="nope"):
            generate_dataset(self.lex, ["nope"], 1, RenderConfig(), tmp_path / "x")

    def test_manifest_round_trip(self, tmp_path):
        cfg = RenderConfig(seed=1)
        man = generate_dataset(self.lex, self.chars[:2], 2, cfg, tmp_path / "d")
        loaded = load_manifest(tmp_path / "d" / "manifest.tsv")
        assert [r.__dict__ for r in loaded.rows] == [r.__dict__ for r in man.rows]
        img = load_sample(tmp_path / "d" / "manifest.tsv", loaded.rows[0])
        assert img.shape == (32, 32, 3)

    def test_distinct_sequences_distinct_images(self):
        cfg = RenderConfig(seed=5)
        seen = {}
        for e in self.lex.entries:
            if e.strokes in seen:
                continue
            seen[e.strokes] = render_glyph(
                plan_layout(e.strokes), cfg, sample_seed(cfg.seed, e.char_id, 0)
            )
        imgs = list(seen.values())
        for i in range(len(imgs)):
            for j in range(i + 1, len(imgs)):
                assert np.abs(imgs[i] - imgs[j]).mean() > 0


class TestRecords:
    def test_round_trip(self, tmp_path):
        arrs = {
            "a": np.arange(12, dtype=np.float32).reshape(3, 4),
            "b/0": np.float32(np.random.default_rng(0).standard_normal((2, 2, 2))),
        }
        p = tmp_path / "t.rec"
        records.write_records(p, arrs)
        back = records.read_records(p)
        assert set(back) == set(arrs)
        for k in arrs:
            assert np.array_equal(back[k], arrs[k])
            assert back[k].dtype == np.float32

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "bad.rec"
        p.write_bytes(b"XXXX" + b"\x00" * 16)
        with pytest.raises(records.RecordError, match="magic"):
            records.read_records(p)

    def test_truncated(self, tmp_path):
        p = tmp_path / "t.rec"
        records.write_records(p, {"a": np.ones((4, 4), np.float32)})
        blob = p.read_bytes()
        p.write_bytes(blob[:-7])
        with pytest.raises(records.RecordError, match="truncated"):
            records.read_records(p)

    def test_wrong_version(self, tmp_path):
        p = tmp_path / "t.rec"
        records.write_records(p, {"a": np.ones(2, np.float32)})
        blob = bytearray(p.read_bytes())
        blob[4] = 9
        p.write_bytes(bytes(blob))
        with pytest.raises(records.RecordError, match="version"):
            records.read_records(p)
