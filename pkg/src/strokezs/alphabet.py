"""Synthetic glyph alphabets for desk-scale experiments.

Generates ordered character inventories with random stroke sequences, a
controlled fraction of shared (one-to-many) sequences, and radical ids
drawn from a skewed pool so radical-frequency splits behave like they do
on a real character set.
"""

from __future__ import annotations

import numpy as np

from .lexicon import CharacterEntry, Lexicon

# Worst observed fan-out on real data is seven characters per sequence;
# synthetic alphabets respect the same cap.
MAX_CANDIDATES_PER_SEQUENCE = 7

_LENGTHS = (2, 3, 4, 5, 6, 7, 8)
_LENGTH_WEIGHTS = (0.10, 0.18, 0.22, 0.20, 0.14, 0.10, 0.06)


def synthetic_alphabet(
    size: int,
    seed: int,
    confusable_fraction: float = 0.08,
    radical_pool: int = 40,
    id_prefix: str = "c",
) -> list[CharacterEntry]:
    """Build ``size`` characters with deterministic pseudo-random structure.

    Roughly ``confusable_fraction`` of the characters reuse an earlier
    character's stroke sequence, producing one-to-many lexicon keys. Each
    character carries two radicals sampled with Zipf-like weights, so some
    radicals are common and some rare.
    """
    if size < 1:
        raise ValueError("alphabet size must be >= 1")
    rng = np.random.default_rng([seed, 0x5A17])
    rad_weights = 1.0 / np.arange(1, radical_pool + 1)
    rad_weights /= rad_weights.sum()

    entries: list[CharacterEntry] = []
    used: dict[str, int] = {}
    width = max(4, len(str(size - 1)))
    for i in range(size):
        dup = i > 0 and rng.random() < confusable_fraction
        if dup:
            # reuse a prior sequence, capped at the max fan-out
            for _ in range(16):
                donor = entries[int(rng.integers(0, len(entries)))].strokes
                if used[donor] < MAX_CANDIDATES_PER_SEQUENCE:
                    seq = donor
                    break
            else:
                dup = False
        if not dup:
            while True:
                n = int(rng.choice(_LENGTHS, p=_LENGTH_WEIGHTS))
                seq = "".join(str(c) for c in rng.integers(1, 6, size=n))
                if seq not in used:
                    break
        used[seq] = used.get(seq, 0) + 1
        rads = rng.choice(radical_pool, size=2, replace=False, p=rad_weights)
        radicals = tuple(sorted(f"r{int(r):02d}" for r in rads))
        char_id = f"{id_prefix}{i:0{width}d}"
        entries.append(CharacterEntry(char_id, char_id.upper(), seq, radicals))
    return entries


def disjoint_alphabet(
    size: int,
    seed: int,
    avoid: Lexicon,
    id_prefix: str = "k",
    confusable_fraction: float = 0.08,
) -> list[CharacterEntry]:
    """Alphabet whose stroke sequences are all absent from ``avoid``.

    Stands in for a second writing system sharing the five stroke classes.
    """
    raw = synthetic_alphabet(
        size * 3, seed, confusable_fraction=confusable_fraction, id_prefix=id_prefix
    )
    kept: list[CharacterEntry] = []
    width = max(4, len(str(size - 1)))
    for e in raw:
        if e.strokes in avoid.index:
            continue
        kept.append(
            CharacterEntry(f"{id_prefix}{len(kept):0{width}d}", e.label, e.strokes, e.radicals)
        )
        if len(kept) == size:
            return kept
    raise ValueError(f"could not build {size} sequences disjoint from the given lexicon")
