"""Stroke vocabulary, character lexicon, and edit-distance rectification.

Characters are written with five stroke classes, encoded as the digits
1 (horizontal), 2 (vertical), 3 (left-falling), 4 (right-falling) and
5 (turning). A stroke sequence is stored as a digit string such as
``"125"``; code 0 is reserved as the model's end-of-sequence symbol and
never appears inside a sequence.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from pathlib import Path

STROKE_CLASSES = "12345"
STROKE_NAMES = {
    1: "horizontal",
    2: "vertical",
    3: "left-falling",
    4: "right-falling",
    5: "turning",
}
END_CODE = 0
MAX_SEQUENCE_LENGTH = 48


class LexiconError(ValueError):
    """Malformed lexicon data or an operation on an unusable lexicon."""


def validate_sequence(seq: str, max_len: int = MAX_SEQUENCE_LENGTH) -> str:
    """Check that ``seq`` is a non-empty digit string over the five stroke classes."""
    if not seq:
        raise LexiconError("stroke sequence is empty")
    if len(seq) > max_len:
        raise LexiconError(f"stroke sequence longer than {max_len}: {len(seq)} strokes")
    for ch in seq:
        if ch not in STROKE_CLASSES:
            raise LexiconError(f"invalid stroke class {ch!r} in sequence {seq!r}")
    return seq


def sequence_codes(seq: str) -> list[int]:
    """Digit string to integer stroke codes."""
    return [int(ch) for ch in seq]


@dataclass(frozen=True)
class CharacterEntry:
    char_id: str
    label: str
    strokes: str
    radicals: tuple[str, ...] = ()


class Lexicon:
    """Immutable mapping between characters and their stroke sequences."""

    def __init__(self, entries: list[CharacterEntry]):
        self.entries = list(entries)
        self.by_id: dict[str, CharacterEntry] = {}
        index: dict[str, list[str]] = {}
        for e in self.entries:
            if e.char_id in self.by_id:
                raise LexiconError(f"duplicate char_id {e.char_id!r}")
            validate_sequence(e.strokes)
            self.by_id[e.char_id] = e
            index.setdefault(e.strokes, []).append(e.char_id)
        self.index: dict[str, tuple[str, ...]] = {
            seq: tuple(sorted(ids)) for seq, ids in index.items()
        }

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, char_id: str) -> bool:
        return char_id in self.by_id

    def entry(self, char_id: str) -> CharacterEntry:
        try:
            return self.by_id[char_id]
        except KeyError:
            raise LexiconError(f"unknown char_id {char_id!r}") from None

    def keys(self) -> list[str]:
        """Distinct stroke sequences, in sorted order."""
        return sorted(self.index)

    def restrict(self, char_ids: list[str]) -> "Lexicon":
        """Sub-lexicon over the given characters (evaluation candidate sets)."""
        return Lexicon([self.entry(c) for c in char_ids])


@dataclass
class ConfusableSet:
    """Stroke sequences shared by two or more characters."""

    sequences: dict[str, tuple[str, ...]] = field(default_factory=dict)

    def __contains__(self, seq: str) -> bool:
        return seq in self.sequences

    def __len__(self) -> int:
        return len(self.sequences)

    def candidates(self, seq: str) -> tuple[str, ...]:
        return self.sequences[seq]

    def all_char_ids(self) -> list[str]:
        ids: set[str] = set()
        for cands in self.sequences.values():
            ids.update(cands)
        return sorted(ids)


def load_lexicon(source) -> Lexicon:
    """Parse lexicon TSV from a path, text stream, or byte stream.

    One record per line: ``char_id <TAB> label <TAB> strokes [<TAB> radicals]``
    with radicals comma-separated. Lines starting with ``#`` and blank lines
    are skipped. Errors report the offending line number.
    """
    if isinstance(source, (str, Path)):
        text = Path(source).read_text(encoding="utf-8")
    elif isinstance(source, bytes):
        text = source.decode("utf-8")
    elif isinstance(source, io.TextIOBase):
        text = source.read()
    else:
        raw = source.read()
        text = raw.decode("utf-8") if isinstance(raw, bytes) else raw

    entries: list[CharacterEntry] = []
    seen: set[str] = set()
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip("\n\r")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        fields = line.split("\t")
        if len(fields) not in (3, 4):
            raise LexiconError(f"line {lineno}: expected 3 or 4 tab-separated fields, got {len(fields)}")
        char_id, label, strokes = fields[0], fields[1], fields[2]
        if not char_id:
            raise LexiconError(f"line {lineno}: empty char_id")
        if char_id in seen:
            raise LexiconError(f"line {lineno}: duplicate char_id {char_id!r}")
        seen.add(char_id)
        try:
            validate_sequence(strokes)
        except LexiconError as exc:
            raise LexiconError(f"line {lineno}: {exc}") from None
        radicals: tuple[str, ...] = ()
        if len(fields) == 4 and fields[3]:
            radicals = tuple(r for r in fields[3].split(",") if r)
        entries.append(CharacterEntry(char_id, label, strokes, radicals))
    return Lexicon(entries)


def write_lexicon_tsv(entries: list[CharacterEntry], path: str | Path) -> None:
    lines = []
    for e in entries:
        rad = ",".join(e.radicals)
        lines.append(f"{e.char_id}\t{e.label}\t{e.strokes}\t{rad}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def exact_lookup(lexicon: Lexicon, seq: str) -> set[str]:
    """Characters whose stroke sequence equals ``seq`` (possibly none)."""
    return set(lexicon.index.get(seq, ()))


def edit_distance(a: str, b: str) -> int:
    """Levenshtein distance with unit insert, delete, and substitute costs."""
    if a == b:
        return 0
    if not a:
        return len(b)
    if not b:
        return len(a)
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        cur = [i] + [0] * len(b)
        for j, cb in enumerate(b, start=1):
            cost = 0 if ca == cb else 1
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + cost)
        prev = cur
    return prev[-1]


def rectify(lexicon: Lexicon, p: str) -> tuple[str, int]:
    """Nearest lexicon sequence to the prediction ``p``.

    An exact member maps to itself at distance 0. Otherwise the key with
    the least edit distance wins; ties break to the shorter sequence, then
    the lexicographically smaller one, so results are deterministic.
    """
    if not lexicon.entries:
        raise LexiconError("cannot rectify against an empty lexicon")
    if p in lexicon.index:
        return p, 0
    best_key = None
    best = (0, 0, "")
    for key in lexicon.index:
        d = edit_distance(p, key)
        rank = (d, len(key), key)
        if best_key is None or rank < best:
            best_key, best = key, rank
    return best_key, best[0]


def build_confusable_set(lexicon: Lexicon) -> ConfusableSet:
    """One-to-many stroke sequences of ``lexicon``; one-to-one keys are absent."""
    return ConfusableSet(
        {seq: ids for seq, ids in lexicon.index.items() if len(ids) >= 2}
    )


def one_to_n_histogram(lexicon: Lexicon) -> dict[int, int]:
    """Map n to the number of sequences matching exactly n characters."""
    hist: dict[int, int] = {}
    for ids in lexicon.index.values():
        n = len(ids)
        hist[n] = hist.get(n, 0) + 1
    return dict(sorted(hist.items()))
