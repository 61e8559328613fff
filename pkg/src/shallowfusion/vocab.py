"""Unit inventories, wordpiece induction and greedy tokenization.

Two kinds of decoding unit are supported.  Grapheme vocabularies hold one
unit per character plus the word-boundary marker ``_`` standing in for a
space.  Wordpiece vocabularies hold word pieces where the piece that begins
a word carries the ``_`` prefix, e.g. ``_the _com pany``.  Both share the
special units ``<unk>``, ``<s>`` and ``</s>`` at ids 0, 1 and 2.
"""

import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

from .errors import FormatError

__all__ = [
    "UNK",
    "BOS",
    "EOS",
    "MARKER",
    "SPECIALS",
    "DEFAULT_GRAPHEMES",
    "UnitVocabulary",
    "WordPieceModel",
    "normalize",
    "grapheme_vocabulary",
    "induce_wordpieces",
    "replay_merges",
    "greedy_segment",
    "tokenize",
    "graphemize",
    "detokenize",
    "units_to_text",
    "word_counts",
    "dumps_wordpiece_model",
    "loads_wordpiece_model",
    "save_wordpiece_model",
    "load_wordpiece_model",
]

UNK = "<unk>"
BOS = "<s>"
EOS = "</s>"
MARKER = "_"
SPECIALS = (UNK, BOS, EOS)
DEFAULT_GRAPHEMES = "abcdefghijklmnopqrstuvwxyz0123456789'"

KINDS = ("grapheme", "wordpiece")


def normalize(text: str) -> str:
    """Canonical form used before any tokenization.

    NFC, lowercased, whitespace runs collapsed to one space, ends stripped.
    """
    text = unicodedata.normalize("NFC", text).lower()
    return " ".join(text.split())


@dataclass(frozen=True)
class UnitVocabulary:
    """Ordered, immutable unit inventory with dense ids.

    Attributes
    ----------
    units : tuple of str
        Unit strings in id order.  The first three are always the specials.
    kind : str
        ``"grapheme"`` or ``"wordpiece"``.
    marker : str
        The word-boundary marker.
    """

    units: Tuple[str, ...]
    kind: str = "grapheme"
    marker: str = MARKER
    _index: Dict[str, int] = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        units = tuple(self.units)
        object.__setattr__(self, "units", units)
        if self.kind not in KINDS:
            raise ValueError("unknown vocabulary kind {!r}".format(self.kind))
        if units[: len(SPECIALS)] != SPECIALS:
            raise ValueError("vocabulary must start with {}".format(SPECIALS))
        index = {}
        for i, unit in enumerate(units):
            if not unit or any(c.isspace() for c in unit):
                raise ValueError("invalid unit {!r} at id {}".format(unit, i))
            if unit in index:
                raise ValueError("duplicate unit {!r}".format(unit))
            index[unit] = i
        object.__setattr__(self, "_index", index)

    def __len__(self):
        return len(self.units)

    def __contains__(self, unit):
        return unit in self._index

    def __getitem__(self, i):
        return self.units[i]

    def get(self, unit, default=None):
        return self._index.get(unit, default)

    def id(self, unit: str) -> int:
        return self._index[unit]

    @property
    def unk_id(self) -> int:
        return 0

    @property
    def bos_id(self) -> int:
        return 1

    @property
    def eos_id(self) -> int:
        return 2

    @property
    def graphemes(self) -> frozenset:
        """Single characters present as units (the grapheme base)."""
        return frozenset(u for u in self.units[len(SPECIALS):] if len(u) == 1)


def grapheme_vocabulary(chars: Iterable[str] = DEFAULT_GRAPHEMES) -> UnitVocabulary:
    chars = sorted(set(chars) - {MARKER, " "})
    return UnitVocabulary(SPECIALS + (MARKER,) + tuple(chars), kind="grapheme")


@dataclass(frozen=True)
class WordPieceModel:
    """An induced wordpiece inventory.

    ``merges`` replayed over the grapheme base reproduces
    ``vocabulary.units`` exactly (see :func:`replay_merges`).
    """

    vocabulary: UnitVocabulary
    merges: Tuple[Tuple[str, str], ...]
    corpus_stats: Tuple[Tuple[str, int], ...]

    @property
    def size(self) -> int:
        """Number of non-special units."""
        return len(self.vocabulary) - len(SPECIALS)

    @property
    def base(self) -> Tuple[str, ...]:
        """The grapheme base: marker plus every corpus character."""
        return tuple(u for u in self.vocabulary.units[len(SPECIALS):] if len(u) == 1)


def word_counts(lines: Iterable[str]) -> Counter:
    """Word frequencies over normalized lines."""
    counts = Counter()
    for line in lines:
        counts.update(normalize(line).split())
    return counts


def _check_word(word):
    if not word or MARKER in word or any(c.isspace() for c in word):
        raise ValueError("invalid corpus word {!r}".format(word))


def replay_merges(base: Sequence[str], merges: Sequence[Tuple[str, str]]) -> List[str]:
    """Unit list obtained by applying ``merges`` in order to ``base``."""
    units = list(base)
    seen = set(units)
    for left, right in merges:
        merged = left + right
        if merged not in seen:
            seen.add(merged)
            units.append(merged)
    return units


def induce_wordpieces(word_counts: Mapping[str, int], target_size: int) -> WordPieceModel:
    """Induce a wordpiece inventory by frequency-ordered pair merges.

    Every word is seeded as ``_`` followed by its characters.  At each
    iteration the adjacent pair with the highest corpus frequency is merged;
    ties go to the lexicographically greater merged string.  Induction stops
    once ``target_size`` non-special units exist or no pair is left.

    Parameters
    ----------
    word_counts : mapping
        Word to count.  Words must be normalized (no whitespace, no ``_``).
    target_size : int
        Desired number of non-special units, at least the grapheme count.
    """
    stats = sorted((w, int(c)) for w, c in word_counts.items() if c > 0)
    if not stats:
        raise ValueError("empty corpus")
    for w, _ in stats:
        _check_word(w)
    base = sorted({MARKER} | {c for w, _ in stats for c in w})
    if target_size < len(base):
        raise ValueError(
            "target_size {} is below the grapheme count {}".format(target_size, len(base))
        )

    words = [[MARKER] + list(w) for w, _ in stats]
    counts = [c for _, c in stats]
    pair_counts = Counter()
    where = {}
    for i, symbols in enumerate(words):
        for pair in zip(symbols, symbols[1:]):
            pair_counts[pair] += counts[i]
            where.setdefault(pair, set()).add(i)

    units = list(base)
    seen = set(units)
    merges = []
    while len(units) < target_size:
        live = [(c, a + b, (a, b)) for (a, b), c in pair_counts.items() if c > 0]
        if not live:
            break
        _, merged, best = max(live)
        merges.append(best)
        if merged not in seen:
            seen.add(merged)
            units.append(merged)
        for i in sorted(where.pop(best, ())):
            old = words[i]
            for pair in zip(old, old[1:]):
                pair_counts[pair] -= counts[i]
            new = []
            j = 0
            while j < len(old):
                if j + 1 < len(old) and (old[j], old[j + 1]) == best:
                    new.append(merged)
                    j += 2
                else:
                    new.append(old[j])
                    j += 1
            words[i] = new
            for pair in zip(new, new[1:]):
                pair_counts[pair] += counts[i]
                where.setdefault(pair, set()).add(i)
        pair_counts = Counter({p: c for p, c in pair_counts.items() if c > 0})

    vocab = UnitVocabulary(SPECIALS + tuple(units), kind="wordpiece")
    return WordPieceModel(vocab, tuple(merges), tuple(stats))


def greedy_segment(text: str, units, max_len: Optional[int] = None) -> List[Optional[str]]:
    """Split ``text`` left to right, always taking the longest unit that matches.

    Characters no unit starts with come back as ``None``.
    """
    if max_len is None:
        max_len = max((len(u) for u in units), default=1)
    pieces = []
    pos = 0
    while pos < len(text):
        for n in range(min(max_len, len(text) - pos), 0, -1):
            if text[pos:pos + n] in units:
                pieces.append(text[pos:pos + n])
                pos += n
                break
        else:
            pieces.append(None)
            pos += 1
    return pieces


@lru_cache(maxsize=32)
def _piece_index(vocab):
    pieces = frozenset(vocab.units[len(SPECIALS):])
    return pieces, max(len(u) for u in pieces)


def tokenize(text: str, model, return_unknown: bool = False):
    """Greedy longest-match wordpiece tokenization.

    ``model`` is a :class:`WordPieceModel` or a wordpiece
    :class:`UnitVocabulary`.  Characters outside the grapheme base map to
    ``<unk>``; with ``return_unknown`` the offending characters are returned
    alongside the ids.
    """
    vocab = model.vocabulary if isinstance(model, WordPieceModel) else model
    pieces, max_len = _piece_index(vocab)
    ids = []
    unknown = []
    for word in normalize(text).split():
        word_text = vocab.marker + word
        for piece, pos in _with_offsets(greedy_segment(word_text, pieces, max_len)):
            if piece is None:
                ids.append(vocab.unk_id)
                unknown.append(word_text[pos])
            else:
                ids.append(vocab.id(piece))
    if return_unknown:
        return ids, unknown
    return ids


def _with_offsets(pieces):
    pos = 0
    for piece in pieces:
        yield piece, pos
        pos += 1 if piece is None else len(piece)


def graphemize(text: str, vocab: Optional[UnitVocabulary] = None) -> List[int]:
    """One unit per character, spaces mapped to the boundary marker."""
    if vocab is None:
        vocab = _default_graphemes()
    ids = []
    for ch in normalize(text):
        if ch == " ":
            ids.append(vocab.id(vocab.marker))
        elif ch == vocab.marker:
            ids.append(vocab.unk_id)
        else:
            ids.append(vocab.get(ch, vocab.unk_id))
    return ids


_DEFAULT = []


def _default_graphemes():
    if not _DEFAULT:
        _DEFAULT.append(grapheme_vocabulary())
    return _DEFAULT[0]


def units_to_text(units: Iterable[str], marker: str = MARKER) -> str:
    """Join unit strings back into words; ``<s>``/``</s>`` are dropped."""
    text = "".join(u for u in units if u not in (BOS, EOS))
    return " ".join(text.replace(marker, " ").split())


def detokenize(ids: Sequence[int], vocab: UnitVocabulary) -> str:
    n = len(vocab)
    units = []
    for i in ids:
        if not 0 <= i < n:
            raise IndexError("invalid unit id {}".format(i))
        units.append(vocab.units[i])
    return units_to_text(units, vocab.marker)


def dumps_wordpiece_model(model: WordPieceModel) -> str:
    vocab = model.vocabulary
    lines = ["{} {}".format(vocab.kind, len(vocab))]
    lines.extend(vocab.units)
    lines.append("merges {}".format(len(model.merges)))
    lines.extend("{} {}".format(a, b) for a, b in model.merges)
    lines.append("counts {}".format(len(model.corpus_stats)))
    lines.extend("{}\t{}".format(w, c) for w, c in model.corpus_stats)
    return "\n".join(lines) + "\n"


def loads_wordpiece_model(text: str) -> WordPieceModel:
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    pos = 0

    def section(name):
        nonlocal pos
        if pos >= len(lines):
            raise FormatError("missing '{}' header".format(name), pos + 1)
        parts = lines[pos].split(" ")
        if len(parts) != 2 or parts[0] != name or not parts[1].isdigit():
            raise FormatError("expected '{} <count>'".format(name), pos + 1)
        pos += 1
        n = int(parts[1])
        if pos + n > len(lines):
            raise FormatError("truncated '{}' section".format(name), len(lines))
        body = lines[pos:pos + n]
        pos += n
        return body

    if not lines or not lines[0].startswith("wordpiece "):
        raise FormatError("expected 'wordpiece <size>' header", 1)
    units = section("wordpiece")
    try:
        vocab = UnitVocabulary(tuple(units), kind="wordpiece")
    except ValueError as exc:
        raise FormatError(str(exc), 1) from None
    merges = []
    start = pos + 2
    for i, line in enumerate(section("merges")):
        parts = line.split(" ")
        if len(parts) != 2:
            raise FormatError("malformed merge {!r}".format(line), start + i)
        merges.append((parts[0], parts[1]))
    stats = []
    start = pos + 2
    for i, line in enumerate(section("counts")):
        parts = line.split("\t")
        if len(parts) != 2 or not parts[1].isdigit():
            raise FormatError("malformed count line {!r}".format(line), start + i)
        stats.append((parts[0], int(parts[1])))
    if pos != len(lines):
        raise FormatError("trailing content", pos + 1)
    return WordPieceModel(vocab, tuple(merges), tuple(stats))


def save_wordpiece_model(model: WordPieceModel, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(dumps_wordpiece_model(model))


def load_wordpiece_model(path) -> WordPieceModel:
    with open(path, encoding="utf-8") as f:
        return loads_wordpiece_model(f.read())
