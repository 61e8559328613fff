"""Word-level n-gram LM composed with a speller.

The composition is realized as a prefix trie over each word's unit
spelling, with sum-pushed weights: the probability of the next unit is the
ratio of word-LM mass below the child node to the mass below the current
node.  Scores therefore form a proper distribution over units at every
state, and the product of unit scores along a sentence equals the word
LM's probability of that sentence.

Word ends are signalled in two ways, chosen by the unit inventory:

* grapheme units: an explicit boundary unit (the marker ``_``) between
  words, and ``</s>`` after the last word;
* wordpiece units: the marker prefix on a word-initial piece, so moving
  from a completed word into the next word's first piece is one step.

Units that cannot extend any dictionary word score ``-inf``.
"""

import logging
import math
from typing import Callable, Dict, List, NamedTuple, Sequence

import numpy as np

from .ngram import ArpaModel, NgramState, score_incremental
from .vocab import UnitVocabulary

__all__ = [
    "PrefixTrie",
    "SpellerState",
    "build_trie",
    "start_state",
    "score_unit",
    "SpellerModel",
]

logger = logging.getLogger(__name__)

ROOT = 0


class PrefixTrie:
    """Prefix trie over unit-id spellings of a word list.

    Attributes
    ----------
    words : list of str
        Dictionary words; a word's index is its trie word id.
    children : list of dict
        ``children[node][unit] -> child node``.
    parent : list of int
    word_at : list of int
        Trie word id completing at each node, or -1.
    vocab : UnitVocabulary
        The unit inventory spellings are drawn from.
    """

    def __init__(self, vocab: UnitVocabulary):
        self.vocab = vocab
        self.words: List[str] = []
        self.spellings: List[tuple] = []
        self.children: List[Dict[int, int]] = [{}]
        self.parent: List[int] = [-1]
        self.word_at: List[int] = [-1]

    @property
    def num_nodes(self) -> int:
        return len(self.children)

    @property
    def explicit_boundary(self) -> bool:
        """True when words are separated by a standalone marker unit."""
        return self.vocab.kind == "grapheme"

    def _add(self, word, spelling):
        node = ROOT
        for u in spelling:
            nxt = self.children[node].get(u)
            if nxt is None:
                nxt = len(self.children)
                self.children[node][u] = nxt
                self.children.append({})
                self.parent.append(node)
                self.word_at.append(-1)
            node = nxt
        if self.word_at[node] != -1:
            other = self.words[self.word_at[node]]
            raise ValueError("words {!r} and {!r} share a spelling".format(other, word))
        self.word_at[node] = len(self.words)
        self.words.append(word)
        self.spellings.append(tuple(spelling))

    def walk(self, spelling: Sequence[int]) -> int:
        """Node reached by ``spelling`` from the root, or -1."""
        node = ROOT
        for u in spelling:
            node = self.children[node].get(u, -1)
            if node == -1:
                return -1
        return node

    def subtree_words(self, node: int) -> frozenset:
        out = set()
        stack = [node]
        while stack:
            n = stack.pop()
            if self.word_at[n] != -1:
                out.add(self.word_at[n])
            stack.extend(self.children[n].values())
        return frozenset(out)


def build_trie(word_vocab: Sequence[str], unit_tokenizer: Callable[[str], Sequence[int]],
               vocab: UnitVocabulary) -> PrefixTrie:
    """Build the speller trie.

    ``unit_tokenizer`` maps a word to its unit-id spelling in ``vocab``:
    :func:`~shallowfusion.vocab.graphemize` for graphemes, or
    :func:`~shallowfusion.vocab.tokenize` for wordpieces.
    """
    if not word_vocab:
        raise ValueError("empty word vocabulary")
    trie = PrefixTrie(vocab)
    seen = set()
    for word in word_vocab:
        if word in seen:
            logger.warning("duplicate dictionary word %r ignored", word)
            continue
        seen.add(word)
        spelling = list(unit_tokenizer(word))
        if not spelling:
            raise ValueError("word {!r} has an empty spelling".format(word))
        if vocab.unk_id in spelling:
            raise ValueError("word {!r} contains units outside the inventory".format(word))
        trie._add(word, spelling)
    return trie


class SpellerState(NamedTuple):
    """Cursor over the composition.

    ``logmass`` is the natural log of the probability mass of every event
    still reachable from this state, relative to the word-context
    distribution.  ``at_start`` marks the sentence-initial root, the only
    root position where ``</s>`` may follow directly.
    """

    word_state: NgramState
    node: int
    logmass: float
    at_start: bool


class _Context(NamedTuple):
    word_probs: np.ndarray  # P(w | ctx) per trie word, renormalized
    eos_prob: float
    node_mass: np.ndarray


def _log(x):
    return math.log(x) if x > 0.0 else -math.inf


class SpellerModel:
    """A word LM, a trie and a memo of per-context node masses.

    Memoization is keyed by the word-LM context and never changes scores.
    """

    def __init__(self, word_lm: ArpaModel, trie: PrefixTrie):
        self.word_lm = word_lm
        self.trie = trie
        self.vocab = trie.vocab
        self.lm_ids = np.array([word_lm.index.get(w, -1) for w in trie.words])
        missing = [w for w, i in zip(trie.words, self.lm_ids) if i < 0]
        if missing:
            raise ValueError("words missing from the word LM: {}".format(missing[:5]))
        self._memo: Dict[tuple, _Context] = {}
        self._word_nodes = np.array([trie.walk(s) for s in trie.spellings])
        marker = self.vocab.marker
        self.word_initial = np.array(
            [u.startswith(marker) for u in self.vocab.units], dtype=bool
        )
        # children listed parent-after-child when walked in reverse
        self._order = list(range(trie.num_nodes - 1, 0, -1))

    def context(self, state: NgramState) -> _Context:
        key = state.context
        hit = self._memo.get(key)
        if hit is not None:
            return hit
        lm = self.word_lm
        raw = np.array([math.exp(score_incremental(lm, state, int(i))[0]) for i in self.lm_ids])
        eos = math.exp(score_incremental(lm, state, lm.eos)[0])
        z = raw.sum() + eos
        probs = raw / z
        mass = np.zeros(self.trie.num_nodes)
        np.add.at(mass, self._word_nodes, probs)
        parent = self.trie.parent
        for n in self._order:
            mass[parent[n]] += mass[n]
        ctx = _Context(probs, eos / z, mass)
        self._memo[key] = ctx
        return ctx

    def start_state(self) -> SpellerState:
        return SpellerState(self.word_lm.start_state(), ROOT, 0.0, True)

    def _finish_word(self, state, ctx):
        """Probability of ending the current word and the advanced word state."""
        w = self.trie.word_at[state.node]
        if state.node == ROOT or w == -1:
            return 0.0, None
        _, next_word_state = score_incremental(self.word_lm, state.word_state, int(self.lm_ids[w]))
        return float(ctx.word_probs[w]), next_word_state

    def score(self, state: SpellerState, unit: int):
        """Natural-log probability of ``unit`` and the next state."""
        if not 0 <= unit < len(self.vocab):
            raise IndexError("invalid unit id {}".format(unit))
        if state.node < 0 or state.node >= self.trie.num_nodes:
            raise ValueError("invalid speller state")
        vocab = self.vocab
        ctx = self.context(state.word_state)
        dead = (-math.inf, state)

        if unit == vocab.eos_id:
            if state.at_start and state.node == ROOT:
                return _log(ctx.eos_prob) - state.logmass, state
            p_word, nxt = self._finish_word(state, ctx)
            if nxt is None:
                return dead
            p_end = self.context(nxt).eos_prob
            new = SpellerState(nxt, ROOT, 0.0, False)
            return _log(p_word * p_end) - state.logmass, new

        if unit in (vocab.unk_id, vocab.bos_id):
            return dead

        if self.trie.explicit_boundary and vocab.units[unit] == vocab.marker:
            p_word, nxt = self._finish_word(state, ctx)
            if nxt is None:
                return dead
            root_mass = self.context(nxt).node_mass[ROOT]
            new = SpellerState(nxt, ROOT, _log(root_mass), False)
            return _log(p_word * (1.0 - self.context(nxt).eos_prob)) - state.logmass, new

        if not self.trie.explicit_boundary and self.word_initial[unit] and state.node != ROOT:
            p_word, nxt = self._finish_word(state, ctx)
            if nxt is None:
                return dead
            child = self.trie.children[ROOT].get(unit)
            if child is None:
                return dead
            child_mass = self.context(nxt).node_mass[child]
            new = SpellerState(nxt, child, _log(child_mass), False)
            return _log(p_word) + _log(child_mass) - state.logmass, new

        child = self.trie.children[state.node].get(unit)
        if child is None:
            return dead
        child_mass = ctx.node_mass[child]
        new = SpellerState(state.word_state, child, _log(child_mass), False)
        return _log(child_mass) - state.logmass, new

    def log_distribution(self, state: SpellerState) -> np.ndarray:
        """Vector of next-unit log-probabilities over the whole inventory."""
        vocab = self.vocab
        ctx = self.context(state.word_state)
        probs = np.zeros(len(vocab))
        for u, child in self.trie.children[state.node].items():
            probs[u] += ctx.node_mass[child]
        if state.at_start and state.node == ROOT:
            probs[vocab.eos_id] += ctx.eos_prob
        p_word, nxt = self._finish_word(state, ctx)
        if nxt is not None:
            nctx = self.context(nxt)
            probs[vocab.eos_id] += p_word * nctx.eos_prob
            if self.trie.explicit_boundary:
                probs[vocab.id(vocab.marker)] += p_word * (1.0 - nctx.eos_prob)
            else:
                for u, child in self.trie.children[ROOT].items():
                    probs[u] += p_word * nctx.node_mass[child]
        with np.errstate(divide="ignore"):
            return np.log(probs) - state.logmass


def start_state(word_lm: ArpaModel, trie: PrefixTrie) -> SpellerState:
    """Sentence-initial state: root node, ``<s>`` context, mass 1."""
    return SpellerState(word_lm.start_state(), ROOT, 0.0, True)


_models: Dict[tuple, SpellerModel] = {}


def score_unit(word_lm: ArpaModel, trie: PrefixTrie, state: SpellerState, unit: int):
    """Functional form of :meth:`SpellerModel.score`.

    Keeps one memoizing :class:`SpellerModel` per ``(word_lm, trie)`` pair.
    """
    key = (id(word_lm), id(trie))
    model = _models.get(key)
    if model is None or model.word_lm is not word_lm or model.trie is not trie:
        model = SpellerModel(word_lm, trie)
        _models[key] = model
    return model.score(state, unit)
