"""Uniform incremental LM interface used by the decoder.

Every scorer is aligned with a decoder unit inventory (a sequence of unit
strings).  ``log_probs(state)`` returns natural-log scores for every
decoder unit; units the LM does not know score ``-inf``.
"""

import math
from typing import Optional, Sequence

import numpy as np

from .ngram import LN10, ArpaModel, NgramState, score_incremental
from .rnnlm import RnnLmParams, forward_step, initial_state
from .speller import PrefixTrie, SpellerModel, SpellerState
from .vocab import EOS, UnitVocabulary

__all__ = ["LMScorer", "NgramScorer", "SpellerScorer", "NeuralScorer"]


class LMScorer:
    """Base class: subclasses define ``start_state``, ``log_probs`` and ``advance``."""

    units: Sequence[str]

    def start_state(self):
        raise NotImplementedError

    def log_probs(self, state) -> np.ndarray:
        raise NotImplementedError

    def advance(self, state, unit: int):
        raise NotImplementedError

    def score(self, state, unit: int):
        """``(log P(unit | state), next state)``."""
        if not 0 <= unit < len(self.units):
            raise IndexError("unit {} outside scorer vocabulary".format(unit))
        return float(self.log_probs(state)[unit]), self.advance(state, unit)

    def sequence_logprob(self, units: Sequence[int]) -> float:
        state = self.start_state()
        total = 0.0
        for u in units:
            lp, state = self.score(state, u)
            total += lp
        return total


def _mapping(units, index):
    return np.array([index.get(u, -1) for u in units])


class NgramScorer(LMScorer):
    """Unit-level n-gram LM."""

    def __init__(self, model: ArpaModel, units: Sequence[str]):
        self.model = model
        self.units = tuple(units)
        self._map = _mapping(self.units, model.index)
        # <s> is never predicted; its -99 placeholder is not a probability
        self._known = (self._map >= 0) & (self._map != model.bos)
        self._memo = {}

    def start_state(self) -> NgramState:
        return self.model.start_state()

    def log_probs(self, state: NgramState) -> np.ndarray:
        hit = self._memo.get(state.context)
        if hit is None:
            m = self.model
            hit = np.full(len(self.units), -math.inf)
            for u in np.flatnonzero(self._known):
                hit[u] = m.logprob10(state.context, int(self._map[u])) * LN10
            self._memo[state.context] = hit
        return hit

    def advance(self, state: NgramState, unit: int) -> NgramState:
        t = int(self._map[unit])
        if t < 0:
            return state
        return score_incremental(self.model, state, t)[1]


class SpellerScorer(LMScorer):
    """Word LM composed with a speller trie; the trie's vocabulary must
    list the decoder units in the same order."""

    def __init__(self, word_lm: ArpaModel, trie: PrefixTrie, units: Optional[Sequence[str]] = None):
        self.model = SpellerModel(word_lm, trie)
        vocab: UnitVocabulary = trie.vocab
        self.units = tuple(units) if units is not None else vocab.units
        if self.units != vocab.units:
            raise ValueError("decoder units differ from the speller's unit inventory")

    def start_state(self) -> SpellerState:
        return self.model.start_state()

    def log_probs(self, state: SpellerState) -> np.ndarray:
        return self.model.log_distribution(state)

    def advance(self, state: SpellerState, unit: int) -> SpellerState:
        return self.model.score(state, unit)[1]

    def score(self, state, unit):
        if not 0 <= unit < len(self.units):
            raise IndexError("unit {} outside scorer vocabulary".format(unit))
        return self.model.score(state, unit)


class _NeuralState:
    __slots__ = ("rnn", "logdist")

    def __init__(self, rnn, logdist):
        self.rnn = rnn
        self.logdist = logdist


class NeuralScorer(LMScorer):
    """Recurrent LM.  Decoder units are matched to ``params.units`` by string."""

    def __init__(self, params: RnnLmParams, units: Sequence[str]):
        if params.units is None:
            raise ValueError("parameters carry no unit inventory")
        self.params = params
        self.units = tuple(units)
        index = {u: i for i, u in enumerate(params.units)}
        self._map = _mapping(self.units, index)
        self._known = self._map >= 0

    def start_state(self) -> _NeuralState:
        logdist, rnn = forward_step(self.params, initial_state(self.params), self.params.bos_id)
        return _NeuralState(rnn, logdist)

    def log_probs(self, state: _NeuralState) -> np.ndarray:
        out = np.full(len(self.units), -math.inf)
        out[self._known] = state.logdist[self._map[self._known]]
        return out

    def advance(self, state: _NeuralState, unit: int) -> _NeuralState:
        t = int(self._map[unit])
        if t < 0 or self.units[unit] == EOS:
            return state
        logdist, rnn = forward_step(self.params, state.rnn, t)
        return _NeuralState(rnn, logdist)
