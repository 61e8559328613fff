"""Synthetic recognition task for directional fusion experiments.

Sentences come from a sparse random word bigram chain over pronounceable
pseudo-words, so an LM trained on the text knows which words follow
which.  Test utterances are wordpiece-tokenized and turned into
:class:`~shallowfusion.acoustic.NoisyReferenceScorer` lattices.
"""

import os
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from .acoustic import NoisyReferenceScorer, save_lattice
from .vocab import (
    WordPieceModel,
    induce_wordpieces,
    save_wordpiece_model,
    tokenize,
    word_counts,
)

__all__ = ["SynthTask", "make_task", "write_task"]

CONSONANTS = "bdfgklmnprstvz"
VOWELS = "aeiou"


@dataclass
class SynthTask:
    words: List[str]
    train: List[str]
    dev: List[Tuple[str, NoisyReferenceScorer, str]]  # (utt id, lattice, reference)
    test: List[Tuple[str, NoisyReferenceScorer, str]]
    wordpieces: WordPieceModel


def _make_words(n, rng):
    words = set()
    while len(words) < n:
        syllables = rng.integers(1, 4)
        w = "".join(CONSONANTS[rng.integers(len(CONSONANTS))] + VOWELS[rng.integers(len(VOWELS))]
                    for _ in range(syllables))
        words.add(w)
    return sorted(words)


def _make_chain(n, rng, fanout, stop_prob):
    # row n is the sentence start; column n is the sentence end
    trans = np.zeros((n + 1, n + 1))
    for w in range(n + 1):
        succ = rng.choice(n, size=fanout, replace=False)
        trans[w, succ] = rng.dirichlet(np.ones(fanout))
        if w < n:
            trans[w] *= 1.0 - stop_prob
            trans[w, n] = stop_prob
    return trans


def _sample(trans, words, rng, max_len):
    n = len(words)
    out = []
    state = n
    while len(out) < max_len:
        nxt = rng.choice(n + 1, p=trans[state])
        if nxt == n:
            break
        out.append(words[nxt])
        state = nxt
    return " ".join(out) if out else words[int(rng.integers(n))]


def make_task(vocab_size: int = 50, sentences: int = 5000, noise: float = 1.0, seed: int = 0,
              dev_utterances: int = 100, test_utterances: int = 200, wp_size: int = 80,
              fanout: int = 4, stop_prob: float = 0.2, max_len: int = 12,
              signal: float = 5.0) -> SynthTask:
    """Sample a word chain, its training text and noisy dev/test lattices.

    Parameters
    ----------
    vocab_size, sentences
        Number of pseudo-words and of training sentences.
    noise, signal
        Passed to :class:`NoisyReferenceScorer` for every utterance.
    wp_size
        Target wordpiece inventory size, raised to the grapheme count
        plus one when smaller.
    fanout, stop_prob
        Successors per word and per-word probability of ending the
        sentence.

    Returns
    -------
    SynthTask
    """
    rng = np.random.default_rng(seed)
    words = _make_words(vocab_size, rng)
    trans = _make_chain(vocab_size, rng, fanout, stop_prob)
    train = [_sample(trans, words, rng, max_len) for _ in range(sentences)]
    dev_text = [_sample(trans, words, rng, max_len) for _ in range(dev_utterances)]
    test_text = [_sample(trans, words, rng, max_len) for _ in range(test_utterances)]

    counts = word_counts(train)
    base = len({c for w in counts for c in w}) + 1
    wp = induce_wordpieces(counts, max(wp_size, base))
    units = wp.vocabulary.units

    def lattices(texts, split, offset):
        out = []
        for i, text in enumerate(texts):
            utt = "{}-{:04d}".format(split, i)
            scorer = NoisyReferenceScorer(
                tokenize(text, wp), units, noise=noise, seed=seed * 100003 + offset + i,
                confusion_seed=seed, signal=signal, utt_id=utt,
            )
            out.append((utt, scorer, text))
        return out

    return SynthTask(
        words=words,
        train=train,
        dev=lattices(dev_text, "dev", 1_000_000),
        test=lattices(test_text, "test", 2_000_000),
        wordpieces=wp,
    )


def write_task(task: SynthTask, out_dir) -> None:
    """Layout: train.txt, words.txt, units.wp, {dev,test}.ref, {dev,test}/<utt>.lat"""
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "train.txt"), "w", encoding="utf-8", newline="\n") as f:
        f.writelines(line + "\n" for line in task.train)
    with open(os.path.join(out_dir, "words.txt"), "w", encoding="utf-8", newline="\n") as f:
        f.writelines(w + "\n" for w in task.words)
    save_wordpiece_model(task.wordpieces, os.path.join(out_dir, "units.wp"))
    for split, items in (("dev", task.dev), ("test", task.test)):
        sub = os.path.join(out_dir, split)
        os.makedirs(sub, exist_ok=True)
        with open(os.path.join(out_dir, split + ".ref"), "w", encoding="utf-8", newline="\n") as f:
            for utt, scorer, text in items:
                save_lattice(scorer.to_table(), os.path.join(sub, utt + ".lat"))
                f.write("{}\t{}\n".format(utt, text))
