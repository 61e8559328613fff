"""Hand-built models and lattices shared by unit and acceptance tests."""

import math

import numpy as np

from shallowfusion.lmscorers import NeuralScorer, NgramScorer, SpellerScorer
from shallowfusion.ngram import LOG10_ZERO, ArpaModel, count_ngrams, estimate_katz
from shallowfusion.rnnlm import init_params
from shallowfusion.speller import build_trie
from shallowfusion.vocab import (
    SPECIALS,
    detokenize,
    grapheme_vocabulary,
    graphemize,
    normalize,
    tokenize,
)

LETTERS = "abcdefgh"


def random_words(rng, n, letters=LETTERS, max_len=5):
    """``n`` distinct words, with some deliberately prefixing others."""
    words = []
    seen = set()
    while len(words) < n:
        if words and rng.random() < 0.3:
            w = words[int(rng.integers(len(words)))] + letters[int(rng.integers(len(letters)))]
        else:
            w = "".join(letters[int(rng.integers(len(letters)))]
                        for _ in range(int(rng.integers(1, max_len + 1))))
        if w not in seen:
            seen.add(w)
            words.append(w)
    return words


def hand_bigram_lm(words, rng, followers=5):
    """A backoff bigram LM written down directly rather than estimated.

    Unigrams are a random distribution over ``words + </s>``.  Each
    context (``<s>`` and every word) stores ``followers`` explicit
    successors with random probabilities taking 60-90% of the mass; the
    backoff weight hands the rest to the unigrams of the other tokens.
    """
    tokens = ("<s>", "</s>") + tuple(words)
    bos = 0
    predict = list(range(1, len(tokens)))
    uni = rng.dirichlet(np.ones(len(predict)))
    entries = [dict(), dict(), dict()]
    uni_p = dict(zip(predict, uni))
    entries[1][(bos,)] = (LOG10_ZERO, 0.0)
    for t in predict:
        entries[1][(t,)] = (math.log10(uni_p[t]), 0.0)
    for ctx in [bos] + predict[1:]:
        succ = rng.choice(predict, size=followers, replace=False)
        share = rng.uniform(0.6, 0.9)
        probs = rng.dirichlet(np.ones(followers)) * share
        for s, p in zip(succ, probs):
            entries[2][(ctx, int(s))] = (math.log10(p), None)
        alpha = (1.0 - share) / (1.0 - sum(uni_p[int(s)] for s in succ))
        lp, _ = entries[1][(ctx,)]
        entries[1][(ctx,)] = (lp, math.log10(alpha))
    return ArpaModel(2, tokens, entries)


def unigram_word_lm(probs):
    """Context-free word LM from ``{word: p}``; ``</s>`` gets probability 0."""
    tokens = ("<s>", "</s>") + tuple(probs)
    entries = [dict(), {(0,): (LOG10_ZERO, None), (1,): (LOG10_ZERO, None)}]
    for i, w in enumerate(probs, 2):
        entries[1][(i,)] = (math.log10(probs[w]), None)
    return ArpaModel(1, tokens, entries)


def sample_sentence(lm, rng, max_words=8):
    """Draw word ids from a word LM until ``</s>`` or ``max_words``."""
    state = lm.start_state()
    out = []
    preds = lm.predictable()
    while len(out) < max_words:
        p = np.array([10.0 ** lm.logprob10(state.context, t) for t in preds])
        t = int(rng.choice(preds, p=p / p.sum()))
        if t == lm.eos:
            break
        out.append(t)
        state = type(state)((t,))
    return out


# ---------------------------------------------------------------- decoder fixtures

def full_bigram_lm(tokens, table):
    """Bigram ARPA model from complete per-context distributions.

    ``table[ctx][word]`` must sum to one over the predictable tokens for
    each context, so backoff is never used.  Unigrams are uniform.
    """
    tokens = ("<s>", "</s>") + tuple(t for t in tokens if t not in ("<s>", "</s>"))
    index = {t: i for i, t in enumerate(tokens)}
    predict = [t for t in tokens if t != "<s>"]
    entries = [dict(), dict(), dict()]
    for t in tokens:
        lp = LOG10_ZERO if t == "<s>" else -math.log10(len(predict))
        entries[1][(index[t],)] = (lp, 0.0)
    for ctx, dist in table.items():
        assert abs(sum(dist.values()) - 1.0) < 1e-12
        for w, p in dist.items():
            entries[2][(index[ctx], index[w])] = (math.log10(p), None)
    return ArpaModel(2, tokens, entries)


WP_UNITS = ("<unk>", "<s>", "</s>", "_a", "_b", "_c")


def _normalize_rows(probs):
    probs = np.asarray(probs, dtype=np.float64)
    with np.errstate(divide="ignore"):
        logp = np.log(probs)
    return logp - np.log(probs.sum(axis=1, keepdims=True))


def truncation_lattice():
    """Four steps, four frames; reference "a b a".

    Stopping after "a" is acoustically more likely than the full
    transcript (0.40 against 0.55 * 0.6 * 0.9 = 0.297), but it leaves
    frames 2 and 3 with only 0.1 attention each.
    """
    units = ("<unk>", "<s>", "</s>", "_a", "_b")
    probs = [
        [0, 0, 0.05, 0.90, 0.05],
        [0, 0, 0.40, 0.05, 0.55],
        [0, 0, 0.20, 0.60, 0.20],
        [0, 0, 0.90, 0.05, 0.05],
    ]
    attention = np.full((4, 4), 0.05)
    np.fill_diagonal(attention, 0.85)
    return units, _normalize_rows(probs), attention, "a b a"


def pruning_lattice():
    """Step 0 posteriors a .5, b .3, c .19, </s> .01; then </s>.

    A beam of two keeps "a" and "b" on acoustics alone, so "c" never
    reaches the n-best list.  The LM strongly prefers "c".
    """
    probs = [
        [0, 0, 0.01, 0.50, 0.30, 0.19],
        [0, 0, 0.97, 0.01, 0.01, 0.01],
    ]
    attention = np.full((2, 2), 0.5)
    lm = full_bigram_lm(WP_UNITS[1:], {
        "<s>": {"_c": 0.90, "_a": 0.04, "_b": 0.04, "</s>": 0.02},
        "_a": {"</s>": 0.90, "_a": 0.04, "_b": 0.03, "_c": 0.03},
        "_b": {"</s>": 0.90, "_a": 0.04, "_b": 0.03, "_c": 0.03},
        "_c": {"</s>": 0.90, "_a": 0.04, "_b": 0.03, "_c": 0.03},
    })
    return WP_UNITS, _normalize_rows(probs), attention, lm, "c"


# ---------------------------------------------------------------- small LMs for oracle checks

def small_ngram_scorer(units, rng):
    body = [u for u in units if u not in ("<unk>", "<s>", "</s>")]
    tokens = ("<s>", "</s>") + tuple(body)
    corpus = [[int(rng.integers(2, len(tokens))) for _ in range(int(rng.integers(1, 6)))]
              for _ in range(40)]
    model = estimate_katz(count_ngrams(corpus, 2, tokens), k=3)
    return NgramScorer(model, units)


def small_neural_scorer(units, rng):
    params = init_params(len(units), 4, 4, seed=int(rng.integers(1 << 30)), units=units)
    for name in params.names():
        params.arrays[name] = rng.uniform(-1.5, 1.5, size=params.arrays[name].shape)
    return NeuralScorer(params, units)


def small_speller_scorer(rng):
    """Grapheme speller over letters a, b: units are specials, "_", a, b."""
    vocab = grapheme_vocabulary("ab")
    words = ["a", "b", "ab", "ba", "aa"]
    lm = hand_bigram_lm(words, rng, followers=3)
    trie = build_trie(words, lambda w: graphemize(w, vocab), vocab)
    return SpellerScorer(lm, trie)


def compare_with_enumeration(units, logpost, attention, lm, lam, gam):
    """Full-width beam search against exhaustive scoring.

    Returns ``(expected, got)`` where each is ``(fused score, tokens)``.
    """
    from oracles import enumerate_decodes, exhaustive_best
    from shallowfusion.acoustic import TableScorer
    from shallowfusion.decoder import DecodeConfig, beam_search

    scorer = TableScorer(units, logpost, attention)
    eos = units.index("</s>")
    banned = [units.index(u) for u in ("<unk>", "<s>") if u in units]
    U, V = logpost.shape
    results = enumerate_decodes(
        logpost, attention, eos,
        (lm.sequence_logprob if lm is not None else None), lam, gam, banned=banned)
    expected = exhaustive_best(results)
    config = DecodeConfig(beam_width=V ** U, lm_weight=lam, coverage_weight=gam, max_steps=U)
    top = beam_search(scorer, lm, config)[0]
    return expected, (top.fused_score, top.tokens)


def check_wordpiece_properties(model, text):
    """Assert determinism, round trip and greedy longest-match on ``text``."""
    vocab = model.vocabulary
    ids = tokenize(text, model)
    assert tokenize(text, model) == ids
    assert vocab.unk_id not in ids
    assert detokenize(ids, vocab) == normalize(text)
    pieces = set(vocab.units[len(SPECIALS):])
    longest = max(len(p) for p in pieces)
    for word in normalize(text).split():
        rest = "_" + word
        word_ids = tokenize(word, model)
        for i in word_ids:
            unit = vocab.units[i]
            assert rest.startswith(unit)
            longer = [rest[:n] for n in range(len(unit) + 1, min(longest, len(rest)) + 1)]
            assert not any(p in pieces for p in longer)
            rest = rest[len(unit):]
        assert rest == ""
