"""Backoff n-gram language models.

Counting, Katz estimation with Good-Turing discounts, probability-rank
pruning, ARPA serialization and incremental scoring.  Models work over any
token inventory (graphemes, wordpieces or words); tokens are ids into
``ArpaModel.tokens``.

Probabilities are stored as log10 (the ARPA convention) and returned as
natural logs by :func:`score_incremental`; :data:`LN10` is the single
conversion point.
"""

import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, NamedTuple, Optional, Sequence, Tuple, Union

from .errors import FormatError
from .vocab import BOS, EOS

__all__ = [
    "LOG10_ZERO",
    "NgramCounts",
    "ArpaModel",
    "NgramState",
    "count_ngrams",
    "estimate_katz",
    "prune",
    "score_incremental",
    "read_arpa",
    "write_arpa",
    "load_arpa",
    "save_arpa",
    "token_vocabulary",
]

LN10 = math.log(10.0)
LOG10_ZERO = -99.0  # ARPA stand-in for probability zero


class NgramState(NamedTuple):
    """Incremental scoring cursor: the last ``order - 1`` token ids."""

    context: Tuple[int, ...]


@dataclass
class NgramCounts:
    """Raw n-gram counts of every order up to ``order``.

    ``counts`` maps token-id tuples of length 1..order to counts.
    """

    order: int
    counts: Dict[Tuple[int, ...], int]
    tokens: Tuple[str, ...]
    bos: int
    eos: int

    @property
    def vocab_size(self) -> int:
        return len(self.tokens)


@dataclass
class ArpaModel:
    """Backoff n-gram model.

    ``entries[n]`` maps n-tuples of token ids to ``(log10 prob, log10
    backoff)``.  The backoff is ``None`` on the highest order.  ``entries[0]``
    is unused.
    """

    order: int
    tokens: Tuple[str, ...]
    entries: List[Dict[Tuple[int, ...], Tuple[float, Optional[float]]]]
    report: List[str] = field(default_factory=list)

    def __post_init__(self):
        self.tokens = tuple(self.tokens)
        self.index = {t: i for i, t in enumerate(self.tokens)}
        if len(self.index) != len(self.tokens):
            raise ValueError("duplicate tokens in vocabulary")
        if BOS not in self.index or EOS not in self.index:
            raise ValueError("vocabulary must contain {} and {}".format(BOS, EOS))
        self.bos = self.index[BOS]
        self.eos = self.index[EOS]

    @property
    def vocab_size(self) -> int:
        return len(self.tokens)

    def num_entries(self, n: int) -> int:
        return len(self.entries[n])

    def start_state(self) -> NgramState:
        if self.order == 1:
            return NgramState(())
        return NgramState((self.bos,))

    def predictable(self) -> List[int]:
        """Token ids that carry probability mass (everything but ``<s>``)."""
        return [t for t in range(len(self.tokens)) if t != self.bos]

    def logprob10(self, context: Sequence[int], token: int) -> float:
        """log10 P(token | context) by the backoff recursion."""
        return _logprob10(self.entries, self.order, tuple(context), token)

    def sentence_logprob(self, ids: Sequence[int]) -> float:
        """Natural-log probability of ``ids`` followed by ``</s>``."""
        state = self.start_state()
        total = 0.0
        for t in list(ids) + [self.eos]:
            lp, state = score_incremental(self, state, t)
            total += lp
        return total


def _logprob10(entries, order, context, token):
    context = context[-(order - 1):] if order > 1 else ()
    backoff = 0.0
    while True:
        n = len(context) + 1
        hit = entries[n].get(context + (token,))
        if hit is not None:
            return backoff + hit[0]
        if not context:
            raise KeyError(token)
        ctx_entry = entries[n - 1].get(context)
        if ctx_entry is not None and ctx_entry[1] is not None:
            backoff += ctx_entry[1]
        context = context[1:]


def score_incremental(model: ArpaModel, state: NgramState, token: int) -> Tuple[float, NgramState]:
    """Score one token and advance the cursor.

    Returns the natural-log conditional probability and the new state
    holding the last ``order - 1`` tokens.
    """
    if not 0 <= token < len(model.tokens):
        raise KeyError("unknown token id {}".format(token))
    try:
        lp10 = _logprob10(model.entries, model.order, state.context, token)
    except KeyError:
        raise KeyError("token {!r} has no unigram entry".format(model.tokens[token])) from None
    if model.order == 1:
        new = ()
    else:
        new = (state.context + (token,))[-(model.order - 1):]
    return lp10 * LN10, NgramState(new)


def token_vocabulary(sentences: Sequence[Sequence[str]]) -> Tuple[str, ...]:
    """Sentinels followed by every observed token in first-seen order."""
    seen = {BOS: None, EOS: None}
    for sent in sentences:
        for tok in sent:
            seen.setdefault(tok, None)
    return tuple(seen)


def count_ngrams(corpus: Sequence[Sequence[int]], order: int, tokens: Sequence[str]) -> NgramCounts:
    """Count all n-grams up to ``order`` in ``corpus``.

    Each sentence is padded with one ``<s>`` and one ``</s>``.  ``tokens``
    is the id-to-string vocabulary and must include both sentinels.
    """
    if order < 1:
        raise ValueError("order must be >= 1, got {}".format(order))
    if not corpus:
        raise ValueError("empty corpus")
    tokens = tuple(tokens)
    index = {t: i for i, t in enumerate(tokens)}
    if BOS not in index or EOS not in index:
        raise ValueError("token vocabulary must contain {} and {}".format(BOS, EOS))
    bos, eos = index[BOS], index[EOS]
    n_tok = len(tokens)
    counts = Counter()
    for sent in corpus:
        for t in sent:
            if not 0 <= t < n_tok or t in (bos, eos):
                raise ValueError("invalid token id {} in corpus".format(t))
        padded = (bos,) + tuple(sent) + (eos,)
        for i in range(len(padded)):
            for n in range(1, order + 1):
                if i + n > len(padded):
                    break
                counts[padded[i:i + n]] += 1
    return NgramCounts(order, dict(counts), tokens, bos, eos)


def _count_of_counts(values):
    return Counter(values)


def _discounts(coc, k):
    """Katz/Good-Turing discount ratios for counts 1..k.

    Returns ``(ratios, fallback)``.  When the count-of-counts make the
    Good-Turing estimate unusable, absolute discounting is used instead and
    ``fallback`` is True.
    """
    n1 = coc.get(1, 0)
    ratios = {}
    ok = n1 > 0
    if ok:
        a = (k + 1) * coc.get(k + 1, 0) / n1
        ok = a < 1.0
    if ok:
        for r in range(1, k + 1):
            if not coc.get(r):
                continue
            r_star = (r + 1) * coc.get(r + 1, 0) / coc[r]
            d = (r_star / r - a) / (1.0 - a)
            if not 0.0 < d <= 1.0:
                ok = False
                break
            ratios[r] = d
    if ok:
        return ratios, False
    n2 = coc.get(2, 0)
    big_d = n1 / (n1 + 2.0 * n2) if n1 > 0 and n2 > 0 else 0.5
    return {r: (r - big_d) / r for r in range(1, k + 1)}, True


def _log10(p):
    return math.log10(p) if p > 0.0 else LOG10_ZERO


def estimate_katz(counts: NgramCounts, k: int = 5, min_count: int = 1) -> ArpaModel:
    """Katz backoff estimation.

    n-grams seen at most ``k`` times are discounted with Good-Turing ratios;
    higher counts keep their maximum-likelihood estimate.  n-grams of order
    two or more seen fewer than ``min_count`` times are dropped and reached
    through backoff.  Unigrams are maximum likelihood unless the vocabulary
    holds unseen tokens, in which case the discounted mass is shared equally
    among them.

    Orders whose count-of-counts cannot support Good-Turing fall back to
    absolute discounting; each fallback is recorded in ``model.report``.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if min_count < 1:
        raise ValueError("min_count must be >= 1")
    order = counts.order
    bos = counts.bos
    n_tok = counts.vocab_size
    by_order = [dict() for _ in range(order + 1)]
    for gram, c in counts.counts.items():
        by_order[len(gram)][gram] = c
    report = ["order {}".format(order), "k {}".format(k), "min_count {}".format(min_count)]
    entries = [dict() for _ in range(order + 1)]

    # unigrams
    predictable = [t for t in range(n_tok) if t != bos]
    uni = {t: by_order[1].get((t,), 0) for t in predictable}
    total = sum(uni.values())
    if total == 0:
        raise ValueError("no tokens to estimate from")
    unseen = [t for t in predictable if uni[t] == 0]
    if unseen:
        ratios, fallback = _discounts(_count_of_counts(c for c in uni.values() if c), k)
        if fallback:
            report.append("fallback 1 absolute-discounting")
        probs = {t: ratios.get(c, 1.0) * c / total for t, c in uni.items() if c}
        leftover = 1.0 - sum(probs.values())
        for t in unseen:
            probs[t] = leftover / len(unseen)
    else:
        probs = {t: c / total for t, c in uni.items()}
    for t in range(n_tok):
        if t == bos:
            entries[1][(t,)] = (LOG10_ZERO, None)
        else:
            entries[1][(t,)] = (_log10(probs[t]), None)

    for n in range(2, order + 1):
        grams = by_order[n]
        ratios, fallback = _discounts(_count_of_counts(grams.values()), k)
        if fallback:
            report.append("fallback {} absolute-discounting".format(n))
        followers = defaultdict(list)
        for gram, c in grams.items():
            followers[gram[:-1]].append((gram[-1], c))
        n_pred = len(predictable)
        for ctx in sorted(followers):
            items = followers[ctx]
            ctx_total = sum(c for _, c in items)
            kept = {}
            for w, c in items:
                if c < min_count:
                    continue
                p = ratios.get(c, 1.0) * c / ctx_total
                if p > 0.0:
                    kept[w] = p
            if len(kept) == n_pred:
                z = sum(kept.values())
                kept = {w: p / z for w, p in kept.items()}
            for w in sorted(kept):
                entries[n][ctx + (w,)] = (_log10(kept[w]), None)

    _drop_orphans(entries, order)
    _compute_backoffs(entries, order, n_tok, bos)
    for n in range(1, order + 1):
        report.append("ngram {}={}".format(n, len(entries[n])))
    return ArpaModel(order, counts.tokens, entries, report)


def _drop_orphans(entries, order):
    """Remove n-grams whose context has no entry of its own."""
    dropped = 0
    for n in range(3, order + 1):
        for gram in [g for g in entries[n] if g[:-1] not in entries[n - 1]]:
            del entries[n][gram]
            dropped += 1
    return dropped


def _compute_backoffs(entries, order, n_tok, bos):
    """Set every backoff weight so each context's distribution sums to one."""
    followers = [defaultdict(list) for _ in range(order + 1)]
    for n in range(2, order + 1):
        for gram, (lp, _) in entries[n].items():
            followers[n][gram[:-1]].append((gram[-1], lp))
    for n in range(1, order + 1):
        top = n == order
        for gram, (lp, _) in list(entries[n].items()):
            entries[n][gram] = (lp, None if top else 0.0)
    for n in range(2, order + 1):
        for ctx, items in followers[n].items():
            explicit = sum(10.0 ** lp for _, lp in items)
            lower = sum(10.0 ** _logprob10(entries, n - 1, ctx[1:], w) for w, _ in items)
            num = 1.0 - explicit
            den = 1.0 - lower
            if den <= 1e-12 or len(items) >= n_tok - 1:
                bow = 0.0
            elif num <= 0.0:
                bow = LOG10_ZERO
            else:
                bow = math.log10(num / den)
            lp, _ = entries[n - 1][ctx]
            entries[n - 1][ctx] = (lp, bow)


def prune(model: ArpaModel, max_entries_per_order: Union[int, Mapping[int, int]]) -> ArpaModel:
    """Probability-rank pruning.

    At each order from two upward, entries with the lowest stored
    probability are removed until at most the allowed number remain (ties:
    larger token tuple goes first).  Removing an entry also removes the
    higher-order entries that use it as their context.  Unigrams are never
    pruned.  Backoff weights are recomputed afterwards so every context
    still normalizes.

    ``max_entries_per_order`` is either one limit for all orders >= 2 or a
    mapping from order to limit.
    """
    n_uni = len(model.entries[1])
    if isinstance(max_entries_per_order, Mapping):
        limits = dict(max_entries_per_order)
        if any(v < 0 for v in limits.values()):
            raise ValueError("limits must be non-negative")
        if 1 in limits and limits[1] < n_uni:
            raise ValueError("cannot prune unigrams ({} < {})".format(limits[1], n_uni))
    else:
        if max_entries_per_order < n_uni:
            raise ValueError(
                "max {} is below the unigram count {}".format(max_entries_per_order, n_uni)
            )
        limits = {n: max_entries_per_order for n in range(2, model.order + 1)}
    entries = [dict(e) for e in model.entries]
    removed = 0
    for n in range(2, model.order + 1):
        for gram in [g for g in entries[n] if g[:-1] not in entries[n - 1]]:
            del entries[n][gram]
            removed += 1
        limit = limits.get(n)
        if limit is None or len(entries[n]) <= limit:
            continue
        ranked = sorted(entries[n].items(), key=lambda kv: (kv[1][0], tuple(-t for t in kv[0])))
        for gram, _ in ranked[: len(entries[n]) - limit]:
            del entries[n][gram]
            removed += 1
    if removed == 0:
        return ArpaModel(model.order, model.tokens, entries, list(model.report))
    _compute_backoffs(entries, model.order, len(model.tokens), model.bos)
    report = list(model.report) + ["pruned {}".format(removed)]
    report += ["ngram {}={}".format(n, len(entries[n])) for n in range(1, model.order + 1)]
    return ArpaModel(model.order, model.tokens, entries, report)


def _fmt(x: float) -> str:
    return repr(float(x))


def write_arpa(model: ArpaModel) -> str:
    """Serialize to ARPA text.  Output order is fixed, so it is reproducible."""
    lines = ["\\data\\"]
    for n in range(1, model.order + 1):
        lines.append("ngram {}={}".format(n, len(model.entries[n])))
    for n in range(1, model.order + 1):
        lines.append("")
        lines.append("\\{}-grams:".format(n))
        grams = model.entries[n]
        for gram in sorted(grams):
            lp, bow = grams[gram]
            words = " ".join(model.tokens[t] for t in gram)
            if bow is None:
                lines.append("{}\t{}".format(_fmt(lp), words))
            else:
                lines.append("{}\t{}\t{}".format(_fmt(lp), words, _fmt(bow)))
    lines.append("")
    lines.append("\\end\\")
    return "\n".join(lines) + "\n"


def _parse_float(text, lineno):
    try:
        value = float(text)
    except ValueError:
        raise FormatError("non-numeric field {!r}".format(text), lineno) from None
    if math.isnan(value):
        raise FormatError("NaN field", lineno)
    return value


def read_arpa(text: str) -> ArpaModel:
    """Parse ARPA text.  Token ids follow the order of the unigram section."""
    lines = text.splitlines()
    pos = 0

    def skip_blank():
        nonlocal pos
        while pos < len(lines) and not lines[pos].strip():
            pos += 1

    skip_blank()
    if pos >= len(lines) or lines[pos].strip() != "\\data\\":
        raise FormatError("missing \\data\\ section", pos + 1)
    pos += 1
    declared = {}
    while pos < len(lines) and lines[pos].strip().startswith("ngram "):
        body = lines[pos].strip()[len("ngram "):]
        if "=" not in body:
            raise FormatError("malformed count line", pos + 1)
        n, c = body.split("=", 1)
        try:
            declared[int(n)] = int(c)
        except ValueError:
            raise FormatError("non-numeric count line", pos + 1) from None
        pos += 1
    if not declared or sorted(declared) != list(range(1, max(declared) + 1)):
        raise FormatError("\\data\\ section must declare orders 1..N", pos + 1)
    order = max(declared)

    tokens = []
    index = {}
    raw = [None] + [[] for _ in range(order)]
    for n in range(1, order + 1):
        skip_blank()
        header = "\\{}-grams:".format(n)
        if pos >= len(lines) or lines[pos].strip() != header:
            raise FormatError("missing {} section".format(header), pos + 1)
        pos += 1
        while pos < len(lines) and lines[pos].strip() and not lines[pos].startswith("\\"):
            fields = lines[pos].split()
            if len(fields) not in (n + 1, n + 2):
                raise FormatError("expected {} or {} fields".format(n + 1, n + 2), pos + 1)
            lp = _parse_float(fields[0], pos + 1)
            bow = _parse_float(fields[n + 1], pos + 1) if len(fields) == n + 2 else None
            words = fields[1:n + 1]
            if n == 1:
                if words[0] in index:
                    raise FormatError("duplicate unigram {!r}".format(words[0]), pos + 1)
                index[words[0]] = len(tokens)
                tokens.append(words[0])
            raw[n].append((words, lp, bow, pos + 1))
            pos += 1
        if len(raw[n]) != declared[n]:
            raise FormatError(
                "order {}: \\data\\ declares {} entries but the section has {}".format(
                    n, declared[n], len(raw[n])
                ),
                pos + 1,
            )
    skip_blank()
    if pos >= len(lines) or lines[pos].strip() != "\\end\\":
        raise FormatError("missing \\end\\ marker", pos + 1)

    entries = [dict() for _ in range(order + 1)]
    for n in range(1, order + 1):
        for words, lp, bow, lineno in raw[n]:
            try:
                gram = tuple(index[w] for w in words)
            except KeyError as exc:
                raise FormatError("token {} has no unigram".format(exc), lineno) from None
            if gram in entries[n]:
                raise FormatError("duplicate {}-gram".format(n), lineno)
            if n < order and bow is None:
                bow = 0.0
            if n == order and bow is not None:
                raise FormatError("backoff weight on highest order", lineno)
            entries[n][gram] = (lp, bow)
    try:
        return ArpaModel(order, tuple(tokens), entries)
    except ValueError as exc:
        raise FormatError(str(exc)) from None


def save_arpa(model: ArpaModel, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(write_arpa(model))


def load_arpa(path) -> ArpaModel:
    with open(path, encoding="utf-8") as f:
        return read_arpa(f.read())
