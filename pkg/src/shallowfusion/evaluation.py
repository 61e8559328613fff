"""Word error rate, relative WER reduction and dev-set weight tuning."""

import json
from dataclasses import dataclass, replace
from typing import List, Optional, Sequence, Tuple

from .acoustic import AcousticScorer
from .decoder import DecodeConfig, Hypothesis, beam_search
from .lmscorers import LMScorer
from .vocab import units_to_text

__all__ = [
    "WerBreakdown",
    "TuneResult",
    "DecodeFailure",
    "wer",
    "corpus_wer",
    "relative_werr",
    "hypothesis_text",
    "decode_corpus",
    "tune_grid",
]


@dataclass(frozen=True)
class WerBreakdown:
    substitutions: int
    insertions: int
    deletions: int
    reference_words: int

    @property
    def errors(self) -> int:
        return self.substitutions + self.insertions + self.deletions

    @property
    def wer(self) -> float:
        return self.errors / self.reference_words

    def __add__(self, other):
        return WerBreakdown(
            self.substitutions + other.substitutions,
            self.insertions + other.insertions,
            self.deletions + other.deletions,
            self.reference_words + other.reference_words,
        )


def wer(reference: Sequence[str], hypothesis: Sequence[str]) -> WerBreakdown:
    """Levenshtein alignment with unit costs.

    Among minimum-cost alignments the backtrace prefers a substitution (or
    match), then a deletion, then an insertion.
    """
    ref = list(reference)
    hyp = list(hypothesis)
    if not ref:
        raise ValueError("empty reference")
    n, m = len(ref), len(hyp)
    cost = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(1, n + 1):
        cost[i][0] = i
    for j in range(1, m + 1):
        cost[0][j] = j
    for i in range(1, n + 1):
        row, prev = cost[i], cost[i - 1]
        for j in range(1, m + 1):
            sub = prev[j - 1] + (ref[i - 1] != hyp[j - 1])
            row[j] = min(sub, prev[j] + 1, row[j - 1] + 1)
    s = d = ins = 0
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0 and cost[i][j] == cost[i - 1][j - 1] + (ref[i - 1] != hyp[j - 1]):
            s += ref[i - 1] != hyp[j - 1]
            i, j = i - 1, j - 1
        elif i > 0 and cost[i][j] == cost[i - 1][j] + 1:
            d += 1
            i -= 1
        else:
            ins += 1
            j -= 1
    return WerBreakdown(s, ins, d, n)


def corpus_wer(pairs: Sequence[Tuple[Sequence[str], Sequence[str]]]) -> WerBreakdown:
    """Total errors over total reference words (not a mean of ratios)."""
    total = WerBreakdown(0, 0, 0, 0)
    for ref, hyp in pairs:
        total = total + wer(ref, hyp)
    return total


def relative_werr(baseline_wer: float, new_wer: float) -> float:
    """Relative WER reduction ``(baseline - new) / baseline``."""
    if baseline_wer <= 0:
        raise ValueError("baseline WER must be positive")
    return (baseline_wer - new_wer) / baseline_wer


def hypothesis_text(hyp: Hypothesis, units: Sequence[str]) -> str:
    return units_to_text(units[t] for t in hyp.tokens)


def decode_corpus(scorers: Sequence[AcousticScorer], lm: Optional[LMScorer],
                  config: DecodeConfig) -> List[List[Hypothesis]]:
    return [beam_search(s, lm, config) for s in scorers]


class DecodeFailure(RuntimeError):
    def __init__(self, lm_weight, coverage_weight, cause):
        super().__init__(
            "decode failed at lambda={} gamma={}: {}".format(lm_weight, coverage_weight, cause)
        )
        self.lm_weight = lm_weight
        self.coverage_weight = coverage_weight


@dataclass
class TuneResult:
    grid: List[Tuple[float, float, float]]  # (lambda, gamma, corpus WER)
    best_lm_weight: float
    best_coverage_weight: float
    best_wer: float

    def to_json(self) -> str:
        return json.dumps(
            {
                "grid": [{"lambda": l, "gamma": g, "wer": w} for l, g, w in self.grid],
                "best": {
                    "lambda": self.best_lm_weight,
                    "gamma": self.best_coverage_weight,
                    "wer": self.best_wer,
                },
            },
            indent=2,
            sort_keys=True,
        )

    def lines(self) -> List[str]:
        out = ["lambda\tgamma\twer"]
        out += ["{}\t{}\t{:.6f}".format(l, g, w) for l, g, w in self.grid]
        out.append("best\t{}\t{}\t{:.6f}".format(
            self.best_lm_weight, self.best_coverage_weight, self.best_wer))
        return out


def tune_grid(dev_set: Sequence[Tuple[AcousticScorer, str]], config: DecodeConfig,
              lambda_grid: Sequence[float], gamma_grid: Sequence[float],
              lm: Optional[LMScorer] = None) -> TuneResult:
    """Decode the dev set at every (lambda, gamma) and keep the lowest WER.

    WER is corpus-level on detokenized words.  Ties prefer the smaller
    lambda, then the smaller gamma.
    """
    if not dev_set:
        raise ValueError("empty dev set")
    if not lambda_grid or not gamma_grid:
        raise ValueError("empty grid")
    grid = []
    for lam in lambda_grid:
        for gam in gamma_grid:
            cfg = replace(config, lm_weight=lam, coverage_weight=gam, nbest=1)
            try:
                total = WerBreakdown(0, 0, 0, 0)
                for scorer, ref in dev_set:
                    hyps = beam_search(scorer, lm, cfg)
                    text = hypothesis_text(hyps[0], scorer.units) if hyps else ""
                    total = total + wer(ref.split(), text.split())
            except Exception as exc:
                raise DecodeFailure(lam, gam, exc) from exc
            grid.append((lam, gam, total.wer))
    best = min(grid, key=lambda r: (r[2], r[0], r[1]))
    return TuneResult(grid, best[0], best[1], best[2])
