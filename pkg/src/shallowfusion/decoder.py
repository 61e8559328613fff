"""Label-synchronous beam search with shallow fusion and a coverage term.

A hypothesis ``y`` is ranked by::

    log p(y|x) + lm_weight * log p_LM(y) + coverage_weight * c(x, y)

where ``c`` sums, over input frames, the log of the attention mass the
frame has received so far, clamped from above at ``coverage_clamp``.
With both weights zero this is ordinary beam search on the acoustic
posterior.

``</s>`` is scored by both the acoustic scorer and the LM.  Hypotheses
that emit it leave the beam for a completed pool; the search stops when
the pool holds ``nbest`` entries no active hypothesis can still beat, or
after ``max_steps`` emitted units.
"""

import math
from dataclasses import dataclass, field, replace
from typing import Any, List, Optional, Sequence

import numpy as np

from .acoustic import AcousticScorer
from .lmscorers import LMScorer

__all__ = [
    "DecodeConfig",
    "Hypothesis",
    "coverage_penalty",
    "beam_search",
    "rescore_nbest",
]


@dataclass(frozen=True)
class DecodeConfig:
    beam_width: int = 8
    lm_weight: float = 0.0
    coverage_weight: float = 0.0
    max_steps: int = 200
    nbest: int = 1
    coverage_clamp: float = 0.5
    coverage_floor: float = -20.0

    def __post_init__(self):
        if self.beam_width < 1:
            raise ValueError("beam_width must be >= 1")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        if self.nbest < 1:
            raise ValueError("nbest must be >= 1")
        for name in ("lm_weight", "coverage_weight", "coverage_clamp", "coverage_floor"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError("{} must be finite".format(name))
        if self.coverage_clamp <= 0:
            raise ValueError("coverage_clamp must be positive")


@dataclass
class Hypothesis:
    """A partial or complete transcript with its decomposed score.

    For complete hypotheses ``coverage`` is taken over every input frame;
    for partial ones only frames that have received attention count.
    """

    tokens: tuple
    acoustic_logprob: float
    lm_logprob: float
    coverage: float
    fused_score: float
    frame_attention_mass: np.ndarray
    complete: bool = False
    lm_state: Any = field(default=None, repr=False, compare=False)
    acoustic_state: Any = field(default=None, repr=False, compare=False)


def coverage_penalty(frame_attention_mass, clamp: float = 0.5, floor: float = -20.0,
                     partial: bool = False) -> float:
    """Sum over input frames of ``log(min(mass, clamp))``.

    Each term is floored at ``floor`` so frames with no attention stay
    finite.  With ``partial`` only frames with positive mass are counted.
    """
    mass = np.asarray(frame_attention_mass, dtype=np.float64)
    if np.any(mass < 0):
        raise ValueError("attention mass must be non-negative")
    if partial:
        mass = mass[mass > 0]
    with np.errstate(divide="ignore"):
        terms = np.log(np.minimum(mass, clamp))
    return float(np.maximum(terms, floor).sum())


def _weighted(weight, value):
    # a zero weight switches a term off, even when the term is -inf
    if weight == 0:
        return np.zeros_like(value) if isinstance(value, np.ndarray) else 0.0
    return weight * value


def _rank_key(h):
    return (-h.fused_score, h.tokens)


def beam_search(acoustic: AcousticScorer, lm: Optional[LMScorer] = None,
                config: DecodeConfig = DecodeConfig()) -> List[Hypothesis]:
    """Decode one utterance.

    Returns up to ``config.nbest`` complete hypotheses, best first (ties
    broken by token order).  If none completes within ``max_steps`` the
    best partial hypotheses are returned with ``complete=False``.
    """
    units = tuple(acoustic.units)
    if lm is not None and tuple(lm.units) != units:
        raise ValueError("LM and acoustic scorer disagree on the unit inventory")
    V = len(units)
    eos = acoustic.eos
    lam = config.lm_weight
    gam = config.coverage_weight
    clamp, floor = config.coverage_clamp, config.coverage_floor
    max_steps = config.max_steps
    if acoustic.max_steps is not None:
        max_steps = min(max_steps, acoustic.max_steps)
    T = acoustic.num_frames
    can_stop_early = lam >= 0 and gam >= 0
    best_coverage = T * math.log(clamp)

    root = Hypothesis(
        tokens=(),
        acoustic_logprob=0.0,
        lm_logprob=0.0,
        coverage=0.0,
        fused_score=0.0,
        frame_attention_mass=np.zeros(T),
        lm_state=lm.start_state() if lm is not None else None,
        acoustic_state=acoustic.initial_state(),
    )
    active = [root]
    pool: List[Hypothesis] = []
    zeros = np.zeros(V)

    for _ in range(max_steps):
        if not active:
            break
        active.sort(key=lambda h: h.tokens)
        rows = []
        expansions = []
        for hyp in active:
            ac, attn = acoustic.scores(hyp.acoustic_state)
            lmp = lm.log_probs(hyp.lm_state) if lm is not None else zeros
            mass = hyp.frame_attention_mass + attn
            ac_tot = hyp.acoustic_logprob + ac
            lm_tot = hyp.lm_logprob + lmp
            partial_cov = coverage_penalty(mass, clamp, floor, partial=True)
            fused = ac_tot + _weighted(lam, lm_tot) + _weighted(gam, partial_cov)

            full_cov = coverage_penalty(mass, clamp, floor)
            eos_score = ac_tot[eos] + _weighted(lam, lm_tot[eos]) + _weighted(gam, full_cov)
            if eos_score > -math.inf:
                pool.append(Hypothesis(
                    tokens=hyp.tokens + (eos,),
                    acoustic_logprob=float(ac_tot[eos]),
                    lm_logprob=float(lm_tot[eos]),
                    coverage=full_cov,
                    fused_score=float(eos_score),
                    frame_attention_mass=mass,
                    complete=True,
                ))
            fused = fused.copy()
            fused[eos] = -math.inf
            rows.append(fused)
            expansions.append((ac_tot, lm_tot, partial_cov, mass))

        flat = np.concatenate(rows)
        order = np.argsort(-flat, kind="stable")
        next_active = []
        for idx in order[: config.beam_width]:
            score = flat[idx]
            if not score > -math.inf:
                break
            h_idx, unit = divmod(int(idx), V)
            hyp = active[h_idx]
            ac_tot, lm_tot, partial_cov, mass = expansions[h_idx]
            next_active.append(Hypothesis(
                tokens=hyp.tokens + (unit,),
                acoustic_logprob=float(ac_tot[unit]),
                lm_logprob=float(lm_tot[unit]),
                coverage=partial_cov,
                fused_score=float(score),
                frame_attention_mass=mass,
                lm_state=lm.advance(hyp.lm_state, unit) if lm is not None else None,
                acoustic_state=acoustic.advance(hyp.acoustic_state, unit),
            ))
        active = next_active

        pool.sort(key=_rank_key)
        del pool[config.nbest:]
        if can_stop_early and len(pool) >= config.nbest and active:
            bound = max(
                h.acoustic_logprob + _weighted(lam, h.lm_logprob) + _weighted(gam, best_coverage)
                for h in active
            )
            if bound < pool[-1].fused_score:
                break

    if pool:
        return pool[: config.nbest]
    active.sort(key=_rank_key)
    return active[: config.nbest]


def rescore_nbest(nbest: Sequence[Hypothesis], lm: Optional[LMScorer], lm_weight: float,
                  coverage_weight: float, clamp: float = 0.5,
                  floor: float = -20.0) -> List[Hypothesis]:
    """Re-rank complete hypotheses with the fused objective.

    The LM score is recomputed over each full token sequence and coverage
    from the stored frame attention mass.  The input list is left as is.
    """
    out = []
    for hyp in nbest:
        if not hyp.complete:
            raise ValueError("cannot rescore an incomplete hypothesis")
        lm_lp = lm.sequence_logprob(hyp.tokens) if lm is not None else 0.0
        cov = coverage_penalty(hyp.frame_attention_mass, clamp, floor)
        fused = hyp.acoustic_logprob + _weighted(lm_weight, lm_lp) + _weighted(coverage_weight, cov)
        out.append(replace(hyp, lm_logprob=lm_lp, coverage=cov, fused_score=float(fused),
                           frame_attention_mass=hyp.frame_attention_mass.copy()))
    out.sort(key=_rank_key)
    return out
