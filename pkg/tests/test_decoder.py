import math
import re

import numpy as np
import pytest

from fixtures import (
    WP_UNITS,
    compare_with_enumeration,
    full_bigram_lm,
    pruning_lattice,
    small_neural_scorer,
    small_ngram_scorer,
    small_speller_scorer,
    truncation_lattice,
)
from oracles import coverage, enumerate_decodes, exhaustive_best, random_lattice
from shallowfusion.acoustic import NoisyReferenceScorer, TableScorer, read_lattice, write_lattice
from shallowfusion.decoder import DecodeConfig, beam_search, coverage_penalty, rescore_nbest
from shallowfusion.errors import FormatError
from shallowfusion.evaluation import hypothesis_text
from shallowfusion.lmscorers import NgramScorer

UNITS = WP_UNITS
GRID = [(lam, gam) for lam in (0.0, 0.3, 1.0) for gam in (0.0, 0.5)]


def two_step_lattice():
    # step 0: a .6, b .3, </s> .1; step 1: </s> .9
    units = ("<unk>", "<s>", "</s>", "_a", "_b")
    p = np.array([[0, 0, 0.1, 0.6, 0.3], [0, 0, 0.9, 0.05, 0.05]])
    with np.errstate(divide="ignore"):
        return units, np.log(p), np.full((2, 3), 1 / 3)


# ---------------------------------------------------------------- coverage

def test_coverage_saturates_at_clamp():
    assert coverage_penalty([0.7, 0.5, 3.0]) == pytest.approx(3 * math.log(0.5))


def test_coverage_direct_formula():
    assert coverage_penalty([0.5, 0.25]) == pytest.approx(math.log(0.5) + math.log(0.25))


def test_coverage_floor_and_partial():
    assert coverage_penalty([0.0, 0.5]) == pytest.approx(-20.0 + math.log(0.5))
    assert coverage_penalty([0.0, 0.5], partial=True) == pytest.approx(math.log(0.5))
    with pytest.raises(ValueError):
        coverage_penalty([-0.1])


def test_coverage_never_decreases_when_mass_is_added():
    rng = np.random.default_rng(0)
    for _ in range(500):
        mass = rng.random(6) * rng.choice([0.1, 1.0])
        more = mass.copy()
        more[rng.integers(6)] += rng.random()
        assert coverage_penalty(more) >= coverage_penalty(mass)
        assert coverage_penalty(mass) == pytest.approx(coverage(mass), abs=1e-12)


# ---------------------------------------------------------------- config

@pytest.mark.parametrize("kwargs", [
    {"beam_width": 0}, {"max_steps": 0}, {"nbest": 0},
    {"lm_weight": math.inf}, {"coverage_weight": math.nan}, {"coverage_clamp": 0.0},
])
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        DecodeConfig(**kwargs)


# ---------------------------------------------------------------- small exhaustive cases

def test_two_step_acoustic_argmax():
    units, logp, att = two_step_lattice()
    hyps = beam_search(TableScorer(units, logp, att), None, DecodeConfig(beam_width=4, nbest=3))
    assert [h.tokens for h in hyps] == [(3, 2), (4, 2), (2,)]
    assert hyps[0].fused_score == pytest.approx(math.log(0.6 * 0.9))
    assert all(h.complete for h in hyps)


def test_lm_flips_to_acoustically_second_path():
    units, logp, att = two_step_lattice()
    lm = NgramScorer(full_bigram_lm(units[1:], {
        "<s>": {"_a": 0.1, "_b": 0.8, "</s>": 0.1},
        "_a": {"</s>": 0.5, "_a": 0.25, "_b": 0.25},
        "_b": {"</s>": 0.5, "_a": 0.25, "_b": 0.25},
    }), units)
    config = DecodeConfig(beam_width=4, lm_weight=1.0)
    top = beam_search(TableScorer(units, logp, att), lm, config)[0]
    # a: ln(.6*.9) + ln(.1*.5); b: ln(.3*.9) + ln(.8*.5)
    assert top.tokens == (4, 2)
    assert top.fused_score == pytest.approx(math.log(0.3 * 0.9) + math.log(0.8 * 0.5))


def test_truncation_fixed_by_coverage():
    units, logp, att, ref = truncation_lattice()
    scorer = TableScorer(units, logp, att)
    plain = beam_search(scorer, None, DecodeConfig(beam_width=4))[0]
    covered = beam_search(scorer, None, DecodeConfig(beam_width=4, coverage_weight=0.5))[0]
    assert hypothesis_text(plain, units) == "a"
    assert hypothesis_text(covered, units) == ref
    for gam, got in ((0.0, plain), (0.5, covered)):
        best = exhaustive_best(enumerate_decodes(logp, att, 2, None, 0.0, gam, banned=(0, 1)))
        assert best[1] == got.tokens
        assert best[0] == pytest.approx(got.fused_score, abs=1e-9)


def test_fusion_recovers_prefix_that_rescoring_loses():
    units, logp, att, lm_model, ref = pruning_lattice()
    scorer = TableScorer(units, logp, att)
    lm = NgramScorer(lm_model, units)
    nbest = beam_search(scorer, None, DecodeConfig(beam_width=2, nbest=2))
    assert {hypothesis_text(h, units) for h in nbest} == {"a", "b"}
    rescored = rescore_nbest(nbest, lm, 1.0, 0.0)
    assert hypothesis_text(rescored[0], units) != ref
    fused = beam_search(scorer, lm, DecodeConfig(beam_width=2, lm_weight=1.0))[0]
    assert hypothesis_text(fused, units) == ref
    # with an exhaustive beam the two strategies agree
    everything = beam_search(scorer, None, DecodeConfig(beam_width=64, nbest=64))
    wide = beam_search(scorer, lm, DecodeConfig(beam_width=64, lm_weight=1.0))[0]
    assert rescore_nbest(everything, lm, 1.0, 0.0)[0].tokens == wide.tokens


# ---------------------------------------------------------------- oracle equivalence

def _speller_lattice(rng):
    scorer = small_speller_scorer(rng)
    steps = int(rng.integers(1, 6))
    logp, att = random_lattice(rng, scorer.units, steps, int(rng.integers(1, 5)), banned=(0, 1))
    return scorer.units, logp, att, scorer


@pytest.mark.parametrize("kind", ["none", "ngram", "speller", "neural"])
def test_full_beam_matches_enumeration(kind):
    rng = np.random.default_rng({"none": 0, "ngram": 1, "speller": 2, "neural": 3}[kind])
    units = ("<unk>", "<s>", "</s>", "a", "b", "c")
    for _ in range(15):
        if kind == "speller":
            units_k, logp, att, lm = _speller_lattice(rng)
        else:
            units_k = units
            steps = int(rng.integers(1, 6))
            logp, att = random_lattice(rng, units, steps, int(rng.integers(1, 5)), banned=(0, 1))
            lm = {"none": None, "ngram": small_ngram_scorer, "neural": small_neural_scorer}[kind]
            lm = lm(units, rng) if lm else None
        for lam, gam in GRID:
            if lm is None and lam != 0.0:
                continue
            expected, got = compare_with_enumeration(units_k, logp, att, lm, lam, gam)
            assert got[1] == expected[1]
            assert got[0] == pytest.approx(expected[0], abs=1e-9)


# ---------------------------------------------------------------- invariants

def _random_case(seed, steps=5):
    rng = np.random.default_rng(seed)
    units = ("<unk>", "<s>", "</s>", "a", "b", "c")
    logp, att = random_lattice(rng, units, steps, 5, banned=(0, 1))
    return TableScorer(units, logp, att), small_neural_scorer(units, rng)


def test_score_decomposition():
    for seed in range(10):
        scorer, lm = _random_case(seed)
        for h in beam_search(scorer, lm, DecodeConfig(beam_width=3, lm_weight=0.7,
                                                       coverage_weight=0.4, nbest=3)):
            ac = sum(scorer.log_posteriors[u, t] for u, t in enumerate(h.tokens))
            cov = coverage(scorer.attention[: len(h.tokens)].sum(axis=0))
            lmp = lm.sequence_logprob(h.tokens)
            assert h.acoustic_logprob == pytest.approx(ac, abs=1e-9)
            assert h.lm_logprob == pytest.approx(lmp, abs=1e-9)
            assert h.coverage == pytest.approx(cov, abs=1e-9)
            assert h.fused_score == pytest.approx(ac + 0.7 * lmp + 0.4 * cov, abs=1e-9)
            assert h.tokens[-1] == 2


def test_zero_lm_weight_is_bit_identical_to_no_lm():
    for seed in range(10):
        scorer, lm = _random_case(seed)
        for gam in (0.0, 0.5):
            config = DecodeConfig(beam_width=3, coverage_weight=gam, nbest=3)
            with_lm = beam_search(scorer, lm, config)
            without = beam_search(scorer, None, config)
            assert [h.tokens for h in with_lm] == [h.tokens for h in without]
            assert [h.fused_score for h in with_lm] == [h.fused_score for h in without]


@pytest.mark.parametrize("lam", [0.0, 0.5])
def test_wider_beam_never_scores_lower(lam):
    for seed in range(30):
        scorer, lm = _random_case(seed, steps=6)
        prev = -math.inf
        for k in range(1, 9):
            top = beam_search(scorer, lm, DecodeConfig(beam_width=k, lm_weight=lam,
                                                       coverage_weight=0.5))[0]
            assert top.fused_score >= prev - 1e-12
            prev = top.fused_score


def test_ties_break_by_token_order():
    units = ("<unk>", "<s>", "</s>", "_a", "_b")
    with np.errstate(divide="ignore"):
        logp = np.log(np.array([[0, 0, 0.0, 0.5, 0.5], [0, 0, 1.0, 0.0, 0.0]]))
    scorer = TableScorer(units, logp, np.full((2, 2), 0.5))
    for k in (1, 2):
        hyps = beam_search(scorer, None, DecodeConfig(beam_width=k, nbest=2))
        assert hyps[0].tokens == (3, 2)
    assert [h.tokens for h in beam_search(scorer, None, DecodeConfig(nbest=2))] == [(3, 2), (4, 2)]


def test_determinism():
    scorer, lm = _random_case(4)
    config = DecodeConfig(beam_width=3, lm_weight=0.5, coverage_weight=0.5, nbest=3)
    a = beam_search(scorer, lm, config)
    b = beam_search(scorer, lm, config)
    assert [(h.tokens, h.fused_score) for h in a] == [(h.tokens, h.fused_score) for h in b]


def test_no_completion_returns_flagged_partials():
    units = ("<unk>", "<s>", "</s>", "_a")
    with np.errstate(divide="ignore"):
        logp = np.log(np.array([[0, 0, 0.0, 1.0]] * 3))
    hyps = beam_search(TableScorer(units, logp, np.full((3, 1), 1.0)), None, DecodeConfig())
    assert len(hyps) == 1 and not hyps[0].complete
    assert hyps[0].tokens == (3, 3, 3)


def test_max_steps_limits_length():
    scorer, _ = _random_case(1, steps=5)
    for h in beam_search(scorer, None, DecodeConfig(beam_width=4, nbest=4, max_steps=2)):
        assert len(h.tokens) <= 2


def test_unit_inventory_mismatch_is_rejected():
    scorer, _ = _random_case(0)
    lm = small_neural_scorer(("<unk>", "<s>", "</s>", "x", "y", "z"), np.random.default_rng(0))
    with pytest.raises(ValueError):
        beam_search(scorer, lm, DecodeConfig())


# ---------------------------------------------------------------- rescoring

def test_rescore_with_zero_weights_keeps_order_and_input():
    scorer, lm = _random_case(2)
    nbest = beam_search(scorer, None, DecodeConfig(beam_width=4, nbest=4))
    snapshot = [(h.tokens, h.fused_score, h.lm_logprob) for h in nbest]
    out = rescore_nbest(nbest, lm, 0.0, 0.0)
    assert [h.tokens for h in out] == [h.tokens for h in nbest]
    assert [(h.tokens, h.fused_score, h.lm_logprob) for h in nbest] == snapshot
    assert all(o is not h for o, h in zip(out, nbest))


def test_rescore_matches_exhaustive_fusion():
    for seed in range(10):
        scorer, lm = _random_case(seed, steps=4)
        everything = beam_search(scorer, None, DecodeConfig(beam_width=1000, nbest=1000))
        fused = beam_search(scorer, lm, DecodeConfig(beam_width=1000, lm_weight=0.8,
                                                      coverage_weight=0.3))[0]
        best = rescore_nbest(everything, lm, 0.8, 0.3)[0]
        assert best.tokens == fused.tokens
        assert best.fused_score == pytest.approx(fused.fused_score, abs=1e-9)


def test_rescore_rejects_partial_hypotheses():
    units = ("<unk>", "<s>", "</s>", "_a")
    with np.errstate(divide="ignore"):
        logp = np.log(np.array([[0, 0, 0.0, 1.0]]))
    partial = beam_search(TableScorer(units, logp, np.ones((1, 1))), None, DecodeConfig())
    with pytest.raises(ValueError):
        rescore_nbest(partial, None, 0.0, 0.0)


# ---------------------------------------------------------------- acoustic scorers

def test_noisy_reference_scorer_shape_and_determinism():
    ref = [3, 4, 5, 3]
    a = NoisyReferenceScorer(ref, UNITS, noise=1.0, seed=7, extra_steps=2)
    b = NoisyReferenceScorer(ref, UNITS, noise=1.0, seed=7, extra_steps=2)
    np.testing.assert_array_equal(a.log_posteriors, b.log_posteriors)
    assert a.log_posteriors.shape == (len(ref) + 3, len(UNITS))
    assert a.num_frames == 3 * (len(ref) + 1)
    assert np.all(a.log_posteriors[:, :2] == -np.inf)
    np.testing.assert_allclose(np.exp(a.log_posteriors).sum(axis=1), 1.0, atol=1e-12)
    peaks = a.attention.argmax(axis=1)
    assert np.all(np.diff(peaks) >= 0)


def test_noise_free_lattice_decodes_reference():
    ref = [3, 4, 5, 3, 4]
    scorer = NoisyReferenceScorer(ref, UNITS, noise=0.0, signal=8.0, seed=0)
    top = beam_search(scorer, None, DecodeConfig(beam_width=4, coverage_weight=0.5))[0]
    assert top.tokens == tuple(ref) + (2,)


def test_table_scorer_validation():
    units, logp, att = two_step_lattice()
    with pytest.raises(ValueError):
        TableScorer(units, logp + 0.1, att)
    with pytest.raises(ValueError):
        TableScorer(units, logp, att * 2)
    with pytest.raises(ValueError):
        TableScorer(units[:-1], logp, att)
    with pytest.raises(ValueError):
        TableScorer(("a", "b", "c", "d", "e"), logp, att)


def test_lattice_text_round_trip():
    scorer = NoisyReferenceScorer([3, 4], UNITS, seed=3, utt_id="utt-7")
    text = write_lattice(scorer)
    again = read_lattice(text)
    assert again.utt_id == "utt-7" and again.units == UNITS
    np.testing.assert_array_equal(again.log_posteriors, scorer.log_posteriors)
    np.testing.assert_array_equal(again.attention, scorer.attention)
    assert write_lattice(again) == text


@pytest.mark.parametrize("mutate", [
    lambda t: t.replace("lattice 1", "lattice 2"),
    lambda t: re.sub(r"steps \d+", "steps 99", t),
    lambda t: t.replace("units 6", "units 7"),
    lambda t: t.replace("eos </s>", "eos _a"),
    lambda t: t.replace("\nend\n", "\n"),
    lambda t: t + "junk\n",
    lambda t: t.replace("-inf", "oops", 1),
])
def test_malformed_lattices_are_rejected(mutate):
    text = write_lattice(NoisyReferenceScorer([3, 4], UNITS, seed=3))
    with pytest.raises(FormatError):
        read_lattice(mutate(text))
