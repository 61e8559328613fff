"""Command-line interface.

Every subcommand reads and writes plain UTF-8 text.  Corpora hold one
sentence per line with whitespace-separated tokens (words, or unit
strings produced by ``tokenize``).  Hypothesis and reference files hold
``utt-id<TAB>text`` lines sorted by utterance id.

Exit codes: 0 on success, 2 for bad arguments, 3 for unreadable or
malformed input files, 4 for numeric failures.  Each failure prints a
single diagnostic line on stderr.
"""

import argparse
import json
import logging
import math
import os
import sys
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import __version__
from .acoustic import load_lattice
from .decoder import DecodeConfig, Hypothesis, beam_search, rescore_nbest
from .errors import FormatError, NumericError
from .evaluation import DecodeFailure, WerBreakdown, hypothesis_text, tune_grid, wer
from .lmscorers import LMScorer, NeuralScorer, NgramScorer, SpellerScorer
from .ngram import (
    count_ngrams,
    estimate_katz,
    load_arpa,
    prune,
    save_arpa,
    token_vocabulary,
)
from .rnnlm import CHECKPOINT_MAGIC, init_params, load_params, perplexity, save_params, train
from .speller import build_trie
from .synth import make_task, write_task
from .vocab import (
    BOS,
    EOS,
    SPECIALS,
    UNK,
    UnitVocabulary,
    grapheme_vocabulary,
    graphemize,
    induce_wordpieces,
    load_wordpiece_model,
    save_wordpiece_model,
    tokenize,
    word_counts,
)

__all__ = ["main", "build_parser"]

EXIT_ARGS = 2
EXIT_INPUT = 3
EXIT_NUMERIC = 4

LM_KINDS = ("ngram", "speller", "neural")


class CliError(Exception):
    def __init__(self, message, code=EXIT_INPUT):
        super().__init__(message)
        self.code = code


class _Parser(argparse.ArgumentParser):
    """ArgumentParser whose errors fit on one stderr line."""

    def error(self, message):
        self.exit(EXIT_ARGS, "{}: error: {}\n".format(self.prog, message))


# ---------------------------------------------------------------- file helpers

def _read_lines(path) -> List[str]:
    with open(path, encoding="utf-8") as f:
        return [line.rstrip("\n") for line in f]


def _read_corpus(path) -> List[List[str]]:
    """Whitespace-tokenized sentences; blank lines are skipped."""
    return [line.split() for line in _read_lines(path) if line.strip()]


def _write_lines(path, lines) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.writelines(line + "\n" for line in lines)


def _read_keyed(path) -> Dict[str, str]:
    """Parse ``utt<TAB>text`` lines into a dict."""
    out = {}
    for lineno, line in enumerate(_read_lines(path), 1):
        if not line.strip():
            continue
        utt, sep, text = line.partition("\t")
        if not sep:
            raise FormatError("expected 'utt<TAB>text' in {}".format(path), lineno)
        if utt in out:
            raise FormatError("duplicate utterance id {!r} in {}".format(utt, path), lineno)
        out[utt] = text.strip()
    return out


def _load_lattices(directory):
    if not os.path.isdir(directory):
        raise CliError("lattice directory not found: {}".format(directory))
    names = sorted(n for n in os.listdir(directory) if n.endswith(".lat"))
    if not names:
        raise CliError("no .lat files in {}".format(directory))
    lattices = []
    for name in names:
        path = os.path.join(directory, name)
        try:
            lattices.append(load_lattice(path))
        except FormatError as exc:
            raise CliError("{}: {}".format(path, exc)) from None
    lattices.sort(key=lambda s: s.utt_id)
    ids = [s.utt_id for s in lattices]
    if len(set(ids)) != len(ids):
        raise CliError("duplicate utterance ids in {}".format(directory))
    return lattices


def _is_checkpoint(path) -> bool:
    with open(path, "rb") as f:
        return f.read(len(CHECKPOINT_MAGIC)) == CHECKPOINT_MAGIC


# ---------------------------------------------------------------- LM helpers

def _lm_spec(text):
    kind, sep, path = text.partition(":")
    if not sep or kind not in LM_KINDS or not path:
        raise argparse.ArgumentTypeError(
            "expected KIND:PATH with KIND in {}, got {!r}".format("|".join(LM_KINDS), text)
        )
    return kind, path


def _float_list(text):
    try:
        values = [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError("expected comma-separated numbers, got {!r}".format(text))
    if not values or not all(math.isfinite(v) for v in values):
        raise argparse.ArgumentTypeError("expected finite numbers, got {!r}".format(text))
    return values


def _unit_vocabulary(units: Sequence[str]) -> UnitVocabulary:
    # an inventory of single characters plus the marker is a grapheme set
    kind = "grapheme" if all(len(u) == 1 for u in units[len(SPECIALS):]) else "wordpiece"
    return UnitVocabulary(tuple(units), kind)


class _LmFactory:
    """Builds one scorer per unit inventory and reuses it across utterances."""

    def __init__(self, spec, speller_vocab=None):
        self.kind, self.path = spec
        self.speller_vocab = speller_vocab
        self._model = None
        self._scorers = {}

    def _load(self):
        if self._model is None:
            if self.kind == "neural":
                self._model = load_params(self.path)
            else:
                self._model = load_arpa(self.path)
        return self._model

    def __call__(self, units) -> LMScorer:
        units = tuple(units)
        if units not in self._scorers:
            model = self._load()
            if self.kind == "ngram":
                scorer = NgramScorer(model, units)
            elif self.kind == "neural":
                scorer = NeuralScorer(model, units)
            else:
                vocab = _unit_vocabulary(units)
                if self.speller_vocab is not None:
                    words = [w for w in _read_lines(self.speller_vocab) if w.strip()]
                    words = [w.strip() for w in words]
                else:
                    words = [t for t in model.tokens if t not in (BOS, EOS, UNK)]
                if vocab.kind == "grapheme":
                    def spell(word):
                        return graphemize(word, vocab)
                else:
                    def spell(word):
                        return tokenize(word, vocab)
                scorer = SpellerScorer(model, build_trie(words, spell, vocab))
            self._scorers[units] = scorer
        return self._scorers[units]


def _decode_config(args) -> DecodeConfig:
    try:
        return DecodeConfig(
            beam_width=args.beam,
            lm_weight=getattr(args, "lam", 0.0),
            coverage_weight=getattr(args, "gamma", 0.0),
            max_steps=args.max_steps,
            nbest=getattr(args, "nbest", 1),
        )
    except ValueError as exc:
        raise CliError(str(exc), EXIT_ARGS) from None


def _hyp_record(utt, rank, hyp: Hypothesis, units):
    return {
        "utt": utt,
        "rank": rank,
        "units": list(units),
        "tokens": [units[t] for t in hyp.tokens],
        "complete": hyp.complete,
        "acoustic": hyp.acoustic_logprob,
        "lm": hyp.lm_logprob,
        "coverage": hyp.coverage,
        "fused": hyp.fused_score,
        "attention_mass": [float(x) for x in hyp.frame_attention_mass],
    }


def _record_hyp(rec):
    units = rec["units"]
    index = {u: i for i, u in enumerate(units)}
    try:
        tokens = tuple(index[t] for t in rec["tokens"])
    except KeyError as exc:
        raise FormatError("token {} not in the record's unit list".format(exc)) from None
    hyp = Hypothesis(
        tokens=tokens,
        acoustic_logprob=float(rec["acoustic"]),
        lm_logprob=float(rec["lm"]),
        coverage=float(rec["coverage"]),
        fused_score=float(rec["fused"]),
        frame_attention_mass=np.asarray(rec["attention_mass"], dtype=np.float64),
        complete=bool(rec["complete"]),
    )
    return hyp, tuple(units)


# ---------------------------------------------------------------- subcommands

def cmd_wp_train(args):
    if args.size < 1:
        raise CliError("--size must be positive", EXIT_ARGS)
    counts = word_counts(_read_lines(args.corpus))
    try:
        model = induce_wordpieces(counts, args.size)
    except ValueError as exc:
        raise CliError(str(exc)) from None
    save_wordpiece_model(model, args.out)
    print("wordpieces {} merges {}".format(model.size, len(model.merges)))


def cmd_tokenize(args):
    if args.graphemes:
        vocab = grapheme_vocabulary()
        units = vocab.units

        def encode(line):
            return graphemize(line, vocab)
    else:
        model = load_wordpiece_model(args.model)
        units = model.vocabulary.units

        def encode(line):
            return tokenize(line, model)
    out = [" ".join(units[i] for i in encode(line)) for line in _read_lines(args.inp)]
    _write_lines(args.out, out)


def cmd_ngram_train(args):
    if args.order < 1:
        raise CliError("--order must be >= 1", EXIT_ARGS)
    if args.k < 0 or args.min_count < 1:
        raise CliError("--k must be >= 0 and --min-count >= 1", EXIT_ARGS)
    sentences = _read_corpus(args.corpus)
    if not sentences:
        raise CliError("empty corpus: {}".format(args.corpus))
    tokens = token_vocabulary(sentences)
    index = {t: i for i, t in enumerate(tokens)}
    ids = [[index[t] for t in s] for s in sentences]
    model = estimate_katz(count_ngrams(ids, args.order, tokens), k=args.k,
                          min_count=args.min_count)
    save_arpa(model, args.out)
    for line in model.report:
        print(line)


def _prune_limit(text):
    try:
        if ":" not in text:
            return int(text)
        limits = {}
        for part in text.split(","):
            order, _, n = part.partition(":")
            limits[int(order)] = int(n)
        return limits
    except ValueError:
        raise argparse.ArgumentTypeError("expected N or ORDER:N[,ORDER:N...], got {!r}".format(text))


def cmd_ngram_prune(args):
    model = load_arpa(args.inp)
    try:
        pruned = prune(model, args.max)
    except ValueError as exc:
        raise CliError(str(exc), EXIT_ARGS) from None
    save_arpa(pruned, args.out)
    for n in range(1, pruned.order + 1):
        print("ngram {}={}".format(n, pruned.num_entries(n)))


def cmd_rnnlm_train(args):
    for name in ("epochs", "hidden", "embed", "layers", "bptt"):
        if getattr(args, name) < 1:
            raise CliError("--{} must be positive".format(name), EXIT_ARGS)
    if not args.lr > 0:
        raise CliError("--lr must be positive", EXIT_ARGS)
    sentences = _read_corpus(args.corpus)
    if not sentences:
        raise CliError("empty corpus: {}".format(args.corpus))
    if args.units is not None:
        units = load_wordpiece_model(args.units).vocabulary.units
    else:
        seen = dict.fromkeys(SPECIALS)
        for sent in sentences:
            seen.update(dict.fromkeys(sent))
        units = tuple(seen)
    index = {u: i for i, u in enumerate(units)}
    unk = index[UNK]
    corpus = [[index.get(t, unk) for t in s] for s in sentences]
    params = init_params(len(units), args.embed, args.hidden, args.layers, seed=args.seed,
                         units=units)

    def report(epoch, nll):
        print("epoch {} nll {:.4f} ppl {:.3f}".format(epoch + 1, nll, math.exp(nll)))

    params = train(params, corpus, epochs=args.epochs, learning_rate=args.lr,
                   bptt_len=args.bptt, seed=args.seed, on_epoch=report)
    save_params(params, args.out)


def cmd_lm_ppl(args):
    sentences = _read_corpus(args.corpus)
    if not sentences:
        raise CliError("empty corpus: {}".format(args.corpus))
    if _is_checkpoint(args.lm):
        params = load_params(args.lm)
        index = {u: i for i, u in enumerate(params.units)}
    else:
        model = load_arpa(args.lm)
        index = model.index
    scored = [[index[t] for t in s] for s in sentences if all(t in index for t in s)]
    skipped = len(sentences) - len(scored)
    if not scored:
        raise CliError("every sentence contains tokens unknown to the LM")
    if _is_checkpoint(args.lm):
        ppl = perplexity(params, scored)
    else:
        logprob = sum(model.sentence_logprob(s) for s in scored)
        ppl = math.exp(-logprob / sum(len(s) + 1 for s in scored))
    print("sentences {} tokens {} skipped_oov_sentences {} ppl {:.4f}".format(
        len(scored), sum(len(s) for s in scored), skipped, ppl))


def _make_lm(args) -> Optional[_LmFactory]:
    if args.lm is None:
        if args.speller_vocab is not None:
            raise CliError("--speller-vocab needs --lm speller:PATH", EXIT_ARGS)
        return None
    if args.speller_vocab is not None and args.lm[0] != "speller":
        raise CliError("--speller-vocab only applies to speller LMs", EXIT_ARGS)
    return _LmFactory(args.lm, args.speller_vocab)


def cmd_decode(args):
    config = _decode_config(args)
    factory = _make_lm(args)
    if factory is None and config.lm_weight != 0:
        raise CliError("--lambda is nonzero but no --lm was given", EXIT_ARGS)
    lines = []
    records = []
    for scorer in _load_lattices(args.lattices):
        lm = factory(scorer.units) if factory is not None else None
        hyps = beam_search(scorer, lm, config)
        lines.append("{}\t{}".format(scorer.utt_id, hypothesis_text(hyps[0], scorer.units)))
        records += [json.dumps(_hyp_record(scorer.utt_id, r, h, scorer.units), sort_keys=True)
                    for r, h in enumerate(hyps)]
    _write_lines(args.out, lines)
    if args.nbest_out is not None:
        _write_lines(args.nbest_out, records)


def cmd_rescore(args):
    factory = _make_lm(args)
    groups: Dict[str, list] = {}
    for lineno, line in enumerate(_read_lines(args.nbest), 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            hyp, units = _record_hyp(rec)
        except (ValueError, KeyError, TypeError) as exc:
            raise FormatError("bad n-best record: {}".format(exc), lineno) from None
        groups.setdefault(rec["utt"], []).append((hyp, units))
    if not groups:
        raise CliError("empty n-best file: {}".format(args.nbest))
    lines = []
    records = []
    for utt in sorted(groups):
        units = groups[utt][0][1]
        if any(u != units for _, u in groups[utt]):
            raise CliError("utterance {} mixes unit inventories".format(utt))
        lm = factory(units) if factory is not None else None
        try:
            ranked = rescore_nbest([h for h, _ in groups[utt]], lm, args.lam, args.gamma)
        except ValueError as exc:
            raise CliError("utterance {}: {}".format(utt, exc)) from None
        lines.append("{}\t{}".format(utt, hypothesis_text(ranked[0], units)))
        records += [json.dumps(_hyp_record(utt, r, h, units), sort_keys=True)
                    for r, h in enumerate(ranked)]
    _write_lines(args.out, lines)
    if args.nbest_out is not None:
        _write_lines(args.nbest_out, records)


def cmd_tune(args):
    config = _decode_config(args)
    factory = _make_lm(args)
    refs = _read_keyed(args.refs)
    lattices = _load_lattices(args.dev)
    missing = [s.utt_id for s in lattices if s.utt_id not in refs]
    if missing:
        raise CliError("no reference for utterance {}".format(missing[0]))
    lm = factory(lattices[0].units) if factory is not None else None
    if lm is None and any(x != 0 for x in args.lambda_grid):
        raise CliError("--lambda-grid has nonzero values but no --lm was given", EXIT_ARGS)
    if any(s.units != lattices[0].units for s in lattices):
        raise CliError("dev lattices use different unit inventories")
    result = tune_grid([(s, refs[s.utt_id]) for s in lattices], config,
                       args.lambda_grid, args.gamma_grid, lm)
    with open(args.out, "w", encoding="utf-8", newline="\n") as f:
        f.write(result.to_json() + "\n")
    for line in result.lines():
        print(line)


def cmd_wer(args):
    refs = _read_keyed(args.ref)
    hyps = _read_keyed(args.hyp)
    extra = sorted(set(hyps) - set(refs))
    if extra:
        raise CliError("hypothesis for unknown utterance {}".format(extra[0]))
    total = WerBreakdown(0, 0, 0, 0)
    for utt in sorted(refs):
        try:
            b = wer(refs[utt].split(), hyps.get(utt, "").split())
        except ValueError as exc:
            raise CliError("utterance {}: {}".format(utt, exc)) from None
        if args.per_utt:
            print("{}\tS={} I={} D={} N={}".format(
                utt, b.substitutions, b.insertions, b.deletions, b.reference_words))
        total = total + b
    if total.reference_words == 0:
        raise CliError("no reference words")
    print("WER {:.3f} (S={} I={} D={} N={})".format(
        total.wer, total.substitutions, total.insertions, total.deletions,
        total.reference_words))


def cmd_synth(args):
    if args.vocab_size < 2 or args.sentences < 1 or args.dev < 1 or args.test < 1:
        raise CliError("sizes must be positive (vocab size >= 2)", EXIT_ARGS)
    if not args.noise >= 0:
        raise CliError("--noise must be non-negative", EXIT_ARGS)
    task = make_task(vocab_size=args.vocab_size, sentences=args.sentences, noise=args.noise,
                     seed=args.seed, dev_utterances=args.dev, test_utterances=args.test,
                     wp_size=args.wp_size, signal=args.signal)
    write_task(task, args.out)
    print("wrote {} training sentences, {} dev and {} test lattices to {}".format(
        len(task.train), len(task.dev), len(task.test), args.out))


# ---------------------------------------------------------------- parser

def _add_decode_args(p, single_point=True):
    p.add_argument("--lm", type=_lm_spec, default=None, metavar="KIND:PATH",
                   help="external LM: ngram:ARPA, speller:WORD_ARPA or neural:CKPT")
    p.add_argument("--speller-vocab", default=None, metavar="FILE",
                   help="word list for the speller (default: the word LM's vocabulary)")
    if single_point:
        p.add_argument("--lambda", dest="lam", type=float, default=0.0, help="LM weight")
        p.add_argument("--gamma", type=float, default=0.0, help="coverage weight")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="shallowfusion", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("--config", default=None, metavar="JSON",
                        help="JSON object of flag defaults for the subcommand")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    wp = sub.add_parser("wp", help="wordpiece models")
    wp_sub = wp.add_subparsers(dest="action", required=True, parser_class=_Parser)
    p = wp_sub.add_parser("train", help="induce a wordpiece inventory")
    p.add_argument("--corpus", required=True)
    p.add_argument("--size", type=int, required=True, help="non-special unit count")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_wp_train)

    p = sub.add_parser("tokenize", help="convert text to unit strings")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--model", help="wordpiece model file")
    g.add_argument("--graphemes", action="store_true")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_tokenize)

    ng = sub.add_parser("ngram", help="Katz backoff n-gram models")
    ng_sub = ng.add_subparsers(dest="action", required=True, parser_class=_Parser)
    p = ng_sub.add_parser("train", help="estimate an ARPA model")
    p.add_argument("--corpus", required=True)
    p.add_argument("--order", type=int, default=3)
    p.add_argument("--k", type=int, default=5, help="Good-Turing discounting threshold")
    p.add_argument("--min-count", type=int, default=1, help="count cutoff for orders >= 2")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ngram_train)
    p = ng_sub.add_parser("prune", help="drop low-probability n-grams")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--max", type=_prune_limit, required=True,
                   help="entries kept per order >= 2: N or ORDER:N,...")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ngram_prune)

    rn = sub.add_parser("rnnlm", help="recurrent LM")
    rn_sub = rn.add_subparsers(dest="action", required=True, parser_class=_Parser)
    p = rn_sub.add_parser("train", help="train an LSTM LM")
    p.add_argument("--corpus", required=True)
    p.add_argument("--units", default=None, help="wordpiece model fixing the inventory")
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--hidden", type=int, default=64)
    p.add_argument("--embed", type=int, default=32)
    p.add_argument("--layers", type=int, default=1)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--bptt", type=int, default=35)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_rnnlm_train)

    lm = sub.add_parser("lm", help="LM evaluation")
    lm_sub = lm.add_subparsers(dest="action", required=True, parser_class=_Parser)
    p = lm_sub.add_parser("ppl", help="perplexity of a corpus")
    p.add_argument("--lm", required=True, help="ARPA file or LSTM checkpoint")
    p.add_argument("--corpus", required=True)
    p.set_defaults(func=cmd_lm_ppl)

    p = sub.add_parser("decode", help="beam search with shallow fusion")
    p.add_argument("--lattices", required=True, metavar="DIR")
    _add_decode_args(p)
    p.add_argument("--beam", type=int, default=8)
    p.add_argument("--nbest", type=int, default=1)
    p.add_argument("--max-steps", type=int, default=200)
    p.add_argument("--out", required=True)
    p.add_argument("--nbest-out", default=None, help="JSONL file of n-best hypotheses")
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("rescore", help="re-rank n-best lists")
    p.add_argument("--nbest", required=True, help="JSONL written by decode --nbest-out")
    _add_decode_args(p)
    p.add_argument("--out", required=True)
    p.add_argument("--nbest-out", default=None)
    p.set_defaults(func=cmd_rescore)

    p = sub.add_parser("tune", help="grid search LM and coverage weights on a dev set")
    p.add_argument("--dev", required=True, metavar="DIR")
    p.add_argument("--refs", required=True)
    _add_decode_args(p, single_point=False)
    p.add_argument("--lambda-grid", type=_float_list, default=[0.0])
    p.add_argument("--gamma-grid", type=_float_list, default=[0.0])
    p.add_argument("--beam", type=int, default=8)
    p.add_argument("--max-steps", type=int, default=200)
    p.add_argument("--out", required=True, help="JSON report")
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("wer", help="word error rate")
    p.add_argument("--ref", required=True)
    p.add_argument("--hyp", required=True)
    p.add_argument("--per-utt", action="store_true")
    p.set_defaults(func=cmd_wer)

    p = sub.add_parser("synth", help="generate the synthetic task")
    p.add_argument("--vocab-size", type=int, default=50)
    p.add_argument("--sentences", type=int, default=5000)
    p.add_argument("--noise", type=float, default=1.0)
    p.add_argument("--signal", type=float, default=5.0)
    p.add_argument("--dev", type=int, default=100)
    p.add_argument("--test", type=int, default=200)
    p.add_argument("--wp-size", type=int, default=80)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)
    return parser


def _leaf_parser(parser, argv):
    """The subparser that will handle ``argv``."""
    node = parser
    for token in argv:
        actions = [a for a in node._actions if isinstance(a, argparse._SubParsersAction)]
        if not actions:
            break
        if token in actions[0].choices:
            node = actions[0].choices[token]
    return node


def _parse(argv):
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config", default=None)
    config_path = pre.parse_known_args(argv)[0].config
    parser = build_parser()
    if config_path is None:
        return parser.parse_args(argv)
    # flags > config file > built-in defaults
    try:
        with open(config_path, encoding="utf-8") as f:
            overrides = json.load(f)
    except OSError as exc:
        raise CliError("cannot read config: {}".format(exc)) from None
    except ValueError as exc:
        raise CliError("malformed config {}: {}".format(config_path, exc)) from None
    if not isinstance(overrides, dict):
        raise CliError("config must be a JSON object")
    leaf = _leaf_parser(parser, argv)
    known = {a.dest: a for a in leaf._actions}
    defaults = {}
    for key, value in overrides.items():
        dest = key.replace("-", "_")
        dest = {"lambda": "lam", "in": "inp"}.get(dest, dest)
        if dest not in known or dest in ("help", "func"):
            raise CliError("unknown config key {!r}".format(key), EXIT_ARGS)
        action = known[dest]
        if action.type is not None and isinstance(value, str):
            try:
                value = action.type(value)
            except (argparse.ArgumentTypeError, ValueError) as exc:
                raise CliError("config key {!r}: {}".format(key, exc), EXIT_ARGS) from None
        defaults[dest] = value
        action.required = False
    leaf.set_defaults(**defaults)
    return parser.parse_args(argv)


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = _parse(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        args.func(args)
    except CliError as exc:
        print("shallowfusion: error: {}".format(exc), file=sys.stderr)
        return exc.code
    except DecodeFailure as exc:
        code = EXIT_NUMERIC if isinstance(exc.__cause__, (NumericError, FloatingPointError)) \
            else EXIT_INPUT
        print("shallowfusion: error: {}".format(exc), file=sys.stderr)
        return code
    except (NumericError, FloatingPointError, OverflowError) as exc:
        print("shallowfusion: numeric failure: {}".format(exc), file=sys.stderr)
        return EXIT_NUMERIC
    except FormatError as exc:
        print("shallowfusion: bad input: {}".format(exc), file=sys.stderr)
        return EXIT_INPUT
    except (OSError, ValueError, KeyError, IndexError) as exc:
        msg = exc.strerror + ": " + str(exc.filename) if isinstance(exc, OSError) and \
            exc.filename else str(exc)
        print("shallowfusion: bad input: {}".format(msg), file=sys.stderr)
        return EXIT_INPUT
    return 0


if __name__ == "__main__":
    sys.exit(main())
