"""Acoustic scorers: per-step unit posteriors plus attention rows.

The decoder only sees this interface; encoder and attention internals are
out of its view.  :class:`TableScorer` replays a fixed lattice and
:class:`NoisyReferenceScorer` synthesizes one from a reference transcript.

Lattice file grammar (UTF-8, one item per line)::

    lattice 1
    utt <id>
    steps <U>
    frames <T>
    units <V> <unit_1> ... <unit_V>
    eos <unit>
    logpost
    <V floats>        # U lines, natural-log posteriors for step 0..U-1
    attention
    <T floats>        # U lines, attention over input frames
    end

Floats use Python's shortest round-trip repr; ``-inf`` is allowed in
``logpost``.
"""

import math
from typing import Optional, Sequence, Tuple

import numpy as np

from .errors import FormatError
from .vocab import BOS, EOS, UNK

__all__ = [
    "AcousticScorer",
    "TableScorer",
    "NoisyReferenceScorer",
    "write_lattice",
    "read_lattice",
    "save_lattice",
    "load_lattice",
]

NORM_TOL = 1e-6


class AcousticScorer:
    """Interface.  States are opaque; ``scores`` gives the log-posterior
    vector over ``units`` and the attention row for the next output."""

    units: Tuple[str, ...]
    eos: int
    num_frames: int
    max_steps: Optional[int] = None

    def initial_state(self):
        raise NotImplementedError

    def scores(self, state) -> Tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def advance(self, state, unit: int):
        raise NotImplementedError

    def step(self, state, unit: int):
        """``(log P(unit | prefix, x), attention row, next state)``."""
        logp, attn = self.scores(state)
        return float(logp[unit]), attn, self.advance(state, unit)


def _logsumexp(row):
    m = np.max(row)
    if not np.isfinite(m):
        return m
    return m + math.log(np.exp(row - m).sum())


class TableScorer(AcousticScorer):
    """Context-independent lattice: step ``u`` always yields row ``u``."""

    def __init__(self, units: Sequence[str], log_posteriors, attention, utt_id: str = "utt"):
        self.units = tuple(units)
        if EOS not in self.units:
            raise ValueError("units must include {}".format(EOS))
        self.eos = self.units.index(EOS)
        self.log_posteriors = np.asarray(log_posteriors, dtype=np.float64)
        self.attention = np.asarray(attention, dtype=np.float64)
        self.utt_id = utt_id
        U, V = self.log_posteriors.shape
        if V != len(self.units):
            raise ValueError("posterior rows have {} columns for {} units".format(V, len(self.units)))
        if self.attention.ndim != 2 or self.attention.shape[0] != U:
            raise ValueError("attention must have one row per step")
        for u in range(U):
            if abs(_logsumexp(self.log_posteriors[u])) > NORM_TOL:
                raise ValueError("posterior row {} is not normalized".format(u))
            row = self.attention[u]
            if np.any(row < 0) or abs(row.sum() - 1.0) > NORM_TOL:
                raise ValueError("attention row {} is not a distribution".format(u))
        self.num_frames = self.attention.shape[1]
        self.max_steps = U

    def initial_state(self) -> int:
        return 0

    def scores(self, state: int):
        if state >= self.max_steps:
            raise IndexError("lattice has only {} steps".format(self.max_steps))
        return self.log_posteriors[state], self.attention[state]

    def advance(self, state: int, unit: int) -> int:
        return state + 1


def _log_softmax(x):
    m = x[np.isfinite(x)].max()
    z = x - m
    return z - math.log(np.exp(z).sum())


class NoisyReferenceScorer(TableScorer):
    """Synthetic lattice around a reference unit sequence.

    At step ``u`` the target is ``reference[u]`` (``</s>`` once the
    reference is exhausted).  Logits are ``noise`` times standard normal
    draws, plus ``signal`` on the target and a random fraction of
    ``signal`` on the target's confusion partner.  Partners are a fixed
    random pairing of units drawn from ``confusion_seed``.  ``<unk>`` and
    ``<s>`` get probability zero.

    Attention row ``u`` is a Gaussian window of standard deviation
    ``width`` frames centred on the ``u``-th block of ``frames_per_step``
    frames, so windows advance monotonically with the output index.
    """

    def __init__(self, reference: Sequence[int], units: Sequence[str], noise: float = 1.0,
                 seed: int = 0, confusion_seed: int = 0, width: float = 1.0,
                 frames_per_step: int = 3, extra_steps: int = 3, signal: float = 3.0,
                 utt_id: str = "utt"):
        units = tuple(units)
        V = len(units)
        eos = units.index(EOS)
        self.reference = tuple(reference)
        self.noise = noise
        self.seed = seed
        self.confusion_seed = confusion_seed
        self.width = width
        L = len(self.reference)
        U = L + 1 + extra_steps
        T = frames_per_step * (L + 1)

        banned = [units.index(t) for t in (UNK, BOS) if t in units]
        partners = _confusion_partners(V, banned, confusion_seed)
        rng = np.random.default_rng(seed)
        logpost = np.empty((U, V))
        for u in range(U):
            target = self.reference[u] if u < L else eos
            logits = noise * rng.standard_normal(V)
            logits[target] += signal
            share = rng.uniform(0.0, 1.0)
            if partners[target] >= 0:
                logits[partners[target]] += signal * share
            logits[banned] = -math.inf
            logpost[u] = _log_softmax(logits)

        frames = np.arange(T) + 0.5
        attention = np.empty((U, T))
        for u in range(U):
            centre = (min(u, L) + 0.5) * frames_per_step
            row = np.exp(-0.5 * ((frames - centre) / width) ** 2)
            attention[u] = row / row.sum()
        super().__init__(units, logpost, attention, utt_id)

    def to_table(self) -> TableScorer:
        return TableScorer(self.units, self.log_posteriors, self.attention, self.utt_id)


def _confusion_partners(V, banned, seed):
    rng = np.random.default_rng(seed)
    pool = [v for v in range(V) if v not in banned]
    partners = np.full(V, -1)
    order = rng.permutation(pool)
    for a, b in zip(order[0::2], order[1::2]):
        partners[a] = b
        partners[b] = a
    return partners


def _fmt_row(row):
    return " ".join(repr(float(x)) for x in row)


def write_lattice(scorer: TableScorer) -> str:
    U, V = scorer.log_posteriors.shape
    lines = [
        "lattice 1",
        "utt {}".format(scorer.utt_id),
        "steps {}".format(U),
        "frames {}".format(scorer.num_frames),
        "units {} {}".format(V, " ".join(scorer.units)),
        "eos {}".format(scorer.units[scorer.eos]),
        "logpost",
    ]
    lines += [_fmt_row(r) for r in scorer.log_posteriors]
    lines.append("attention")
    lines += [_fmt_row(r) for r in scorer.attention]
    lines.append("end")
    return "\n".join(lines) + "\n"


def read_lattice(text: str) -> TableScorer:
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    pos = 0

    def take(key):
        nonlocal pos
        if pos >= len(lines):
            raise FormatError("expected '{}'".format(key), pos + 1)
        parts = lines[pos].split(" ")
        if parts[0] != key:
            raise FormatError("expected '{}', found {!r}".format(key, lines[pos][:20]), pos + 1)
        pos += 1
        return parts[1:]

    def integer(value):
        try:
            return int(value)
        except ValueError:
            raise FormatError("non-numeric field {!r}".format(value), pos) from None

    if take("lattice") != ["1"]:
        raise FormatError("unsupported lattice version", 1)
    utt = " ".join(take("utt"))
    U = integer(take("steps")[0])
    T = integer(take("frames")[0])
    parts = take("units")
    V = integer(parts[0])
    units = parts[1:]
    if len(units) != V:
        raise FormatError("units line lists {} units, header says {}".format(len(units), V), pos)
    eos = take("eos")
    if eos != [EOS]:
        raise FormatError("eos must be {}".format(EOS), pos)

    def rows(n_cols):
        nonlocal pos
        out = np.empty((U, n_cols))
        for u in range(U):
            if pos >= len(lines):
                raise FormatError("truncated lattice", pos + 1)
            fields = lines[pos].split(" ")
            if len(fields) != n_cols:
                raise FormatError("expected {} values, got {}".format(n_cols, len(fields)), pos + 1)
            try:
                out[u] = [float(x) for x in fields]
            except ValueError:
                raise FormatError("non-numeric value", pos + 1) from None
            pos += 1
        return out

    take("logpost")
    logpost = rows(V)
    take("attention")
    attention = rows(T)
    take("end")
    if pos != len(lines):
        raise FormatError("trailing content", pos + 1)
    try:
        return TableScorer(units, logpost, attention, utt)
    except ValueError as exc:
        raise FormatError(str(exc)) from None


def save_lattice(scorer: TableScorer, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(write_lattice(scorer))


def load_lattice(path) -> TableScorer:
    with open(path, encoding="utf-8") as f:
        return read_lattice(f.read())
