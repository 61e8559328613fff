"""A small LSTM language model over units, written directly in numpy.

Training is plain SGD with global gradient-norm clipping over truncated
backpropagation through time, one sentence at a time.  Everything is
float64 so analytic gradients can be checked against finite differences.
"""

import json
import logging
import math
from dataclasses import dataclass
from typing import Callable, Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from .errors import FormatError, NumericError

__all__ = [
    "RnnLmParams",
    "RnnState",
    "init_params",
    "initial_state",
    "forward_step",
    "loss_and_grads",
    "sequence_logprob",
    "train",
    "perplexity",
    "save_params",
    "load_params",
]

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"SFRNNLM 1\n"


@dataclass
class RnnLmParams:
    """Parameters of an LSTM LM.

    ``arrays`` holds ``embedding`` (V x E), per layer ``l`` the arrays
    ``l.w_x`` (4H x in), ``l.w_h`` (4H x H) and ``l.b`` (4H) with gates
    ordered input, forget, candidate, output, then ``w_out`` (V x H) and
    ``b_out`` (V).
    """

    vocab_size: int
    embed_dim: int
    hidden_dim: int
    num_layers: int
    seed: int
    arrays: Dict[str, np.ndarray]
    units: Optional[Tuple[str, ...]] = None
    bos_id: int = 1
    eos_id: int = 2

    def names(self) -> List[str]:
        names = ["embedding"]
        for layer in range(self.num_layers):
            names += ["{}.w_x".format(layer), "{}.w_h".format(layer), "{}.b".format(layer)]
        return names + ["w_out", "b_out"]

    def shapes(self) -> Dict[str, tuple]:
        v, e, h = self.vocab_size, self.embed_dim, self.hidden_dim
        shapes = {"embedding": (v, e), "w_out": (v, h), "b_out": (v,)}
        for layer in range(self.num_layers):
            shapes["{}.w_x".format(layer)] = (4 * h, e if layer == 0 else h)
            shapes["{}.w_h".format(layer)] = (4 * h, h)
            shapes["{}.b".format(layer)] = (4 * h,)
        return shapes

    def copy(self) -> "RnnLmParams":
        arrays = {k: v.copy() for k, v in self.arrays.items()}
        return RnnLmParams(
            self.vocab_size, self.embed_dim, self.hidden_dim, self.num_layers,
            self.seed, arrays, self.units, self.bos_id, self.eos_id,
        )

    def validate(self):
        shapes = self.shapes()
        if set(shapes) != set(self.arrays):
            raise ValueError("parameter names do not match the architecture")
        for name, shape in shapes.items():
            arr = self.arrays[name]
            if arr.shape != shape:
                raise ValueError("{} has shape {}, expected {}".format(name, arr.shape, shape))
            if not np.all(np.isfinite(arr)):
                raise NumericError("{} has non-finite values".format(name))


class RnnState(NamedTuple):
    h: Tuple[np.ndarray, ...]
    c: Tuple[np.ndarray, ...]


def init_params(vocab_size: int, embed_dim: int = 32, hidden_dim: int = 64,
                num_layers: int = 1, seed: int = 0, units=None) -> RnnLmParams:
    """Uniform(-0.1, 0.1) initialization with forget-gate bias +1."""
    for name, value in (("vocab_size", vocab_size), ("embed_dim", embed_dim),
                        ("hidden_dim", hidden_dim), ("num_layers", num_layers)):
        if value < 1:
            raise ValueError("{} must be >= 1, got {}".format(name, value))
    params = RnnLmParams(vocab_size, embed_dim, hidden_dim, num_layers, seed, {})
    if units is not None:
        units = tuple(units)
        if len(units) != vocab_size:
            raise ValueError("units do not match vocab_size")
        params.units = units
        params.bos_id = units.index("<s>")
        params.eos_id = units.index("</s>")
    rng = np.random.default_rng(seed)
    for name in params.names():
        params.arrays[name] = rng.uniform(-0.1, 0.1, size=params.shapes()[name])
    for layer in range(num_layers):
        params.arrays["{}.b".format(layer)][hidden_dim:2 * hidden_dim] += 1.0
    return params


def initial_state(params: RnnLmParams) -> RnnState:
    zeros = tuple(np.zeros(params.hidden_dim) for _ in range(params.num_layers))
    return RnnState(zeros, zeros)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _log_softmax(logits):
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def forward_step(params: RnnLmParams, state: RnnState, token: int):
    """Feed one token; return the log-distribution over the next token."""
    if not 0 <= token < params.vocab_size:
        raise IndexError("token {} outside vocabulary of {}".format(token, params.vocab_size))
    if len(state.h) != params.num_layers or state.h[0].shape != (params.hidden_dim,):
        raise ValueError("state does not match parameter dimensions")
    a = params.arrays
    H = params.hidden_dim
    x = a["embedding"][token]
    hs, cs = [], []
    for layer in range(params.num_layers):
        z = a["{}.w_x".format(layer)] @ x + a["{}.w_h".format(layer)] @ state.h[layer] + a["{}.b".format(layer)]
        i = _sigmoid(z[:H])
        f = _sigmoid(z[H:2 * H])
        g = np.tanh(z[2 * H:3 * H])
        o = _sigmoid(z[3 * H:])
        c = f * state.c[layer] + i * g
        h = o * np.tanh(c)
        hs.append(h)
        cs.append(c)
        x = h
    logits = a["w_out"] @ x + a["b_out"]
    return _log_softmax(logits), RnnState(tuple(hs), tuple(cs))


def _forward_sequence(params, inputs, state):
    a = params.arrays
    H = params.hidden_dim
    x = a["embedding"][inputs]
    caches = []
    hs, cs = [], []
    for layer in range(params.num_layers):
        w_h = a["{}.w_h".format(layer)]
        proj = x @ a["{}.w_x".format(layer)].T + a["{}.b".format(layer)]
        T = len(inputs)
        gates = np.empty((T, 4 * H))
        c_all = np.empty((T, H))
        h_all = np.empty((T, H))
        h, c = state.h[layer], state.c[layer]
        h_prev_all = np.empty((T, H))
        c_prev_all = np.empty((T, H))
        for t in range(T):
            h_prev_all[t] = h
            c_prev_all[t] = c
            z = proj[t] + w_h @ h
            act = np.empty(4 * H)
            act[:2 * H] = _sigmoid(z[:2 * H])
            act[2 * H:3 * H] = np.tanh(z[2 * H:3 * H])
            act[3 * H:] = _sigmoid(z[3 * H:])
            c = act[H:2 * H] * c + act[:H] * act[2 * H:3 * H]
            h = act[3 * H:] * np.tanh(c)
            gates[t] = act
            c_all[t] = c
            h_all[t] = h
        caches.append((x, gates, c_all, h_prev_all, c_prev_all))
        hs.append(h)
        cs.append(c)
        x = h_all
    logits = x @ a["w_out"].T + a["b_out"]
    return _log_softmax(logits), x, caches, RnnState(tuple(hs), tuple(cs))


def sequence_logprob(params: RnnLmParams, ids: Sequence[int]) -> float:
    """Natural-log probability of ``ids`` then ``</s>``, scored in one pass."""
    inputs = np.array([params.bos_id] + list(ids))
    targets = np.array(list(ids) + [params.eos_id])
    logp, _, _, _ = _forward_sequence(params, inputs, initial_state(params))
    return float(logp[np.arange(len(targets)), targets].sum())


def loss_and_grads(params: RnnLmParams, inputs: Sequence[int], targets: Sequence[int],
                   state: Optional[RnnState] = None):
    """Summed negative log-likelihood of ``targets`` and its gradient.

    Returns ``(loss, grads, final_state)``; gradients flowing into the
    incoming ``state`` are discarded (truncated BPTT).
    """
    if state is None:
        state = initial_state(params)
    inputs = np.asarray(inputs)
    targets = np.asarray(targets)
    a = params.arrays
    H = params.hidden_dim
    T = len(inputs)
    logp, top, caches, final = _forward_sequence(params, inputs, state)
    loss = -float(logp[np.arange(T), targets].sum())

    grads = {}
    dlogits = np.exp(logp)
    dlogits[np.arange(T), targets] -= 1.0
    grads["w_out"] = dlogits.T @ top
    grads["b_out"] = dlogits.sum(axis=0)
    dh_above = dlogits @ a["w_out"]
    for layer in range(params.num_layers - 1, -1, -1):
        x, gates, c_all, h_prev_all, c_prev_all = caches[layer]
        w_h = a["{}.w_h".format(layer)]
        dz = np.empty((T, 4 * H))
        dh_next = np.zeros(H)
        dc_next = np.zeros(H)
        for t in range(T - 1, -1, -1):
            i, f, g, o = gates[t, :H], gates[t, H:2 * H], gates[t, 2 * H:3 * H], gates[t, 3 * H:]
            tc = np.tanh(c_all[t])
            dh = dh_above[t] + dh_next
            dc = dc_next + dh * o * (1.0 - tc * tc)
            dz[t, :H] = dc * g * i * (1.0 - i)
            dz[t, H:2 * H] = dc * c_prev_all[t] * f * (1.0 - f)
            dz[t, 2 * H:3 * H] = dc * i * (1.0 - g * g)
            dz[t, 3 * H:] = dh * tc * o * (1.0 - o)
            dc_next = dc * f
            dh_next = w_h.T @ dz[t]
        grads["{}.w_x".format(layer)] = dz.T @ x
        grads["{}.w_h".format(layer)] = dz.T @ h_prev_all
        grads["{}.b".format(layer)] = dz.sum(axis=0)
        dh_above = dz @ a["{}.w_x".format(layer)]
    d_emb = np.zeros_like(a["embedding"])
    np.add.at(d_emb, inputs, dh_above)
    grads["embedding"] = d_emb
    return loss, grads, final


def _clip(grads, max_norm):
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if not math.isfinite(norm):
        raise NumericError("non-finite gradient norm")
    if norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


def train(params: RnnLmParams, corpus: Sequence[Sequence[int]], epochs: int = 10,
          learning_rate: float = 0.5, bptt_len: int = 35, seed: int = 0,
          clip_norm: float = 5.0,
          on_epoch: Optional[Callable[[int, float], None]] = None) -> RnnLmParams:
    """SGD training over sentences of token ids; returns new parameters.

    Sentences are visited in a seeded random order each epoch.  Each is fed
    as ``<s> w1 .. wn`` predicting ``w1 .. wn </s>``, updated every
    ``bptt_len`` tokens.  ``on_epoch(epoch, mean_nll)`` is called after each
    epoch.
    """
    if not corpus:
        raise ValueError("empty corpus")
    if bptt_len < 1:
        raise ValueError("bptt_len must be >= 1")
    params = params.copy()
    rng = np.random.default_rng(seed)
    bos, eos = params.bos_id, params.eos_id
    for epoch in range(epochs):
        total = 0.0
        count = 0
        for idx in rng.permutation(len(corpus)):
            sent = list(corpus[idx])
            inputs = [bos] + sent
            targets = sent + [eos]
            state = initial_state(params)
            for start in range(0, len(inputs), bptt_len):
                loss, grads, state = loss_and_grads(
                    params, inputs[start:start + bptt_len], targets[start:start + bptt_len], state
                )
                if not math.isfinite(loss):
                    raise NumericError(
                        "non-finite loss at epoch {} sentence {}".format(epoch, int(idx))
                    )
                _clip(grads, clip_norm)
                for name, g in grads.items():
                    params.arrays[name] -= learning_rate * g
                total += loss
                count += len(targets[start:start + bptt_len])
        mean = total / count
        logger.info("epoch %d mean nll %.4f ppl %.3f", epoch + 1, mean, math.exp(mean))
        if on_epoch is not None:
            on_epoch(epoch, mean)
    return params


def perplexity(params: RnnLmParams, corpus: Sequence[Sequence[int]]) -> float:
    """exp of the mean per-token negative log-likelihood, ``</s>`` included."""
    if not corpus:
        raise ValueError("empty corpus")
    nll = 0.0
    n = 0
    for sent in corpus:
        nll -= sequence_logprob(params, sent)
        n += len(sent) + 1
    return math.exp(nll / n)


def save_params(params: RnnLmParams, path) -> None:
    """Write a checkpoint: magic line, JSON header line, raw float64 arrays."""
    header = {
        "vocab_size": params.vocab_size,
        "embed_dim": params.embed_dim,
        "hidden_dim": params.hidden_dim,
        "num_layers": params.num_layers,
        "seed": params.seed,
        "bos_id": params.bos_id,
        "eos_id": params.eos_id,
        "units": list(params.units) if params.units is not None else None,
        "arrays": [[name, list(params.arrays[name].shape)] for name in params.names()],
        "dtype": "<f8",
    }
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        for name in params.names():
            f.write(np.ascontiguousarray(params.arrays[name], dtype="<f8").tobytes())


def load_params(path) -> RnnLmParams:
    with open(path, "rb") as f:
        data = f.read()
    if not data.startswith(CHECKPOINT_MAGIC):
        raise FormatError("not a checkpoint (bad magic)", 1)
    rest = data[len(CHECKPOINT_MAGIC):]
    end = rest.find(b"\n")
    if end < 0:
        raise FormatError("missing checkpoint header", 2)
    try:
        header = json.loads(rest[:end].decode("utf-8"))
    except ValueError:
        raise FormatError("malformed checkpoint header", 2) from None
    blob = rest[end + 1:]
    arrays = {}
    offset = 0
    for name, shape in header["arrays"]:
        size = int(np.prod(shape)) * 8
        if offset + size > len(blob):
            raise FormatError("truncated checkpoint at array {}".format(name))
        arrays[name] = np.frombuffer(blob[offset:offset + size], dtype="<f8").reshape(shape).copy()
        offset += size
    if offset != len(blob):
        raise FormatError("trailing bytes in checkpoint")
    units = tuple(header["units"]) if header["units"] is not None else None
    params = RnnLmParams(
        header["vocab_size"], header["embed_dim"], header["hidden_dim"], header["num_layers"],
        header["seed"], arrays, units, header["bos_id"], header["eos_id"],
    )
    params.validate()
    return params
