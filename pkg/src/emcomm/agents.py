"""Sequence-to-sequence agents used as sender or receiver.

Two architectures share one decoder loop:

* ``baseline``: one embedding table, GRU encoder, GRU decoder initialised
  from the final encoder state, linear head on the decoder state.
* ``biased``: every input symbol gets a syntactic and a semantic embedding.
  The GRU runs over the syntactic ones only.  The decoder starts from zeros,
  uses its GRU state as a dot-product query against the encoder states, and
  the attention weights mix the *semantic* embeddings.  That mixture is added
  to the query and fed to the linear head.

All calls are batched: inputs are ``(B, T)`` integer arrays with an optional
``(B, T)`` validity mask for variable-length messages.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import diffcore as dc
from .diffcore import Parameters, Value
from .errors import ConfigError, DimensionError

KINDS = ("baseline", "biased")
_NEG = -1e9


@dataclass(frozen=True)
class ArchitectureConfig:
    kind: str
    input_vocab: int
    output_vocab: int
    max_output_len: int
    hidden_size: int = 500
    embedding_size: int = 500
    # output symbol that ends a message; None means fixed-length decoding
    eos: int | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown architecture kind {self.kind!r}")
        for name in ("input_vocab", "output_vocab", "max_output_len", "hidden_size", "embedding_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.kind == "biased" and self.embedding_size != self.hidden_size:
            raise ConfigError("biased architecture adds semantic embeddings to the query: sizes must match")
        if self.eos is not None and not 0 <= self.eos < self.output_vocab:
            raise ConfigError("eos must be an output symbol")

    @property
    def sos(self) -> int:
        return self.output_vocab

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class Message:
    symbols: tuple[int, ...]
    eos_terminated: bool = False

    def __len__(self) -> int:
        return len(self.symbols)


@dataclass
class EncodedSource:
    contextual: list[Value]
    semantic: list[Value] | None
    mask: np.ndarray
    final: Value

    def __len__(self) -> int:
        return len(self.contextual)


@dataclass
class Sample:
    symbols: np.ndarray  # (B, L), EOS-padded
    lengths: np.ndarray  # content symbols per row
    eos_terminated: np.ndarray
    log_probs: list[Value]  # per step, (B,)
    entropies: list[Value]  # per step, (B,)
    live: np.ndarray  # (B, L) steps that belong to the message (EOS step included)

    def messages(self) -> list[Message]:
        return to_messages(self.symbols, self.lengths, self.eos_terminated)


def to_messages(symbols: np.ndarray, lengths: np.ndarray, eos_terminated: np.ndarray) -> list[Message]:
    return [
        Message(tuple(int(s) for s in row[:n]), bool(e))
        for row, n, e in zip(symbols, lengths, eos_terminated)
    ]


def pad_sequences(seqs, pad: int) -> tuple[np.ndarray, np.ndarray]:
    """Right-pad to a ``(B, T)`` array plus validity mask."""
    width = max(len(s) for s in seqs)
    arr = np.full((len(seqs), width), pad, dtype=np.int64)
    mask = np.zeros((len(seqs), width), dtype=bool)
    for i, s in enumerate(seqs):
        arr[i, : len(s)] = s
        mask[i, : len(s)] = True
    return arr, mask


def attend(query: Value, source: EncodedSource) -> Value:
    """Dot-product attention over contextual states, mixing semantic embeddings."""
    if source.semantic is None:
        raise ConfigError("attention needs semantic embeddings (biased architecture)")
    if query.shape[-1] != source.contextual[0].shape[-1]:
        raise DimensionError(
            f"query width {query.shape[-1]} != contextual width {source.contextual[0].shape[-1]}"
        )
    weights = attention_weights(query, source)
    if len(source) == 1:
        return source.semantic[0] * dc.slice_cols(weights, 0, 1)
    out = None
    for t, sem in enumerate(source.semantic):
        term = sem * dc.slice_cols(weights, t, t + 1)
        out = term if out is None else out + term
    return out


def attention_weights(query: Value, source: EncodedSource) -> Value:
    scores = dc.concat([dc.sum(query * c, axis=1, keepdims=True) for c in source.contextual], axis=1)
    if not source.mask.all():
        scores = scores + Value(np.where(source.mask, 0.0, _NEG))
    return dc.softmax(scores)


class Agent:
    """Parameters plus the forward passes of one encoder-decoder."""

    def __init__(self, config: ArchitectureConfig, seed: int = 0, params: Parameters | None = None):
        self.config = config
        self.params = params if params is not None else self._init_params(np.random.default_rng(seed))

    def _init_params(self, rng: np.random.Generator) -> Parameters:
        c = self.config
        p = Parameters()
        # embedding fan-in is 1: a lookup is a one-hot input
        if c.kind == "baseline":
            p.init_uniform("enc.emb", (c.input_vocab, c.embedding_size), 1, rng)
        else:
            p.init_uniform("enc.syn", (c.input_vocab, c.embedding_size), 1, rng)
            p.init_uniform("enc.sem", (c.input_vocab, c.hidden_size), 1, rng)
        dc.init_gru(p, "enc.gru", c.embedding_size, c.hidden_size, rng)
        p.init_uniform("dec.emb", (c.output_vocab + 1, c.embedding_size), 1, rng)
        dc.init_gru(p, "dec.gru", c.embedding_size, c.hidden_size, rng)
        p.init_uniform("out.w", (c.hidden_size, c.output_vocab), c.hidden_size, rng)
        p.init_uniform("out.b", (1, c.output_vocab), c.hidden_size, rng)
        return p

    # ------------------------------------------------------------ encoder

    def encode(self, symbols, mask: np.ndarray | None = None) -> EncodedSource:
        c, p = self.config, self.params
        symbols = np.atleast_2d(np.asarray(symbols, dtype=np.int64))
        if symbols.size and (symbols.min() < 0 or symbols.max() >= c.input_vocab):
            raise IndexError(f"input symbol outside vocabulary [0, {c.input_vocab})")
        if mask is None:
            mask = np.ones(symbols.shape, dtype=bool)
        if not mask[:, 0].all():
            raise ValueError("every input sequence needs at least one symbol")
        batch, steps = symbols.shape
        syn = p["enc.emb"] if c.kind == "baseline" else p["enc.syn"]
        h = Value(np.zeros((batch, c.hidden_size)))
        contextual, semantic = [], [] if c.kind == "biased" else None
        for t in range(steps):
            h_new = dc.gru_cell(p, "enc.gru", dc.embedding(syn, symbols[:, t]), h)
            m = mask[:, t]
            h = h_new if m.all() else h + Value(m[:, None].astype(np.float64)) * (h_new - h)
            contextual.append(h)
            if semantic is not None:
                semantic.append(dc.embedding(p["enc.sem"], symbols[:, t]))
        return EncodedSource(contextual, semantic, mask, h)

    # ------------------------------------------------------------ decoder

    def initial_state(self, source: EncodedSource) -> Value:
        if self.config.kind == "baseline":
            return source.final
        return Value(np.zeros((source.mask.shape[0], self.config.hidden_size)))

    def decode_step(self, prev, state: Value, source: EncodedSource, step: int | None = None):
        """One decoder step; returns ``(logits, next_state)``.

        ``prev`` holds the previous output symbols, or ``config.sos``.  When
        ``step == 0`` and the config has an EOS, EOS is masked out so every
        message carries at least one symbol.
        """
        c, p = self.config, self.params
        prev = np.asarray(prev, dtype=np.int64)
        if prev.size and (prev.min() < 0 or prev.max() > c.output_vocab):
            raise IndexError(f"previous symbol outside [0, {c.output_vocab}]")
        state = dc.gru_cell(p, "dec.gru", dc.embedding(p["dec.emb"], prev), state)
        head_in = state if c.kind == "baseline" else state + attend(state, source)
        logits = dc.matmul(head_in, p["out.w"]) + p["out.b"]
        if step == 0 and c.eos is not None:
            ban = np.zeros((1, c.output_vocab))
            ban[0, c.eos] = _NEG
            logits = logits + Value(ban)
        return logits, state

    def _max_len(self, max_len: int | None) -> int:
        n = self.config.max_output_len if max_len is None else max_len
        if n < 1:
            raise ValueError("max_len must be >= 1")
        return n

    def decode_greedy(self, source: EncodedSource, max_len: int | None = None):
        """Argmax decoding (lowest id wins ties).

        Returns ``(symbols, lengths, eos_terminated)`` as arrays.
        """
        c = self.config
        n = self._max_len(max_len)
        batch = source.mask.shape[0]
        eos = c.eos
        symbols = np.full((batch, n), eos if eos is not None else 0, dtype=np.int64)
        done = np.zeros(batch, dtype=bool)
        lengths = np.full(batch, n, dtype=np.int64)
        with dc.no_grad():
            state = self.initial_state(source)
            prev = np.full(batch, c.sos, dtype=np.int64)
            for t in range(n):
                logits, state = self.decode_step(prev, state, source, step=t)
                choice = np.argmax(logits.data, axis=1)
                if eos is not None:
                    ended = (choice == eos) & ~done
                    lengths[ended] = t
                    done |= ended
                    choice = np.where(done, eos, choice)
                symbols[:, t] = choice
                prev = choice
                if eos is not None and done.all():
                    break
        return symbols, lengths, done.copy()

    def greedy_messages(self, source: EncodedSource, max_len: int | None = None) -> list[Message]:
        return to_messages(*self.decode_greedy(source, max_len))

    def decode_sample(self, source: EncodedSource, rng: np.random.Generator, max_len: int | None = None) -> Sample:
        """Sample symbols step by step; keeps differentiable log-probs and entropies."""
        c = self.config
        n = self._max_len(max_len)
        batch = source.mask.shape[0]
        eos = c.eos
        symbols = np.full((batch, n), eos if eos is not None else 0, dtype=np.int64)
        live = np.zeros((batch, n), dtype=bool)
        done = np.zeros(batch, dtype=bool)
        lengths = np.full(batch, n, dtype=np.int64)
        log_probs, entropies = [], []
        state = self.initial_state(source)
        prev = np.full(batch, c.sos, dtype=np.int64)
        for t in range(n):
            logits, state = self.decode_step(prev, state, source, step=t)
            probs = np.exp(logits.data - logits.data.max(axis=1, keepdims=True))
            cdf = np.cumsum(probs, axis=1)
            u = rng.random(batch)[:, None] * cdf[:, -1:]
            choice = np.minimum((cdf < u).sum(axis=1), c.output_vocab - 1)
            live[:, t] = ~done
            log_probs.append(dc.log_prob(logits, choice))
            entropies.append(dc.softmax_entropy(logits))
            if eos is not None:
                ended = (choice == eos) & ~done
                lengths[ended] = t
                done |= ended
                choice = np.where(live[:, t], choice, eos)
            symbols[:, t] = choice
            prev = choice
            if eos is not None and done.all():
                break
        return Sample(symbols, lengths, done.copy(), log_probs, entropies, live[:, : len(log_probs)])

    def teacher_forced_loss(self, source: EncodedSource, targets: np.ndarray, target_mask: np.ndarray | None = None) -> Value:
        """Summed per-step cross-entropy against ``targets``; one loss per row."""
        c = self.config
        targets = np.asarray(targets, dtype=np.int64)
        if target_mask is None:
            target_mask = np.ones(targets.shape, dtype=bool)
        state = self.initial_state(source)
        prev = np.full(targets.shape[0], c.sos, dtype=np.int64)
        total = None
        for t in range(targets.shape[1]):
            logits, state = self.decode_step(prev, state, source, step=t)
            ce = dc.softmax_cross_entropy(logits, targets[:, t])
            m = target_mask[:, t]
            if not m.all():
                ce = ce * Value(m.astype(np.float64))
            total = ce if total is None else total + ce
            prev = targets[:, t]
        return total
