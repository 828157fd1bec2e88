"""Pointer-network log parser.

Input positions are ``[c_1..c_m, t_1..t_n, EOS]``.  Each word is embedded as
the mean of its subword embeddings; labels, EOS and the decoder start token
have rows of their own.  A bidirectional LSTM encodes the whole input and a
unidirectional LSTM decoder points back into it with additive attention:
``u_i = v . tanh(W1 e_i + W2 d_t)``, ``P(y_t) = softmax(u)``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import numcore as nc
from .errors import AlignmentFailure, IndexOutOfRange
from .ingest import LabelSet, PointerTarget, align_spans, apply_target, pre_tokenize
from .numcore import Parameter, Tensor
from .tokenizer import SubwordVocab

INIT_SCALE = 0.08
FORGET_BIAS = 1.0


@dataclass
class ModelConfig:
    embed_dim: int = 256
    hidden: int = 256
    dropout: float = 0.2
    m: int = 1
    vocab_size: int = 8000
    max_decode_factor: int = 2

    def __post_init__(self):
        for name in ("embed_dim", "hidden", "m", "vocab_size", "max_decode_factor"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout must lie in [0, 1)")

    @property
    def attention(self) -> int:
        return self.hidden

    def to_dict(self) -> dict:
        return asdict(self)


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    e, h, a = cfg.embed_dim, cfg.hidden, cfg.attention
    shapes = {
        "subword_embedding": (cfg.vocab_size, e),
        # rows 0..m-1 labels, m = EOS, m+1 = decoder start
        "label_embedding": (cfg.m + 2, e),
    }
    for d in ("enc_fwd", "enc_bwd"):
        shapes |= {f"{d}.w_ih": (e, 4 * h), f"{d}.w_hh": (h, 4 * h), f"{d}.b": (4 * h,)}
    shapes |= {"bridge_h": (2 * h, h), "bridge_c": (2 * h, h)}
    shapes |= {"dec.w_ih": (e, 4 * h), "dec.w_hh": (h, 4 * h), "dec.b": (4 * h,)}
    shapes |= {"ptr.w1": (2 * h, a), "ptr.w2": (h, a), "ptr.v": (a,)}
    return shapes


def init_params(cfg: ModelConfig, seed: int) -> dict[str, Parameter]:
    """Uniform(-0.08, 0.08) weights; zero biases except the forget gate (1.0)."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in param_shapes(cfg).items():
        if name.endswith(".b"):
            data = np.zeros(shape, np.float32)
            data[cfg.hidden:2 * cfg.hidden] = FORGET_BIAS
        else:
            data = rng.uniform(-INIT_SCALE, INIT_SCALE, size=shape).astype(np.float32)
        params[name] = Parameter(data, name=name)
    return params


@dataclass
class Batch:
    """Padded model inputs for a list of messages.

    Embedding positions are offset by one: slot 0 holds the decoder start
    token so that a previous-index of 0 means "start" and pointer index ``i``
    lands on slot ``i``.
    """

    lengths: np.ndarray  # m + n + 1 per message
    sub_ids: np.ndarray  # (B, L+1, K)
    sub_w: np.ndarray
    lab_ids: np.ndarray  # (B, L+1, 1)
    lab_w: np.ndarray
    enc_mask: np.ndarray  # (B, L) bool
    targets: np.ndarray | None = None  # (B, T) 1-based, 0 = padding
    prev: np.ndarray | None = None
    step_mask: np.ndarray | None = None

    @property
    def size(self) -> int:
        return len(self.lengths)


@dataclass
class EncodedInput:
    embedded: Tensor  # (B, L+1, E), slot 0 = decoder start
    states: Tensor  # (B, L, 2H)
    proj: Tensor  # W1 e_i, (B, L, A)
    mask: np.ndarray  # (B, L)
    h0: Tensor
    c0: Tensor
    lengths: np.ndarray


@dataclass
class ParseResult:
    tokens: list[str]
    template: list[str]
    tags: list[str]
    variables: list[dict] = field(default_factory=list)
    target: PointerTarget = ()
    warning: str | None = None

    def to_json(self) -> dict:
        out = {
            "template": " ".join(self.template),
            "tags": self.tags,
            "variables": self.variables,
        }
        if self.warning:
            out["warning"] = self.warning
        return out


class PointerParser:
    def __init__(
        self,
        config: ModelConfig,
        vocab: SubwordVocab,
        label_set: LabelSet,
        params: dict[str, Parameter] | None = None,
        seed: int = 0,
    ):
        if config.m != label_set.m:
            raise ValueError("config.m does not match the label set")
        if config.vocab_size != vocab.size:
            raise ValueError("config.vocab_size does not match the vocabulary")
        self.config = config
        self.vocab = vocab
        self.label_set = label_set
        self.params = params if params is not None else init_params(config, seed)
        expected = param_shapes(config)
        for name, shape in expected.items():
            if self.params[name].shape != shape:
                raise ValueError(f"parameter {name} has shape {self.params[name].shape}, expected {shape}")
        self._pieces: dict[str, list[int]] = {}

    def parameters(self) -> list[Parameter]:
        return list(self.params.values())

    def pieces(self, word: str) -> list[int]:
        ids = self._pieces.get(word)
        if ids is None:
            ids = self._pieces[word] = self.vocab.encode_word(word)
        return ids

    # ------------------------------------------------------------ batching

    def make_batch(self, messages: Sequence[Sequence[str]], targets: Sequence[PointerTarget] | None = None) -> Batch:
        m = self.config.m
        bsz = len(messages)
        lengths = np.array([m + len(t) + 1 for t in messages], dtype=np.int64)
        width = int(lengths.max())
        k = max((len(self.pieces(w)) for t in messages for w in t), default=1)
        dt = nc.default_dtype()
        sub_ids = np.zeros((bsz, width + 1, k), np.int64)
        sub_w = np.zeros((bsz, width + 1, k), dt)
        lab_ids = np.zeros((bsz, width + 1, 1), np.int64)
        lab_w = np.zeros((bsz, width + 1, 1), dt)
        for b, toks in enumerate(messages):
            lab_ids[b, 0, 0] = m + 1
            lab_w[b, 0, 0] = 1
            lab_ids[b, 1:m + 1, 0] = np.arange(m)
            lab_w[b, 1:m + 1, 0] = 1
            for j, word in enumerate(toks):
                ids = self.pieces(word)
                sub_ids[b, m + 1 + j, :len(ids)] = ids
                sub_w[b, m + 1 + j, :len(ids)] = 1.0 / len(ids)
            eos = m + len(toks) + 1
            lab_ids[b, eos, 0] = m
            lab_w[b, eos, 0] = 1
        enc_mask = np.arange(1, width + 1)[None, :] <= lengths[:, None]
        batch = Batch(lengths, sub_ids, sub_w, lab_ids, lab_w, enc_mask)
        if targets is not None:
            steps = max(len(t) for t in targets)
            tg = np.zeros((bsz, steps), np.int64)
            for b, t in enumerate(targets):
                tg[b, :len(t)] = t
            prev = np.zeros_like(tg)
            prev[:, 1:] = tg[:, :-1]
            batch.targets = tg
            batch.prev = prev
            batch.step_mask = (tg > 0).astype(dt)
        return batch

    # ------------------------------------------------------------ forward

    def embed(self, batch: Batch, training: bool = False, rng=None) -> Tensor:
        p = self.params
        x = nc.add(
            nc.embedding_bag(p["subword_embedding"], batch.sub_ids, batch.sub_w),
            nc.embedding_bag(p["label_embedding"], batch.lab_ids, batch.lab_w),
        )
        return nc.dropout(x, self.config.dropout, rng, training)

    def embed_input(self, tokens: Sequence[str]) -> np.ndarray:
        """Embedding vectors of ``[C, T, EOS]`` for one message (inference mode)."""
        with nc.no_grad():
            x = self.embed(self.make_batch([tokens]))
        return x.data[0, 1:]

    def encode(self, batch: Batch, training: bool = False, rng=None) -> EncodedInput:
        x = self.embed(batch, training, rng)
        width = batch.enc_mask.shape[1]
        enc_in = nc.take(x, np.broadcast_to(np.arange(1, width + 1), (batch.size, width)))
        states, h0, c0 = self.bilstm(enc_in, batch.enc_mask, training, rng)
        proj = nc.matmul(states, self.params["ptr.w1"])
        return EncodedInput(x, states, proj, batch.enc_mask, h0, c0, batch.lengths)

    def bilstm(self, enc_in: Tensor, mask: np.ndarray, training: bool = False, rng=None):
        """Encoder states ``e_i = [fwd_i ; bwd_i]`` and the bridged initial decoder state."""
        p = self.params
        cfg = self.config
        zero = Tensor(np.zeros((enc_in.shape[0], cfg.hidden), enc_in.data.dtype))
        hf, hf_last, cf_last = nc.lstm_layer(
            enc_in, p["enc_fwd.w_ih"], p["enc_fwd.w_hh"], p["enc_fwd.b"], zero, zero, mask
        )
        hb, hb_first, cb_first = nc.lstm_layer(
            enc_in, p["enc_bwd.w_ih"], p["enc_bwd.w_hh"], p["enc_bwd.b"], zero, zero, mask, reverse=True
        )
        states = nc.dropout(nc.concat([hf, hb]), cfg.dropout, rng, training)
        h0 = nc.tanh(nc.matmul(nc.concat([hf_last, hb_first]), p["bridge_h"]))
        c0 = nc.tanh(nc.matmul(nc.concat([cf_last, cb_first]), p["bridge_c"]))
        return states, h0, c0

    def pointer_scores(self, enc: EncodedInput, dec_states: Tensor) -> Tensor:
        """Raw logits (B, T, L) for decoder states of shape (B, T, H)."""
        return nc.pointer_scores(enc.proj, nc.matmul(dec_states, self.params["ptr.w2"]), self.params["ptr.v"])

    @staticmethod
    def pointer_distribution(scores: Tensor, mask: np.ndarray) -> Tensor:
        return nc.masked_softmax(scores, mask[:, None, :])

    def decode_step(self, enc: EncodedInput, prev: np.ndarray, state: tuple[Tensor, Tensor]):
        """One decoder step for a batch; ``prev`` holds previous indices (0 = start)."""
        prev = np.asarray(prev, dtype=np.int64).reshape(-1, 1)
        if (prev < 0).any() or (prev[:, 0] > enc.lengths).any():
            raise IndexOutOfRange("previous pointer index outside [0, m+n+1]")
        p = self.params
        bsz, hs = state[0].shape
        x = nc.take(enc.embedded, prev)
        h, c = nc.lstm_cell(
            x,
            nc.reshape(state[0], (bsz, 1, hs)),
            nc.reshape(state[1], (bsz, 1, hs)),
            p["dec.w_ih"], p["dec.w_hh"], p["dec.b"],
        )
        dist = self.pointer_distribution(self.pointer_scores(enc, h), enc.mask)
        return dist, (nc.reshape(h, (bsz, hs)), nc.reshape(c, (bsz, hs)))

    def sequence_loss(self, batch: Batch, training: bool = False, rng=None, enc: EncodedInput | None = None) -> Tensor:
        """Summed per-sequence NLL under teacher forcing, averaged over the batch."""
        p = self.params
        if enc is None:
            enc = self.encode(batch, training, rng)
        dec_in = nc.take(enc.embedded, batch.prev)
        dec, _, _ = nc.lstm_layer(dec_in, p["dec.w_ih"], p["dec.w_hh"], p["dec.b"], enc.h0, enc.c0, batch.step_mask)
        dec = nc.dropout(dec, self.config.dropout, rng, training)
        dist = self.pointer_distribution(self.pointer_scores(enc, dec), enc.mask)
        total = nc.nll_loss(dist, batch.targets, batch.step_mask)
        return nc.scale(total, 1.0 / batch.size)

    def loss(self, messages, targets, training: bool = False, rng=None) -> Tensor:
        return self.sequence_loss(self.make_batch(messages, targets), training, rng)

    # ------------------------------------------------------------ decoding

    def greedy_decode(self, enc: EncodedInput, max_steps: Sequence[int] | None = None) -> list[PointerTarget]:
        """Argmax decoding (ties to the lowest index) with a forced EOS after ``max_steps``."""
        lengths = enc.lengths
        if max_steps is None:
            max_steps = self.config.max_decode_factor * lengths
        max_steps = np.asarray(max_steps)
        bsz = len(lengths)
        outputs: list[list[int]] = [[] for _ in range(bsz)]
        done = np.zeros(bsz, bool)
        prev = np.zeros(bsz, np.int64)
        state = (enc.h0, enc.c0)
        with nc.no_grad():
            for step in range(int(max_steps.max())):
                dist, state = self.decode_step(enc, prev, state)
                choice = dist.data[:, 0].argmax(axis=-1) + 1
                for b in range(bsz):
                    if done[b]:
                        continue
                    outputs[b].append(int(choice[b]))
                    if choice[b] == lengths[b] or len(outputs[b]) >= max_steps[b]:
                        done[b] = True
                if done.all():
                    break
                prev = np.where(done, lengths, choice)
        for b in range(bsz):
            if not outputs[b] or outputs[b][-1] != lengths[b]:
                outputs[b].append(int(lengths[b]))
        return [tuple(o) for o in outputs]

    def decode_messages(self, messages: Sequence[Sequence[str]], batch_size: int = 64) -> list[PointerTarget]:
        order = sorted(range(len(messages)), key=lambda i: len(messages[i]))
        results: dict[int, PointerTarget] = {}
        with nc.no_grad():
            for start in range(0, len(order), batch_size):
                idx = order[start:start + batch_size]
                enc = self.encode(self.make_batch([messages[i] for i in idx]))
                for i, tgt in zip(idx, self.greedy_decode(enc)):
                    results[i] = tgt
        return [results[i] for i in range(len(messages))]

    def parse_tokens(self, tokens: Sequence[str], target: PointerTarget) -> ParseResult:
        labels = self.label_set
        template = apply_target(tokens, target, labels)
        tags = ["category" if t in labels else "static" for t in template]
        result = ParseResult(list(tokens), template, tags, target=tuple(target))
        try:
            spans = align_spans(tokens, template, labels) if template else None
        except AlignmentFailure as exc:
            spans = None
            result.warning = f"decoded template does not align with the message: {exc}"
        if spans is None and not template:
            result.warning = "empty template"
        if spans is not None:
            result.variables = [
                {"label": tok, "span_tokens": list(tokens[s:e])}
                for tok, (s, e) in zip(template, spans)
                if tok in labels
            ]
        return result

    def parse_message(self, content: str) -> ParseResult:
        tokens = pre_tokenize(content)
        target = self.decode_messages([tokens])[0]
        return self.parse_tokens(tokens, target)

    def parse_many(self, contents: Sequence[str], batch_size: int = 64) -> list[ParseResult]:
        tokens = [pre_tokenize(c) for c in contents]
        targets = self.decode_messages(tokens, batch_size)
        return [self.parse_tokens(t, y) for t, y in zip(tokens, targets)]

