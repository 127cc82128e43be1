"""Style-conditioned attention encoder-decoder.

Encoders:
  roll2seq  piano roll (pitches as channels) -> two strided 1-D convolutions
            (x8 downsampling, 2 states per bar) -> bidirectional GRU
  seq2seq   token embedding -> bidirectional GRU

Decoder: a GRU whose input at step i is [c_i, style embedding, embedding of
the previous token], where c_i is an additive-attention summary of the encoder
states computed from the previous decoder state. Its initial state is an
affine map (with tanh) of the final forward and backward encoder states.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from . import numeric as nm
from .codec import VOCAB, TokenVocab, encode_events, to_piano_roll, tokenize
from .numeric import ParamStore, Rng, Tensor

log = logging.getLogger(__name__)

VARIANTS = ("roll2seq", "seq2seq")


@dataclass(frozen=True)
class ModelConfig:
    variant: str = "roll2seq"
    encoder_hidden: int = 128
    decoder_hidden: int = 256
    attention_dim: int = 128
    conv_channels: tuple[int, int] = (256, 512)
    conv_kernels: tuple[int, int] = (4, 4)
    conv_strides: tuple[int, int] = (2, 4)
    style_embed_dim: int = 16
    token_embed_dim: int = 64
    num_styles: int = 8
    max_decode_len: int = 1024
    dropout: float = 0.0
    conditioned: bool = True
    vocab_size: int = TokenVocab.SIZE

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        sizes = [self.encoder_hidden, self.decoder_hidden, self.attention_dim, *self.conv_channels,
                 *self.conv_kernels, *self.conv_strides, self.token_embed_dim,
                 self.max_decode_len, self.vocab_size]
        if self.conditioned:
            sizes += [self.style_embed_dim, self.num_styles]
        if any(int(s) <= 0 for s in sizes):
            raise ValueError("model sizes must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")

    @property
    def downsampling(self) -> int:
        return self.conv_strides[0] * self.conv_strides[1]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        for key in ("conv_channels", "conv_kernels", "conv_strides"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)

    @classmethod
    def full_scale(cls, num_styles: int = 70) -> "ModelConfig":
        """Reference sizes: the CNN emits 1280-dim vectors, 2 per bar."""
        return cls(conv_channels=(640, 1280), num_styles=num_styles)


def _glorot(rng: Rng, shape: tuple[int, ...], fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(shape, -limit, limit).astype(np.float32)


def _add_gru(store: ParamStore, rng: Rng, prefix: str, inputs: int, hidden: int):
    store.add(f"{prefix}.wx", _glorot(rng.child(prefix + ".wx"), (inputs, 3 * hidden), inputs, hidden))
    store.add(f"{prefix}.bx", np.zeros(3 * hidden, np.float32))
    # one orthogonal block per gate
    blocks = []
    for gate in range(3):
        q, _ = np.linalg.qr(rng.child(f"{prefix}.wh{gate}").normal((hidden, hidden)))
        blocks.append(q)
    store.add(f"{prefix}.wh", np.concatenate(blocks, axis=1).astype(np.float32))
    store.add(f"{prefix}.bh", np.zeros(3 * hidden, np.float32))


def init_params(cfg: ModelConfig, seed: int) -> ParamStore:
    rng = Rng(seed).child("init")
    store = ParamStore()
    he, hd, a = cfg.encoder_hidden, cfg.decoder_hidden, cfg.attention_dim
    if cfg.variant == "roll2seq":
        c1, c2 = cfg.conv_channels
        k1, k2 = cfg.conv_kernels
        store.add("conv1.w", _glorot(rng.child("conv1"), (c1, 128, k1), 128 * k1, c1 * k1))
        store.add("conv1.b", np.zeros(c1, np.float32))
        store.add("conv2.w", _glorot(rng.child("conv2"), (c2, c1, k2), c1 * k2, c2 * k2))
        store.add("conv2.b", np.zeros(c2, np.float32))
        enc_in = c2
    else:
        store.add("enc.embed", rng.child("enc.embed").normal((cfg.vocab_size, cfg.token_embed_dim), scale=0.1))
        enc_in = cfg.token_embed_dim
    _add_gru(store, rng, "enc.fw", enc_in, he)
    _add_gru(store, rng, "enc.bw", enc_in, he)
    store.add("dec.init.w", _glorot(rng.child("dec.init"), (2 * he, hd), 2 * he, hd))
    store.add("dec.init.b", np.zeros(hd, np.float32))
    store.add("att.wk", _glorot(rng.child("att.wk"), (2 * he, a), 2 * he, a))
    store.add("att.wq", _glorot(rng.child("att.wq"), (hd, a), hd, a))
    store.add("att.v", _glorot(rng.child("att.v"), (a,), a, 1))
    if cfg.conditioned:
        store.add("dec.style", rng.child("dec.style").normal((cfg.num_styles, cfg.style_embed_dim), scale=0.1))
        store.add("dec.ws", _glorot(rng.child("dec.ws"), (cfg.style_embed_dim, 3 * hd), cfg.style_embed_dim, hd))
    store.add("dec.token", rng.child("dec.token").normal((cfg.vocab_size, cfg.token_embed_dim), scale=0.1))
    store.add("dec.we", _glorot(rng.child("dec.we"), (cfg.token_embed_dim, 3 * hd), cfg.token_embed_dim, hd))
    store.add("dec.wc", _glorot(rng.child("dec.wc"), (2 * he, 3 * hd), 2 * he, hd))
    store.add("dec.bx", np.zeros(3 * hd, np.float32))
    q, _ = np.linalg.qr(rng.child("dec.wh").normal((hd, hd)))
    store.add("dec.wh", np.tile(q, (1, 3)).astype(np.float32))
    store.add("dec.bh", np.zeros(3 * hd, np.float32))
    store.add("out.w", _glorot(rng.child("out.w"), (hd, cfg.vocab_size), hd, cfg.vocab_size))
    store.add("out.b", np.zeros(cfg.vocab_size, np.float32))
    return store


# encoders

@dataclass
class EncoderStates:
    states: Tensor  # (B, J, 2H) = [forward, backward]
    mask: np.ndarray  # (B, J) bool
    final: Tensor  # (B, 2H): last forward state, first backward state


def _bigru(p: ParamStore, x: Tensor, mask: np.ndarray | None) -> EncoderStates:
    batch, steps, _ = x.shape
    hidden = p["enc.fw.wh"].shape[0]
    outputs = {}
    for direction in ("fw", "bw"):
        pre = nm.add(nm.matmul(x, p[f"enc.{direction}.wx"]), p[f"enc.{direction}.bx"])
        h = Tensor(np.zeros((batch, hidden)))
        seq = [None] * steps
        order = range(steps) if direction == "fw" else range(steps - 1, -1, -1)
        for t in order:
            m = None if mask is None else mask[:, t]
            h = nm.gru_cell(nm.take(pre, t, axis=1), h, p[f"enc.{direction}.wh"], p[f"enc.{direction}.bh"], m)
            seq[t] = h
        outputs[direction] = (nm.stack(seq, axis=1), h)
    states = nm.concat([outputs["fw"][0], outputs["bw"][0]], axis=-1)
    final = nm.concat([outputs["fw"][1], outputs["bw"][1]], axis=-1)
    if mask is None:
        mask = np.ones((batch, steps), dtype=bool)
    return EncoderStates(states, mask, final)


def encode_roll(p: ParamStore, cfg: ModelConfig, rolls: np.ndarray, rng: Rng | None = None) -> EncoderStates:
    """rolls: (B, 128, columns) with columns a multiple of the conv downsampling."""
    rolls = np.asarray(rolls)
    if rolls.ndim == 2:
        rolls = rolls[None]
    if rolls.ndim != 3 or rolls.shape[1] != 128 or rolls.shape[2] % cfg.downsampling:
        raise nm.ShapeError("encode_roll", rolls.shape)
    (k1, k2), (s1, s2) = cfg.conv_kernels, cfg.conv_strides
    x = Tensor(rolls)
    h = nm.relu(nm.conv1d(x, p["conv1.w"], p["conv1.b"], stride=s1, padding=(k1 - s1) // 2))
    h = nm.relu(nm.conv1d(h, p["conv2.w"], p["conv2.b"], stride=s2, padding=(k2 - s2) // 2))
    h = nm.transpose(h, (0, 2, 1))
    h = nm.dropout(h, cfg.dropout, rng)
    return _bigru(p, h, None)


def encode_seq(p: ParamStore, cfg: ModelConfig, ids: Sequence[Sequence[int]], rng: Rng | None = None) -> EncoderStates:
    ids_arr, mask = _pad(ids)
    x = nm.embedding(p["enc.embed"], ids_arr)
    x = nm.dropout(x, cfg.dropout, rng)
    return _bigru(p, x, None if mask.all() else mask)


def encode(p: ParamStore, cfg: ModelConfig, inputs, rng: Rng | None = None) -> EncoderStates:
    if cfg.variant == "roll2seq":
        return encode_roll(p, cfg, inputs, rng)
    return encode_seq(p, cfg, inputs, rng)


def _pad(seqs: Sequence[Sequence[int]], pad: int = TokenVocab.PAD_ID) -> tuple[np.ndarray, np.ndarray]:
    width = max(len(s) for s in seqs)
    arr = np.full((len(seqs), width), pad, dtype=np.int64)
    mask = np.zeros((len(seqs), width), dtype=bool)
    for i, s in enumerate(seqs):
        arr[i, :len(s)] = s
        mask[i, :len(s)] = True
    return arr, mask


# decoder

@dataclass
class AttentionContext:
    weights: np.ndarray  # (B, J)
    context: Tensor  # (B, 2H)


def attend(p: ParamStore, enc: EncoderStates, s_prev: Tensor, keys: Tensor | None = None) -> AttentionContext:
    if keys is None:
        keys = nm.matmul(enc.states, p["att.wk"])
    c, alpha = nm.additive_attention(s_prev, keys, enc.states, p["att.wq"], p["att.v"], enc.mask)
    return AttentionContext(alpha, c)


def initial_state(p: ParamStore, enc: EncoderStates) -> Tensor:
    return nm.tanh(nm.add(nm.matmul(enc.final, p["dec.init.w"]), p["dec.init.b"]))


def _style_term(p: ParamStore, cfg: ModelConfig, styles) -> Tensor | None:
    if not cfg.conditioned:
        return None
    styles = np.asarray(styles, dtype=np.int64)
    if styles.size and (styles.min() < 0 or styles.max() >= cfg.num_styles):
        raise ValueError(f"style id outside [0, {cfg.num_styles})")
    return nm.matmul(nm.embedding(p["dec.style"], styles), p["dec.ws"])


def decode_step(p: ParamStore, cfg: ModelConfig, enc: EncoderStates, style, y_prev, s_prev: Tensor,
                keys: Tensor | None = None) -> tuple[Tensor, Tensor, AttentionContext]:
    """One decoder step for a batch: returns (s_i, logits, attention)."""
    ctx = attend(p, enc, s_prev, keys)
    y_prev = np.atleast_1d(np.asarray(y_prev, dtype=np.int64))
    x = nm.add(nm.matmul(nm.embedding(p["dec.token"], y_prev), p["dec.we"]), p["dec.bx"])
    x = nm.add(x, nm.matmul(ctx.context, p["dec.wc"]))
    style_term = _style_term(p, cfg, np.atleast_1d(style)) if cfg.conditioned else None
    if style_term is not None:
        x = nm.add(x, style_term)
    s = nm.gru_cell(x, s_prev, p["dec.wh"], p["dec.bh"])
    logits = nm.add(nm.matmul(s, p["out.w"]), p["out.b"])
    return s, logits, ctx


@dataclass
class Batch:
    inputs: object  # rolls (B,128,C) or list of id lists
    targets: np.ndarray  # (B, T+1) ids, PAD padded, starting with BOS
    mask: np.ndarray  # (B, T) 1 where targets[:, 1:] is real
    styles: np.ndarray  # (B,)


def make_batch(inputs, targets: Sequence[Sequence[int]], styles) -> Batch:
    tgt, m = _pad(targets)
    if isinstance(inputs, np.ndarray) or (inputs and isinstance(inputs[0], np.ndarray)):
        inputs = np.stack([np.asarray(r, dtype=np.float32) for r in inputs])
    return Batch(inputs, tgt, m[:, 1:].astype(np.float32), np.asarray(styles, dtype=np.int64))


def forward_logits(p: ParamStore, cfg: ModelConfig, batch: Batch, rng: Rng | None = None) -> Tensor:
    """Teacher-forced logits, shape (B * T, vocab)."""
    enc = encode(p, cfg, batch.inputs, rng)
    keys = nm.matmul(enc.states, p["att.wk"])
    y_in = batch.targets[:, :-1]
    bsz, steps = y_in.shape
    emb = nm.dropout(nm.embedding(p["dec.token"], y_in), cfg.dropout, rng)
    pre = nm.add(nm.matmul(emb, p["dec.we"]), p["dec.bx"])
    style_term = _style_term(p, cfg, batch.styles)
    if style_term is not None:
        pre = nm.add(pre, nm.reshape(style_term, (bsz, 1, -1)))
    s = initial_state(p, enc)
    states = []
    for i in range(steps):
        c, _ = nm.additive_attention(s, keys, enc.states, p["att.wq"], p["att.v"], enc.mask)
        x = nm.add(nm.take(pre, i, axis=1), nm.matmul(c, p["dec.wc"]))
        s = nm.gru_cell(x, s, p["dec.wh"], p["dec.bh"])
        states.append(s)
    hidden = nm.stack(states, axis=1)
    hidden = nm.dropout(hidden, cfg.dropout, rng)
    logits = nm.add(nm.matmul(hidden, p["out.w"]), p["out.b"])
    return nm.reshape(logits, (bsz * steps, cfg.vocab_size))


def batch_loss(p: ParamStore, cfg: ModelConfig, batch: Batch, rng: Rng | None = None) -> tuple[Tensor, Tensor]:
    logits = forward_logits(p, cfg, batch, rng)
    loss = nm.cross_entropy(logits, batch.targets[:, 1:].reshape(-1), batch.mask.reshape(-1))
    return loss, logits


def token_accuracy(p: ParamStore, cfg: ModelConfig, batch: Batch) -> tuple[int, int]:
    """(correct, total) teacher-forced argmax predictions over real target tokens."""
    with nm.no_grad():
        logits = forward_logits(p, cfg, batch)
    pred = logits.data.argmax(axis=1)
    gold = batch.targets[:, 1:].reshape(-1)
    m = batch.mask.reshape(-1) > 0
    return int((pred[m] == gold[m]).sum()), int(m.sum())


def greedy_decode(p: ParamStore, cfg: ModelConfig, inputs, styles, max_len: int | None = None,
                  temperature: float | None = None, rng: Rng | None = None) -> list[list[int]]:
    """Argmax decoding from BOS until EOS or ``max_len`` tokens (BOS included).

    ``temperature`` switches to sampling; it is off by default because
    sampled outputs contain more malformed sequences.
    """
    max_len = cfg.max_decode_len if max_len is None else max_len
    with nm.no_grad():
        enc = encode(p, cfg, inputs)
        keys = nm.matmul(enc.states, p["att.wk"])
        bsz = enc.states.shape[0]
        styles = np.broadcast_to(np.asarray(styles, dtype=np.int64), (bsz,))
        s = initial_state(p, enc)
        y = np.full(bsz, TokenVocab.BOS_ID, dtype=np.int64)
        out = [[TokenVocab.BOS_ID] for _ in range(bsz)]
        done = np.zeros(bsz, dtype=bool)
        for _ in range(max_len - 1):
            s, logits, _ = decode_step(p, cfg, enc, styles, y, s, keys)
            if temperature:
                probs = nm._softmax(logits.data.astype(np.float64) / temperature, axis=1)
                y = np.array([rng.categorical(row) for row in probs], dtype=np.int64)
            else:
                y = logits.data.argmax(axis=1)
            for b in range(bsz):
                if not done[b]:
                    out[b].append(int(y[b]))
                    done[b] = y[b] == TokenVocab.EOS_ID
            if done.all():
                break
    return out


# data

INPUT_SELECTORS = ("bass", "piano", "all")
OUTPUT_TRACKS = ("bass", "piano")


def encode_input(seg, cfg: ModelConfig, selector: str):
    if cfg.variant == "roll2seq":
        return to_piano_roll(seg)
    return tokenize(encode_events(seg, compress_offs=selector != "bass"))


def encode_target(seg, track: str) -> list[int]:
    return tokenize(encode_events(seg, compress_offs=track == "piano"))


@dataclass
class Dataset:
    inputs: list
    targets: list[list[int]]
    styles: list[int]
    keys: list = field(default_factory=list)

    def __len__(self):
        return len(self.targets)

    def batch(self, idx: Sequence[int]) -> Batch:
        return make_batch([self.inputs[i] for i in idx], [self.targets[i] for i in idx],
                          [self.styles[i] for i in idx])


def build_dataset(corpus, split: str, cfg: ModelConfig, input_selector: str, output_track: str,
                  style_names: Sequence[str], examples=None) -> Dataset:
    index = {name: i for i, name in enumerate(style_names)}
    examples = corpus.split(split) if examples is None else examples
    ds = Dataset([], [], [], [])
    for ex in examples:
        if ex.target_style not in index:
            continue
        ds.inputs.append(encode_input(corpus.source(ex, input_selector), cfg, input_selector))
        ds.targets.append(encode_target(corpus.target(ex, output_track), output_track))
        ds.styles.append(index[ex.target_style])
        ds.keys.append(ex)
    return ds


# training

@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    lr: float = 1e-3
    lr_decay: float = 0.5
    decay_patience: int = 2
    early_stop_patience: int = 5
    eval_every: int = 200
    max_steps: int = 20000
    clip_norm: float = 5.0
    bucket_pool: int = 20
    target_accuracy: float | None = None  # stop once train token accuracy reaches this

    def to_dict(self):
        return asdict(self)


@dataclass
class CurvePoint:
    step: int
    train_loss: float
    val_loss: float
    lr: float


@dataclass
class Checkpoint:
    config: ModelConfig
    params: dict[str, np.ndarray]
    styles: list[str]
    feels: dict[str, str] = field(default_factory=dict)
    step: int = 0
    adam_m: dict[str, np.ndarray] = field(default_factory=dict)
    adam_v: dict[str, np.ndarray] = field(default_factory=dict)
    curve: list[CurvePoint] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def to_bytes(self) -> bytes:
        arrays = {f"param/{k}": v for k, v in self.params.items()}
        arrays.update({f"adam.m/{k}": v for k, v in self.adam_m.items()})
        arrays.update({f"adam.v/{k}": v for k, v in self.adam_v.items()})
        meta = {
            "config": self.config.to_dict(),
            "styles": list(self.styles),
            "feels": dict(self.feels),
            "step": self.step,
            "vocab": VOCAB.fingerprint(),
            "curve": [asdict(c) for c in self.curve],
            "extra": self.meta,
        }
        return nm.save_checkpoint(None, arrays, meta)

    def save(self, path) -> bytes:
        blob = self.to_bytes()
        with open(path, "wb") as f:
            f.write(blob)
        return blob

    @classmethod
    def load(cls, source) -> "Checkpoint":
        arrays, meta = nm.load_checkpoint(source)
        if meta.get("vocab") != VOCAB.fingerprint():
            raise ValueError("checkpoint was written with a different token vocabulary")

        def group(prefix):
            return {k[len(prefix):]: v for k, v in arrays.items() if k.startswith(prefix)}

        return cls(ModelConfig.from_dict(meta["config"]), group("param/"), meta["styles"],
                   meta.get("feels", {}), meta.get("step", 0), group("adam.m/"), group("adam.v/"),
                   [CurvePoint(**c) for c in meta.get("curve", [])], meta.get("extra", {}))

    def store(self) -> ParamStore:
        store = ParamStore()
        for name in sorted(self.params):
            store.add(name, self.params[name])
            if name in self.adam_m:
                store.m[name] = self.adam_m[name].copy()
                store.v[name] = self.adam_v[name].copy()
        store.step = self.step
        return store

    def style_id(self, name: str) -> int:
        if name not in self.styles:
            raise KeyError(f"unknown style {name!r}; available: {', '.join(self.styles)}")
        return self.styles.index(name)


class TrainingDiverged(RuntimeError):
    pass


def _batches(lengths: Sequence[int], batch_size: int, pool: int, rng: Rng) -> list[list[int]]:
    """Length-bucketed batches: shuffle, sort within pools, then shuffle batch order."""
    order = [int(i) for i in rng.permutation(len(lengths))]
    out = []
    span = batch_size * pool
    for start in range(0, len(order), span):
        chunk = sorted(order[start:start + span], key=lambda i: (lengths[i], i))
        out.extend(chunk[j:j + batch_size] for j in range(0, len(chunk), batch_size))
    return [out[i] for i in rng.permutation(len(out))]


def evaluate_loss(p: ParamStore, cfg: ModelConfig, data: Dataset, batch_size: int = 64) -> float:
    """Token-weighted mean cross-entropy over a dataset (teacher forced)."""
    if not len(data):
        return float("nan")
    order = sorted(range(len(data)), key=lambda i: (len(data.targets[i]), i))
    total, count = 0.0, 0.0
    with nm.no_grad():
        for j in range(0, len(order), batch_size):
            batch = data.batch(order[j:j + batch_size])
            loss, _ = batch_loss(p, cfg, batch)
            n = float(batch.mask.sum())
            total += float(loss.data) * n
            count += n
    return total / count


def dataset_accuracy(p: ParamStore, cfg: ModelConfig, data: Dataset, batch_size: int = 64) -> float:
    order = sorted(range(len(data)), key=lambda i: (len(data.targets[i]), i))
    right = tot = 0
    for j in range(0, len(order), batch_size):
        r, t = token_accuracy(p, cfg, data.batch(order[j:j + batch_size]))
        right += r
        tot += t
    return right / tot if tot else 0.0


def _clip(grads: dict[str, np.ndarray], max_norm: float) -> float:
    norm = math.sqrt(sum(float((g.astype(np.float64) ** 2).sum()) for g in grads.values()))
    if max_norm and norm > max_norm:
        scale = np.float32(max_norm / (norm + 1e-6))
        for g in grads.values():
            g *= scale
    return norm


def train(train_data: Dataset, val_data: Dataset, cfg: ModelConfig, tcfg: TrainConfig, seed: int,
          styles: Sequence[str], feels: dict[str, str] | None = None, resume: Checkpoint | None = None,
          on_eval: Callable[[CurvePoint], None] | None = None, meta: dict | None = None) -> Checkpoint:
    """Adam training with plateau LR decay and early stopping on validation loss.

    Returns the checkpoint with the best validation loss (its curve covers the
    whole run). Single-threaded BLAS keeps runs bit-reproducible.
    """
    if not len(train_data):
        raise ValueError("empty training set")
    with threadpool_limits(limits=1):
        return _train(train_data, val_data, cfg, tcfg, seed, list(styles), feels or {}, resume, on_eval, meta or {})


def _train(train_data, val_data, cfg, tcfg, seed, styles, feels, resume, on_eval, meta) -> Checkpoint:
    if resume is not None:
        store = resume.store()
        lr = resume.meta.get("lr", tcfg.lr)
        curve = list(resume.curve)
    else:
        store = init_params(cfg, seed)
        lr = tcfg.lr
        curve = []
    rng = Rng(seed).child(f"train/{store.step}")
    lengths = [len(t) for t in train_data.targets]
    validation = val_data if len(val_data) else train_data

    def snapshot(status: str) -> Checkpoint:
        return Checkpoint(cfg, store.snapshot(), styles, feels, store.step,
                          {k: v.copy() for k, v in store.m.items()},
                          {k: v.copy() for k, v in store.v.items()},
                          list(curve), {**meta, "lr": lr, "status": status, "train": tcfg.to_dict()})

    best_loss = min((c.val_loss for c in curve), default=math.inf)
    best = snapshot("initial")
    stale = 0
    running, running_n = 0.0, 0
    epoch = 0
    finished = False
    while not finished:
        for idx in _batches(lengths, tcfg.batch_size, tcfg.bucket_pool, rng.child(f"epoch/{epoch}")):
            batch = train_data.batch(idx)
            store.zero_grad()
            loss, _ = batch_loss(store, cfg, batch, rng if cfg.dropout else None)
            value = float(loss.data)
            if not math.isfinite(value):
                log.error("loss became %s at step %d; returning last good checkpoint", value, store.step)
                best.meta["status"] = "diverged"
                return best
            loss.backward()
            grads = store.grads()
            _clip(grads, tcfg.clip_norm)
            try:
                nm.adam_step(store, grads, lr)
            except nm.NonFiniteGradientError as exc:
                log.error("%s at step %d; returning last good checkpoint", exc, store.step)
                best.meta["status"] = "diverged"
                return best
            running += value
            running_n += 1

            if store.step % tcfg.eval_every == 0 or store.step >= tcfg.max_steps:
                val_loss = evaluate_loss(store, cfg, validation)
                point = CurvePoint(store.step, running / max(running_n, 1), val_loss, lr)
                running, running_n = 0.0, 0
                curve.append(point)
                if on_eval:
                    on_eval(point)
                log.info("step %d train %.4f val %.4f lr %.2e", point.step, point.train_loss, val_loss, lr)
                if val_loss < best_loss - 1e-4:
                    best_loss = val_loss
                    stale = 0
                    best = snapshot("best")
                else:
                    stale += 1
                    if stale >= tcfg.early_stop_patience:
                        finished = True
                    elif stale % tcfg.decay_patience == 0:
                        lr *= tcfg.lr_decay
                if tcfg.target_accuracy is not None and not finished:
                    if dataset_accuracy(store, cfg, train_data) >= tcfg.target_accuracy:
                        best = snapshot("target-accuracy")
                        finished = True
                if store.step >= tcfg.max_steps:
                    finished = True
            if finished:
                break
        epoch += 1
    best.curve = list(curve)
    if best.meta.get("status") == "best" and stale < tcfg.early_stop_patience:
        best.meta["status"] = "max-steps"
    elif best.meta.get("status") == "best":
        best.meta["status"] = "early-stopped"
    return best


def curve_csv(points: Sequence[CurvePoint]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["step", "train_loss", "val_loss", "lr"])
    for c in points:
        w.writerow([c.step, f"{c.train_loss:.6f}", f"{c.val_loss:.6f}", f"{c.lr:.6g}"])
    return buf.getvalue()


# inference

@dataclass
class Translation:
    tokens: list[int]
    anomalies: int
    segment: object


def translate(ckpt: Checkpoint, inputs: Sequence, target_style: str | None, batch_size: int = 32,
              temperature: float | None = None, seed: int = 0) -> list[Translation]:
    """Greedy translation of encoded inputs (piano rolls or token lists)."""
    from .codec import decode_events, detokenize

    cfg = ckpt.config
    style = ckpt.style_id(target_style) if cfg.conditioned else 0
    store = ckpt.store()
    rng = Rng(seed).child("sample") if temperature else None
    out = []
    with threadpool_limits(limits=1):
        for j in range(0, len(inputs), batch_size):
            chunk = list(inputs[j:j + batch_size])
            if cfg.variant == "roll2seq":
                chunk = np.stack([np.asarray(r, dtype=np.float32) for r in chunk])
            for ids in greedy_decode(store, cfg, chunk, style, temperature=temperature, rng=rng):
                res = decode_events(detokenize(ids))
                out.append(Translation(ids, res.anomalies, res.segment))
    return out


def export_style_embeddings(ckpt: Checkpoint) -> str:
    """CSV rows: style, feel, then the style embedding vector."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    table = ckpt.params.get("dec.style")
    dim = 0 if table is None else table.shape[1]
    w.writerow(["style", "feel"] + [f"e{i}" for i in range(dim)])
    if table is None:
        return buf.getvalue()
    for i, name in enumerate(ckpt.styles):
        w.writerow([name, ckpt.feels.get(name, "")] + [f"{float(x):.8g}" for x in table[i]])
    return buf.getvalue()
