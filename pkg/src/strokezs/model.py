"""Encoder-decoder model mapping glyph images to stroke sequences.

The encoder is a small residual CNN that halves the spatial resolution
once and emits a (H/2, W/2, C) feature map. The decoder is a pre-norm
Transformer over the six-symbol stroke vocabulary (five strokes plus the
shared begin/end sentinel 0), cross-attending over the flattened feature
positions. Training uses Adadelta, matching the reference protocol.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import records
from .lexicon import END_CODE, sequence_codes, validate_sequence
from .numerics import (
    Tape,
    Tensor,
    add,
    conv2d,
    cross_entropy,
    embedding,
    global_avg_pool,
    layer_norm,
    linear,
    multi_head_attention,
    relu,
    reshape,
    scale,
)

VOCAB_SIZE = 6  # stroke classes 1..5 plus sentinel 0


@dataclass(frozen=True)
class EncoderConfig:
    channels: int = 64
    num_blocks: int = 4
    downsample_factor: int = 2

    def __post_init__(self):
        if self.channels < 8:
            raise ValueError("encoder channels must be >= 8")
        if self.downsample_factor != 2:
            raise ValueError("downsample factor is fixed at 2")


@dataclass(frozen=True)
class DecoderConfig:
    d_model: int = 64
    heads: int = 4
    layers: int = 2
    vocab: int = VOCAB_SIZE
    max_len: int = 48
    beam_width: int = 1  # hook only; rectification downstream corrects near-misses

    def __post_init__(self):
        if self.vocab != VOCAB_SIZE:
            raise ValueError("vocab is fixed at 6 (five strokes plus sentinel)")
        if self.d_model % self.heads != 0:
            raise ValueError("d_model must be divisible by heads")
        if self.beam_width != 1:
            raise ValueError("only greedy decoding (beam width 1) is implemented")


ModelParams = dict[str, Tensor]


def _param_shapes(enc: EncoderConfig, dec: DecoderConfig, char_classes: int = 0) -> dict[str, tuple]:
    c, d = enc.channels, dec.d_model
    ffn = 4 * d
    shapes: dict[str, tuple] = {
        "enc.stem.w": (3, 3, 3, c),
        "enc.stem.b": (c,),
    }
    for i in range(enc.num_blocks):
        shapes[f"enc.block{i}.c1.w"] = (3, 3, c, c)
        shapes[f"enc.block{i}.c1.b"] = (c,)
        shapes[f"enc.block{i}.c2.w"] = (3, 3, c, c)
        shapes[f"enc.block{i}.c2.b"] = (c,)
    shapes["enc.down.w"] = (3, 3, c, c)
    shapes["enc.down.b"] = (c,)
    shapes["dec.embed"] = (dec.vocab, d)
    shapes["dec.pos"] = (dec.max_len, d)
    shapes["dec.memproj.w"] = (c, d)
    shapes["dec.memproj.b"] = (d,)
    for i in range(dec.layers):
        pre = f"dec.layer{i}"
        shapes[f"{pre}.ln1.g"] = (d,)
        shapes[f"{pre}.ln1.b"] = (d,)
        for nm in ("wq", "wk", "wv", "wo"):
            shapes[f"{pre}.self.{nm}"] = (d, d)
        shapes[f"{pre}.ln2.g"] = (d,)
        shapes[f"{pre}.ln2.b"] = (d,)
        for nm in ("wq", "wk", "wv", "wo"):
            shapes[f"{pre}.cross.{nm}"] = (d, d)
        shapes[f"{pre}.ln3.g"] = (d,)
        shapes[f"{pre}.ln3.b"] = (d,)
        shapes[f"{pre}.ffn.w1"] = (d, ffn)
        shapes[f"{pre}.ffn.b1"] = (ffn,)
        shapes[f"{pre}.ffn.w2"] = (ffn, d)
        shapes[f"{pre}.ffn.b2"] = (d,)
    shapes["dec.lnf.g"] = (d,)
    shapes["dec.lnf.b"] = (d,)
    shapes["dec.out.w"] = (d, dec.vocab)
    shapes["dec.out.b"] = (dec.vocab,)
    if char_classes:
        shapes["head.w"] = (c, char_classes)
        shapes["head.b"] = (char_classes,)
    return shapes


def init_params(
    enc: EncoderConfig, dec: DecoderConfig, seed: int, char_classes: int = 0
) -> ModelParams:
    """Seeded uniform fan-in initialization; name order is canonical."""
    rng = np.random.default_rng([seed, 0x171])
    params: ModelParams = {}
    for name, shape in _param_shapes(enc, dec, char_classes).items():
        if name.endswith(".g"):  # layer-norm gains
            params[name] = Tensor(np.ones(shape, np.float32))
        elif name.endswith(".b"):  # biases and layer-norm shifts
            params[name] = Tensor(np.zeros(shape, np.float32))
        else:
            fan_in = int(np.prod(shape[:-1])) if len(shape) > 1 else shape[0]
            bound = 1.0 / np.sqrt(fan_in)
            params[name] = Tensor(rng.uniform(-bound, bound, shape).astype(np.float32))
    return params


def encode(image, params: ModelParams, config: EncoderConfig) -> Tensor:
    """Image (H, W, 3) in [-1, 1] to a (H/2, W/2, C) feature map.

    Stem conv, one stride-2 downsampling conv, then the residual blocks at
    half resolution; running the blocks after the halving keeps CPU
    training inside the timing budgets without changing the output shape.
    """
    x = image if isinstance(image, Tensor) else Tensor(image)
    if x.data.ndim != 3 or x.data.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) image, got {x.data.shape}")
    h = relu(add(conv2d(x, params["enc.stem.w"]), params["enc.stem.b"]))
    h = relu(add(conv2d(h, params["enc.down.w"], stride=2), params["enc.down.b"]))
    for i in range(config.num_blocks):
        y = relu(add(conv2d(h, params[f"enc.block{i}.c1.w"]), params[f"enc.block{i}.c1.b"]))
        y = add(conv2d(y, params[f"enc.block{i}.c2.w"]), params[f"enc.block{i}.c2.b"])
        h = relu(add(y, h))
    return h


@functools.lru_cache(maxsize=16)
def _sinusoidal_grid(h: int, w: int, d: int) -> np.ndarray:
    """Fixed 2-D positions for the flattened feature grid, shape (h*w, d)."""
    half = d // 2
    pe = np.zeros((h, w, d), np.float32)

    def axis_code(n, dims):
        pos = np.arange(n, dtype=np.float64)[:, None]
        idx = np.arange(0, dims, 2, dtype=np.float64)[None, :]
        angle = pos / np.power(10000.0, idx / dims)
        out = np.zeros((n, dims), np.float64)
        out[:, 0::2] = np.sin(angle)
        out[:, 1::2] = np.cos(angle[:, : out[:, 1::2].shape[1]])
        return out

    rows = axis_code(h, half)
    cols = axis_code(w, d - half)
    pe[:, :, :half] = rows[:, None, :]
    pe[:, :, half:] = cols[None, :, :]
    return pe.reshape(h * w, d).astype(np.float32)


def _memory(feature_map: Tensor, params: ModelParams, dec: DecoderConfig) -> Tensor:
    h, w, c = feature_map.data.shape
    flat = reshape(feature_map, (h * w, c))
    mem = linear(flat, params["dec.memproj.w"], params["dec.memproj.b"])
    return add(mem, Tensor(_sinusoidal_grid(h, w, dec.d_model)))


def _decoder_forward(
    mem: Tensor, tokens: list[int], params: ModelParams, dec: DecoderConfig
) -> tuple[Tensor, Tensor]:
    """Logits (len(tokens), vocab) plus final-layer cross-attention weights."""
    t_len = len(tokens)
    if t_len > dec.max_len:
        raise ValueError(f"decoder input of {t_len} tokens exceeds max_len {dec.max_len}")
    x = add(embedding(params["dec.embed"], tokens), embedding(params["dec.pos"], list(range(t_len))))
    causal = np.triu(np.ones((t_len, t_len), bool), k=1)
    cross_weights = None
    for i in range(dec.layers):
        pre = f"dec.layer{i}"
        ln1 = layer_norm(x, params[f"{pre}.ln1.g"], params[f"{pre}.ln1.b"])
        sa, _ = multi_head_attention(
            ln1, ln1, ln1, dec.heads,
            params[f"{pre}.self.wq"], params[f"{pre}.self.wk"],
            params[f"{pre}.self.wv"], params[f"{pre}.self.wo"],
            mask=causal,
        )
        x = add(x, sa)
        ln2 = layer_norm(x, params[f"{pre}.ln2.g"], params[f"{pre}.ln2.b"])
        ca, cross_weights = multi_head_attention(
            ln2, mem, mem, dec.heads,
            params[f"{pre}.cross.wq"], params[f"{pre}.cross.wk"],
            params[f"{pre}.cross.wv"], params[f"{pre}.cross.wo"],
        )
        x = add(x, ca)
        ln3 = layer_norm(x, params[f"{pre}.ln3.g"], params[f"{pre}.ln3.b"])
        ff = linear(relu(linear(ln3, params[f"{pre}.ffn.w1"], params[f"{pre}.ffn.b1"])),
                    params[f"{pre}.ffn.w2"], params[f"{pre}.ffn.b2"])
        x = add(x, ff)
    final = layer_norm(x, params["dec.lnf.g"], params["dec.lnf.b"])
    return linear(final, params["dec.out.w"], params["dec.out.b"]), cross_weights


def decode_teacher_forced(
    feature_map: Tensor, gold: str, params: ModelParams, config: DecoderConfig
) -> Tensor:
    """Logits for each target step of ``gold`` plus the terminal sentinel step."""
    validate_sequence(gold, max_len=config.max_len - 1)
    tokens = [END_CODE] + sequence_codes(gold)
    logits, _ = _decoder_forward(_memory(feature_map, params, config), tokens, params, config)
    return logits


def sequence_loss(logits: Tensor, gold: str) -> Tensor:
    """Sum of per-step cross-entropies against gold strokes plus the sentinel."""
    targets = sequence_codes(gold) + [END_CODE]
    if logits.data.shape[0] != len(targets):
        raise ValueError(
            f"logit rows {logits.data.shape[0]} != target steps {len(targets)}"
        )
    total = None
    for t, target in enumerate(targets):
        row = reshape(embedding(logits, [t]), (logits.data.shape[1],))
        step = cross_entropy(row, target)
        total = step if total is None else add(total, step)
    return total


def greedy_decode(
    feature_map: Tensor, params: ModelParams, config: DecoderConfig
) -> tuple[str, int, bool]:
    """Argmax decoding until the sentinel or ``max_len`` strokes.

    Returns the stroke string (sentinels excluded), the number of decoder
    steps executed, and whether the sentinel ended the sequence. Argmax
    ties resolve to the lower class code.
    """
    mem = _memory(feature_map, params, config)
    tokens = [END_CODE]
    out: list[int] = []
    steps = 0
    while len(out) < config.max_len:
        logits, _ = _decoder_forward(mem, tokens, params, config)
        steps += 1
        nxt = int(np.argmax(logits.data[-1]))
        if nxt == END_CODE:
            return "".join(map(str, out)), steps, True
        out.append(nxt)
        tokens.append(nxt)
    return "".join(map(str, out)), steps, False


def attention_maps(
    feature_map: Tensor, p: str, params: ModelParams, config: DecoderConfig
) -> np.ndarray:
    """Final-layer cross-attention grids, one per decode step.

    Shape (len(p)+1, heads, H/2, W/2); the extra step is the one that
    emitted the stop symbol. Each per-head map sums to 1.
    """
    h, w, _ = feature_map.data.shape
    tokens = ([END_CODE] + sequence_codes(p)) if p else [END_CODE]
    tokens = tokens[: config.max_len]
    mem = _memory(feature_map, params, config)
    _, weights = _decoder_forward(mem, tokens, params, config)
    return weights.data.transpose(1, 0, 2).reshape(len(tokens), config.heads, h, w)


@dataclass
class AdadeltaState:
    """Per-parameter squared-gradient and squared-update accumulators."""

    rho: float = 0.9
    eps: float = 1e-6
    lr: float = 1.0
    weight_decay: float = 0.0
    step: int = 0
    accum: dict[str, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)

    def ensure(self, params: ModelParams) -> None:
        for name, p in params.items():
            if name not in self.accum:
                self.accum[name] = (
                    np.zeros_like(p.data),
                    np.zeros_like(p.data),
                )


def apply_adadelta(params: ModelParams, state: AdadeltaState) -> None:
    state.ensure(params)
    rho = np.float32(state.rho)
    eps = np.float32(state.eps)
    one_minus = np.float32(1.0 - state.rho)
    for name, p in params.items():
        g = p.grad
        if g is None:
            continue
        eg2, edx2 = state.accum[name]
        eg2 *= rho
        eg2 += one_minus * g * g
        delta = -np.sqrt(edx2 + eps) / np.sqrt(eg2 + eps) * g
        edx2 *= rho
        edx2 += one_minus * delta * delta
        p.data += np.float32(state.lr) * delta
        if state.weight_decay:
            p.data -= np.float32(state.lr * state.weight_decay) * p.data
    state.step += 1


def train_step(
    batch: list[tuple[np.ndarray, str]],
    params: ModelParams,
    state: AdadeltaState,
    enc: EncoderConfig,
    dec: DecoderConfig,
) -> tuple[float, AdadeltaState]:
    """One Adadelta update on the mean sequence loss over ``batch``."""
    if not batch:
        raise ValueError("empty batch")
    for p in params.values():
        p.grad = None
    with Tape() as tape:
        total = None
        for image, gold in batch:
            fmap = encode(image, params, enc)
            logits = decode_teacher_forced(fmap, gold, params, dec)
            loss = sequence_loss(logits, gold)
            total = loss if total is None else add(total, loss)
        mean = scale(total, 1.0 / len(batch))
        tape.backward(mean)
    apply_adadelta(params, state)
    return float(mean.data), state


def char_head_logits(feature_map: Tensor, params: ModelParams) -> Tensor:
    """Class logits from the pooled feature vector (the seen-character head)."""
    if "head.w" not in params:
        raise ValueError("model has no character classification head")
    pooled = reshape(global_avg_pool(feature_map), (1, params["head.w"].data.shape[0]))
    return reshape(linear(pooled, params["head.w"], params["head.b"]), (params["head.b"].data.shape[0],))


def checkpoint_save(
    params: ModelParams,
    state: AdadeltaState,
    path: str | Path,
    enc: EncoderConfig,
    dec: DecoderConfig,
) -> None:
    head_k = params["head.b"].data.shape[0] if "head.b" in params else 0
    tensors: dict[str, np.ndarray] = {
        "config": np.array(
            [enc.channels, enc.num_blocks, dec.d_model, dec.heads, dec.layers,
             dec.vocab, dec.max_len, head_k],
            np.float32,
        ),
        "opt/meta": np.array(
            [state.rho, state.eps, state.lr, state.weight_decay, state.step], np.float32
        ),
    }
    for name, p in params.items():
        tensors[f"param/{name}"] = p.data
    for name, (eg2, edx2) in state.accum.items():
        tensors[f"opt/eg2/{name}"] = eg2
        tensors[f"opt/edx2/{name}"] = edx2
    records.write_records(path, tensors)


def checkpoint_load(
    path: str | Path,
    expect_enc: EncoderConfig | None = None,
    expect_dec: DecoderConfig | None = None,
) -> tuple[ModelParams, AdadeltaState, EncoderConfig, DecoderConfig]:
    """Round-trips bit-exactly; raises on any config or name mismatch."""
    tensors = records.read_records(path)
    if "config" not in tensors:
        raise records.RecordError(f"{path}: missing config tensor")
    cfg = tensors["config"].astype(int).tolist()
    enc = EncoderConfig(channels=cfg[0], num_blocks=cfg[1])
    dec = DecoderConfig(d_model=cfg[2], heads=cfg[3], layers=cfg[4], vocab=cfg[5], max_len=cfg[6])
    head_k = cfg[7]

    shapes = _param_shapes(expect_enc or enc, expect_dec or dec, head_k)
    params: ModelParams = {}
    for name, shape in shapes.items():
        key = f"param/{name}"
        if key not in tensors:
            raise records.RecordError(f"{path}: missing tensor {name!r}")
        arr = tensors[key]
        if arr.shape != shape:
            raise records.RecordError(
                f"{path}: tensor {name!r} has shape {arr.shape}, config requires {shape}"
            )
        params[name] = Tensor(arr)
    known = {f"param/{n}" for n in shapes}
    for key in tensors:
        if key.startswith("param/") and key not in known:
            raise records.RecordError(f"{path}: unknown tensor {key[6:]!r} for this config")
    # shape-preserving differences (e.g. head count) still refuse to load
    if expect_enc is not None and expect_enc != enc:
        raise records.RecordError(f"{path}: checkpoint encoder config {enc} != expected {expect_enc}")
    if expect_dec is not None and expect_dec != dec:
        raise records.RecordError(f"{path}: checkpoint decoder config {dec} != expected {expect_dec}")

    meta = tensors["opt/meta"]
    state = AdadeltaState(
        rho=float(meta[0]), eps=float(meta[1]), lr=float(meta[2]),
        weight_decay=float(meta[3]), step=int(meta[4]),
    )
    for name in shapes:
        ek, dk = f"opt/eg2/{name}", f"opt/edx2/{name}"
        if ek in tensors and dk in tensors:
            state.accum[name] = (tensors[ek], tensors[dk])
    return params, state, enc, dec
