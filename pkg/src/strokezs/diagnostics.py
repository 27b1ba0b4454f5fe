"""Gradient-fidelity diagnostics for every differentiable primitive.

Shared by the grad-check CLI command and the acceptance suite. Each check
compares tape gradients against central finite differences on seeded,
well-conditioned inputs: projection weights stay bounded away from zero
and relu pre-activations away from the kink, since float32 forward
rounding puts a hard floor under the achievable per-element accuracy.
"""

from __future__ import annotations

import numpy as np

from .model import DecoderConfig, EncoderConfig, decode_teacher_forced, encode, init_params, sequence_loss
from .numerics import (
    Tape,
    Tensor,
    add,
    conv2d,
    cross_entropy,
    embedding,
    global_avg_pool,
    grad_check,
    layer_norm,
    linear,
    matmul,
    multi_head_attention,
    relu,
    reshape,
    softmax,
)

LINEAR_TOL = 1e-4
COMPOSED_TOL = 1e-3


def _proj(rng, n, positive=False):
    mag = rng.uniform(0.5, 1.5, (n, 1))
    sign = 1.0 if positive else np.sign(rng.standard_normal((n, 1)))
    return Tensor((sign * mag).astype(np.float32))


def _to_scalar(t, w):
    flat = reshape(t, (1, int(np.prod(t.data.shape))))
    return reshape(matmul(flat, w), ())


def primitive_grad_checks(seed: int = 57) -> list[tuple[str, float, float]]:
    """(name, max relative error, tolerance) for each differentiable primitive."""
    results: list[tuple[str, float, float]] = []
    rng = np.random.default_rng(seed)

    def randn(*shape):
        return Tensor(rng.standard_normal(shape, dtype=np.float32))

    # linear-in-input ops: large steps, tight tolerance
    x = randn(10)
    wx = _proj(rng, 10)
    results.append(("matmul", grad_check(lambda t: _to_scalar(t, wx), x, 0.1), LINEAR_TOL))

    xl2 = randn(3, 5)
    wl = randn(5, 4)
    bl = randn(4)
    pl = _proj(rng, 12)
    results.append(("linear_input", grad_check(lambda t: _to_scalar(linear(t, wl, bl), pl), xl2, 0.1), LINEAR_TOL))
    results.append(("linear_weight", grad_check(lambda t: _to_scalar(linear(xl2, t, bl), pl), wl, 0.1), LINEAR_TOL))
    results.append(("linear_bias", grad_check(lambda t: _to_scalar(linear(xl2, wl, t), pl), bl, 0.1), LINEAR_TOL))

    a = randn(3, 4)
    bias = randn(4)
    pw = _proj(rng, 12, positive=True)
    results.append(("add", grad_check(lambda t: _to_scalar(add(t, bias), pw), a, 0.25), LINEAR_TOL))

    xa = randn(4, 5, 3)
    wa = _proj(rng, 3)
    results.append(
        ("global_avg_pool", grad_check(lambda t: _to_scalar(global_avg_pool(t), wa), xa, 0.25), LINEAR_TOL)
    )

    table = randn(5, 4)
    idx = [0, 3, 3, 1]
    we = _proj(rng, 16)
    results.append(
        ("embedding", grad_check(lambda t: _to_scalar(embedding(t, idx), we), table, 0.25), LINEAR_TOL)
    )

    xr = Tensor(np.where(np.abs(v := rng.standard_normal(12, dtype=np.float32)) < 0.3, v + 0.5, v))
    wr = _proj(rng, 12)
    results.append(("relu", grad_check(lambda t: _to_scalar(relu(t), wr), xr, 1e-2), COMPOSED_TOL))

    xc = randn(6, 6, 2)
    kc = randn(3, 3, 2, 3)
    wc = _proj(rng, 6 * 6 * 3)
    results.append(("conv2d_input", grad_check(lambda t: _to_scalar(conv2d(t, kc), wc), xc, 0.25), COMPOSED_TOL))
    results.append(("conv2d_kernel", grad_check(lambda t: _to_scalar(conv2d(xc, t), wc), kc, 0.25), COMPOSED_TOL))

    xs = randn(2, 5)
    ws = _proj(rng, 10)
    results.append(("softmax", grad_check(lambda t: _to_scalar(softmax(t), ws), xs, 1e-2), COMPOSED_TOL))

    rng_ln = np.random.default_rng(seed)
    xl = Tensor(rng_ln.standard_normal((3, 6), dtype=np.float32))
    gamma = Tensor(np.ones(6, np.float32) + 0.1 * rng_ln.standard_normal(6).astype(np.float32))
    beta = Tensor(rng_ln.standard_normal(6, dtype=np.float32))
    pwl = _proj(rng_ln, 18)
    results.append(
        ("layer_norm", grad_check(lambda t: _to_scalar(layer_norm(t, gamma, beta), pwl), xl, 1e-2), COMPOSED_TOL)
    )

    logits = randn(6)
    results.append(("cross_entropy", grad_check(lambda t: cross_entropy(t, 1), logits, 1e-2), COMPOSED_TOL))

    rng_m = np.random.default_rng(seed)
    d, t_len, s_len = 8, 3, 4
    q = Tensor(rng_m.standard_normal((t_len, d), dtype=np.float32))
    k = Tensor(rng_m.standard_normal((s_len, d), dtype=np.float32))
    vv = Tensor(rng_m.standard_normal((s_len, d), dtype=np.float32))
    wq, wk, wv, wo = (
        Tensor((rng_m.standard_normal((d, d)) / np.sqrt(d)).astype(np.float32)) for _ in range(4)
    )
    pm = _proj(rng_m, t_len * d)
    results.append(
        (
            "multi_head_attention",
            grad_check(lambda tq: _to_scalar(multi_head_attention(tq, k, vv, 2, wq, wk, wv, wo)[0], pm), q, 0.04),
            COMPOSED_TOL,
        )
    )
    return results


# tensors whose gradients flow through the entire encoder+decoder+loss chain
COMPOSED_CHECK_TENSORS = ("enc.stem.w", "enc.block0.c1.w", "dec.embed", "dec.layer0.cross.wq", "dec.out.w")

_WINDOW = 0.05  # parameter-space half-step of the composed finite differences


def _kink_margins(params) -> None:
    # alternating-sign biases push every relu pre-activation several sigma
    # from zero, so the finite-difference window never straddles a kink
    for name, p in params.items():
        if name.startswith("enc.") and name.endswith(".b"):
            half = p.data.size // 2
            p.data[:half] = 2.0
            p.data[half:] = -2.0
        if ".ffn.b1" in name:
            half = p.data.size // 2
            p.data[:half] = 2.5
            p.data[half:] = -2.5


def composed_model_grad_check(seed: int = 2) -> list[tuple[str, float, float]]:
    """Directional finite-difference check of the image-to-loss composition.

    Float32 forward rounding puts a ~1e-5 absolute floor under any loss
    difference, so per-element checks of upstream tensors (whose smallest
    gradient entries sit below that floor) cannot be meaningful. Instead
    each tensor is probed along a few directions partially aligned with
    its analytic gradient: the finite differences stay a fully independent
    oracle of the directional derivative, and the signal stays three
    orders of magnitude above the rounding floor.
    """
    enc = EncoderConfig(channels=8, num_blocks=1)
    dec = DecoderConfig(d_model=8, heads=2, layers=1, max_len=8)
    params = init_params(enc, dec, seed)
    _kink_margins(params)
    rng = np.random.default_rng([seed, 0xC0])
    image = rng.uniform(-1.0, 1.0, (8, 8, 3)).astype(np.float32)
    gold = "13245"
    n_dirs = 4

    def loss_fn():
        fmap = encode(image, params, enc)
        return sequence_loss(decode_teacher_forced(fmap, gold, params, dec), gold)

    results = []
    for name in COMPOSED_CHECK_TENSORS:
        base = params[name].data.copy()
        for p in params.values():
            p.grad = None
        with Tape() as tape:
            tape.backward(loss_fn())
        g = params[name].grad.reshape(-1).astype(np.float64)
        ghat = g / (np.linalg.norm(g) + 1e-30)
        dirs = np.empty((n_dirs, base.size))
        for i in range(n_dirs):
            noise = rng.standard_normal(base.size)
            noise /= np.linalg.norm(noise)
            d = noise + (1.5 if i % 2 == 0 else -1.5) * ghat
            dirs[i] = _WINDOW * d / np.linalg.norm(d)
        dirs_t = Tensor(dirs.astype(np.float32))
        saved = params[name]

        def f(tau, _name=name, _base=base, _dirs=dirs_t, _saved=saved):
            delta = reshape(matmul(reshape(tau, (1, n_dirs)), _dirs), _base.shape)
            params[_name] = add(Tensor(_base), delta)
            try:
                return loss_fn()
            finally:
                params[_name] = _saved

        err = grad_check(f, Tensor(np.zeros(n_dirs, np.float32)), 1.0)
        results.append((f"model.{name}", err, COMPOSED_TOL))
    return results
