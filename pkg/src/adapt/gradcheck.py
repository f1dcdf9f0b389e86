"""Finite-difference gradient suite covering every differentiable op, layer and the full model."""

from __future__ import annotations

import time
from typing import Callable

import numpy as np

from . import tensor as T
from .caption import build_attention_mask, mlm_loss
from .csp import csp_loss
from .nn import FeedForward, LayerNorm, Linear, MultiHeadAttention, TransformerBlock
from .tensor import GradCheckReport, Tensor, grad_check

H, TOL = 1e-5, 1e-4


def _t(rng, *shape, scale=1.0, positive=False):
    x = rng.normal(0.0, scale, size=shape)
    return Tensor(np.abs(x) + 0.5 if positive else x, requires_grad=True)


def _weights(rng, out_shape):
    return rng.normal(size=out_shape)


def _scalar(out: Tensor, w: np.ndarray) -> Tensor:
    # a fixed random projection makes every output coordinate matter
    return (out * w).sum()


def op_cases(rng: np.random.Generator) -> dict[str, Callable[[], GradCheckReport]]:
    """Each case builds fresh inputs from ``rng`` and returns a report."""

    def unary(fn, shape=(3, 4), positive=False):
        x = _t(rng, *shape, positive=positive)
        w = _weights(rng, fn(Tensor(x.data)).shape)
        return grad_check(lambda: _scalar(fn(x), w), [x], H, TOL)

    def binary(fn, sa, sb, positive_b=False):
        a, b = _t(rng, *sa), _t(rng, *sb, positive=positive_b)
        w = _weights(rng, fn(Tensor(a.data), Tensor(b.data)).shape)
        return grad_check(lambda: _scalar(fn(a, b), w), [a, b], H, TOL)

    def layer_norm():
        x, g, b = _t(rng, 2, 3, 6), _t(rng, 6), _t(rng, 6)
        w = _weights(rng, x.shape)
        return grad_check(lambda: _scalar(T.layer_norm(x, g, b), w), [x, g, b], H, TOL)

    def softmax_masked():
        x = _t(rng, 2, 5, 5)
        mask = np.tril(np.ones((5, 5), dtype=bool))
        w = _weights(rng, x.shape)
        return grad_check(lambda: _scalar(T.softmax(x, -1, mask), w), [x], H, TOL)

    def cross_entropy():
        x = _t(rng, 6, 7)
        tgt = rng.integers(0, 7, size=6)
        tgt[1] = T.IGNORE_ID
        return grad_check(lambda: T.cross_entropy(x, tgt), [x], H, TOL)

    def embedding():
        wt = _t(rng, 6, 4)
        ids = np.array([[0, 2, 2], [5, 1, 0]])
        w = _weights(rng, (2, 3, 4))
        return grad_check(lambda: _scalar(T.embedding(wt, ids), w), [wt], H, TOL)

    def getitem_adv():
        x = _t(rng, 4, 5)
        idx = (np.array([0, 2, 2, 3]), np.array([1, 1, 1, 4]))
        w = _weights(rng, (4,))
        return grad_check(lambda: _scalar(x[idx], w), [x], H, TOL)

    def concat():
        a, b = _t(rng, 2, 3), _t(rng, 2, 2)
        w = _weights(rng, (2, 5))
        return grad_check(lambda: _scalar(T.concat([a, b], axis=1), w), [a, b], H, TOL)

    def reused():
        x = _t(rng, 3)
        return grad_check(lambda: (x * x).sum() + (T.exp(x) * x).sum(), [x], H, TOL)

    def csp():
        s = rng.normal(size=(2, 5, 2))
        p = _t(rng, 2, 4, 2)
        return grad_check(lambda: csp_loss(s, p), [p], H, TOL)

    return {
        "add": lambda: binary(T.add, (3, 4), (4,)),
        "sub": lambda: binary(T.sub, (3, 1), (3, 4)),
        "mul": lambda: binary(T.mul, (2, 3, 4), (3, 1)),
        "div": lambda: binary(T.div, (3, 4), (3, 4), positive_b=True),
        "matmul": lambda: binary(T.matmul, (4, 5), (5, 3)),
        "matmul_batched": lambda: binary(T.matmul, (2, 3, 4, 5), (3, 5, 2)),
        "power": lambda: unary(lambda x: T.power(x, 3.0)),
        "exp": lambda: unary(T.exp),
        "log": lambda: unary(T.log, positive=True),
        "sqrt": lambda: unary(T.sqrt, positive=True),
        "tanh": lambda: unary(T.tanh),
        "sigmoid": lambda: unary(T.sigmoid),
        "gelu": lambda: unary(T.gelu),
        "relu": lambda: unary(T.relu),
        "sum_axis": lambda: unary(lambda x: T.sum_(x, axis=1), (3, 4, 2)),
        "mean_keepdims": lambda: unary(lambda x: T.mean(x, axis=(0, 2), keepdims=True), (3, 4, 2)),
        "reshape": lambda: unary(lambda x: x.reshape(4, 3)),
        "transpose": lambda: unary(lambda x: x.transpose(2, 0, 1), (2, 3, 4)),
        "getitem_slice": lambda: unary(lambda x: x[:, 1:3], (3, 4)),
        "getitem_advanced": getitem_adv,
        "concat": concat,
        "embedding": embedding,
        "softmax": lambda: unary(lambda x: T.softmax(x, axis=-1)),
        "softmax_masked": softmax_masked,
        "log_softmax": lambda: unary(lambda x: T.log_softmax(x, axis=0)),
        "layer_norm": layer_norm,
        "cross_entropy": cross_entropy,
        "mse": lambda: unary(lambda x: T.mse(x, np.ones((3, 4)))),
        "csp_loss": csp,
        "reused_tensor": reused,
    }


def layer_cases(rng: np.random.Generator) -> dict[str, Callable[[], GradCheckReport]]:
    def module_case(module, x_shape, call=None):
        x = _t(rng, *x_shape)
        call = call or (lambda inp: module(inp))
        w = _weights(rng, call(Tensor(x.data)).shape)
        return grad_check(lambda: _scalar(call(x), w), [x] + module.parameters(), H, TOL,
                          max_per_tensor=6, rng=rng)

    def attention():
        mha = MultiHeadAttention(8, 2, rng)
        mask = build_attention_mask("default", 2, 2).allowed
        return module_case(mha, (2, 6, 8), lambda inp: mha(inp, mask))

    def mlp():
        l1, l2 = Linear(5, 7, rng, std=0.5), Linear(7, 3, rng, std=0.5)
        x = _t(rng, 4, 5)
        tgt = rng.normal(size=(4, 3))
        params = [x] + l1.parameters() + l2.parameters()
        return grad_check(lambda: T.mse(l2(T.gelu(l1(x))), tgt), params, H, TOL)

    return {
        "linear": lambda: module_case(Linear(5, 3, rng, std=0.5), (4, 5)),
        "layer_norm_module": lambda: module_case(LayerNorm(6), (3, 6)),
        "feed_forward": lambda: module_case(FeedForward(6, 12, rng), (2, 3, 6)),
        "attention_masked": attention,
        "transformer_block": lambda: module_case(TransformerBlock(8, 2, rng), (2, 5, 8)),
        "mlp_2layer": mlp,
    }


def tiny_model_case(mode: str = "joint", seed: int = 0) -> Callable[[], GradCheckReport]:
    """Full model at toy width: joint loss, probed on a sample of every parameter."""
    from .model import AdaptModel, TrainConfig
    from .tokenizer import build_vocab, encode, pad_and_segment
    from .train import mask_tokens
    from .video import patchify

    def run():
        rng = np.random.default_rng(seed)
        cfg = TrainConfig(mode=mode, frames=4, height=32, width=32, base_channels=2, d_text=8, heads=2,
                          video_depth=1, text_depth=1, motion_depth=1, seed=seed)
        vocab = build_vocab(["the car stops", "because the light is red"] * 2)
        model = AdaptModel(cfg, len(vocab), rng)
        # widen the random init so finite differences see non-trivial curvature
        for p in model.parameters():
            if p.ndim >= 2:
                p.data *= 5.0
        B = 2
        frames = rng.random((B, 4, 32, 32, 3))
        seqs = [pad_and_segment(encode("the car stops", vocab), encode("because the light is red", vocab))
                for _ in range(B)]
        ids = np.stack([s.ids for s in seqs])
        valid = np.stack([s.valid for s in seqs])
        seg = np.stack([s.segment_ids for s in seqs])
        masked, targets = zip(*(mask_tokens(ids[i], np.random.default_rng(i), len(vocab), valid[i])
                                for i in range(B)))
        masked, targets = np.stack(masked), np.stack(targets)
        signals = rng.normal(size=(B, 4, 2))
        patches = patchify(frames)

        def loss():
            acts = model.forward(patches, masked, seg, valid, signals if mode == "single_plus" else None)
            total = mlm_loss(acts["caption_logits"], targets)
            if "csp_predictions" in acts:
                total = total + csp_loss(signals, acts["csp_predictions"])
            return total

        return grad_check(loss, model.parameters(), H, TOL, max_per_tensor=3, rng=rng)
    return run


def all_cases(seed: int = 0) -> dict[str, Callable[[], GradCheckReport]]:
    rng = np.random.default_rng(seed)
    cases = {f"op:{k}": v for k, v in op_cases(rng).items()}
    cases.update({f"layer:{k}": v for k, v in layer_cases(rng).items()})
    cases["model:joint"] = tiny_model_case("joint", seed)
    cases["model:single_plus"] = tiny_model_case("single_plus", seed)
    return cases


def run_suite(seed: int = 0, echo: Callable[[str], None] | None = None) -> dict[str, GradCheckReport]:
    results = {}
    start = time.perf_counter()
    for name, case in all_cases(seed).items():
        report = case()
        results[name] = report
        if echo:
            echo(f"{'PASS' if report.passed else 'FAIL'} {name:28s} max_rel_err={report.max_rel_error:.2e}"
                 f" n={report.n_checked}")
    if echo:
        echo(f"{sum(r.passed for r in results.values())}/{len(results)} passed "
             f"in {time.perf_counter() - start:.1f}s")
    return results
