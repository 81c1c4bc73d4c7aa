"""Finite-difference verification of every differentiable operation and of
the three models end to end.

Each per-op check wraps the operation in a smooth scalar (mean of squares of
the shifted output) and compares the taped gradient against central
differences. Inputs for kink-bearing ops (ReLU, L1, min/max) are kept at
least 1e-3 away from their kinks. Model checks run in parameter space: one
backward pass supplies analytic gradients for every parameter entry, each of
which is then verified by a two-sided loss evaluation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, grad_check
from .graphs import devectorize
from .layers import gtb_forward, graph_norm, init_gtb, init_graph_norm
from .models import build_model

OP_THRESHOLD = 1e-6
MODEL_THRESHOLD = 1e-4
CHECK_INSTANCE = (6, 8)  # n_s, n_t for whole-model checks


@dataclass
class CheckResult:
    name: str
    error: float
    threshold: float

    @property
    def passed(self) -> bool:
        return self.error < self.threshold


def _sq_mean(y: Tensor, offset: np.ndarray) -> Tensor:
    """Smooth scalarizer: mean((y + offset)^2), kink-free everywhere."""
    shifted = ad.add(y, Tensor(offset))
    return ad.l1_loss(ad.mul(shifted, shifted), Tensor(np.zeros(shifted.shape)))


def _away_from_zero(x: np.ndarray, margin: float = 0.5) -> np.ndarray:
    return x + margin * np.sign(x) + (x == 0) * margin


def run_op_checks(seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    results = []

    def check(name, f, x, threshold=OP_THRESHOLD):
        results.append(CheckResult(name, grad_check(f, Tensor(x)), threshold))

    b = rng.standard_normal((4, 2))
    c32 = rng.standard_normal((3, 2))
    check("matmul/lhs", lambda x: _sq_mean(ad.matmul(x, Tensor(b)), c32), rng.standard_normal((3, 4)))
    a34 = rng.standard_normal((3, 4))
    check("matmul/rhs", lambda x: _sq_mean(ad.matmul(Tensor(a34), x), c32), rng.standard_normal((4, 2)))
    c43 = rng.standard_normal((4, 3))
    check("transpose", lambda x: _sq_mean(ad.transpose(x), c43), rng.standard_normal((3, 4)))

    v5 = rng.standard_normal(5)
    c5 = rng.standard_normal(5)
    check("add", lambda x: _sq_mean(ad.add(x, Tensor(v5)), c5), rng.standard_normal(5))
    check("sub", lambda x: _sq_mean(ad.sub(x, Tensor(v5)), c5), rng.standard_normal(5))
    check("mul", lambda x: _sq_mean(ad.mul(x, Tensor(v5)), c5), rng.standard_normal(5))
    check("scale", lambda x: _sq_mean(ad.scale(x, 2.0), c5), rng.standard_normal(5))
    check("add_const", lambda x: _sq_mean(ad.add_const(x, 0.7), c5), rng.standard_normal(5))
    check("sqrt", lambda x: _sq_mean(ad.sqrt(x), c5), rng.uniform(0.5, 2.0, 5))
    check("relu", lambda x: _sq_mean(ad.relu(x), c5), _away_from_zero(rng.standard_normal(5)))
    check("reshape", lambda x: _sq_mean(ad.reshape(x, (2, 3)), c32.T), rng.standard_normal(6))

    spread = rng.permutation(6) * 0.7 + rng.uniform(-0.2, 0.2, 6)  # distinct entries
    c6 = rng.standard_normal(6)
    check("reduce_min", lambda x: _sq_mean(ad.reshape(ad.reduce_min(x), (1,)), c6[:1]), spread)
    check("reduce_max", lambda x: _sq_mean(ad.reshape(ad.reduce_max(x), (1,)), c6[:1]), spread)
    s_const = Tensor(np.array(1.7))
    check("sub_scalar", lambda x: _sq_mean(ad.sub_scalar(x, s_const), c6), rng.standard_normal(6))
    check("div_scalar", lambda x: _sq_mean(ad.div_scalar(x, s_const), c6), rng.standard_normal(6))
    check(
        "div_scalar/scalar",
        lambda x: _sq_mean(ad.div_scalar(Tensor(c6), ad.reshape(x, ())), np.zeros(6)),
        np.array([1.3]),
    )
    check("minmax_scale", lambda x: _sq_mean(ad.minmax_scale(x), c6), spread)

    idx = np.array([0, 2, 2, 1])
    c42 = rng.standard_normal((4, 2))
    check("gather_rows", lambda x: _sq_mean(ad.gather_rows(x, idx), c42), rng.standard_normal((3, 2)))
    flat_idx = np.array([0, 3, 5, 7])
    c4 = rng.standard_normal(4)
    check("take_flat", lambda x: _sq_mean(ad.take_flat(x, flat_idx), c4), rng.standard_normal((2, 4)))
    seg = np.array([0, 0, 1, 2])
    check("segment_sum", lambda x: _sq_mean(ad.segment_sum(x, seg, 3), c32), rng.standard_normal((4, 2)))
    e42 = rng.standard_normal((4, 2))
    check("row_dot", lambda x: _sq_mean(ad.row_dot(x, Tensor(e42)), c4), rng.standard_normal((4, 2)))
    s4 = rng.standard_normal(4)
    check("scale_rows/rows", lambda x: _sq_mean(ad.scale_rows(x, Tensor(s4)), c42), rng.standard_normal((4, 2)))
    check("scale_rows/scales", lambda x: _sq_mean(ad.scale_rows(Tensor(e42), x), c42), rng.standard_normal(4))
    v2 = rng.standard_normal(2)
    check("outer_vec/coeffs", lambda x: _sq_mean(ad.outer_vec(x, Tensor(v2)), c42), rng.standard_normal(4))
    check("outer_vec/vector", lambda x: _sq_mean(ad.outer_vec(Tensor(s4), x), c42), rng.standard_normal(2))
    c44 = rng.standard_normal((4, 4))
    check(
        "symmetric_from_upper",
        lambda x: _sq_mean(ad.symmetric_from_upper(x, 4), c44),
        rng.standard_normal(6),
    )

    seg2 = np.array([0, 0, 1, 1, 1])
    check("segment_softmax", lambda x: _sq_mean(ad.segment_softmax(x, seg2), c5), rng.standard_normal(5))

    parts_const = [Tensor(rng.standard_normal((3, 2))) for _ in range(2)]
    c37 = rng.standard_normal((3, 7))
    check(
        "concat_features",
        lambda x: _sq_mean(ad.concat_features([parts_const[0], x, parts_const[1]]), c37),
        rng.standard_normal((3, 3)),
    )

    c3 = rng.standard_normal(3)
    def mean_var_scalar(x):
        mean, var = ad.feature_mean_var(x)
        return ad.add(_sq_mean(mean, c3), _sq_mean(var, c3))
    check("feature_mean_var", mean_var_scalar, rng.standard_normal((4, 3)))

    v3 = rng.uniform(0.5, 1.5, 3)
    c43b = rng.standard_normal((4, 3))
    check("add_rowvec", lambda x: _sq_mean(ad.add_rowvec(x, Tensor(v3)), c43b), rng.standard_normal((4, 3)))
    check("sub_rowvec", lambda x: _sq_mean(ad.sub_rowvec(x, Tensor(v3)), c43b), rng.standard_normal((4, 3)))
    check("mul_rowvec", lambda x: _sq_mean(ad.mul_rowvec(x, Tensor(v3)), c43b), rng.standard_normal((4, 3)))
    check("div_rowvec", lambda x: _sq_mean(ad.div_rowvec(x, Tensor(v3)), c43b), rng.standard_normal((4, 3)))
    x43 = rng.standard_normal((4, 3))
    check("mul_rowvec/vector", lambda v: _sq_mean(ad.mul_rowvec(Tensor(x43), v), c43b), v3)
    check("div_rowvec/vector", lambda v: _sq_mean(ad.div_rowvec(Tensor(x43), v), c43b), v3)

    target = rng.standard_normal(7)
    check("l1_loss", lambda x: ad.l1_loss(x, Tensor(target)), _away_from_zero(rng.standard_normal(7)) + target)

    norm_params = init_graph_norm("check_norm", 3)
    norm_params.mean_scale.values[:] = rng.uniform(0.5, 1.5, 3)
    norm_params.gain.values[:] = rng.uniform(0.5, 1.5, 3)
    norm_params.bias.values[:] = rng.standard_normal(3)
    check("graph_norm", lambda x: _sq_mean(graph_norm(norm_params, x), c43b), rng.standard_normal((4, 3)))

    gtb = init_gtb("check_gtb", d_in=3, d_out=2, num_heads=2, rng=rng)
    src = np.array([0, 1, 2, 3, 1, 0])
    dst = np.array([1, 0, 3, 2, 2, 3])
    wts = rng.uniform(0.2, 1.0, 6)
    c42b = rng.standard_normal((4, 2))
    check(
        "gtb_block",
        lambda x: _sq_mean(gtb_forward(gtb, x, src, dst, wts), c42b),
        rng.standard_normal((4, 3)),
        MODEL_THRESHOLD,
    )

    return results


def model_grad_check(model, a_s: np.ndarray, a_t: np.ndarray, h: float = 1e-5) -> float:
    """Parameter-space finite-difference check of forward + loss."""
    model.zero_grad()
    out = model.forward(a_s, training=False)
    loss = model.loss(out, a_t, a_s)
    out.tape.backward(loss)
    analytic = {p.name: p.grad.copy() for p in model.parameters()}
    model.zero_grad()

    def loss_value() -> float:
        result = model.forward(a_s, training=False)
        return float(model.loss(result, a_t, a_s).values)

    worst = 0.0
    for p in model.parameters():
        flat = p.values.ravel()
        grad = analytic[p.name].ravel()
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + h
            fp = loss_value()
            flat[k] = orig - h
            fm = loss_value()
            flat[k] = orig
            numeric = (fp - fm) / (2.0 * h)
            rel = abs(grad[k] - numeric) / max(1.0, abs(numeric))
            worst = max(worst, rel)
    return worst


def input_grad_check(model, a_s: np.ndarray, a_t: np.ndarray, h: float = 1e-5) -> float:
    """Finite-difference check of forward + loss as a function of the input."""

    def f(xt):
        out = model.forward(xt, training=False)
        return model.loss(out, a_t, a_s)

    return grad_check(f, Tensor(a_s), h)


def _check_instance(seed: int):
    n_s, n_t = CHECK_INSTANCE
    rng = np.random.default_rng(seed)

    def sample(n):
        return devectorize(rng.uniform(0.05, 0.95, n * (n - 1) // 2), n)

    return sample(n_s), sample(n_t)


def run_model_checks(seed: int = 7) -> list[CheckResult]:
    a_s, a_t = _check_instance(seed)
    results = []
    for kind in ("stp_gsr", "direct_sr", "autoencoder"):
        model = build_model(kind, *CHECK_INSTANCE, seed=seed)
        err = model_grad_check(model, a_s, a_t)
        results.append(CheckResult(f"model/{kind}", err, MODEL_THRESHOLD))
    stp = build_model("stp_gsr", *CHECK_INSTANCE, seed=seed)
    results.append(
        CheckResult("model/stp_gsr/input", input_grad_check(stp, a_s, a_t), MODEL_THRESHOLD)
    )
    return results
