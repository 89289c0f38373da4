"""Central finite-difference gradient checking.

Every differentiable primitive is checked on three shapes in float64 with
step 1e-4. Non-scalar outputs are reduced with a fixed random projection so
that every output element contributes to the checked scalar.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Dict, List

import numpy as np

from . import nn, ops
from .tensor import Tensor, backward, no_grad

STEP = 1e-4
TOLERANCE = 1e-4
# Denominator floor at STEP, scaled by max(1, |loss|) and by STEP / step.
# Float64 central differences carry roughly 1e-16 * |loss| / step of
# round-off, so gradients that are exactly zero (e.g. a conv bias feeding
# instance_norm) would otherwise report noise / noise.
REL_FLOOR = 1e-6


@dataclass
class GradCheckResult:
    name: str
    max_rel_err: float
    coords_checked: int

    @property
    def ok(self) -> bool:
        return self.max_rel_err < TOLERANCE


def rel_err(analytic: float, numeric: float, loss_scale: float = 1.0, step: float = STEP) -> float:
    floor = REL_FLOOR * (STEP / step) * max(1.0, abs(loss_scale))
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def check_gradients(name: str, fn: Callable[[], Tensor], inputs: Dict[str, Tensor],
                    rng: np.random.Generator, max_coords: int = 200, step: float = STEP) -> GradCheckResult:
    """Compare backward() gradients of ``fn()`` with central differences.

    At most ``max_coords`` coordinates (sampled without replacement across
    all inputs) are perturbed.
    """
    for t in inputs.values():
        t.grad = None
    loss = fn()
    backward(loss)
    loss_scale = loss.item()
    analytic = {k: (t.grad if t.grad is not None else np.zeros_like(t.data)) for k, t in inputs.items()}

    coords = [(k, i) for k, t in inputs.items() for i in range(t.size)]
    if len(coords) > max_coords:
        picks = rng.choice(len(coords), size=max_coords, replace=False)
        coords = [coords[j] for j in sorted(picks)]

    worst = 0.0
    with no_grad():
        for k, i in coords:
            flat = inputs[k].data.reshape(-1)
            orig = flat[i]
            flat[i] = orig + step
            up = fn().item()
            flat[i] = orig - step
            down = fn().item()
            flat[i] = orig
            numeric = (up - down) / (2 * step)
            worst = max(worst, rel_err(float(analytic[k].reshape(-1)[i]), numeric, loss_scale, step))
    return GradCheckResult(name, worst, len(coords))


def projected(out: Tensor, rng: np.random.Generator) -> Callable[[Tensor], Tensor]:
    proj = Tensor(rng.normal(size=out.shape))
    return lambda y: ops.sum(ops.mul(y, proj))


def away_from_zero(rng: np.random.Generator, shape, margin: float = 0.05) -> np.ndarray:
    """Normal samples pushed at least ``margin`` away from 0 (kink-safe for relu-type ops)."""
    x = rng.normal(size=shape)
    return np.sign(x) * (np.abs(x) + margin)


def _leaf(arr) -> Tensor:
    return Tensor(np.asarray(arr, dtype=np.float64), requires_grad=True)


def _unary_case(name, op, rng, shape, kink_safe=False):
    x = _leaf(away_from_zero(rng, shape) if kink_safe else rng.normal(size=shape))
    p = projected(op(x), rng)
    return check_gradients(name, lambda: p(op(x)), {"x": x}, rng)


def _conv_case(rng, n, cin, cout, h, w, k, stride, pad):
    x = _leaf(rng.normal(size=(n, cin, h, w)))
    wt = _leaf(rng.normal(size=(cout, cin, k, k)))
    b = _leaf(rng.normal(size=(cout,)))
    f = lambda: ops.conv2d(x, wt, b, stride, pad)  # noqa: E731
    p = projected(f(), rng)
    return check_gradients(f"conv2d k{k} s{stride} p{pad}", lambda: p(f()), {"x": x, "w": wt, "b": b}, rng)


def _convt_case(rng, n, cin, cout, h, w, k, stride, pad, op):
    x = _leaf(rng.normal(size=(n, cin, h, w)))
    wt = _leaf(rng.normal(size=(cin, cout, k, k)))
    b = _leaf(rng.normal(size=(cout,)))
    f = lambda: ops.conv_transpose2d(x, wt, b, stride, pad, op)  # noqa: E731
    p = projected(f(), rng)
    return check_gradients(f"conv_transpose2d k{k} s{stride} p{pad}", lambda: p(f()),
                           {"x": x, "w": wt, "b": b}, rng)


def _binary_case(name, op, rng, shape):
    a = _leaf(rng.normal(size=shape))
    b = _leaf(rng.normal(size=shape))
    p = projected(op(a, b), rng)
    return check_gradients(name, lambda: p(op(a, b)), {"a": a, "b": b}, rng)


def _loss_case(name, op, rng, shape):
    a = _leaf(rng.normal(size=shape))
    # keep |a - b| well above the step so l1's kink is never crossed
    b = _leaf(a.data - away_from_zero(rng, shape))
    return check_gradients(name, lambda: op(a, b), {"a": a, "b": b}, rng)


def _residual_case(rng, n, c, h, w):
    x = _leaf(rng.normal(size=(n, c, h, w)))
    params = {
        "conv1.weight": _leaf(rng.normal(scale=0.5, size=(c, c, 3, 3))),
        "conv1.bias": _leaf(rng.normal(size=(c,))),
        "conv2.weight": _leaf(rng.normal(scale=0.5, size=(c, c, 3, 3))),
        "conv2.bias": _leaf(rng.normal(size=(c,))),
    }
    f = lambda: nn.residual_block(x, params)  # noqa: E731
    p = projected(f(), rng)
    return check_gradients(f"residual_block {c}x{h}x{w}", lambda: p(f()), {"x": x, **params}, rng)


def _composite_case(rng, n, c, h, w):
    """conv -> instance_norm -> relu -> conv -> mse against a fixed target."""
    x = _leaf(rng.normal(size=(n, c, h, w)))
    w1 = _leaf(rng.normal(scale=0.5, size=(4, c, 3, 3)))
    b1 = _leaf(rng.normal(size=(4,)))
    w2 = _leaf(rng.normal(scale=0.5, size=(2, 4, 3, 3)))
    b2 = _leaf(rng.normal(size=(2,)))
    target = Tensor(rng.normal(size=(n, 2, h, w)))

    def f():
        y = ops.conv2d(x, w1, b1, 1, 1)
        y = ops.relu(ops.instance_norm(y))
        y = ops.conv2d(y, w2, b2, 1, 1)
        return ops.mse_loss(y, target)

    return check_gradients(f"conv-norm-relu-conv-mse {c}x{h}x{w}", f,
                           {"x": x, "w1": w1, "b1": b1, "w2": w2, "b2": b2}, rng)


def op_suite(seed: int = 0) -> List[GradCheckResult]:
    """Finite-difference checks for every primitive, three shapes each."""
    rng = np.random.default_rng(seed)
    results = []
    for args in [(1, 2, 3, 6, 6, 3, 1, 1), (2, 3, 4, 8, 7, 3, 2, 1), (1, 1, 2, 9, 9, 4, 2, 2)]:
        results.append(_conv_case(rng, *args))
    for args in [(1, 2, 3, 4, 4, 3, 2, 1, 1), (2, 3, 2, 3, 5, 2, 2, 0, 0), (1, 2, 2, 5, 5, 3, 1, 1, 0)]:
        results.append(_convt_case(rng, *args))
    for shape in [(1, 2, 4, 4), (2, 3, 5, 3), (1, 1, 2, 1)]:
        results.append(_unary_case(f"instance_norm {shape}", ops.instance_norm, rng, shape))
    for shape in [(1, 1, 4, 4), (2, 3, 2, 6), (1, 2, 8, 8)]:
        results.append(_unary_case(f"avg_downsample2 {shape}", ops.avg_downsample2, rng, shape))
    for shape in [(5,), (2, 3, 4, 4), (1, 1, 7, 2)]:
        results.append(_unary_case(f"relu {shape}", ops.relu, rng, shape, kink_safe=True))
        results.append(_unary_case(f"leaky_relu {shape}", lambda x: ops.leaky_relu(x, 0.2), rng, shape,
                                   kink_safe=True))
        results.append(_unary_case(f"tanh {shape}", ops.tanh, rng, shape))
        results.append(_unary_case(f"scale {shape}", lambda x: ops.scale(x, -1.5), rng, shape))
        results.append(_unary_case(f"mean {shape}", ops.mean, rng, shape))
        results.append(_unary_case(f"sum {shape}", ops.sum, rng, shape))
        results.append(_binary_case(f"add {shape}", ops.add, rng, shape))
        results.append(_binary_case(f"sub {shape}", ops.sub, rng, shape))
        results.append(_binary_case(f"mul {shape}", ops.mul, rng, shape))
        results.append(_loss_case(f"l1_loss {shape}", ops.l1_loss, rng, shape))
        results.append(_loss_case(f"mse_loss {shape}", ops.mse_loss, rng, shape))
    for shape in [(1, 2, 3, 3), (2, 1, 2, 4), (1, 3, 1, 5)]:
        results.append(_binary_case(f"concat {shape}", lambda a, b: ops.concat([a, b], 1), rng, shape))
    for args in [(1, 2, 4, 4), (2, 3, 5, 5), (1, 4, 3, 6)]:
        results.append(_residual_case(rng, *args))
    for args in [(1, 1, 5, 5), (2, 2, 4, 6), (1, 3, 6, 6)]:
        results.append(_composite_case(rng, *args))
    return results
