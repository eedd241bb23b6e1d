"""Finite-difference verification of the reverse-mode gradients.

Compares the backward pass of a scalar-valued function against central
finite differences at 64-bit precision. Never raises on a bad gradient;
the report carries the failure.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .tensor import no_grad


@dataclass
class GradcheckReport:
    name: str
    tolerance: float
    max_rel_error: float = 0.0
    worst_input: int = -1
    worst_index: tuple = ()
    passed: bool = True
    per_input: list = field(default_factory=list)

    def __str__(self):
        status = "pass" if self.passed else "FAIL"
        return (
            f"{self.name}: max relative error {self.max_rel_error:.3e} "
            f"(tolerance {self.tolerance:.0e}) -> {status}"
        )


def gradcheck(fn, inputs, tolerance=1e-4, step=1e-5, name="op", max_entries=None, rng=None):
    """Check d(fn)/d(inputs) against central finite differences.

    fn must map the given Tensors to a scalar Tensor. All inputs must be
    float64 (finite differences need the headroom). When ``max_entries`` is
    set, at most that many coordinates per input are probed (uniformly
    sampled with ``rng``); otherwise every coordinate is probed.
    """
    inputs = list(inputs)
    for t in inputs:
        if t.dtype != np.float64:
            raise ConfigError(f"gradcheck requires float64 inputs, got {t.dtype}")
        t.requires_grad = True
        t.zero_grad()

    out = fn(*inputs)
    if out.size != 1:
        raise ConfigError(f"gradcheck target must be scalar, got shape {out.shape}")
    out.backward()
    analytic = [
        np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in inputs
    ]

    report = GradcheckReport(name=name, tolerance=tolerance)
    for k, t in enumerate(inputs):
        flat = t.data.reshape(-1)
        n = flat.size
        if max_entries is not None and n > max_entries:
            if rng is None:
                rng = np.random.default_rng(0)
            coords = rng.choice(n, size=max_entries, replace=False)
        else:
            coords = range(n)
        worst = 0.0
        worst_idx = ()
        for i in coords:
            orig = flat[i]
            with no_grad():
                flat[i] = orig + step
                f_plus = fn(*inputs).item()
                flat[i] = orig - step
                f_minus = fn(*inputs).item()
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * step)
            a = analytic[k].reshape(-1)[i]
            rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-6)
            if rel > worst:
                worst = rel
                worst_idx = np.unravel_index(i, t.shape)
        report.per_input.append(worst)
        if worst > report.max_rel_error:
            report.max_rel_error = worst
            report.worst_input = k
            report.worst_index = worst_idx
    report.passed = report.max_rel_error < tolerance
    return report


def _distinct_field(rng, shape, scale=0.01):
    """Values with pairwise gaps >= scale, safe for argmax-routing ops."""
    n = int(np.prod(shape))
    return (rng.permutation(n).astype(np.float64) * scale).reshape(shape)


def standard_suite(seed=0, include_models=True):
    """Gradient checks for every differentiable op the models use, plus the
    full single-frame and temporal forward passes through the Dice loss.

    Returns a list of GradcheckReports. Everything runs at 64-bit.
    """
    from . import tensor as T
    from .models import build_model, default_config
    from .training import dice_loss

    rng = np.random.default_rng(seed)
    f64 = np.float64

    def t(arr):
        return T.Tensor(np.asarray(arr, dtype=f64))

    def weighted_sum(shape):
        # fixed random weighting makes every coordinate's gradient generic
        wgt = t(rng.normal(size=shape))
        return lambda out: T.tsum(T.mul(out, wgt))

    reports = []

    x = t(rng.normal(size=(6, 6, 2)))
    w = t(rng.normal(size=(3, 3, 2, 4)))
    m = weighted_sum((6, 6, 4))
    reports.append(gradcheck(
        lambda a, b: m(T.conv2d(a, b, stride=1, padding=1)), [x, w], name="conv2d"))

    x3 = t(rng.normal(size=(3, 6, 6, 2)))
    w3 = t(rng.normal(size=(3, 3, 3, 2, 3)))
    m3 = weighted_sum((1, 4, 4, 3))
    reports.append(gradcheck(
        lambda a, b: m3(T.conv3d(a, b)), [x3, w3], name="conv3d"))

    xb = t(rng.normal(size=(2, 4, 4, 3)))
    gamma = t(1.0 + 0.3 * rng.normal(size=3))
    beta = t(0.1 * rng.normal(size=3))
    mb = weighted_sum((2, 4, 4, 3))
    reports.append(gradcheck(
        lambda a, g, b: mb(T.batchnorm(a, g, b)), [xb, gamma, beta], name="batchnorm"))

    xr = t(rng.normal(size=(5, 5)))
    mr = weighted_sum((5, 5))
    reports.append(gradcheck(lambda a: mr(T.relu(a)), [xr], name="relu"))

    xs = t(rng.normal(size=(5, 5)))
    ms = weighted_sum((5, 5))
    reports.append(gradcheck(lambda a: ms(T.sigmoid(a)), [xs], name="sigmoid"))

    xm = t(_distinct_field(rng, (6, 6, 2)))
    mm = weighted_sum((3, 3, 2))
    reports.append(gradcheck(lambda a: mm(T.maxpool2(a)), [xm], name="maxpool2"))

    xu = t(rng.normal(size=(3, 3, 2)))
    mu = weighted_sum((6, 6, 2))
    reports.append(gradcheck(lambda a: mu(T.upsample2(a)), [xu], name="upsample2"))

    xa = t(rng.normal(size=(4, 4, 2)))
    xb2 = t(rng.normal(size=(4, 4, 2)))
    ma = weighted_sum((4, 4, 2))
    reports.append(gradcheck(
        lambda a, b: ma(T.add(a, b)), [xa, xb2], name="add"))

    xc1 = t(rng.normal(size=(4, 4, 2)))
    xc2 = t(rng.normal(size=(4, 4, 3)))
    mc = weighted_sum((4, 4, 5))
    reports.append(gradcheck(
        lambda a, b: mc(T.concat_channels(a, b)), [xc1, xc2], name="concat"))

    xp = t(rng.normal(size=(1, 4, 4, 3)))
    mp = weighted_sum((1, 6, 6, 3))
    reports.append(gradcheck(
        lambda a: mp(T.zero_pad_spatial(a, 1)), [xp], name="zero_pad_spatial"))

    pred = t(rng.uniform(0.05, 0.95, size=(8, 8, 1)))
    target = (rng.random((8, 8, 1)) > 0.5).astype(f64)
    reports.append(gradcheck(
        lambda a: dice_loss(a, target), [pred], name="dice_loss"))

    if include_models:
        for variant, tol in (("m1", 1e-3), ("M1", 1e-3)):
            config = default_config(variant, size=16)
            model = build_model(config, seed=seed, dtype=f64)
            shape = (3, 16, 16, 3) if config.is_temporal else (16, 16, 3)
            xi = t(rng.uniform(0.0, 1.0, size=shape))
            tgt = (rng.random((16, 16, 1)) > 0.5).astype(f64)
            reports.append(gradcheck(
                lambda a: dice_loss(model(a), tgt), [xi],
                tolerance=tol, name=f"{variant}_forward_dice"))
    return reports
