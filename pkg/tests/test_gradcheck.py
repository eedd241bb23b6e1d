"""Reverse-mode gradients against central finite differences."""

import numpy as np
import pytest

from lumenseg import tensor as T
from lumenseg.errors import ConfigError
from lumenseg.gradcheck import _distinct_field, gradcheck, standard_suite
from lumenseg.tensor import Tensor
from lumenseg.training import dice_loss


def t64(arr):
    return Tensor(np.asarray(arr, dtype=np.float64))


def test_linear_op_is_nearly_exact():
    rng = np.random.default_rng(0)
    w = t64(rng.normal(size=(7,)))
    x = t64(rng.normal(size=(7,)))
    report = gradcheck(lambda a: T.tsum(T.mul(a, w)), [x], name="linear")
    assert report.max_rel_error < 1e-10


def test_gradcheck_requires_float64():
    x = Tensor(np.ones(3, dtype=np.float32))
    with pytest.raises(ConfigError):
        gradcheck(lambda a: T.tsum(a), [x])


def test_gradcheck_flags_wrong_gradient():
    # a deliberately wrong backward: relu pretending to be identity
    def broken(a):
        out = Tensor(np.maximum(a.data, 0))
        out.requires_grad = True
        out._prev = (a,)
        out._backward = lambda g: a._accumulate(g)  # wrong for a < 0
        return T.tsum(out)

    x = t64([-1.0, -2.0, 3.0])
    report = gradcheck(broken, [x], name="broken")
    assert not report.passed


SEEDS = range(20)


@pytest.mark.parametrize("seed", SEEDS)
def test_op_gradients_randomized(seed):
    """Every op matches finite differences within 1e-4 across 20 seeds."""
    rng = np.random.default_rng(seed)

    def t(a):
        return t64(a)

    def wsum(shape):
        w = t(rng.normal(size=shape))
        return lambda out: T.tsum(T.mul(out, w))

    checks = []

    x = t(rng.normal(size=(5, 4, 2)))
    w = t(rng.normal(size=(3, 3, 2, 3)))
    m = wsum((5, 4, 3))
    checks.append(gradcheck(lambda a, b: m(T.conv2d(a, b, 1, 1)), [x, w], name="conv2d"))

    x3 = t(rng.normal(size=(3, 5, 5, 2)))
    w3 = t(rng.normal(size=(3, 3, 3, 2, 2)))
    m3 = wsum((1, 3, 3, 2))
    checks.append(gradcheck(lambda a, b: m3(T.conv3d(a, b)), [x3, w3], name="conv3d"))

    xb = t(rng.normal(size=(4, 4, 2)))
    g = t(1.0 + 0.2 * rng.normal(size=2))
    be = t(0.1 * rng.normal(size=2))
    mb = wsum((4, 4, 2))
    checks.append(gradcheck(lambda a, gg, bb: mb(T.batchnorm(a, gg, bb)), [xb, g, be],
                            name="batchnorm"))

    xr = t(rng.normal(size=(4, 4)))
    mr = wsum((4, 4))
    checks.append(gradcheck(lambda a: mr(T.relu(a)), [xr], name="relu"))

    xs = t(rng.normal(size=(4, 4)))
    ms = wsum((4, 4))
    checks.append(gradcheck(lambda a: ms(T.sigmoid(a)), [xs], name="sigmoid"))

    xm = t(_distinct_field(rng, (4, 4, 2)))
    mm = wsum((2, 2, 2))
    checks.append(gradcheck(lambda a: mm(T.maxpool2(a)), [xm], name="maxpool2"))

    xu = t(rng.normal(size=(2, 2, 2)))
    mu = wsum((4, 4, 2))
    checks.append(gradcheck(lambda a: mu(T.upsample2(a)), [xu], name="upsample2"))

    xa, xb2 = t(rng.normal(size=(3, 3))), t(rng.normal(size=(3, 3)))
    ma = wsum((3, 3))
    checks.append(gradcheck(lambda a, b: ma(T.add(a, b)), [xa, xb2], name="add"))

    xc, xd = t(rng.normal(size=(3, 3, 1))), t(rng.normal(size=(3, 3, 2)))
    mc = wsum((3, 3, 3))
    checks.append(gradcheck(lambda a, b: mc(T.concat_channels(a, b)), [xc, xd],
                            name="concat"))

    xz = t(rng.normal(size=(1, 3, 3, 2)))
    mz = wsum((1, 5, 5, 2))
    checks.append(gradcheck(lambda a: mz(T.zero_pad_spatial(a, 1)), [xz], name="pad"))

    pred = t(rng.uniform(0.05, 0.95, size=(6, 6, 1)))
    tgt = (rng.random((6, 6, 1)) > 0.5).astype(np.float64)
    checks.append(gradcheck(lambda a: dice_loss(a, tgt), [pred], name="dice"))

    bad = [c for c in checks if not c.passed]
    assert not bad, f"failed: {[str(c) for c in bad]}"


def test_conv2d_example_tolerance():
    rng = np.random.default_rng(42)
    x = t64(rng.normal(size=(6, 6, 2)))
    w = t64(rng.normal(size=(3, 3, 2, 4)))
    m_w = t64(rng.normal(size=(4, 4, 4)))
    report = gradcheck(lambda a: T.tsum(T.mul(T.conv2d(a, w), m_w)), [x], name="conv2d")
    assert report.max_rel_error < 1e-4


def test_full_model_suite_entries():
    """Full m1/M1 forward + Dice entries of the standard suite pass at 1e-3."""
    reports = {r.name: r for r in standard_suite(seed=0)}
    assert reports["m1_forward_dice"].passed
    assert reports["M1_forward_dice"].passed
    assert reports["m1_forward_dice"].max_rel_error < 1e-3
    assert reports["M1_forward_dice"].max_rel_error < 1e-3
