import math

import numpy as np
import pytest

from noilin import losses
from noilin import tensor as T
from noilin.models import MlpClassifier
from noilin.tensor import Tensor

from conftest import central_difference, rel_error


def test_uniform_logits_give_log_c():
    assert abs(losses.cross_entropy(np.zeros((4, 10)), [0, 3, 5, 9]).item() - math.log(10)) < 1e-12


def test_kl_closed_form():
    p, q = np.array([[1.0, 0.0, -1.0]]), np.array([[0.0, 0.5, 0.0]])
    pp = np.exp(p) / np.exp(p).sum()
    qq = np.exp(q) / np.exp(q).sum()
    expected = float(np.sum(pp * np.log(pp / qq)))
    assert abs(losses.kl_divergence(p, q).item() - expected) < 1e-12
    assert losses.kl_divergence(p, p).item() == 0.0


def test_trades_reduces_to_ce_when_beta_zero_or_inputs_match():
    model = MlpClassifier.init([2, 5, 3], seed=0)
    x = np.random.default_rng(0).normal(size=(6, 2))
    y = np.array([0, 1, 2, 0, 1, 2])
    ce = losses.cross_entropy(model(x), y).item()
    assert losses.trades_loss(model, x, x + 0.3, y, beta=0.0).item() == pytest.approx(ce, abs=1e-12)
    assert losses.trades_loss(model, x, x, y).item() == pytest.approx(ce, abs=1e-12)
    T.current_tape().clear()


def test_smooth_label_values():
    out = losses.smooth_label(0, 10, 0.1)
    np.testing.assert_allclose(out, [0.9] + [0.1 / 9] * 9, rtol=0, atol=1e-12)
    assert abs(out[1] - 0.011111111111111) < 1e-12
    assert abs(out.sum() - 1.0) < 1e-12


def test_smooth_label_rejects_bad_rho():
    with pytest.raises(ValueError):
        losses.smooth_label(0, 10, 1.0)
    with pytest.raises(ValueError):
        losses.smooth_label(0, 1, 0.1)


def test_soft_ce_with_one_hot_equals_hard_ce():
    rng = np.random.default_rng(1)
    logits = rng.normal(size=(20, 10)) * 3
    y = rng.integers(0, 10, 20)
    hard = losses.cross_entropy(logits, y).item()
    soft = losses.soft_cross_entropy(logits, np.eye(10)[y]).item()
    assert abs(hard - soft) < 1e-12


def test_soft_ce_rejects_unnormalized_targets():
    with pytest.raises(ValueError):
        losses.soft_cross_entropy(np.zeros((1, 3)), [[0.5, 0.5, 0.5]])


def test_label_range_checked():
    with pytest.raises(ValueError):
        losses.cross_entropy(np.zeros((2, 3)), [0, 3])


def param_fd_error(model, loss_fn):
    """Compare analytic and finite-difference gradients for every parameter."""
    params = model.parameters()
    T.current_tape().clear()
    analytic = T.grad(loss_fn(), params)
    worst = 0.0
    for p, g in zip(params, analytic):
        base = p.values.copy()

        def f(v):
            p.values = v
            with T.no_grad():
                return loss_fn().item()

        numeric = central_difference(f, base)
        p.values = base
        worst = max(worst, rel_error(g, numeric))
    return worst


COMPOSITES = ("ce", "kl", "trades", "soft_ce")


def composite_loss(name, model, case):
    """Closure computing one of the training losses on a random batch."""
    rng = np.random.default_rng([case, len(name)])
    x = rng.normal(size=(4, 3))
    x_adv = x + rng.uniform(-0.2, 0.2, size=x.shape)
    y = rng.integers(0, 3, 4)
    target = losses.smooth_labels(y, 3, 0.2)
    return {
        "ce": lambda: losses.cross_entropy(model(x), y),
        "kl": lambda: losses.kl_divergence(model(x), model(x_adv)),
        "trades": lambda: losses.trades_loss(model, x, x_adv, y),
        "soft_ce": lambda: losses.soft_cross_entropy(model(x_adv), target),
    }[name]


@pytest.mark.parametrize("name", COMPOSITES)
def test_composite_gradients_match_finite_differences(name):
    worst = 0.0
    for case in range(25):
        model = MlpClassifier.init([3, 4, 3], seed=case)
        worst = max(worst, param_fd_error(model, composite_loss(name, model, case)))
    assert worst < 1e-5
