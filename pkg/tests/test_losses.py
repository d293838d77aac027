import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from wlssgan.losses import (
    LossConfig,
    adversarial_generator_loss,
    discriminator_loss,
    fake_probability,
    feature_matching_layer,
    joint_feature_matching,
    supervised_loss,
    unsupervised_loss,
    unsupervised_loss_game_value,
    validate_weights,
    weighted_generator_loss,
)
from wlssgan.models import FeatureTap
from wlssgan.nn import ContractError, Tensor, grad_check


def t64(a, grad=False):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=grad)


def softmax_oracle(z):
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def tap(layer, values_bcl):
    """FeatureTap from a [B, C, L] array (taps are stored channels-last)."""
    return FeatureTap(layer, t64(np.transpose(values_bcl, (0, 2, 1))))


logit_batches = arrays(np.float64, st.tuples(st.integers(1, 6), st.just(4)), elements=st.floats(-20, 20))


# ------------------------------------------------------------ supervised


def test_supervised_uniform_is_ln3():
    assert supervised_loss(t64([[0.3, 0.3, 0.3, 5.0]]), [0]).item() == pytest.approx(math.log(3), abs=1e-12)


@pytest.mark.parametrize("fake", [-50.0, 0.0, 7.0, 80.0])
def test_supervised_ignores_fake_logit(fake):
    assert supervised_loss(t64([[2.0, 2.0, 2.0, fake]]), [0]).item() == pytest.approx(math.log(3), abs=1e-12)


def test_supervised_margin_monotone():
    vals = [supervised_loss(t64([[m, 0.0, 0.0, 0.0]]), [0]).item() for m in (0, 1, 5, 20, 60)]
    assert all(a > b for a, b in zip(vals, vals[1:])) and vals[-1] < 1e-20


@settings(max_examples=50, deadline=None)
@given(logit_batches, st.data())
def test_supervised_matches_renormalized_softmax(z, data):
    y = np.array(data.draw(st.lists(st.integers(0, 2), min_size=len(z), max_size=len(z))))
    p = softmax_oracle(z[:, :3])
    ref = -np.mean(np.log(p[np.arange(len(y)), y]))
    assert supervised_loss(t64(z), y).item() == pytest.approx(ref, abs=1e-10, rel=1e-10)


def test_supervised_label_range():
    with pytest.raises(ContractError):
        supervised_loss(t64([[0, 0, 0, 0]]), [3])


# ------------------------------------------------------------ unsupervised / adversarial


def test_unsupervised_uniform_value():
    z = t64(np.zeros((3, 4)))
    assert unsupervised_loss(z, z).item() == pytest.approx(math.log(4 / 3) + math.log(4), abs=1e-12)


def test_unsupervised_first_term_vanishes():
    u = t64([[0.0, 0.0, 0.0, -1e4]])
    f = t64([[0.0, 0.0, 0.0, 1e4]])
    assert unsupervised_loss(u, f).item() == pytest.approx(0.0, abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(logit_batches, logit_batches)
def test_unsupervised_matches_softmax_oracle(zu, zf):
    # 1 - p_fake summed from the real-class probabilities, which stays accurate when p_fake -> 1
    real_u, pf = softmax_oracle(zu)[:, :3].sum(axis=1), softmax_oracle(zf)[:, 3]
    ref = -np.mean(np.log(real_u)) - np.mean(np.log(pf))
    assert unsupervised_loss(t64(zu), t64(zf)).item() == pytest.approx(ref, rel=1e-8, abs=1e-8)


def test_adversarial_limits_and_uniform():
    assert adversarial_generator_loss(t64([[0.0, 0.0, 0.0, -1e4]])).item() == pytest.approx(0.0, abs=1e-12)
    assert adversarial_generator_loss(t64(np.zeros((2, 4)))).item() == pytest.approx(-math.log(0.75), abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(logit_batches)
def test_adversarial_matches_softmax_oracle(z):
    p = softmax_oracle(z)
    real, pf = p[:, :3].sum(axis=1), p[:, 3]
    assert adversarial_generator_loss(t64(z)).item() == pytest.approx(-np.mean(np.log(real)), rel=1e-8, abs=1e-8)
    assert adversarial_generator_loss(t64(z), "saturating").item() == pytest.approx(np.mean(np.log(pf)), rel=1e-8, abs=1e-8)


def test_adversarial_unknown_form():
    with pytest.raises(ContractError):
        adversarial_generator_loss(t64(np.zeros((1, 4))), "wasserstein")


def test_discriminator_loss_is_sum():
    assert discriminator_loss(1.0, 2.0) == 3.0
    assert discriminator_loss(0.0, 2.5) == 2.5


def test_fake_probability_values():
    assert fake_probability(np.zeros((1, 4)))[0] == pytest.approx(0.25)
    assert fake_probability(np.array([[0.0, 0.0, 0.0, 800.0]]))[0] == pytest.approx(1.0)


def test_game_value_form_matches_lse_form():
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(1000):
        zu, zf = rng.normal(scale=3, size=(8, 4)), rng.normal(scale=3, size=(8, 4))
        worst = max(worst, abs(unsupervised_loss(t64(zu), t64(zf)).item() - unsupervised_loss_game_value(zu, zf)))
    assert worst <= 1e-12


# ------------------------------------------------------------ feature matching


def test_fm_identical_batches_zero():
    a = np.random.default_rng(0).normal(size=(4, 8, 16))
    assert feature_matching_layer(tap(1, a), tap(1, a)).item() == 0.0


def test_fm_constant_offset_closed_form():
    a = np.random.default_rng(0).normal(size=(4, 8, 16))
    c = 0.3
    assert feature_matching_layer(tap(1, a + c), tap(1, a)).item() == pytest.approx(c * c * 8 * 16, rel=1e-12)


def test_fm_brute_force_oracle():
    rng = np.random.default_rng(1)
    g, u = rng.normal(size=(5, 3, 7)), rng.normal(size=(6, 3, 7))
    ref = 0.0
    for ci in range(3):
        for li in range(7):
            ref += (g[:, ci, li].mean() - u[:, ci, li].mean()) ** 2
    assert feature_matching_layer(tap(2, g), tap(2, u)).item() == pytest.approx(ref, abs=1e-10)


def test_fm_mismatch_errors():
    a = np.zeros((2, 3, 4))
    with pytest.raises(ContractError):
        feature_matching_layer(tap(1, a), tap(2, a))
    with pytest.raises(ContractError):
        feature_matching_layer(tap(1, a), tap(1, np.zeros((2, 3, 5))))


def _tap_set(rng, shapes=((8, 16), (16, 8), (32, 4))):
    return [tap(i + 1, rng.normal(size=(4, c, le))) for i, (c, le) in enumerate(shapes)]


def test_joint_singleton_reduces_to_normalized_layer():
    rng = np.random.default_rng(2)
    tg, tu = _tap_set(rng), _tap_set(rng)
    for l, (c, le) in zip((1, 2, 3), ((8, 16), (16, 8), (32, 4))):
        joint = joint_feature_matching(tg, tu, [l]).item()
        single = feature_matching_layer(tg[l - 1], tu[l - 1]).item() / (2 * c * le)
        assert abs(joint - single) <= 1e-12


def test_joint_two_layers_oracle_and_identical_zero():
    rng = np.random.default_rng(3)
    tg, tu = _tap_set(rng), _tap_set(rng)
    per = {}
    got = joint_feature_matching(tg, tu, [1, 2], per_layer=per).item()
    ref = per[1] / (2 * 8 * 16) + per[2] / (2 * 16 * 8)
    assert got == pytest.approx(ref, abs=1e-10)
    assert joint_feature_matching(tg, tg, [1, 2, 3]).item() == 0.0


def test_joint_invalid_lmul():
    rng = np.random.default_rng(3)
    tg = _tap_set(rng)
    with pytest.raises(ContractError):
        joint_feature_matching(tg, tg, [])
    with pytest.raises(ContractError):
        joint_feature_matching(tg, tg, [4])


# ------------------------------------------------------------ weighted loss and config


def test_weighted_endpoints_bit_exact():
    adv, fm = t64(2.0), t64(1.0)
    assert weighted_generator_loss(adv, fm, LossConfig(1.0, 0.0)) is adv
    assert weighted_generator_loss(adv, fm, LossConfig(0.0, 1.0)) is fm
    assert weighted_generator_loss(adv, fm, LossConfig(0.7, 0.3)).item() == pytest.approx(1.7, abs=1e-15)


@settings(max_examples=50, deadline=None)
@given(st.floats(0, 1), st.floats(-10, 10), st.floats(-10, 10))
def test_weighted_linear(alpha, a, f):
    cfg = LossConfig(alpha, 1 - alpha)
    assert weighted_generator_loss(t64(a), t64(f), cfg).item() == pytest.approx(alpha * a + (1 - alpha) * f, abs=1e-12)


@pytest.mark.parametrize("alpha,beta", [(0.5, 0.6), (-0.1, 1.1), (1.2, -0.2)])
def test_weights_validation(alpha, beta):
    with pytest.raises(ContractError):
        validate_weights(alpha, beta)
    with pytest.raises(ContractError):
        LossConfig(alpha, beta)


def test_loss_config_lmul_rules():
    assert LossConfig(1.0, 0.0, l_mul=()).l_mul == ()
    with pytest.raises(ContractError):
        LossConfig(0.5, 0.5, l_mul=())
    with pytest.raises(ContractError):
        LossConfig(0.5, 0.5, l_mul=(0, 1))
    assert LossConfig(l_mul=(3, 1, 3)).l_mul == (1, 3)


@settings(max_examples=30, deadline=None)
@given(logit_batches, logit_batches)
def test_losses_nonnegative(zu, zf):
    y = np.zeros(len(zu), dtype=int)
    assert supervised_loss(t64(zu), y).item() >= 0
    assert unsupervised_loss(t64(zu), t64(zf)).item() >= 0
    assert adversarial_generator_loss(t64(zf)).item() >= 0


# ------------------------------------------------------------ loss gradients


def test_loss_gradients_on_logits():
    rng = np.random.default_rng(4)
    zl, zu, zf = (t64(rng.normal(size=(3, 4)), True) for _ in range(3))
    y = np.array([2, 0, 1])
    assert grad_check(lambda: supervised_loss(zl, y), [zl]).passed
    assert grad_check(lambda: unsupervised_loss(zu, zf), [zu, zf]).passed
    assert grad_check(lambda: adversarial_generator_loss(zf), [zf]).passed
    assert grad_check(lambda: adversarial_generator_loss(zf, "saturating"), [zf]).passed


def test_fm_gradients():
    rng = np.random.default_rng(5)
    g = t64(rng.normal(size=(3, 7, 5)), True)
    u = t64(rng.normal(size=(4, 7, 5)))
    tg, tu = [FeatureTap(1, g)], [FeatureTap(1, u)]
    assert grad_check(lambda: feature_matching_layer(tg[0], tu[0]), [g]).passed
    assert grad_check(lambda: joint_feature_matching(tg, tu, [1]), [g]).passed
