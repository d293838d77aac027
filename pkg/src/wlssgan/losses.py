"""Semi-supervised GAN objectives over K + 1 logits.

The last logit column is the generated/fake class. All log-probabilities go
through log-sum-exp so no probability is ever materialized and then logged:

    log p_fake       = l_fake - LSE(l)
    log (1 - p_fake) = LSE(l[:K]) - LSE(l)
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .models import FeatureTap
from .nn import functional as F
from .nn.tensor import ContractError, Tensor, as_tensor

L_MAX = 7


@dataclass(frozen=True)
class LossConfig:
    alpha: float = 0.7
    beta: float = 0.3
    l_mul: tuple[int, ...] = (1, 2, 3, 4, 5, 6, 7)
    adversarial: str = "non_saturating"

    def __post_init__(self):
        object.__setattr__(self, "l_mul", tuple(sorted(set(int(l) for l in self.l_mul))))
        validate_weights(self.alpha, self.beta)
        if not self.l_mul and self.beta != 0:
            raise ContractError("l_mul may be empty only when beta == 0")
        bad = [l for l in self.l_mul if not 1 <= l <= L_MAX]
        if bad:
            raise ContractError(f"l_mul layers out of range 1..{L_MAX}: {bad}")
        if self.adversarial not in ("non_saturating", "saturating"):
            raise ContractError(f"unknown adversarial loss form {self.adversarial!r}")


def validate_weights(alpha: float, beta: float) -> None:
    if alpha < 0 or beta < 0:
        raise ContractError(f"weights must be nonnegative, got alpha={alpha}, beta={beta}")
    if abs(alpha + beta - 1.0) > 1e-9:
        raise ContractError(f"alpha + beta must equal 1, got {alpha + beta}")


@dataclass
class LossBreakdown:
    supervised: float = 0.0
    unsupervised: float = 0.0
    d_total: float = 0.0
    adv: float = 0.0
    fm_per_layer: dict[int, float] = field(default_factory=dict)
    fm_joint: float = 0.0
    g_total: float = 0.0


def _neg_log_real(logits: Tensor, k: int) -> Tensor:
    """Per-sample -log(1 - p_fake) = LSE(all) - LSE(real)."""
    return F.logsumexp(logits) - F.logsumexp(logits[:, :k])


def _neg_log_fake(logits: Tensor, k: int) -> Tensor:
    """Per-sample -log p_fake = LSE(all) - l_fake."""
    return F.logsumexp(logits) - logits[:, k]


def supervised_loss(logits: Tensor, labels) -> Tensor:
    """Mean -log p(y | x, y <= K), the softmax restricted to the real classes."""
    labels = np.asarray(labels, dtype=np.int64)
    k = logits.shape[1] - 1
    if labels.shape != (logits.shape[0],):
        raise ContractError(f"labels shape {labels.shape} vs batch {logits.shape[0]}")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ContractError(f"labels must lie in 0..{k - 1}")
    logp = F.log_softmax(logits[:, :k])
    picked = logp[np.arange(len(labels)), labels]
    return -picked.mean()


def unsupervised_loss(logits_unlabeled: Tensor, logits_fake: Tensor) -> Tensor:
    k = logits_unlabeled.shape[1] - 1
    return _neg_log_real(logits_unlabeled, k).mean() + _neg_log_fake(logits_fake, k).mean()


def discriminator_loss(sup, unsup):
    return sup + unsup


def adversarial_generator_loss(logits_fake: Tensor, form: str = "non_saturating") -> Tensor:
    """Generator adversarial term.

    ``non_saturating``: mean -log D(G(z)) with D = 1 - p_fake.
    ``saturating``: mean log(1 - D(G(z))) = mean log p_fake.
    """
    k = logits_fake.shape[1] - 1
    if form == "non_saturating":
        return _neg_log_real(logits_fake, k).mean()
    if form == "saturating":
        return (-_neg_log_fake(logits_fake, k)).mean()
    raise ContractError(f"unknown adversarial loss form {form!r}")


def _tap_tensor(tap) -> tuple[int | None, Tensor]:
    # the squared norm is layout-independent, so taps are used channels-last as stored
    if isinstance(tap, FeatureTap):
        return tap.layer, tap.values
    return None, as_tensor(tap)


def feature_matching_layer(tap_generated, tap_unlabeled) -> Tensor:
    """Squared L2 norm between batch-mean feature maps of one layer."""
    lg, g = _tap_tensor(tap_generated)
    lu, u = _tap_tensor(tap_unlabeled)
    if lg is not None and lu is not None and lg != lu:
        raise ContractError(f"feature taps come from different layers: {lg} vs {lu}")
    if g.shape[1:] != u.shape[1:]:
        raise ContractError(f"feature tap shapes differ: {g.shape} vs {u.shape}")
    diff = g.mean(axis=0) - u.mean(axis=0)
    return (diff * diff).sum()


def joint_feature_matching(
    taps_g: Sequence[FeatureTap],
    taps_u: Sequence[FeatureTap],
    l_mul: Sequence[int],
    per_layer: dict[int, float] | None = None,
) -> Tensor:
    """Sum over selected layers of L_FM^(l) / (2 * channels * length)."""
    if not l_mul:
        raise ContractError("l_mul must be nonempty")
    total = None
    for l in sorted(l_mul):
        if not 1 <= l <= len(taps_g):
            raise ContractError(f"feature layer {l} not in 1..{len(taps_g)}")
        tg, tu = taps_g[l - 1], taps_u[l - 1]
        fm = feature_matching_layer(tg, tu)
        if per_layer is not None:
            per_layer[l] = float(fm.data)
        ch, le = tg.channels, tg.length
        term = fm * (1.0 / (2.0 * ch * le))
        total = term if total is None else total + term
    return total


def weighted_generator_loss(adv, fm_joint, config: LossConfig):
    validate_weights(config.alpha, config.beta)
    if config.beta == 0:
        return adv if config.alpha == 1 else adv * config.alpha
    if config.alpha == 0:
        return fm_joint if config.beta == 1 else fm_joint * config.beta
    return adv * config.alpha + fm_joint * config.beta


def _fake_probability_ext(logits) -> np.ndarray:
    z = np.asarray(logits.data if isinstance(logits, Tensor) else logits, dtype=np.longdouble)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e[..., -1] / e.sum(axis=-1)


def fake_probability(logits) -> np.ndarray:
    """Per-sample p(fake | x), the last softmax component."""
    return _fake_probability_ext(logits).astype(np.float64)


def unsupervised_loss_game_value(logits_unlabeled, logits_fake) -> float:
    """Same quantity as :func:`unsupervised_loss` written as -E log D - E log(1 - D).

    Evaluated in extended precision: 1 - p_fake cancels badly when p_fake is
    near 1, and this form serves as a reference for the log-sum-exp version.
    """
    d_real = 1 - _fake_probability_ext(logits_unlabeled)
    d_fake = 1 - _fake_probability_ext(logits_fake)
    return float(-np.mean(np.log(d_real)) - np.mean(np.log(1 - d_fake)))
