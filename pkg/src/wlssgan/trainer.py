"""Alternating discriminator / generator training and the supervised-only mode.

One iteration of the semi-supervised loop:

1. labeled, unlabeled and noise mini-batches -> one Adam step on D by
   ``L_sup + L_unsup``;
2. fresh noise and unlabeled mini-batches -> one Adam step on G by the
   weighted adversarial / feature-matching loss.

The unlabeled pool is the whole training split with labels ignored, so a
fully labeled dataset still trains the GAN. An epoch is
``ceil(|unlabeled pool| / batch_size)`` iterations in both modes.
"""
from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .checkpoint import save_checkpoint
from .clutter import TRAIN, UNLABELED, Dataset
from .losses import (
    LossConfig,
    adversarial_generator_loss,
    discriminator_loss,
    joint_feature_matching,
    supervised_loss,
    unsupervised_loss,
    weighted_generator_loss,
)
from .models import Discriminator, Generator, classify
from .nn.optim import Adam
from .nn.tensor import ContractError, Tensor, frozen, no_grad

PRECISIONS = {"f32": np.float32, "f64": np.float64}
CSV_FIELDS = ("epoch", "d_total", "supervised", "unsupervised", "g_total", "adv", "fm_joint", "test_acc")


@dataclass
class TrainConfig:
    epochs: int = 1000
    batch_size: int = 64
    lr: float = 1e-4
    betas: tuple[float, float] = (0.5, 0.999)
    loss: LossConfig = field(default_factory=LossConfig)
    n_lab: int = 2100
    seed: int = 0
    steady_window_frac: float = 0.2
    eval_every: int = 1
    precision: str = "f32"
    iterations: int | None = None  # total iteration budget; overrides epochs when set
    allow_repeats: bool = True  # pools smaller than a batch are cycled with repeats
    checkpoint_every: int = 0  # epochs; 0 disables periodic checkpoints
    checkpoint_dir: str | None = None

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 2 or self.eval_every < 1:
            raise ContractError("epochs and eval_every must be >= 1 and batch_size >= 2")
        if not self.lr >= 0:
            raise ContractError(f"lr must be nonnegative, got {self.lr}")
        if not 0.0 < self.steady_window_frac <= 1.0:
            raise ContractError(f"steady_window_frac must lie in (0, 1], got {self.steady_window_frac}")
        if self.precision not in PRECISIONS:
            raise ContractError(f"precision must be one of {sorted(PRECISIONS)}")
        if self.iterations is not None and self.iterations < 1:
            raise ContractError("iterations must be positive")
        self.betas = tuple(self.betas)

    @property
    def dtype(self):
        return PRECISIONS[self.precision]


@dataclass
class TrainReport:
    seed: int
    d_total: list[float] = field(default_factory=list)
    supervised: list[float] = field(default_factory=list)
    unsupervised: list[float] = field(default_factory=list)
    g_total: list[float] = field(default_factory=list)
    adv: list[float] = field(default_factory=list)
    fm_joint: list[float] = field(default_factory=list)
    test_acc: list[float] = field(default_factory=list)
    steady_state_acc: float = float("nan")
    wall_clock: float = 0.0

    @property
    def epochs(self) -> int:
        return len(self.test_acc)

    def rows(self) -> list[tuple]:
        return [
            (e + 1, self.d_total[e], self.supervised[e], self.unsupervised[e], self.g_total[e],
             self.adv[e], self.fm_joint[e], self.test_acc[e])
            for e in range(self.epochs)
        ]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_FIELDS)
        for row in self.rows():
            w.writerow([row[0]] + [repr(float(v)) for v in row[1:]])
        return buf.getvalue()

    def write_csv(self, path) -> None:
        Path(path).write_text(self.to_csv())


def steady_state_accuracy(report_or_trace, window_frac: float = 0.2) -> float:
    """Mean test accuracy over the final ``ceil(window_frac * epochs)`` entries."""
    trace = report_or_trace.test_acc if isinstance(report_or_trace, TrainReport) else report_or_trace
    trace = np.asarray(list(trace), dtype=np.float64)
    if trace.size == 0:
        raise ContractError("empty accuracy trace")
    if not 0.0 < window_frac <= 1.0:
        raise ContractError(f"window_frac must lie in (0, 1], got {window_frac}")
    n = max(1, math.ceil(window_frac * trace.size - 1e-9))
    return float(np.nanmean(trace[-n:]))


def evaluate(disc: Discriminator, testset) -> float:
    """Eval-mode classification accuracy on a labeled set (Dataset or (signals, labels))."""
    if isinstance(testset, Dataset):
        signals, labels = testset.signals, testset.labels
    else:
        signals, labels = testset
    labels = np.asarray(labels)
    if len(labels) == 0:
        raise ContractError("empty test set")
    if np.any(labels == UNLABELED):
        raise ContractError("test set contains unlabeled samples")
    return float(np.mean(classify(disc, signals) == labels))


class CyclingSampler:
    """Mini-batches drawn from reshuffled passes over a pool.

    A batch that runs past the end of a pass continues into a fresh shuffle,
    so pools smaller than the batch repeat samples within one batch.
    """

    def __init__(self, n: int, batch_size: int, rng: np.random.Generator, allow_repeats: bool = True):
        if n < 1:
            raise ContractError("cannot sample from an empty pool")
        if batch_size > n and not allow_repeats:
            raise ContractError(f"batch_size {batch_size} exceeds pool size {n}")
        self.n, self.batch_size, self.rng = n, batch_size, rng
        self._perm = rng.permutation(n)
        self._pos = 0

    def next(self) -> np.ndarray:
        out = []
        need = self.batch_size
        while need:
            if self._pos == self.n:
                self._perm = self.rng.permutation(self.n)
                self._pos = 0
            take = min(need, self.n - self._pos)
            out.append(self._perm[self._pos : self._pos + take])
            self._pos += take
            need -= take
        return np.concatenate(out)


def _streams(seed: int, n: int) -> list[np.random.Generator]:
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


def _init_seeds(seed: int) -> tuple[int, int]:
    g, d = np.random.SeedSequence([seed, 0xC0FFEE]).generate_state(2)
    return int(g), int(d)


def _pools(dataset: Dataset, dtype):
    train = dataset.roles == TRAIN
    labeled = train & (dataset.labels != UNLABELED)
    if not labeled.any():
        raise ContractError("no labeled training samples")
    x_l = dataset.signals[labeled].astype(dtype)[:, None, :]
    y_l = dataset.labels[labeled].astype(np.int64)
    x_u = dataset.signals[train].astype(dtype)[:, None, :]
    test = dataset.test
    return x_l, y_l, x_u, test


def _schedule(config: TrainConfig, iters_per_epoch: int) -> list[int]:
    """Iterations in each epoch; an iteration budget truncates the last epoch."""
    if config.iterations is None:
        return [iters_per_epoch] * config.epochs
    full, rest = divmod(config.iterations, iters_per_epoch)
    return [iters_per_epoch] * full + ([rest] if rest else [])


class WLSSGANTrainer:
    """Holds networks, optimizers and samplers; exposes the two update steps."""

    def __init__(self, dataset: Dataset, config: TrainConfig):
        self.config = config
        dtype = config.dtype
        self.x_l, self.y_l, self.x_u, self.test = _pools(dataset, dtype)
        g_seed, d_seed = _init_seeds(config.seed)
        self.G = Generator(seed=g_seed, dtype=dtype)
        self.D = Discriminator(seed=d_seed, dtype=dtype)
        self.g_opt = Adam(self.G.parameters(), lr=config.lr, betas=config.betas)
        self.d_opt = Adam(self.D.parameters(), lr=config.lr, betas=config.betas)
        r_lab, r_unl, self.noise_rng, self.drop_rng = _streams(config.seed, 4)
        b = config.batch_size
        self.lab_sampler = CyclingSampler(len(self.y_l), b, r_lab, config.allow_repeats)
        self.unl_sampler = CyclingSampler(len(self.x_u), b, r_unl, config.allow_repeats)
        self.iters_per_epoch = math.ceil(len(self.x_u) / b)

    def _noise(self) -> Tensor:
        return self.G.sample_latent(self.config.batch_size, self.noise_rng)

    def d_step(self) -> dict[str, float]:
        idx = self.lab_sampler.next()
        x_l, y_l = Tensor(self.x_l[idx]), self.y_l[idx]
        z = self._noise()
        x_u = Tensor(self.x_u[self.unl_sampler.next()])
        with no_grad():
            x_g = self.G(z, training=True, update_stats=False)
        D, rng = self.D, self.drop_rng
        logits_l, _ = D(x_l, training=True, rng=rng)
        logits_u, _ = D(x_u, training=True, rng=rng)
        # generated batches never feed the running statistics used at eval time
        logits_g, _ = D(Tensor(x_g.data), training=True, rng=rng, update_stats=False)
        sup = supervised_loss(logits_l, y_l)
        unsup = unsupervised_loss(logits_u, logits_g)
        total = discriminator_loss(sup, unsup)
        self.d_opt.zero_grad()
        total.backward()
        self.d_opt.step()
        return {"supervised": sup.item(), "unsupervised": unsup.item(), "d_total": total.item()}

    def g_step(self) -> dict[str, float]:
        cfg = self.config.loss
        z = self._noise()
        x_u = Tensor(self.x_u[self.unl_sampler.next()])
        D, rng = self.D, self.drop_rng
        x_g = self.G(z, training=True, update_stats=True)
        with frozen(D.parameters()):
            logits_g, taps_g = D(x_g, training=True, rng=rng, update_stats=False)
            adv = adversarial_generator_loss(logits_g, cfg.adversarial)
            fm = None
            if cfg.beta > 0:
                with no_grad():
                    _, taps_u = D(x_u, training=True, rng=rng, update_stats=False)
                fm = joint_feature_matching(taps_g, taps_u, cfg.l_mul)
            total = weighted_generator_loss(adv, fm, cfg)
            self.g_opt.zero_grad()
            total.backward()  # inside the freeze so D's weights receive no gradient
        self.g_opt.step()
        return {"adv": adv.item(), "fm_joint": fm.item() if fm is not None else 0.0, "g_total": total.item()}

    def iteration(self) -> dict[str, float]:
        out = self.d_step()
        out.update(self.g_step())
        return out


class SupervisedTrainer:
    """Classifier-only training on the labeled pool with the supervised loss."""

    def __init__(self, dataset: Dataset, config: TrainConfig):
        self.config = config
        dtype = config.dtype
        self.x_l, self.y_l, x_u, self.test = _pools(dataset, dtype)
        _, d_seed = _init_seeds(config.seed)
        self.G = None
        self.D = Discriminator(seed=d_seed, dtype=dtype)
        self.d_opt = Adam(self.D.parameters(), lr=config.lr, betas=config.betas)
        r_lab, _, _, self.drop_rng = _streams(config.seed, 4)
        self.lab_sampler = CyclingSampler(len(self.y_l), config.batch_size, r_lab, config.allow_repeats)
        self.iters_per_epoch = math.ceil(len(x_u) / config.batch_size)

    def iteration(self) -> dict[str, float]:
        idx = self.lab_sampler.next()
        logits, _ = self.D(Tensor(self.x_l[idx]), training=True, rng=self.drop_rng)
        sup = supervised_loss(logits, self.y_l[idx])
        self.d_opt.zero_grad()
        sup.backward()
        self.d_opt.step()
        v = sup.item()
        return {"supervised": v, "d_total": v}


_TRACE_KEYS = ("d_total", "supervised", "unsupervised", "g_total", "adv", "fm_joint")


def _run(trainer, config: TrainConfig, log=None) -> TrainReport:
    report = TrainReport(seed=config.seed)
    start = time.perf_counter()
    schedule = _schedule(config, trainer.iters_per_epoch)
    for epoch, n_iter in enumerate(schedule, start=1):
        sums = dict.fromkeys(_TRACE_KEYS, 0.0)
        for _ in range(n_iter):
            for k, v in trainer.iteration().items():
                sums[k] += v
        for k in _TRACE_KEYS:
            getattr(report, k).append(sums[k] / n_iter)
        if epoch % config.eval_every == 0 or epoch == len(schedule):
            report.test_acc.append(evaluate(trainer.D, trainer.test))
        else:
            report.test_acc.append(float("nan"))
        if config.checkpoint_every and config.checkpoint_dir and epoch % config.checkpoint_every == 0:
            _checkpoint(trainer, Path(config.checkpoint_dir) / f"epoch{epoch:05d}.wlsg")
        if log is not None:
            log(epoch, report)
    report.steady_state_acc = steady_state_accuracy(report, config.steady_window_frac)
    report.wall_clock = time.perf_counter() - start
    return report


def _checkpoint(trainer, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    opts = {"d": trainer.d_opt.state}
    if trainer.G is not None:
        opts["g"] = trainer.g_opt.state
    save_checkpoint(path, trainer.G, trainer.D, opts)


def train_wlssgan(dataset: Dataset, config: TrainConfig, log=None) -> tuple[Generator, Discriminator, TrainReport]:
    trainer = WLSSGANTrainer(dataset, config)
    report = _run(trainer, config, log)
    return trainer.G, trainer.D, report


def train_supervised(dataset: Dataset, config: TrainConfig, log=None) -> tuple[Discriminator, TrainReport]:
    trainer = SupervisedTrainer(dataset, config)
    report = _run(trainer, config, log)
    return trainer.D, report
