"""Reference classifiers: k-nearest neighbours, multinomial logistic regression,
and self-training (confidence-thresholded pseudo-labels on top of logistic regression)."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import log_softmax, softmax

from .clutter import NUM_CLASSES, TRAIN, UNLABELED, Dataset
from .nn.tensor import ContractError


@dataclass
class KnnModel:
    signals: np.ndarray
    labels: np.ndarray
    k: int = 5

    def __post_init__(self):
        self.signals = _design(self.signals)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.signals) != len(self.labels):
            raise ContractError("signals and labels differ in length")
        if len(self.labels) == 0:
            raise ContractError("KNN model needs at least one training sample")
        if self.k < 1:
            raise ContractError("k must be positive")
        if self.k > len(self.labels):
            raise ContractError(f"k={self.k} exceeds the {len(self.labels)} training samples")


def knn_classify(model: KnnModel, x) -> np.ndarray | int:
    """Majority vote over the k L2-nearest training samples.

    Equal distances keep training order; vote ties go to the smallest label.
    Returns an int for a single signal, an array for a batch.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    q = x.reshape(1 if single else len(x), -1)
    s = model.signals
    d2 = np.sum(q**2, axis=1)[:, None] - 2.0 * q @ s.T + np.sum(s**2, axis=1)[None, :]
    nearest = np.argsort(d2, axis=1, kind="stable")[:, : model.k]
    n_cls = max(int(model.labels.max()) + 1, NUM_CLASSES)
    votes = np.zeros((len(q), n_cls), dtype=np.int64)
    np.add.at(votes, (np.arange(len(q))[:, None], model.labels[nearest]), 1)
    pred = np.argmax(votes, axis=1)
    return int(pred[0]) if single else pred


@dataclass
class LogRegModel:
    weight: np.ndarray  # [K, D]
    bias: np.ndarray  # [K]
    loss_history: list[float] = field(default_factory=list)


def _design(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return x.reshape(x.shape[0], int(np.prod(x.shape[1:])))


def logreg_loss_and_grad(weight, bias, x, y, l2: float = 0.0):
    """Mean multinomial cross-entropy plus ``l2/2 * ||W||^2``, and its gradients."""
    x = _design(x)
    y = np.asarray(y, dtype=np.int64)
    logits = x @ weight.T + bias
    logp = log_softmax(logits, axis=1)
    n = len(y)
    loss = -logp[np.arange(n), y].mean() + 0.5 * l2 * np.sum(weight * weight)
    delta = np.exp(logp)
    delta[np.arange(n), y] -= 1.0
    delta /= n
    return float(loss), delta.T @ x + l2 * weight, delta.sum(axis=0)


def lipschitz_bound(x, l2: float = 0.0) -> float:
    """Upper bound on the gradient's Lipschitz constant: the softmax Hessian
    is bounded by 1/2, applied to the bias-augmented design matrix."""
    xa = np.hstack([_design(x), np.ones((len(x), 1))])
    return 0.5 * float(np.linalg.eigvalsh(xa.T @ xa / len(xa))[-1]) + l2


def logreg_train(
    x,
    y,
    lr: float | None = None,
    iterations: int = 500,
    l2: float = 1e-3,
    num_classes: int = NUM_CLASSES,
) -> LogRegModel:
    """Full-batch gradient descent from zero weights; ``lr=None`` uses 1/L."""
    x = _design(x)
    y = np.asarray(y, dtype=np.int64)
    missing = sorted(set(range(num_classes)) - set(y.tolist()))
    if missing:
        raise ContractError(f"classes missing from the training set: {missing}")
    if lr is None:
        lr = 1.0 / lipschitz_bound(x, l2)
    w = np.zeros((num_classes, x.shape[1]))
    b = np.zeros(num_classes)
    history = []
    for _ in range(iterations):
        loss, gw, gb = logreg_loss_and_grad(w, b, x, y, l2)
        history.append(loss)
        w -= lr * gw
        b -= lr * gb
    history.append(logreg_loss_and_grad(w, b, x, y, l2)[0])
    return LogRegModel(w, b, history)


def logreg_proba(model: LogRegModel, x) -> np.ndarray:
    return softmax(_design(x) @ model.weight.T + model.bias, axis=1)


def logreg_predict(model: LogRegModel, x) -> np.ndarray:
    return np.argmax(_design(x) @ model.weight.T + model.bias, axis=1)


@dataclass(frozen=True)
class SelfTrainingConfig:
    threshold: float = 0.95
    rounds: int = 10
    lr: float | None = None
    iterations: int = 500
    l2: float = 1e-3


def self_training(x_lab, y_lab, x_unl, config: SelfTrainingConfig = SelfTrainingConfig()) -> LogRegModel:
    """Retrain on labeled plus pseudo-labeled samples until no new sample clears the threshold.

    A sample is pseudo-labeled when its top class probability is strictly
    above ``threshold``; pseudo-labels are fixed once assigned.
    """
    x_lab, x_unl = _design(x_lab), _design(x_unl)
    y_lab = np.asarray(y_lab, dtype=np.int64)
    if len(x_lab) == 0 or len(x_unl) == 0:
        raise ContractError("self-training needs nonempty labeled and unlabeled pools")
    pseudo = np.full(len(x_unl), -1, dtype=np.int64)
    model = None
    for _ in range(config.rounds + 1):
        take = pseudo >= 0
        xs = np.vstack([x_lab, x_unl[take]])
        ys = np.concatenate([y_lab, pseudo[take]])
        model = logreg_train(xs, ys, config.lr, config.iterations, config.l2)
        proba = logreg_proba(model, x_unl)
        new = (pseudo < 0) & (proba.max(axis=1) > config.threshold)
        if not new.any():
            break
        pseudo[new] = proba[new].argmax(axis=1)
    return model


def self_training_baseline(dataset: Dataset, config: SelfTrainingConfig = SelfTrainingConfig()) -> float:
    """Test accuracy of self-training on a labeled / unlabeled split."""
    train = dataset.roles == TRAIN
    lab = train & (dataset.labels != UNLABELED)
    unl = train & (dataset.labels == UNLABELED)
    test = dataset.test
    if len(test) == 0:
        raise ContractError("empty test set")
    model = self_training(dataset.signals[lab], dataset.labels[lab], dataset.signals[unl], config)
    return float(np.mean(logreg_predict(model, test.signals) == test.labels))


def supervised_logreg_baseline(dataset: Dataset, config: SelfTrainingConfig = SelfTrainingConfig()) -> float:
    lab = (dataset.roles == TRAIN) & (dataset.labels != UNLABELED)
    model = logreg_train(dataset.signals[lab], dataset.labels[lab], config.lr, config.iterations, config.l2)
    test = dataset.test
    return float(np.mean(logreg_predict(model, test.signals) == test.labels))


def knn_baseline(dataset: Dataset, k: int = 5) -> float:
    lab = (dataset.roles == TRAIN) & (dataset.labels != UNLABELED)
    model = KnnModel(dataset.signals[lab], dataset.labels[lab], k=min(k, int(lab.sum())))
    test = dataset.test
    return float(np.mean(knn_classify(model, test.signals) == test.labels))
