"""
Mini-batch training with cross-entropy on softmax outputs.
"""

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .ops import DTYPE
from .layers import GraphContainsForwardOnlyLayer

logger = logging.getLogger(__name__)

EPS = 1e-12


def one_hot(labels, n_classes):
    labels = np.asarray(labels, dtype=int)
    out = np.zeros((len(labels), n_classes), dtype=DTYPE)
    out[np.arange(len(labels)), labels] = 1.0
    return out


def cross_entropy(p, labels):
    """Mean negative log-likelihood of the true labels"""
    p = np.asarray(p, dtype=DTYPE)
    labels = np.asarray(labels, dtype=int)
    return float(-np.mean(np.log(np.clip(p[np.arange(len(labels)), labels], EPS, None))))


def cross_entropy_grad(p, labels):
    """dL/dp; chained through Softmax it becomes (p - y) / N"""
    y = one_hot(labels, p.shape[-1])
    return -y / np.clip(p, EPS, None) / len(labels)


def accuracy(p, labels):
    return float(np.mean(np.argmax(p, axis=-1) == np.asarray(labels)))


class SGD:
    def __init__(self, learning_rate=0.01, momentum=0.9):
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.velocity = {}

    def step(self, params, grads):
        for key, value in params.items():
            v = self.velocity.get(key)
            if v is None:
                v = self.velocity[key] = np.zeros_like(value)
            v *= self.momentum
            v -= self.learning_rate * grads[key]
            value += v


class Adam:
    def __init__(self, learning_rate=0.001, beta1=0.9, beta2=0.999, eps=1e-8):
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = {}
        self.v = {}
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for key, value in params.items():
            g = grads[key]
            m = self.m.setdefault(key, np.zeros_like(value))
            v = self.v.setdefault(key, np.zeros_like(value))
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            mhat = m / (1 - b1**self.t)
            vhat = v / (1 - b2**self.t)
            value -= self.learning_rate * mhat / (np.sqrt(vhat) + self.eps)


OPTIMIZERS = {"sgd": SGD, "adam": Adam}


def make_optimizer(name, learning_rate, momentum=0.9):
    if name not in OPTIMIZERS:
        raise ValueError(f"Unknown optimizer {name!r}. Options: {sorted(OPTIMIZERS)}")
    if name == "sgd":
        return SGD(learning_rate, momentum)
    return Adam(learning_rate)


@dataclass
class History:
    loss: list = field(default_factory=list)
    accuracy: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    val_accuracy: list = field(default_factory=list)

    def to_dict(self):
        return {k: list(v) for k, v in self.__dict__.items()}


def evaluate(model, x, labels, batch_size=256):
    p = model.predict_proba(x, batch_size=batch_size)
    return cross_entropy(p, labels), accuracy(p, labels)


def fit(
    model,
    x,
    labels,
    epochs=50,
    batch_size=32,
    optimizer=None,
    seed=1,
    validation=None,
):
    """
    Train in place. Loss and accuracy are measured over the whole training set
    after every epoch. `validation` is an optional (x, labels) pair.
    """
    if model.is_forward_only():
        raise GraphContainsForwardOnlyLayer(
            f"{getattr(model, 'name', model)!r} contains a layer without a backward pass"
        )
    optimizer = optimizer or SGD()
    x = np.asarray(x, dtype=DTYPE)
    labels = np.asarray(labels, dtype=int)
    rng = np.random.default_rng(seed)
    history = History()
    params = model.params()

    for epoch in range(1, epochs + 1):
        t0 = time.time()
        order = rng.permutation(len(x))
        for start in range(0, len(x), batch_size):
            idx = order[start : start + batch_size]
            p = model.forward(x[idx])
            model.backward(cross_entropy_grad(p, labels[idx]))
            optimizer.step(params, model.grads())

        loss, acc = evaluate(model, x, labels)
        history.loss.append(loss)
        history.accuracy.append(acc)
        msg = f"epoch {epoch}/{epochs} loss {loss:.5f} acc {acc:.4f}"
        if validation is not None:
            vloss, vacc = evaluate(model, *validation)
            history.val_loss.append(vloss)
            history.val_accuracy.append(vacc)
            msg += f" val_loss {vloss:.5f} val_acc {vacc:.4f}"
        logger.info(f"{msg} ({time.time() - t0:.1f}s)")

    return history
