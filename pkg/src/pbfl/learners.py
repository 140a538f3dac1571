"""Small learners trained federated-style on flat weight vectors.

Both learners expose the same interface: a fixed ``dim``, plus
``loss``, ``gradient``, ``predict``, and ``accuracy`` over a flat
float64 weight vector. Gradients are averaged over the batch, so their
scale is insensitive to batch size.
"""

import numpy as np


def _softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _one_hot(y, classes):
    out = np.zeros((len(y), classes))
    out[np.arange(len(y)), y] = 1.0
    return out


class LogisticRegression:
    """Multinomial logistic regression with bias, cross-entropy loss.

    ``init_scale`` sets the standard deviation of the random init. Federated
    robustness experiments want a deliberately confident-but-wrong starting
    model (larger scale) so that early-round gradients share a strong common
    component across clients; plain fitting is fine with a near-zero init.
    """

    def __init__(self, features, classes, init_scale=0.01):
        if classes < 2:
            raise ValueError("need at least two classes")
        if init_scale < 0:
            raise ValueError("init_scale must be non-negative")
        self.features = features
        self.classes = classes
        self.init_scale = init_scale
        self.dim = classes * features + classes

    def _unpack(self, w):
        split = self.classes * self.features
        W = w[:split].reshape(self.classes, self.features)
        b = w[split:]
        return W, b

    def init_weights(self, seed):
        rng = np.random.default_rng(seed)
        return self.init_scale * rng.normal(size=self.dim)

    def _logits(self, w, X):
        W, b = self._unpack(w)
        return X @ W.T + b

    def loss(self, w, X, y):
        p = _softmax(self._logits(w, X))
        picked = np.clip(p[np.arange(len(y)), y], 1e-12, None)
        return float(-np.log(picked).mean())

    def gradient(self, w, X, y):
        p = _softmax(self._logits(w, X))
        delta = (p - _one_hot(y, self.classes)) / len(y)
        gW = delta.T @ X
        gb = delta.sum(axis=0)
        return np.concatenate([gW.ravel(), gb])

    def predict(self, w, X):
        return self._logits(w, X).argmax(axis=1)

    def accuracy(self, w, X, y):
        return float((self.predict(w, X) == y).mean())


class TwoLayerPerceptron:
    """One tanh hidden layer followed by a softmax readout."""

    def __init__(self, features, classes, hidden=32):
        if hidden < 1:
            raise ValueError("hidden width must be positive")
        self.features = features
        self.classes = classes
        self.hidden = hidden
        self.dim = hidden * features + hidden + classes * hidden + classes

    def _unpack(self, w):
        h, f, c = self.hidden, self.features, self.classes
        o = 0
        W1 = w[o : o + h * f].reshape(h, f)
        o += h * f
        b1 = w[o : o + h]
        o += h
        W2 = w[o : o + c * h].reshape(c, h)
        o += c * h
        b2 = w[o:]
        return W1, b1, W2, b2

    def init_weights(self, seed):
        rng = np.random.default_rng(seed)
        h, f, c = self.hidden, self.features, self.classes

        w = np.concatenate(
            [
                rng.normal(scale=1.0 / np.sqrt(f), size=h * f),
                np.zeros(h),
                rng.normal(scale=1.0 / np.sqrt(h), size=c * h),
                np.zeros(c),
            ]
        )
        return w

    def _forward(self, w, X):
        W1, b1, W2, b2 = self._unpack(w)
        a = np.tanh(X @ W1.T + b1)
        return a, a @ W2.T + b2

    def loss(self, w, X, y):
        _, logits = self._forward(w, X)
        p = _softmax(logits)
        picked = np.clip(p[np.arange(len(y)), y], 1e-12, None)
        return float(-np.log(picked).mean())

    def gradient(self, w, X, y):
        W1, b1, W2, b2 = self._unpack(w)
        a, logits = self._forward(w, X)
        delta2 = (_softmax(logits) - _one_hot(y, self.classes)) / len(y)
        gW2 = delta2.T @ a
        gb2 = delta2.sum(axis=0)
        delta1 = (delta2 @ W2) * (1.0 - a * a)
        gW1 = delta1.T @ X
        gb1 = delta1.sum(axis=0)
        return np.concatenate([gW1.ravel(), gb1, gW2.ravel(), gb2])

    def predict(self, w, X):
        _, logits = self._forward(w, X)
        return logits.argmax(axis=1)

    def accuracy(self, w, X, y):
        return float((self.predict(w, X) == y).mean())


def make_learner(name, features, classes, hidden=32, init_scale=0.01):
    if name == "logreg":
        return LogisticRegression(features, classes, init_scale=init_scale)
    if name == "mlp":
        return TwoLayerPerceptron(features, classes, hidden=hidden)
    raise ValueError(f"unknown learner {name!r}")


def finite_difference_gradient(learner, w, X, y, eps=1e-6):
    """Central-difference gradient, the oracle for analytic gradients."""
    g = np.zeros_like(w)
    for i in range(len(w)):
        up = w.copy()
        dn = w.copy()
        up[i] += eps
        dn[i] -= eps
        g[i] = (learner.loss(up, X, y) - learner.loss(dn, X, y)) / (2 * eps)
    return g


def sgd_fit(learner, X, y, eta=0.5, steps=400, seed=0):
    """Plain full-batch gradient descent, used to build converged oracles."""
    w = learner.init_weights(seed)
    for _ in range(steps):
        w = w - eta * learner.gradient(w, X, y)
    return w
