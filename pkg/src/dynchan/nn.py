"""Minimal fully-connected network and Adam optimizer on numpy.

ReLU hidden layers, identity output. Weights use Glorot uniform
initialization, biases start at zero. Everything is float64, so training
is bit-reproducible given the init RNG and the data order.
"""

import numpy as np

from .errors import ConfigError


class MLP:
    def __init__(self, layer_sizes, rng: np.random.Generator):
        if len(layer_sizes) < 2:
            raise ConfigError("need at least an input and an output layer")
        if any(int(s) < 1 for s in layer_sizes):
            raise ConfigError(f"layer sizes must be positive, got {layer_sizes}")
        self.layer_sizes = [int(s) for s in layer_sizes]
        self.weights = []
        self.biases = []
        for fan_in, fan_out in zip(self.layer_sizes[:-1], self.layer_sizes[1:]):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            self.weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
            self.biases.append(np.zeros(fan_out))

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def parameters(self):
        """Flat list [W0, b0, W1, b1, ...]; arrays are the live ones."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def copy(self) -> "MLP":
        clone = object.__new__(MLP)
        clone.layer_sizes = list(self.layer_sizes)
        clone.weights = [w.copy() for w in self.weights]
        clone.biases = [b.copy() for b in self.biases]
        return clone

    def forward(self, x: np.ndarray) -> np.ndarray:
        a = x
        last = self.n_layers - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            a = a @ w + b
            if i != last:
                np.maximum(a, 0.0, out=a)
        return a

    def forward_cached(self, x: np.ndarray):
        """Batch forward keeping post-activation values for backprop."""
        activations = [x]
        a = x
        last = self.n_layers - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            a = a @ w + b
            if i != last:
                np.maximum(a, 0.0, out=a)
            activations.append(a)
        return a, activations

    def backward(self, activations, grad_out: np.ndarray):
        """Gradients wrt every parameter given dLoss/dOutput; returns a
        flat list aligned with parameters()."""
        grads = [None] * (2 * self.n_layers)
        delta = grad_out
        for i in range(self.n_layers - 1, -1, -1):
            a_in = activations[i]
            grads[2 * i] = a_in.T @ delta
            grads[2 * i + 1] = delta.sum(axis=0)
            if i > 0:
                delta = delta @ self.weights[i].T
                delta *= activations[i] > 0.0  # ReLU mask
        return grads


def q_loss_and_gradients(mlp: MLP, x: np.ndarray, actions: np.ndarray, targets: np.ndarray):
    """Mean squared error on the taken-action outputs only.

    loss = mean_i (Q(x_i)[a_i] - y_i)^2; other outputs receive no gradient.
    Returns (loss, grads, batch_q) with grads aligned to mlp.parameters().
    """
    out, activations = mlp.forward_cached(x)
    rows = np.arange(x.shape[0])
    err = out[rows, actions] - targets
    loss = float(np.mean(err ** 2))
    grad_out = np.zeros_like(out)
    grad_out[rows, actions] = 2.0 * err / x.shape[0]
    grads = mlp.backward(activations, grad_out)
    return loss, grads, out


class Adam:
    def __init__(self, params, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self._scratch = [np.empty_like(p) for p in params]
        self.t = 0

    def update(self, params, grads, lr: float):
        """One Adam step with bias correction, in place on `params`.

        update = lr * (m / (1 - beta1^t)) / (sqrt(v / (1 - beta2^t)) + eps)
        """
        self.t += 1
        b1t = 1.0 - self.beta1 ** self.t
        b2t = 1.0 - self.beta2 ** self.t
        for p, g, m, v, buf in zip(params, grads, self.m, self.v, self._scratch):
            m *= self.beta1
            np.multiply(g, 1.0 - self.beta1, out=buf)
            m += buf
            v *= self.beta2
            np.multiply(g, g, out=buf)
            buf *= 1.0 - self.beta2
            v += buf
            np.divide(v, b2t, out=buf)
            np.sqrt(buf, out=buf)
            buf += self.eps
            np.divide(m, buf, out=buf)
            buf *= lr / b1t
            p -= buf
