"""Layers and optimizer shared by the game-pretraining and translation stages.

Parameter initialization is uniform(-0.1, 0.1) for weights and zero for
biases, drawn from the run RNG in declaration order so that a seed pins the
whole model.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import ParamStore, ShapeError, Tensor


def uniform_param(rng, shape, scale=0.1, dtype=np.float32):
    data = rng.uniform(-scale, scale, size=shape).astype(dtype)
    return Tensor(data, requires_grad=True, dtype=dtype)


def zero_param(shape, dtype=np.float32):
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True, dtype=dtype)


class GruCell:
    """Single gated recurrent unit layer.

    h' = (1 - z) * h + z * n with
      z = sigmoid(x W_z + h U_z + b_z)      (update gate)
      r = sigmoid(x W_r + h U_r + b_r)      (reset gate)
      n = tanh(x W_n + (r * h) U_n + b_n)   (candidate)
    """

    def __init__(self, input_dim, hidden_dim, rng):
        self.input_dim = input_dim
        self.hidden_dim = hidden_dim
        self.w_z = uniform_param(rng, (input_dim, hidden_dim))
        self.u_z = uniform_param(rng, (hidden_dim, hidden_dim))
        self.b_z = zero_param((hidden_dim,))
        self.w_r = uniform_param(rng, (input_dim, hidden_dim))
        self.u_r = uniform_param(rng, (hidden_dim, hidden_dim))
        self.b_r = zero_param((hidden_dim,))
        self.w_n = uniform_param(rng, (input_dim, hidden_dim))
        self.u_n = uniform_param(rng, (hidden_dim, hidden_dim))
        self.b_n = zero_param((hidden_dim,))

    def step(self, x, h):
        if x.shape[-1] != self.input_dim:
            raise ShapeError(f"gru step: input dim {x.shape[-1]} != {self.input_dim}")
        if h.shape[-1] != self.hidden_dim:
            raise ShapeError(f"gru step: hidden dim {h.shape[-1]} != {self.hidden_dim}")
        z = T.sigmoid(x @ self.w_z + h @ self.u_z + self.b_z)
        r = T.sigmoid(x @ self.w_r + h @ self.u_r + self.b_r)
        n = T.tanh(x @ self.w_n + (r * h) @ self.u_n + self.b_n)
        return (1.0 - z) * h + z * n

    def params(self):
        return {
            "w_z": self.w_z, "u_z": self.u_z, "b_z": self.b_z,
            "w_r": self.w_r, "u_r": self.u_r, "b_r": self.b_r,
            "w_n": self.w_n, "u_n": self.u_n, "b_n": self.b_n,
        }


class Mlp:
    """Stack of affine layers with a fixed nonlinearity between them.

    dims=[a, b] is a single affine map; dims=[a, b, c] has one hidden layer.
    Dropout, when requested, applies to hidden activations only.
    """

    ACTIVATIONS = {"relu": T.relu, "tanh": T.tanh}

    def __init__(self, dims, rng, activation="relu"):
        if len(dims) < 2:
            raise ValueError("Mlp needs at least input and output dims")
        if activation not in self.ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.dims = list(dims)
        self.activation = activation
        self.weights = [uniform_param(rng, (a, b)) for a, b in zip(dims[:-1], dims[1:])]
        self.biases = [zero_param((b,)) for b in dims[1:]]

    @property
    def out_dim(self):
        return self.dims[-1]

    def forward(self, x, rng=None, drop=0.0, training=False):
        act = self.ACTIVATIONS[self.activation]
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            x = x @ w + b
            if i != last:
                x = act(x)
                if drop > 0.0:
                    x = T.dropout(x, drop, rng, training)
        return x

    def params(self):
        out = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"w{i}"] = w
            out[f"b{i}"] = b
        return out


class Embedding:
    def __init__(self, vocab_size, dim, rng):
        self.vocab_size = vocab_size
        self.dim = dim
        self.table = uniform_param(rng, (vocab_size, dim))

    def lookup(self, ids):
        """Hard lookup: integer ids to table rows."""
        return T.embedding_lookup(self.table, ids)

    def soft_lookup(self, dist):
        """Convex combination of rows under a distribution over the vocab."""
        if dist.shape[-1] != self.vocab_size:
            raise ShapeError(f"soft_lookup: dist dim {dist.shape[-1]} != vocab {self.vocab_size}")
        return dist @ self.table

    def params(self):
        return {"table": self.table}


def sample_gumbel(rng, shape, dtype=np.float32):
    # clamp away from {0, 1} so -log(-log(u)) stays finite
    u = rng.random(shape)
    u = np.clip(u, 1e-10, 1.0 - 1e-10)
    return (-np.log(-np.log(u))).astype(dtype)


def straight_through(soft, hard_data):
    """Forward the hard one-hot values; route gradients to the soft sample."""

    def backward_fn(out):
        soft._accumulate(out.grad)

    return Tensor._from_op(np.asarray(hard_data, dtype=soft.dtype), (soft,), backward_fn)


def gumbel_softmax(logits, temperature=1.0, hard=False, rng=None, noise=None):
    """Sample from a categorical relaxation of the logits.

    Soft mode returns softmax((logits + g) / temperature) with standard
    Gumbel noise g. Hard mode returns the exact one-hot of the perturbed
    argmax, with the soft sample's gradient (straight-through).
    `noise` overrides the drawn noise (tests force g = 0).
    """
    if temperature <= 0:
        raise ValueError(f"gumbel_softmax: temperature must be > 0, got {temperature}")
    if noise is None:
        noise = sample_gumbel(rng, logits.shape, dtype=logits.dtype)
    g = Tensor._from_op(np.asarray(noise, dtype=logits.dtype), (), None)
    perturbed = logits + g
    soft = T.softmax(perturbed * (1.0 / temperature))
    if not hard:
        return soft
    idx = np.argmax(perturbed.data, axis=-1)
    onehot = np.zeros_like(soft.data)
    np.put_along_axis(onehot, np.expand_dims(idx, -1), 1.0, axis=-1)
    return straight_through(soft, onehot)


class Adam:
    """Adam with bias-corrected moments; aborts loudly on non-finite grads."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in params.items()}

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** self.t
        bc2 = 1.0 - b2 ** self.t
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            if not np.isfinite(g).all():
                raise FloatingPointError(f"non-finite gradient for parameter {name!r} at step {self.t}")
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def zero_grad(self):
        self.params.zero_grad()
