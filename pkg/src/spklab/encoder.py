"""Small feedforward encoder with hand-derived backpropagation.

One hidden layer maps input features to embeddings:

    z1 = x @ W1^T + b1;  h = act(z1);  e = h @ W2^T + b2

The hidden nonlinearity defaults to tanh (smooth everywhere, so finite
difference checks stay clean); `identity` and `sigmoid` are available.
Forward caches the activations needed by backward, stamped with the
parameter version so a stale cache is rejected instead of silently
producing wrong gradients.
"""

import copy
from dataclasses import dataclass

import numpy as np

from spklab.errors import DomainError
from spklab.losses import stable_sigmoid

ACTIVATIONS = ("tanh", "identity", "sigmoid")


def _act(name: str, z: np.ndarray) -> np.ndarray:
    if name == "tanh":
        return np.tanh(z)
    if name == "identity":
        return z
    if name == "sigmoid":
        return stable_sigmoid(z)
    raise DomainError(f"unknown activation {name!r}")


def _act_prime(name: str, z: np.ndarray, h: np.ndarray) -> np.ndarray:
    if name == "tanh":
        return 1.0 - h**2
    if name == "identity":
        return np.ones_like(z)
    if name == "sigmoid":
        return h * (1.0 - h)
    raise DomainError(f"unknown activation {name!r}")


@dataclass
class EncoderParams:
    """Weights and biases of the two-layer encoder plus a version counter
    bumped on every in-place update (used to invalidate forward caches)."""

    w1: np.ndarray  # (hidden, input)
    b1: np.ndarray  # (hidden,)
    w2: np.ndarray  # (embedding, hidden)
    b2: np.ndarray  # (embedding,)
    activation: str = "tanh"
    version: int = 0

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise DomainError(f"unknown activation {self.activation!r}")
        if self.w1.shape[0] != self.b1.shape[0] or self.w2.shape[0] != self.b2.shape[0]:
            raise DomainError("bias lengths must match weight output dims")
        if self.w2.shape[1] != self.w1.shape[0]:
            raise DomainError("layer dimensions do not chain")

    @property
    def input_dim(self) -> int:
        return self.w1.shape[1]

    @property
    def embedding_dim(self) -> int:
        return self.w2.shape[0]

    def arrays(self) -> dict:
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}

    def copy(self) -> "EncoderParams":
        return copy.deepcopy(self)


@dataclass
class ForwardCache:
    """Activations saved by forward for the matching backward call."""

    x: np.ndarray
    z1: np.ndarray
    h: np.ndarray
    params_id: int
    params_version: int


@dataclass
class EncoderGrads:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    def arrays(self) -> dict:
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}


def init_encoder(
    input_dim: int,
    hidden_dim: int,
    embedding_dim: int,
    rng: np.random.Generator,
    activation: str = "tanh",
) -> EncoderParams:
    """Centered-uniform initialization with scale 1/sqrt(fan_in); zero biases."""
    if min(input_dim, hidden_dim, embedding_dim) < 1:
        raise DomainError("all encoder dimensions must be positive")
    s1 = 1.0 / np.sqrt(input_dim)
    s2 = 1.0 / np.sqrt(hidden_dim)
    return EncoderParams(
        w1=rng.uniform(-s1, s1, size=(hidden_dim, input_dim)),
        b1=np.zeros(hidden_dim),
        w2=rng.uniform(-s2, s2, size=(embedding_dim, hidden_dim)),
        b2=np.zeros(embedding_dim),
        activation=activation,
    )


def forward(params: EncoderParams, features) -> tuple[np.ndarray, ForwardCache]:
    """Encode a (N, input_dim) feature batch; returns embeddings and cache."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.input_dim:
        raise DomainError(
            f"features must be (N, {params.input_dim}), got shape {x.shape}"
        )
    z1 = x @ params.w1.T + params.b1
    h = _act(params.activation, z1)
    e = h @ params.w2.T + params.b2
    cache = ForwardCache(x=x, z1=z1, h=h, params_id=id(params), params_version=params.version)
    return e, cache


def backward(params: EncoderParams, cache: ForwardCache, grad_embeddings) -> EncoderGrads:
    """Chain-rule gradients of sum(grad_embeddings * embeddings) w.r.t. params."""
    if cache.params_id != id(params) or cache.params_version != params.version:
        raise DomainError("stale forward cache: parameters changed since forward")
    de = np.asarray(grad_embeddings, dtype=np.float64)
    if de.shape != (cache.x.shape[0], params.embedding_dim):
        raise DomainError("grad_embeddings shape does not match the forward batch")
    dh = de @ params.w2
    dz1 = dh * _act_prime(params.activation, cache.z1, cache.h)
    return EncoderGrads(
        w1=dz1.T @ cache.x,
        b1=dz1.sum(axis=0),
        w2=de.T @ cache.h,
        b2=de.sum(axis=0),
    )


def sgd_step(params: EncoderParams, grads: EncoderGrads, lr: float) -> None:
    """One in-place plain-SGD update; bumps the cache version."""
    params.w1 -= lr * grads.w1
    params.b1 -= lr * grads.b1
    params.w2 -= lr * grads.w2
    params.b2 -= lr * grads.b2
    params.version += 1
