"""Loss functions over speaker embeddings, each with exact analytic gradients.

Two families:

* classification losses: cross entropy over per-class logits, where the
  logit layer ranges from a plain linear map down to pure-angle variants
  (scaled cosine, additive angular margin), plus a center-penalty variant;
* contrast losses: cosine-based contrastive, hinge triplet, and sigmoid
  triplet terms summed over explicitly formed tuples.

Every loss returns a LossOutput holding the scalar value and gradients with
respect to the embeddings and any trainable parameters (class centers,
bias, per-class penalty centers). `finite_difference_check` is the
verification oracle used by the test suite.

Gradient building block: with unit rows u_i = x_i/|x_i| and v_k = c_k/|c_k|
and s = u_i . v_k,

    d s / d x_i = (v_k - s * u_i) / |x_i|
    d s / d c_k = (u_i - s * v_k) / |c_k|
"""

from dataclasses import dataclass
from typing import Callable

import numpy as np

from spklab.embedding import normalize_rows
from spklab.errors import DomainError
from spklab.sampling import TupleIndex

LOSS_KINDS = (
    "ce",
    "ce_nobias",
    "coco",
    "aam",
    "center",
    "contrastive",
    "triplet_hinge",
    "triplet_sigmoid",
)
CLASSIFICATION_KINDS = ("ce", "ce_nobias", "coco", "aam", "center")
PAIR_KINDS = ("contrastive",)
TRIPLET_KINDS = ("triplet_hinge", "triplet_sigmoid")

CENTER_PENALTIES = ("squared_cos_distance", "one_minus_cos_sq")

# Below this sine the additive-margin gradient factor falls back to the
# margin-free value (the exact factor sin(theta+m)/sin(theta) blows up).
AAM_SIN_GUARD = 1e-6


@dataclass(frozen=True)
class LossHyper:
    """Scale and margin hyper-parameters shared by the angular losses."""

    alpha: float = 1.0
    margin: float = 0.0

    def __post_init__(self):
        if not self.alpha > 0:
            raise DomainError(f"alpha must be positive, got {self.alpha}")
        if self.margin < 0:
            raise DomainError(f"margin must be non-negative, got {self.margin}")


@dataclass
class ClassifierParams:
    """Trainable class centers (K, m) and optional bias (K,) of the logit layer."""

    centers: np.ndarray
    bias: np.ndarray | None = None

    def __post_init__(self):
        self.centers = np.asarray(self.centers, dtype=np.float64)
        if self.centers.ndim != 2:
            raise DomainError("centers must be a (K, m) matrix")
        if not np.all(np.isfinite(self.centers)):
            raise DomainError("centers contain non-finite entries")
        if self.bias is not None:
            self.bias = np.asarray(self.bias, dtype=np.float64)
            if self.bias.shape != (self.centers.shape[0],):
                raise DomainError("bias length must equal the number of centers")

    @property
    def n_classes(self) -> int:
        return self.centers.shape[0]


@dataclass
class CenterLossParams:
    """Per-class penalty centers gamma (K, m), weight lam >= 0, and the
    penalty reading used for the center term (see `center_loss`)."""

    gamma: np.ndarray
    lam: float = 1.0
    penalty: str = "squared_cos_distance"

    def __post_init__(self):
        self.gamma = np.asarray(self.gamma, dtype=np.float64)
        if self.gamma.ndim != 2:
            raise DomainError("gamma must be a (K, m) matrix")
        if not np.all(np.isfinite(self.gamma)):
            raise DomainError("gamma contains non-finite entries")
        if self.lam < 0:
            raise DomainError(f"lambda must be non-negative, got {self.lam}")
        if self.penalty not in CENTER_PENALTIES:
            raise DomainError(f"unknown center penalty {self.penalty!r}")


@dataclass
class LossOutput:
    """Scalar loss plus gradients, shaped exactly like their parameters.

    `reduction` reports how the terms were combined (classification losses
    are batch means, contrast losses are sums over the formed tuples) so
    learning rates stay interpretable across families.
    """

    value: float
    grad_embeddings: np.ndarray | None = None
    grad_centers: np.ndarray | None = None
    grad_bias: np.ndarray | None = None
    grad_gamma: np.ndarray | None = None
    grad_logits: np.ndarray | None = None
    reduction: str = "mean"
    n_terms: int = 0

    def __post_init__(self):
        if not np.isfinite(self.value):
            raise DomainError(f"loss value is not finite: {self.value}")
        if self.value < 0.0:
            raise DomainError(f"loss value is negative: {self.value}")


@dataclass
class Logits:
    """Per-sample class logits with a vector-Jacobian product for backprop.

    `backward(g)` maps an upstream (N, K) gradient to gradients w.r.t. the
    embeddings, the centers, and the bias (None where not applicable).
    """

    values: np.ndarray
    backward: Callable[[np.ndarray], tuple]


def _check_batch(embeddings: np.ndarray, params: ClassifierParams) -> np.ndarray:
    x = np.asarray(embeddings, dtype=np.float64)
    if x.ndim != 2:
        raise DomainError("embeddings must be a (N, m) matrix")
    if x.shape[1] != params.centers.shape[1]:
        raise DomainError(
            f"embedding dim {x.shape[1]} != center dim {params.centers.shape[1]}"
        )
    if not np.all(np.isfinite(x)):
        raise DomainError("embeddings contain non-finite entries")
    return x


def _check_labels(labels, n_samples: int, n_classes: int) -> np.ndarray:
    y = np.asarray(labels, dtype=np.int64)
    if y.shape != (n_samples,):
        raise DomainError(f"labels must have shape ({n_samples},), got {y.shape}")
    if y.size and (y.min() < 0 or y.max() >= n_classes):
        raise DomainError(f"label out of range [0, {n_classes}): {y[np.argmax((y < 0) | (y >= n_classes))]}")
    return y


def logits_linear(embeddings, params: ClassifierParams) -> Logits:
    """Linear classification layer: sigma_i = x_i . C^T + b."""
    if params.bias is None:
        raise DomainError("logits_linear requires a bias vector")
    x = _check_batch(embeddings, params)
    c, b = params.centers, params.bias
    values = x @ c.T + b

    def backward(g: np.ndarray):
        return g @ c, g.T @ x, g.sum(axis=0)

    return Logits(values, backward)


def logits_nobias(embeddings, params: ClassifierParams) -> Logits:
    """Bias-free linear layer: sigma_ik = x_i . c_k = |x||c| cos(theta)."""
    x = _check_batch(embeddings, params)
    c = params.centers
    values = x @ c.T

    def backward(g: np.ndarray):
        return g @ c, g.T @ x, None

    return Logits(values, backward)


def _cosine_parts(x: np.ndarray, c: np.ndarray):
    u, xn = normalize_rows(x, "embedding")
    v, cn = normalize_rows(c, "center")
    return u, xn, v, cn, u @ v.T


def logits_coco(embeddings, params: ClassifierParams, hyper: LossHyper) -> Logits:
    """Pure-angle logits: sigma_ik = alpha * cos(theta_ik)."""
    x = _check_batch(embeddings, params)
    u, xn, v, cn, s = _cosine_parts(x, params.centers)
    alpha = hyper.alpha
    values = alpha * s

    def backward(g: np.ndarray):
        w = alpha * g
        dx = (w @ v - (w * s).sum(axis=1, keepdims=True) * u) / xn[:, None]
        dc = (w.T @ u - (w * s).sum(axis=0)[:, None] * v) / cn[:, None]
        return dx, dc, None

    return Logits(values, backward)


def logits_aam(embeddings, labels, params: ClassifierParams, hyper: LossHyper) -> Logits:
    """Additive angular margin logits.

    The target-class entry becomes alpha * cos(theta + m) with
    theta = arccos(clamped cosine); other entries are plain alpha * cos.
    The target-entry derivative w.r.t. the cosine is sin(theta+m)/sin(theta),
    replaced by 1 when sin(theta) < AAM_SIN_GUARD.
    """
    if not 0.0 <= hyper.margin <= 0.5:
        raise DomainError(f"aam margin must lie in [0, 0.5], got {hyper.margin}")
    x = _check_batch(embeddings, params)
    y = _check_labels(labels, x.shape[0], params.n_classes)
    u, xn, v, cn, s = _cosine_parts(x, params.centers)
    alpha, m = hyper.alpha, hyper.margin
    n = x.shape[0]
    rows = np.arange(n)

    s_target = np.clip(s[rows, y], -1.0, 1.0)
    theta = np.arccos(s_target)
    values = alpha * s.copy()
    values[rows, y] = alpha * np.cos(theta + m)

    def backward(g: np.ndarray):
        factor = np.ones((n, params.n_classes))
        sin_t = np.sin(theta)
        safe = sin_t >= AAM_SIN_GUARD
        f = np.ones(n)
        f[safe] = np.sin(theta[safe] + m) / sin_t[safe]
        factor[rows, y] = f
        w = alpha * g * factor
        dx = (w @ v - (w * s).sum(axis=1, keepdims=True) * u) / xn[:, None]
        dc = (w.T @ u - (w * s).sum(axis=0)[:, None] * v) / cn[:, None]
        return dx, dc, None

    return Logits(values, backward)


def _ce_core(values: np.ndarray, labels: np.ndarray):
    """Mean negative log-softmax of the target logit, max-subtracted."""
    n = values.shape[0]
    z = values - values.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    value = float(-logp[np.arange(n), labels].mean())
    dlogits = np.exp(logp)
    dlogits[np.arange(n), labels] -= 1.0
    dlogits /= n
    return value, dlogits


def cross_entropy(logits, labels) -> LossOutput:
    """Cross entropy over per-sample logits.

    Accepts either a `Logits` object (gradients are pushed through to the
    producing layer's embeddings/centers/bias) or a bare (N, K) array, in
    which case only `grad_logits` is populated.
    """
    if isinstance(logits, Logits):
        values = logits.values
    else:
        values = np.asarray(logits, dtype=np.float64)
    if values.ndim != 2:
        raise DomainError("logits must be a (N, K) matrix")
    if not np.all(np.isfinite(values)):
        raise DomainError("logits contain non-finite entries")
    y = _check_labels(labels, values.shape[0], values.shape[1])

    value, dlogits = _ce_core(values, y)
    out = LossOutput(value, grad_logits=dlogits, reduction="mean", n_terms=values.shape[0])
    if isinstance(logits, Logits):
        out.grad_embeddings, out.grad_centers, out.grad_bias = logits.backward(dlogits)
    return out


def center_loss(embeddings, labels, params: ClassifierParams, cparams: CenterLossParams) -> LossOutput:
    """Cross entropy plus a penalty pulling each embedding toward its class
    center gamma_k (angle-wise).

    Default penalty reading is the squared cosine distance (1 - cos)^2,
    matching the contrastive positive term; the `one_minus_cos_sq` switch
    selects the literal 1 - cos^2 reading instead. The cross-entropy part
    uses the linear logits when a bias is present, the bias-free ones
    otherwise.
    """
    x = _check_batch(embeddings, params)
    y = _check_labels(labels, x.shape[0], params.n_classes)
    if cparams.gamma.shape != params.centers.shape:
        raise DomainError("gamma must have the same shape as the centers")

    logit_fn = logits_linear if params.bias is not None else logits_nobias
    out = cross_entropy(logit_fn(x, params), y)
    out.reduction = "mean_ce+sum_penalty"

    gamma_used = cparams.gamma[y]
    g_unit, g_norms = normalize_rows(gamma_used, "gamma row")
    u, xn = normalize_rows(x, "embedding")
    s = np.clip((u * g_unit).sum(axis=1), -1.0, 1.0)

    if cparams.penalty == "squared_cos_distance":
        pen = (1.0 - s) ** 2
        dpen = -2.0 * (1.0 - s)
    else:  # one_minus_cos_sq
        pen = 1.0 - s**2
        dpen = -2.0 * s

    lam = cparams.lam
    out.value = float(out.value + 0.5 * lam * pen.sum())
    w = 0.5 * lam * dpen
    out.grad_embeddings = out.grad_embeddings + (w / xn)[:, None] * (g_unit - s[:, None] * u)
    grad_gamma = np.zeros_like(cparams.gamma)
    np.add.at(grad_gamma, y, (w / g_norms)[:, None] * (u - s[:, None] * g_unit))
    out.grad_gamma = grad_gamma
    return out


def _check_embeddings(embeddings) -> np.ndarray:
    x = np.asarray(embeddings, dtype=np.float64)
    if x.ndim != 2:
        raise DomainError("embeddings must be a (N, m) matrix")
    if not np.all(np.isfinite(x)):
        raise DomainError("embeddings contain non-finite entries")
    return x


def _pair_cosines(u: np.ndarray, i: np.ndarray, j: np.ndarray) -> np.ndarray:
    return np.clip((u[i] * u[j]).sum(axis=1), -1.0, 1.0)


def _accumulate_pair_grads(dx, u, xn, i, j, s, w):
    """dx[i] += w * d cos(x_i, x_j) / d x_i, and symmetrically for j."""
    np.add.at(dx, i, (w / xn[i])[:, None] * (u[j] - s[:, None] * u[i]))
    np.add.at(dx, j, (w / xn[j])[:, None] * (u[i] - s[:, None] * u[j]))


def contrastive_loss(embeddings, pairs: TupleIndex, hyper: LossHyper) -> LossOutput:
    """Cosine contrastive loss summed over explicit pair lists.

    Positive pairs contribute (1 - cos)^2; negative pairs contribute
    max(m - (1 - cos), 0)^2. The hinge subgradient at exactly zero
    activation is 0.
    """
    if not hyper.margin > 0:
        raise DomainError("contrastive loss needs a positive margin")
    x = _check_embeddings(embeddings)
    for name, idx in (("positive", pairs.positives), ("negative", pairs.negatives)):
        if idx.size and np.any(idx[:, 0] == idx[:, 1]):
            raise DomainError(f"{name} pair references the same index twice")
        if idx.size and (idx.min() < 0 or idx.max() >= x.shape[0]):
            raise DomainError(f"{name} pair index out of range")

    u, xn = normalize_rows(x, "embedding")
    dx = np.zeros_like(x)
    value = 0.0

    if len(pairs.positives):
        i, j = pairs.positives[:, 0], pairs.positives[:, 1]
        s = _pair_cosines(u, i, j)
        value += float(((1.0 - s) ** 2).sum())
        _accumulate_pair_grads(dx, u, xn, i, j, s, -2.0 * (1.0 - s))

    if len(pairs.negatives):
        i, j = pairs.negatives[:, 0], pairs.negatives[:, 1]
        s = _pair_cosines(u, i, j)
        h = hyper.margin - (1.0 - s)
        active = h > 0
        value += float((h[active] ** 2).sum())
        _accumulate_pair_grads(dx, u, xn, i, j, s, np.where(active, 2.0 * h, 0.0))

    n_terms = len(pairs.positives) + len(pairs.negatives)
    return LossOutput(value, grad_embeddings=dx, reduction="sum", n_terms=n_terms)


def _check_triplets(x: np.ndarray, labels, triplets: np.ndarray) -> np.ndarray:
    y = np.asarray(labels, dtype=np.int64)
    if y.shape != (x.shape[0],):
        raise DomainError("labels must match the number of embeddings")
    if triplets.size:
        if triplets.min() < 0 or triplets.max() >= x.shape[0]:
            raise DomainError("triplet index out of range")
        a, p, n = triplets[:, 0], triplets[:, 1], triplets[:, 2]
        if np.any(a == p):
            raise DomainError("triplet uses the same sample as anchor and positive")
        if np.any(y[a] != y[p]) or np.any(y[a] == y[n]):
            raise DomainError("triplet labels must satisfy y_a == y_p != y_n")
    return y


def _triplet_grads(x, u, xn, triplets, w_an, w_ap):
    a, p, n = triplets[:, 0], triplets[:, 1], triplets[:, 2]
    s_ap = _pair_cosines(u, a, p)
    s_an = _pair_cosines(u, a, n)
    dx = np.zeros_like(x)
    np.add.at(dx, a, (w_an / xn[a])[:, None] * (u[n] - s_an[:, None] * u[a])
              + (w_ap / xn[a])[:, None] * (u[p] - s_ap[:, None] * u[a]))
    np.add.at(dx, p, (w_ap / xn[p])[:, None] * (u[a] - s_ap[:, None] * u[p]))
    np.add.at(dx, n, (w_an / xn[n])[:, None] * (u[a] - s_an[:, None] * u[n]))
    return dx


def triplet_loss_hinge(embeddings, labels, tuples: TupleIndex, hyper: LossHyper) -> LossOutput:
    """Hinge triplet loss: sum of max(cos(a,n) - cos(a,p) + m, 0)."""
    x = _check_embeddings(embeddings)
    triplets = tuples.triplets
    _check_triplets(x, labels, triplets)
    if len(triplets) == 0:
        return LossOutput(0.0, grad_embeddings=np.zeros_like(x), reduction="sum")

    u, xn = normalize_rows(x, "embedding")
    a, p, n = triplets[:, 0], triplets[:, 1], triplets[:, 2]
    g = _pair_cosines(u, a, n) - _pair_cosines(u, a, p) + hyper.margin
    active = g > 0
    value = float(g[active].sum())
    w = active.astype(np.float64)
    dx = _triplet_grads(x, u, xn, triplets, w, -w)
    return LossOutput(value, grad_embeddings=dx, reduction="sum", n_terms=len(triplets))


def stable_sigmoid(z: np.ndarray) -> np.ndarray:
    """Overflow-safe logistic function, branching on the argument sign."""
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def triplet_loss_sigmoid(embeddings, labels, tuples: TupleIndex, hyper: LossHyper) -> LossOutput:
    """Sigmoid triplet loss: sum of sigmoid(alpha * (cos(a,n) - cos(a,p))).

    Every term lies in (0, 1), so large violations saturate instead of
    dominating the batch; no margin parameter is involved.
    """
    x = _check_embeddings(embeddings)
    triplets = tuples.triplets
    _check_triplets(x, labels, triplets)
    if len(triplets) == 0:
        return LossOutput(0.0, grad_embeddings=np.zeros_like(x), reduction="sum")

    u, xn = normalize_rows(x, "embedding")
    a, p, n = triplets[:, 0], triplets[:, 1], triplets[:, 2]
    sig = stable_sigmoid(hyper.alpha * (_pair_cosines(u, a, n) - _pair_cosines(u, a, p)))
    value = float(sig.sum())
    w = hyper.alpha * sig * (1.0 - sig)
    dx = _triplet_grads(x, u, xn, triplets, w, -w)
    return LossOutput(value, grad_embeddings=dx, reduction="sum", n_terms=len(triplets))


def finite_difference_check(loss_fn, inputs: dict, epsilon: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    `loss_fn` maps a dict of named arrays to (value, grads) where grads
    carries one array per input name. Every coordinate of every input is
    perturbed by +/- epsilon; the error per coordinate is
    |analytic - numeric| / max(1, |numeric|). Reports, never raises.
    """
    if not 0 < epsilon <= 1e-2:
        raise DomainError(f"epsilon must lie in (0, 1e-2], got {epsilon}")
    arrays = {k: np.asarray(v, dtype=np.float64).copy() for k, v in inputs.items()}
    _, analytic = loss_fn(arrays)

    worst = 0.0
    for name, arr in arrays.items():
        grad = np.asarray(analytic[name], dtype=np.float64)
        flat = arr.reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + epsilon
            up, _ = loss_fn(arrays)
            flat[idx] = orig - epsilon
            down, _ = loss_fn(arrays)
            flat[idx] = orig
            numeric = (up - down) / (2.0 * epsilon)
            err = abs(grad.reshape(-1)[idx] - numeric) / max(1.0, abs(numeric))
            worst = max(worst, err)
    return worst


@dataclass
class LossState:
    """Trainable loss-side parameters bundled for the training loop."""

    hyper: LossHyper
    classifier: ClassifierParams | None = None
    center: CenterLossParams | None = None


def init_loss_state(
    kind: str,
    n_classes: int,
    embedding_dim: int,
    hyper: LossHyper,
    rng: np.random.Generator,
    lam: float = 1.0,
    center_penalty: str = "squared_cos_distance",
) -> LossState:
    """Create the trainable state a loss kind needs.

    Centers and gamma start from a centered uniform distribution with scale
    1/sqrt(m); the bias starts at zero.
    """
    if kind not in LOSS_KINDS:
        raise DomainError(f"unknown loss kind {kind!r}")
    state = LossState(hyper=hyper)
    if kind in CLASSIFICATION_KINDS:
        scale = 1.0 / np.sqrt(embedding_dim)
        centers = rng.uniform(-scale, scale, size=(n_classes, embedding_dim))
        bias = np.zeros(n_classes) if kind in ("ce", "center") else None
        state.classifier = ClassifierParams(centers, bias)
        if kind == "center":
            gamma = rng.uniform(-scale, scale, size=(n_classes, embedding_dim))
            state.center = CenterLossParams(gamma, lam=lam, penalty=center_penalty)
    return state


def evaluate_loss(kind, embeddings, labels, state: LossState, tuples: TupleIndex | None = None) -> LossOutput:
    """Dispatch one loss evaluation by kind."""
    if kind == "ce":
        return cross_entropy(logits_linear(embeddings, state.classifier), labels)
    if kind == "ce_nobias":
        return cross_entropy(logits_nobias(embeddings, state.classifier), labels)
    if kind == "coco":
        return cross_entropy(logits_coco(embeddings, state.classifier, state.hyper), labels)
    if kind == "aam":
        return cross_entropy(logits_aam(embeddings, labels, state.classifier, state.hyper), labels)
    if kind == "center":
        return center_loss(embeddings, labels, state.classifier, state.center)
    if tuples is None:
        raise DomainError(f"loss kind {kind!r} needs formed tuples")
    if kind == "contrastive":
        return contrastive_loss(embeddings, tuples, state.hyper)
    if kind == "triplet_hinge":
        return triplet_loss_hinge(embeddings, labels, tuples, state.hyper)
    if kind == "triplet_sigmoid":
        return triplet_loss_sigmoid(embeddings, labels, tuples, state.hyper)
    raise DomainError(f"unknown loss kind {kind!r}")
