"""Shared test helpers: random loss instances away from hinge kinks, the
finite-difference adapters per loss kind, and the brute-force EER oracle.
"""

import numpy as np

from spklab import losses, sampling

# Hyper-parameters used for random gradient-check instances (the tuned
# operating points of each loss).
INSTANCE_HYPER = {
    "ce": losses.LossHyper(alpha=1.0, margin=0.0),
    "ce_nobias": losses.LossHyper(alpha=1.0, margin=0.0),
    "coco": losses.LossHyper(alpha=10.0, margin=0.0),
    "aam": losses.LossHyper(alpha=10.0, margin=0.05),
    "center": losses.LossHyper(alpha=1.0, margin=0.0),
    "contrastive": losses.LossHyper(alpha=1.0, margin=0.2),
    "triplet_hinge": losses.LossHyper(alpha=1.0, margin=0.1),
    "triplet_sigmoid": losses.LossHyper(alpha=10.0, margin=0.0),
}

KINK_GAP = 1e-3


def _labels_with_tuples(rng, batch, n_classes):
    """Labels guaranteeing at least one positive pair and one negative."""
    while True:
        y = rng.integers(0, n_classes, size=batch)
        if len(np.unique(y)) >= 2 and len(np.unique(y)) < batch:
            return y


def _near_kink(kind, x, y, tuples, hyper):
    """True when any hinge argument sits within KINK_GAP of its boundary,
    or an embedding/center cosine is close enough to +/-1 to trip the
    angular-margin guard."""
    from spklab.embedding import normalize_rows

    u, _ = normalize_rows(x)
    if kind == "contrastive" and len(tuples.negatives):
        i, j = tuples.negatives[:, 0], tuples.negatives[:, 1]
        s = (u[i] * u[j]).sum(axis=1)
        if np.any(np.abs(hyper.margin - (1.0 - s)) < KINK_GAP):
            return True
    if kind == "triplet_hinge" and len(tuples.triplets):
        a, p, n = tuples.triplets.T
        g = (u[a] * u[n]).sum(axis=1) - (u[a] * u[p]).sum(axis=1) + hyper.margin
        if np.any(np.abs(g) < KINK_GAP):
            return True
    return False


def draw_instance(kind, rng, dim=8, n_classes=5, batch=6):
    """Random embeddings/labels/params for one gradient-check instance,
    re-drawn until no tuple term sits near a hinge kink and no cosine is
    extreme enough to trip the angular guard."""
    hyper = INSTANCE_HYPER[kind]
    while True:
        x = rng.standard_normal((batch, dim))
        y = _labels_with_tuples(rng, batch, n_classes)
        scale = 1.0 / np.sqrt(dim)
        centers = rng.uniform(-scale, scale, size=(n_classes, dim))
        bias = 0.1 * rng.standard_normal(n_classes)
        gamma = rng.uniform(-scale, scale, size=(n_classes, dim))
        if kind == "contrastive":
            tuples = sampling.form_pairs(y)
        elif kind in losses.TRIPLET_KINDS:
            tuples = sampling.form_triplets(y)
        else:
            tuples = sampling.TupleIndex()
        from spklab.embedding import cosine_matrix

        if kind in ("coco", "aam", "center") and np.abs(cosine_matrix(x, centers)).max() > 0.999:
            continue
        if _near_kink(kind, x, y, tuples, hyper):
            continue
        return x, y, centers, bias, gamma, tuples, hyper


def fd_callable(kind, y, tuples, hyper, lam=1.0, penalty="squared_cos_distance"):
    """(inputs -> (value, grads)) closure for finite_difference_check.

    The input dict always carries 'x'; classification kinds add 'c' (and
    'b'/'g' where the loss trains them).
    """

    def fn(arrays):
        x = arrays["x"]
        if kind in ("ce", "center"):
            params = losses.ClassifierParams(arrays["c"], arrays["b"])
        elif kind in ("ce_nobias", "coco", "aam"):
            params = losses.ClassifierParams(arrays["c"])
        else:
            params = None

        if kind == "ce":
            out = losses.cross_entropy(losses.logits_linear(x, params), y)
            return out.value, {"x": out.grad_embeddings, "c": out.grad_centers, "b": out.grad_bias}
        if kind == "ce_nobias":
            out = losses.cross_entropy(losses.logits_nobias(x, params), y)
            return out.value, {"x": out.grad_embeddings, "c": out.grad_centers}
        if kind == "coco":
            out = losses.cross_entropy(losses.logits_coco(x, params, hyper), y)
            return out.value, {"x": out.grad_embeddings, "c": out.grad_centers}
        if kind == "aam":
            out = losses.cross_entropy(losses.logits_aam(x, y, params, hyper), y)
            return out.value, {"x": out.grad_embeddings, "c": out.grad_centers}
        if kind == "center":
            cparams = losses.CenterLossParams(arrays["g"], lam=lam, penalty=penalty)
            out = losses.center_loss(x, y, params, cparams)
            return out.value, {
                "x": out.grad_embeddings, "c": out.grad_centers,
                "b": out.grad_bias, "g": out.grad_gamma,
            }
        if kind == "contrastive":
            out = losses.contrastive_loss(x, tuples, hyper)
            return out.value, {"x": out.grad_embeddings}
        if kind == "triplet_hinge":
            out = losses.triplet_loss_hinge(x, y, tuples, hyper)
            return out.value, {"x": out.grad_embeddings}
        if kind == "triplet_sigmoid":
            out = losses.triplet_loss_sigmoid(x, y, tuples, hyper)
            return out.value, {"x": out.grad_embeddings}
        raise ValueError(kind)

    return fn


def fd_inputs(kind, x, centers, bias, gamma):
    inputs = {"x": x}
    if kind in ("ce", "ce_nobias", "coco", "aam", "center"):
        inputs["c"] = centers
    if kind in ("ce", "center"):
        inputs["b"] = bias
    if kind == "center":
        inputs["g"] = gamma
    return inputs


def gradient_check_instance(kind, rng, epsilon=1e-5, **draw_kw):
    """Max relative finite-difference error for one random instance."""
    x, y, centers, bias, gamma, tuples, hyper = draw_instance(kind, rng, **draw_kw)
    fn = fd_callable(kind, y, tuples, hyper)
    return losses.finite_difference_check(fn, fd_inputs(kind, x, centers, bias, gamma), epsilon)


def brute_force_eer_bracket(tar, non):
    """Direct threshold scan over midpoints plus +/-inf.

    Returns (lo, hi): the bracket that the crossing of the step-function
    FAR/FRR curves must fall inside. lo == hi when a candidate threshold
    hits FAR == FRR exactly.
    """
    tar = np.asarray(tar, dtype=np.float64)
    non = np.asarray(non, dtype=np.float64)
    scores = np.unique(np.concatenate([tar, non]))
    mids = (scores[:-1] + scores[1:]) / 2.0
    cands = np.concatenate([[-np.inf], mids, [np.inf]])
    far = (non[None, :] >= cands[:, None]).mean(axis=1)
    frr = (tar[None, :] < cands[:, None]).mean(axis=1)
    d = far - frr
    k = int(np.argmax(d <= 0))
    if d[k] == 0.0:
        return float(far[k]), float(far[k])
    j = k - 1
    lo = max(frr[j], far[k])
    hi = min(far[j], frr[k])
    return float(lo), float(hi)
