"""Evaluation metrics per representation, with a polarity registry."""

import numpy as np

LOWER, HIGHER = "lower", "higher"

POLARITY = {
    "l1": LOWER,
    "angular_l1": LOWER,
    "l2": LOWER,
    "position_l2": LOWER,
    "orientation_l1": LOWER,
    "accuracy": HIGHER,
    "miou": HIGHER,
    "pixels_improved": HIGHER,
}

LABELS = {
    "l1": "L1",
    "angular_l1": "L1 (degrees)",
    "l2": "L2",
    "position_l2": "L2 (meters)",
    "orientation_l1": "L1 (degrees)",
    "accuracy": "Accuracy",
    "miou": "mIOU",
    "pixels_improved": "Pixels improved (%)",
}


class UnitMismatch(ValueError):
    pass


def metrics_for(node):
    """Metric names that apply to a node, primary metric first."""
    if node.kind == "categorical":
        return ["accuracy", "miou"]
    if node.kind == "vector":
        return ["position_l2", "orientation_l1"] if node.units == "pose" else ["l2"]
    if node.units == "direction":
        return ["angular_l1"]
    return ["l1"]


def primary_metric(node):
    return metrics_for(node)[0]


def better(metric, a, b):
    """True when value ``a`` is strictly better than ``b`` for ``metric``."""
    return a < b if POLARITY[metric] == LOWER else a > b


def at_least_as_good(metric, a, b):
    return a <= b if POLARITY[metric] == LOWER else a >= b


def _check(node, metric):
    if metric not in metrics_for(node):
        raise UnitMismatch(f"metric {metric!r} does not apply to node {node.id} ({node.kind}, {node.units!r})")


def l1(pred, gt):
    return float(np.mean(np.abs(np.asarray(pred, np.float64) - np.asarray(gt, np.float64))))


def angular_errors(pred, gt):
    p = np.asarray(pred, np.float64)
    g = np.asarray(gt, np.float64)
    p = p / np.maximum(np.linalg.norm(p, axis=-1, keepdims=True), 1e-12)
    g = g / np.maximum(np.linalg.norm(g, axis=-1, keepdims=True), 1e-12)
    cos = np.clip((p * g).sum(axis=-1), -1.0, 1.0)
    return np.degrees(np.arccos(cos))


def angular_l1(pred, gt):
    return float(np.mean(angular_errors(pred, gt)))


def l2(pred, gt):
    d = np.asarray(pred, np.float64) - np.asarray(gt, np.float64)
    return float(np.mean(np.linalg.norm(d, axis=-1)))


def position_l2(pred, gt):
    return l2(np.asarray(pred)[..., :3], np.asarray(gt)[..., :3])


def orientation_l1(pred, gt):
    return l1(np.asarray(pred)[..., 3:6], np.asarray(gt)[..., 3:6])


def accuracy(pred, gt):
    return float(np.mean(np.asarray(pred) == np.asarray(gt)))


def miou(pred, gt, n_classes=None):
    """Mean IoU over the classes present in the ground truth, pooled over all pixels."""
    p = np.asarray(pred).astype(np.int64).ravel()
    g = np.asarray(gt).astype(np.int64).ravel()
    n = int(max(p.max(initial=0), g.max(initial=0)) + 1) if n_classes is None else n_classes
    conf = np.bincount(g * n + p, minlength=n * n).reshape(n, n)
    inter = np.diag(conf)
    union = conf.sum(axis=0) + conf.sum(axis=1) - inter
    present = conf.sum(axis=1) > 0
    return float(np.mean(inter[present] / union[present]))


_FUNCS = {
    "l1": l1,
    "angular_l1": angular_l1,
    "l2": l2,
    "position_l2": position_l2,
    "orientation_l1": orientation_l1,
    "accuracy": accuracy,
}


def compute(node, metric, pred, gt):
    _check(node, metric)
    if np.shape(pred) != np.shape(gt):
        raise ValueError(f"prediction shape {np.shape(pred)} != ground truth {np.shape(gt)}")
    if metric == "miou":
        return miou(pred, gt, node.size)
    return _FUNCS[metric](pred, gt)


def evaluate_layer(node, pred, gt):
    return {m: compute(node, m, pred, gt) for m in metrics_for(node)}


def element_errors(node, pred, gt):
    """Per-element error used for pixel-level comparisons (boolean 'wrong' for labels)."""
    if node.kind == "categorical":
        return np.asarray(pred) != np.asarray(gt)
    if node.units == "direction":
        return angular_errors(pred, gt)
    d = np.abs(np.asarray(pred, np.float64) - np.asarray(gt, np.float64))
    return d.mean(axis=-1) if node.kind == "continuous" else d


def pixels_improved(node, new, baseline, gt):
    """Percentage of elements where ``new`` is strictly closer to ``gt`` than ``baseline``."""
    if not (np.shape(new) == np.shape(baseline) == np.shape(gt)):
        raise ValueError("new, baseline and ground truth must be aligned")
    e_new = element_errors(node, new, gt)
    e_base = element_errors(node, baseline, gt)
    if node.kind == "categorical":
        improved = (~e_new) & e_base
    else:
        improved = e_new < e_base
    return 100.0 * float(np.mean(improved))
