"""Detection losses: binary focal, L1 box, generalized-IoU.

Boxes are (cx, cy, w, h), normalized to [0, 1].  All losses return a
scalar tensor wired into the tape.
"""

from __future__ import annotations

import numpy as np

from .tensor import (
    Tensor, _as_tensor, add, log, mul, powc, relu, scale, sigmoid, sub, tmean,
)


class BoxValidationError(ValueError):
    """Nonpositive width/height in a target box."""


def focal_loss(logits, targets, alpha=0.25, gamma=2.0):
    """Mean binary focal loss over logits; targets in {0, 1}.

    alpha weights the positive term only, so gamma=0, alpha=1 reduces
    exactly to plain binary cross-entropy.
    """
    logits = _as_tensor(logits)
    t = np.asarray(targets, dtype=np.float64)
    p = sigmoid(logits)
    eps = 1e-12
    # positive part: -alpha * (1-p)^gamma * log(p), weighted by t
    pos = mul(Tensor(t * -alpha), mul(powc(sub(1.0, p), gamma), log(add(p, eps))))
    # negative part: -p^gamma * log(1-p), weighted by (1-t)
    neg = mul(Tensor(t - 1.0), mul(powc(p, gamma), log(add(sub(1.0, p), eps))))
    return tmean(add(pos, neg))


def _cxcywh_to_corners(boxes):
    cx, cy = boxes[:, 0], boxes[:, 1]
    w, h = boxes[:, 2], boxes[:, 3]
    hw, hh = scale(w, 0.5), scale(h, 0.5)
    return sub(cx, hw), sub(cy, hh), add(cx, hw), add(cy, hh)


def l1_box(pred, target):
    """Mean absolute coordinate error; target is constant."""
    pred = _as_tensor(pred)
    t = np.asarray(target, dtype=np.float64)
    diff = sub(pred, Tensor(t))
    sign = np.sign(pred.data - t)
    return tmean(mul(diff, Tensor(sign)))


def _validate_boxes(arr, who):
    arr = np.asarray(arr, dtype=np.float64)
    if arr.size and (arr[:, 2].min() <= 0 or arr[:, 3].min() <= 0):
        raise BoxValidationError(f"{who} boxes must have positive width/height")


def giou_pairwise(pred, target):
    """Per-row GIoU between matched (cx,cy,w,h) boxes; returns rank-1 tensor."""
    pred = _as_tensor(pred)
    _validate_boxes(target, "target")
    if np.any(pred.data[:, 2:] <= 0):
        raise BoxValidationError("predicted boxes must have positive width/height")
    px1, py1, px2, py2 = _cxcywh_to_corners(pred)
    t = np.asarray(target, dtype=np.float64)
    tx1, ty1 = t[:, 0] - t[:, 2] / 2, t[:, 1] - t[:, 3] / 2
    tx2, ty2 = t[:, 0] + t[:, 2] / 2, t[:, 1] + t[:, 3] / 2

    def vmax(a, b):
        # max(a, const b) via masks, differentiable a.e.
        m = (a.data >= b).astype(np.float64)
        return add(mul(a, Tensor(m)), Tensor(b * (1.0 - m)))

    def vmin(a, b):
        m = (a.data <= b).astype(np.float64)
        return add(mul(a, Tensor(m)), Tensor(b * (1.0 - m)))

    ix1, iy1 = vmax(px1, tx1), vmax(py1, ty1)
    ix2, iy2 = vmin(px2, tx2), vmin(py2, ty2)
    iw = relu(sub(ix2, ix1))
    ih = relu(sub(iy2, iy1))
    inter = mul(iw, ih)
    pa = mul(sub(px2, px1), sub(py2, py1))
    ta = (tx2 - tx1) * (ty2 - ty1)
    union = sub(add(pa, Tensor(ta)), inter)
    iou = mul(inter, powc(union, -1.0))
    ex1, ey1 = vmin(px1, tx1), vmin(py1, ty1)
    ex2, ey2 = vmax(px2, tx2), vmax(py2, ty2)
    enc = mul(sub(ex2, ex1), sub(ey2, ey1))
    return sub(iou, mul(sub(enc, union), powc(enc, -1.0)))


def giou_loss(pred, target):
    """Scalar mean of (1 - GIoU) over matched box pairs."""
    g = giou_pairwise(pred, target)
    return tmean(sub(1.0, g))
