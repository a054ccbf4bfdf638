"""Query-to-target matching for training.

Track queries are force-matched to their own identity's box whenever it
is visible; detect queries compete for the remaining boxes through an
optimal linear assignment on the detection cost
lambda_cls * focal + lambda_l1 * L1 + lambda_giou * (1 - GIoU).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment


@dataclass
class MatchResult:
    # per query row: gt entity id or None
    target_ids: list
    # per query row: normalized (cx, cy, w, h) target box or None
    target_boxes: list
    # per query row: 1.0 if matched and referred, else 0.0
    refer_targets: np.ndarray
    # per query row: 1.0 if matched to any box (class target)
    cls_targets: np.ndarray


def focal_pos_cost(probs, alpha=0.25, gamma=2.0):
    p = np.clip(probs, 1e-12, 1.0 - 1e-12)
    return -alpha * (1.0 - p) ** gamma * np.log(p)


def giou_matrix_cxcywh(pred, gt):
    """GIoU between (n,4) and (m,4) normalized center-form boxes."""
    p = np.asarray(pred, dtype=np.float64).reshape(-1, 4)
    g = np.asarray(gt, dtype=np.float64).reshape(-1, 4)
    px1, py1 = p[:, 0] - p[:, 2] / 2, p[:, 1] - p[:, 3] / 2
    px2, py2 = p[:, 0] + p[:, 2] / 2, p[:, 1] + p[:, 3] / 2
    gx1, gy1 = g[:, 0] - g[:, 2] / 2, g[:, 1] - g[:, 3] / 2
    gx2, gy2 = g[:, 0] + g[:, 2] / 2, g[:, 1] + g[:, 3] / 2
    iw = np.maximum(0.0, np.minimum(px2[:, None], gx2[None, :])
                    - np.maximum(px1[:, None], gx1[None, :]))
    ih = np.maximum(0.0, np.minimum(py2[:, None], gy2[None, :])
                    - np.maximum(py1[:, None], gy1[None, :]))
    inter = iw * ih
    union = (p[:, 2] * p[:, 3])[:, None] + (g[:, 2] * g[:, 3])[None, :] - inter
    iou = np.where(union > 0, inter / np.maximum(union, 1e-300), 0.0)
    ew = np.maximum(px2[:, None], gx2[None, :]) - np.minimum(px1[:, None], gx1[None, :])
    eh = np.maximum(py2[:, None], gy2[None, :]) - np.minimum(py1[:, None], gy1[None, :])
    enc = np.maximum(ew * eh, 1e-300)
    return iou - (enc - union) / enc


def detection_cost(probs, boxes, gt_boxes, cfg):
    """Cost matrix (n_queries, n_gt) for the detect-query assignment."""
    cls_cost = focal_pos_cost(probs, cfg.focal_alpha, cfg.focal_gamma)
    l1 = np.abs(boxes[:, None, :] - np.asarray(gt_boxes)[None, :, :]).mean(axis=2)
    giou = giou_matrix_cxcywh(boxes, gt_boxes)
    return (cfg.lambda_cls * cls_cost[:, None]
            + cfg.lambda_l1 * l1
            + cfg.lambda_giou * (1.0 - giou))


def assign_targets(probs, boxes, gt_entries, referred_ids, track_identities,
                   cfg) -> MatchResult:
    """Match every query row to a target.

    probs/boxes: per-query class probability and normalized box (numpy).
    gt_entries: list of (entity id, normalized cxcywh box) visible now.
    referred_ids: entity ids referred by the prompt at this frame.
    track_identities: row index -> identity for rows >= n_det.
    """
    n = len(probs)
    target_ids = [None] * n
    target_boxes = [None] * n
    gt_by_id = {eid: box for eid, box in gt_entries}

    taken = set()
    for row, identity in track_identities.items():
        if identity in gt_by_id:
            target_ids[row] = identity
            target_boxes[row] = gt_by_id[identity]
            taken.add(identity)

    remaining = [(eid, box) for eid, box in gt_entries if eid not in taken]
    det_rows = [r for r in range(cfg.n_det) if r not in track_identities]
    if remaining and det_rows:
        cost = detection_cost(probs[det_rows],
                              np.asarray(boxes)[det_rows],
                              [b for _, b in remaining], cfg)
        rows, cols = linear_sum_assignment(cost)
        for r, c in zip(rows, cols):
            row = det_rows[r]
            eid, box = remaining[c]
            target_ids[row] = eid
            target_boxes[row] = box

    cls_targets = np.array([0.0 if t is None else 1.0 for t in target_ids])
    refer_targets = np.array([
        1.0 if (t is not None and t in referred_ids) else 0.0
        for t in target_ids])
    return MatchResult(target_ids=target_ids, target_boxes=target_boxes,
                       refer_targets=refer_targets, cls_targets=cls_targets)
