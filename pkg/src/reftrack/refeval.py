"""Prompt-conditioned HOTA-family metrics.

For each prompt the ground truth is the set of referred boxes; any
predicted box for a visible-but-unreferred object therefore counts as a
false positive.  Per localization threshold alpha the per-frame matching
is the one-to-one assignment over pairs with IoU >= alpha that maximizes
(match count, then total global association score, then total IoU);
detection and association accuracies combine as
HOTA_alpha = sqrt(DetA_alpha * AssA_alpha) and final numbers average
over alpha in {0.05, 0.10, ..., 0.95}.  Per-benchmark numbers are the
arithmetic mean over prompts.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import linear_sum_assignment

from .dataset_io import Benchmark, read_predictions

log = logging.getLogger(__name__)

ALPHAS = np.arange(0.05, 1.0, 0.05)

METRIC_NAMES = ("HOTA", "DetA", "AssA", "DetRe", "DetPr", "AssRe", "AssPr")

# lexicographic weights: count >> association score >> IoU tie-break
_COUNT_WEIGHT = 1e4
_IOU_TIEBREAK = 1e-8


def box_iou_matrix(gt_boxes, pred_boxes) -> np.ndarray:
    """IoU between (x, y, w, h) box arrays; shape (n_gt, n_pred)."""
    g = np.asarray(gt_boxes, dtype=np.float64).reshape(-1, 4)
    p = np.asarray(pred_boxes, dtype=np.float64).reshape(-1, 4)
    gx1, gy1 = g[:, 0], g[:, 1]
    gx2, gy2 = g[:, 0] + g[:, 2], g[:, 1] + g[:, 3]
    px1, py1 = p[:, 0], p[:, 1]
    px2, py2 = p[:, 0] + p[:, 2], p[:, 1] + p[:, 3]
    iw = np.maximum(0.0, np.minimum(gx2[:, None], px2[None, :])
                    - np.maximum(gx1[:, None], px1[None, :]))
    ih = np.maximum(0.0, np.minimum(gy2[:, None], py2[None, :])
                    - np.maximum(gy1[:, None], py1[None, :]))
    inter = iw * ih
    union = (g[:, 2] * g[:, 3])[:, None] + (p[:, 2] * p[:, 3])[None, :] - inter
    out = np.zeros_like(inter)
    np.divide(inter, union, out=out, where=union > 0)
    return out


def pair_score(iou: np.ndarray, assoc: np.ndarray, alpha: float) -> np.ndarray:
    """Combined matching score; zero for inadmissible pairs."""
    admissible = iou >= alpha
    return admissible * (_COUNT_WEIGHT + assoc + _IOU_TIEBREAK * iou)


def match_frame(gt_boxes, pred_boxes, alpha, assoc=None):
    """Optimal per-frame matching; returns (tp_pairs, fn_idx, fp_idx).

    tp_pairs are (gt_index, pred_index) tuples; assoc is the global
    association score matrix (defaults to zeros, reducing the objective
    to max count with IoU tie-break).
    """
    iou = box_iou_matrix(gt_boxes, pred_boxes)
    ng, npr = iou.shape
    if assoc is None:
        assoc = np.zeros_like(iou)
    if ng == 0 or npr == 0:
        return [], list(range(ng)), list(range(npr))
    score = pair_score(iou, np.asarray(assoc, dtype=np.float64), alpha)
    rows, cols = linear_sum_assignment(-score)
    tp = [(int(r), int(c)) for r, c in zip(rows, cols) if iou[r, c] >= alpha]
    matched_g = {r for r, _ in tp}
    matched_p = {c for _, c in tp}
    fn = [i for i in range(ng) if i not in matched_g]
    fp = [j for j in range(npr) if j not in matched_p]
    return tp, fn, fp


@dataclass
class PromptMetrics:
    """Alpha-averaged metrics for one prompt (plus per-alpha curves)."""
    hota: float
    deta: float
    assa: float
    detre: float
    detpr: float
    assre: float
    asspr: float
    per_alpha: dict = field(default_factory=dict)   # name -> np.ndarray(19)
    counts: dict = field(default_factory=dict)      # TP/FN/FP arrays per alpha

    def as_row(self):
        return (self.hota, self.deta, self.assa, self.detre, self.detpr,
                self.assre, self.asspr)


@dataclass
class MetricsReport:
    per_prompt: dict          # (video, prompt id) -> PromptMetrics
    averaged: dict            # metric name -> float

    def table(self) -> str:
        header = f"{'prompt':<28}" + "".join(f"{m:>9}" for m in METRIC_NAMES)
        lines = [header, "-" * len(header)]
        for key in sorted(self.per_prompt):
            pm = self.per_prompt[key]
            name = f"{key[0]}/{key[1]:04d}"
            lines.append(f"{name:<28}" + "".join(f"{v:9.4f}" for v in pm.as_row()))
        lines.append("-" * len(header))
        lines.append(f"{'AVERAGE':<28}"
                     + "".join(f"{self.averaged[m]:9.4f}" for m in METRIC_NAMES))
        return "\n".join(lines)


def _gather_tracks(frame_map):
    """frame -> list[(id, box)]  =>  (ids, per-frame id/box arrays)."""
    ids = sorted({tid for rows in frame_map.values() for tid, _ in rows})
    index = {tid: i for i, tid in enumerate(ids)}
    frames = {}
    for frame, rows in frame_map.items():
        if not rows:
            continue
        fids = np.array([index[tid] for tid, _ in rows], dtype=np.int64)
        boxes = np.array([b for _, b in rows], dtype=np.float64).reshape(-1, 4)
        frames[frame] = (fids, boxes)
    return ids, frames


def hota(gt_frames: dict, pred_frames: dict, alphas=ALPHAS) -> PromptMetrics:
    """HOTA components for one prompt.

    gt_frames / pred_frames: frame -> list of (track id, (x, y, w, h)).
    """
    alphas = np.asarray(alphas, dtype=np.float64)
    na = len(alphas)
    gt_ids, gtf = _gather_tracks(gt_frames)
    pr_ids, prf = _gather_tracks(pred_frames)
    ng, npr = len(gt_ids), len(pr_ids)

    n_gt = np.zeros(ng)
    n_pr = np.zeros(npr)
    iou_sum = np.zeros((ng, npr))
    all_frames = sorted(set(gtf) | set(prf))
    per_frame_iou = {}
    for t in all_frames:
        gi, gb = gtf.get(t, (np.empty(0, np.int64), np.empty((0, 4))))
        pi, pb = prf.get(t, (np.empty(0, np.int64), np.empty((0, 4))))
        n_gt[gi] += 1
        n_pr[pi] += 1
        if len(gi) and len(pi):
            iou = box_iou_matrix(gb, pb)
            iou_sum[np.ix_(gi, pi)] += iou
            per_frame_iou[t] = iou

    # global Jaccard association score per (gt, pred) track pair
    with np.errstate(divide="ignore", invalid="ignore"):
        denom = n_gt[:, None] + n_pr[None, :] - iou_sum
        assoc_global = np.where(denom > 0, iou_sum / np.maximum(denom, 1e-300), 0.0)

    tp = np.zeros(na)
    fn = np.zeros(na)
    fp = np.zeros(na)
    matches = np.zeros((na, ng, npr))

    alpha_min = alphas.min()
    for t in all_frames:
        gi, _ = gtf.get(t, (np.empty(0, np.int64), None))
        pi, _ = prf.get(t, (np.empty(0, np.int64), None))
        iou = per_frame_iou.get(t)
        if iou is None or iou.size == 0:
            fn += len(gi)
            fp += len(pi)
            continue
        base = iou >= alpha_min
        if base.sum(axis=0).max(initial=0) <= 1 and base.sum(axis=1).max(initial=0) <= 1:
            # unambiguous frame: each row/col has at most one candidate,
            # so for every alpha the matching is just "pairs with IoU >= alpha"
            rr, cc = np.nonzero(base)
            pair_iou = iou[rr, cc]
            hit = pair_iou[None, :] >= alphas[:, None]       # (na, npairs)
            k = hit.sum(axis=1)
            tp += k
            fn += len(gi) - k
            fp += len(pi) - k
            for a in range(na):
                sel = hit[a]
                if sel.any():
                    matches[a, gi[rr[sel]], pi[cc[sel]]] += 1
        else:
            assoc = assoc_global[np.ix_(gi, pi)]
            for a, alpha in enumerate(alphas):
                score = pair_score(iou, assoc, alpha)
                rows, cols = linear_sum_assignment(-score)
                sel = iou[rows, cols] >= alpha
                rows, cols = rows[sel], cols[sel]
                k = len(rows)
                tp[a] += k
                fn[a] += len(gi) - k
                fp[a] += len(pi) - k
                matches[a, gi[rows], pi[cols]] += 1

    deta = np.zeros(na)
    detre = np.zeros(na)
    detpr = np.zeros(na)
    assa = np.zeros(na)
    assre = np.zeros(na)
    asspr = np.zeros(na)
    for a in range(na):
        d = tp[a] + fn[a] + fp[a]
        deta[a] = tp[a] / d if d > 0 else 0.0
        detre[a] = tp[a] / (tp[a] + fn[a]) if tp[a] + fn[a] > 0 else 0.0
        detpr[a] = tp[a] / (tp[a] + fp[a]) if tp[a] + fp[a] > 0 else 0.0
        m = matches[a]
        if tp[a] > 0:
            with np.errstate(divide="ignore", invalid="ignore"):
                pair_ass = np.where(m > 0, m / (n_gt[:, None] + n_pr[None, :] - m), 0.0)
                pair_re = np.where(m > 0, m / np.maximum(n_gt[:, None], 1e-300), 0.0)
                pair_pr = np.where(m > 0, m / np.maximum(n_pr[None, :], 1e-300), 0.0)
            assa[a] = float((m * pair_ass).sum() / tp[a])
            assre[a] = float((m * pair_re).sum() / tp[a])
            asspr[a] = float((m * pair_pr).sum() / tp[a])

    hota_a = np.sqrt(deta * assa)
    per_alpha = {"HOTA": hota_a, "DetA": deta, "AssA": assa, "DetRe": detre,
                 "DetPr": detpr, "AssRe": assre, "AssPr": asspr}
    return PromptMetrics(
        hota=float(hota_a.mean()), deta=float(deta.mean()), assa=float(assa.mean()),
        detre=float(detre.mean()), detpr=float(detpr.mean()),
        assre=float(assre.mean()), asspr=float(asspr.mean()),
        per_alpha=per_alpha,
        counts={"TP": tp, "FN": fn, "FP": fp},
    )


def referral_gt_frames(video, pid) -> dict:
    """Referred boxes per frame for one prompt of one video."""
    out = {}
    frames_map = video.referrals.get(pid, {})
    for frame in range(video.num_frames):
        boxes = video.gt_boxes(frame)
        ids = frames_map.get(frame, set())
        out[frame] = [(eid, boxes[eid]) for eid in sorted(ids)]
    return out


def evaluate_benchmark(benchmark: Benchmark, predictions_root) -> MetricsReport:
    """Per-prompt HOTA against referral ground truth, averaged over prompts.

    Prediction files live at <root>/<video>/<prompt id>.txt in the
    "frame,id,x,y,w,h,refer_score" format; a missing file is treated as
    an empty prediction set (with a warning).
    """
    predictions_root = Path(predictions_root)
    per_prompt = {}
    for vname, video in benchmark.videos.items():
        for pid in sorted(video.prompts):
            pfile = predictions_root / vname / f"{pid:04d}.txt"
            if pfile.exists():
                pred = read_predictions(pfile)
            else:
                log.warning("missing prediction file %s; treating as empty", pfile)
                pred = {}
            gt_frames = referral_gt_frames(video, pid)
            per_prompt[(vname, pid)] = hota(gt_frames, pred)
    if not per_prompt:
        raise ValueError("benchmark has no prompts to evaluate")
    averaged = {}
    for i, name in enumerate(METRIC_NAMES):
        averaged[name] = float(np.mean([pm.as_row()[i] for pm in per_prompt.values()]))
    return MetricsReport(per_prompt=per_prompt, averaged=averaged)


def write_metrics_file(report: MetricsReport, path):
    """Machine-readable key=value metrics dump."""
    with open(path, "w") as fh:
        for name in METRIC_NAMES:
            fh.write(f"mean_{name} = {report.averaged[name]!r}\n")
        for (vname, pid) in sorted(report.per_prompt):
            pm = report.per_prompt[(vname, pid)]
            for name, value in zip(METRIC_NAMES, pm.as_row()):
                fh.write(f"{vname}/{pid:04d}/{name} = {value!r}\n")
