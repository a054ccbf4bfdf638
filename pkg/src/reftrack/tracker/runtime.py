"""Online inference: track state, per-frame stepping, prediction files."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..dataset_io import VideoData, write_predictions
from ..nncore import Tensor, no_grad, sigmoid
from .model import TrackerModel


@dataclass
class Track:
    identity: int
    query: np.ndarray          # (D,) embedding carried to the next frame
    box: tuple                 # last predicted normalized box
    miss: int = 0


@dataclass
class TrackState:
    tracks: list[Track] = field(default_factory=list)
    next_identity: int = 1


@dataclass
class FramePrediction:
    identity: int
    cls_prob: float
    box: tuple                 # normalized (cx, cy, w, h)
    refer_raw: float           # R_cos for the cosine head
    refer_prob: float
    referred: bool
    from_track: bool


def _sig(x):
    return 1.0 / (1.0 + np.exp(-x))


def step(model: TrackerModel, feat_frame: np.ndarray, text: str,
         state: TrackState, beta_ref: float | None = None):
    """Run one frame; returns (predictions, updated state)."""
    cfg = model.cfg
    beta = cfg.beta_ref if beta_ref is None else beta_ref
    with no_grad():
        s_emb, s_ref = model.encode_text(text)
        track_rows = [Tensor(t.query) for t in state.tracks]
        d_t, cls_logit, boxes, raw, refer_logit = model.forward(
            feat_frame, s_emb, s_ref, track_rows)
        probs = _sig(cls_logit.data)
        refer_probs = _sig(refer_logit.data)
        box_arr = boxes.data

    preds: list[FramePrediction] = []
    new_tracks: list[Track] = []
    n_det = cfg.n_det

    # existing tracks keep their identity; misses age them out
    for i, track in enumerate(state.tracks):
        row = n_det + i
        emb = d_t.data[row]
        if probs[row] > cfg.tau_det:
            referred = refer_probs[row] > beta
            preds.append(FramePrediction(
                identity=track.identity, cls_prob=float(probs[row]),
                box=tuple(box_arr[row]), refer_raw=float(raw.data[row]),
                refer_prob=float(refer_probs[row]), referred=bool(referred),
                from_track=True))
            new_tracks.append(Track(identity=track.identity, query=emb,
                                    box=tuple(box_arr[row]), miss=0))
        else:
            if track.miss + 1 < cfg.miss_patience:
                new_tracks.append(Track(identity=track.identity, query=emb,
                                        box=track.box, miss=track.miss + 1))

    # detect queries above the birth threshold spawn fresh identities
    next_id = state.next_identity
    for row in range(n_det):
        if probs[row] > cfg.tau_det:
            referred = refer_probs[row] > beta
            preds.append(FramePrediction(
                identity=next_id, cls_prob=float(probs[row]),
                box=tuple(box_arr[row]), refer_raw=float(raw.data[row]),
                refer_prob=float(refer_probs[row]), referred=bool(referred),
                from_track=False))
            new_tracks.append(Track(identity=next_id, query=d_t.data[row],
                                    box=tuple(box_arr[row]), miss=0))
            next_id += 1

    return preds, TrackState(tracks=new_tracks, next_identity=next_id)


def denormalize_box(box, image_size):
    cx, cy, w, h = box
    iw, ih = image_size
    return ((cx - w / 2) * iw, (cy - h / 2) * ih, w * iw, h * ih)


def track_video(model: TrackerModel, video: VideoData, features: np.ndarray,
                prompt_ids=None, beta_ref: float | None = None,
                out_dir=None) -> dict:
    """Run the tracker over every prompt of a video.

    Returns prompt id -> frame -> list of (identity, pixel box, refer
    prob) for referred outputs only; optionally writes prediction files.
    """
    results = {}
    pids = sorted(video.prompts) if prompt_ids is None else sorted(prompt_ids)
    for pid in pids:
        text = video.prompts[pid]
        state = TrackState()
        rows = []
        per_frame = {}
        for t in range(video.num_frames):
            preds, state = step(model, features[t], text, state, beta_ref=beta_ref)
            referred = [p for p in preds if p.referred]
            per_frame[t] = [(p.identity,
                             denormalize_box(p.box, video.image_size),
                             p.refer_prob) for p in referred]
            rows.extend((t, ident, box, score)
                        for ident, box, score in per_frame[t])
        results[pid] = per_frame
        if out_dir is not None:
            write_predictions(f"{out_dir}/{video.name}/{pid:04d}.txt", rows)
    return results
