"""Multi-frame training loop with track-group denoising."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from ..dataset_io import Benchmark, VideoData, benchmark_palette
from ..nncore import (
    AdamW, Tensor, add, clip_grad_norm, focal_loss, giou_loss, l1_box,
    load_checkpoint, save_checkpoint, scale,
)
from ..promptlang import Vocabularies, grammar_vocabulary
from ..scenesim import CATEGORIES, rasterize
from .config import SGM_MODES, REFER_HEADS, TEXT_SPACES, TrackerConfig
from .model import TrackerModel

log = logging.getLogger(__name__)


def feature_layout(colors) -> dict:
    return {"categories": CATEGORIES, "colors": tuple(colors),
            "dim": 1 + len(CATEGORIES) + len(colors) + 2}


def featurize_video(video: VideoData, palette, grid_dims) -> np.ndarray:
    """Feature grids for a benchmark video (colors from entities.txt)."""
    spec = feature_layout(palette)
    attrs = {eid: (cat, col) for eid, (cat, col) in video.entities.items()}
    out = np.zeros((video.num_frames, grid_dims[0] * grid_dims[1], spec["dim"]))
    prev = None
    for t in range(video.num_frames):
        frame = [(eid, box) for eid, box, _ in video.gt[t]]
        out[t] = rasterize(frame, grid_dims, video.image_size, spec, attrs,
                           prev_centers=prev)
        prev = {eid: (b[0] + b[2] / 2, b[1] + b[3] / 2) for eid, b in frame}
    return out


def normalized_gt(video: VideoData, frame: int):
    """(entity id, normalized cxcywh) entries for one frame."""
    iw, ih = video.image_size
    out = []
    for eid, (x, y, w, h), _ in video.gt[frame]:
        out.append((eid, ((x + w / 2) / iw, (y + h / 2) / ih, w / iw, h / ih)))
    return out


def _frame_loss(model, memory, s_emb, s_ref, track_rows, track_identities,
                gt_entries, referred_ids, cfg, noise=None):
    """Forward from the query set on; returns (loss, d_t, match)."""
    q, pos = model.query_set(track_rows)
    if noise is not None:
        q = add(q, Tensor(noise))
    q_s = model.sgm(q, pos, s_emb, cfg.n_det)
    d_t = model.decode(q_s, memory)
    cls_logit, boxes, _raw, refer_logit = model.heads(d_t, s_ref)

    probs = 1.0 / (1.0 + np.exp(-cls_logit.data))
    match = None
    if gt_entries or track_identities:
        from .assign import assign_targets
        match = assign_targets(probs, boxes.data, gt_entries, referred_ids,
                               track_identities, cfg)
        cls_targets = match.cls_targets
        refer_targets = match.refer_targets
    else:
        n = len(probs)
        cls_targets = np.zeros(n)
        refer_targets = np.zeros(n)

    loss = scale(focal_loss(cls_logit, cls_targets,
                            cfg.focal_alpha, cfg.focal_gamma), cfg.lambda_cls)
    loss = add(loss, scale(focal_loss(refer_logit, refer_targets,
                                      cfg.refer_alpha, cfg.refer_gamma),
                           cfg.lambda_ref))
    if match is not None:
        rows = [r for r, t in enumerate(match.target_ids) if t is not None]
        if rows:
            tgt = np.array([match.target_boxes[r] for r in rows])
            pred_rows = boxes[rows, :]
            loss = add(loss, scale(l1_box(pred_rows, tgt), cfg.lambda_l1))
            loss = add(loss, scale(giou_loss(pred_rows, tgt), cfg.lambda_giou))
    return loss, d_t, match


@dataclass
class TrainLog:
    epoch_losses: list


def train(benchmark: Benchmark, cfg: TrackerConfig,
          train_prompts: dict[str, list[int]] | None = None,
          features: dict[str, np.ndarray] | None = None,
          callback=None) -> tuple[TrackerModel, TrainLog]:
    """Train a tracker on (a prompt subset of) a benchmark.

    train_prompts: video name -> prompt ids (defaults to all prompts).
    Deterministic for a fixed cfg.seed on one platform.
    """
    cfg.validate()
    if not any(video.prompts for video in benchmark.videos.values()):
        raise ValueError("benchmark has no prompts to train on")
    palette = benchmark_palette(benchmark)
    vocab = grammar_vocabulary(Vocabularies(colors=palette))
    feat_dim = feature_layout(palette)["dim"]
    model = TrackerModel(cfg, vocab, feat_dim)
    model.palette = palette

    if features is None:
        features = {name: featurize_video(v, palette, cfg.grid)
                    for name, v in benchmark.videos.items()}

    clips = []
    for name, video in benchmark.videos.items():
        pids = (train_prompts.get(name, []) if train_prompts is not None
                else sorted(video.prompts))
        starts = list(range(0, max(video.num_frames - cfg.clip_len, 0) + 1,
                            cfg.clip_len))
        for pid in pids:
            clips.extend((name, pid, t0) for t0 in starts)
    if not clips:
        raise ValueError("no training clips (empty prompt selection?)")

    rng = np.random.default_rng(cfg.seed + 1)
    opt = AdamW(model.params, lr=cfg.lr, weight_decay=cfg.weight_decay)
    model.params.set_group_lr("backbone", cfg.backbone_lr)
    noise_std = float(np.sqrt(cfg.denoise_variance))

    epoch_losses = []
    for epoch in range(cfg.epochs):
        # cosine decay toward lr * lr_min_factor, applied to every group
        span = max(cfg.epochs - 1, 1)
        factor = cfg.lr_min_factor + (1.0 - cfg.lr_min_factor) * 0.5 * (
            1.0 + np.cos(np.pi * epoch / span))
        opt.lr = cfg.lr * factor
        model.params.set_group_lr("backbone", cfg.backbone_lr * factor)
        order = rng.permutation(len(clips))
        losses = []
        for ci in order:
            name, pid, t0 = clips[ci]
            video = benchmark.videos[name]
            feats = features[name]
            s_emb, s_ref = model.encode_text(video.prompts[pid])
            track_rows: list = []
            track_ids: list = []
            clip_loss = None
            for t in range(t0, min(t0 + cfg.clip_len, video.num_frames)):
                memory = model.fuse_encode(feats[t], s_emb)
                gt_entries = normalized_gt(video, t)
                referred = video.referrals.get(pid, {}).get(t, set())
                identities = {cfg.n_det + i: eid
                              for i, eid in enumerate(track_ids)}
                loss0, d_t, match = _frame_loss(
                    model, memory, s_emb, s_ref, track_rows, identities,
                    gt_entries, referred, cfg)
                group_losses = [loss0]
                if track_rows and cfg.denoise_groups > 1:
                    nq = cfg.n_det + len(track_rows)
                    for _ in range(cfg.denoise_groups - 1):
                        noise = np.zeros((nq, cfg.dim))
                        noise[cfg.n_det:] = rng.normal(
                            0.0, noise_std, (len(track_rows), cfg.dim))
                        gl, _, _ = _frame_loss(
                            model, memory, s_emb, s_ref, track_rows,
                            identities, gt_entries, referred, cfg, noise=noise)
                        group_losses.append(gl)
                frame_loss = group_losses[0]
                if len(group_losses) > 1:
                    for gl in group_losses[1:]:
                        frame_loss = add(frame_loss, gl)
                    frame_loss = scale(frame_loss, 1.0 / len(group_losses))
                clip_loss = frame_loss if clip_loss is None \
                    else add(clip_loss, frame_loss)

                # propagate matched queries as next-frame track queries
                next_rows, next_ids = [], []
                if match is not None:
                    for r, eid in enumerate(match.target_ids):
                        if eid is not None:
                            next_rows.append(d_t[r, :])
                            next_ids.append(eid)
                track_rows, track_ids = next_rows, next_ids
            model.params.zero_grad()
            clip_loss.backward()
            if cfg.grad_clip > 0:
                clip_grad_norm(model.params, cfg.grad_clip)
            opt.step()
            losses.append(float(clip_loss.data))
        epoch_losses.append(float(np.mean(losses)))
        log.info("epoch %d/%d  loss %.4f", epoch + 1, cfg.epochs, epoch_losses[-1])
        if callback is not None:
            callback(epoch, epoch_losses[-1])
    return model, TrainLog(epoch_losses=epoch_losses)


# -- checkpoint glue ----------------------------------------------------------

_CONFIG_FIELDS = (
    "dim", "n_det", "heads", "encoder_layers", "decoder_layers", "ffn_dim",
    "frozen_dim", "beta_ref", "tau_det", "miss_patience", "denoise_groups",
    "denoise_variance", "lambda_cls", "lambda_l1", "lambda_giou", "lambda_ref",
    "focal_alpha", "focal_gamma", "refer_alpha", "refer_gamma", "clip_len", "epochs", "lr", "backbone_lr",
    "lr_min_factor", "grad_clip", "weight_decay", "seed",
)
_INT_FIELDS = {"dim", "n_det", "heads", "encoder_layers", "decoder_layers",
               "ffn_dim", "frozen_dim", "miss_patience", "denoise_groups",
               "clip_len", "epochs", "seed"}


def model_arrays(model: TrackerModel) -> dict[str, np.ndarray]:
    """Parameters plus enough metadata to rebuild the model."""
    cfg = model.cfg
    arrays = model.params.state_arrays()
    arrays["meta.config"] = np.array([float(getattr(cfg, f))
                                      for f in _CONFIG_FIELDS])
    arrays["meta.modes"] = np.array([
        SGM_MODES.index(cfg.sgm_mode),
        REFER_HEADS.index(cfg.refer_head),
        TEXT_SPACES.index(cfg.text_space)], dtype=np.float64)
    arrays["meta.grid"] = np.array(cfg.grid, dtype=np.float64)
    vocab_bytes = "\n".join(model.text.vocab).encode("utf-8")
    arrays["meta.vocab"] = np.frombuffer(vocab_bytes, dtype=np.uint8).astype(np.float64)
    palette_bytes = "\n".join(getattr(model, "palette", ())).encode("utf-8")
    arrays["meta.palette"] = np.frombuffer(palette_bytes, dtype=np.uint8).astype(np.float64)
    return arrays


def model_from_arrays(arrays: dict[str, np.ndarray]) -> TrackerModel:
    meta = arrays["meta.config"]
    kwargs = {}
    for field, value in zip(_CONFIG_FIELDS, meta):
        kwargs[field] = int(value) if field in _INT_FIELDS else float(value)
    modes = arrays["meta.modes"].astype(int)
    cfg = TrackerConfig(sgm_mode=SGM_MODES[modes[0]],
                        refer_head=REFER_HEADS[modes[1]],
                        text_space=TEXT_SPACES[modes[2]],
                        grid=tuple(arrays["meta.grid"].astype(int)),
                        **kwargs)
    vocab = bytes(arrays["meta.vocab"].astype(np.uint8)).decode("utf-8").split("\n")
    palette_raw = bytes(arrays["meta.palette"].astype(np.uint8)).decode("utf-8")
    palette = tuple(palette_raw.split("\n")) if palette_raw else ()
    feat_dim = feature_layout(palette)["dim"]
    model = TrackerModel(cfg, vocab, feat_dim)
    model.palette = palette
    model.params.load_arrays({k: v for k, v in arrays.items()
                              if not k.startswith("meta.")})
    return model


def save_model(model: TrackerModel, path):
    save_checkpoint(model_arrays(model), path)


def load_model(path) -> TrackerModel:
    return model_from_arrays(load_checkpoint(path))
