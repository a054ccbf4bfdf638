"""Numeric verification suite: finite-difference checks for every
differentiable op and for the composed blocks of the tracker.

Shared by the `gradcheck` CLI subcommand and the test suite so the
listing stays in one place.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nncore as nn
from .nncore import Tensor, grad_check
from .tracker import TrackerConfig, TrackerModel
from .tracker.train import _frame_loss

PRIMITIVE_TOL = 1e-4
COMPOSITE_TOL = 1e-3


@dataclass
class CheckResult:
    name: str
    rel_err: float
    tol: float

    @property
    def passed(self) -> bool:
        return self.rel_err < self.tol


def _rng(seed):
    return np.random.default_rng(seed)


def primitive_checks(seed=0) -> list[tuple[str, callable, list]]:
    """(name, f, tensors) triples for every differentiable primitive."""
    r = _rng(seed)

    def T(*shape, positive=False, offset=0.0):
        d = r.standard_normal(shape)
        if positive:
            d = np.abs(d) + 0.5
        return Tensor(d + offset, requires_grad=True)

    a, b = T(3, 4), T(3, 4)
    m1, m2 = T(3, 4), T(4, 5)
    pos = T(3, 4, positive=True)
    vec = T(6)
    boxes = Tensor(r.uniform(0.2, 0.4, (5, 4)) + np.tile([0.2, 0.2, 0, 0], (5, 1)),
                   requires_grad=True)
    tgt = np.clip(boxes.data + r.normal(0, 0.02, boxes.shape), 0.15, 0.9)
    logits = T(8)
    labels = (r.uniform(size=8) > 0.5).astype(float)
    emb = T(7, 4)
    ids = r.integers(0, 7, size=5)

    checks = [
        ("add", lambda x, y: nn.tsum(nn.add(x, y)), [a, b]),
        ("sub", lambda x, y: nn.tsum(nn.sub(x, y)), [a, b]),
        ("mul", lambda x, y: nn.tsum(nn.mul(x, y)), [a, b]),
        ("scale", lambda x: nn.tsum(nn.scale(x, -2.5)), [a]),
        ("relu", lambda x: nn.tsum(nn.relu(x)), [T(3, 4, offset=0.3)]),
        ("sigmoid", lambda x: nn.tsum(nn.sigmoid(x)), [a]),
        ("exp", lambda x: nn.tsum(nn.exp(x)), [a]),
        ("log", lambda x: nn.tsum(nn.log(x)), [pos]),
        ("sqrt", lambda x: nn.tsum(nn.sqrt(x)), [pos]),
        ("powc", lambda x: nn.tsum(nn.powc(x, -1.5)), [pos]),
        ("matmul", lambda x, y: nn.tsum(nn.matmul(x, y)), [m1, m2]),
        ("transpose", lambda x: nn.tsum(nn.mul(nn.transpose(x), nn.transpose(x))), [a]),
        ("reshape", lambda x: nn.tsum(nn.mul(nn.reshape(x, (4, 3)), 0.5)), [a]),
        ("concat", lambda x, y: nn.tsum(nn.concat([x, y], axis=0)), [a, b]),
        ("slice", lambda x: nn.tsum(x[1:3, :2]), [a]),
        ("tsum", lambda x: nn.tsum(nn.tsum(x, axis=1)), [a]),
        ("tmean", lambda x: nn.tmean(x), [a]),
        ("softmax", lambda x: nn.tsum(nn.mul(nn.softmax(x), nn.softmax(x))), [a]),
        ("layernorm", lambda x: nn.tsum(nn.mul(nn.layernorm(x), vec.data[:4])), [a]),
        ("linear", lambda x, w, bb: nn.tsum(nn.linear(x, w, bb)),
         [m1, T(4, 2), T(2)]),
        ("embedding", lambda t: nn.tsum(nn.embedding_lookup(t, ids)), [emb]),
        ("attention", lambda q, k, v, wq, wk, wv, wo: nn.tsum(
            nn.multi_head_attention(q, k, v, 2, wq, wk, wv, wo)),
         [T(3, 4), T(5, 4), T(5, 4), T(4, 4), T(4, 4), T(4, 4), T(4, 4)]),
        ("focal_loss", lambda x: nn.focal_loss(x, labels), [logits]),
        ("l1_box", lambda x: nn.l1_box(x, tgt), [boxes]),
        ("giou_loss", lambda x: nn.giou_loss(x, tgt), [boxes]),
    ]
    return checks


def _tiny_model(seed=0):
    cfg = TrackerConfig(dim=8, n_det=3, heads=2, ffn_dim=12, frozen_dim=12,
                        grid=(2, 3), encoder_layers=1, decoder_layers=1,
                        denoise_groups=1, seed=seed)
    vocab = ["the", "red", "cars", "vehicles", "which", "are", "moving",
             "and", "or", "parked"]
    return TrackerModel(cfg, vocab, feature_dim=5), cfg


def composite_checks(seed=0):
    """(name, f, tensors) for the composed tracker blocks.

    The checked inputs are the trainable leaves feeding each block; the
    full-loss entry differentiates a complete per-frame training loss.
    """
    r = _rng(seed + 1)
    model, cfg = _tiny_model(seed)
    feat = r.standard_normal((6, 5)) * 0.3
    text = "the red cars which are moving"
    s_emb, s_ref = model.encode_text(text)
    gt_entries = [(1, (0.3, 0.4, 0.2, 0.2)), (2, (0.7, 0.5, 0.15, 0.3))]

    def fuse(patch_w):
        model.patch.w = patch_w
        return nn.tmean(model.fuse_encode(feat, model.text.encode(text)))

    def sgm(det_q):
        model.det_query = det_q
        q, pos = model.query_set([])
        return nn.tmean(model.sgm(q, pos, model.text.encode(text), cfg.n_det))

    def decode(det_q):
        model.det_query = det_q
        memory = model.fuse_encode(feat, model.text.encode(text))
        q, pos = model.query_set([])
        return nn.tmean(model.decode(model.sgm(q, pos, model.text.encode(text),
                                               cfg.n_det), memory))

    def scb(proj_w):
        model.refer.proj.w = proj_w
        memory = model.fuse_encode(feat, model.text.encode(text))
        q, pos = model.query_set([])
        d_t = model.decode(model.sgm(q, pos, model.text.encode(text),
                                     cfg.n_det), memory)
        raw, _ = model.refer.scores(d_t, s_ref)
        return nn.tmean(raw)

    def full_loss(patch_w, det_q):
        model.patch.w = patch_w
        model.det_query = det_q
        memory = model.fuse_encode(feat, model.text.encode(text))
        loss, _, _ = _frame_loss(model, memory, model.text.encode(text), s_ref,
                                 [], {}, gt_entries, {1}, cfg)
        return loss

    p = model.params
    return [
        ("fuse_encode", fuse, [p["backbone.patch.w"]]),
        ("semantic_guidance", sgm, [p["query.det"]]),
        ("decode", decode, [p["query.det"]]),
        ("refer_score", scb, [p["head.refer.proj.w"]]),
        ("frame_loss", full_loss, [p["backbone.patch.w"], p["query.det"]]),
    ]


def run_suite(seed=0) -> list[CheckResult]:
    results = []
    for name, f, tensors in primitive_checks(seed):
        results.append(CheckResult(name, grad_check(f, tensors), PRIMITIVE_TOL))
    for name, f, tensors in composite_checks(seed):
        results.append(CheckResult(name, grad_check(f, tensors), COMPOSITE_TOL))
    return results
