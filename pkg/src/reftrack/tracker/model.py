"""Query-based referring tracker: fusion encoder, semantic guidance of
queries, decoder, and prediction heads including the text-correlation
refer head.

Every block is built from the autograd kernel so the whole per-frame
loss is differentiable end to end.
"""

from __future__ import annotations

import numpy as np

from ..nncore import (
    Parameters, Tensor, add, concat, layernorm, linear, matmul, mul,
    multi_head_attention, powc, relu, scale, sigmoid, sqrt, sub, tmean,
    transpose, tsum,
)
from .config import TrackerConfig
from .text import FrozenTextEmbedder, TrainableTextEmbedder


class Linear:
    def __init__(self, params, prefix, d_in, d_out, rng, zero=False):
        if zero:
            w = np.zeros((d_in, d_out))
        else:
            w = rng.standard_normal((d_in, d_out)) / np.sqrt(d_in)
        self.w = params.register(f"{prefix}.w", Tensor(w))
        self.b = params.register(f"{prefix}.b", Tensor(np.zeros(d_out)))

    def __call__(self, x):
        return linear(x, self.w, self.b)


class LayerNorm:
    def __init__(self, params, prefix, dim, eps=1e-5):
        self.g = params.register(f"{prefix}.g", Tensor(np.ones(dim)))
        self.b = params.register(f"{prefix}.b", Tensor(np.zeros(dim)))
        self.eps = eps

    def __call__(self, x):
        return add(mul(layernorm(x, self.eps), self.g), self.b)


class Attention:
    def __init__(self, params, prefix, dim, heads, rng):
        self.heads = heads
        self.wq = Linear(params, f"{prefix}.q", dim, dim, rng)
        self.wk = Linear(params, f"{prefix}.k", dim, dim, rng)
        self.wv = Linear(params, f"{prefix}.v", dim, dim, rng)
        self.wo = Linear(params, f"{prefix}.o", dim, dim, rng)

    def __call__(self, q, k, v):
        return multi_head_attention(
            q, k, v, self.heads,
            self.wq.w, self.wk.w, self.wv.w, self.wo.w,
            self.wq.b, self.wk.b, self.wv.b, self.wo.b)


class FeedForward:
    def __init__(self, params, prefix, dim, hidden, rng):
        self.l1 = Linear(params, f"{prefix}.1", dim, hidden, rng)
        self.l2 = Linear(params, f"{prefix}.2", hidden, dim, rng)

    def __call__(self, x):
        return self.l2(relu(self.l1(x)))


class EncoderLayer:
    """Visual self-attention, cross-attention to text, feed-forward."""

    def __init__(self, params, prefix, cfg, rng):
        d = cfg.dim
        self.self_attn = Attention(params, f"{prefix}.self", d, cfg.heads, rng)
        self.cross_attn = Attention(params, f"{prefix}.cross", d, cfg.heads, rng)
        self.ffn = FeedForward(params, f"{prefix}.ffn", d, cfg.ffn_dim, rng)
        self.ln1 = LayerNorm(params, f"{prefix}.ln1", d)
        self.ln2 = LayerNorm(params, f"{prefix}.ln2", d)
        self.ln3 = LayerNorm(params, f"{prefix}.ln3", d)

    def __call__(self, x, text, use_text=True):
        x = self.ln1(add(x, self.self_attn(x, x, x)))
        if use_text:
            x = self.ln2(add(x, self.cross_attn(x, text, text)))
        else:
            x = self.ln2(x)
        return self.ln3(add(x, self.ffn(x)))


class DecoderLayer:
    def __init__(self, params, prefix, cfg, rng):
        d = cfg.dim
        self.self_attn = Attention(params, f"{prefix}.self", d, cfg.heads, rng)
        self.cross_attn = Attention(params, f"{prefix}.cross", d, cfg.heads, rng)
        self.ffn = FeedForward(params, f"{prefix}.ffn", d, cfg.ffn_dim, rng)
        self.ln1 = LayerNorm(params, f"{prefix}.ln1", d)
        self.ln2 = LayerNorm(params, f"{prefix}.ln2", d)
        self.ln3 = LayerNorm(params, f"{prefix}.ln3", d)

    def __call__(self, q, memory):
        q = self.ln1(add(q, self.self_attn(q, q, q)))
        q = self.ln2(add(q, self.cross_attn(q, memory, memory)))
        return self.ln3(add(q, self.ffn(q)))


class SemanticGuidance:
    """Pre-decoder block injecting text into the query set.

    Positionally-embedded queries self-attend, get normalized and pass a
    feed-forward (residuals throughout); the result cross-attends to the
    linearly-mapped text features, again residually, so zeroed
    value/output projections leave the queries untouched.
    """

    def __init__(self, params, prefix, cfg, rng):
        d = cfg.dim
        self.mode = cfg.sgm_mode
        self.self_attn = Attention(params, f"{prefix}.self", d, cfg.heads, rng)
        self.cross_attn = Attention(params, f"{prefix}.cross", d, cfg.heads, rng)
        self.ffn = FeedForward(params, f"{prefix}.ffn", d, cfg.ffn_dim, rng)
        self.ln1 = LayerNorm(params, f"{prefix}.ln1", d)
        self.ln2 = LayerNorm(params, f"{prefix}.ln2", d)
        self.text_proj = Linear(params, f"{prefix}.text", d, d, rng)

    def _self_stage(self, q, pos):
        qp = add(q, pos)
        h = self.ln1(add(q, self.self_attn(qp, qp, q)))
        return self.ln2(add(h, self.ffn(h)))

    def _cross_stage(self, q_hat, s_emb):
        s = self.text_proj(s_emb)
        return add(q_hat, self.cross_attn(q_hat, s, s))

    def __call__(self, q, pos, s_emb, n_det):
        if self.mode == "off":
            return q
        if self.mode == "cross_only":
            return self._cross_stage(q, s_emb)
        if self.mode == "only_det":
            n = q.shape[0]
            det = q[:n_det, :]
            det_pos = pos[:n_det, :]
            det_out = self._cross_stage(self._self_stage(det, det_pos), s_emb)
            if n > n_det:
                return concat([det_out, q[n_det:, :]], axis=0)
            return det_out
        return self._cross_stage(self._self_stage(q, pos), s_emb)


def cosine_rows(rows: Tensor, ref: np.ndarray) -> Tensor:
    """Cosine similarity of each row with a constant reference vector;
    a zero-norm side scores 0 (guarded denominator)."""
    ref = np.asarray(ref, dtype=np.float64).reshape(-1, 1)
    dots = matmul(rows, Tensor(ref))                      # (N, 1)
    row_sq = tsum(mul(rows, rows), axis=1)                # (N,)
    ref_sq = float((ref.T @ ref)[0, 0])
    denom = powc(add(mul(row_sq, ref_sq), 1e-30), -0.5)   # (N,)
    return mul(dots[:, 0], denom)


class ReferHead:
    """Trajectory-text similarity head (several shapes; cosine default).

    The cosine variant maps decoder outputs into the frozen text space
    and compares to the mean-pooled sentence vector; a learnable
    temperature and offset calibrate the [-1, 1] similarity into a
    sigmoid probability thresholded at beta_ref.
    """

    def __init__(self, params, prefix, cfg, rng):
        self.kind = cfg.refer_head
        d, df = cfg.dim, cfg.frozen_dim
        self.temp = params.register(f"{prefix}.temp", Tensor(np.array(4.0)))
        self.offset = params.register(f"{prefix}.offset", Tensor(np.array(0.0)))
        if self.kind == "cosine":
            self.proj = Linear(params, f"{prefix}.proj", d, df, rng)
        elif self.kind == "concat_mlp":
            self.l1 = Linear(params, f"{prefix}.1", d + df, d, rng)
            self.l2 = Linear(params, f"{prefix}.2", d, 1, rng)
        elif self.kind == "cross_attention":
            self.sproj = Linear(params, f"{prefix}.sproj", df, d, rng)
            self.attn = Attention(params, f"{prefix}.attn", d, cfg.heads, rng)
            self.out = Linear(params, f"{prefix}.out", d, 1, rng)
        else:  # plain ffn
            self.l1 = Linear(params, f"{prefix}.1", d, d, rng)
            self.l2 = Linear(params, f"{prefix}.2", d, 1, rng)

    def scores(self, d_t: Tensor, s_ref: np.ndarray) -> tuple[Tensor, Tensor]:
        """Returns (raw score, calibrated logit); raw is R_cos for the
        cosine head and the uncalibrated logit otherwise."""
        if self.kind == "cosine":
            sentence = np.asarray(s_ref).mean(axis=0)
            r = cosine_rows(self.proj(d_t), sentence)
            logit = add(mul(r, self.temp), self.offset)
            return r, logit
        if self.kind == "concat_mlp":
            n = d_t.shape[0]
            sentence = np.broadcast_to(np.asarray(s_ref).mean(axis=0),
                                       (n, len(np.asarray(s_ref)[0]))).copy()
            h = relu(self.l1(concat([d_t, Tensor(sentence)], axis=1)))
            logit = self.l2(h)[:, 0]
            return logit, logit
        if self.kind == "cross_attention":
            s = self.sproj(Tensor(np.asarray(s_ref)))
            h = add(d_t, self.attn(d_t, s, s))
            logit = self.out(h)[:, 0]
            return logit, logit
        logit = self.l2(relu(self.l1(d_t)))[:, 0]
        return logit, logit


class TrackerModel:
    """All parameters plus the per-frame forward pass."""

    def __init__(self, cfg: TrackerConfig, vocab: list[str], feature_dim: int):
        cfg.validate()
        self.cfg = cfg
        self.params = Parameters()
        rng = np.random.default_rng(cfg.seed)
        p, d = self.params, cfg.dim
        cells = cfg.grid[0] * cfg.grid[1]

        self.patch = Linear(p, "backbone.patch", feature_dim, d, rng)
        self.grid_pos = p.register("enc.grid_pos",
                                   Tensor(rng.standard_normal((cells, d)) * 0.1))
        self.text = TrainableTextEmbedder(vocab, d, p, rng)
        self.frozen = FrozenTextEmbedder(vocab, cfg.frozen_dim, seed=cfg.seed + 7919)

        self.encoder = [EncoderLayer(p, f"enc.{i}", cfg, rng)
                        for i in range(cfg.encoder_layers)]
        self.sgm = SemanticGuidance(p, "sgm", cfg, rng)
        self.decoder = [DecoderLayer(p, f"dec.{i}", cfg, rng)
                        for i in range(cfg.decoder_layers)]

        self.det_query = p.register("query.det",
                                    Tensor(rng.standard_normal((cfg.n_det, d)) * 0.5))
        self.det_pos = p.register("query.det_pos",
                                  Tensor(rng.standard_normal((cfg.n_det, d)) * 0.1))
        self.track_pos = p.register("query.track_pos",
                                    Tensor(rng.standard_normal((1, d)) * 0.1))

        self.cls_head = Linear(p, "head.cls", d, 1, rng)
        hid = d
        self.box_l1 = Linear(p, "head.box1", d, hid, rng)
        self.box_l2 = Linear(p, "head.box2", hid, 4, rng)
        self.refer = ReferHead(p, "head.refer", cfg, rng)

        if cfg.text_space == "trainable":
            # contrast variant: compare against the trainable embedding space
            self.refer_space_dim = d
        else:
            self.refer_space_dim = cfg.frozen_dim

    # -- text ------------------------------------------------------------

    def encode_text(self, text: str):
        """(trainable S_emb tensor, frozen reference array)."""
        s_emb = self.text.encode(text)
        if self.cfg.text_space == "trainable":
            s_ref = s_emb.data
        else:
            s_ref = self.frozen.encode(text)
        return s_emb, s_ref

    # -- blocks ------------------------------------------------------------

    def fuse_encode(self, feat_frame: np.ndarray, s_emb: Tensor,
                    use_text=True) -> Tensor:
        """Visual tokens fused with text through the encoder stack."""
        x = add(self.patch(Tensor(feat_frame)), self.grid_pos)
        for layer in self.encoder:
            x = layer(x, s_emb, use_text=use_text)
        return x

    def query_set(self, track_rows: list[Tensor]):
        """Concatenate detect and track queries plus matching positions."""
        n_tr = len(track_rows)
        if n_tr:
            tr = concat([reshape_row(r) for r in track_rows], axis=0)
            q = concat([self.det_query, tr], axis=0)
            pos = concat([self.det_pos,
                          Tensor(np.broadcast_to(self.track_pos.data,
                                                 (n_tr, self.cfg.dim)).copy())],
                         axis=0)
        else:
            q = self.det_query
            pos = self.det_pos
        return q, pos

    def decode(self, q_s: Tensor, memory: Tensor) -> Tensor:
        d_t = q_s
        for layer in self.decoder:
            d_t = layer(d_t, memory)
        return d_t

    def heads(self, d_t: Tensor, s_ref: np.ndarray):
        cls_logit = self.cls_head(d_t)[:, 0]
        boxes = sigmoid(self.box_l2(relu(self.box_l1(d_t))))
        raw, refer_logit = self.refer.scores(d_t, s_ref)
        return cls_logit, boxes, raw, refer_logit

    def forward(self, feat_frame: np.ndarray, s_emb: Tensor, s_ref: np.ndarray,
                track_rows: list[Tensor], noise: np.ndarray | None = None):
        """Full per-frame pass; returns (d_t, cls_logit, boxes, raw, logit)."""
        memory = self.fuse_encode(feat_frame, s_emb)
        q, pos = self.query_set(track_rows)
        if noise is not None:
            q = add(q, Tensor(noise))
        q_s = self.sgm(q, pos, s_emb, self.cfg.n_det)
        d_t = self.decode(q_s, memory)
        cls_logit, boxes, raw, refer_logit = self.heads(d_t, s_ref)
        return d_t, cls_logit, boxes, raw, refer_logit


def reshape_row(row: Tensor) -> Tensor:
    from ..nncore import reshape
    if row.ndim == 1:
        return reshape(row, (1, row.shape[0]))
    return row
