"""Tracker model: structural identities, shapes, runtime behavior."""

import numpy as np
import pytest

from reftrack import dataset_io, scenesim
from reftrack.nncore import Tensor, no_grad
from reftrack.tracker import (
    FrozenTextEmbedder, TrackerConfig, TrackerConfigError, TrackerModel,
    TrackState, VocabularyError, cosine_rows, featurize_video, load_model,
    save_model, step, track_video, train,
)
from reftrack.tracker.train import model_arrays, model_from_arrays

VOCAB = ["the", "red", "blue", "cars", "vehicles", "which", "are",
         "moving", "parked", "and", "or"]


def _model(**kw):
    kw.setdefault("dim", 16)
    kw.setdefault("n_det", 4)
    kw.setdefault("heads", 2)
    kw.setdefault("ffn_dim", 24)
    kw.setdefault("frozen_dim", 16)
    kw.setdefault("grid", (2, 3))
    kw.setdefault("encoder_layers", 1)
    kw.setdefault("decoder_layers", 1)
    cfg = TrackerConfig(**kw)
    return TrackerModel(cfg, VOCAB, feature_dim=6), cfg


class TestConfig:
    def test_dim_heads_divisibility(self):
        with pytest.raises(TrackerConfigError):
            TrackerConfig(dim=10, heads=4).validate()

    def test_unknown_mode_rejected(self):
        with pytest.raises(TrackerConfigError):
            TrackerConfig(sgm_mode="sideways").validate()

    def test_beta_range(self):
        with pytest.raises(TrackerConfigError):
            TrackerConfig(beta_ref=1.5).validate()


class TestTextEmbedders:
    def test_frozen_is_deterministic_and_orthonormal(self):
        a = FrozenTextEmbedder(VOCAB, 16, seed=3)
        b = FrozenTextEmbedder(VOCAB, 16, seed=3)
        assert np.array_equal(a.table, b.table)
        gram = a.table @ a.table.T
        assert np.allclose(gram, np.eye(len(VOCAB)), atol=1e-10)

    def test_unknown_word_raises(self):
        emb = FrozenTextEmbedder(VOCAB, 16)
        with pytest.raises(VocabularyError, match="plaid"):
            emb.encode("the plaid cars")

    def test_vocab_too_large_for_dim(self):
        with pytest.raises(VocabularyError):
            FrozenTextEmbedder(VOCAB, 4)


class TestForwardShapes:
    def test_output_shapes(self):
        model, cfg = _model()
        rng = np.random.default_rng(0)
        feat = rng.standard_normal((6, 6))
        s_emb, s_ref = model.encode_text("the red cars")
        d, cls_logit, boxes, raw, logit = model.forward(feat, s_emb, s_ref, [])
        assert d.shape == (cfg.n_det, cfg.dim)
        assert cls_logit.shape == (cfg.n_det,)
        assert boxes.shape == (cfg.n_det, 4)
        assert np.all(boxes.data > 0) and np.all(boxes.data < 1)
        assert raw.shape == (cfg.n_det,)

    def test_track_rows_extend_query_set(self):
        model, cfg = _model()
        rng = np.random.default_rng(1)
        feat = rng.standard_normal((6, 6))
        s_emb, s_ref = model.encode_text("the red cars")
        rows = [Tensor(rng.standard_normal(cfg.dim)) for _ in range(3)]
        d, cls_logit, *_ = model.forward(feat, s_emb, s_ref, rows)
        assert d.shape == (cfg.n_det + 3, cfg.dim)


class TestStructuralIdentities:
    def test_sgm_cross_residual_identity_with_zeroed_projections(self):
        """Zero value and output projections make the text cross stage an
        exact identity on the queries."""
        model, cfg = _model(sgm_mode="cross_only")
        sgm = model.sgm
        sgm.cross_attn.wv.w.data[:] = 0.0
        sgm.cross_attn.wv.b.data[:] = 0.0
        sgm.cross_attn.wo.w.data[:] = 0.0
        sgm.cross_attn.wo.b.data[:] = 0.0
        rng = np.random.default_rng(2)
        q = Tensor(rng.standard_normal((cfg.n_det, cfg.dim)))
        pos = Tensor(rng.standard_normal((cfg.n_det, cfg.dim)))
        s_emb, _ = model.encode_text("the red cars")
        out = sgm(q, pos, s_emb, cfg.n_det)
        assert np.array_equal(out.data, q.data)

    def test_sgm_off_is_identity(self):
        model, cfg = _model(sgm_mode="off")
        rng = np.random.default_rng(3)
        q = Tensor(rng.standard_normal((cfg.n_det, cfg.dim)))
        pos = Tensor(rng.standard_normal((cfg.n_det, cfg.dim)))
        s_emb, _ = model.encode_text("the red cars")
        assert np.array_equal(model.sgm(q, pos, s_emb, cfg.n_det).data, q.data)

    def test_only_det_leaves_track_rows_untouched(self):
        model, cfg = _model(sgm_mode="only_det")
        rng = np.random.default_rng(4)
        q = Tensor(rng.standard_normal((cfg.n_det + 2, cfg.dim)))
        pos = Tensor(rng.standard_normal((cfg.n_det + 2, cfg.dim)))
        s_emb, _ = model.encode_text("the red cars")
        out = model.sgm(q, pos, s_emb, cfg.n_det)
        assert np.array_equal(out.data[cfg.n_det:], q.data[cfg.n_det:])
        assert not np.array_equal(out.data[:cfg.n_det], q.data[:cfg.n_det])

    def test_cosine_bounded_and_scale_invariant(self):
        rng = np.random.default_rng(5)
        ref = rng.standard_normal(16)
        for _ in range(1000):
            rows = Tensor(rng.standard_normal((3, 16)) * rng.uniform(0.1, 10))
            r = cosine_rows(rows, ref).data
            assert np.all(np.abs(r) <= 1.0 + 1e-12)
            scaled = cosine_rows(Tensor(rows.data * 37.5), ref).data
            assert np.allclose(r, scaled, atol=1e-10)

    def test_cosine_zero_rows_score_zero(self):
        r = cosine_rows(Tensor(np.zeros((2, 16))), np.ones(16)).data
        assert np.allclose(r, 0.0)


@pytest.fixture(scope="module")
def tiny_benchmark(tmp_path_factory):
    root = tmp_path_factory.mktemp("bench")
    gt = []
    for t in range(8):
        gt.append([(1, (10.0 + 2 * t, 10.0, 24.0, 16.0), 1),
                   (2, (60.0, 30.0, 20.0, 14.0), 2)])
    return dataset_io.write_benchmark(root, {"v": dict(
        num_frames=8, image_size=(96, 64), gt=gt,
        prompts={1: "the red cars", 2: "the blue vehicles"},
        referrals={1: {t: {1} for t in range(8)},
                   2: {t: {2} for t in range(8)}},
        entities={1: ("car", "red"), 2: ("bus", "blue")})})


class TestTraining:
    def test_deterministic_checkpoints(self, tiny_benchmark, tmp_path):
        cfg = dict(dim=16, n_det=4, heads=2, ffn_dim=24, frozen_dim=24,
                   grid=(2, 3), encoder_layers=1, decoder_layers=1,
                   epochs=1, denoise_groups=2, seed=5)
        m1, _ = train(tiny_benchmark, TrackerConfig(**cfg))
        m2, _ = train(tiny_benchmark, TrackerConfig(**cfg))
        save_model(m1, tmp_path / "a.nnc")
        save_model(m2, tmp_path / "b.nnc")
        assert (tmp_path / "a.nnc").read_bytes() == (tmp_path / "b.nnc").read_bytes()

    def test_loss_decreases(self, tiny_benchmark):
        cfg = TrackerConfig(dim=16, n_det=4, heads=2, ffn_dim=24,
                            frozen_dim=24, grid=(2, 3), encoder_layers=1,
                            decoder_layers=1, epochs=4, denoise_groups=1,
                            lr=1e-3, seed=0)
        _, tlog = train(tiny_benchmark, cfg)
        assert tlog.epoch_losses[-1] < tlog.epoch_losses[0]

    def test_denoise_single_group_equals_plain_path(self, tiny_benchmark):
        """groups=1 must behave exactly like the undecorated loss path."""
        base = dict(dim=16, n_det=4, heads=2, ffn_dim=24, frozen_dim=24,
                    grid=(2, 3), encoder_layers=1, decoder_layers=1,
                    epochs=1, seed=9)
        m1, l1 = train(tiny_benchmark, TrackerConfig(denoise_groups=1, **base))
        m2, l2 = train(tiny_benchmark,
                       TrackerConfig(denoise_groups=1, denoise_variance=0.0,
                                     **base))
        assert l1.epoch_losses == l2.epoch_losses

    def test_checkpoint_roundtrip_preserves_model(self, tiny_benchmark, tmp_path):
        cfg = TrackerConfig(dim=16, n_det=4, heads=2, ffn_dim=24,
                            frozen_dim=24, grid=(2, 3), encoder_layers=1,
                            decoder_layers=1, epochs=1, seed=1)
        model, _ = train(tiny_benchmark, cfg)
        save_model(model, tmp_path / "m.nnc")
        again = load_model(tmp_path / "m.nnc")
        assert again.cfg == model.cfg
        assert again.text.vocab == model.text.vocab
        for name, t in model.params.items():
            assert np.array_equal(t.data, again.params[name].data), name


class TestRuntime:
    def _trained(self, bench):
        cfg = TrackerConfig(dim=16, n_det=4, heads=2, ffn_dim=24,
                            frozen_dim=24, grid=(2, 3), encoder_layers=1,
                            decoder_layers=1, epochs=2, denoise_groups=1,
                            lr=1e-3, seed=2)
        model, _ = train(bench, cfg)
        return model, cfg

    def test_identity_persistence_across_frames(self, tiny_benchmark):
        """Track-continuation outputs reuse an identity already in the
        state; fresh spawns always take identities never seen before."""
        model, cfg = self._trained(tiny_benchmark)
        video = tiny_benchmark.videos["v"]
        feats = featurize_video(video, ("blue", "red"), cfg.grid)
        state = TrackState()
        issued = set()
        for t in range(video.num_frames):
            live = {trk.identity for trk in state.tracks}
            preds, state = step(model, feats[t], "the red cars", state)
            for p in preds:
                if p.from_track:
                    assert p.identity in live
                else:
                    assert p.identity not in issued
                issued.add(p.identity)

    def test_cold_start_empty_state(self, tiny_benchmark):
        model, cfg = self._trained(tiny_benchmark)
        video = tiny_benchmark.videos["v"]
        feats = featurize_video(video, ("blue", "red"), cfg.grid)
        preds, state = step(model, feats[0], "the red cars", TrackState())
        assert all(not p.from_track for p in preds)
        assert state.next_identity >= 1

    def test_track_video_writes_prediction_files(self, tiny_benchmark, tmp_path):
        model, cfg = self._trained(tiny_benchmark)
        video = tiny_benchmark.videos["v"]
        feats = featurize_video(video, ("blue", "red"), cfg.grid)
        out = track_video(model, video, feats, [1, 2], out_dir=tmp_path)
        assert set(out) == {1, 2}
        assert (tmp_path / "v" / "0001.txt").exists()
        assert (tmp_path / "v" / "0002.txt").exists()

    def test_beta_sweep_monotone_referred_set(self, tiny_benchmark):
        """Raising the referring threshold can only shrink the output."""
        model, cfg = self._trained(tiny_benchmark)
        video = tiny_benchmark.videos["v"]
        feats = featurize_video(video, ("blue", "red"), cfg.grid)
        sizes = []
        for beta in (0.1, 0.3, 0.5, 0.7, 0.9):
            out = track_video(model, video, feats, [1], beta_ref=beta)
            sizes.append(sum(len(rows) for rows in out[1].values()))
        assert sizes == sorted(sizes, reverse=True)

    def test_inference_is_deterministic(self, tiny_benchmark):
        model, cfg = self._trained(tiny_benchmark)
        video = tiny_benchmark.videos["v"]
        feats = featurize_video(video, ("blue", "red"), cfg.grid)
        a = track_video(model, video, feats, [1])
        b = track_video(model, video, feats, [1])
        assert a == b

    def test_miss_patience_retires_tracks(self, tiny_benchmark):
        model, cfg = self._trained(tiny_benchmark)
        video = tiny_benchmark.videos["v"]
        feats = featurize_video(video, ("blue", "red"), cfg.grid)
        _, state = step(model, feats[0], "the red cars", TrackState())
        blank = np.zeros_like(feats[0])
        for _ in range(cfg.miss_patience + 1):
            _, state = step(model, blank, "the red cars", state)
        # every surviving track must have miss below the patience bound
        assert all(t.miss < cfg.miss_patience for t in state.tracks)


class TestModelArrays:
    def test_meta_preserves_modes(self):
        from reftrack.tracker.train import feature_layout
        feat_dim = feature_layout(("blue", "red"))["dim"]
        cfg = TrackerConfig(dim=16, n_det=4, heads=2, ffn_dim=24,
                            frozen_dim=16, grid=(2, 3), encoder_layers=1,
                            decoder_layers=1, sgm_mode="only_det",
                            refer_head="ffn", text_space="trainable")
        model = TrackerModel(cfg, VOCAB, feature_dim=feat_dim)
        model.palette = ("blue", "red")
        again = model_from_arrays(model_arrays(model))
        assert again.cfg.sgm_mode == "only_det"
        assert again.cfg.refer_head == "ffn"
        assert again.cfg.text_space == "trainable"
        assert again.palette == ("blue", "red")
