"""Command-line pipeline: generate, stats, train, track, eval, gradcheck.

Configuration files are INI format (see configs/mini_city.cfg for a
commented example).  Sections:

[world]     WorldConfig fields.  Lane polylines are encoded as
            "x y, x y, ... ; x y, ..." — points separated by commas,
            polylines by semicolons.  Weight tables are
            "name:weight name:weight ...".
[videos]    count, name_prefix — how many worlds to generate (seeds
            seed, seed+1, ...).
[prompts]   min_support, sample_count, allow_or, allow_and, exhaustive,
            max_prompts, holdout_every.
[tracker]   TrackerConfig fields (same names).

Exit codes: 0 success, 1 validation error, 2 I/O error.
"""

from __future__ import annotations

import argparse
import configparser
import dataclasses
import sys
from pathlib import Path

import numpy as np

from . import dataset_io, promptlang, refeval, scenesim
from .plots import render_eval_report, render_stats_report, stats_table
from .promptlang import Atom, CombinePolicy, ParseError, PredicateError
from .scenesim import ConfigError, WorldConfig
from .tracker import (
    TrackerConfig, TrackerConfigError, VocabularyError, featurize_video,
    load_model, save_model, track_video, train,
)


class CliError(Exception):
    """Validation failure; message is the single-line diagnostic."""


def _parse_lanes(text: str):
    lanes = []
    for part in text.split(";"):
        part = part.strip()
        if not part:
            continue
        pts = []
        for pt in part.split(","):
            coords = pt.split()
            if len(coords) != 2:
                raise CliError(f"lane point {pt!r} is not 'x y'")
            pts.append((float(coords[0]), float(coords[1])))
        lanes.append(pts)
    return lanes


def _parse_weights(text: str):
    table = {}
    for item in text.split():
        if ":" not in item:
            raise CliError(f"weight entry {item!r} is not 'name:value'")
        name, value = item.rsplit(":", 1)
        table[name] = float(value)
    return table


def _read_config(path) -> configparser.ConfigParser:
    cp = configparser.ConfigParser()
    read = cp.read(path)
    if not read:
        raise FileNotFoundError(f"config file not found: {path}")
    return cp


def _world_config(cp, seed_override=None) -> WorldConfig:
    if "world" not in cp:
        raise CliError("config is missing a [world] section")
    s = cp["world"]
    kwargs = {}
    for key in ("seed", "num_frames"):
        if key in s:
            kwargs[key] = s.getint(key)
    if "image_size" in s:
        w, h = s["image_size"].split()
        kwargs["image_size"] = (int(w), int(h))
    if "lanes" in s:
        kwargs["lane_layout"] = _parse_lanes(s["lanes"])
    if "entity_count_range" in s:
        lo, hi = s["entity_count_range"].split()
        kwargs["entity_count_range"] = (int(lo), int(hi))
    if "category_weights" in s:
        kwargs["category_weights"] = _parse_weights(s["category_weights"])
    if "colors" in s:
        kwargs["color_palette"] = s["colors"].split()
    if "speed_range" in s:
        lo, hi = s["speed_range"].split()
        kwargs["speed_range"] = (float(lo), float(hi))
    if "event_rates" in s:
        kwargs["event_rates"] = _parse_weights(s["event_rates"])
    if "event_duration_range" in s:
        lo, hi = s["event_duration_range"].split()
        kwargs["event_duration_range"] = (int(lo), int(hi))
    if "visibility_min_fraction" in s:
        kwargs["visibility_min_fraction"] = s.getfloat("visibility_min_fraction")
    if "spawn_max_iou" in s:
        kwargs["spawn_max_iou"] = s.getfloat("spawn_max_iou")
    if seed_override is not None:
        kwargs["seed"] = seed_override
    cfg = WorldConfig(**kwargs)
    cfg.validate()
    return cfg


def _tracker_config(cp, seed_override=None) -> TrackerConfig:
    s = cp["tracker"] if "tracker" in cp else {}
    kwargs = {}
    ints = {"dim", "n_det", "heads", "encoder_layers", "decoder_layers",
            "ffn_dim", "frozen_dim", "miss_patience", "denoise_groups",
            "clip_len", "epochs", "seed"}
    floats = {"beta_ref", "tau_det", "denoise_variance", "lambda_cls",
              "lambda_l1", "lambda_giou", "lambda_ref", "focal_alpha",
              "focal_gamma", "refer_alpha", "refer_gamma", "lr", "backbone_lr", "lr_min_factor",
              "grad_clip", "weight_decay"}
    strings = {"sgm_mode", "refer_head", "text_space"}
    for key in s:
        if key == "grid":
            rows, cols = s["grid"].split()
            kwargs["grid"] = (int(rows), int(cols))
        elif key in ints:
            kwargs[key] = int(s[key])
        elif key in floats:
            kwargs[key] = float(s[key])
        elif key in strings:
            kwargs[key] = s[key]
        elif key == "holdout_every":
            pass  # consumed by the prompts split, not the model
        else:
            raise CliError(f"unknown [tracker] option {key!r}")
    if seed_override is not None:
        kwargs["seed"] = seed_override
    return TrackerConfig(**kwargs).validate()


def _holdout_every(cp) -> int:
    for section in ("prompts", "tracker"):
        if section in cp and "holdout_every" in cp[section]:
            return cp[section].getint("holdout_every")
    return 0


def _select_prompts(video, mode: str, holdout_every: int):
    train_ids, held_ids = dataset_io.prompt_split(video.prompts, holdout_every)
    if mode == "all":
        return sorted(video.prompts)
    if mode == "train":
        return train_ids
    if mode == "held":
        return held_ids
    raise CliError(f"unknown prompt selection {mode!r} (all/train/held)")


def _filtered_benchmark(benchmark, mode: str, holdout_every: int):
    if mode == "all":
        return benchmark
    videos = {}
    for name, v in benchmark.videos.items():
        keep = set(_select_prompts(v, mode, holdout_every))
        videos[name] = dataset_io.VideoData(
            name=v.name, num_frames=v.num_frames, image_size=v.image_size,
            gt=v.gt, prompts={p: t for p, t in v.prompts.items() if p in keep},
            referrals={p: f for p, f in v.referrals.items() if p in keep},
            entities=v.entities)
    return dataset_io.Benchmark(root=benchmark.root, videos=videos)


# -- subcommands ---------------------------------------------------------------


def cmd_generate(args):
    cp = _read_config(args.config)
    pc = cp["prompts"] if "prompts" in cp else {}
    min_support = int(pc.get("min_support", 1))
    sample_count = int(pc.get("sample_count", 50))
    max_prompts = int(pc.get("max_prompts", 0))
    axes = tuple(pc.get("axes", " ".join(promptlang.AXES)).split()) \
        if pc else promptlang.AXES
    for axis in axes:
        if axis not in promptlang.AXES:
            raise CliError(f"unknown prompt axis {axis!r}")
    policy = CombinePolicy(
        allow_or=pc.getboolean("allow_or", True) if pc else True,
        allow_and=pc.getboolean("allow_and", True) if pc else True,
        exhaustive=pc.getboolean("exhaustive", False) if pc else False,
        sample_count=sample_count, axes=axes)
    vc = cp["videos"] if "videos" in cp else {}
    count = int(vc.get("count", 1))
    prefix = vc.get("name_prefix", "") if vc else ""

    base = _world_config(cp, seed_override=args.seed)
    videos = {}
    for i in range(count):
        wc = _world_config(cp, seed_override=(base.seed + i))
        scene = scenesim.build_world(wc)
        gt = scene.ground_truth
        vocab = promptlang.scene_vocabularies(scene)
        atoms = [Atom(a, v) for a in axes for v in vocab.values(a)]
        trees = atoms + promptlang.combine(atoms, policy, seed=wc.seed)
        seen: set = set()
        unique = []
        for tree in trees:
            canon = promptlang.canonicalize(tree)
            if canon not in seen:
                seen.add(canon)
                unique.append(canon)
        prompts = promptlang.filter_by_support(unique, scene, k=min_support)
        if max_prompts and len(prompts) > max_prompts:
            prng = np.random.default_rng(wc.seed + 104729)
            keep = sorted(prng.choice(len(prompts), size=max_prompts,
                                      replace=False))
            prompts = [prompts[i] for i in keep]
        prompts = [dataclasses.replace(p, id=i + 1)
                   for i, p in enumerate(prompts)]
        if not prompts:
            raise CliError(f"video {i}: no prompt reached min_support="
                           f"{min_support}; relax [prompts] or enlarge the world")
        name = f"{prefix}{i + 1:04d}"
        videos[name] = dict(
            num_frames=wc.num_frames, image_size=wc.image_size,
            gt=dataset_io.gt_from_scene(scene, gt),
            prompts={p.id: p.text for p in prompts},
            referrals={p.id: promptlang.resolve(p.predicate, scene)
                       for p in prompts},
            entities={e.id: (e.category, e.color) for e in scene.entities})
    benchmark = dataset_io.write_benchmark(args.out, videos)
    total = sum(len(v.prompts) for v in benchmark.videos.values())
    print(f"wrote {len(benchmark.videos)} video(s), {total} prompt(s) "
          f"to {args.out}")
    return 0


def cmd_stats(args):
    benchmark = dataset_io.read_benchmark(args.benchmark)
    stats = dataset_io.compute_stats(benchmark)
    print(stats_table(stats))
    if args.report:
        written = render_stats_report(stats, args.report)
        print("report files:")
        for p in written:
            print(f"  {p}")
    return 0


def cmd_train(args):
    cp = _read_config(args.config)
    cfg = _tracker_config(cp, seed_override=args.seed)
    holdout = _holdout_every(cp)
    benchmark = dataset_io.read_benchmark(args.benchmark)
    selection = {name: _select_prompts(v, "train", holdout)
                 for name, v in benchmark.videos.items()}
    model, tlog = train(benchmark, cfg, train_prompts=selection)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    save_model(model, args.out)
    print(f"trained {cfg.epochs} epoch(s); final loss "
          f"{tlog.epoch_losses[-1]:.4f}; checkpoint at {args.out}")
    return 0


def cmd_track(args):
    model = load_model(args.model)
    benchmark = dataset_io.read_benchmark(args.benchmark)
    for name, video in benchmark.videos.items():
        pids = _select_prompts(video, args.prompts, args.holdout_every)
        if not pids:
            continue
        feats = featurize_video(video, model.palette, model.cfg.grid)
        track_video(model, video, feats, pids, beta_ref=args.beta_ref,
                    out_dir=args.out)
    print(f"predictions written to {args.out}")
    return 0


def cmd_eval(args):
    benchmark = dataset_io.read_benchmark(args.benchmark)
    if not Path(args.predictions).is_dir():
        raise FileNotFoundError(f"{args.predictions}: no such predictions directory")
    benchmark = _filtered_benchmark(benchmark, args.prompts, args.holdout_every)
    report = refeval.evaluate_benchmark(benchmark, args.predictions)
    print(report.table())
    if args.metrics:
        Path(args.metrics).parent.mkdir(parents=True, exist_ok=True)
        refeval.write_metrics_file(report, args.metrics)
        print(f"metrics file: {args.metrics}")
    if args.report:
        written = render_eval_report(report, args.report)
        print("report files:")
        for p in written:
            print(f"  {p}")
    return 0


def cmd_gradcheck(args):
    from .verify import run_suite
    results = run_suite(seed=args.seed or 0)
    failed = 0
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        failed += not r.passed
        print(f"{status}  {r.name:<20} rel_err {r.rel_err:.3e}  tol {r.tol:.0e}")
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return 1 if failed else 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="reftrack",
        description="Referring multi-object tracking laboratory: benchmark "
                    "generation, tracker training, and prompt-conditioned "
                    "evaluation.")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="build a benchmark from a config file")
    g.add_argument("--config", required=True, help="INI config with [world]")
    g.add_argument("--out", required=True, help="benchmark output directory")
    g.add_argument("--seed", type=int, default=None, help="override world seed")
    g.set_defaults(func=cmd_generate)

    s = sub.add_parser("stats", help="print benchmark statistics")
    s.add_argument("benchmark", help="benchmark root directory")
    s.add_argument("--report", default=None,
                   help="directory for figures + stats.csv")
    s.set_defaults(func=cmd_stats)

    t = sub.add_parser("train", help="train a tracker on a benchmark")
    t.add_argument("--config", required=True, help="INI config with [tracker]")
    t.add_argument("--benchmark", required=True)
    t.add_argument("--out", required=True, help="checkpoint output path")
    t.add_argument("--seed", type=int, default=None, help="override model seed")
    t.set_defaults(func=cmd_train)

    k = sub.add_parser("track", help="run a trained tracker, write predictions")
    k.add_argument("--model", required=True, help="checkpoint path")
    k.add_argument("--benchmark", required=True)
    k.add_argument("--out", required=True, help="predictions directory")
    k.add_argument("--beta-ref", type=float, default=None,
                   help="override the referring threshold")
    k.add_argument("--prompts", default="all", choices=("all", "train", "held"))
    k.add_argument("--holdout-every", type=int, default=0,
                   help="every Nth prompt id is in the held split")
    k.set_defaults(func=cmd_track)

    e = sub.add_parser("eval", help="score predictions against referral GT")
    e.add_argument("--benchmark", required=True)
    e.add_argument("--predictions", required=True)
    e.add_argument("--metrics", default=None, help="key=value metrics file")
    e.add_argument("--report", default=None,
                   help="directory for figures + metrics.csv")
    e.add_argument("--prompts", default="all", choices=("all", "train", "held"))
    e.add_argument("--holdout-every", type=int, default=0)
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    c.add_argument("--seed", type=int, default=0)
    c.set_defaults(func=cmd_gradcheck)
    return p


_VALIDATION_ERRORS = (
    CliError, ConfigError, TrackerConfigError, VocabularyError,
    dataset_io.BenchmarkError, PredicateError, ParseError, ValueError,
)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except _VALIDATION_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
