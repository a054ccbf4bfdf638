"""On-disk benchmark layout and dataset statistics.

Layout (one folder per video under the benchmark root):

    root/
      <video>/
        seqinfo.ini          frame count + image size
        gt.txt               "frame,id,x,y,w,h,1,category_code,-1"
        expression/
          0001.txt           prompt text on line 1, then "frame: id,id,..."

All indices are 1-based on disk (MOT convention) and 0-based in memory;
conversion happens only here.  Floats are written with repr so that a
read_benchmark(write_benchmark(x)) round trip is value-exact.
"""

from __future__ import annotations

import configparser
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .scenesim import CATEGORY_CODES, GroundTruth

_CODE_CATEGORY = {v: k for k, v in CATEGORY_CODES.items()}


class BenchmarkError(ValueError):
    """Malformed or inconsistent benchmark data."""


@dataclass
class VideoData:
    name: str
    num_frames: int
    image_size: tuple[int, int]
    # frame -> list of (entity_id, (x, y, w, h), category_code)
    gt: list[list[tuple[int, tuple[float, float, float, float], int]]]
    prompts: dict[int, str]                        # prompt id -> text
    referrals: dict[int, dict[int, set[int]]]      # prompt id -> frame -> ids
    entities: dict[int, tuple[str, str]] = field(default_factory=dict)
    # entity id -> (category, color); needed to rebuild feature grids

    def gt_boxes(self, frame: int) -> dict[int, tuple[float, float, float, float]]:
        return {eid: box for eid, box, _ in self.gt[frame]}


@dataclass
class Benchmark:
    root: Path
    videos: dict[str, VideoData] = field(default_factory=dict)


def _check_referrals(gt, referrals, num_frames, video):
    for pid, frames in referrals.items():
        for frame, ids in frames.items():
            if not 0 <= frame < num_frames:
                raise BenchmarkError(
                    f"{video}: prompt {pid} frame {frame} outside sequence")
            present = {eid for eid, _, _ in gt[frame]}
            dangling = ids - present
            if dangling:
                raise BenchmarkError(
                    f"{video}: prompt {pid} frame {frame} refers to ids "
                    f"{sorted(dangling)} absent from gt")


def write_video(root, name, num_frames, image_size, gt, prompts, referrals,
                entities=None):
    """Write one video folder; validates referral consistency first."""
    _check_referrals(gt, referrals, num_frames, name)
    vdir = Path(root) / name
    (vdir / "expression").mkdir(parents=True, exist_ok=True)

    ini = configparser.ConfigParser()
    ini["Sequence"] = {
        "name": name,
        "seqLength": str(num_frames),
        "imWidth": str(image_size[0]),
        "imHeight": str(image_size[1]),
    }
    with open(vdir / "seqinfo.ini", "w") as fh:
        ini.write(fh)

    with open(vdir / "gt.txt", "w") as fh:
        for frame, rows in enumerate(gt):
            for eid, (x, y, w, h), code in rows:
                fh.write(f"{frame + 1},{eid},{float(x)!r},{float(y)!r},"
                         f"{float(w)!r},{float(h)!r},1,{code},-1\n")

    if entities:
        with open(vdir / "entities.txt", "w") as fh:
            for eid in sorted(entities):
                cat, color = entities[eid]
                fh.write(f"{eid},{cat},{color}\n")

    for pid in sorted(prompts):
        with open(vdir / "expression" / f"{pid:04d}.txt", "w") as fh:
            fh.write(prompts[pid] + "\n")
            for frame in sorted(referrals.get(pid, {})):
                ids = sorted(referrals[pid][frame])
                if ids:
                    fh.write(f"{frame + 1}: {','.join(map(str, ids))}\n")
    return vdir


def write_benchmark(root, videos: dict[str, dict]) -> Benchmark:
    """Write several videos; each value carries the write_video kwargs."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    for name, kw in videos.items():
        write_video(root, name, **kw)
    return read_benchmark(root)


def gt_from_scene(scene, gt: GroundTruth):
    """Per-frame gt rows (id, box, category_code) from a projected scene."""
    codes = {e.id: CATEGORY_CODES[e.category] for e in scene.entities}
    return [[(eid, box, codes[eid]) for eid, box in frame] for frame in gt.frames]


def _parse_gt_line(line, path, lineno):
    parts = line.split(",")
    if len(parts) != 9:
        raise BenchmarkError(f"{path}:{lineno}: expected 9 fields, got {len(parts)}")
    try:
        frame = int(parts[0])
        eid = int(parts[1])
        x, y, w, h = (float(v) for v in parts[2:6])
        code = int(parts[7])
    except ValueError as exc:
        raise BenchmarkError(f"{path}:{lineno}: malformed numeric field ({exc})")
    if frame < 1 or eid < 1:
        raise BenchmarkError(f"{path}:{lineno}: frame and id must be >= 1")
    if w <= 0 or h <= 0:
        raise BenchmarkError(f"{path}:{lineno}: nonpositive box size")
    return frame - 1, eid, (x, y, w, h), code


def read_video(vdir: Path) -> VideoData:
    vdir = Path(vdir)
    seqpath = vdir / "seqinfo.ini"
    if not seqpath.exists():
        raise BenchmarkError(f"{vdir}: missing seqinfo.ini")
    ini = configparser.ConfigParser()
    ini.read(seqpath)
    try:
        num_frames = int(ini["Sequence"]["seqLength"])
        image_size = (int(ini["Sequence"]["imWidth"]),
                      int(ini["Sequence"]["imHeight"]))
    except KeyError as exc:
        raise BenchmarkError(f"{seqpath}: missing key {exc}")

    gtpath = vdir / "gt.txt"
    if not gtpath.exists():
        raise BenchmarkError(f"{vdir}: missing gt.txt")
    gt = [[] for _ in range(num_frames)]
    with open(gtpath) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            frame, eid, box, code = _parse_gt_line(line, gtpath, lineno)
            if frame >= num_frames:
                raise BenchmarkError(f"{gtpath}:{lineno}: frame beyond seqLength")
            if any(e == eid for e, _, _ in gt[frame]):
                raise BenchmarkError(f"{gtpath}:{lineno}: duplicate id {eid} in frame")
            gt[frame].append((eid, box, code))

    prompts: dict[int, str] = {}
    referrals: dict[int, dict[int, set[int]]] = {}
    expr_dir = vdir / "expression"
    if expr_dir.is_dir():
        for fpath in sorted(expr_dir.glob("*.txt")):
            pid = int(fpath.stem)
            with open(fpath) as fh:
                lines = fh.read().splitlines()
            if not lines:
                raise BenchmarkError(f"{fpath}:1: empty expression file")
            prompts[pid] = lines[0]
            frames: dict[int, set[int]] = {}
            for lineno, line in enumerate(lines[1:], 2):
                if not line.strip():
                    continue
                m = re.fullmatch(r"(\d+):\s*([\d,\s]+)", line.strip())
                if not m:
                    raise BenchmarkError(f"{fpath}:{lineno}: malformed referral line")
                frame = int(m.group(1)) - 1
                ids = {int(v) for v in m.group(2).split(",") if v.strip()}
                frames[frame] = ids
            referrals[pid] = frames
    entities: dict[int, tuple[str, str]] = {}
    epath = vdir / "entities.txt"
    if epath.exists():
        with open(epath) as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.strip()
                if not line:
                    continue
                parts = line.split(",")
                if len(parts) != 3:
                    raise BenchmarkError(f"{epath}:{lineno}: expected 3 fields")
                try:
                    entities[int(parts[0])] = (parts[1], parts[2])
                except ValueError:
                    raise BenchmarkError(f"{epath}:{lineno}: malformed entity id")

    _check_referrals(gt, referrals, num_frames, vdir.name)
    return VideoData(name=vdir.name, num_frames=num_frames, image_size=image_size,
                     gt=gt, prompts=prompts, referrals=referrals, entities=entities)


def read_benchmark(root) -> Benchmark:
    root = Path(root)
    if not root.exists():
        raise FileNotFoundError(f"{root}: no such benchmark directory")
    if not root.is_dir():
        raise NotADirectoryError(f"{root}: not a directory")
    videos = {}
    for vdir in sorted(p for p in root.iterdir() if p.is_dir()):
        if (vdir / "gt.txt").exists() or (vdir / "seqinfo.ini").exists():
            videos[vdir.name] = read_video(vdir)
    if not videos:
        raise BenchmarkError(f"{root}: no video folders found")
    return Benchmark(root=root, videos=videos)


def benchmark_palette(benchmark: Benchmark) -> tuple[str, ...]:
    """Sorted union of entity colors across all videos."""
    colors = set()
    for video in benchmark.videos.values():
        colors.update(c for _, c in video.entities.values())
    return tuple(sorted(colors))


# -- statistics ---------------------------------------------------------------


@dataclass
class DatasetStats:
    frames: int
    prompt_count: int
    box_count: int
    instances_per_prompt_mean: float
    instances_per_prompt_hist: Counter          # instance count -> prompts
    temporal_ratio_mean: float
    temporal_ratio_hist: Counter                # decile bin (0..9) -> prompts
    duration_hist: Counter                      # frames -> (prompt, instance) pairs
    word_freq: Counter


def compute_stats(benchmark: Benchmark) -> DatasetStats:
    """Aggregate prompt/instance statistics over all videos."""
    frames = 0
    box_count = 0
    prompt_count = 0
    inst_counts = []
    ratios = []
    duration_hist: Counter = Counter()
    word_freq: Counter = Counter()
    inst_hist: Counter = Counter()
    ratio_hist: Counter = Counter()

    for video in benchmark.videos.values():
        frames += video.num_frames
        box_count += sum(len(rows) for rows in video.gt)
        for pid, text in sorted(video.prompts.items()):
            prompt_count += 1
            word_freq.update(text.lower().split())
            frames_map = video.referrals.get(pid, {})
            ids = set().union(*frames_map.values()) if frames_map else set()
            inst_counts.append(len(ids))
            inst_hist[len(ids)] += 1
            referred_frames = sum(1 for s in frames_map.values() if s)
            ratio = referred_frames / video.num_frames
            ratios.append(ratio)
            ratio_hist[min(int(ratio * 10), 9)] += 1
            per_inst: Counter = Counter()
            for s in frames_map.values():
                for eid in s:
                    per_inst[eid] += 1
            for eid, dur in per_inst.items():
                duration_hist[dur] += 1

    return DatasetStats(
        frames=frames,
        prompt_count=prompt_count,
        box_count=box_count,
        instances_per_prompt_mean=float(np.mean(inst_counts)) if inst_counts else 0.0,
        instances_per_prompt_hist=inst_hist,
        temporal_ratio_mean=float(np.mean(ratios)) if ratios else 0.0,
        temporal_ratio_hist=ratio_hist,
        duration_hist=duration_hist,
        word_freq=word_freq,
    )


# -- prediction files ---------------------------------------------------------


def prompt_split(prompt_ids, holdout_every: int):
    """Deterministic (train, holdout) prompt split.

    Every holdout_every-th prompt in sorted id order is held out;
    holdout_every <= 0 keeps everything in the training set.
    """
    ids = sorted(prompt_ids)
    if holdout_every <= 0:
        return ids, []
    held = set(ids[holdout_every - 1::holdout_every])
    return [i for i in ids if i not in held], sorted(held)


def write_predictions(path, rows):
    """rows: iterable of (frame0, id, (x, y, w, h), refer_score)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        for frame, tid, (x, y, w, h), score in rows:
            fh.write(f"{frame + 1},{tid},{float(x)!r},{float(y)!r},"
                     f"{float(w)!r},{float(h)!r},{float(score)!r}\n")


def read_predictions(path):
    """frame -> list of (id, box); file format mirrors gt plus a score."""
    out: dict[int, list] = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 7:
                raise BenchmarkError(
                    f"{path}:{lineno}: expected 7 fields, got {len(parts)}")
            try:
                frame = int(parts[0]) - 1
                tid = int(parts[1])
                box = tuple(float(v) for v in parts[2:6])
                float(parts[6])
            except ValueError as exc:
                raise BenchmarkError(f"{path}:{lineno}: malformed field ({exc})")
            out.setdefault(frame, []).append((tid, box))
    return out
