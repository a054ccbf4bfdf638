"""Procedural intersection-traffic scenes with known ground truth.

A 2D kinematic world stands in for a rendered city: entities spawn on
lane polylines, get a timeline of motion events, and are projected
through a fixed world-to-image affine camera into pixel boxes.  Every
output is a pure function of (config, seed).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

CATEGORIES = ("car", "bus", "truck", "pedestrian")
CATEGORY_CODES = {c: i + 1 for i, c in enumerate(CATEGORIES)}

EVENT_KINDS = (
    "moving", "parked", "turning_left", "turning_right",
    "going_straight", "counter_direction", "lateral",
)
# kinds whose trajectory leaves the lane polyline for good
_OFF_LANE_KINDS = {"turning_left", "turning_right", "counter_direction", "lateral"}
_STILL_KINDS = {"parked"}

# category -> (length, width) in world units, before jitter
_BASE_SIZES = {
    "car": (4.4, 2.0),
    "bus": (11.0, 2.6),
    "truck": (8.0, 2.5),
    "pedestrian": (0.7, 0.7),
}


class ConfigError(ValueError):
    """Invalid WorldConfig; message names the offending field."""


@dataclass
class WorldConfig:
    seed: int = 0
    num_frames: int = 100
    image_size: tuple[int, int] = (192, 128)          # (width, height) px
    lane_layout: list[list[tuple[float, float]]] = field(default_factory=lambda: [
        [(-50.0, -6.0), (50.0, -6.0)],
        [(50.0, 6.0), (-50.0, 6.0)],
        [(-6.0, -35.0), (-6.0, 35.0)],
        [(6.0, 35.0), (6.0, -35.0)],
    ])
    entity_count_range: tuple[int, int] = (4, 8)
    category_weights: dict[str, float] = field(default_factory=lambda: {
        "car": 0.6, "bus": 0.15, "truck": 0.15, "pedestrian": 0.1})
    color_palette: list[str] = field(default_factory=lambda: [
        "black", "white", "red", "blue", "grey"])
    speed_range: tuple[float, float] = (0.4, 1.2)      # world units / frame
    event_rates: dict[str, float] = field(default_factory=lambda: {
        "moving": 0.35, "parked": 0.25, "turning_left": 0.1,
        "turning_right": 0.1, "going_straight": 0.1,
        "counter_direction": 0.05, "lateral": 0.05})
    event_duration_range: tuple[int, int] = (12, 40)   # frames per event
    world_bounds: tuple[float, float, float, float] | None = None  # x0,y0,x1,y1
    visibility_min_fraction: float = 0.25              # clipped/full area to stay visible
    spawn_max_iou: float = 0.3

    def validate(self):
        if self.num_frames < 1:
            raise ConfigError("num_frames must be >= 1")
        if self.image_size[0] < 1 or self.image_size[1] < 1:
            raise ConfigError("image_size components must be >= 1")
        if not self.lane_layout or any(len(lane) < 2 for lane in self.lane_layout):
            raise ConfigError("lane_layout needs polylines with >= 2 points each")
        lo, hi = self.entity_count_range
        if lo < 0 or lo > hi:
            raise ConfigError("entity_count_range must satisfy 0 <= min <= max")
        for name, table in (("category_weights", self.category_weights),
                            ("event_rates", self.event_rates)):
            if not table:
                raise ConfigError(f"{name} must be nonempty")
            if any(v < 0 for v in table.values()):
                raise ConfigError(f"{name} has a negative probability")
            if abs(sum(table.values()) - 1.0) > 1e-9:
                raise ConfigError(f"{name} must sum to 1")
        if set(self.category_weights) - set(CATEGORIES):
            raise ConfigError("category_weights has an unknown category")
        if set(self.event_rates) - set(EVENT_KINDS):
            raise ConfigError("event_rates has an unknown event kind")
        if not self.color_palette:
            raise ConfigError("color_palette must be nonempty")
        if self.speed_range[0] < 0 or self.speed_range[0] > self.speed_range[1]:
            raise ConfigError("speed_range must satisfy 0 <= min <= max")
        dlo, dhi = self.event_duration_range
        if dlo < 1 or dlo > dhi:
            raise ConfigError("event_duration_range must satisfy 1 <= min <= max")
        if not (0.0 <= self.visibility_min_fraction <= 1.0):
            raise ConfigError("visibility_min_fraction must be in [0, 1]")

    def bounds(self) -> tuple[float, float, float, float]:
        if self.world_bounds is not None:
            return self.world_bounds
        pts = [p for lane in self.lane_layout for p in lane]
        xs = [p[0] for p in pts]
        ys = [p[1] for p in pts]
        mx = 0.05 * max(max(xs) - min(xs), 1.0)
        my = 0.05 * max(max(ys) - min(ys), 1.0)
        return (min(xs) - mx, min(ys) - my, max(xs) + mx, max(ys) + my)


@dataclass(frozen=True)
class Entity:
    id: int
    category: str
    color: str
    size: tuple[float, float]            # (length, width) world units


@dataclass(frozen=True)
class MotionEvent:
    entity_id: int
    kind: str
    frame_interval: tuple[int, int]      # [start, end] inclusive


@dataclass
class Scene:
    config: WorldConfig
    entities: list[Entity]
    events: list[MotionEvent]
    positions: np.ndarray                # (num_frames, n_entities, 2) world
    headings: np.ndarray                 # (num_frames, n_entities) radians

    def events_of(self, entity_id: int) -> list[MotionEvent]:
        return [e for e in self.events if e.entity_id == entity_id]

    @cached_property
    def ground_truth(self) -> "GroundTruth":
        return project(self)


@dataclass
class GroundTruth:
    frames: list[list[tuple[int, tuple[float, float, float, float]]]]
    image_size: tuple[int, int]

    def visible_ids(self, frame: int) -> set[int]:
        return {eid for eid, _ in self.frames[frame]}

    def boxes_of(self, frame: int) -> dict[int, tuple[float, float, float, float]]:
        return dict(self.frames[frame])


def _lane_cumlen(lane: np.ndarray) -> np.ndarray:
    seg = np.linalg.norm(np.diff(lane, axis=0), axis=1)
    return np.concatenate([[0.0], np.cumsum(seg)])


def _lane_point(lane: np.ndarray, cum: np.ndarray, s: float):
    """Position and unit direction at arc length s (clamped to the lane)."""
    total = cum[-1]
    s = min(max(s, 0.0), total)
    i = int(np.searchsorted(cum, s, side="right")) - 1
    i = min(max(i, 0), len(lane) - 2)
    seglen = cum[i + 1] - cum[i]
    t = 0.0 if seglen == 0 else (s - cum[i]) / seglen
    p = lane[i] * (1 - t) + lane[i + 1] * t
    d = lane[i + 1] - lane[i]
    n = np.linalg.norm(d)
    d = d / n if n > 0 else np.array([1.0, 0.0])
    return p, d


def _footprint_aabb(pos, heading, size):
    """Axis-aligned bounds of the oriented footprint rectangle (world)."""
    length, width = size
    c, s = math.cos(heading), math.sin(heading)
    hx = abs(c) * length / 2 + abs(s) * width / 2
    hy = abs(s) * length / 2 + abs(c) * width / 2
    return pos[0] - hx, pos[1] - hy, pos[0] + hx, pos[1] + hy


def _iou_aabb(a, b):
    ix = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    iy = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = ix * iy
    if inter == 0:
        return 0.0
    ua = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / ua


def _sample_events(rng, num_frames, rates, duration_range):
    """Partition [0, num_frames) into consecutive event intervals."""
    kinds = sorted(rates)
    probs = np.array([rates[k] for k in kinds])
    probs = probs / probs.sum()
    events = []
    t = 0
    while t < num_frames:
        kind = kinds[int(rng.choice(len(kinds), p=probs))]
        dur = int(rng.integers(duration_range[0], duration_range[1] + 1))
        end = min(t + dur - 1, num_frames - 1)
        if kind in ("turning_left", "turning_right") and end - t < 3:
            # a turn needs room to sweep its arc; degrade to plain driving
            kind = "moving"
        events.append((kind, t, end))
        t = end + 1
    return events


def build_world(config: WorldConfig) -> Scene:
    """Generate a scene (entities, events, trajectories) from config.seed."""
    config.validate()
    rng = np.random.default_rng(config.seed)
    n = int(rng.integers(config.entity_count_range[0],
                         config.entity_count_range[1] + 1))
    lanes = [np.asarray(lane, dtype=np.float64) for lane in config.lane_layout]
    cums = [_lane_cumlen(lane) for lane in lanes]

    cat_names = sorted(config.category_weights)
    cat_probs = np.array([config.category_weights[c] for c in cat_names])
    cat_probs = cat_probs / cat_probs.sum()

    entities: list[Entity] = []
    events: list[MotionEvent] = []
    spawn: list[dict] = []
    placed_aabbs: list[tuple] = []

    for eid in range(1, n + 1):
        category = cat_names[int(rng.choice(len(cat_names), p=cat_probs))]
        color = config.color_palette[int(rng.integers(len(config.color_palette)))]
        base_l, base_w = _BASE_SIZES[category]
        jitter = 1.0 + 0.1 * rng.uniform(-1.0, 1.0)
        size = (base_l * jitter, base_w * jitter)
        speed = float(rng.uniform(*config.speed_range))

        # spawn on a lane, avoiding heavy overlap at frame 0
        for _ in range(64):
            li = int(rng.integers(len(lanes)))
            s0 = float(rng.uniform(0.0, cums[li][-1]))
            pos, d = _lane_point(lanes[li], cums[li], s0)
            heading = math.atan2(d[1], d[0])
            aabb = _footprint_aabb(pos, heading, size)
            if all(_iou_aabb(aabb, other) <= config.spawn_max_iou
                   for other in placed_aabbs):
                break
        placed_aabbs.append(aabb)
        entities.append(Entity(id=eid, category=category, color=color, size=size))
        spawn.append({"lane": li, "s": s0, "pos": np.array(pos), "heading": heading,
                      "speed": speed})
        for kind, a, b in _sample_events(rng, config.num_frames,
                                         config.event_rates,
                                         config.event_duration_range):
            events.append(MotionEvent(entity_id=eid, kind=kind, frame_interval=(a, b)))

    positions = np.zeros((config.num_frames, n, 2))
    headings = np.zeros((config.num_frames, n))

    for idx, ent in enumerate(entities):
        st = spawn[idx]
        lane = lanes[st["lane"]]
        cum = cums[st["lane"]]
        timeline = [e for e in events if e.entity_id == ent.id]
        pos = st["pos"].copy()
        heading = st["heading"]
        s = st["s"]
        on_lane = True
        positions[0, idx] = pos
        headings[0, idx] = heading
        active = {t: e for e in timeline
                  for t in range(e.frame_interval[0], e.frame_interval[1] + 1)}
        for t in range(config.num_frames - 1):
            ev = active[t]
            kind = ev.kind
            speed = st["speed"]
            if kind in _STILL_KINDS:
                pass
            elif kind in ("moving", "going_straight"):
                if on_lane:
                    s += speed
                    if s <= cum[-1]:
                        p, d = _lane_point(lane, cum, s)
                        pos = p.copy()
                        heading = math.atan2(d[1], d[0])
                    else:
                        on_lane = False
                        pos = pos + speed * np.array([math.cos(heading), math.sin(heading)])
                else:
                    pos = pos + speed * np.array([math.cos(heading), math.sin(heading)])
            elif kind == "counter_direction":
                if on_lane:
                    _, d = _lane_point(lane, cum, s)
                    heading = math.atan2(d[1], d[0]) + math.pi
                    on_lane = False
                pos = pos + speed * np.array([math.cos(heading), math.sin(heading)])
            elif kind == "lateral":
                if on_lane:
                    _, d = _lane_point(lane, cum, s)
                    heading = math.atan2(d[1], d[0]) + math.pi / 2
                    on_lane = False
                pos = pos + speed * np.array([math.cos(heading), math.sin(heading)])
            elif kind in ("turning_left", "turning_right"):
                a, b = ev.frame_interval
                # heading sweeps exactly +/- 90 degrees across the interval
                step = (math.pi / 2) / max(b - a, 1)
                heading += step if kind == "turning_left" else -step
                on_lane = False
                pos = pos + speed * np.array([math.cos(heading), math.sin(heading)])
            positions[t + 1, idx] = pos
            headings[t + 1, idx] = heading
    return Scene(config=config, entities=entities, events=events,
                 positions=positions, headings=headings)


def camera_transform(config: WorldConfig):
    """World -> pixel affine: (sx, sy, ox, oy) with px = ox + sx*wx."""
    x0, y0, x1, y1 = config.bounds()
    w, h = config.image_size
    sx = w / (x1 - x0)
    sy = h / (y1 - y0)
    return sx, sy, -x0 * sx, -y0 * sy


def project(scene: Scene) -> GroundTruth:
    """Project footprints through the fixed affine camera to pixel boxes.

    Boxes are clipped to the image; entities whose clipped area falls
    below the visibility fraction are omitted for that frame.
    """
    cfg = scene.config
    sx, sy, ox, oy = camera_transform(cfg)
    w_img, h_img = cfg.image_size
    frames = []
    for t in range(cfg.num_frames):
        rows = []
        for idx, ent in enumerate(scene.entities):
            wx0, wy0, wx1, wy1 = _footprint_aabb(
                scene.positions[t, idx], scene.headings[t, idx], ent.size)
            px0, px1 = ox + sx * wx0, ox + sx * wx1
            py0, py1 = oy + sy * wy0, oy + sy * wy1
            full = (px1 - px0) * (py1 - py0)
            cx0, cy0 = max(px0, 0.0), max(py0, 0.0)
            cx1, cy1 = min(px1, float(w_img)), min(py1, float(h_img))
            cw, ch = cx1 - cx0, cy1 - cy0
            if cw <= 0 or ch <= 0 or full <= 0:
                continue
            if cw * ch < cfg.visibility_min_fraction * full:
                continue
            rows.append((ent.id, (cx0, cy0, cw, ch)))
        frames.append(rows)
    return GroundTruth(frames=frames, image_size=cfg.image_size)


def feature_spec(config: WorldConfig) -> dict:
    """Layout of the per-cell feature vector."""
    ncat = len(CATEGORIES)
    ncol = len(config.color_palette)
    return {
        "categories": CATEGORIES,
        "colors": tuple(config.color_palette),
        "dim": 1 + ncat + ncol + 2,
    }


def rasterize(gt_frame, grid_dims, image_size, spec, entity_attrs,
              prev_centers=None) -> np.ndarray:
    """One frame of the feature grid: (grid_h*grid_w, F).

    Per cell: occupancy fraction (area-weighted over boxes), then the
    dominant box's category/color one-hots scaled by its overlap
    fraction, then that entity's normalized velocity (zero when the
    entity is absent from the previous frame).
    """
    gh, gw = grid_dims
    if gh < 1 or gw < 1:
        raise ConfigError("grid_dims components must be >= 1")
    w_img, h_img = image_size
    cell_w, cell_h = w_img / gw, h_img / gh
    ncat = len(spec["categories"])
    ncol = len(spec["colors"])
    feat = np.zeros((gh * gw, spec["dim"]))
    dominant = np.full(gh * gw, -1.0)  # best overlap fraction so far

    cat_index = {c: i for i, c in enumerate(spec["categories"])}
    col_index = {c: i for i, c in enumerate(spec["colors"])}

    for eid, (bx, by, bw, bh) in gt_frame:
        gx0 = max(int(bx // cell_w), 0)
        gx1 = min(int(math.ceil((bx + bw) / cell_w)), gw)
        gy0 = max(int(by // cell_h), 0)
        gy1 = min(int(math.ceil((by + bh) / cell_h)), gh)
        cat, col = entity_attrs[eid]
        if prev_centers is not None and eid in prev_centers:
            pcx, pcy = prev_centers[eid]
            vx = ((bx + bw / 2) - pcx) / w_img
            vy = ((by + bh / 2) - pcy) / h_img
        else:
            vx = vy = 0.0
        for gy in range(gy0, gy1):
            for gx in range(gx0, gx1):
                cx0, cy0 = gx * cell_w, gy * cell_h
                ov = (max(0.0, min(bx + bw, cx0 + cell_w) - max(bx, cx0))
                      * max(0.0, min(by + bh, cy0 + cell_h) - max(by, cy0)))
                if ov <= 0:
                    continue
                frac = ov / (cell_w * cell_h)
                cell = gy * gw + gx
                feat[cell, 0] = min(1.0, feat[cell, 0] + frac)
                if frac > dominant[cell]:
                    dominant[cell] = frac
                    feat[cell, 1:1 + ncat] = 0.0
                    feat[cell, 1 + ncat:1 + ncat + ncol] = 0.0
                    capped = min(1.0, frac)
                    feat[cell, 1 + cat_index[cat]] = capped
                    feat[cell, 1 + ncat + col_index[col]] = capped
                    feat[cell, 1 + ncat + ncol] = vx
                    feat[cell, 1 + ncat + ncol + 1] = vy
    return feat


def featurize(scene: Scene, gt: GroundTruth, grid_dims) -> np.ndarray:
    """Feature grids for all frames: (num_frames, grid_h*grid_w, F)."""
    spec = feature_spec(scene.config)
    attrs = {e.id: (e.category, e.color) for e in scene.entities}
    out = np.zeros((len(gt.frames), grid_dims[0] * grid_dims[1], spec["dim"]))
    prev = None
    for t, frame in enumerate(gt.frames):
        out[t] = rasterize(frame, grid_dims, gt.image_size, spec, attrs,
                           prev_centers=prev)
        prev = {eid: (b[0] + b[2] / 2, b[1] + b[3] / 2) for eid, b in frame}
    return out
