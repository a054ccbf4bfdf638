"""Attribute predicates over scenes: combination, rendering, parsing.

Predicates are AND/OR trees of attribute atoms over four axes
(category, color, motion, orientation).  OR combines values of one
axis; AND combines distinct axes; depth is capped at one OR layer under
one AND layer.  Trees render to a fixed English template and parse back
losslessly.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .scenesim import CATEGORIES, Scene

AXES = ("color", "category", "motion", "orientation")

MOTION_VALUES = ("moving", "parked", "turning_left", "turning_right", "going_straight")
ORIENTATION_VALUES = ("counter_direction", "lateral")

# rendered word forms for multi-word values
_VALUE_TEXT = {
    "turning_left": "turning left",
    "turning_right": "turning right",
    "going_straight": "going straight",
    "counter_direction": "counter direction",
}
_TEXT_VALUE = {v: k for k, v in _VALUE_TEXT.items()}

_PLURALS = {"car": "cars", "bus": "buses", "truck": "trucks",
            "pedestrian": "pedestrians"}
_SINGULAR = {v: k for k, v in _PLURALS.items()}


class PredicateError(ValueError):
    """Invalid predicate structure or unknown vocabulary value."""


class ParseError(ValueError):
    """Non-canonical prompt text; message carries the token position."""

    def __init__(self, message, position):
        super().__init__(f"{message} (at token {position})")
        self.position = position


@dataclass(frozen=True)
class Vocabularies:
    colors: tuple[str, ...]
    categories: tuple[str, ...] = CATEGORIES
    motions: tuple[str, ...] = MOTION_VALUES
    orientations: tuple[str, ...] = ORIENTATION_VALUES

    def values(self, axis: str) -> tuple[str, ...]:
        return {"color": self.colors, "category": self.categories,
                "motion": self.motions, "orientation": self.orientations}[axis]


def scene_vocabularies(scene: Scene) -> Vocabularies:
    return Vocabularies(colors=tuple(scene.config.color_palette))


@dataclass(frozen=True)
class Atom:
    axis: str
    value: str

    def validate(self, vocab: Vocabularies):
        if self.axis not in AXES:
            raise PredicateError(f"unknown axis {self.axis!r}")
        if self.value not in vocab.values(self.axis):
            raise PredicateError(f"unknown {self.axis} value {self.value!r}")


@dataclass(frozen=True)
class Or:
    children: tuple[Atom, ...]

    def __post_init__(self):
        if len(self.children) < 2:
            raise PredicateError("Or needs at least 2 children")
        axes = {c.axis for c in self.children}
        if len(axes) != 1:
            raise PredicateError("Or children must share one axis")
        if len({c.value for c in self.children}) != len(self.children):
            raise PredicateError("Or children must be distinct")

    @property
    def axis(self) -> str:
        return self.children[0].axis

    def validate(self, vocab: Vocabularies):
        for c in self.children:
            c.validate(vocab)


@dataclass(frozen=True)
class And:
    children: tuple  # Atom | Or, pairwise distinct axes

    def __post_init__(self):
        if len(self.children) < 2:
            raise PredicateError("And needs at least 2 children")
        axes = [c.axis for c in self.children]
        if len(set(axes)) != len(axes):
            raise PredicateError("And children must have pairwise distinct axes")

    def validate(self, vocab: Vocabularies):
        for c in self.children:
            c.validate(vocab)


PredicateTree = Atom | Or | And


def canonicalize(tree: PredicateTree) -> PredicateTree:
    """Fixed axis order for And children, alphabetical values inside Or."""
    if isinstance(tree, Atom):
        return tree
    if isinstance(tree, Or):
        return Or(tuple(sorted(tree.children, key=lambda a: a.value)))
    kids = [canonicalize(c) for c in tree.children]
    axis_order = {a: i for i, a in enumerate(AXES)}
    return And(tuple(sorted(kids, key=lambda c: axis_order[c.axis])))


@dataclass(frozen=True)
class Prompt:
    id: int
    text: str
    predicate: PredicateTree
    support: int


# -- resolution ---------------------------------------------------------------


def resolve(predicate: PredicateTree, scene: Scene) -> dict[int, set[int]]:
    """Per-frame referred entity ids.

    Static axes (category/color) hold whenever the entity is visible;
    motion/orientation atoms hold only inside a matching event interval.
    All results are intersected with the visible set of the frame.
    """
    vocab = scene_vocabularies(scene)
    if isinstance(predicate, (Atom, Or, And)):
        predicate.validate(vocab)
    else:
        raise PredicateError(f"not a predicate: {predicate!r}")
    gt = scene.ground_truth
    num_frames = scene.config.num_frames
    visible = [gt.visible_ids(t) for t in range(num_frames)]

    def atom_sets(atom: Atom) -> list[set[int]]:
        if atom.axis in ("category", "color"):
            match = {e.id for e in scene.entities
                     if getattr(e, atom.axis) == atom.value}
            return [match & visible[t] for t in range(num_frames)]
        per_frame = [set() for _ in range(num_frames)]
        for ev in scene.events:
            if ev.kind != atom.value:
                continue
            a, b = ev.frame_interval
            for t in range(a, b + 1):
                if ev.entity_id in visible[t]:
                    per_frame[t].add(ev.entity_id)
        return per_frame

    def eval_node(node) -> list[set[int]]:
        if isinstance(node, Atom):
            return atom_sets(node)
        parts = [eval_node(c) for c in node.children]
        out = []
        for t in range(num_frames):
            acc = parts[0][t]
            for p in parts[1:]:
                acc = acc | p[t] if isinstance(node, Or) else acc & p[t]
            out.append(acc)
        return out

    per_frame = eval_node(predicate)
    return {t: per_frame[t] for t in range(num_frames)}


# -- combination --------------------------------------------------------------


@dataclass(frozen=True)
class CombinePolicy:
    allow_or: bool = True
    allow_and: bool = True
    max_or_arity: int = 2
    exhaustive: bool = False
    sample_count: int = 50
    axes: tuple[str, ...] = AXES


def _axis_options(axis, atoms_by_axis, policy):
    """Atom or Or nodes available for one axis inside an And."""
    opts = list(atoms_by_axis[axis])
    if policy.allow_or:
        vals = atoms_by_axis[axis]
        for r in range(2, min(policy.max_or_arity, len(vals)) + 1):
            opts.extend(Or(tuple(c)) for c in itertools.combinations(vals, r))
    return opts


def enumerate_trees(atoms, policy: CombinePolicy) -> list[PredicateTree]:
    """All valid trees over the given atoms (depth <= 2)."""
    atoms_by_axis: dict[str, list[Atom]] = {}
    for a in atoms:
        atoms_by_axis.setdefault(a.axis, []).append(a)
    axes = [ax for ax in policy.axes if ax in atoms_by_axis]
    trees: list[PredicateTree] = list(atoms)
    if policy.allow_or:
        for ax in axes:
            vals = atoms_by_axis[ax]
            for r in range(2, min(policy.max_or_arity, len(vals)) + 1):
                trees.extend(Or(tuple(c)) for c in itertools.combinations(vals, r))
    if policy.allow_and:
        for r in range(2, len(axes) + 1):
            for axset in itertools.combinations(axes, r):
                pools = [_axis_options(ax, atoms_by_axis, policy) for ax in axset]
                for combo in itertools.product(*pools):
                    trees.append(And(tuple(combo)))
    return trees


def combine(atoms, policy: CombinePolicy, seed: int) -> list[PredicateTree]:
    """Seeded sample of valid predicate trees, deduplicated up to
    commutativity (canonical ordering makes equal trees compare equal)."""
    if not atoms:
        raise PredicateError("combine needs a nonempty atom list")
    universe = [canonicalize(t) for t in enumerate_trees(atoms, policy)]
    seen: set = set()
    unique = []
    for t in universe:
        if t not in seen:
            seen.add(t)
            unique.append(t)
    if policy.exhaustive or len(unique) <= policy.sample_count:
        return unique
    rng = np.random.default_rng(seed)
    idx = rng.choice(len(unique), size=policy.sample_count, replace=False)
    return [unique[i] for i in sorted(idx)]


def filter_by_support(trees, scene: Scene, k: int) -> list[Prompt]:
    """Keep trees referring to >= k distinct entities over the scene."""
    if k < 1:
        raise PredicateError("support threshold must be >= 1")
    prompts = []
    pid = 1
    for tree in trees:
        referral = resolve(tree, scene)
        ids = set().union(*referral.values()) if referral else set()
        if len(ids) >= k:
            prompts.append(Prompt(id=pid, text=render(tree),
                                  predicate=tree, support=len(ids)))
            pid += 1
    return prompts


# -- rendering ----------------------------------------------------------------


def _value_text(value: str) -> str:
    return _VALUE_TEXT.get(value, value)


def _or_text(node, plural_category=False) -> str:
    if isinstance(node, Atom):
        vals = [node.value]
    else:
        vals = [c.value for c in node.children]
    if plural_category:
        vals = [_PLURALS[v] for v in vals]
    else:
        vals = [_value_text(v) for v in vals]
    return " or ".join(vals)


def render(predicate: PredicateTree) -> str:
    """Canonical English: "the [color] [category] which are [clauses]"."""
    by_axis: dict[str, object] = {}
    if isinstance(predicate, And):
        for c in predicate.children:
            by_axis[c.axis] = c
    else:
        by_axis[predicate.axis] = predicate

    parts = ["the"]
    if "color" in by_axis:
        parts.append(_or_text(by_axis["color"]))
    if "category" in by_axis:
        parts.append(_or_text(by_axis["category"], plural_category=True))
    else:
        parts.append("vehicles")
    clauses = [ _or_text(by_axis[ax]) for ax in ("motion", "orientation")
                if ax in by_axis ]
    if clauses:
        parts.append("which are")
        parts.append(" and ".join(clauses))
    return " ".join(parts)


# -- parsing ------------------------------------------------------------------


def _parse_value_phrase(tokens, i, vocab_values, what):
    """Parse 'v' or 'v1 or v2 [or ...]' where values may span two words."""
    # longest-match single value at position i
    def match_value(j):
        for two in ([ " ".join(tokens[j:j + 2]) ] if j + 1 < len(tokens) else []):
            if two in _TEXT_VALUE and _TEXT_VALUE[two] in vocab_values:
                return _TEXT_VALUE[two], j + 2
        if j < len(tokens) and tokens[j] in vocab_values:
            return tokens[j], j + 1
        raise ParseError(f"expected a {what} value", j)

    values = []
    val, i = match_value(i)
    values.append(val)
    while i < len(tokens) and tokens[i] == "or":
        val, i2 = match_value(i + 1)
        values.append(val)
        i = i2
    return values, i


def parse(text: str, vocab: Vocabularies) -> PredicateTree:
    """Invert render(); raises ParseError on non-canonical text."""
    tokens = text.strip().lower().split()
    if not tokens:
        raise ParseError("empty prompt", 0)
    i = 0
    if tokens[i] != "the":
        raise ParseError("prompt must start with 'the'", i)
    i += 1
    nodes: list = []

    # optional color phrase
    if i < len(tokens) and tokens[i] in vocab.colors:
        vals, i = _parse_value_phrase(tokens, i, set(vocab.colors), "color")
        nodes.append(_atoms_or_or("color", vals))

    # category phrase or generic "vehicles"
    if i >= len(tokens):
        raise ParseError("missing category or 'vehicles'", i)
    plur = {p for c, p in _PLURALS.items() if c in vocab.categories}
    if tokens[i] == "vehicles":
        i += 1
    elif tokens[i] in plur:
        vals, i = _parse_value_phrase(tokens, i, plur, "category")
        nodes.append(_atoms_or_or("category", [_SINGULAR[v] for v in vals]))
    else:
        raise ParseError("expected a category word or 'vehicles'", i)

    # optional "which are <clause> [and <clause>]"
    if i < len(tokens):
        if tokens[i:i + 2] != ["which", "are"]:
            raise ParseError("expected 'which are'", i)
        i += 2
        clause_axes = []
        while True:
            start = i
            try:
                vals, i = _parse_value_phrase(tokens, i, set(vocab.motions), "motion")
                axis = "motion"
            except ParseError:
                vals, i = _parse_value_phrase(tokens, start,
                                              set(vocab.orientations), "orientation")
                axis = "orientation"
            if axis in clause_axes:
                raise ParseError(f"duplicate {axis} clause", start)
            clause_axes.append(axis)
            nodes.append(_atoms_or_or(axis, vals))
            if i < len(tokens) and tokens[i] == "and":
                i += 1
                continue
            break
    if i != len(tokens):
        raise ParseError("trailing tokens", i)
    if not nodes:
        raise ParseError("prompt constrains nothing", 0)
    tree = nodes[0] if len(nodes) == 1 else And(tuple(nodes))
    return canonicalize(tree)


def _atoms_or_or(axis, values):
    atoms = [Atom(axis, v) for v in values]
    return atoms[0] if len(atoms) == 1 else Or(tuple(atoms))


def grammar_vocabulary(vocab: Vocabularies) -> list[str]:
    """Every word the canonical grammar can emit (tokenizer vocabulary)."""
    words = {"the", "vehicles", "which", "are", "and", "or"}
    for c in vocab.colors:
        words.update(c.split())
    for c in vocab.categories:
        words.update(_PLURALS[c].split())
    for v in vocab.motions + vocab.orientations:
        words.update(_value_text(v).split())
    return sorted(words)


def tokenize(text: str) -> list[str]:
    return text.strip().lower().split()
