"""Procedural caption/pose corpus: eight jittered pose archetypes with
templated captions, a tab-separated record format, ingestion with
validation, and deterministic splits."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError
from .kinematics import BODY_JOINTS, Pose, canonicalize_axis_angle

FORMAT_HEADER = "#pasv1"

# body joint order (pose index = skeleton joint - 1):
#  0 l_hip  1 r_hip  2 spine1  3 l_knee  4 r_knee  5 spine2  6 l_ankle
#  7 r_ankle  8 spine3  9 l_foot 10 r_foot 11 neck 12 l_collar 13 r_collar
# 14 head 15 l_shoulder 16 r_shoulder 17 l_elbow 18 r_elbow 19 l_wrist 20 r_wrist

_SUBJECTS = ("a person", "someone", "a figure", "a character")

Template = tuple[tuple[str, ...], ...]


@dataclass(frozen=True)
class Archetype:
    name: str
    body: np.ndarray  # [21, 3] axis-angle
    jitter_std: float  # radians, per joint
    templates: tuple[Template, ...]
    keywords: frozenset[str] = field(default_factory=frozenset)


def _body(entries: dict[int, tuple[float, float, float]]) -> np.ndarray:
    aa = np.zeros((BODY_JOINTS, 3))
    for joint, rot in entries.items():
        aa[joint] = rot
    return aa


def _templates(*specs) -> tuple[Template, ...]:
    out = []
    for spec in specs:
        out.append(tuple(tuple(slot) for slot in spec))
    return tuple(out)


_ARMS_DOWN_L = {15: (0.0, 0.0, 1.25)}
_ARMS_DOWN_R = {16: (0.0, 0.0, -1.25)}


def _merge(*parts) -> dict:
    merged: dict = {}
    for p in parts:
        merged.update(p)
    return merged


def default_archetypes() -> list[Archetype]:
    arch = [
        Archetype(
            "arms-up",
            _body({15: (0.0, 0.0, -1.45), 16: (0.0, 0.0, 1.45),
                   17: (0.0, 0.0, -0.3), 18: (0.0, 0.0, 0.3)}),
            0.05,
            _templates(
                [_SUBJECTS, ("raises", "lifts", "stretches"), ("both arms",),
                 ("overhead", "skyward")],
                [_SUBJECTS, ("with both arms raised",), ("overhead", "skyward")],
            ),
            frozenset({"overhead", "skyward"}),
        ),
        Archetype(
            "crouch",
            _body(_merge({0: (-1.9, 0.0, 0.0), 1: (-1.9, 0.0, 0.0),
                          3: (2.1, 0.0, 0.0), 4: (2.1, 0.0, 0.0),
                          2: (-0.5, 0.0, 0.0), 5: (-0.3, 0.0, 0.0),
                          15: (0.0, 1.2, 0.0), 16: (0.0, -1.2, 0.0)})),
            0.05,
            _templates(
                [_SUBJECTS, ("crouches", "is crouching"), ("down low", "close to the ground")],
                [_SUBJECTS, ("crouching", "in a low crouch"), ("with knees bent",)],
            ),
            frozenset({"crouches", "crouching", "crouch"}),
        ),
        Archetype(
            "kick-right",
            _body(_merge(_ARMS_DOWN_L, {16: (0.0, 0.0, -0.7),
                          1: (-1.55, 0.0, 0.0), 4: (0.25, 0.0, 0.0),
                          2: (0.25, 0.0, 0.0)})),
            0.05,
            _templates(
                [_SUBJECTS, ("kicks", "is kicking"), ("with the right leg", "a ball forward")],
                [_SUBJECTS, ("kicking", "mid kick,"), ("right leg out front",)],
            ),
            frozenset({"kicks", "kicking", "kick"}),
        ),
        Archetype(
            "lean-left",
            _body(_merge(_ARMS_DOWN_L, {16: (0.0, 0.0, -1.35),
                          2: (0.0, 0.0, 0.55), 5: (0.0, 0.0, 0.45),
                          0: (0.0, 0.0, -0.18), 1: (0.0, 0.0, -0.18),
                          11: (0.0, 0.0, 0.3)})),
            0.05,
            _templates(
                [_SUBJECTS, ("leans", "is leaning"), ("to the left side", "over to the left")],
                [_SUBJECTS, ("leaning", "tilted and leaning"), ("toward the left",)],
            ),
            frozenset({"leans", "leaning", "lean"}),
        ),
        Archetype(
            "point-up",
            _body(_merge(_ARMS_DOWN_L, {16: (0.0, 0.0, 1.55),
                          17: (0.0, 0.0, 0.35), 14: (0.3, 0.0, 0.0)})),
            0.05,
            _templates(
                [_SUBJECTS, ("points", "is pointing"), ("straight up", "at the sky above")],
                [_SUBJECTS, ("pointing", "with one finger pointing"), ("upward",)],
            ),
            frozenset({"points", "pointing", "point"}),
        ),
        Archetype(
            "sit",
            _body(_merge({0: (-1.5, 0.0, 0.0), 1: (-1.5, 0.0, 0.0),
                          3: (1.5, 0.0, 0.0), 4: (1.5, 0.0, 0.0),
                          2: (-0.18, 0.0, 0.0)},
                         _ARMS_DOWN_L, _ARMS_DOWN_R,
                         {17: (0.0, 0.0, 0.25), 18: (0.0, 0.0, -0.25)})),
            0.05,
            _templates(
                [_SUBJECTS, ("sits", "is sitting"), ("on a chair", "down to rest")],
                [_SUBJECTS, ("sitting", "seated and sitting"), ("with legs bent",)],
            ),
            frozenset({"sits", "sitting", "sit", "seated"}),
        ),
        Archetype(
            "t-pose",
            _body({}),
            0.05,
            _templates(
                [_SUBJECTS, ("stands", "is standing"), ("in a t-pose", "in a wide t-pose")],
                [_SUBJECTS, ("holding a t-pose",), ("with arms straight out", "facing forward")],
            ),
            # keywords are tokens, and the tokenizer splits "t-pose" in two
            frozenset({"t", "pose"}),
        ),
        Archetype(
            "wave-right",
            _body(_merge(_ARMS_DOWN_L, {16: (0.0, 0.0, 0.8),
                          18: (0.0, 0.0, 1.35), 20: (0.0, 0.0, 0.5)})),
            0.05,
            _templates(
                [_SUBJECTS, ("waves", "is waving"), ("with the right hand", "hello to a friend")],
                [_SUBJECTS, ("waving", "cheerfully waving"), ("one hand in the air",)],
            ),
            frozenset({"waves", "waving", "wave"}),
        ),
    ]
    return arch


def archetype_by_name(name: str) -> Archetype:
    for a in default_archetypes():
        if a.name == name:
            return a
    raise DataError(f"unknown archetype {name!r}")


def template_surface_forms(arch: Archetype) -> list[str]:
    """Every caption the archetype's templates can produce."""
    out: list[str] = []
    for template in arch.templates:
        combos = [[]]
        for slot in template:
            combos = [c + [choice] for c in combos for choice in slot]
        out.extend(" ".join(c) for c in combos)
    return out


def all_surface_forms() -> list[str]:
    forms: list[str] = []
    for a in default_archetypes():
        forms.extend(template_surface_forms(a))
    return forms


@dataclass
class DatasetRecord:
    id: int
    archetype: str
    caption: str
    pose: np.ndarray  # [21, 3] canonical axis-angle
    root: np.ndarray  # [3] canonical axis-angle
    source: str = "SYNTH"

    def to_pose(self) -> Pose:
        return Pose(self.pose, self.root)


ROOT_YAW_RANGE = np.pi / 4


def generate(n: int, seed: int) -> list[DatasetRecord]:
    """Deterministic corpus of n jittered archetype records."""
    if n < 1:
        raise DataError(f"n must be >= 1, got {n}")
    archetypes = default_archetypes()
    rng = np.random.default_rng(seed)
    records = []
    for i in range(n):
        arch = archetypes[rng.integers(len(archetypes))]
        jitter = rng.normal(0.0, arch.jitter_std, size=(BODY_JOINTS, 3))
        body = np.stack([canonicalize_axis_angle(a) for a in arch.body + jitter])
        yaw = rng.uniform(-ROOT_YAW_RANGE, ROOT_YAW_RANGE)
        template = arch.templates[rng.integers(len(arch.templates))]
        caption = " ".join(slot[rng.integers(len(slot))] for slot in template)
        records.append(
            DatasetRecord(i, arch.name, caption, body,
                          np.array([0.0, yaw, 0.0]))
        )
    return records


# -- corpus file format ------------------------------------------------------


def _fmt(x: float) -> str:
    return f"{x:.9g}"


def write_records(path, records) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(FORMAT_HEADER + "\n")
        for r in records:
            if "\t" in r.caption or "\n" in r.caption:
                raise DataError(f"record {r.id}: caption may not contain tabs")
            cols = [str(r.id), r.archetype, r.caption]
            cols += [_fmt(v) for v in r.pose.reshape(-1)]
            cols += [_fmt(v) for v in r.root]
            fh.write("\t".join(cols) + "\n")


@dataclass
class IngestReport:
    kept: int = 0
    dropped: dict = field(default_factory=dict)
    diagnostics: list = field(default_factory=list)

    def drop(self, reason: str, lineno: int, detail: str = "") -> None:
        self.dropped[reason] = self.dropped.get(reason, 0) + 1
        msg = f"line {lineno}: dropped ({reason})"
        if detail:
            msg += f": {detail}"
        self.diagnostics.append(msg)


NUM_COLUMNS = 3 + BODY_JOINTS * 3 + 3
ANGLE_TOL = 1e-6


def ingest(path) -> tuple[list[DatasetRecord], IngestReport]:
    """Parse and validate a corpus file; invalid records are dropped with a
    per-line diagnostic, structural problems raise DataError."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    report = IngestReport()
    if not lines:
        return [], report
    if lines[0] != FORMAT_HEADER:
        raise DataError(f"{path}: missing {FORMAT_HEADER} header")
    records: list[DatasetRecord] = []
    seen_ids: set[int] = set()
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        cols = line.split("\t")
        if len(cols) != NUM_COLUMNS:
            report.drop("malformed", lineno, f"expected {NUM_COLUMNS} columns, got {len(cols)}")
            continue
        try:
            rid = int(cols[0])
            values = np.array([float(v) for v in cols[3:]], dtype=np.float64)
        except ValueError as e:
            report.drop("malformed", lineno, str(e))
            continue
        if rid in seen_ids:
            report.drop("duplicate-id", lineno, f"id {rid}")
            continue
        if not np.isfinite(values).all():
            report.drop("non-finite", lineno)
            continue
        pose = values[: BODY_JOINTS * 3].reshape(BODY_JOINTS, 3)
        root = values[BODY_JOINTS * 3 :]
        angles = np.linalg.norm(np.vstack([pose, root[None]]), axis=1)
        if (angles > np.pi + ANGLE_TOL).any():
            report.drop("angle-out-of-range", lineno)
            continue
        seen_ids.add(rid)
        records.append(
            DatasetRecord(rid, cols[1], cols[2], pose, root, source="INGESTED")
        )
    report.kept = len(records)
    return records, report


def split(records, fractions, seed: int):
    """Deterministic shuffle then partition; returns len(fractions) lists."""
    fractions = [float(f) for f in fractions]
    if any(f <= 0 for f in fractions):
        raise ConfigError("split fractions must be positive")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigError(f"split fractions must sum to 1, got {sum(fractions)}")
    n = len(records)
    order = np.random.default_rng(seed).permutation(n)
    bounds = [int(round(c * n)) for c in np.cumsum(fractions)]
    parts = []
    lo = 0
    for hi in bounds:
        parts.append([records[i] for i in order[lo:hi]])
        lo = hi
    return tuple(parts)
