"""Which scene object each fixation lands on.

Two label sources are supported: dense per-frame rasters stored row-wise
run-length encoded, and per-frame box tracks resolved by a priority order.
A fixation's object is the most frequent label under the gaze point over
the frames it spans; background (0) takes part in the vote and maps to
``"unknown"``.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    BadRecord,
    DegenerateBox,
    FrameMissing,
    NonMonotonicTimestamps,
    PointOutOfBounds,
    RLEOverflow,
    RLEUnderflow,
    UnknownCategoryId,
)
from .gaze_events import EventTimeline, EyeMovementEvent, fixations_of
from .ingest import CATEGORIES, FramedGaze, StreamMeta, iter_jsonl, require, require_int

DEFAULT_PRIORITY = CATEGORIES


@dataclass(frozen=True, eq=False)
class LabelFrame:
    t_ns: int
    w: int
    h: int
    row_ptr: np.ndarray  # runs of row r are run_end/run_label[row_ptr[r]:row_ptr[r+1]]
    run_end: np.ndarray  # exclusive end column of each run within its row
    run_label: np.ndarray

    def label(self, row: int, col: int) -> int:
        a, b = self.row_ptr[row], self.row_ptr[row + 1]
        k = a + int(np.searchsorted(self.run_end[a:b], col, side="right"))
        return int(self.run_label[k])

    def decode(self) -> np.ndarray:
        out = np.empty((self.h, self.w), dtype=np.int32)
        for r in range(self.h):
            a, b = self.row_ptr[r], self.row_ptr[r + 1]
            lens = np.diff(np.concatenate(([0], self.run_end[a:b])))
            out[r] = np.repeat(self.run_label[a:b], lens)
        return out


@dataclass(frozen=True, eq=False)
class LabelMapSequence:
    """Per-frame object-label rasters of one wearer's video.

    The raster grid may be coarser than the gaze frame (``width`` x
    ``height``); points are scaled into it before lookup.
    """

    frames: Mapping[int, LabelFrame]
    n_objects: int
    width: int
    height: int
    provenance: str = ""

    def frame_times(self) -> tuple[np.ndarray, np.ndarray]:
        idx = np.fromiter(self.frames, dtype=np.int64, count=len(self.frames))
        t = np.fromiter((f.t_ns for f in self.frames.values()), dtype=np.int64, count=len(self.frames))
        return idx, t

    def label_at(self, frame_idx: int, point) -> int:
        f = self.frames.get(int(frame_idx))
        if f is None:
            raise FrameMissing(f"no label map for frame {frame_idx}")
        x, y = point
        if not (0 <= x < self.width and 0 <= y < self.height):
            raise PointOutOfBounds(f"point {point} outside {self.width}x{self.height}")
        col = int(x * f.w // self.width)
        row = int(y * f.h // self.height)
        return f.label(row, col)


def _frame_from_rows(rows, w, h, path, lineno, known_ids) -> LabelFrame:
    if not isinstance(rows, list):
        raise BadRecord("'rows' must be an array", path, lineno)
    if len(rows) < h:
        raise RLEUnderflow(f"{len(rows)} rows decoded, expected {h}", path, lineno)
    if len(rows) > h:
        raise RLEOverflow(f"{len(rows)} rows decoded, expected {h}", path, lineno)
    ptr = [0]
    ends: list[int] = []
    labs: list[int] = []
    for r, row in enumerate(rows):
        col = 0
        for run in row:
            if not (isinstance(run, list) and len(run) == 2 and all(isinstance(v, int) for v in run)):
                raise BadRecord(f"row {r}: runs must be [label, length] integer pairs", path, lineno)
            label, n = run
            if n < 1:
                raise BadRecord(f"row {r}: run length must be >= 1", path, lineno)
            if label != 0 and label not in known_ids:
                raise UnknownCategoryId(f"row {r}: label {label} is not a declared object id", path, lineno)
            col += n
            ends.append(col)
            labs.append(label)
        if col < w:
            raise RLEUnderflow(f"row {r}: runs cover {col} cells, expected {w}", path, lineno)
        if col > w:
            raise RLEOverflow(f"row {r}: runs cover {col} cells, expected {w}", path, lineno)
        ptr.append(len(ends))
    return LabelFrame(
        0,
        w,
        h,
        np.asarray(ptr, dtype=np.int64),
        np.asarray(ends, dtype=np.int64),
        np.asarray(labs, dtype=np.int32),
    )


def load_label_maps(
    path,
    known_ids: Iterable[int],
    meta: StreamMeta | None = None,
    clock_offset_ns: int = 0,
    provenance: str = "",
) -> LabelMapSequence:
    """Read and validate a JSON Lines label-map file.

    ``known_ids`` are the object ids declared in the session's category map;
    any other non-zero label raises :class:`UnknownCategoryId`. When ``meta``
    is None the gaze frame is taken to be the raster size of the first record.
    """
    path = Path(path)
    known = set(known_ids)
    frames: dict[int, LabelFrame] = {}
    prev_t = None
    prev_rows = prev_frame = None
    width = height = None
    for lineno, rec in iter_jsonl(path):
        require(rec, ("frame_idx", "t_ns", "w", "h", "rows"), path, lineno)
        fidx = require_int(rec, "frame_idx", path, lineno)
        t = require_int(rec, "t_ns", path, lineno) + clock_offset_ns
        w = require_int(rec, "w", path, lineno)
        h = require_int(rec, "h", path, lineno)
        if w < 1 or h < 1:
            raise BadRecord("'w' and 'h' must be positive", path, lineno)
        if prev_t is not None and t <= prev_t:
            raise NonMonotonicTimestamps(f"frame t_ns={t - clock_offset_ns} not increasing", path, lineno)
        if fidx in frames:
            raise BadRecord(f"frame_idx {fidx} repeated", path, lineno)
        prev_t = t
        rows = rec["rows"]
        if prev_frame is not None and rows == prev_rows and (w, h) == (prev_frame.w, prev_frame.h):
            base = prev_frame  # static scenes repeat the same raster
        else:
            base = _frame_from_rows(rows, w, h, path, lineno, known)
            prev_rows = rows
        frame = LabelFrame(t, w, h, base.row_ptr, base.run_end, base.run_label)
        prev_frame = frame
        frames[fidx] = frame
        if width is None:
            width, height = (w, h) if meta is None else (meta.width, meta.height)
    if width is None:
        width, height = (meta.width, meta.height) if meta is not None else (1, 1)
    return LabelMapSequence(frames, max(known, default=0), width, height, provenance)


def render_boxes(
    boxes: Sequence[tuple[int, float, float, float, float]],
    w: int,
    h: int,
    priority: Sequence[int] | None = None,
    scale: int = 1,
) -> list:
    """Rasterise ``(object_id, x0, y0, x1, y1)`` boxes into RLE rows.

    A cell ``(r, c)`` at ``scale`` px per cell takes the label of the highest
    priority box with ``x0 <= c*scale < x1`` and ``y0 <= r*scale < y1``, which
    agrees with :meth:`BoxTrackLabelSource.label_at` whenever box edges are
    multiples of ``scale``.
    """
    grid = np.zeros((h, w), dtype=np.int32)
    rank = _rank(priority, [b[0] for b in boxes])
    cx = np.arange(w) * scale
    cy = np.arange(h) * scale
    for oid, x0, y0, x1, y1 in sorted(boxes, key=lambda b: -rank[b[0]]):
        cols = (cx >= x0) & (cx < x1)
        rws = (cy >= y0) & (cy < y1)
        grid[np.ix_(rws, cols)] = oid
    return encode_rows(grid)


def encode_rows(grid: np.ndarray) -> list:
    rows = []
    for row in np.asarray(grid):
        change = np.nonzero(np.diff(row))[0] + 1
        starts = np.concatenate(([0], change))
        lens = np.diff(np.concatenate((starts, [len(row)])))
        rows.append([[int(row[s]), int(n)] for s, n in zip(starts, lens)])
    return rows


def _rank(priority, ids) -> dict[int, int]:
    if priority is None:
        priority = sorted(set(ids))
    rank = {oid: i for i, oid in enumerate(priority)}
    return {oid: rank.get(oid, len(rank) + oid) for oid in set(ids) | set(rank)}


@dataclass(frozen=True, eq=False)
class BoxTrackLabelSource:
    """Per-frame object boxes; overlaps resolve to the earliest id in ``priority``."""

    frames: Mapping[int, tuple[int, list]]  # frame_idx -> (t_ns, [(oid, x0, y0, x1, y1)])
    priority: tuple[int, ...]
    width: int
    height: int

    def frame_times(self) -> tuple[np.ndarray, np.ndarray]:
        idx = np.fromiter(self.frames, dtype=np.int64, count=len(self.frames))
        t = np.fromiter((v[0] for v in self.frames.values()), dtype=np.int64, count=len(self.frames))
        return idx, t

    def label_at(self, frame_idx: int, point) -> int:
        entry = self.frames.get(int(frame_idx))
        if entry is None:
            raise FrameMissing(f"no boxes for frame {frame_idx}")
        x, y = point
        if not (0 <= x < self.width and 0 <= y < self.height):
            raise PointOutOfBounds(f"point {point} outside {self.width}x{self.height}")
        for oid, x0, y0, x1, y1 in entry[1]:  # stored in priority order
            if x0 <= x < x1 and y0 <= y < y1:
                return oid
        return 0


def make_box_source(frames, meta: StreamMeta, priority=None) -> BoxTrackLabelSource:
    """Clamp boxes to the frame and order each frame's boxes by priority."""
    ids = {b[0] for _, boxes in frames.values() for b in boxes}
    if priority is not None and not ids <= set(priority):
        raise ValueError("priority must list every object id")
    rank = _rank(priority, ids)
    out = {}
    for fidx, (t, boxes) in frames.items():
        clamped = []
        for oid, x0, y0, x1, y1 in boxes:
            clamped.append(
                (oid, max(0, x0), max(0, y0), min(meta.width, x1), min(meta.height, y1))
            )
        clamped.sort(key=lambda b: rank[b[0]])
        out[fidx] = (t, clamped)
    prio = tuple(priority) if priority is not None else tuple(sorted(ids, key=rank.get))
    return BoxTrackLabelSource(out, prio, meta.width, meta.height)


def load_box_tracks(path, known_ids, meta: StreamMeta, clock_offset_ns: int = 0, priority=None):
    path = Path(path)
    known = set(known_ids)
    frames = {}
    prev_t = None
    for lineno, rec in iter_jsonl(path):
        require(rec, ("frame_idx", "t_ns", "boxes"), path, lineno)
        fidx = require_int(rec, "frame_idx", path, lineno)
        t = require_int(rec, "t_ns", path, lineno) + clock_offset_ns
        if prev_t is not None and t <= prev_t:
            raise NonMonotonicTimestamps(f"frame t_ns={t - clock_offset_ns} not increasing", path, lineno)
        prev_t = t
        boxes = []
        for b in rec["boxes"]:
            require(b, ("object_id", "x0", "y0", "x1", "y1"), path, lineno)
            oid = b["object_id"]
            if oid not in known:
                raise UnknownCategoryId(f"object_id {oid} is not declared", path, lineno)
            x0, y0, x1, y1 = (float(b[k]) for k in ("x0", "y0", "x1", "y1"))
            if not (x0 < x1 and y0 < y1):
                raise DegenerateBox(f"box of object {oid} is degenerate", path, lineno)
            boxes.append((oid, x0, y0, x1, y1))
        frames[fidx] = (t, boxes)
    return make_box_source(frames, meta, priority)


@dataclass(frozen=True)
class FixationAssignment:
    fix_idx: int
    start_ns: int
    end_ns: int
    object_id: int
    category: str
    support: float
    n_votes: int = 0

    @property
    def duration_s(self) -> float:
        return (self.end_ns - self.start_ns) / 1e9

    def to_record(self) -> dict:
        return {
            "fix_idx": self.fix_idx,
            "start_ns": self.start_ns,
            "end_ns": self.end_ns,
            "object_id": self.object_id,
            "category": self.category,
            "support": self.support,
            "n_votes": self.n_votes,
        }


def _category(object_id: int, category_map: Mapping[int, str]) -> str:
    return "unknown" if object_id == 0 else category_map.get(object_id, "unknown")


def pick_mode(votes: Mapping[int, int], category_map, priority=DEFAULT_PRIORITY) -> int:
    """Most frequent label; ties go to the higher-priority category, then the lower id."""
    crank = {c: i for i, c in enumerate(priority)}

    def key(oid):
        return (-votes[oid], crank.get(_category(oid, category_map), len(crank)), oid)

    return min(votes, key=key)


def assign_fixation(
    fix: EyeMovementEvent,
    labels,
    framed_gaze: FramedGaze,
    category_map: Mapping[int, str],
    priority: Sequence[str] = DEFAULT_PRIORITY,
    fix_idx: int = 0,
) -> FixationAssignment:
    lo = int(np.searchsorted(framed_gaze.t_ns, fix.start_ns, side="left"))
    hi = int(np.searchsorted(framed_gaze.t_ns, fix.end_ns, side="right"))
    votes: Counter = Counter()
    for k in range(lo, hi):
        if framed_gaze.sample_idx[k] < 0:
            continue
        try:
            oid = labels.label_at(framed_gaze.frame_idx[k], (framed_gaze.x[k], framed_gaze.y[k]))
        except (FrameMissing, PointOutOfBounds):
            oid = 0
        votes[oid] += 1
    if not votes:
        return FixationAssignment(fix_idx, fix.start_ns, fix.end_ns, 0, "unknown", 1.0, 0)
    oid = pick_mode(votes, category_map, priority)
    n = sum(votes.values())
    return FixationAssignment(
        fix_idx, fix.start_ns, fix.end_ns, oid, _category(oid, category_map), votes[oid] / n, n
    )


def assign_all(
    timeline: EventTimeline | None,
    labels,
    framed_gaze: FramedGaze,
    category_map: Mapping[int, str],
    priority: Sequence[str] = DEFAULT_PRIORITY,
) -> list[FixationAssignment]:
    return [
        assign_fixation(f, labels, framed_gaze, category_map, priority, i)
        for i, f in enumerate(fixations_of(timeline))
    ]


def write_assignments(assignments, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for a in assignments:
            fh.write(json.dumps(a.to_record()) + "\n")


def read_assignments(path) -> list[FixationAssignment]:
    out = []
    for _, r in iter_jsonl(path):
        out.append(
            FixationAssignment(
                r["fix_idx"], r["start_ns"], r["end_ns"], r["object_id"], r["category"], r["support"], r.get("n_votes", 0)
            )
        )
    return out


__all__ = [
    "LabelMapSequence",
    "BoxTrackLabelSource",
    "FixationAssignment",
    "load_label_maps",
    "load_box_tracks",
    "make_box_source",
    "render_boxes",
    "encode_rows",
    "assign_fixation",
    "assign_all",
    "pick_mode",
]
