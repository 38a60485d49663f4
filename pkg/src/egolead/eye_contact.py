"""Mutual eye contact between the leader and each team member.

An instant counts as eye contact when the leader's gaze falls inside the
member's face box in the leader's video *and* the member's gaze falls inside
the leader's face box in the member's video. Face boxes must already carry
the identity of the person (``person_id`` = wearer id); nothing here
re-identifies faces.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import (
    BadRecord,
    DegenerateBox,
    DuplicateFaceBox,
    MissingFaceTracks,
    NonMonotonicTimestamps,
)
from .ingest import MS, FramedGaze, iter_jsonl, require, require_int


@dataclass(frozen=True)
class EyeContactParams:
    margin_px: float = 0.0
    pairing_tolerance_ms: float = 60.0
    max_gap_ms: float = 100.0
    min_duration_ms: float = 100.0

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True, eq=False)
class FaceTrackSet:
    """Identified face boxes seen in one wearer's video, keyed by frame index."""

    video_owner: str
    frames: Mapping[int, tuple[int, dict]]  # frame_idx -> (t_ns, {person_id: (x0, y0, x1, y1, conf)})

    def frame_times(self) -> tuple[np.ndarray, np.ndarray]:
        idx = np.fromiter(self.frames, dtype=np.int64, count=len(self.frames))
        t = np.fromiter((v[0] for v in self.frames.values()), dtype=np.int64, count=len(self.frames))
        return idx, t

    def box(self, frame_idx: int, person_id: str):
        entry = self.frames.get(int(frame_idx))
        if entry is None:
            return None
        return entry[1].get(person_id)


@dataclass(frozen=True)
class EyeContactEvent:
    leader: str
    member: str
    start_ns: int
    end_ns: int
    frame_count: int

    def __post_init__(self):
        if self.start_ns > self.end_ns or self.frame_count < 1:
            raise ValueError("eye-contact event needs start <= end and frame_count >= 1")

    @property
    def dyad(self) -> tuple[str, str]:
        return (self.leader, self.member)

    def to_record(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class EyeContactSummary:
    per_dyad: dict[str, int]
    total: int
    events: tuple[EyeContactEvent, ...] = ()
    instants_per_dyad: dict[str, int] = field(default_factory=dict)


def load_face_tracks(path, video_owner: str, clock_offset_ns: int = 0) -> FaceTrackSet:
    path = Path(path)
    frames = {}
    prev_t = None
    for lineno, rec in iter_jsonl(path):
        require(rec, ("frame_idx", "t_ns", "boxes"), path, lineno)
        fidx = require_int(rec, "frame_idx", path, lineno)
        t = require_int(rec, "t_ns", path, lineno) + clock_offset_ns
        if prev_t is not None and t <= prev_t:
            raise NonMonotonicTimestamps(f"frame t_ns={t - clock_offset_ns} not increasing", path, lineno)
        if fidx in frames:
            raise BadRecord(f"frame_idx {fidx} repeated", path, lineno)
        prev_t = t
        if not isinstance(rec["boxes"], list):
            raise BadRecord("'boxes' must be an array", path, lineno)
        boxes = {}
        for b in rec["boxes"]:
            require(b, ("person_id", "x0", "y0", "x1", "y1"), path, lineno)
            pid = b["person_id"]
            if pid in boxes:
                raise DuplicateFaceBox(f"two boxes for person {pid!r}", path, lineno)
            try:
                x0, y0, x1, y1 = (float(b[k]) for k in ("x0", "y0", "x1", "y1"))
            except (TypeError, ValueError):
                raise BadRecord("box coordinates must be numbers", path, lineno) from None
            if not (x0 < x1 and y0 < y1):
                raise DegenerateBox(f"face box of {pid!r} is degenerate", path, lineno)
            boxes[pid] = (x0, y0, x1, y1, float(b.get("conf", 1.0)))
        frames[fidx] = (t, boxes)
    return FaceTrackSet(video_owner, frames)


def gaze_in_box(point, bbox, margin_px: float = 0.0) -> bool:
    """Closed-interval containment of ``point`` in ``bbox`` grown by ``margin_px``."""
    x, y = point
    x0, y0, x1, y1 = bbox[:4]
    return (x0 - margin_px <= x <= x1 + margin_px) and (y0 - margin_px <= y <= y1 + margin_px)


def _looks_at(framed: FramedGaze, faces: FaceTrackSet, target: str, margin_px: float) -> np.ndarray:
    """Per framed frame: True iff the wearer's gaze lies in ``target``'s face box."""
    hit = np.zeros(len(framed), dtype=bool)
    for k in np.nonzero(framed.present)[0]:
        b = faces.box(framed.frame_idx[k], target)
        if b is not None and gaze_in_box((framed.x[k], framed.y[k]), b, margin_px):
            hit[k] = True
    return hit


def mutual_gaze_frames(
    leader_id: str,
    leader_framed: FramedGaze,
    leader_faces: FaceTrackSet,
    member_id: str,
    member_framed: FramedGaze,
    member_faces: FaceTrackSet,
    margin_px: float = 0.0,
    tolerance_ns: int = 60 * MS,
) -> np.ndarray:
    """Session times (leader frame clock) of instants with mutual eye contact.

    Each leader frame is paired with the nearest member frame within
    ``tolerance_ns``; an unpaired frame, missing gaze or missing box is a 0.
    """
    lead = _looks_at(leader_framed, leader_faces, member_id, margin_px)
    memb = _looks_at(member_framed, member_faces, leader_id, margin_px)
    mt = member_framed.t_ns
    if len(mt) == 0:
        return np.empty(0, dtype=np.int64)
    lt = leader_framed.t_ns
    pos = np.searchsorted(mt, lt)
    left = np.clip(pos - 1, 0, len(mt) - 1)
    right = np.clip(pos, 0, len(mt) - 1)
    dl = np.abs(lt - mt[left])
    dr = np.abs(mt[right] - lt)
    pair = np.where(dr < dl, right, left)
    paired = np.minimum(dl, dr) <= tolerance_ns
    ec = lead & paired & memb[pair]
    return lt[ec]


def group_events(
    instants,
    max_gap_ms: float = 100.0,
    min_duration_ms: float = 100.0,
    dyad: tuple[str, str] = ("", ""),
) -> list[EyeContactEvent]:
    """Group sorted instants into maximal runs with gaps of at most ``max_gap_ms``."""
    t = np.asarray(instants, dtype=np.int64)
    if len(t) == 0:
        return []
    breaks = np.nonzero(np.diff(t) > max_gap_ms * MS)[0]
    starts = np.concatenate(([0], breaks + 1))
    stops = np.concatenate((breaks + 1, [len(t)]))
    events = []
    for a, b in zip(starts, stops):
        if (t[b - 1] - t[a]) < min_duration_ms * MS:
            continue
        events.append(EyeContactEvent(dyad[0], dyad[1], int(t[a]), int(t[b - 1]), int(b - a)))
    return events


def count_eye_contact(
    leader_id: str,
    member_ids,
    framed: Mapping[str, FramedGaze],
    faces: Mapping[str, FaceTrackSet | None],
    params: EyeContactParams = EyeContactParams(),
) -> EyeContactSummary:
    """Eye-contact events per leader-member dyad and in total.

    ``framed[w]`` must be wearer ``w``'s gaze aligned to the frames of
    ``faces[w]``.
    """
    for wid in [leader_id, *member_ids]:
        if faces.get(wid) is None or framed.get(wid) is None:
            raise MissingFaceTracks(wid)
    per_dyad, instants, events = {}, {}, []
    for mid in member_ids:
        inst = mutual_gaze_frames(
            leader_id,
            framed[leader_id],
            faces[leader_id],
            mid,
            framed[mid],
            faces[mid],
            params.margin_px,
            int(params.pairing_tolerance_ms * MS),
        )
        ev = group_events(inst, params.max_gap_ms, params.min_duration_ms, (leader_id, mid))
        per_dyad[mid] = len(ev)
        instants[mid] = int(len(inst))
        events.extend(ev)
    return EyeContactSummary(per_dyad, sum(per_dyad.values()), tuple(events), instants)


def write_events(events, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for e in events:
            fh.write(json.dumps(e.to_record()) + "\n")


def read_events(path) -> list[EyeContactEvent]:
    return [EyeContactEvent(**r) for _, r in iter_jsonl(path)]
