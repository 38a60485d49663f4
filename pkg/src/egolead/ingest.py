"""Session manifest and gaze stream loading, plus the shared session timebase.

All timestamps inside the engine are signed 64-bit integer nanoseconds on the
session clock. Input files carry device-clock times; a wearer's constant
``clock_offset_ns`` maps them with ``t_session = t_device + clock_offset_ns``.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator, Mapping

import numpy as np

from .errors import (
    BadCategoryMap,
    BadRecord,
    DuplicateWearer,
    EmptyStream,
    MissingField,
    NonMonotonicTimestamps,
)

CATEGORIES = ("patient", "member", "screen", "device", "unknown")
# names an object id may map to; "unknown" is reserved for background
OBJECT_CATEGORIES = CATEGORIES[:-1]
ROLES = ("leader", "member")

MS = 1_000_000
DEFAULT_ALIGN_TOLERANCE_NS = 60 * MS

_MANIFEST_KEYS = {"session_id", "epoch_ns", "leader_id", "category_map", "wearers"}
_MANIFEST_OPTIONAL = {"notes", "human_scores"}
_WEARER_KEYS = {"wearer_id", "role", "clock_offset_ns", "gaze"}
_WEARER_OPTIONAL = {"labelmaps", "facetracks", "transcript", "stream"}


@dataclass(frozen=True)
class StreamMeta:
    width: int
    height: int
    nominal_rate_hz: float = 10.0
    frame_count: int = 0
    frame_rate_hz: float = 30.0

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError("stream width and height must be positive")
        if not self.nominal_rate_hz > 0 or not self.frame_rate_hz > 0:
            raise ValueError("stream rates must be positive")

    def to_dict(self) -> dict:
        return {
            "width": self.width,
            "height": self.height,
            "rate_hz": self.nominal_rate_hz,
            "frame_rate_hz": self.frame_rate_hz,
            "frame_count": self.frame_count,
        }


@dataclass(frozen=True)
class WearerEntry:
    wearer_id: str
    role: str
    clock_offset_ns: int
    gaze_path: str
    labelmap_path: str | None = None
    facetrack_path: str | None = None
    transcript_path: str | None = None
    stream: StreamMeta | None = None


@dataclass(frozen=True)
class SessionManifest:
    session_id: str
    wearers: tuple[WearerEntry, ...]
    leader_id: str
    category_map: Mapping[int, str]
    epoch_ns: int = 0
    notes: str = ""
    human_scores: Mapping | None = None
    base_dir: Path = field(default=Path("."), compare=False)

    def wearer(self, wearer_id: str) -> WearerEntry:
        for w in self.wearers:
            if w.wearer_id == wearer_id:
                return w
        raise KeyError(wearer_id)

    @property
    def leader(self) -> WearerEntry:
        return self.wearer(self.leader_id)

    @property
    def members(self) -> list[WearerEntry]:
        return [w for w in self.wearers if w.wearer_id != self.leader_id]

    @property
    def n_objects(self) -> int:
        return max(self.category_map, default=0)

    def resolve(self, rel: str | None) -> Path | None:
        if rel is None:
            return None
        p = Path(rel)
        return p if p.is_absolute() else self.base_dir / p

    def category_of(self, object_id: int) -> str:
        if object_id == 0:
            return "unknown"
        return self.category_map.get(object_id, "unknown")


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _parse_stream(d, path, key) -> StreamMeta:
    if not isinstance(d, dict):
        raise BadRecord(f"{key} must be an object", path)
    for k in ("width", "height"):
        if k not in d:
            raise MissingField(f"missing field {key}.{k}", path)
    try:
        return StreamMeta(
            width=int(d["width"]),
            height=int(d["height"]),
            nominal_rate_hz=float(d.get("rate_hz", 10.0)),
            frame_count=int(d.get("frame_count", 0)),
            frame_rate_hz=float(d.get("frame_rate_hz", 30.0)),
        )
    except (TypeError, ValueError) as exc:
        raise BadRecord(f"{key}: {exc}", path) from None


def manifest_from_dict(d: dict, base_dir=".", path=None) -> SessionManifest:
    """Validate a decoded manifest document and build a :class:`SessionManifest`."""
    if not isinstance(d, dict):
        raise BadRecord("manifest must be a JSON object", path)
    for k in sorted(_MANIFEST_KEYS):
        if k not in d:
            raise MissingField(f"missing field {k!r}", path)
    extra = set(d) - _MANIFEST_KEYS - _MANIFEST_OPTIONAL
    if extra:
        raise BadRecord(f"unexpected manifest keys {sorted(extra)}", path)
    if not _is_int(d["epoch_ns"]):
        raise BadRecord("epoch_ns must be an integer", path)

    cmap: dict[int, str] = {}
    if not isinstance(d["category_map"], dict):
        raise BadCategoryMap("category_map must be an object", path)
    for key, name in d["category_map"].items():
        try:
            oid = int(key)
        except ValueError:
            raise BadCategoryMap(f"category_map key {key!r} is not an integer", path) from None
        if oid < 1:
            raise BadCategoryMap(f"category_map key {key!r}: object ids start at 1", path)
        if oid in cmap:
            raise BadCategoryMap(f"category_map key {key!r} repeated", path)
        if name not in OBJECT_CATEGORIES:
            raise BadCategoryMap(
                f"category_map key {key!r}: {name!r} not in {list(OBJECT_CATEGORIES)}", path
            )
        cmap[oid] = name

    if not isinstance(d["wearers"], list) or not d["wearers"]:
        raise MissingField("wearers must be a non-empty array", path)
    wearers = []
    seen: set[str] = set()
    for i, w in enumerate(d["wearers"]):
        if not isinstance(w, dict):
            raise BadRecord(f"wearers[{i}] must be an object", path)
        for k in sorted(_WEARER_KEYS):
            if k not in w:
                raise MissingField(f"missing field wearers[{i}].{k}", path)
        extra = set(w) - _WEARER_KEYS - _WEARER_OPTIONAL
        if extra:
            raise BadRecord(f"unexpected keys in wearers[{i}]: {sorted(extra)}", path)
        wid = w["wearer_id"]
        if not isinstance(wid, str) or not wid:
            raise BadRecord(f"wearers[{i}].wearer_id must be a non-empty string", path)
        if wid in seen:
            raise DuplicateWearer(f"wearer_id {wid!r} appears more than once", path)
        seen.add(wid)
        if w["role"] not in ROLES:
            raise BadRecord(f"wearers[{i}].role must be one of {list(ROLES)}", path)
        if not _is_int(w["clock_offset_ns"]):
            raise BadRecord(f"wearers[{i}].clock_offset_ns must be an integer", path)
        files = [w.get(k) for k in ("gaze", "labelmaps", "facetracks", "transcript")]
        if not isinstance(files[0], str):
            raise MissingField(f"wearers[{i}].gaze must name a file", path)
        named = [f for f in files if f is not None]
        if len(set(named)) != len(named):
            raise BadRecord(f"wearers[{i}] references the same file twice", path)
        stream = w.get("stream")
        wearers.append(
            WearerEntry(
                wearer_id=wid,
                role=w["role"],
                clock_offset_ns=w["clock_offset_ns"],
                gaze_path=files[0],
                labelmap_path=files[1],
                facetrack_path=files[2],
                transcript_path=files[3],
                stream=None if stream is None else _parse_stream(stream, path, f"wearers[{i}].stream"),
            )
        )

    leader_id = d["leader_id"]
    if leader_id not in seen:
        raise MissingField(f"leader_id {leader_id!r} is not a declared wearer", path)
    leaders = [w.wearer_id for w in wearers if w.role == "leader"]
    if leaders != [leader_id]:
        raise BadRecord(f"exactly one wearer must have role 'leader' (the leader_id); got {leaders}", path)

    return SessionManifest(
        session_id=str(d["session_id"]),
        wearers=tuple(wearers),
        leader_id=leader_id,
        category_map=cmap,
        epoch_ns=d["epoch_ns"],
        notes=d.get("notes", ""),
        human_scores=d.get("human_scores"),
        base_dir=Path(base_dir),
    )


def manifest_to_dict(m: SessionManifest) -> dict:
    out = {
        "session_id": m.session_id,
        "epoch_ns": m.epoch_ns,
        "leader_id": m.leader_id,
        "category_map": {str(k): v for k, v in sorted(m.category_map.items())},
        "wearers": [],
    }
    for w in m.wearers:
        entry = {
            "wearer_id": w.wearer_id,
            "role": w.role,
            "clock_offset_ns": w.clock_offset_ns,
            "gaze": w.gaze_path,
            "labelmaps": w.labelmap_path,
            "facetracks": w.facetrack_path,
            "transcript": w.transcript_path,
        }
        if w.stream is not None:
            entry["stream"] = w.stream.to_dict()
        out["wearers"].append(entry)
    if m.notes:
        out["notes"] = m.notes
    if m.human_scores is not None:
        out["human_scores"] = m.human_scores
    return out


def parse_manifest(path) -> SessionManifest:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise BadRecord(f"invalid JSON: {exc.msg}", path, exc.lineno) from None
    return manifest_from_dict(doc, base_dir=path.parent, path=path)


def iter_jsonl(path) -> Iterator[tuple[int, dict]]:
    """Yield ``(line_number, record)`` for each non-blank line of a JSON Lines file."""
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise BadRecord(f"invalid JSON: {exc.msg}", path, lineno) from None
            if not isinstance(rec, dict):
                raise BadRecord("record must be a JSON object", path, lineno)
            yield lineno, rec


def require(rec: dict, keys, path, lineno):
    for k in keys:
        if k not in rec:
            raise BadRecord(f"missing field {k!r}", path, lineno)


def require_int(rec: dict, key, path, lineno) -> int:
    v = rec.get(key)
    if not _is_int(v):
        raise BadRecord(f"{key!r} must be an integer", path, lineno)
    return v


@dataclass(frozen=True, eq=False)
class GazeTrack:
    """Gaze samples of one wearer on the session clock.

    Arrays are parallel and read-only. ``valid`` is False for samples whose
    position is missing or falls outside the ``meta`` frame; such samples are
    kept so that downstream code sees the gap.
    """

    wearer_id: str
    t_ns: np.ndarray
    x: np.ndarray
    y: np.ndarray
    conf: np.ndarray
    valid: np.ndarray
    meta: StreamMeta
    lines: np.ndarray | None = None

    def __post_init__(self):
        for name in ("t_ns", "x", "y", "conf", "valid"):
            getattr(self, name).setflags(write=False)

    def __len__(self) -> int:
        return len(self.t_ns)

    @property
    def span_ns(self) -> int:
        return int(self.t_ns[-1] - self.t_ns[0]) if len(self) else 0

    @property
    def n_valid(self) -> int:
        return int(self.valid.sum())

    def shifted(self, delta_ns: int) -> "GazeTrack":
        return replace(self, t_ns=self.t_ns + np.int64(delta_ns))

    def with_positions(self, x, y) -> "GazeTrack":
        return replace(self, x=np.asarray(x, float), y=np.asarray(y, float))


def make_gaze_track(wearer_id, t_ns, x, y, meta: StreamMeta, conf=None, lines=None) -> GazeTrack:
    """Build a track from arrays, sorting by time and flagging out-of-frame samples."""
    t = np.asarray(t_ns, dtype=np.int64)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    c = np.full(len(t), np.nan) if conf is None else np.asarray(conf, dtype=float)
    if len(t) == 0:
        raise EmptyStream(f"gaze stream of {wearer_id!r} has no samples")
    order = np.argsort(t, kind="stable")
    t, x, y, c = t[order], x[order], y[order], c[order]
    ln = None if lines is None else np.asarray(lines)[order]
    dup = np.nonzero(np.diff(t) <= 0)[0]
    if len(dup):
        j = dup[0] + 1
        raise NonMonotonicTimestamps(
            f"duplicate timestamp t_ns={int(t[j])}", None, None if ln is None else int(ln[j])
        )
    with np.errstate(invalid="ignore"):
        valid = (
            np.isfinite(x)
            & np.isfinite(y)
            & (x >= 0)
            & (x <= meta.width)
            & (y >= 0)
            & (y <= meta.height)
        )
    return GazeTrack(wearer_id, t, x, y, c, valid, meta, ln)


def _num(v, key, path, lineno):
    if v is None or v == "":
        return math.nan
    if isinstance(v, bool):
        raise BadRecord(f"{key!r} must be a number", path, lineno)
    try:
        return float(v)
    except (TypeError, ValueError):
        raise BadRecord(f"{key!r} must be a number", path, lineno) from None


def _read_gaze_rows(path: Path):
    if path.suffix.lower() == ".csv":
        with open(path, encoding="utf-8", newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or not {"t_ns", "x", "y"} <= set(reader.fieldnames):
                raise BadRecord("CSV header must contain t_ns,x,y[,conf]", path, 1)
            for row in reader:
                try:
                    row["t_ns"] = int(row["t_ns"])
                except (TypeError, ValueError):
                    raise BadRecord("'t_ns' must be an integer", path, reader.line_num) from None
                yield reader.line_num, row
    else:
        yield from iter_jsonl(path)


def load_gaze_track(path, meta: StreamMeta, clock_offset_ns: int = 0, wearer_id: str = "") -> GazeTrack:
    """Read a gaze stream (JSON Lines or CSV) and shift it onto the session clock."""
    path = Path(path)
    ts, xs, ys, cs, lines = [], [], [], [], []
    for lineno, rec in _read_gaze_rows(path):
        require(rec, ("t_ns", "x", "y"), path, lineno)
        ts.append(require_int(rec, "t_ns", path, lineno))
        xs.append(_num(rec["x"], "x", path, lineno))
        ys.append(_num(rec["y"], "y", path, lineno))
        c = _num(rec.get("conf"), "conf", path, lineno)
        if not math.isnan(c) and not 0.0 <= c <= 1.0:
            raise BadRecord("'conf' must lie in [0, 1]", path, lineno)
        cs.append(c)
        lines.append(lineno)
    if not ts:
        raise EmptyStream("gaze stream has no samples", path)
    t = np.asarray(ts, dtype=np.int64) + np.int64(clock_offset_ns)
    try:
        return make_gaze_track(wearer_id, t, xs, ys, meta, cs, lines)
    except NonMonotonicTimestamps as exc:
        raise NonMonotonicTimestamps(exc.message, path, exc.line) from None


@dataclass(frozen=True, eq=False)
class FramedGaze:
    """Gaze resampled onto a video frame timeline.

    ``sample_idx[k]`` is the index into the source track of the sample serving
    frame ``k``, or -1 when no valid sample lies within tolerance.
    """

    frame_idx: np.ndarray
    t_ns: np.ndarray
    sample_idx: np.ndarray
    x: np.ndarray
    y: np.ndarray

    def __len__(self) -> int:
        return len(self.t_ns)

    @property
    def present(self) -> np.ndarray:
        return self.sample_idx >= 0

    def index_of_frame(self) -> dict[int, int]:
        return {int(f): k for k, f in enumerate(self.frame_idx)}


def align_to_frames(
    track: GazeTrack,
    frame_times,
    tolerance_ns: int = DEFAULT_ALIGN_TOLERANCE_NS,
    frame_idx=None,
) -> FramedGaze:
    """Assign each frame the nearest-in-time valid gaze sample within tolerance.

    Ties between an earlier and a later sample go to the earlier one. No
    interpolation is done; a sample may serve several frames.
    """
    ft = np.asarray(frame_times, dtype=np.int64)
    if len(ft) > 1 and np.any(np.diff(ft) <= 0):
        raise ValueError("frame_times must be strictly increasing")
    fidx = np.arange(len(ft)) if frame_idx is None else np.asarray(frame_idx, dtype=np.int64)

    vidx = np.nonzero(track.valid)[0]
    out = np.full(len(ft), -1, dtype=np.int64)
    if len(vidx) and len(ft):
        vt = track.t_ns[vidx]
        pos = np.searchsorted(vt, ft)
        left = np.clip(pos - 1, 0, len(vt) - 1)
        right = np.clip(pos, 0, len(vt) - 1)
        dl = np.abs(ft - vt[left])
        dr = np.abs(vt[right] - ft)
        pick = np.where(dr < dl, right, left)
        dist = np.minimum(dl, dr)
        ok = dist <= tolerance_ns
        out[ok] = vidx[pick[ok]]

    x = np.full(len(ft), np.nan)
    y = np.full(len(ft), np.nan)
    has = out >= 0
    x[has] = track.x[out[has]]
    y[has] = track.y[out[has]]
    return FramedGaze(fidx, ft, out, x, y)
