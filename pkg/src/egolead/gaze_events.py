"""Fixation / saccade / other segmentation of a gaze track.

The classifier is a velocity-threshold scheme with an adaptive threshold
(median + k * MAD of the inter-sample speed). Speeds are evaluated on the
intervals between consecutive samples rather than at the samples: with
low-rate trackers (10 Hz) a saccade typically falls entirely between two
samples, and interval speeds place its boundaries at those two sample times
instead of smearing it over both neighbours.

Events are half-open ``[start_ns, end_ns)`` and tile the track span; the last
event also contains its end point.
"""

from __future__ import annotations

import enum
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import savgol_filter

from .errors import AllInvalid, TooFewSamples
from .ingest import MS, GazeTrack

log = logging.getLogger(__name__)


class EventKind(enum.IntEnum):
    OTHER = 0
    FIXATION = 1
    SACCADE = 2


@dataclass(frozen=True)
class ClassifierParams:
    """Tunable parameters of :func:`classify_events`.

    Speeds and thresholds are in px/s, or deg/s when ``px_per_degree`` is
    given (the merge radius is then 1 degree instead of ``merge_radius_px``).

    ``smoothing_max_span_ms`` disables Savitzky-Golay smoothing when the
    filter window would span longer than that (e.g. 7 samples at 10 Hz cover
    600 ms, enough to swallow whole saccades). ``min_threshold`` floors the
    adaptive threshold so noise-free input does not collapse it to zero.
    """

    smoothing_window_samples: int = 7
    smoothing_poly_order: int = 2
    velocity_threshold_mode: str = "adaptive"
    fixed_threshold_px_s: float = 1000.0
    adaptive_k: float = 5.0
    min_fixation_ms: float = 100.0
    max_saccade_ms: float = 200.0
    max_gap_ms: float = 75.0
    px_per_degree: float | None = None
    merge_fixations: bool = True
    merge_radius_px: float = 30.0
    min_threshold: float = 1.0
    smoothing_max_span_ms: float | None = 50.0

    def __post_init__(self):
        w, p = self.smoothing_window_samples, self.smoothing_poly_order
        if w % 2 != 1 or w < 1:
            raise ValueError("smoothing_window_samples must be a positive odd integer")
        if p < 0 or w < p + 2:
            raise ValueError("smoothing_window_samples must be >= smoothing_poly_order + 2")
        if self.velocity_threshold_mode not in ("fixed", "adaptive"):
            raise ValueError("velocity_threshold_mode must be 'fixed' or 'adaptive'")
        if not self.min_fixation_ms > 0:
            raise ValueError("min_fixation_ms must be positive")
        if self.px_per_degree is not None and not self.px_per_degree > 0:
            raise ValueError("px_per_degree must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ClassifierParams":
        return cls(**d)


@dataclass(frozen=True)
class EyeMovementEvent:
    start_ns: int
    end_ns: int
    kind: EventKind
    peak_velocity: float
    mean_position: tuple[float, float]

    def __post_init__(self):
        if not self.start_ns < self.end_ns:
            raise ValueError(f"event must have start_ns < end_ns ({self.start_ns}, {self.end_ns})")
        object.__setattr__(self, "kind", EventKind(self.kind))

    @property
    def duration_ns(self) -> int:
        return self.end_ns - self.start_ns

    def to_record(self) -> dict:
        return {
            "start_ns": self.start_ns,
            "end_ns": self.end_ns,
            "kind": int(self.kind),
            "peak_velocity": _jsonable(self.peak_velocity),
            "mean_x": _jsonable(self.mean_position[0]),
            "mean_y": _jsonable(self.mean_position[1]),
        }

    @classmethod
    def from_record(cls, r: dict) -> "EyeMovementEvent":
        return cls(
            r["start_ns"],
            r["end_ns"],
            EventKind(r["kind"]),
            _unjson(r["peak_velocity"]),
            (_unjson(r["mean_x"]), _unjson(r["mean_y"])),
        )


def _jsonable(v: float):
    return None if v is None or not np.isfinite(v) else round(float(v), 6)


def _unjson(v):
    return float("nan") if v is None else float(v)


@dataclass(frozen=True)
class EventTimeline:
    wearer_id: str
    events: tuple[EyeMovementEvent, ...]
    params_used: ClassifierParams = field(default_factory=ClassifierParams)
    threshold: float | None = None

    def __len__(self):
        return len(self.events)

    def event_at(self, t_ns: int) -> EyeMovementEvent | None:
        ev = self.events
        if not ev or t_ns < ev[0].start_ns or t_ns > ev[-1].end_ns:
            return None
        starts = [e.start_ns for e in ev]
        k = int(np.searchsorted(starts, t_ns, side="right")) - 1
        return ev[k]

    def kinds(self) -> list[int]:
        return [int(e.kind) for e in self.events]


def fixations_of(timeline: EventTimeline | None) -> list[EyeMovementEvent]:
    if timeline is None:
        return []
    return [e for e in timeline.events if e.kind == EventKind.FIXATION]


def _valid_runs(valid: np.ndarray) -> list[tuple[int, int]]:
    """Return ``[start, stop)`` index ranges of consecutive valid samples."""
    v = np.concatenate(([False], valid, [False])).astype(np.int8)
    d = np.diff(v)
    return list(zip(np.nonzero(d == 1)[0], np.nonzero(d == -1)[0]))


def smooth_gaze(track: GazeTrack, params: ClassifierParams = ClassifierParams()) -> GazeTrack:
    """Savitzky-Golay smoothing of x and y, applied separately on each valid run.

    Invalid samples break runs; runs shorter than the window are left as is.
    Timestamps are unchanged.
    """
    w, p = params.smoothing_window_samples, params.smoothing_poly_order
    if track.n_valid < w:
        raise TooFewSamples(f"need at least {w} valid samples, got {track.n_valid}")
    x = track.x.copy()
    y = track.y.copy()
    for a, b in _valid_runs(track.valid):
        if b - a < w:
            continue
        x[a:b] = savgol_filter(track.x[a:b], w, p)
        y[a:b] = savgol_filter(track.y[a:b], w, p)
    return track.with_positions(x, y)


def _diff(v: np.ndarray, t: np.ndarray) -> np.ndarray:
    d = np.empty_like(v)
    d[1:-1] = (v[2:] - v[:-2]) / (t[2:] - t[:-2])
    d[0] = (v[1] - v[0]) / (t[1] - t[0])
    d[-1] = (v[-1] - v[-2]) / (t[-1] - t[-2])
    return d


def compute_velocity(track: GazeTrack, px_per_degree: float | None = None) -> np.ndarray:
    """Per-sample gaze speed.

    Central differences inside each valid run, one-sided differences at the
    run edges; NaN for invalid samples and for runs of a single sample.
    Units are px/s, or deg/s when ``px_per_degree`` is given.
    """
    if track.n_valid < 2:
        raise TooFewSamples(f"need at least 2 valid samples, got {track.n_valid}")
    t = track.t_ns.astype(float) / 1e9
    speed = np.full(len(track), np.nan)
    for a, b in _valid_runs(track.valid):
        if b - a < 2:
            continue
        speed[a:b] = np.hypot(_diff(track.x[a:b], t[a:b]), _diff(track.y[a:b], t[a:b]))
    if px_per_degree:
        speed /= px_per_degree
    return speed


def interval_speed(track: GazeTrack, px_per_degree: float | None = None) -> np.ndarray:
    """Speed over each inter-sample interval ``[t_j, t_j+1]``; NaN if either end is invalid."""
    dt = np.diff(track.t_ns).astype(float) / 1e9
    v = np.hypot(np.diff(track.x), np.diff(track.y)) / dt
    v[~(track.valid[:-1] & track.valid[1:])] = np.nan
    if px_per_degree:
        v /= px_per_degree
    return v


def velocity_threshold(speeds: np.ndarray, params: ClassifierParams) -> float:
    if params.velocity_threshold_mode == "fixed":
        return float(params.fixed_threshold_px_s)
    s = speeds[np.isfinite(speeds)]
    med = float(np.median(s))
    mad = float(np.median(np.abs(s - med)))
    return max(med + params.adaptive_k * mad, params.min_threshold)


def _runs(labels: np.ndarray) -> list[list[int]]:
    """Collapse per-interval labels into ``[kind, first_interval, last_interval]`` runs."""
    edges = np.nonzero(np.diff(labels))[0]
    starts = np.concatenate(([0], edges + 1))
    ends = np.concatenate((edges, [len(labels) - 1]))
    return [[int(labels[s]), int(s), int(e)] for s, e in zip(starts, ends)]


def classify_events(track: GazeTrack, params: ClassifierParams = ClassifierParams()) -> EventTimeline:
    """Segment ``track`` into an ordered, gap-free timeline of eye-movement events."""
    if len(track) and track.n_valid == 0:
        raise AllInvalid(f"gaze track of {track.wearer_id!r} has no valid samples")
    if len(track) < 2 or track.n_valid < 2:
        raise TooFewSamples("need at least 2 valid samples to classify")

    t = track.t_ns
    period_ns = float(np.median(np.diff(t)))
    work = track
    span_ms = (params.smoothing_window_samples - 1) * period_ns / MS
    if (
        params.smoothing_window_samples > 1
        and (params.smoothing_max_span_ms is None or span_ms <= params.smoothing_max_span_ms)
        and track.n_valid >= params.smoothing_window_samples
    ):
        work = smooth_gaze(track, params)
    else:
        log.debug("smoothing skipped for %s (window spans %.0f ms)", track.wearer_id, span_ms)

    speed = interval_speed(work, params.px_per_degree)
    if not np.isfinite(speed).any():
        raise TooFewSamples("no pair of consecutive valid samples")
    thr = velocity_threshold(speed, params)

    labels = np.zeros(len(speed), dtype=np.int8)
    finite = np.isfinite(speed)
    labels[finite & (speed <= thr)] = EventKind.FIXATION
    labels[finite & (speed > thr)] = EventKind.SACCADE
    segs = _runs(labels)

    def mean_pos(a, b):
        # samples a..b+1 are the endpoints of intervals a..b
        sl = slice(a, b + 2)
        ok = work.valid[sl]
        if not ok.any():
            return (float("nan"), float("nan"))
        return (float(work.x[sl][ok].mean()), float(work.y[sl][ok].mean()))

    if params.merge_fixations:
        radius = params.merge_radius_px if params.px_per_degree is None else params.px_per_degree
        gap_ns = max(params.max_gap_ms * MS, period_ns)
        merged: list[list[int]] = []
        i = 0
        while i < len(segs):
            seg = segs[i]
            if seg[0] != EventKind.FIXATION or not merged:
                merged.append(seg)
                i += 1
                continue
            # look back for a fixation separated only by a short gap
            k = len(merged) - 1
            while k >= 0 and merged[k][0] != EventKind.FIXATION:
                k -= 1
            if k >= 0 and t[seg[1]] - t[merged[k][2] + 1] <= gap_ns:
                pa = mean_pos(merged[k][1], merged[k][2])
                pb = mean_pos(seg[1], seg[2])
                if np.hypot(pa[0] - pb[0], pa[1] - pb[1]) <= radius:
                    merged[k][2] = seg[2]
                    del merged[k + 1 :]
                    i += 1
                    continue
            merged.append(seg)
            i += 1
        segs = merged

    for seg in segs:
        dur_ms = (t[seg[2] + 1] - t[seg[1]]) / MS
        if seg[0] == EventKind.FIXATION and dur_ms < params.min_fixation_ms:
            seg[0] = EventKind.OTHER
        elif seg[0] == EventKind.SACCADE and dur_ms > params.max_saccade_ms:
            seg[0] = EventKind.OTHER

    coalesced: list[list[int]] = []
    for seg in segs:
        if coalesced and coalesced[-1][0] == seg[0] == EventKind.OTHER:
            coalesced[-1][2] = seg[2]
        else:
            coalesced.append(seg)

    events = []
    for kind, a, b in coalesced:
        sp = speed[a : b + 1]
        peak = float(np.nanmax(sp)) if np.isfinite(sp).any() else float("nan")
        events.append(EyeMovementEvent(int(t[a]), int(t[b + 1]), EventKind(kind), peak, mean_pos(a, b)))
    return EventTimeline(track.wearer_id, tuple(events), params, thr)


def write_timeline(timeline: EventTimeline, path) -> None:
    """Write events as JSON Lines plus a ``.params.json`` sidecar."""
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        for e in timeline.events:
            fh.write(json.dumps(e.to_record()) + "\n")
    sidecar = {
        "wearer_id": timeline.wearer_id,
        "threshold": _jsonable(timeline.threshold) if timeline.threshold is not None else None,
        "params": timeline.params_used.to_dict(),
    }
    path.with_suffix(".params.json").write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")


def read_timeline(path) -> EventTimeline:
    path = Path(path)
    side = json.loads(path.with_suffix(".params.json").read_text())
    events = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                events.append(EyeMovementEvent.from_record(json.loads(line)))
    return EventTimeline(
        side["wearer_id"], tuple(events), ClassifierParams.from_dict(side["params"]), side["threshold"]
    )
