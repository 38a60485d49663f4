"""Synthetic sessions with planted ground truth.

A :class:`SynthSpec` describes a static scene and, for each wearer, a script
of timed segments (fixation on a target, saccade, signal gap) that tiles the
session. :func:`generate_session` renders it into the same files the engine
ingests (manifest, gaze, label maps, face tracks, transcripts) plus a ground
truth document, and :func:`score_against_truth` measures how well an
analysis recovers that truth.

Randomness comes only from ``numpy.random.PCG64(seed)``; the same spec
always yields byte-identical files.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .conversation import CLASSES, LABELS
from .errors import InfeasibleScript, SessionMismatch
from .eye_contact import EyeContactParams
from .gaze_events import EventKind
from .ingest import CATEGORIES, MS
from .object_fixation import render_boxes
from .report import build_transition_matrix

SACCADE_MS = 40.0

DEFAULT_OBJECTS = (
    {"name": "patient", "category": "patient", "box": [160, 272, 432, 464]},
    {"name": "screen", "category": "screen", "box": [448, 16, 624, 176]},
    {"name": "device", "category": "device", "box": [448, 288, 624, 464]},
)
DEFAULT_SLOTS = ([16, 16, 144, 240], [160, 16, 288, 240], [304, 16, 432, 240])
DEFAULT_BACKGROUND = ([536, 232], [72, 360])

# sentence templates the bundled English rule set labels correctly
TEMPLATES = {
    "DO": (
        "give 5 ml adrenaline now, {name}",
        "{name}, start chest compressions",
        "check the pulse, {name}",
        "{name}, bring the defibrillator",
        "push the fluid bolus, {name}",
    ),
    "UO": (
        "someone call the anesthesiologist",
        "can anyone bring the suction",
        "we need a second line",
        "somebody check the blood gas",
        "give oxygen",
    ),
    "PL": (
        "let's prepare for intubation",
        "next we reassess the rhythm",
        "we will give a second dose in two minutes",
        "after that we start the infusion",
        "the plan is to secure the airway",
    ),
    "TA": (
        "{name}, you are in charge of the airway",
        "your job is to record the times, {name}",
        "{name}, take care of the medication",
        "you're responsible for compressions, {name}",
    ),
    "NONE": (
        "okay",
        "the heart rate is 140",
        "good",
        "blood pressure looks stable",
        "understood",
    ),
}
NAMES = ("Tanaka", "Sato", "Suzuki", "Ito", "Kato")


@dataclass(frozen=True)
class Scene:
    objects: tuple = DEFAULT_OBJECTS
    person_slots: tuple = DEFAULT_SLOTS
    background: tuple = DEFAULT_BACKGROUND

    def __post_init__(self):
        # normalise so a JSON round trip compares equal
        object.__setattr__(self, "objects", tuple({**o, "box": list(o["box"])} for o in self.objects))
        object.__setattr__(self, "person_slots", tuple(tuple(s) for s in self.person_slots))
        object.__setattr__(self, "background", tuple(tuple(p) for p in self.background))

    def to_dict(self) -> dict:
        return {
            "objects": [dict(o) for o in self.objects],
            "person_slots": [list(s) for s in self.person_slots],
            "background": [list(p) for p in self.background],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Scene":
        return cls(
            tuple(d.get("objects", DEFAULT_OBJECTS)),
            tuple(tuple(s) for s in d.get("person_slots", DEFAULT_SLOTS)),
            tuple(tuple(p) for p in d.get("background", DEFAULT_BACKGROUND)),
        )


def face_box(slot) -> tuple[int, int, int, int]:
    x0, y0, x1, y1 = slot
    q = (x1 - x0) // 4
    return (x0 + q, y0 + 8, x1 - q, y0 + 8 + (y1 - y0) * 2 // 5)


@dataclass(frozen=True)
class SynthSpec:
    wearers: tuple
    duration_s: float
    session_id: str = "synth"
    seed: int = 0
    gaze_rate_hz: float = 10.0
    frame_rate_hz: float = 30.0
    width: int = 640
    height: int = 480
    label_scale: int = 16
    noise_px: float = 0.0
    scene: Scene = field(default_factory=Scene)
    utterances: tuple = ()
    annotate_transcript: bool = True
    labelmaps_for: str = "leader"
    human_scores: dict | None = None

    def __post_init__(self):
        if self.noise_px < 0:
            raise ValueError("noise_px must be >= 0")
        if self.labelmaps_for not in ("leader", "all"):
            raise ValueError("labelmaps_for must be 'leader' or 'all'")

    @property
    def leader_id(self) -> str:
        leaders = [w["wearer_id"] for w in self.wearers if w.get("role") == "leader"]
        if len(leaders) != 1:
            raise InfeasibleScript("spec needs exactly one leader")
        return leaders[0]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["wearers"] = [dict(w) for w in self.wearers]
        d["utterances"] = [dict(u) for u in self.utterances]
        d["scene"] = self.scene.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SynthSpec":
        d = dict(d)
        d["wearers"] = tuple(d["wearers"])
        d["utterances"] = tuple(d.get("utterances", ()))
        d["scene"] = Scene.from_dict(d.get("scene", {}))
        return cls(**d)

    @classmethod
    def load(cls, path) -> "SynthSpec":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


class _World:
    """Object ids and per-viewer geometry derived from a spec."""

    def __init__(self, spec: SynthSpec):
        self.spec = spec
        self.ids = [w["wearer_id"] for w in spec.wearers]
        if len(set(self.ids)) != len(self.ids):
            raise InfeasibleScript("duplicate wearer ids in spec")
        if len(self.ids) - 1 > len(spec.scene.person_slots):
            raise InfeasibleScript("more wearers than person slots in the scene")
        self.category_map: dict[int, str] = {}
        self.object_ids: dict[str, int] = {}
        for i, o in enumerate(spec.scene.objects, 1):
            self.object_ids[o["name"]] = i
            self.category_map[i] = o["category"]
        base = len(spec.scene.objects)
        self.person_ids = {wid: base + 1 + i for i, wid in enumerate(self.ids)}
        for pid in self.person_ids.values():
            self.category_map[pid] = "member"

    def slots(self, viewer: str) -> dict[str, tuple]:
        others = [w for w in self.ids if w != viewer]
        return {w: tuple(self.spec.scene.person_slots[i]) for i, w in enumerate(others)}

    def boxes(self, viewer: str) -> list[tuple]:
        out = [(self.object_ids[o["name"]], *o["box"]) for o in self.spec.scene.objects]
        for w, slot in self.slots(viewer).items():
            out.append((self.person_ids[w], *slot))
        return out

    def faces(self, viewer: str) -> dict[str, tuple]:
        return {w: face_box(slot) for w, slot in self.slots(viewer).items()}

    def target_point(self, viewer: str, seg: dict) -> tuple[float, float]:
        if "point" in seg:
            x, y = seg["point"]
        else:
            tgt = seg.get("target")
            if tgt is None:
                raise InfeasibleScript("fixation segment needs 'target' or 'point'")
            if tgt in self.object_ids:
                x0, y0, x1, y1 = next(o["box"] for o in self.spec.scene.objects if o["name"] == tgt)
                x, y = (x0 + x1) / 2, (y0 + y1) / 2
            elif tgt.startswith("bg:"):
                x, y = self.spec.scene.background[int(tgt[3:])]
            elif tgt.startswith(("face:", "person:")):
                kind, who = tgt.split(":", 1)
                slot = self.slots(viewer).get(who)
                if slot is None:
                    raise InfeasibleScript(f"{viewer} cannot look at {tgt!r}")
                fx0, fy0, fx1, fy1 = face_box(slot)
                if kind == "face":
                    x, y = (fx0 + fx1) / 2, (fy0 + fy1) / 2
                else:
                    x, y = (slot[0] + slot[2]) / 2, (fy1 + slot[3]) / 2
            else:
                raise InfeasibleScript(f"unknown target {tgt!r}")
        dx, dy = seg.get("offset", (0, 0))
        x, y = x + dx, y + dy
        if not (0 <= x < self.spec.width and 0 <= y < self.spec.height):
            raise InfeasibleScript(f"target point {(x, y)} outside the frame")
        return float(x), float(y)

    def object_at(self, viewer: str, point) -> int:
        x, y = point
        for oid, x0, y0, x1, y1 in sorted(self.boxes(viewer)):
            if x0 <= x < x1 and y0 <= y < y1:
                return oid
        return 0


def _ns(ms) -> int:
    return int(round(float(ms) * MS))


def _check_script(wid: str, script, duration_ns: int) -> list[dict]:
    segs = []
    prev_end = 0
    for i, s in enumerate(script):
        kind = s.get("kind")
        if kind not in ("fixation", "saccade", "gap"):
            raise InfeasibleScript(f"{wid}: segment {i} has unknown kind {kind!r}")
        a, b = _ns(s["start_ms"]), _ns(s["end_ms"])
        if a < prev_end:
            raise InfeasibleScript(f"{wid}: segment {i} overlaps the previous one")
        if a > prev_end:
            raise InfeasibleScript(f"{wid}: segments leave a hole before segment {i}")
        if b <= a:
            raise InfeasibleScript(f"{wid}: segment {i} has non-positive duration")
        segs.append({**s, "_a": a, "_b": b})
        prev_end = b
    if prev_end != duration_ns:
        raise InfeasibleScript(f"{wid}: segments end at {prev_end} ns, session lasts {duration_ns} ns")
    for i, s in enumerate(segs):
        if s["kind"] == "saccade":
            if i == 0 or i == len(segs) - 1 or segs[i - 1]["kind"] != "fixation" or segs[i + 1]["kind"] != "fixation":
                raise InfeasibleScript(f"{wid}: saccade segment {i} must sit between two fixations")
    return segs


def _positions(world: _World, wid: str, segs, t: np.ndarray) -> np.ndarray:
    pts = [world.target_point(wid, s) if s["kind"] == "fixation" else None for s in segs]
    starts = np.array([s["_a"] for s in segs])
    k = np.searchsorted(starts, t, side="right") - 1
    out = np.full((len(t), 2), np.nan)
    for j, seg_i in enumerate(k):
        s = segs[seg_i]
        if s["kind"] == "fixation":
            out[j] = pts[seg_i]
        elif s["kind"] == "saccade":
            p0, p1 = np.array(pts[seg_i - 1]), np.array(pts[seg_i + 1])
            frac = (t[j] - s["_a"]) / (s["_b"] - s["_a"])
            out[j] = p0 + frac * (p1 - p0)
    return out


def _group_intervals(iv, params: EyeContactParams) -> list[tuple[int, int]]:
    iv = sorted(iv)
    merged: list[list[int]] = []
    for a, b in iv:
        if merged and a - merged[-1][1] <= params.max_gap_ms * MS:
            merged[-1][1] = max(merged[-1][1], b)
        else:
            merged.append([a, b])
    return [(a, b) for a, b in merged if b - a >= params.min_duration_ms * MS]


def _jsonl(records) -> str:
    return "".join(json.dumps(r, ensure_ascii=False) + "\n" for r in records)


def _fmt(v: float) -> float:
    return round(float(v), 3)


def generate_session(spec: SynthSpec, out_dir) -> dict:
    """Write session files for ``spec`` into ``out_dir``; return the ground truth.

    Files: ``manifest.json``, ``gaze_<w>.jsonl``, ``faces_<w>.jsonl``,
    ``labelmaps_<w>.jsonl`` (leader only unless ``labelmaps_for="all"``),
    ``transcript_<w>.jsonl`` for wearers with utterances, and
    ``ground_truth.json``.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    world = _World(spec)
    leader = spec.leader_id
    duration_ns = _ns(spec.duration_s * 1000)
    rng = np.random.Generator(np.random.PCG64(spec.seed))

    n_gaze = int(math.floor(spec.duration_s * spec.gaze_rate_hz + 1e-9))
    n_frames = int(math.floor(spec.duration_s * spec.frame_rate_hz + 1e-9))
    gaze_t = np.round(np.arange(n_gaze) * (1e9 / spec.gaze_rate_hz)).astype(np.int64)
    frame_t = np.round(np.arange(n_frames) * (1e9 / spec.frame_rate_hz)).astype(np.int64)
    lw, lh = spec.width // spec.label_scale, spec.height // spec.label_scale

    scripts = {w["wearer_id"]: _check_script(w["wearer_id"], w.get("script", ()), duration_ns) for w in spec.wearers}
    truth_wearers = {}
    fix_targets: dict[str, list[tuple[int, int, str]]] = {}
    manifest_wearers = []

    for w in spec.wearers:
        wid = w["wearer_id"]
        off = int(w.get("clock_offset_ns", 0))
        segs = scripts[wid]
        pos = _positions(world, wid, segs, gaze_t)
        noise = rng.normal(0.0, spec.noise_px, size=(n_gaze, 2)) if spec.noise_px > 0 else np.zeros((n_gaze, 2))
        pos = pos + noise

        recs = []
        for t, (x, y) in zip(gaze_t, pos):
            if np.isnan(x):
                recs.append({"t_ns": int(t) - off, "x": None, "y": None})
            else:
                recs.append({"t_ns": int(t) - off, "x": _fmt(x), "y": _fmt(y), "conf": 1.0})
        (out / f"gaze_{wid}.jsonl").write_text(_jsonl(recs), encoding="utf-8")

        faces = world.faces(wid)
        face_boxes = json.dumps(
            [{"person_id": p, "x0": b[0], "y0": b[1], "x1": b[2], "y1": b[3], "conf": 0.95} for p, b in faces.items()]
        )
        with open(out / f"faces_{wid}.jsonl", "w", encoding="utf-8") as fh:
            for k, t in enumerate(frame_t):
                fh.write(f'{{"frame_idx": {k}, "t_ns": {int(t) - off}, "boxes": {face_boxes}}}\n')

        entry = {
            "wearer_id": wid,
            "role": w.get("role", "member"),
            "clock_offset_ns": off,
            "gaze": f"gaze_{wid}.jsonl",
            "labelmaps": None,
            "facetracks": f"faces_{wid}.jsonl",
            "transcript": None,
            "stream": {
                "width": spec.width,
                "height": spec.height,
                "rate_hz": spec.gaze_rate_hz,
                "frame_rate_hz": spec.frame_rate_hz,
                "frame_count": n_frames,
            },
        }
        if spec.labelmaps_for == "all" or wid == leader:
            rows = json.dumps(render_boxes(world.boxes(wid), lw, lh, scale=spec.label_scale))
            with open(out / f"labelmaps_{wid}.jsonl", "w", encoding="utf-8") as fh:
                for k, t in enumerate(frame_t):
                    fh.write(f'{{"frame_idx": {k}, "t_ns": {int(t) - off}, "w": {lw}, "h": {lh}, "rows": {rows}}}\n')
            entry["labelmaps"] = f"labelmaps_{wid}.jsonl"
        manifest_wearers.append(entry)

        events = []
        fix_targets[wid] = []
        for s in segs:
            ev = {"start_ns": s["_a"], "end_ns": s["_b"]}
            if s["kind"] == "fixation":
                p = world.target_point(wid, s)
                oid = world.object_at(wid, p)
                ev.update(kind=int(EventKind.FIXATION), object_id=oid, category=world.category_map.get(oid, "unknown"))
                fix_targets[wid].append((s["_a"], s["_b"], s.get("target", "")))
            elif s["kind"] == "saccade":
                ev.update(kind=int(EventKind.SACCADE))
            else:
                ev.update(kind=int(EventKind.OTHER))
            events.append(ev)
        truth_wearers[wid] = {"events": events}

    # planted eye contact: leader on member's face while member is on leader's face
    ecp = EyeContactParams()
    ec_truth = {}
    for mid in (w for w in world.ids if w != leader):
        lead_iv = [(a, b) for a, b, tg in fix_targets[leader] if tg == f"face:{mid}"]
        memb_iv = [(a, b) for a, b, tg in fix_targets[mid] if tg == f"face:{leader}"]
        both = []
        for a, b in lead_iv:
            for c, d in memb_iv:
                lo, hi = max(a, c), min(b, d)
                if lo < hi:
                    both.append((lo, hi))
        ec_truth[mid] = [{"start_ns": a, "end_ns": b} for a, b in _group_intervals(both, ecp)]

    # transcripts
    by_speaker: dict[str, list] = {}
    utt_truth = []
    offsets = {w["wearer_id"]: int(w.get("clock_offset_ns", 0)) for w in spec.wearers}
    for u in spec.utterances:
        label = u.get("label", "NONE")
        if label not in LABELS:
            raise InfeasibleScript(f"utterance label {label!r} not in {LABELS}")
        text = u.get("text")
        if text is None:
            opts = TEMPLATES[label]
            text = opts[int(rng.integers(len(opts)))].format(name=NAMES[int(rng.integers(len(NAMES)))])
        a, b = _ns(u["start_ms"]), _ns(u["end_ms"])
        spk = u["speaker"]
        if spk not in offsets:
            raise InfeasibleScript(f"utterance speaker {spk!r} is not a wearer")
        rec = {"start_ns": a - offsets[spk], "end_ns": b - offsets[spk], "speaker": spk, "text": text}
        if spec.annotate_transcript:
            rec["label"] = label
        by_speaker.setdefault(spk, []).append(rec)
        utt_truth.append({"start_ns": a, "end_ns": b, "speaker": spk, "label": label, "text": text})
    for entry in manifest_wearers:
        recs = by_speaker.get(entry["wearer_id"])
        if recs:
            name = f"transcript_{entry['wearer_id']}.jsonl"
            (out / name).write_text(_jsonl(recs), encoding="utf-8")
            entry["transcript"] = name

    manifest = {
        "session_id": spec.session_id,
        "epoch_ns": 0,
        "leader_id": leader,
        "category_map": {str(k): v for k, v in sorted(world.category_map.items())},
        "wearers": manifest_wearers,
        "notes": f"synthetic session, seed {spec.seed}",
    }
    if spec.human_scores is not None:
        manifest["human_scores"] = spec.human_scores
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")

    leader_fix = [e for e in truth_wearers[leader]["events"] if e["kind"] == EventKind.FIXATION]
    truth = {
        "session_id": spec.session_id,
        "leader_id": leader,
        "wearers": truth_wearers,
        "eye_contact": {"per_dyad": ec_truth, "total": sum(len(v) for v in ec_truth.values())},
        "utterances": utt_truth,
        "transition": build_transition_matrix([e["category"] for e in leader_fix]).to_dict(),
    }
    (out / "ground_truth.json").write_text(json.dumps(truth, indent=2) + "\n", encoding="utf-8")
    (out / "synth_spec.json").write_text(json.dumps(spec.to_dict(), indent=2) + "\n", encoding="utf-8")
    return truth


# -- spec builders -------------------------------------------------------------


def blocks_to_spec(
    blocks: Sequence[tuple[float, dict]],
    wearers: Sequence[dict],
    saccade_ms: float = SACCADE_MS,
    lead_in_ms: float = 0.0,
    tail_ms: float = 0.0,
    **spec_kw,
) -> SynthSpec:
    """Build lock-step scripts from ``(fixation_ms, {wearer_id: target})`` blocks.

    Every wearer fixates its block target for ``fixation_ms`` and then
    saccades to its next target; all wearers share block boundaries, so
    simultaneous targets (e.g. mutual face fixations) line up exactly.
    Optional leading and trailing signal gaps pad the session.
    """
    scripts: dict[str, list] = {w["wearer_id"]: [] for w in wearers}
    t = 0.0
    if lead_in_ms > 0:
        for s in scripts.values():
            s.append({"kind": "gap", "start_ms": 0.0, "end_ms": lead_in_ms})
        t = lead_in_ms
    for i, (dur, targets) in enumerate(blocks):
        for wid, s in scripts.items():
            tgt = targets[wid]
            seg = {"kind": "fixation", "start_ms": t, "end_ms": t + dur}
            if isinstance(tgt, dict):
                seg.update(tgt)
            elif isinstance(tgt, (list, tuple)):
                seg["point"] = list(tgt)
            else:
                seg["target"] = tgt
            s.append(seg)
        t += dur
        if i < len(blocks) - 1:
            for s in scripts.values():
                s.append({"kind": "saccade", "start_ms": t, "end_ms": t + saccade_ms})
            t += saccade_ms
    if tail_ms > 0:
        for s in scripts.values():
            s.append({"kind": "gap", "start_ms": t, "end_ms": t + tail_ms})
        t += tail_ms
    ws = tuple({**w, "script": scripts[w["wearer_id"]]} for w in wearers)
    return SynthSpec(wearers=ws, duration_s=t / 1000.0, **spec_kw)


def default_wearers(n_members: int = 3, seed: int = 0) -> list[dict]:
    rng = np.random.Generator(np.random.PCG64(seed))
    ws = [{"wearer_id": "L", "role": "leader"}]
    ws += [{"wearer_id": f"M{i + 1}", "role": "member"} for i in range(n_members)]
    for w in ws:
        w["clock_offset_ns"] = int(rng.integers(-5_000_000_000, 5_000_000_000))
    return ws


def target_pool(wearer_id: str, all_ids: Sequence[str], leader_id: str, scene: Scene = Scene()) -> list[str]:
    """Targets a wearer may fixate outside planted eye-contact windows."""
    pool = [o["name"] for o in scene.objects]
    pool += [f"bg:{i}" for i in range(len(scene.background))]
    for other in all_ids:
        if other == wearer_id:
            continue
        pool.append(f"person:{other}")
        # faces only where no accidental mutual gaze can arise
        if wearer_id != leader_id and other != leader_id:
            pool.append(f"face:{other}")
    return pool


def random_session_spec(
    seed: int = 0,
    duration_s: float = 600.0,
    n_members: int = 3,
    n_mutual: int = 11,
    noise_px: float = 0.0,
    fixation_ms: tuple[float, float] = (800.0, 3000.0),
    n_utterances: int = 80,
    **spec_kw,
) -> SynthSpec:
    """A random, well-separated session: every consecutive target differs.

    ``n_mutual`` blocks (never adjacent) become leader-member mutual gaze
    windows. Leader utterances carry random labels and template text.
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    wearers = default_wearers(n_members, seed)
    ids = [w["wearer_id"] for w in wearers]
    leader = ids[0]
    total_ms = duration_s * 1000.0

    durs: list[float] = []
    t = 0.0
    lo, hi = fixation_ms
    while True:
        d = float(rng.integers(int(lo) // 10, int(hi) // 10 + 1) * 10)
        if t + d + SACCADE_MS + lo > total_ms:
            durs.append(total_ms - t)
            break
        durs.append(d)
        t += d + SACCADE_MS
    if durs[-1] < lo and len(durs) > 1:
        last = durs.pop()
        durs[-1] += last + SACCADE_MS

    n = len(durs)
    if n_mutual > (n - 1) // 2:
        raise InfeasibleScript(f"cannot plant {n_mutual} mutual windows in {n} blocks")
    candidates = np.arange(1, n - 1)
    mutual: dict[int, str] = {}
    while len(mutual) < n_mutual:
        b = int(rng.choice(candidates))
        if b in mutual or b - 1 in mutual or b + 1 in mutual:
            continue
        mutual[b] = ids[1 + len(mutual) % n_members]

    pools = {w: target_pool(w, ids, leader) for w in ids}
    prev: dict[str, str | None] = {w: None for w in ids}
    blocks = []
    for i, d in enumerate(durs):
        targets = {}
        m = mutual.get(i)
        for w in ids:
            if m is not None and w == leader:
                tgt = f"face:{m}"
            elif m is not None and w == m:
                tgt = f"face:{leader}"
            else:
                nxt = mutual.get(i + 1)
                avoid = {prev[w]}
                if nxt is not None:
                    avoid |= {f"face:{nxt}", f"face:{leader}", f"person:{nxt}", f"person:{leader}"}
                opts = [p for p in pools[w] if p not in avoid]
                tgt = opts[int(rng.integers(len(opts)))]
            targets[w] = tgt
            prev[w] = tgt
        blocks.append((d, targets))

    utts = []
    if n_utterances:
        step = total_ms / n_utterances
        for k in range(n_utterances):
            start = k * step + float(rng.uniform(0, step * 0.3))
            label = LABELS[int(rng.integers(len(LABELS)))]
            utts.append(
                {
                    "start_ms": round(start, 1),
                    "end_ms": round(start + min(step * 0.5, 2500.0), 1),
                    "speaker": leader,
                    "label": label,
                }
            )
    spec_kw.setdefault("annotate_transcript", False)
    return blocks_to_spec(
        blocks, wearers, seed=seed, noise_px=noise_px, utterances=tuple(utts), session_id=f"synth-{seed}", **spec_kw
    )


def ratio_counts(ratios_pct: dict, max_n: int = 1000) -> tuple[int, dict]:
    """Smallest utterance count ``n`` with integer class counts hitting ``ratios_pct`` to 2 dp."""
    for n in range(1, max_n + 1):
        ks = {}
        for c, r in ratios_pct.items():
            k = int(round(r * n / 100.0))
            if round(100.0 * k / n, 2) != round(r, 2):
                break
            ks[c] = k
        else:
            if sum(ks.values()) <= n:
                return n, ks
    raise InfeasibleScript(f"no utterance count up to {max_n} reproduces {ratios_pct}")


def _split_units(total: int, n: int, rng, min_units: int) -> list[int]:
    extra = total - n * min_units
    if extra < 0:
        raise InfeasibleScript(f"{total} units cannot hold {n} fixations of >= {min_units}")
    return [min_units + int(e) for e in rng.multinomial(extra, np.full(n, 1.0 / n))]


def engineered_spec(
    avg_s: dict,
    counts: dict,
    ec_count: int = 0,
    ratios_pct: dict | None = None,
    human_scores: dict | None = None,
    n_members: int = 3,
    seed: int = 0,
    session_id: str = "engineered",
) -> SynthSpec:
    """A session whose report reproduces given per-category means, EC count and ratios.

    Each leader fixation of ``D`` (a multiple of the 100 ms gaze period) is
    planted as ``D + 60`` ms followed by a 40 ms saccade, after a 70 ms
    lead-in, so sampled boundaries fall exactly ``D`` apart. Per category
    the durations sum to ``counts[c] * avg_s[c]``, which must be a multiple
    of 0.1 s. ``ec_count`` member fixations become mutual-gaze windows.
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    wearers = default_wearers(n_members, seed)
    ids = [w["wearer_id"] for w in wearers]
    leader, members = ids[0], ids[1:]

    durations: dict[str, list[int]] = {}
    for c, n in counts.items():
        if c not in CATEGORIES:
            raise InfeasibleScript(f"unknown category {c!r}")
        units = avg_s[c] * n * 10
        if abs(units - round(units)) > 1e-6:
            raise InfeasibleScript(f"{n} x {avg_s[c]} s is not a multiple of the 100 ms gaze period")
        durations[c] = _split_units(int(round(units)), n, rng, 5)
    if ec_count > counts.get("member", 0):
        raise InfeasibleScript("more eye-contact events than member fixations")

    # interleave categories, most remaining first, never the same twice in a row when avoidable
    left = {c: list(v) for c, v in durations.items() if v}
    order: list[str] = []
    while left:
        cands = sorted(left, key=lambda c: (-len(left[c]), CATEGORIES.index(c)))
        c = next((c for c in cands if not order or c != order[-1]), cands[0])
        order.append(c)
        left[c].pop()
        if not left[c]:
            del left[c]
    cursor = {c: 0 for c in durations}
    member_slots = [i for i, c in enumerate(order) if c == "member"]
    mutual_idx = set(int(i) for i in rng.choice(member_slots, size=ec_count, replace=False)) if ec_count else set()

    statics = {"patient": "patient", "screen": "screen", "device": "device"}
    member_idle = ("device", "screen", "patient", "bg:0", "bg:1")
    blocks = []
    prev = {w: None for w in ids}
    k_member = 0
    k_unknown = 0
    for i, c in enumerate(order):
        d = durations[c][cursor[c]]
        cursor[c] += 1
        targets = {}
        if c == "member":
            who = members[k_member % len(members)]
            k_member += 1
            if prev[leader] in (f"face:{who}", f"person:{who}"):
                who = members[k_member % len(members)]
                k_member += 1
            targets[leader] = f"face:{who}" if i in mutual_idx else f"person:{who}"
        elif c == "unknown":
            targets[leader] = f"bg:{k_unknown % 2}"
            k_unknown += 1
        else:
            targets[leader] = statics[c]
        for j, m in enumerate(members):
            if i in mutual_idx and targets[leader] == f"face:{m}":
                targets[m] = f"face:{leader}"
            else:
                opts = [t for t in member_idle if t != prev[m]]
                targets[m] = opts[(i + j) % len(opts)]
        for w, t in targets.items():
            prev[w] = t
        blocks.append((d * 100.0 + 60.0, targets))

    utts: list[dict] = []
    if ratios_pct:
        n, ks = ratio_counts(ratios_pct)
        labels = [c for c in CLASSES for _ in range(ks.get(c, 0))]
        labels += ["NONE"] * (n - len(labels))
        labels = [labels[int(i)] for i in rng.permutation(n)]
        total_ms = 70.0 + sum(b[0] + SACCADE_MS for b in blocks) - SACCADE_MS
        step = total_ms / n
        for k, lab in enumerate(labels):
            start = round(k * step, 3)
            utts.append({"start_ms": start, "end_ms": round(start + step * 0.8, 3), "speaker": leader, "label": lab})

    return blocks_to_spec(
        blocks,
        wearers,
        lead_in_ms=70.0,
        tail_ms=170.0,
        seed=seed,
        session_id=session_id,
        utterances=tuple(utts),
        annotate_transcript=True,
        human_scores=human_scores,
    )


# -- scoring -------------------------------------------------------------------


@dataclass(frozen=True)
class RecoveryScores:
    boundary_agreement: float
    n_planted_events: int
    object_accuracy: float | None
    n_planted_fixations: int
    ec_count_delta: int | None
    ec_delta_per_dyad: dict | None
    transition_equal: bool | None
    conversation_accuracy: float | None

    def to_dict(self) -> dict:
        return asdict(self)


def _match_events(planted, detected, tol_ns) -> int:
    """Greedy one-to-one matching of same-kind events with both boundaries within tolerance."""
    used = set()
    hits = 0
    for p in planted:
        for j, d in enumerate(detected):
            if j in used or int(d.kind) != p["kind"]:
                continue
            if abs(d.start_ns - p["start_ns"]) <= tol_ns and abs(d.end_ns - p["end_ns"]) <= tol_ns:
                used.add(j)
                hits += 1
                break
    return hits


def score_against_truth(analysis, truth: dict, boundary_tol_ms: float = 100.0) -> RecoveryScores:
    """Compare an analysis of a synthetic session with its ground truth.

    ``analysis`` needs ``session_id``, ``leader_id`` and optionally
    ``timelines`` (wearer -> EventTimeline), ``assignments``,
    ``eye_contact`` and ``utterances``, as produced by
    :func:`egolead.pipeline.analyze_session` or
    :func:`egolead.pipeline.load_analysis`.
    """
    if analysis.session_id != truth["session_id"]:
        raise SessionMismatch(f"analysis is {analysis.session_id!r}, truth is {truth['session_id']!r}")
    tol = int(boundary_tol_ms * MS)
    timelines = getattr(analysis, "timelines", None) or {}

    planted_total = hits = 0
    for wid, tw in truth["wearers"].items():
        planted = [e for e in tw["events"] if e["kind"] in (EventKind.FIXATION, EventKind.SACCADE)]
        planted_total += len(planted)
        tl = timelines.get(wid)
        if tl is not None:
            hits += _match_events(planted, tl.events, tol)
    boundary = hits / planted_total if planted_total else 1.0

    leader = truth["leader_id"]
    planted_fix = [e for e in truth["wearers"][leader]["events"] if e["kind"] == EventKind.FIXATION]
    assignments = getattr(analysis, "assignments", None)
    obj_acc = transition_equal = None
    if assignments is not None:
        correct = 0
        for p in planted_fix:
            best, overlap = None, 0
            for a in assignments:
                ov = min(a.end_ns, p["end_ns"]) - max(a.start_ns, p["start_ns"])
                if ov > overlap:
                    best, overlap = a, ov
            if best is not None and best.object_id == p["object_id"]:
                correct += 1
        obj_acc = correct / len(planted_fix) if planted_fix else 1.0
        states = tuple(truth["transition"]["states"])
        detected_tm = build_transition_matrix(assignments, True, states)
        transition_equal = detected_tm.to_dict()["counts"] == truth["transition"]["counts"]

    ec = getattr(analysis, "eye_contact", None)
    ec_delta = ec_dyad = None
    if ec is not None:
        ec_delta = ec.total - truth["eye_contact"]["total"]
        ec_dyad = {
            m: ec.per_dyad.get(m, 0) - len(v) for m, v in sorted(truth["eye_contact"]["per_dyad"].items())
        }

    utts = getattr(analysis, "utterances", None)
    conv_acc = None
    if utts is not None:
        got = {(u.speaker, u.start_ns): u.label for u in utts}
        mine = [u for u in truth["utterances"] if u["speaker"] == leader]
        if mine:
            conv_acc = sum(got.get((u["speaker"], u["start_ns"])) == u["label"] for u in mine) / len(mine)

    return RecoveryScores(
        boundary, planted_total, obj_acc, len(planted_fix), ec_delta, ec_dyad, transition_equal, conv_acc
    )


__all__ = [
    "SynthSpec",
    "Scene",
    "generate_session",
    "blocks_to_spec",
    "random_session_spec",
    "engineered_spec",
    "ratio_counts",
    "score_against_truth",
    "RecoveryScores",
    "CLASSES",
    "CATEGORIES",
]
