"""End-to-end session analysis: config, orchestration, on-disk outputs."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Mapping

import numpy as np

from . import conversation as conv
from .errors import IngestError, MissingAnalysis, MissingField
from .eye_contact import (
    EyeContactParams,
    EyeContactSummary,
    count_eye_contact,
    load_face_tracks,
    read_events,
    write_events,
)
from .gaze_events import (
    ClassifierParams,
    EventKind,
    classify_events,
    read_timeline,
    write_timeline,
)
from .ingest import (
    CATEGORIES,
    MS,
    SessionManifest,
    StreamMeta,
    align_to_frames,
    load_gaze_track,
    parse_manifest,
)
from .object_fixation import (
    assign_all,
    load_box_tracks,
    load_label_maps,
    read_assignments,
    write_assignments,
)
from .report import LeadershipReport, assemble_report

log = logging.getLogger(__name__)


# -- configuration -------------------------------------------------------------


@dataclass(frozen=True)
class FixationConfig:
    align_tolerance_ms: float = 60.0
    tie_priority: tuple[str, ...] = CATEGORIES


@dataclass(frozen=True)
class ConversationConfig:
    classifier: str = "auto"  # auto | annotation | rule | external
    language: str = "en"
    rules_path: str | None = None
    adapter: conv.AdapterConfig = field(default_factory=conv.AdapterConfig)


@dataclass(frozen=True)
class ReportConfig:
    include_self: bool = True
    exclude_unknown: bool = False


@dataclass(frozen=True)
class Toggles:
    eye_contact: bool = True
    conversation: bool = True


@dataclass(frozen=True)
class AnalysisConfig:
    classifier: ClassifierParams = field(default_factory=ClassifierParams)
    eye_contact: EyeContactParams = field(default_factory=EyeContactParams)
    fixation: FixationConfig = field(default_factory=FixationConfig)
    conversation: ConversationConfig = field(default_factory=ConversationConfig)
    report: ReportConfig = field(default_factory=ReportConfig)
    toggles: Toggles = field(default_factory=Toggles)

    def to_dict(self) -> dict:
        c = self.conversation
        return {
            "classifier": self.classifier.to_dict(),
            "eye_contact": self.eye_contact.to_dict(),
            "fixation": {
                "align_tolerance_ms": self.fixation.align_tolerance_ms,
                "tie_priority": list(self.fixation.tie_priority),
            },
            "conversation": {
                "classifier": c.classifier,
                "language": c.language,
                "rules_path": c.rules_path,
                "adapter": c.adapter.to_dict(),
            },
            "report": asdict(self.report),
            "toggles": asdict(self.toggles),
        }

    @property
    def states(self) -> tuple[str, ...]:
        if self.report.exclude_unknown:
            return tuple(c for c in CATEGORIES if c != "unknown")
        return CATEGORIES


_SECTIONS = {
    "classifier": ClassifierParams,
    "eye_contact": EyeContactParams,
    "fixation": FixationConfig,
    "conversation": ConversationConfig,
    "report": ReportConfig,
    "toggles": Toggles,
}


def _coerce(value, default, where: str):
    """Type-check ``value`` against the type of ``default``."""
    if default is None:
        return value
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ValueError(f"{where}: expected true/false, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ValueError(f"{where}: expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ValueError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ValueError(f"{where}: expected a string, got {value!r}")
        return value
    if isinstance(default, tuple):
        if not isinstance(value, (list, tuple)) or not all(isinstance(v, str) for v in value):
            raise ValueError(f"{where}: expected a list of strings, got {value!r}")
        return tuple(value)
    return value


def _build(cls, d: Mapping, where: str):
    if not isinstance(d, Mapping):
        raise ValueError(f"{where}: expected an object")
    proto = cls()
    known = {f.name for f in fields(cls) if f.init}
    unknown = set(d) - known
    if unknown:
        raise ValueError(f"{where}: unknown key(s) {sorted(unknown)}")
    kw = {}
    for k, v in d.items():
        default = getattr(proto, k)
        if isinstance(default, conv.AdapterConfig):
            a = dict(v)
            if "command" in a:
                a["command"] = tuple(a["command"])
            kw[k] = _build(conv.AdapterConfig, a, f"{where}.{k}")
        elif v is None:
            kw[k] = None
        else:
            kw[k] = _coerce(v, default, f"{where}.{k}")
    return cls(**kw)


def config_from_dict(d: Mapping | None) -> AnalysisConfig:
    """Build a config from nested dicts; unknown keys and wrong types are errors."""
    d = dict(d or {})
    unknown = set(d) - set(_SECTIONS)
    if unknown:
        raise ValueError(f"config: unknown section(s) {sorted(unknown)}")
    kw = {name: _build(cls, d[name], name) for name, cls in _SECTIONS.items() if name in d}
    cfg = AnalysisConfig(**kw)
    if cfg.conversation.classifier not in ("auto", "annotation", "rule", "external"):
        raise ValueError("conversation.classifier must be auto, annotation, rule or external")
    if set(cfg.fixation.tie_priority) != set(CATEGORIES):
        raise ValueError(f"fixation.tie_priority must order exactly {list(CATEGORIES)}")
    return cfg


def load_config(path=None, overrides: Mapping | None = None) -> AnalysisConfig:
    """Read a JSON config file (optional) and apply ``section.key`` overrides."""
    d = json.loads(Path(path).read_text(encoding="utf-8")) if path else {}
    for dotted, value in (overrides or {}).items():
        section, _, key = dotted.partition(".")
        if not key:
            raise ValueError(f"override {dotted!r} must look like section.key")
        d.setdefault(section, {})
        if not isinstance(d[section], dict):
            raise ValueError(f"config section {section!r} must be an object")
        d[section][key] = value
    return config_from_dict(d)


# -- analysis ------------------------------------------------------------------


@dataclass
class SessionAnalysis:
    session_id: str
    leader_id: str
    config: AnalysisConfig
    timelines: dict = field(default_factory=dict)
    assignments: list | None = None
    eye_contact: EyeContactSummary | None = None
    utterances: list | None = None
    report: LeadershipReport | None = None
    warnings: list = field(default_factory=list)


def _stream_meta(manifest: SessionManifest, wid: str) -> StreamMeta:
    w = manifest.wearer(wid)
    if w.stream is not None:
        return w.stream
    lm = manifest.resolve(w.labelmap_path)
    if lm is not None and _label_source_kind(lm) == "rows":
        with open(lm, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    rec = json.loads(line)
                    return StreamMeta(int(rec["w"]), int(rec["h"]))
    raise MissingField(f"wearer {wid!r} declares no stream size and has no label map to infer it from", manifest.base_dir)


def _label_source_kind(path: Path) -> str:
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                try:
                    rec = json.loads(line)
                except json.JSONDecodeError:
                    return "rows"  # let the full loader report the line
                return "boxes" if isinstance(rec, dict) and "boxes" in rec else "rows"
    return "rows"


def load_label_source(manifest: SessionManifest, wid: str, meta: StreamMeta | None = None):
    w = manifest.wearer(wid)
    path = manifest.resolve(w.labelmap_path)
    if path is None:
        return None
    known = manifest.category_map.keys()
    if _label_source_kind(path) == "boxes":
        meta = meta or _stream_meta(manifest, wid)
        return load_box_tracks(path, known, meta, w.clock_offset_ns)
    return load_label_maps(path, known, meta or w.stream, w.clock_offset_ns, provenance=str(path))


def _label_utterances(utts, leader_id: str, cfg: ConversationConfig):
    mode = cfg.classifier
    if mode == "annotation":
        return list(utts)
    if mode == "external":
        return conv.classify_external(utts, cfg.adapter)
    rules = conv.load_rule_set(cfg.language, cfg.rules_path)
    out = []
    for u in utts:
        if mode == "auto" and u.label is not None:
            out.append(u)
        elif not u.text.strip():
            out.append(replace(u, label="NONE", label_source="rule"))
        else:
            out.append(conv.classify_rule(u, rules))
    return out


def analyze_session(manifest: SessionManifest, config: AnalysisConfig = AnalysisConfig()) -> SessionAnalysis:
    """Run every enabled subsystem on one session and assemble the report.

    Event classification runs for every wearer. Fixation objects need the
    leader's label source; eye contact needs face tracks of the leader and
    at least one member; conversation needs transcripts. Whatever is
    missing leaves its report section null.
    """
    leader = manifest.leader_id
    out = SessionAnalysis(manifest.session_id, leader, config)
    tol = int(config.fixation.align_tolerance_ms * MS)

    tracks = {}
    for w in manifest.wearers:
        meta = _stream_meta(manifest, w.wearer_id)
        tracks[w.wearer_id] = load_gaze_track(manifest.resolve(w.gaze_path), meta, w.clock_offset_ns, w.wearer_id)
        out.timelines[w.wearer_id] = classify_events(tracks[w.wearer_id], config.classifier)

    labels = load_label_source(manifest, leader, tracks[leader].meta)
    if labels is not None:
        idx, ft = labels.frame_times()
        framed = align_to_frames(tracks[leader], ft, tol, idx)
        out.assignments = assign_all(
            out.timelines[leader], labels, framed, manifest.category_map, config.fixation.tie_priority
        )
    else:
        out.warnings.append(f"leader {leader!r} has no label source; fixation metrics skipped")

    if config.toggles.eye_contact:
        faces, framed_f = {}, {}
        for w in manifest.wearers:
            p = manifest.resolve(w.facetrack_path)
            if p is None:
                continue
            faces[w.wearer_id] = load_face_tracks(p, w.wearer_id, w.clock_offset_ns)
            idx, ft = faces[w.wearer_id].frame_times()
            framed_f[w.wearer_id] = align_to_frames(tracks[w.wearer_id], ft, tol, idx)
        members = [m.wearer_id for m in manifest.members if m.wearer_id in faces]
        skipped = [m.wearer_id for m in manifest.members if m.wearer_id not in faces]
        if leader not in faces or not members:
            out.warnings.append("face tracks missing for the leader or all members; eye contact skipped")
        else:
            if skipped:
                out.warnings.append(f"no face tracks for {skipped}; those dyads skipped")
            out.eye_contact = count_eye_contact(leader, members, framed_f, faces, config.eye_contact)

    if config.toggles.conversation:
        utts = []
        for w in manifest.wearers:
            p = manifest.resolve(w.transcript_path)
            if p is not None:
                utts.extend(conv.load_transcript(p, w.clock_offset_ns))
        utts.sort(key=lambda u: (u.start_ns, u.end_ns, u.speaker))
        if any(u.speaker == leader for u in utts):
            out.utterances = _label_utterances(utts, leader, config.conversation)
        else:
            out.warnings.append("no leader utterances; conversation metrics skipped")

    for msg in out.warnings:
        log.warning(msg)
    out.report = assemble_report(
        manifest.session_id,
        leader,
        out.assignments,
        out.eye_contact,
        out.utterances,
        params=config.to_dict(),
        human_scores=manifest.human_scores,
        include_self=config.report.include_self,
        states=config.states,
    )
    return out


# -- outputs -------------------------------------------------------------------


def write_outputs(analysis: SessionAnalysis, out_dir, run_metadata: Mapping | None = None) -> list[Path]:
    """Write the report and every subsystem export; returns the files written.

    Output bytes depend only on inputs and config. ``run_metadata`` (wall
    clock, host, versions) goes to its own file and only when given.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    def put(name: str, text: str):
        p = out / name
        p.write_text(text, encoding="utf-8")
        written.append(p)

    r = analysis.report
    put("report.json", r.to_json())
    put("report.md", r.to_markdown())
    if r.transition is not None:
        put("transition_matrix.csv", r.transition.to_csv())
    files = {"events": {}}
    for wid, tl in sorted(analysis.timelines.items()):
        name = f"events_{wid}.jsonl"
        write_timeline(tl, out / name)
        written += [out / name, (out / name).with_suffix(".params.json")]
        files["events"][wid] = name
    if analysis.assignments is not None:
        write_assignments(analysis.assignments, out / "fixations.jsonl")
        written.append(out / "fixations.jsonl")
        files["fixations"] = "fixations.jsonl"
    if analysis.eye_contact is not None:
        write_events(analysis.eye_contact.events, out / "eye_contact.jsonl")
        written.append(out / "eye_contact.jsonl")
        files["eye_contact"] = "eye_contact.jsonl"
    if analysis.utterances is not None:
        conv.write_utterances(analysis.utterances, out / "utterances.jsonl")
        written.append(out / "utterances.jsonl")
        files["utterances"] = "utterances.jsonl"
    index = {
        "session_id": analysis.session_id,
        "leader_id": analysis.leader_id,
        "files": files,
        "config": analysis.config.to_dict(),
        "warnings": list(analysis.warnings),
    }
    put("analysis.json", json.dumps(index, indent=2, sort_keys=True) + "\n")
    if run_metadata is not None:
        put("run_metadata.json", json.dumps(dict(run_metadata), indent=2, sort_keys=True) + "\n")
    return written


def load_analysis(out_dir) -> SessionAnalysis:
    """Read back what :func:`write_outputs` wrote."""
    out = Path(out_dir)
    idx_path = out / "analysis.json"
    if not idx_path.exists():
        raise MissingAnalysis(f"no analysis.json in {out}")
    idx = json.loads(idx_path.read_text(encoding="utf-8"))
    files = idx["files"]
    report = LeadershipReport.from_json((out / "report.json").read_text(encoding="utf-8"))
    a = SessionAnalysis(idx["session_id"], idx["leader_id"], config_from_dict(idx["config"]), report=report)
    a.warnings = idx.get("warnings", [])
    a.timelines = {wid: read_timeline(out / name) for wid, name in files["events"].items()}
    if "fixations" in files:
        a.assignments = read_assignments(out / files["fixations"])
    if "eye_contact" in files:
        events = tuple(read_events(out / files["eye_contact"]))
        a.eye_contact = EyeContactSummary(
            dict(report.ec_per_dyad), report.ec_total, events, dict(report.ec_instants or {})
        )
    if "utterances" in files:
        a.utterances = conv.read_utterances(out / files["utterances"])
    return a


_KIND_NAMES = {EventKind.FIXATION: "fixation", EventKind.SACCADE: "saccade", EventKind.OTHER: "other"}


def overlay_records(manifest: SessionManifest, analysis: SessionAnalysis) -> list[dict]:
    """Per-frame annotation of the leader's video for external renderers.

    Frames come from the leader's label source, else its face tracks, else
    the gaze samples themselves.
    """
    leader = manifest.leader_id
    w = manifest.leader
    meta = _stream_meta(manifest, leader)
    track = load_gaze_track(manifest.resolve(w.gaze_path), meta, w.clock_offset_ns, leader)
    src = load_label_source(manifest, leader, meta)
    if src is None and w.facetrack_path is not None:
        src = load_face_tracks(manifest.resolve(w.facetrack_path), leader, w.clock_offset_ns)
    if src is not None:
        fidx, ft = src.frame_times()
    else:
        ft = track.t_ns
        fidx = np.arange(len(ft))
    framed = align_to_frames(track, ft, int(analysis.config.fixation.align_tolerance_ms * MS), fidx)

    tl = analysis.timelines.get(leader)
    fix = analysis.assignments or []
    fix_start = np.array([a.start_ns for a in fix], dtype=np.int64)
    ec = sorted(analysis.eye_contact.events, key=lambda e: e.start_ns) if analysis.eye_contact else []
    utts = [u for u in (analysis.utterances or []) if u.speaker == leader]

    recs = []
    for k in range(len(framed)):
        t = int(framed.t_ns[k])
        ev = tl.event_at(t) if tl is not None else None
        kind = _KIND_NAMES[ev.kind] if ev is not None else None
        cat = oid = None
        if kind == "fixation" and len(fix_start):
            j = int(np.searchsorted(fix_start, t, side="right")) - 1
            if j >= 0 and t < fix[j].end_ns:
                cat, oid = fix[j].category, fix[j].object_id
        ec_member = next((e.member for e in ec if e.start_ns <= t <= e.end_ns), None)
        label = next((u.label for u in utts if u.start_ns <= t <= u.end_ns), None)
        recs.append(
            {
                "frame_idx": int(framed.frame_idx[k]),
                "t_ns": t,
                "gaze": [float(framed.x[k]), float(framed.y[k])] if framed.present[k] else None,
                "kind": kind,
                "category": cat,
                "object_id": oid,
                "ec": ec_member is not None,
                "ec_member": ec_member,
                "utterance_label": label,
            }
        )
    return recs


def export_overlay(manifest: SessionManifest, analysis_dir, out_path=None) -> Path:
    analysis = load_analysis(analysis_dir)
    if analysis.session_id != manifest.session_id:
        raise MissingAnalysis(f"analysis in {analysis_dir} is for session {analysis.session_id!r}")
    out_path = Path(out_path) if out_path is not None else Path(analysis_dir) / "overlay.jsonl"
    with open(out_path, "w", encoding="utf-8") as fh:
        for r in overlay_records(manifest, analysis):
            fh.write(json.dumps(r, ensure_ascii=False) + "\n")
    return out_path


# -- validation ----------------------------------------------------------------


@dataclass
class ValidationReport:
    errors: list = field(default_factory=list)  # dicts: name, path, line, message
    warnings: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.errors

    def add(self, exc: Exception, path=None):
        self.errors.append(
            {
                "name": getattr(exc, "name", type(exc).__name__),
                "path": str(getattr(exc, "path", None) or path or ""),
                "line": getattr(exc, "line", None),
                "message": getattr(exc, "message", str(exc)),
            }
        )

    def lines(self) -> list[str]:
        out = []
        for e in self.errors:
            loc = e["path"] + (f":{e['line']}" if e["line"] is not None else "")
            out.append(f"error: {loc}: {e['name']}: {e['message']}")
        out += [f"warning: {w}" for w in self.warnings]
        return out


def validate_session(manifest_path, config: AnalysisConfig = AnalysisConfig()) -> ValidationReport:
    """Run every ingest validator without analysing anything.

    Each file is checked independently, so one report lists the first
    violation of every broken file.
    """
    rep = ValidationReport()
    try:
        m = parse_manifest(manifest_path)
    except (IngestError, OSError) as exc:
        rep.add(exc, manifest_path)
        return rep

    def check(fn, path):
        try:
            return fn()
        except (IngestError, OSError) as exc:
            rep.add(exc, path)
        except (ValueError, KeyError, TypeError) as exc:
            rep.add(IngestError(str(exc), path))
        return None

    for w in m.wearers:
        meta = check(lambda: _stream_meta(m, w.wearer_id), manifest_path)
        gp = m.resolve(w.gaze_path)
        if meta is not None:
            check(lambda: load_gaze_track(gp, meta, w.clock_offset_ns, w.wearer_id), gp)
        if w.labelmap_path is not None:
            lp = m.resolve(w.labelmap_path)
            check(lambda: load_label_source(m, w.wearer_id, meta), lp)
        if w.facetrack_path is not None:
            fp = m.resolve(w.facetrack_path)
            check(lambda: load_face_tracks(fp, w.wearer_id, w.clock_offset_ns), fp)
        if w.transcript_path is not None:
            tp = m.resolve(w.transcript_path)
            check(lambda: conv.load_transcript(tp, w.clock_offset_ns), tp)

    if m.leader.labelmap_path is None:
        rep.warnings.append(f"leader {m.leader_id!r} has no label maps; fixation metrics will be null")
    if config.toggles.eye_contact:
        missing = [w.wearer_id for w in m.wearers if w.facetrack_path is None]
        if missing:
            rep.warnings.append(f"eye contact enabled but no face tracks for {missing}")
    if config.toggles.conversation and not any(w.transcript_path for w in m.wearers):
        rep.warnings.append("conversation enabled but no transcripts declared")
    return rep


__all__ = [
    "AnalysisConfig",
    "SessionAnalysis",
    "ValidationReport",
    "config_from_dict",
    "load_config",
    "analyze_session",
    "write_outputs",
    "load_analysis",
    "export_overlay",
    "overlay_records",
    "validate_session",
]
