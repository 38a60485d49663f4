import json
from pathlib import Path
from types import SimpleNamespace

import pytest

from oracles import group_by_gap, mutual_instants, nearest_sample

from egolead.errors import InfeasibleScript, SessionMismatch
from egolead.gaze_events import EventKind
from egolead.ingest import MS, parse_manifest
from egolead.pipeline import analyze_session, validate_session
from egolead.synth import (
    SynthSpec,
    blocks_to_spec,
    engineered_spec,
    face_box,
    generate_session,
    random_session_spec,
    ratio_counts,
    score_against_truth,
)

LEADER = {"wearer_id": "L", "role": "leader", "clock_offset_ns": 0}


def _read(path):
    return [json.loads(l) for l in Path(path).read_text().splitlines() if l.strip()]


def _files_mutual_events(out_dir, leader, member):
    """Eye-contact events recomputed from the written files with the naive oracles."""
    man = json.loads((Path(out_dir) / "manifest.json").read_text())
    off = {w["wearer_id"]: w["clock_offset_ns"] for w in man["wearers"]}

    def rows(viewer, other):
        gz = _read(Path(out_dir) / f"gaze_{viewer}.jsonl")
        gt = [g["t_ns"] + off[viewer] for g in gz]
        ok = [g["x"] is not None for g in gz]
        out = []
        for fr in _read(Path(out_dir) / f"faces_{viewer}.jsonl"):
            t = fr["t_ns"] + off[viewer]
            k = nearest_sample(gt, ok, t, 60 * MS)
            p = None if k < 0 else (gz[k]["x"], gz[k]["y"])
            b = next(((b["x0"], b["y0"], b["x1"], b["y1"]) for b in fr["boxes"] if b["person_id"] == other), None)
            out.append((t, p, b))
        return out

    inst = mutual_instants(rows(leader, member), rows(member, leader), 60 * MS)
    return group_by_gap(inst, 100 * MS, 100 * MS)


def test_single_patient_fixation(tmp_path):
    spec = SynthSpec(
        wearers=({**LEADER, "script": [{"kind": "fixation", "start_ms": 0, "end_ms": 5000, "target": "patient"}]},),
        duration_s=5.0,
    )
    truth = generate_session(spec, tmp_path)
    assert [e["category"] for e in truth["wearers"]["L"]["events"]] == ["patient"]
    a = analyze_session(parse_manifest(tmp_path / "manifest.json"))
    assert len(a.assignments) == 1
    fx = a.assignments[0]
    assert fx.category == "patient"
    assert (fx.end_ns - fx.start_ns) / 1e9 == pytest.approx(4.9)  # sampled span of 50 samples at 10 Hz
    assert a.report.avg_fixation_s == {"patient": pytest.approx(4.9)}


def test_eleven_mutual_windows_match_oracle(tmp_path):
    spec = random_session_spec(seed=5, duration_s=90, n_mutual=11, n_utterances=0)
    truth = generate_session(spec, tmp_path)
    assert truth["eye_contact"]["total"] == 11
    a = analyze_session(parse_manifest(tmp_path / "manifest.json"))
    assert a.eye_contact.total == 11
    for mid, windows in truth["eye_contact"]["per_dyad"].items():
        oracle = _files_mutual_events(tmp_path, "L", mid)
        assert len(oracle) == len(windows) == a.eye_contact.per_dyad[mid]


def test_same_seed_is_byte_identical(tmp_path):
    spec = random_session_spec(seed=3, duration_s=20, n_mutual=2, n_utterances=5, noise_px=2.0)
    generate_session(spec, tmp_path / "a")
    generate_session(spec, tmp_path / "b")
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert names == sorted(p.name for p in (tmp_path / "b").iterdir())
    for n in names:
        assert (tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes()
    other = random_session_spec(seed=4, duration_s=20, n_mutual=2, n_utterances=5, noise_px=2.0)
    generate_session(other, tmp_path / "c")
    assert (tmp_path / "a" / "gaze_L.jsonl").read_bytes() != (tmp_path / "c" / "gaze_L.jsonl").read_bytes()


def test_spec_round_trip(tmp_path):
    spec = random_session_spec(seed=1, duration_s=15, n_mutual=1, n_utterances=3)
    generate_session(spec, tmp_path)
    assert SynthSpec.load(tmp_path / "synth_spec.json") == spec


def _fix(a, b, target="patient"):
    return {"kind": "fixation", "start_ms": a, "end_ms": b, "target": target}


@pytest.mark.parametrize(
    "script",
    [
        [_fix(0, 600), _fix(500, 1000)],  # overlap
        [_fix(0, 400), _fix(500, 1000)],  # hole
        [_fix(0, 800)],  # ends early
        [{"kind": "saccade", "start_ms": 0, "end_ms": 40}, _fix(40, 1000)],  # saccade not between fixations
        [_fix(0, 1000, "ceiling")],  # unknown target
        [_fix(0, 1000, "face:L")],  # own face
        [{"kind": "fixation", "start_ms": 0, "end_ms": 1000, "point": [700, 10]}],  # outside frame
        [_fix(0, 0), _fix(0, 1000)],  # zero length
    ],
)
def test_infeasible_scripts(tmp_path, script):
    spec = SynthSpec(wearers=({**LEADER, "script": script},), duration_s=1.0)
    with pytest.raises(InfeasibleScript):
        generate_session(spec, tmp_path)


def test_infeasible_specs(tmp_path):
    two = ({**LEADER, "script": [_fix(0, 1000)]}, {**LEADER, "wearer_id": "X", "script": [_fix(0, 1000)]})
    with pytest.raises(InfeasibleScript):
        generate_session(SynthSpec(wearers=two, duration_s=1.0), tmp_path)
    with pytest.raises(InfeasibleScript):
        random_session_spec(seed=0, duration_s=5, n_mutual=11)
    with pytest.raises(InfeasibleScript):
        engineered_spec({"patient": 1.05}, {"patient": 1})
    with pytest.raises(ValueError):
        SynthSpec(wearers=(), duration_s=1.0, noise_px=-1)


def test_generated_session_validates(tmp_path):
    generate_session(random_session_spec(seed=2, duration_s=20, n_mutual=2, n_utterances=4), tmp_path)
    rep = validate_session(tmp_path / "manifest.json")
    assert rep.ok, rep.lines()
    assert rep.warnings == []


def test_clock_offsets_written_as_device_time(tmp_path):
    w = {**LEADER, "clock_offset_ns": 2_000_000_000, "script": [_fix(0, 1000)]}
    generate_session(SynthSpec(wearers=(w,), duration_s=1.0), tmp_path)
    gz = _read(tmp_path / "gaze_L.jsonl")
    assert gz[0]["t_ns"] == -2_000_000_000


def test_blocks_share_boundaries():
    ws = [LEADER, {"wearer_id": "M", "role": "member"}]
    spec = blocks_to_spec([(500, {"L": "patient", "M": "face:L"}), (700, {"L": "face:M", "M": "face:L"})], ws, lead_in_ms=70)
    scripts = {w["wearer_id"]: [(s["kind"], s["start_ms"], s["end_ms"]) for s in w["script"]] for w in spec.wearers}
    assert scripts["L"] == scripts["M"]
    assert scripts["L"] == [("gap", 0, 70), ("fixation", 70, 570), ("saccade", 570, 610), ("fixation", 610, 1310)]
    assert spec.duration_s == pytest.approx(1.31)


def test_face_box_inside_slot():
    slot = (16, 16, 144, 240)
    x0, y0, x1, y1 = face_box(slot)
    assert slot[0] < x0 < x1 < slot[2] and slot[1] < y0 < y1 < slot[3]


@pytest.mark.parametrize(
    "ratios,n",
    [({"DO": 17.2, "UO": 21.6, "PL": 11.3, "TA": 3.4}, 1000), ({"DO": 50.0, "UO": 25.0}, 4), ({"DO": 0.0}, 1)],
)
def test_ratio_counts(ratios, n):
    got_n, ks = ratio_counts(ratios)
    assert got_n == n
    for c, r in ratios.items():
        assert round(100 * ks[c] / got_n, 2) == r


# -- scoring ------------------------------------------------------------------


def _ev(kind, a, b):
    return SimpleNamespace(kind=kind, start_ns=a, end_ns=b)


def _truth(events):
    return {
        "session_id": "s",
        "leader_id": "L",
        "wearers": {"L": {"events": events}},
        "eye_contact": {"per_dyad": {}, "total": 0},
        "utterances": [],
        "transition": {"states": ["patient"], "counts": [[0]]},
    }


def test_score_one_of_four_missed():
    F, S = int(EventKind.FIXATION), int(EventKind.SACCADE)
    planted = [
        {"kind": F, "start_ns": 0, "end_ns": 1000 * MS},
        {"kind": S, "start_ns": 1000 * MS, "end_ns": 1040 * MS},
        {"kind": F, "start_ns": 1040 * MS, "end_ns": 2000 * MS},
        {"kind": S, "start_ns": 2000 * MS, "end_ns": 2040 * MS},
    ]
    detected = [
        _ev(EventKind.FIXATION, 50 * MS, 1000 * MS),
        _ev(EventKind.SACCADE, 1000 * MS, 1100 * MS),
        _ev(EventKind.FIXATION, 1100 * MS, 1800 * MS),  # end off by 200 ms
        _ev(EventKind.SACCADE, 2000 * MS, 2040 * MS),
    ]
    a = SimpleNamespace(session_id="s", leader_id="L", timelines={"L": SimpleNamespace(events=detected)})
    s = score_against_truth(a, _truth(planted))
    assert s.boundary_agreement == 0.75
    assert s.n_planted_events == 4
    assert s.object_accuracy is None and s.ec_count_delta is None
    assert score_against_truth(a, _truth(planted), boundary_tol_ms=250).boundary_agreement == 1.0


def test_score_session_mismatch():
    a = SimpleNamespace(session_id="other", leader_id="L")
    with pytest.raises(SessionMismatch):
        score_against_truth(a, _truth([]))
