import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import write_jsonl
from oracles import group_by_gap, mutual_instants

from egolead.errors import DegenerateBox, DuplicateFaceBox, MissingFaceTracks, NonMonotonicTimestamps
from egolead.eye_contact import (
    EyeContactEvent,
    EyeContactParams,
    FaceTrackSet,
    count_eye_contact,
    gaze_in_box,
    group_events,
    load_face_tracks,
    mutual_gaze_frames,
    read_events,
    write_events,
)
from egolead.ingest import MS, FramedGaze

FRAME_NS = 33_333_333
FACE = (100.0, 100.0, 200.0, 200.0)
IN, OUT = (150.0, 150.0), (400.0, 400.0)


def _framed(points, t0=0, period=FRAME_NS):
    n = len(points)
    present = np.array([p is not None for p in points])
    xy = np.array([p if p is not None else (np.nan, np.nan) for p in points], dtype=float).reshape(n, 2)
    return FramedGaze(
        np.arange(n), t0 + np.arange(n, dtype=np.int64) * period, np.where(present, np.arange(n), -1), xy[:, 0], xy[:, 1]
    )


def _faces(owner, per_frame, t0=0, period=FRAME_NS):
    """per_frame: list of {person: box or None}."""
    frames = {}
    for k, boxes in enumerate(per_frame):
        frames[k] = (t0 + k * period, {p: (*b, 1.0) for p, b in boxes.items() if b is not None})
    return FaceTrackSet(owner, frames)


def _dyad(lead_pts, memb_pts, lead_boxes=None, memb_boxes=None):
    n = len(lead_pts)
    lf = _faces("L", [{"M": FACE if lead_boxes is None else lead_boxes[k]} for k in range(n)])
    mf = _faces("M", [{"L": FACE if memb_boxes is None else memb_boxes[k]} for k in range(n)])
    return _framed(lead_pts), lf, _framed(memb_pts), mf


# -- gaze_in_box --------------------------------------------------------------


def test_gaze_in_box_center_and_edges():
    assert gaze_in_box((150, 150), FACE)
    assert not gaze_in_box((99, 150), FACE)
    assert gaze_in_box((99, 150), FACE, margin_px=2)
    assert gaze_in_box((200, 150), FACE)  # closed interval
    assert gaze_in_box((100, 100), FACE)


# -- mutual_gaze_frames -------------------------------------------------------


def test_both_conditions_hold():
    lg, lf, mg, mf = _dyad([IN], [IN])
    assert mutual_gaze_frames("L", lg, lf, "M", mg, mf).tolist() == [0]


def test_only_leader_looks():
    lg, lf, mg, mf = _dyad([IN], [OUT])
    assert len(mutual_gaze_frames("L", lg, lf, "M", mg, mf)) == 0


def test_missing_gaze_or_box_is_zero():
    lg, lf, mg, mf = _dyad([IN, IN, None], [IN, IN, IN], memb_boxes=[FACE, None, FACE])
    assert mutual_gaze_frames("L", lg, lf, "M", mg, mf).tolist() == [0]


def test_planted_12_frame_window():
    n = 60
    lead = [IN if 20 <= k < 32 else OUT for k in range(n)]
    memb = [IN if 18 <= k < 35 else OUT for k in range(n)]
    lg, lf, mg, mf = _dyad(lead, memb)
    got = mutual_gaze_frames("L", lg, lf, "M", mg, mf).tolist()
    lead_rows = [(int(t), None if p is None else p, FACE) for t, p in zip(lg.t_ns, lead)]
    memb_rows = [(int(t), None if p is None else p, FACE) for t, p in zip(mg.t_ns, memb)]
    assert got == mutual_instants(lead_rows, memb_rows, 60 * MS)
    assert len(got) == 12


def test_pairing_uses_nearest_member_frame_within_tolerance():
    lg, lf, _, _ = _dyad([IN] * 3, [IN] * 3)
    # member clock runs 100 ms late: no frame within 60 ms of leader frame 0
    mg = _framed([IN] * 3, t0=100 * MS)
    mf = _faces("M", [{"L": FACE}] * 3, t0=100 * MS)
    got = mutual_gaze_frames("L", lg, lf, "M", mg, mf).tolist()
    assert got == [2 * FRAME_NS]


# -- grouping -----------------------------------------------------------------


def test_ten_instants_one_event():
    t = [k * FRAME_NS for k in range(10)]
    ev = group_events(t, 100, 100, ("L", "M"))
    assert len(ev) == 1 and ev[0].frame_count == 10
    assert (ev[0].start_ns, ev[0].end_ns) == (0, 9 * FRAME_NS)


def test_two_clusters():
    t = [k * FRAME_NS for k in range(10)] + [800 * MS + k * FRAME_NS for k in range(10)]
    assert len(group_events(t, 100, 100)) == 2


def test_isolated_instant_dropped():
    assert group_events([5 * MS], 100, 100) == []
    assert group_events([], 100, 100) == []


def test_event_invariants():
    with pytest.raises(ValueError):
        EyeContactEvent("L", "M", 10, 5, 1)
    with pytest.raises(ValueError):
        EyeContactEvent("L", "M", 0, 5, 0)


# -- count_eye_contact --------------------------------------------------------


def _window_pts(n, windows):
    return [IN if any(a <= k < b for a, b in windows) else OUT for k in range(n)]


def test_count_no_mutual_instants():
    lg, lf, mg, mf = _dyad([OUT] * 30, [IN] * 30)
    s = count_eye_contact("L", ["M"], {"L": lg, "M": mg}, {"L": lf, "M": mf})
    assert s.total == 0 and s.per_dyad == {"M": 0}


def test_count_two_dyads():
    n = 120
    lead_pts = []
    for k in range(n):
        lead_pts.append((150.0, 150.0) if k < 60 else (350.0, 150.0))
    # leader video: A's face left, B's face right
    lf = _faces("L", [{"A": FACE, "B": (300.0, 100.0, 400.0, 200.0)}] * n)
    a_pts = _window_pts(n, [(5, 15), (30, 45)])
    b_pts = _window_pts(n, [(70, 90)])
    af = _faces("A", [{"L": FACE}] * n)
    bf = _faces("B", [{"L": FACE}] * n)
    framed = {"L": _framed(lead_pts), "A": _framed(a_pts), "B": _framed(b_pts)}
    s = count_eye_contact("L", ["A", "B"], framed, {"L": lf, "A": af, "B": bf})
    assert s.per_dyad == {"A": 2, "B": 1}
    assert s.total == 3
    assert s.instants_per_dyad == {"A": 25, "B": 20}


def test_missing_face_tracks_names_wearer():
    lg, lf, mg, _ = _dyad([IN], [IN])
    with pytest.raises(MissingFaceTracks) as ei:
        count_eye_contact("L", ["M"], {"L": lg, "M": mg}, {"L": lf, "M": None})
    assert ei.value.wearer_id == "M"


def test_face_track_loading(tmp_path):
    ok = [{"frame_idx": k, "t_ns": k * FRAME_NS, "boxes": [{"person_id": "M", "x0": 1, "y0": 2, "x1": 3, "y1": 4}]} for k in range(3)]
    ft = load_face_tracks(write_jsonl(tmp_path / "f.jsonl", ok), "L", clock_offset_ns=10)
    assert ft.box(1, "M")[:4] == (1, 2, 3, 4)
    assert ft.frame_times()[1].tolist() == [10, FRAME_NS + 10, 2 * FRAME_NS + 10]
    dup = [{"frame_idx": 0, "t_ns": 0, "boxes": [{"person_id": "M", "x0": 1, "y0": 2, "x1": 3, "y1": 4}] * 2}]
    with pytest.raises(DuplicateFaceBox):
        load_face_tracks(write_jsonl(tmp_path / "d.jsonl", dup), "L")
    deg = [{"frame_idx": 0, "t_ns": 0, "boxes": [{"person_id": "M", "x0": 3, "y0": 2, "x1": 3, "y1": 4}]}]
    with pytest.raises(DegenerateBox):
        load_face_tracks(write_jsonl(tmp_path / "g.jsonl", deg), "L")
    back = [ok[1], ok[0]]
    with pytest.raises(NonMonotonicTimestamps) as ei:
        load_face_tracks(write_jsonl(tmp_path / "n.jsonl", back), "L")
    assert ei.value.line == 2


def test_events_round_trip(tmp_path):
    ev = [EyeContactEvent("L", "M", 0, 300, 10), EyeContactEvent("L", "N", 500, 900, 13)]
    write_events(ev, tmp_path / "ec.jsonl")
    assert read_events(tmp_path / "ec.jsonl") == ev


# -- properties ---------------------------------------------------------------

_pt = st.one_of(st.none(), st.tuples(st.floats(0, 300), st.floats(0, 300)))
_bx = st.one_of(
    st.none(),
    st.tuples(st.floats(0, 200), st.floats(0, 200), st.floats(1, 100), st.floats(1, 100)).map(
        lambda b: (b[0], b[1], b[0] + b[2], b[1] + b[3])
    ),
)


@st.composite
def dyads(draw, max_n=40):
    n = draw(st.integers(1, max_n))
    lists = lambda s: draw(st.lists(s, min_size=n, max_size=n))  # noqa: E731
    return lists(_pt), lists(_pt), lists(_bx), lists(_bx)


@settings(max_examples=250, deadline=None)
@given(dyads(), st.floats(0, 20))
def test_conjunction_symmetry(d, margin):
    lp, mp, lb, mb = d
    lg, lf, mg, mf = _dyad(lp, mp, lb, mb)
    ab = mutual_gaze_frames("L", lg, lf, "M", mg, mf, margin)
    # swap roles: M becomes the "leader" of the pair, boxes stay with their video owners
    ba = mutual_gaze_frames("M", mg, _faces("M", [{"L": b} for b in mb]), "L", lg, _faces("L", [{"M": b} for b in lb]), margin)
    assert ab.tolist() == ba.tolist()


@settings(max_examples=200, deadline=None)
@given(dyads())
def test_matches_brute_force_conjunction(d):
    lp, mp, lb, mb = d
    lg, lf, mg, mf = _dyad(lp, mp, lb, mb)
    got = mutual_gaze_frames("L", lg, lf, "M", mg, mf).tolist()
    lrows = [(int(t), p, b) for t, p, b in zip(lg.t_ns, lp, lb)]
    mrows = [(int(t), p, b) for t, p, b in zip(mg.t_ns, mp, mb)]
    assert got == mutual_instants(lrows, mrows, 60 * MS)


@settings(max_examples=200, deadline=None)
@given(dyads(), st.floats(0, 10), st.floats(0, 10))
def test_margin_monotone(d, m1, extra):
    lg, lf, mg, mf = _dyad(*d)
    small = set(mutual_gaze_frames("L", lg, lf, "M", mg, mf, m1).tolist())
    big = set(mutual_gaze_frames("L", lg, lf, "M", mg, mf, m1 + extra).tolist())
    assert small <= big


@settings(max_examples=200, deadline=None)
@given(
    st.lists(st.integers(0, 5000), max_size=60, unique=True),
    st.floats(0, 400),
    st.floats(0, 400),
    st.floats(0, 300),
)
def test_grouping_properties(ms, gap, extra, min_dur):
    t = sorted(m * MS for m in ms)
    ev = group_events(t, gap, min_dur)
    assert len(ev) == len(group_by_gap(t, gap * MS, min_dur * MS))
    assert sum(e.frame_count for e in ev) <= len(t)
    assert all(a.end_ns < b.start_ns for a, b in zip(ev, ev[1:]))
    if min_dur == 0:
        assert sum(e.frame_count for e in ev) == len(t)
        assert len(group_events(t, gap + extra, 0)) <= len(ev)
