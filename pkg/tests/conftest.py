import json
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from egolead.ingest import StreamMeta, make_gaze_track  # noqa: E402

ACCEPTANCE = {}


def record_acceptance(key: str, ok: bool, detail: str = ""):
    prev_ok, details = ACCEPTANCE.get(key, (True, []))
    if detail and detail not in details:
        details.append(detail)
    ACCEPTANCE[key] = (prev_ok and ok, details)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        ok, details = ACCEPTANCE[key]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {key}: {'; '.join(details)}")


META = StreamMeta(640, 480)


def track(xy, rate_hz=10.0, t0=0, meta=META, wid="W"):
    xy = np.asarray(xy, dtype=float)
    t = t0 + np.round(np.arange(len(xy)) * 1e9 / rate_hz).astype(np.int64)
    return make_gaze_track(wid, t, xy[:, 0], xy[:, 1], meta)


def write_jsonl(path, records):
    Path(path).write_text("".join(json.dumps(r) + "\n" for r in records), encoding="utf-8")
    return Path(path)


@pytest.fixture
def meta():
    return META
