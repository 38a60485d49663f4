"""Build sessions engineered to produce two given report rows, then print the markdown table.

Each leader's fixation durations, eye-contact count and utterance mix are planted
so that the analysed report lands on the target numbers to two decimals.
"""

import tempfile
from pathlib import Path

from egolead.ingest import parse_manifest
from egolead.pipeline import analyze_session
from egolead.synth import engineered_spec, generate_session

ROWS = {
    "L1": dict(
        avg_s={"patient": 2.28, "member": 1.98, "screen": 1.54, "device": 1.80, "unknown": 1.04},
        counts={"patient": 40, "member": 40, "screen": 20, "device": 20, "unknown": 5},
        ec_count=11,
        ratios_pct={"DO": 17.2, "UO": 21.6, "PL": 11.3, "TA": 3.4},
        human_scores={"TEAM": "27/44", "Ottawa": "35/35"},
    ),
    "L2": dict(
        avg_s={"patient": 1.50, "member": 1.24, "screen": 2.45, "device": 2.08, "unknown": 1.21},
        counts={"patient": 30, "member": 25, "screen": 20, "device": 20, "unknown": 30},
        ec_count=3,
        ratios_pct={"DO": 5.3, "UO": 22.1, "PL": 9.5, "TA": 1.1},
        human_scores={"TEAM": "12/44", "Ottawa": "26/35"},
    ),
}

root = Path(tempfile.mkdtemp(prefix="egolead-rows-"))
table = []
for name, row in ROWS.items():
    d = root / name
    generate_session(engineered_spec(session_id=name, seed=11, **row), d)
    rep = analyze_session(parse_manifest(d / "manifest.json")).report
    md = rep.to_markdown().splitlines()
    head_at = next(i for i, l in enumerate(md) if l.startswith("| Leader"))
    if not table:
        table += md[head_at : head_at + 2]
    # the leader column shows the wearer id; swap in the row name
    table.append(md[head_at + 2].replace("| L |", f"| {name} |", 1))

print("\n".join(table))
