"""Leadership metrics for one session and their serialisations.

The report holds, for the session leader: mean / total fixation time and
count per object category, the fixation transition matrix with its symmetry
index, eye-contact event counts per leader-member dyad, and conversation
category ratios. Sections whose inputs are missing are ``None``, never zero.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .conversation import CLASSES, category_ratios
from .errors import IncompleteSession
from .ingest import CATEGORIES


@dataclass(frozen=True)
class CategoryStats:
    mean_s: float
    count: int
    total_s: float


def avg_fixation_time(assignments) -> dict[str, CategoryStats]:
    """Mean fixation duration per category (seconds), with count and total.

    Categories without fixations are left out rather than reported as zero.
    """
    totals: dict[str, int] = {}
    counts: dict[str, int] = {}
    for a in assignments:
        totals[a.category] = totals.get(a.category, 0) + (a.end_ns - a.start_ns)
        counts[a.category] = counts.get(a.category, 0) + 1
    order = [c for c in CATEGORIES if c in counts] + sorted(set(counts) - set(CATEGORIES))
    out = {}
    for c in order:
        total_s = totals[c] / 1e9
        out[c] = CategoryStats(total_s / counts[c], counts[c], total_s)
    return out


@dataclass(frozen=True)
class TransitionMatrix:
    states: tuple[str, ...]
    counts: tuple[tuple[int, ...], ...]
    include_self: bool = True

    @property
    def array(self) -> np.ndarray:
        return np.array(self.counts, dtype=np.int64).reshape(len(self.states), len(self.states))

    @property
    def total(self) -> int:
        return int(self.array.sum())

    def get(self, a: str, b: str) -> int:
        return self.counts[self.states.index(a)][self.states.index(b)]

    def transposed(self) -> "TransitionMatrix":
        return TransitionMatrix(self.states, _freeze(self.array.T), self.include_self)

    def to_dict(self) -> dict:
        return {"states": list(self.states), "counts": [list(r) for r in self.counts], "include_self": self.include_self}

    @classmethod
    def from_dict(cls, d: dict) -> "TransitionMatrix":
        return cls(tuple(d["states"]), _freeze(d["counts"]), d.get("include_self", True))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["from\\to", *self.states])
        for s, row in zip(self.states, self.counts):
            w.writerow([s, *row])
        return buf.getvalue()


def _freeze(a) -> tuple[tuple[int, ...], ...]:
    return tuple(tuple(int(v) for v in row) for row in a)


def build_transition_matrix(sequence, include_self: bool = True, states: Sequence[str] = CATEGORIES) -> TransitionMatrix:
    """Count consecutive fixation-category pairs ``(c_i, c_i+1)``.

    ``sequence`` holds category names or objects with a ``category``
    attribute, in temporal order. Pairs touching a category outside
    ``states`` are skipped, so dropping a state removes exactly its row and
    column.
    """
    cats = [s if isinstance(s, str) else s.category for s in sequence]
    index = {s: i for i, s in enumerate(states)}
    m = np.zeros((len(states), len(states)), dtype=np.int64)
    for a, b in zip(cats, cats[1:]):
        if a not in index or b not in index:
            continue
        if a == b and not include_self:
            continue
        m[index[a], index[b]] += 1
    return TransitionMatrix(tuple(states), _freeze(m), include_self)


def symmetry_index(m: TransitionMatrix) -> float:
    """1 - sum_{a<b} |n_ab - n_ba| / sum_{a!=b} n_ab; 1.0 when there are no off-diagonal counts."""
    a = m.array
    off = a.sum() - np.trace(a)
    if off == 0:
        return 1.0
    iu = np.triu_indices(len(a), k=1)
    asym = np.abs(a[iu] - a.T[iu]).sum()
    return float(1.0 - asym / off)


@dataclass(frozen=True)
class LeadershipReport:
    session_id: str
    leader_id: str
    avg_fixation_s: dict | None = None
    total_fixation_s: dict | None = None
    fixation_counts: dict | None = None
    transition: TransitionMatrix | None = None
    symmetry_index: float | None = None
    ec_total: int | None = None
    ec_per_dyad: dict | None = None
    ec_instants: dict | None = None
    conv_ratios: dict | None = None
    n_leader_utterances: int | None = None
    human_scores: dict | None = None
    params: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "session_id": self.session_id,
            "leader_id": self.leader_id,
            "fixation": None
            if self.avg_fixation_s is None
            else {
                "avg_s": self.avg_fixation_s,
                "total_s": self.total_fixation_s,
                "counts": self.fixation_counts,
            },
            "transition": None
            if self.transition is None
            else {**self.transition.to_dict(), "symmetry_index": self.symmetry_index},
            "eye_contact": None
            if self.ec_total is None
            else {"total": self.ec_total, "per_dyad": self.ec_per_dyad, "instants": self.ec_instants},
            "conversation": None
            if self.conv_ratios is None
            else {"ratios_pct": self.conv_ratios, "n_leader_utterances": self.n_leader_utterances},
            "human_scores": self.human_scores,
            "params": self.params,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LeadershipReport":
        fx, tr, ec, cv = d.get("fixation"), d.get("transition"), d.get("eye_contact"), d.get("conversation")
        return cls(
            session_id=d["session_id"],
            leader_id=d["leader_id"],
            avg_fixation_s=None if fx is None else fx["avg_s"],
            total_fixation_s=None if fx is None else fx["total_s"],
            fixation_counts=None if fx is None else fx["counts"],
            transition=None if tr is None else TransitionMatrix.from_dict(tr),
            symmetry_index=None if tr is None else tr["symmetry_index"],
            ec_total=None if ec is None else ec["total"],
            ec_per_dyad=None if ec is None else ec["per_dyad"],
            ec_instants=None if ec is None else ec["instants"],
            conv_ratios=None if cv is None else cv["ratios_pct"],
            n_leader_utterances=None if cv is None else cv["n_leader_utterances"],
            human_scores=d.get("human_scores"),
            params=d.get("params", {}),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, ensure_ascii=False) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "LeadershipReport":
        return cls.from_dict(json.loads(text))

    def to_markdown(self) -> str:
        def fmt(v, nd=2):
            return "–" if v is None else f"{v:.{nd}f}"

        hs = self.human_scores or {}
        head = ["Leader", "TEAM", "Ottawa", "Patient", "Member", "Screen", "Device", "Unknown", "EC Count", *CLASSES]
        avg = self.avg_fixation_s
        row = [self.leader_id, str(hs.get("TEAM", "–")), str(hs.get("Ottawa", "–"))]
        for c in CATEGORIES:
            row.append("–" if avg is None or c not in avg else fmt(avg[c]))
        row.append("–" if self.ec_total is None else str(self.ec_total))
        for c in CLASSES:
            row.append("–" if self.conv_ratios is None else fmt(self.conv_ratios[c], 1))
        lines = [
            f"# Leadership report: session {self.session_id}",
            "",
            "Average object fixation time in seconds, eye-contact event count and conversation category ratio in percent.",
            "",
            "| " + " | ".join(head) + " |",
            "|" + "---|" * len(head),
            "| " + " | ".join(row) + " |",
            "",
            "## Fixation transition matrix",
            "",
        ]
        if self.transition is None:
            lines.append("Not available.")
        else:
            st = self.transition.states
            lines.append("| from \\ to | " + " | ".join(st) + " |")
            lines.append("|" + "---|" * (len(st) + 1))
            for s, r in zip(st, self.transition.counts):
                lines.append(f"| {s} | " + " | ".join(str(v) for v in r) + " |")
            lines.append("")
            lines.append(f"Symmetry index: {self.symmetry_index:.3f}")
        if self.ec_per_dyad is not None:
            lines += ["", "## Eye contact per dyad", "", "| member | events | mutual instants |", "|---|---|---|"]
            for mid, n in self.ec_per_dyad.items():
                lines.append(f"| {mid} | {n} | {(self.ec_instants or {}).get(mid, '–')} |")
        return "\n".join(lines) + "\n"


def assemble_report(
    session_id: str,
    leader_id: str,
    assignments=None,
    eye_contact=None,
    utterances=None,
    params: Mapping | None = None,
    human_scores: Mapping | None = None,
    include_self: bool = True,
    states: Sequence[str] = CATEGORIES,
) -> LeadershipReport:
    """Combine subsystem outputs into a report.

    Each of ``assignments`` (labelled fixations of the leader),
    ``eye_contact`` (an :class:`EyeContactSummary`) and ``utterances`` may be
    None, leaving its section null. If all three are None there is nothing to
    report and :class:`IncompleteSession` is raised.
    """
    missing = [
        name
        for name, v in (("fixations", assignments), ("eye_contact", eye_contact), ("transcript", utterances))
        if v is None
    ]
    if len(missing) == 3:
        raise IncompleteSession(missing)

    kw: dict = {}
    if assignments is not None:
        stats = avg_fixation_time(assignments)
        tm = build_transition_matrix(assignments, include_self, states)
        kw.update(
            avg_fixation_s={c: s.mean_s for c, s in stats.items()},
            total_fixation_s={c: s.total_s for c, s in stats.items()},
            fixation_counts={c: s.count for c, s in stats.items()},
            transition=tm,
            symmetry_index=symmetry_index(tm),
        )
    if eye_contact is not None:
        kw.update(
            ec_total=eye_contact.total,
            ec_per_dyad=dict(eye_contact.per_dyad),
            ec_instants=dict(eye_contact.instants_per_dyad),
        )
    if utterances is not None:
        kw.update(
            conv_ratios=category_ratios(utterances, leader_id),
            n_leader_utterances=sum(u.speaker == leader_id for u in utterances),
        )
    return LeadershipReport(
        session_id,
        leader_id,
        human_scores=None if human_scores is None else dict(human_scores),
        params=dict(params or {}),
        **kw,
    )
