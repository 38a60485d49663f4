"""Leader utterance intent labels and category ratios.

Utterances are labelled with one of four intent classes (``DO`` direct
order, ``UO`` undirected order, ``PL`` planning, ``TA`` task assignment) or
``NONE``. Labels come from the transcript itself (annotation), from a
weighted keyword/regex rule set, or from an external classifier reached over
a line-oriented JSON protocol.
"""

from __future__ import annotations

import json
import logging
import re
import subprocess
import urllib.error
import urllib.request
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Sequence

from .errors import AdapterUnreachable, BadRecord, MalformedResponse, NoLeaderUtterances
from .ingest import iter_jsonl, require, require_int

log = logging.getLogger(__name__)

CLASSES = ("DO", "UO", "PL", "TA")
LABELS = CLASSES + ("NONE",)
SOURCES = ("annotation", "rule", "external")

INSTRUCTION = (
    "You label utterances spoken by the leader of a clinical resuscitation team. "
    "Answer with exactly one label: DO (direct order addressed to a specific person), "
    "UO (undirected order, not addressed to anyone in particular), PL (planning or "
    "announcing next steps), TA (assigning a role or task to a person), or NONE "
    "(anything else). Reply with the label only."
)


@dataclass(frozen=True)
class Utterance:
    start_ns: int
    end_ns: int
    speaker: str
    text: str
    label: str | None = None
    label_source: str | None = None

    def __post_init__(self):
        if self.start_ns > self.end_ns:
            raise ValueError("utterance start_ns must not exceed end_ns")
        if self.label is not None and self.label not in LABELS:
            raise ValueError(f"label {self.label!r} not in {LABELS}")

    def to_record(self) -> dict:
        rec = {"start_ns": self.start_ns, "end_ns": self.end_ns, "speaker": self.speaker, "text": self.text}
        if self.label is not None:
            rec["label"] = self.label
            rec["label_source"] = self.label_source
        return rec


def load_transcript(path, clock_offset_ns: int = 0) -> list[Utterance]:
    path = Path(path)
    out = []
    for lineno, rec in iter_jsonl(path):
        require(rec, ("start_ns", "end_ns", "speaker", "text"), path, lineno)
        start = require_int(rec, "start_ns", path, lineno)
        end = require_int(rec, "end_ns", path, lineno)
        if start > end:
            raise BadRecord("start_ns exceeds end_ns", path, lineno)
        if not isinstance(rec["text"], str) or not isinstance(rec["speaker"], str):
            raise BadRecord("'speaker' and 'text' must be strings", path, lineno)
        label = rec.get("label")
        if label is not None and label not in LABELS:
            raise BadRecord(f"label {label!r} not in {list(LABELS)}", path, lineno)
        out.append(
            Utterance(
                start + clock_offset_ns,
                end + clock_offset_ns,
                rec["speaker"],
                rec["text"],
                label,
                "annotation" if label is not None else None,
            )
        )
    out.sort(key=lambda u: (u.start_ns, u.end_ns))
    return out


def write_utterances(utts, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for u in utts:
            fh.write(json.dumps(u.to_record(), ensure_ascii=False) + "\n")


def read_utterances(path) -> list[Utterance]:
    return [
        Utterance(r["start_ns"], r["end_ns"], r["speaker"], r["text"], r.get("label"), r.get("label_source"))
        for _, r in iter_jsonl(path)
    ]


# -- rule-based classifier ---------------------------------------------------


@dataclass(frozen=True)
class Rule:
    pattern: str
    weight: float = 1.0
    regex: bool = False
    case_sensitive: bool = False

    def __post_init__(self):
        if not self.pattern:
            raise ValueError("rule pattern must be non-empty")
        flags = 0 if self.case_sensitive else re.IGNORECASE
        src = self.pattern if self.regex else re.escape(self.pattern)
        object.__setattr__(self, "_re", re.compile(src, flags))

    def matches(self, text: str) -> bool:
        return self._re.search(text) is not None


@dataclass(frozen=True)
class RuleSet:
    rules: dict[str, tuple[Rule, ...]]
    language: str = "en"
    unreachable: tuple[str, ...] = ()
    default_class: str = field(default="NONE", init=False)

    def __post_init__(self):
        for cls in self.rules:
            if cls not in CLASSES:
                raise ValueError(f"rule class {cls!r} not in {CLASSES}")

    def validate(self) -> None:
        """Every class needs at least one rule unless declared unreachable."""
        for cls in CLASSES:
            if not self.rules.get(cls) and cls not in self.unreachable:
                raise ValueError(f"class {cls} has no rules and is not declared unreachable")

    @classmethod
    def from_dict(cls, d: dict) -> "RuleSet":
        rules = {
            c: tuple(Rule(**r) for r in d.get("rules", {}).get(c, ()))
            for c in CLASSES
            if d.get("rules", {}).get(c)
        }
        rs = cls(rules, d.get("language", "en"), tuple(d.get("unreachable", ())))
        rs.validate()
        return rs


def load_rule_set(language: str = "en", path=None) -> RuleSet:
    """Load a bundled rule set by language tag, or a custom one from ``path``."""
    if path is not None:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    else:
        try:
            text = resources.files("egolead.rules").joinpath(f"{language}.json").read_text(encoding="utf-8")
        except FileNotFoundError:
            raise ValueError(f"no bundled rule set for language {language!r}") from None
        doc = json.loads(text)
    return RuleSet.from_dict(doc)


def rule_scores(text: str, rules: RuleSet) -> dict[str, float]:
    return {c: sum(r.weight for r in rules.rules.get(c, ()) if r.matches(text)) for c in CLASSES}


def classify_rule(utt: Utterance, rules: RuleSet) -> Utterance:
    """Label by highest summed weight of matching rules; ties follow DO, UO, PL, TA order."""
    if not utt.text.strip():
        raise ValueError("cannot classify an empty utterance")
    scores = rule_scores(utt.text, rules)
    best = max(CLASSES, key=lambda c: (scores[c], -CLASSES.index(c)))
    label = best if scores[best] > 0 else "NONE"
    return replace(utt, label=label, label_source="rule")


# -- external classifier -----------------------------------------------------


@dataclass(frozen=True)
class AdapterConfig:
    """Where to reach an external classifier.

    ``transport="process"`` spawns ``command`` and exchanges one JSON object
    per line over its stdin/stdout; ``transport="http"`` POSTs the whole
    batch as a JSON array to ``{url}/classify``.
    """

    transport: str = "process"
    command: tuple[str, ...] = ()
    url: str = ""
    timeout_s: float = 60.0
    instruction: str = INSTRUCTION

    def to_dict(self) -> dict:
        return {
            "transport": self.transport,
            "command": list(self.command),
            "url": self.url,
            "timeout_s": self.timeout_s,
        }


def build_requests(utts: Sequence[Utterance], instruction: str = INSTRUCTION) -> list[dict]:
    return [{"id": i, "text": u.text, "labels": list(LABELS), "instruction": instruction} for i, u in enumerate(utts)]


def _exchange_process(reqs, cfg: AdapterConfig) -> list:
    if not cfg.command:
        raise AdapterUnreachable("no adapter command configured")
    payload = "".join(json.dumps(r, ensure_ascii=False) + "\n" for r in reqs)
    try:
        proc = subprocess.run(
            list(cfg.command), input=payload, capture_output=True, text=True, timeout=cfg.timeout_s, encoding="utf-8"
        )
    except (OSError, subprocess.TimeoutExpired) as exc:
        raise AdapterUnreachable(f"adapter process failed: {exc}") from None
    if proc.returncode != 0:
        raise AdapterUnreachable(f"adapter exited with status {proc.returncode}: {proc.stderr.strip()[:200]}")
    out = []
    for n, line in enumerate(proc.stdout.splitlines(), 1):
        if not line.strip():
            continue
        try:
            out.append(json.loads(line))
        except json.JSONDecodeError:
            raise MalformedResponse(f"adapter output line {n} is not JSON") from None
    return out


def _exchange_http(reqs, cfg: AdapterConfig) -> list:
    url = cfg.url.rstrip("/") + "/classify"
    body = json.dumps(reqs, ensure_ascii=False).encode("utf-8")
    req = urllib.request.Request(url, data=body, headers={"Content-Type": "application/json"}, method="POST")
    try:
        with urllib.request.urlopen(req, timeout=cfg.timeout_s) as resp:
            raw = resp.read()
    except (urllib.error.URLError, OSError) as exc:
        raise AdapterUnreachable(f"POST {url} failed: {exc}") from None
    try:
        out = json.loads(raw)
    except json.JSONDecodeError:
        raise MalformedResponse("adapter response is not JSON") from None
    if not isinstance(out, list):
        raise MalformedResponse("adapter response must be a JSON array")
    return out


def classify_external(utts: Sequence[Utterance], cfg: AdapterConfig) -> list[Utterance]:
    """Label every utterance through the external adapter, preserving order.

    Labels outside the closed set become ``NONE`` with a logged warning. On
    any transport or protocol error the input is returned untouched via the
    raised exception (nothing is partially relabelled).
    """
    reqs = build_requests(utts, cfg.instruction)
    if not reqs:
        return []
    if cfg.transport == "process":
        resps = _exchange_process(reqs, cfg)
    elif cfg.transport == "http":
        resps = _exchange_http(reqs, cfg)
    else:
        raise ValueError(f"unknown transport {cfg.transport!r}")

    by_id = {}
    for r in resps:
        if not isinstance(r, dict) or "id" not in r or "label" not in r:
            raise MalformedResponse(f"response {r!r} lacks 'id' or 'label'")
        by_id[r["id"]] = r["label"]
    missing = [q["id"] for q in reqs if q["id"] not in by_id]
    if missing:
        raise MalformedResponse(f"no response for request ids {missing[:10]}")

    out = []
    for q, u in zip(reqs, utts):
        label = by_id[q["id"]]
        if label not in LABELS:
            log.warning("adapter returned %r for utterance %d; using NONE", label, q["id"])
            label = "NONE"
        out.append(replace(u, label=label, label_source="external"))
    return out


def category_ratios(utts: Sequence[Utterance], leader_id: str) -> dict[str, float]:
    """Percentage of the leader's utterances in each class.

    The denominator counts every leader utterance, including ``NONE`` and
    unlabelled ones, so the four ratios need not sum to 100.
    """
    mine = [u for u in utts if u.speaker == leader_id]
    if not mine:
        raise NoLeaderUtterances(f"no utterances by leader {leader_id!r}")
    n = len(mine)
    return {c: 100.0 * sum(u.label == c for u in mine) / n for c in CLASSES}
