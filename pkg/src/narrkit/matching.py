"""Temporal action-to-clip matching over a manifest.

A clip and an action pair up when either of two predicates fires on their
time intervals:

* start-aligned rule (RuleA): the start times differ by less than
  ``max_start_diff_s``, the clip outlasts the action, and interval IoU
  exceeds ``iou_low``;
* high-overlap rule (RuleB): interval IoU exceeds ``iou_high``.

All comparisons are strict, so boundary values never match. When both rules
fire the pairing is reported as RuleB, the stronger evidence. IoU here uses
the hull span max(end) - min(start) as the denominator rather than the
set-theoretic union; the thresholds were tuned against that definition, so
it is kept verbatim.

Note the two rule thresholds ship with defaults 0.2 and 0.5. Published
descriptions of this procedure disagree on whether the low threshold is
0.2 or 0.25; the executable definition uses 0.2 and that is the default
here, with ``iou_low`` configurable.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Iterator

from .manifest import ActionRecord, ClipRecord, DatasetManifest, TimeInterval, VideoEntry

__all__ = [
    "MatchRule",
    "MatchThresholds",
    "MatchDecision",
    "MatchRecord",
    "FilterPolicy",
    "FilterResult",
    "interval_iou",
    "match_clip_action",
    "match_dataset",
    "filter_matched",
    "format_match_record",
    "parse_match_records",
]


class MatchRule(Enum):
    """Which predicate produced a match. Values double as the wire names."""

    RULE_A = "RuleA"  # start-aligned: close starts, clip outlasts action, IoU > low
    RULE_B = "RuleB"  # high overlap: IoU > high


@dataclass(frozen=True)
class MatchThresholds:
    max_start_diff_s: float = 5.0
    iou_low: float = 0.2
    iou_high: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.iou_low <= self.iou_high <= 1.0:
            raise ValueError(
                f"need 0 <= iou_low <= iou_high <= 1, got "
                f"{self.iou_low}/{self.iou_high}"
            )
        if self.max_start_diff_s < 0:
            raise ValueError(f"max_start_diff_s must be >= 0, got {self.max_start_diff_s}")


@dataclass(frozen=True)
class MatchDecision:
    iou: float
    start_diff_s: float
    rule: MatchRule


@dataclass(frozen=True)
class MatchRecord:
    video_id: str
    clip_id: str
    action_index: int
    iou: float
    start_diff_s: float
    rule: MatchRule


def interval_iou(a: TimeInterval, b: TimeInterval) -> float:
    """Intersection over hull span of two intervals, in [0, 1].

    The denominator is max(end) - min(start), the smallest interval covering
    both inputs. Symmetric, translation invariant, and exactly 1.0 only for
    identical intervals.
    """
    intersection = min(a.end_s, b.end_s) - max(a.start_s, b.start_s)
    if intersection <= 0:
        return 0.0
    hull = max(a.end_s, b.end_s) - min(a.start_s, b.start_s)
    if hull <= 0:
        return 0.0
    return intersection / hull


def match_clip_action(
    clip: ClipRecord, action: ActionRecord, th: MatchThresholds | None = None
) -> MatchDecision | None:
    """Evaluate both match rules for one clip/action pair.

    Returns None when neither rule fires. The pair must belong to the same
    video; matching never crosses video boundaries.
    """
    th = th or MatchThresholds()
    if clip.video_id != action.video_id:
        raise ValueError(
            f"cannot match across videos: clip '{clip.video_id}' vs "
            f"action '{action.video_id}'"
        )
    iou = interval_iou(clip.interval, action.interval)
    start_diff = abs(clip.interval.start_s - action.interval.start_s)
    rule_b = iou > th.iou_high
    rule_a = (
        start_diff < th.max_start_diff_s
        and clip.interval.end_s > action.interval.end_s
        and iou > th.iou_low
    )
    if rule_b:
        return MatchDecision(iou, start_diff, MatchRule.RULE_B)
    if rule_a:
        return MatchDecision(iou, start_diff, MatchRule.RULE_A)
    return None


def _match_video(
    video_id: str, entry: VideoEntry, actions: list[ActionRecord], th: MatchThresholds
) -> list[MatchRecord]:
    found = []
    clips = sorted(entry.clips, key=lambda c: c.interval.start_s)
    for clip in clips:
        for idx, action in enumerate(actions):
            decision = match_clip_action(clip, action, th)
            if decision is not None:
                found.append(
                    MatchRecord(
                        video_id,
                        clip.clip_id,
                        idx,
                        decision.iou,
                        decision.start_diff_s,
                        decision.rule,
                    )
                )
    return found


def match_dataset(
    m: DatasetManifest, th: MatchThresholds | None = None, threads: int = 1
) -> list[MatchRecord]:
    """Run pairwise matching over every video in the manifest.

    Output is deterministically ordered by (video_id, clip start, action
    index) regardless of ``threads``; workers process whole videos and the
    merge respects the fixed video order.
    """
    th = th or MatchThresholds()
    jobs = [
        (video_id, m.videos[video_id], m.actions.get(video_id, []))
        for video_id in sorted(m.videos)
    ]
    if threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            per_video = list(
                pool.map(lambda j: _match_video(j[0], j[1], j[2], th), jobs)
            )
    else:
        per_video = [_match_video(v, e, a, th) for v, e, a in jobs]
    merged: list[MatchRecord] = []
    for records in per_video:
        merged.extend(records)
    return merged


class FilterPolicy(Enum):
    KEEP_ALL = "all"
    BEST_PER_CLIP = "best"


@dataclass
class FilterResult:
    """Filtered sub-manifest plus the surviving clip -> action assignment.

    ``assignment`` maps (video_id, clip_id) to the retained action indices.
    Under BEST_PER_CLIP each list has exactly one element.
    """

    manifest: DatasetManifest
    assignment: dict[tuple[str, str], list[int]]


def filter_matched(
    m: DatasetManifest,
    matches: Iterable[MatchRecord],
    policy: FilterPolicy = FilterPolicy.BEST_PER_CLIP,
) -> FilterResult:
    """Drop unmatched clips and resolve multi-matches per ``policy``.

    BEST_PER_CLIP keeps the highest-IoU action per clip, breaking ties by
    earliest action start and then lowest action index. Videos and actions
    pass through untouched; only clips are filtered, so every surviving
    record existed in the input.
    """
    by_clip: dict[tuple[str, str], list[MatchRecord]] = {}
    for rec in matches:
        entry = m.videos.get(rec.video_id)
        if entry is None:
            raise ValueError(f"match references unknown video '{rec.video_id}'")
        if all(c.clip_id != rec.clip_id for c in entry.clips):
            raise ValueError(
                f"match references unknown clip '{rec.clip_id}' in video "
                f"'{rec.video_id}'"
            )
        actions = m.actions.get(rec.video_id, [])
        if not 0 <= rec.action_index < len(actions):
            raise ValueError(
                f"match references action index {rec.action_index} out of range "
                f"for video '{rec.video_id}'"
            )
        by_clip.setdefault((rec.video_id, rec.clip_id), []).append(rec)

    def best(candidates: list[MatchRecord]) -> MatchRecord:
        actions = m.actions[candidates[0].video_id]
        return min(
            candidates,
            key=lambda r: (
                -r.iou,
                actions[r.action_index].interval.start_s,
                r.action_index,
            ),
        )

    filtered = DatasetManifest(split_tag=m.split_tag)
    assignment: dict[tuple[str, str], list[int]] = {}
    for video_id, entry in m.videos.items():
        kept = []
        for clip in entry.clips:
            key = (video_id, clip.clip_id)
            candidates = by_clip.get(key)
            if not candidates:
                continue
            kept.append(clip)
            if policy is FilterPolicy.BEST_PER_CLIP:
                assignment[key] = [best(candidates).action_index]
            else:
                assignment[key] = sorted(r.action_index for r in candidates)
        filtered.videos[video_id] = VideoEntry(entry.duration_s, kept)
    for video_id, records in m.actions.items():
        filtered.actions[video_id] = records
    return FilterResult(filtered, assignment)


def format_match_record(rec: MatchRecord) -> str:
    """One wire line per match; ratios carry nine decimal digits."""
    return (
        "{"
        f'"video_id": {json.dumps(rec.video_id)}, '
        f'"clip_id": {json.dumps(rec.clip_id)}, '
        f'"action_index": {rec.action_index}, '
        f'"iou": {rec.iou:.9f}, '
        f'"start_diff_s": {rec.start_diff_s:.9f}, '
        f'"rule": "{rec.rule.value}"'
        "}"
    )


def parse_match_records(lines: Iterable[str]) -> Iterator[MatchRecord]:
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line:
            continue
        try:
            rec = json.loads(line)
            yield MatchRecord(
                rec["video_id"],
                rec["clip_id"],
                int(rec["action_index"]),
                float(rec["iou"]),
                float(rec["start_diff_s"]),
                MatchRule(rec["rule"]),
            )
        except (json.JSONDecodeError, KeyError, ValueError) as exc:
            raise ValueError(f"bad match record at line {lineno}: {exc}") from exc
