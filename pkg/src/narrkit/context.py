"""Narrative sequences and rolling-context conditioning windows.

A narrative sequence is an ordered list of steps, each holding an action,
a caption, an embedding reference and a keyframe reference. From it we
derive two export products:

* cumulative-history training records: for each step, the interleaved
  action / caption / embedding blocks, truncated to the sequence's context
  window;
* conditioning windows: 2k-step views where the first k steps supply
  reference frames and the last k are render targets. Windows advance with
  stride k, so each window's targets become the next window's references
  (the rolling contract). When the tail of a sequence leaves fewer than k
  fresh steps, a final partial window re-uses the last reference block and
  is flagged as such.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Iterator

__all__ = [
    "StepRecord",
    "NarrativeSequence",
    "HistoryRecord",
    "ConditioningWindow",
    "build_history",
    "tile_captions",
    "build_windows",
    "window_count",
    "export_windows",
    "export_training_records",
    "parse_training_records",
    "read_step_sequences",
]

DEFAULT_CONTEXT_WINDOW = 8


@dataclass(frozen=True)
class StepRecord:
    index: int  # 1-based position within the sequence
    action: str
    caption: str
    embedding_id: str
    keyframe_id: str


@dataclass
class NarrativeSequence:
    sequence_id: str
    steps: list[StepRecord]
    context_window: int = DEFAULT_CONTEXT_WINDOW

    def __post_init__(self):
        if not self.steps:
            raise ValueError(f"sequence '{self.sequence_id}' has no steps")
        if self.context_window < 1:
            raise ValueError(f"context_window must be >= 1, got {self.context_window}")
        for pos, step in enumerate(self.steps, start=1):
            if step.index != pos:
                raise ValueError(
                    f"sequence '{self.sequence_id}': step indices must be "
                    f"contiguous from 1, found {step.index} at position {pos}"
                )

    def __len__(self) -> int:
        return len(self.steps)


@dataclass(frozen=True)
class HistoryRecord:
    """Everything generated before step t, as three aligned prefix lists."""

    t: int
    actions: tuple[str, ...]
    captions: tuple[str, ...]
    embedding_ids: tuple[str, ...]


def build_history(seq: NarrativeSequence, t: int) -> HistoryRecord:
    if not 1 <= t <= len(seq):
        raise ValueError(f"t must be within 1..{len(seq)}, got {t}")
    prefix = seq.steps[: t - 1]
    return HistoryRecord(
        t,
        tuple(s.action for s in prefix),
        tuple(s.caption for s in prefix),
        tuple(s.embedding_id for s in prefix),
    )


def tile_captions(captions: Iterable[str], separator: str = "\n") -> str:
    """Join captions in temporal order into one conditioning text.

    Splitting on the separator recovers the inputs as long as no caption
    contains it.
    """
    items = list(captions)
    if not items:
        raise ValueError("need at least one caption to tile")
    return separator.join(items)


@dataclass(frozen=True)
class ConditioningWindow:
    """One render window: k reference steps followed by the target steps.

    ``partial`` marks the trailing window that re-uses the previous
    reference block because fewer than k fresh steps remained; only then
    can the target block be shorter than k.
    """

    window_index: int
    k: int
    ref_step_indices: tuple[int, ...]
    target_step_indices: tuple[int, ...]
    reference_frames: tuple[str, ...]
    target_frames: tuple[str, ...]
    reference_embeddings: tuple[str, ...]
    target_embeddings: tuple[str, ...]
    tiled_caption: str
    partial: bool = field(default=False)


def _make_window(
    index: int, k: int, refs: list[StepRecord], targets: list[StepRecord], partial: bool
) -> ConditioningWindow:
    return ConditioningWindow(
        window_index=index,
        k=k,
        ref_step_indices=tuple(s.index for s in refs),
        target_step_indices=tuple(s.index for s in targets),
        reference_frames=tuple(s.keyframe_id for s in refs),
        target_frames=tuple(s.keyframe_id for s in targets),
        reference_embeddings=tuple(s.embedding_id for s in refs),
        target_embeddings=tuple(s.embedding_id for s in targets),
        tiled_caption=tile_captions([s.caption for s in refs + targets]),
        partial=partial,
    )


def build_windows(seq: NarrativeSequence, k: int) -> list[ConditioningWindow]:
    """Slice a sequence into rolling conditioning windows of context length k.

    Windows start at step 1 and advance with stride k; window i's targets
    are window i+1's references. Requires 1 <= k <= 3 and at least 2k steps.
    """
    if not 1 <= k <= 3:
        raise ValueError(f"context length k must be in 1..3, got {k}")
    n = len(seq)
    if n < 2 * k:
        raise ValueError(
            f"sequence '{seq.sequence_id}' has {n} steps; need at least {2 * k} "
            f"for k={k}"
        )
    steps = seq.steps
    windows: list[ConditioningWindow] = []
    start = 0
    while start + 2 * k <= n:
        windows.append(
            _make_window(
                len(windows),
                k,
                steps[start : start + k],
                steps[start + k : start + 2 * k],
                partial=False,
            )
        )
        start += k
    covered = start + k  # highest step index already rendered
    if covered < n:
        windows.append(
            _make_window(
                len(windows),
                k,
                steps[start : start + k],
                steps[covered:n],
                partial=True,
            )
        )
    return windows


def window_count(n_steps: int, k: int) -> int:
    """Number of windows build_windows emits for a sequence of n_steps."""
    if n_steps < 2 * k:
        raise ValueError(f"need at least {2 * k} steps for k={k}")
    return -(-(n_steps - 2 * k) // k) + 1


def export_windows(
    seq: NarrativeSequence, windows: Iterable[ConditioningWindow]
) -> Iterator[str]:
    """Serialize windows as line-delimited records for downstream renderers."""
    for w in windows:
        yield json.dumps(
            {
                "sequence_id": seq.sequence_id,
                "window_index": w.window_index,
                "k": w.k,
                "ref_step_indices": list(w.ref_step_indices),
                "target_step_indices": list(w.target_step_indices),
                "tiled_caption": w.tiled_caption,
                "embedding_ids": list(w.reference_embeddings + w.target_embeddings),
                "partial": w.partial,
            }
        )


def export_training_records(seq: NarrativeSequence) -> list[dict]:
    """Flatten a sequence into the interleaved supervision stream.

    For each step, in order: an action block, a caption block, then the
    embedding reference. Sequences longer than the context window are
    truncated to their last ``context_window`` steps, keeping original
    indices.
    """
    steps = seq.steps
    if len(steps) > seq.context_window:
        steps = steps[-seq.context_window :]
    out: list[dict] = []
    for step in steps:
        out.append({"kind": "action", "t": step.index, "text": step.action})
        out.append({"kind": "caption", "t": step.index, "text": step.caption})
        out.append(
            {"kind": "embedding", "t": step.index, "embedding_id": step.embedding_id}
        )
    return out


def parse_training_records(records: Iterable[dict]) -> list[tuple[int, str, str, str]]:
    """Regroup an interleaved stream into (t, action, caption, embedding_id).

    The inverse of export_training_records up to keyframe references, which
    are not part of the supervision stream.
    """
    out: list[tuple[int, str, str, str]] = []
    pending: list[dict] = []
    for rec in records:
        pending.append(rec)
        if len(pending) == 3:
            a, c, e = pending
            if (a["kind"], c["kind"], e["kind"]) != ("action", "caption", "embedding"):
                raise ValueError(
                    f"malformed step triple at t={a.get('t')}: "
                    f"{[r['kind'] for r in pending]}"
                )
            if not (a["t"] == c["t"] == e["t"]):
                raise ValueError(f"step indices disagree within triple: {pending}")
            out.append((a["t"], a["text"], c["text"], e["embedding_id"]))
            pending = []
    if pending:
        raise ValueError(f"dangling records at end of stream: {pending}")
    return out


def read_step_sequences(
    lines: Iterable[str], context_window: int = DEFAULT_CONTEXT_WINDOW
) -> dict[str, NarrativeSequence]:
    """Read line-delimited step records grouped into sequences.

    Each record is {sequence_id, index, action, caption, embedding_id,
    keyframe_id}. Steps may arrive in any order; they are sorted by index
    per sequence and must then be contiguous from 1.
    """
    grouped: dict[str, list[StepRecord]] = {}
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line:
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ValueError(f"line {lineno}: invalid JSON: {exc.msg}") from exc
        try:
            step = StepRecord(
                int(rec["index"]),
                str(rec["action"]),
                str(rec["caption"]),
                str(rec["embedding_id"]),
                str(rec["keyframe_id"]),
            )
            grouped.setdefault(str(rec["sequence_id"]), []).append(step)
        except KeyError as exc:
            raise ValueError(f"line {lineno}: missing field {exc}") from exc
    sequences: dict[str, NarrativeSequence] = {}
    for sequence_id in sorted(grouped):
        steps = sorted(grouped[sequence_id], key=lambda s: s.index)
        sequences[sequence_id] = NarrativeSequence(sequence_id, steps, context_window)
    return sequences
