"""Corpus profiling: histograms and summary aggregates.

Histogram bins are half-open [lo, hi); values below the first edge land in
``underflow`` and values at or above the last edge in ``overflow``, so the
total count is always conserved. Medians take the lower middle element for
even sample sizes, keeping summaries deterministic without interpolation.
"""

from __future__ import annotations

import statistics
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

from .manifest import DatasetManifest

__all__ = [
    "Histogram",
    "SummaryStats",
    "TextCounter",
    "histogram",
    "summarize",
    "clip_length_summary",
    "clips_per_video_summary",
    "word_count",
    "text_length_stats",
    "dataset_report",
    "DEFAULT_EDGES",
]


@dataclass(frozen=True)
class Histogram:
    bin_edges: tuple[float, ...]
    counts: tuple[int, ...]
    underflow: int
    overflow: int

    @property
    def total(self) -> int:
        return sum(self.counts) + self.underflow + self.overflow

    def to_dict(self) -> dict:
        return {
            "bin_edges": list(self.bin_edges),
            "counts": list(self.counts),
            "underflow": self.underflow,
            "overflow": self.overflow,
        }


@dataclass(frozen=True)
class SummaryStats:
    n: int
    mean: float
    median: float
    min: float
    max: float

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "mean": self.mean,
            "median": self.median,
            "min": self.min,
            "max": self.max,
        }


def histogram(values: Iterable[float], bin_edges: Sequence[float]) -> Histogram:
    """Count values into half-open bins defined by strictly increasing edges."""
    edges = np.asarray(bin_edges, dtype=float)
    if edges.ndim != 1 or edges.size < 2:
        raise ValueError("need at least two bin edges")
    if not np.all(np.diff(edges) > 0):
        raise ValueError("bin edges must be strictly increasing")
    data = np.asarray(list(values), dtype=float)
    k = edges.size - 1
    if data.size == 0:
        return Histogram(tuple(edges.tolist()), (0,) * k, 0, 0)
    # searchsorted(right) maps edge values into the bin they open
    pos = np.searchsorted(edges, data, side="right")
    slots = np.bincount(pos, minlength=k + 2)
    return Histogram(
        tuple(edges.tolist()),
        tuple(int(c) for c in slots[1 : k + 1]),
        int(slots[0]),
        int(slots[k + 1]),
    )


def summarize(values: Iterable[float]) -> SummaryStats:
    data = list(values)
    if not data:
        raise ValueError("cannot summarize an empty collection")
    return SummaryStats(
        n=len(data),
        mean=statistics.fmean(data),
        median=float(statistics.median_low(data)),
        min=float(min(data)),
        max=float(max(data)),
    )


def clip_length_summary(m: DatasetManifest) -> SummaryStats:
    """Mean/median/min/max of clip lengths in seconds over the whole corpus."""
    lengths = [clip.interval.length_s for clip in m.iter_clips()]
    if not lengths:
        raise ValueError("manifest has no clips")
    return summarize(lengths)


def clips_per_video_summary(m: DatasetManifest) -> SummaryStats:
    if not m.videos:
        raise ValueError("manifest has no videos")
    return summarize([len(entry.clips) for entry in m.videos.values()])


class TextCounter(Enum):
    WORDS = "words"
    PRECOMPUTED_TOKENS = "tokens"


def word_count(text: str) -> int:
    """Number of maximal whitespace-separated runs."""
    return len(text.split())


def text_length_stats(
    records: Sequence[str] | None,
    counter: TextCounter,
    bin_edges: Sequence[float],
    token_counts: Sequence[int] | None = None,
) -> tuple[Histogram, SummaryStats]:
    """Length distribution of a text collection.

    WORDS counts whitespace-separated runs of each record. Token counting is
    external to this package (tokenizers live elsewhere), so
    PRECOMPUTED_TOKENS takes the integer counts as supplied.
    """
    if counter is TextCounter.WORDS:
        if records is None:
            raise ValueError("WORDS counter needs the text records")
        lengths = [word_count(t) for t in records]
    else:
        if token_counts is None:
            raise ValueError("PRECOMPUTED_TOKENS selected but no counts supplied")
        lengths = [int(c) for c in token_counts]
    if not lengths:
        raise ValueError("no records to profile")
    return histogram(lengths, bin_edges), summarize(lengths)


DEFAULT_EDGES: dict[str, list[float]] = {
    "video_length_s": [float(e) for e in range(0, 630, 30)],
    "clip_length_s": [float(e) for e in range(0, 65, 5)],
    "clips_per_video": [float(e) for e in range(0, 32, 2)],
    "action_words": [float(e) for e in range(0, 105, 5)],
    "caption_words": [float(e) for e in range(0, 160, 10)],
    "action_tokens": [float(e) for e in range(0, 170, 10)],
    "caption_tokens": [float(e) for e in range(0, 210, 10)],
}


def _entry(values, edges) -> dict:
    section = {"histogram": histogram(values, edges).to_dict()}
    section["summary"] = summarize(values).to_dict() if values else None
    return section


def dataset_report(
    m: DatasetManifest,
    edges: dict[str, Sequence[float]] | None = None,
    caption_tokens: Sequence[int] | None = None,
    action_tokens: Sequence[int] | None = None,
) -> dict:
    """Build the full profiling document for a manifest.

    Returns a plain dict ready for JSON emission: named histogram+summary
    sections plus corpus-level counts. Token sections appear only when the
    corresponding precomputed counts are supplied.
    """
    cfg = dict(DEFAULT_EDGES)
    if edges:
        cfg.update(edges)

    durations = [
        e.duration_s for e in m.videos.values() if e.duration_s is not None
    ]
    clip_lengths = [c.interval.length_s for c in m.iter_clips()]
    clips_per_video = [len(e.clips) for e in m.videos.values()]
    caption_words = [word_count(c.caption) for c in m.iter_clips()]
    action_words = [word_count(a.description) for a in m.iter_actions()]

    report = {
        "n_videos": m.n_videos,
        "n_clips": m.n_clips,
        "n_actions": m.n_actions,
        "n_videos_with_duration": len(durations),
        "video_length_s": _entry(durations, cfg["video_length_s"]),
        "clip_length_s": _entry(clip_lengths, cfg["clip_length_s"]),
        "clips_per_video": _entry(clips_per_video, cfg["clips_per_video"]),
        "action_words": _entry(action_words, cfg["action_words"]),
        "caption_words": _entry(caption_words, cfg["caption_words"]),
    }
    if action_tokens is not None:
        hist, summary = text_length_stats(
            None, TextCounter.PRECOMPUTED_TOKENS, cfg["action_tokens"], action_tokens
        )
        report["action_tokens"] = {
            "histogram": hist.to_dict(),
            "summary": summary.to_dict(),
        }
    if caption_tokens is not None:
        hist, summary = text_length_stats(
            None, TextCounter.PRECOMPUTED_TOKENS, cfg["caption_tokens"], caption_tokens
        )
        report["caption_tokens"] = {
            "histogram": hist.to_dict(),
            "summary": summary.to_dict(),
        }
    return report
