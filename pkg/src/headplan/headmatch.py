"""Head/object-distribution matching.

A detector head H_i sits on a feature map downsampled by 2**i.  For an
original image width w_o resized to w_in, the box-area interval served
by H_i has lower bound ceil(2**i * w_o / w_in) ** 2 (in squared
original-image pixels); intervals are half-open and the last one is
unbounded above.  Bucketing every ground-truth box area into these
intervals yields per-head matching ratios, from which two configuration
rules are derived: the full matched span, and a two-head cross-scale
pair (lowest matched head plus the head two stride levels deeper).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

from .annotations import Dataset

HEAD_INDICES = (1, 2, 3, 4, 5)
DEFAULT_TAU = 0.01


class EmptyDatasetError(ValueError):
    """Matching needs at least one box."""


class NoMatchedHeadError(ValueError):
    """No head reaches the requested matching-ratio threshold."""


class SpanTooSmallError(ValueError):
    """Cross-scale pairing needs a matched span of at least two heads."""


def _ceil_div(a: int, b: int) -> int:
    return -(-a // b)


@dataclass(frozen=True)
class ScaleRangeTable:
    """Per-head area intervals for one (width_o, width_in) pair.

    bounds[i-1] is the lower bound of head i's interval; head i covers
    [bounds[i-1], bounds[i]) for i in 1..4 and [bounds[4], inf) for i=5.
    Areas below bounds[0] match no head (residual bucket 0).
    """

    width_o: int
    width_in: int
    bounds: tuple[int, int, int, int, int]

    def bucket(self, area: float) -> int:
        """Head index 1..5 for this area, or 0 for the sub-range residual."""
        if area < self.bounds[0]:
            return 0
        for i in range(1, 5):
            if area < self.bounds[i]:
                return i
        return 5


def scale_ranges(width_o: int, width_in: int) -> ScaleRangeTable:
    """Exact integer evaluation of the per-head area bounds."""
    for name, v in (("width_o", width_o), ("width_in", width_in)):
        if not isinstance(v, int) or isinstance(v, bool):
            raise TypeError(f"{name} must be an integer, got {v!r}")
        if v < 1:
            raise ValueError(f"{name} must be >= 1, got {v}")
    bounds = tuple(_ceil_div((1 << i) * width_o, width_in) ** 2 for i in range(1, 6))
    return ScaleRangeTable(width_o, width_in, bounds)


@dataclass(frozen=True)
class MatchHistogram:
    """Per-head box counts and ratios at one input width."""

    width_in: int
    counts: tuple[int, int, int, int, int]
    residual_small: int
    total: int

    def __post_init__(self):
        if sum(self.counts) + self.residual_small != self.total:
            raise ValueError("histogram counts do not sum to the total")

    @property
    def ratios(self) -> tuple[float, ...]:
        return tuple(c / self.total for c in self.counts)

    @property
    def residual_ratio(self) -> float:
        return self.residual_small / self.total

    def merge(self, other: "MatchHistogram") -> "MatchHistogram":
        """Component-wise addition; partition merging is order-independent."""
        if other.width_in != self.width_in:
            raise ValueError("cannot merge histograms at different widths")
        return MatchHistogram(
            self.width_in,
            tuple(a + b for a, b in zip(self.counts, other.counts)),
            self.residual_small + other.residual_small,
            self.total + other.total,
        )


def match_histogram(d: Dataset, width_in: int) -> MatchHistogram:
    """Bucket every box area using its own image's width ratio."""
    if d.n_boxes == 0:
        raise EmptyDatasetError("dataset has no boxes")
    tables: dict[int, ScaleRangeTable] = {}
    counts = [0] * 6
    for img, box in d.iter_boxes():
        table = tables.get(img.width_o)
        if table is None:
            table = tables[img.width_o] = scale_ranges(img.width_o, width_in)
        counts[table.bucket(box.area())] += 1
    return MatchHistogram(width_in, tuple(counts[1:]), counts[0], sum(counts))


@dataclass(frozen=True)
class HeadConfig:
    """An ordered head selection plus how it was arrived at."""

    heads: tuple[int, ...]
    rationale: str  # matched_strategy | cross_scale | manual
    notes: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.heads:
            raise ValueError("head configuration must be non-empty")
        if list(self.heads) != sorted(set(self.heads)):
            raise ValueError("heads must be strictly ascending and unique")
        if any(h not in HEAD_INDICES for h in self.heads):
            raise ValueError(f"head indices must be in {HEAD_INDICES}")

    @property
    def is_contiguous(self) -> bool:
        return self.heads == tuple(range(self.heads[0], self.heads[-1] + 1))

    def label(self) -> str:
        return ",".join(f"H{h}" for h in self.heads)


def recommend_matched(h: MatchHistogram, tau: float = DEFAULT_TAU) -> HeadConfig:
    """Heads whose matching ratio reaches tau, as one contiguous span.

    An interior head below tau stays in the span (dropping it would leave
    a hole in the scale coverage) but is flagged in the notes.
    """
    if not 0.0 < tau < 1.0:
        raise ValueError(f"tau must be in (0, 1), got {tau}")
    ratios = h.ratios
    selected = [i for i, r in zip(HEAD_INDICES, ratios) if r >= tau]
    if not selected:
        raise NoMatchedHeadError(f"no head reaches tau={tau}")
    lo, hi = selected[0], selected[-1]
    notes = tuple(
        f"H{i} ratio {ratios[i - 1]:.6g} below tau but inside the matched span"
        for i in range(lo, hi + 1)
        if i not in selected
    )
    return HeadConfig(tuple(range(lo, hi + 1)), "matched_strategy", notes)


def recommend_cross_scale(matched: HeadConfig) -> HeadConfig:
    """Two-head reduction: lowest matched head plus the one two levels deeper.

    The second head is capped at the top of the matched span, so a span of
    exactly two heads maps to itself.
    """
    if not matched.is_contiguous:
        raise ValueError("matched configuration must be a contiguous span")
    if len(matched.heads) < 2:
        raise SpanTooSmallError(
            f"matched span of size 1 ({matched.label()}): cannot form a cross-scale pair"
        )
    a = matched.heads[0]
    b = min(a + 2, matched.heads[-1])
    return HeadConfig((a, b), "cross_scale")


def sweep_resolutions(d: Dataset, widths: Sequence[int]) -> list[tuple[int, MatchHistogram]]:
    """One histogram per requested width, in request order (duplicates kept)."""
    return [(w, match_histogram(d, w)) for w in widths]


def histogram_rows(pairs: Iterable[tuple[int, MatchHistogram]]) -> list[tuple]:
    """Flatten (width, histogram) pairs to plot-ready (width, bucket, count, ratio) rows."""
    rows = []
    for width, hist in pairs:
        for i, (c, r) in enumerate(zip(hist.counts, hist.ratios), start=1):
            rows.append((width, f"H{i}", c, r))
        rows.append((width, "residual", hist.residual_small, hist.residual_ratio))
    return rows
