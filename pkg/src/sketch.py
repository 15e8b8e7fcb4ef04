#!/usr/bin/env python3
"""
Vector Sketch Model
Stroke-3 sketches, their stroke-segment table, segment removal and rasterization
"""

import logging
from dataclasses import dataclass
from typing import Iterator, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from .errors import ArgumentError, SegmentRangeError

logger = logging.getLogger(__name__)

# data-segments per stroke-segment
SEGMENT_SIZE = 5


class StrokePoint(NamedTuple):
    """One data-segment: offset from the previous point plus pen-lift flag"""
    dx: float
    dy: float
    pen_lift: int


@dataclass(frozen=True, eq=False)
class VectorSketch:
    """
    Immutable stroke-3 sketch.

    points is an (N, 3) float array of (dx, dy, pen_lift) rows. The first
    row is an offset from the origin; pen_lift = 1 ends the current stroke.
    """
    points: np.ndarray
    label: Optional[int] = None
    category: Optional[str] = None
    key: Optional[str] = None

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64)
        if pts.size == 0:
            pts = np.zeros((0, 3), dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ArgumentError(f"sketch points must be (N, 3), got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ArgumentError("sketch offsets must be finite")
        pens = pts[:, 2]
        if not np.all((pens == 0) | (pens == 1)):
            raise ArgumentError("pen_lift must be 0 or 1")
        if len(pts) and pens[-1] != 1:
            raise ArgumentError("final point of a sketch must lift the pen")
        pts.setflags(write=False)
        object.__setattr__(self, 'points', pts)

    @classmethod
    def from_points(cls, points: Sequence[Sequence[float]], **meta) -> 'VectorSketch':
        return cls(np.asarray(points, dtype=np.float64).reshape(-1, 3), **meta)

    def with_points(self, points: np.ndarray) -> 'VectorSketch':
        """Same label/category/key, new geometry"""
        return VectorSketch(points, label=self.label, category=self.category, key=self.key)

    def with_label(self, label: Optional[int], category: Optional[str] = None) -> 'VectorSketch':
        return VectorSketch(self.points, label=label,
                            category=category if category is not None else self.category,
                            key=self.key)

    def __len__(self) -> int:
        return len(self.points)

    @property
    def is_empty(self) -> bool:
        return len(self.points) == 0

    @property
    def stroke_count(self) -> int:
        return int(self.points[:, 2].sum())

    def iter_points(self) -> Iterator[StrokePoint]:
        for dx, dy, pen in self.points:
            yield StrokePoint(float(dx), float(dy), int(pen))

    def strokes(self) -> List[np.ndarray]:
        """Absolute (x, y) arrays, one per stroke"""
        absolute = to_absolute(self)
        ends = np.flatnonzero(self.points[:, 2] == 1)
        strokes = []
        start = 0
        for end in ends:
            strokes.append(absolute[start:end + 1, :2])
            start = end + 1
        return strokes

    def __repr__(self):
        return f"VectorSketch(points={len(self)}, strokes={self.stroke_count}, label={self.label})"


@dataclass(frozen=True)
class SegmentTable:
    """Half-open data-segment ranges, one per stroke-segment (0-based ids)"""
    ranges: Tuple[Tuple[int, int], ...]
    stroke_of: Tuple[int, ...]  # 1-based stroke index per segment

    @property
    def M(self) -> int:
        return len(self.ranges)

    @property
    def L(self) -> int:
        return self.stroke_of[-1] if self.stroke_of else 0

    def size(self, seg_id: int) -> int:
        start, end = self.ranges[seg_id]
        return end - start

    def segments_of_stroke(self, stroke: int) -> List[int]:
        return [i for i, l in enumerate(self.stroke_of) if l == stroke]


@dataclass(frozen=True)
class BoundingBox:
    min_x: float
    min_y: float
    max_x: float
    max_y: float

    @property
    def width(self) -> float:
        return self.max_x - self.min_x

    @property
    def height(self) -> float:
        return self.max_y - self.min_y

    @property
    def size(self) -> float:
        return max(self.width, self.height)

    @property
    def center(self) -> Tuple[float, float]:
        return (self.min_x + self.max_x) / 2.0, (self.min_y + self.max_y) / 2.0


def to_absolute(sketch: VectorSketch) -> np.ndarray:
    """(N, 3) array of absolute x, y and 0-based stroke id"""
    pts = sketch.points
    if len(pts) == 0:
        return np.zeros((0, 3), dtype=np.float64)
    out = np.empty_like(pts)
    out[:, 0] = np.cumsum(pts[:, 0])
    out[:, 1] = np.cumsum(pts[:, 1])
    out[0, 2] = 0
    out[1:, 2] = np.cumsum(pts[:-1, 2])
    return out


def from_polylines(polylines: Sequence[np.ndarray], **meta) -> VectorSketch:
    """Build a stroke-3 sketch from absolute polylines (one stroke each)"""
    chunks = [np.asarray(p, dtype=np.float64).reshape(-1, 2) for p in polylines]
    chunks = [c for c in chunks if len(c)]
    if not chunks:
        return VectorSketch(np.zeros((0, 3)), **meta)
    absolute = np.concatenate(chunks)
    pens = np.concatenate([np.r_[np.zeros(len(c) - 1), 1.0] for c in chunks])
    offsets = np.diff(absolute, axis=0, prepend=np.zeros((1, 2)))
    return VectorSketch(np.column_stack([offsets, pens]), **meta)


def build_segment_table(sketch: VectorSketch) -> SegmentTable:
    """Greedy per-stroke grouping into runs of five data-segments"""
    ranges = []
    stroke_of = []
    ends = np.flatnonzero(sketch.points[:, 2] == 1)
    start = 0
    for stroke, end in enumerate(ends, start=1):
        stop = int(end) + 1
        for seg_start in range(start, stop, SEGMENT_SIZE):
            ranges.append((seg_start, min(seg_start + SEGMENT_SIZE, stop)))
            stroke_of.append(stroke)
        start = stop
    return SegmentTable(tuple(ranges), tuple(stroke_of))


def remove_segment(sketch: VectorSketch, table: SegmentTable, seg_id: int) -> VectorSketch:
    """
    Delete one stroke-segment while keeping every retained point in place.

    The offsets of the deleted points are folded into the first point after
    the gap. When the point before the gap belongs to the same stroke it
    becomes the end of that stroke.
    """
    if not 0 <= seg_id < table.M:
        raise SegmentRangeError(f"segment {seg_id} outside table of {table.M} segments")
    start, end = table.ranges[seg_id]
    pts = sketch.points.copy()
    if end < len(pts):
        pts[end, :2] += pts[start:end, :2].sum(axis=0)
    if start > 0 and pts[start - 1, 2] == 0:
        pts[start - 1, 2] = 1
    return sketch.with_points(np.concatenate([pts[:start], pts[end:]]))


def normalize(sketch: VectorSketch) -> VectorSketch:
    """Divide offsets by the standard deviation of all dx, dy values"""
    if sketch.is_empty:
        return sketch
    std = float(sketch.points[:, :2].std())
    if std == 0.0 or not np.isfinite(std):
        return sketch
    pts = sketch.points.copy()
    pts[:, :2] /= std
    return sketch.with_points(pts)


def bounding_box(sketch: VectorSketch) -> BoundingBox:
    absolute = to_absolute(sketch)
    if len(absolute) == 0:
        return BoundingBox(0.0, 0.0, 0.0, 0.0)
    mins = absolute[:, :2].min(axis=0)
    maxs = absolute[:, :2].max(axis=0)
    return BoundingBox(float(mins[0]), float(mins[1]), float(maxs[0]), float(maxs[1]))


def rasterize(sketch: VectorSketch, size: int, margin: float = 0.05) -> np.ndarray:
    """
    Draw the sketch into a size x size binary bitmap (1 = ink).
    The bounding box is fitted into the frame keeping its aspect ratio.
    """
    image = np.zeros((size, size), dtype=np.uint8)
    if sketch.is_empty:
        return image
    box = bounding_box(sketch)
    span = size - 1
    scale = span * (1.0 - 2.0 * margin) / box.size if box.size > 0 else 0.0
    cx, cy = box.center
    for stroke in sketch.strokes():
        cols = (stroke[:, 0] - cx) * scale + span / 2.0
        rows = (stroke[:, 1] - cy) * scale + span / 2.0
        if len(stroke) == 1:
            samples_c, samples_r = cols, rows
        else:
            pieces_c, pieces_r = [], []
            for i in range(len(stroke) - 1):
                n = int(np.ceil(max(abs(cols[i + 1] - cols[i]), abs(rows[i + 1] - rows[i])))) + 1
                pieces_c.append(np.linspace(cols[i], cols[i + 1], n))
                pieces_r.append(np.linspace(rows[i], rows[i + 1], n))
            samples_c = np.concatenate(pieces_c)
            samples_r = np.concatenate(pieces_r)
        c = np.clip(np.rint(samples_c).astype(int), 0, span)
        r = np.clip(np.rint(samples_r).astype(int), 0, span)
        image[r, c] = 1
    return image
