#!/usr/bin/env python3
"""
Tests for the stroke-3 sketch model and segment table
"""

import numpy as np
import pytest

from conftest import line_sketch, random_sketch
from src.errors import ArgumentError, SegmentRangeError
from src.sketch import (VectorSketch, build_segment_table, from_polylines, normalize, rasterize, remove_segment,
                        to_absolute)


def test_to_absolute_cumulative_sum():
    sketch = VectorSketch.from_points([(1, 0, 0), (1, 0, 1)])
    absolute = to_absolute(sketch)
    assert absolute[:, :2].tolist() == [[1, 0], [2, 0]]
    assert absolute[:, 2].tolist() == [0, 0]


def test_to_absolute_empty():
    assert to_absolute(VectorSketch(np.zeros((0, 3)))).shape == (0, 3)


def test_to_absolute_matches_prefix_sums():
    rng = np.random.default_rng(0)
    offsets = rng.normal(size=(50, 2))
    pens = (rng.random(50) < 0.2).astype(float)
    pens[-1] = 1
    sketch = VectorSketch(np.column_stack([offsets, pens]))
    expected = np.zeros((50, 2))
    running = np.zeros(2)
    for i in range(50):
        running = running + offsets[i]
        expected[i] = running
    assert np.array_equal(to_absolute(sketch)[:, :2], expected)


def test_sketch_must_end_with_pen_lift():
    with pytest.raises(ArgumentError):
        VectorSketch.from_points([(1, 0, 0), (1, 0, 0)])


def test_segment_table_single_stroke():
    table = build_segment_table(line_sketch(12))
    assert [table.size(i) for i in range(table.M)] == [5, 5, 2]
    assert table.M == 3
    assert build_segment_table(line_sketch(5)).M == 1


def test_segment_table_two_strokes():
    sketch = from_polylines([np.zeros((7, 2)), np.ones((3, 2))])
    table = build_segment_table(sketch)
    assert [table.size(i) for i in range(table.M)] == [5, 2, 3]
    assert table.stroke_of == (1, 1, 2)
    assert table.L == 2
    assert table.segments_of_stroke(1) == [0, 1]


def test_remove_last_segment_truncates():
    sketch = line_sketch(12)
    table = build_segment_table(sketch)
    shorter = remove_segment(sketch, table, 2)
    assert len(shorter) == 10
    assert np.array_equal(shorter.points[:9], sketch.points[:9])
    assert shorter.points[9, 2] == 1


def test_remove_every_segment_gives_empty_sketch():
    sketch = from_polylines([np.zeros((7, 2)), np.ones((3, 2))])
    while not sketch.is_empty:
        sketch = remove_segment(sketch, build_segment_table(sketch), 0)
    assert sketch.is_empty
    assert build_segment_table(sketch).M == 0


def test_remove_segment_keeps_retained_points_in_place():
    rng = np.random.default_rng(1)
    for _ in range(1000):
        sketch = random_sketch(rng)
        table = build_segment_table(sketch)
        seg = int(rng.integers(table.M))
        start, end = table.ranges[seg]
        keep = np.r_[0:start, end:len(sketch)]
        expected = to_absolute(sketch)[keep, :2]
        result = remove_segment(sketch, table, seg)
        assert np.allclose(to_absolute(result)[:, :2], expected, atol=1e-9)


def _pen_patterns(n):
    """Every pen-lift column of an n-point sketch (the last point always ends a stroke)"""
    for bits in range(2 ** (n - 1)):
        yield [(bits >> i) & 1 for i in range(n - 1)] + [1]


@pytest.mark.parametrize('n', range(1, 13))
def test_every_skip_mask_keeps_retained_points_in_place(n):
    offsets = np.random.default_rng(n).normal(0.0, 1.0, (n, 2))
    for pens in _pen_patterns(n):
        sketch = VectorSketch(np.column_stack([offsets, pens]))
        table = build_segment_table(sketch)
        absolute = to_absolute(sketch)[:, :2]

        def walk(current, seg, kept):
            # segments are decided from the last one down, so lower ranges stay valid in the original table
            if seg < 0:
                index = [i for s in sorted(kept) for i in range(*table.ranges[s])]
                assert len(current) == len(index)
                if index:
                    assert np.abs(to_absolute(current)[:, :2] - absolute[index]).max() <= 1e-9
                return
            walk(current, seg - 1, kept + [seg])
            walk(remove_segment(current, table, seg), seg - 1, kept)

        walk(sketch, table.M - 1, [])


def test_remove_segment_preserves_metadata_and_grouping():
    sketch = line_sketch(12, label=2, key='k')
    result = remove_segment(sketch, build_segment_table(sketch), 0)
    assert (result.label, result.key) == (2, 'k')
    assert [build_segment_table(result).size(i) for i in range(2)] == [5, 2]


def test_remove_segment_out_of_range():
    sketch = line_sketch(5)
    with pytest.raises(SegmentRangeError):
        remove_segment(sketch, build_segment_table(sketch), 1)
    with pytest.raises(IndexError):
        remove_segment(sketch, build_segment_table(sketch), -1)


def test_normalize_unit_std():
    sketch = normalize(random_sketch(np.random.default_rng(2), max_points=20))
    assert abs(sketch.points[:, :2].std() - 1.0) < 1e-6
    again = normalize(sketch)
    assert np.allclose(again.points, sketch.points, atol=1e-9)


def test_normalize_is_scale_invariant():
    sketch = random_sketch(np.random.default_rng(3))
    scaled = sketch.points.copy()
    scaled[:, :2] *= 10
    assert np.allclose(normalize(sketch.with_points(scaled)).points, normalize(sketch).points, atol=1e-9)


def test_strokes_split_at_pen_lifts():
    sketch = from_polylines([[(0, 0), (1, 0)], [(5, 5)]])
    strokes = sketch.strokes()
    assert len(strokes) == 2 == sketch.stroke_count
    assert strokes[1].tolist() == [[5.0, 5.0]]


def test_rasterize_horizontal_line():
    image = rasterize(line_sketch(4), 16)
    assert image.dtype == np.uint8
    rows = np.flatnonzero(image.any(axis=1))
    assert len(rows) == 1
    assert image[rows[0]].sum() > 10
    assert rasterize(VectorSketch(np.zeros((0, 3))), 8).sum() == 0
