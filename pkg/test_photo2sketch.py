#!/usr/bin/env python3
"""
Tests for the photo-to-sketch pipeline: PGM files, tracing, distortion,
resampling and the end-to-end edge-map abstraction
"""

import numpy as np
import pytest

from conftest import line_sketch
from src.errors import ArgumentError, FormatError
from src.photo2sketch import (DistortionParams, RasterImage, binarize, build_edge_corpus, distort, load_pgm,
                              photo_to_sketch, photo_variants, render_edge_raster, resample, thin, trace,
                              write_pgm)
from src.sketch import from_polylines, to_absolute


def blank(size=40):
    return RasterImage(np.zeros((size, size), dtype=np.uint8))


def horizontal_line():
    pixels = np.zeros((40, 40), dtype=np.uint8)
    pixels[20, 5:35] = 255
    return RasterImage(pixels)


def plus_sign():
    pixels = np.zeros((41, 41), dtype=np.uint8)
    pixels[20, 5:36] = 255
    pixels[5:36, 20] = 255
    return RasterImage(pixels)


def square_edges():
    pixels = np.zeros((48, 48), dtype=np.uint8)
    pixels[8, 8:40] = pixels[39, 8:40] = 255
    pixels[8:40, 8] = pixels[8:40, 39] = 255
    return RasterImage(pixels)


def test_binarize():
    assert not binarize(blank()).pixels.any()
    raster = RasterImage(np.arange(100).reshape(10, 10))
    assert (binarize(raster, 0).pixels == 255).all()
    assert set(np.unique(binarize(raster, 50).pixels)) == {0, 255}


def test_pgm_round_trip(tmp_path):
    raster = RasterImage(np.random.default_rng(0).integers(0, 256, (7, 11)))
    write_pgm(tmp_path / 'edges.pgm', raster)
    loaded = load_pgm(tmp_path / 'edges.pgm')
    assert (loaded.width, loaded.height) == (11, 7)
    assert np.array_equal(loaded.pixels, raster.pixels)


def test_plain_pgm_is_rescaled(tmp_path):
    path = tmp_path / 'plain.pgm'
    path.write_text('P2\n# tiny\n3 1\n15\n0 15 5\n')
    assert load_pgm(path).pixels.tolist() == [[0, 255, 85]]


@pytest.mark.parametrize('content', [b'P6\n1 1\n255\n\x00', b'P5\n4 4\n255\n\x00\x00', b'P2\n2 1\n255\n1 x\n'])
def test_malformed_pgm(tmp_path, content):
    path = tmp_path / 'bad.pgm'
    path.write_bytes(content)
    with pytest.raises(FormatError):
        load_pgm(path)


def test_thinning_keeps_one_pixel_lines():
    mask = horizontal_line().pixels > 0
    assert np.array_equal(thin(mask), mask)
    thick = np.zeros((20, 30), dtype=bool)
    thick[8:12, 3:27] = True
    skeleton = thin(thick)
    assert skeleton.any() and skeleton.sum() < thick.sum() / 2


def test_trace_blank_raster():
    assert trace(blank()) == []


def test_trace_horizontal_line():
    polylines = trace(horizontal_line())
    assert len(polylines) == 1
    line = polylines[0]
    assert np.all(np.abs(line[:, 1] - 20) <= 1)
    assert abs(line[:, 0].min() - 5) <= 1 and abs(line[:, 0].max() - 34) <= 1


def test_traced_line_is_within_a_pixel_of_the_ink():
    raster = horizontal_line()
    (line,) = trace(raster)
    ink = np.array([(c, r) for r, c in np.argwhere(raster.pixels > 0)], dtype=np.float64)
    gaps = np.linalg.norm(line[:, None, :] - ink[None, :, :], axis=2)
    assert gaps.min(axis=1).max() <= 1.0
    assert gaps.min(axis=0).max() <= 1.0


def test_trace_plus_sign_meets_at_junction():
    polylines = trace(plus_sign())
    assert len(polylines) == 4
    for line in polylines:
        ends = [tuple(line[0]), tuple(line[-1])]
        assert (20.0, 20.0) in ends


def test_identity_distortion_keeps_geometry():
    sketch = from_polylines([[(0, 0), (3, 1), (4, 5)], [(2, 2), (8, 0)]])
    out = distort(sketch, DistortionParams.identity(), np.random.default_rng(0))
    assert np.allclose(to_absolute(out), to_absolute(sketch), atol=1e-9)


def test_quarter_turn_rotation():
    sketch = from_polylines([[(0, 0), (4, 0), (4, 2)]])
    quarter = (np.pi / 2, np.pi / 2)
    params = DistortionParams(rotation=quarter, translation=(0.0, 0.0), scale=(1.0, 1.0), skew_x=(0.0, 0.0),
                              skew_y=(0.0, 0.0), stroke_translation=(0.0, 0.0), curvature_jitter_amp=0.0)
    out = distort(sketch, params, np.random.default_rng(0))
    center = np.array([2.0, 1.0])
    xy = to_absolute(sketch)[:, :2] - center
    expected = np.column_stack([-xy[:, 1], xy[:, 0]]) + center
    assert np.allclose(to_absolute(out)[:, :2], expected, atol=1e-9)


def test_distortion_is_seeded():
    sketch = from_polylines([np.column_stack([np.linspace(0, 10, 20), np.sin(np.linspace(0, 3, 20))])])
    a = distort(sketch, DistortionParams(), np.random.default_rng(5))
    b = distort(sketch, DistortionParams(), np.random.default_rng(5))
    assert np.array_equal(a.points, b.points)
    assert not np.allclose(a.points, sketch.points)
    with pytest.raises(ArgumentError):
        distort(sketch, DistortionParams(scale=(1.1, 0.9)), np.random.default_rng(0))


def test_resample_straight_stroke():
    out = resample(line_sketch(3, length=10.0), 2.0)
    assert np.allclose(to_absolute(out)[:, 0], [0, 2, 4, 6, 8, 10])
    assert len(resample(line_sketch(3, length=10.0), 12.0)) == 2


def test_resample_preserves_endpoints():
    rng = np.random.default_rng(1)
    for _ in range(20):
        stroke = np.cumsum(rng.normal(0, 3, (int(rng.integers(2, 15)), 2)), axis=0)
        out = resample(from_polylines([stroke]), float(rng.uniform(0.5, 4)))
        absolute = to_absolute(out)[:, :2]
        assert np.allclose(absolute[0], stroke[0], atol=1e-6)
        assert np.allclose(absolute[-1], stroke[-1], atol=1e-6)
    with pytest.raises(ArgumentError):
        resample(line_sketch(3), 0.0)


def test_resample_thins_dense_strokes():
    angles = np.linspace(0.0, 2 * np.pi, 100)
    circle = np.column_stack([10 * np.cos(angles), 10 * np.sin(angles)])
    sketch = from_polylines([circle, circle[:40] + 25.0])
    spacing = np.median(np.linalg.norm(np.diff(circle, axis=0), axis=1))
    assert len(resample(sketch, spacing)) <= len(sketch)
    for factor in (1.5, 2.0, 5.0):
        assert len(resample(sketch, factor * spacing)) < len(sketch)


def test_identity_distortion_then_resample_is_stable():
    sketch = from_polylines([[(0, 0), (7, 0)], [(0, 3), (0, 12)], [(2, 2), (5, 6)]])
    step = 1.5
    once = resample(distort(sketch, DistortionParams.identity(), np.random.default_rng(0)), step)
    assert np.allclose(to_absolute(once), to_absolute(resample(sketch, step)), atol=1e-9)
    twice = resample(once, step)
    assert len(twice) == len(once)
    assert np.allclose(to_absolute(twice), to_absolute(once), atol=1e-9)


def test_forced_keep_returns_simplified_stage(tiny_agent):
    result = photo_to_sketch(square_edges(), tiny_agent, -1.0, DistortionParams(), np.random.default_rng(2))
    assert np.array_equal(result.sketch.points, result.simplified.points)
    assert set(result.stages()) == {'vectorized', 'distorted', 'simplified', 'abstracted'}


def test_blank_raster_has_no_strokes(tiny_agent):
    with pytest.raises(ArgumentError, match='no strokes traced'):
        photo_to_sketch(blank(), tiny_agent, 0.0, DistortionParams(), np.random.default_rng(0))


def test_variants_are_seeded(tiny_agent):
    params = DistortionParams(seed=4)
    first = photo_variants(square_edges(), tiny_agent, 0.0, params, variants=3)
    again = photo_variants(square_edges(), tiny_agent, 0.0, params, variants=3)
    assert len(first) == 3
    assert all(np.array_equal(a.sketch.points, b.sketch.points) for a, b in zip(first, again))
    assert not np.array_equal(first[0].distorted.points, first[1].distorted.points)
    threaded = photo_variants(square_edges(), tiny_agent, 0.0, params, variants=3, workers=2)
    assert all(np.array_equal(a.sketch.points, b.sketch.points) for a, b in zip(first, threaded))


def test_edge_rendering_traces_back(toy_corpus):
    sketch = toy_corpus.sketches[0]
    raster = render_edge_raster(sketch, 64)
    assert raster.pixels.max() == 255
    assert trace(raster)
    edge = build_edge_corpus(toy_corpus, DistortionParams(), step_length=3.0, size=64, seed=1)
    assert edge.class_names == toy_corpus.class_names
    assert all(s.label is not None for s in edge.sketches)
    assert len(edge.sketches) == len(toy_corpus.sketches)
