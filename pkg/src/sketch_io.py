#!/usr/bin/env python3
"""
Sketch File I/O
NDJSON stroke-3 / QuickDraw records and SVG rendering
"""

import json
import logging
from datetime import datetime
from pathlib import Path
from typing import Iterable, Iterator, List, Optional, Sequence, Tuple

import numpy as np
import pytz

from .errors import ArgumentError, RecordError
from .sketch import VectorSketch, bounding_box, from_polylines

logger = logging.getLogger(__name__)

# blue (0) .. red (1), five bins
SALIENCY_COLORS = ['#2c7bb6', '#abd9e9', '#ffffbf', '#fdae61', '#d7191c']


def _record_to_sketch(record: dict) -> VectorSketch:
    if not isinstance(record, dict):
        raise ValueError("record is not a JSON object")
    label = record.get('label')
    if label is not None:
        label = int(label)
    category = record.get('category', record.get('word'))
    key = record.get('key', record.get('key_id'))
    meta = dict(label=label, category=category, key=str(key) if key is not None else None)

    if 'points' in record:
        points = np.asarray(record['points'], dtype=np.float64)
        return VectorSketch(points.reshape(-1, 3) if points.size else np.zeros((0, 3)), **meta)
    if 'drawing' in record:
        polylines = []
        for stroke in record['drawing']:
            xs, ys = stroke[0], stroke[1]
            if len(xs) != len(ys):
                raise ValueError("stroke x/y arrays differ in length")
            polylines.append(np.column_stack([xs, ys]))
        return from_polylines(polylines, **meta)
    raise ValueError("record has neither 'points' nor 'drawing'")


def sketch_to_record(sketch: VectorSketch) -> dict:
    record = {
        'label': sketch.label,
        'points': [[float(dx), float(dy), int(p)] for dx, dy, p in sketch.points],
    }
    if sketch.category is not None:
        record['category'] = sketch.category
    if sketch.key is not None:
        record['key'] = sketch.key
    return record


def iter_ndjson(path, errors: Optional[List[RecordError]] = None) -> Iterator[VectorSketch]:
    """
    Stream sketches from an NDJSON file.

    Bad lines are logged, appended to errors (when given) and skipped.
    """
    # bytes per line so an undecodable line is a record error, not a failed read
    with open(path, 'rb') as f:
        for line_number, raw in enumerate(f, start=1):
            if not raw.strip():
                continue
            try:
                sketch = _record_to_sketch(json.loads(raw.decode('utf-8')))
            except (ValueError, TypeError, KeyError, IndexError) as e:
                error = RecordError(line_number, str(e))
                logger.warning(f"Skipping {path}: {error}")
                if errors is not None:
                    errors.append(error)
                continue
            yield sketch


def read_ndjson(path) -> Tuple[List[VectorSketch], List[RecordError]]:
    errors: List[RecordError] = []
    sketches = list(iter_ndjson(path, errors))
    return sketches, errors


def write_ndjson(path, sketches: Iterable[VectorSketch]) -> int:
    """Write native stroke-3 records; returns the record count"""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with open(path, 'w', encoding='utf-8') as f:
        for sketch in sketches:
            f.write(json.dumps(sketch_to_record(sketch)) + '\n')
            count += 1
    return count


def saliency_color(value: float) -> str:
    index = min(int(value * len(SALIENCY_COLORS)), len(SALIENCY_COLORS) - 1)
    return SALIENCY_COLORS[max(index, 0)]


def render_svg(sketch: VectorSketch,
               stroke_colors: Optional[Sequence[str]] = None,
               stroke_width: float = 0.02,
               timestamp: bool = False) -> str:
    """
    SVG 1.1 document with one path per stroke in absolute coordinates.

    stroke_width is relative to the bounding-box size.
    """
    strokes = sketch.strokes()
    if stroke_colors is not None and len(stroke_colors) != len(strokes):
        raise ArgumentError(
            f"{len(stroke_colors)} colors given for {len(strokes)} strokes")

    box = bounding_box(sketch)
    size = box.size if box.size > 0 else 1.0
    pad = 0.05 * size
    view = (box.min_x - pad, box.min_y - pad, box.width + 2 * pad, box.height + 2 * pad)
    if sketch.is_empty:
        view = (0.0, 0.0, 1.0, 1.0)

    lines = ['<?xml version="1.0" encoding="UTF-8"?>']
    if timestamp:
        lines.append(f"<!-- generated {datetime.now(pytz.utc).isoformat()} -->")
    lines.append(
        '<svg xmlns="http://www.w3.org/2000/svg" version="1.1" '
        f'viewBox="{view[0]:.3f} {view[1]:.3f} {view[2]:.3f} {view[3]:.3f}">')
    for i, stroke in enumerate(strokes):
        color = stroke_colors[i] if stroke_colors is not None else '#000000'
        commands = [f"M {stroke[0, 0]:.3f} {stroke[0, 1]:.3f}"]
        commands += [f"L {x:.3f} {y:.3f}" for x, y in stroke[1:]]
        lines.append(
            f'  <path d="{" ".join(commands)}" fill="none" stroke="{color}" '
            f'stroke-width="{stroke_width * size:.4f}" stroke-linecap="round" stroke-linejoin="round"/>')
    lines.append('</svg>')
    return '\n'.join(lines) + '\n'


def write_svg(path, sketch: VectorSketch, **kwargs) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(render_svg(sketch, **kwargs), encoding='utf-8')
